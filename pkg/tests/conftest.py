import pytest

from anisoeit import fem
from anisoeit.geometry import (DomainSpec, build_boundary, build_pixel_lattice,
                               place_electrodes, triangulate)


@pytest.fixture(scope="session")
def disk_curve():
    return build_boundary(DomainSpec("disk", {}), 1024)


@pytest.fixture(scope="session")
def disk_layout(disk_curve):
    return place_electrodes(disk_curve, 16, 0.5)


@pytest.fixture(scope="session")
def disk_mesh(disk_curve, disk_layout):
    return triangulate(disk_curve, disk_layout, 2190)


@pytest.fixture(scope="session")
def small_disk_mesh(disk_curve, disk_layout):
    return triangulate(disk_curve, disk_layout, 500)


@pytest.fixture(scope="session")
def small_lattice(small_disk_mesh):
    return build_pixel_lattice(small_disk_mesh, 48)


@pytest.fixture(scope="session")
def protocol16():
    return fem.adjacent_protocol(16)
