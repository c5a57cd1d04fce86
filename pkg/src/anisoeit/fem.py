"""Complete-electrode-model forward solver with P1 potentials, P0 tensors.

The weak form couples nodal potentials u with electrode potentials U:

    B((u,U),(v,W)) = int_Omega grad(u) . gamma grad(v) dx
                   + sum_j (1/z_j) int_{e_j} (u - U_j)(v - W_j) ds

driven by electrode currents, with the gauge sum_j U_j = 0 imposed through
a Lagrange multiplier so all electrodes are treated identically.  One
sparse LU factorization per conductivity serves every current pattern.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from anisoeit.geometry import ElectrodeLayout, Mesh
from anisoeit.tensors import TensorField


class ModelError(ValueError):
    """Invalid forward-model input (incompatible pattern, bad tensor, ...)."""


@dataclass
class P1Basis:
    """Per-element P1 gradient coefficients: grad(phi_i) = (b_i, c_i) / (2 A)."""

    b: np.ndarray      # (T, 3)
    c: np.ndarray      # (T, 3)
    areas: np.ndarray  # (T,)

    @staticmethod
    def from_mesh(mesh: Mesh) -> "P1Basis":
        p = mesh.nodes[mesh.triangles]
        x, y = p[..., 0], p[..., 1]
        b = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1)
        c = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1)
        areas = 0.5 * (x[:, 0] * b[:, 0] + x[:, 1] * b[:, 1] + x[:, 2] * b[:, 2])
        return P1Basis(b=b, c=c, areas=areas)

    def gradients(self, u: np.ndarray, triangles: np.ndarray) -> np.ndarray:
        """Per-element gradient of a nodal field, shape (T, 2)."""
        ue = u[triangles]
        gx = np.sum(ue * self.b, axis=1) / (2.0 * self.areas)
        gy = np.sum(ue * self.c, axis=1) / (2.0 * self.areas)
        return np.stack([gx, gy], axis=1)


def stiffness_coo(mesh: Mesh, basis: P1Basis, fld: TensorField):
    """COO triplets of the anisotropic P1 stiffness matrix (linear in g)."""
    g11, g12, g22 = fld.g[:, 0], fld.g[:, 1], fld.g[:, 2]
    b, c, A = basis.b, basis.c, basis.areas
    rows, cols, vals = [], [], []
    for i in range(3):
        for j in range(3):
            kij = (g11 * b[:, i] * b[:, j]
                   + g12 * (b[:, i] * c[:, j] + c[:, i] * b[:, j])
                   + g22 * c[:, i] * c[:, j]) / (4.0 * A)
            rows.append(mesh.triangles[:, i])
            cols.append(mesh.triangles[:, j])
            vals.append(kij)
    return np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)


@dataclass
class CEMSystem:
    """Assembled gauge-constrained CEM system over (u, U, multiplier)."""

    mesh: Mesh
    layout: ElectrodeLayout
    fld: TensorField
    matrix: sp.csc_matrix
    basis: P1Basis
    n_nodes: int
    J: int
    _lu: object = field(default=None, repr=False)

    @property
    def lu(self):
        if self._lu is None:
            self._lu = splu(self.matrix)
        return self._lu

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        return self.lu.solve(rhs)


def assemble(mesh: Mesh, fld: TensorField, layout: ElectrodeLayout) -> CEMSystem:
    """Assemble the bordered CEM matrix for a tensor field.

    Raises ModelError naming the first element whose tensor is not SPD
    (TensorField validates on construction; re-checked cheaply here because
    optimizer line searches build fields through the same path).
    """
    if fld.n_elements != mesh.n_elements:
        raise ModelError("tensor field does not match mesh")
    det = fld.g[:, 0] * fld.g[:, 2] - fld.g[:, 1] ** 2
    if np.any((fld.g[:, 0] <= 0) | (det <= 0)):
        bad = int(np.where((fld.g[:, 0] <= 0) | (det <= 0))[0][0])
        raise ModelError(f"element {bad} tensor is not positive definite")
    if np.any(layout.contact_impedances <= 0):
        raise ModelError("contact impedances must be positive")

    basis = P1Basis.from_mesh(mesh)
    n = mesh.n_nodes
    J = layout.J
    rows, cols, vals = stiffness_coo(mesh, basis, fld)
    rows, cols, vals = [list(rows)], [list(cols)], [list(vals)]

    z = layout.contact_impedances
    elen = np.zeros(J)
    for edge in mesh.boundary_edges:
        if edge.electrode is None:
            continue
        j = edge.electrode
        a, bnode = edge.nodes
        ell = float(np.linalg.norm(mesh.nodes[a] - mesh.nodes[bnode]))
        elen[j] += ell
        zj = z[j]
        # edge mass (ell/6) [[2,1],[1,2]] and trace couplings, exact for P1
        rows[0] += [a, a, bnode, bnode]
        cols[0] += [a, bnode, a, bnode]
        vals[0] += [2 * ell / (6 * zj), ell / (6 * zj), ell / (6 * zj), 2 * ell / (6 * zj)]
        rows[0] += [a, bnode, n + j, n + j]
        cols[0] += [n + j, n + j, a, bnode]
        vals[0] += [-ell / (2 * zj)] * 4

    for j in range(J):
        if elen[j] == 0:
            raise ModelError(f"electrode {j} has no boundary edges on this mesh")
        rows[0].append(n + j)
        cols[0].append(n + j)
        vals[0].append(elen[j] / z[j])
        # gauge border: sum_j U_j = 0
        rows[0] += [n + J, n + j]
        cols[0] += [n + j, n + J]
        vals[0] += [1.0, 1.0]

    size = n + J + 1
    mat = sp.coo_matrix((np.array(vals[0]), (np.array(rows[0]), np.array(cols[0]))),
                        shape=(size, size)).tocsc()
    return CEMSystem(mesh=mesh, layout=layout, fld=fld, matrix=mat,
                     basis=basis, n_nodes=n, J=J)


def solve_current_drive(system: CEMSystem, pattern: np.ndarray):
    """Nodal and electrode potentials for one zero-sum current pattern."""
    pattern = np.asarray(pattern, dtype=float)
    if pattern.shape != (system.J,):
        raise ModelError(f"pattern must have length {system.J}")
    scale = np.abs(pattern).max()
    if abs(pattern.sum()) > 1e-12 * max(scale, 1.0):
        raise ModelError("current pattern must sum to zero (Kirchhoff)")
    n = system.n_nodes
    rhs = np.zeros(n + system.J + 1)
    rhs[n:n + system.J] = pattern
    sol = system.solve(rhs)
    return sol[:n], sol[n:n + system.J]


def solve_many(system: CEMSystem, patterns: np.ndarray):
    """Electrode and nodal potentials for stacked patterns, one factorization."""
    patterns = np.atleast_2d(patterns)
    n, J = system.n_nodes, system.J
    rhs = np.zeros((n + J + 1, len(patterns)))
    rhs[n:n + J, :] = patterns.T
    sol = system.lu.solve(rhs)
    return sol[:n, :].T, sol[n:n + J, :].T


def power(system: CEMSystem, pattern: np.ndarray) -> float:
    """Dissipated power sum_j U_j I_j for one current pattern."""
    _, U = solve_current_drive(system, pattern)
    return float(U @ np.asarray(pattern, dtype=float))


def electrode_matrix(system: CEMSystem):
    """Both directions of the electrode measurement map on zero-mean vectors.

    Returns (G, E): G maps mean-zero currents to mean-zero electrode
    voltages (symmetric by reciprocity); E is its pseudo-inverse, the
    voltage-to-current map.
    """
    J = system.J
    Q = np.eye(J) - np.ones((J, J)) / J
    _, U = solve_many(system, Q)
    G = U.T  # column k = potentials for pattern Q e_k
    E = np.linalg.pinv(G)
    return G, E


# ---------------------------------------------------------------------------
# measurement protocol and data simulation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MeasurementProtocol:
    """Current patterns and the projectors picking measured voltage pairs."""

    patterns: np.ndarray      # (K, J), each summing to zero
    projectors: np.ndarray    # (K, L, J): signed pair-difference rows
    retained_pairs: np.ndarray  # (K, L): adjacent-pair index of each row

    @property
    def J(self) -> int:
        return self.patterns.shape[1]

    @property
    def K(self) -> int:
        return self.patterns.shape[0]

    @property
    def L(self) -> int:
        return self.projectors.shape[1]

    @property
    def N(self) -> int:
        return self.K * self.L


def adjacent_protocol(J: int) -> MeasurementProtocol:
    """Adjacent pair drive: K = J patterns, L = J - 3 retained pair voltages.

    Pattern n injects +1 at electrode n and -1 at n+1 (cyclic).  Voltages
    are differences over adjacent pairs (m, m+1); the three pairs touching
    a driven electrode are dropped, ordered by increasing pair index.
    """
    if J < 4:
        raise ModelError("adjacent protocol needs at least 4 electrodes")
    K, L = J, J - 3
    patterns = np.zeros((K, J))
    projectors = np.zeros((K, L, J))
    retained = np.zeros((K, L), dtype=int)
    for nidx in range(J):
        patterns[nidx, nidx] = 1.0
        patterns[nidx, (nidx + 1) % J] = -1.0
        excluded = {(nidx - 1) % J, nidx, (nidx + 1) % J}
        keep = [m for m in range(J) if m not in excluded]
        for row, m in enumerate(keep):
            projectors[nidx, row, m] = 1.0
            projectors[nidx, row, (m + 1) % J] = -1.0
            retained[nidx, row] = m
    return MeasurementProtocol(patterns=patterns, projectors=projectors,
                               retained_pairs=retained)


@dataclass(frozen=True)
class DataVector:
    """Stacked voltage measurements with their noise provenance."""

    values: np.ndarray       # (N,)
    noise_fraction: float
    seed: Optional[int]
    J: int
    K: int
    L: int
    contact_impedances: np.ndarray

    @property
    def N(self) -> int:
        return self.values.shape[0]


def predict(mesh: Mesh, fld: TensorField, layout: ElectrodeLayout,
            protocol: MeasurementProtocol) -> np.ndarray:
    """Clean stacked measurement vector for a conductivity field."""
    system = assemble(mesh, fld, layout)
    _, U = solve_many(system, protocol.patterns)
    return np.einsum("klj,kj->kl", protocol.projectors, U).ravel()


def simulate_measurements(mesh: Mesh, fld: TensorField, layout: ElectrodeLayout,
                          protocol: MeasurementProtocol, noise_fraction: float,
                          seed: Optional[int]) -> DataVector:
    """Simulate one EIT experiment; Gaussian noise scaled to the clean max.

    noise std = noise_fraction * max_m |clean V_m|, one seeded RNG stream
    per data vector; noise_fraction 0 skips the draw entirely so repeated
    calls are bitwise identical.
    """
    if noise_fraction < 0:
        raise ModelError("noise_fraction must be nonnegative")
    clean = predict(mesh, fld, layout, protocol)
    values = clean
    if noise_fraction > 0:
        sigma = noise_fraction * np.abs(clean).max()
        rng = np.random.default_rng(seed)
        values = clean + rng.normal(0.0, sigma, clean.shape)
    return DataVector(values=values, noise_fraction=float(noise_fraction),
                      seed=seed, J=protocol.J, K=protocol.K, L=protocol.L,
                      contact_impedances=layout.contact_impedances.copy())


def data_vector_to_csv(data: DataVector) -> str:
    buf = io.StringIO()
    z = ";".join(f"{v:.17g}" for v in data.contact_impedances)
    buf.write(f"# J={data.J} K={data.K} L={data.L} N={data.N} "
              f"noise_fraction={data.noise_fraction:.17g} seed={data.seed} z={z}\n")
    buf.write("pattern,index,value\n")
    for m, v in enumerate(data.values):
        buf.write(f"{m // data.L},{m % data.L},{v:.17g}\n")
    return buf.getvalue()


def data_vector_from_csv(text: str) -> DataVector:
    lines = text.strip().splitlines()
    meta = {}
    for token in lines[0].lstrip("# ").split():
        key, _, val = token.partition("=")
        meta[key] = val
    values = np.array([float(ln.split(",")[2]) for ln in lines[2:] if ln])
    seed = None if meta["seed"] == "None" else int(meta["seed"])
    return DataVector(values=values, noise_fraction=float(meta["noise_fraction"]),
                      seed=seed, J=int(meta["J"]), K=int(meta["K"]), L=int(meta["L"]),
                      contact_impedances=np.array([float(v) for v in meta["z"].split(";")]))
