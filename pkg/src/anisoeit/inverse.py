"""Regularized reconstruction of conductivity from electrode data.

Minimizes  ||V - U(params)||^2 + penalties + barrier  by damped
Gauss-Newton with Armijo backtracking, sweeping a decreasing interior-point
schedule that keeps eta (or the isotropic gamma) strictly positive.  The
anisotropy scale lam is optimized in log parameterization so no barrier is
needed for it; results are reported with the canonical lam >= 1.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg

from anisoeit.geometry import ElectrodeLayout, Mesh, PixelLattice
from anisoeit.tensors import TensorField, UniformAnisoParams, gamma_hat
from anisoeit import fem


class ReconError(ValueError):
    """Invalid reconstruction configuration or infeasible state."""


# ---------------------------------------------------------------------------
# configuration types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RegWeights:
    """Penalty weights: (alpha0, alpha1) for eta, (beta0, beta1) for theta,
    (beta2, nu) for lam."""

    alpha0: float
    alpha1: float
    beta0: float = 0.0
    beta1: float = 0.0
    beta2: float = 0.0
    nu: float = 1.0

    def __post_init__(self):
        vals = (self.alpha0, self.alpha1, self.beta0, self.beta1, self.beta2)
        if any(v < 0 for v in vals):
            raise ReconError("penalty weights must be nonnegative")
        if self.beta2 > 0 and not self.nu > 0:
            raise ReconError("nu must be positive when beta2 > 0")


@dataclass(frozen=True)
class BarrierSchedule:
    """Finite decreasing sequence of interior-point parameters.

    A strictly decreasing positive sequence activates the barrier; the
    all-zero schedule is the documented inactive mode (plain Gauss-Newton
    stages with no positivity forcing beyond line-search feasibility).
    """

    xi: np.ndarray

    def __post_init__(self):
        xi = np.asarray(self.xi, dtype=float)
        if xi.ndim != 1 or len(xi) == 0:
            raise ReconError("schedule must be a nonempty 1-d sequence")
        if np.all(xi == 0):
            return
        if np.any(xi <= 0) or np.any(np.diff(xi) >= 0):
            raise ReconError("schedule must be strictly decreasing and positive")

    @staticmethod
    def geometric(start: float, end: float, stages: int = 8) -> "BarrierSchedule":
        if not (start > end > 0):
            raise ReconError("need start > end > 0")
        return BarrierSchedule(xi=np.geomspace(start, end, stages))

    @staticmethod
    def inactive(stages: int = 1) -> "BarrierSchedule":
        return BarrierSchedule(xi=np.zeros(stages))


@dataclass(frozen=True)
class NeighborGraph:
    """4-neighborhood of active lattice pixels; pairs are unordered."""

    M: int
    pairs: np.ndarray  # (P, 2)

    @staticmethod
    def from_lattice(lattice: PixelLattice) -> "NeighborGraph":
        return NeighborGraph(M=lattice.n_active, pairs=lattice.neighbor_pairs())

    def laplacian(self) -> np.ndarray:
        L = np.zeros((self.M, self.M))
        for a, b in self.pairs:
            L[a, a] += 1.0
            L[b, b] += 1.0
            L[a, b] -= 1.0
            L[b, a] -= 1.0
        return L


@dataclass
class GNSettings:
    max_iterations: int = 60      # global Gauss-Newton cap
    max_inner: int = 10           # iterations per barrier stage
    armijo: float = 1e-4
    shrink: float = 0.5
    max_backtracks: int = 30
    obj_tol: float = 1e-6
    step_tol: float = 1e-8
    damping: float = 1e-12        # Levenberg shift as a fraction of trace
    eta_step_cap: float = 1.0     # per-block trust caps on the GN step
    theta_step_cap: float = np.pi / 4
    loglam_step_cap: float = 0.7
    damping_escalations: int = 2  # x1e4 damping retries after a failed search


@dataclass
class ReconState:
    """Final iterate plus the full optimization record."""

    mode: str
    params: Optional[UniformAnisoParams]  # anisotropic mode
    gamma: Optional[np.ndarray]           # isotropic mode
    history: list
    lambda_trace: list
    converged: bool
    final_objective: float
    final_misfit: float


# ---------------------------------------------------------------------------
# penalty functionals (double sums count each unordered pair twice)
# ---------------------------------------------------------------------------

def penalty_eta(eta: np.ndarray, graph: NeighborGraph, alpha0: float, alpha1: float) -> float:
    a, b = graph.pairs[:, 0], graph.pairs[:, 1]
    diff2 = np.sum((eta[a] - eta[b]) ** 2) if len(graph.pairs) else 0.0
    return float(alpha0 * np.sum(eta ** 2) + 2.0 * alpha1 * diff2)


def penalty_eta_grad(eta: np.ndarray, graph: NeighborGraph, alpha0: float, alpha1: float) -> np.ndarray:
    g = 2.0 * alpha0 * eta
    if len(graph.pairs):
        a, b = graph.pairs[:, 0], graph.pairs[:, 1]
        d = eta[a] - eta[b]
        np.add.at(g, a, 4.0 * alpha1 * d)
        np.add.at(g, b, -4.0 * alpha1 * d)
    return g


def penalty_eta_hess(graph: NeighborGraph, alpha0: float, alpha1: float) -> np.ndarray:
    return 2.0 * alpha0 * np.eye(graph.M) + 4.0 * alpha1 * graph.laplacian()


def penalty_theta(theta: np.ndarray, graph: NeighborGraph, beta0: float, beta1: float) -> float:
    a, b = graph.pairs[:, 0], graph.pairs[:, 1]
    diff = np.sum(2.0 - 2.0 * np.cos(theta[a] - theta[b])) if len(graph.pairs) else 0.0
    return float(beta0 * np.sum(theta ** 2) + 2.0 * beta1 * diff)


def penalty_theta_grad(theta: np.ndarray, graph: NeighborGraph, beta0: float, beta1: float) -> np.ndarray:
    g = 2.0 * beta0 * theta
    if len(graph.pairs):
        a, b = graph.pairs[:, 0], graph.pairs[:, 1]
        s = np.sin(theta[a] - theta[b])
        np.add.at(g, a, 4.0 * beta1 * s)
        np.add.at(g, b, -4.0 * beta1 * s)
    return g


def penalty_theta_hess(graph: NeighborGraph, beta0: float, beta1: float) -> np.ndarray:
    # small-angle PSD surrogate of the circular difference term
    return 2.0 * beta0 * np.eye(graph.M) + 4.0 * beta1 * graph.laplacian()


def penalty_lambda(lam: float, beta2: float, nu: float = 1.0) -> float:
    if not lam > 0:
        raise ReconError("lam must be positive")
    ln = np.log(lam)
    return float(beta2 * (ln + ln ** 2 / nu ** 2))


def barrier(eta: np.ndarray, xi: float) -> float:
    """Interior-point term xi * sum(1/eta_i); caller must keep eta > 0."""
    if np.any(eta <= 0):
        raise ReconError("barrier is infeasible: eta has nonpositive entries")
    return float(xi * np.sum(1.0 / eta))


def barrier_grad(eta: np.ndarray, xi: float) -> np.ndarray:
    return -xi / eta ** 2


def barrier_hess_diag(eta: np.ndarray, xi: float) -> np.ndarray:
    return 2.0 * xi / eta ** 3


# ---------------------------------------------------------------------------
# forward map and adjoint Jacobian
# ---------------------------------------------------------------------------

def _pair_patterns(J: int) -> np.ndarray:
    Q = np.zeros((J, J))
    for m in range(J):
        Q[m, m] = 1.0
        Q[m, (m + 1) % J] = -1.0
    return Q


def _sensitivity_blocks(system: fem.CEMSystem, protocol: fem.MeasurementProtocol,
                        lattice: PixelLattice):
    """Forward data and per-pixel bilinear sensitivity tensors.

    Returns (U_pred, S) where S[i, n, a, b] = sum over elements of pixel i of
    area * d_a u_(drive n) * d_b w_(pair n): contracting S[i, n] with a
    tensor perturbation direction gives the (negative) derivative of
    measurement n.
    """
    mesh, basis = system.mesh, system.basis
    K, L, J = protocol.K, protocol.L, protocol.J
    u_nodal, U = fem.solve_many(system, protocol.patterns)
    w_nodal, _ = fem.solve_many(system, _pair_patterns(J))
    U_pred = np.einsum("klj,kj->kl", protocol.projectors, U).ravel()

    T = mesh.n_elements
    GU = np.stack([basis.gradients(u_nodal[k], mesh.triangles) for k in range(K)])
    GW = np.stack([basis.gradients(w_nodal[m], mesh.triangles) for m in range(J)])

    M = lattice.n_active
    pix = lattice.element_to_pixel
    S_full = np.zeros((M, K, J, 2, 2))
    step = max(1, int(2e6 // (K * J * 4)))
    for e0 in range(0, T, step):
        sl = slice(e0, e0 + step)
        O = np.einsum("kea,meb,e->ekmab", GU[:, sl], GW[:, sl], basis.areas[sl])
        np.add.at(S_full, pix[sl], O)
    # keep only the retained pair of each measurement row
    idx_k = np.arange(K)[:, None]
    S = S_full[:, idx_k, protocol.retained_pairs, :, :].reshape(M, K * L, 2, 2)
    return U_pred, S


def _aniso_derivative_tensors(params: UniformAnisoParams):
    """Per-pixel tensor derivatives wrt eta_i, theta_i and lam."""
    eta, theta, lam = params.eta, params.theta, params.lam
    p, q = np.sqrt(lam), 1.0 / np.sqrt(lam)
    c, s = np.cos(theta), np.sin(theta)
    c2, s2 = np.cos(2 * theta), np.sin(2 * theta)

    D_eta = np.empty((params.M, 2, 2))
    D_eta[:, 0, 0] = p * c ** 2 + q * s ** 2
    D_eta[:, 1, 1] = p * s ** 2 + q * c ** 2
    D_eta[:, 0, 1] = D_eta[:, 1, 0] = (q - p) * c * s

    D_theta = np.empty((params.M, 2, 2))
    D_theta[:, 0, 0] = eta * (q - p) * s2
    D_theta[:, 1, 1] = -D_theta[:, 0, 0]
    D_theta[:, 0, 1] = D_theta[:, 1, 0] = eta * (q - p) * c2

    dp, dq = 0.5 / np.sqrt(lam), -0.5 * lam ** -1.5
    D_lam = np.empty((params.M, 2, 2))
    D_lam[:, 0, 0] = eta * (dp * c ** 2 + dq * s ** 2)
    D_lam[:, 1, 1] = eta * (dp * s ** 2 + dq * c ** 2)
    D_lam[:, 0, 1] = D_lam[:, 1, 0] = eta * (dq - dp) * c * s
    return D_eta, D_theta, D_lam


def forward_map(params: UniformAnisoParams, protocol: fem.MeasurementProtocol,
                mesh: Mesh, lattice: PixelLattice, layout: ElectrodeLayout) -> np.ndarray:
    """Stacked predicted measurements U(eta, theta, lam)."""
    return fem.predict(mesh, gamma_hat(params, lattice), layout, protocol)


def jacobian(params: UniformAnisoParams, protocol: fem.MeasurementProtocol,
             mesh: Mesh, lattice: PixelLattice, layout: ElectrodeLayout):
    """Adjoint-state Jacobian of the forward map wrt (eta, theta, lam).

    Returns (U_pred, J) with J of shape (N, 2M + 1); columns are ordered
    eta_1..eta_M, theta_1..theta_M, lam.
    """
    system = fem.assemble(mesh, gamma_hat(params, lattice), layout)
    U_pred, S = _sensitivity_blocks(system, protocol, lattice)
    D_eta, D_theta, D_lam = _aniso_derivative_tensors(params)
    J_eta = -np.einsum("inab,iab->ni", S, D_eta)
    J_theta = -np.einsum("inab,iab->ni", S, D_theta)
    J_lam = -np.einsum("inab,iab->n", S, D_lam)
    return U_pred, np.hstack([J_eta, J_theta, J_lam[:, None]])


def forward_map_isotropic(gamma: np.ndarray, protocol: fem.MeasurementProtocol,
                          mesh: Mesh, lattice: PixelLattice,
                          layout: ElectrodeLayout) -> np.ndarray:
    fld = TensorField.isotropic(gamma[lattice.element_to_pixel])
    return fem.predict(mesh, fld, layout, protocol)


def jacobian_isotropic(gamma: np.ndarray, protocol: fem.MeasurementProtocol,
                       mesh: Mesh, lattice: PixelLattice, layout: ElectrodeLayout):
    fld = TensorField.isotropic(gamma[lattice.element_to_pixel])
    system = fem.assemble(mesh, fld, layout)
    U_pred, S = _sensitivity_blocks(system, protocol, lattice)
    Jg = -(S[:, :, 0, 0] + S[:, :, 1, 1]).T  # identity perturbation direction
    return U_pred, Jg


# ---------------------------------------------------------------------------
# objective
# ---------------------------------------------------------------------------

def objective(state, data: fem.DataVector, protocol: fem.MeasurementProtocol,
              mesh: Mesh, lattice: PixelLattice, layout: ElectrodeLayout,
              weights: RegWeights, xi: float) -> float:
    """Augmented objective: misfit + penalties + interior-point barrier.

    ``state`` is a UniformAnisoParams (anisotropic model) or a positive
    vector of pixel conductivities (isotropic model).
    """
    graph = NeighborGraph.from_lattice(lattice)
    if isinstance(state, UniformAnisoParams):
        if np.any(state.eta <= 0) or state.lam <= 0:
            raise ReconError("infeasible state")
        U = forward_map(state, protocol, mesh, lattice, layout)
        r = data.values - U
        return (float(r @ r)
                + penalty_eta(state.eta, graph, weights.alpha0, weights.alpha1)
                + penalty_theta(state.theta, graph, weights.beta0, weights.beta1)
                + penalty_lambda(state.lam, weights.beta2, weights.nu)
                + barrier(state.eta, xi))
    gamma = np.asarray(state, dtype=float)
    if np.any(gamma <= 0):
        raise ReconError("infeasible state")
    U = forward_map_isotropic(gamma, protocol, mesh, lattice, layout)
    r = data.values - U
    return (float(r @ r)
            + penalty_eta(gamma, graph, weights.alpha0, weights.alpha1)
            + barrier(gamma, xi))


# ---------------------------------------------------------------------------
# Gauss-Newton driver
# ---------------------------------------------------------------------------

class _AnisoProblem:
    mode = "uniformly-anisotropic"

    def __init__(self, protocol, mesh, lattice, layout, weights, graph):
        self.protocol, self.mesh, self.lattice, self.layout = protocol, mesh, lattice, layout
        self.weights, self.graph = weights, graph
        self.M = lattice.n_active
        M = self.M
        self._pen_hess = np.zeros((2 * M + 1, 2 * M + 1))
        self._pen_hess[:M, :M] = penalty_eta_hess(graph, weights.alpha0, weights.alpha1)
        self._pen_hess[M:2 * M, M:2 * M] = penalty_theta_hess(graph, weights.beta0, weights.beta1)
        self._pen_hess[2 * M, 2 * M] = 2.0 * weights.beta2 / weights.nu ** 2

    def initial(self):
        return np.concatenate([np.ones(self.M), np.zeros(self.M), [0.0]])

    def unpack(self, x) -> UniformAnisoParams:
        M = self.M
        return UniformAnisoParams(eta=x[:M], theta=x[M:2 * M], lam=float(np.exp(x[2 * M])))

    def feasible(self, x) -> bool:
        return bool(np.all(x[:self.M] > 0))

    def predict(self, x) -> np.ndarray:
        return forward_map(self.unpack(x), self.protocol, self.mesh, self.lattice, self.layout)

    def predict_and_jacobian(self, x):
        params = self.unpack(x)
        U, J = jacobian(params, self.protocol, self.mesh, self.lattice, self.layout)
        J = J.copy()
        J[:, -1] *= params.lam  # chain rule to the internal log-lam variable
        return U, J

    def penalty(self, x):
        M, w = self.M, self.weights
        eta, theta, ll = x[:M], x[M:2 * M], x[2 * M]
        val = (penalty_eta(eta, self.graph, w.alpha0, w.alpha1)
               + penalty_theta(theta, self.graph, w.beta0, w.beta1)
               + w.beta2 * (ll + ll ** 2 / w.nu ** 2))
        grad = np.concatenate([
            penalty_eta_grad(eta, self.graph, w.alpha0, w.alpha1),
            penalty_theta_grad(theta, self.graph, w.beta0, w.beta1),
            [w.beta2 * (1.0 + 2.0 * ll / w.nu ** 2)]])
        return val, grad, self._pen_hess

    def lam_of(self, x) -> float:
        return float(np.exp(x[2 * self.M]))

    def block_caps(self, settings: GNSettings):
        M = self.M
        return [(slice(0, M), settings.eta_step_cap),
                (slice(M, 2 * M), settings.theta_step_cap),
                (slice(2 * M, 2 * M + 1), settings.loglam_step_cap)]

    def to_state(self, x, history, trace, converged, obj, misfit) -> ReconState:
        from anisoeit.tensors import canonicalize
        params = canonicalize(self.unpack(x))
        return ReconState(mode=self.mode, params=params, gamma=None, history=history,
                          lambda_trace=trace, converged=converged,
                          final_objective=obj, final_misfit=misfit)


class _IsoProblem:
    mode = "isotropic"

    def __init__(self, protocol, mesh, lattice, layout, weights, graph):
        self.protocol, self.mesh, self.lattice, self.layout = protocol, mesh, lattice, layout
        self.weights, self.graph = weights, graph
        self.M = lattice.n_active
        self._pen_hess = penalty_eta_hess(graph, weights.alpha0, weights.alpha1)

    def initial(self):
        return np.ones(self.M)

    def feasible(self, x) -> bool:
        return bool(np.all(x > 0))

    def predict(self, x) -> np.ndarray:
        return forward_map_isotropic(x, self.protocol, self.mesh, self.lattice, self.layout)

    def predict_and_jacobian(self, x):
        return jacobian_isotropic(x, self.protocol, self.mesh, self.lattice, self.layout)

    def penalty(self, x):
        w = self.weights
        val = penalty_eta(x, self.graph, w.alpha0, w.alpha1)
        grad = penalty_eta_grad(x, self.graph, w.alpha0, w.alpha1)
        return val, grad, self._pen_hess

    def lam_of(self, x) -> float:
        return 1.0

    def block_caps(self, settings: GNSettings):
        return [(slice(0, self.M), settings.eta_step_cap)]

    def to_state(self, x, history, trace, converged, obj, misfit) -> ReconState:
        return ReconState(mode=self.mode, params=None, gamma=x.copy(), history=history,
                          lambda_trace=trace, converged=converged,
                          final_objective=obj, final_misfit=misfit)


def _augmented_value(problem, x, data, xi):
    U = problem.predict(x)
    r = data.values - U
    misfit = float(r @ r)
    pen_val, _, _ = problem.penalty(x)
    return misfit + pen_val + barrier(x[:problem.M], xi), misfit


def _trust_capped_step(H0, g, block_caps, shifts):
    """Newton step with per-block Levenberg shifts escalated until each
    block respects its trust cap.

    Damping a block inflates its diagonal, which keeps the system SPD, so
    the returned step is always a descent direction; near a minimizer the
    raw step is small, no cap binds, and plain Gauss-Newton speed returns.
    """
    n = H0.shape[0]
    shifts = shifts.copy()
    for _ in range(40):
        H = H0.copy()
        for (sl, _cap), sh in zip(block_caps, shifts):
            d = np.arange(n)[sl]
            H[d, d] += sh
        try:
            delta = scipy.linalg.solve(H, -g, assume_a="pos")
        except scipy.linalg.LinAlgError:
            delta = np.linalg.lstsq(H, -g, rcond=None)[0]
        violated = False
        for k, (sl, cap) in enumerate(block_caps):
            if len(delta[sl]) and np.abs(delta[sl]).max() > cap:
                scale = np.abs(delta[sl]).max() / cap
                shifts[k] = max(shifts[k] * 10.0, shifts[k] * scale,
                                1e-14 * np.trace(H0))
                violated = True
        if not violated:
            return delta
    return delta


def _run_gauss_newton(problem, data, schedule: BarrierSchedule,
                      settings: GNSettings, x0=None) -> ReconState:
    x = problem.initial() if x0 is None else np.asarray(x0, dtype=float).copy()
    if not problem.feasible(x):
        raise ReconError("initial iterate is infeasible")
    history = []
    trace = [problem.lam_of(x)]
    total = 0
    converged = True
    obj, misfit = _augmented_value(problem, x, data, float(schedule.xi[0]))

    for stage, xi in enumerate(schedule.xi):
        xi = float(xi)
        obj, misfit = _augmented_value(problem, x, data, xi)
        for _ in range(settings.max_inner):
            if total >= settings.max_iterations:
                break
            U, Jm = problem.predict_and_jacobian(x)
            r = data.values - U
            misfit = float(r @ r)
            pen_val, pen_grad, pen_hess = problem.penalty(x)
            bar_val = barrier(x[:problem.M], xi)
            obj = misfit + pen_val + bar_val

            H0 = 2.0 * (Jm.T @ Jm) + pen_hess
            idx = np.arange(problem.M)
            H0[idx, idx] += barrier_hess_diag(x[:problem.M], xi)
            g = -2.0 * (Jm.T @ r) + pen_grad
            g[:problem.M] += barrier_grad(x[:problem.M], xi)

            accepted = False
            base = settings.damping * np.trace(H0)
            shifts = np.full(len(problem.block_caps(settings)), base)
            for _esc in range(settings.damping_escalations + 1):
                delta = _trust_capped_step(H0, g, problem.block_caps(settings), shifts)
                slope = float(g @ delta)

                t = 1.0
                for _bt in range(settings.max_backtracks + 1):
                    xt = x + t * delta
                    if problem.feasible(xt):
                        obj_t, misfit_t = _augmented_value(problem, xt, data, xi)
                        if obj_t <= obj + settings.armijo * t * slope:
                            accepted = True
                            break
                    t *= settings.shrink
                if accepted:
                    break
                shifts = np.maximum(shifts, 1e-14 * np.trace(H0)) * 1e4
            if not accepted:
                converged = False
                break

            step_norm = float(np.linalg.norm(t * delta))
            x = xt
            total += 1
            history.append({
                "iteration": total, "stage": stage, "xi": xi,
                "objective": obj_t, "misfit": misfit_t,
                "penalty": pen_val, "barrier": bar_val,
                "lambda": problem.lam_of(x), "step": t,
            })
            trace.append(problem.lam_of(x))
            rel_drop = (obj - obj_t) / max(abs(obj), 1e-300)
            obj, misfit = obj_t, misfit_t
            if rel_drop < settings.obj_tol or step_norm < settings.step_tol:
                break
        if not converged or total >= settings.max_iterations:
            break

    return problem.to_state(x, history, trace, converged, obj, misfit)


def gauss_newton_reconstruct(data: fem.DataVector, protocol: fem.MeasurementProtocol,
                             mesh: Mesh, lattice: PixelLattice, layout: ElectrodeLayout,
                             weights: RegWeights, schedule: BarrierSchedule,
                             settings: GNSettings = None, x0=None) -> ReconState:
    """Reconstruct (eta, theta, lam) starting from isotropic unit conductivity."""
    graph = NeighborGraph.from_lattice(lattice)
    problem = _AnisoProblem(protocol, mesh, lattice, layout, weights, graph)
    return _run_gauss_newton(problem, data, schedule, settings or GNSettings(), x0)


def isotropic_reconstruct(data: fem.DataVector, protocol: fem.MeasurementProtocol,
                          mesh: Mesh, lattice: PixelLattice, layout: ElectrodeLayout,
                          weights: RegWeights, schedule: BarrierSchedule,
                          settings: GNSettings = None, x0=None) -> ReconState:
    """Baseline reconstruction of an isotropic pixel conductivity vector."""
    graph = NeighborGraph.from_lattice(lattice)
    problem = _IsoProblem(protocol, mesh, lattice, layout, weights, graph)
    return _run_gauss_newton(problem, data, schedule, settings or GNSettings(), x0)


# ---------------------------------------------------------------------------
# exports
# ---------------------------------------------------------------------------

def recon_state_to_csv(state: ReconState) -> str:
    buf = io.StringIO()
    if state.mode == "uniformly-anisotropic":
        buf.write(f"# mode={state.mode} lambda={state.params.lam:.17g}\n")
        buf.write("pixel,eta,theta\n")
        for i, (e, t) in enumerate(zip(state.params.eta, state.params.theta)):
            buf.write(f"{i},{e:.17g},{t:.17g}\n")
    else:
        buf.write(f"# mode={state.mode}\n")
        buf.write("pixel,gamma\n")
        for i, gv in enumerate(state.gamma):
            buf.write(f"{i},{gv:.17g}\n")
    return buf.getvalue()


def run_log_to_json(state: ReconState) -> str:
    return json.dumps({
        "mode": state.mode,
        "converged": state.converged,
        "final_objective": state.final_objective,
        "final_misfit": state.final_misfit,
        "lambda_trace": list(state.lambda_trace),
        "iterations": state.history,
    }, indent=1)
