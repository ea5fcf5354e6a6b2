"""Formation-based source seeking with a distributed averaging estimator.

Agents ``i = 1..N`` at positions ``p_i`` move with ``v_i = v_i^e + v_i^f``:

* formation law ``v_i^f = -(1/N) sum_j a_ij (p_i - p_j - d_ij)``,
* seeking law ``v_i^e = -c0 sat(D^-1 delta_i)`` with ``D = sum_j d_j0 d_j0^T``,

and each agent runs the estimator

    delta_i' = -(delta_i - N d_i0 h(p_i)) - sum_j a_ij (q_i - q_j)
    q_i'     =  mu sum_j a_ij (delta_i - delta_j)

whose consensus value ``sum_i d_i0 h(p_i)`` approximates ``D grad h``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.csgraph import connected_components

from ..errors import PreconditionError, SingularSolveError
from ..system import Method, PerturbedSystem, SimConfig, simulate
from .objectives import Objective, quadratic_objective

__all__ = [
    "SourceSeekingScenario",
    "ReducedNetworkMatrices",
    "SourceSeekingLoop",
    "SourceSeekingSummary",
    "radial_saturation",
    "offsets_from_anchors",
    "default_adjacency",
    "square_formation",
    "shipped_source_seeking",
    "householder_complement",
    "solve_lyapunov",
    "build_reduced_network",
    "equilibrium_map",
    "source_seeking_scenario",
]


def radial_saturation(v):
    """``v * min(1, 1/|v|)`` along the last axis."""
    v = np.asarray(v, dtype=float)
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    with np.errstate(divide="ignore"):
        scale = np.where(norm > 1.0, 1.0 / norm, 1.0)
    return v * scale


def offsets_from_anchors(d0):
    """Antisymmetric offsets ``d_ij = d_i0 - d_j0`` from anchor offsets."""
    d0 = np.asarray(d0, dtype=float)
    return d0[:, None, :] - d0[None, :, :]


def default_adjacency(N):
    """Complete graph for ``N <= 6``, cycle otherwise."""
    if N <= 6:
        return np.ones((N, N)) - np.eye(N)
    a = np.zeros((N, N))
    for i in range(N):
        a[i, (i + 1) % N] = a[(i + 1) % N, i] = 1.0
    return a


def square_formation(half_side=0.5):
    """Four corners of a square centred at the origin."""
    s = float(half_side)
    return np.array([[s, s], [-s, s], [-s, -s], [s, -s]])


@dataclass(frozen=True)
class SourceSeekingScenario:
    d_offsets: np.ndarray
    adjacency: np.ndarray
    mu: float
    c0: float
    objective: Objective
    p_epsilon: float = 0.2
    name: str = "source_seeking"

    def __post_init__(self):
        d = np.asarray(self.d_offsets, dtype=float)
        a = np.asarray(self.adjacency, dtype=float)
        object.__setattr__(self, "d_offsets", d)
        object.__setattr__(self, "adjacency", a)
        if d.ndim != 3 or d.shape[0] != d.shape[1] or d.shape[0] < 2:
            raise PreconditionError(f"d_offsets must have shape (N, N, n) with N >= 2, got {d.shape}")
        if not np.array_equal(d, -d.transpose(1, 0, 2)):
            raise PreconditionError("offsets must satisfy d_ij = -d_ji exactly")
        if a.shape != d.shape[:2] or not np.array_equal(a, a.T) or np.any(np.diag(a) != 0) \
                or not np.all((a == 0) | (a == 1)):
            raise PreconditionError("adjacency must be a symmetric 0/1 matrix with zero diagonal")
        if connected_components(a, directed=False)[0] != 1:
            raise PreconditionError("communication graph is not connected")
        if not (self.mu > 0 and self.c0 > 0 and self.p_epsilon > 0):
            raise PreconditionError("mu, c0 and p_epsilon must be positive")
        if not np.linalg.det(self.D) > 0:
            raise PreconditionError("formation offsets do not span the space: det(sum d_j0 d_j0^T) <= 0")

    @property
    def N(self):
        return self.d_offsets.shape[0]

    @property
    def n(self):
        return self.d_offsets.shape[2]

    @property
    def d0(self):
        return self.d_offsets.sum(axis=1) / self.N

    @property
    def D(self):
        d0 = self.d0
        return d0.T @ d0

    @property
    def laplacian(self):
        a = self.adjacency
        return np.diag(a.sum(axis=1)) - a

    @property
    def p_star(self):
        return self.objective.p_star


def shipped_source_seeking(objective=None, c0=0.05, mu=2.0, p_epsilon=0.2):
    """Four agents in a unit square formation seeking the minimizer of ``objective``
    (default ``|p - (3, -2)|^2``) over a complete graph."""
    objective = quadratic_objective([3.0, -2.0]) if objective is None else objective
    d = offsets_from_anchors(square_formation())
    return SourceSeekingScenario(d, default_adjacency(4), mu, c0, objective, p_epsilon)


@dataclass(frozen=True)
class ReducedNetworkMatrices:
    L: np.ndarray
    U1: np.ndarray
    Lbar: np.ndarray
    Lbar_kron: np.ndarray
    A: np.ndarray
    B: np.ndarray
    P: np.ndarray

    def lyapunov_residual(self):
        return float(np.linalg.norm(self.P @ self.A + self.A.T @ self.P + np.eye(self.A.shape[0])))

    def slowest_rate(self):
        return float(-np.max(np.linalg.eigvals(self.A).real))


def householder_complement(N):
    """Columns 2..N of the reflection taking ``e_1`` to ``1/sqrt(N)``."""
    u = -np.full(N, 1.0 / math.sqrt(N))
    u[0] += 1.0
    H = np.eye(N) - 2.0 * np.outer(u, u) / (u @ u)
    return H[:, 1:]


def solve_lyapunov(A):
    """Symmetric ``P`` with ``P A + A^T P = -I`` via the vectorized linear system."""
    A = np.asarray(A, dtype=float)
    k = A.shape[0]
    eig = np.linalg.eigvals(A)
    if np.max(eig.real) >= 0:
        raise SingularSolveError(f"A is not Hurwitz (max real part {np.max(eig.real):.3g})")
    I = np.eye(k)
    M = np.kron(A.T, I) + np.kron(I, A.T)
    try:
        vec = np.linalg.solve(M, -I.reshape(-1, order="F"))
    except np.linalg.LinAlgError as exc:
        raise SingularSolveError(str(exc)) from exc
    P = vec.reshape(k, k, order="F")
    return 0.5 * (P + P.T)


def build_reduced_network(scn):
    N, n = scn.N, scn.n
    L = scn.laplacian
    U1 = householder_complement(N)
    Lbar = L @ U1
    Lk = np.kron(Lbar, np.eye(n))
    Nn, Rn = N * n, (N - 1) * n
    A = np.block([[-np.eye(Nn), -Lk], [scn.mu * Lk.T, np.zeros((Rn, Rn))]])
    B = np.vstack([-np.eye(Nn), np.zeros((Rn, Nn))])
    return ReducedNetworkMatrices(L, U1, Lbar, Lk, A, B, solve_lyapunov(A))


def _h_values(scn, positions):
    h = scn.objective.h
    return np.array([h(p) for p in positions])


def _estimator_equilibrium(scn, mats, hvals):
    """``(1 (x) delta_e, q_hat_e)`` for sampled field values ``h(p_i)``."""
    d0 = scn.d0
    H = (scn.N * d0 * hvals[:, None]).ravel()
    delta_e = d0.T @ hvals
    ones_delta = np.tile(delta_e, scn.N)
    Lk = mats.Lbar_kron
    q_hat = -np.linalg.solve(Lk.T @ Lk, Lk.T @ (ones_delta - H))
    return ones_delta, q_hat, H


def equilibrium_map(scn, mats, p0):
    """Frozen-``p0`` equilibrium of the reduced estimator, agents in exact formation."""
    p0 = np.asarray(p0, dtype=float)
    hvals = _h_values(scn, p0 + scn.d0)
    ones_delta, q_hat, _ = _estimator_equilibrium(scn, mats, hvals)
    return np.concatenate([ones_delta, q_hat])


@dataclass
class SourceSeekingSummary:
    final_error: float
    entry_time: float | None
    remains_in_ball: bool
    max_formation_error: float
    max_formation_velocity_sum: float
    formation_bounded: bool
    p_epsilon: float

    def as_dict(self):
        return {
            "final_error": self.final_error,
            "entry_time": "never" if self.entry_time is None else self.entry_time,
            "remains_in_ball_last_quarter": self.remains_in_ball,
            "max_formation_error": self.max_formation_error,
            "max_formation_velocity_sum": self.max_formation_velocity_sum,
            "formation_bounded": self.formation_bounded,
            "p_epsilon": self.p_epsilon,
        }


@dataclass
class SourceSeekingLoop:
    """Closed loop built from a scenario, with full, reduced and diagnostic systems."""

    scn: SourceSeekingScenario
    mats: ReducedNetworkMatrices
    full_system: PerturbedSystem = field(init=False)
    reduced_system: PerturbedSystem = field(init=False)

    def __post_init__(self):
        s = self.scn
        N, n = s.N, s.n
        Nn = N * n
        self._Dinv = np.linalg.inv(s.D)
        self._Lk_full = np.kron(s.laplacian, np.eye(n))
        self._formation_bias = (s.adjacency[:, :, None] * s.d_offsets).sum(axis=1)
        x_eq = (s.p_star[None, :] + s.d0).ravel()
        self.full_system = PerturbedSystem(
            n=Nn, m=2 * Nn, g_s=self._full_slow, g_f=self._full_fast,
            rho_s=lambda x, z, d: 1.0, rho_f=lambda z, x, w: 1.0,
            phi=self.full_equilibrium, name=f"{s.name}(full)", x_eq=x_eq,
        )
        self.reduced_system = PerturbedSystem(
            n=n, m=Nn + (N - 1) * n, g_s=self._reduced_slow, g_f=self._reduced_fast,
            rho_s=lambda x, z, d: 1.0, rho_f=lambda z, x, w: 1.0,
            phi=lambda p0: equilibrium_map(s, self.mats, p0), name=f"{s.name}(reduced)",
            x_eq=s.p_star.copy(),
        )

    # velocities -------------------------------------------------------------
    def formation_velocity(self, positions):
        p = np.asarray(positions, dtype=float).reshape(self.scn.N, self.scn.n)
        return -(self.scn.laplacian @ p - self._formation_bias) / self.scn.N

    def seeking_velocity(self, delta):
        d = np.asarray(delta, dtype=float).reshape(self.scn.N, self.scn.n)
        return -self.scn.c0 * radial_saturation(d @ self._Dinv.T)

    # full loop ----------------------------------------------------------------
    def _split_full(self, z):
        Nn = self.scn.N * self.scn.n
        return z[:Nn], z[Nn:2 * Nn]

    def _full_slow(self, x, z, d):
        delta, _ = self._split_full(z)
        return (self.formation_velocity(x) + self.seeking_velocity(delta)).ravel()

    def _estimator_rates(self, positions, delta, q):
        s = self.scn
        hvals = _h_values(s, np.asarray(positions).reshape(s.N, s.n))
        H = (s.N * s.d0 * hvals[:, None]).ravel()
        return -(delta - H) - self._Lk_full @ q, s.mu * (self._Lk_full @ delta)

    def _full_fast(self, z, x, w):
        delta, q = self._split_full(z)
        dd, dq = self._estimator_rates(x, delta, q)
        return np.concatenate([dd, dq])

    def full_equilibrium(self, positions):
        """Estimator equilibrium for frozen agent positions (``q`` with zero mean)."""
        s = self.scn
        hvals = _h_values(s, np.asarray(positions).reshape(s.N, s.n))
        ones_delta, q_hat, _ = _estimator_equilibrium(s, self.mats, hvals)
        q = np.kron(self.mats.U1, np.eye(s.n)) @ q_hat
        return np.concatenate([ones_delta, q])

    # reduced loop -------------------------------------------------------------
    def _reduced_slow(self, p0, z, d):
        s = self.scn
        delta = z[: s.N * s.n]
        return self.seeking_velocity(delta).mean(axis=0)

    def _reduced_fast(self, z, p0, w):
        s = self.scn
        Nn = s.N * s.n
        hvals = _h_values(s, np.asarray(p0)[None, :] + s.d0)
        H = (s.N * s.d0 * hvals[:, None]).ravel()
        return self.mats.A @ z + np.concatenate([H, np.zeros(z.size - Nn)])

    # diagnostics --------------------------------------------------------------
    def frozen_estimator_system(self):
        """Full loop with agents held still: only the estimator evolves."""
        zero = np.zeros(self.full_system.n)
        return PerturbedSystem(
            n=self.full_system.n, m=self.full_system.m, g_s=lambda x, z, d: zero,
            g_f=self._full_fast, rho_s=lambda x, z, d: 0.0, rho_f=lambda z, x, w: 1.0,
            phi=self.full_equilibrium, name=f"{self.scn.name}(frozen)", x_eq=self.full_system.x_eq,
        )

    def consistency_system(self):
        """Full loop augmented with a reduced-coordinate copy of the estimator.

        Both copies see the same ``h(p_i)``; the copy's ``(delta, q_hat)`` evolves
        by ``A`` so its ``delta`` must track the per-agent one exactly.
        """
        s = self.scn
        Nn = s.N * s.n
        A = self.mats.A

        def g_f(z, x, w):
            delta, q = z[:Nn], z[Nn:2 * Nn]
            dd, dq = self._estimator_rates(x, delta, q)
            zr = z[2 * Nn:]
            hvals = _h_values(s, np.asarray(x).reshape(s.N, s.n))
            H = (s.N * s.d0 * hvals[:, None]).ravel()
            dr = A @ zr + np.concatenate([H, np.zeros(zr.size - Nn)])
            return np.concatenate([dd, dq, dr])

        def phi(x):
            base = self.full_equilibrium(x)
            return np.concatenate([base, self.reduce_estimator(base)])

        return PerturbedSystem(
            n=Nn, m=2 * Nn + Nn + (s.N - 1) * s.n,
            g_s=lambda x, z, d: self._full_slow(x, z[:2 * Nn], d),
            g_f=g_f, rho_s=lambda x, z, d: 1.0, rho_f=lambda z, x, w: 1.0,
            phi=phi, name=f"{s.name}(consistency)", x_eq=self.full_system.x_eq,
        )

    def reduce_estimator(self, z_full):
        """``(delta, q) -> (delta, (U1^T (x) I) q)``."""
        s = self.scn
        Nn = s.N * s.n
        Uk = np.kron(self.mats.U1, np.eye(s.n))
        return np.concatenate([z_full[:Nn], Uk.T @ z_full[Nn:2 * Nn]])

    def default_initial_state(self, positions=None):
        """Agents at the given positions (origin by default) with zero estimator state."""
        s = self.scn
        p = np.zeros((s.N, s.n)) if positions is None else np.asarray(positions, dtype=float)
        return p.ravel(), np.zeros(2 * s.N * s.n)

    def default_config(self, t_final=400.0):
        return SimConfig(t_final, method=Method.RK45_ADAPTIVE, rtol=1e-9, atol=1e-12, max_step=0.5)

    def run(self, t_final=400.0, positions=None, config=None):
        x0, z0 = self.default_initial_state(positions)
        return simulate(self.full_system, x0, z0, config or self.default_config(t_final))

    # reporting ----------------------------------------------------------------
    def average_positions(self, traj):
        s = self.scn
        return traj.x.reshape(-1, s.N, s.n).mean(axis=1)

    def formation_velocity_sums(self, traj):
        s = self.scn
        p = traj.x.reshape(-1, s.N, s.n)
        lp = np.einsum("ij,tjk->tik", s.laplacian, p)
        vf = -(lp - self._formation_bias[None]) / s.N
        return np.linalg.norm(vf.sum(axis=1), axis=1)

    def summarize(self, traj):
        s = self.scn
        p0 = self.average_positions(traj)
        err = np.linalg.norm(p0 - s.p_star, axis=1)
        inside = err <= s.p_epsilon
        entry = float(traj.times[np.argmax(inside)]) if inside.any() else None
        last = traj.times >= 0.75 * traj.times[-1]
        ptil = traj.x.reshape(-1, s.N, s.n) - p0[:, None, :] - s.d0[None]
        form = np.linalg.norm(ptil, axis=2).max(axis=1)
        first_half = traj.times <= 0.5 * traj.times[-1]
        bounded = bool(form.max() <= 10.0 * max(form[first_half].max(), 1e-300))
        return SourceSeekingSummary(float(err[-1]), entry, bool(np.all(inside[last])), float(form.max()),
                                    float(self.formation_velocity_sums(traj).max()), bounded, s.p_epsilon)

    def write_agent_csv(self, traj, path):
        """``t, p_i_k..., delta_i_k..., q_i_k...`` at 17 significant digits."""
        s = self.scn
        cols = ["t"]
        for block in ("p", "delta", "q"):
            cols += [f"{block}_{i + 1}_{k + 1}" for i in range(s.N) for k in range(s.n)]
        data = np.hstack([traj.times[:, None], traj.x, traj.z])
        np.savetxt(path, data, fmt="%.17g", delimiter=",", header=",".join(cols), comments="")


def source_seeking_scenario(scn):
    return SourceSeekingLoop(scn, build_reduced_network(scn))
