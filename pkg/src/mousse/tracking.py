"""Basis update rules for streaming subspace tracking with missing data.

Three trackers share one calling convention: given a node, an observation,
and the projection result computed against the node's current parameters,
mutate ``node.basis`` in place.

* :class:`Grouse` takes a step along the Grassmannian gradient of the
  instantaneous projection cost; the rotation form keeps the basis
  orthonormal by construction.
* :class:`PetrelsGS` / :class:`PetrelsFO` run a per-row recursive
  least-squares update with discount ``alpha`` (second-order state kept per
  ambient row), then restore orthonormality by Gram-Schmidt or by the
  minimal-distance polar factor, respectively.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import RankDeficient
from .subset import Observation, ProjectionResult, SubsetNode

# Large-gain start for the per-row RLS inverse matrices.
PETRELS_INIT_GAIN = 1e3

# Column-norm collapse threshold during orthonormalization.
ORTHO_RANK_TOL = 1e-12


@dataclass(frozen=True)
class Grouse:
    """Grassmannian rank-one gradient tracker with base step size ``eta0``."""

    eta0: float = 0.5

    def __post_init__(self) -> None:
        if self.eta0 < 0:
            raise ValueError("eta0 must be nonnegative")


@dataclass(frozen=True)
class PetrelsGS:
    """Per-row RLS tracker with Gram-Schmidt re-orthonormalization."""

    alpha: float = 0.95

    def __post_init__(self) -> None:
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must be in (0, 1]")


@dataclass(frozen=True)
class PetrelsFO:
    """Per-row RLS tracker with fast (polar) re-orthonormalization.

    The polar factor is the orthonormal matrix closest to the raw update in
    Frobenius norm, which preserves the continuity of the basis from step to
    step (Gram-Schmidt does not).
    """

    alpha: float = 0.95

    def __post_init__(self) -> None:
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must be in (0, 1]")


TrackerKind = Grouse | PetrelsGS | PetrelsFO


class PetrelsState:
    """Second-order RLS state: one inverse correlation matrix per ambient row."""

    def __init__(self, ambient_dim: int, subset_dim: int,
                 node_id: tuple[int, int] | None = None):
        self.r_inv = np.broadcast_to(
            PETRELS_INIT_GAIN * np.eye(subset_dim), (ambient_dim, subset_dim, subset_dim)
        ).copy()
        self.node_id = node_id

    def copy(self) -> "PetrelsState":
        out = PetrelsState.__new__(PetrelsState)
        out.r_inv = self.r_inv.copy()
        out.node_id = self.node_id
        return out


def grouse_step(node: SubsetNode, obs: Observation, pr: ProjectionResult,
                eta0: float) -> SubsetNode:
    """One Grassmannian gradient step on ``node.basis`` (in place).

    The residual direction is the projection residual embedded at the
    observed coordinates (zeros elsewhere), so it is orthogonal to the span
    of the current basis and the update is a plane rotation: orthonormality
    is preserved without re-orthonormalization.  Degenerate steps (zero
    coefficients, zero residual, zero step size) leave the basis unchanged.
    """
    beta = pr.beta
    beta_norm = float(np.linalg.norm(beta))
    r_norm = float(np.linalg.norm(pr.x_perp))
    x_norm = float(np.linalg.norm(obs.values))
    if eta0 == 0.0 or beta_norm == 0.0 or r_norm == 0.0 or x_norm == 0.0:
        return node
    u = node.basis
    p = u @ beta                          # in-span prediction, ||p|| == ||beta||
    sigma = (r_norm * float(np.linalg.norm(p))) * (eta0 / x_norm)
    r_hat = np.zeros(node.ambient_dim)
    r_hat[obs.omega] = pr.x_perp / r_norm
    step_dir = ((np.cos(sigma) - 1.0) / beta_norm**2) * p + (np.sin(sigma) / beta_norm) * r_hat
    u += np.outer(step_dir, beta)
    return node


def petrels_step(node: SubsetNode, state: PetrelsState, obs: Observation,
                 pr: ProjectionResult, alpha: float,
                 innovation_scale: float = 1.0) -> SubsetNode:
    """One per-row RLS update of ``node.basis`` (in place, not orthonormal).

    All rows discount their inverse correlation matrix by 1/alpha; observed
    rows additionally absorb the rank-one term (Sherman-Morrison) and move
    toward the re-centered observation.  The returned basis must be passed
    through an orthonormalization before further projections.
    ``innovation_scale`` damps the row movement (used by the update-all
    policy); it leaves the second-order state untouched.
    """
    a = pr.beta
    r_inv = state.r_inv
    if a.size == 1:
        # Rank-one state: every R_m is a scalar.
        a0 = float(a[0])
        r = r_inv[:, 0, 0]
        scale = np.zeros(node.ambient_dim)
        scale[obs.omega] = 1.0 / alpha**2
        r_new = r / alpha - (scale / (1.0 + (r * a0 * a0) / alpha)) * (r * a0) ** 2
        r_inv[:, 0, 0] = r_new
        u_om = node.basis[obs.omega, 0]
        y = pr.x_perp + u_om * a0
        node.basis[obs.omega, 0] = u_om + innovation_scale * (y - u_om * a0) \
            * (r_new[obs.omega] * a0)
        return node
    v = r_inv @ a                                       # (D, d)
    quad = v @ a                                        # (D,)
    # Inverse of R_m <- alpha R_m + p_m a a' for every row in one shot:
    # p_m = 1 on observed rows, 0 elsewhere (pure discount).
    p_m = np.zeros(node.ambient_dim)
    p_m[obs.omega] = 1.0
    scale = (p_m / alpha**2) / (1.0 + quad / alpha)
    r_inv /= alpha
    r_inv -= scale[:, None, None] * (v[:, :, None] * v[:, None, :])
    # Row update: u_m <- u_m + (y_m - a' u_m) R_m^-1 a, observed rows only.
    # y is the re-centered observed vector, reconstructed from the projection.
    u_om = node.basis[obs.omega]
    y = pr.x_perp + u_om @ a
    gain = r_inv[obs.omega] @ a                         # (|omega|, d)
    node.basis[obs.omega] = u_om + innovation_scale * (y - u_om @ a)[:, None] * gain
    return node


def orthonormalize_gs(u: np.ndarray) -> np.ndarray:
    """Gram-Schmidt orthonormalization, columns kept in input order.

    Implemented via the thin QR factorization with the diagonal of R forced
    positive, which reproduces the classical Gram-Schmidt result.  Raises
    :class:`RankDeficient` when a column's residual norm collapses.
    """
    if u.shape[1] == 1:
        return _normalize_single_column(u)
    q, r = np.linalg.qr(u)
    diag = np.diag(r)
    if np.min(np.abs(diag)) < ORTHO_RANK_TOL:
        raise RankDeficient("column norm collapsed during orthonormalization")
    return q * np.sign(diag)


def orthonormalize_fo(u: np.ndarray) -> np.ndarray:
    """Minimal-distance (polar) orthonormalization U (U'U)^{-1/2}.

    Computed from the thin SVD, whose product of singular-vector factors is
    exactly the polar factor.  Among all matrices with orthonormal columns
    this is the closest to the input in Frobenius norm, so per-step basis
    continuity is never worse than under Gram-Schmidt.
    """
    if u.shape[1] == 1:
        return _normalize_single_column(u)
    w, s, vt = np.linalg.svd(u, full_matrices=False)
    if s[-1] < ORTHO_RANK_TOL:
        raise RankDeficient("column norm collapsed during orthonormalization")
    return w @ vt


def _normalize_single_column(u: np.ndarray) -> np.ndarray:
    norm = float(np.linalg.norm(u[:, 0]))
    if norm < ORTHO_RANK_TOL:
        raise RankDeficient("column norm collapsed during orthonormalization")
    return u / norm


def apply_tracker(kind: TrackerKind, node: SubsetNode, obs: Observation,
                  pr: ProjectionResult, state: PetrelsState | None,
                  weight: float = 1.0) -> None:
    """Dispatch one basis update for ``node`` according to ``kind``."""
    if isinstance(kind, Grouse):
        grouse_step(node, obs, pr, kind.eta0 * weight)
        return
    if state is None:
        raise ValueError("PETRELS trackers need a per-node state")
    petrels_step(node, state, obs, pr, kind.alpha, innovation_scale=weight)
    if isinstance(kind, PetrelsGS):
        node.basis = orthonormalize_gs(node.basis)
    else:
        node.basis = orthonormalize_fo(node.basis)


def needs_state(kind: TrackerKind) -> bool:
    return isinstance(kind, (PetrelsGS, PetrelsFO))
