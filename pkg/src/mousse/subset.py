"""Single ellipsoidal subset: projections, distances, and scalar-parameter updates.

A subset is a bounded piece of a d-dimensional affine hyperplane in R^D,
parameterized by an orthonormal basis ``U`` (D x d), a center ``c`` (D,),
per-direction shape eigenvalues ``lambdas`` (d,), and a residual-energy-per-
dimension estimate ``delta``.  Distances to a partially observed vector are
measured with the scaled approximate Mahalanobis distance

    d_delta(x, S) = delta * sum_m beta_m^2 / lambda_m + ||x_perp||^2,

where ``beta`` is the least-squares coefficient of the re-centered observed
entries on the observed rows of ``U`` and ``x_perp`` the projection residual.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import RankDeficient

# Floors keep the 1/lambda and 1/delta divisions finite; the update recursions
# never produce exact zeros on their own but batch fits of degenerate cells can.
LAMBDA_FLOOR = 1e-12
DELTA_FLOOR = 1e-12

# Ridge added to the observed-rows Gram matrix before solving for beta.
GRAM_RIDGE = 1e-12

# Smallest acceptable eigenvalue of the (ridged) Gram matrix.
GRAM_MIN_EIG = 1e-10


@dataclass
class SubsetNode:
    """One subset of the multiscale approximation, at tree position ``node_id``."""

    basis: np.ndarray            # (D, d), orthonormal columns
    center: np.ndarray           # (D,)
    lambdas: np.ndarray          # (d,), nonnegative shape eigenvalues
    delta: float                 # residual energy per orthogonal dimension
    node_id: tuple[int, int]     # (level j, index k)
    is_virtual: bool = False

    def __post_init__(self) -> None:
        self.basis = np.asarray(self.basis, dtype=float)
        self.center = np.asarray(self.center, dtype=float)
        self.lambdas = np.maximum(np.asarray(self.lambdas, dtype=float), LAMBDA_FLOOR)
        self.delta = max(float(self.delta), DELTA_FLOOR)
        D, d = self.basis.shape
        if not 1 <= d < D:
            raise ValueError(f"need 1 <= d < D, got d={d}, D={D}")
        if self.center.shape != (D,) or self.lambdas.shape != (d,):
            raise ValueError("inconsistent parameter shapes")

    @property
    def ambient_dim(self) -> int:
        return self.basis.shape[0]

    @property
    def subset_dim(self) -> int:
        return self.basis.shape[1]

    def copy(self) -> "SubsetNode":
        return SubsetNode(
            basis=self.basis.copy(),
            center=self.center.copy(),
            lambdas=self.lambdas.copy(),
            delta=self.delta,
            node_id=self.node_id,
            is_virtual=self.is_virtual,
        )


@dataclass
class Observation:
    """One timestep's partially observed vector.

    ``values`` holds the observed entries only; ``omega`` their (strictly
    increasing) coordinate indices in ``{0, ..., D-1}``.
    """

    t: int
    values: np.ndarray
    omega: np.ndarray

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float)
        self.omega = np.asarray(self.omega, dtype=np.intp)
        if self.omega.size < 1:
            raise ValueError("observation needs at least one observed entry")
        if self.values.shape != self.omega.shape:
            raise ValueError("values and omega lengths differ")
        if self.omega.size > 1 and not np.all(np.diff(self.omega) > 0):
            raise ValueError("omega must be strictly increasing")
        if self.omega[0] < 0:
            raise ValueError("negative coordinate index")

    @classmethod
    def complete(cls, t: int, x: np.ndarray) -> "Observation":
        x = np.asarray(x, dtype=float)
        return cls(t=t, values=x, omega=np.arange(x.size, dtype=np.intp))

    def is_complete(self, ambient_dim: int) -> bool:
        return self.omega.size == ambient_dim


@dataclass
class ProjectionResult:
    """Least-squares fit of a re-centered observation onto a subset's basis."""

    beta: np.ndarray       # (d,) projection coefficients
    x_perp: np.ndarray     # (|omega|,) projection residual on observed coords
    omega_size: int

    @property
    def perp_energy(self) -> float:
        return float(self.x_perp @ self.x_perp)


def _gram_min_eig(gram: np.ndarray) -> float:
    # Closed forms for the common tiny dimensions; LAPACK otherwise.
    d = gram.shape[0]
    if d == 1:
        return float(gram[0, 0])
    if d == 2:
        half_tr = 0.5 * (gram[0, 0] + gram[1, 1])
        det = gram[0, 0] * gram[1, 1] - gram[0, 1] * gram[1, 0]
        return float(half_tr - np.sqrt(max(half_tr * half_tr - det, 0.0)))
    return float(np.linalg.eigvalsh(gram)[0])


def project_partial(obs: Observation, node: SubsetNode) -> ProjectionResult:
    """Solve min_beta ||x_omega - c_omega - U_omega beta|| on the observed rows.

    Uses the ridged normal equations (U_omega' U_omega + ridge I) beta =
    U_omega' (x_omega - c_omega).  Raises :class:`RankDeficient` when fewer
    entries are observed than the subset dimension or the Gram matrix is
    singular beyond the ridge; streaming callers skip such samples.
    """
    d = node.subset_dim
    if obs.omega.size < d:
        raise RankDeficient(
            f"{obs.omega.size} observed entries < subset dimension {d}"
        )
    u_om = node.basis[obs.omega]                      # (|omega|, d)
    y = obs.values - node.center[obs.omega]
    if d == 1:
        g = float(u_om[:, 0] @ u_om[:, 0]) + GRAM_RIDGE
        if g <= GRAM_MIN_EIG:
            raise RankDeficient("observed-rows Gram matrix is numerically singular")
        beta = np.array([float(u_om[:, 0] @ y) / g])
        x_perp = y - u_om[:, 0] * beta[0]
        return ProjectionResult(beta=beta, x_perp=x_perp, omega_size=obs.omega.size)
    gram = u_om.T @ u_om
    gram.flat[:: d + 1] += GRAM_RIDGE
    if _gram_min_eig(gram) <= GRAM_MIN_EIG:
        raise RankDeficient("observed-rows Gram matrix is numerically singular")
    beta = np.linalg.solve(gram, u_om.T @ y)
    x_perp = y - u_om @ beta
    return ProjectionResult(beta=beta, x_perp=x_perp, omega_size=obs.omega.size)


def rho_distance(pr: ProjectionResult, node: SubsetNode) -> float:
    """Approximate Mahalanobis distance: beta' diag(lambdas)^-1 beta + ||x_perp||^2 / delta."""
    return scaled_distance(pr, node) / node.delta


def scaled_distance(pr: ProjectionResult, node: SubsetNode) -> float:
    """Scaled approximate Mahalanobis distance d_delta (see module docstring)."""
    in_plane = float(np.sum(pr.beta * pr.beta / node.lambdas))
    return node.delta * in_plane + pr.perp_energy


def residual(pr: ProjectionResult, node: SubsetNode) -> float:
    """Tracking residual: square root of the scaled distance."""
    return float(np.sqrt(scaled_distance(pr, node)))


def update_scalar_params(
    node: SubsetNode, obs: Observation, pr: ProjectionResult, alpha: float
) -> SubsetNode:
    """Exponential-forgetting update of center, lambdas, and delta (in place).

    Center coordinates move only where observed; each lambda tracks the
    squared coefficient on its own basis column; delta tracks the residual
    energy spread over the D - d ambient orthogonal dimensions.  ``pr`` must
    have been computed against the node's current parameters.
    """
    D, d = node.basis.shape
    node.center[obs.omega] = alpha * node.center[obs.omega] + (1 - alpha) * obs.values
    node.lambdas = np.maximum(
        alpha * node.lambdas + (1 - alpha) * pr.beta**2, LAMBDA_FLOOR
    )
    node.delta = max(
        alpha * node.delta + (1 - alpha) * pr.perp_energy / (D - d), DELTA_FLOOR
    )
    return node


def residual_map(obs: Observation, node: SubsetNode) -> np.ndarray:
    """Ambient-space residual vector for localization displays.

    Observed coordinates carry the projection residual against ``node``;
    unobserved coordinates are zero.
    """
    pr = project_partial(obs, node)
    out = np.zeros(node.ambient_dim)
    out[obs.omega] = pr.x_perp
    return out
