"""Synthetic ground-truth generators: bump and chirp manifolds, drift schedules,
noise, missing-entry masks, and the partial-observation recovery bound.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .subset import Observation

BUMP_PEAK = 1.0 / math.sqrt(2.0 * math.pi)


# ----------------------------------------------------------------------
# width / chirp-rate schedules


@dataclass(frozen=True)
class StaticGamma:
    gamma: float = 0.6

    def at(self, t: int) -> float:
        return self.gamma


@dataclass(frozen=True)
class SlowGamma:
    """Width ramps down linearly for s steps, then back up (clamped afterwards)."""

    gamma0: float = 2e-4
    s: int = 1000

    def at(self, t: int) -> float:
        if t <= self.s:
            return 0.6 - self.gamma0 * t
        t = min(t, 2 * self.s)
        return 0.6 - self.gamma0 * (2 * self.s - t)


@dataclass(frozen=True)
class JumpGamma:
    """Slow ramp with an abrupt extra drop of ``dgamma`` at ``t_change``."""

    gamma0: float = 2e-4
    dgamma: float = 0.05
    t_change: int = 200

    def at(self, t: int) -> float:
        if t < self.t_change:
            return 0.6 - self.gamma0 * t
        pre_change = 0.6 - self.gamma0 * (self.t_change - 1)
        return pre_change - self.dgamma - self.gamma0 * t


GammaSchedule = StaticGamma | SlowGamma | JumpGamma


@dataclass(frozen=True)
class ChirpRate:
    """Chirp rate ramps up linearly for s steps, then back down (clamped)."""

    rate: float = 0.1
    s: int = 1000

    def at(self, t: int) -> float:
        if t <= self.s:
            return self.rate * t
        t = min(t, 2 * self.s)
        return 2 * self.rate * self.s - self.rate * t


# ----------------------------------------------------------------------
# manifold point generators


def bump_grid(ambient_dim: int) -> np.ndarray:
    """Grid z_n = -2 + 4n/D for n = 1..D (right-closed on [-2, 2])."""
    return -2.0 + 4.0 * np.arange(1, ambient_dim + 1) / ambient_dim


def bump_point(theta: float, gamma: float, ambient_dim: int) -> np.ndarray:
    """Gaussian bump of width ``gamma`` centered at ``theta`` on the fixed grid."""
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    z = bump_grid(ambient_dim)
    return BUMP_PEAK * np.exp(-((z - theta) ** 2) / (2.0 * gamma * gamma))


def chirp_grid(ambient_dim: int) -> np.ndarray:
    """Grid z_n = 1e-4 n for n = 1..D (regular spacing on (0, 0.01])."""
    return 1e-4 * np.arange(1, ambient_dim + 1)


def chirp_point(f0: float, phase: float, k: float, ambient_dim: int) -> np.ndarray:
    """Linear-chirp snapshot: sin(2 pi (f0 z + (k^2/2) z^2 + phase))."""
    z = chirp_grid(ambient_dim)
    return np.sin(2.0 * math.pi * (f0 * z + 0.5 * k * k * z * z + phase))


# ----------------------------------------------------------------------
# streams


@dataclass(frozen=True)
class ManifoldSpec:
    """What to stream: manifold family, drift schedule, noise, and mask density."""

    kind: str = "bump"                      # "bump" or "chirp"
    ambient_dim: int = 100
    schedule: GammaSchedule | ChirpRate = field(default_factory=StaticGamma)
    noise_var: float = 4e-4
    missing_frac: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in ("bump", "chirp"):
            raise ValueError("kind must be 'bump' or 'chirp'")
        if self.ambient_dim < 2:
            raise ValueError("ambient dimension must be >= 2")
        if self.noise_var < 0:
            raise ValueError("noise variance must be nonnegative")
        if not 0 <= self.missing_frac < 1:
            raise ValueError("missing fraction must be in [0, 1)")
        if self.n_observed < 1:
            raise ValueError("mask leaves no observed entries")

    @property
    def n_observed(self) -> int:
        return int(round((1.0 - self.missing_frac) * self.ambient_dim))

    def change_time(self) -> int | None:
        return self.schedule.t_change if isinstance(self.schedule, JumpGamma) else None


def _draw_point(spec: ManifoldSpec, t: int, rng: np.random.Generator) -> tuple[np.ndarray, dict]:
    if spec.kind == "bump":
        theta = rng.uniform(-2.0, 2.0)
        gamma = spec.schedule.at(t)
        if gamma <= 0:
            raise ValueError(f"schedule produced gamma <= 0 at t={t}")
        return bump_point(theta, gamma, spec.ambient_dim), {"theta": theta, "gamma": gamma}
    f0 = rng.uniform(1.0, 100.0)
    phase = rng.uniform(0.0, 1.0)
    k = spec.schedule.at(t)
    return chirp_point(f0, phase, k, spec.ambient_dim), {"f0": f0, "phase": phase, "k": k}


def sample_stream(spec: ManifoldSpec, horizon: int, n_complete: int = 0,
                  n_warmup: int = 0) -> Iterator[tuple[Observation, dict]]:
    """Yield (observation, truth) pairs for t = 1..horizon, deterministic under the seed.

    Two kinds of prelude rows (carrying t <= 0, schedule frozen at t = 1) can
    precede the scored stream: ``n_complete`` fully observed training rows,
    then ``n_warmup`` rows with the regular missing pattern meant for warming
    the tracker without being scored.  Truth dictionaries hold the noiseless
    point and its parameters and are never shown to the tracker.
    """
    rng = np.random.default_rng(spec.seed)
    D = spec.ambient_dim
    sigma = math.sqrt(spec.noise_var)
    full = np.arange(D, dtype=np.intp)

    def draw(t_sched: int, t_out: int, complete: bool, prelude: bool):
        v, params = _draw_point(spec, t_sched, rng)
        x = v + sigma * rng.standard_normal(D) if sigma > 0 else v.copy()
        if complete or spec.missing_frac == 0:
            omega = full.copy()
        else:
            omega = np.sort(rng.choice(D, size=spec.n_observed, replace=False))
        truth = {"v": v, "prelude": prelude, **params}
        return Observation(t=t_out, values=x[omega], omega=omega), truth

    n_pre = n_complete + n_warmup
    for i in range(n_complete):
        yield draw(1, i - n_pre + 1, complete=True, prelude=True)
    for i in range(n_warmup):
        yield draw(1, i - n_warmup + 1, complete=False, prelude=True)
    for t in range(1, horizon + 1):
        yield draw(t, t, complete=False, prelude=False)


# ----------------------------------------------------------------------
# partial-observation recovery bound


@dataclass
class BoundReport:
    bound: float
    meets_sample_floor: bool
    coherence: float
    theta: float
    misfit_term: float
    noise_term: float
    omega_floor: float


def coherence(basis: np.ndarray) -> float:
    """(D/d) times the largest squared row norm of an orthonormal basis."""
    D, d = basis.shape
    return float(D / d * np.max(np.sum(basis * basis, axis=1)))


def theorem1_bound(v: np.ndarray, c: np.ndarray, basis: np.ndarray,
                   omega: np.ndarray, noise_var: float, fail_prob: float,
                   ell: float = 0.5) -> BoundReport:
    """High-probability bound on ||beta_partial - beta_full||^2.

    Splits into a misfit term driven by the off-subspace component
    q = (I - UU')(v - c) and a noise term; also reports whether |omega|
    meets the sample-count floor under which the bound is stated
    (failure probability at most 3 * fail_prob).
    """
    if not 0 < ell < 1:
        raise ValueError("ell must be in (0, 1)")
    if not 0 < fail_prob < 1:
        raise ValueError("fail_prob must be in (0, 1)")
    D, d = basis.shape
    m = int(np.asarray(omega).size)
    q = (v - c) - basis @ (basis.T @ (v - c))
    q_energy = float(q @ q)
    coh = coherence(basis)
    if q_energy > 0:
        theta = math.sqrt(2.0 * (D * float(np.max(q * q)) / q_energy)
                          * math.log(1.0 / fail_prob))
        misfit = (2.0 * (1.0 + theta) ** 2 / (1.0 - ell) ** 2
                  * (d / m) * coh * q_energy)
    else:
        theta = 0.0
        misfit = 0.0
    noise = noise_var * (64.0 / 9.0) * D * D / ((1.0 - ell) ** 2 * m * m)
    omega_floor = max(
        (8.0 / 3.0) * coh * d * math.log(2.0 * d / fail_prob),
        (4.0 / 3.0) * D / ((1.0 - ell) * math.log(2.0 * D / fail_prob)),
    )
    return BoundReport(
        bound=misfit + noise,
        meets_sample_floor=m >= omega_floor,
        coherence=coh,
        theta=theta,
        misfit_term=misfit,
        noise_term=noise,
        omega_floor=omega_floor,
    )


def low_coherence_basis(ambient_dim: int, d: int,
                        rng: np.random.Generator) -> np.ndarray:
    """Random orthonormal basis with flat row norms (coherence 1, up to rounding).

    Built from cos/sin Fourier pairs at random distinct frequencies (plus a
    constant column when d is odd), mixed by a random rotation that preserves
    row norms.  Needed because the sample-count floor of the recovery bound
    is unsatisfiable for generic random bases at moderate ambient dimension.
    """
    D = ambient_dim
    n = np.arange(D)
    n_pairs = d // 2
    max_freq = (D - 1) // 2
    if n_pairs > max_freq:
        raise ValueError("not enough distinct frequencies for this d")
    freqs = rng.choice(np.arange(1, max_freq + 1), size=n_pairs, replace=False)
    cols = []
    if d % 2 == 1:
        cols.append(np.ones(D) / math.sqrt(D))
    for f in freqs:
        angle = 2.0 * math.pi * f * n / D
        cols.append(np.cos(angle) / math.sqrt(D / 2.0))
        cols.append(np.sin(angle) / math.sqrt(D / 2.0))
    basis = np.stack(cols, axis=1)
    q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    return basis @ q
