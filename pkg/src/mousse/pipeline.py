"""End-to-end run plumbing: configuration, track+detect, and Monte Carlo tables.

A run is described by a flat key=value mapping (see DEFAULTS for the full key
set).  The same RunConfig drives single-stream tracking (``track_rows``) and
the Monte Carlo estimators that reproduce the threshold/delay tables, with
``run.mode`` switching between the multiscale tree and the single-subspace
baseline (one leaf, structure updates disabled).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from itertools import islice
from typing import Callable, Iterable, Iterator

import numpy as np

from .changepoint import (
    GlrDetector,
    McArlResult,
    McDelayResult,
    NuVariant,
    calibrate,
    mc_arl,
    mc_delay,
    qq_correlation,
    select_nu_variant,
    threshold_for_arl,
)
from .datagen import (
    ChirpRate,
    JumpGamma,
    ManifoldSpec,
    SlowGamma,
    StaticGamma,
    sample_stream,
)
from .errors import ConfigError, DataError, DegenerateBaseline
from .streamio import StreamRecord
from .subset import Observation
from .tracking import Grouse, PetrelsFO, PetrelsGS, TrackerKind
from .tree import MousseConfig, MousseTree, init_from_batch, init_single_subspace

DEFAULTS: dict[str, str] = {
    "manifold.kind": "bump",
    "manifold.ambient_dim": "100",
    "manifold.noise_var": "4e-4",
    "manifold.missing": "0.0",
    "manifold.schedule": "static",      # static | slow | jump | chirp-ramp
    "manifold.gamma": "0.6",
    "manifold.gamma0": "2e-4",
    "manifold.s": "1000",
    "manifold.dgamma": "0.05",
    "manifold.t_change": "200",
    "manifold.chirp_rate": "0.1",
    "mousse.d": "1",
    "mousse.eps": "0.1",
    "mousse.alpha": "0.95",
    "mousse.mu": "0.1",
    "mousse.tracker": "petrels-fo",     # grouse | petrels-gs | petrels-fo
    "mousse.eta0": "0.5",
    "mousse.tracker_alpha": "",         # empty -> mousse.alpha
    "mousse.max_depth": "12",
    "mousse.update_policy": "nearest",
    "mousse.split_dwell": "1.0",
    "mousse.merge_dwell": "8.0",
    "mousse.dwell_decay": "0.9",
    "mousse.cooldown": "5",
    "glr.window": "200",
    "glr.n_burn": "100",
    "glr.target_arl": "1000",
    "glr.threshold": "",                # empty -> solve from target_arl
    "glr.variant": "auto",              # auto | as-printed | half-arg
    "run.horizon": "2000",
    "run.n_init": "200",
    "run.warmup": "0",                  # unscored tracker warm-up steps
    "run.seed": "0",
    "run.mode": "mousse",               # mousse | single-subspace
    "input.scale": "1.0",
}


def _parse(key: str, value: str, kind: type):
    try:
        if kind is bool:
            if value.lower() in ("1", "true", "yes"):
                return True
            if value.lower() in ("0", "false", "no"):
                return False
            raise ValueError(value)
        return kind(value)
    except ValueError:
        raise ConfigError(f"config key {key}={value!r} is not a valid {kind.__name__}") from None


@dataclass(frozen=True)
class RunConfig:
    """Typed view over the flat configuration mapping."""

    mapping: dict

    @classmethod
    def from_mapping(cls, overrides: dict[str, str]) -> "RunConfig":
        unknown = set(overrides) - set(DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        merged = dict(DEFAULTS)
        merged.update(overrides)
        cfg = cls(mapping=merged)
        cfg.validate()
        return cfg

    def _get(self, key: str, kind: type):
        return _parse(key, self.mapping[key], kind)

    # -- typed accessors ------------------------------------------------

    @property
    def seed(self) -> int:
        return self._get("run.seed", int)

    @property
    def horizon(self) -> int:
        return self._get("run.horizon", int)

    @property
    def n_init(self) -> int:
        return self._get("run.n_init", int)

    @property
    def warmup(self) -> int:
        return self._get("run.warmup", int)

    @property
    def mode(self) -> str:
        return self.mapping["run.mode"]

    @property
    def input_scale(self) -> float:
        return self._get("input.scale", float)

    @property
    def window(self) -> int:
        return self._get("glr.window", int)

    @property
    def n_burn(self) -> int:
        return self._get("glr.n_burn", int)

    @property
    def target_arl(self) -> float:
        return self._get("glr.target_arl", float)

    def nu_variant(self) -> NuVariant:
        name = self.mapping["glr.variant"]
        if name == "auto":
            return select_nu_variant()
        try:
            return NuVariant(name)
        except ValueError:
            raise ConfigError(f"glr.variant must be auto, as-printed or half-arg, got {name!r}") from None

    def threshold_b(self) -> float:
        raw = self.mapping["glr.threshold"]
        if raw:
            return _parse("glr.threshold", raw, float)
        return threshold_for_arl(self.target_arl, self.nu_variant())

    def schedule(self):
        name = self.mapping["manifold.schedule"]
        if name == "static":
            return StaticGamma(self._get("manifold.gamma", float))
        if name == "slow":
            return SlowGamma(self._get("manifold.gamma0", float), self._get("manifold.s", int))
        if name == "jump":
            return JumpGamma(self._get("manifold.gamma0", float),
                             self._get("manifold.dgamma", float),
                             self._get("manifold.t_change", int))
        if name == "chirp-ramp":
            return ChirpRate(self._get("manifold.chirp_rate", float), self._get("manifold.s", int))
        raise ConfigError(f"unknown manifold.schedule {name!r}")

    def manifold_spec(self, seed: int | None = None,
                      missing: float | None = None,
                      schedule=None) -> ManifoldSpec:
        return ManifoldSpec(
            kind=self.mapping["manifold.kind"],
            ambient_dim=self._get("manifold.ambient_dim", int),
            schedule=self.schedule() if schedule is None else schedule,
            noise_var=self._get("manifold.noise_var", float),
            missing_frac=self._get("manifold.missing", float) if missing is None else missing,
            seed=self.seed if seed is None else seed,
        )

    def tracker(self) -> TrackerKind:
        name = self.mapping["mousse.tracker"]
        raw_alpha = self.mapping["mousse.tracker_alpha"]
        alpha = _parse("mousse.tracker_alpha", raw_alpha, float) if raw_alpha \
            else self._get("mousse.alpha", float)
        if name == "grouse":
            return Grouse(eta0=self._get("mousse.eta0", float))
        if name == "petrels-gs":
            return PetrelsGS(alpha=alpha)
        if name == "petrels-fo":
            return PetrelsFO(alpha=alpha)
        raise ConfigError(f"unknown mousse.tracker {name!r}")

    def mousse_config(self, mode: str | None = None) -> MousseConfig:
        mode = self.mode if mode is None else mode
        return MousseConfig(
            d=self._get("mousse.d", int),
            eps=self._get("mousse.eps", float),
            alpha=self._get("mousse.alpha", float),
            mu=self._get("mousse.mu", float),
            tracker=self.tracker(),
            max_depth=self._get("mousse.max_depth", int),
            update_policy=self.mapping["mousse.update_policy"],
            structure_updates=(mode == "mousse"),
            split_dwell=self._get("mousse.split_dwell", float),
            merge_dwell=self._get("mousse.merge_dwell", float),
            dwell_decay=self._get("mousse.dwell_decay", float),
            structure_cooldown=self._get("mousse.cooldown", int),
        )

    def validate(self) -> None:
        try:
            self.manifold_spec(seed=0)
            self.mousse_config()
            self.nu_variant()
        except (ValueError, ConfigError) as exc:
            raise ConfigError(str(exc)) from None
        if self.mode not in ("mousse", "single-subspace"):
            raise ConfigError(f"run.mode must be mousse or single-subspace, got {self.mode!r}")
        if self.mapping["manifold.kind"] == "chirp" and not isinstance(self.schedule(), ChirpRate):
            raise ConfigError("chirp manifold needs manifold.schedule=chirp-ramp")
        if self.mapping["manifold.kind"] == "bump" and isinstance(self.schedule(), ChirpRate):
            raise ConfigError("bump manifold cannot use the chirp-ramp schedule")
        if self.horizon < 0 or self.n_init < 4 * (self._get("mousse.d", int) + 1):
            raise ConfigError("run.horizon must be >= 0 and run.n_init >= 4(d+1)")
        if self.window < 1 or self.n_burn < 2:
            raise ConfigError("glr.window must be >= 1 and glr.n_burn >= 2")


def init_tree(batch: np.ndarray, cfg: RunConfig, mode: str | None = None) -> MousseTree:
    mode = cfg.mode if mode is None else mode
    mousse_cfg = cfg.mousse_config(mode)
    if mode == "single-subspace":
        return init_single_subspace(batch, mousse_cfg)
    return init_from_batch(batch, mousse_cfg)


# ----------------------------------------------------------------------
# single-stream tracking


@dataclass
class TrackResult:
    records: list[StreamRecord]
    summary: dict


def track_rows(rows: Iterable[tuple[np.ndarray, np.ndarray]], ambient_dim: int,
               cfg: RunConfig, mode: str | None = None,
               threshold: float | None = None) -> TrackResult:
    """Initialize from the leading complete rows, then track, score, and detect.

    The first ``run.n_init`` rows must be complete and form the training
    batch; every following row is one scored step t = 1, 2, ...  The GLR
    baseline is calibrated from the first ``glr.n_burn`` scored residuals and
    detection starts after them (reset-and-continue semantics).
    """
    it = iter(rows)
    batch = []
    for values, omega in islice(it, cfg.n_init):
        if omega.size != ambient_dim:
            raise DataError("initialization rows must be complete")
        batch.append(values)
    if not batch:
        return TrackResult(records=[], summary={"steps": 0, "alarms": [],
                                                "final_leaves": 0})
    if len(batch) < cfg.n_init:
        raise DataError(f"stream ended during initialization "
                        f"({len(batch)} of {cfg.n_init} rows)")
    tree = init_tree(np.asarray(batch), cfg, mode)
    for values, omega in islice(it, cfg.warmup):
        tree.step(Observation(t=0, values=values, omega=omega))
    b = cfg.threshold_b() if threshold is None else threshold
    detector: GlrDetector | None = None
    burn: list[float] = []
    records: list[StreamRecord] = []
    residuals: list[float] = []
    t = 0
    for values, omega in it:
        t += 1
        res = tree.step(Observation(t=t, values=values, omega=omega))
        residuals.append(res.e)
        stat, alarm = 0.0, False
        if detector is None:
            burn.append(res.e)
            if len(burn) == cfg.n_burn:
                try:
                    mu0, sigma0 = calibrate(burn, cfg.n_burn)
                    detector = GlrDetector(mu0, sigma0, cfg.window, b)
                except DegenerateBaseline:
                    detector = None
                    burn.pop()  # keep collecting until the baseline has spread
        else:
            stat, alarm = detector.update(res.e)
        records.append(StreamRecord(t=t, e=res.e, eps_avg=res.eps_avg,
                                    n_leaves=res.n_leaves, glr_stat=stat,
                                    alarm=alarm, skipped=res.skipped))
    post = [r for r in records if r.t > cfg.n_burn]
    summary = {
        "steps": t,
        "mode": cfg.mode if mode is None else mode,
        "threshold": b,
        "final_leaves": tree.n_leaves,
        "alarms": [r.t for r in records if r.alarm],
        "skipped": sum(r.skipped for r in records),
        "mean_e_post_burn": float(np.mean([r.e for r in post])) if post else math.nan,
        "mean_eps_post_burn": float(np.mean([r.eps_avg for r in post])) if post else math.nan,
        "qq_corr": qq_correlation([r.e for r in post]) if len(post) >= 3 else math.nan,
    }
    return TrackResult(records=records, summary=summary)


# ----------------------------------------------------------------------
# Monte Carlo plumbing


def residual_stream(cfg: RunConfig, spec: ManifoldSpec, horizon: int,
                    mode: str) -> Iterator[float]:
    """Tracking residuals e_1..e_horizon for one fresh tree on one stream.

    The tree is built from the complete training prelude and then warmed on
    ``run.warmup`` unscored steps so the scored residuals start stationary.
    """
    gen = sample_stream(spec, horizon, n_complete=cfg.n_init, n_warmup=cfg.warmup)
    batch = np.asarray([obs.values for obs, _ in islice(gen, cfg.n_init)])
    tree = init_tree(batch, cfg, mode)
    for obs, _ in islice(gen, cfg.warmup):
        tree.step(obs)
    for obs, _ in gen:
        yield tree.step(obs).e


def make_stream_factory(cfg: RunConfig, horizon: int, mode: str,
                        schedule=None, missing: float | None = None
                        ) -> Callable[[int], Iterator[float]]:
    def factory(trial_seed: int) -> Iterator[float]:
        spec = cfg.manifold_spec(seed=trial_seed, missing=missing, schedule=schedule)
        return residual_stream(cfg, spec, horizon, mode)
    return factory


def no_change_schedule(cfg: RunConfig):
    """The drift schedule with any injected jump removed."""
    sched = cfg.schedule()
    if isinstance(sched, JumpGamma):
        return SlowGamma(gamma0=sched.gamma0, s=cfg._get("manifold.s", int))
    return sched


def mc_calibrate_threshold(factory: Callable[[int], Iterator[float]],
                           target_arl: float, n_cal: int, horizon: int,
                           seed: int, window: int, n_burn: int,
                           n_workers: int | None = None) -> dict:
    """Monte Carlo threshold: the statistic-maximum quantile hitting the target ARL.

    Under the exponential stopping-time approximation, a threshold b alarms
    within m scored steps with probability 1 - exp(-m/ARL); the b whose
    empirical alarm fraction equals that probability is the (1 - p)-quantile
    of the per-trial maxima of the GLR statistic.
    """
    from .changepoint import _run_trials

    def worker(i: int) -> float:
        stream = iter(factory(seed ^ i))
        head = list(islice(stream, n_burn))
        mu0, sigma0 = calibrate(head, n_burn)
        det = GlrDetector(mu0, sigma0, window, threshold=math.inf,
                          reset_policy="stop")
        best = 0.0
        for e in stream:
            stat, _ = det.update(float(e))
            if stat > best:
                best = stat
        return best

    maxes = np.array(_run_trials(worker, n_cal, n_workers))
    m_eff = horizon - n_burn
    p_target = 1.0 - math.exp(-m_eff / target_arl)
    if not 0 < p_target < 1:
        raise ValueError("target ARL incompatible with the calibration horizon")
    b = float(np.quantile(maxes, 1.0 - p_target))
    return {"b": b, "n_cal": n_cal, "horizon": horizon,
            "p_target": p_target, "max_stat_range": [float(maxes.min()), float(maxes.max())]}


def run_mc_arl(cfg: RunConfig, n_trials: int, n_cal: int = 200,
               n_workers: int | None = None) -> dict:
    """Table row: theory threshold plus per-method Monte Carlo thresholds."""
    target = cfg.target_arl
    variant = cfg.nu_variant()
    horizon = cfg.horizon
    sched = no_change_schedule(cfg)
    row: dict = {
        "table": "arl",
        "target_arl": target,
        "missing_frac": cfg._get("manifold.missing", float),
        "b_theory": threshold_for_arl(target, variant),
        "variant": variant.value,
        "n_trials": n_trials,
        "wide_ci": n_trials < 100,
    }
    for label, mode in (("mousse", "mousse"), ("single_subspace", "single-subspace")):
        factory = make_stream_factory(cfg, horizon, mode, schedule=sched)
        cal = mc_calibrate_threshold(factory, target, n_cal, horizon,
                                     cfg.seed, cfg.window, cfg.n_burn, n_workers)
        entry = {"b_mc": cal["b"], "calibration": cal}
        if n_trials > 0:
            check = mc_arl(factory, cal["b"], horizon, n_trials,
                           seed=cfg.seed + 7919, window=cfg.window,
                           n_burn=cfg.n_burn, n_workers=n_workers)
            entry["arl_mc"] = check.arl
            entry["ci95"] = list(check.ci95)
        row[label] = entry
    return row


def run_mc_delay(cfg: RunConfig, n_trials: int, n_cal: int = 200,
                 n_workers: int | None = None,
                 cal_horizon: int | None = None) -> dict:
    """Table row: detection delay per method at the method's own MC threshold.

    Thresholds are calibrated on the jump-free version of the schedule over
    the same horizon as the delay trials, so the false-alarm behavior being
    controlled is that of the regime the detector actually runs in.
    """
    sched = cfg.schedule()
    if not isinstance(sched, JumpGamma):
        raise ConfigError("delay table needs manifold.schedule=jump")
    # The schedule makes t_change the first post-change sample, so the last
    # pre-change index is one earlier.
    kappa = sched.t_change - 1
    horizon = cfg.horizon
    if horizon <= sched.t_change:
        raise ConfigError("run.horizon must exceed manifold.t_change")
    cal_horizon = cal_horizon or horizon
    target = cfg.target_arl
    row: dict = {
        "table": "delay",
        "target_arl": target,
        "missing_frac": cfg._get("manifold.missing", float),
        "dgamma": sched.dgamma,
        "t_change": kappa,
        "n_trials": n_trials,
        "wide_ci": n_trials < 100,
    }
    quiet = no_change_schedule(cfg)
    for label, mode in (("mousse", "mousse"), ("single_subspace", "single-subspace")):
        cal_factory = make_stream_factory(cfg, cal_horizon, mode, schedule=quiet)
        cal = mc_calibrate_threshold(cal_factory, target, n_cal, cal_horizon,
                                     cfg.seed, cfg.window, cfg.n_burn, n_workers)
        jump_factory = make_stream_factory(cfg, horizon, mode, schedule=sched)
        res = mc_delay(jump_factory, cal["b"], kappa, horizon, n_trials,
                       seed=cfg.seed + 7919, window=cfg.window,
                       n_burn=cfg.n_burn, n_workers=n_workers)
        row[label] = {"b_mc": cal["b"], **res.to_dict()}
    return row
