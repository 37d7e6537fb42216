"""Streaming multiscale subset tracking with GLR change-point detection."""

from .changepoint import (
    GlrDetector,
    NuVariant,
    arl_approx,
    calibrate,
    glr_update,
    mc_arl,
    mc_delay,
    nu,
    qq_correlation,
    qq_points,
    select_nu_variant,
    threshold_for_arl,
)
from .datagen import (
    ChirpRate,
    JumpGamma,
    ManifoldSpec,
    SlowGamma,
    StaticGamma,
    bump_point,
    chirp_point,
    coherence,
    low_coherence_basis,
    sample_stream,
    theorem1_bound,
)
from .errors import (
    ConfigError,
    DataError,
    DegenerateBaseline,
    DepthLimit,
    InsufficientData,
    MousseError,
    NoBracket,
    NotCalibrated,
    RankDeficient,
    SiblingNotLeaf,
)
from .pipeline import RunConfig, run_mc_arl, run_mc_delay, track_rows
from .streamio import StreamRecord, read_stream, write_records, write_stream
from .subset import (
    Observation,
    ProjectionResult,
    SubsetNode,
    project_partial,
    residual,
    residual_map,
    rho_distance,
    scaled_distance,
    update_scalar_params,
)
from .tracking import (
    Grouse,
    PetrelsFO,
    PetrelsGS,
    PetrelsState,
    grouse_step,
    orthonormalize_fo,
    orthonormalize_gs,
    petrels_step,
)
from .tree import (
    MousseConfig,
    MousseTree,
    init_from_batch,
    init_single_subspace,
)

__version__ = "0.1.0"
