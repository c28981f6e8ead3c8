"""Random walks in i.i.d. random environments on Z with bounded jumps.

Simulation, regeneration and cascade constructions, annealed estimators of
the speed and of the hitting-time / occupation expectations, and exact or
bracketed reference values.
"""

from rwre.cascade import (
    Cascade,
    NoCoalescence,
    build_cascade,
    concatenated_walk,
    find_coalescences,
    sample_Nbar0,
)
from rwre.env import (
    Atomic,
    ConfigError,
    DirichletOffsets,
    EnvironmentLaw,
    EnvironmentWindow,
    JumpSupport,
    NearestNeighbor,
    Periodic,
    SiteLaw,
    law_from_config,
    realize_window,
    validate_conditions,
)
from rwre.estimators import (
    BallisticityVerdict,
    Budget,
    EstimateWithCI,
    NotTransientRight,
    Thresholds,
    Verdict,
    ballisticity_verdict,
    estimate_EH1,
    estimate_EN0,
    estimate_velocity_occupation,
    estimate_velocity_regen,
    estimate_velocity_slope,
)
from rwre.oracle import (
    expected_hit_right_linear,
    expected_occupation_linear,
    homogeneous_velocity,
    nn_solomon,
)
from rwre.regen import detect_regenerations, increments
from rwre.walk import (
    Walk,
    WalkPath,
    occupation_before_level,
    run_until_at_or_right_of,
    run_until_hit_exact,
    simulate_path,
)

__version__ = "0.1.0"
