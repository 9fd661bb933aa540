"""SE(3) geometric admittance control, peg-in-hole simulation and equivariance checks.

Poses are 4x4 homogeneous matrices; twists and wrenches are (linear, angular)
6-vectors. Structured results (suite reports, trial reports) are plain dicts.
"""

import json

from ._core import (
    Error,
    FrameMismatch,
    InvalidArgument,
    SchemaError,
    SingularityError,
    ad_wrench,
    ad_wrench_inverse,
    adjoint,
    compute_gcev,
    elastic_wrench,
    exp_se3,
    expand_chunk,
    from_euler_xyz,
    from_rot6d,
    ft_filter,
    ft_rebias,
    gac_step,
    hat3,
    hat6,
    log_se3,
    mock_candidates,
    profile_stiffness,
    refine_pick,
    refine_place,
    rollout_equivariance,
    rotation_mean,
    teleop_update,
    temporal_ensemble,
    to_euler_xyz,
    to_rot6d,
    vee3,
    vee6,
)
from . import _core

__version__ = "0.1.0"


def default_config():
    """Benchmark configuration defaults as a dict."""
    return json.loads(_core.default_config_json())


def run_suite(samples=1000, tolerance=1e-9, seed=7, identity=False, rollouts=0):
    return json.loads(_core.run_suite_json(samples, tolerance, seed, identity, rollouts))


def run_benchmark(config=None, **overrides):
    """Runs a benchmark. `config` and keyword overrides are partial config dicts;
    missing keys keep their defaults."""
    cfg = dict(config or {})
    cfg.update(overrides)
    return json.loads(_core.run_benchmark_json(json.dumps(cfg)))


def replay_trial(config, report):
    return json.loads(_core.replay_trial_json(json.dumps(config), json.dumps(report)))


def replay_demo(path, tolerance=1e-6):
    return json.loads(_core.replay_demo_json(str(path), tolerance))
