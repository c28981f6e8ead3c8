"""Cross-estimator properties on the shipped configs (slow)."""

import pytest

from rwre.config import load_config, shipped_configs
from rwre.estimators import Verdict, ballisticity_verdict
from rwre.oracle import nn_solomon, Regime
from rwre.env import NearestNeighbor

OPPOSITE = {Verdict.BALLISTIC: Verdict.ZERO_SPEED, Verdict.ZERO_SPEED: Verdict.BALLISTIC}


@pytest.mark.slow
@pytest.mark.parametrize("name", sorted(shipped_configs()))
def test_verdict_stable_under_doubled_budget(name):
    cfg = load_config(shipped_configs()[name])
    base = ballisticity_verdict(cfg.law, cfg.budget, cfg.seed, thresholds=cfg.thresholds)
    doubled = ballisticity_verdict(cfg.law, cfg.budget.scaled(2), cfg.seed, thresholds=cfg.thresholds)
    assert doubled.verdict is not OPPOSITE.get(base.verdict)
    if isinstance(cfg.law, NearestNeighbor):
        expected = {
            Regime.TRANSIENT_RIGHT_BALLISTIC: Verdict.BALLISTIC,
            Regime.TRANSIENT_RIGHT_ZERO_SPEED: Verdict.ZERO_SPEED,
        }[nn_solomon(cfg.law).regime]
        assert base.verdict is expected and doubled.verdict is expected
    else:
        assert base.verdict is Verdict.BALLISTIC
