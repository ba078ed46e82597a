import json
import math
from dataclasses import replace

import numpy as np
import pytest

from wermer_forge.composite import WermerParams, build_F, deviation_profile
from wermer_forge.errors import ParameterError
from wermer_forge.tuner import (ACCEPTED, FAILED, TuningTargets, core_points, inclusion_radius,
                                measure_f_rate, measure_h_localisation, tune, verify)


@pytest.fixture(scope="module")
def default_run():
    t = TuningTargets()
    return t, tune(t)


def test_default_targets_accept(default_run):
    t, rep = default_run
    assert rep.status == ACCEPTED
    p = rep.params
    assert max(p.N1, p.N2) <= 2**14
    assert min(p.delta1, p.delta2) >= 1e-8
    assert rep.certificates["inclusion"]["violations"] == 0
    assert rep.certificates["deviation"]["core_sup"] < t.eps_id
    assert rep.certificates["zero_free"]["valid"]


def test_report_is_json_and_deterministic(default_run):
    t, rep = default_run
    a = json.dumps(rep.to_json(), sort_keys=True)
    b = json.dumps(tune(t).to_json(), sort_keys=True)
    assert a == b


def test_deviation_independently_recomputed(default_run):
    t, rep = default_run
    dev, _ = deviation_profile(build_F(rep.params), core_points(t))
    assert dev == rep.certificates["deviation"]["core_sup"]


def test_bad_p_rejected():
    with pytest.raises(ParameterError):
        TuningTargets(p=0.3)


def test_unknown_config_field_rejected():
    with pytest.raises(ParameterError):
        TuningTargets.from_json({"eps": 0.5})


def test_axis_slice_with_trivial_N1_accepts_with_zero_deviation():
    rep = tune(TuningTargets(axis_slice=True, forced={"N1": 1}))
    assert rep.accepted
    assert rep.params.N1 == 1
    assert rep.certificates["deviation"]["core_sup"] == 0.0


def test_verify_is_idempotent(default_run):
    t, rep = default_run
    assert verify(rep.params, t).status == ACCEPTED


def test_verify_detects_large_delta2(default_run):
    t, rep = default_run
    bad = verify(replace(rep.params, delta2=2 * rep.params.delta2), t)
    assert bad.status == FAILED and bad.failed_stage == "delta2"


def test_verify_detects_small_N2(default_run):
    t, rep = default_run
    bad = verify(replace(rep.params, N2=1), t)
    assert bad.status == FAILED and bad.failed_stage == "N2"


def test_budget_exhaustion_names_stage():
    rep = tune(TuningTargets(eps_id=1e-3, n_max=20))
    assert rep.status == FAILED and rep.failed_stage == "N1"


@pytest.mark.parametrize("N", [20, 50, 100, 200])
def test_convergence_rates(N):
    z3 = -0.1 - 1.9 * np.linspace(0, 1, 60)[:, None] + 2j * np.linspace(-1, 1, 61)[None, :]
    z3 = z3.ravel()
    bound = 5 * math.exp(-0.2 * N)
    assert measure_f_rate(N, z3) <= bound
    assert measure_h_localisation(N, 0.1, z3) <= bound


def test_inclusion_radius_vanishes_past_threshold():
    p = WermerParams(10, 10, 0.1, 0.05)
    assert inclusion_radius(p) == 0.0
    assert inclusion_radius(replace(p, delta2=0.01)) > 0


def test_ball_mode_accepts():
    rep = tune(TuningTargets(eps_id=0.125, region="ball", n_max=2**30, inclusion_samples=2000,
                             nsamples=20_000))
    assert rep.accepted
    assert rep.certificates["deviation"]["core_sup"] < 0.125
