import json

import numpy as np
import pytest

from wermer_forge.chain import (ChainState, CorrectedMap, PolynomialCorrection, build_chain,
                                build_correction, conjugation_to, dense_boundary_points,
                                holomorphic_2jet, resume_chain, telescoping_deviation)
from wermer_forge.composite import CompositeMap, stage_from_json
from wermer_forge.core import EuclideanBall, ShiftedBallB, sample_interior, sqnorm
from wermer_forge.errors import ConditioningError, CorrectionBudgetError, ParameterError
from wermer_forge.maps import Identity, Stage


class Quadratic(Stage):
    """``z + Q(z)`` with a fixed quadratic Q; a polynomial test map."""

    name = "quadratic"

    def forward(self, z):
        z = np.asarray(z, dtype=complex)
        return z + 0.1 * np.stack([z[:, 1] ** 2, z[:, 0] * z[:, 2], z[:, 0] ** 2 - 0.5j * z[:, 2]],
                                  axis=1)


def test_dense_points():
    a = dense_boundary_points(1, seed=0)
    assert abs(np.linalg.norm(a[0]) - 1) < 1e-15
    b = dense_boundary_points(100, seed=0)
    d = np.sqrt(sqnorm(b[:, None] - b[None]))
    d[np.diag_indices(100)] = np.inf
    assert d.min() > 0
    assert not np.allclose(b, dense_boundary_points(100, seed=1))
    with pytest.raises(ParameterError):
        dense_boundary_points(0)


def test_conjugation_at_north_pole():
    A = conjugation_to((0, 0, 1))
    assert np.allclose(A.forward([[0, 0, -1]]), [[0, 0, 0]], atol=1e-15)
    assert np.allclose(A.forward([[0, 0, 0]]), [[0, 0, 1]], atol=1e-15)


def test_conjugation_maps_B_into_unit_ball():
    ball = EuclideanBall((0j, 0j, 0j), 1.0)
    z = sample_interior(ShiftedBallB(), 1000, seed=0)
    for a in dense_boundary_points(100, seed=5):
        A = conjugation_to(a)
        assert np.all(ball.rho(A.forward(z)) < 1e-12)
        assert np.allclose(A.forward(np.zeros((1, 3))), a)
        back, _ = A.inverse(A.forward(z))
        assert np.max(np.abs(back - z)) < 1e-14


def test_conjugation_is_isometry():
    A = conjugation_to(dense_boundary_points(3, seed=2)[2])
    rng = np.random.default_rng(0)
    z = rng.standard_normal((50, 3)) + 1j * rng.standard_normal((50, 3))
    w = rng.standard_normal((50, 3)) + 1j * rng.standard_normal((50, 3))
    d0 = np.sqrt(sqnorm(z - w))
    d1 = np.sqrt(sqnorm(A.forward(z) - A.forward(w)))
    assert np.max(np.abs(d1 - d0) / d0) < 1e-12


def test_conjugation_rejects_degenerate_alpha():
    with pytest.raises(ParameterError):
        conjugation_to((0, 0, 0))


def test_two_jet_of_quadratic_is_exact():
    x = np.array([0.3, -0.2j, 0.1])
    J = holomorphic_2jet(lambda z: Quadratic().forward(z) - z, x)
    assert np.allclose(J.c1[0], [0, 0.2 * x[1], 0], atol=1e-13)
    assert np.allclose(J.c2[2], [[0.2, 0, 0], [0, 0, 0], [0, 0, 0]], atol=1e-12)


def test_identity_base_gives_zero_correction():
    pts = dense_boundary_points(2, seed=0)
    corr = build_correction(CompositeMap((Identity(),)), [pts[0]], (), [pts[1]])
    assert corr.correction.is_zero()
    z = sample_interior(EuclideanBall((0j, 0j, 0j), 1.0), 10, seed=0)
    assert np.array_equal(corr.forward(z), z)


def _fd_jet(g, x, h=2e-4):
    """Value, first and second derivatives of g at x by central differences."""
    e = np.eye(3, dtype=complex)
    v = g(x[None])[0]
    d1 = [(g((x + h * e[i])[None]) - g((x - h * e[i])[None]))[0] / (2 * h) for i in range(3)]
    d2 = []
    for i in range(3):
        for j in range(3):
            pp = g((x + h * e[i] + h * e[j])[None])[0]
            pm = g((x + h * e[i] - h * e[j])[None])[0]
            mp_ = g((x - h * e[i] + h * e[j])[None])[0]
            mm = g((x - h * e[i] - h * e[j])[None])[0]
            d2.append((pp - pm - mp_ + mm) / (4 * h * h))
    return v, np.array(d1), np.array(d2)


def test_order_three_point_removes_two_jet():
    pts = dense_boundary_points(3, seed=0)
    base = Quadratic()
    corr = build_correction(base, [pts[0]], (), [pts[1], pts[2]])
    g = lambda z: corr.forward(z) - z
    v, d1, d2 = _fd_jet(g, pts[0])
    _, b1, b2 = _fd_jet(lambda z: base.forward(z) - z, pts[0])
    assert np.max(np.abs(v)) < 1e-12
    assert np.max(np.abs(d1)) < 1e-6 * max(1, np.max(np.abs(b1)))
    assert np.max(np.abs(d2)) < 1e-6 * max(1, np.max(np.abs(b2)))
    # the anchors are left untouched to third order
    for a in pts[1:]:
        assert np.allclose(corr.term(a[None]), 0, atol=1e-14)


def test_value_point_hits_target():
    pts = dense_boundary_points(2, seed=1)
    base = Quadratic()
    target = pts[0] + 0.01
    corr = build_correction(base, (), [(pts[0], target)], [pts[1]])
    assert np.allclose(corr.forward(pts[0][None])[0], target, atol=1e-15)
    same = build_correction(base, (), [(pts[0], base.forward(pts[0][None])[0])])
    assert np.allclose(same.term(pts[0][None]), 0, atol=1e-15)


def test_close_points_rejected():
    a = dense_boundary_points(1)[0]
    with pytest.raises(ConditioningError):
        build_correction(Quadratic(), [a], (), [a + 1e-5], sigma_min=1e-3)


def test_budget_enforced():
    pts = dense_boundary_points(2, seed=0)
    grid = sample_interior(EuclideanBall((0j, 0j, 0j), 1.0), 500, seed=0)
    with pytest.raises(CorrectionBudgetError) as exc:
        build_correction(Quadratic(), [pts[0]], (), [pts[1]], budget=1e-6, budget_points=grid)
    assert exc.value.sup_norm > 1e-6


def test_correction_json_round_trip():
    pts = dense_boundary_points(2, seed=0)
    from wermer_forge.composite import WermerParams, build_F
    corr = build_correction(build_F(WermerParams(20, 40, 0.1, 0.01)), [pts[0]], (), [pts[1]])
    obj = json.loads(json.dumps(corr.to_json()))
    again = stage_from_json(obj)
    assert isinstance(again, CorrectedMap)
    z = sample_interior(ShiftedBallB(), 20, seed=0)
    assert np.array_equal(again.forward(z), corr.forward(z))
    assert PolynomialCorrection.from_json(obj["correction"]).orders == (3, 3)


@pytest.fixture(scope="module")
def chain3():
    return build_chain(3, 0.5, seed=0)


def test_single_stage_certificate():
    state = build_chain(1, 0.5, seed=0)
    assert state.n == 1
    assert state.stages[0].certificate["valid"]
    assert state.valid


def test_chain_ledger_complete(chain3):
    assert len(chain3.ledger) == 15
    assert all(v["pass"] for v in chain3.ledger.values())


def test_chain_schedule_invariants(chain3):
    eps = chain3.eps_schedule
    assert all(e <= 0.5 * 0.5 ** (j + 2) for j, e in enumerate(eps))
    d = chain3.delta_schedule
    assert all(d[k + 1] < d[k] for k in range(len(d) - 1))


def test_chain_fixes_earlier_points(chain3):
    a0 = chain3.alphas[0][None]
    assert np.linalg.norm(chain3.phi(a0, upto=2) - chain3.phi(a0, upto=1)) < 1e-10


def test_chain_total_deviation(chain3):
    assert telescoping_deviation(chain3) < sum(chain3.eps_schedule) < 0.25


def test_witness_locality(chain3):
    for st in chain3.stages:
        j = st.index
        c = chain3.disk_map(j)(np.zeros(1))[0]
        assert np.linalg.norm(c - st.alpha) < 0.5**j


def test_witness_disk_escapes_image(chain3):
    # the centre preimages lie outside the closed unit ball
    for st in chain3.stages:
        assert np.all(np.sqrt(sqnorm(st.center_preimages)) > 1)


def test_chain_injectivity(chain3):
    assert chain3.extras["injectivity"]["pass"]


def test_resume_matches_fresh_build(chain3):
    two = build_chain(2, 0.5, seed=0)
    resumed = resume_chain(json.loads(json.dumps(two.to_json())), 1)
    a = json.dumps(resumed.to_json(), sort_keys=True)
    b = json.dumps(chain3.to_json(), sort_keys=True)
    assert a == b


def test_state_round_trip(chain3):
    again = ChainState.from_json(json.loads(json.dumps(chain3.to_json())))
    z = sample_interior(EuclideanBall((0j, 0j, 0j), 1.0), 200, seed=9)
    assert np.array_equal(again.phi(z), chain3.phi(z))


def test_chain_rejects_bad_arguments():
    with pytest.raises(ParameterError):
        build_chain(0, 0.5)
    with pytest.raises(ParameterError):
        build_chain(1, -1.0)
