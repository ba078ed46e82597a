import mpmath as mp
import numpy as np
import pytest

from wermer_forge.certify import (CertifyConfig, certify_zero_free, check_inclusion,
                                  find_witness_circle, hull_obstruction_test, max_modulus_ratio,
                                  min_modulus_scan, nonrunge_certificate, winding_details,
                                  winding_number)
from wermer_forge.composite import WermerParams, base_map, build_F, build_G, identity_map
from wermer_forge.core import EuclideanBall, Localized, ShiftedBallB, WermerDp, WitnessCircle
from wermer_forge.errors import ContourError, NoWitnessError
from wermer_forge.maps import f_N

RECT = (-2.0, -0.01, -2.0, 2.0)
TUNED = WermerParams(160, 320, 0.1, 0.03125)


def f_zeros_in_rectangle(N, rect, dps=30):
    """Zeros of ``1 + e^{2Nz}(2z - 1)`` (the zeros of f_N) branch by branch.

    Every zero solves ``2Nz + Log(2z - 1) = i pi (2k + 1)`` for one integer k;
    each branch equation is a contraction, solved by fixed-point iteration.
    """
    mp.mp.dps = dps
    x0, x1, y0, y1 = rect
    kmax = int(N * max(abs(y0), abs(y1)) / np.pi) + 3
    out = []
    for k in range(-kmax, kmax + 1):
        t = mp.mpc(0, mp.pi * (2 * k + 1))
        z = t / (2 * N)
        for _ in range(100):
            z = (t - mp.log(2 * z - 1)) / (2 * N)
        if abs(1 + mp.exp(2 * N * z) * (2 * z - 1)) < 1e-20 and x0 <= z.real <= x1 \
                and y0 <= z.imag <= y1:
            out.append(complex(z))
    return out


def test_winding_identity_and_exponential():
    assert winding_number(lambda z: z, (-1, 1, -1, 1)) == 1
    assert winding_number(np.exp, (-1, 1, -1, 1)) == 0


@pytest.mark.parametrize("N", [50, 100, 200])
def test_winding_matches_independent_zero_count(N):
    expected = len(f_zeros_in_rectangle(N, RECT))
    res = winding_details(lambda z: f_N(z, N), RECT, 1024)
    assert res.winding == expected
    assert abs(res.integral - res.previous) < 0.25


def test_zero_count_for_N50_is_not_zero():
    # the zeros sit on Re z = -log|2z - 1| / (2N), inside the rectangle for N = 50
    zeros = f_zeros_in_rectangle(50, RECT)
    assert len(zeros) == 24
    assert all(abs(z.real + np.log(abs(2 * z - 1)) / 100) < 1e-12 for z in zeros)


@pytest.mark.parametrize("N", [100, 200])
def test_zero_free_certificate(N):
    cert = certify_zero_free(N, RECT)
    assert cert.valid and cert.winding == 0
    assert cert.to_json()["valid"]
    assert min_modulus_scan(lambda z: f_N(z, N), RECT) > 0


def test_zero_free_rejects_boundary_rectangle():
    with pytest.raises(ContourError):
        certify_zero_free(100, (-2.0, 0.0, -2.0, 2.0))


def test_inclusion_identity():
    ball = ShiftedBallB()
    rep = check_inclusion(ball, identity_map(), ball, 2000, seed=0)
    assert rep.violations == 0 and rep.valid


def test_inclusion_small_delta2():
    inner = Localized(WermerDp(0.1), (0j, 0j, 0j), 5e-4)
    rep = check_inclusion(inner, build_G(WermerParams(20, 20, 0.1, 1e-3)), ShiftedBallB(), 4000)
    assert rep.violations == 0


def test_inclusion_large_delta2_fails():
    inner = Localized(WermerDp(0.1), (0j, 0j, 0j), 0.05)
    rep = check_inclusion(inner, build_G(WermerParams(20, 20, 1e-3, 0.5)), ShiftedBallB(), 4000)
    assert rep.violations > 0 and not rep.valid


def test_base_witness():
    wc = find_witness_circle(base_map(), WermerDp(0.1), search_grid=None)
    assert wc.alpha < wc.r
    cert = nonrunge_certificate(base_map(), WermerDp(0.1))
    assert cert.valid
    assert cert.boundary_margin >= 9e-4 - 1e-6


def test_identity_has_no_witness():
    with pytest.raises(NoWitnessError):
        nonrunge_certificate(identity_map(), ShiftedBallB())
    with pytest.raises(NoWitnessError):
        find_witness_circle(identity_map(), EuclideanBall((0j, 0j, -1 + 0j), 1.0))


def test_ratio_of_constant_and_z3():
    wc = WitnessCircle(0.1, 1e-3)
    assert max_modulus_ratio(lambda z: np.ones(len(z)), wc) == 1.0
    assert max_modulus_ratio(lambda z: z[:, 2], wc) == pytest.approx(1.0, abs=1e-15)


def test_random_polynomials_obey_maximum_principle():
    assert hull_obstruction_test(WitnessCircle(0.1, 1e-3), npolys=200, max_degree=5,
                                 seed=42) <= 1 + 1e-10


def test_tuned_F_certificate():
    cert = nonrunge_certificate(build_F(TUNED), ShiftedBallB())
    assert cert.valid
    assert cert.sampled_distance > 0
    assert cert.to_json()["valid"]


def test_certificate_config_round_trip():
    cfg = CertifyConfig(npolys=10)
    assert cfg.to_json()["npolys"] == 10
