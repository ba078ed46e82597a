import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wermer_forge.core import HalfSpaceH, ScaledBallBPrime, ShiftedBallB, WermerDp, sample_interior
from wermer_forge.errors import (DivisionGuardError, EvaluationError, InversionError,
                                 ParameterError)
from wermer_forge.maps import (Affine, FiberF2, FiberF3, Identity, Inverted, ScaleF1, WermerPhi,
                               collision_pairs, f_N, f_N_closed, f_N_prime, f_N_series, h,
                               h_minus_one, h_prime, phi, phi_preimages)

mp.mp.dps = 50


def f_oracle(z, N):
    z = mp.mpc(z)
    return 1 / (2 * z) + mp.exp(2 * N * z) * (1 - 1 / (2 * z))


def h_oracle(z, N, d):
    E = mp.exp(2 * N * mp.mpc(z))
    return (E + (2 * d - 1)) / (1 + (2 * d - 1) * E) / (2 * d) + 1 / (2 * d)


# frozen oracle values (50-digit mpmath, rounded to double)
FROZEN_F = {(-0.3 + 0.2j, 5): complex(f_oracle(-0.3 + 0.2j, 5)),
            (-0.05 - 0.01j, 20): complex(f_oracle(-0.05 - 0.01j, 20))}


def test_f_at_origin():
    for N in (1, 2, 50, 1000):
        assert f_N(0.0, N) == 1 - N


def test_f_far_left_is_minus_half():
    assert abs(f_N(-1.0, 50) + 0.5) < 1e-40


def test_f_times_2z_tends_to_one():
    z = -0.25
    assert abs(f_N(z, 100) * 2 * z - 1) < 1e-20


@pytest.mark.parametrize("key", list(FROZEN_F))
def test_f_against_high_precision(key):
    z, N = key
    assert f_N(z, N) == pytest.approx(FROZEN_F[key], rel=1e-13)


@settings(max_examples=300, deadline=None)
@given(st.floats(-3, 0.2), st.floats(-3, 3), st.integers(1, 300))
def test_f_matches_high_precision(x, y, N):
    z = complex(x, y)
    if abs(z) < 1e-12:
        z = 0j
    ref = complex(f_oracle(z, N)) if z != 0 else complex(1 - N)
    assert abs(f_N(z, N) - ref) <= 1e-11 * max(1.0, abs(ref), N)


def test_series_and_closed_forms_agree_near_cutover():
    z = 1e-3 * np.exp(2j * np.pi * np.linspace(0, 1, 50))
    for N in (10, 100):
        assert np.max(np.abs(f_N_series(z, N) - f_N_closed(z, N))) < 1e-9 * N


def test_f_derivative_by_difference():
    z = np.array([-0.3 + 0.1j, -1e-4, -0.01j - 0.02])
    step = 1e-6
    for N in (5, 60):
        fd = (f_N(z + step, N) - f_N(z - step, N)) / (2 * step)
        assert np.allclose(f_N_prime(z, N), fd, rtol=1e-6, atol=1e-6 * N * N)


def test_f_rejects_bad_N():
    with pytest.raises(ParameterError):
        f_N(-1.0, 0)


def test_h_at_origin():
    for N in (1, 10, 1000):
        assert h(0.0, N, 0.2) == pytest.approx(5.0, rel=1e-15)


def test_h_far_left_is_one():
    assert abs(h(-50.0, 1, 0.1) - 1) < 1e-40
    assert abs(h(-0.5, 200, 0.1) - 1) < 1e-80


@settings(max_examples=300, deadline=None)
@given(st.floats(-3, -1e-6), st.floats(-3, 3), st.integers(1, 200),
       st.floats(1e-3, 0.5))
def test_h_matches_high_precision(x, y, N, d):
    z = complex(x, y)
    ref = complex(h_oracle(z, N, d))
    assert abs(h(z, N, d) - ref) <= 1e-11 * max(1.0, abs(ref))
    assert abs(h_minus_one(z, N, d) - (ref - 1)) <= 1e-11 * max(1.0, abs(ref))


@settings(max_examples=200, deadline=None)
@given(st.floats(-3, -1e-6), st.floats(-3, 3), st.integers(1, 200), st.floats(1e-3, 0.5))
def test_h_maps_left_half_plane_into_disk(x, y, N, d):
    v = h(complex(x, y), N, d)
    assert abs(v - 1 / (2 * d)) <= 1 / (2 * d) * (1 + 1e-12)


def test_h_derivative_by_difference():
    z = np.array([-0.05 + 0.02j, -0.3j - 0.01])
    step = 1e-7
    fd = (h(z + step, 20, 0.1) - h(z - step, 20, 0.1)) / (2 * step)
    assert np.allclose(h_prime(z, 20, 0.1), fd, rtol=1e-5)


def test_h_pole_raises():
    # pole where (1 - 2 delta) E = 1 with E = exp(2 N z)
    N, d = 3, 0.25
    z = np.log(1 / (1 - 2 * d)) / (2 * N)
    with pytest.raises(EvaluationError):
        h(z, N, d)


def test_scale_stage():
    z = np.array([[1, 2, 3j]])
    assert np.allclose(ScaleF1(0.5).forward(z), [[0.5, 1, 3j]])
    assert np.allclose(ScaleF1(0.3).forward([[0, 0, -2 + 1j]]), [[0, 0, -2 + 1j]])
    w = sample_interior(ShiftedBallB(), 10_000, seed=0)
    back, ok = ScaleF1(0.01).inverse(ScaleF1(0.01).forward(w))
    assert ok.all() and np.max(np.abs(back - w)) <= 1e-14 * np.max(np.abs(w))


def test_fiber_f2():
    assert np.allclose(FiberF2(7).forward([[1, 1, 0]]), [[1, -6, 0]])
    z = np.array([[0.3, 0, -0.2 + 0.1j]])
    assert np.array_equal(FiberF2(7).forward(z), z)
    w = sample_interior(ScaledBallBPrime(), 20_000, seed=1)
    w = w[w[:, 2].real <= -0.01][:10_000]
    back, ok = FiberF2(50).inverse(FiberF2(50).forward(w))
    assert ok.all()
    assert np.max(np.abs(back - w) / np.maximum(np.abs(w), 1e-300)) < 1e-10


def test_fiber_f2_strict_inverse_guards_zero_divisor():
    # a zero of f_3 in the left half plane, located independently
    root = complex(mp.findroot(lambda z: 1 + mp.exp(6 * z) * (2 * z - 1), mp.mpc(-0.5, 1.2)))
    assert root.real < 0 and abs(f_N(root, 3)) < 1e-14
    with pytest.raises(DivisionGuardError):
        FiberF2(3).inverse_strict(np.array([[1, 1e20, root]]))


def test_fiber_f3():
    assert np.allclose(FiberF3(4, 0.25).forward([[1, 1, 0]]), [[4, 4, 0]])
    z = np.array([[0, 0, -0.4 + 2j]])
    assert np.array_equal(FiberF3(4, 0.25).forward(z), z)
    w = sample_interior(ShiftedBallB(), 10_000, seed=2)
    back, ok = FiberF3(30, 0.1).inverse(FiberF3(30, 0.1).forward(w))
    assert ok.all()
    assert np.max(np.abs(back - w)) < 1e-10 * np.max(np.abs(w))


def test_phi_examples():
    assert np.array_equal(phi([[0, 0, 2 - 1j]]), [[0, 0, 2 - 1j]])
    assert np.allclose(phi([[1, 1, -1]]), [[1, -1, 0]])
    for t in np.linspace(0, 6, 5):
        z = [[0.1 * np.exp(1j * t), 0.02 * np.exp(-1j * t), -0.001]]
        assert np.allclose(phi(z), [[0.1 * np.exp(1j * t), 0, 0.001]], atol=1e-17)


def test_center_has_no_half_space_preimage():
    pre = phi_preimages([0, 0, 1e-3], HalfSpaceH())
    assert pre.filtered == []
    assert len(pre.candidates) >= 1


def test_circle_point_preimage():
    pre = phi_preimages([0.1, 0, 0.001], WermerDp(0.1))
    assert len(pre.filtered) == 1
    assert np.allclose(pre.filtered[0], [0.1, 0.02, -0.001], atol=1e-15)


def test_phi_round_trip_on_half_space():
    rng = np.random.default_rng(4)
    z = rng.standard_normal((10_000, 3)) + 1j * rng.standard_normal((10_000, 3))
    z[:, 2] = -np.abs(z[:, 2].real) - 1e-3 + 1j * z[:, 2].imag
    back, ok = WermerPhi().inverse(phi(z))
    assert ok.all()
    assert np.max(np.abs(phi(back) - phi(z))) < 1e-12 * np.max(np.abs(phi(z)))
    assert np.max(np.abs(back - z)) < 1e-8


def test_phi_inverse_strict_diagnostic():
    with pytest.raises(InversionError) as exc:
        WermerPhi().inverse_strict([[0, 0, 1e-3]])
    assert exc.value.diagnostic


def test_affine_and_inverted():
    rng = np.random.default_rng(0)
    Q, _ = np.linalg.qr(rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3)))
    A = Affine(Q, np.array([1, 2j, 0]))
    z = rng.standard_normal((20, 3)) + 0j
    assert np.allclose(A.inverted().forward(A.forward(z)), z)
    assert np.allclose(Inverted(ScaleF1(0.2)).forward(ScaleF1(0.2).forward(z)), z)
    assert np.array_equal(Identity().forward(z), z)


def test_collision_pairs():
    pre = np.array([[0, 0, 0], [1, 0, 0], [0, 0, 0.5]], dtype=complex)
    img = np.array([[0, 0, 0], [0, 0, 0], [3, 0, 0]], dtype=complex)
    assert [tuple(p) for p in collision_pairs(pre, img)] == [(0, 1)]
    assert len(collision_pairs(pre, pre)) == 0
