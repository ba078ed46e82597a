"""Scalar factors f_N, h_N^delta and the elementary self-maps of C^3.

Every map object exposes the same small interface, consumed by
:mod:`wermer_forge.composite`:

* ``forward(z)``     -- ``(n, 3)`` complex array in, same shape out
* ``inverse(w)``     -- ``(z, ok)``; ``ok`` flags points where inversion worked
* ``branches(w)``    -- every algebraic preimage candidate, as ``[(z, ok), ...]``
* ``jacobian(z)``    -- ``(n, 3, 3)`` complex Jacobians
* ``to_json()``      -- descriptor dict
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import DomainSpec, HalfSpaceH, as_points, sqnorm
from .errors import DivisionGuardError, EvaluationError, InversionError, ParameterError

TAU_SERIES = 1e-3
TAU_DIV = 1e-30

_FACT = np.array([math.factorial(k) for k in range(30)], dtype=float)


def _as_complex(z):
    scalar = np.ndim(z) == 0
    return np.atleast_1d(np.asarray(z, dtype=complex)), scalar


def _out(a, scalar):
    return complex(a[0]) if scalar else a


def _phi1(w):
    """(e^w - 1)/w, with the value 1 at w = 0."""
    out = np.empty_like(w)
    small = np.abs(w) < 0.5
    ws = w[small]
    acc = np.zeros_like(ws)
    for k in range(22, -1, -1):
        acc = acc * ws + 1.0 / _FACT[k + 1]
    out[small] = acc
    wl = w[~small]
    out[~small] = np.expm1(wl) / wl
    return out


def _phi1_prime(w):
    """Derivative of (e^w - 1)/w."""
    out = np.empty_like(w)
    small = np.abs(w) < 0.5
    ws = w[small]
    acc = np.zeros_like(ws)
    for k in range(22, 0, -1):
        acc = acc * ws + k / _FACT[k + 1]
    out[small] = acc
    wl = w[~small]
    out[~small] = (np.exp(wl) * (wl - 1.0) + 1.0) / wl**2
    return out


def f_N_closed(z3, N: int):
    """Direct formula ``1/(2 z3) + e^{2 N z3} (1 - 1/(2 z3))``; singular at 0."""
    z, scalar = _as_complex(z3)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        E = np.exp(2.0 * N * z)
        v = 1.0 / (2.0 * z) + E * (1.0 - 1.0 / (2.0 * z))
    return _out(v, scalar)


def f_N_series(z3, N: int):
    """Rearranged form ``e^{2Nz3} - N (e^{2Nz3} - 1)/(2 N z3)``, regular at 0."""
    z, scalar = _as_complex(z3)
    w = 2.0 * N * z
    with np.errstate(over="ignore", invalid="ignore"):
        v = np.exp(w) - N * _phi1(w)
    return _out(v, scalar)


def f_N(z3, N: int):
    """The factor used by F2; entire, with ``f_N(0) = 1 - N``."""
    if N < 1:
        raise ParameterError(f"N must be >= 1, got {N}")
    z, scalar = _as_complex(z3)
    out = np.empty_like(z)
    near = np.abs(z) < TAU_SERIES
    if near.any():
        out[near] = f_N_series(z[near], N)
    if (~near).any():
        out[~near] = f_N_closed(z[~near], N)
    return _out(out, scalar)


def f_times_2z_minus_one(z3, N: int):
    """``f_N(z3) 2 z3 - 1`` in the cancellation-free form ``e^{2N z3} (2 z3 - 1)``."""
    z, scalar = _as_complex(z3)
    with np.errstate(over="ignore"):
        return _out(np.exp(2.0 * N * z) * (2.0 * z - 1.0), scalar)


def f_N_prime(z3, N: int):
    z, scalar = _as_complex(z3)
    out = np.empty_like(z)
    near = np.abs(z) < TAU_SERIES
    with np.errstate(over="ignore", invalid="ignore"):
        if near.any():
            w = 2.0 * N * z[near]
            out[near] = 2.0 * N * np.exp(w) - 2.0 * N * N * _phi1_prime(w)
        zf = z[~near]
        if zf.size:
            E = np.exp(2.0 * N * zf)
            out[~near] = 2.0 * N * E * (1.0 - 1.0 / (2.0 * zf)) + (E - 1.0) / (2.0 * zf**2)
    return _out(out, scalar)


def _h_parts(z, N, delta):
    k = 2.0 * delta - 1.0
    w = 2.0 * N * z
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        big = w.real > 0
        E = np.exp(np.where(big, -w, w))  # e^{w} for Re w <= 0, e^{-w} otherwise
        # h - 1 = 2(1-delta) e^w / (1 + k e^w), rewritten with e^{-w} when |e^w| > 1
        num = np.where(big, 2.0 * (1.0 - delta), 2.0 * (1.0 - delta) * E)
        den = np.where(big, E + k, 1.0 + k * E)
    return num, den


def h(z3, N: int, delta: float, strict: bool = True):
    """Moebius-exponential factor used by F3; ``h(0) = 1/delta``, ``h -> 1`` as Re z3 -> -inf."""
    _check_scalar_params(N, delta)
    z, scalar = _as_complex(z3)
    num, den = _h_parts(z, N, delta)
    bad = np.abs(den) <= 1e-300 * np.maximum(1.0, np.abs(num))
    with np.errstate(invalid="ignore", divide="ignore"):
        v = 1.0 + num / den
    bad |= ~np.isfinite(v)
    if bad.any():
        if strict:
            raise EvaluationError(f"h has a pole at z3={z[bad][0]!r} (N={N}, delta={delta})")
        v[bad] = np.nan
    return _out(v, scalar)


def h_minus_one(z3, N: int, delta: float):
    """``h - 1`` without the cancellation of forming h first."""
    z, scalar = _as_complex(z3)
    num, den = _h_parts(z, N, delta)
    with np.errstate(invalid="ignore", divide="ignore"):
        return _out(num / den, scalar)


def h_prime(z3, N: int, delta: float):
    z, scalar = _as_complex(z3)
    k = 2.0 * delta - 1.0
    w = 2.0 * N * z
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        big = w.real > 0
        E = np.exp(np.where(big, -w, w))
        # d/dz of 2(1-d) e^w/(1+k e^w) = 4N(1-d) e^w/(1+k e^w)^2
        v = np.where(big, 4.0 * N * (1.0 - delta) * E / (E + k) ** 2,
                     4.0 * N * (1.0 - delta) * E / (1.0 + k * E) ** 2)
    return _out(v, scalar)


def _check_scalar_params(N, delta):
    if int(N) != N or N < 1:
        raise ParameterError(f"N must be a positive integer, got {N}")
    if not 0.0 < delta <= 0.5:
        raise ParameterError(f"delta must lie in (0, 1/2], got {delta}")


@dataclass(frozen=True)
class ScalarMapParams:
    N: int
    delta: float

    def __post_init__(self):
        _check_scalar_params(self.N, self.delta)


# ---------------------------------------------------------------------------
# elementary maps


class Stage:
    name = "stage"

    def forward(self, z):
        raise NotImplementedError

    def inverse(self, w):
        raise NotImplementedError

    def branches(self, w):
        return [self.inverse(w)]

    def jacobian(self, z):
        raise NotImplementedError

    def inverse_strict(self, w):
        z, ok = self.inverse(as_points(w))
        if not ok.all():
            raise InversionError(f"{self.name}: inversion failed at {int((~ok).sum())} points",
                                 {"stage": self.name, "failed": int((~ok).sum())})
        return z

    def to_json(self) -> dict:
        return {"map": self.name}

    def __call__(self, z):
        return self.forward(as_points(z))


@dataclass(frozen=True)
class Identity(Stage):
    name = "identity"

    def forward(self, z):
        return np.array(z, dtype=complex)

    def inverse(self, w):
        return np.array(w, dtype=complex), np.ones(len(w), dtype=bool)

    def jacobian(self, z):
        return np.broadcast_to(np.eye(3, dtype=complex), (len(z), 3, 3)).copy()


@dataclass(frozen=True)
class ScaleF1(Stage):
    """``(delta z1, delta z2, z3)``."""

    delta: float
    name = "F1"

    def __post_init__(self):
        if not self.delta > 0:
            raise ParameterError(f"F1 needs delta > 0, got {self.delta}")

    def forward(self, z):
        z = as_points(z)
        out = z.copy()
        out[:, :2] *= self.delta
        return out

    def inverse(self, w):
        w = as_points(w)
        out = w.copy()
        out[:, :2] /= self.delta
        return out, np.ones(len(out), dtype=bool)

    def jacobian(self, z):
        J = np.zeros((len(z), 3, 3), dtype=complex)
        J[:, 0, 0] = J[:, 1, 1] = self.delta
        J[:, 2, 2] = 1.0
        return J

    def to_json(self):
        return {"map": self.name, "delta": self.delta}


@dataclass(frozen=True)
class FiberF2(Stage):
    """``(z1, z2 f_N(z3), z3)``; invertible where ``f_N(z3) != 0``."""

    N: int
    name = "F2"

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 1:
            raise ParameterError(f"F2 needs a positive integer N, got {self.N}")

    def forward(self, z):
        z = as_points(z)
        out = z.copy()
        out[:, 1] *= f_N(z[:, 2], self.N)
        return out

    def inverse(self, w):
        w = as_points(w)
        out = w.copy()
        f = f_N(w[:, 2], self.N)
        ok = np.abs(f) > TAU_DIV * np.maximum(1.0, np.abs(w[:, 1]))
        ok &= np.isfinite(f)
        with np.errstate(invalid="ignore", divide="ignore"):
            out[:, 1] = np.where(ok, w[:, 1] / np.where(ok, f, 1.0), np.nan)
        return out, ok

    def inverse_strict(self, w):
        z, ok = self.inverse(as_points(w))
        if not ok.all():
            raise DivisionGuardError(f"f_{self.N} vanishes numerically at {int((~ok).sum())} points")
        return z

    def jacobian(self, z):
        J = np.zeros((len(z), 3, 3), dtype=complex)
        J[:, 0, 0] = J[:, 2, 2] = 1.0
        J[:, 1, 1] = f_N(z[:, 2], self.N)
        J[:, 1, 2] = z[:, 1] * f_N_prime(z[:, 2], self.N)
        return J

    def to_json(self):
        return {"map": self.name, "N": self.N}


@dataclass(frozen=True)
class FiberF3(Stage):
    """``(z1 h(z3), z2 h(z3), z3)``; h never vanishes on Re z3 < 0."""

    N: int
    delta: float
    name = "F3"

    def __post_init__(self):
        _check_scalar_params(self.N, self.delta)

    def forward(self, z):
        """Points at a pole of h (only possible for Re z3 > 0) map to NaN."""
        z = as_points(z)
        out = z.copy()
        hv = h(z[:, 2], self.N, self.delta, strict=False)
        out[:, 0] *= hv
        out[:, 1] *= hv
        return out

    def inverse(self, w):
        w = as_points(w)
        out = w.copy()
        hv = h(w[:, 2], self.N, self.delta, strict=False)
        scale = np.maximum(1.0, np.maximum(np.abs(w[:, 0]), np.abs(w[:, 1])))
        ok = np.isfinite(hv) & (np.abs(hv) > TAU_DIV * scale)
        safe = np.where(ok, hv, 1.0)
        out[:, 0] = np.where(ok, w[:, 0] / safe, np.nan)
        out[:, 1] = np.where(ok, w[:, 1] / safe, np.nan)
        return out, ok

    def inverse_strict(self, w):
        z, ok = self.inverse(as_points(w))
        if not ok.all():
            raise DivisionGuardError(f"h vanishes or has a pole at {int((~ok).sum())} points")
        return z

    def jacobian(self, z):
        hv = h(z[:, 2], self.N, self.delta)
        hp = h_prime(z[:, 2], self.N, self.delta)
        J = np.zeros((len(z), 3, 3), dtype=complex)
        J[:, 0, 0] = J[:, 1, 1] = hv
        J[:, 0, 2] = z[:, 0] * hp
        J[:, 1, 2] = z[:, 1] * hp
        J[:, 2, 2] = 1.0
        return J

    def to_json(self):
        return {"map": self.name, "N": self.N, "delta": self.delta}


def phi(z):
    """The cubic map ``(z1, z1 z2^2 + 2 z3 z2, z1 z2 + z3)``."""
    z = as_points(z)
    z1, z2, z3 = z[:, 0], z[:, 1], z[:, 2]
    return np.stack([z1, z1 * z2 * z2 + 2.0 * z3 * z2, z1 * z2 + z3], axis=1)


def phi_roots(w):
    """Both preimage candidates of ``phi`` for every row of ``w``.

    Solves ``w1 z2^2 - 2 w3 z2 + w2 = 0`` with the cancellation-free pair
    ``q = w3 + sign * sqrt(w3^2 - w1 w2)``, ``z2 = q / w1`` and ``z2 = w2 / q``.
    Returns ``(small, large, degenerate)``; missing roots are NaN rows.
    """
    w = as_points(w)
    w1, w2, w3 = w[:, 0], w[:, 1], w[:, 2]
    disc = np.sqrt(w3 * w3 - w1 * w2)
    # pick the sign that avoids cancellation in q
    s = np.where((np.conj(w3) * disc).real >= 0, 1.0, -1.0)
    q = w3 + s * disc
    nan = complex(np.nan, np.nan)
    with np.errstate(invalid="ignore", divide="ignore"):
        z2_small = np.where(q != 0, w2 / np.where(q != 0, q, 1.0), np.where(w2 == 0, 0.0, nan))
        z2_large = np.where(w1 != 0, q / np.where(w1 != 0, w1, 1.0), nan)
    degenerate = (w1 == 0) & (w3 == 0) & (w2 == 0)
    z2_small = np.where(degenerate, nan, z2_small)

    def assemble(z2):
        return np.stack([w1, z2, w3 - w1 * z2], axis=1)

    return assemble(z2_small), assemble(z2_large), degenerate


@dataclass
class PreimageSet:
    query: np.ndarray
    candidates: list = field(default_factory=list)
    filtered: list = field(default_factory=list)
    residuals: list = field(default_factory=list)
    degenerate: bool = False

    def to_json(self):
        from .core import complex_to_json
        enc = lambda pts: [[complex_to_json(v) for v in p] for p in pts]
        return {"query": [complex_to_json(v) for v in self.query],
                "candidates": enc(self.candidates), "filtered": enc(self.filtered),
                "residuals": list(self.residuals), "degenerate": self.degenerate}


def phi_preimages(w, domain: DomainSpec | None = None,
                  residual_tol: float = 1e-12) -> PreimageSet:
    """All ``phi``-preimages of one point, and those lying in ``domain``.

    The fibre over ``w1 = w3 = w2 = 0`` is the whole z2-line; it is reported
    through ``degenerate=True`` rather than raised.
    """
    w = as_points(w)[:1]
    small, large, deg = phi_roots(w)
    out = PreimageSet(query=w[0].copy(), degenerate=bool(deg[0]))
    if out.degenerate:
        return out
    scale = max(1.0, float(np.sqrt(sqnorm(w))[0]))
    seen: list[np.ndarray] = []
    for cand in (small, large):
        c = cand[0]
        if not np.all(np.isfinite(c)):
            continue
        res = float(np.sqrt(sqnorm(phi(c) - w))[0]) / scale
        if res > residual_tol:
            continue
        if any(np.allclose(c, s, rtol=1e-13, atol=1e-300) for s in seen):
            continue
        seen.append(c)
        out.candidates.append(c)
        out.residuals.append(res)
    if domain is not None:
        out.filtered = [c for c in out.candidates if domain.rho(c[None, :])[0] < 0]
    else:
        out.filtered = list(out.candidates)
    return out


@dataclass(frozen=True)
class WermerPhi(Stage):
    """The base map; its inverse picks the unique preimage in the half-space H."""

    name = "phi"

    def forward(self, z):
        return phi(z)

    def branches(self, w):
        small, large, deg = phi_roots(w)
        res = []
        for c in (small, large):
            ok = np.all(np.isfinite(c), axis=1) & ~deg
            res.append((c, ok))
        return res

    def inverse(self, w):
        (a, oka), (b, okb) = self.branches(w)
        ina = oka & (a[:, 2].real < 0)
        inb = okb & (b[:, 2].real < 0)
        # the two roots coincide on the branch locus; do not count them twice
        same = ina & inb & np.all(np.isclose(a, b, rtol=1e-12, atol=0), axis=1)
        inb &= ~same
        ok = ina ^ inb
        out = np.where(ina[:, None], a, b)
        out[~ok] = np.nan
        return out, ok

    def inverse_strict(self, w):
        w = as_points(w)
        z, ok = self.inverse(w)
        if not ok.all():
            (a, oka), (b, okb) = self.branches(w)
            nH = (oka & (a[:, 2].real < 0)).astype(int) + (okb & (b[:, 2].real < 0)).astype(int)
            raise InversionError(
                "phi: expected exactly one preimage in H",
                {"stage": self.name, "no_preimage": int((nH == 0).sum()),
                 "two_preimages": int((nH == 2).sum())})
        return z

    def jacobian(self, z):
        z1, z2, z3 = z[:, 0], z[:, 1], z[:, 2]
        J = np.zeros((len(z), 3, 3), dtype=complex)
        J[:, 0, 0] = 1.0
        J[:, 1, 0] = z2 * z2
        J[:, 1, 1] = 2.0 * z1 * z2 + 2.0 * z3
        J[:, 1, 2] = 2.0 * z2
        J[:, 2, 0] = z2
        J[:, 2, 1] = z1
        J[:, 2, 2] = 1.0
        return J


@dataclass(frozen=True)
class Inverted(Stage):
    """Swap forward and inverse of an exactly invertible stage."""

    inner: Stage

    @property
    def name(self):
        return f"inv({self.inner.name})"

    def forward(self, z):
        out, ok = self.inner.inverse(z)
        if not ok.all():
            raise EvaluationError(f"{self.name} undefined at {int((~ok).sum())} points")
        return out

    def inverse(self, w):
        return self.inner.forward(w), np.ones(len(w), dtype=bool)

    def jacobian(self, z):
        return np.linalg.inv(self.inner.jacobian(self.forward(z)))

    def to_json(self):
        return {"map": "inverse", "of": self.inner.to_json()}


@dataclass(frozen=True, eq=False)
class Affine(Stage):
    """``z -> U z + b`` with U unitary (used to conjugate the model point)."""

    U: np.ndarray
    b: np.ndarray
    name = "affine"

    def forward(self, z):
        return z @ self.U.T + self.b

    def inverse(self, w):
        return (w - self.b) @ np.conj(self.U), np.ones(len(w), dtype=bool)

    def jacobian(self, z):
        return np.broadcast_to(self.U, (len(z), 3, 3)).copy()

    def inverted(self) -> "Affine":
        Uh = np.conj(self.U.T)
        return Affine(Uh, -(self.b @ Uh.T))

    def to_json(self):
        from .core import complex_to_json
        return {"map": self.name,
                "U": [[complex_to_json(v) for v in row] for row in self.U],
                "b": [complex_to_json(v) for v in self.b]}


def in_half_space(z) -> np.ndarray:
    return HalfSpaceH().rho(as_points(z)) < 0


def collision_pairs(pre, img, image_tol: float = 1e-9, preimage_tol: float = 1e-4) -> np.ndarray:
    """Index pairs whose images nearly coincide although the preimages are far apart.

    A non-empty result is numerical evidence against injectivity.
    """
    from scipy.spatial import cKDTree

    pre, img = as_points(pre), as_points(img)
    ok = np.all(np.isfinite(img), axis=1)
    idx = np.flatnonzero(ok)
    real = np.concatenate([img[idx].real, img[idx].imag], axis=1)
    pairs = cKDTree(real).query_pairs(image_tol, output_type="ndarray")
    if len(pairs) == 0:
        return np.empty((0, 2), dtype=int)
    i, j = idx[pairs[:, 0]], idx[pairs[:, 1]]
    far = np.sqrt(sqnorm(pre[i] - pre[j])) > preimage_tol
    return np.stack([i[far], j[far]], axis=1)
