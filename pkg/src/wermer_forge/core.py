"""Points of C^3, domains given by real defining functions, and sampling.

Every domain is ``{rho < 0}`` for an explicit real function ``rho``.  Points
are handled in batches as complex arrays of shape ``(n, 3)``; :class:`C3Point`
is the scalar convenience wrapper used at API boundaries.
"""
from __future__ import annotations

import csv
import enum
import io
import math
from dataclasses import dataclass, field
from typing import ClassVar, Sequence

import numpy as np
from scipy.stats import qmc

from .errors import ParameterError, SamplingBudgetError

BOUNDARY_TOL = 1e-12
CSV_COLUMNS = ("re_z1", "im_z1", "re_z2", "im_z2", "re_z3", "im_z3")


@dataclass(frozen=True)
class C3Point:
    z1: complex
    z2: complex
    z3: complex

    def __post_init__(self):
        for name in ("z1", "z2", "z3"):
            v = complex(getattr(self, name))
            if not (math.isfinite(v.real) and math.isfinite(v.imag)):
                raise ParameterError(f"{name} must be finite, got {v!r}")
            object.__setattr__(self, name, v)

    def as_array(self) -> np.ndarray:
        return np.array([self.z1, self.z2, self.z3], dtype=complex)

    @classmethod
    def from_array(cls, a) -> "C3Point":
        a = np.asarray(a, dtype=complex).reshape(3)
        return cls(a[0], a[1], a[2])

    def to_json(self):
        return [[v.real, v.imag] for v in (self.z1, self.z2, self.z3)]

    @classmethod
    def from_json(cls, obj) -> "C3Point":
        return cls(*(complex(re, im) for re, im in obj))


def as_points(z) -> np.ndarray:
    """Coerce a C3Point, a length-3 sequence or an ``(n, 3)`` array to ``(n, 3)``."""
    if isinstance(z, C3Point):
        return z.as_array()[None, :]
    a = np.asarray(z, dtype=complex)
    if a.ndim == 1:
        a = a[None, :]
    if a.ndim != 2 or a.shape[1] != 3:
        raise ParameterError(f"expected points of shape (n, 3), got {a.shape}")
    return a


def check_finite(z: np.ndarray) -> None:
    if not np.all(np.isfinite(z)):
        raise ParameterError("points must have finite coordinates")


def sqnorm(z: np.ndarray) -> np.ndarray:
    return np.sum(z.real**2 + z.imag**2, axis=-1)


def complex_to_json(v) -> list:
    v = complex(v)
    return [v.real, v.imag]


def complex_from_json(obj) -> complex:
    return complex(obj[0], obj[1])


class Classification(enum.IntEnum):
    # integer values double as the CSV cell codes of the slice command
    EXTERIOR = 0
    INTERIOR = 1
    BOUNDARY = 2


# ---------------------------------------------------------------------------
# domains


class DomainSpec:
    """Base class; subclasses define ``rho`` and ``grad``.

    ``grad`` returns the real gradient packed as complex numbers, so that the
    derivative of ``rho`` in direction ``v`` is ``Re(sum(conj(grad) * v))``.
    """

    kind: ClassVar[str] = ""

    def rho(self, z: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def grad(self, z: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def ellipsoid(self):
        """``(center, scales)`` if the domain is ``center + diag(scales) * unit ball``."""
        return None

    def bounding_ball(self):
        """``(center, radius)`` of a ball containing the domain, or None."""
        ell = self.ellipsoid()
        if ell is None:
            return None
        c, s = ell
        return c, float(np.max(s))

    def params(self) -> dict:
        return {}

    def to_json(self) -> dict:
        return {"kind": self.kind, "params": self.params()}

    def __eq__(self, other):
        return type(self) is type(other) and self.to_json() == other.to_json()

    def __hash__(self):
        return hash(repr(self.to_json()))


@dataclass(frozen=True, eq=False)
class HalfSpaceH(DomainSpec):
    """``Re z3 < 0``; sampling uses a bounding box (part of the serialized form)."""

    kind: ClassVar[str] = "HalfSpaceH"
    box_z12: float = 4.0
    box_re_z3: float = 4.0
    box_im_z3: float = 4.0

    def rho(self, z):
        return z[:, 2].real.copy()

    def grad(self, z):
        g = np.zeros_like(z)
        g[:, 2] = 1.0
        return g

    def params(self):
        return {"box": {"z12": self.box_z12, "re_z3": self.box_re_z3, "im_z3": self.box_im_z3}}


@dataclass(frozen=True, eq=False)
class WermerDp(DomainSpec):
    """``2 Re z3 + |z3|^2 + p (|z1|^2 + |z2|^2) < 0`` for ``0 < p < 1/4``."""

    kind: ClassVar[str] = "WermerDp"
    p: float = 0.1

    def __post_init__(self):
        if not 0.0 < self.p < 0.25:
            raise ParameterError(f"WermerDp requires 0 < p < 1/4, got p={self.p}")

    def rho(self, z):
        a = z.real**2 + z.imag**2
        return 2.0 * z[:, 2].real + a[:, 2] + self.p * (a[:, 0] + a[:, 1])

    def grad(self, z):
        g = np.empty_like(z)
        g[:, 0] = 2.0 * self.p * z[:, 0]
        g[:, 1] = 2.0 * self.p * z[:, 1]
        g[:, 2] = 2.0 + 2.0 * z[:, 2]
        return g

    def ellipsoid(self):
        s = 1.0 / math.sqrt(self.p)
        return np.array([0, 0, -1], dtype=complex), np.array([s, s, 1.0])

    def params(self):
        return {"p": self.p}


@dataclass(frozen=True, eq=False)
class ShiftedBallB(DomainSpec):
    """Unit ball tangent to the origin from the left: ``2 Re z3 + |z|^2 < 0``."""

    kind: ClassVar[str] = "ShiftedBallB"

    def rho(self, z):
        return 2.0 * z[:, 2].real + sqnorm(z)

    def grad(self, z):
        g = 2.0 * z
        g[:, 2] += 2.0
        return g

    def ellipsoid(self):
        return np.array([0, 0, -1], dtype=complex), np.ones(3)


@dataclass(frozen=True, eq=False)
class ScaledBallBPrime(DomainSpec):
    """Radius-two ball tangent to the origin: ``2 Re z3 + |z|^2 / 2 < 0``."""

    kind: ClassVar[str] = "ScaledBallBPrime"

    def rho(self, z):
        return 2.0 * z[:, 2].real + 0.5 * sqnorm(z)

    def grad(self, z):
        g = z.copy()
        g[:, 2] += 2.0
        return g

    def ellipsoid(self):
        return np.array([0, 0, -2], dtype=complex), np.full(3, 2.0)


@dataclass(frozen=True, eq=False)
class EuclideanBall(DomainSpec):
    """``|z - center|^2 - radius^2 < 0``."""

    kind: ClassVar[str] = "EuclideanBall"
    center: tuple = (0j, 0j, 0j)
    radius: float = 1.0

    def __post_init__(self):
        c = tuple(complex(v) for v in np.asarray(self.center, dtype=complex).reshape(3))
        object.__setattr__(self, "center", c)
        if not self.radius > 0:
            raise ParameterError(f"EuclideanBall radius must be > 0, got {self.radius}")

    def rho(self, z):
        return sqnorm(z - np.asarray(self.center)) - self.radius**2

    def grad(self, z):
        return 2.0 * (z - np.asarray(self.center))

    def ellipsoid(self):
        return np.asarray(self.center, dtype=complex), np.full(3, float(self.radius))

    def params(self):
        return {"center": [complex_to_json(v) for v in self.center], "radius": self.radius}


def _max_rho(parts, z):
    vals = np.stack([p.rho(z) for p in parts])
    return vals.max(axis=0), vals.argmax(axis=0)


def _max_grad(parts, z):
    _, idx = _max_rho(parts, z)
    grads = np.stack([p.grad(z) for p in parts])
    return grads[idx, np.arange(z.shape[0])]


def tangent_ball(alpha, R: float) -> EuclideanBall:
    """Ball of radius ``R`` containing the unit ball, touching it at ``alpha``."""
    a = np.asarray(alpha, dtype=complex)
    return EuclideanBall(tuple(a * (1.0 - R)), R)


@dataclass(frozen=True, eq=False)
class OmegaRegion(DomainSpec):
    """Enlarged ball ``|z| < 1 + delta`` intersected with the tangent balls ``B(j, R)``."""

    kind: ClassVar[str] = "OmegaRegion"
    R: float = 2.0
    n: int = 0
    delta: float = 0.5
    alphas: tuple = ()

    def __post_init__(self):
        al = tuple(tuple(complex(v) for v in np.asarray(a, dtype=complex).reshape(3))
                   for a in self.alphas)
        object.__setattr__(self, "alphas", al)
        if not self.R > 1:
            raise ParameterError(f"OmegaRegion requires R > 1, got {self.R}")
        if not self.delta > 0:
            raise ParameterError(f"OmegaRegion requires delta > 0, got {self.delta}")
        if self.n < 0 or self.n > len(al):
            raise ParameterError(f"OmegaRegion n={self.n} needs at least n alphas")

    @property
    def parts(self):
        out = [EuclideanBall((0j, 0j, 0j), 1.0 + self.delta)]
        out += [tangent_ball(a, self.R) for a in self.alphas[: self.n]]
        return out

    def rho(self, z):
        return _max_rho(self.parts, z)[0]

    def grad(self, z):
        return _max_grad(self.parts, z)

    def bounding_ball(self):
        return np.zeros(3, dtype=complex), 1.0 + self.delta

    def params(self):
        return {"R": self.R, "n": self.n, "delta": self.delta,
                "alphas": [[complex_to_json(v) for v in a] for a in self.alphas]}


@dataclass(frozen=True, eq=False)
class Localized(DomainSpec):
    """``base`` intersected with the ball ``|z - center| < radius``."""

    kind: ClassVar[str] = "Localized"
    base: DomainSpec = field(default_factory=ShiftedBallB)
    center: tuple = (0j, 0j, 0j)
    radius: float = 1.0

    def __post_init__(self):
        c = tuple(complex(v) for v in np.asarray(self.center, dtype=complex).reshape(3))
        object.__setattr__(self, "center", c)
        if not self.radius > 0:
            raise ParameterError(f"Localized radius must be > 0, got {self.radius}")

    @property
    def parts(self):
        return [self.base, EuclideanBall(self.center, self.radius)]

    def rho(self, z):
        # the ball term is rescaled so both terms have comparable size near the centre
        b = self.base.rho(z)
        ball = (sqnorm(z - np.asarray(self.center)) - self.radius**2) / max(self.radius, 1e-300)
        return np.maximum(b, ball)

    def grad(self, z):
        b = self.base.rho(z)
        ball = (sqnorm(z - np.asarray(self.center)) - self.radius**2) / max(self.radius, 1e-300)
        gb = self.base.grad(z)
        gball = 2.0 * (z - np.asarray(self.center)) / max(self.radius, 1e-300)
        return np.where((b >= ball)[:, None], gb, gball)

    def bounding_ball(self):
        return np.asarray(self.center, dtype=complex), float(self.radius)

    def params(self):
        return {"base": self.base.to_json(),
                "center": [complex_to_json(v) for v in self.center], "radius": self.radius}


_KINDS = {cls.kind: cls for cls in (HalfSpaceH, WermerDp, ShiftedBallB, ScaledBallBPrime,
                                    EuclideanBall, OmegaRegion, Localized)}


def domain_from_json(obj: dict) -> DomainSpec:
    kind = obj.get("kind")
    params = obj.get("params", {}) or {}
    if kind not in _KINDS:
        raise ParameterError(f"unknown domain kind {kind!r}")
    if kind == "HalfSpaceH":
        box = params.get("box", {})
        return HalfSpaceH(box.get("z12", 4.0), box.get("re_z3", 4.0), box.get("im_z3", 4.0))
    if kind == "WermerDp":
        return WermerDp(float(params["p"]))
    if kind in ("ShiftedBallB", "ScaledBallBPrime"):
        return _KINDS[kind]()
    if kind == "EuclideanBall":
        return EuclideanBall(tuple(complex_from_json(v) for v in params["center"]),
                             float(params["radius"]))
    if kind == "OmegaRegion":
        alphas = tuple(tuple(complex_from_json(v) for v in a) for a in params["alphas"])
        return OmegaRegion(float(params["R"]), int(params["n"]), float(params["delta"]), alphas)
    return Localized(domain_from_json(params["base"]),
                     tuple(complex_from_json(v) for v in params["center"]),
                     float(params["radius"]))


# ---------------------------------------------------------------------------
# membership


def classify(domain: DomainSpec, z, tol: float = 0.0) -> np.ndarray:
    """Vectorised classification codes (see :class:`Classification`)."""
    if tol < 0:
        raise ParameterError("tol must be >= 0")
    z = as_points(z)
    check_finite(z)
    r = domain.rho(z)
    out = np.full(r.shape, int(Classification.EXTERIOR))
    out[np.abs(r) <= tol] = int(Classification.BOUNDARY)
    out[r < -tol] = int(Classification.INTERIOR)
    return out


def contains(domain: DomainSpec, point, tol: float = 0.0) -> Classification:
    return Classification(int(classify(domain, point, tol)[0]))


# ---------------------------------------------------------------------------
# sampling


def _unit_ball(rng: np.random.Generator, n: int) -> np.ndarray:
    x = rng.standard_normal((n, 6))
    x /= np.linalg.norm(x, axis=1)[:, None]
    x *= rng.random(n)[:, None] ** (1.0 / 6.0)
    return x[:, :3] + 1j * x[:, 3:]


def _box_candidates(domain: HalfSpaceH, rng, n):
    b = domain.box_z12
    z = np.empty((n, 3), dtype=complex)
    for k in range(2):
        z[:, k] = rng.uniform(-b, b, n) + 1j * rng.uniform(-b, b, n)
    z[:, 2] = -domain.box_re_z3 * rng.random(n) + 1j * rng.uniform(-domain.box_im_z3,
                                                                    domain.box_im_z3, n)
    keep = (np.abs(z[:, 0]) <= b) & (np.abs(z[:, 1]) <= b)
    return z[keep]


def _candidates(domain: DomainSpec, rng, n):
    if isinstance(domain, HalfSpaceH):
        return _box_candidates(domain, rng, n)
    ell = domain.ellipsoid()
    if ell is not None:
        c, s = ell
        return c + _unit_ball(rng, n) * s
    bb = domain.bounding_ball()
    if bb is None:
        raise ParameterError(f"cannot sample domain of kind {domain.kind}")
    c, r = bb
    return c + r * _unit_ball(rng, n)


def sample_interior(domain: DomainSpec, count: int, seed: int,
                    max_rounds: int = 200) -> np.ndarray:
    """``count`` points strictly inside ``domain``, deterministic in ``seed``."""
    if count < 1:
        raise ParameterError("count must be >= 1")
    rng = np.random.default_rng(seed)
    got: list[np.ndarray] = []
    have = 0
    for _ in range(max_rounds):
        cand = _candidates(domain, rng, max(2 * (count - have), 64))
        cand = cand[domain.rho(cand) < 0]
        got.append(cand)
        have += len(cand)
        if have >= count:
            return np.concatenate(got)[:count]
    raise SamplingBudgetError(
        f"only {have}/{count} interior points of {domain.kind} after {max_rounds} rounds")


def project_to_boundary(domain: DomainSpec, z: np.ndarray, tol: float = BOUNDARY_TOL,
                        iters: int = 60) -> tuple[np.ndarray, np.ndarray]:
    """Move points along the gradient of rho until ``|rho| <= tol``.

    Returns the moved points and a mask of those that converged.
    """
    z = np.array(z, dtype=complex)
    ell = domain.ellipsoid()
    if ell is not None:
        c, s = ell
        u = (z - c) / s
        nrm = np.sqrt(sqnorm(u))
        ok = nrm > 0
        u[ok] /= nrm[ok, None]
        z = c + u * s
    elif isinstance(domain, HalfSpaceH):
        z[:, 2] = 1j * z[:, 2].imag
    for _ in range(iters):
        r = domain.rho(z)
        done = np.abs(r) <= tol
        if done.all():
            break
        g = domain.grad(z[~done])
        gg = sqnorm(g)
        step = np.zeros_like(g)
        good = gg > 0
        step[good] = (r[~done][good] / gg[good])[:, None] * g[good]
        z[~done] -= step
    r = domain.rho(z)
    return z, np.abs(r) <= tol


def sample_boundary(domain: DomainSpec, count: int, seed: int, tol: float = BOUNDARY_TOL,
                    max_rounds: int = 50) -> np.ndarray:
    """``count`` points with ``|rho| <= tol``, projected from interior samples."""
    if count < 1:
        raise ParameterError("count must be >= 1")
    got: list[np.ndarray] = []
    have = 0
    for k in range(max_rounds):
        inner = sample_interior(domain, max(count - have, 16), seed + 7919 * k)
        z, ok = project_to_boundary(domain, inner, tol)
        z = z[ok]
        got.append(z)
        have += len(z)
        if have >= count:
            return np.concatenate(got)[:count]
    raise SamplingBudgetError(f"boundary projection for {domain.kind} did not converge")


# ---------------------------------------------------------------------------
# deterministic low-discrepancy grids


def _halton_unit_ball(n: int, seed: int) -> np.ndarray:
    """Low-discrepancy points in the unit ball of C^3 (rejection from the cube)."""
    eng = qmc.Halton(d=6, scramble=True, seed=seed)
    out = []
    have = 0
    while have < n:
        x = 2.0 * eng.random(max(16 * (n - have), 64)) - 1.0
        x = x[np.sum(x**2, axis=1) < 1.0]
        out.append(x)
        have += len(x)
    x = np.concatenate(out)[:n]
    return x[:, :3] + 1j * x[:, 3:]


def grid_points(domain: DomainSpec, n_interior: int, n_boundary: int,
                seed: int = 0) -> np.ndarray:
    """Deterministic interior + boundary point set used for sup-norm estimates."""
    parts = []
    ell = domain.ellipsoid()
    if ell is not None:
        c, s = ell
        if n_interior:
            parts.append(c + _halton_unit_ball(n_interior, seed) * s)
        if n_boundary:
            u = _halton_unit_ball(n_boundary, seed + 1)
            u /= np.sqrt(sqnorm(u))[:, None]
            z, ok = project_to_boundary(domain, c + u * s)
            parts.append(z)
    else:
        if n_interior:
            parts.append(sample_interior(domain, n_interior, seed))
        if n_boundary:
            parts.append(sample_boundary(domain, n_boundary, seed + 1))
    return np.concatenate(parts) if parts else np.empty((0, 3), dtype=complex)


def collar_points(domain: DomainSpec, anchor, count: int, seed: int = 0,
                  min_scale: float = 1e-9, max_scale: float = 1.0) -> np.ndarray:
    """Boundary and interior points clustered geometrically around ``anchor``.

    ``anchor`` should lie on the boundary of an ellipsoidal domain.  Points are
    spread over distances ``min_scale .. max_scale`` from the anchor, half on
    the boundary, half pushed inside by a fraction of their distance squared.
    """
    ell = domain.ellipsoid()
    if ell is None:
        raise ParameterError("collar_points needs an ellipsoidal domain")
    c, s = ell
    rng = np.random.default_rng(seed)
    a = as_points(anchor)[0]
    ua = (a - c) / s
    ua /= math.sqrt(float(sqnorm(ua)))
    dist = np.exp(rng.uniform(math.log(min_scale), math.log(max_scale), count))
    v = rng.standard_normal((count, 6))
    v /= np.linalg.norm(v, axis=1)[:, None]
    u = ua + dist[:, None] * (v[:, :3] + 1j * v[:, 3:])
    u /= np.sqrt(sqnorm(u))[:, None]
    depth = rng.random(count) * np.minimum(dist, 1.0) ** 2
    half = count // 2
    u[half:] *= (1.0 - depth[half:])[:, None]
    return c + u * s


# ---------------------------------------------------------------------------
# CSV point files


def points_to_csv(z, handle=None) -> str:
    z = as_points(z)
    buf = io.StringIO() if handle is None else handle
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for row in z:
        w.writerow([format(x, ".17g") for v in row for x in (v.real, v.imag)])
    return buf.getvalue() if handle is None else ""


def points_from_csv(text_or_handle) -> np.ndarray:
    handle = io.StringIO(text_or_handle) if isinstance(text_or_handle, str) else text_or_handle
    rows = [r for r in csv.reader(handle) if r and not r[0].startswith("#")]
    if not rows or tuple(rows[0]) != CSV_COLUMNS:
        raise ParameterError(f"CSV header must be {','.join(CSV_COLUMNS)}")
    data = np.array([[float(x) for x in r] for r in rows[1:]], dtype=float).reshape(-1, 6)
    return data[:, 0::2] + 1j * data[:, 1::2]


def pairwise_min_distance(points: Sequence) -> float:
    z = as_points(np.asarray(points))
    if len(z) < 2:
        return math.inf
    d = z[:, None, :] - z[None, :, :]
    dist = np.sqrt(np.sum(np.abs(d) ** 2, axis=-1))
    dist[np.diag_indices(len(z))] = np.inf
    return float(dist.min())


@dataclass(frozen=True)
class WitnessCircle:
    """Flat circle ``q + frame @ (r e^{it}, 0, alpha)`` and its disk.

    ``frame`` is a unitary matrix (identity for the model boundary point);
    ``margin`` is the sampled distance from the disk centre to the image.
    """

    r: float
    alpha: float
    q: tuple = (0j, 0j, 0j)
    frame: tuple | None = None
    margin: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.alpha < self.r:
            raise ParameterError(f"witness needs 0 < alpha < r, got r={self.r}, alpha={self.alpha}")
        object.__setattr__(self, "q", tuple(complex(v) for v in np.asarray(self.q).reshape(3)))
        if self.frame is not None:
            F = np.asarray(self.frame, dtype=complex).reshape(3, 3)
            object.__setattr__(self, "frame", tuple(tuple(complex(v) for v in row) for row in F))

    @property
    def U(self) -> np.ndarray:
        return np.eye(3, dtype=complex) if self.frame is None else np.array(self.frame)

    def _place(self, local: np.ndarray) -> np.ndarray:
        return np.asarray(self.q) + local @ self.U.T

    @property
    def center(self) -> np.ndarray:
        return self._place(np.array([[0, 0, self.alpha]], dtype=complex))[0]

    def disk_map(self, zeta) -> np.ndarray:
        """Points of the flat disk for parameters ``|zeta| <= 1``."""
        zeta = np.atleast_1d(np.asarray(zeta, dtype=complex))
        local = np.zeros((zeta.size, 3), dtype=complex)
        local[:, 0] = self.r * zeta
        local[:, 2] = self.alpha
        return self._place(local)

    def circle_points(self, n_theta: int = 64) -> np.ndarray:
        t = 2.0 * np.pi * np.arange(n_theta) / n_theta
        return self.disk_map(np.exp(1j * t))

    def to_json(self):
        return {"r": self.r, "alpha": self.alpha,
                "q": [complex_to_json(v) for v in self.q],
                "frame": None if self.frame is None
                else [[complex_to_json(v) for v in row] for row in self.frame],
                "center": [complex_to_json(v) for v in self.center],
                "margin": self.margin}

    @classmethod
    def from_json(cls, obj):
        frame = obj.get("frame")
        if frame is not None:
            frame = [[complex_from_json(v) for v in row] for row in frame]
        return cls(float(obj["r"]), float(obj["alpha"]),
                   tuple(complex_from_json(v) for v in obj["q"]), frame,
                   float(obj.get("margin", 0.0)))
