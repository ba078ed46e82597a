"""The composite maps G and F of the four-parameter Wermer modification."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .core import DomainSpec, ShiftedBallB, as_points, collar_points, grid_points, sqnorm
from .errors import FitError, InversionError, ParameterError
from .maps import (Affine, FiberF2, FiberF3, Identity, Inverted, ScaleF1, Stage, WermerPhi,
                   f_N, h)


@dataclass(frozen=True)
class WermerParams:
    N1: int
    N2: int
    delta1: float
    delta2: float
    p: float = 0.1

    def __post_init__(self):
        for name in ("N1", "N2"):
            v = getattr(self, name)
            if isinstance(v, bool) or int(v) != v or v < 1:
                raise ParameterError(f"{name} must be a positive integer, got {v}")
            object.__setattr__(self, name, int(v))
        if not (math.isfinite(self.delta1) and self.delta1 > 0):
            raise ParameterError(f"delta1 must be > 0, got {self.delta1}")
        if not 0 < self.delta2 <= 0.5:
            raise ParameterError(f"delta2 must lie in (0, 1/2], got {self.delta2}")
        if not 0 < self.p < 0.25:
            raise ParameterError(f"p must lie in (0, 1/4), got {self.p}")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "WermerParams":
        return cls(int(obj["N1"]), int(obj["N2"]), float(obj["delta1"]), float(obj["delta2"]),
                   float(obj.get("p", 0.1)))


def stage_from_json(obj: dict) -> Stage:
    kind = obj["map"]
    if kind == "identity":
        return Identity()
    if kind == "F1":
        return ScaleF1(float(obj["delta"]))
    if kind == "F2":
        return FiberF2(int(obj["N"]))
    if kind == "F3":
        return FiberF3(int(obj["N"]), float(obj["delta"]))
    if kind == "phi":
        return WermerPhi()
    if kind == "inverse":
        return Inverted(stage_from_json(obj["of"]))
    if kind == "affine":
        from .core import complex_from_json
        U = np.array([[complex_from_json(v) for v in row] for row in obj["U"]])
        b = np.array([complex_from_json(v) for v in obj["b"]])
        return Affine(U, b)
    if kind == "composite":
        return CompositeMap.from_json(obj)
    if kind == "corrected":
        from .chain import CorrectedMap
        return CorrectedMap.from_json(obj)
    raise ParameterError(f"unknown map kind {kind!r}")


@dataclass(frozen=True, eq=False)
class CompositeMap(Stage):
    """Stages applied in list order: ``stages[0]`` acts first."""

    stages: tuple = ()
    label: str = "composite"
    params: WermerParams | None = None
    name = "composite"

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(self.stages))

    def then(self, other: Stage) -> "CompositeMap":
        """``other`` after ``self``."""
        more = other.stages if isinstance(other, CompositeMap) else (other,)
        return CompositeMap(self.stages + tuple(more), label=self.label)

    def forward(self, z):
        z = as_points(z)
        for s in self.stages:
            z = s.forward(z)
        return z

    def inverse(self, w):
        w = as_points(w)
        ok = np.ones(len(w), dtype=bool)
        for s in reversed(self.stages):
            w, ok_s = s.inverse(w)
            ok &= ok_s
            w = np.where(ok[:, None], w, np.nan)
        return w, ok

    def inverse_strict(self, w):
        w = as_points(w)
        ok = np.ones(len(w), dtype=bool)
        for k in range(len(self.stages) - 1, -1, -1):
            s = self.stages[k]
            w_new, ok_s = s.inverse(np.where(ok[:, None], w, 0.0))
            bad = ok & ~ok_s
            if bad.any():
                i = int(np.flatnonzero(bad)[0])
                raise InversionError(
                    f"stage {k} ({s.name}) failed to invert {int(bad.sum())} points",
                    {"stage_index": k, "stage": s.name, "failed": int(bad.sum()),
                     "first_point": [complex(v) for v in w[i]]})
            w = w_new
        return w

    def jacobian(self, z):
        z = as_points(z)
        J = np.broadcast_to(np.eye(3, dtype=complex), (len(z), 3, 3)).copy()
        for s in self.stages:
            J = s.jacobian(z) @ J
            z = s.forward(z)
        return J

    def to_json(self) -> dict:
        out = {"map": "composite", "label": self.label,
               "stages": [s.to_json() for s in self.stages]}
        if self.params is not None:
            out["params"] = self.params.to_json()
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "CompositeMap":
        params = WermerParams.from_json(obj["params"]) if "params" in obj else None
        return cls(tuple(stage_from_json(s) for s in obj["stages"]),
                   label=obj.get("label", "composite"), params=params)


def identity_map() -> CompositeMap:
    return CompositeMap((Identity(),), label="identity")


def base_map() -> CompositeMap:
    return CompositeMap((WermerPhi(),), label="phi")


def build_G(params: WermerParams) -> CompositeMap:
    """``F2^{N1} o F3^{N2,delta2} o F1^{delta1}``."""
    return CompositeMap((ScaleF1(params.delta1), FiberF3(params.N2, params.delta2),
                         FiberF2(params.N1)), label="G", params=params)


def build_F(params: WermerParams) -> CompositeMap:
    """``(F1^{delta1})^{-1} o phi o G``; fixes the z3-axis pointwise."""
    G = build_G(params)
    return CompositeMap(G.stages + (WermerPhi(), Inverted(ScaleF1(params.delta1))),
                        label="F", params=params)


def G_closed_form(params: WermerParams, z):
    z = as_points(z)
    hv = h(z[:, 2], params.N2, params.delta2)
    fv = f_N(z[:, 2], params.N1)
    d = params.delta1
    return np.stack([d * z[:, 0] * hv, d * z[:, 1] * hv * fv, z[:, 2]], axis=1)


def F_closed_form(params: WermerParams, z):
    z = as_points(z)
    z1, z2, z3 = z[:, 0], z[:, 1], z[:, 2]
    hv = h(z3, params.N2, params.delta2)
    fv = f_N(z3, params.N1)
    d2 = params.delta1**2
    return np.stack([z1 * hv,
                     d2 * z1 * z2**2 * hv**3 * fv**2 + 2.0 * z3 * z2 * hv * fv,
                     d2 * z1 * z2 * hv**2 * fv + z3], axis=1)


def deviation_points(domain: DomainSpec, nsamples: int, seed: int = 0,
                     anchors=None, collar: int | None = None) -> np.ndarray:
    """Interior + boundary grid, plus collar clusters around boundary ``anchors``.

    The Wermer modifications deviate most in a thin layer around the boundary
    point 0 of the z3-axis, so when the origin lies on the boundary it is
    always used as an anchor.  ``collar`` defaults to a quarter of ``nsamples``.
    """
    if nsamples < 1:
        raise ParameterError("nsamples must be >= 1")
    if collar is None:
        collar = nsamples // 4
    n_b = max(1, (nsamples - collar) // 2)
    pts = [grid_points(domain, max(nsamples - collar - n_b, 0), n_b, seed)]
    origin = np.zeros((1, 3), dtype=complex)
    extra = [] if anchors is None else list(as_points(anchors))
    if domain.ellipsoid() is not None and abs(float(domain.rho(origin)[0])) < 1e-12:
        extra.insert(0, origin[0])
    anchors = np.array(extra) if extra else None
    if anchors is not None and collar > 0:
        for k, a in enumerate(as_points(anchors)):
            pts.append(collar_points(domain, a, collar, seed=seed + 7 + k))
    return np.concatenate(pts)


def deviation_profile(map_: Stage, points) -> tuple[float, np.ndarray]:
    """Largest ``||map(z) - z||`` over ``points`` and the point where it occurs."""
    z = as_points(points)
    with np.errstate(all="ignore"):
        d = np.sqrt(sqnorm(map_.forward(z) - z))
    d = np.where(np.isfinite(d), d, np.inf)
    i = int(np.argmax(d))
    return float(d[i]), z[i]


def deviation_sup(map_: Stage, domain: DomainSpec, nsamples: int, seed: int = 0,
                  anchors=None, collar: int | None = None) -> float:
    """Sampled sup-norm of ``map - id`` on the closure of ``domain`` (a lower bound)."""
    return deviation_profile(map_, deviation_points(domain, nsamples, seed, anchors, collar))[0]


@dataclass(frozen=True)
class GBCoefficients:
    fitted_c1: float
    fitted_c2: float
    formula_c1: float
    formula_c2: float
    origin_c1: float
    origin_c2: float
    condition: float
    nsamples: int

    def to_json(self):
        return asdict(self)


def gb_quadratic_coeffs(params: WermerParams, nsamples: int = 400, seed: int = 0,
                        scale: float | None = None) -> GBCoefficients:
    """Fit ``c1, c2`` in ``2Re w3 + |w3|^2 + c1|w1|^2 + c2|w2|^2`` on ``G(bB)`` near 0.

    Boundary points of the shifted unit ball with ``|z3| <= scale`` are pushed
    through G; for each image the z3 part is known exactly, so the remaining
    two coefficients solve a linear least-squares problem.
    """
    if params.N1 < 2:
        raise ParameterError("gb_quadratic_coeffs needs N1 >= 2")
    if scale is None:
        scale = 1e-4 / max(params.N1, params.N2)
    rng = np.random.default_rng(seed)
    t = scale * rng.random(nsamples) ** 2 + 1e-3 * scale
    z3 = -t + 1j * scale * (rng.random(nsamples) - 0.5)
    r2 = -(2.0 * z3.real + np.abs(z3) ** 2)
    r2 = np.maximum(r2, 0.0)
    v = rng.standard_normal((nsamples, 4))
    a = v[:, 0] + 1j * v[:, 1]
    b = v[:, 2] + 1j * v[:, 3]
    nrm = np.sqrt(np.abs(a) ** 2 + np.abs(b) ** 2)
    z = np.stack([a / nrm * np.sqrt(r2), b / nrm * np.sqrt(r2), z3], axis=1)
    w = build_G(params).forward(z)
    A = np.stack([np.abs(w[:, 0]) ** 2, np.abs(w[:, 1]) ** 2], axis=1)
    rhs = -(2.0 * w[:, 2].real + np.abs(w[:, 2]) ** 2)
    col = np.linalg.norm(A, axis=0)
    if np.any(col == 0) or not np.all(np.isfinite(A)):
        raise FitError("degenerate sample set for the G(B) fit")
    An = A / col
    cond = float(np.linalg.cond(An))
    if cond > 1e8:
        raise FitError(f"G(B) quadratic fit ill-conditioned (cond={cond:.3g})")
    coef = np.linalg.lstsq(An, rhs, rcond=None)[0] / col
    d1, d2, N1 = params.delta1, params.delta2, params.N1
    return GBCoefficients(
        fitted_c1=float(coef[0]), fitted_c2=float(coef[1]),
        formula_c1=d2 / d1, formula_c2=d2**2 / ((N1 - 1) ** 2 * d1),
        origin_c1=(d2 / d1) ** 2, origin_c2=(d2 / (d1 * (N1 - 1))) ** 2,
        condition=cond, nsamples=nsamples)


def image_classify(map_: Stage, domain: DomainSpec, w, tol: float = 1e-9):
    """Membership of ``w`` in ``map(domain)`` through stagewise inversion.

    Returns integer codes 0 exterior, 1 interior, 2 boundary band, 3 inversion failed.
    """
    w = as_points(w)
    z, ok = map_.inverse(w)
    codes = np.full(len(w), 3, dtype=int)
    with np.errstate(all="ignore"):
        r = domain.rho(np.where(ok[:, None], z, 0.0))
    codes[ok & (r < -tol)] = 1
    codes[ok & (r > tol)] = 0
    codes[ok & (np.abs(r) <= tol)] = 2
    return codes


DEFAULT_DOMAIN = ShiftedBallB()
