"""Numerical certificates: zero-freeness, inclusion, witness circles, hull obstruction."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .core import (DomainSpec, WitnessCircle, as_points, collar_points, sample_boundary,
                   sample_interior, sqnorm)
from .errors import (ContourError, NoWitnessError, ParameterError,
                     QuadratureError)
from .maps import Stage, f_N, f_N_prime

CONTOUR_MIN_MODULUS = 1e-8
HULL_RATIO_TOL = 1e-10
_GL_ORDER = 16


# ---------------------------------------------------------------------------
# argument principle


def _contour_nodes(rectangle, n_points: int):
    """Composite Gauss-Legendre nodes and weights (dz) on the positively oriented rectangle."""
    x0, x1, y0, y1 = rectangle
    corners = [complex(x0, y0), complex(x1, y0), complex(x1, y1), complex(x0, y1)]
    lengths = [x1 - x0, y1 - y0, x1 - x0, y1 - y0]
    perim = sum(lengths)
    n_panels = max(4, n_points // _GL_ORDER)
    t, w = np.polynomial.legendre.leggauss(_GL_ORDER)
    nodes, weights = [], []
    for k in range(4):
        a, b = corners[k], corners[(k + 1) % 4]
        m = max(1, int(round(n_panels * lengths[k] / perim)))
        edges = np.linspace(0.0, 1.0, m + 1)
        for lo, hi in zip(edges[:-1], edges[1:]):
            s = 0.5 * (hi - lo) * t + 0.5 * (hi + lo)
            nodes.append(a + (b - a) * s)
            weights.append((b - a) * 0.5 * (hi - lo) * w)
    return np.concatenate(nodes), np.concatenate(weights)


def _fd_derivative(f, z, step=1e-6):
    hstep = step * np.maximum(1.0, np.abs(z))
    return (f(z + hstep) - f(z - hstep)) / (2.0 * hstep)


def winding_integral(scalar_map: Callable, rectangle, n_points: int,
                     derivative: Callable | None = None) -> tuple[complex, float]:
    """``(1/2 pi i) \\oint f'/f dz`` and the minimum of ``|f|`` at the nodes."""
    z, dz = _contour_nodes(rectangle, n_points)
    fv = np.asarray(scalar_map(z), dtype=complex)
    dv = np.asarray(derivative(z) if derivative else _fd_derivative(scalar_map, z), dtype=complex)
    mod = float(np.min(np.abs(fv)))
    if not mod > CONTOUR_MIN_MODULUS:
        raise ContourError(f"|f| = {mod:.3g} on the contour (guard {CONTOUR_MIN_MODULUS:g})")
    return complex(np.sum(dv / fv * dz) / (2j * math.pi)), mod


@dataclass(frozen=True)
class WindingResult:
    winding: int
    integral: complex
    previous: complex
    quadrature_points: int
    min_modulus: float


def winding_details(scalar_map: Callable, rectangle, quadrature_points: int = 1024,
                    derivative: Callable | None = None,
                    max_points: int = 1 << 18) -> WindingResult:
    x0, x1, y0, y1 = rectangle
    if not (x0 < x1 and y0 < y1):
        raise ParameterError(f"degenerate rectangle {rectangle}")
    n = max(int(quadrature_points), 4 * _GL_ORDER)
    prev, mod = winding_integral(scalar_map, rectangle, n, derivative)
    while n < max_points:
        n *= 2
        cur, m2 = winding_integral(scalar_map, rectangle, n, derivative)
        mod = min(mod, m2)
        k = round(cur.real)
        if abs(cur - prev) < 0.25 and abs(cur - k) < 0.25:
            return WindingResult(int(k), cur, prev, n, mod)
        prev = cur
    raise QuadratureError(f"contour quadrature not stable up to {max_points} points")


def winding_number(scalar_map: Callable, rectangle, quadrature_points: int = 1024,
                   derivative: Callable | None = None) -> int:
    """Number of zeros (with multiplicity) of ``scalar_map`` inside ``rectangle``."""
    return winding_details(scalar_map, rectangle, quadrature_points, derivative).winding


@dataclass(frozen=True)
class ZeroFreeCertificate:
    N: int
    rectangle: tuple
    winding: int
    quadrature_points: int
    integral_re: float
    integral_im: float
    doubling_change: float
    min_modulus: float

    @property
    def valid(self) -> bool:
        return self.winding == 0 and self.doubling_change < 0.25

    def to_json(self):
        out = asdict(self)
        out["rectangle"] = list(self.rectangle)
        out["valid"] = self.valid
        out["kind"] = "zero_free"
        return out


def certify_zero_free(N: int, rectangle, quadrature_points: int = 1024) -> ZeroFreeCertificate:
    """Argument-principle count of zeros of ``f_N`` in a rectangle of the left half-plane."""
    rect = tuple(float(v) for v in rectangle)
    if rect[1] >= 0:
        raise ContourError("rectangle must stay inside Re z3 < 0")
    res = winding_details(lambda z: f_N(z, N), rect, quadrature_points,
                          derivative=lambda z: f_N_prime(z, N))
    return ZeroFreeCertificate(int(N), rect, res.winding, res.quadrature_points,
                               res.integral.real, res.integral.imag,
                               abs(res.integral - res.previous), res.min_modulus)


def min_modulus_scan(scalar_map: Callable, rectangle, n: int = 100) -> float:
    x0, x1, y0, y1 = rectangle
    X, Y = np.meshgrid(np.linspace(x0, x1, n), np.linspace(y0, y1, n))
    return float(np.min(np.abs(scalar_map((X + 1j * Y).ravel()))))


# ---------------------------------------------------------------------------
# inclusion


@dataclass
class InclusionReport:
    inner: DomainSpec
    outer: DomainSpec
    nsamples: int
    violations: int
    inversion_failures: int
    worst_margin: float
    seed: int
    worst_point: list = field(default_factory=list)

    @property
    def valid(self) -> bool:
        return self.violations == 0

    def to_json(self):
        from .core import complex_to_json
        return {"kind": "inclusion", "inner": self.inner.to_json(), "outer": self.outer.to_json(),
                "nsamples": self.nsamples, "violations": self.violations,
                "inversion_failures": self.inversion_failures,
                "worst_margin": self.worst_margin, "seed": self.seed,
                "worst_point": [complex_to_json(v) for v in self.worst_point],
                "valid": self.valid}


def inclusion_samples(inner: DomainSpec, nsamples: int, seed: int,
                      offset: float = 1e-9) -> np.ndarray:
    """Half interior samples, half boundary samples nudged inward.

    The inward offset is ``offset`` times the size of the domain, so tiny
    localised domains are not stepped across.
    """
    n_b = nsamples // 2
    parts = [sample_interior(inner, nsamples - n_b, seed)]
    if n_b:
        bb = inner.bounding_ball()
        scale = min(1.0, bb[1]) if bb is not None else 1.0
        offset = offset * scale
        zb = sample_boundary(inner, n_b, seed + 1, tol=min(1e-12, 1e-3 * offset))
        g = inner.grad(zb)
        gn = np.sqrt(sqnorm(g))
        parts.append(zb - offset * g / np.where(gn > 0, gn, 1.0)[:, None])
    return np.concatenate(parts)


def check_inclusion(inner: DomainSpec, map_: Stage, outer: DomainSpec, nsamples: int = 10_000,
                    seed: int = 0) -> InclusionReport:
    """Does ``inner`` lie in ``map(outer)``?  Checked through ``map^{-1}``."""
    x = inclusion_samples(inner, nsamples, seed)
    z, ok = map_.inverse(x)
    with np.errstate(all="ignore"):
        r = outer.rho(np.where(ok[:, None], z, 0.0))
    margin = np.where(ok, -r, -np.inf)
    i = int(np.argmin(margin))
    return InclusionReport(inner, outer, len(x), int(np.sum(margin <= 0)), int(np.sum(~ok)),
                           float(margin[i]), seed, list(x[i]))


# ---------------------------------------------------------------------------
# witness circles


def all_preimages(map_: Stage, w) -> np.ndarray:
    """Every algebraic preimage of one point through a stage pipeline."""
    stages = getattr(map_, "stages", (map_,))
    cands = as_points(w)[:1]
    for s in reversed(stages):
        nxt = []
        for c in cands:
            for z, ok in s.branches(c[None, :]):
                if ok[0] and np.all(np.isfinite(z[0])):
                    nxt.append(z[0])
        if not nxt:
            return np.empty((0, 3), dtype=complex)
        cands = np.unique(np.round(np.array(nxt), 15), axis=0)
    return cands


@dataclass(frozen=True)
class SearchGrid:
    """Radii ``r`` tried in order; for each, ``alpha = r * ratio`` over ``alpha_ratios``."""

    radii: tuple
    alpha_ratios: tuple

    @classmethod
    def default(cls, delta_ball: float) -> "SearchGrid":
        radii = tuple(delta_ball / 2 * 0.5**k for k in range(8))
        ratios = tuple(10.0 ** (-2 - 0.25 * k) for k in range(41)) + (10**-1.5, 10**-1.0)
        return cls(radii, ratios)

    def pairs(self):
        for r in self.radii:
            for t in self.alpha_ratios:
                yield r, r * t


def _circle_margin(map_: Stage, domain: DomainSpec, pts: np.ndarray) -> float:
    z, ok = map_.inverse(pts)
    if not ok.all():
        return -math.inf
    with np.errstate(all="ignore"):
        m = -domain.rho(z)
    return float(np.min(m)) if np.all(np.isfinite(m)) else -math.inf


def find_witness_circle(map_: Stage, domain: DomainSpec, q=None, delta_ball: float = 0.2,
                        search_grid: SearchGrid | None = None, n_theta: int = 64,
                        mu_min: float = 1e-6, frame=None,
                        exclusion_check: Callable | None = None) -> WitnessCircle:
    """First ``(r, alpha)`` on the grid whose circle has all preimages inside ``domain``.

    ``exclusion_check(witness) -> bool`` may reject a candidate whose centre is
    not excluded; by default the algebraic preimage analysis is used.
    """
    if n_theta < 64:
        raise ParameterError("n_theta must be >= 64")
    q = np.zeros(3, dtype=complex) if q is None else as_points(q)[0]
    grid = search_grid or SearchGrid.default(delta_ball)
    if exclusion_check is None:
        exclusion_check = lambda wc: _algebraic_exclusion(map_, domain, wc)[0]
    for r, a in grid.pairs():
        if not 0 < a < r < delta_ball:
            continue
        wc = WitnessCircle(r=r, alpha=a, q=q, frame=frame)
        m = _circle_margin(map_, domain, wc.circle_points(n_theta))
        if m >= mu_min and exclusion_check(wc):
            return WitnessCircle(r=r, alpha=a, q=q, frame=frame, margin=m)
    raise NoWitnessError("no witness circle on the search grid")


def _algebraic_exclusion(map_: Stage, domain: DomainSpec, wc: WitnessCircle):
    """Centre excluded iff every algebraic preimage lies outside the closed domain."""
    cands = all_preimages(map_, wc.center)
    if len(cands) == 0:
        return True, math.inf
    r = domain.rho(cands)
    return bool(np.all(r > 0)), float(np.min(r))


def _closure_preimage(map_: Stage, domain: DomainSpec, q, tol: float = 1e-9):
    """A preimage of ``q`` on the closed domain, used to focus exclusion sampling."""
    z, ok = map_.inverse(as_points(q))
    if ok[0] and domain.rho(z)[0] <= tol:
        return z
    cands = all_preimages(map_, q)
    if len(cands):
        r = domain.rho(cands)
        if r.min() <= tol:
            return cands[int(np.argmin(r))][None, :]
    q = as_points(q)
    with np.errstate(all="ignore"):
        fixed = np.allclose(map_.forward(q), q, rtol=0, atol=1e-14)
    if fixed and abs(float(domain.rho(q)[0])) <= tol:
        return q
    return None


def sampled_exclusion_distance(map_: Stage, domain: DomainSpec, center, anchor=None,
                               nsamples: int = 4000, seed: int = 0) -> float:
    """Min distance from ``center`` to the image of a boundary-neighbourhood sample."""
    parts = [sample_boundary(domain, nsamples // 2, seed)]
    if anchor is not None and domain.ellipsoid() is not None:
        parts.append(collar_points(domain, anchor, nsamples - nsamples // 2, seed=seed + 3,
                                   min_scale=1e-12))
    z = np.concatenate(parts)
    with np.errstate(all="ignore"):
        d = np.sqrt(sqnorm(map_.forward(z) - as_points(center)))
    d = d[np.isfinite(d)]
    return float(d.min()) if d.size else math.inf


# ---------------------------------------------------------------------------
# maximum principle on the witness disk


def monomial_exponents(max_degree: int) -> np.ndarray:
    return np.array([(a, b, t - a - b) for t in range(max_degree + 1)
                     for a in range(t + 1) for b in range(t - a + 1)], dtype=int)


def _eval_poly(coef, exps, x):
    mono = np.prod(x[:, None, :] ** exps[None, :, :], axis=2)
    return mono @ coef


def max_modulus_ratio(poly: Callable, witness: WitnessCircle, n_theta: int = 64,
                      disk_map: Callable | None = None) -> float:
    """``|P(centre)| / max |P|`` over ``n_theta`` points of the witness boundary."""
    dm = disk_map or witness.disk_map
    zeta = np.exp(2j * np.pi * np.arange(n_theta) / n_theta)
    vb = np.abs(poly(as_points(dm(zeta))))
    vc = abs(complex(np.asarray(poly(as_points(dm(np.zeros(1)))))[0]))
    return vc / float(vb.max())


def hull_obstruction_test(witness: WitnessCircle, q=None, npolys: int = 200, max_degree: int = 5,
                          seed: int = 42, n_theta: int | None = None,
                          disk_map: Callable | None = None) -> float:
    """Largest ratio ``|P(centre)| / max_boundary |P|`` over random polynomials.

    Polynomials are written in coordinates centred at the disk centre and scaled
    by its radius, which keeps the coefficients well conditioned.
    """
    if q is not None and not np.allclose(as_points(q)[0], witness.q):
        raise ParameterError("q does not match the witness base point")
    n_theta = n_theta or max(64, 4 * max_degree + 1)
    dm = disk_map or witness.disk_map
    c = as_points(dm(np.zeros(1)))[0]
    zeta = np.exp(2j * np.pi * np.arange(n_theta) / n_theta)
    xb = (as_points(dm(zeta)) - c) / witness.r
    xc = np.zeros((1, 3), dtype=complex)
    exps = monomial_exponents(max_degree)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(npolys):
        coef = (rng.standard_normal(len(exps)) + 1j * rng.standard_normal(len(exps))) / math.sqrt(2)
        vb = np.abs(_eval_poly(coef, exps, xb))
        scale = float(vb.max())
        if scale == 0:
            continue
        vc = abs(complex(_eval_poly(coef / scale, exps, xc)[0]))
        worst = max(worst, vc / float((vb / scale).max()))
    return worst


# ---------------------------------------------------------------------------
# bundled certificate


@dataclass(frozen=True)
class CertifyConfig:
    n_theta: int = 64
    mu_min: float = 1e-6
    npolys: int = 200
    max_degree: int = 5
    seed: int = 42
    exclusion_samples: int = 4000
    search_grid: SearchGrid | None = None

    def to_json(self):
        out = asdict(self)
        out["search_grid"] = None if self.search_grid is None else {
            "radii": list(self.search_grid.radii),
            "alpha_ratios": list(self.search_grid.alpha_ratios)}
        return out


@dataclass
class ObstructionCertificate:
    witness: WitnessCircle
    boundary_margin: float
    boundary_in_domain: bool
    center_excluded: bool
    exclusion_method: str
    algebraic_margin: float
    sampled_distance: float
    hull_tests: int
    max_ratio: float
    config: CertifyConfig
    domain: DomainSpec

    @property
    def valid(self) -> bool:
        return (self.boundary_in_domain and self.center_excluded
                and self.max_ratio <= 1.0 + HULL_RATIO_TOL)

    def to_json(self):
        return {"kind": "obstruction", "witness": self.witness.to_json(),
                "domain": self.domain.to_json(),
                "boundary_in_domain": {"pass": self.boundary_in_domain,
                                       "min_margin": self.boundary_margin},
                "center_excluded": {"pass": self.center_excluded,
                                    "method": self.exclusion_method,
                                    "algebraic_margin": self.algebraic_margin,
                                    "sampled_distance": self.sampled_distance},
                "hull_tests": {"count": self.hull_tests, "max_ratio": self.max_ratio,
                               "tolerance": HULL_RATIO_TOL},
                "config": self.config.to_json(), "valid": self.valid}


def nonrunge_certificate(map_: Stage, domain: DomainSpec, q=None, delta_ball: float = 0.2,
                         config: CertifyConfig | None = None, frame=None) -> ObstructionCertificate:
    """Witness circle + centre exclusion + maximum-principle test at ``q``."""
    cfg = config or CertifyConfig()
    q = np.zeros(3, dtype=complex) if q is None else as_points(q)[0]
    wc = find_witness_circle(map_, domain, q, delta_ball, cfg.search_grid, cfg.n_theta,
                             cfg.mu_min, frame)
    algebraic_ok, alg_margin = _algebraic_exclusion(map_, domain, wc)
    anchor = _closure_preimage(map_, domain, q)
    dist = sampled_exclusion_distance(map_, domain, wc.center, anchor, cfg.exclusion_samples,
                                      cfg.seed)
    ratio = hull_obstruction_test(wc, None, cfg.npolys, cfg.max_degree, cfg.seed, cfg.n_theta)
    return ObstructionCertificate(
        witness=wc, boundary_margin=wc.margin, boundary_in_domain=wc.margin >= cfg.mu_min,
        center_excluded=bool(algebraic_ok and dist > 0), exclusion_method="algebraic+sampled",
        algebraic_margin=alg_margin, sampled_distance=dist, hull_tests=cfg.npolys,
        max_ratio=ratio, config=cfg, domain=domain)
