"""Finite chain of conjugated Wermer modifications on the unit ball of C^3.

Stage ``j`` places a W-degenerate boundary point at ``alpha_{j-1}``:

* a Wermer modification ``F_j`` is tuned on the model ball B (ball mode),
* it is moved to ``alpha_{j-1}`` by ``A(z) = U(z + e3)`` with ``U e3 = alpha``,
* a polynomial correction removes its 2-jet at the earlier points,
* ``phi_j = phi_{j-1} o psi_j`` and a witness disk is placed near ``alpha_{j-1}``.

Earlier witnesses are re-validated forward only: a later composite ``chi``
cannot destroy a witness if it moves points near the witness preimages by
less than half their distance to the sphere (boundary circle) or to the
preimage of the disk centre (excluded centre).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.stats import norm, qmc

from .certify import (CertifyConfig, HULL_RATIO_TOL, SearchGrid, all_preimages,
                      hull_obstruction_test, nonrunge_certificate)
from .composite import CompositeMap, WermerParams, build_F, stage_from_json
from .core import (EuclideanBall, OmegaRegion, ShiftedBallB, WitnessCircle, as_points,
                   collar_points, complex_from_json, complex_to_json, grid_points, sqnorm)
from .errors import (ChainError, ConditioningError, CorrectionBudgetError, NoWitnessError,
                     ParameterError)
from .maps import Affine, Stage, collision_pairs
from .tuner import TuningTargets, tune

E3 = np.array([0, 0, 1], dtype=complex)
# the fixed points alpha_k sit on the boundary of their tangent balls
OMEGA_TOL = 1e-12


# ---------------------------------------------------------------------------
# boundary points and conjugations


def dense_boundary_points(n: int, seed: int = 0) -> np.ndarray:
    """Quasi-uniform points on the unit sphere of C^3 (scrambled Halton + normal CDF)."""
    if n < 1:
        raise ParameterError("n must be >= 1")
    u = qmc.Halton(d=6, scramble=True, seed=seed).random(n)
    x = norm.ppf(np.clip(u, 1e-12, 1 - 1e-12))
    x /= np.linalg.norm(x, axis=1)[:, None]
    return x[:, :3] + 1j * x[:, 3:]


def unitary_with_last_column(alpha) -> np.ndarray:
    a = np.asarray(alpha, dtype=complex).reshape(3)
    nrm = np.linalg.norm(a)
    if not nrm > 0:
        raise ParameterError("alpha must be non-zero")
    a = a / nrm
    M = np.column_stack([a, np.eye(3, dtype=complex)])
    Q, _ = np.linalg.qr(M)
    # fix the phase so that the first column is exactly alpha
    Q[:, 0] *= np.vdot(Q[:, 0], a) / abs(np.vdot(Q[:, 0], a))
    Q[:, 0] = a
    return np.column_stack([Q[:, 1], Q[:, 2], Q[:, 0]])


def conjugation_to(alpha) -> Affine:
    """``A(z) = U(z + e3)``: takes B (tangent to 0) onto the unit ball with ``A(0) = alpha``."""
    a = np.asarray(alpha, dtype=complex).reshape(3)
    if not np.linalg.norm(a) > 0:
        raise ParameterError("alpha must be non-zero")
    if abs(np.linalg.norm(a) - 1.0) > 1e-12:
        raise ParameterError("alpha must lie on the unit sphere")
    U = unitary_with_last_column(a)
    return Affine(U, U @ E3)


# ---------------------------------------------------------------------------
# 2-jets


@dataclass
class Jet2:
    """Value, gradient and Hessian of a holomorphic function at a point.

    ``c0`` has shape S, ``c1`` S+(3,), ``c2`` S+(3, 3) for scalar (S=()) or
    vector-valued (S=(3,)) functions.
    """

    c0: np.ndarray
    c1: np.ndarray
    c2: np.ndarray

    @classmethod
    def linear_power(cls, a: np.ndarray, power: int) -> "Jet2":
        """Jet of ``(1 + a.h)^power`` at ``h = 0``."""
        a = np.asarray(a, dtype=complex)
        return cls(np.array(1.0 + 0j), power * a, power * (power - 1) * np.outer(a, a))

    @classmethod
    def one(cls) -> "Jet2":
        return cls(np.array(1.0 + 0j), np.zeros(3, complex), np.zeros((3, 3), complex))

    def __mul__(self, other: "Jet2") -> "Jet2":
        # both scalar jets
        c0 = self.c0 * other.c0
        c1 = self.c0 * other.c1 + other.c0 * self.c1
        c2 = (self.c0 * other.c2 + other.c0 * self.c2
              + np.outer(self.c1, other.c1) + np.outer(other.c1, self.c1))
        return Jet2(c0, c1, c2)

    def divide_by(self, L: "Jet2") -> "Jet2":
        """``self / L`` for vector-valued ``self`` and scalar ``L`` with ``L.c0 != 0``."""
        t0 = self.c0 / L.c0
        t1 = (self.c1 - t0[:, None] * L.c1[None, :]) / L.c0
        t2 = (self.c2 - t0[:, None, None] * L.c2[None]
              - t1[:, :, None] * L.c1[None, None, :]
              - L.c1[None, :, None] * t1[:, None, :]) / L.c0
        return Jet2(t0, t1, t2)


def holomorphic_2jet(g, x, radius: float = 0.05, n: int = 32) -> Jet2:
    """2-jet of a holomorphic map ``g: C^3 -> C^3`` at ``x`` by Cauchy integrals on circles."""
    x = np.asarray(x, dtype=complex).reshape(3)
    theta = 2.0 * np.pi * np.arange(n) / n
    ring = radius * np.exp(1j * theta)
    c0 = g(x[None, :])[0]

    def coeffs(v):
        vals = g(x[None, :] + ring[:, None] * v[None, :])
        c = np.fft.fft(vals, axis=0) / n
        return c[1] / radius, 2.0 * c[2] / radius**2

    eye = np.eye(3, dtype=complex)
    grad = np.zeros((3, 3), dtype=complex)
    hess = np.zeros((3, 3, 3), dtype=complex)
    for i in range(3):
        d1, d2 = coeffs(eye[i])
        grad[:, i] = d1
        hess[:, i, i] = d2
    for i in range(3):
        for j in range(i + 1, 3):
            _, d2 = coeffs(eye[i] + eye[j])
            mixed = 0.5 * (d2 - hess[:, i, i] - hess[:, j, j])
            hess[:, i, j] = hess[:, j, i] = mixed
    return Jet2(c0, grad, hess)


# ---------------------------------------------------------------------------
# polynomial corrections


@dataclass(frozen=True, eq=False)
class PolynomialCorrection:
    """``P(z) = sum_k L_k(z) T_k(z - x_k)`` with ``L_k = prod_m l_km^{o_m}``.

    ``l_km`` is the linear form equal to 1 at ``x_k`` and 0 at ``x_m``; ``T_k``
    is a quadratic vector polynomial.  P vanishes to order ``o_m`` at every
    point whose own block ``T_m`` is zero (anchors).
    """

    points: np.ndarray
    orders: tuple
    T0: np.ndarray
    T1: np.ndarray
    T2: np.ndarray

    def _form(self, k, m):
        d = self.points[k] - self.points[m]
        return np.conj(d) / np.vdot(d, d).real

    def basis(self, z, k):
        z = as_points(z)
        L = np.ones(len(z), dtype=complex)
        for m in range(len(self.points)):
            if m != k:
                L *= ((z - self.points[m]) @ self._form(k, m)) ** self.orders[m]
        return L

    def basis_jet(self, k) -> Jet2:
        J = Jet2.one()
        for m in range(len(self.points)):
            if m != k:
                J = J * Jet2.linear_power(self._form(k, m), self.orders[m])
        return J

    def __call__(self, z):
        z = as_points(z)
        out = np.zeros_like(z)
        for k in range(len(self.points)):
            if not (np.any(self.T0[k]) or np.any(self.T1[k]) or np.any(self.T2[k])):
                continue
            d = z - self.points[k]
            T = (self.T0[k][None, :] + d @ self.T1[k].T
                 + 0.5 * np.einsum("cij,ni,nj->nc", self.T2[k], d, d))
            out += self.basis(z, k)[:, None] * T
        return out

    def is_zero(self) -> bool:
        return not (np.any(self.T0) or np.any(self.T1) or np.any(self.T2))

    def to_json(self):
        enc = lambda a: [complex_to_json(v) for v in np.asarray(a).ravel()]
        return {"points": enc(self.points), "orders": list(self.orders),
                "T0": enc(self.T0), "T1": enc(self.T1), "T2": enc(self.T2)}

    @classmethod
    def from_json(cls, obj):
        dec = lambda a, shape: np.array([complex_from_json(v) for v in a],
                                        dtype=complex).reshape(shape)
        m = len(obj["orders"])
        return cls(dec(obj["points"], (m, 3)), tuple(int(o) for o in obj["orders"]),
                   dec(obj["T0"], (m, 3)), dec(obj["T1"], (m, 3, 3)), dec(obj["T2"], (m, 3, 3, 3)))

    @classmethod
    def zero(cls):
        return cls(np.zeros((0, 3), complex), (), np.zeros((0, 3), complex),
                   np.zeros((0, 3, 3), complex), np.zeros((0, 3, 3, 3), complex))


@dataclass(frozen=True, eq=False)
class CorrectedMap(Stage):
    """``base(z) - C(z)`` with ``C = P`` or, given a frame A, ``C(z) = U^H P(A z)``.

    The framed form is the same map written in the model coordinates of A.
    """

    base: Stage
    correction: PolynomialCorrection
    frame: Affine | None = None
    sup_norm: float = 0.0
    name = "corrected"

    def term(self, z):
        z = as_points(z)
        if self.correction.is_zero():
            return np.zeros_like(z)
        if self.frame is None:
            return self.correction(z)
        return self.correction(self.frame.forward(z)) @ np.conj(self.frame.U)

    def forward(self, z):
        z = as_points(z)
        return self.base.forward(z) - self.term(z)

    def _refine(self, w, z, ok, iters=40):
        """Newton steps on ``forward(z) = w`` from the base preimage ``z``."""
        if self.correction.is_zero():
            return z, ok
        z = np.where(ok[:, None], z, 0.0)
        with np.errstate(all="ignore"):
            for _ in range(iters):
                r = self.forward(z) - w
                step = np.linalg.solve(self.jacobian(z), r[:, :, None])[:, :, 0]
                step = np.where(np.isfinite(step), step, 0.0)
                z = z - step
                scale = np.maximum(1.0, np.sqrt(sqnorm(z)))
                if np.all(np.sqrt(sqnorm(step)) <= 1e-15 * scale):
                    break
            res = np.sqrt(sqnorm(self.forward(z) - w))
        ok = ok & np.isfinite(res) & (res <= 1e-12 * np.maximum(1.0, np.sqrt(sqnorm(w))))
        return np.where(ok[:, None], z, np.nan), ok

    def inverse(self, w):
        w = as_points(w)
        z, ok = self.base.inverse(w)
        return self._refine(w, z, ok)

    def branches(self, w):
        w = as_points(w)
        out = []
        for c in all_preimages(self.base, w[:1]):
            z, ok = self._refine(w[:1], c[None, :], np.ones(1, dtype=bool))
            out.append((z, ok))
        return out or [(np.full((1, 3), np.nan, complex), np.zeros(1, dtype=bool))]

    def jacobian(self, z, step: float = 1e-7):
        z = as_points(z)
        J = self.base.jacobian(z)
        if self.correction.is_zero():
            return J
        for i in range(3):
            e = np.zeros(3, complex)
            e[i] = step
            J[:, :, i] -= (self.term(z + e) - self.term(z - e)) / (2 * step)
        return J

    def to_json(self):
        return {"map": "corrected", "base": self.base.to_json(),
                "correction": self.correction.to_json(),
                "frame": None if self.frame is None else self.frame.to_json(),
                "sup_norm": self.sup_norm}

    @classmethod
    def from_json(cls, obj):
        frame = stage_from_json(obj["frame"]) if obj.get("frame") else None
        return cls(stage_from_json(obj["base"]), PolynomialCorrection.from_json(obj["correction"]),
                   frame, float(obj.get("sup_norm", 0.0)))


def _min_separation(points) -> float:
    if len(points) < 2:
        return math.inf
    d = points[:, None, :] - points[None, :, :]
    dist = np.sqrt(np.sum(np.abs(d) ** 2, axis=-1))
    dist[np.diag_indices(len(points))] = np.inf
    return float(dist.min())


def build_correction(base: Stage, order3_points=(), value_points=(), anchors=(), *,
                     sigma_min: float = 1e-3, budget: float | None = None,
                     budget_points=None, jet_radius: float = 0.05) -> CorrectedMap:
    """Correct ``base`` so that ``base - id`` has zero 2-jet at ``order3_points``.

    ``value_points`` are ``(point, target)`` pairs with ``corrected(point) = target``;
    ``anchors`` are points where the correction itself vanishes to third order.
    The sup-norm of the correction over ``budget_points`` is recorded; above
    ``budget`` a :class:`CorrectionBudgetError` is raised.
    """
    o3 = [np.asarray(p, complex).reshape(3) for p in order3_points]
    vp = [(np.asarray(p, complex).reshape(3), np.asarray(t, complex).reshape(3))
          for p, t in value_points]
    an = [np.asarray(p, complex).reshape(3) for p in anchors]
    pts = np.array(o3 + [p for p, _ in vp] + an, dtype=complex).reshape(-1, 3)
    orders = tuple([3] * len(o3) + [1] * len(vp) + [3] * len(an))
    if _min_separation(pts) < sigma_min:
        raise ConditioningError(f"interpolation points closer than sigma_min={sigma_min:g}")
    m = len(pts)
    T0 = np.zeros((m, 3), complex)
    T1 = np.zeros((m, 3, 3), complex)
    T2 = np.zeros((m, 3, 3, 3), complex)
    shell = PolynomialCorrection(pts, orders, T0, T1, T2)
    g = lambda z: base.forward(z) - z
    for k in range(len(o3)):
        J = holomorphic_2jet(g, pts[k], jet_radius)
        T = J.divide_by(shell.basis_jet(k))
        T0[k], T1[k], T2[k] = T.c0, T.c1, T.c2
    for i, (p, t) in enumerate(vp):
        k = len(o3) + i
        T0[k] = (base.forward(p[None, :])[0] - t) / shell.basis_jet(k).c0
    corr = PolynomialCorrection(pts, orders, T0, T1, T2)
    sup = 0.0
    if budget_points is not None and not corr.is_zero():
        sup = float(np.max(np.sqrt(sqnorm(corr(budget_points)))))
    if budget is not None and sup > budget:
        raise CorrectionBudgetError(f"correction sup-norm {sup:.3g} exceeds budget {budget:.3g}",
                                    sup_norm=sup, budget=budget)
    return CorrectedMap(base, corr, None, sup)


# ---------------------------------------------------------------------------
# chain state


@dataclass(frozen=True)
class ChainConfig:
    eps: float = 0.5
    seed: int = 0
    delta0: float = 0.5
    grid_points: int = 10_000
    collar_points: int = 2000
    tune_nsamples: int = 20_000
    tune_inclusion_samples: int = 2000
    tune_fraction: float = 1.0
    n_max: int = 2**30
    mu_min: float = 1e-13
    n_theta: int = 64
    hull_theta: int = 256
    npolys: int = 200
    max_degree: int = 5
    sigma_min: float = 1e-3
    jet_radius: float = 0.05
    max_retries: int = 4
    revalidation_samples: int = 4000
    value_tol: float = 1e-10

    def to_json(self):
        from dataclasses import asdict
        return asdict(self)

    @classmethod
    def from_json(cls, obj):
        return cls(**obj)


@dataclass
class ChainStage:
    index: int
    alpha: np.ndarray
    eps: float
    delta: float
    params: WermerParams
    psi: CorrectedMap
    model: CorrectedMap
    witness: WitnessCircle
    certificate: dict
    circle_preimages: np.ndarray
    circle_margin: float
    center_preimages: np.ndarray
    center_margin: float
    attempts: int = 1

    def to_json(self):
        enc = lambda a: [[complex_to_json(v) for v in row] for row in np.atleast_2d(a)]
        return {"index": self.index, "alpha": [complex_to_json(v) for v in self.alpha],
                "eps": self.eps, "delta": self.delta, "params": self.params.to_json(),
                "psi": self.psi.to_json(), "witness": self.witness.to_json(),
                "certificate": self.certificate,
                "circle_preimages": enc(self.circle_preimages),
                "circle_margin": self.circle_margin,
                "center_preimages": enc(self.center_preimages),
                "center_margin": self.center_margin, "attempts": self.attempts}

    @classmethod
    def from_json(cls, obj):
        dec = lambda a: np.array([[complex_from_json(v) for v in row] for row in a],
                                 dtype=complex).reshape(-1, 3)
        psi = CorrectedMap.from_json(obj["psi"])
        alpha = np.array([complex_from_json(v) for v in obj["alpha"]])
        A = conjugation_to(alpha)
        params = WermerParams.from_json(obj["params"])
        model = CorrectedMap(build_F(params), psi.correction, A, psi.sup_norm)
        return cls(int(obj["index"]), alpha, float(obj["eps"]), float(obj["delta"]), params,
                   psi, model, WitnessCircle.from_json(obj["witness"]), obj["certificate"],
                   dec(obj["circle_preimages"]), float(obj["circle_margin"]),
                   dec(obj["center_preimages"]), float(obj["center_margin"]),
                   int(obj.get("attempts", 1)))


@dataclass
class ChainState:
    config: ChainConfig
    alphas: np.ndarray
    stages: list = field(default_factory=list)
    ledger: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(self.stages)

    @property
    def eps_schedule(self):
        return [s.eps for s in self.stages]

    @property
    def delta_schedule(self):
        return [s.delta for s in self.stages]

    def phi(self, z, upto: int | None = None, start: int = 0):
        """``psi_{start+1} o ... o psi_upto`` applied to ``z`` (``phi_upto`` for start 0)."""
        upto = self.n if upto is None else upto
        z = as_points(z)
        for s in reversed(self.stages[start:upto]):
            z = s.psi.forward(z)
        return z

    def disk_map(self, j: int):
        """Parametrisation of the witness disk ``D_j = phi_{j-1}(flat disk)``."""
        wc = self.stages[j - 1].witness
        return lambda zeta: self.phi(wc.disk_map(zeta), upto=j - 1)

    @property
    def valid(self) -> bool:
        return bool(self.ledger) and all(v["pass"] for v in self.ledger.values())

    def to_json(self):
        return {"schema": "wermer-forge/1", "kind": "chain_state", "n": self.n,
                "config": self.config.to_json(),
                "alphas": [[complex_to_json(v) for v in a] for a in self.alphas],
                "eps_schedule": self.eps_schedule, "delta_schedule": self.delta_schedule,
                "stages": [s.to_json() for s in self.stages],
                "ledger": self.ledger,
                "extras": {k: v for k, v in self.extras.items() if not k.startswith("_")},
                "valid": self.valid}

    @classmethod
    def from_json(cls, obj):
        cfg = ChainConfig.from_json(obj["config"])
        alphas = np.array([[complex_from_json(v) for v in a] for a in obj["alphas"]],
                          dtype=complex).reshape(-1, 3)
        return cls(cfg, alphas, [ChainStage.from_json(s) for s in obj["stages"]],
                   dict(obj.get("ledger", {})), dict(obj.get("extras", {})))


# ---------------------------------------------------------------------------
# sample sets on the closed unit ball

UNIT_BALL = EuclideanBall((0j, 0j, 0j), 1.0)


def ball_grid(cfg: ChainConfig, anchors, seed: int) -> np.ndarray:
    n_b = cfg.grid_points // 2
    parts = [grid_points(UNIT_BALL, cfg.grid_points - n_b, n_b, seed)]
    for k, a in enumerate(as_points(anchors)):
        parts.append(collar_points(UNIT_BALL, a, cfg.collar_points, seed=seed + 11 + k,
                                   min_scale=1e-12, max_scale=1.0))
    return np.concatenate(parts)


def _sphere_offsets(count: int, radius: float, rng) -> np.ndarray:
    v = rng.standard_normal((count, 6))
    v /= np.linalg.norm(v, axis=1)[:, None]
    return radius * (v[:, :3] + 1j * v[:, 3:])


# ---------------------------------------------------------------------------
# stage construction


def _stage_targets(cfg: ChainConfig, eps_j: float, seed: int) -> TuningTargets:
    return TuningTargets(eps_id=cfg.tune_fraction * eps_j, region="ball", n_max=cfg.n_max,
                         nsamples=cfg.tune_nsamples,
                         inclusion_samples=cfg.tune_inclusion_samples, seed=seed)


def _ball_distance_outside(z_model) -> np.ndarray:
    """Distance from model points to the closed ball B (negative inside)."""
    return np.sqrt(sqnorm(as_points(z_model) + E3)) - 1.0


def _make_stage(state: ChainState, j: int, eps_j: float, delta_j: float) -> ChainStage:
    cfg = state.config
    alpha = state.alphas[j - 1]
    earlier = [state.alphas[k] for k in range(j - 1)]
    rep = tune(_stage_targets(cfg, eps_j, cfg.seed + j))
    if not rep.accepted:
        raise ChainError(f"tuning failed at {rep.failed_stage}: {rep.reason}", stage=j,
                         condition="tuning")
    params = rep.params
    A = conjugation_to(alpha)
    F = build_F(params)
    base = CompositeMap((A.inverted(),) + F.stages + (A,), label=f"psi{j}", params=params)
    grid = ball_grid(cfg, state.alphas[:j], cfg.seed + 101 * j)
    psi = build_correction(base, earlier, (), [alpha], sigma_min=cfg.sigma_min,
                           budget=eps_j / 2, budget_points=grid, jet_radius=cfg.jet_radius)
    model = CorrectedMap(F, psi.correction, A, psi.sup_norm)

    # witness for psi_j at alpha_{j-1}, found in model coordinates
    delta_ball = 0.5 ** j / 2
    radii = tuple(delta_ball / 2 * 0.5**k for k in range(8))
    ratios = tuple(10.0 ** (-2 - 0.25 * k) for k in range(49))
    ccfg = CertifyConfig(n_theta=cfg.n_theta, mu_min=cfg.mu_min, npolys=cfg.npolys,
                         max_degree=cfg.max_degree, seed=cfg.seed + j,
                         search_grid=SearchGrid(radii, ratios))
    try:
        cert = nonrunge_certificate(model, ShiftedBallB(), None, delta_ball, ccfg)
    except NoWitnessError as exc:
        raise ChainError(str(exc), stage=j, condition="c") from exc
    wm = cert.witness
    witness = WitnessCircle(wm.r, wm.alpha, q=alpha, frame=A.U, margin=wm.margin)
    zeta, ok = model.inverse(wm.circle_points(cfg.n_theta))
    if not ok.all():
        raise ChainError("witness circle preimages lost", stage=j, condition="d")
    circle_margin = float(np.min(-_ball_distance_outside(zeta)))
    cands = all_preimages(model, wm.center)
    center_margin = float(np.min(_ball_distance_outside(cands))) if len(cands) else math.inf
    cert_json = cert.to_json()
    cert_json["witness_model"] = cert_json.pop("witness")
    cert_json["witness"] = witness.to_json()
    return ChainStage(j, alpha, eps_j, delta_j, params, psi, model, witness, cert_json,
                      A.forward(zeta), circle_margin,
                      A.forward(cands) if len(cands) else np.empty((0, 3), complex),
                      center_margin)


# ---------------------------------------------------------------------------
# conditions


def _check_a(state: ChainState, st: ChainStage, grid) -> dict:
    j = st.index
    y = st.psi.forward(grid)
    with np.errstate(all="ignore"):
        d = np.sqrt(sqnorm(state.phi(y, upto=j - 1) - state.phi(grid, upto=j - 1)))
    sup = float(np.max(np.where(np.isfinite(d), d, np.inf)))
    return {"pass": sup < st.eps, "sup": sup, "eps": st.eps, "nsamples": len(grid),
            "correction_sup": st.psi.sup_norm}


def _check_b(state: ChainState, st: ChainStage) -> dict:
    j = st.index
    pts = state.alphas[:j]
    err = np.sqrt(sqnorm(state.phi(st.psi.forward(pts), upto=j - 1) - state.phi(pts, upto=j - 1)))
    worst = float(err.max())
    return {"pass": worst < state.config.value_tol, "max_error": worst,
            "tol": state.config.value_tol}


def _check_c(state: ChainState, st: ChainStage) -> dict:
    j = st.index
    dm = state.disk_map(j)
    rng = np.random.default_rng(state.config.seed + j)
    zeta = np.sqrt(rng.random(512)) * np.exp(2j * np.pi * rng.random(512))
    zeta = np.concatenate([zeta, np.exp(2j * np.pi * np.arange(256) / 256), [0]])
    dist = float(np.max(np.sqrt(sqnorm(dm(zeta) - st.alpha))))
    ratio = hull_obstruction_test(st.witness, None, state.config.npolys, state.config.max_degree,
                                  state.config.seed + j, state.config.hull_theta, disk_map=dm)
    return {"pass": dist < 0.5**j and ratio <= 1 + HULL_RATIO_TOL, "max_distance": dist,
            "radius": 0.5**j, "hull_max_ratio": ratio}


def _revalidate(state: ChainState, st: ChainStage, n: int) -> tuple[dict, dict]:
    """(d) and (e) for the witness of stage ``st`` under ``phi_n``."""
    j = st.index
    cert_ok = bool(st.certificate.get("valid"))
    if n == j:
        d = {"pass": cert_ok and st.circle_margin >= state.config.mu_min,
             "under": n, "min_margin": st.circle_margin, "method": "witness certificate"}
        e = {"pass": cert_ok and st.center_margin > 0, "under": n,
             "center_margin": st.center_margin, "method": "witness certificate"}
        return d, e
    rng = np.random.default_rng(state.config.seed + 1000 * n + j)
    chi = lambda z: state.phi(z, upto=n, start=j)

    # (d): every circle preimage keeps a preimage under chi (degree argument)
    m = st.circle_margin
    zeta = st.circle_preimages
    offs = _sphere_offsets(16 * len(zeta), m, rng)
    w = np.concatenate([zeta, np.repeat(zeta, 16, axis=0) + offs])
    dev_d = float(np.max(np.sqrt(sqnorm(chi(w) - w))))
    d = {"pass": cert_ok and dev_d < m / 2, "under": n, "local_deviation": dev_d,
         "min_margin": m, "method": "forward degree test"}

    # (e): chi never sends a point of the closed ball onto the centre preimage
    p = st.center_preimages
    if len(p) == 0:
        e = {"pass": cert_ok, "under": n, "method": "no centre preimage"}
        return d, e
    cfg = state.config
    parts = [grid_points(UNIT_BALL, cfg.revalidation_samples // 2, cfg.revalidation_samples // 2,
                         cfg.seed + 7 * n + j)]
    parts.append(collar_points(UNIT_BALL, st.alpha, cfg.revalidation_samples, seed=cfg.seed + j,
                               min_scale=max(st.center_margin / 10, 1e-15), max_scale=2.0))
    for k in range(j, n):
        parts.append(collar_points(UNIT_BALL, state.alphas[k], cfg.collar_points,
                                   seed=cfg.seed + 13 * k, min_scale=1e-12))
    w = np.concatenate(parts)
    dev = np.sqrt(sqnorm(chi(w) - w))
    gap = np.min(np.sqrt(sqnorm(w[:, None, :] - p[None, :, :])), axis=1)
    ratio = float(np.max(dev / gap))
    e = {"pass": cert_ok and ratio < 0.5, "under": n, "max_deviation_to_gap": ratio,
         "center_margin": st.center_margin, "nsamples": len(w), "method": "forward shell test"}
    return d, e


def _injectivity(state: ChainState) -> dict:
    cfg = state.config
    z = grid_points(UNIT_BALL, cfg.grid_points, 0, cfg.seed + 5)
    img = state.phi(z)
    pairs = collision_pairs(z, img)
    return {"pass": len(pairs) == 0, "collisions": int(len(pairs)), "nsamples": len(z)}


def _omega(state: ChainState, st: ChainStage, grid) -> dict:
    """psi_j(closed ball) stays in the region where phi_{j-1} is defined."""
    j = st.index
    if j == 1:
        return {"pass": True, "note": "phi_0 is the identity"}
    region = OmegaRegion(1.0 + 1.0 / (j - 1), j - 1, state.stages[j - 2].delta,
                         tuple(tuple(a) for a in state.alphas[: j - 1]))
    y = st.psi.forward(grid)
    finite = bool(np.all(np.isfinite(y)))
    inside = finite and bool(np.all(region.rho(y) <= OMEGA_TOL))
    img_ok = bool(np.all(np.isfinite(state.phi(y, upto=j - 1)))) if finite else False
    return {"pass": inside and img_ok, "finite": finite and img_ok,
            "max_rho": float(np.max(region.rho(y))) if finite else math.inf}


def _stage_conditions(state: ChainState, st: ChainStage) -> dict:
    grid = ball_grid(state.config, state.alphas[: st.index], state.config.seed + 7 * st.index)
    return {"a": _check_a(state, st, grid), "b": _check_b(state, st),
            "c": _check_c(state, st), "omega": _omega(state, st, grid)}


def _update_ledger(state: ChainState, stage_conds: dict) -> list:
    n = state.n
    failed = []
    for j, conds in stage_conds.items():
        for key in ("a", "b", "c"):
            state.ledger[f"{key}{j}"] = conds[key]
    for st in state.stages:
        d, e = _revalidate(state, st, n)
        state.ledger[f"d{st.index}"] = d
        state.ledger[f"e{st.index}"] = e
    for key, v in state.ledger.items():
        if not v["pass"]:
            failed.append(key)
    return failed


def extend_chain(state: ChainState, more: int) -> ChainState:
    """Add ``more`` stages to ``state`` (used both for building and resuming)."""
    cfg = state.config
    need = state.n + more
    if len(state.alphas) < need:
        state.alphas = dense_boundary_points(need, cfg.seed)
    stage_conds = state.extras.setdefault("_conds", {})
    for j in range(state.n + 1, need + 1):
        eps_j = cfg.eps * 0.5 ** (j + 1)
        delta_j = cfg.delta0 * 0.5**j
        last_error = None
        for attempt in range(1, cfg.max_retries + 1):
            try:
                st = _make_stage(state, j, eps_j, delta_j)
            except CorrectionBudgetError as exc:
                last_error = ("correction", str(exc))
                eps_j /= 2
                continue
            st.attempts = attempt
            state.stages.append(st)
            conds = _stage_conditions(state, st)
            stage_conds[j] = conds
            failed = _update_ledger(state, {j: conds})
            failed += [] if conds["omega"]["pass"] else [f"omega{j}"]
            if not failed:
                break
            last_error = (",".join(failed), "condition check failed")
            state.stages.pop()
            del stage_conds[j]
            for key in [k for k in state.ledger if k.endswith(str(j))]:
                state.ledger.pop(key)
            eps_j /= 2
        else:
            raise ChainError(f"stage {j} failed after {cfg.max_retries} attempts: {last_error}",
                             stage=j, condition=last_error[0] if last_error else None)
    state.extras["injectivity"] = _injectivity(state)
    state.extras["omega"] = {str(j): c["omega"] for j, c in stage_conds.items()}
    return state


def build_chain(n: int, eps: float = 0.5, seed: int = 0,
                config: ChainConfig | None = None) -> ChainState:
    if n < 1:
        raise ParameterError("n must be >= 1")
    if not eps > 0:
        raise ParameterError("eps must be > 0")
    cfg = replace(config or ChainConfig(), eps=eps, seed=seed)
    state = ChainState(cfg, dense_boundary_points(n, seed))
    return extend_chain(state, n)


def resume_chain(obj: dict, more: int) -> ChainState:
    state = ChainState.from_json(obj)
    # conditions of finished stages are kept from the ledger; rebuild their records
    state.extras["_conds"] = {}
    for st in state.stages:
        state.extras["_conds"][st.index] = {
            key: state.ledger[f"{key}{st.index}"] for key in ("a", "b", "c")}
        state.extras["_conds"][st.index]["omega"] = state.extras.get("omega", {}).get(
            str(st.index), {"pass": True})
    return extend_chain(state, more)


def telescoping_deviation(state: ChainState, npoints: int = 10_000, seed: int = 0) -> float:
    z = grid_points(UNIT_BALL, npoints // 2, npoints - npoints // 2, seed)
    return float(np.max(np.sqrt(sqnorm(state.phi(z) - z))))
