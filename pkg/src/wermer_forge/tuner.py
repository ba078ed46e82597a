"""Staged parameter search for the four-parameter Wermer modification.

Each stage fixes one parameter on a discrete ladder, in dependency order:
N1 (rate of f), delta1 (coupling terms), delta2 (inclusion near 0), N2
(localisation of h).  A final verification pass re-measures every quantity at
the chosen parameters and issues the certificates.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .certify import certify_zero_free, check_inclusion
from .composite import (WermerParams, build_F, build_G, deviation_points, deviation_profile,
                        gb_quadratic_coeffs)
from .core import Localized, ScaledBallBPrime, ShiftedBallB, WermerDp
from .errors import ContourError, FitError, ParameterError, QuadratureError
from .maps import f_N, f_times_2z_minus_one, h_minus_one

ACCEPTED = "ACCEPTED"
FAILED = "FAILED"


@dataclass(frozen=True)
class TuningTargets:
    eps_id: float = 0.5
    p: float = 0.1
    c_core: float = 0.01
    n_max: int = 2**14
    delta_min: float = 1e-8
    delta_start: float = 0.5
    nsamples: int = 4000
    inclusion_samples: int = 10_000
    z3_samples: int = 4000
    seed: int = 0
    axis_slice: bool = False
    region: str = "core"
    forced: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.eps_id > 0:
            raise ParameterError(f"eps_id must be > 0, got {self.eps_id}")
        if not 0 < self.p < 0.25:
            raise ParameterError(f"p must lie in (0, 1/4), got {self.p}")
        if not self.c_core > 0:
            raise ParameterError("c_core must be > 0")
        if not 0 < self.delta_min <= self.delta_start <= 0.5:
            raise ParameterError("need 0 < delta_min <= delta_start <= 1/2")
        if self.region not in ("core", "ball"):
            raise ParameterError(f"region must be 'core' or 'ball', got {self.region!r}")
        bad = set(self.forced) - {"N1", "N2", "delta1", "delta2"}
        if bad:
            raise ParameterError(f"unknown forced parameters {sorted(bad)}")

    def to_json(self):
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "TuningTargets":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(obj) - known
        if extra:
            raise ParameterError(f"unknown target fields {sorted(extra)}")
        return cls(**obj)


@dataclass
class TuningReport:
    status: str
    params: WermerParams | None
    targets: TuningTargets
    stages: list
    failed_stage: str | None = None
    reason: str = ""
    certificates: dict = field(default_factory=dict)

    @property
    def accepted(self) -> bool:
        return self.status == ACCEPTED

    def to_json(self):
        return {"kind": "tuning_report", "status": self.status,
                "params": None if self.params is None else self.params.to_json(),
                "failed_stage": self.failed_stage, "reason": self.reason,
                "targets": self.targets.to_json(), "stages": self.stages,
                "certificates": self.certificates}


# ---------------------------------------------------------------------------
# sample sets


def _ladder_N(n_max):
    n = 10
    while n <= n_max:
        yield n
        n *= 2


def core_z3_points(c_core: float, count: int, seed: int = 0) -> np.ndarray:
    """z3-values of the core ``B' n {Re z3 <= -c}``: the disk ``|z3 + 2| <= 2`` cut at ``-c``."""
    from scipy.stats import qmc

    u = qmc.Halton(d=2, scramble=True, seed=seed).random(2 * count)
    z = -2.0 + 2.0 * np.sqrt(u[:, 0]) * np.exp(2j * np.pi * u[:, 1])
    z = z[z.real <= -c_core][: count // 2]
    nb = count - len(z)
    # boundary: the cutting chord and the circular arc
    ymax = math.sqrt(max(4.0 - (2.0 - c_core) ** 2, 0.0))
    chord = -c_core + 1j * np.linspace(-ymax, ymax, nb // 2)
    t = np.linspace(0.0, 2.0 * np.pi, nb - nb // 2)
    arc = -2.0 + 2.0 * np.exp(1j * t)
    arc = arc[arc.real <= -c_core]
    return np.concatenate([z, chord, arc])


def axis_points(count: int) -> np.ndarray:
    """Points ``(0, 0, z3)`` on the closed z3-slice of B'."""
    z3 = core_z3_points(1e-12, count)
    return np.stack([np.zeros_like(z3), np.zeros_like(z3), z3], axis=1)


def core_points(targets: TuningTargets) -> np.ndarray:
    """Sample of ``closure(B') n {Re z3 <= -c_core}`` including the cutting face."""
    if targets.axis_slice:
        pts = axis_points(targets.nsamples)
        return pts[pts[:, 2].real <= -targets.c_core]
    dom = ScaledBallBPrime()
    z = deviation_points(dom, 2 * targets.nsamples, targets.seed, collar=0)
    inside = z[z[:, 2].real <= -targets.c_core]
    face = z[z[:, 2].real > -targets.c_core].copy()
    face[:, 2] = -targets.c_core + 1j * face[:, 2].imag
    face = face[dom.rho(face) <= 0]
    return np.concatenate([inside, face])


def ball_points(targets: TuningTargets) -> np.ndarray:
    """Closed B' (core mode) or closed B (ball mode), refined around the origin."""
    if targets.axis_slice:
        return axis_points(targets.nsamples)
    dom = ShiftedBallB() if targets.region == "ball" else ScaledBallBPrime()
    return deviation_points(dom, targets.nsamples, targets.seed)


def inclusion_radius(params: WermerParams) -> float:
    """Radius of the ball around 0 on which ``D_p`` is checked against ``G(B)``.

    ``|delta1 h| >= 1/sqrt(p)`` holds while ``N2 |z3| <~ delta1 sqrt(p) - delta2``;
    half of that, capped by the scale on which ``f_{N1} ~ 1 - N1``.
    """
    theta = 0.5 * (params.delta1 * math.sqrt(params.p) / params.delta2 - 1.0)
    theta = min(theta, 1.0)
    if theta <= 0:
        return 0.0
    return min(theta * params.delta2 / params.N2, 0.1 / params.N1)


# ---------------------------------------------------------------------------
# per-stage measurements


def measure_f_rate(N1: int, z3: np.ndarray) -> float:
    return float(np.max(np.abs(f_times_2z_minus_one(z3, N1))))


def measure_f_rate_weighted(N1: int, z: np.ndarray) -> float:
    """Sup of ``|z2| |f * 2z3 - 1|``: the z2-part of F with h frozen at 1."""
    return float(np.max(np.abs(z[:, 1]) * np.abs(f_times_2z_minus_one(z[:, 2], N1))))


def measure_coupling(N1: int, delta1: float, z: np.ndarray) -> float:
    """Sup of the delta1^2-weighted terms of F, with h frozen at 1."""
    z1, z2, z3 = z[:, 0], z[:, 1], z[:, 2]
    fv = f_N(z3, N1)
    t2 = np.abs(delta1**2 * z1 * z2**2 * fv**2)
    t3 = np.abs(delta1**2 * z1 * z2 * fv)
    return float(np.max(np.maximum(t2, t3)))


def measure_h_localisation(N2: int, delta2: float, z3: np.ndarray) -> float:
    return float(np.max(np.abs(h_minus_one(z3, N2, delta2))))


def measure_h_weighted(N2: int, delta2: float, z: np.ndarray) -> float:
    """Sup of ``|z1| |h - 1|``: the z1-part of F."""
    return float(np.max(np.abs(z[:, 0]) * np.abs(h_minus_one(z[:, 2], N2, delta2))))


def _rate1(targets, N1, z3, ball):
    # on the axis slice z1 = z2 = 0, so only the weighted forms are meaningful
    if targets.region == "ball" or targets.axis_slice:
        return measure_f_rate_weighted(N1, ball)
    return measure_f_rate(N1, z3)


def _rate4(targets, N2, d2, z3, ball):
    if targets.region == "ball" or targets.axis_slice:
        return measure_h_weighted(N2, d2, ball)
    return measure_h_localisation(N2, d2, z3)


def _deviation_set(targets):
    return ball_points(targets) if targets.region == "ball" else core_points(targets)


def local_inclusion(params: WermerParams, targets: TuningTargets):
    s = inclusion_radius(params)
    if s <= 0:
        return None, s
    inner = Localized(WermerDp(params.p), (0j, 0j, 0j), s)
    if targets.axis_slice:
        z3 = -s * np.linspace(1e-3, 1.0, 64)
        x = np.stack([np.zeros_like(z3), np.zeros_like(z3), z3], axis=1)
        z, ok = build_G(params).inverse(x)
        margin = np.where(ok, -ShiftedBallB().rho(np.where(ok[:, None], z, 0)), -np.inf)
        from .certify import InclusionReport
        return InclusionReport(inner, ShiftedBallB(), len(x), int(np.sum(margin <= 0)),
                               int(np.sum(~ok)), float(margin.min()), targets.seed,
                               list(x[int(np.argmin(margin))])), s
    return check_inclusion(inner, build_G(params), ShiftedBallB(),
                           targets.inclusion_samples, targets.seed), s


def _stage3_ok(params: WermerParams, targets: TuningTargets, log: dict) -> bool:
    if not targets.axis_slice:
        try:
            gb = gb_quadratic_coeffs(params, seed=targets.seed)
        except FitError as exc:
            log["fit_error"] = str(exc)
            return False
        log.update(fitted_c1=gb.fitted_c1, fitted_c2=gb.fitted_c2,
                   formula_c1=gb.formula_c1, formula_c2=gb.formula_c2)
        if not (gb.fitted_c1 < params.p and gb.fitted_c2 < params.p):
            return False
    else:
        log["fit"] = "skipped on the z3-axis slice"
    rep, s = local_inclusion(params, targets)
    log["inclusion_radius"] = s
    if rep is None:
        return False
    log.update(inclusion_violations=rep.violations, inclusion_worst_margin=rep.worst_margin,
               inclusion_samples=rep.nsamples)
    return rep.valid


def _fail(targets, params, stages, stage, reason, certs=None):
    return TuningReport(FAILED, params, targets, stages, stage, reason, certs or {})


# ---------------------------------------------------------------------------
# public API


def tune(targets: TuningTargets) -> TuningReport:
    """Search N1, delta1, delta2, N2 in order; then verify and certify."""
    eps = targets.eps_id
    z3 = core_z3_points(targets.c_core, targets.z3_samples, targets.seed)
    ball = ball_points(targets)
    stages = []
    forced = targets.forced

    # stage 1: N1
    log = {"stage": "N1", "target": eps / 8}
    if "N1" in forced:
        N1 = int(forced["N1"])
        log.update(N1=N1, forced=True, f_rate=_rate1(targets, N1, z3, ball))
    else:
        N1 = None
        for n in _ladder_N(targets.n_max):
            v = _rate1(targets, n, z3, ball)
            if v < eps / 8:
                N1 = n
                log.update(N1=n, f_rate=v)
                break
    stages.append(log)
    if N1 is None:
        return _fail(targets, None, stages, "N1", "sup|f*2z3 - 1| above target within the N budget")

    # stage 2: delta1 (h frozen at 1; N2, delta2 not chosen yet)
    log = {"stage": "delta1", "target": eps / 8}
    if "delta1" in forced:
        d1 = float(forced["delta1"])
        log.update(delta1=d1, forced=True, coupling=measure_coupling(N1, d1, ball))
    else:
        d1 = None
        k = 1
        while 10.0**-k >= targets.delta_min:
            v = measure_coupling(N1, 10.0**-k, ball)
            if v < eps / 8:
                d1 = 10.0**-k
                log.update(delta1=d1, coupling=v)
                break
            k += 1
    stages.append(log)
    if d1 is None:
        return _fail(targets, None, stages, "delta1", "coupling terms above target for all delta1")

    # stage 3: delta2, with N2 provisionally equal to N1
    log = {"stage": "delta2", "p": targets.p, "provisional_N2": N1}
    if "delta2" in forced:
        d2 = float(forced["delta2"])
        log.update(delta2=d2, forced=True)
    else:
        d2 = None
        d = targets.delta_start
        while d >= targets.delta_min:
            trial = {}
            if _stage3_ok(WermerParams(N1, N1, d1, d, targets.p), targets, trial):
                d2 = d
                log.update(delta2=d, **trial)
                break
            d /= 2.0
    stages.append(log)
    if d2 is None:
        return _fail(targets, None, stages, "delta2", "no delta2 on the ladder gives D_p in G(B)")

    # stage 4: N2
    log = {"stage": "N2", "target_deviation": eps, "target_h": eps / 8}
    core = _deviation_set(targets)
    if "N2" in forced:
        N2 = int(forced["N2"])
        log.update(N2=N2, forced=True)
    else:
        N2 = None
        for n in _ladder_N(targets.n_max):
            hl = _rate4(targets, n, d2, z3, ball)
            if hl >= eps / 8:
                continue
            dev = deviation_profile(build_F(WermerParams(N1, n, d1, d2, targets.p)), core)[0]
            if dev < eps:
                N2 = n
                log.update(N2=n, h_localisation=hl, core_deviation=dev)
                break
    stages.append(log)
    if N2 is None:
        return _fail(targets, None, stages, "N2", "core deviation above eps_id within the N budget")

    rep = verify(WermerParams(N1, N2, d1, d2, targets.p), targets)
    rep.stages = stages + [{"stage": "verify", **s} for s in rep.stages]
    return rep


def verify(params: WermerParams, targets: TuningTargets) -> TuningReport:
    """Re-measure every stage quantity at ``params`` and attach certificates."""
    if abs(params.p - targets.p) > 0:
        params = replace(params, p=targets.p)
    eps = targets.eps_id
    z3 = core_z3_points(targets.c_core, targets.z3_samples, targets.seed)
    stages = []
    certs: dict = {}

    ball = ball_points(targets)
    v = _rate1(targets, params.N1, z3, ball)
    stages.append({"name": "N1", "f_rate": v, "target": eps / 8, "pass": v < eps / 8})
    if not v < eps / 8:
        return _fail(targets, params, stages, "N1", "sup|f*2z3 - 1| above eps_id/8")

    v = measure_coupling(params.N1, params.delta1, ball)
    stages.append({"name": "delta1", "coupling": v, "target": eps / 8, "pass": v < eps / 8})
    if not v < eps / 8:
        return _fail(targets, params, stages, "delta1", "coupling terms above eps_id/8")

    log = {"name": "delta2"}
    ok3 = _stage3_ok(params, targets, log)
    log["pass"] = ok3
    stages.append(log)
    if not ok3:
        return _fail(targets, params, stages, "delta2", "D_p not contained in G(B) near 0")

    hl = _rate4(targets, params.N2, params.delta2, z3, ball)
    F = build_F(params)
    dev, _ = deviation_profile(F, _deviation_set(targets))
    collar = 0.0 if targets.axis_slice else deviation_profile(F, ball)[0]
    ok4 = dev < eps and hl < eps / 8
    stages.append({"name": "N2", "h_localisation": hl, "core_deviation": dev,
                   "collar_deviation": collar, "pass": ok4})
    if not ok4:
        return _fail(targets, params, stages, "N2", "deviation on the core above target")

    rect = (-4.0, -targets.c_core, -2.0, 2.0)
    if targets.axis_slice:
        certs["zero_free"] = {"kind": "zero_free", "skipped": "F2 acts trivially on z2 = 0"}
        zf_ok = True
    else:
        try:
            zf = certify_zero_free(params.N1, rect)
            certs["zero_free"] = zf.to_json()
            zf_ok = zf.valid
        except (ContourError, QuadratureError) as exc:
            certs["zero_free"] = {"kind": "zero_free", "error": str(exc)}
            zf_ok = False
    rep, s = local_inclusion(params, targets)
    certs["inclusion"] = rep.to_json()
    certs["deviation"] = {"kind": "deviation", "core_sup": dev, "collar_sup": collar,
                          "nsamples": targets.nsamples, "seed": targets.seed,
                          "c_core": targets.c_core}
    if not zf_ok:
        return _fail(targets, params, stages, "certificates", "zero-free certificate invalid", certs)
    return TuningReport(ACCEPTED, params, targets, stages, None, "", certs)
