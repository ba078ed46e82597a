"""Acceptance suite: one test per criterion, each at its stated tolerance and time budget.

Every test records a one-line verdict; ``conftest.py`` prints them after the
run, and ``python tests/test_acceptance.py`` prints them directly.
"""
from __future__ import annotations

import json
import math
import time

import numpy as np
import pytest

from wermer_forge.certify import (certify_zero_free, hull_obstruction_test, nonrunge_certificate)
from wermer_forge.chain import build_chain, telescoping_deviation
from wermer_forge.composite import WermerParams, base_map, build_F
from wermer_forge.core import HalfSpaceH, ShiftedBallB, WermerDp, WitnessCircle, sample_interior, sqnorm
from wermer_forge.errors import QuadratureError
from wermer_forge.maps import phi_preimages
from wermer_forge.tuner import TuningTargets, measure_f_rate, measure_h_localisation, tune

RESULTS: dict[int, str] = {}


def record(k: int, ok: bool, detail: str, seconds: float, budget: float):
    ok = ok and seconds < budget
    RESULTS[k] = (f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}  "
                  f"[{seconds:.2f}s / {budget:g}s]")
    return ok


def _canon(obj) -> str:
    return json.dumps(obj, sort_keys=True)


# ---------------------------------------------------------------------------
# report builders (deterministic; reused by the determinism criterion)


def report_1():
    cert = nonrunge_certificate(base_map(), WermerDp(0.1))
    wc = cert.witness
    center = phi_preimages(wc.center, HalfSpaceH())
    return {"r": wc.r, "alpha": wc.alpha, "min_margin": cert.boundary_margin,
            "center_preimages_in_H": len(center.filtered),
            "center_candidates": len(center.candidates)}


def report_2():
    ratio = hull_obstruction_test(WitnessCircle(0.1, 1e-3), npolys=200, max_degree=5, seed=42)
    return {"max_ratio": ratio}


def report_3():
    out = {}
    for N in (50, 100, 200):
        try:
            c = certify_zero_free(N, (-2.0, -0.01, -2.0, 2.0))
            out[str(N)] = {"winding": c.winding, "change": c.doubling_change}
        except QuadratureError as exc:
            out[str(N)] = {"error": str(exc)}
    return out


def report_4():
    X, Y = np.meshgrid(np.linspace(-2.0, -0.1, 96), np.linspace(-2.0, 2.0, 161))
    z3 = (X + 1j * Y).ravel()
    return {str(N): {"f": measure_f_rate(N, z3), "h": measure_h_localisation(N, 0.1, z3),
                     "bound": 5 * math.exp(-0.2 * N)} for N in (20, 50, 100, 200)}


def report_5():
    rep = tune(TuningTargets(eps_id=0.5, p=0.1, inclusion_samples=10_000))
    return rep.to_json()


def report_6(params_json):
    cert = nonrunge_certificate(build_F(WermerParams.from_json(params_json)), ShiftedBallB(), None)
    return cert.to_json()


def report_7(params_json):
    F = build_F(WermerParams.from_json(params_json))
    z = sample_interior(ShiftedBallB(), 20_000, seed=7)
    z = z[z[:, 2].real <= -1e-3][:10_000]
    back, ok = F.inverse(F.forward(z))
    rel = np.sqrt(sqnorm(back - z)) / np.sqrt(sqnorm(z))
    return {"count": int(len(z)), "inverted": int(ok.sum()),
            "max_rel_error": float(np.max(np.where(ok, rel, np.inf)))}


def report_8():
    state = build_chain(3, 0.5, seed=0)
    a0 = state.alphas[0][None]
    b2 = float(np.linalg.norm(state.phi(a0, upto=2) - state.phi(a0, upto=1)))
    return {"state": state.to_json(), "total_deviation": telescoping_deviation(state),
            "b2_error": b2}


# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def tuned():
    t0 = time.perf_counter()
    rep = report_5()
    return rep, time.perf_counter() - t0


def test_criterion_1_base_hole():
    t0 = time.perf_counter()
    r = report_1()
    dt = time.perf_counter() - t0
    ok = r["min_margin"] >= 9e-4 - 1e-6 and r["center_preimages_in_H"] == 0
    assert record(1, ok, f"witness r={r['r']}, alpha={r['alpha']}, min margin "
                  f"{r['min_margin']:.6g}, centre preimages in H {r['center_preimages_in_H']}",
                  dt, 1.0)


def test_criterion_2_maximum_principle():
    t0 = time.perf_counter()
    r = report_2()
    dt = time.perf_counter() - t0
    assert record(2, r["max_ratio"] <= 1 + 1e-10, f"max ratio {r['max_ratio']:.12g}", dt, 5.0)


def test_criterion_3_zero_free():
    t0 = time.perf_counter()
    r = report_3()
    dt = time.perf_counter() - t0
    ok = all(v.get("winding") == 0 and v.get("change", 1.0) < 0.25 for v in r.values())
    detail = ", ".join(f"N={N}: winding {v.get('winding', 'error')}" for N, v in r.items())
    assert record(3, ok, detail, dt, 5.0)


def test_criterion_4_rates():
    t0 = time.perf_counter()
    r = report_4()
    dt = time.perf_counter() - t0
    ok = all(v["f"] <= v["bound"] and v["h"] <= v["bound"] for v in r.values())
    worst = max(max(v["f"], v["h"]) / v["bound"] for v in r.values())
    assert record(4, ok, f"worst rate / bound {worst:.3g}", dt, 5.0)


def test_criterion_5_tuner(tuned):
    rep, dt = tuned
    p = rep["params"] or {}
    certs = rep["certificates"]
    ok = (rep["status"] == "ACCEPTED" and max(p["N1"], p["N2"]) <= 2**14
          and min(p["delta1"], p["delta2"]) >= 1e-8
          and certs["inclusion"]["nsamples"] == 10_000 and certs["inclusion"]["violations"] == 0
          and certs["deviation"]["core_sup"] < 0.5)
    assert record(5, ok, f"{rep['status']} {p}, inclusion violations "
                  f"{certs['inclusion']['violations']}, core deviation "
                  f"{certs['deviation']['core_sup']:.4g}", dt, 120.0)


def test_criterion_6_certificate(tuned):
    rep, _ = tuned
    t0 = time.perf_counter()
    c = report_6(rep["params"])
    dt = time.perf_counter() - t0
    ok = c["valid"] and c["center_excluded"]["sampled_distance"] > 0
    assert record(6, ok, f"witness r={c['witness']['r']}, alpha={c['witness']['alpha']}, "
                  f"exclusion {c['center_excluded']['sampled_distance']:.3g}", dt, 60.0)


def test_criterion_7_inversion(tuned):
    rep, _ = tuned
    t0 = time.perf_counter()
    r = report_7(rep["params"])
    dt = time.perf_counter() - t0
    ok = r["count"] == 10_000 and r["inverted"] == r["count"] and r["max_rel_error"] <= 1e-8
    assert record(7, ok, f"max relative error {r['max_rel_error']:.3g} over {r['count']}", dt, 10.0)


def test_criterion_8_chain():
    t0 = time.perf_counter()
    r = report_8()
    dt = time.perf_counter() - t0
    ledger = r["state"]["ledger"]
    revalidated = all(ledger[f"{c}{j}"]["pass"] and ledger[f"{c}{j}"]["under"] == 3
                      for c in "de" for j in (1, 2, 3))
    ok = (len(ledger) == 15 and all(v["pass"] for v in ledger.values())
          and r["total_deviation"] < 0.25 and r["b2_error"] < 1e-10 and revalidated)
    passed = sum(v["pass"] for v in ledger.values())
    assert record(8, ok, f"{passed}/15 conditions, |phi3 - id| {r['total_deviation']:.3g}, "
                  f"b2 error {r['b2_error']:.2g}", dt, 300.0)


def test_criterion_9_determinism():
    t0 = time.perf_counter()
    first, second = [], []
    for out in (first, second):
        r5 = report_5()
        out += [_canon(report_1()), _canon(report_2()), _canon(report_3()), _canon(report_4()),
                _canon(r5), _canon(report_6(r5["params"])), _canon(report_7(r5["params"])),
                _canon(report_8())]
    dt = time.perf_counter() - t0
    same = [a == b for a, b in zip(first, second)]
    assert record(9, all(same), f"{sum(same)}/8 reports byte-identical", dt, 600.0)


if __name__ == "__main__":
    import sys
    sys.exit(pytest.main([__file__, "-q"]))
