"""Command-line front end: ``wermer-forge {tune,certify,chain,slice,report}``.

Exit codes: 0 success or valid certificate, 1 negative result or failure to
certify, 2 usage error.  JSON output carries ``"schema": "wermer-forge/1"``;
floats are written in shortest round-trip form (full double precision).
"""
from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import __version__
from .certify import all_preimages, certify_zero_free, nonrunge_certificate
from .composite import WermerParams, build_F, image_classify, stage_from_json
from .core import ShiftedBallB, complex_from_json, domain_from_json
from .errors import ChainError, NoWitnessError, ParameterError, WermerError
from .tuner import TuningTargets, local_inclusion, tune

SCHEMA = "wermer-forge/1"
CELL_CODES = "0 exterior, 1 interior, 2 boundary-band, 3 inversion-failed"


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# io helpers


def _read_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read JSON from {path}: {exc}") from exc


def _dump(obj) -> str:
    return json.dumps({"schema": SCHEMA, **obj}, indent=2, sort_keys=True, allow_nan=True) + "\n"


def _emit(text: str, out: str | None):
    if out is None:
        sys.stdout.write(text)
    else:
        with open(out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)


def _load_params(obj) -> WermerParams:
    if "params" in obj and isinstance(obj["params"], dict):
        obj = obj["params"]
    try:
        return WermerParams.from_json(obj)
    except KeyError as exc:
        raise UsageError(f"params file lacks field {exc}") from exc


def _load_map(obj):
    """A map descriptor, a WermerParams record or a tuning report (its F)."""
    if isinstance(obj, dict) and "map" in obj and isinstance(obj["map"], str):
        return stage_from_json(obj)
    if isinstance(obj, dict) and "map" in obj:
        return _load_map(obj["map"])
    return build_F(_load_params(obj))


# ---------------------------------------------------------------------------
# commands


def cmd_tune(args) -> int:
    cfg = _read_json(args.config) if args.config else {}
    if args.seed is not None:
        cfg["seed"] = args.seed
    targets = TuningTargets.from_json(cfg)
    rep = tune(targets)
    _emit(_dump(rep.to_json()), args.out)
    if not rep.accepted:
        print(f"tuning failed at stage {rep.failed_stage}: {rep.reason}", file=sys.stderr)
        return 1
    return 0


def cmd_certify(args) -> int:
    obj = _read_json(args.params)
    if args.what == "zero-free":
        if args.rectangle is None:
            rect = (-4.0, -0.01, -2.0, 2.0)
        else:
            rect = tuple(args.rectangle)
        Ns = [int(obj["N"])] if "N" in obj else sorted({_load_params(obj).N1, _load_params(obj).N2})
        certs = [certify_zero_free(N, rect, args.quadrature) for N in Ns]
        out = {"kind": "zero_free_set", "certificates": [c.to_json() for c in certs],
               "valid": all(c.valid for c in certs)}
    elif args.what == "inclusion":
        params = _load_params(obj)
        seed = 0 if args.seed is None else args.seed
        rep, radius = local_inclusion(params, TuningTargets(p=params.p, seed=seed,
                                                            inclusion_samples=args.nsamples))
        if rep is None:
            out = {"kind": "inclusion", "valid": False, "radius": radius,
                   "reason": "empty localisation radius"}
        else:
            out = dict(rep.to_json(), radius=radius, valid=bool(rep.valid))
    else:
        map_ = _load_map(obj)
        cert = nonrunge_certificate(map_, ShiftedBallB())
        out = cert.to_json()
        out["valid"] = bool(cert.valid)
    _emit(_dump(out), args.out)
    return 0 if out["valid"] else 1


def cmd_chain(args) -> int:
    from .chain import build_chain, resume_chain

    if args.resume:
        state = resume_chain(_read_json(args.resume), args.n)
    else:
        state = build_chain(args.n, args.eps, 0 if args.seed is None else args.seed)
    _emit(_dump(state.to_json()), args.out)
    return 0 if state.valid else 1


def _plane_points(req):
    plane = req.get("plane", {})
    free = plane.get("free", "z3")
    if free not in ("z1", "z2", "z3"):
        raise UsageError("plane.free must be one of z1, z2, z3")
    fixed = plane.get("fixed", {})
    idx = int(free[1]) - 1
    others = [f"z{k + 1}" for k in range(3) if k != idx]
    if set(fixed) - set(others):
        raise UsageError(f"plane.fixed may only name {others}")
    nx, ny = req.get("resolution", [64, 64])
    if int(nx) < 2 or int(ny) < 2:
        raise UsageError("resolution must be at least 2 x 2")
    x0, x1, y0, y1 = plane.get("extent", [-2.0, 0.0, -1.0, 1.0])
    xs = np.linspace(x0, x1, int(nx))
    ys = np.linspace(y0, y1, int(ny))
    X, Y = np.meshgrid(xs, ys)
    z = np.zeros((X.size, 3), dtype=complex)
    z[:, idx] = (X + 1j * Y).ravel()
    for name, v in fixed.items():
        z[:, int(name[1]) - 1] = complex_from_json(v) if isinstance(v, list) else complex(v)
    return z, int(nx), int(ny)


def _image_codes(map_, domain, w, tol):
    codes = image_classify(map_, domain, w, tol)
    for i in np.flatnonzero(codes == 3):
        cands = all_preimages(map_, w[i])
        if len(cands) == 0:
            continue
        r = float(np.min(domain.rho(cands)))
        codes[i] = 1 if r < -tol else (0 if r > tol else 2)
    return codes


def cmd_slice(args) -> int:
    req = _read_json(args.config)
    mode = req.get("mode", "membership")
    try:
        domain = domain_from_json(req.get("domain", {"kind": "WermerDp", "params": {"p": 0.1}}))
    except (KeyError, TypeError) as exc:
        raise UsageError(f"bad domain spec: {exc}") from exc
    z, nx, ny = _plane_points(req)
    tol = float(req.get("tol", 1e-9))
    if mode == "membership":
        r = domain.rho(z)
        cells = np.where(r < -tol, 1, np.where(r > tol, 0, 2)).astype(int)
        fmt = lambda v: str(int(v))
    elif mode in ("image-membership", "deviation"):
        if "map" not in req:
            raise UsageError(f"{mode} slice needs a map")
        map_ = _load_map(req["map"])
        if mode == "image-membership":
            cells = _image_codes(map_, domain, z, tol)
            fmt = lambda v: str(int(v))
        else:
            with np.errstate(all="ignore"):
                d = np.sqrt(np.sum(np.abs(map_.forward(z) - z) ** 2, axis=1))
            cells = np.where(domain.rho(z) <= tol, d, np.nan)
            fmt = lambda v: format(float(v), ".17g")
    else:
        raise UsageError(f"unknown slice mode {mode!r}")
    lines = [f"# wermer-forge slice mode={mode} rows=imag cols=real nx={nx} ny={ny}"]
    if mode != "deviation":
        lines.append(f"# cell codes: {CELL_CODES}")
    else:
        lines.append("# cell: ||map(z) - z||, nan outside the closed domain")
    cells = cells.reshape(ny, nx)
    lines += [",".join(fmt(v) for v in row) for row in cells]
    _emit("\n".join(lines) + "\n", args.out)
    return 0


def _summary(obj) -> list[str]:
    kind = obj.get("kind", "unknown")
    out = [f"{kind}: valid={obj.get('valid', obj.get('status'))}"]
    if kind == "tuning_report":
        out.append(f"  params={obj.get('params')}")
        if obj.get("failed_stage"):
            out.append(f"  failed_stage={obj['failed_stage']} reason={obj.get('reason')}")
    elif kind == "chain_state":
        out.append(f"  n={obj['n']} eps_schedule={obj['eps_schedule']}")
        for key in sorted(obj["ledger"], key=lambda k: (int(k[1:]), k[0])):
            out.append(f"  {key}: {'pass' if obj['ledger'][key]['pass'] else 'FAIL'}")
    elif kind == "obstruction":
        out.append(f"  witness={obj.get('witness')} max_ratio={obj['hull_tests']['max_ratio']}")
    return out


def cmd_report(args) -> int:
    lines = []
    ok = True
    for path in args.inputs:
        obj = _read_json(path)
        lines.append(f"[{path}]")
        lines += _summary(obj)
        v = obj.get("valid", obj.get("status") == "ACCEPTED")
        ok = ok and bool(v)
    _emit("\n".join(lines) + "\n", args.out)
    return 0 if ok else 1


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wermer-forge", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", help="output file (default: standard output)")
    common.add_argument("--seed", type=int)
    common.add_argument("--threads", type=int, default=1,
                        help="accepted for interface compatibility; work is vectorised")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("tune", parents=[common], help="tune (N1, N2, delta1, delta2)")
    t.add_argument("--config", help="JSON file of tuning targets")
    t.set_defaults(func=cmd_tune)

    c = sub.add_parser("certify", parents=[common], help="emit a certificate")
    c.add_argument("--params", required=True, help="params, tuning report or map JSON")
    c.add_argument("--what", required=True, choices=["zero-free", "inclusion", "obstruction"])
    c.add_argument("--rectangle", type=float, nargs=4, metavar=("RE0", "RE1", "IM0", "IM1"))
    c.add_argument("--quadrature", type=int, default=1024)
    c.add_argument("--nsamples", type=int, default=10_000)
    c.set_defaults(func=cmd_certify)

    ch = sub.add_parser("chain", parents=[common], help="build or extend a chain")
    ch.add_argument("--n", type=int, default=3, help="stages to build (or add when resuming)")
    ch.add_argument("--eps", type=float, default=0.5)
    ch.add_argument("--resume", help="saved chain state to extend")
    ch.set_defaults(func=cmd_chain)

    s = sub.add_parser("slice", parents=[common], help="CSV grid on a complex line")
    s.add_argument("--config", required=True, help="JSON slice request")
    s.set_defaults(func=cmd_slice)

    r = sub.add_parser("report", parents=[common], help="summarise JSON outputs")
    r.add_argument("inputs", nargs="+")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (UsageError, ParameterError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except ChainError as exc:
        print(f"chain failed at stage {exc.stage} condition {exc.condition}: {exc}",
              file=sys.stderr)
        return 1
    except NoWitnessError as exc:
        print(f"no witness: {exc}", file=sys.stderr)
        return 1
    except WermerError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
