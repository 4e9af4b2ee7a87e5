"""Command-line scenario runner.

Usage::

    roughquad run scenario.json [--seeds 0..9] [--out DIR] [--threads N] [--verify]
    roughquad sweep-horizon scenario.json [--bisect-tol 1e-3]

Exit codes: 0 success, 1 invalid configuration, 2 hypothesis violation,
3 numerical failure. The failing invariant is named on standard error.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .errors import HypothesisViolated, NumericalFailure
from .classical_flow import solve_flow
from .hamiltonians import validate_hypotheses
from .kernel import dispersive_sup, hk_kernel, mehler_kernel
from .linalg import symplectic_residual
from .nls import NlsConfig, solve_nls
from .propagator import GaussianState, apply_kernel, propagate_rough
from .scenario import ConfigError, Scenario

OUT_ENV = "ROUGHQUAD_OUT"


class InvariantFailed(NumericalFailure):
    """A ``--verify`` check did not hold."""


def _jsonable(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _stamp(scn: Scenario) -> str:
    return f"config_sha256={scn.hash} version={__version__}"


def atomic_write(path: Path, text: str) -> Path:
    """Write ``text`` to ``path`` through a temporary file in the same directory."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _json_text(scn: Scenario, payload) -> str:
    doc = {"meta": {"config_sha256": scn.hash, "version": __version__}, "result": payload}
    return json.dumps(doc, indent=2, sort_keys=True, default=_jsonable) + "\n"


def _csv_text(scn: Scenario, header: list[str], rows) -> str:
    lines = [f"# {_stamp(scn)}", ",".join(header)]
    for row in rows:
        lines.append(",".join(f"{v:.17g}" if isinstance(v, float) else str(v) for v in row))
    return "\n".join(lines) + "\n"


def _with_csv_writer(scn: Scenario, write) -> str:
    """Capture output of an object's ``to_csv(fname, header_comment)`` method."""
    with tempfile.TemporaryDirectory() as tmp:
        fname = Path(tmp) / "out.csv"
        write(fname, _stamp(scn))
        return fname.read_text()


def _require_hypotheses(scn: Scenario, beta) -> None:
    rep = validate_hypotheses(scn.hamiltonian(), scn.noise(), beta.mu)
    if not rep.ok:
        raise HypothesisViolated("; ".join(rep.failures()))


def _flow(scn: Scenario, beta, t=None, s=None):
    t0, s0 = scn.times()
    return solve_flow(scn.hamiltonian(), scn.noise(), beta, t0 if t is None else t,
                      s0 if s is None else s, **scn.flow_kw)


def _kernel(scn: Scenario, flow, beta):
    kind = scn.raw.get("kernel", {}).get("kind", "hk")
    if kind == "mehler":
        _require_hypotheses(scn, beta)
        return mehler_kernel(flow, scn.hamiltonian(), scn.noise(), beta, flow.t, flow.s,
                             gamma_min=scn.tol["gamma_min"])
    return hk_kernel(flow)


def _initial_state(scn: Scenario):
    g = scn.raw.get("grid", {})
    d = scn.dim
    if d > 2:
        raise ConfigError("grid tasks support dim 1 or 2", "$.dim")
    center = np.asarray(scn.raw.get("state", {}).get("center", [0.0] * (2 * d)), dtype=float)
    if center.shape != (2 * d,):
        raise ConfigError(f"state center must have {2 * d} entries", "$.state.center")
    return GaussianState.coherent(center).on_grid(g.get("Lbox", 8.0), g.get("m", 512))


def _task_flow(scn, beta, seed):
    flow = _flow(scn, beta)
    doc = flow.to_json()
    doc.update({"A": flow.A, "B": flow.B, "C": flow.C, "D": flow.D, "phase": flow.phase,
                "seed": seed})
    return {"json": _json_text(scn, doc)}


def _task_kernel(scn, beta, seed):
    flow = _flow(scn, beta)
    kf = _kernel(scn, flow, beta)
    kcfg = scn.raw.get("kernel", {})
    half = kcfg.get("probe_half_width", 2.0)
    n = kcfg.get("probe_points", 21)
    ax = np.linspace(-half, half, n)
    d = scn.dim
    rows = []
    for xv in ax:
        for yv in ax:
            x = np.zeros(d)
            y = np.zeros(d)
            x[0], y[0] = xv, yv
            k = complex(np.ravel(kf(x, y))[0])
            rows.append([float(xv), float(yv), k.real, k.imag])
    doc = kf.to_json()
    doc.update({"seed": seed, "t": flow.t, "s": flow.s,
                "kind": kcfg.get("kind", "hk"), "dispersive_sup": dispersive_sup(kf)})
    return {"json": _json_text(scn, doc),
            "csv": _csv_text(scn, ["x", "y", "re", "im"], rows)}


def _task_propagate(scn, beta, seed):
    flow = _flow(scn, beta)
    psi = _initial_state(scn)
    out = apply_kernel(_kernel(scn, flow, beta), psi, tail_tol=scn.tol["tail_tol"])
    doc = {"seed": seed, "t": flow.t, "s": flow.s, "norm_in": psi.l2_norm(),
           "norm_out": out.l2_norm(), "meta": out.meta}
    return {"json": _json_text(scn, doc),
            "csv": _with_csv_writer(scn, out.to_csv)}


def _task_cauchy(scn, beta, seed):
    t, s = scn.times()
    eps = scn.raw.get("eps_schedule", [2.0 ** -k for k in range(4, 9)])
    _, rep = propagate_rough(scn.hamiltonian(), scn.noise(), beta, _initial_state(scn), t, s,
                             eps, flow_kw=scn.flow_kw)
    return {"json": _json_text(scn, {"seed": seed, "levels": rep.to_json()})}


def _task_nls(scn, beta, seed):
    c = scn.raw.get("nls", {})
    cfg = NlsConfig(lam=scn.raw.get("lambda", 1.0), sigma=scn.raw.get("sigma", 1.0),
                    dt=c.get("dt", 0.05), method=c.get("method", "splitstep"))
    _, s = scn.times()
    traj = solve_nls(scn.hamiltonian(), scn.noise(), beta, cfg, _initial_state(scn), s,
                     c.get("duration", 0.5))
    return {"csv": _with_csv_writer(scn, traj.to_csv)}


def _sweep_rows(scn, beta, seed):
    """Dispersive ratios ``sup|K| |t-s|^{d/2}`` at every solver node in ``[dt_min, dt_max]``."""
    _require_hypotheses(scn, beta)
    sw = scn.raw.get("sweep", {})
    dt_min = sw.get("dt_min", 1e-3)
    _, s = scn.times()
    dt_max = min(sw.get("dt_max", 0.5), beta.grid.end - s)
    flow = _flow(scn, beta, t=s + dt_max, s=s)
    d = scn.dim
    rows = []
    for k, tau in enumerate(flow.history.times):
        dt = float(tau - s)
        if dt < dt_min:
            continue
        sup = dispersive_sup(hk_kernel(flow.at_node(k)))
        rows.append([seed, dt, sup, sup * dt ** (d / 2)])
    return rows


TASKS = {"flow": _task_flow, "kernel": _task_kernel, "propagate": _task_propagate,
         "cauchy": _task_cauchy, "nls": _task_nls}


def verify_scenario(scn: Scenario, beta) -> dict:
    """Run the invariant suite on one scenario member; raise :class:`InvariantFailed`."""
    t, s = scn.times()
    H, K = scn.hamiltonian(), scn.noise()
    flow = solve_flow(H, K, beta, t, s, **scn.flow_kw)
    report = {"symplectic_residual": symplectic_residual(flow.F)}
    if report["symplectic_residual"] > 1e-9:
        raise InvariantFailed(f"symplectic: residual {report['symplectic_residual']:.3e}")
    tm = 0.5 * (t + s)
    f1 = solve_flow(H, K, beta, tm, s, **scn.flow_kw)
    f2 = solve_flow(H, K, beta, t, tm, **scn.flow_kw)
    comp = f2.compose(f1)
    report["chapman_residual"] = float(np.max(np.abs(comp.F - flow.F)) +
                                       np.max(np.abs(comp.v - flow.v)))
    if report["chapman_residual"] > 1e-9:
        raise InvariantFailed(f"chapman: composition residual {report['chapman_residual']:.3e}")
    if validate_hypotheses(H, K, beta.mu).ok:
        try:
            km = mehler_kernel(flow, H, K, beta, t, s)
        except NumericalFailure:
            km = None
        if km is not None:
            kh = hk_kernel(flow)
            rng = np.random.default_rng(0)
            pts = rng.normal(size=(5, 2, H.dim))
            diff = max(abs(np.ravel(kh(x, y) - km(x, y))[0]) for x, y in pts)
            report["hk_mehler_agreement"] = float(diff)
            if diff > scn.tol["verify_tol"] * max(1.0, abs(km.pref)):
                raise InvariantFailed(f"hk-mehler: kernels differ by {diff:.3e}")
    if H.dim <= 2 and "grid" in scn.raw:
        psi = _initial_state(scn)
        out = apply_kernel(hk_kernel(flow), psi, tail_tol=scn.tol["tail_tol"])
        drift = abs(out.l2_norm() - psi.l2_norm())
        report["unitarity"] = drift
        if drift > 1e-6:
            raise InvariantFailed(f"unitarity: norm drift {drift:.3e}")
    return report


def sweep_horizon(scn: Scenario, bisect_tol: float | None = None, seed: int | None = None,
                  scale: float | None = None) -> float:
    """Largest ``Delta`` such that the flow on ``[s, s+Delta]`` solves and stays caustic-free.

    Caustic-free means ``|det B(tau)| / (tau - s)^d >= gamma_min`` at every solver
    node and at the endpoint with ``tau - s >= dt_min``. Returns 0 when even the
    smallest probe fails.
    """
    tol = scn.tol
    bisect_tol = tol["bisect_tol"] if bisect_tol is None else bisect_tol
    gamma_min = tol["gamma_min"]
    dt_min = scn.raw.get("sweep", {}).get("dt_min", 1e-3)
    beta = scn.driver(seed=seed, scale=scale)
    H, K = scn.hamiltonian(), scn.noise()
    _, s = scn.times()
    d = H.dim
    hi_cap = beta.grid.end - s
    if hi_cap < dt_min:
        return 0.0

    def ok(delta: float) -> bool:
        try:
            flow = solve_flow(H, K, beta, s + delta, s, **scn.flow_kw)
        except NumericalFailure:
            return False
        h = flow.history
        F = h.F if h is not None else flow.F[None]
        taus = h.times if h is not None else np.array([flow.t])
        dt = np.asarray(taus) - s
        keep = dt >= dt_min
        dets = np.abs(np.linalg.det(F[keep][:, :d, d:]))
        if np.any(dets < gamma_min * dt[keep] ** d):
            return False
        return abs(np.linalg.det(flow.B)) >= gamma_min * delta ** d

    if not ok(dt_min):
        return 0.0
    if ok(hi_cap):
        return float(hi_cap)
    # Grow geometrically to bracket the first failure, so a late recovery is not picked up.
    lo = dt_min
    hi = min(2 * lo, hi_cap)
    while ok(hi):
        lo, hi = hi, min(2 * hi, hi_cap)
    while hi - lo > bisect_tol:
        mid = 0.5 * (lo + hi)
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return float(lo)


def parse_seeds(text: str) -> list[int]:
    """``"3"``, ``"0..9"`` (inclusive) or ``"1,4,7"``."""
    text = text.strip()
    if ".." in text:
        a, b = text.split("..", 1)
        a, b = int(a), int(b)
        if b < a:
            raise ValueError(f"empty seed range {text!r}")
        return list(range(a, b + 1))
    return [int(x) for x in text.split(",") if x.strip()]


def _timestamp() -> str:
    return datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%S%fZ")


def run(scn: Scenario, out_dir, seeds=None, threads: int = 1, verify: bool = False) -> list[Path]:
    """Execute the scenario task for each seed and write its outputs; return the file paths."""
    out_dir = Path(out_dir)
    seeds = list(seeds) if seeds is not None else scn.seeds()
    if seeds != scn.seeds():
        scn = Scenario.from_dict({**scn.raw, "seeds": seeds}, base=scn._base)
    stamp = _timestamp()
    task = scn.task
    workers = max(1, int(threads))

    def member(seed):
        beta = scn.driver(seed=seed)
        res = {}
        if verify:
            res["verify"] = verify_scenario(scn, beta)
        if task == "dispersive-sweep":
            res["rows"] = _sweep_rows(scn, beta, seed)
        else:
            res.update(TASKS[task](scn, beta, seed))
        return seed, res

    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(member, seeds))

    written = []
    multi = len(seeds) > 1
    if task == "dispersive-sweep":
        rows = [r for _, res in results for r in res["rows"]]
        written.append(atomic_write(out_dir / f"{task}_{stamp}.csv",
                                    _csv_text(scn, ["seed", "dt", "sup_abs_kernel",
                                                    "bound_ratio"], rows)))
    for seed, res in results:
        suffix = f"_seed{seed}" if multi else ""
        for ext in ("json", "csv"):
            if ext in res:
                written.append(atomic_write(out_dir / f"{task}_{stamp}{suffix}.{ext}", res[ext]))
        if verify:
            written.append(atomic_write(out_dir / f"verify_{stamp}{suffix}.json",
                                        _json_text(scn, res["verify"])))
    return written


def _default_out(scn: Scenario, cli_out: str | None) -> Path:
    if cli_out:
        return Path(cli_out)
    if os.environ.get(OUT_ENV):
        return Path(os.environ[OUT_ENV])
    return Path(scn.raw.get("output_dir", "."))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="roughquad", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("run", "sweep-horizon"):
        sp = sub.add_parser(name)
        sp.add_argument("file")
        sp.add_argument("--seeds", type=parse_seeds, default=None,
                        help="seed range a..b (inclusive) or comma list")
        sp.add_argument("--out", default=None,
                        help=f"output directory (default: ${OUT_ENV} or config output_dir)")
        sp.add_argument("--threads", type=int, default=1)
        sp.add_argument("--verify", action="store_true",
                        help="run the invariant suite on each scenario member")
        if name == "sweep-horizon":
            sp.add_argument("--bisect-tol", type=float, default=None)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        scn = Scenario.load(args.file)
        out = _default_out(scn, args.out)
        if args.command == "run":
            for f in run(scn, out, args.seeds, args.threads, args.verify):
                print(f)
        else:
            seeds = args.seeds if args.seeds is not None else scn.seeds()
            with ThreadPoolExecutor(max_workers=max(1, args.threads)) as pool:
                vals = list(pool.map(lambda sd: sweep_horizon(scn, args.bisect_tol, sd), seeds))
            doc = [{"seed": sd, "T_R": v} for sd, v in zip(seeds, vals)]
            f = atomic_write(out / f"sweep-horizon_{_timestamp()}.json", _json_text(scn, doc))
            for row in doc:
                print(f"seed={row['seed']} T_R={row['T_R']:.6g}")
            print(f)
    except ConfigError as exc:
        print(f"config error at {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"config error at $: {exc}", file=sys.stderr)
        return 1
    except HypothesisViolated as exc:
        print(f"hypothesis violated: {exc}", file=sys.stderr)
        return 2
    except NumericalFailure as exc:
        print(f"numerical failure [{type(exc).__name__}]: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
