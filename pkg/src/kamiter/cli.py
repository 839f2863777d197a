"""Command line: configuration, orchestration and report emission.

Config documents are either JSON or flat ``key = value`` lines with dotted
sections, e.g.::

    model = pro2
    model.l = 1
    eps = 1e-6
    stop_tol = 1e-12
"""

from __future__ import annotations

import argparse
import csv
import inspect
import io
import itertools
import json
import math
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .assumptions import (
    DiophantineParams,
    check_diophantine,
    degree_adaptive,
    fit_weak_convexity,
)
from .errors import INFEASIBLE, ConfigError, KamError
from .kam_driver import (
    HYPOTHESES,
    RunOptions,
    StepReport,
    TransformationRecord,
    initial_hamiltonian,
    replay_check,
    run_kam,
)
from .kam_core import NormalForm
from .models import REGISTRY, get_model, make_pro1, make_th3
from .series import FourierTaylorSeries, pruning

_OPTION_FIELDS = {f.name: f for f in fields(RunOptions)}
_TOP_KEYS = {"model", "eps", "out", "seed"}
_TOLERANCES = ("stop_tol", "freq_tol", "homological_tol")


@dataclass
class RunConfig:
    model: str
    eps: float
    model_params: dict = field(default_factory=dict)
    options: RunOptions = field(default_factory=RunOptions)
    out: str = "out"
    seed: int = 0

    def build_model(self):
        return get_model(self.model, **self.model_params)

    def to_flat(self) -> dict:
        d = {"model": self.model, "eps": self.eps, "out": self.out, "seed": self.seed}
        params = dict(self.model_params)
        if self.model == "custom":
            params = {"file": str(params["spec"])}
        d.update({f"model.{k}": v for k, v in sorted(params.items())})
        d.update(asdict(self.options))
        return d


def _flatten(d: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict) and k == "model" and not prefix:
            name = v.get("name")
            if name is not None:
                out["model"] = name
            out.update(_flatten({kk: vv for kk, vv in v.items() if kk != "name"}, "model."))
        else:
            out[key] = v
    return out


def _parse_value(text: str):
    text = text.strip()
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _read_document(text: str) -> dict:
    if text.lstrip().startswith("{"):
        try:
            return _flatten(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ConfigError("<document>", f"invalid JSON: {exc}") from None
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", "expected 'key = value'")
        key, value = line.split("=", 1)
        out[key.strip()] = _parse_value(value)
    return out


def _model_keys(name: str) -> set[str]:
    if name == "custom":
        return {"file"}
    if name.startswith("th3_"):
        # registry entries forward **kw to make_th3 with the case fixed
        return set(inspect.signature(make_th3).parameters) - {"case"}
    return set(inspect.signature(REGISTRY[name]).parameters)


def _number(key, v, kind=float):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(key, f"expected a number, got {v!r}")
    if kind is int:
        if float(v) != int(v):
            raise ConfigError(key, f"expected an integer, got {v!r}")
        return int(v)
    v = float(v)
    if not math.isfinite(v):
        raise ConfigError(key, "must be finite")
    return v


def parse_config(doc: str | dict) -> RunConfig:
    """Validated RunConfig from a flat or JSON document, defaults filled in."""
    flat = _flatten(doc) if isinstance(doc, dict) else _read_document(doc)
    if "model" not in flat:
        raise ConfigError("model", "missing")
    name = flat["model"]
    if name not in REGISTRY:
        raise ConfigError("model", f"unknown model {name!r}; known: {', '.join(REGISTRY)}")
    if "eps" not in flat:
        raise ConfigError("eps", "missing")
    allowed_model = _model_keys(name)
    params, opts = {}, {}
    for key, v in flat.items():
        if key.startswith("model."):
            sub = key[len("model."):]
            if sub not in allowed_model:
                raise ConfigError(key, f"unknown parameter for model {name!r}")
            params[sub] = v
        elif key in _TOP_KEYS:
            continue
        elif key in _OPTION_FIELDS:
            opts[key] = v
        else:
            raise ConfigError(key, "unknown key")
    if name == "custom":
        if "file" not in params:
            raise ConfigError("model.file", "custom model needs a spec file")
        params = {"spec": params["file"]}

    eps = _number("eps", flat["eps"])
    for key, v in list(opts.items()):
        default = _OPTION_FIELDS[key].default
        if key == "mode":
            if v not in ("paper", "practical"):
                raise ConfigError("mode", "must be 'paper' or 'practical'")
        elif v is None:
            if default is not None:
                raise ConfigError(key, "must not be null")
        elif isinstance(default, int) and not isinstance(default, bool):
            opts[key] = _number(key, v, int)
        else:
            opts[key] = _number(key, v)
    for key in _TOLERANCES:
        if key in opts and not opts[key] > 0:
            raise ConfigError(key, "tolerance must be > 0")
    if "grid" in opts and (opts["grid"] < 3 or opts["grid"] % 2 == 0):
        raise ConfigError("grid", "grid size must be odd (and >= 3)")
    try:
        options = RunOptions(**opts)
    except ValueError as exc:
        raise ConfigError("options", str(exc)) from None
    seed = _number("seed", flat.get("seed", 0), int)
    out = str(flat.get("out", "out"))
    cfg = RunConfig(name, eps, params, options, out, seed)
    try:
        cfg.build_model()
    except (TypeError, ValueError, KeyError, OSError) as exc:
        raise ConfigError("model", str(exc)) from None
    return cfg


def format_config(cfg: RunConfig) -> str:
    """Flat ``key = value`` document that parse_config reads back to cfg."""
    flat = _jsonable(cfg.to_flat())
    return "".join(f"{k} = {json.dumps(v)}\n" for k, v in flat.items())


# ---------------------------------------------------------------------------
# reports


def _g(x) -> str:
    if x is None:
        return ""
    return format(float(x), ".17g")


def report_columns(dim: int) -> list[str]:
    return (["step", "r", "s", "mu", "K", "norm_P", "holder_P"]
            + [f"xi_{i + 1}" for i in range(dim)]
            + ["xi_disp", "freq_residual"] + list(HYPOTHESES))


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (complex, np.complexfloating)):
        return {"re": float(x.real), "im": float(x.imag)}
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.floating):
        return float(x)
    return x


def emit_report(reports: list[StepReport], fmt: str = "csv", dim: int | None = None) -> bytes:
    """Deterministic CSV or JSON rendering of step reports (no timings)."""
    if fmt == "json":
        rows = [_jsonable(r.as_dict(timing=False)) for r in reports]
        return (json.dumps(rows, sort_keys=True, indent=1) + "\n").encode()
    if fmt != "csv":
        raise ValueError(f"unknown report format {fmt!r}")
    if dim is None:
        dim = len(reports[0].xi) if reports else 1
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(report_columns(dim))
    for r in reports:
        w.writerow([r.step, _g(r.r), _g(r.s), _g(r.mu), _g(r.K), _g(r.norm_P), _g(r.holder_P)]
                   + [_g(v) for v in r.xi]
                   + [_g(r.xi_displacement), _g(r.freq_residual)]
                   + [_g(r.margins.get(h)) for h in HYPOTHESES])
    return buf.getvalue().encode()


# ---------------------------------------------------------------------------
# torus.json


def _final_section(res) -> dict:
    st, sched = res.state, res.schedule
    node = None
    nf, P = st.nf, st.P
    if st.nodes is not None:
        node = st.grid.nearest_node(st.xi)[0]
        nf, P = st.nodes[node].nf, st.nodes[node].P
    return {
        "node": node,
        "node_xi": None if node is None else [float(v) for v in st.nodes[node].xi],
        "domain": [sched.s, sched.r],
        "normal_form": {"e": nf.e, "omega0": nf.omega0.tolist(), "drift": nf.drift.tolist(),
                        "hbar": nf.hbar.to_dict()},
        "P": P.to_dict(),
    }


def write_outputs(cfg: RunConfig, res, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    dim = cfg.build_model().dim
    (out / "steps.csv").write_bytes(emit_report(res.reports, "csv", dim))
    doc = {"config": cfg.to_flat(), "converged": res.converged, "torus": _jsonable(res.torus)}
    if res.closed_form is not None:
        doc["closed_form"] = {"outcome": res.closed_form.outcome,
                              "roots": list(res.closed_form.roots),
                              "bisection_roots": list(res.closed_form.bisection_roots)}
    if res.record is not None:
        doc["record"] = _jsonable(res.record.to_dict())
        doc["final"] = _jsonable(_final_section(res))
    (out / "torus.json").write_text(json.dumps(doc, indent=1) + "\n")


def replay_file(path: Path) -> float:
    """Relative majorant mismatch between the replayed record and the stored N + P."""
    doc = json.loads(Path(path).read_text())
    if "record" not in doc:
        raise ConfigError("record", f"{path} holds no transformation record")
    cfg = parse_config(doc["config"])
    model = cfg.build_model()
    record = TransformationRecord.from_dict(doc["record"])
    fin = doc["final"]
    with pruning(record.options.get("prune", 1e-30)):
        nfd = fin["normal_form"]
        nf = NormalForm(nfd["e"], nfd["omega0"], FourierTaylorSeries.from_dict(nfd["hbar"]),
                        nfd["drift"])
        P = FourierTaylorSeries.from_dict(fin["P"])
    opt = RunOptions(**record.options)
    H0 = initial_hamiltonian(model, record.eps, opt, xi=fin["node_xi"])
    return replay_check(record, H0, nf, P, tuple(fin["domain"]), node=fin["node"])


# ---------------------------------------------------------------------------
# subcommands


def _model_params(pairs) -> dict:
    out = {}
    for p in pairs or []:
        if "=" not in p:
            raise ConfigError("--param", f"expected key=value, got {p!r}")
        k, v = p.split("=", 1)
        out[f"model.{k.strip()}"] = _parse_value(v)
    return out


def _config_from_args(args) -> RunConfig:
    flat = {}
    if getattr(args, "config", None):
        flat.update(_read_document(Path(args.config).read_text()))
    for key in ("model", "eps", "m", "tau", "mode", "grid", "out", "max_steps", "stop_tol",
                "freq_tol", "seed"):
        v = getattr(args, key, None)
        if v is not None:
            flat[key] = v
    flat.update(_model_params(getattr(args, "param", None)))
    return parse_config(flat)


def cmd_run(args) -> int:
    cfg = _config_from_args(args)
    res = run_kam(cfg.build_model(), cfg.eps, cfg.options, model_spec={
        "name": cfg.model, "params": _jsonable(cfg.model_params)})
    write_outputs(cfg, res, Path(cfg.out))
    steps = len(res.reports)
    if res.closed_form is not None:
        print(f"{cfg.model}: {res.closed_form.outcome}, roots {list(res.closed_form.roots)}")
    else:
        print(f"{cfg.model}: {steps} steps, |P| = {res.torus['norm_P']:.3e}, "
              f"converged = {res.converged}")
    return 0 if res.converged else 1


def assumption_report(model, tau: float = 2.0, K: int = 200) -> dict:
    omega = np.asarray(model.omega, dtype=float)
    gamma = model.gamma(tau, K)
    ok, margin, worst = check_diophantine(omega, DiophantineParams(gamma, tau), K)
    fm = model.frequency_map
    target = fm(np.zeros(model.dim))
    try:
        deg, _ = degree_adaptive(fm.many, list(model.param_box), target, vectorized=True)
    except KamError:
        deg = None
    # five points per axis across the box: pairs both closer and farther than 1
    axes = [np.linspace(a, b, 5) for a, b in model.param_box]
    samples = [np.array(p) for p in itertools.product(*axes)]
    fit = fit_weak_convexity(fm, samples)
    return {
        "model": model.name,
        "diophantine": {"gamma": gamma, "tau": tau, "ok": bool(ok), "margin": float(margin),
                        "worst_k": [int(v) for v in worst]},
        "degree": deg,
        "convexity": {"sigma": float(fit.sigma), "L": fit.L, "violated": bool(fit.violated)},
    }


def cmd_check(args) -> int:
    params = {k[len("model."):]: v for k, v in _model_params(args.param).items()}
    if args.model == "custom":
        params = {"spec": params.pop("file")}
    model = get_model(args.model, **params)
    print(json.dumps(assumption_report(model, args.tau, args.K), indent=1))
    return 0


def counterexample_sweep(ell: int = 1, ks=range(1, 7), options: RunOptions | None = None) -> list[dict]:
    """Solved parameter for eps_k = 1/(k pi + pi/2); infeasible k carry the error."""
    model = make_pro1(ell)
    opt = options or RunOptions(max_steps=1)
    rows = []
    for k in ks:
        eps = 1.0 / (k * math.pi + math.pi / 2)
        try:
            res = run_kam(model, eps, opt)
            rows.append({"k": k, "eps": eps, "xi": [float(v) for v in res.state.xi], "error": None})
        except INFEASIBLE as exc:
            rows.append({"k": k, "eps": eps, "xi": None, "error": f"{type(exc).__name__}: {exc}"})
    return rows


def cmd_counterexample(args) -> int:
    rows = counterexample_sweep(args.ell, range(1, args.k_max + 1))
    for row in rows:
        xi = "-" if row["xi"] is None else f"{row['xi'][1]:+.6f}"
        print(f"k={row['k']}  eps={row['eps']:.6f}  xi_2={xi}  {row['error'] or ''}".rstrip())
    return 2 if any(r["error"] for r in rows) else 0


def cmd_no_solution(args) -> int:
    model = get_model("cor1", ell=args.ell)
    try:
        run_kam(model, args.eps)
    except INFEASIBLE as exc:
        print(f"cor1 eps={args.eps:g}: no solution ({type(exc).__name__}: {exc})")
        return 2
    print(f"cor1 eps={args.eps:g}: unexpectedly converged")
    return 0


def cmd_replay(args) -> int:
    diff = replay_file(Path(args.torus))
    ok = diff <= args.tol
    print(f"replay mismatch {diff:.3e} ({'ok' if ok else 'FAILED'}, tol {args.tol:g})")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="kamiter", description="KAM iteration engine")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="iterate a model and write steps.csv / torus.json")
    run.add_argument("--config", help="flat or JSON config document")
    run.add_argument("--model")
    run.add_argument("--eps", type=float)
    run.add_argument("--m", type=int)
    run.add_argument("--tau", type=float)
    run.add_argument("--mode", choices=("paper", "practical"))
    run.add_argument("--grid", type=int)
    run.add_argument("--out")
    run.add_argument("--max-steps", dest="max_steps", type=int)
    run.add_argument("--stop-tol", dest="stop_tol", type=float)
    run.add_argument("--freq-tol", dest="freq_tol", type=float)
    run.add_argument("--seed", type=int)
    run.add_argument("--param", action="append", metavar="KEY=VALUE", help="model parameter")
    run.set_defaults(func=cmd_run)

    chk = sub.add_parser("check-assumptions", help="Diophantine margin, degree, convexity fit")
    chk.add_argument("--model", required=True, choices=sorted(REGISTRY))
    chk.add_argument("--tau", type=float, default=2.0)
    chk.add_argument("--K", type=int, default=200, help="Diophantine scan cutoff |k|_1 <= K")
    chk.add_argument("--param", action="append", metavar="KEY=VALUE")
    chk.set_defaults(func=cmd_check)

    ce = sub.add_parser("demo-counterexample", help="parameter sweep over eps_k = 1/(k pi + pi/2)")
    ce.add_argument("--ell", type=int, default=1)
    ce.add_argument("--k-max", dest="k_max", type=int, default=6)
    ce.set_defaults(func=cmd_counterexample)

    ns = sub.add_parser("demo-no-solution", help="frequency equation with no real root")
    ns.add_argument("--eps", type=float, default=1e-4)
    ns.add_argument("--ell", type=int, default=1)
    ns.set_defaults(func=cmd_no_solution)

    rp = sub.add_parser("replay", help="re-apply a stored transformation record")
    rp.add_argument("torus", help="torus.json written by 'run'")
    rp.add_argument("--tol", type=float, default=1e-10)
    rp.set_defaults(func=cmd_replay)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return int(args.func(args))
    except INFEASIBLE as exc:
        step = f" (step {exc.step})" if exc.step is not None else ""
        print(f"infeasible{step}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except (KamError, OSError, ValueError, KeyError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
