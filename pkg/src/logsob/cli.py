"""Command-line entry point: ``logsob <subcommand> [flags]``.

Every subcommand writes its results to ``--out`` and prints one summary
line.  Exit codes: 0 ok, 1 invalid input, 2 non-convergence, 3 failed
``--check``.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import bubbles, core, experiments, fit, linearized
from .discretization import SolverError, load_field, make_grid, save_field
from .norms import norm_hminus1

EXIT_OK, EXIT_INPUT, EXIT_CONVERGENCE, EXIT_CHECK = 0, 1, 2, 3

SUBCOMMANDS = (
    "spectrum", "deficit", "residual", "fit", "bubble",
    "sweep", "scalarmax", "interaction", "probe", "witness",
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def parse_values(text: str) -> list[float]:
    """``a:b:step`` (both ends inclusive within 1e-12), a comma list, or one number."""
    text = str(text).strip()
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ValueError(f"range {text!r} must look like a:b:step")
        a, b, step = (float(p) for p in parts)
        if step <= 0 or b < a:
            raise ValueError(f"range {text!r} needs a <= b and a positive step")
        count = int(np.floor((b - a) / step + 1e-12)) + 1
        vals = [a + k * step for k in range(count)]
        if abs(vals[-1] - b) <= 1e-12 * max(1.0, abs(b)):
            vals[-1] = b
        return vals
    return [float(p) for p in text.split(",") if p.strip()]


@dataclass
class RunConfig:
    dim: int = 1
    radius: float | None = None
    points_per_axis: int | None = None
    stencil_order: int = 4
    sigma: float = 0.1
    seed: int = 0
    output_dir: str = "logsob_out"
    format: str = "json"

    def validate(self):
        if self.dim not in (1, 2):
            raise ValueError("--dim must be 1 or 2")
        if self.stencil_order not in (2, 4):
            raise ValueError("--order must be 2 or 4")
        if not 0 < self.sigma <= 0.25:
            raise ValueError("--sigma must lie in (0, 0.25]")
        if self.format not in ("json", "csv"):
            raise ValueError("--format must be json or csv")
        if self.seed < 0:
            raise ValueError("--seed must be nonnegative")

    def grid(self, radius: float, n: int):
        return make_grid(
            self.dim,
            self.radius if self.radius is not None else radius,
            self.points_per_axis if self.points_per_axis is not None else n,
            self.stencil_order,
        )


def _common(p: argparse.ArgumentParser):
    p.add_argument("--dim", type=int)
    p.add_argument("--radius", type=float)
    p.add_argument("--n", type=int, dest="points_per_axis", help="points per axis")
    p.add_argument("--order", type=int, dest="stencil_order")
    p.add_argument("--sigma", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--config", help="JSON file of defaults; flags override it")
    p.add_argument("--out", dest="output_dir")
    p.add_argument("--format", choices=("json", "csv"))
    p.add_argument("--check", action="store_true", help="exit 3 unless the acceptance check passes")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="logsob", description="Numerical lab for the Euclidean log-Sobolev inequality.")
    sub = parser.add_subparsers(dest="command", metavar="subcommand", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("spectrum", help="lowest eigenvalues of a linearized operator")
    p.add_argument("--count", type=int, default=6)
    p.add_argument("--kind", choices=(linearized.OSCILLATOR, linearized.AROUND_BUBBLES), default=linearized.OSCILLATOR)
    p.add_argument("--nu", type=int, default=1)
    p.add_argument("--L", default="8")

    p = sub.add_parser("deficit", help="log-Sobolev deficit of a Gaussian or a field file")
    p.add_argument("--a", type=float, default=1.0, help="inverse variance")
    p.add_argument("--center", type=float, default=0.0, help="first coordinate of the center")
    p.add_argument("--input")

    p = sub.add_parser("residual", help="H^-1 norm of the Euler-Lagrange residual")
    p.add_argument("--input")

    p = sub.add_parser("fit", help="bubble count and H^1 distance to the bubble manifold")
    p.add_argument("--input")
    p.add_argument("--nu", type=int, default=2)
    p.add_argument("--L", default="8")

    p = sub.add_parser("bubble", help="two-bubble construction at one separation")
    p.add_argument("--L", default="6")

    p = sub.add_parser("sweep", help="two-bubble rate sweep")
    p.add_argument("--L", default="4:7:0.5")

    p = sub.add_parser("scalarmax", help="scalar maximization rate")
    p.add_argument("--eta", default="4:10:1")

    p = sub.add_parser("interaction", help="interaction integral rate")
    p.add_argument("--eta", default="4:10:1")
    p.add_argument("--sigma-prime", type=float, default=None)

    p = sub.add_parser("probe", help="randomized stability probe")
    p.add_argument("--nu", type=int, default=1)
    p.add_argument("--L", default="8")
    p.add_argument("--eps", default=",".join(f"{e:.6g}" for e in np.logspace(-4, -2, 9)))
    p.add_argument("--trials", type=int, default=50)

    p = sub.add_parser("witness", help="duality lower bound for the two-bubble residual")
    p.add_argument("--L", default="6")
    p.add_argument("--shift", type=float, default=5.0)

    for sp_ in sub.choices.values():
        _common(sp_)
    return parser


_CONFIG_KEYS = {
    "dim", "radius", "points_per_axis", "n", "stencil_order", "order", "sigma", "seed",
    "output_dir", "out", "format", "check", "count", "kind", "nu", "L", "a", "center",
    "input", "eta", "sigma_prime", "eps", "trials", "shift",
}
_ALIASES = {"n": "points_per_axis", "order": "stencil_order", "out": "output_dir"}


def _load_config(path: str) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ValueError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ValueError("config must be a JSON object")
    unknown = set(doc) - _CONFIG_KEYS
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    return {_ALIASES.get(k, k): v for k, v in doc.items()}


def _config(values: dict) -> RunConfig:
    rc = RunConfig()
    for k in asdict(rc):
        if values.get(k) is not None:
            setattr(rc, k, values[k])
    rc.dim, rc.stencil_order, rc.seed = int(rc.dim), int(rc.stencil_order), int(rc.seed)
    rc.sigma = float(rc.sigma)
    rc.validate()
    return rc


# ---------------------------------------------------------------- output


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, float) and not np.isfinite(obj):
        return repr(obj)
    return obj


def _write(rc: RunConfig, name: str, doc: dict, table: tuple | None = None) -> Path:
    out = Path(rc.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    if rc.format == "csv":
        path = out / f"{name}.csv"
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        if table is not None:
            header, rows = table
            w.writerow(header)
            for r in rows:
                w.writerow([repr(v) if isinstance(v, float) else v for v in r])
        else:
            w.writerow(["key", "value"])
            for k, v in sorted(doc.items()):
                if not isinstance(v, (dict, list)):
                    w.writerow([k, repr(v) if isinstance(v, float) else v])
        path.write_text(buf.getvalue())
    else:
        path = out / f"{name}.json"
        path.write_text(json.dumps(_jsonable(doc), sort_keys=True, indent=2) + "\n")
    return path


# ---------------------------------------------------------------- commands


def _single(values, key) -> float:
    vals = parse_values(values[key])
    if len(vals) != 1:
        raise ValueError(f"--{key} takes a single value here")
    return vals[0]


def cmd_spectrum(rc, v):
    grid = rc.grid(10.0, 401) if rc.dim == 1 else rc.grid(8.0, 161)
    kind = v["kind"]
    centers = None
    if kind == linearized.AROUND_BUBBLES:
        centers = experiments.probe_centers(int(v["nu"]), _single(v, "L"), rc.dim)
    rep = linearized.spectrum(kind, centers, int(v["count"]), grid)
    doc = {"kind": kind, "dim": rc.dim, **rep.to_json()}
    ok = True
    if kind == linearized.OSCILLATOR:
        # level 2k - 2 has multiplicity 1 in d = 1 and k + 1 in d = 2
        levels = [2.0 * k - 2.0 for k in range(20) for _ in range(1 if rc.dim == 1 else k + 1)]
        oracle = np.asarray(levels[: len(rep.eigenvalues)])
        tol = 1e-3 if rc.dim == 1 else 5e-3
        doc["oracle"] = oracle.tolist()
        doc["max_error"] = float(np.max(np.abs(rep.eigenvalues - oracle)))
        ok = doc["max_error"] <= tol
    table = (["index", "eigenvalue", "residual"],
             [(k, float(e), float(r)) for k, (e, r) in enumerate(zip(rep.eigenvalues, rep.residuals))])
    summary = "eigenvalues " + " ".join(f"{e:.6f}" for e in rep.eigenvalues)
    return doc, table, summary, ok


def _gaussian_or_input(rc, v):
    if v.get("input"):
        return load_field(v["input"])
    grid = rc.grid(14.0, 1121)
    center = [float(v.get("center", 0.0))] + [0.0] * (rc.dim - 1)
    return core.gaussian_extremal(core.GaussianParams(float(v.get("a", 1.0)), tuple(center)), grid)


def cmd_deficit(rc, v):
    u = _gaussian_or_input(rc, v)
    rep = core.deficit(u, normalize=True)
    doc = {"deficit": rep.deficit, "grad_l2_sq": rep.grad_l2_sq, "entropy": rep.entropy, "l2": rep.l2}
    return doc, None, f"deficit {rep.deficit:.3e}", abs(rep.deficit) <= 1e-6


def cmd_residual(rc, v):
    if v.get("input"):
        u = load_field(v["input"])
    else:
        grid = rc.grid(8.0, 321)
        u = core.bubble(grid, np.zeros(rc.dim))
    r = norm_hminus1(core.residual(u))
    doc = {"residual_hminus1": r, "spacing": u.grid.spacing}
    return doc, None, f"residual H^-1 {r:.3e} at spacing {u.grid.spacing:g}", r <= 1e-4


def cmd_fit(rc, v):
    if v.get("input"):
        u = load_field(v["input"])
    else:
        L = _single(v, "L")
        nu = int(v["nu"])
        grid = rc.grid(max(8.0, 0.5 * L + 7.0), int(round(2 * max(8.0, 0.5 * L + 7.0) / 0.05)) + 1)
        u = core.bubble_sum(grid, experiments.probe_centers(nu, L, rc.dim))
    dec = fit.struwe_decompose(u)
    doc = {"nu": dec.nu, "energy": dec.energy, "c0": dec.c0, "peak_count": dec.peak_count,
           "poor_fit": dec.poor_fit, **dec.fit.to_json()}
    ok = dec.fit.converged and dec.fit.dist_h1 <= 1e-8
    return doc, None, f"nu {dec.nu} dist {dec.fit.dist_h1:.3e} converged {dec.fit.converged}", ok


def cmd_bubble(rc, v):
    L = _single(v, "L")
    grid = None
    if rc.radius is not None or rc.points_per_axis is not None:
        grid = rc.grid(0.5 * L + 7.0, int(round((L + 14.0) / 0.05)) + 1)
    pair = bubbles.build_pair(L, grid=grid, dim=rc.dim, sigma=rc.sigma)
    doc = pair.summary()
    out = Path(rc.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name in ("rho", "u", "f"):
        save_field(getattr(pair, name), out / f"bubble_{name}.field.json")
    ratios = pair.contraction_ratios
    ok = (pair.iterations <= 30 and (ratios.size == 0 or ratios.max() <= 0.5) and pair.min_u > 0
          and np.max(np.abs(doc["ortho_residuals"])) <= 1e-9 and doc["span_defect"] <= 1e-10)
    return doc, None, f"L {L:g} iterations {pair.iterations} |f|_H-1 {doc['f_hminus1']:.3e} min_u {pair.min_u:.2e}", ok


def cmd_sweep(rc, v):
    res = experiments.sweep_rates(parse_values(v["L"]), dim=rc.dim)
    doc = res.to_json()
    ok = abs(res.residual_fit.slope + 0.125) <= 0.025 and res.ratio_spread <= 3.0
    table = (experiments.SWEEP_HEADER, res.rows)
    summary = f"slope {res.residual_fit.slope:.4f} dist slope {res.dist_fit.slope:.4f} ratio spread {res.ratio_spread:.3f}"
    return doc, table, summary, ok


def cmd_scalarmax(rc, v):
    etas = parse_values(v["eta"])
    fitr = experiments.scalar_max_curve(etas)
    maximizers = [experiments.scalar_maximizer(e)[0] for e in etas]
    doc = {**fitr.to_json(), "eta": etas, "maximizers": maximizers}
    table = (["eta", "alpha_star", "log_max"], [(e, a, y) for e, a, y in zip(etas, maximizers, fitr.log_values)])
    return doc, table, f"slope {fitr.slope:.5f}", abs(fitr.slope + 0.125) <= 0.003


def cmd_interaction(rc, v):
    sigma = float(v["sigma"]) if v.get("sigma") is not None else 0.0
    sigma_prime = float(v["sigma_prime"]) if v.get("sigma_prime") is not None else sigma
    rep = experiments.interaction_curve(parse_values(v["eta"]), sigma, sigma_prime, rc.dim)
    doc = rep.to_json()
    ok = abs(rep.measured_slope - rep.oracle_slope) <= max(0.01, 0.05 * abs(rep.oracle_slope))
    summary = f"measured {rep.measured_slope:.5f} oracle {rep.oracle_slope:.5f} stated {rep.stated_slope:.5f}"
    return doc, None, summary, ok


def cmd_probe(rc, v):
    eps = parse_values(v["eps"])
    rep = experiments.stability_probe(int(v["nu"]), _single(v, "L"), eps, int(v["trials"]), rc.seed, rc.dim)
    doc = rep.to_json()
    finite = len(rep.ratios) > 0 and all(np.isfinite(rep.ratios))
    ok = finite and rep.max_ratio <= 10 * rep.median_ratio and abs(rep.kendall_tau) <= 0.4
    table = (["trial", "eps", "ratio"], [(k, e, r) for k, (e, r) in enumerate(zip(rep.eps_values, rep.ratios))])
    summary = f"median {rep.median_ratio:.4f} max {rep.max_ratio:.4f} tau {rep.kendall_tau:.3f}"
    return doc, table, summary, ok


def cmd_witness(rc, v):
    pair = bubbles.build_pair(_single(v, "L"), dim=rc.dim)
    w = bubbles.lower_bound_witness(pair, float(v["shift"]))
    doc = {"L": pair.L, **w.__dict__}
    ok = w.lower_bound <= w.f_hminus1 * (1 + 1e-9)
    return doc, None, f"lower bound {w.lower_bound:.3e} <= |f|_H-1 {w.f_hminus1:.3e}", ok


COMMANDS = {name: globals()[f"cmd_{name}"] for name in SUBCOMMANDS}


def _thread_limit():
    raw = os.environ.get("LOGSOB_THREADS")
    if raw is None or raw == "":
        return None
    n = int(raw)
    if n < 1:
        raise ValueError("LOGSOB_THREADS must be a positive integer")
    return n


def run(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_INPUT
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    try:
        if ns.config:
            # config values become defaults, so explicit flags still win
            parser._subparsers._group_actions[0].choices[ns.command].set_defaults(**_load_config(ns.config))
            ns = parser.parse_args(argv)
        values = vars(ns)
        rc = _config(values)
        limit = _thread_limit()
        with threadpool_limits(limits=limit):
            doc, table, summary, ok = COMMANDS[ns.command](rc, values)
        path = _write(rc, ns.command, doc, table)
    except (fit.CenterCollision, bubbles.ConvergenceError, bubbles.PositivityLoss, SolverError) as exc:
        print(f"{ns.command}: did not converge: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except (ValueError, TypeError, OSError, KeyError) as exc:
        print(f"{ns.command}: invalid input: {exc}", file=sys.stderr)
        return EXIT_INPUT
    check = values.get("check", False)
    status = "" if not check else (" check PASS" if ok else " check FAIL")
    print(f"{ns.command}: {summary} -> {path}{status}")
    if check and not ok:
        return EXIT_CHECK
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
