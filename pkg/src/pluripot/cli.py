"""Batch front end: ``pluripot <subcommand> --config run.cfg --out DIR``.

Configuration grammar (one statement per line)::

    # comment
    [section]            # following keys are read as section.key
    key = value          # value parsed as JSON, else kept as a bare string
    a.b.c = value        # dotted keys nest

Environment variables ``PLURIPOT__SECTION__KEY=value`` override the file.
Double underscores separate the key path.  Components longer than one letter
are lower-cased; single letters keep their case, so ``PLURIPOT__GRID__N`` sets
the node count and ``PLURIPOT__GRID__n`` the dimension.  Command line flags
override both.

Every run writes its artifacts plus ``manifest.json`` (config echo, version,
schema, wall time and a SHA-256 per artifact).  Failures write ``error.json``
and exit with 1 (invalid input), 2 (solver did not converge) or
3 (mathematical precondition violated).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import subprocess
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .errors import PluripotError, ValidationError

SCHEMA_VERSION = "1"
ENV_PREFIX = "PLURIPOT__"
SUBCOMMANDS = ("envelope", "ma-check", "volume", "regularize", "geodesic", "supercanonical",
               "acceptance-suite")


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def _parse_value(text: str):
    text = text.strip()
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _set(tree: dict, dotted: str, value) -> None:
    *head, last = dotted.split(".")
    node = tree
    for k in head:
        node = node.setdefault(k, {})
        if not isinstance(node, dict):
            raise ValidationError(f"config key {dotted!r} conflicts with a scalar value")
    node[last] = value


def parse_config(text: str) -> dict:
    """Parse the flat ``key = value`` grammar into a nested dict."""
    tree: dict = {}
    section = ""
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            continue
        if "=" not in line:
            raise ValidationError(f"config line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ValidationError(f"config line {lineno}: empty key")
        _set(tree, f"{section}.{key}" if section else key, _parse_value(value))
    return tree


def env_overrides(environ=None) -> dict:
    environ = os.environ if environ is None else environ
    tree: dict = {}
    for name, value in sorted(environ.items()):
        if name.upper().startswith(ENV_PREFIX):
            parts = [p if len(p) == 1 else p.lower() for p in name[len(ENV_PREFIX):].split("__")]
            if all(parts):
                _set(tree, ".".join(parts), _parse_value(value))
    return tree


def merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in over.items():
        out[k] = merge(out[k], v) if isinstance(v, dict) and isinstance(out.get(k), dict) else v
    return out


@dataclass
class RunConfig:
    subcommand: str
    n: int = 1
    N: int = 64
    Nt: int | None = None
    beta: list = field(default_factory=lambda: [[1.0]])
    q: list = field(default_factory=list)
    dims: list | None = None
    tol: float | None = None
    max_iter: int = 200_000
    seed: int = 0
    threads: int = 1
    out: str = "out"
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.subcommand not in SUBCOMMANDS:
            raise ValidationError(f"unknown subcommand {self.subcommand!r}")
        if self.n not in (1, 2):
            raise ValidationError("grid.n must be 1 or 2")
        if not isinstance(self.N, int) or self.N < 4:
            raise ValidationError("grid.N must be an integer >= 4")
        if self.tol is not None and not self.tol > 0:
            raise ValidationError("solver.tol must be positive")
        if self.threads < 1:
            raise ValidationError("threads must be positive")

    @classmethod
    def from_tree(cls, subcommand: str, tree: dict) -> "RunConfig":
        grid = tree.get("grid", {})
        alpha = tree.get("alpha", {})
        solver = tree.get("solver", {})
        n = int(grid.get("n", 1))
        return cls(
            subcommand=subcommand,
            n=n,
            N=grid.get("N", 64),
            Nt=grid.get("Nt"),
            beta=alpha.get("beta", np.eye(n).tolist()),
            q=alpha.get("q", []),
            dims=alpha.get("dims"),
            tol=solver.get("tol"),
            max_iter=int(solver.get("max_iter", 200_000)),
            seed=int(tree.get("seed", 0)),
            threads=int(tree.get("threads", 1)),
            out=str(tree.get("out", "out")),
            options=tree,
        )

    def section(self, name: str) -> dict:
        return dict(self.options.get(name, {}))

    def echo(self) -> dict:
        return {"subcommand": self.subcommand, "seed": self.seed, "threads": self.threads, "config": self.options}


def load_config(subcommand: str, path: str | None, args: argparse.Namespace, environ=None) -> RunConfig:
    """Merge, lowest precedence first: ``--config``, ``--alpha``, environment, command line flags."""
    tree = parse_config(Path(path).read_text()) if path else {}
    alpha_path = getattr(args, _dest("--alpha"), None)
    if alpha_path:
        tree = merge(tree, parse_config(Path(alpha_path).read_text()))
    tree = merge(tree, env_overrides(environ))
    flags: dict = {}
    for name in ("seed", "threads", "out"):
        if getattr(args, name, None) is not None:
            flags[name] = getattr(args, name)
    for flag, key, _, _ in SUBCOMMAND_FLAGS.get(subcommand, []):
        value = getattr(args, _dest(flag), None)
        if key is not None and value is not None:
            _set(flags, key, value)
    return RunConfig.from_tree(subcommand, merge(tree, flags))


# ---------------------------------------------------------------------------
# building blocks
# ---------------------------------------------------------------------------

def _modes(spec) -> list:
    try:
        return [(tuple(int(k) for k in f), float(c), float(s)) for f, c, s in spec]
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"trigonometric modes must be [[freq...], cos, sin] triples: {exc}") from None


def build_alpha(cfg: RunConfig):
    from .geometry import TorusGrid, alpha_from_spec

    grid = TorusGrid(cfg.n, cfg.N)
    beta = np.asarray(cfg.beta, dtype=float)
    if beta.shape != (cfg.n, cfg.n):
        raise ValidationError(f"alpha.beta must be {cfg.n}x{cfg.n}")
    return alpha_from_spec(grid, beta, _modes(cfg.q), cfg.dims)


def _solver_kw(cfg: RunConfig) -> dict:
    kw = {"max_iter": cfg.max_iter}
    if cfg.tol is not None:
        kw["tol"] = cfg.tol
    for key in ("omega",):
        if key in cfg.section("solver"):
            kw[key] = float(cfg.section("solver")[key])
    return kw


def _envelope(cfg: RunConfig, alpha):
    from .monge_ampere import solve_envelope

    return solve_envelope(alpha, cfg.section("solver").get("method"), cfg.dims, **_solver_kw(cfg))


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([f"{v:.17g}" if isinstance(v, float) else v for v in r])


# ---------------------------------------------------------------------------
# pipelines; each returns a report dict and writes its fields into ``out``
# ---------------------------------------------------------------------------

def _read_field(grid, path) -> "ScalarField":
    from .geometry import field_from_csv

    try:
        return field_from_csv(Path(path), grid)
    except (OSError, IndexError, ValueError) as exc:
        raise ValidationError(f"cannot read field {path}: {exc}") from None


def run_envelope(cfg: RunConfig, out: Path) -> dict:
    from .geometry import ScalarField, field_summary, field_to_csv

    alpha = build_alpha(cfg)
    res = _envelope(cfg, alpha)
    field_to_csv(res.phi, out / "phi.csv")
    mask = np.broadcast_to(res.contact, res.phi.values.shape).astype(float)
    field_to_csv(ScalarField(alpha.grid, mask), out / "contact.csv")
    return {"envelope": res.diagnostics(), "class_mass": alpha.class_mass, "phi": field_summary(res.phi)}


def run_ma_check(cfg: RunConfig, out: Path) -> dict:
    """MA report of a stored envelope (``ma.phi``, optionally ``ma.contact``), or of a fresh solve."""
    from .geometry import field_to_csv
    from .monge_ampere import default_contact_tol, eps_grid, ma_measure

    alpha = build_alpha(cfg)
    sec = cfg.section("ma")
    report = {}
    if sec.get("phi"):
        phi = _read_field(alpha.grid, sec["phi"])
        if sec.get("contact"):
            contact = _read_field(alpha.grid, sec["contact"]).values > 0.5
        else:
            contact = phi.values >= -default_contact_tol(alpha.grid.n)
    else:
        res = _envelope(cfg, alpha)
        phi, contact = res.phi, res.contact
        field_to_csv(phi, out / "phi.csv")
        report["envelope"] = res.diagnostics()
    rep = ma_measure(alpha, phi, contact=contact, dilation=float(sec.get("dilation", 2.0)))
    field_to_csv(rep.density, out / "ma_density.csv")
    report.update({"ma": rep.as_dict(), "eps_grid": eps_grid(alpha.grid)})
    return report


def run_volume(cfg: RunConfig, out: Path) -> dict:
    from .geometry import integrate
    from .monge_ampere import contact_volume, volume

    alpha = build_alpha(cfg)
    provenance = {"grid": {"n": cfg.n, "N": cfg.N}, "dims": cfg.dims, "beta": cfg.beta, "q": cfg.q,
                  "version": version_string()}
    if alpha.class_mass == 0.0:
        vol, extra = 0.0, {"class_mass": 0.0}
    else:
        res = _envelope(cfg, alpha)
        vol = volume(alpha, result=res)
        provenance["envelope"] = res.diagnostics()
        extra = {"contact_volume": contact_volume(alpha, res), "class_mass": alpha.class_mass,
                 "integral_alpha_n": integrate(alpha.density())}
    print(f"{vol:.17g}")
    return {"volume": vol, "provenance": provenance, **extra}


def _psi_from_section(grid, sec):
    """A field from a CSV path, or from ``field`` / ``modes`` / ``poles`` entries (summed)."""
    from .geometry import ScalarField, trig_field
    from .supercanonical import green_function

    if isinstance(sec, str):
        return _read_field(grid, sec)
    psi = _read_field(grid, sec["field"]) if sec.get("field") else ScalarField.constant(grid, 0.0)
    if sec.get("modes"):
        psi = psi + trig_field(grid, _modes(sec["modes"]), sec.get("dims"))
    for node, c in sec.get("poles", []):
        if grid.n != 1:
            raise ValidationError("poles are supported for n = 1")
        psi = psi + green_function(grid, tuple(node)) * float(c)
    return psi


def run_regularize(cfg: RunConfig, out: Path) -> dict:
    from .geometry import field_to_csv
    from .regularize import (RegularizationParams, SmoothingKernel, estimate_K, hessian_floor_check,
                             kiselman_transform, lelong_estimate, monotone_defect, rho)

    alpha = build_alpha(cfg)
    sec = cfg.section("regularize")
    psi = _psi_from_section(alpha.grid, cfg.section("psi"))
    kernel = SmoothingKernel(alpha.grid.n)
    K = float(sec.get("K", estimate_K(alpha, kernel)))
    params = RegularizationParams(K=K, A=float(sec.get("A", 0.0)), c=float(sec.get("c", 1.0)),
                                  delta=float(sec.get("delta", 0.25)))
    floor = hessian_floor_check(psi, params, alpha, kernel)
    kres = kiselman_transform(psi, params, kernel)
    field_to_csv(kres.field, out / "kiselman.csv")
    t = float(sec.get("t", sec.get("t_lelong", 4 * alpha.grid.h)))
    field_to_csv(rho(psi, t, kernel), out / "rho_t.csv")
    lelong = [{"node": list(node), "estimate": lelong_estimate(psi, node, t, params, kernel)}
              for node, _ in psi.poles]
    return {"K": K, "t": t, "monotone_defect": monotone_defect(psi, params, kernel), "floor": floor.as_dict(),
            "lelong": lelong}


def run_geodesic(cfg: RunConfig, out: Path) -> dict:
    """Weak geodesic; one CSV per time node, ``phi_t000.csv`` to ``phi_t{Nt-1}.csv``."""
    from .geodesics import GeodesicProblem, weak_geodesic
    from .geometry import field_to_csv

    alpha = build_alpha(cfg)
    sec = cfg.section("geodesic")
    f0 = _psi_from_section(alpha.grid, sec.get("f0", {}))
    f1 = _psi_from_section(alpha.grid, sec.get("f1", {}))
    pb = GeodesicProblem(alpha, f0, f1, Nt=cfg.Nt)
    res = weak_geodesic(pb, init=str(sec.get("init", "linear")), **_solver_kw(cfg))
    width = len(str(pb.Nt - 1))
    for k in range(pb.Nt):
        field_to_csv(res.slice(k), out / f"phi_t{k:0{max(3, width)}d}.csv")
    return {"geodesic": res.report, "t": pb.t.tolist()}


def run_supercanonical(cfg: RunConfig, out: Path) -> dict:
    from .geometry import TorusGrid
    from .supercanonical import KltWeight, SupercanonicalProblem, equality_probe, supercanonical_envelope

    if cfg.n != 1:
        raise ValidationError("the supercanonical envelope is implemented on curves (n = 1)")
    sec = cfg.section("supercanonical")
    grid = TorusGrid(1, cfg.N)
    gamma_spec = sec.get("gamma", [])
    if isinstance(gamma_spec, str):
        gamma_spec = json.loads(gamma_spec)
    points = [tuple(int(i) for i in a) for a, _ in gamma_spec]
    coeffs = [float(c) for _, c in gamma_spec]
    gamma = KltWeight(grid, points, coeffs, normalize=bool(sec.get("normalize", True)))
    pb = SupercanonicalProblem(grid, float(sec.get("lambda", 1.0)), gamma, float(sec.get("p", 1.0)),
                               source_stride=int(sec.get("source_stride", 2)),
                               eval_stride=int(sec.get("eval_stride", max(1, cfg.N // 8))))
    supercanonical_envelope(pb)
    _write_csv(out / "phi_can.csv", ["x1", "y1", "value"],
               [[z[0] * grid.h, z[1] * grid.h, float(v)] for z, v in zip(pb.eval_nodes, pb.phi_can.ravel())])
    rows = []
    for s in pb.solutions:
        for a in np.flatnonzero(s.rho > 0):
            src = pb.table.sources[a]
            rows.append([s.z0[0] * grid.h, s.z0[1] * grid.h, src[0] * grid.h, src[1] * grid.h, float(s.rho[a])])
    _write_csv(out / "rho.csv", ["x1", "y1", "source_x1", "source_y1", "weight"], rows)
    diag = pb.diagnostics()
    probe = equality_probe(pb)
    return {"constraint_residual": diag["constraint_residual"], "green_gap": probe["gap"],
            "rho_support": probe["rho_support"], "duality_gap": diag["duality_gap"], "psh_min": diag["psh_min"]}


def run_acceptance(cfg: RunConfig, out: Path) -> dict:
    from .acceptance import run_suite

    sec = cfg.section("suite")
    return run_suite(scale=str(sec.get("scale", "quick")), seed=cfg.seed, criteria=sec.get("criteria"))


PIPELINES = {
    "envelope": run_envelope,
    "ma-check": run_ma_check,
    "volume": run_volume,
    "regularize": run_regularize,
    "geodesic": run_geodesic,
    "supercanonical": run_supercanonical,
    "acceptance-suite": run_acceptance,
}


# ---------------------------------------------------------------------------
# orchestration
# ---------------------------------------------------------------------------

def version_string() -> str:
    """``git describe`` of the source tree when available, else the package version."""
    try:
        desc = subprocess.run(["git", "describe", "--tags", "--always", "--dirty"], cwd=Path(__file__).parent,
                              capture_output=True, text=True, timeout=10)
        if desc.returncode == 0 and desc.stdout.strip():
            return f"{__version__}+{desc.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def set_threads(threads: int) -> None:
    """Thread count for numba and BLAS; effective when set before they are first loaded."""
    for var in ("NUMBA_NUM_THREADS", "OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(threads)


def run(cfg: RunConfig) -> int:
    """Execute ``cfg``; returns the process exit status."""
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    for stale in ("error.json", "manifest.json"):
        (out / stale).unlink(missing_ok=True)
    np.random.seed(cfg.seed)
    start = time.perf_counter()
    try:
        try:
            report = PIPELINES[cfg.subcommand](cfg, out)
        except PluripotError:
            raise
        except ValueError as exc:
            raise ValidationError(str(exc)) from exc
    except PluripotError as exc:
        err = {"error": type(exc).__name__, "message": str(exc), "exit_code": exc.exit_code}
        for attr in ("iterations", "residual"):
            if getattr(exc, attr, None) is not None:
                err[attr] = getattr(exc, attr)
        _dump(err, out / "error.json")
        print(json.dumps(err), file=sys.stderr)
        return exc.exit_code
    _dump(report, out / "report.json")
    files = sorted(p for p in out.iterdir() if p.is_file() and p.name not in ("manifest.json", "error.json"))
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "version": version_string(),
        "wall_time_s": time.perf_counter() - start,
        "run": cfg.echo(),
        "files": [{"path": p.name, "sha256": _sha256(p), "bytes": p.stat().st_size} for p in files],
    }
    _dump(manifest, out / "manifest.json")
    return 0


def _dump(obj, path: Path) -> None:
    from .geometry import dump_json

    dump_json(obj, path)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ValidationError(message)


# per-subcommand flags: (flag, config path, type, help); flags override config and environment
_GRID_FLAGS = [
    ("--n", "grid.n", int, "complex dimension (1 or 2)"),
    ("--N", "grid.N", int, "nodes per real axis"),
]
_ALPHA_FLAG = ("--alpha", None, str, "extra configuration file with the [grid] and [alpha] sections")
_ALPHA_FLAGS = [_ALPHA_FLAG] + _GRID_FLAGS + [
    ("--method", "solver.method", str, "envelope solver: obstacle (n = 1) or disc"),
]
SUBCOMMAND_FLAGS = {
    "envelope": _ALPHA_FLAGS,
    "volume": _ALPHA_FLAGS,
    "ma-check": _ALPHA_FLAGS + [
        ("--phi", "ma.phi", str, "envelope phi.csv to check instead of solving"),
        ("--contact", "ma.contact", str, "contact.csv written next to --phi"),
    ],
    "regularize": [_ALPHA_FLAG] + _GRID_FLAGS + [
        ("--field", "psi.field", str, "field CSV to regularize (default: the [psi] section)"),
        ("--t", "regularize.t", float, "radius for rho_t and the slope estimates"),
        ("--c", "regularize.c", float, "Kiselman-Legendre slope cap"),
        ("--delta", "regularize.delta", float, "largest radius of the transform"),
        ("--K", "regularize.K", float, "monotonicity constant (default: estimated from alpha)"),
    ],
    "geodesic": [_ALPHA_FLAG] + _GRID_FLAGS + [
        ("--f0", "geodesic.f0", str, "field CSV at t = 0"),
        ("--f1", "geodesic.f1", str, "field CSV at t = 1"),
        ("--Nt", "grid.Nt", int, "time nodes"),
    ],
    "supercanonical": [
        _GRID_FLAGS[1],
        ("--lambda", "supercanonical.lambda", float, "class mass (default 1)"),
        ("--gamma", "supercanonical.gamma", str, 'klt poles as JSON, e.g. "[[[32, 32], 0.5]]"'),
        ("--p", "supercanonical.p", float, "exponent of the L^p constraint (default 1)"),
    ],
}


def _dest(flag: str) -> str:
    return "flag_" + flag.lstrip("-").replace("-", "_")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pluripot", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="subcommand", required=True, parser_class=_Parser)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="configuration file (key = value grammar)")
        p.add_argument("--out", help="output directory (default: out)")
        p.add_argument("--threads", type=int, help="worker threads (default 1, deterministic)")
        p.add_argument("--seed", type=int, help="random seed (default 0)")
        for flag, _, typ, hlp in SUBCOMMAND_FLAGS.get(name, []):
            p.add_argument(flag, dest=_dest(flag), type=typ, help=hlp)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = load_config(args.subcommand, args.config, args)
        set_threads(cfg.threads)
    except PluripotError as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": exc.exit_code}),
              file=sys.stderr)
        return exc.exit_code
    except (OSError, ValueError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": 1}), file=sys.stderr)
        return 1
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
