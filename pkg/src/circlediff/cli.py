"""``circlediff`` command line: every experiment as a reproducible subcommand.

Parameters come from an INI file (``--config``; section named after the
subcommand, shared keys under ``[run]``) and are overridden by flags.  Each run
writes ``<name>-<fingerprint>.csv`` and a matching ``.manifest.json`` under
``--out`` (or ``$CIRCLEDIFF_OUT``).

Exit codes: 0 the run completed (a failed check is reported as ``passed:
false`` in the output, not through the exit code), 2 config error, 3 numerical
failure.
"""
from __future__ import annotations

import argparse
import configparser
import json
import math
import sys
import time
import traceback
from dataclasses import dataclass
from typing import Any, Callable

import numpy as np

from . import experiments as ex
from .circle_maps import DomainError, MoebiusDiffeo, MoebiusElement, NumericalError
from .io import output_dir, rows_to_csv, to_jsonable, write_manifest, write_text
from .measures import fingerprint, sample_nu_beta, seed_sequence
from .operators import (ANTIPERIODIC, PERIODIC, build_blocks, det2_abs_A_from_C, det_abs_A2_from_C,
                        moebius_det_closed_form)
from .welding import verify_weld, weld

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        super().__init__("; ".join(problems))
        self.problems = problems


# ---------------------------------------------------------------- parameter schema

def _float_list(text: str) -> list[float]:
    return [float(x) for x in str(text).split(",") if x.strip()]


def _int_list(text: str) -> list[int]:
    return [int(x) for x in str(text).split(",") if x.strip()]


def _positive(v):
    vals = v if isinstance(v, list) else [v]
    return None if all(x > 0 for x in vals) else "must be > 0"


def _at_least(k):
    def check(v):
        vals = v if isinstance(v, list) else [v]
        return None if all(x >= k for x in vals) else f"must be >= {k}"
    return check


def _unit_interval(v):
    vals = v if isinstance(v, list) else [v]
    return None if all(0 <= x < 1 for x in vals) else "must lie in [0, 1)"


def _nonneg(v):
    return None if v >= 0 else "must be >= 0"


def _choice(*opts):
    return lambda v: None if v in opts else f"must be one of {', '.join(opts)}"


def _decreasing(v):
    if _positive(v):
        return "must be > 0"
    return None if all(b < a for a, b in zip(v, v[1:])) else "must be strictly decreasing"


def _nonempty(check):
    def wrapped(v):
        if isinstance(v, list) and not v:
            return "must not be empty"
        return check(v)
    return wrapped


@dataclass(frozen=True)
class Param:
    name: str                       # flag and config key
    kind: Callable[[str], Any]
    default: Any
    check: Callable[[Any], str | None] | None = None
    help: str = ""
    dest: str | None = None         # keyword in the experiment function

    @property
    def kwarg(self) -> str:
        return self.dest or self.name


SEED = Param("seed", int, 0, _nonneg, "root seed")
WORKERS = Param("workers", int, 1, _at_least(1), "worker processes (1 is bit-reproducible)")


def _p(name, kind, default, check=None, help="", dest=None):
    return Param(name, kind, default, check, help, dest)


FAMILY = [
    _p("family", str, "moebius", _choice("moebius", "nu-beta"), "map family"),
    _p("n", int, 1, _at_least(1), "cover level (moebius)"),
    _p("r", float, 0.5, _unit_interval, "|b/a| (moebius)"),
    _p("arg", float, 0.0, None, "argument of b/a (moebius)"),
    _p("beta", float, 1.0, _positive, "inverse temperature (nu-beta)"),
    _p("modes", int, 512, _at_least(1), "bridge modes (nu-beta)"),
]

COMMANDS: dict[str, tuple[str, list[Param]]] = {
    "sample": ("draw maps from nu_beta and tabulate their lifts", [
        _p("beta", float, 1.0, _positive), _p("samples", int, 1, _at_least(1)),
        _p("modes", int, 512, _at_least(1)), _p("grid", int, 256, _at_least(8))]),
    "weld": ("factor one map and list welding coefficients", FAMILY + [
        _p("N", int, 128, _at_least(4))]),
    "blocks": ("entries of the block operator of one map", FAMILY + [
        _p("N", int, 16, _at_least(1)), _p("spin", str, ANTIPERIODIC, _choice(PERIODIC, ANTIPERIODIC))]),
    "det": ("truncated determinants of one map", FAMILY + [
        _p("N", int, 256, _at_least(4)), _p("spin", str, ANTIPERIODIC, _choice(PERIODIC, ANTIPERIODIC))]),
    "su11-check": ("Möbius determinants and their periodic/antiperiodic ratio", [
        _p("n", _int_list, [1, 2, 3], _nonempty(_at_least(1)), "levels", "ns"),
        _p("r", _float_list, [0.2, 0.5, 0.8], _nonempty(_unit_interval), "radii", "rs"),
        _p("N", int, 512, _at_least(8)), _p("tol", float, 1e-3, _positive)]),
    "s2-check": ("Toeplitz commutator determinant", [
        _p("r", _float_list, [0.1, 0.3, 0.5, 0.8], _nonempty(_unit_interval), "radii", "rs"),
        _p("N", int, 512, _at_least(1)), _p("tol", float, 1e-6, _positive)]),
    "cocycle-det": ("determinant cocycle on random Möbius pairs", [
        _p("n", int, 2, _at_least(1)), _p("pairs", int, 10, _at_least(1)),
        _p("radius", float, 0.5, _unit_interval), _p("N", int, 64, _at_least(4)),
        _p("tol", float, 1e-3, _positive)]),
    "virasoro-check": ("Lie algebra cocycle on L_n", [
        _p("max-mode", int, 6, _at_least(0), dest="max_mode"), _p("tol", float, 1e-12, _positive)]),
    "cocycle-identity": ("Bott cocycle identity on random triples", [
        _p("trials", int, 100, _at_least(1)), _p("M", int, 4096, _at_least(16)),
        _p("tol", float, 1e-8, _positive)]),
    "weld-check": ("welding roundtrip and |lambda| versus determinants", [
        _p("N", int, 256, _at_least(8)), _p("samples", int, 100, _at_least(0), dest="n_samples"),
        _p("beta", float, 1.0, _positive), _p("modes", int, 512, _at_least(1), dest="n_modes")]),
    "support-check": ("bound violations on welded samples", [
        _p("samples", int, 1000, _at_least(1), dest="n_samples"), _p("beta", float, 1.0, _positive),
        _p("N", int, 128, _at_least(8)), _p("eps", float, 1e-2, _nonneg),
        _p("modes", int, 512, _at_least(1), dest="n_modes")]),
    "rn-check": ("Radon-Nikodym normalization and transfer identities", [
        _p("samples", int, 10_000, _at_least(2), dest="n_samples"), _p("beta", float, 1.0, _positive),
        _p("modes", int, 256, _at_least(1), dest="n_modes"), _p("K", int, 2048, _at_least(64))]),
    "shift-bound": ("Gaussian shift moment bound", [
        _p("betas", _float_list, [0.25, 0.5, 1.0], _nonempty(_positive)),
        _p("norms", _float_list, [0.25, 0.5, 0.75], _nonempty(_positive)),
        _p("p", _float_list, [1.0, 2.0], _nonempty(_positive), dest="ps"),
        _p("samples", int, 10_000, _at_least(2), dest="n_samples"), _p("mode", int, 1, _at_least(1))]),
    "energy": ("regularized energy: Cauchy residuals and centering", [
        _p("beta", float, 1.0, _positive), _p("samples", int, 1000, _at_least(2), dest="n_samples"),
        _p("table-samples", int, 4000, _at_least(2), dest="table_samples"),
        _p("modes", int, 512, _at_least(1), dest="n_modes"), _p("M", int, 4096, _at_least(64), dest="grid")]),
    "q3220": ("evidence on the exponential moment question", [
        _p("betas", _float_list, [1.0, 0.5, 0.25, 0.1], _nonempty(_positive)),
        _p("n", int, 1, _at_least(1)), _p("samples", int, 2000, _at_least(2), dest="n_samples")]),
    "pitman-yor": ("laws of the Pitman-Yor functional at beta and beta/2", [
        _p("betas", _float_list, [0.1, 0.05], _nonempty(_positive)),
        _p("samples", int, 5000, _at_least(2), dest="n_samples"), _p("tol", float, 0.05, _positive)]),
    "beta-sweep": ("exploratory: weighted welding laws along a beta schedule", [
        _p("c", float, 2.0, _nonneg), _p("h", float, 0.0, _nonneg),
        _p("betas", _float_list, [1.0, 0.5, 0.25], _nonempty(_decreasing)),
        _p("samples", int, 200, _at_least(2), dest="n_samples"), _p("N", int, 64, _at_least(8)),
        _p("table-samples", int, 500, _at_least(2), dest="table_samples")]),
    "probe-13-6": ("exploratory: smallest eigenvalue of |A_a| - |A_p|", [
        _p("samples", int, 20, _at_least(0), dest="n_samples"), _p("beta", float, 1.0, _positive),
        _p("N", int, 48, _at_least(4))]),
}

_SEEDED = {"sample", "weld", "blocks", "det", "cocycle-det", "cocycle-identity", "weld-check",
           "support-check", "rn-check", "shift-bound", "energy", "q3220", "pitman-yor",
           "beta-sweep", "probe-13-6"}
_PARALLEL = {"energy", "q3220", "pitman-yor"}


def _params(command: str) -> list[Param]:
    extra = [SEED] if command in _SEEDED else []
    if command in _PARALLEL:
        extra.append(WORKERS)
    return COMMANDS[command][1] + extra


# ---------------------------------------------------------------- resolution

def _read_config(path: str, command: str, params: list[Param]) -> dict[str, str]:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        with open(path, encoding="utf-8") as fh:
            cp.read_file(fh)
    except (OSError, configparser.Error) as e:
        raise ConfigError([f"config: {e}"]) from None
    known = {p.name for p in params} | {"out"}
    values, problems = {}, []
    # [DEFAULT] and [run] hold keys shared across commands; unknown ones are ignored there
    layers = [("DEFAULT", dict(cp.defaults()))]
    for section in ("run", command):
        if cp.has_section(section):
            layers.append((section, {k: v for k, v in cp.items(section, raw=True)
                                     if k not in cp.defaults()}))
    for section, items in layers:
        for key, val in items.items():
            if key in known:
                values[key] = val
            elif section == command:
                problems.append(f"{section}.{key}: unknown key")
    if problems:
        raise ConfigError(problems)
    return values


def resolve(command: str, args: argparse.Namespace) -> tuple[dict, str | None]:
    """Merge defaults, config file and flags; validate every field."""
    params = _params(command)
    raw = _read_config(args.config, command, params) if args.config else {}
    flags = {p.name: getattr(args, _attr(p.name)) for p in params
             if getattr(args, _attr(p.name), None) is not None}
    out = args.out or raw.pop("out", None)
    values, problems = {}, []
    for p in params:
        if p.name in flags:
            text, origin = flags[p.name], "--" + p.name
        elif p.name in raw:
            text, origin = raw[p.name], f"config {p.name}"
        else:
            values[p.name] = p.default
            continue
        try:
            v = p.kind(text)
        except (TypeError, ValueError):
            problems.append(f"{p.name}: cannot parse {text!r} ({origin})")
            continue
        if isinstance(v, float) and not math.isfinite(v):
            problems.append(f"{p.name}: must be finite ({origin})")
            continue
        msg = p.check(v) if p.check else None
        if msg:
            problems.append(f"{p.name}: {msg}, got {text!r} ({origin})")
            continue
        values[p.name] = v
    if problems:
        raise ConfigError(problems)
    return values, out


def _attr(name: str) -> str:
    return "opt_" + name.replace("-", "_")


# ---------------------------------------------------------------- single-map commands

def _make_map(cfg: dict):
    if cfg["family"] == "moebius":
        m = MoebiusElement.from_w(cfg["r"] * np.exp(1j * cfg["arg"]), 0.0, cfg["n"])
        return m, MoebiusDiffeo(m)
    rng = np.random.default_rng(seed_sequence(cfg["seed"]))
    return None, sample_nu_beta(cfg["beta"], rng, cfg["modes"])


def run_sample(cfg: dict) -> ex.ExperimentResult:
    rows = []
    s = 2 * np.pi * np.arange(cfg["grid"]) / cfg["grid"]
    for i, child in enumerate(seed_sequence(cfg["seed"]).spawn(cfg["samples"])):
        phi = sample_nu_beta(cfg["beta"], np.random.default_rng(child), cfg["modes"])
        P = phi.lift(s)
        b = phi.bridge(s)
        rows += [{"sample": i, "s": float(x), "lift": float(y), "b": float(z)}
                 for x, y, z in zip(s, P, b)]
    return ex.ExperimentResult("sample", rows, {"samples": cfg["samples"]}, None)


def run_weld(cfg: dict) -> ex.ExperimentResult:
    m, phi = _make_map(cfg)
    T = weld(phi, cfg["N"])
    rep = verify_weld(phi, T)
    rows = [{"series": "lambda", "index": 1, "re": T.diag.real, "im": T.diag.imag}]
    rows += [{"series": "u", "index": k, "re": c.real, "im": c.imag}
             for k, c in enumerate(T.u_coefficients, 1)]
    rows += [{"series": "b", "index": k, "re": c.real, "im": c.imag}
             for k, c in enumerate(T.l_inverse_coefficients)]
    summary = {"abs_lambda": abs(T.diag), "roundtrip_error": rep.roundtrip_error,
               "univalent": rep.univalent, "condition_number": T.condition_number,
               "leak": T.leak, "u_tail": T.extra.get("u_tail")}
    return ex.ExperimentResult("weld", rows, summary, None)


def run_blocks(cfg: dict) -> ex.ExperimentResult:
    _, phi = _make_map(cfg)
    op = build_blocks(phi, cfg["spin"], cfg["N"])
    rows = []
    for name in ("A", "B", "C", "D"):
        M = getattr(op, name)
        for (i, j), v in np.ndenumerate(M):
            rows.append({"block": name, "row": i, "col": j, "re": v.real, "im": v.imag})
    return ex.ExperimentResult("blocks", rows, {"unitarity_defect": op.unitarity_defect()}, None)


def run_det(cfg: dict) -> ex.ExperimentResult:
    m, phi = _make_map(cfg)
    C = build_blocks(phi, cfg["spin"], cfg["N"]).C
    row = {"spin": cfg["spin"], "N": cfg["N"], "det_abs_A2": det_abs_A2_from_C(C),
           "det2_abs_A": det2_abs_A_from_C(C)}
    if m is not None:
        row["closed_form"] = moebius_det_closed_form(m.level, m.r, cfg["spin"])
    return ex.ExperimentResult("det", [row], dict(row), None)


_DIRECT = {"sample": run_sample, "weld": run_weld, "blocks": run_blocks, "det": run_det}


def execute(command: str, cfg: dict) -> ex.ExperimentResult:
    if command in _DIRECT:
        res = _DIRECT[command](dict(cfg))
        res.params = dict(cfg)
        return res
    kwargs = {p.kwarg: cfg[p.name] for p in _params(command)}
    for k, v in list(kwargs.items()):
        if isinstance(v, list):
            kwargs[k] = tuple(v)
    t0 = time.perf_counter()
    res = ex.REGISTRY[command](**kwargs)
    res.seconds = res.seconds or time.perf_counter() - t0
    return res


# ---------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="circlediff", description=__doc__.split("\n")[0],
                                     allow_abbrev=False)
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for name, (text, _) in COMMANDS.items():
        sp = sub.add_parser(name, help=text, description=text, allow_abbrev=False)
        sp.add_argument("--config", help="INI file; flags override its values")
        sp.add_argument("--out", help="output directory (default $CIRCLEDIFF_OUT or ./circlediff-out)")
        for p in _params(name):
            shown = ",".join(map(str, p.default)) if isinstance(p.default, list) else p.default
            sp.add_argument("--" + p.name, dest=_attr(p.name), default=None, metavar="VALUE",
                            help=f"{p.help} (default {shown})".strip())
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    command = args.command
    try:
        cfg, out = resolve(command, args)
    except ConfigError as e:
        for prob in e.problems:
            print(f"circlediff {command}: config error: {prob}", file=sys.stderr)
        return EXIT_CONFIG

    config = {"command": command, **cfg}
    fp = fingerprint({k: v for k, v in config.items() if k != "workers"})
    root = output_dir(out)
    stem = f"{command}-{fp}"
    manifest = root / f"{stem}.manifest.json"
    t0 = time.perf_counter()
    try:
        res = execute(command, cfg)
    except (DomainError, ValueError) as e:
        print(f"circlediff {command}: config error: {e}", file=sys.stderr)
        write_manifest(manifest, config, cfg.get("seed"), time.perf_counter() - t0, [],
                       error={"type": type(e).__name__, "message": str(e)})
        return EXIT_CONFIG
    except (NumericalError, FloatingPointError, np.linalg.LinAlgError, MemoryError) as e:
        print(f"circlediff {command}: numerical failure: {e}", file=sys.stderr)
        write_manifest(manifest, config, cfg.get("seed"), time.perf_counter() - t0, [],
                       error={"type": type(e).__name__, "message": str(e),
                              "traceback": traceback.format_exc()})
        return EXIT_NUMERIC
    wall = time.perf_counter() - t0

    meta = {"command": command, "fingerprint": fp, "seed": cfg.get("seed"),
            "passed": res.passed}
    outputs = [f"{stem}.csv"]
    write_text(root / outputs[0], rows_to_csv(res.rows, meta))
    for tname, trows in res.tables.items():
        outputs.append(f"{stem}.{tname}.csv")
        write_text(root / outputs[-1], rows_to_csv(trows, {**meta, "table": tname}))
    summary = {"passed": res.passed, **res.summary}
    write_manifest(manifest, config, cfg.get("seed"), wall, outputs, summary)
    print(json.dumps(to_jsonable({"command": command, "passed": res.passed,
                                  "csv": str(root / outputs[0]), **res.summary}), sort_keys=True))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
