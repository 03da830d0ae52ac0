"""Command-line front end: scenario files in, CSV or JSON-lines tables out.

A scenario is a flat ``key=value`` file; ``--set key=value`` overrides any
entry. Comma-separated values on non-sweep keys define one series per
combination; the single ``sweep`` key names the x-axis and ``values`` its
points (``1,2,3``, ``start:stop:step`` or ``log:lo:hi:count``).

Every table starts with its resolved scenario as ``#: key=value`` lines
(CSV) or a ``{"meta": ...}`` object (JSON lines). A CSV header is itself a
valid scenario file.

Exit codes: 0 success, 2 configuration error, 3 every point unstable,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import itertools
import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any, Callable, Optional, Sequence

import numpy as np

from . import __version__, bound, oracle, service, simulator
from .bound import ArrivalSpec, SlotSpec, Status
from .service import ChannelParams, FiniteBlocklengthSpec, SchemeKind, SchemeSpec
from .specfun import DomainError

log = logging.getLogger("misodelay")

EXIT_OK, EXIT_CONFIG, EXIT_UNSTABLE, EXIT_NUMERIC = 0, 2, 3, 4

DEFAULTS: dict[str, str] = {
    "scheme": "mrt",
    "M": "1",
    "N": "1",
    "snr_db": "5",
    "sigma_e2": "0",
    "rate_kbps": "24",
    "T_ms": "1",
    "n": "168",
    "n_m": "0",
    "fb": "off",
    "eps": "1e-3",
    "half_log": "off",
    "delay_rounding": "floor",
    "seed": "1",
    "moment_samples": "1000000",
}

# keys a point needs, with the parser for a single value
_SCALARS: dict[str, Callable[[str], Any]] = {
    "scheme": str,
    "M": int,
    "N": int,
    "snr_db": float,
    "sigma_e2": float,
    "m": float,
    "mu": float,
    "sigma2": float,
    "table": str,
    "rate_kbps": float,
    "T_ms": float,
    "symbol_rate_ksps": float,
    "n": int,
    "n_m": int,
    "fb": lambda v: _parse_bool(v),
    "eps": float,
    "half_log": lambda v: _parse_bool(v),
    "w_ms": float,
    "w_slots": float,
    "theta": float,
    "delay_rounding": str,
    "seed": int,
    "horizon": int,
    "warmup": int,
    "moment_samples": int,
}
_SWEEP_AXES = {"w": "w_ms", "w_ms": "w_ms", "w_slots": "w_slots", "M": "M", "snr": "snr_db",
               "snr_db": "snr_db", "eps": "eps", "n": "n", "sigma_e2": "sigma_e2", "theta": "theta"}
_CONTROL = {"sweep", "values", "format"}


class ConfigError(ValueError):
    """Invalid scenario."""


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


def parse_values(text: str) -> list[float]:
    """Sweep points: ``a,b,c``; inclusive ``start:stop:step``; or ``log:lo:hi:count`` in decades."""
    text = text.strip()
    try:
        if text.startswith("log:"):
            lo, hi, count = text[4:].split(":")
            return [float(v) for v in np.logspace(float(lo), float(hi), int(count))]
        if ":" in text:
            start, stop, step = (float(v) for v in text.split(":"))
            if step <= 0 or stop < start:
                raise ConfigError(f"bad range {text!r}")
            count = int(math.floor((stop - start) / step + 1e-9)) + 1
            return [start + k * step for k in range(count)]
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"cannot parse sweep values {text!r}: {exc}") from None


def read_scenario(text: str, source: str = "<scenario>") -> dict[str, str]:
    """Parse ``key=value`` lines. ``#`` starts a comment.

    A file whose first line begins with ``#:`` is treated as a table written
    by this tool, and only its ``#:`` header lines are read.
    """
    lines = text.splitlines()
    from_table = bool(lines) and lines[0].startswith("#:")
    out: dict[str, str] = {}
    for lineno, raw in enumerate(lines, 1):
        if from_table:
            if not raw.startswith("#:"):
                continue
            raw = raw[2:]
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _SCALARS and key not in _CONTROL:
            if from_table:
                continue
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        out[key] = value
    return out


def recipe_text(name: str) -> str:
    try:
        return resources.files("misodelay").joinpath("recipes", f"{name}.txt").read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ConfigError(f"unknown recipe {name!r}") from None


@dataclass(frozen=True)
class Plan:
    """A resolved scenario: settings, series and sweep points."""

    settings: dict[str, str]
    axis: Optional[str]
    values: list[float]
    series_keys: list[str]
    points: list[dict[str, Any]]


def _convert(key: str, text: str) -> Any:
    try:
        return _SCALARS[key](text.strip())
    except ConfigError:
        raise
    except ValueError:
        raise ConfigError(f"bad value for {key}: {text!r}") from None


def make_plan(settings: dict[str, str], default_axis: Optional[str] = None) -> Plan:
    settings = {**DEFAULTS, **settings}
    axis_name = settings.get("sweep", default_axis)
    axis = None
    values: list[float] = []
    if axis_name is not None:
        if axis_name not in _SWEEP_AXES:
            raise ConfigError(f"unknown sweep axis {axis_name!r}")
        axis = _SWEEP_AXES[axis_name]
        if "values" not in settings:
            raise ConfigError("a sweep needs 'values'")
        values = parse_values(settings["values"])
        if not values:
            raise ConfigError("sweep has no points")
        if axis in settings and "," in settings[axis]:
            raise ConfigError(f"{axis} is the sweep axis and cannot also list series values")
    series_keys, series_lists = [], []
    base: dict[str, Any] = {}
    for key, text in settings.items():
        if key in _CONTROL or key == axis:
            continue
        parts = [p for p in text.split(",")]
        if len(parts) > 1:
            series_keys.append(key)
            series_lists.append([_convert(key, p) for p in parts])
        else:
            base[key] = _convert(key, text)
    points = []
    for combo in itertools.product(*series_lists) if series_lists else [()]:
        for value in values or [None]:
            point = dict(base, **dict(zip(series_keys, combo)))
            if axis is not None:
                point[axis] = int(round(value)) if _SCALARS[axis] is int else value
            points.append(point)
    return Plan(settings, axis, values, series_keys, points)


# ---------------------------------------------------------------------------
# Building model objects from a point


def slot_of(p: dict) -> SlotSpec:
    if "symbol_rate_ksps" in p:
        return SlotSpec.from_symbol_time(p["n"], p["n_m"], 1.0 / (p["symbol_rate_ksps"] * 1e3))
    return SlotSpec(n=p["n"], T=p["T_ms"] * 1e-3, n_m=p["n_m"])


def arrival_of(p: dict, slot: SlotSpec) -> ArrivalSpec:
    return ArrivalSpec.from_rate(p["rate_kbps"] * 1e3, slot.T)


def fb_of(p: dict) -> Optional[FiniteBlocklengthSpec]:
    if not p["fb"]:
        return None
    return FiniteBlocklengthSpec(p["n"], p["eps"], p["half_log"])


def scheme_of(p: dict) -> SchemeSpec:
    try:
        kind = SchemeKind(p["scheme"])
    except ValueError:
        raise ConfigError(f"unknown scheme {p['scheme']!r}") from None
    params = ChannelParams(M=p["M"], snr=10.0 ** (p["snr_db"] / 10.0), sigma_e2=p["sigma_e2"], N=p["N"])
    if kind is SchemeKind.GAUSSIAN:
        if "mu" in p and "sigma2" in p:
            mu, sigma2 = p["mu"], p["sigma2"]
        else:
            mrt = SchemeSpec(SchemeKind.MRT_EXACT, params)
            mu, sigma2 = simulator.estimate_rate_moments(mrt, p["moment_samples"], p["seed"])
        return SchemeSpec(kind, params, mu=mu, sigma2=sigma2)
    if kind is SchemeKind.NAKAGAMI:
        if "m" not in p:
            raise ConfigError("nakagami needs m")
        return SchemeSpec(kind, ChannelParams(1, params.snr), m=p["m"])
    if kind is SchemeKind.MIMO_EIGEN:
        if "table" not in p:
            raise ConfigError("mimo needs a coefficient table file")
        return SchemeSpec(kind, params, table=service.load_coefficient_table(p["table"]))
    return SchemeSpec(kind, params)


def mellin_of(scheme: SchemeSpec, fb: Optional[FiniteBlocklengthSpec]) -> service.MellinFn:
    if fb is None:
        return service.scheme_mellin(scheme)
    if scheme.kind in (SchemeKind.MRT_EXACT, SchemeKind.MRT_SUM):
        return service.mellin_fb(scheme.params, fb)
    if scheme.kind is SchemeKind.HIGH_SNR:
        return service.mellin_fb_high_snr(scheme.params, fb)
    raise ConfigError(f"finite blocklength is not available for scheme {scheme.kind.value!r}")


def w_of(p: dict, slot: SlotSpec) -> float:
    if "w_slots" in p:
        return p["w_slots"]
    if "w_ms" not in p:
        raise ConfigError("a delay target (w_ms or w_slots) is required")
    if p["delay_rounding"] not in ("floor", "fractional"):
        raise ConfigError(f"delay_rounding must be floor or fractional, got {p['delay_rounding']!r}")
    return slot.delay_to_slots(p["w_ms"] * 1e-3, fractional=p["delay_rounding"] == "fractional")


def derived_seed(seed: int, index: int) -> int:
    """Independent 64-bit seed for series ``index`` of a run seeded with ``seed``."""
    state = np.random.SeedSequence([seed, index]).generate_state(2, dtype=np.uint32)
    return int(state[0]) | (int(state[1]) << 32)


# ---------------------------------------------------------------------------
# Per-point workers (top level so they pickle)


def _inputs(p: dict, slot: SlotSpec, arrival: ArrivalSpec) -> dict:
    return {"T_slot_ms": slot.T * 1e3, "B": slot.B, "rho_bits": arrival.rho, "rho_nats": arrival.rho_nats}


def bound_point(p: dict) -> dict:
    slot = slot_of(p)
    arrival = arrival_of(p, slot)
    mellin = mellin_of(scheme_of(p), fb_of(p))
    w = w_of(p, slot)
    res = bound.delay_bound(mellin, arrival, slot, w)
    return {**_inputs(p, slot, arrival), "w_slots": w, "p_v": res.p_v, "s_star": res.s_star,
            "stability_margin": res.stability_margin, "status": res.status.value}


def effcap_point(p: dict) -> dict:
    if "theta" not in p:
        raise ConfigError("effcap needs theta values")
    scheme = scheme_of(p)
    mellin = mellin_of(scheme, fb_of(p))
    row = {"R_nats": bound.effective_capacity(mellin, p["theta"])}
    if "mu" in p and "sigma2" in p and scheme.kind is not SchemeKind.GAUSSIAN:
        gauss = service.mellin_gaussian(p["mu"], p["sigma2"])
        row["R_gaussian_nats"] = bound.effective_capacity(gauss, p["theta"])
    return row


def simulate_point(p: dict) -> list[dict]:
    slot = slot_of(p)
    arrival = arrival_of(p, slot)
    scheme = scheme_of(p)
    fb = fb_of(p)
    targets = p["_w_list"]
    w_slots = [int(w_of({**p, "w_ms": w}, slot)) for w in targets]
    uniq = sorted(set(w_slots))
    horizon = p.get("horizon", 10_000_000)
    cfg = simulator.SimConfig(scheme, arrival, slot, tuple(uniq), horizon_slots=horizon, seed=p["_seed"],
                              fb=fb, warmup_slots=p.get("warmup"))
    res = simulator.run(cfg)
    mellin = mellin_of(scheme, fb)
    region = bound.stability_root(mellin, arrival, slot)
    rows = []
    for w_ms, w in zip(targets, w_slots):
        k = uniq.index(w)
        b = bound.delay_bound(mellin, arrival, slot, w, region=region)
        rows.append({**_inputs(p, slot, arrival), "w_ms": w_ms, "w_slots": w, "p_emp": res.p_hat[k],
                     "ci_low": res.ci_low[k], "ci_high": res.ci_high[k], "violations": res.violations[k],
                     "samples": res.samples, "p_v": b.p_v, "status": b.status.value,
                     "mean_service_bits": res.mean_service_bits, "utilization": res.utilization,
                     "mean_delay_slots": res.mean_delay_slots,
                     "backlog_over_rho": res.mean_backlog_bits / arrival.rho if arrival.rho else 0.0,
                     "seed": res.seed, "horizon": res.horizon_slots, "warmup": res.warmup_slots})
    return rows


def _map(func, items: Sequence, jobs: int) -> list:
    if jobs <= 1 or len(items) <= 1:
        return [func(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(func, items))


# ---------------------------------------------------------------------------
# Output


def _cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _json_value(value: Any) -> Any:
    if isinstance(value, float) and not math.isfinite(value):
        return repr(value)
    return value


def render(meta: dict[str, str], rows: list[dict], fmt: str) -> str:
    columns: list[str] = []
    for row in rows:
        for key in row:
            if key not in columns:
                columns.append(key)
    buf = io.StringIO()
    if fmt == "json":
        buf.write(json.dumps({"meta": meta}, sort_keys=False) + "\n")
        for row in rows:
            buf.write(json.dumps({c: _json_value(row.get(c)) for c in columns}) + "\n")
        return buf.getvalue()
    for key, value in meta.items():
        buf.write(f"#: {key}={value}\n")
    writer = csv.writer(buf, lineterminator="\r\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_cell(row.get(c)) for c in columns])
    return buf.getvalue()


def _meta(command: str, plan: Plan) -> dict[str, str]:
    meta = {"tool": f"misodelay {__version__}", "command": command}
    meta.update({k: v for k, v in sorted(plan.settings.items()) if k != "format"})
    meta["units"] = "rho_bits = rate_kbps*1000*T_slot; rho_nats = rho_bits*ln2; B = n/ln2"
    return meta


def _label(plan: Plan, p: dict) -> dict:
    out = {k: p[k] for k in plan.series_keys}
    if plan.axis is not None:
        out[plan.axis] = p[plan.axis]
    return out


# ---------------------------------------------------------------------------
# Commands


def cmd_bound(plan: Plan, jobs: int) -> tuple[list[dict], int]:
    results = _map(bound_point, plan.points, jobs)
    rows = [{**_label(plan, p), **r} for p, r in zip(plan.points, results)]
    code = EXIT_UNSTABLE if all(r["status"] == Status.UNSTABLE.value for r in rows) else EXIT_OK
    return rows, code


def cmd_effcap(plan: Plan, jobs: int) -> tuple[list[dict], int]:
    results = _map(effcap_point, plan.points, jobs)
    return [{**_label(plan, p), **r} for p, r in zip(plan.points, results)], EXIT_OK


def cmd_epsopt(plan: Plan, jobs: int) -> tuple[list[dict], int]:
    if plan.axis != "eps":
        raise ConfigError("epsopt sweeps eps")
    points = [dict(p, fb=True) for p in plan.points]
    results = _map(bound_point, points, jobs)
    rows = [{**_label(plan, p), **r} for p, r in zip(points, results)]
    groups: dict[tuple, list[int]] = {}
    for i, p in enumerate(points):
        groups.setdefault(tuple(p[k] for k in plan.series_keys), []).append(i)
    for idx in groups.values():
        best = min(idx, key=lambda i: (rows[i]["p_v"], i))
        for i in idx:
            rows[i]["is_argmin"] = i == best
    return rows, EXIT_OK


def cmd_simulate(plan: Plan, jobs: int) -> tuple[list[dict], int]:
    if plan.axis not in ("w_ms",):
        raise ConfigError("simulate sweeps w (in ms)")
    series: dict[tuple, dict] = {}
    for p in plan.points:
        key = tuple(p[k] for k in plan.series_keys)
        if key not in series:
            series[key] = dict(p, _w_list=[])
        series[key]["_w_list"].append(p["w_ms"])
    items = []
    for i, (key, p) in enumerate(series.items()):
        p["_seed"] = derived_seed(p["seed"], i)
        items.append(p)
    results = _map(simulate_point, items, jobs)
    rows = []
    for p, res in zip(items, results):
        for r in res:
            rows.append({**{k: p[k] for k in plan.series_keys}, **r})
    return rows, EXIT_OK


def validation_table() -> list[dict]:
    """Closed forms against quadrature over the reference grid."""
    grid_m, grid_z = (1, 2, 3, 4), (0.25, 1.0, 4.0)
    grid_s = (-20.0, -5.0, -1.0, 0.0, 0.5, 0.9, 1.0, 1.5)
    rows = []
    fb_half = FiniteBlocklengthSpec(n=168, eps=0.5)
    for M in grid_m:
        for zeta in grid_z:
            params = ChannelParams(M, zeta)
            mrt = SchemeSpec(SchemeKind.MRT_EXACT, params)
            cases = [
                ("mrt_tricomi", service.mellin_mrt_tricomi(params), mrt, None, None),
                ("mrt_sum", service.mellin_mrt_sum(params), mrt, None, None),
                ("ostbc", service.mellin_ostbc(params), SchemeSpec(SchemeKind.OSTBC, params), None, None),
                ("tas", service.mellin_tas(params), SchemeSpec(SchemeKind.TAS, params), None, None),
                ("low_snr", service.mellin_low_snr(params), SchemeSpec(SchemeKind.LOW_SNR, params), None,
                 lambda s: s < 1.0 + 1.0 / zeta),
                ("high_snr", service.mellin_high_snr(params), SchemeSpec(SchemeKind.HIGH_SNR, params), None,
                 lambda s: s > 1.0 - M),
                ("fb_high_snr_F0", service.mellin_fb_high_snr(params, fb_half), mrt, fb_half, None),
            ]
            for name, mellin, scheme, fb, domain in cases:
                for s in grid_s:
                    if domain is not None and not domain(s):
                        continue
                    closed = mellin(s)
                    ref = oracle.mellin_quadrature_oracle(scheme, s, fb=fb, unit_dispersion=fb is not None)
                    rel = abs(closed - ref) / abs(ref)
                    rows.append({"form": name, "M": M, "zeta": zeta, "s": s, "closed": closed, "oracle": ref,
                                 "rel_err": rel, "pass": rel <= 1e-8})
    return rows


def cmd_validate(plan: Plan, jobs: int) -> tuple[list[dict], int]:
    rows = validation_table()
    return rows, EXIT_OK if all(r["pass"] for r in rows) else EXIT_NUMERIC


COMMANDS = {
    "bound": (cmd_bound, "w"),
    "simulate": (cmd_simulate, "w"),
    "effcap": (cmd_effcap, "theta"),
    "epsopt": (cmd_epsopt, "eps"),
    "validate": (cmd_validate, None),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="misodelay", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"misodelay {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        cmd = sub.add_parser(name)
        cmd.add_argument("scenario", nargs="?", help="scenario file (key=value lines)")
        cmd.add_argument("--recipe", help="built-in scenario, e.g. fig1")
        cmd.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a key")
        cmd.add_argument("--format", choices=("csv", "json"), help="output encoding (default csv)")
        cmd.add_argument("-o", "--output", help="write the table here instead of stdout")
        cmd.add_argument("-j", "--jobs", type=int, default=1, help="worker processes")
        cmd.add_argument("-v", "--verbose", action="store_true")
    return parser


def _settings(args: argparse.Namespace) -> dict[str, str]:
    settings: dict[str, str] = {}
    if args.recipe:
        settings.update(read_scenario(recipe_text(args.recipe), f"recipe:{args.recipe}"))
    if args.scenario:
        path = Path(args.scenario)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read scenario: {exc}") from None
        settings.update(read_scenario(text, str(path)))
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = (x.strip() for x in item.split("=", 1))
        settings.update(read_scenario(f"{key}={value}", "--set"))
    return settings


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    func, default_axis = COMMANDS[args.command]
    try:
        settings = _settings(args)
        fmt = args.format or settings.get("format", "csv")
        if fmt not in ("csv", "json"):
            raise ConfigError(f"unknown format {fmt!r}")
        plan = make_plan(settings, default_axis if args.command != "validate" else None)
        rows, code = func(plan, args.jobs)
    except (ConfigError, DomainError, simulator.UnstableQueueError, FileNotFoundError) as exc:
        code = EXIT_UNSTABLE if isinstance(exc, simulator.UnstableQueueError) else EXIT_CONFIG
        print(f"misodelay: {exc}", file=sys.stderr)
        return code
    except (ArithmeticError, OverflowError) as exc:
        print(f"misodelay: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    text = render(_meta(args.command, plan), rows, fmt)
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8", newline="")
    else:
        sys.stdout.write(text)
        sys.stdout.flush()
    if code == EXIT_UNSTABLE:
        print("misodelay: the queue is unstable at every point", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
