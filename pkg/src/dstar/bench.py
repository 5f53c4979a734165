"""Seeded Monte Carlo sweeps, baselines and the quantization surface, with CSV output."""
from __future__ import annotations

import argparse
import configparser
import csv
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .config import (SWEEPABLE, Architecture, ConfigError, ScenarioConfig, load_scenario,
                     parse_overrides)
from .dbap import evaluate_solution, run_dbap
from .model import ChannelSet, gen_channels
from .qcqp import InfeasibleError
from .star import quantize_profile

WORKERS_ENV = "DSTAR_WORKERS"

RESULT_COLUMNS = ("row_type", "architecture", "param", "value", "seed", "dl_rate", "dl_rate_std",
                  "r_pu", "r_su", "iterations", "status", "n_ok")
QUANT_COLUMNS = ("row_type", "seed", "n_amp_bits", "n_phase_bits", "dl_rate", "dl_rate_full", "loss",
                 "loss_std", "n_ok")


def cell_seed(base_seed: int, index: int) -> int:
    """Channel seed of the ``index``-th Monte Carlo draw.

    Derived from ``(base_seed, index)`` only, so every architecture and every
    swept value sees the same channel realization for a given draw.
    """
    state = np.random.SeedSequence([int(base_seed), int(index)]).generate_state(2, np.uint32)
    return int(state[0]) << 32 | int(state[1])


@dataclass
class SweepSpec:
    param: str
    values: list
    architectures: list = field(default_factory=lambda: [Architecture.DSTAR])
    seeds: int = 20
    overrides: dict = field(default_factory=dict)
    base_seed: int = 0

    def __post_init__(self):
        self.values = list(self.values)
        self.architectures = [Architecture(a) for a in self.architectures]
        self.validate()

    def validate(self):
        if self.param not in SWEEPABLE:
            raise ConfigError(f"parameter '{self.param}' cannot be swept")
        if not self.values:
            raise ConfigError("sweep needs at least one value")
        if not self.architectures:
            raise ConfigError("sweep needs at least one architecture")
        if self.seeds < 1:
            raise ConfigError("seeds must be >= 1")
        # fail early on values that make an invalid scenario (e.g. uneven partitions)
        base = self.base_scenario()
        for v in self.values:
            base.replace(**{self.param: v})

    def base_scenario(self) -> ScenarioConfig:
        return ScenarioConfig().replace(**self.overrides)

    def cells(self):
        for arch in self.architectures:
            for value in self.values:
                for k in range(self.seeds):
                    yield arch, value, k


@dataclass
class ResultRow:
    architecture: str
    value: object
    seed: int
    dl_rate: float
    r_pu: float
    r_su: float
    iterations: int
    status: str
    wall_time: float = 0.0

    def __post_init__(self):
        for name in ("dl_rate", "r_pu", "r_su"):
            v = getattr(self, name)
            if np.isfinite(v) and v < 0:
                raise ValueError(f"{name} must be nonnegative")


def run_baseline(architecture, scenario: ScenarioConfig, channels: ChannelSet | None = None) -> dict:
    """Run one architecture on one scenario and return the result-row fields."""
    arch = Architecture(architecture)
    sc = scenario.replace(architecture=arch)
    if channels is None:
        channels = gen_channels(sc)
    beams, star, trace = run_dbap(sc, channels)
    report = evaluate_solution(beams, star, channels, sc)
    return {"dl_rate": report.dl_sum_rate, "r_pu": report.rate["PU"], "r_su": report.rate["SU"],
            "iterations": trace.iterations, "status": trace.status.value,
            "beams": beams, "star": star, "trace": trace}


def _run_cell(args) -> ResultRow:
    spec_param, value, arch, seed, base = args
    t0 = time.perf_counter()
    try:
        sc = base.replace(**{spec_param: value}).replace(seed=seed, architecture=arch)
        out = run_baseline(arch, sc)
        fields = {k: out[k] for k in ("dl_rate", "r_pu", "r_su", "iterations", "status")}
    except (InfeasibleError, ValueError, np.linalg.LinAlgError) as exc:
        fields = {"dl_rate": float("nan"), "r_pu": float("nan"), "r_su": float("nan"),
                  "iterations": 0, "status": f"Error: {type(exc).__name__}: {exc}"}
    return ResultRow(architecture=Architecture(arch).value, value=value, seed=seed,
                     wall_time=time.perf_counter() - t0, **fields)


def _workers(workers: int | None) -> int:
    if workers is not None:
        return max(1, int(workers))
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        raise ConfigError(f"{WORKERS_ENV} must be an integer") from None


def _map(fn, jobs, workers):
    if workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs))


def run_sweep(spec: SweepSpec, workers: int | None = None) -> list[dict]:
    """Every (architecture, value, seed) cell followed by mean/std rows per (architecture, value).

    Failed cells are kept with their error in ``status``.
    """
    base = spec.base_scenario()
    jobs = [(spec.param, value, arch, cell_seed(spec.base_seed, k), base) for arch, value, k in spec.cells()]
    rows = _map(_run_cell, jobs, _workers(workers))
    table = []
    for r in rows:
        d = asdict(r)
        d.update(row_type="cell", param=spec.param, dl_rate_std="", n_ok="")
        table.append(d)
    for arch in spec.architectures:
        for value in spec.values:
            group = [r for r in rows if r.architecture == arch.value and r.value == value]
            ok = [r for r in group if np.isfinite(r.dl_rate)]
            rates = np.array([r.dl_rate for r in ok])
            mean = lambda a: float(np.mean(a)) if len(a) else float("nan")
            table.append({
                "row_type": "summary", "architecture": arch.value, "param": spec.param, "value": value,
                "seed": "", "dl_rate": mean(rates),
                "dl_rate_std": float(np.std(rates, ddof=1)) if len(rates) > 1 else float("nan"),
                "r_pu": mean([r.r_pu for r in ok]), "r_su": mean([r.r_su for r in ok]),
                "iterations": mean([r.iterations for r in ok]), "status": "summary",
                "n_ok": len(ok)})
    return table


def summary(table: list[dict]) -> dict:
    """``{(architecture, value): (mean rate, std)}`` from the summary rows."""
    return {(r["architecture"], r["value"]): (r["dl_rate"], r["dl_rate_std"])
            for r in table if r["row_type"] == "summary"}


def run_quantization(scenario: ScenarioConfig | None = None, seeds: int = 20, amp_bits=range(1, 11),
                     phase_bits=range(1, 11), base_seed: int = 0) -> list[dict]:
    """Quantize each full-precision solution at every bit pair and re-evaluate with the beams fixed."""
    scenario = scenario or ScenarioConfig()
    amp_bits, phase_bits = list(amp_bits), list(phase_bits)
    for b in amp_bits + phase_bits:
        if not 1 <= int(b) <= 16:
            raise ConfigError("bit counts must lie in [1, 16]")
    table = []
    losses = {(a, p): [] for a in amp_bits for p in phase_bits}
    rates = {(a, p): [] for a in amp_bits for p in phase_bits}
    for k in range(seeds):
        sc = scenario.replace(seed=cell_seed(base_seed, k))
        ch = gen_channels(sc)
        try:
            out = run_baseline(sc.architecture, sc, ch)
        except InfeasibleError:
            continue
        full = out["dl_rate"]
        for a in amp_bits:
            for p in phase_bits:
                q = quantize_profile(out["star"], a, p)
                rate = evaluate_solution(out["beams"], q, ch, sc).dl_sum_rate
                losses[(a, p)].append(full - rate)
                rates[(a, p)].append(rate)
                table.append({"row_type": "cell", "seed": sc.seed, "n_amp_bits": a, "n_phase_bits": p,
                              "dl_rate": rate, "dl_rate_full": full, "loss": full - rate,
                              "loss_std": "", "n_ok": ""})
    for a in amp_bits:
        for p in phase_bits:
            l = np.array(losses[(a, p)])
            table.append({"row_type": "summary", "seed": "", "n_amp_bits": a, "n_phase_bits": p,
                          "dl_rate": float(np.mean(rates[(a, p)])) if len(l) else float("nan"),
                          "dl_rate_full": float(np.mean(np.array(rates[(a, p)]) + l)) if len(l) else float("nan"),
                          "loss": float(np.mean(l)) if len(l) else float("nan"),
                          "loss_std": float(np.std(l, ddof=1)) if len(l) > 1 else float("nan"),
                          "n_ok": len(l)})
    return table


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.9g}"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, tuple):
        return ",".join(_cell(x) for x in v)
    return str(v)


def emit_csv(table: list[dict], path=None, columns=RESULT_COLUMNS) -> str:
    """Header plus rows in a fixed column order, floats at 9 significant digits."""
    import io

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n", quoting=csv.QUOTE_MINIMAL)
    writer.writerow(columns)
    for row in table:
        writer.writerow([_cell(row.get(c, "")) for c in columns])
    text = buf.getvalue()
    if path is not None:
        try:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        except OSError as exc:
            raise OSError(f"cannot write CSV to {path}: {exc}") from exc
    return text


# ---------------------------------------------------------------- spec files

def _split_values(text: str) -> list:
    out = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            num = float(part)
            out.append(int(num) if num.is_integer() and "." not in part else num)
        except ValueError:
            out.append(part)
    return out


def sweep_from_text(text: str) -> SweepSpec:
    """``[sweep]`` section (param, values, architectures, seeds, base_seed) plus optional ``[scenario]``."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    if not parser.has_section("sweep"):
        raise ConfigError("sweep file needs a [sweep] section")
    sw = parser["sweep"]
    if "param" not in sw or "values" not in sw:
        raise ConfigError("[sweep] needs 'param' and 'values'")
    overrides = parse_overrides(dict(parser["scenario"])) if parser.has_section("scenario") else {}
    try:
        return SweepSpec(param=sw["param"].strip(), values=_split_values(sw["values"]),
                         architectures=[a.strip().upper() for a in sw.get("architectures", "DSTAR").split(",")],
                         seeds=int(sw.get("seeds", "20")), overrides=overrides,
                         base_seed=int(sw.get("base_seed", "0")))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


# ---------------------------------------------------------------- CLI

def _scenario_overrides(path) -> dict:
    if path is None:
        return {}
    sc = load_scenario(path)
    default = ScenarioConfig()
    return {k: v for k, v in sc.__dict__.items() if v != getattr(default, k)}


def _parse_param(text: str):
    if "=" not in text:
        raise ConfigError("--param expects name=v1,v2,...")
    name, values = text.split("=", 1)
    return name.strip(), _split_values(values)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dstar", description="DBAP optimizer and experiment sweeps")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="optimize one scenario and write the iteration trace")
    run.add_argument("--scenario")
    run.add_argument("--arch")
    run.add_argument("--seed", type=int)
    run.add_argument("--out")

    sw = sub.add_parser("sweep", help="Monte Carlo sweep over one parameter")
    sw.add_argument("spec", nargs="?", help="sweep file")
    sw.add_argument("--scenario")
    sw.add_argument("--param")
    sw.add_argument("--arch", help="comma-separated architectures")
    sw.add_argument("--seeds", type=int)
    sw.add_argument("--out")

    q = sub.add_parser("quant", help="amplitude/phase quantization surface")
    q.add_argument("--scenario")
    q.add_argument("--seeds", type=int, default=20)
    q.add_argument("--arch")
    q.add_argument("--out")
    return p


def _emit(text: str, out):
    if out is None:
        sys.stdout.write(text)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            sc = load_scenario(args.scenario) if args.scenario else ScenarioConfig()
            if args.arch:
                sc = sc.replace(architecture=args.arch.upper())
            if args.seed is not None:
                sc = sc.replace(seed=args.seed)
            ch = gen_channels(sc)
            beams, star, trace = run_dbap(sc, ch)
            _emit(trace.to_csv(args.out), args.out)
            report = evaluate_solution(beams, star, ch, sc)
            print(json.dumps({"dl_rate": report.dl_sum_rate, "r_pu": report.rate["PU"],
                              "r_su": report.rate["SU"], "status": trace.status.value}), file=sys.stderr)
        elif args.command == "sweep":
            if args.spec:
                spec = sweep_from_text(Path(args.spec).read_text())
            elif args.param:
                name, values = _parse_param(args.param)
                spec = SweepSpec(param=name, values=values)
            else:
                raise ConfigError("sweep needs a spec file or --param")
            if args.scenario:
                spec.overrides = {**_scenario_overrides(args.scenario), **spec.overrides}
            if args.arch:
                spec.architectures = [Architecture(a.strip().upper()) for a in args.arch.split(",")]
            if args.seeds is not None:
                spec.seeds = args.seeds
            spec.validate()
            _emit(emit_csv(run_sweep(spec), args.out), args.out)
        elif args.command == "quant":
            sc = load_scenario(args.scenario) if args.scenario else ScenarioConfig()
            if args.arch:
                sc = sc.replace(architecture=args.arch.upper())
            _emit(emit_csv(run_quantization(sc, seeds=args.seeds), args.out, QUANT_COLUMNS), args.out)
    except (ConfigError, InfeasibleError, OSError, ValueError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
