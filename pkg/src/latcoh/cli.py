"""Command-line front end.

Subcommands: ``analyze`` (closed-form measures for one configuration),
``validate`` (formula vs. Lyapunov-oracle agreement), ``sweep`` (size sweeps
with growth classification), ``simulate`` (stochastic runs and the canned
experiments), and ``sums`` (lattice-sum asymptotics). Configuration lives in
a single JSON document; flags override scalar fields only. All file output
is written atomically (temp file + rename) and fully derived from config and
seed, so identical inputs give byte-identical outputs.

Exit codes: 0 ok, 2 config error, 3 instability, 4 parity, 5 oracle cap,
6 validation failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys

import numpy as np

from .errors import (
    ConfigError,
    LatcohError,
    OracleCapError,
    ParityError,
    StabilityError,
    StructureError,
    ValidationFailure,
)
from .lyapunov import STATE_CAP, full_state_h2, realize, sum_per_wavenumber
from .measures import (
    MeasureKind,
    control_effort,
    stability_check,
    variance,
)
from .spectral import least_damped_eigenvalue, symbol_of_stencil
from .stencils import (
    FeedbackKind,
    FeedbackSpec,
    spec_digest,
    standard_consensus_spec,
    standard_vehicular_spec,
    stencil_from_dict,
    validate_structure,
)
from .simulate import (
    SimConfig,
    accordion_experiment,
    simulate,
    string_stability_experiment,
    trajectory_to_binary,
    trajectory_to_csv,
)
from .sweeps import SweepPlan, sweep, verify_sum_asymptotics
from .torus import TorusShape, site_coords

EXIT_CODES = {
    ConfigError: 2,
    StructureError: 2,
    StabilityError: 3,
    ParityError: 4,
    OracleCapError: 5,
    ValidationFailure: 6,
}

_MEASURE_NAMES = {m.value: m for m in MeasureKind}


def _parse_measures(names) -> tuple[MeasureKind, ...]:
    kinds = []
    for name in names:
        if name not in _MEASURE_NAMES:
            raise ConfigError(f"unknown measure {name!r}")
        kinds.append(_MEASURE_NAMES[name])
    return tuple(kinds)


def load_config(path: str) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc


def shape_from_config(doc: dict) -> TorusShape:
    try:
        sh = doc["shape"]
        return TorusShape(int(sh["d"]), int(sh["N"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"config needs shape.d and shape.N: {exc}") from exc


def build_spec(system: dict, shape: TorusShape) -> FeedbackSpec:
    """Build a feedback spec from the ``system`` config section."""
    if not isinstance(system, dict) or "kind" not in system:
        raise ConfigError("config needs a system section with a kind")
    kind = system["kind"]
    if kind == "consensus":
        if "standard" in system:
            return standard_consensus_spec(shape, float(system["standard"]["beta"]))
        if "a" in system:
            spec = FeedbackSpec.consensus(stencil_from_dict(system["a"]))
            if spec.shape != shape:
                raise ConfigError("stencil shape disagrees with config shape")
            return spec
        raise ConfigError("consensus system needs 'standard' or an explicit array")
    if kind == "vehicular":
        g_o = float(system.get("g_o", 0.0))
        f_o = float(system.get("f_o", 0.0))
        mu = float(system.get("mu", 0.0))
        if "standard" in system:
            return standard_vehicular_spec(shape, float(system["standard"]["beta"]),
                                           g_o=g_o, f_o=f_o, mu=mu)
        if "g_rel" in system and "f_rel" in system:
            spec = FeedbackSpec.vehicular(
                stencil_from_dict(system["g_rel"]), stencil_from_dict(system["f_rel"]),
                g_o=g_o, f_o=f_o, mu=mu)
            if spec.shape != shape:
                raise ConfigError("stencil shape disagrees with config shape")
            return spec
        raise ConfigError("vehicular system needs 'standard' or explicit stencils")
    raise ConfigError(f"unknown system kind {kind!r}")


class _SpecTemplate:
    """Rebuilds the configured system on a torus of a different size."""

    def __init__(self, system: dict, d: int):
        self.system = system
        self.d = d

    def __call__(self, N: int) -> FeedbackSpec:
        return build_spec(self.system, TorusShape(self.d, N))


def write_output(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
        if not text.endswith("\n"):
            sys.stdout.write("\n")
        return
    tmp = f"{out}.tmp"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, out)


def dump_json(doc: dict) -> str:
    return json.dumps(doc, sort_keys=True, indent=2)


def rows_to_csv(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def _dump_symbols(spec: FeedbackSpec, path: str) -> None:
    shape = spec.shape
    coords = site_coords(shape)
    header = [f"n_{i + 1}" for i in range(shape.d)]
    if spec.kind is FeedbackKind.CONSENSUS:
        vals = symbol_of_stencil(spec.a).values
        header += ["re", "im"]
        rows = [list(map(int, c)) + [v.real, v.imag] for c, v in zip(coords, vals)]
    else:
        g = symbol_of_stencil(spec.g_rel).values + spec.g_o
        f = symbol_of_stencil(spec.f_rel).values + spec.f_o - spec.mu
        header += ["g_re", "g_im", "f_re", "f_im"]
        rows = [list(map(int, c)) + [gv.real, gv.imag, fv.real, fv.imag]
                for c, gv, fv in zip(coords, g, f)]
    write_output(rows_to_csv(header, rows), path)


def cmd_analyze(args) -> int:
    config = load_config(args.config)
    shape = shape_from_config(config)
    spec = build_spec(config.get("system"), shape)
    section = config.get("analyze", {})
    measure_names = args.measure or section.get("measures", ["dav"])
    kinds = _parse_measures(measure_names)
    beta_ref = section.get("beta_ref")
    structure = validate_structure(spec)
    stability = stability_check(spec)
    if not stability.passed:
        raise StabilityError("closed loop is unstable", stability.offending)
    reports = [variance(spec, kind, beta_ref) for kind in kinds
               if kind is not MeasureKind.CONTROL_EFFORT]
    doc = {
        "shape": {"d": shape.d, "N": shape.N},
        "spec_digest": spec_digest(spec),
        "structure": structure.to_dict(),
        "stability": stability.to_dict(),
        "measures": [r.to_dict() for r in reports],
        "control_effort_per_site": control_effort(spec),
        "least_damped_eigenvalue": least_damped_eigenvalue(spec),
    }
    if args.symbols_out:
        _dump_symbols(spec, args.symbols_out)
    if args.format == "csv":
        rows = [[r.kind.value, r.total, r.per_site] for r in reports]
        rows.append(["effort_per_site", doc["control_effort_per_site"], ""])
        rows.append(["least_damped_eigenvalue", doc["least_damped_eigenvalue"], ""])
        write_output(rows_to_csv(["measure", "total", "per_site"], rows), args.out)
    else:
        write_output(dump_json(doc), args.out)
    return 0


def default_validation_suite() -> list[tuple[int, int]]:
    suite = [(d, N) for d in (1, 2) for N in range(3, 9)]
    suite += [(3, N) for N in (3, 4, 5)]
    return suite


def _validation_specs(shape: TorusShape, beta: float) -> list[tuple[str, FeedbackSpec]]:
    return [
        ("consensus", standard_consensus_spec(shape, beta)),
        ("vehicular rel-rel", standard_vehicular_spec(shape, beta)),
        ("vehicular rel-abs", standard_vehicular_spec(shape, beta, f_o=-1.0)),
        ("vehicular abs-rel", standard_vehicular_spec(shape, beta, g_o=-1.0)),
        ("vehicular abs-abs", standard_vehicular_spec(shape, beta, g_o=-1.0, f_o=-1.0)),
    ]


def run_validation(cases=None, beta: float = 1.0, corrupt: bool = False,
                   cap: int = STATE_CAP):
    """Three-way comparison of closed form, per-wavenumber Lyapunov, and
    full-state Lyapunov for every configuration in the suite."""
    if cases is None:
        cases = default_validation_suite()
    rows = []
    worst = 0.0
    for d, N in cases:
        shape = TorusShape(d, N)
        measures = [MeasureKind.LOCAL_ERROR, MeasureKind.DEVIATION_FROM_AVERAGE]
        if N % 2 == 0:
            measures.append(MeasureKind.LONG_RANGE_DEVIATION)
        for label, spec in _validation_specs(shape, beta):
            for kind in measures:
                closed = variance(spec, kind).total
                if corrupt:
                    closed *= 1.0 + 1e-6
                per_n = sum_per_wavenumber(spec, kind)
                full = full_state_h2(realize(spec, kind, cap=cap))
                scale = max(abs(closed), abs(per_n), abs(full), 1e-300)
                dev = max(abs(closed - per_n), abs(closed - full),
                          abs(per_n - full)) / scale
                worst = max(worst, dev)
                rows.append({"d": d, "N": N, "spec": label, "measure": kind.value,
                             "closed_form": closed, "per_wavenumber": per_n,
                             "full_state": full, "max_rel_dev": dev})
    return rows, worst


def cmd_validate(args) -> int:
    cases = None
    beta = 1.0
    if args.config:
        config = load_config(args.config)
        section = config.get("validate", {})
        beta = float(section.get("beta", 1.0))
        if "cases" in section:
            cases = [(int(c["d"]), int(c["N"])) for c in section["cases"]]
    rows, worst = run_validation(cases=cases, beta=beta,
                                 corrupt=args.corrupt_formula)
    doc = {"tolerance": args.tolerance, "max_rel_deviation": worst,
           "passed": worst <= args.tolerance, "rows": rows}
    if args.format == "csv":
        header = ["d", "N", "spec", "measure", "closed_form", "per_wavenumber",
                  "full_state", "max_rel_dev"]
        write_output(rows_to_csv(header, [[r[h] for h in header] for r in rows]),
                     args.out)
    else:
        write_output(dump_json(doc), args.out)
    if worst > args.tolerance:
        raise ValidationFailure(
            f"max relative deviation {worst:g} exceeds tolerance {args.tolerance:g}")
    return 0


def cmd_sweep(args) -> int:
    config = load_config(args.config)
    section = config.get("sweep")
    if not section:
        raise ConfigError("config needs a sweep section")
    d = int(section.get("d", config.get("shape", {}).get("d", 1)))
    if args.sizes:
        sizes = tuple(int(s) for s in args.sizes.split(","))
    else:
        sizes = tuple(int(s) for s in section["sizes"])
    measure = _parse_measures([section.get("measure", "dav")])[0]
    plan = SweepPlan(
        d=d, sizes=sizes, spec_factory=_SpecTemplate(config.get("system"), d),
        measure=measure, label=section.get("label", ""),
        fit_floor=int(section.get("fit_floor", 17)),
        theory_class=section.get("theory_class"),
        theory_exponent=section.get("theory_exponent"),
        exponent_band=float(section.get("exponent_band", 0.2)))
    report = sweep(plan, workers=args.workers)
    if args.format == "csv":
        rows = list(zip(report.sizes, report.per_site))
        write_output(rows_to_csv(["N", "per_site"], rows), args.out)
    else:
        write_output(dump_json(report.to_dict()), args.out)
    return 0


def cmd_sums(args) -> int:
    if args.config:
        config = load_config(args.config)
        section = config.get("sums", {})
    else:
        section = {}
    d = args.d if args.d is not None else int(section.get("d", 1))
    p = args.p if args.p is not None else int(section.get("p", 1))
    if args.sizes:
        sizes = tuple(int(s) for s in args.sizes.split(","))
    elif "sizes" in section:
        sizes = tuple(int(s) for s in section["sizes"])
    else:
        sizes = (33, 65, 97, 129, 193, 257)
    report = verify_sum_asymptotics(d, p, sizes)
    if args.format == "csv":
        rows = list(zip(report.sizes, report.values, report.ratios))
        write_output(rows_to_csv(["N", "sum", "ratio_to_theory"], rows), args.out)
    else:
        write_output(dump_json(report.to_dict()), args.out)
    return 0


def cmd_simulate(args) -> int:
    config = load_config(args.config)
    shape = shape_from_config(config)
    spec = build_spec(config.get("system"), shape)
    section = config.get("simulate", {})
    seed = args.seed if args.seed is not None else int(section.get("seed", 0))
    experiment = section.get("experiment", "plain")

    if experiment == "accordion":
        result = accordion_experiment(
            spec,
            dt=float(section.get("dt", 0.05)),
            steps=int(section.get("steps", 400_000)),
            burn_in=int(section.get("burn_in", 60_000)),
            record_stride=int(section.get("record_stride", 20)),
            replicas=int(section.get("replicas", 2)),
            seed=seed)
        doc = result.to_dict()
        doc["mode_energy"] = result.mode_energy.tolist()
        trajectory = result.trajectory
    elif experiment == "string_stability":
        probe = section.get("probe", {})
        result = string_stability_experiment(
            spec,
            probe_frequencies=tuple(probe.get("frequencies", (0.2, 3.0))),
            amplitude=float(probe.get("amplitude", 1.0)),
            probe_site=int(probe.get("site", 0)),
            dt=float(section.get("dt", 0.02)),
            transient_time=float(section.get("transient_time", 400.0)),
            measure_periods=int(section.get("measure_periods", 20)))
        doc = result.to_dict()
        trajectory = None
    elif experiment == "plain":
        noise_sites = section.get("noise_sites", "all")
        mask = None
        if noise_sites != "all":
            mask = tuple(i in set(noise_sites) for i in range(shape.site_count))
        cfg = SimConfig(
            spec=spec,
            dt=float(section.get("dt", 0.01)),
            steps=int(section["steps"]) if "steps" in section else 10_000,
            burn_in=int(section.get("burn_in", 0)),
            seed=seed,
            noise_mask=mask,
            replicas=int(section.get("replicas", 1)),
            record_stride=int(section.get("record_stride", 1)))
        kinds = _parse_measures(args.measure or section.get("measures", ["dav"]))
        result = simulate(cfg, measures=kinds)
        doc = {
            "effective_samples": result.effective_samples,
            "empirical_per_site": {k.value: v.per_site
                                   for k, v in result.variances.items()},
            "analytic_per_site": {k.value: variance(spec, k).per_site for k in kinds},
        }
        trajectory = result.trajectory
    else:
        raise ConfigError(f"unknown experiment {experiment!r}")

    traj_out = section.get("trajectory_out")
    if trajectory is not None and traj_out:
        if section.get("trajectory_format", "csv") == "binary":
            trajectory_to_binary(trajectory, traj_out)
        else:
            trajectory_to_csv(trajectory, traj_out)
    write_output(dump_json(doc), args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="latcoh",
        description="H2 coherence measures and simulations on torus networks")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required,
                       help="JSON configuration document")
        p.add_argument("--out", default=None, help="output path (default stdout)")
        p.add_argument("--format", choices=("json", "csv"), default="json")
        p.add_argument("--seed", type=int, default=None, help="seed override")
        p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("analyze", help="closed-form measures for one configuration")
    common(p)
    p.add_argument("--measure", action="append", choices=sorted(_MEASURE_NAMES),
                   help="measure to report (repeatable)")
    p.add_argument("--symbols-out", default=None,
                   help="also dump feedback symbols as CSV")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("validate", help="closed form vs. Lyapunov oracle")
    common(p, config_required=False)
    p.add_argument("--tolerance", type=float, default=1e-8)
    p.add_argument("--corrupt-formula", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("sweep", help="size sweep with growth classification")
    common(p)
    p.add_argument("--sizes", default=None, help="comma-separated side lengths")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("simulate", help="stochastic simulation experiments")
    common(p)
    p.add_argument("--measure", action="append", choices=sorted(_MEASURE_NAMES))
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sums", help="lattice-sum asymptotics")
    common(p, config_required=False)
    p.add_argument("-d", type=int, default=None)
    p.add_argument("-p", type=int, default=None)
    p.add_argument("--sizes", default=None)
    p.set_defaults(func=cmd_sums)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except LatcohError as exc:
        payload = {"error": {"code": exc.code, "message": str(exc)}}
        if isinstance(exc, StabilityError) and exc.wavenumbers:
            payload["error"]["wavenumbers"] = [list(n) for n in exc.wavenumbers]
        sys.stderr.write(json.dumps(payload, sort_keys=True) + "\n")
        return EXIT_CODES.get(type(exc), 1)


if __name__ == "__main__":
    sys.exit(main())
