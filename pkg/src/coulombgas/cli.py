"""Command-line runner: flat ``key = value`` configs, subcommand dispatch and
deterministic output files.

Usage::

    coulombgas <subcommand> --config PATH [--seed U64] [--threads K] [--out DIR]
"""

from __future__ import annotations

import argparse
import dataclasses
import math
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .errors import (CoulombGasError, MissingKey, ParseError, UnknownKey, ValidationError)

SUBCOMMANDS = ("sample", "evolve", "drift-table", "hyperuniformity", "l2-bound", "converge",
               "a4-check")


@dataclass(frozen=True)
class ModelBlock:
    dim: int = 2
    beta: float = 2.0
    n: int | None = None
    confinement: str = "gaussian"
    c: float = 1.0
    kernel: str = "coulomb"
    kernel_amplitude: float = 1.0
    kernel_length: float | None = None
    domain: str = "full"
    domain_size: float | None = None


@dataclass(frozen=True)
class SamplerBlock:
    step: float | None = None
    burn_in: int = 0
    samples: int = 1
    thin: int = 1


@dataclass(frozen=True)
class DriftBlock:
    mode: str = "corrected"
    cutoff: float | None = None
    taylor_order: int = 2


@dataclass(frozen=True)
class DynBlock:
    dt: float | None = None
    t_end: float | None = None
    scheme: str = "free"
    radius: float | None = None
    snapshot_every: int = 1
    adaptive: bool = True
    noise_scale: float = 1.0
    epsilon: float = 0.0


@dataclass(frozen=True)
class DiagBlock:
    radii: tuple | None = None
    q: float = 2.0
    replicas: int = 1
    probe: float = 1.0
    point: tuple | None = None
    env_radius: float | None = None
    labels: int = 4


@dataclass(frozen=True)
class RunSpec:
    model: ModelBlock = field(default_factory=ModelBlock)
    sampler: SamplerBlock = field(default_factory=SamplerBlock)
    drift: DriftBlock = field(default_factory=DriftBlock)
    dyn: DynBlock = field(default_factory=DynBlock)
    diag: DiagBlock = field(default_factory=DiagBlock)
    seed: int = 0
    threads: int = field(default_factory=lambda: os.cpu_count() or 1)
    out_dir: str = "out"


_BLOCKS = {"model": ModelBlock, "sampler": SamplerBlock, "drift": DriftBlock, "dyn": DynBlock,
           "diag": DiagBlock}
_TOP = ("seed", "threads", "out_dir")

_CHOICES = {
    "model.confinement": ("zero", "gaussian", "sphere"),
    "model.kernel": ("coulomb", "torus", "sphere"),
    "model.domain": ("full", "ball", "torus"),
    "drift.mode": ("naive", "corrected", "translation_invariant", "finite"),
    "dyn.scheme": ("free", "reflected"),
}

# keys each subcommand needs beyond those with defaults
_REQUIRED = {
    "sample": ("model.n", "sampler.step"),
    "evolve": ("model.n", "sampler.step", "dyn.dt", "dyn.t_end"),
    "drift-table": ("model.n", "sampler.step", "diag.radii"),
    "hyperuniformity": ("model.n", "sampler.step", "diag.radii"),
    "l2-bound": ("model.n", "sampler.step"),
    "converge": ("model.n", "sampler.step", "dyn.dt", "dyn.t_end", "diag.radii"),
    "a4-check": ("model.n", "sampler.step", "diag.radii"),
}


def _field_types(cls):
    return {f.name: f.type for f in dataclasses.fields(cls)}


def _convert(key, raw, type_name, line):
    base = type_name.replace(" | None", "")
    try:
        if base == "int":
            value = int(raw, 10)
        elif base == "float":
            value = float(raw)
            if not math.isfinite(value):
                raise ValueError
        elif base == "bool":
            low = raw.lower()
            if low not in ("true", "false"):
                raise ValueError
            value = low == "true"
        elif base == "tuple":
            value = tuple(float(v) for v in raw.split(",") if v.strip())
            if not value:
                raise ValueError
        else:
            value = raw
    except ValueError:
        raise ParseError(f"{key}: cannot read {raw!r} as {base}", line) from None
    return value


def parse_config(text: str) -> RunSpec:
    """Parse ``key = value`` lines (``#`` starts a comment) into a RunSpec."""
    values: dict = {name: {} for name in _BLOCKS}
    top: dict = {}
    seen = set()
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"expected 'key = value', got {raw_line.strip()!r}", lineno)
        key, raw = (part.strip() for part in line.split("=", 1))
        if not key or not raw:
            raise ParseError(f"empty key or value in {raw_line.strip()!r}", lineno)
        if key in seen:
            raise ParseError(f"duplicate key {key!r}", lineno)
        seen.add(key)
        if key in _TOP:
            type_name = _field_types(RunSpec)[key]
            top[key] = _convert(key, raw, type_name, lineno)
            continue
        block, _, name = key.partition(".")
        if block not in _BLOCKS or name not in _field_types(_BLOCKS[block]):
            raise UnknownKey(f"unknown key {key!r} (line {lineno})")
        values[block][name] = _convert(key, raw, _field_types(_BLOCKS[block])[name], lineno)
    spec = RunSpec(**{b: _BLOCKS[b](**values[b]) for b in _BLOCKS}, **top)
    validate(spec)
    return spec


def _check(cond, key, message):
    if not cond:
        raise ValidationError(f"{key}: {message}")


def validate(spec: RunSpec) -> RunSpec:
    """Range and choice checks; errors name the offending key."""
    m, s, d, y, g = spec.model, spec.sampler, spec.drift, spec.dyn, spec.diag
    for key, choices in _CHOICES.items():
        block, name = key.split(".")
        value = getattr(getattr(spec, block), name)
        _check(value in choices, key, f"must be one of {', '.join(choices)}")
    _check(m.dim >= 2, "model.dim", "must be >= 2")
    _check(m.beta > 0, "model.beta", "must be positive")
    _check(m.n is None or m.n >= 1, "model.n", "must be >= 1")
    _check(m.c > 0, "model.c", "must be positive")
    _check(m.kernel_amplitude > 0, "model.kernel_amplitude", "must be positive")
    _check(m.kernel_length is None or m.kernel_length > 0, "model.kernel_length",
           "must be positive")
    _check(m.domain_size is None or m.domain_size > 0, "model.domain_size", "must be positive")
    _check(m.domain != "ball" or m.domain_size is not None, "model.domain_size",
           "required for a ball domain")
    _check(s.step is None or s.step > 0, "sampler.step", "must be positive")
    _check(s.burn_in >= 0, "sampler.burn_in", "must be >= 0")
    _check(s.samples >= 1, "sampler.samples", "must be >= 1")
    _check(s.thin >= 1, "sampler.thin", "must be >= 1")
    _check(d.cutoff is None or d.cutoff > 0, "drift.cutoff", "must be positive")
    _check(0 <= d.taylor_order <= 8, "drift.taylor_order", "must lie in [0, 8]")
    _check(y.dt is None or y.dt > 0, "dyn.dt", "must be positive")
    _check(y.t_end is None or y.t_end > 0, "dyn.t_end", "must be positive")
    _check(y.dt is None or y.t_end is None or y.dt < y.t_end, "dyn.dt", "must be below dyn.t_end")
    _check(y.scheme != "reflected" or (y.radius is not None and y.radius > 0), "dyn.radius",
           "a positive radius is required for the reflected scheme")
    _check(y.snapshot_every >= 1, "dyn.snapshot_every", "must be >= 1")
    _check(abs(y.epsilon) < 0.5, "dyn.epsilon", "must satisfy |epsilon| < 1/2")
    _check(g.radii is None or (all(r > 0 for r in g.radii)
                               and all(b > a for a, b in zip(g.radii, g.radii[1:]))),
           "diag.radii", "must be positive and increasing")
    _check(g.q > 0, "diag.q", "must be positive")
    _check(g.replicas >= 1, "diag.replicas", "must be >= 1")
    _check(g.probe > 0, "diag.probe", "must be positive")
    _check(g.point is None or len(g.point) == m.dim, "diag.point", "must have model.dim entries")
    _check(g.env_radius is None or g.env_radius > 0, "diag.env_radius", "must be positive")
    _check(g.labels >= 1, "diag.labels", "must be >= 1")
    _check(0 <= spec.seed < 2**64, "seed", "must be an unsigned 64-bit integer")
    _check(spec.threads >= 1, "threads", "must be >= 1")
    return spec


def require(spec: RunSpec, subcommand: str):
    if subcommand not in SUBCOMMANDS:
        raise ValidationError(f"unknown subcommand {subcommand!r}")
    missing = [k for k in _REQUIRED[subcommand]
               if getattr(getattr(spec, k.split(".")[0]), k.split(".")[1]) is None]
    if subcommand == "drift-table" and spec.drift.cutoff is None and spec.diag.radii is None:
        missing.append("drift.cutoff")
    if missing:
        raise MissingKey(f"{subcommand} requires: {', '.join(missing)}")


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ",".join(repr(float(v)) for v in value)
    return str(value)


def spec_items(spec: RunSpec, with_out_dir: bool = True):
    """(key, text) pairs for every set field, in a fixed order."""
    items = []
    for bname in _BLOCKS:
        block = getattr(spec, bname)
        for f in dataclasses.fields(block):
            value = getattr(block, f.name)
            if value is not None:
                items.append((f"{bname}.{f.name}", _format(value)))
    for key in _TOP:
        if key == "out_dir" and not with_out_dir:
            continue
        items.append((key, _format(getattr(spec, key))))
    return items


def serialize(spec: RunSpec) -> str:
    return "".join(f"{k} = {v}\n" for k, v in spec_items(spec))


def header_line(spec: RunSpec, subcommand: str) -> str:
    # the output directory is where files go, not what they contain
    body = "; ".join(f"{k}={v}" for k, v in spec_items(spec, with_out_dir=False))
    return f"# artifact {__version__} {subcommand}: {body}\n"


# ---------------------------------------------------------------------------
# building library objects
# ---------------------------------------------------------------------------


def build_model(spec: RunSpec):
    from .kernels import PairKernel
    from .model import ConfinementField, Domain, GibbsModel

    m = spec.model
    if m.domain == "torus":
        side = m.domain_size if m.domain_size is not None else math.sqrt(m.n)
        domain = Domain("torus", side)
    elif m.domain == "ball":
        domain = Domain("ball", m.domain_size)
    else:
        domain = Domain()
    length = m.kernel_length
    if length is None:
        length = domain.size if m.kernel == "torus" else 1.0
    conf = ConfinementField(m.confinement, m.c, length if m.confinement == "sphere" else 1.0)
    kernel = PairKernel(m.kernel, m.dim, m.kernel_amplitude, length)
    return GibbsModel(m.dim, m.beta, m.n, conf, kernel, domain)


def _chain_params(spec: RunSpec, seed_offset: int = 0):
    from .sampler import ChainParams

    s = spec.sampler
    return ChainParams(s.step, s.burn_in, s.samples, s.thin, (spec.seed + seed_offset) % 2**64)


def _samples(spec: RunSpec, model):
    from .sampler import sample_replicas

    samples, stats = sample_replicas(model, _chain_params(spec), spec.diag.replicas)
    return samples, stats


def _dyn_spec(spec: RunSpec, radius=None):
    from .drift import DriftSpec
    from .dynamics import DynSpec
    from .model import CoefficientField

    y = spec.dyn
    d = spec.drift
    drift_spec = None
    if d.mode != "finite":
        cutoff = d.cutoff if d.cutoff is not None else (radius or y.radius)
        if cutoff is None:
            raise MissingKey(f"drift mode {d.mode} requires: drift.cutoff")
        drift_spec = DriftSpec(cutoff, d.taylor_order, d.mode)
    coeff = CoefficientField("diagonal", y.epsilon) if y.epsilon else CoefficientField()
    scheme = "reflected" if radius is not None else y.scheme
    return DynSpec(y.dt, y.t_end, scheme, radius if radius is not None else y.radius, drift_spec,
                   coeff, spec.seed, y.adaptive, y.snapshot_every, y.noise_scale)


def _write_rows(path, header, columns, rows):
    with open(path, "w", newline="\n") as fh:
        fh.write(header)
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(v if isinstance(v, str) else
                              (str(v) if isinstance(v, (int, np.integer)) else f"{v:.17g}")
                              for v in row) + "\n")


def _write_scalars(path, header, scalars):
    with open(path, "w", newline="\n") as fh:
        fh.write(header)
        for key in sorted(scalars):
            value = scalars[key]
            text = str(value) if isinstance(value, (int, np.integer)) else f"{float(value):.17g}"
            fh.write(f"{key} = {text}\n")


def _environment(config, model, radius):
    """Finite super-configuration for tail sums: periodic images for a torus."""
    from .model import periodic_extension

    if model.domain.kind == "torus":
        return periodic_extension(config, radius)
    return config


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_sample(spec, model, out, header):
    samples, stats = _samples(spec, model)
    rows = []
    for k, s in enumerate(samples):
        for i, p in enumerate(s.positions):
            rows.append([k, i, *p])
    cols = ["sample", "particle"] + [f"x{k + 1}" for k in range(model.dim)]
    _write_rows(os.path.join(out, "samples.csv"), header, cols, rows)
    scal = {f"replica{r}.acceptance_rate": st.acceptance_rate for r, st in enumerate(stats)}
    scal.update({f"replica{r}.n_steps": st.n_steps for r, st in enumerate(stats)})
    _write_scalars(os.path.join(out, "sample_report.txt"), header, scal)


def cmd_evolve(spec, model, out, header):
    from .diagnostics import min_pair_distance
    from .dynamics import evolve
    from .sampler import sample_gibbs

    params = dataclasses.replace(_chain_params(spec), n_samples=1)
    initial = sample_gibbs(model, params)[0][0]
    dyn = _dyn_spec(spec)
    traj = evolve(model, dyn, initial)
    traj.write_csv(os.path.join(out, "trajectory.csv"), header)
    traj.write_events_csv(os.path.join(out, "events.csv"), header)
    period = model.domain.size if model.domain.kind == "torus" else 0.0
    _write_scalars(os.path.join(out, "evolve_report.txt"), header, {
        "n_moving": traj.n_moving, "n_events": len(traj.events),
        "min_pair_distance": min_pair_distance(traj, period),
        "total_local_time": float(np.sum(traj.local_time)),
    })


def cmd_drift_table(spec, model, out, header):
    from .diagnostics import correction_decay_table

    radii_list = spec.diag.radii or (spec.drift.cutoff,)
    # without an explicit environment radius each cutoff R sees points up to 4R
    env = spec.diag.env_radius or 4.0 * max(radii_list)
    factor = None if spec.diag.env_radius else 4.0
    samples, _ = _samples(spec, model)
    c_cols, r_cols = [], []
    for s in samples:
        c, r = correction_decay_table(_environment(s, model, env), radii_list,
                                      spec.drift.taylor_order, spec.diag.probe, factor)
        c_cols.append(c.ordinate)
        r_cols.append(r.ordinate)
    c_med = np.median(np.array(c_cols), axis=0)
    r_med = np.median(np.array(r_cols), axis=0)
    rows = [[R, a, b] for R, a, b in zip(radii_list, c_med, r_med)]
    _write_rows(os.path.join(out, "correction_decay.csv"), header,
                ["R", "median_correction", "median_residual"], rows)


def cmd_hyperuniformity(spec, model, out, header):
    from .diagnostics import DiagnosticsReport, growth_exponent, number_variance

    samples, _ = _samples(spec, model)
    # radii are given in mean spacings rho^(-1/d)
    spacing = model.bulk_density ** (-1.0 / model.dim)
    rs = np.array(spec.diag.radii) * spacing
    curve = number_variance(samples, rs)
    gamma, se = growth_exponent(curve)
    report = DiagnosticsReport("hyperuniformity", {"gamma": gamma, "gamma_stderr": se,
                                                   "spacing": spacing, "n_samples": len(samples)},
                               {"variance": curve}, {"seed": spec.seed})
    report.write(out, header)


def cmd_l2_bound(spec, model, out, header):
    from .diagnostics import l2_drift_estimate

    samples, _ = _samples(spec, model)
    est, se = l2_drift_estimate(samples, model, spec.diag.q)
    _write_scalars(os.path.join(out, "l2_report.txt"), header,
                   {"estimate": est, "stderr": se, "q": spec.diag.q, "n_samples": len(samples)})


def cmd_converge(spec, model, out, header):
    from .dynamics import coupled_evolve, sup_distance
    from .sampler import sample_gibbs

    medians = []
    radii_list = spec.diag.radii
    for R in radii_list:
        dists = []
        for rep in range(spec.diag.replicas):
            params = dataclasses.replace(_chain_params(spec), n_samples=1)
            initial = sample_gibbs(model, params, replica=rep)[0][0]
            spec_rep = dataclasses.replace(spec, seed=(spec.seed + rep) % 2**64)
            a, b = coupled_evolve(model, _dyn_spec(spec_rep, R), _dyn_spec(spec_rep, 2 * R),
                                  initial)
            dists.append(sup_distance(a, b, spec.diag.labels))
        medians.append(float(np.median(dists)))
    _write_rows(os.path.join(out, "converge.csv"), header, ["R", "median_sup_distance"],
                [[R, m] for R, m in zip(radii_list, medians)])


def cmd_a4_check(spec, model, out, header):
    from .diagnostics import a4_residual

    samples, _ = _samples(spec, model)
    point = np.array(spec.diag.point) if spec.diag.point else np.zeros(model.dim)
    env = spec.diag.env_radius or 4.0 * max(spec.diag.radii)
    curves = [a4_residual(_environment(s, model, env), point, spec.diag.radii,
                          model.confinement).ordinate for s in samples]
    med = np.median(np.array(curves), axis=0)
    _write_rows(os.path.join(out, "a4_residual.csv"), header, ["R", "median_residual"],
                [[R, v] for R, v in zip(spec.diag.radii, med)])


_COMMANDS = {"sample": cmd_sample, "evolve": cmd_evolve, "drift-table": cmd_drift_table,
             "hyperuniformity": cmd_hyperuniformity, "l2-bound": cmd_l2_bound,
             "converge": cmd_converge, "a4-check": cmd_a4_check}


def set_threads(n: int):
    import numba

    numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))


def run(spec: RunSpec, subcommand: str) -> int:
    """Run one subcommand; outputs go to ``spec.out_dir``."""
    require(spec, subcommand)
    set_threads(spec.threads)
    model = build_model(spec)
    os.makedirs(spec.out_dir, exist_ok=True)
    _COMMANDS[subcommand](spec, model, spec.out_dir, header_line(spec, subcommand))
    return 0


def _parser():
    p = argparse.ArgumentParser(prog="coulombgas", description=__doc__.split("\n")[0])
    p.add_argument("subcommand", choices=SUBCOMMANDS)
    p.add_argument("--config", required=True, help="key = value config file")
    p.add_argument("--seed", type=int, help="overrides the config seed")
    p.add_argument("--threads", type=int, help="overrides the config thread count")
    p.add_argument("--out", help="output directory (overrides out_dir)")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        with open(args.config, encoding="utf-8") as fh:
            spec = parse_config(fh.read())
        overrides = {k: v for k, v in (("seed", args.seed), ("threads", args.threads),
                                       ("out_dir", args.out)) if v is not None}
        spec = validate(dataclasses.replace(spec, **overrides))
        return run(spec, args.subcommand)
    except (CoulombGasError, OSError) as exc:
        kind = type(exc).__name__
        message = str(exc).replace('"', "'").replace("\n", " ")
        print(f'error: kind={kind} subcommand={args.subcommand} message="{message}"',
              file=sys.stderr)
        return 2 if isinstance(exc, (ParseError, UnknownKey, MissingKey, ValidationError)) else 1


if __name__ == "__main__":
    sys.exit(main())
