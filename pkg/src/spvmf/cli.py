"""Command-line interface: simulate | fit | predict | effects | diagnose | bench.

Exit codes: 0 success, 1 runtime failure, 2 invalid input. Set ``SPVMF_LOG``
(DEBUG, INFO, WARNING, ...) to change log verbosity.
"""

import argparse
import contextlib
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np
import yaml

from . import io
from .bench import BenchConfig, evaluate, run_benchmark
from .diagnostics import diagnose
from .errors import TraceTooShort
from .inference import Contrast, effect_map, predict_modes
from .mcmc import fit
from .model import CovariateTable, Dataset, DirectionField, ModelConfig, design_rows, validate
from .synthetic import SyntheticConfig, simulate

log = logging.getLogger("spvmf")

CONFIG_KEYS = {"model", "synthetic", "bench", "contrasts", "split", "diagnostics"}
CONFIG_FILE = "config.json"


class InputError(Exception):
    """Bad user input; reported with exit code 2."""


@contextlib.contextmanager
def input_phase(what):
    """Turn any failure while reading or checking inputs into :class:`InputError`."""
    try:
        yield
    except InputError:
        raise
    except (ValueError, KeyError, TypeError, OSError, yaml.YAMLError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        raise InputError(f"{what}: {msg}") from exc


def load_config(path):
    if path is None:
        return {}
    with open(path) as fh:
        doc = yaml.safe_load(fh)
    doc = {} if doc is None else doc
    if not isinstance(doc, dict):
        raise ValueError("configuration must be a mapping")
    unknown = set(doc) - CONFIG_KEYS
    if unknown:
        raise ValueError(f"unknown configuration sections: {sorted(unknown)}")
    return doc


def model_config(doc, args):
    d = dict(doc.get("model") or {})
    for flag in ("seed", "lag", "threshold", "quantile"):
        value = getattr(args, flag, None)
        if value is not None:
            d[flag] = value
    return ModelConfig.from_dict(d)


def split_subjects(data_dir, split):
    """Subject ids for ``split`` ('all', 'train' or 'test'; the latter need truth.json)."""
    if split in (None, "all"):
        return None
    if split not in ("train", "test"):
        raise ValueError(f"split must be 'all', 'train' or 'test', got {split!r}")
    truth = Path(data_dir) / io.TRUTH_FILE
    if not truth.exists():
        raise ValueError(f"split {split!r} needs {truth}")
    return io.read_json(truth)[f"{split}_subjects"]


# -- contrasts -------------------------------------------------------------


def _is_binary(column):
    return bool(np.all(np.isin(column, (0.0, 1.0))))


def build_contrast(spec, table, design_names):
    """Typical and specific design rows for one contrast specification.

    Unspecified covariates take their mean (within ``group`` when given) if
    continuous and 0 if binary. A continuous ``covariate`` is raised by
    ``delta`` (default 1); a binary one switches from ``from`` to ``to``
    (default 0 to 1). ``set`` fixes covariates in both rows, and ``typical``
    / ``specific`` mappings override individual entries of each row.
    """
    spec = dict(spec)
    allowed = {"label", "covariate", "delta", "from", "to", "group", "set", "typical", "specific"}
    unknown = set(spec) - allowed
    if unknown:
        raise ValueError(f"unknown contrast fields: {sorted(unknown)}")
    names = list(table.names)

    def check(name):
        if name not in names:
            raise KeyError(f"unknown covariate {name!r}; known: {names}")
        return names.index(name)

    group = spec.get("group")
    grouped = any(":" in n for n in design_names)
    if grouped and group is None:
        raise ValueError("group-specific fit: every contrast needs a 'group'")
    if group is not None and table.groups is not None and group not in table.levels:
        raise KeyError(f"unknown group {group!r}; known: {list(table.levels)}")
    rows = table.values
    if group is not None and table.groups is not None:
        rows = table.values[np.array(table.groups) == group]
    base = np.array([0.0 if _is_binary(table.values[:, j]) else rows[:, j].mean() for j in range(len(names))])
    for name, value in (spec.get("set") or {}).items():
        base[check(name)] = float(value)
    typical, specific = base.copy(), base.copy()
    cov = spec.get("covariate")
    if cov is not None:
        j = check(cov)
        if _is_binary(table.values[:, j]):
            typical[j] = float(spec.get("from", 0.0))
            specific[j] = float(spec.get("to", 1.0))
        else:
            specific[j] = typical[j] + float(spec.get("delta", 1.0))
    for row, key in ((typical, "typical"), (specific, "specific")):
        for name, value in (spec.get(key) or {}).items():
            row[check(name)] = float(value)
    label = spec.get("label") or cov or "contrast"
    if grouped:
        levels = tuple(dict.fromkeys(n.split(":", 1)[0] for n in design_names))
        xt = design_rows(typical, [group], levels, True)[0]
        xs = design_rows(specific, [group], levels, True)[0]
    else:
        xt, xs = design_rows(typical)[0], design_rows(specific)[0]
    if xt.size != len(design_names):
        raise ValueError(f"contrast rows have {xt.size} entries; the fit has {len(design_names)} coefficients")
    return Contrast(str(label), xt, xs)


def default_contrasts(table):
    return [{"covariate": n} for n in table.names]


# -- commands --------------------------------------------------------------


def cmd_simulate(args):
    with input_phase("configuration"):
        doc = load_config(args.config)
        d = dict(doc.get("synthetic") or {})
        if args.seed is not None:
            d["seed"] = args.seed
        if args.lag is not None:
            d["lag"] = args.lag
        cfg = SyntheticConfig.from_dict(d)
    sim = simulate(cfg)
    tr, te = sim.train, sim.test
    table = CovariateTable(
        tr.table.subjects + te.table.subjects, tr.table.names, np.vstack([tr.table.values, te.table.values])
    )
    field = DirectionField(
        np.concatenate([tr.directions.E, te.directions.E]),
        np.concatenate([tr.directions.mask, te.directions.mask]),
    )
    full = Dataset(tr.atlas, table, field)
    report = validate(full.atlas, full.table, full.directions)
    if not report.ok:
        raise RuntimeError(f"simulated data failed validation:\n{report}")
    out = Path(args.out)
    io.write_dataset(out, full)
    io.write_truth(out / io.TRUTH_FILE, sim)
    print(f"wrote {full.n_subjects} subjects x {full.n_voxels} voxels to {out}")


def _write_diagnostics(run, draws, doc):
    opts = doc.get("diagnostics") or {}
    try:
        report = diagnose(draws, opts.get("pvalue", 0.05), opts.get("eps", 0.1)).to_dict()
    except TraceTooShort as exc:
        report = {"skipped": str(exc)}
    io.write_json(run / io.DIAGNOSTICS_FILE, report)
    return report


def _print_acceptance(acceptance):
    print("acceptance rates (post burn-in):")
    for block in sorted(acceptance):
        print(f"  {block:<12s} {acceptance[block]:.3f}")


def cmd_fit(args):
    run = Path(args.out)
    with input_phase("input"):
        if args.resume:
            doc = io.read_json(run / CONFIG_FILE)
            ckpt = io.read_checkpoint(run / io.CHECKPOINT_FILE)
        else:
            doc = load_config(args.config)
            ckpt = None
        config = model_config(doc, args) if not args.resume else ModelConfig.from_dict(doc["model"])
        subjects = split_subjects(args.data, doc.get("split"))
        data = io.load_dataset(args.data, subjects, config.group_specific)
        report = validate(data.atlas, data.table, data.directions, config.group_specific)
        if not report.ok:
            raise ValueError(f"data failed validation:\n{report}")
        if args.stop_after is not None and args.stop_after < 1:
            raise ValueError("--stop-after must be >= 1")
    run.mkdir(parents=True, exist_ok=True)
    if not args.resume:
        doc = {**doc, "model": config.to_dict()}
        io.write_json(run / CONFIG_FILE, doc)
    draws, sampler = fit(data, config, stop_after=args.stop_after, resume=ckpt)
    io.write_draws(run, draws, append=args.resume, include_eta=config.store_eta)
    io.write_checkpoint(run / io.CHECKPOINT_FILE, sampler.checkpoint())
    if sampler.iteration < config.n_iter:
        print(f"stopped at iteration {sampler.iteration} of {config.n_iter}; resume with --resume")
        return
    full = io.read_draws(run)
    _write_diagnostics(run, full, doc)
    _print_acceptance(full.acceptance)
    print(f"{len(full)} draws written to {run / io.DRAWS_FILE}")


def _load_run(run_dir):
    draws = io.read_draws(run_dir)
    cfg_path = Path(run_dir) / CONFIG_FILE
    doc = io.read_json(cfg_path) if cfg_path.exists() else {}
    return draws, doc


def cmd_predict(args):
    with input_phase("input"):
        draws, doc = _load_run(args.run)
        if args.config is not None:
            doc = {**doc, **load_config(args.config)}
        group_specific = bool((doc.get("model") or {}).get("group_specific", False))
        subjects = split_subjects(args.data, doc.get("split"))
        data = io.load_dataset(args.data, subjects, group_specific)
        if data.n_coef != draws.alpha.shape[-1]:
            raise ValueError(f"data has {data.n_coef} design columns; the fit has {draws.alpha.shape[-1]}")
        if data.n_voxels != draws.alpha.shape[1]:
            raise ValueError(f"data has {data.n_voxels} voxels; the fit has {draws.alpha.shape[1]}")
    M = predict_modes(draws, data.X)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    io.write_directions(out, data.table.subjects, DirectionField(M, np.ones(M.shape[:2], dtype=bool)))
    if data.directions.n_observed:
        scores = evaluate(M, data.directions.E, None, data.directions.mask)
        print(json.dumps(scores, sort_keys=True))
    print(f"predicted modes for {data.n_subjects} subjects written to {out}")


def cmd_effects(args):
    with input_phase("input"):
        draws, doc = _load_run(args.run)
        if args.config is not None:
            doc = {**doc, **load_config(args.config)}
        model = {**(doc.get("model") or {})}
        for flag in ("threshold", "quantile"):
            if getattr(args, flag) is not None:
                model[flag] = getattr(args, flag)
        config = ModelConfig.from_dict(model)
        table = io.read_covariates(Path(args.data) / io.COVARIATES_FILE)
        atlas = io.read_atlas(Path(args.data) / io.ATLAS_FILE)
        names = draws.meta.get("design_names") or list(Dataset(
            atlas, table, DirectionField(np.zeros((table.n_subjects, atlas.n_voxels, 3)))).design_names)
        specs = doc.get("contrasts") or default_contrasts(table)
        contrasts = [build_contrast(s, table, names) for s in specs]
        if not 0.0 <= config.quantile <= 1.0:
            raise ValueError("quantile must lie in [0, 1]")
    report = effect_map(draws, contrasts, config.threshold, config.quantile, atlas.fiber_of())
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    report.to_csv(out)
    report.to_json(out.with_suffix(".json"))
    print(f"{len(report.rows)} effect rows, {report.n_flagged} flagged, written to {out}")


def cmd_diagnose(args):
    with input_phase("input"):
        draws, doc = _load_run(args.run)
        if args.config is not None:
            doc = {**doc, **load_config(args.config)}
        opts = doc.get("diagnostics") or {}
        report = diagnose(draws, opts.get("pvalue", 0.05), opts.get("eps", 0.1))
    out = Path(args.out) if args.out else Path(args.run) / io.DIAGNOSTICS_FILE
    io.write_json(out, report.to_dict())
    print(f"stationary on {report.stationary_fraction:.1%} of {len(report.entries)} traces; written to {out}")


def cmd_bench(args):
    with input_phase("configuration"):
        doc = load_config(args.config)
        d = dict(doc.get("bench") or {})
        if args.seed is not None:
            d["seed"] = args.seed
        if args.lag is not None:
            d["lags"] = [args.lag]
        cfg = BenchConfig.from_dict(d)
        if args.threads < 1:
            raise ValueError("--threads must be >= 1")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    result = run_benchmark(cfg, threads=args.threads)
    elapsed = time.perf_counter() - t0
    result.to_csv(out / "bench.csv")
    result.to_json(out / "bench_summary.json")
    timing = {"seconds": elapsed, "time_budget": cfg.time_budget}
    if cfg.time_budget is not None:
        timing["within_budget"] = elapsed <= cfg.time_budget
        if elapsed > cfg.time_budget:
            log.warning("benchmark took %.1f s, over the %.1f s budget", elapsed, cfg.time_budget)
    io.write_json(out / "timing.json", timing)
    print(json.dumps(result.summary()["wins"], sort_keys=True))


def build_parser():
    p = argparse.ArgumentParser(prog="spvmf", description="Spatial von Mises-Fisher regression along streamlines")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed=True):
        sp.add_argument("--config", help="YAML or JSON configuration file")
        if seed:
            sp.add_argument("--seed", type=int)

    sp = sub.add_parser("simulate", help="write a synthetic data set")
    common(sp)
    sp.add_argument("--lag", type=int)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("fit", help="run the sampler on a data directory")
    sp.add_argument("data")
    common(sp)
    sp.add_argument("--lag", type=int)
    sp.add_argument("--out", required=True, help="run directory")
    sp.add_argument("--stop-after", type=int, help="stop after this many iterations and write a checkpoint")
    sp.add_argument("--resume", action="store_true", help="continue from the run directory's checkpoint")
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("predict", help="predicted mode directions for the subjects of a data directory")
    sp.add_argument("run")
    sp.add_argument("data")
    common(sp, seed=False)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_predict)

    sp = sub.add_parser("effects", help="tangent-normal covariate effect map")
    sp.add_argument("run")
    sp.add_argument("data")
    common(sp, seed=False)
    sp.add_argument("--threshold", type=float)
    sp.add_argument("--quantile", type=float)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_effects)

    sp = sub.add_parser("diagnose", help="convergence diagnostics for a run")
    sp.add_argument("run")
    common(sp, seed=False)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_diagnose)

    sp = sub.add_parser("bench", help="synthetic benchmark grid")
    common(sp)
    sp.add_argument("--lag", type=int)
    sp.add_argument("--threads", type=int, default=1)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_bench)
    return p


def main(argv=None):
    level = os.environ.get("SPVMF_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and 2
    try:
        args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        log.debug("failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
