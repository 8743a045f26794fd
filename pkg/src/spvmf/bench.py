"""Synthetic benchmark: simulate, fit every method, score held-out predictions."""

import csv
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields

import numpy as np

from .baselines import fit_gauss1, fit_gauss2, fit_vmf_nonspatial
from .geometry import separation_angle
from .inference import predict_modes
from .mcmc import fit
from .model import ModelConfig
from .synthetic import SyntheticConfig, simulate

log = logging.getLogger(__name__)

METHODS = ("spatial_vmf", "vmf_nonspatial", "gauss1", "gauss2")
CSV_COLUMNS = ("method", "P", "kappa", "replicate", "sep_angle", "rmse", "seconds")


def evaluate(predicted, observed, Q=None, mask=None):
    """Mean separation angle and mean chord error over the test pairs.

    Predictions are rescaled to unit length first. With a fitted rotation
    ``Q`` both sides are expressed in the rotated frame, ``|Q'M - Q'E|``.
    Rotations preserve angles and lengths, so this only matters when ``M``
    is given in a different frame than ``E``. Predictions from
    :func:`predict_modes` already include the fitted rotation.

    Returns
    -------
    dict with ``sep_angle`` (radians) and ``rmse``.
    """
    pred = np.asarray(predicted, dtype=float)
    obs = np.asarray(observed, dtype=float)
    if pred.shape != obs.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {obs.shape}")
    if mask is None:
        mask = np.ones(pred.shape[:-1], dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("empty test set")
    pred = pred / np.linalg.norm(pred, axis=-1, keepdims=True)
    p, o = pred[mask], obs[mask]
    if Q is not None:
        Q = np.asarray(Q, dtype=float)
        if Q.shape != (3, 3) or not np.allclose(Q.T @ Q, np.eye(3), atol=1e-8):
            raise ValueError("Q must be a 3x3 orthogonal matrix")
        p, o = p @ Q, o @ Q
    return {
        "sep_angle": float(np.mean(separation_angle(p, o))),
        "rmse": float(np.mean(np.linalg.norm(p - o, axis=-1))),
    }


@dataclass
class BenchConfig:
    """Grid of synthetic cells.

    ``synthetic`` holds :class:`SyntheticConfig` fields shared by all cells
    (``kappa`` and ``seed`` are set per cell). ``lags`` are the AR orders tried
    for the spatial model; ``mcmc`` holds :class:`ModelConfig` overrides.
    """

    kappas: tuple = (20.0,)
    replicates: int = 10
    lags: tuple = (1, 2, 3, 4, 5)
    methods: tuple = METHODS
    synthetic: dict = field(default_factory=dict)
    mcmc: dict = field(default_factory=dict)
    seed: int = 0
    time_budget: float = None

    def __post_init__(self):
        self.kappas = tuple(float(k) for k in self.kappas)
        self.lags = tuple(int(p) for p in self.lags)
        self.methods = tuple(self.methods)
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")
        if not self.kappas or any(not (k >= 0 and math.isfinite(k)) for k in self.kappas):
            raise ValueError("kappas must be a non-empty list of finite values >= 0")
        if not self.lags or min(self.lags) < 1:
            raise ValueError("lags must be a non-empty list of integers >= 1")
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ValueError(f"unknown methods: {sorted(unknown)}")
        # fail early on bad nested fields
        SyntheticConfig.from_dict({k: v for k, v in self.synthetic.items() if k not in ("kappa", "seed")})
        self.model_config(self.lags[0])

    @property
    def true_lag(self):
        return int(self.synthetic.get("lag", SyntheticConfig().lag))

    def model_config(self, lag, seed=0):
        return ModelConfig.from_dict({"store_eta": False, **self.mcmc, "lag": lag, "seed": seed})

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown bench config fields: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


def _cell_seed(seed, k_index, replicate):
    return int(np.random.SeedSequence([seed, k_index, replicate]).generate_state(1)[0])


def run_cell(cfg, k_index, replicate):
    """Simulate one data set and score every method on it. Returns CSV rows."""
    kappa = cfg.kappas[k_index]
    seed = _cell_seed(cfg.seed, k_index, replicate)
    syn = SyntheticConfig.from_dict({**cfg.synthetic, "kappa": kappa, "seed": seed})
    sim = simulate(syn)
    train, test = sim.train, sim.test
    E_test = test.directions.E
    mask_test = test.directions.mask
    rows = []

    def record(method, lag, func):
        t0 = time.perf_counter()
        try:
            score = func()
        except Exception as exc:  # a failed cell is recorded, the run goes on
            log.warning("%s (P=%s, kappa=%s, replicate=%d) failed: %s", method, lag, kappa, replicate, exc)
            score = {"sep_angle": float("nan"), "rmse": float("nan")}
        rows.append(
            {
                "method": method,
                "P": lag,
                "kappa": kappa,
                "replicate": replicate,
                **score,
                "seconds": time.perf_counter() - t0,
            }
        )

    if "spatial_vmf" in cfg.methods:
        for lag in cfg.lags:
            def spatial(lag=lag):
                draws, _ = fit(train, cfg.model_config(lag, seed))
                return evaluate(predict_modes(draws, test.X), E_test, None, mask_test)

            record("spatial_vmf", lag, spatial)
    if "vmf_nonspatial" in cfg.methods:
        def nonspatial():
            draws = fit_vmf_nonspatial(train, cfg.model_config(1, seed))
            return evaluate(predict_modes(draws, test.X), E_test, None, mask_test)

        record("vmf_nonspatial", 0, nonspatial)
    for name, fitter in (("gauss1", fit_gauss1), ("gauss2", fit_gauss2)):
        if name in cfg.methods:
            def gauss(fitter=fitter):
                draws = fitter(train, cfg.model_config(1, seed))
                return evaluate(draws.predict_modes(test.X), E_test, None, mask_test)

            record(name, 0, gauss)
    return rows


def _run_cell_args(args):
    return run_cell(*args)


@dataclass
class BenchResult:
    rows: list
    config: BenchConfig

    def to_csv(self, path, include_seconds=True):
        cols = CSV_COLUMNS if include_seconds else CSV_COLUMNS[:-1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for r in self.rows:
                w.writerow([repr(r[c]) if isinstance(r[c], float) else r[c] for c in cols])

    def values(self, method, kappa, P=None):
        """sep_angle per replicate (sorted by replicate) for one method/kappa/lag."""
        sel = [
            r for r in self.rows
            if r["method"] == method and r["kappa"] == kappa and (P is None or r["P"] == P)
        ]
        sel.sort(key=lambda r: r["replicate"])
        return np.array([r["sep_angle"] for r in sel])

    def summary(self):
        cfg = self.config
        cells = {}
        for r in self.rows:
            key = f"{r['method']}|P={r['P']}|kappa={r['kappa']}"
            c = cells.setdefault(key, {"sep_angle": [], "rmse": []})
            c["sep_angle"].append(r["sep_angle"])
            c["rmse"].append(r["rmse"])
        means = {
            k: {"mean_sep_angle": float(np.nanmean(v["sep_angle"])), "mean_rmse": float(np.nanmean(v["rmse"])),
                "n": len(v["sep_angle"]), "failures": int(np.sum(np.isnan(v["sep_angle"])))}
            for k, v in sorted(cells.items())
        }
        wins = {}
        P0 = cfg.true_lag
        for kappa in cfg.kappas:
            entry = {}
            if "spatial_vmf" in cfg.methods and P0 in cfg.lags:
                spatial = self.values("spatial_vmf", kappa, P0)
                others = [self.values(m, kappa) for m in cfg.methods if m != "spatial_vmf"]
                if others:
                    beats_all = np.all([spatial < o for o in others], axis=0)
                    entry["spatial_beats_all"] = int(beats_all.sum())
                    for m, o in zip([m for m in cfg.methods if m != "spatial_vmf"], others):
                        entry[f"spatial_beats_{m}"] = int(np.sum(spatial < o))
                if len(cfg.lags) > 1:
                    by_lag = np.stack([self.values("spatial_vmf", kappa, p) for p in cfg.lags])
                    best = np.array(cfg.lags)[np.argmin(np.where(np.isnan(by_lag), np.inf, by_lag), axis=0)]
                    entry["true_lag_best"] = int(np.sum(best == P0))
                    entry["best_lag_counts"] = {str(p): int(np.sum(best == p)) for p in cfg.lags}
            entry["replicates"] = cfg.replicates
            wins[f"kappa={kappa}"] = entry
        return {"cells": means, "wins": wins, "true_lag": P0}

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def run_benchmark(cfg, threads=1):
    """Run every (kappa, replicate) cell; cells run in parallel when ``threads > 1``.

    Rows are merged in (kappa, replicate, method, P) order, so the table does
    not depend on scheduling.
    """
    jobs = [(cfg, k, r) for k in range(len(cfg.kappas)) for r in range(cfg.replicates)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(_run_cell_args, jobs))
    else:
        parts = [run_cell(*job) for job in jobs]
    order = {m: i for i, m in enumerate(METHODS)}
    rows = [r for part in parts for r in part]
    rows.sort(key=lambda r: (r["kappa"], r["replicate"], order[r["method"]], r["P"]))
    return BenchResult(rows, cfg)
