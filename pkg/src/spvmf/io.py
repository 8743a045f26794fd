"""On-disk formats: atlas JSON, covariate and direction CSVs, NDJSON draw records."""

import csv
import json
import math
from pathlib import Path

import numpy as np

from .errors import DataFormatError
from .mcmc import Checkpoint, PosteriorDraws
from .model import CovariateTable, Dataset, DirectionField, StreamlineAtlas

ATLAS_FILE = "atlas.json"
COVARIATES_FILE = "covariates.csv"
DIRECTIONS_FILE = "directions.csv"
TRUTH_FILE = "truth.json"
DRAWS_FILE = "draws.ndjson"
META_FILE = "meta.json"
CHECKPOINT_FILE = "checkpoint.json"
DIAGNOSTICS_FILE = "diagnostics.json"


def jsonable(obj):
    """Recursively convert numpy containers and scalars to plain Python."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path):
    path = Path(path)
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataFormatError(path, f"invalid JSON: {exc.msg}", exc.lineno) from None


def _fmt(x):
    return repr(float(x))


# -- atlas -----------------------------------------------------------------


def write_atlas(path, atlas):
    write_json(path, atlas.to_dict())


def read_atlas(path):
    d = read_json(path)
    fibers = d.get("fibers") if isinstance(d, dict) else None
    if not isinstance(fibers, list) or not fibers:
        raise DataFormatError(path, "expected an object with a non-empty 'fibers' list")
    for k, f in enumerate(fibers):
        if not isinstance(f, list) or not all(isinstance(v, int) and not isinstance(v, bool) for v in f):
            raise DataFormatError(path, f"fiber {k} must be a list of integer voxel ids")
    return StreamlineAtlas.from_dict(d)


# -- covariates ------------------------------------------------------------


def write_covariates(path, table):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        has_group = table.groups is not None
        w.writerow(["subject", *(["group"] if has_group else []), *table.names])
        for i, s in enumerate(table.subjects):
            w.writerow([s, *([table.groups[i]] if has_group else []), *(_fmt(x) for x in table.values[i])])


def read_covariates(path, levels=None):
    """Read a covariate table; the optional ``group`` column carries labels."""
    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataFormatError(path, "empty file", 1)
    header = [h.strip() for h in rows[0]]
    if not header or header[0] != "subject":
        raise DataFormatError(path, "first column must be 'subject'", 1)
    gcol = header.index("group") if "group" in header else None
    cols = [j for j in range(1, len(header)) if j != gcol]
    names = [header[j] for j in cols]
    if len(set(header)) != len(header):
        raise DataFormatError(path, "duplicate column names", 1)
    subjects, groups, values = [], [], []
    seen = set()
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise DataFormatError(path, f"expected {len(header)} fields, got {len(row)}", lineno)
        s = row[0].strip()
        if s in seen:
            raise DataFormatError(path, f"duplicate subject {s!r}", lineno)
        seen.add(s)
        try:
            vals = [float(row[j]) for j in cols]
        except ValueError:
            raise DataFormatError(path, "non-numeric covariate value", lineno) from None
        if not all(math.isfinite(v) for v in vals):
            raise DataFormatError(path, "non-finite covariate value", lineno)
        subjects.append(s)
        values.append(vals)
        if gcol is not None:
            groups.append(row[gcol].strip())
    if not subjects:
        raise DataFormatError(path, "no subject rows")
    return CovariateTable(
        tuple(subjects),
        tuple(names),
        np.array(values, dtype=float).reshape(len(subjects), len(names)),
        tuple(groups) if gcol is not None else None,
        levels,
    )


# -- directions ------------------------------------------------------------


def write_directions(path, subjects, directions):
    """One row per observed (subject, voxel); unobserved pairs are omitted."""
    E, mask = directions.E, directions.mask
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subject", "voxel", "x", "y", "z"])
        for i, s in enumerate(subjects):
            for v in np.flatnonzero(mask[i]):
                w.writerow([s, int(v), *(_fmt(c) for c in E[i, v])])


def read_directions(path, subjects, n_voxels, norm_tol=1e-6):
    """Direction field (N, V, 3) aligned with ``subjects``; absent pairs are masked."""
    path = Path(path)
    index = {s: i for i, s in enumerate(subjects)}
    E = np.zeros((len(subjects), n_voxels, 3))
    E[..., 0] = 1.0
    mask = np.zeros((len(subjects), n_voxels), dtype=bool)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["subject", "voxel", "x", "y", "z"]:
            raise DataFormatError(path, "header must be subject,voxel,x,y,z", 1)
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 5:
                raise DataFormatError(path, f"expected 5 fields, got {len(row)}", lineno)
            s = row[0].strip()
            if s not in index:
                raise DataFormatError(path, f"unknown subject {s!r}", lineno)
            try:
                v = int(row[1])
                xyz = np.array([float(c) for c in row[2:]])
            except ValueError:
                raise DataFormatError(path, "voxel must be an integer and x,y,z numeric", lineno) from None
            if not 0 <= v < n_voxels:
                raise DataFormatError(path, f"voxel {v} outside 0..{n_voxels - 1}", lineno)
            if not np.all(np.isfinite(xyz)) or abs(np.linalg.norm(xyz) - 1.0) > norm_tol:
                raise DataFormatError(path, "direction is not a finite unit vector", lineno)
            i = index[s]
            if mask[i, v]:
                raise DataFormatError(path, f"duplicate entry for subject {s!r}, voxel {v}", lineno)
            E[i, v] = xyz / np.linalg.norm(xyz)
            mask[i, v] = True
    return DirectionField(E, mask)


# -- data sets -------------------------------------------------------------


def write_dataset(out_dir, dataset):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_atlas(out / ATLAS_FILE, dataset.atlas)
    write_covariates(out / COVARIATES_FILE, dataset.table)
    write_directions(out / DIRECTIONS_FILE, dataset.table.subjects, dataset.directions)


def load_dataset(data_dir, subjects=None, group_specific=False, directions=True):
    """Load a data directory, optionally keeping only the listed subject ids.

    Without ``directions`` (or when the file is absent) every pair is
    unobserved, which is enough for prediction.
    """
    d = Path(data_dir)
    atlas = read_atlas(d / ATLAS_FILE)
    table = read_covariates(d / COVARIATES_FILE)
    path = d / DIRECTIONS_FILE
    if directions and path.exists():
        field = read_directions(path, table.subjects, atlas.n_voxels)
    else:
        field = DirectionField(
            np.tile([1.0, 0.0, 0.0], (table.n_subjects, atlas.n_voxels, 1)),
            np.zeros((table.n_subjects, atlas.n_voxels), dtype=bool),
        )
    data = Dataset(atlas, table, field, group_specific)
    if subjects is not None:
        pos = {s: i for i, s in enumerate(table.subjects)}
        missing = [s for s in subjects if s not in pos]
        if missing:
            raise DataFormatError(d / COVARIATES_FILE, f"unknown subjects {missing[:5]}")
        data = data.subset([pos[s] for s in subjects])
    return data


def write_truth(path, sim):
    t = sim.truth
    subjects = sim.train.table.subjects + sim.test.table.subjects
    write_json(
        path,
        {
            "alpha": t["alpha"],
            "beta": t["beta"],
            "cayley": t["cayley"],
            "kappa": t["kappa"],
            "variances": t["variances"],
            "pacf": t["pacf"],
            "eta": t["eta"],
            "train_subjects": [subjects[i] for i in t["train_subjects"]],
            "test_subjects": [subjects[i] for i in t["test_subjects"]],
        },
    )


# -- draws -----------------------------------------------------------------


def write_draws(out_dir, draws, append=False, include_eta=True):
    """Append or write NDJSON draw records plus the ``meta.json`` sidecar."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / DRAWS_FILE, "a" if append else "w") as fh:
        if draws is not None:
            for t in range(len(draws)):
                fh.write(json.dumps(jsonable(draws.record(t, include_eta)), sort_keys=True))
                fh.write("\n")
    if draws is not None:
        write_json(out / META_FILE, {"acceptance": draws.acceptance, "meta": draws.meta})


def read_draws(run_dir):
    run = Path(run_dir)
    path = run / DRAWS_FILE if run.is_dir() else run
    meta_path = path.parent / META_FILE
    records = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise DataFormatError(path, f"invalid JSON record: {exc.msg}", lineno) from None
    if not records:
        raise DataFormatError(path, "no draw records")
    side = read_json(meta_path) if meta_path.exists() else {}
    return PosteriorDraws.from_records(records, side.get("acceptance"), side.get("meta"))


def write_checkpoint(path, ckpt):
    write_json(path, ckpt.to_dict())


def read_checkpoint(path):
    return Checkpoint.from_dict(read_json(path))
