import numpy as np
import pytest

from spvmf.model import (
    PROCESSES,
    CovariateTable,
    Dataset,
    DirectionField,
    ModelState,
    StreamlineAtlas,
)


def make_dataset(n_subjects=4, lengths=(5, 4), n_cov=1, seed=0, mask_fraction=0.0):
    rng = np.random.default_rng(seed)
    atlas = StreamlineAtlas.chains(list(lengths))
    V = atlas.n_voxels
    values = rng.standard_normal((n_subjects, n_cov))
    table = CovariateTable(tuple(f"s{i}" for i in range(n_subjects)), tuple(f"x{j}" for j in range(n_cov)), values)
    E = rng.standard_normal((n_subjects, V, 3))
    E /= np.linalg.norm(E, axis=-1, keepdims=True)
    mask = rng.random((n_subjects, V)) >= mask_fraction
    return Dataset(atlas, table, DirectionField(E, mask))


def random_state(data, lag=2, seed=1):
    rng = np.random.default_rng(seed)
    N, V, D = data.n_subjects, data.n_voxels, data.n_coef
    return ModelState(
        alpha=rng.standard_normal((V, D)),
        beta=rng.standard_normal((V, D)),
        eta=rng.standard_normal((N, V, 2)),
        cayley=rng.normal(0, 0.3, 3),
        kappa=float(rng.uniform(2, 10)),
        variances={
            "tau2_eps": float(rng.uniform(0.5, 2)),
            "tau2_xi": float(rng.uniform(0.5, 2)),
            "sigma2_alpha": float(rng.uniform(0.5, 2)),
            "sigma2_beta": float(rng.uniform(0.5, 2)),
        },
        pacf={p: rng.uniform(-0.7, 0.7, lag) for p in PROCESSES},
    )


@pytest.fixture
def tiny():
    data = make_dataset()
    return data, random_state(data)


# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")
