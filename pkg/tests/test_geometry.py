import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from spvmf.errors import DegenerateDecomposition, RotationAtCayleySingularity
from spvmf.geometry import (
    cayley_derivatives,
    cayley_to_rotation,
    normalize,
    random_rotation,
    rotation_to_cayley,
    separation_angle,
    skew,
    tangent_normal,
)

finite = st.floats(-5.0, 5.0, allow_nan=False)
triples = st.tuples(finite, finite, finite).map(np.array)
vectors = st.tuples(finite, finite, finite).filter(lambda v: np.linalg.norm(v) > 1e-3).map(lambda v: normalize(np.array(v)))


# separation angle ----------------------------------------------------------


def test_separation_angle_known_pairs():
    # [TRIVIAL] orthogonal, equal and antipodal pairs
    e1, e2 = np.eye(3)[:2]
    assert separation_angle(e1, e2) == pytest.approx(np.pi / 2)
    assert separation_angle(e1, e1) == 0.0
    assert separation_angle(e1, -e1) == pytest.approx(np.pi)


def test_separation_angle_clips_rounding():
    v = normalize(np.array([1.0, 1e-9, 0.0]))
    assert np.isfinite(separation_angle(v, v * (1 + 1e-15)))


@given(vectors, vectors)
def test_chord_identity(u, v):
    # [DERIVED] |u - v| = 2 sin(delta / 2) for unit vectors
    assert np.linalg.norm(u - v) == pytest.approx(2 * np.sin(separation_angle(u, v) / 2), abs=1e-9)


# Cayley --------------------------------------------------------------------


def test_skew_layout():
    A = skew([1.0, 2.0, 3.0])
    assert np.array_equal(A, [[0, 1, 2], [-1, 0, 3], [-2, -3, 0]])
    assert np.array_equal(A, -A.T)


def test_cayley_origin_is_identity():
    assert np.array_equal(cayley_to_rotation(np.zeros(3)), np.eye(3))


@given(triples)
def test_cayley_matches_axis_angle_oracle(a):
    # [DERIVED] skew(a) = [w]_x with w = (-a3, a2, -a1); the Cayley transform of
    # [w]_x is the rotation by -2 atan|w| about w (independent scipy oracle).
    w = np.array([-a[2], a[1], -a[0]])
    r = np.linalg.norm(w)
    rotvec = np.zeros(3) if r == 0 else -2.0 * np.arctan(r) * w / r
    assert np.allclose(cayley_to_rotation(a), Rotation.from_rotvec(rotvec).as_matrix(), atol=1e-12)


@given(triples)
def test_cayley_is_special_orthogonal(a):
    Q = cayley_to_rotation(a)
    assert np.allclose(Q.T @ Q, np.eye(3), atol=1e-10)
    assert np.linalg.det(Q) == pytest.approx(1.0, abs=1e-10)


@given(triples)
def test_cayley_roundtrip(a):
    assert np.allclose(rotation_to_cayley(cayley_to_rotation(a)), a, atol=1e-9 * (1 + np.abs(a).max() ** 2))


def test_half_turn_has_no_cayley_parameters():
    Q = np.diag([1.0, -1.0, -1.0])
    with pytest.raises(RotationAtCayleySingularity):
        rotation_to_cayley(Q)


def test_random_rotation_is_proper():
    rng = np.random.default_rng(0)
    for _ in range(20):
        Q = random_rotation(rng)
        assert np.allclose(Q.T @ Q, np.eye(3))
        assert np.linalg.det(Q) == pytest.approx(1.0)


@given(triples)
@settings(max_examples=30)
def test_cayley_derivatives_match_finite_differences(a):
    h = 1e-6
    dQ = cayley_derivatives(a)
    for k in range(3):
        e = np.zeros(3)
        e[k] = h
        fd = (cayley_to_rotation(a + e) - cayley_to_rotation(a - e)) / (2 * h)
        assert np.allclose(dQ[k], fd, atol=1e-6)


# tangent-normal ------------------------------------------------------------


@given(vectors, vectors)
def test_tangent_normal_identities(base, target):
    tn = tangent_normal(base, target)
    assert tn.m**2 + tn.t**2 == pytest.approx(1.0, abs=1e-9)
    if not tn.degenerate:
        assert abs(tn.R @ base) < 1e-9
        assert np.linalg.norm(tn.R) == pytest.approx(1.0)
        assert np.allclose(tn.t * base + tn.m * tn.R, target, atol=1e-9)


def test_tangent_normal_concrete_case():
    # [DERIVED] target at 60 degrees from base within the x-y plane
    base = np.array([1.0, 0.0, 0.0])
    target = np.array([0.5, np.sqrt(3) / 2, 0.0])
    tn = tangent_normal(base, target)
    assert tn.t == pytest.approx(0.5)
    assert tn.m == pytest.approx(np.sqrt(3) / 2)
    assert np.allclose(tn.R, [0.0, 1.0, 0.0])


def test_tangent_normal_is_not_symmetric():
    # [DERIVED] swapping base and target keeps m but changes R
    a = np.array([1.0, 0.0, 0.0])
    b = normalize(np.array([1.0, 1.0, 1.0]))
    ab = tangent_normal(a, b)
    ba = tangent_normal(b, a)
    assert ab.m == pytest.approx(ba.m)
    assert not np.allclose(ab.R, ba.R)
    assert abs(ab.R @ a) < 1e-12 and abs(ba.R @ b) < 1e-12


def test_tangent_normal_degenerate_flag_and_strict():
    v = np.array([0.0, 0.0, 1.0])
    tn = tangent_normal(v, v)
    assert tn.degenerate and tn.m == 0.0 and np.all(np.isnan(tn.R))
    assert tangent_normal(v, -v).degenerate
    with pytest.raises(DegenerateDecomposition):
        tangent_normal(v, v, strict=True)


def test_tangent_normal_broadcasts():
    rng = np.random.default_rng(1)
    base = normalize(rng.standard_normal((4, 5, 3)))
    target = normalize(rng.standard_normal((4, 5, 3)))
    tn = tangent_normal(base, target)
    assert tn.R.shape == (4, 5, 3) and tn.m.shape == (4, 5)
