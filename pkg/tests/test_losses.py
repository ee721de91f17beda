import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from riskcal.losses import (
    LossFormatError,
    LossTensor,
    ParameterGrid,
    RiskSpec,
    empirical_risk,
    load_grid,
    load_loss,
    pfdr_transform,
    save_grid,
    save_loss,
)
from riskcal.simulation import ARConfig, simulate_ar


def write(path, text):
    path.write_text(text)
    return path


def test_load_zero_csv(tmp_path):
    f = write(tmp_path / "z.csv", "# n=2 N=2 m=1 bounded=1\n0,0\n0,0\n")
    t = load_loss(f)
    assert (t.n, t.N, t.m) == (2, 2, 1)
    assert np.all(t.data == 0)


def test_out_of_unit_interval(tmp_path):
    f = write(tmp_path / "bad.csv", "# n=1 N=2 m=1 bounded=1\n0.5,1.2\n")
    with pytest.raises(LossFormatError, match="entry out of unit interval"):
        load_loss(f)


def test_unbounded_allows_large_entries(tmp_path):
    f = write(tmp_path / "u.csv", "# n=1 N=2 m=1 bounded=0\n0.5,1.2\n")
    assert load_loss(f).data.max() == 1.2


@pytest.mark.parametrize(
    "text, msg",
    [
        ("n=1 N=1 m=1 bounded=1\n0\n", "malformed header"),
        ("# n=1 N=1 m=1\n0\n", "malformed header"),
        ("# n=1 N=1 m=1 bounded=2\n0\n", "malformed header"),
        ("# n=1 N=2 m=1 bounded=1\n0,abc\n", "non-numeric"),
        ("# n=1 N=2 m=1 bounded=1\n0\n", "expected 2 values"),
        ("# n=2 N=1 m=1 bounded=1\n0\n", "expected 2 rows"),
    ],
)
def test_malformed_inputs(tmp_path, text, msg):
    with pytest.raises(LossFormatError, match=msg):
        load_loss(write(tmp_path / "x.csv", text))


def test_grid_dimension_mismatch(tmp_path):
    f = write(tmp_path / "z.csv", "# n=2 N=2 m=1 bounded=1\n0,0\n0,0\n")
    with pytest.raises(LossFormatError, match="dimension mismatch"):
        load_loss(f, grid=ParameterGrid.linspace(0, 1, 3))


def test_risk_major_layout(tmp_path):
    data = np.arange(12, dtype=float).reshape(2, 3, 2) / 12
    t = LossTensor(data, True)
    save_loss(t, tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "# n=2 N=3 m=2 bounded=1"
    # rows of risk 0 come first
    assert [float(x) for x in lines[1].split(",")] == data[0, :, 0].tolist()
    assert [float(x) for x in lines[3].split(",")] == data[0, :, 1].tolist()
    assert load_loss(tmp_path / "t.csv") == t


def test_json_loss_layout(tmp_path):
    obj = {"bounded": True, "losses": [[[0.1, 0.2]], [[0.3, 0.4]]]}
    t = load_loss(write(tmp_path / "t.json", json.dumps(obj)))
    assert (t.n, t.N, t.m) == (1, 2, 2)
    assert t.data[0, 1, 1] == 0.4


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 5), st.integers(1, 3)), elements=st.floats(0, 1)))
def test_round_trip_property(tmp_path_factory, data):
    t = LossTensor(data, True)
    path = tmp_path_factory.mktemp("rt") / "t.csv"
    save_loss(t, path)
    back = load_loss(path)
    assert back == t
    assert back.data.tobytes() == t.data.tobytes()


@pytest.mark.slow
def test_round_trip_simulated_full_size(tmp_path):
    t = simulate_ar(ARConfig(n=5000, N=1000, seed=3))
    save_loss(t, tmp_path / "big.csv")
    assert load_loss(tmp_path / "big.csv").data.tobytes() == t.data.tobytes()


def test_grid_json_round_trip(tmp_path):
    g = ParameterGrid.product([0.1, 0.2], [1.0, 2.0, 3.0])
    save_grid(g, tmp_path / "g.json")
    back = load_grid(tmp_path / "g.json")
    assert back.shape == (2, 3)
    assert np.array_equal(back.values, g.values)
    assert back.values[1].tolist() == [0.1, 2.0]  # row-major: last axis fastest


def test_grid_validation():
    with pytest.raises(ValueError):
        ParameterGrid(np.zeros((4, 1)), (3,))
    with pytest.raises(ValueError):
        ParameterGrid(np.array([[0.0], [0.0], [1.0]]), (3,))
    with pytest.raises(ValueError):
        ParameterGrid(np.zeros((0, 1)))


def test_risk_spec_validation():
    RiskSpec((0.1, 0.2), 0.1)
    for bad in [((0.0,), 0.1), ((1.0,), 0.1), ((0.1,), 1.0), ((0.1,), 0.0)]:
        with pytest.raises(ValueError):
            RiskSpec(*bad)


def test_pfdr_examples():
    z = np.zeros((3, 2))
    assert np.all(pfdr_transform(z, z, 0.15) == 0.15)
    one = np.ones((3, 2))
    assert np.all(pfdr_transform(one, one, 0.15) == 1.0)
    out = pfdr_transform(np.array([[1.0], [0.0]]), np.array([[1.0], [1.0]]), 0.5)
    assert out.mean() == 0.5


def test_pfdr_errors():
    with pytest.raises(ValueError, match="0 or 1"):
        pfdr_transform(np.zeros(2), np.array([0.5, 1.0]), 0.1)
    with pytest.raises(ValueError, match="v <= r"):
        pfdr_transform(np.array([0.2, 0.0]), np.array([0.0, 1.0]), 0.1)


@settings(max_examples=60, deadline=None)
@given(
    st.lists(st.tuples(st.floats(0, 1), st.booleans()), min_size=1, max_size=30),
    st.floats(0.01, 0.99),
)
def test_pfdr_output_bounded(pairs, alpha):
    r = np.array([float(b) for _, b in pairs])
    v = np.array([x for x, _ in pairs]) * r
    out = pfdr_transform(v, r, alpha)
    assert np.all((out >= 0) & (out <= 1))


def test_pfdr_equivalence_on_enumerated_distributions():
    rng = np.random.default_rng(11)
    alpha = 0.3
    for _ in range(25):
        k = rng.integers(2, 6)
        r = rng.integers(0, 2, size=k).astype(float)
        v = np.round(rng.uniform(size=k), 2) * r
        w = rng.dirichlet(np.ones(k))
        mean_l = float(w @ pfdr_transform(v, r, alpha))
        mean_r = float(w @ r)
        pfdr = 0.0 if mean_r == 0 else float(w @ v) / mean_r
        assert (mean_l <= alpha + 1e-12) == (pfdr <= alpha + 1e-12)


def test_empirical_risk_examples():
    r, s = empirical_risk(LossTensor(np.zeros((4, 3)), True))
    assert np.all(r == 0) and np.all(s == 0)
    r, s = empirical_risk(LossTensor(np.array([[0.0], [1.0]]), True))
    assert r[0, 0] == 0.5
    assert s[0, 0] == pytest.approx(np.sqrt(0.5))
    r, s = empirical_risk(LossTensor(np.array([[0.4, 0.7]]), True))
    assert np.all(s == 0)


def test_empirical_risk_bernoulli_mean():
    rng = np.random.default_rng(5)
    col = (rng.uniform(size=(100_000, 1)) < 0.3).astype(float)
    r, _ = empirical_risk(LossTensor(col, True))
    assert abs(r[0, 0] - 0.3) < 0.005


def test_tensor_is_immutable():
    t = LossTensor(np.zeros((2, 2)), True)
    with pytest.raises(ValueError):
        t.data[0, 0] = 1.0


def test_pfdr_brute_force_two_point():
    # all outcomes of a 2-point distribution with equal weights
    alpha = 0.5
    for (v1, r1), (v2, r2) in itertools.product([(0, 0), (0, 1), (0.5, 1), (1, 1)], repeat=2):
        v, r = np.array([v1, v2], float), np.array([r1, r2], float)
        lhs = pfdr_transform(v, r, alpha).mean() <= alpha
        rhs = (v.sum() / r.sum() if r.sum() else 0.0) <= alpha
        assert lhs == rhs
