import numpy as np
import pytest

from trajfollow.core import (
    BOXPUSHER_DISSIMILARITY, BOXPUSHER_MAP, COUCH_DISSIMILARITY, COUCH_MAP, Dissimilarity, StateMap,
    apply_state_map, dissimilarity, read_trajectory, write_trajectory,
)
from trajfollow.exceptions import ConfigurationError
from oracles import weighted_distance


def test_boxpusher_state_map():
    high = apply_state_map([1, 2, 3, 4, 9, 9], BOXPUSHER_MAP)
    assert high.tolist() == [1, 2, 3, 4]
    assert high.dtype == np.float64


def test_couch_state_map_keeps_position_only():
    low = np.r_[np.ones(9), 0.0, 1.0, 5.0, 6.0]
    assert apply_state_map(low, COUCH_MAP).tolist() == [5, 6]


def test_state_map_dimension_mismatch():
    with pytest.raises(ConfigurationError):
        apply_state_map([1, 2, 3], BOXPUSHER_MAP)
    with pytest.raises(ConfigurationError):
        apply_state_map([1, 2, np.nan, 4, 5, 6], BOXPUSHER_MAP)


def test_dissimilarity_examples():
    unit = Dissimilarity.unit(StateMap.identity(2))
    assert dissimilarity([1.0, 2.0], [1.0, 2.0], unit) == 0.0
    assert dissimilarity([1.1, 0.0], [1.0, 0.0], unit) == pytest.approx(0.1, abs=1e-12)
    low = [1, 0, 0, 0, 7, 7]
    assert dissimilarity(low, [0, 0, 0, 0], BOXPUSHER_DISSIMILARITY) == pytest.approx(0.1, abs=1e-15)


def test_dissimilarity_matches_weighted_norm_oracle(rng):
    for _ in range(200):
        low = rng.normal(size=6)
        high = rng.normal(size=4)
        expected = weighted_distance(low[:4], high, [0.1, 0.1, 0.9, 0.9])
        assert BOXPUSHER_DISSIMILARITY(low, high) == pytest.approx(expected, rel=1e-12)
        assert BOXPUSHER_DISSIMILARITY.to_many(low, high[None])[0] == pytest.approx(expected, rel=1e-12)


def test_dissimilarity_symmetry_and_zero(rng):
    d = Dissimilarity(StateMap.identity(3), rng.uniform(0.1, 2, size=3))
    for _ in range(100):
        a, b = rng.normal(size=3), rng.normal(size=3)
        assert d(a, b) == pytest.approx(d(b, a), rel=1e-14)
        assert d(a, b) > 0
        assert d(a, a) == 0.0


def test_state_map_is_consistent_with_dissimilarity(rng):
    for _ in range(1000):
        low = rng.normal(size=6)
        assert BOXPUSHER_DISSIMILARITY(low, BOXPUSHER_MAP(low)) == 0.0
        low = rng.normal(size=13)
        assert COUCH_DISSIMILARITY(low, COUCH_MAP(low)) == 0.0


def test_object_weight_scales_linearly():
    low, high = [0, 0, 1.0, 2.0, 0, 0], [0, 0, 0, 0]
    base = Dissimilarity(BOXPUSHER_MAP, [0.1, 0.1, 0.9, 0.9])
    doubled = Dissimilarity(BOXPUSHER_MAP, [0.1, 0.1, 1.8, 1.8])
    assert doubled(low, high) == pytest.approx(2 * base(low, high), rel=1e-14)


def test_bad_weights_rejected():
    with pytest.raises(ConfigurationError):
        Dissimilarity(BOXPUSHER_MAP, [1, 1])
    with pytest.raises(ConfigurationError):
        Dissimilarity(BOXPUSHER_MAP, [1, -1, 1, 1])


def test_trajectory_file_round_trip(tmp_path, rng):
    traj = rng.normal(size=(7, 4))
    path = tmp_path / "t.txt"
    write_trajectory(path, traj, "boxpusher")
    assert path.read_text().splitlines()[0] == "dim=4 env=boxpusher"
    back, env = read_trajectory(path)
    assert env == "boxpusher"
    np.testing.assert_array_equal(back, traj)


@pytest.mark.parametrize("text", ["", "dim=x env=a\n1,2\n", "dim=2 env=a\n1,2,3\n", "dim=2 env=a\n",
                                  "dim=2 env=a\n1,zz\n"])
def test_trajectory_file_errors(tmp_path, text):
    path = tmp_path / "bad.txt"
    path.write_text(text)
    with pytest.raises(ConfigurationError):
        read_trajectory(path)


def test_missing_trajectory_file(tmp_path):
    with pytest.raises(ConfigurationError):
        read_trajectory(tmp_path / "nope.txt")
