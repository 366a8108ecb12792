import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_trajectory, toy_dataset
from themes.trajdata import (DataError, Dataset, flatten_pairs, load_dataset,
                             save_dataset, split_dataset, stack_windows,
                             window_matrix)


class TestTrajectoryValidation:
    def test_basic_fields(self):
        tr = make_trajectory("a", [[1.0, 2.0], [3.0, 4.0]], [0, 1], [0.0, 1.5])
        assert len(tr) == 2
        assert tr.state_dim == 2
        assert np.allclose(tr.delta_t, [1.5])

    def test_length_mismatch(self):
        with pytest.raises(DataError):
            make_trajectory("a", [[1.0], [2.0]], [0], [0.0, 1.0])

    def test_timestamps_must_increase(self):
        with pytest.raises(DataError):
            make_trajectory("a", [[1.0], [2.0]], [0, 1], [1.0, 1.0])

    def test_negative_action(self):
        with pytest.raises(DataError):
            make_trajectory("a", [[1.0], [2.0]], [0, -1], [0.0, 1.0])

    def test_non_finite_state(self):
        with pytest.raises(DataError):
            make_trajectory("a", [[np.nan], [2.0]], [0, 1], [0.0, 1.0])

    def test_fractional_action(self):
        from themes.trajdata import Trajectory
        with pytest.raises(DataError):
            Trajectory(id="a", states=np.array([[1.0], [2.0]]),
                       actions=np.array([0.5, 1.0]),
                       timestamps=np.array([0.0, 1.0]))


class TestDatasetValidation:
    def test_action_count_inferred(self):
        ds = toy_dataset()
        assert ds.action_count == 2
        assert ds.state_dim == 3
        assert ds.total_steps == 36

    def test_minimum_action_count_is_two(self):
        tr = make_trajectory("a", [[0.0]], [0])
        ds = Dataset(trajectories=(tr,), feature_names=(), action_count=0)
        assert ds.action_count == 2

    def test_duplicate_ids_rejected(self):
        tr = make_trajectory("a", [[0.0]], [0])
        tr2 = make_trajectory("a", [[1.0]], [1])
        with pytest.raises(DataError):
            Dataset(trajectories=(tr, tr2), feature_names=(), action_count=0)

    def test_dim_mismatch_rejected(self):
        tr = make_trajectory("a", [[0.0]], [0])
        tr2 = make_trajectory("b", [[1.0, 2.0]], [1])
        with pytest.raises(DataError):
            Dataset(trajectories=(tr, tr2), feature_names=(), action_count=0)

    def test_action_out_of_declared_range(self):
        tr = make_trajectory("a", [[0.0]], [3])
        with pytest.raises(DataError):
            Dataset(trajectories=(tr,), feature_names=(), action_count=2)

    def test_by_id(self):
        ds = toy_dataset()
        assert ds.by_id("toy1").id == "toy1"
        with pytest.raises(KeyError):
            ds.by_id("missing")


class TestSerialization:
    def test_jsonl_round_trip(self, tmp_path):
        ds = toy_dataset(seed=5)
        path = tmp_path / "d.jsonl"
        save_dataset(ds, path)
        back = load_dataset(path)
        assert back.ids == ds.ids
        for a, b in zip(ds.trajectories, back.trajectories):
            assert np.array_equal(a.states, b.states)
            assert np.array_equal(a.actions, b.actions)
            assert np.array_equal(a.timestamps, b.timestamps)

    def test_round_trip_is_bit_exact(self, tmp_path):
        # repr-based float serialization must not lose a single bit
        rng = np.random.default_rng(9)
        states = rng.normal(size=(4, 2)) * 1e-7
        tr = make_trajectory("x", states, [0, 1, 0, 1],
                             np.cumsum(rng.exponential(0.1, size=4)))
        ds = Dataset(trajectories=(tr,), feature_names=(), action_count=0)
        path = tmp_path / "d.jsonl"
        save_dataset(ds, path)
        back = load_dataset(path)
        assert back.trajectories[0].states.tobytes() == tr.states.tobytes()
        assert back.trajectories[0].timestamps.tobytes() == tr.timestamps.tobytes()

    def test_csv_round_trip(self, tmp_path):
        ds = toy_dataset(seed=2)
        path = tmp_path / "d.csv"
        lines = ["traj,t," + ",".join(f"x{j}" for j in range(ds.state_dim)) + ",a"]
        for tr in ds.trajectories:
            for t in range(len(tr)):
                xs = ",".join(repr(float(v)) for v in tr.states[t])
                lines.append(f"{tr.id},{float(tr.timestamps[t])!r},{xs},{tr.actions[t]}")
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        back = load_dataset(path)
        assert back.ids == ds.ids
        assert back.feature_names == tuple(f"x{j}" for j in range(ds.state_dim))
        for a, b in zip(ds.trajectories, back.trajectories):
            assert np.allclose(a.states, b.states)

    def test_jsonl_sorts_by_timestamp(self, tmp_path):
        path = tmp_path / "d.jsonl"
        path.write_text(
            '{"traj": "a", "t": 2.0, "x": [1.0], "a": 1}\n'
            '{"traj": "a", "t": 1.0, "x": [0.0], "a": 0}\n', encoding="utf-8")
        ds = load_dataset(path)
        assert np.array_equal(ds.trajectories[0].timestamps, [1.0, 2.0])
        assert np.array_equal(ds.trajectories[0].actions, [0, 1])

    def test_bad_json_names_line(self, tmp_path):
        path = tmp_path / "d.jsonl"
        path.write_text('{"traj": "a", "t": 0.0, "x": [1.0], "a": 0}\nnot json\n',
                        encoding="utf-8")
        with pytest.raises(DataError, match=":2:"):
            load_dataset(path)

    def test_bad_csv_header(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("traj,time,x0,a\n", encoding="utf-8")
        with pytest.raises(DataError, match="header"):
            load_dataset(path)

    def test_empty_file(self, tmp_path):
        path = tmp_path / "d.jsonl"
        path.write_text("", encoding="utf-8")
        with pytest.raises(DataError, match="empty"):
            load_dataset(path)


class TestWindows:
    def test_unpadded_content(self):
        tr = make_trajectory("a", [[0.0, 0.0], [1.0, 10.0], [2.0, 20.0]], [0, 0, 0])
        mat, padded = window_matrix(tr, omega=2)
        assert mat.shape == (3, 4)
        # oldest state first within the window
        assert np.array_equal(mat[2], [1.0, 10.0, 2.0, 20.0])
        assert np.array_equal(mat[1], [0.0, 0.0, 1.0, 10.0])
        # first window left-pads by repeating the first state
        assert np.array_equal(mat[0], [0.0, 0.0, 0.0, 0.0])
        assert padded.tolist() == [True, False, False]

    def test_omega_one_is_identity(self):
        tr = make_trajectory("a", [[1.0], [2.0]], [0, 1])
        mat, padded = window_matrix(tr, omega=1)
        assert np.array_equal(mat, [[1.0], [2.0]])
        assert not padded.any()

    def test_stack_windows_matches_matrix(self):
        tr = make_trajectory("a", np.arange(8.0).reshape(4, 2), [0, 1, 0, 1])
        mat, padded = window_matrix(tr, omega=3)
        wins = stack_windows(tr, omega=3)
        assert len(wins) == 4
        for t, w in enumerate(wins):
            assert np.array_equal(w.vector, mat[t])
            assert w.end_index == t
            assert w.padded == padded[t]
            assert w.trajectory_id == "a"

    @given(T=st.integers(1, 12), m=st.integers(1, 4), omega=st.integers(1, 5),
           seed=st.integers(0, 10_000))
    @settings(max_examples=60, deadline=None)
    def test_window_reconstruction_property(self, T, m, omega, seed):
        # every window's last m entries are the current state, and entry
        # blocks walk back through time with clamping at the start
        rng = np.random.default_rng(seed)
        tr = make_trajectory("h", rng.normal(size=(T, m)), rng.integers(0, 2, size=T))
        mat, padded = window_matrix(tr, omega)
        assert mat.shape == (T, m * omega)
        for t in range(T):
            for lag in range(omega):
                src = max(t - (omega - 1 - lag), 0)
                block = mat[t, lag * m:(lag + 1) * m]
                assert np.array_equal(block, tr.states[src])
            assert padded[t] == (t < omega - 1)


class TestFlattenAndSplit:
    def test_flatten_pairs_order(self):
        ds = toy_dataset(seed=1)
        X, a = flatten_pairs(ds)
        assert X.shape == (ds.total_steps, ds.state_dim)
        expect = np.concatenate([tr.states for tr in ds.trajectories])
        assert np.array_equal(X, expect)
        assert np.array_equal(a, np.concatenate([tr.actions for tr in ds.trajectories]))

    def test_split_is_partition(self):
        ds = toy_dataset(seed=4, n_traj=10)
        train, test = split_dataset(ds, 0.3, seed=7)
        assert sorted(train.ids + test.ids) == sorted(ds.ids)
        assert not set(train.ids) & set(test.ids)
        assert len(test.trajectories) == 3

    def test_split_deterministic(self):
        ds = toy_dataset(seed=4, n_traj=10)
        a = split_dataset(ds, 0.3, seed=7)
        b = split_dataset(ds, 0.3, seed=7)
        assert a[0].ids == b[0].ids and a[1].ids == b[1].ids

    def test_split_keeps_at_least_one_each(self):
        ds = toy_dataset(seed=4, n_traj=3)
        train, test = split_dataset(ds, 0.01, seed=0)
        assert len(test.trajectories) == 1
        train, test = split_dataset(ds, 0.99, seed=0)
        assert len(train.trajectories) == 1

    def test_split_preserves_original_order(self):
        ds = toy_dataset(seed=4, n_traj=10)
        train, test = split_dataset(ds, 0.3, seed=7)
        order = {tid: i for i, tid in enumerate(ds.ids)}
        assert train.ids == sorted(train.ids, key=order.get)
        assert test.ids == sorted(test.ids, key=order.get)
