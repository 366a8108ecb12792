import numpy as np
import pytest

from themes import (Dataset, EdmConfig, EmSettings, MlirlSettings, ThemesConfig,
                    TiccSettings, Trajectory)
from themes.synthgen import GeneratorConfig, generate


def make_trajectory(tid, states, actions, timestamps=None) -> Trajectory:
    states = np.asarray(states, dtype=np.float64)
    if timestamps is None:
        timestamps = np.arange(states.shape[0], dtype=np.float64)
    return Trajectory(id=tid, states=states,
                      actions=np.asarray(actions, dtype=np.int64),
                      timestamps=np.asarray(timestamps, dtype=np.float64))


def toy_dataset(seed=0, n_traj=3, T=12, m=3) -> Dataset:
    """Small random dataset with binary actions and irregular timestamps."""
    rng = np.random.default_rng(seed)
    trajs = []
    for i in range(n_traj):
        states = rng.normal(size=(T, m))
        actions = rng.integers(0, 2, size=T)
        timestamps = np.cumsum(rng.exponential(1.0, size=T)) - 1.0
        trajs.append(make_trajectory(f"toy{i}", states, actions, timestamps))
    return Dataset(trajectories=tuple(trajs), feature_names=(), action_count=0)


def fast_config(**over) -> ThemesConfig:
    """Pipeline config small enough for unit tests."""
    base = dict(
        seed=1, K=2, G=2, outer_iters=2,
        edm=EdmConfig(epochs=3, batch_size=64, sgld_steps=5),
        em=EmSettings(max_iters=3),
        mlirl=MlirlSettings(steps=5),
        ticc=TiccSettings(max_em_iters=8),
    )
    base.update(over)
    return ThemesConfig(**base)


@pytest.fixture(scope="session")
def small_synth():
    """(dataset, ground truth) from the generator at a reduced scale."""
    cfg = GeneratorConfig(N=8, segments_per_trajectory=2, mean_segment_length=8,
                          m=4, seed=3)
    return generate(cfg)


# criterion number -> (passed, one line description); filled by test_acceptance
ACCEPTANCE_RESULTS = {}


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for n in sorted(ACCEPTANCE_RESULTS):
        passed, desc = ACCEPTANCE_RESULTS[n]
        word = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"[criterion {n}] {word} - {desc}")
