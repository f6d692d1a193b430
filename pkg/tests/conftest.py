import numpy as np
import pytest

from cmts import model as cm
from cmts import scenario_data as sd


@pytest.fixture(scope="session")
def tiny_config():
    return cm.ModelConfig(D=8, H=6, C=4, T=12, feature_width=5)


@pytest.fixture(scope="session")
def safe_small():
    return sd.generate_safe_corpus(6, seed=3)


@pytest.fixture(scope="session")
def collision_small(safe_small):
    return sd.generate_collision_corpus(safe_small, seed=3)


def truncate(records, T):
    """Records cut to their first T steps (keeps labels and maps)."""
    out = []
    for r in records:
        out.append(sd.ScenarioRecord(r.id, sd.Trajectory(r.traj_a.waypoints[:T], r.dt),
                                     sd.Trajectory(r.traj_b.waypoints[:T], r.dt), r.map, r.label, r.template))
    return out


@pytest.fixture(scope="session")
def tiny_pairs(safe_small, collision_small, tiny_config):
    return truncate(safe_small[:4], tiny_config.T), truncate(collision_small[:4], tiny_config.T)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPT_EPOCHS = 200


@pytest.fixture(scope="session")
def trained_cmts():
    """Desk-scale CMTS model: 256 safe + 256 collision records, 200 epochs."""
    from cmts.training import TrainConfig, train
    safe = sd.generate_safe_corpus(256, seed=0)
    col = sd.generate_collision_corpus(safe, seed=0)
    mc = cm.ModelConfig()
    store, log = train(safe, col, TrainConfig(epochs=ACCEPT_EPOCHS, seed=0), mc)
    return {"params": store, "config": mc, "safe": safe, "collision": col, "log": log}
