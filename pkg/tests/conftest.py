import time

import numpy as np
import pytest

from simulmt.agent import Agent, Baseline, observation_dim
from simulmt.config import ExperimentConfig
from simulmt.nmt_env import EOS, NMTConfig, NMTEnv

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def report():
    def _report(name: str, ok: bool, detail: str = "") -> bool:
        line = f"{name}: {'PASS' if ok else 'FAIL'}  {detail}".rstrip()
        print(line)
        ACCEPTANCE_LINES.append(line)
        return ok
    return _report


def random_source(rng, vocab: int, lo: int = 1, hi: int = 6) -> list[int]:
    n = int(rng.integers(lo, hi + 1))
    return [int(x) for x in rng.integers(3, vocab, size=n)] + [EOS]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_env():
    return NMTEnv(NMTConfig(9, 8, emb=4, hidden=5, att=3), rng=np.random.default_rng(7))


@pytest.fixture
def tiny_agent(tiny_env):
    return Agent(observation_dim(tiny_env), 6, rng=np.random.default_rng(8))


@pytest.fixture
def tiny_baseline(tiny_env):
    return Baseline(observation_dim(tiny_env), 5, rng=np.random.default_rng(9))


def scaled_agent(env, seed: int, scale: float = 1.0, hidden: int = 6) -> Agent:
    """A random agent whose output layer is not zero, so it is not stuck at p = 0.5."""
    r = np.random.default_rng(seed)
    agent = Agent(observation_dim(env), hidden, rng=r)
    agent.params["g_W"][...] = r.normal(0, scale, agent.params["g_W"].shape)
    agent.params["g_b"][...] = r.normal(0, scale, 2)
    return agent


# ---- desk-scale copy-task pipeline, shared across modules ---------------------

def desk_config(task: str = "copy", window: int = 2) -> ExperimentConfig:
    cfg = ExperimentConfig()
    cfg.data.task = task
    cfg.data.window = window
    cfg.train.select = "final"
    return cfg


class Timer:
    def __init__(self):
        self.seconds = 0.0

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.seconds += time.perf_counter() - self.t0


@pytest.fixture(scope="session")
def copy_setup():
    """Pre-trained copy-task environment and its corpora (about 25 s)."""
    from simulmt import harness as hx
    cfg = desk_config()
    timer = Timer()
    with timer:
        splits = hx.synthetic_splits(cfg)
        env, log = hx.pretrain_env(cfg, splits["train"], splits["valid"])
    return {"cfg": cfg, "env": env, "splits": splits, "log": log, "timer": timer}
