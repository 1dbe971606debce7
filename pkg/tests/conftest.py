import numpy as np
import pytest

from mose import build_schedule, synth_corpus


@pytest.fixture(scope="session")
def sched50():
    # the default chain used throughout: T=50, linear betas
    return build_schedule(50, 1e-4, 0.035)


@pytest.fixture(scope="session")
def sched20_zero():
    return build_schedule(20, 1e-3, 0.05, weight_mode="zero")


@pytest.fixture(scope="session")
def tiny_corpus():
    return synth_corpus(seed=33, n_utterances=6, length=256,
                        snr_levels=[0.0, 5.0, 10.0], split="train")


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
