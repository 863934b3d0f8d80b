import logging

import numpy as np
import pytest

from ttabench.bundle import SynthSpec, generate_synthetic, save_bundle
from ttabench.scoring import ScoringRule, normalize_rows


@pytest.fixture(autouse=True)
def reset_package_logger():
    yield
    root = logging.getLogger("ttabench")
    root.handlers[:] = []
    root.setLevel(logging.NOTSET)
    root.propagate = True


@pytest.fixture
def rule():
    return ScoringRule()


@pytest.fixture
def soft_rule():
    return ScoringRule(scale=10.0)


@pytest.fixture
def small_spec():
    return SynthSpec(seed=3, C=4, D=8, N=24, V=8, dataset_name="small")


@pytest.fixture
def small_bundle(small_spec):
    return generate_synthetic(small_spec)


@pytest.fixture
def small_bank(small_bundle):
    return small_bundle.text_bank(0)


@pytest.fixture
def bundle_dir(tmp_path, small_bundle):
    path = str(tmp_path / "small")
    save_bundle(small_bundle, path)
    return path


@pytest.fixture
def random_bank():
    def _random_bank(C, D, seed=0):
        return normalize_rows(np.random.default_rng(seed).standard_normal((C, D)))
    return _random_bank
