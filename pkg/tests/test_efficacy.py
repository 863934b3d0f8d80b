"""Accuracy sanity checks on the frozen benchmark bundle. Run with ``pytest -m slow``."""
import pytest

from ttabench.bundle import SynthSpec, generate_synthetic, save_bundle
from ttabench.harness import BenchHarness, ExperimentSpec

pytestmark = pytest.mark.slow

FROZEN_SPEC = SynthSpec(
    seed=0, C=10, D=64, N=500, V=64, weak_noise_sigma=0.7, view_noise_sigma=0.9, dataset_name="frozen",
)


@pytest.fixture(scope="module")
def frozen_bundle_dir(tmp_path_factory):
    path = str(tmp_path_factory.mktemp("efficacy") / "frozen")
    save_bundle(generate_synthetic(FROZEN_SPEC), path)
    return path


@pytest.fixture(scope="module")
def harness():
    return BenchHarness(workers=4)


def _report(harness, bundle_dir, tag, config=None):
    report, _ = harness.run_episodic(ExperimentSpec(bundle_dir, tag, "episodic", config=config))
    return report


class TestFrozenBundle(object):
    def test_zero_shot_accuracy_is_pinned(self, harness, frozen_bundle_dir):
        zero_shot = _report(harness, frozen_bundle_dir, "zero_shot")

        assert zero_shot.n_evaluated == 500
        assert zero_shot.accuracy == pytest.approx(0.348, abs=0.001)

    def test_mta_beats_zero_shot(self, harness, frozen_bundle_dir):
        zero_shot = _report(harness, frozen_bundle_dir, "zero_shot")
        mta = _report(harness, frozen_bundle_dir, "mta")

        assert mta.n_evaluated == zero_shot.n_evaluated == 500
        assert mta.accuracy >= zero_shot.accuracy + 0.01

    def test_prompt_tuning_beats_zero_shot(self, harness, frozen_bundle_dir):
        zero_shot = _report(harness, frozen_bundle_dir, "zero_shot")
        tpt = _report(harness, frozen_bundle_dir, "tpt", {"optim": {"steps": 3}})
        tps = _report(harness, frozen_bundle_dir, "tps", {"optim": {"steps": 3}})

        assert tpt.accuracy >= zero_shot.accuracy + 0.01
        assert tps.accuracy >= zero_shot.accuracy + 0.01
        assert 0.0 <= tpt.ece <= 1.0
        assert tps.accuracy == tpt.accuracy
        assert tps.ece == tpt.ece
