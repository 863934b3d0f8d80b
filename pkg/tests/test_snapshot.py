import json
import os

import mock
import numpy as np
import pytest

from ttabench.bundle import SynthSpec, generate_synthetic
from ttabench.errors import BundleFormatError, ValidationError
from ttabench.online import (
    BoostAdapterConfig,
    DMNConfig,
    DPEConfig,
    DynaPromptConfig,
    ECALPConfig,
    OnZetaConfig,
    TDAConfig,
    init_state,
    run_stream,
)
from ttabench.snapshot import STATE_MANIFEST, load_state, save_state

CONFIGS = {
    "zero_shot": None,
    "tda": TDAConfig(),
    "dmn": DMNConfig(memory_per_class=3),
    "dmn_w": DMNConfig(use_aug=False),
    "onzeta": OnZetaConfig(),
    "boostadapter": BoostAdapterConfig(),
    "dpe": DPEConfig(update_threshold=0.0),
    "ecalp": ECALPConfig(window=6),
    "dynaprompt": DynaPromptConfig(capacity=3),
}


@pytest.fixture(scope="module")
def stream():
    return generate_synthetic(SynthSpec(seed=21, C=4, D=8, N=30, V=4, dataset_name="resume"))


class TestResume(object):
    @pytest.mark.parametrize("tag", sorted(CONFIGS))
    def test_resumed_stream_matches_an_uninterrupted_one(self, tag, tmp_path, stream, rule):
        bank = stream.text_bank()
        cfg = CONFIGS[tag]
        samples = stream.stream()
        uninterrupted = [p for _, p in run_stream(tag, samples, bank, rule, cfg)]

        state = init_state(tag, bank, cfg)
        head = [p for _, p in run_stream(tag, samples[:17], bank, rule, cfg, state=state)]
        save_state(state, str(tmp_path / "state"))
        resumed = load_state(str(tmp_path / "state"), bank, cfg)
        tail = [p for _, p in run_stream(tag, samples[17:], bank, rule, cfg, state=resumed)]

        assert resumed.step_counter == 30
        assert head + tail == uninterrupted

    def test_manifest_describes_every_array(self, tmp_path, stream, rule):
        bank = stream.text_bank()
        state = init_state("tda", bank, TDAConfig())
        list(run_stream("tda", stream.stream()[:5], bank, rule, TDAConfig(), state=state))

        save_state(state, str(tmp_path))

        with open(os.path.join(str(tmp_path), STATE_MANIFEST)) as f:
            manifest = json.load(f)
        assert manifest["method_tag"] == "tda"
        assert manifest["step_counter"] == 5
        assert manifest["arrays"]["pos_labels"]["dtype"] == "<i8"
        assert manifest["arrays"]["pos_features"]["blob"] == "pos_features.f8"

    def test_logs_saves(self, tmp_path, stream):
        state = init_state("onzeta", stream.text_bank(), OnZetaConfig())
        with mock.patch("ttabench.snapshot.logger") as logger:
            save_state(state, str(tmp_path))

        assert logger.log.call_args[1]["extra"]["method_tag"] == "onzeta"


class TestLoadErrors(object):
    def _saved(self, tmp_path, stream):
        state = init_state("dpe", stream.text_bank(), DPEConfig())
        save_state(state, str(tmp_path))
        return str(tmp_path)

    def test_bank_shape_must_match(self, tmp_path, stream):
        path = self._saved(tmp_path, stream)
        with pytest.raises(ValidationError):
            load_state(path, np.eye(3), DPEConfig())

    def test_truncated_blob(self, tmp_path, stream):
        path = self._saved(tmp_path, stream)
        with open(os.path.join(path, "counts.i8"), "rb+") as f:
            f.truncate(8)

        with pytest.raises(BundleFormatError) as e:
            load_state(path, stream.text_bank(), DPEConfig())
        assert e.value.context["blob"] == "counts.i8"

    def test_missing_manifest(self, tmp_path, stream):
        with pytest.raises(BundleFormatError):
            load_state(str(tmp_path), stream.text_bank(), DPEConfig())
