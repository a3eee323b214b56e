import numpy as np
import pytest

from src.core.checkpoint import (
    Checkpoint, CheckpointCodec, load_checkpoint, load_encoder_weights, save_checkpoint,
)
from src.core.exceptions import ConfigError, FormatError, InputError
from src.core.pipeline import GuidedSegmenter, Mode
from src.core.synth_data import generate_sample


def _image(config, seed=0):
    return generate_sample(seed, config.synth).image


def _logits(model, image):
    logits, _ = model.forward(model.as_tensor(image))
    return logits.numpy()


@pytest.mark.parametrize("mode", list(Mode))
def test_save_load_forward_is_bit_identical(tmp_path, tiny_config, mode):
    model = GuidedSegmenter(tiny_config, mode, seed=3)
    for p in model.segnet.gates.parameters():
        p.data[...] = 0.25
    ckpt = Checkpoint.from_model(model, val_dsc=0.625, epoch=7)
    path = save_checkpoint(ckpt, tmp_path / "model.gck")

    loaded = load_checkpoint(path)
    assert loaded.mode is mode
    assert (loaded.seed, loaded.val_dsc, loaded.epoch) == (3, 0.625, 7)
    assert loaded.frozen.get("encoder", False) is mode.guided

    image = _image(tiny_config)
    rebuilt = loaded.build_model()
    assert _logits(rebuilt, image).tobytes() == _logits(model, image).tobytes()


def test_encode_is_deterministic(tiny_config):
    ckpt = Checkpoint.from_model(GuidedSegmenter(tiny_config, Mode.GUIDED, 0), 0.5, 1)
    assert CheckpointCodec().encode(ckpt) == CheckpointCodec().encode(ckpt)


def test_truncated_checkpoint(tiny_config):
    data = CheckpointCodec().encode(Checkpoint.from_model(GuidedSegmenter(tiny_config, Mode.BASELINE, 0), 0.0, 0))
    for cut in (3, 10, len(data) // 2, len(data) - 1):
        with pytest.raises(FormatError):
            CheckpointCodec().decode(data[:cut])


def test_bad_magic(tiny_config):
    data = CheckpointCodec().encode(Checkpoint.from_model(GuidedSegmenter(tiny_config, Mode.BASELINE, 0), 0.0, 0))
    with pytest.raises(FormatError) as info:
        CheckpointCodec().decode(b"GDS1" + data[4:])
    assert info.value.offset == 0


def test_newer_major_version_is_rejected(tiny_config):
    ckpt = Checkpoint.from_model(GuidedSegmenter(tiny_config, Mode.BASELINE, 0), 0.0, 0)
    ckpt.version = "99.0.0"
    with pytest.raises(FormatError, match="cannot be read"):
        CheckpointCodec().decode(CheckpointCodec().encode(ckpt))


def test_missing_group_fails_verification(tiny_config):
    ckpt = Checkpoint.from_model(GuidedSegmenter(tiny_config, Mode.GUIDED, 0), 0.0, 0)
    del ckpt.groups["tokenbook"]
    with pytest.raises(FormatError, match="groups"):
        CheckpointCodec().decode(CheckpointCodec().encode(ckpt))


def test_wrong_shape_fails_verification(tiny_config):
    ckpt = Checkpoint.from_model(GuidedSegmenter(tiny_config, Mode.GUIDED, 0), 0.0, 0)
    ckpt.groups["tokenbook"]["alphas"] = np.zeros(99, dtype=np.float32)
    with pytest.raises(FormatError, match="shape mismatch"):
        CheckpointCodec().decode(CheckpointCodec().encode(ckpt))


def test_strip_lora_matches_guided_frozen_forward(tiny_config):
    lora_model = GuidedSegmenter(tiny_config, Mode.LORA, seed=1)
    stripped = Checkpoint.from_model(lora_model, 0.5, 2).strip_lora()
    assert stripped.mode is Mode.GUIDED
    assert "lora" not in stripped.groups

    frozen_model = stripped.build_model()
    image = _image(tiny_config, seed=4)
    assert _logits(frozen_model, image).tobytes() == _logits(lora_model, image).tobytes()
    assert _logits(lora_model.strip_lora(), image).tobytes() == _logits(lora_model, image).tobytes()


def test_strip_lora_needs_lora_mode(tiny_config):
    ckpt = Checkpoint.from_model(GuidedSegmenter(tiny_config, Mode.GUIDED, 0), 0.0, 0)
    with pytest.raises(ConfigError):
        ckpt.strip_lora()


def test_encoder_weights_from_checkpoint(tmp_path, tiny_config):
    model = GuidedSegmenter(tiny_config, Mode.GUIDED, 0)
    path = save_checkpoint(Checkpoint.from_model(model, 0.0, 0), tmp_path / "guided.gck")
    weights = load_encoder_weights(path)
    assert set(weights) == set(model.encoder.named_parameters())

    baseline = save_checkpoint(Checkpoint.from_model(GuidedSegmenter(tiny_config, Mode.BASELINE, 0), 0.0, 0),
                               tmp_path / "baseline.gck")
    with pytest.raises(FormatError, match="encoder"):
        load_encoder_weights(baseline)


def test_missing_checkpoint_file(tmp_path):
    with pytest.raises(InputError):
        load_checkpoint(tmp_path / "nothing.gck")
