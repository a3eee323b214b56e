import json
from dataclasses import replace

from src.core.pipeline import Mode
from src.core.synth_data import generate_dataset
from src.tools.ablation import run_ablation


def test_ablation_summary(tmp_path, make_config):
    config = make_config(train={"epochs": 1, "seeds": [0]})
    train_set = generate_dataset(config.synth)
    val_set = generate_dataset(replace(config.synth, seed=1, n_samples=3))
    shifted = generate_dataset(replace(config.synth, seed=1, n_samples=3, texture="shifted"))

    summary = run_ablation(config, train_set, val_set, [0], include_lora=True, shifted_set=shifted)
    assert list(summary.results) == [Mode.BASELINE.value, Mode.GUIDED.value, Mode.LORA.value]

    data = json.loads(summary.write(tmp_path / "ablation.json").read_text(encoding="utf-8"))
    assert data["seeds"] == [0]
    assert set(data["deltas_vs_baseline"]) == {"val", "shifted"}
    deltas = data["deltas_vs_baseline"]["val"]
    assert set(deltas) == {Mode.GUIDED.value, Mode.LORA.value}

    base = summary.mode_mean(Mode.BASELINE.value)
    guided = summary.mode_mean(Mode.GUIDED.value)
    assert deltas[Mode.GUIDED.value]["dsc_delta"] == guided["dsc_mean"] - base["dsc_mean"]
    assert "guide_auc_mean" not in data["modes"][Mode.BASELINE.value]["per_seed"][0]["val"]
    assert "Ablation over seeds [0]" in summary.summary()
