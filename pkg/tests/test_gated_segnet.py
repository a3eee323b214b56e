import numpy as np
import pytest

from src.core.exceptions import ConfigError
from src.core.gated_segnet import GatedUNet, gate, predict, probabilities
from src.core.gradcheck import grad_check
from src.core.tensor import Precision, Tensor
from src.core.tokenbook import GuideMask
from src.utils.config import UNetConfig

D = Precision.DOUBLE


def _net(precision=Precision.SINGLE, **kw):
    values = dict(base_channels=4, depth=2)
    values.update(kw)
    return GatedUNet(UNetConfig(**values), seed=0, precision=precision)


def _guide(rng, h, w, precision=Precision.SINGLE):
    return GuideMask(h, w, Tensor(rng.uniform(0.01, 0.99, (h, w)), precision=precision))


def test_logits_shape():
    net = _net()
    logits = net.forward(Tensor(np.zeros((1, 16, 16))))
    assert logits.shape == (1, 16, 16)


@pytest.mark.parametrize("size", [64, 256])
def test_logits_match_input_size(size):
    net = _net(depth=3)
    image = Tensor(np.random.default_rng(size).uniform(0, 1, (1, size, size)))
    assert net.forward(image).shape == (1, size, size)


def test_input_not_divisible_by_depth():
    net = _net(depth=3)
    with pytest.raises(ConfigError, match="not divisible"):
        net.forward(Tensor(np.zeros((1, 12, 12))))


def test_zero_beta_gate_matches_ungated_backbone():
    net = _net()
    rng = np.random.default_rng(0)
    for _ in range(20):
        image = Tensor(rng.uniform(0, 1, (1, 16, 16)))
        plain = net.forward(image).numpy()
        gated = net.forward(image, _guide(rng, 16, 16)).numpy()
        assert np.max(np.abs(plain - gated)) <= 1e-6


def test_nonzero_beta_changes_output():
    net = _net()
    for p in net.gates.parameters():
        p.data[...] = 1.0
    rng = np.random.default_rng(1)
    image = Tensor(rng.uniform(0, 1, (1, 16, 16)))
    assert not np.array_equal(net.forward(image).numpy(), net.forward(image, _guide(rng, 16, 16)).numpy())


def test_gate_formula():
    features = Tensor(np.full((2, 2, 2), 3.0), precision=D)
    guide = Tensor(np.full((1, 2, 2), 0.25), precision=D)
    beta = Tensor([2.0], precision=D)
    np.testing.assert_allclose(gate(features, guide, beta).numpy(), 3.0 * (1 + 2.0 * 0.25))


def test_gate_stages_subset():
    net = _net(depth=3, gate_stages=[0, 2])
    assert sorted(net.gates.named_parameters()) == ["stage0.beta", "stage2.beta"]
    assert net.gates.beta(1) is None


def test_probabilities_and_prediction_threshold():
    logits = np.array([[[-50.0, 0.0], [1.0, 50.0]]])
    probs = probabilities(logits)
    np.testing.assert_allclose(probs[0, 0, 1], 0.5)
    np.testing.assert_array_equal(predict(logits), [[0, 1], [1, 1]])
    np.testing.assert_array_equal(predict(logits, threshold=0.9), [[0, 0], [0, 1]])


def test_same_seed_same_weights():
    a, b = _net(), _net()
    for name, p in a.named_parameters().items():
        assert p.data.tobytes() == b.named_parameters()[name].data.tobytes()


def test_segnet_gradients_with_active_gates():
    net = _net(D, base_channels=2, depth=1)
    for p in net.gates.parameters():
        p.data[...] = 0.7
    rng = np.random.default_rng(4)
    image = Tensor(rng.uniform(0, 1, (1, 8, 8)), precision=D)
    guide = GuideMask(8, 8, Tensor(rng.uniform(0.1, 0.9, (8, 8)), trainable=True, precision=D))
    weights = Tensor(rng.uniform(0.5, 1.5, (1, 8, 8)), precision=D)
    params = net.parameters() + net.gates.parameters() + [guide.values]
    report = grad_check(lambda: (net.forward(image, guide) * weights).sum(), params,
                        op_name="gated_unet", max_entries=6)
    assert report.max_rel_err <= 1e-4
