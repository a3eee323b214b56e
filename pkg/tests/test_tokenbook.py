import math

import numpy as np
import pytest

from src.core import functional as F
from src.core.exceptions import ConfigError
from src.core.gradcheck import grad_check
from src.core.guide_encoder import TokenGrid
from src.core.tensor import Precision, Tensor
from src.core.tokenbook import TokenBook
from src.utils.config import TokenBookConfig

D = Precision.DOUBLE


def _grid(array, ht, wt, trainable=False):
    return TokenGrid(ht, wt, Tensor(array, trainable=trainable, precision=D))


def _book(k=4, dim=3, sim_kind="cosine", temperature=1.0, seed=0):
    return TokenBook(TokenBookConfig(k=k, sim_kind=sim_kind, temperature=temperature), dim, seed, D)


def test_zero_alphas_give_zero_scores_and_half_guide():
    book = _book()
    book.alphas.data[...] = 0.0
    tokens = _grid(np.random.default_rng(0).normal(size=(6, 3)), 2, 3)
    np.testing.assert_array_equal(book.token_scores(tokens).numpy(), np.zeros((2, 3)))
    np.testing.assert_allclose(book.guide_mask(tokens, 5, 7).numpy(), 0.5, atol=1e-15)


def test_parallel_tokens_cosine_score_one():
    book = _book(k=1)
    book.prototypes.data[...] = [[1.0, 2.0, -1.0]]
    book.alphas.data[...] = 1.0
    tokens = _grid(np.array([[2.0, 4.0, -2.0], [0.5, 1.0, -0.5], [3.0, 6.0, -3.0], [1.0, 2.0, -1.0]]), 2, 2)
    np.testing.assert_allclose(book.token_scores(tokens).numpy(), 1.0, atol=1e-6)
    guide = book.guide_mask(tokens, 4, 4).numpy()
    np.testing.assert_allclose(guide, 1.0 / (1.0 + math.exp(-1.0)), atol=1e-6)
    assert abs(guide[0, 0] - 0.73106) < 1e-5


def test_dot_similarity_hand_computed():
    book = _book(k=2, dim=2, sim_kind="dot")
    book.prototypes.data[...] = [[1.0, 0.0], [1.0, 2.0]]
    book.alphas.data[...] = [0.5, -1.0]
    tokens = _grid(np.array([[2.0, 1.0], [-1.0, 3.0]]), 1, 2)
    # token 0: 0.5*2 - 1*(2+2) = -3 ; token 1: 0.5*(-1) - 1*(-1+6) = -5.5
    np.testing.assert_allclose(book.token_scores(tokens).numpy(), [[-3.0, -5.5]], atol=1e-12)


def test_dimension_mismatch():
    book = _book(dim=3)
    with pytest.raises(ConfigError, match="dim"):
        book.token_scores(_grid(np.ones((4, 5)), 2, 2))


def test_guide_mask_matches_composed_oracle():
    rng = np.random.default_rng(4)
    book = _book(k=3, dim=4, temperature=2.0)
    tokens = _grid(rng.normal(size=(6, 4)), 2, 3)
    scores = book.token_scores(tokens).numpy()
    g = 1.0 / (1.0 + np.exp(-scores / 2.0))
    expected = F.bilinear_resize(Tensor(g[None], precision=D), 8, 9).numpy()[0]
    np.testing.assert_allclose(book.guide_mask(tokens, 8, 9).numpy(), expected, atol=1e-12)


def test_guide_values_strictly_inside_unit_interval():
    book = _book(k=2, dim=2, sim_kind="dot")
    book.alphas.data[...] = [500.0, 500.0]
    tokens = _grid(np.array([[10.0, 10.0], [-10.0, -10.0]]), 1, 2)
    values = book.guide_mask(tokens, 4, 4).numpy()
    assert np.all(values > 0) and np.all(values < 1)


def test_cosine_scale_invariance_and_dot_linearity():
    rng = np.random.default_rng(8)
    base = rng.normal(size=(4, 3))
    scaled = base.copy()
    scaled[2] *= 7.5
    cos = _book(seed=1)
    np.testing.assert_allclose(cos.token_scores(_grid(scaled, 2, 2)).numpy(),
                               cos.token_scores(_grid(base, 2, 2)).numpy(), atol=1e-6)

    dot = _book(sim_kind="dot", seed=1)
    before = dot.token_scores(_grid(base, 2, 2)).numpy()
    after = dot.token_scores(_grid(scaled, 2, 2)).numpy()
    np.testing.assert_allclose(after.reshape(-1)[2], 7.5 * before.reshape(-1)[2], rtol=1e-10, atol=1e-12)


def test_prototype_permutation_is_bit_identical():
    rng = np.random.default_rng(9)
    book = _book(k=5, dim=4, seed=2)
    tokens = _grid(rng.normal(size=(4, 4)), 2, 2)
    before = book.guide_mask(tokens, 6, 6).numpy().copy()

    perm = np.array([3, 0, 4, 1, 2])
    book.prototypes.data[...] = book.prototypes.data[perm]
    book.alphas.data[...] = book.alphas.data[perm]
    assert book.guide_mask(tokens, 6, 6).numpy().tobytes() == before.tobytes()


@pytest.mark.parametrize("sim_kind", ["cosine", "dot"])
def test_guide_mask_gradients(sim_kind):
    rng = np.random.default_rng(12)
    book = _book(k=3, dim=4, sim_kind=sim_kind, seed=5)
    tokens = Tensor(rng.uniform(-1, 1, (4, 4)), trainable=True, precision=D)
    report = grad_check(lambda: book.guide_mask(TokenGrid(2, 2, tokens), 5, 5).values.mean(),
                        [book.prototypes, book.alphas, tokens], op_name=f"guide_mask[{sim_kind}]")
    assert report.max_rel_err <= 1e-4


def test_invalid_output_size():
    book = _book()
    with pytest.raises(ConfigError):
        book.guide_mask(_grid(np.ones((4, 3)), 2, 2), 0, 4)
