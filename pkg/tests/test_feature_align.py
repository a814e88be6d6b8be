# -*- coding: utf-8 -*-
import numpy as np
import pytest

from feature_align import FeatureAlign, StemOutput, images_to_tensor, run_stems, tokenize
from tensor import ShapeError, Tensor, gelu, gradcheck, mul, sum_


def _alinhar(cfg, seed=0):
    return FeatureAlign(cfg, np.random.default_rng(seed))


@pytest.mark.parametrize("size,fino,grosso", [(224, 7, 56), (64, 2, 16)])
def test_stem_grids(toy_cfg, rng, size, fino, grosso):
    cfg = toy_cfg(image_size=size)
    align = _alinhar(cfg)
    img = rng.uniform(size=(1, size, size, 3))
    bordas = rng.uniform(size=(1, size, size))
    stem = run_stems(img, bordas, cfg, align)
    assert stem.fine.shape == (1, cfg.fine_channels, fino, fino)
    assert stem.coarse.shape == (1, cfg.coarse_channels, grosso, grosso)
    assert stem.edge_local.shape == (1, cfg.coarse_channels, grosso, grosso)


@pytest.mark.parametrize("size,n", [(64, 4), (96, 9), (128, 16), (224, 49)])
def test_equal_token_counts(toy_cfg, rng, size, n):
    cfg = toy_cfg(image_size=size)
    align = _alinhar(cfg)
    stem = run_stems(rng.uniform(size=(1, size, size, 3)), rng.uniform(size=(1, size, size)), cfg, align)
    fino, grosso, borda = tokenize(stem, cfg, align)
    assert fino.n == grosso.n == borda.n == n == cfg.n_tokens
    assert fino.tokens.shape == (1, n + 1, cfg.dim)
    assert grosso.tokens.shape == borda.tokens.shape == (1, n + 1, 2 * cfg.dim)


def test_zero_input_propagates_biases(toy_cfg):
    cfg = toy_cfg(branches=("C",))
    align = _alinhar(cfg)
    stem = align.coarse_stem
    for conv in stem.stages:
        conv.bias.data = np.linspace(-1.0, 1.0, conv.bias.shape[0])
    zeros = images_to_tensor(np.zeros((1, 32, 32, 3)))
    primeiro = stem.stages[0](zeros)
    np.testing.assert_allclose(primeiro.data, np.broadcast_to(stem.stages[0].bias.data[None, :, None, None],
                                                              primeiro.shape))
    stem.stages[1].weight.data[:] = 0.0
    saida = stem(zeros).data
    esperado = gelu(Tensor(stem.stages[1].bias.data)).data
    np.testing.assert_allclose(saida, np.broadcast_to(esperado[None, :, None, None], saida.shape))


def test_class_row_is_input_independent(toy_cfg, rng):
    cfg = toy_cfg()
    align = _alinhar(cfg)
    linhas = []
    for _ in range(2):
        stem = run_stems(rng.uniform(size=(2, 32, 32, 3)), rng.uniform(size=(2, 32, 32)), cfg, align)
        fino, grosso, borda = tokenize(stem, cfg, align)
        linhas.append((fino.tokens.data[:, 0], grosso.tokens.data[:, 0], borda.tokens.data[:, 0]))
    for a, b in zip(*linhas):
        np.testing.assert_array_equal(a, b)
    np.testing.assert_allclose(linhas[0][0][0], (align.fine_cls.data + align.fine_pos.data[:, :1])[0, 0])


def test_patch_permutation_permutes_tokens(toy_cfg, rng):
    cfg = toy_cfg(image_size=64, branches=("C",))
    align = _alinhar(cfg)
    align.coarse_pos.data[:] = 0.0
    mapa = rng.normal(size=(1, cfg.coarse_channels, 16, 16))
    trocado = mapa.copy()
    # troca os patches (0, 0) e (1, 1)
    trocado[..., 0:8, 0:8], trocado[..., 8:16, 8:16] = mapa[..., 8:16, 8:16], mapa[..., 0:8, 0:8]
    a = tokenize(StemOutput(None, Tensor(mapa), None), cfg, align)[1].tokens.data
    b = tokenize(StemOutput(None, Tensor(trocado), None), cfg, align)[1].tokens.data
    np.testing.assert_array_equal(b[0, [0, 1, 2, 3, 4]], a[0, [0, 4, 2, 3, 1]])


def test_inactive_branches_are_none(toy_cfg, rng):
    cfg = toy_cfg(branches=("F",))
    align = _alinhar(cfg)
    assert not hasattr(align, "edge_stem")
    stem = run_stems(rng.uniform(size=(1, 32, 32, 3)), None, cfg, align)
    fino, grosso, borda = tokenize(stem, cfg, align)
    assert fino is not None and grosso is None and borda is None


def test_gradient_reaches_stem_weights(toy_cfg, rng):
    cfg = toy_cfg(branches=("E",), coarse_channels=2)
    align = _alinhar(cfg)
    img = rng.uniform(size=(1, 32, 32, 3))
    bordas = rng.uniform(size=(1, 32, 32))
    r = Tensor(np.random.default_rng(5).normal(size=(1, 2, 2 * cfg.dim)))

    def perda(peso, bias):
        stem = run_stems(img, bordas, cfg, align)
        return sum_(mul(tokenize(stem, cfg, align)[2].tokens, r))

    primeiro = align.edge_stem.stages[0]
    assert gradcheck(perda, [primeiro.weight, primeiro.bias]) < 1e-4


def test_input_errors(toy_cfg, rng):
    cfg = toy_cfg()
    align = _alinhar(cfg)
    with pytest.raises(ShapeError, match="múltiplos de 32"):
        run_stems(rng.uniform(size=(1, 48, 48, 3)), rng.uniform(size=(1, 48, 48)), cfg, align)
    with pytest.raises(ShapeError, match="não quadrada"):
        run_stems(rng.uniform(size=(1, 32, 64, 3)), rng.uniform(size=(1, 32, 64)), cfg, align)
    with pytest.raises(ShapeError, match="image_size"):
        run_stems(rng.uniform(size=(1, 64, 64, 3)), rng.uniform(size=(1, 64, 64)), cfg, align)
    with pytest.raises(ShapeError, match="borda"):
        run_stems(rng.uniform(size=(1, 32, 32, 3)), None, cfg, align)


def test_grid_not_divisible_by_patch(toy_cfg, rng):
    cfg = toy_cfg(branches=("C",))
    align = _alinhar(cfg)
    with pytest.raises(ShapeError, match="patch"):
        tokenize(StemOutput(None, Tensor(rng.normal(size=(1, cfg.coarse_channels, 12, 12))), None), cfg, align)
