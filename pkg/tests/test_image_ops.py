# -*- coding: utf-8 -*-
import numpy as np
import pandas as pd
import pytest

import image_ops
from image_ops import (CORRUPTION_LEVELS, CorruptionSpec, EdgeParams, ImageError, annulus_energy, corrupt,
                       edge_response, edge_transform, mean_spectrum)


# =============================================================================
# OPERADORES DE BORDA
# =============================================================================

def test_constant_image_sobel_is_zero():
    assert np.all(edge_response(np.full((9, 9), 0.4), "sobel") == 0.0)


def test_ramp_sobel_x_interior_is_8_over_w():
    largura = 16
    rampa = np.tile(np.arange(largura) / largura, (12, 1))
    gx, _ = image_ops.sobel_components(rampa)
    np.testing.assert_allclose(gx[1:-1, 1:-1], 8.0 / largura, rtol=1e-12)


def test_marr_hildreth_vertical_step():
    degrau = np.zeros((8, 8))
    degrau[:, 4:] = 1.0
    bordas = edge_response(degrau, "marrhildreth")
    colunas = set(np.nonzero(bordas)[1].tolist())
    assert colunas and colunas <= {3, 4, 5}


@pytest.mark.parametrize("op", image_ops.OPERATOR_KINDS)
def test_edge_transform_is_normalized_single_channel(op, rgb):
    mapa = edge_transform(rgb(32), op)
    assert mapa.shape == (32, 32)
    assert mapa.min() >= 0.0 and mapa.max() <= 1.0


def test_edge_transform_uses_fixed_luma(rgb):
    img = rgb(16)
    cinza = img @ np.array([0.299, 0.587, 0.114])
    np.testing.assert_allclose(edge_transform(img, "log"),
                               image_ops.minmax_normalize(edge_response(cinza, "log")))


def test_edge_transform_rejects_small_or_gray_images():
    with pytest.raises(ImageError):
        edge_transform(np.zeros((2, 2, 3)))
    with pytest.raises(ImageError):
        edge_transform(np.zeros((8, 8)))


def test_unknown_operator():
    with pytest.raises(ImageError, match="Operador"):
        edge_response(np.zeros((8, 8)), "prewitt")


@pytest.mark.parametrize("op", ["sobel", "log"])
def test_linear_operators(op, rng):
    img = rng.uniform(size=(20, 20))
    np.testing.assert_allclose(edge_response(2.5 * img, op), 2.5 * edge_response(img, op),
                               rtol=1e-10, atol=1e-12)


@pytest.mark.parametrize("op", ["sobel", "log"])
def test_translation_covariance_on_interior(op, rng):
    img = rng.uniform(size=(40, 40))
    dy, dx = 2, 3
    deslocada = np.roll(img, (dy, dx), axis=(0, 1))
    a = np.roll(edge_response(img, op), (dy, dx), axis=(0, 1))
    b = edge_response(deslocada, op)
    m = 8
    np.testing.assert_allclose(a[m:-m, m:-m], b[m:-m, m:-m], atol=1e-12)


def test_canny_is_binary_and_finds_square():
    img = np.zeros((32, 32))
    img[8:24, 8:24] = 1.0
    mapa = image_ops.canny(img, EdgeParams())
    assert set(np.unique(mapa)) <= {0.0, 1.0}
    assert mapa[8:24, 6:10].any()
    assert not mapa[14:18, 14:18].any()


def test_canny_constant_image_is_empty():
    assert not image_ops.canny(np.full((16, 16), 0.5)).any()


# =============================================================================
# CORRUPÇÕES
# =============================================================================

@pytest.mark.parametrize("kind", list(CORRUPTION_LEVELS))
def test_level_zero_is_identity(kind, rgb):
    img = rgb(24)
    np.testing.assert_array_equal(corrupt(img, CorruptionSpec(kind, 0), seed=3), img)


@pytest.mark.parametrize("kind", list(CORRUPTION_LEVELS))
def test_corrupt_is_deterministic(kind, rgb):
    img = rgb(24)
    a = corrupt(img, CorruptionSpec(kind, 3), seed=11)
    b = corrupt(img, CorruptionSpec(kind, 3), seed=11)
    np.testing.assert_array_equal(a, b)
    assert a.min() >= 0.0 and a.max() <= 1.0


def test_gaussian_noise_depends_on_seed(rgb):
    img = rgb(16)
    spec = CorruptionSpec("gaussian_noise", 1)
    assert not np.array_equal(corrupt(img, spec, 1), corrupt(img, spec, 2))


@pytest.mark.parametrize("level", [1, 2, 3, 4, 5])
def test_pixelation_matches_block_average(level, rgb):
    img = rgb(32)
    bloco = int(CORRUPTION_LEVELS["pixelation"][level - 1])
    esperado = np.empty_like(img)
    for i in range(0, 32, bloco):
        for j in range(0, 32, bloco):
            esperado[i:i + bloco, j:j + bloco] = img[i:i + bloco, j:j + bloco].mean(axis=(0, 1))
    np.testing.assert_allclose(corrupt(img, CorruptionSpec("pixelation", level), 0), esperado, atol=1e-12)


def test_saturation_factor_one_is_identity(rgb):
    img = rgb(16)
    np.testing.assert_array_equal(image_ops.adjust_saturation(img, 1.0), img)


def test_saturation_zero_is_gray(rgb):
    img = rgb(16)
    saida = corrupt(img, CorruptionSpec("saturation", 3), 0)
    np.testing.assert_allclose(saida[..., 0], saida[..., 1])


def test_compression_proxy_error_grows_with_level(rgb):
    img = rgb(32)
    erros = [np.abs(corrupt(img, CorruptionSpec("compression_proxy", n), 0) - img).mean() for n in (1, 5)]
    assert erros[1] > erros[0]


@pytest.mark.parametrize("spec", [CorruptionSpec("fog", 1), CorruptionSpec("blur", 6), CorruptionSpec("blur", -1)])
def test_invalid_corruption_spec(spec, rgb):
    with pytest.raises(ImageError):
        corrupt(rgb(8), spec, 0)


def test_corruption_table_has_five_levels():
    assert all(len(v) == 5 for v in CORRUPTION_LEVELS.values())
    assert image_ops.CORRUPTION_TABLE_VERSION


# =============================================================================
# ESPECTRO
# =============================================================================

def test_constant_image_spectrum_only_dc():
    espectro = mean_spectrum([np.full((16, 16), 0.5)])
    centro = (8, 8)
    assert espectro[centro] > 0
    fora = espectro.copy()
    fora[centro] = 0.0
    np.testing.assert_allclose(fora, 0.0, atol=1e-9)


def test_horizontal_cosine_has_symmetric_peaks():
    tamanho, f = 32, 5
    x = np.arange(tamanho)
    img = 0.5 + 0.4 * np.cos(2 * np.pi * f * x / tamanho)[None, :] * np.ones((tamanho, 1))
    espectro = mean_spectrum([img])
    espectro[16, 16] = 0.0
    picos = set(zip(*np.nonzero(espectro > espectro.max() - 1e-9)))
    assert picos == {(16, 16 - f), (16, 16 + f)}


def test_mean_spectrum_permutation_invariant(rgb):
    imgs = [rgb(16) for _ in range(4)]
    np.testing.assert_allclose(mean_spectrum(imgs), mean_spectrum(imgs[::-1]), atol=1e-12)


def test_mean_spectrum_errors(rgb):
    with pytest.raises(ImageError):
        mean_spectrum([])
    with pytest.raises(ImageError):
        mean_spectrum([rgb(16), rgb(8)])


def test_annulus_energy_of_ring():
    raio = image_ops.radius_map((32, 32))
    espectro = ((raio >= 0.5) & (raio < 0.6)).astype(float)
    assert annulus_energy(espectro, 0.5, 0.6) == 1.0
    assert annulus_energy(espectro, 0.0, 0.3) == 0.0


# =============================================================================
# ENTRADA / SAÍDA
# =============================================================================

def test_ppm_and_pgm_roundtrip(tmp_path, rgb):
    img = rgb(8)
    lido = image_ops.read_image(image_ops.write_image(tmp_path / "a.ppm", img))
    np.testing.assert_array_equal(lido, image_ops.to_uint8(img) / 255.0)
    assert (tmp_path / "a.ppm").read_bytes()[:2] == b"P6"

    cinza = img[..., 0]
    lido = image_ops.read_image(image_ops.write_image(tmp_path / "b.pgm", cinza))
    assert lido.shape == (8, 8)
    assert (tmp_path / "b.pgm").read_bytes()[:2] == b"P5"


def test_write_map_writes_pgm_and_csv(tmp_path, rng):
    mapa = rng.normal(size=(6, 5))
    pgm, csv = image_ops.write_map(tmp_path / "mapa", mapa)
    assert pgm.exists()
    np.testing.assert_allclose(pd.read_csv(csv, header=None).to_numpy(), mapa, rtol=1e-9)
