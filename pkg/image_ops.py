#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Operadores de Imagem
====================
- Imagens de borda / frequência: Sobel, Canny, LoG, Marr-Hildreth, DCT
- Suíte de corrupções com níveis 0..5 (0 = identidade)
- Espectro médio de Fourier (log(1 + |FFT2|), DC centralizado)
- Leitura/escrita PPM (P6) e PGM (P5)

Imagens são arrays float64 em [0, 1]: (H, W, 3) para RGB e (H, W) para cinza.
Todas as convoluções usam preenchimento por reflexão.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from PIL import Image as PILImage
from scipy import fft as sp_fft
from scipy import ndimage

logger = logging.getLogger(__name__)

LUMA = np.array([0.299, 0.587, 0.114])
MIN_SIDE = 3

SOBEL_X = np.array([[-1.0, 0.0, 1.0],
                    [-2.0, 0.0, 2.0],
                    [-1.0, 0.0, 1.0]])
SOBEL_Y = SOBEL_X.T

OPERATOR_KINDS = ("sobel", "canny", "log", "marrhildreth", "dct")


class ImageError(ValueError):
    """Imagem inválida para a operação pedida."""


# =============================================================================
# UTILITÁRIOS
# =============================================================================

def validate_image(img: np.ndarray, channels: Union[int, None] = None) -> np.ndarray:
    """Verifica formato (H, W) ou (H, W, 3), lados >= 3 e valores em [0, 1]."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        canais = 1
    elif img.ndim == 3 and img.shape[2] == 3:
        canais = 3
    else:
        raise ImageError(f"Formato de imagem inválido: {img.shape}")
    if channels is not None and canais != channels:
        raise ImageError(f"Esperado {channels} canal(is), recebido {canais}")
    if min(img.shape[:2]) < MIN_SIDE:
        raise ImageError(f"Imagem menor que o suporte do kernel ({MIN_SIDE}x{MIN_SIDE}): {img.shape[:2]}")
    if img.size and (img.min() < 0.0 or img.max() > 1.0):
        raise ImageError("Valores de pixel fora de [0, 1]")
    return img


def to_gray(img: np.ndarray) -> np.ndarray:
    """Luma fixa 0.299/0.587/0.114."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        return img
    return img @ LUMA


def minmax_normalize(mapa: np.ndarray) -> np.ndarray:
    """Normaliza para [0, 1]; mapa constante vira zeros."""
    minimo, maximo = float(mapa.min()), float(mapa.max())
    if maximo - minimo <= 0.0:
        return np.zeros_like(mapa, dtype=np.float64)
    return (mapa - minimo) / (maximo - minimo)


# =============================================================================
# OPERADORES DE BORDA
# =============================================================================

@dataclass(frozen=True)
class EdgeParams:
    canny_low: float = 0.1
    canny_high: float = 0.2
    canny_sigma: float = 1.4
    log_sigma: float = 1.0
    mh_threshold: float = 0.1

    @classmethod
    def from_config(cls, cfg) -> "EdgeParams":
        return cls(cfg.canny_low, cfg.canny_high, cfg.canny_sigma, cfg.log_sigma, cfg.mh_threshold)


def sobel_components(gray: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Respostas brutas (gx, gy) do par de Sobel 3x3."""
    gx = ndimage.correlate(gray, SOBEL_X, mode="reflect")
    gy = ndimage.correlate(gray, SOBEL_Y, mode="reflect")
    return gx, gy


def _nao_maximos(magnitude: np.ndarray, gx: np.ndarray, gy: np.ndarray) -> np.ndarray:
    """Supressão de não-máximos com direção quantizada em 4 setores."""
    altura, largura = magnitude.shape
    angulo = np.rad2deg(np.arctan2(gy, gx)) % 180.0
    p = np.pad(magnitude, 1)

    def vizinho(di, dj):
        return p[1 + di:1 + di + altura, 1 + dj:1 + dj + largura]

    setores = [
        ((angulo < 22.5) | (angulo >= 157.5), (0, 1), (0, -1)),
        ((angulo >= 22.5) & (angulo < 67.5), (1, -1), (-1, 1)),
        ((angulo >= 67.5) & (angulo < 112.5), (1, 0), (-1, 0)),
        ((angulo >= 112.5) & (angulo < 157.5), (-1, -1), (1, 1)),
    ]
    suprimido = np.zeros_like(magnitude)
    for mascara, a, b in setores:
        manter = mascara & (magnitude >= vizinho(*a)) & (magnitude >= vizinho(*b))
        suprimido[manter] = magnitude[manter]
    return suprimido


def canny(gray: np.ndarray, params: EdgeParams = EdgeParams()) -> np.ndarray:
    """Mapa binário de Canny: suavização, gradiente, NMS e histerese dupla."""
    suave = ndimage.gaussian_filter(gray, sigma=params.canny_sigma, mode="reflect")
    gx, gy = sobel_components(suave)
    suprimido = _nao_maximos(np.hypot(gx, gy), gx, gy)
    maximo = suprimido.max()
    if maximo <= 0.0:
        return np.zeros_like(gray)
    fortes = suprimido >= params.canny_high * maximo
    fracas = suprimido >= params.canny_low * maximo
    rotulos, _ = ndimage.label(fracas, structure=np.ones((3, 3)))
    conectadas = np.isin(rotulos, np.unique(rotulos[fortes]))
    return (conectadas & fracas).astype(np.float64)


def marr_hildreth(gray: np.ndarray, params: EdgeParams = EdgeParams()) -> np.ndarray:
    """Cruzamentos por zero do LoG com limiar de inclinação relativo."""
    resposta = ndimage.gaussian_laplace(gray, sigma=params.log_sigma, mode="reflect")
    limiar = params.mh_threshold * np.abs(resposta).max()
    bordas = np.zeros(gray.shape, dtype=bool)
    if limiar <= 0.0:
        return bordas.astype(np.float64)
    a, b = resposta[:, :-1], resposta[:, 1:]
    bordas[:, :-1] |= (np.sign(a) != np.sign(b)) & (np.abs(a - b) > limiar)
    a, b = resposta[:-1, :], resposta[1:, :]
    bordas[:-1, :] |= (np.sign(a) != np.sign(b)) & (np.abs(a - b) > limiar)
    return bordas.astype(np.float64)


def edge_response(gray: np.ndarray, op: str, params: EdgeParams = EdgeParams()) -> np.ndarray:
    """
    Resposta bruta (antes da normalização) do operador sobre a imagem cinza.

    Args:
        gray: Imagem (H, W)
        op: Um de sobel, canny, log, marrhildreth, dct
        params: Constantes dos operadores

    Returns:
        Mapa (H, W) float64
    """
    if min(gray.shape) < MIN_SIDE:
        raise ImageError(f"Imagem menor que o suporte do kernel ({MIN_SIDE}x{MIN_SIDE}): {gray.shape}")
    op = op.lower()
    if op == "sobel":
        gx, gy = sobel_components(gray)
        return np.hypot(gx, gy)
    if op == "canny":
        return canny(gray, params)
    if op == "log":
        return ndimage.gaussian_laplace(gray, sigma=params.log_sigma, mode="reflect")
    if op == "marrhildreth":
        return marr_hildreth(gray, params)
    if op == "dct":
        return np.log1p(np.abs(sp_fft.dctn(gray, type=2, norm="ortho")))
    raise ImageError(f"Operador desconhecido: {op} (use {', '.join(OPERATOR_KINDS)})")


def edge_transform(img: np.ndarray, op: str = "sobel", params: EdgeParams = EdgeParams()) -> np.ndarray:
    """Imagem RGB -> mapa de borda de 1 canal normalizado em [0, 1]."""
    img = validate_image(img, channels=3)
    return minmax_normalize(edge_response(to_gray(img), op, params))


# =============================================================================
# CORRUPÇÕES
# =============================================================================

# Tabela nível -> parâmetro (níveis 1..5; nível 0 é identidade)
CORRUPTION_TABLE_VERSION = "1"
CORRUPTION_LEVELS: Dict[str, Tuple[float, ...]] = {
    "saturation": (0.4, 0.2, 0.0, 2.0, 3.0),            # fator de saturação
    "contrast": (0.85, 0.725, 0.6, 0.475, 0.35),        # fator de contraste
    "blockwise": (0.02, 0.04, 0.06, 0.08, 0.10),        # fração da área em blocos 8x8
    "gaussian_noise": (0.02, 0.04, 0.08, 0.12, 0.18),   # desvio padrão
    "blur": (0.5, 1.0, 1.5, 2.0, 3.0),                  # sigma gaussiano
    "pixelation": (2, 3, 4, 6, 8),                      # lado do bloco
    "compression_proxy": (90, 70, 50, 30, 10),          # qualidade estilo JPEG
}
BLOCK_SIDE = 8

# Tabela de quantização de luminância JPEG (qualidade 50)
JPEG_LUMA_Q50 = np.array([
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99],
], dtype=np.float64)


@dataclass(frozen=True)
class CorruptionSpec:
    kind: str
    intensity_level: int

    def validate(self) -> "CorruptionSpec":
        if self.kind not in CORRUPTION_LEVELS:
            raise ImageError(f"Corrupção desconhecida: {self.kind}")
        if not isinstance(self.intensity_level, (int, np.integer)) or not 0 <= self.intensity_level <= 5:
            raise ImageError(f"Nível de intensidade inválido: {self.intensity_level} (use 0..5)")
        return self

    @property
    def parameter(self) -> float:
        return CORRUPTION_LEVELS[self.kind][self.intensity_level - 1]


def adjust_saturation(img: np.ndarray, fator: float) -> np.ndarray:
    if img.ndim == 2:
        return img.copy()
    cinza = to_gray(img)[..., None]
    return np.clip(img * fator + cinza * (1.0 - fator), 0.0, 1.0)


def adjust_contrast(img: np.ndarray, fator: float) -> np.ndarray:
    return np.clip(img * fator + img.mean() * (1.0 - fator), 0.0, 1.0)


def blockwise(img: np.ndarray, fracao: float, rng: np.random.Generator) -> np.ndarray:
    """Blocos 8x8 em posições aleatórias preenchidos com cor aleatória."""
    out = img.copy()
    altura, largura = img.shape[:2]
    lado = min(BLOCK_SIDE, altura, largura)
    quantidade = max(1, int(round(fracao * altura * largura / (lado * lado))))
    canais = img.shape[2] if img.ndim == 3 else None
    for _ in range(quantidade):
        i = int(rng.integers(0, altura - lado + 1))
        j = int(rng.integers(0, largura - lado + 1))
        cor = rng.uniform(0.0, 1.0, size=canais) if canais else rng.uniform(0.0, 1.0)
        out[i:i + lado, j:j + lado] = cor
    return out


def gaussian_noise(img: np.ndarray, std: float, rng: np.random.Generator) -> np.ndarray:
    return np.clip(img + rng.normal(0.0, std, size=img.shape), 0.0, 1.0)


def blur(img: np.ndarray, sigma: float) -> np.ndarray:
    sigmas = (sigma, sigma, 0.0) if img.ndim == 3 else (sigma, sigma)
    return np.clip(ndimage.gaussian_filter(img, sigma=sigmas, mode="reflect"), 0.0, 1.0)


def pixelate(img: np.ndarray, bloco: int) -> np.ndarray:
    """Média por blocos (blocos de borda parciais) e reamostragem por repetição."""
    altura, largura = img.shape[:2]
    linhas = np.arange(0, altura, bloco)
    colunas = np.arange(0, largura, bloco)
    somas = np.add.reduceat(np.add.reduceat(img, linhas, axis=0), colunas, axis=1)
    alturas = np.diff(np.append(linhas, altura))
    larguras = np.diff(np.append(colunas, largura))
    areas = np.outer(alturas, larguras)
    medias = somas / (areas[..., None] if img.ndim == 3 else areas)
    return np.repeat(np.repeat(medias, alturas, axis=0), larguras, axis=1)


def _tabela_quantizacao(qualidade: float) -> np.ndarray:
    escala = 5000.0 / qualidade if qualidade < 50 else 200.0 - 2.0 * qualidade
    return np.maximum(np.floor((JPEG_LUMA_Q50 * escala + 50.0) / 100.0), 1.0)


def compression_proxy(img: np.ndarray, qualidade: float) -> np.ndarray:
    """Quantização DCT 8x8 estilo JPEG (substitui o codec de vídeo para imagens estáticas)."""
    tabela = _tabela_quantizacao(qualidade)
    altura, largura = img.shape[:2]
    ph, pw = (-altura) % 8, (-largura) % 8
    planos = img[..., None] if img.ndim == 2 else img
    saida = np.empty_like(planos)
    for c in range(planos.shape[2]):
        plano = np.pad(planos[..., c], ((0, ph), (0, pw)), mode="edge") * 255.0 - 128.0
        bh, bw = plano.shape[0] // 8, plano.shape[1] // 8
        blocos = plano.reshape(bh, 8, bw, 8).transpose(0, 2, 1, 3)
        coef = sp_fft.dctn(blocos, type=2, norm="ortho", axes=(-2, -1))
        coef = np.round(coef / tabela) * tabela
        blocos = sp_fft.idctn(coef, type=2, norm="ortho", axes=(-2, -1))
        plano = blocos.transpose(0, 2, 1, 3).reshape(bh * 8, bw * 8)
        saida[..., c] = (plano[:altura, :largura] + 128.0) / 255.0
    saida = np.clip(saida, 0.0, 1.0)
    return saida[..., 0] if img.ndim == 2 else saida


def corrupt(img: np.ndarray, spec: CorruptionSpec, seed: int) -> np.ndarray:
    """
    Aplica uma corrupção de forma determinística dado (img, spec, seed).

    Args:
        img: Imagem (H, W) ou (H, W, 3)
        spec: Tipo e nível (0 = identidade)
        seed: Semente do gerador

    Returns:
        Nova imagem corrompida
    """
    spec.validate()
    img = np.asarray(img, dtype=np.float64)
    if spec.intensity_level == 0:
        return img.copy()
    rng = np.random.default_rng(seed)
    parametro = spec.parameter
    if spec.kind == "saturation":
        return adjust_saturation(img, parametro)
    if spec.kind == "contrast":
        return adjust_contrast(img, parametro)
    if spec.kind == "blockwise":
        return blockwise(img, parametro, rng)
    if spec.kind == "gaussian_noise":
        return gaussian_noise(img, parametro, rng)
    if spec.kind == "blur":
        return blur(img, parametro)
    if spec.kind == "pixelation":
        return pixelate(img, int(parametro))
    return compression_proxy(img, parametro)


# =============================================================================
# ESPECTRO DE FOURIER
# =============================================================================

def log_spectrum(img: np.ndarray) -> np.ndarray:
    """log(1 + |FFT2|) da imagem cinza com DC no centro."""
    return np.log1p(np.abs(np.fft.fftshift(np.fft.fft2(to_gray(img)))))


def mean_spectrum(imgs: Sequence[np.ndarray]) -> np.ndarray:
    """Média dos espectros log(1 + |FFT2|) de uma lista de imagens do mesmo tamanho."""
    if len(imgs) == 0:
        raise ImageError("mean_spectrum: lista de imagens vazia")
    tamanho = np.asarray(imgs[0]).shape[:2]
    for img in imgs:
        if np.asarray(img).shape[:2] != tamanho:
            raise ImageError(f"mean_spectrum: tamanhos diferentes {tamanho} e {np.asarray(img).shape[:2]}")
    return np.mean(np.stack([log_spectrum(img) for img in imgs]), axis=0)


def radius_map(shape: Tuple[int, int]) -> np.ndarray:
    """Raio normalizado (1.0 = Nyquist no menor eixo) em relação ao centro DC."""
    altura, largura = shape
    yy, xx = np.meshgrid(np.arange(altura) - altura // 2, np.arange(largura) - largura // 2, indexing="ij")
    return np.hypot(yy, xx) / (min(altura, largura) / 2.0)


def annulus_energy(espectro: np.ndarray, r_min: float = 0.5, r_max: float = 1.5) -> float:
    """Energia média do espectro no anel r_min <= r < r_max."""
    raio = radius_map(espectro.shape)
    anel = (raio >= r_min) & (raio < r_max)
    if not anel.any():
        raise ImageError(f"Anel vazio: [{r_min}, {r_max})")
    return float(espectro[anel].mean())


# =============================================================================
# ENTRADA / SAÍDA
# =============================================================================

def read_image(path: Union[str, Path]) -> np.ndarray:
    """Lê PPM (RGB) ou PGM (cinza) como float64 em [0, 1]."""
    with PILImage.open(path) as im:
        if im.mode not in ("RGB", "L"):
            im = im.convert("RGB")
        return np.asarray(im, dtype=np.float64) / 255.0


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.round(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)


def write_image(path: Union[str, Path], img: np.ndarray) -> Path:
    """Grava P6 (RGB) ou P5 (cinza) conforme o número de canais."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    dados = to_uint8(img)
    PILImage.fromarray(dados).save(path, format="PPM")
    return path


def write_map(path_base: Union[str, Path], mapa: np.ndarray) -> Tuple[Path, Path]:
    """Grava um mapa 2D como PGM normalizado e CSV com os valores brutos."""
    path_base = Path(path_base)
    pgm = write_image(path_base.with_suffix(".pgm"), minmax_normalize(mapa))
    csv = path_base.with_suffix(".csv")
    pd.DataFrame(mapa).to_csv(csv, index=False, header=False, float_format="%.10g")
    return pgm, csv
