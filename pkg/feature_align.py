#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Alinhamento de Características
==============================
Dois stems convolucionais de aparência (fino H/32 e grosso H/4), um stem de
borda (H/4), tokenização em patches, tokens de classe e embeddings
posicionais aprendidos (um conjunto por ramo).

O ramo fino usa cada célula 1x1 da grade H/32 como token; os ramos grosso e
de borda usam patches 8x8 não sobrepostos da grade H/4, o que dá o mesmo
número n de tokens nos três ramos.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from tensor import (Conv2d, Linear, Module, ShapeError, Tensor, add, concat, expand, gelu,
                    reshape, transpose, trunc_normal)

logger = logging.getLogger(__name__)

# Canais intermediários dos stems (o último estágio usa C_f / C_c da configuração)
FINE_STAGES = (16, 32, 64, 128)
COARSE_STAGES = (32,)


@dataclass
class StemOutput:
    fine: Optional[Tensor]
    coarse: Optional[Tensor]
    edge_local: Optional[Tensor]


@dataclass
class TokenSet:
    """Tokens (B, n+1, dim) de um ramo; a linha 0 é o token de classe."""

    tokens: Tensor
    n: int
    dim: int
    positional: Optional[Tensor] = None


class ConvStem(Module):
    """Estágios conv 3x3 stride 2 + GELU."""

    def __init__(self, c_in: int, canais: Tuple[int, ...], rng: np.random.Generator):
        self.stages = []
        for c_out in canais:
            self.stages.append(Conv2d(c_in, c_out, rng, kernel=3, stride=2, padding=1))
            c_in = c_out

    @property
    def downsample(self) -> int:
        return 2 ** len(self.stages)

    def __call__(self, x: Tensor) -> Tensor:
        for conv in self.stages:
            x = gelu(conv(x))
        return x


class FeatureAlign(Module):
    """Stems, projeções de patch, tokens de classe e posições de cada ramo ativo."""

    def __init__(self, cfg, rng: np.random.Generator):
        d, n = cfg.dim, cfg.n_tokens
        std = cfg.init_std
        patch_dim = cfg.coarse_channels * cfg.patch_size ** 2
        self.patch_size = cfg.patch_size
        if "F" in cfg.branches:
            self.fine_stem = ConvStem(3, FINE_STAGES + (cfg.fine_channels,), rng)
            self.fine_proj = Linear(cfg.fine_channels, d, rng, std)
            self.fine_cls = Tensor(trunc_normal((1, 1, d), std, rng), requires_grad=True)
            self.fine_pos = Tensor(trunc_normal((1, n + 1, d), std, rng), requires_grad=True)
        if "C" in cfg.branches:
            self.coarse_stem = ConvStem(3, COARSE_STAGES + (cfg.coarse_channels,), rng)
            self.coarse_proj = Linear(patch_dim, 2 * d, rng, std)
            self.coarse_cls = Tensor(trunc_normal((1, 1, 2 * d), std, rng), requires_grad=True)
            self.coarse_pos = Tensor(trunc_normal((1, n + 1, 2 * d), std, rng), requires_grad=True)
        if "E" in cfg.branches:
            self.edge_stem = ConvStem(1, COARSE_STAGES + (cfg.coarse_channels,), rng)
            self.edge_proj = Linear(patch_dim, 2 * d, rng, std)
            self.edge_cls = Tensor(trunc_normal((1, 1, 2 * d), std, rng), requires_grad=True)
            self.edge_pos = Tensor(trunc_normal((1, n + 1, 2 * d), std, rng), requires_grad=True)


# =============================================================================
# CONVERSÕES
# =============================================================================

def images_to_tensor(imgs: np.ndarray) -> Tensor:
    """(H, W[, C]) ou (B, H, W[, C]) -> Tensor NCHW."""
    arr = np.asarray(imgs, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None, :, :, None]
    elif arr.ndim == 3:
        arr = arr[None] if arr.shape[-1] == 3 else arr[..., None]
    if arr.ndim != 4:
        raise ShapeError("images_to_tensor", arr.shape)
    return Tensor(np.ascontiguousarray(arr.transpose(0, 3, 1, 2)))


def _checar_entrada(x: Tensor, cfg, nome: str) -> None:
    _, _, altura, largura = x.shape
    if altura != largura:
        raise ShapeError("run_stems", x.shape, detalhe=f"{nome}: entrada não quadrada")
    if altura % 32 != 0:
        raise ShapeError("run_stems", x.shape, detalhe=f"{nome}: H e W precisam ser múltiplos de 32")
    if altura != cfg.image_size:
        raise ShapeError("run_stems", x.shape, (cfg.image_size, cfg.image_size), f"{nome}: image_size")


# =============================================================================
# OPERAÇÕES
# =============================================================================

def run_stems(appearance, edge, cfg, align: FeatureAlign) -> StemOutput:
    """
    Executa os stems dos ramos ativos.

    Args:
        appearance: Imagens RGB (B, H, W, 3) ou Tensor NCHW
        edge: Mapas de borda (B, H, W) ou Tensor NCHW (ignorado sem o ramo E)
        cfg: CaelConfig
        align: Parâmetros (FeatureAlign)

    Returns:
        StemOutput com fine (C_f, H/32), coarse e edge_local (C_c, H/4)
    """
    x = appearance if isinstance(appearance, Tensor) else images_to_tensor(appearance)
    _checar_entrada(x, cfg, "appearance")
    fine = coarse = local = None
    if "F" in cfg.branches:
        fine = align.fine_stem(x)
    if "C" in cfg.branches:
        coarse = align.coarse_stem(x)
    if "E" in cfg.branches:
        if edge is None:
            raise ShapeError("run_stems", x.shape, detalhe="ramo E ativo sem imagem de borda")
        e = edge if isinstance(edge, Tensor) else images_to_tensor(edge)
        _checar_entrada(e, cfg, "edge")
        if e.shape[0] != x.shape[0] or e.shape[2:] != x.shape[2:]:
            raise ShapeError("run_stems", x.shape, e.shape, "aparência e borda com tamanhos diferentes")
        local = align.edge_stem(e)
    return StemOutput(fine, coarse, local)


def _anexar_classe(tokens: Tensor, cls: Tensor, pos: Tensor) -> Tensor:
    lote, _, dim = tokens.shape
    return add(concat([expand(cls, (lote, 1, dim)), tokens], axis=1), pos)


def _patches(mapa: Tensor, p: int) -> Tensor:
    """(B, C, G, G) -> (B, (G/p)^2, C*p*p), patches em ordem de varredura."""
    lote, canais, g, g2 = mapa.shape
    if g % p != 0 or g2 % p != 0:
        raise ShapeError("tokenize", mapa.shape, (p, p), "grade não divisível pelo patch")
    blocos = reshape(mapa, (lote, canais, g // p, p, g2 // p, p))
    blocos = transpose(blocos, (0, 2, 4, 1, 3, 5))
    return reshape(blocos, (lote, (g // p) * (g2 // p), canais * p * p))


def tokenize(stem: StemOutput, cfg, align: FeatureAlign) -> Tuple[Optional[TokenSet], ...]:
    """
    Converte as saídas dos stems em TokenSets (fino d, grosso e borda 2d).

    Returns:
        (fine, coarse, edge); ramos inativos retornam None
    """
    fine = coarse = edge = None
    contagens = {}
    if stem.fine is not None:
        lote, canais, h, w = stem.fine.shape
        celulas = transpose(reshape(stem.fine, (lote, canais, h * w)), (0, 2, 1))
        fine = TokenSet(_anexar_classe(align.fine_proj(celulas), align.fine_cls, align.fine_pos),
                        h * w, cfg.dim, align.fine_pos)
        contagens["fine"] = h * w
    if stem.coarse is not None:
        patches = _patches(stem.coarse, cfg.patch_size)
        coarse = TokenSet(_anexar_classe(align.coarse_proj(patches), align.coarse_cls, align.coarse_pos),
                          patches.shape[1], 2 * cfg.dim, align.coarse_pos)
        contagens["coarse"] = patches.shape[1]
    if stem.edge_local is not None:
        patches = _patches(stem.edge_local, cfg.patch_size)
        edge = TokenSet(_anexar_classe(align.edge_proj(patches), align.edge_cls, align.edge_pos),
                        patches.shape[1], 2 * cfg.dim, align.edge_pos)
        contagens["edge"] = patches.shape[1]
    if len(set(contagens.values())) > 1:
        raise ShapeError("tokenize", tuple(contagens.values()), detalhe=f"n diferente entre ramos {contagens}")
    return fine, coarse, edge
