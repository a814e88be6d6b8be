#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
MAET e CAEL
===========
Encoders transformer (pré-norma, estilo ViT), atenção cruzada multi-granular
(troca de tokens de classe entre ramos fino e grosso), atenção cruzada
aparência-borda (AECA), empilhamento de K blocos MAET, especialistas por ramo
e o modelo CAEL completo.

Também expõe:
- AttentionMonitor: registra mapas de atenção e multiplicações de score
- count_parameters: contagem analítica espelhando os construtores
"""

import logging
import math
import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

import image_ops
from feature_align import FeatureAlign, run_stems, tokenize
from tensor import (LayerNorm, Linear, Module, ShapeError, Tensor, add, concat, expand, gelu,
                    matmul, mean, reshape, scale, slice_axis, softmax, split, swap_last, transpose)

logger = logging.getLogger(__name__)


# =============================================================================
# MONITOR DE ATENÇÃO
# =============================================================================

@dataclass
class AttentionRecord:
    kind: str
    probs: np.ndarray          # (B, heads, Tq, Tk)
    score_mults: int           # multiplicações de q @ k^T


@dataclass(eq=False)
class AttentionMonitor:
    records: List[AttentionRecord] = field(default_factory=list)

    def mults(self, kind: Optional[str] = None) -> int:
        return sum(r.score_mults for r in self.records if kind is None or r.kind == kind)

    def of_kind(self, kind: str) -> List[AttentionRecord]:
        return [r for r in self.records if r.kind == kind]


_monitores = threading.local()


@contextmanager
def monitor_attention() -> Iterator[AttentionMonitor]:
    """Registra toda atenção calculada dentro do bloco (por thread)."""
    monitor = AttentionMonitor()
    pilha = getattr(_monitores, "pilha", None)
    if pilha is None:
        pilha = _monitores.pilha = []
    pilha.append(monitor)
    try:
        yield monitor
    finally:
        del pilha[next(i for i, m in enumerate(pilha) if m is monitor)]


def _registrar(kind: str, probs: np.ndarray, mults: int) -> None:
    for monitor in getattr(_monitores, "pilha", ()):
        monitor.records.append(AttentionRecord(kind, probs, mults))


# =============================================================================
# ATENÇÃO MULTI-CABEÇA
# =============================================================================

def _separar_cabecas(x: Tensor, heads: int) -> Tensor:
    lote, t, dim = x.shape
    return transpose(reshape(x, (lote, t, heads, dim // heads)), (0, 2, 1, 3))


def _juntar_cabecas(x: Tensor) -> Tensor:
    lote, heads, t, dh = x.shape
    return reshape(transpose(x, (0, 2, 1, 3)), (lote, t, heads * dh))


def attention(q: Tensor, k: Tensor, v: Tensor, heads: int, kind: str) -> Tensor:
    """
    softmax(q k^T / sqrt(d_m)) v por cabeça, com cabeças concatenadas.

    Args:
        q: (B, Tq, D); k, v: (B, Tk, D)
        heads: Número de cabeças m (d_m = D / m)
        kind: Rótulo usado pelo monitor (mhsa, mgca, aeca)

    Returns:
        Tensor (B, Tq, D)
    """
    dim = q.shape[-1]
    if dim % heads != 0 or k.shape[-1] != dim or v.shape != k.shape or q.shape[0] != k.shape[0]:
        raise ShapeError(f"attention[{kind}]", q.shape, k.shape)
    dh = dim // heads
    qh, kh, vh = (_separar_cabecas(t, heads) for t in (q, k, v))
    probs = softmax(scale(matmul(qh, swap_last(kh)), 1.0 / math.sqrt(dh)))
    lote, _, tq, tk = probs.shape
    _registrar(kind, probs.data, lote * heads * tq * tk * dh)
    return _juntar_cabecas(matmul(probs, vh))


class EncoderBlock(Module):
    """Bloco transformer pré-norma: MHSA + MLP (GELU), ambos residuais."""

    def __init__(self, dim: int, heads: int, mlp_ratio: float, rng: np.random.Generator, std: float):
        oculto = int(dim * mlp_ratio)
        self.heads = heads
        self.norm1 = LayerNorm(dim)
        self.qkv = Linear(dim, 3 * dim, rng, std)
        self.proj = Linear(dim, dim, rng, std)
        self.norm2 = LayerNorm(dim)
        self.fc1 = Linear(dim, oculto, rng, std)
        self.fc2 = Linear(oculto, dim, rng, std)

    def __call__(self, x: Tensor) -> Tensor:
        dim = x.shape[-1]
        q, k, v = split(self.qkv(self.norm1(x)), [dim, dim, dim], axis=-1)
        x = add(x, self.proj(attention(q, k, v, self.heads, "mhsa")))
        out = add(x, self.fc2(gelu(self.fc1(self.norm2(x)))))
        if out.shape != x.shape:
            raise ShapeError("encoder_block", x.shape, out.shape)
        return out


class Encoder(Module):
    """Pilha de blocos; profundidade 0 é identidade."""

    def __init__(self, depth: int, dim: int, heads: int, mlp_ratio: float, rng, std: float):
        self.blocks = [EncoderBlock(dim, heads, mlp_ratio, rng, std) for _ in range(depth)]

    def __call__(self, x: Tensor) -> Tensor:
        for bloco in self.blocks:
            x = bloco(x)
        return x


class CrossAttention(Module):
    """Projeções q, k, v aprendidas; retorna as cabeças concatenadas (sem projeção de saída)."""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator, std: float, kind: str):
        self.heads = heads
        self.kind = kind
        self.wq = Linear(dim, dim, rng, std)
        self.wk = Linear(dim, dim, rng, std)
        self.wv = Linear(dim, dim, rng, std)

    def __call__(self, query: Tensor, context: Tensor) -> Tensor:
        return attention(self.wq(query), self.wk(context), self.wv(context), self.heads, self.kind)


class _ProjecaoCls(Module):
    """LayerNorm -> GELU -> Linear, usada para levar o token de classe entre dimensões."""

    def __init__(self, d_in: int, d_out: int, rng, std: float):
        self.norm = LayerNorm(d_in)
        self.linear = Linear(d_in, d_out, rng, std)

    def __call__(self, x: Tensor) -> Tensor:
        return self.linear(gelu(self.norm(x)))


# =============================================================================
# ATENÇÃO CRUZADA MULTI-GRANULAR
# =============================================================================

class MultiGrainedCrossAttention(Module):
    """
    Troca estilo CrossViT: o token de classe fino (projetado para 2d) consulta
    os patches grossos e volta para d com soma residual; simétrico para o
    token de classe grosso sobre os patches finos. Patches não mudam.
    """

    def __init__(self, d: int, heads: int, rng, std: float):
        self.fine_to_coarse = _ProjecaoCls(d, 2 * d, rng, std)
        self.coarse_context_norm = LayerNorm(2 * d)
        self.fine_attn = CrossAttention(2 * d, heads, rng, std, "mgca")
        self.fine_revert = _ProjecaoCls(2 * d, d, rng, std)

        self.coarse_to_fine = _ProjecaoCls(2 * d, d, rng, std)
        self.fine_context_norm = LayerNorm(d)
        self.coarse_attn = CrossAttention(d, heads, rng, std, "mgca")
        self.coarse_revert = _ProjecaoCls(d, 2 * d, rng, std)

    def __call__(self, fine: Tensor, coarse: Tensor) -> Tuple[Tensor, Tensor]:
        n = fine.shape[1] - 1
        if coarse.shape[1] - 1 != n:
            raise ShapeError("multi_grained_cross_attention", fine.shape, coarse.shape)
        cls_f, pat_f = split(fine, [1, n], axis=1)
        cls_c, pat_c = split(coarse, [1, n], axis=1)

        consulta_f = self.fine_to_coarse(cls_f)
        novo_f = add(cls_f, self.fine_revert(self.fine_attn(consulta_f, self.coarse_context_norm(pat_c))))

        consulta_c = self.coarse_to_fine(cls_c)
        novo_c = add(cls_c, self.coarse_revert(self.coarse_attn(consulta_c, self.fine_context_norm(pat_f))))

        if novo_f.shape != cls_f.shape or novo_c.shape != cls_c.shape:
            raise ShapeError("multi_grained_cross_attention", novo_f.shape, novo_c.shape, "dimensão após projeção")
        return concat([novo_f, pat_f], axis=1), concat([novo_c, pat_c], axis=1)


def multi_grained_cross_attention(fine: Tensor, coarse: Tensor,
                                  params: MultiGrainedCrossAttention) -> Tuple[Tensor, Tensor]:
    return params(fine, coarse)


# =============================================================================
# AECA
# =============================================================================

def _linhas_consulta(edge: Tensor, query_mode: str) -> Tuple[int, int]:
    n = edge.shape[1] - 1
    if query_mode == "cls":
        return 0, 1
    if query_mode == "patch":
        if n == 0:
            raise ShapeError("aeca", edge.shape, detalhe="query_mode=patch exige n > 0")
        return 1, n + 1
    return 0, n + 1


class AECA(Module):
    """
    Atenção cruzada aparência-borda.

    No modo cross_attention (padrão), para cada granularidade g ativa:
      1. F^g projeta o token de classe de borda (2d -> d no fino, 2d -> 2d no grosso)
      2. T_all = concat(token projetado, patches de g)
      3. MAECA: q do token projetado, k e v de T_all, softmax(q k^T / sqrt(d_m))
      4. cabeças concatenadas, retroprojeção para 2d, soma residual ao token de borda
    A linha 0 de saída é a soma dos tokens fundidos; os patches de borda passam intactos.

    Modos summation / concatenation trocam o passo 1-4 por soma ou
    concatenação+projeção dos tokens médios de cada ramo.
    """

    def __init__(self, cfg, rng):
        d, std = cfg.dim, cfg.init_std
        self.fusion_mode = cfg.fusion_mode
        self.query_mode = cfg.query_mode
        self.use_fine = "F" in cfg.branches
        self.use_coarse = "C" in cfg.branches
        if self.fusion_mode == "cross_attention":
            if self.use_fine:
                self.fine_query = Linear(2 * d, d, rng, std)
                self.fine_attn = CrossAttention(d, cfg.heads, rng, std, "aeca")
                self.fine_back = Linear(d, 2 * d, rng, std)
            if self.use_coarse:
                self.coarse_query = Linear(2 * d, 2 * d, rng, std)
                self.coarse_attn = CrossAttention(2 * d, cfg.heads, rng, std, "aeca")
                self.coarse_back = Linear(2 * d, 2 * d, rng, std)
        elif self.fusion_mode == "summation":
            if self.use_fine:
                self.fine_align = Linear(d, 2 * d, rng, std)
            if self.use_coarse:
                self.coarse_align = Linear(2 * d, 2 * d, rng, std)
        else:
            entrada = 2 * d + (d if self.use_fine else 0) + (2 * d if self.use_coarse else 0)
            self.fuse = Linear(entrada, 2 * d, rng, std)

    def _cruzada(self, consulta: Tensor, edge_cls: Tensor, patches: Tensor,
                 query_proj: Linear, attn: CrossAttention, back: Linear) -> Tensor:
        cls_proj = query_proj(edge_cls)
        q = cls_proj if consulta is edge_cls else query_proj(consulta)
        t_all = concat([cls_proj, patches], axis=1)
        return add(consulta, back(attn(q, t_all)))

    def __call__(self, fine: Optional[Tensor], coarse: Optional[Tensor], edge: Tensor) -> Tensor:
        n = edge.shape[1] - 1
        inicio, fim = _linhas_consulta(edge, self.query_mode)
        edge_cls = slice_axis(edge, 0, 1, axis=1)
        consulta = edge_cls if (inicio, fim) == (0, 1) else slice_axis(edge, inicio, fim, axis=1)
        for nome, ramo in (("fine", fine), ("coarse", coarse)):
            if ramo is not None and ramo.shape[1] - 1 != n:
                raise ShapeError(f"aeca[{nome}]", ramo.shape, edge.shape, "n diferente")

        fundidos = []
        if self.fusion_mode == "cross_attention":
            if self.use_fine:
                _, pat_f = split(fine, [1, n], axis=1)
                fundidos.append(self._cruzada(consulta, edge_cls, pat_f,
                                              self.fine_query, self.fine_attn, self.fine_back))
            if self.use_coarse:
                _, pat_c = split(coarse, [1, n], axis=1)
                fundidos.append(self._cruzada(consulta, edge_cls, pat_c,
                                              self.coarse_query, self.coarse_attn, self.coarse_back))
        elif self.fusion_mode == "summation":
            linhas = consulta.shape[1]
            if self.use_fine:
                media = mean(fine, axis=1, keepdims=True)
                fundidos.append(add(consulta, expand(self.fine_align(media), (edge.shape[0], linhas, edge.shape[2]))))
            if self.use_coarse:
                media = mean(coarse, axis=1, keepdims=True)
                fundidos.append(add(consulta, expand(self.coarse_align(media), (edge.shape[0], linhas, edge.shape[2]))))
        else:
            lote, linhas = consulta.shape[0], consulta.shape[1]
            partes = [consulta]
            for ramo in (fine if self.use_fine else None, coarse if self.use_coarse else None):
                if ramo is not None:
                    media = mean(ramo, axis=1, keepdims=True)
                    partes.append(expand(media, (lote, linhas, ramo.shape[2])))
            fundidos.append(add(consulta, self.fuse(concat(partes, axis=-1))))

        atualizado = fundidos[0]
        for extra in fundidos[1:]:
            atualizado = add(atualizado, extra)
        if atualizado.shape != consulta.shape:
            raise ShapeError("aeca", consulta.shape, atualizado.shape)

        blocos = []
        if inicio > 0:
            blocos.append(slice_axis(edge, 0, inicio, axis=1))
        blocos.append(atualizado)
        if fim < n + 1:
            blocos.append(slice_axis(edge, fim, n + 1, axis=1))
        saida = concat(blocos, axis=1) if len(blocos) > 1 else atualizado
        if saida.shape != edge.shape:
            raise ShapeError("aeca", edge.shape, saida.shape)
        return saida


def aeca(fine: Optional[Tensor], coarse: Optional[Tensor], edge: Tensor,
         params: Optional[AECA], cfg) -> Tensor:
    """T_i^e a partir de (T_i^f, T_i^c, T_g^e); com aeca_enabled=false devolve T_g^e."""
    if not cfg.aeca_enabled or params is None:
        return edge
    return params(fine, coarse, edge)


# =============================================================================
# BLOCO MAET
# =============================================================================

@dataclass
class BranchState:
    """Tokens (B, n+1, dim) de cada ramo; None para ramos desativados."""

    fine: Optional[Tensor]
    coarse: Optional[Tensor]
    edge: Optional[Tensor]

    def shapes(self) -> Tuple:
        return tuple(t.shape if t is not None else None for t in (self.fine, self.coarse, self.edge))


class MAETBlock(Module):
    def __init__(self, cfg, rng):
        d, m, r, std = cfg.dim, cfg.heads, cfg.mlp_ratio, cfg.init_std
        ramos = cfg.branches
        if "F" in ramos:
            self.fine_encoder = Encoder(cfg.S, d, m, r, rng, std)
        if "C" in ramos:
            self.coarse_encoder = Encoder(cfg.L, 2 * d, m, r, rng, std)
        if "E" in ramos:
            self.edge_encoder = Encoder(cfg.E, 2 * d, m, r, rng, std)
        if "F" in ramos and "C" in ramos:
            self.cross = [MultiGrainedCrossAttention(d, m, rng, std) for _ in range(cfg.N)]
        if "E" in ramos and ("F" in ramos or "C" in ramos) and cfg.aeca_enabled:
            self.aeca = AECA(cfg, rng)


def maet_block(state: BranchState, params: MAETBlock, cfg) -> BranchState:
    """
    Um bloco MAET: encoders (S, L, E), N atenções cruzadas multi-granulares e AECA.

    Returns:
        BranchState com (T_i^f, T_i^c, T_i^e)
    """
    entrada = state.shapes()
    fine, coarse, edge = state.fine, state.coarse, state.edge
    if fine is not None:
        fine = params.fine_encoder(fine)
    if coarse is not None:
        coarse = params.coarse_encoder(coarse)
    if edge is not None:
        edge = params.edge_encoder(edge)
    if BranchState(fine, coarse, edge).shapes() != entrada:
        raise ShapeError("maet_block", entrada, BranchState(fine, coarse, edge).shapes(), "após encoders")

    if fine is not None and coarse is not None:
        for bloco in params.cross:
            fine, coarse = multi_grained_cross_attention(fine, coarse, bloco)

    if edge is not None and (fine is not None or coarse is not None):
        edge = aeca(fine, coarse, edge, getattr(params, "aeca", None), cfg)

    saida = BranchState(fine, coarse, edge)
    if saida.shapes() != entrada:
        raise ShapeError("maet_block", entrada, saida.shapes(), "após fusão")
    return saida


# =============================================================================
# MODELO CAEL
# =============================================================================

class Expert(Module):
    """LayerNorm + afim sobre o token de classe do ramo."""

    def __init__(self, dim: int, n_classes: int, rng, std: float):
        self.norm = LayerNorm(dim)
        self.head = Linear(dim, n_classes, rng, std)

    def __call__(self, tokens: Tensor) -> Tensor:
        cls = slice_axis(tokens, 0, 1, axis=1)
        return reshape(self.head(self.norm(cls)), (tokens.shape[0], -1))


class CaelModel(Module):
    """CAEL completo: alinhamento, K blocos MAET sem compartilhamento de pesos e especialistas."""

    def __init__(self, cfg, seed: Optional[int] = None):
        cfg.validate()
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed if seed is None else seed)
        self.align = FeatureAlign(cfg, rng)
        self.blocks = [MAETBlock(cfg, rng) for _ in range(cfg.K)]
        dims = {"F": cfg.dim, "C": 2 * cfg.dim, "E": 2 * cfg.dim}
        self.experts = {b: Expert(dims[b], cfg.n_classes, rng, cfg.init_std) for b in cfg.branches}
        self.edge_params = image_ops.EdgeParams.from_config(cfg)

    def edges_for(self, appearance: np.ndarray) -> np.ndarray:
        """Imagens de borda (B, H, W) pelo operador configurado."""
        lote = np.asarray(appearance, dtype=np.float64)
        if lote.ndim == 3:
            lote = lote[None]
        return np.stack([image_ops.edge_transform(img, self.cfg.operator, self.edge_params) for img in lote])

    def forward(self, appearance, edges: Optional[np.ndarray] = None) -> Tuple[Tensor, Dict[str, Tensor]]:
        cfg = self.cfg
        if "E" in cfg.branches and edges is None:
            edges = self.edges_for(appearance)
        stem = run_stems(appearance, edges, cfg, self.align)
        fine, coarse, edge = tokenize(stem, cfg, self.align)
        state = BranchState(fine.tokens if fine else None,
                            coarse.tokens if coarse else None,
                            edge.tokens if edge else None)
        for bloco in self.blocks:
            state = maet_block(state, bloco, cfg)

        tokens = {"F": state.fine, "C": state.coarse, "E": state.edge}
        por_ramo = {b: self.experts[b](tokens[b]) for b in cfg.branches}
        total = None
        for logits in por_ramo.values():
            total = logits if total is None else add(total, logits)
        return scale(total, 1.0 / len(por_ramo)), por_ramo

    __call__ = forward


def cael_forward(appearance, cfg, model: CaelModel,
                 edges: Optional[np.ndarray] = None) -> Tuple[Tensor, Dict[str, Tensor]]:
    """Logits finais (média dos especialistas ativos) e logits por ramo."""
    if not cfg.branches:
        raise ShapeError("cael_forward", (), detalhe="nenhum ramo ativo")
    if model.cfg != cfg:
        raise ValueError("cael_forward: configuração diferente da usada no modelo")
    return model.forward(appearance, edges)


# =============================================================================
# CONTAGEM ANALÍTICA DE PARÂMETROS
# =============================================================================

def _p_linear(d_in: int, d_out: int) -> int:
    return d_in * d_out + d_out


def _p_norm(dim: int) -> int:
    return 2 * dim


def _p_conv(c_in: int, c_out: int, k: int = 3) -> int:
    return c_out * c_in * k * k + c_out


def encoder_block_params(dim: int, mlp_ratio: float) -> int:
    oculto = int(dim * mlp_ratio)
    return (2 * _p_norm(dim) + _p_linear(dim, 3 * dim) + _p_linear(dim, dim)
            + _p_linear(dim, oculto) + _p_linear(oculto, dim))


def _p_cross(dim: int) -> int:
    return 3 * _p_linear(dim, dim)


def _p_proj_cls(d_in: int, d_out: int) -> int:
    return _p_norm(d_in) + _p_linear(d_in, d_out)


def mgca_params(d: int) -> int:
    return (_p_proj_cls(d, 2 * d) + _p_norm(2 * d) + _p_cross(2 * d) + _p_proj_cls(2 * d, d)
            + _p_proj_cls(2 * d, d) + _p_norm(d) + _p_cross(d) + _p_proj_cls(d, 2 * d))


def aeca_params(cfg) -> int:
    d = cfg.dim
    fino, grosso = "F" in cfg.branches, "C" in cfg.branches
    if cfg.fusion_mode == "cross_attention":
        total = 0
        if fino:
            total += _p_linear(2 * d, d) + _p_cross(d) + _p_linear(d, 2 * d)
        if grosso:
            total += _p_linear(2 * d, 2 * d) + _p_cross(2 * d) + _p_linear(2 * d, 2 * d)
        return total
    if cfg.fusion_mode == "summation":
        return (_p_linear(d, 2 * d) if fino else 0) + (_p_linear(2 * d, 2 * d) if grosso else 0)
    entrada = 2 * d + (d if fino else 0) + (2 * d if grosso else 0)
    return _p_linear(entrada, 2 * d)


def count_parameters(cfg) -> int:
    """Número de parâmetros do CaelModel(cfg) sem alocar pesos."""
    from feature_align import COARSE_STAGES, FINE_STAGES

    d, n, r = cfg.dim, cfg.n_tokens, cfg.mlp_ratio
    ramos = cfg.branches
    patch_dim = cfg.coarse_channels * cfg.patch_size ** 2

    def stem(c_in, canais):
        total = 0
        for c_out in canais:
            total += _p_conv(c_in, c_out)
            c_in = c_out
        return total

    total = 0
    if "F" in ramos:
        total += stem(3, FINE_STAGES + (cfg.fine_channels,)) + _p_linear(cfg.fine_channels, d) + d + (n + 1) * d
    for ramo, c_in in (("C", 3), ("E", 1)):
        if ramo in ramos:
            total += (stem(c_in, COARSE_STAGES + (cfg.coarse_channels,)) + _p_linear(patch_dim, 2 * d)
                      + 2 * d + (n + 1) * 2 * d)

    bloco = 0
    if "F" in ramos:
        bloco += cfg.S * encoder_block_params(d, r)
    if "C" in ramos:
        bloco += cfg.L * encoder_block_params(2 * d, r)
    if "E" in ramos:
        bloco += cfg.E * encoder_block_params(2 * d, r)
    if "F" in ramos and "C" in ramos:
        bloco += cfg.N * mgca_params(d)
    if "E" in ramos and ("F" in ramos or "C" in ramos) and cfg.aeca_enabled:
        bloco += aeca_params(cfg)
    total += cfg.K * bloco

    dims = {"F": d, "C": 2 * d, "E": 2 * d}
    total += sum(_p_norm(dims[b]) + _p_linear(dims[b], cfg.n_classes) for b in ramos)
    return total


def attention_score_mults(n: int, dim: int, heads: int, kind: str, query_rows: Optional[int] = None) -> int:
    """
    Multiplicações do passo de score q k^T para uma amostra.

    mhsa: (n+1)^2 * d_m por cabeça; aeca: linhas_de_consulta * (n+1) * d_m por cabeça.
    """
    dh = dim // heads
    if kind == "mhsa":
        return heads * (n + 1) * (n + 1) * dh
    linhas = 1 if query_rows is None else query_rows
    return heads * linhas * (n + 1) * dh
