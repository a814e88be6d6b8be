#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Benchmarks de complexidade: tabelas de parâmetros (E e K), multiplicações
do score de atenção medidas pelo monitor e tempo do passo de score.
"""

import logging
import timeit
from typing import Dict, Sequence

import numpy as np
import pandas as pd

from config import CaelConfig
from maet import attention, attention_score_mults, count_parameters, monitor_attention
from tensor import Tensor, matmul, no_grad, swap_last

logger = logging.getLogger(__name__)

# Dimensões de referência (d=192, m=8, H=W=224 -> n=49)
REFERENCE_DIMS = {"dim": 192, "heads": 8, "image_size": 224, "K": 4, "S": 2, "L": 3, "E": 3, "N": 2}


def reference_config(cfg: CaelConfig) -> CaelConfig:
    return cfg.with_overrides(**REFERENCE_DIMS)


def parameter_table(cfg: CaelConfig, e_values: Sequence[int] = range(5),
                    k_values: Sequence[int] = range(1, 6)) -> pd.DataFrame:
    """Parâmetros por profundidade E (K fixo) e K (E fixo), com diferenças sucessivas."""
    linhas = []
    for eixo, valores in (("E", e_values), ("K", k_values)):
        anterior = None
        for valor in valores:
            params = count_parameters(cfg.with_overrides(**{eixo: int(valor)}))
            linhas.append({"axis": eixo, "value": int(valor), "params": params,
                           "params_m": params / 1e6,
                           "delta": params - anterior if anterior is not None else np.nan})
            anterior = params
    df = pd.DataFrame(linhas)
    df["delta"] = df["delta"].astype("Int64")
    return df


def constant_deltas(tabela: pd.DataFrame, axis: str) -> bool:
    deltas = tabela[tabela["axis"] == axis]["delta"].dropna().tolist()
    return len(set(int(d) for d in deltas)) <= 1


def measured_score_mults(n: int, dim: int, heads: int, query_rows: int, seed: int = 0) -> Dict[str, int]:
    """Executa atenção real com o monitor ligado e devolve as multiplicações de score medidas."""
    rng = np.random.default_rng(seed)
    tokens = Tensor(rng.normal(size=(1, n + 1, dim)))
    consulta = Tensor(rng.normal(size=(1, query_rows, dim)))
    with no_grad(), monitor_attention() as monitor:
        attention(tokens, tokens, tokens, heads, "mhsa")
        attention(consulta, tokens, tokens, heads, "aeca")
    return {"mhsa": monitor.mults("mhsa"), "aeca": monitor.mults("aeca")}


def flop_table(dim: int = 384, heads: int = 8, ns: Sequence[int] = (49, 196)) -> pd.DataFrame:
    """Multiplicações do score por modo de consulta e n, com razão em relação ao menor n."""
    linhas = []
    for n in ns:
        for modo, linhas_consulta in (("cls", 1), ("patch", n), ("all", n + 1)):
            medido = measured_score_mults(n, dim, heads, linhas_consulta)
            esperado = attention_score_mults(n, dim, heads, "aeca", linhas_consulta)
            linhas.append({"n": n, "query_mode": modo, "aeca_mults": medido["aeca"],
                           "mhsa_mults": medido["mhsa"], "analytic_aeca": esperado})
    df = pd.DataFrame(linhas)
    base = df[df["n"] == ns[0]].set_index("query_mode")
    df["aeca_ratio"] = df.apply(lambda r: r["aeca_mults"] / base.loc[r["query_mode"], "aeca_mults"], axis=1)
    df["mhsa_ratio"] = df.apply(lambda r: r["mhsa_mults"] / base.loc[r["query_mode"], "mhsa_mults"], axis=1)
    return df


def _tempo_score(q: Tensor, k: Tensor, repeticoes: int) -> float:
    """Melhor tempo por chamada de q @ k^T; cada amostra repete a chamada até durar ~0.2 s."""
    with no_grad():
        cronometro = timeit.Timer(lambda: matmul(q, swap_last(k)))
        chamadas, _ = cronometro.autorange()
        return min(cronometro.repeat(repeat=max(1, repeticoes), number=chamadas)) / chamadas


def score_walltime(n: int = 1024, dim: int = 384, heads: int = 8, repeticoes: int = 5,
                   seed: int = 0) -> Dict[str, float]:
    """
    Razão de tempo do passo de score entre n e n/4 tokens.

    AECA (uma linha de consulta) cresce linearmente (~4x); MHSA cresce
    quadraticamente (~16x).
    """
    rng = np.random.default_rng(seed)
    dh = dim // heads
    tempos = {}
    for tamanho in (n // 4, n):
        k = Tensor(rng.normal(size=(1, heads, tamanho + 1, dh)))
        q_cls = Tensor(rng.normal(size=(1, heads, 1, dh)))
        tempos[("aeca", tamanho)] = _tempo_score(q_cls, k, repeticoes)
        tempos[("mhsa", tamanho)] = _tempo_score(k, k, repeticoes)
    return {
        "n": n,
        "aeca_seconds": tempos[("aeca", n)],
        "mhsa_seconds": tempos[("mhsa", n)],
        "aeca_ratio": tempos[("aeca", n)] / tempos[("aeca", n // 4)],
        "mhsa_ratio": tempos[("mhsa", n)] / tempos[("mhsa", n // 4)],
    }


def run_bench(cfg: CaelConfig, walltime_n: int = 1024) -> Dict[str, pd.DataFrame]:
    """Tabelas do comando bench (parâmetros, multiplicações de score, tempo)."""
    referencia = reference_config(cfg)
    params = parameter_table(referencia)
    logger.info(f"  params(E=3, K=4) = {count_parameters(referencia):,}")
    for eixo in ("E", "K"):
        estado = "✓" if constant_deltas(params, eixo) else "✗"
        logger.info(f"  {estado} diferenças constantes em {eixo}")
    flops = flop_table(2 * referencia.dim, referencia.heads)
    tempo = pd.DataFrame([score_walltime(walltime_n, 2 * referencia.dim, referencia.heads)])
    logger.info(f"  tempo do score n={walltime_n}: razão AECA {tempo['aeca_ratio'][0]:.2f}, "
                f"MHSA {tempo['mhsa_ratio'][0]:.2f}")
    return {"params": params, "flops": flops, "walltime": tempo}
