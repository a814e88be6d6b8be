#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Treino e inferência do CAEL: laço de épocas com Adam e agendamento em
degraus, registro de perdas (CSV) e checkpoints.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np
import pandas as pd

from config import CaelConfig, config_from_text, dump_config
from maet import CaelModel
from optim import AdamState, adam_step, apply_schedule, load_checkpoint, save_checkpoint
from tensor import Tensor, backward, cross_entropy, get_tape, no_grad, softmax

logger = logging.getLogger(__name__)

LOSS_LOG_COLUMNS = ["epoch", "step", "loss", "lr"]


@dataclass
class FitResult:
    model: CaelModel
    state: AdamState
    losses: pd.DataFrame


def new_adam_state(cfg: CaelConfig) -> AdamState:
    return AdamState(learning_rate=cfg.learning_rate, weight_decay=cfg.weight_decay,
                     beta1=cfg.beta1, beta2=cfg.beta2, epsilon=cfg.adam_eps)


def fit(model: CaelModel, images: np.ndarray, labels: np.ndarray, cfg: CaelConfig,
        epochs: Optional[int] = None, edges: Optional[np.ndarray] = None,
        state: Optional[AdamState] = None, seed: Optional[int] = None,
        loss_log: Optional[Union[str, Path]] = None) -> FitResult:
    """
    Treina o modelo por épocas com mini-lotes embaralhados.

    Args:
        model: CaelModel a treinar (in place)
        images: (B, H, W, 3) em [0, 1]
        labels: B inteiros em [0, n_classes)
        cfg: Configuração (batch, Adam, agendamento)
        epochs: Número de épocas (padrão cfg.epochs)
        edges: Imagens de borda pré-calculadas (calculadas aqui se None)
        state: AdamState para continuar um treino
        seed: Semente do embaralhamento (padrão cfg.seed)
        loss_log: CSV de saída com epoch, step, loss, lr

    Returns:
        FitResult com modelo, estado do otimizador e perdas
    """
    epochs = cfg.epochs if epochs is None else epochs
    seed = cfg.seed if seed is None else seed
    labels = np.asarray(labels, dtype=np.int64)
    if len(images) != len(labels):
        raise ValueError(f"fit: {len(images)} imagens e {len(labels)} rótulos")
    if len(images) == 0:
        raise ValueError("fit: conjunto de treino vazio")
    if edges is None and "E" in cfg.branches:
        edges = model.edges_for(images)
    state = state or new_adam_state(cfg)
    parametros = list(model.named_parameters())

    registros = []
    passo = 0
    get_tape().clear()
    for epoca in range(epochs):
        lr = apply_schedule(state, epoca, cfg.lr_step_epochs, cfg.lr_gamma)
        ordem = np.random.default_rng([seed, epoca]).permutation(len(images))
        perdas_epoca = []
        for inicio in range(0, len(ordem), cfg.batch_size):
            lote = ordem[inicio:inicio + cfg.batch_size]
            bordas = edges[lote] if edges is not None else None
            logits, _ = model(images[lote], bordas)
            perda = cross_entropy(logits, labels[lote])
            model.zero_grad()
            backward(perda, (p for _, p in parametros))
            adam_step(parametros, state)
            valor = perda.item()
            perdas_epoca.append(valor)
            registros.append({"epoch": epoca, "step": passo, "loss": valor, "lr": lr})
            passo += 1
        logger.info(f"  Época {epoca + 1}/{epochs} | perda média {np.mean(perdas_epoca):.4f} | lr {lr:.2e}")

    perdas = pd.DataFrame(registros, columns=LOSS_LOG_COLUMNS)
    if loss_log is not None:
        Path(loss_log).parent.mkdir(parents=True, exist_ok=True)
        perdas.to_csv(loss_log, index=False, float_format="%.10g")
        logger.info(f"✓ Log de perdas: {loss_log}")
    return FitResult(model, state, perdas)


def predict_proba(model: CaelModel, images: np.ndarray, edges: Optional[np.ndarray] = None,
                  batch_size: int = 64) -> np.ndarray:
    """Probabilidades (B, n_classes) sem gravar na fita."""
    if len(images) == 0:
        return np.zeros((0, model.cfg.n_classes))
    if edges is None and "E" in model.cfg.branches:
        edges = model.edges_for(images)
    saidas = []
    with no_grad():
        for inicio in range(0, len(images), batch_size):
            fim = inicio + batch_size
            logits, _ = model(images[inicio:fim], edges[inicio:fim] if edges is not None else None)
            saidas.append(softmax(logits).data)
    return np.concatenate(saidas)


def predict_scores(model: CaelModel, images: np.ndarray, edges: Optional[np.ndarray] = None,
                   batch_size: int = 64) -> np.ndarray:
    """Probabilidade de fake (1 - p(real)) por imagem."""
    return 1.0 - predict_proba(model, images, edges, batch_size)[:, 0]


def save_model(path: Union[str, Path], model: CaelModel, state: Optional[AdamState] = None) -> Path:
    return save_checkpoint(path, model.state_dict(), state, dump_config(model.cfg))


def load_model(path: Union[str, Path]):
    """Reconstrói o modelo a partir do checkpoint (configuração embutida)."""
    ckpt = load_checkpoint(path)
    cfg = config_from_text(ckpt.config_text)
    model = CaelModel(cfg)
    model.load_state_dict(ckpt.tensors)
    return model, ckpt.state
