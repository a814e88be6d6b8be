#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Otimizador Adam, agendamento da taxa de aprendizado e checkpoints.

Formato do checkpoint (versão 1, little-endian):

    magic        8 bytes   b"CAELCKPT"
    version      uint32    1
    config_len   uint32    tamanho do texto de configuração
    config       bytes     UTF-8 no dialeto chave=valor
    n_tensors    uint32
    tensor[i]:
        name_len uint16, name UTF-8,
        ndim     uint8,  shape ndim x uint32,
        data     prod(shape) x float64
    has_adam     uint8     0 ou 1
    adam (se has_adam):
        learning_rate, weight_decay, beta1, beta2, epsilon, initial_lr   6 x float64
        step_count   uint64
        n_moments    uint32, seguido de registros de tensor com nomes "m/<param>" e "v/<param>"
"""

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Dict, Iterable, NamedTuple, Optional, Tuple, Union

import numpy as np

from tensor import Tensor

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"CAELCKPT"
CHECKPOINT_VERSION = 1


class NumericalError(FloatingPointError):
    """Gradiente não finito detectado durante a atualização."""


class CheckpointError(ValueError):
    """Arquivo de checkpoint inválido ou de versão desconhecida."""


# =============================================================================
# ADAM
# =============================================================================

@dataclass
class AdamState:
    """Estado do Adam com decaimento de pesos como termo L2 no gradiente."""

    learning_rate: float = 1e-4
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    initial_lr: Optional[float] = None
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.initial_lr is None:
            self.initial_lr = self.learning_rate


def step_lr(initial_lr: float, epoch: int, step_epochs: int = 15, gamma: float = 0.1) -> float:
    """Taxa de aprendizado dividida por 10 a cada step_epochs épocas."""
    return initial_lr * gamma ** (epoch // step_epochs)


def apply_schedule(state: AdamState, epoch: int, step_epochs: int = 15, gamma: float = 0.1) -> float:
    state.learning_rate = step_lr(state.initial_lr, epoch, step_epochs, gamma)
    return state.learning_rate


def adam_step(params: Union[Dict[str, Tensor], Iterable[Tuple[str, Tensor]]], state: AdamState) -> AdamState:
    """
    Um passo do Adam sobre os parâmetros (atualizados in place).

    Todos os gradientes são verificados antes de qualquer atualização; um
    valor não finito aborta o passo com o nome do parâmetro.

    Args:
        params: Mapeamento nome -> Tensor (ou pares nome, Tensor)
        state: AdamState (momentos criados sob demanda)

    Returns:
        O mesmo AdamState, com step_count incrementado
    """
    itens = list(params.items()) if isinstance(params, dict) else list(params)
    if state.step_count < 0:
        raise ValueError("step_count negativo")

    gradientes = {}
    for nome, p in itens:
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if g.shape != p.shape:
            raise ValueError(f"adam_step: gradiente de {nome} com formato {g.shape}, esperado {p.shape}")
        if not np.all(np.isfinite(g)):
            ruins = int(np.count_nonzero(~np.isfinite(g)))
            logger.error(f"✗ Gradiente não finito em {nome} ({ruins} valores) no passo {state.step_count}")
            raise NumericalError(f"gradiente não finito em '{nome}' ({ruins} de {g.size} valores), "
                                 f"passo {state.step_count}")
        gradientes[nome] = g + state.weight_decay * p.data if state.weight_decay else g

    t = state.step_count + 1
    correcao1 = 1.0 - state.beta1 ** t
    correcao2 = 1.0 - state.beta2 ** t
    for nome, p in itens:
        g = gradientes[nome]
        m = state.m.get(nome)
        v = state.v.get(nome)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        state.m[nome] = m
        state.v[nome] = v
        p.data = p.data - state.learning_rate * (m / correcao1) / (np.sqrt(v / correcao2) + state.epsilon)

    state.step_count = t
    return state


# =============================================================================
# CHECKPOINT
# =============================================================================

class Checkpoint(NamedTuple):
    tensors: Dict[str, np.ndarray]
    state: Optional[AdamState]
    config_text: str


def _escrever_tensor(f: BinaryIO, nome: str, array: np.ndarray) -> None:
    nome_bytes = nome.encode("utf-8")
    f.write(struct.pack("<H", len(nome_bytes)))
    f.write(nome_bytes)
    f.write(struct.pack("<B", array.ndim))
    f.write(struct.pack(f"<{array.ndim}I", *array.shape))
    f.write(np.ascontiguousarray(array, dtype="<f8").tobytes())


def _ler(f: BinaryIO, n: int, caminho) -> bytes:
    dados = f.read(n)
    if len(dados) != n:
        raise CheckpointError(f"Checkpoint truncado: {caminho}")
    return dados


def _ler_tensor(f: BinaryIO, caminho) -> Tuple[str, np.ndarray]:
    (tamanho_nome,) = struct.unpack("<H", _ler(f, 2, caminho))
    nome = _ler(f, tamanho_nome, caminho).decode("utf-8")
    (ndim,) = struct.unpack("<B", _ler(f, 1, caminho))
    shape = struct.unpack(f"<{ndim}I", _ler(f, 4 * ndim, caminho))
    quantidade = int(np.prod(shape)) if ndim else 1
    dados = np.frombuffer(_ler(f, 8 * quantidade, caminho), dtype="<f8")
    return nome, dados.astype(np.float64).reshape(shape)


def save_checkpoint(path: Union[str, Path], tensors: Dict[str, np.ndarray],
                    state: Optional[AdamState] = None, config_text: str = "") -> Path:
    """
    Grava parâmetros nomeados, estado do Adam e configuração.

    Args:
        path: Arquivo de destino
        tensors: Mapeamento nome -> array
        state: AdamState opcional
        config_text: Configuração efetiva (chave=valor)

    Returns:
        Caminho gravado
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    texto = config_text.encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        f.write(struct.pack("<I", len(texto)))
        f.write(texto)
        f.write(struct.pack("<I", len(tensors)))
        for nome, array in tensors.items():
            _escrever_tensor(f, nome, array)
        f.write(struct.pack("<B", 1 if state is not None else 0))
        if state is not None:
            f.write(struct.pack("<6d", state.learning_rate, state.weight_decay, state.beta1,
                                state.beta2, state.epsilon, state.initial_lr))
            f.write(struct.pack("<Q", state.step_count))
            momentos = [(f"m/{k}", a) for k, a in state.m.items()] + [(f"v/{k}", a) for k, a in state.v.items()]
            f.write(struct.pack("<I", len(momentos)))
            for nome, array in momentos:
                _escrever_tensor(f, nome, array)
    logger.info(f"✓ Checkpoint salvo: {path.name} ({len(tensors)} tensores)")
    return path


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    """Lê um checkpoint gravado por save_checkpoint."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Checkpoint não encontrado: {path}")
    with open(path, "rb") as f:
        if _ler(f, 8, path) != CHECKPOINT_MAGIC:
            raise CheckpointError(f"Arquivo não é um checkpoint CAEL: {path}")
        (versao,) = struct.unpack("<I", _ler(f, 4, path))
        if versao != CHECKPOINT_VERSION:
            raise CheckpointError(f"Versão de checkpoint não suportada: {versao}")
        (tamanho,) = struct.unpack("<I", _ler(f, 4, path))
        config_text = _ler(f, tamanho, path).decode("utf-8")
        (quantidade,) = struct.unpack("<I", _ler(f, 4, path))
        tensores = dict(_ler_tensor(f, path) for _ in range(quantidade))

        state = None
        (tem_adam,) = struct.unpack("<B", _ler(f, 1, path))
        if tem_adam:
            lr, wd, b1, b2, eps, lr0 = struct.unpack("<6d", _ler(f, 48, path))
            (passos,) = struct.unpack("<Q", _ler(f, 8, path))
            state = AdamState(learning_rate=lr, weight_decay=wd, beta1=b1, beta2=b2,
                              epsilon=eps, step_count=passos, initial_lr=lr0)
            (n_momentos,) = struct.unpack("<I", _ler(f, 4, path))
            for _ in range(n_momentos):
                nome, array = _ler_tensor(f, path)
                tipo, parametro = nome.split("/", 1)
                (state.m if tipo == "m" else state.v)[parametro] = array
    return Checkpoint(tensores, state, config_text)
