#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Motor de Tensores com Diferenciação Automática (modo reverso)
=============================================================
Tensores densos em float64 (row-major), fita de gradientes por thread,
operações necessárias ao CAEL, perda de entropia cruzada, classe base
Module e verificação de gradiente por diferenças finitas centrais.

Cada operação:
- valida formatos e levanta ShapeError com o nome da operação
- calcula o resultado com numpy
- registra um nó na fita quando alguma entrada exige gradiente
"""

import logging
import threading
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import special, stats

logger = logging.getLogger(__name__)

LAYER_NORM_EPS = 1e-9
GRADCHECK_H = 1e-5
GRADCHECK_FLOOR = 1e-3

ArrayLike = Union[np.ndarray, float, int, Sequence[float], Sequence[Sequence[float]]]


# =============================================================================
# ERROS
# =============================================================================

class ShapeError(ValueError):
    """Formatos incompatíveis em uma operação."""

    def __init__(self, op: str, shape_a, shape_b=None, detalhe: str = ""):
        self.op = op
        self.shape_a = tuple(shape_a) if shape_a is not None else None
        self.shape_b = tuple(shape_b) if shape_b is not None else None
        mensagem = f"{op}: formatos incompatíveis {self.shape_a}"
        if shape_b is not None:
            mensagem += f" e {self.shape_b}"
        if detalhe:
            mensagem += f" ({detalhe})"
        super().__init__(mensagem)


class TapeError(RuntimeError):
    """Uso inválido da fita de gradientes (perda não escalar, fita vazia)."""


# =============================================================================
# TENSOR E FITA
# =============================================================================

class Tensor:
    """Array denso float64 que participa da fita de gradientes."""

    def __init__(self, data: ArrayLike, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.ascontiguousarray(np.asarray(data, dtype=np.float64))
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.size != 1:
            raise ShapeError("item", self.shape, detalhe="tensor não escalar")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        nome = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{nome})"

    # Operadores
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


def _as_tensor(valor) -> Tensor:
    return valor if isinstance(valor, Tensor) else Tensor(valor)


@dataclass
class Node:
    """Operação registrada na fita: entradas, saída e função de retropropagação."""

    op: str
    inputs: Tuple[Tensor, ...]
    output: Tensor
    backward_fn: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class GradTape:
    """Lista ordenada de nós; a ordem de gravação já é topológica."""

    def __init__(self):
        self.nodes: List[Node] = []
        self.enabled = True

    def record(self, node: Node) -> None:
        self.nodes.append(node)

    def clear(self) -> None:
        self.nodes.clear()

    def __len__(self) -> int:
        return len(self.nodes)


_estado = threading.local()


def get_tape() -> GradTape:
    """Fita da thread atual (cada thread tem a sua)."""
    fita = getattr(_estado, "tape", None)
    if fita is None:
        fita = GradTape()
        _estado.tape = fita
    return fita


@contextmanager
def no_grad() -> Iterator[None]:
    """Desliga a gravação na fita (avaliação, diferenças finitas)."""
    fita = get_tape()
    anterior = fita.enabled
    fita.enabled = False
    try:
        yield
    finally:
        fita.enabled = anterior


def _record(op: str, inputs: Sequence[Tensor], out_data: np.ndarray,
            backward_fn: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]) -> Tensor:
    fita = get_tape()
    precisa = fita.enabled and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=precisa)
    if precisa:
        fita.record(Node(op, tuple(inputs), out, backward_fn))
    return out


def backward(loss: Tensor, params: Optional[Iterable[Tensor]] = None) -> None:
    """
    Retropropaga a partir de uma perda escalar.

    Percorre a fita em ordem reversa visitando cada nó uma única vez,
    acumula .grad em todo tensor alcançado e limpa a fita ao final.
    Tensores com requires_grad que a perda não alcança (na fita ou em
    params) recebem gradiente zero.

    Args:
        loss: Tensor escalar (tamanho 1)
        params: Parâmetros extras que também devem terminar com .grad
    """
    if loss.size != 1:
        raise TapeError(f"backward exige perda escalar, recebeu formato {loss.shape}")
    fita = get_tape()
    if not fita.nodes:
        raise TapeError("backward: fita vazia (nenhuma operação com requires_grad foi gravada)")

    grads: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    tensores: Dict[int, Tensor] = {id(loss): loss}
    try:
        for node in reversed(fita.nodes):
            g = grads.pop(id(node.output), None)
            if g is None:
                continue
            node.output.grad = g if node.output.grad is None else node.output.grad + g
            for entrada, g_in in zip(node.inputs, node.backward_fn(g)):
                if g_in is None or not entrada.requires_grad:
                    continue
                chave = id(entrada)
                if g_in.shape != entrada.shape:
                    raise ShapeError(f"backward[{node.op}]", g_in.shape, entrada.shape)
                grads[chave] = grads[chave] + g_in if chave in grads else g_in
                tensores[chave] = entrada

        # Sobram apenas as folhas (parâmetros e entradas)
        for chave, g in grads.items():
            folha = tensores[chave]
            folha.grad = g.copy() if folha.grad is None else folha.grad + g

        for t in (*(e for node in fita.nodes for e in node.inputs), *(params or ())):
            if t.requires_grad and t.grad is None:
                t.grad = np.zeros_like(t.data)
    finally:
        fita.clear()


# =============================================================================
# OPERAÇÕES ELEMENTARES
# =============================================================================

def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Soma os eixos que foram expandidos por broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for eixo, tamanho in enumerate(shape):
        if tamanho == 1 and grad.shape[eixo] != 1:
            grad = grad.sum(axis=eixo, keepdims=True)
    return grad


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> Tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


def add(a: Tensor, b: Tensor) -> Tensor:
    """Soma elemento a elemento com broadcasting."""
    _broadcast_shape("add", a, b)
    return _record("add", (a, b), a.data + b.data,
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape("sub", a, b)
    return _record("sub", (a, b), a.data - b.data,
                   lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Produto elemento a elemento com broadcasting."""
    _broadcast_shape("mul", a, b)
    return _record("mul", (a, b), a.data * b.data,
                   lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def scale(a: Tensor, c: float) -> Tensor:
    return _record("scale", (a,), a.data * c, lambda g: (g * c,))


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def _backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _record("sum", (a,), np.asarray(out), _backward)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    """Média sobre os eixos indicados (todos por padrão)."""
    out = a.data.mean(axis=axis, keepdims=keepdims)
    contagem = a.size // max(np.asarray(out).size, 1) if axis is not None or keepdims else a.size

    def _backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / contagem, a.shape).copy(),)

    return _record("mean", (a,), np.asarray(out), _backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Produto matricial com broadcasting nos eixos de lote (ndim >= 2)."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul", a.shape, b.shape)
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError("matmul", a.shape, b.shape) from None

    def _backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _record("matmul", (a, b), out, _backward)


def linear(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """Transformação afim x @ w + b, com w no formato (entrada, saída)."""
    if w.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise ShapeError("linear", x.shape, w.shape)
    if b is not None and b.shape != (w.shape[1],):
        raise ShapeError("linear", w.shape, b.shape, "bias")
    out = x.data @ w.data
    if b is not None:
        out = out + b.data

    def _backward(g):
        gx = g @ w.data.T
        gw = x.data.reshape(-1, w.shape[0]).T @ g.reshape(-1, w.shape[1])
        gb = g.reshape(-1, w.shape[1]).sum(axis=0)
        return (gx, gw, gb) if b is not None else (gx, gw)

    entradas = (x, w, b) if b is not None else (x, w)
    return _record("linear", entradas, out, _backward)


def conv2d(x: Tensor, w: Tensor, b: Optional[Tensor] = None, stride: int = 1, padding: int = 0) -> Tensor:
    """
    Convolução 2D (correlação cruzada) com preenchimento por zeros.

    Args:
        x: Entrada (B, C, H, W)
        w: Pesos (O, C, kh, kw)
        b: Bias (O,) opcional
        stride: Passo
        padding: Preenchimento em cada borda

    Returns:
        Tensor (B, O, Ho, Wo)
    """
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ShapeError("conv2d", x.shape, w.shape)
    if b is not None and b.shape != (w.shape[0],):
        raise ShapeError("conv2d", w.shape, b.shape, "bias")
    _, _, altura, largura = x.shape
    _, _, kh, kw = w.shape
    p = padding
    ho = (altura + 2 * p - kh) // stride + 1
    wo = (largura + 2 * p - kw) // stride + 1
    if ho <= 0 or wo <= 0:
        raise ShapeError("conv2d", x.shape, w.shape, "imagem menor que o kernel")

    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p)))
    janelas = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    out = np.einsum("bchwij,ocij->bohw", janelas, w.data, optimize=True)
    if b is not None:
        out = out + b.data[None, :, None, None]

    def _backward(g):
        gw = np.einsum("bohw,bchwij->ocij", g, janelas, optimize=True)
        colunas = np.einsum("bohw,ocij->bchwij", g, w.data, optimize=True)
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += colunas[..., i, j]
        gx = gxp[:, :, p:p + altura, p:p + largura]
        if b is not None:
            return gx, gw, g.sum(axis=(0, 2, 3))
        return gx, gw

    entradas = (x, w, b) if b is not None else (x, w)
    return _record("conv2d", entradas, out, _backward)


# =============================================================================
# OPERAÇÕES DE FORMATO
# =============================================================================

def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", a.shape, shape) from None
    return _record("reshape", (a,), out, lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes: Optional[Sequence[int]] = None) -> Tensor:
    """Transposição materializada (cópia contígua)."""
    if axes is None:
        axes = tuple(range(a.ndim))[::-1]
    axes = tuple(axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ShapeError("transpose", a.shape, axes, "permutação inválida")
    inversa = tuple(np.argsort(axes))
    out = np.ascontiguousarray(np.transpose(a.data, axes))
    return _record("transpose", (a,), out, lambda g: (np.ascontiguousarray(np.transpose(g, inversa)),))


def swap_last(a: Tensor) -> Tensor:
    """Troca os dois últimos eixos."""
    eixos = list(range(a.ndim))
    eixos[-1], eixos[-2] = eixos[-2], eixos[-1]
    return transpose(a, eixos)


def expand(a: Tensor, shape: Sequence[int]) -> Tensor:
    """Broadcast materializado para o formato pedido."""
    shape = tuple(shape)
    try:
        out = np.broadcast_to(a.data, shape).copy()
    except ValueError:
        raise ShapeError("expand", a.shape, shape) from None
    return _record("expand", (a,), out, lambda g: (_unbroadcast(g, a.shape),))


def concat(tensores: Sequence[Tensor], axis: int = 0) -> Tensor:
    """Concatena ao longo de um eixo; os demais eixos devem coincidir."""
    if not tensores:
        raise ShapeError("concat", (), None, "lista vazia")
    base = tensores[0]
    eixo = axis % base.ndim
    for t in tensores[1:]:
        if t.ndim != base.ndim or any(t.shape[i] != base.shape[i] for i in range(base.ndim) if i != eixo):
            raise ShapeError("concat", base.shape, t.shape)
    out = np.concatenate([t.data for t in tensores], axis=eixo)
    cortes = np.cumsum([t.shape[eixo] for t in tensores])[:-1]

    def _backward(g):
        return tuple(np.ascontiguousarray(parte) for parte in np.split(g, cortes, axis=eixo))

    return _record("concat", tuple(tensores), out, _backward)


def slice_axis(a: Tensor, start: int, stop: int, axis: int = 0) -> Tensor:
    """Fatia contígua [start, stop) ao longo de um eixo."""
    eixo = axis % a.ndim
    if not (0 <= start <= stop <= a.shape[eixo]):
        raise ShapeError("slice", a.shape, (start, stop), f"eixo {eixo}")
    indice = [slice(None)] * a.ndim
    indice[eixo] = slice(start, stop)
    indice = tuple(indice)
    out = np.ascontiguousarray(a.data[indice])

    def _backward(g):
        ga = np.zeros_like(a.data)
        ga[indice] = g
        return (ga,)

    return _record("slice", (a,), out, _backward)


def split(a: Tensor, sizes: Sequence[int], axis: int = 0) -> List[Tensor]:
    """Divide em partes de tamanhos dados (soma deve ser o tamanho do eixo)."""
    eixo = axis % a.ndim
    if sum(sizes) != a.shape[eixo] or any(s < 0 for s in sizes):
        raise ShapeError("split", a.shape, tuple(sizes), f"eixo {eixo}")
    partes, inicio = [], 0
    for tamanho in sizes:
        partes.append(slice_axis(a, inicio, inicio + tamanho, eixo))
        inicio += tamanho
    return partes


# =============================================================================
# NÃO-LINEARIDADES E NORMALIZAÇÃO
# =============================================================================

def softmax(a: Tensor) -> Tensor:
    """Softmax estável no último eixo (subtrai o máximo)."""
    deslocado = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(deslocado)
    out = e / e.sum(axis=-1, keepdims=True)

    def _backward(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _record("softmax", (a,), out, _backward)


def gelu(a: Tensor) -> Tensor:
    """GELU exata: x * Phi(x)."""
    x = a.data
    cdf = 0.5 * (1.0 + special.erf(x / np.sqrt(2.0)))
    out = x * cdf

    def _backward(g):
        pdf = np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi)
        return (g * (cdf + x * pdf),)

    return _record("gelu", (a,), out, _backward)


def layer_norm(x: Tensor, gamma: Optional[Tensor] = None, beta: Optional[Tensor] = None,
               eps: float = LAYER_NORM_EPS) -> Tensor:
    """Normalização por linha no último eixo, com afim opcional (gamma, beta)."""
    dim = x.shape[-1]
    for nome, p in (("gamma", gamma), ("beta", beta)):
        if p is not None and p.shape != (dim,):
            raise ShapeError("layer_norm", x.shape, p.shape, nome)
    media = x.data.mean(axis=-1, keepdims=True)
    centrado = x.data - media
    inv_std = 1.0 / np.sqrt((centrado ** 2).mean(axis=-1, keepdims=True) + eps)
    xhat = centrado * inv_std
    out = xhat
    if gamma is not None:
        out = out * gamma.data
    if beta is not None:
        out = out + beta.data

    def _backward(g):
        dxhat = g * gamma.data if gamma is not None else g
        dx = inv_std / dim * (dim * dxhat - dxhat.sum(axis=-1, keepdims=True)
                              - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True))
        grads = [dx]
        if gamma is not None:
            grads.append((g * xhat).reshape(-1, dim).sum(axis=0))
        if beta is not None:
            grads.append(g.reshape(-1, dim).sum(axis=0))
        return tuple(grads)

    entradas = tuple(t for t in (x, gamma, beta) if t is not None)
    return _record("layer_norm", entradas, out, _backward)


# =============================================================================
# PERDA
# =============================================================================

def cross_entropy(logits: Tensor, labels: Sequence[int]) -> Tensor:
    """
    Entropia cruzada média do lote, via log-sum-exp estável.

    Args:
        logits: Tensor (B, C)
        labels: B inteiros em [0, C)

    Returns:
        Tensor escalar
    """
    rotulos = np.asarray(labels)
    if logits.ndim != 2 or rotulos.shape != (logits.shape[0],):
        raise ShapeError("cross_entropy", logits.shape, rotulos.shape)
    n_classes = logits.shape[1]
    if rotulos.size and (not np.issubdtype(rotulos.dtype, np.integer)
                         or rotulos.min() < 0 or rotulos.max() >= n_classes):
        raise ValueError(f"cross_entropy: rótulo fora do intervalo [0, {n_classes})")
    lote = logits.shape[0]
    maximo = logits.data.max(axis=1, keepdims=True)
    lse = maximo[:, 0] + np.log(np.exp(logits.data - maximo).sum(axis=1))
    perda = (lse - logits.data[np.arange(lote), rotulos]).mean()

    def _backward(g):
        probs = np.exp(logits.data - lse[:, None])
        probs[np.arange(lote), rotulos] -= 1.0
        return (probs * (g / lote),)

    return _record("cross_entropy", (logits,), np.asarray(perda), _backward)


# =============================================================================
# INICIALIZAÇÃO E CAMADAS
# =============================================================================

def trunc_normal(shape: Sequence[int], std: float, rng: np.random.Generator) -> np.ndarray:
    """Normal truncada em +-2 desvios (mesma distribuição para tokens e embeddings)."""
    return stats.truncnorm.rvs(-2.0, 2.0, loc=0.0, scale=std, size=tuple(shape), random_state=rng)


class Module:
    """Classe base: coleta parâmetros em ordem determinística de atributos."""

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
        for nome, valor in vars(self).items():
            if isinstance(valor, Tensor):
                if valor.requires_grad:
                    yield prefix + nome, valor
            elif isinstance(valor, Module):
                yield from valor.named_parameters(f"{prefix}{nome}.")
            elif isinstance(valor, (list, tuple)):
                for i, item in enumerate(valor):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{nome}.{i}.")
            elif isinstance(valor, dict):
                for chave, item in valor.items():
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{nome}.{chave}.")

    def parameters(self) -> List[Tensor]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {nome: p.data.copy() for nome, p in self.named_parameters()}

    def load_state_dict(self, estado: Dict[str, np.ndarray]) -> None:
        """Carrega arrays por nome; nomes ou formatos divergentes são erro."""
        proprios = dict(self.named_parameters())
        faltando = sorted(set(proprios) - set(estado))
        sobrando = sorted(set(estado) - set(proprios))
        if faltando or sobrando:
            raise ValueError(f"state_dict divergente: faltando={faltando[:5]} sobrando={sobrando[:5]}")
        for nome, p in proprios.items():
            if estado[nome].shape != p.shape:
                raise ShapeError(f"load_state_dict[{nome}]", p.shape, estado[nome].shape)
            p.data = np.ascontiguousarray(estado[nome], dtype=np.float64)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, std: float = 0.02, bias: bool = True):
        self.weight = Tensor(trunc_normal((d_in, d_out), std, rng), requires_grad=True)
        self.bias = Tensor(np.zeros(d_out), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return linear(x, self.weight, self.bias)


class Conv2d(Module):
    """Convolução com inicialização normal truncada escalada por fan-in (estilo Kaiming)."""

    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator,
                 kernel: int = 3, stride: int = 2, padding: int = 1):
        fan_in = c_in * kernel * kernel
        self.weight = Tensor(trunc_normal((c_out, c_in, kernel, kernel), np.sqrt(2.0 / fan_in), rng),
                             requires_grad=True)
        self.bias = Tensor(np.zeros(c_out), requires_grad=True)
        self.stride = stride
        self.padding = padding

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class LayerNorm(Module):
    def __init__(self, dim: int):
        self.weight = Tensor(np.ones(dim), requires_grad=True)
        self.bias = Tensor(np.zeros(dim), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.weight, self.bias)


# =============================================================================
# VERIFICAÇÃO DE GRADIENTE
# =============================================================================

def gradcheck(fn: Callable[..., Tensor], inputs: Sequence[Tensor],
              h: float = GRADCHECK_H, floor: float = GRADCHECK_FLOOR) -> float:
    """
    Compara gradientes analíticos com diferenças finitas centrais.

    Erro relativo por elemento: |a - n| / max(|a|, |n|, floor).

    Args:
        fn: Função que recebe os tensores e devolve uma perda escalar
        inputs: Tensores com requires_grad=True
        h: Passo das diferenças finitas
        floor: Piso do denominador

    Returns:
        Maior erro relativo encontrado
    """
    get_tape().clear()
    for t in inputs:
        t.grad = None
    backward(fn(*inputs))
    analiticos = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in inputs]

    pior = 0.0
    with no_grad():
        for t, analitico in zip(inputs, analiticos):
            plano = t.data.reshape(-1)
            for i in range(plano.size):
                original = plano[i]
                plano[i] = original + h
                mais = fn(*inputs).item()
                plano[i] = original - h
                menos = fn(*inputs).item()
                plano[i] = original
                numerico = (mais - menos) / (2.0 * h)
                a = analitico.reshape(-1)[i]
                erro = abs(a - numerico) / max(abs(a), abs(numerico), floor)
                pior = max(pior, erro)
    return pior
