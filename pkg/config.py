#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Configurações do projeto CAEL (detector aparência-borda).

O arquivo cael.cfg é a única fonte dos valores padrão. Este módulo define os
caminhos, o dataclass CaelConfig e o dialeto chave=valor usado tanto pelo
arquivo de configuração quanto pelos overrides da linha de comando.
"""

import hashlib
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Dict, Iterable, Optional, Tuple, Union

# Diretório base
BASE_DIR = Path(__file__).parent

# Arquivo de configuração padrão
DEFAULT_CONFIG_PATH = BASE_DIR / "cael.cfg"

# Saídas
OUTPUT_DIR = BASE_DIR / "runs"
LOGS_DIR_NAME = "logs"
EFFECTIVE_CONFIG_NAME = "effective.cfg"
CHECKPOINT_NAME = "checkpoint.cael"
MANIFEST_NAME = "manifest.tsv"

# Enumerações fechadas
FUSION_MODES = ("cross_attention", "concatenation", "summation")
QUERY_MODES = ("cls", "patch", "all")
BRANCHES = ("F", "C", "E")
OPERATORS = ("sobel", "canny", "log", "marrhildreth", "dct")
PROTOCOLS = ("holdout", "cross_generator", "cross_forgery", "level", "robustness")
LEVELS = ("coarse", "forgery", "generator")


class ConfigError(ValueError):
    """Erro de configuração (chave desconhecida, valor inválido, etc.)."""


@dataclass(frozen=True)
class CaelConfig:
    """Todos os hiperparâmetros de arquitetura, treino, dados e avaliação."""

    # Arquitetura
    K: int
    S: int
    L: int
    E: int
    N: int
    heads: int
    dim: int
    image_size: int
    mlp_ratio: float
    fine_channels: int
    coarse_channels: int
    patch_size: int
    fusion_mode: str
    query_mode: str
    aeca_enabled: bool
    branches: Tuple[str, ...]
    operator: str
    n_classes: int

    # Treino
    epochs: int
    batch_size: int
    learning_rate: float
    weight_decay: float
    lr_step_epochs: int
    lr_gamma: float
    beta1: float
    beta2: float
    adam_eps: float
    init_std: float
    seed: int

    # Operadores de imagem
    canny_low: float
    canny_high: float
    canny_sigma: float
    log_sigma: float
    mh_threshold: float

    # Corpus sintético
    n_real: int
    n_gan: int
    n_diffusion: int
    n_am: int
    n_fs: int
    gan_strength: float
    diffusion_strength: float
    am_strength: float
    fs_strength: float
    split_ratios: Tuple[float, ...]
    workers: int

    # Avaliação
    protocol: str
    level: str
    seeds: Tuple[int, ...]
    cell_epochs: int
    cell_train_limit: int
    threshold: float
    corruption_levels: Tuple[int, ...]

    def validate(self) -> "CaelConfig":
        """Verifica invariantes; levanta ConfigError listando todos os problemas."""
        problemas = []
        if self.heads <= 0 or self.dim % self.heads != 0:
            problemas.append(f"dim={self.dim} não é divisível por heads={self.heads}")
        if self.heads > 0 and (2 * self.dim) % self.heads != 0:
            problemas.append(f"2*dim={2 * self.dim} não é divisível por heads={self.heads}")
        if self.image_size <= 0 or self.image_size % 32 != 0:
            problemas.append(f"image_size={self.image_size} precisa ser múltiplo de 32")
        elif self.patch_size <= 0 or (self.image_size // 4) % self.patch_size != 0:
            problemas.append(f"grade {self.image_size // 4} não divisível por patch_size={self.patch_size}")
        elif (self.image_size // 4) // self.patch_size != self.token_grid:
            problemas.append(f"patch_size={self.patch_size} gera n diferente do ramo fino (use 8: H/4 / p = H/32)")
        for nome in ("K", "S", "L", "E", "N"):
            if getattr(self, nome) < 0:
                problemas.append(f"{nome} não pode ser negativo")
        if not self.branches or any(b not in BRANCHES for b in self.branches):
            problemas.append(f"branches inválido: {','.join(self.branches)} (use subconjunto de F,C,E)")
        if len(set(self.branches)) != len(self.branches):
            problemas.append("branches repetido")
        if self.fusion_mode not in FUSION_MODES:
            problemas.append(f"fusion_mode desconhecido: {self.fusion_mode}")
        if self.query_mode not in QUERY_MODES:
            problemas.append(f"query_mode desconhecido: {self.query_mode}")
        if self.operator not in OPERATORS:
            problemas.append(f"operator desconhecido: {self.operator}")
        if self.protocol not in PROTOCOLS:
            problemas.append(f"protocol desconhecido: {self.protocol}")
        if self.level not in LEVELS:
            problemas.append(f"level desconhecido: {self.level}")
        if self.n_classes < 2:
            problemas.append("n_classes precisa ser >= 2")
        if self.batch_size <= 0 or self.epochs < 0:
            problemas.append("batch_size > 0 e epochs >= 0 são obrigatórios")
        if len(self.split_ratios) != 3 or abs(sum(self.split_ratios) - 1.0) > 1e-9:
            problemas.append(f"split_ratios precisa ter 3 valores somando 1: {self.split_ratios}")
        if any(lv < 0 or lv > 5 for lv in self.corruption_levels):
            problemas.append("corruption_levels fora de 0..5")
        if problemas:
            raise ConfigError("; ".join(problemas))
        return self

    @property
    def token_grid(self) -> int:
        """Lado da grade de tokens (n = token_grid ** 2)."""
        return self.image_size // 32

    @property
    def n_tokens(self) -> int:
        return self.token_grid ** 2

    def with_overrides(self, **valores) -> "CaelConfig":
        return replace(self, **valores).validate()


# =============================================================================
# DIALETO CHAVE=VALOR
# =============================================================================

_CAMPOS = {f.name: f for f in fields(CaelConfig)}


def _converter(nome: str, bruto: str):
    """Converte o texto de um valor conforme o tipo do campo."""
    tipo = _CAMPOS[nome].type
    texto = bruto.strip()
    try:
        if tipo in (int, "int"):
            return int(texto)
        if tipo in (float, "float"):
            return float(texto)
        if tipo in (bool, "bool"):
            if texto.lower() in ("true", "1", "yes", "sim"):
                return True
            if texto.lower() in ("false", "0", "no", "nao", "não"):
                return False
            raise ValueError(texto)
        if tipo in (str, "str"):
            return texto
        itens = [p.strip() for p in texto.split(",") if p.strip()]
        if "float" in str(tipo):
            return tuple(float(p) for p in itens)
        if "int" in str(tipo):
            return tuple(int(p) for p in itens)
        return tuple(itens)
    except ValueError:
        raise ConfigError(f"Valor inválido para '{nome}': {bruto!r}") from None


def _formatar(valor) -> str:
    if isinstance(valor, tuple):
        return ",".join(str(v) for v in valor)
    if isinstance(valor, bool):
        return "true" if valor else "false"
    return str(valor)


def parse_pairs(linhas: Iterable[str], origem: str = "<overrides>") -> Dict[str, object]:
    """
    Lê linhas no formato 'chave = valor' ('#' inicia comentário).

    Args:
        linhas: Linhas de texto
        origem: Nome usado nas mensagens de erro

    Returns:
        Dicionário chave -> valor já convertido
    """
    valores = {}
    for numero, linha in enumerate(linhas, 1):
        conteudo = linha.split("#", 1)[0].strip()
        if not conteudo:
            continue
        if "=" not in conteudo:
            raise ConfigError(f"{origem}:{numero}: esperado 'chave=valor', encontrado {conteudo!r}")
        chave, bruto = conteudo.split("=", 1)
        chave = chave.strip()
        if chave not in _CAMPOS:
            raise ConfigError(f"{origem}:{numero}: chave desconhecida '{chave}'")
        valores[chave] = _converter(chave, bruto)
    return valores


def load_config(path: Optional[Union[str, Path]] = None,
                overrides: Optional[Iterable[str]] = None,
                **extras) -> CaelConfig:
    """
    Carrega a configuração efetiva: arquivo padrão, arquivo do usuário e overrides.

    Args:
        path: Arquivo chave=valor do usuário (opcional)
        overrides: Lista de strings 'chave=valor' (ex: vindas de --set)
        **extras: Overrides já tipados (usado nos testes)

    Returns:
        CaelConfig validado
    """
    with open(DEFAULT_CONFIG_PATH, encoding="utf-8") as f:
        valores = parse_pairs(f, str(DEFAULT_CONFIG_PATH))

    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"Arquivo de configuração não encontrado: {path}")
        with open(path, encoding="utf-8") as f:
            valores.update(parse_pairs(f, str(path)))

    if overrides:
        valores.update(parse_pairs(overrides))

    for chave, valor in extras.items():
        if chave not in _CAMPOS:
            raise ConfigError(f"chave desconhecida '{chave}'")
        valores[chave] = valor

    faltando = [nome for nome in _CAMPOS if nome not in valores]
    if faltando:
        raise ConfigError(f"Chaves ausentes na configuração: {', '.join(faltando)}")

    return CaelConfig(**valores).validate()


def dump_config(cfg: CaelConfig) -> str:
    """Serializa a configuração no mesmo dialeto chave=valor."""
    return "".join(f"{f.name} = {_formatar(getattr(cfg, f.name))}\n" for f in fields(CaelConfig))


def config_from_text(texto: str) -> CaelConfig:
    """Reconstrói um CaelConfig a partir do texto gerado por dump_config."""
    valores = parse_pairs(texto.splitlines(), "<checkpoint>")
    faltando = [nome for nome in _CAMPOS if nome not in valores]
    if faltando:
        raise ConfigError(f"Chaves ausentes na configuração: {', '.join(faltando)}")
    return CaelConfig(**valores).validate()


def config_fingerprint(cfg: CaelConfig) -> str:
    """Impressão digital (sha256, 16 hex) da configuração efetiva."""
    return hashlib.sha256(dump_config(cfg).encode("utf-8")).hexdigest()[:16]
