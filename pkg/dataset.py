#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Corpus Sintético e Manifesto Hierárquico
========================================
Gera um benchmark procedural no estilo da taxonomia de 4 níveis
(real/fake -> tipo de falsificação -> família de método -> gerador),
divide em train/val/test com exclusividade de identidade e lê/grava o
manifesto (TSV com comentários '#').

Famílias:
- smooth_real            : gradientes radiais suaves + ruído passa-baixa
- grid_artifact_gan      : base real + resíduo periódico em grade (período 4-8 px)
- low_artifact_diffusion : base real + resíduo de alta frequência muito fraco
- patch_edit_am          : real com uma região retangular re-sintetizada
- blend_boundary_fs      : dois reais misturados numa elipse com anel de borda visível
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import ndimage

import image_ops

logger = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")
NONE = "none"

LEVEL1 = ("real", "fake")
LEVEL2 = ("EFS", "AM", "FS")
LEVEL3 = ("diffusion", "gan")

# Número de classes por nível de classificação
LEVEL_CLASSES = {"coarse": 2, "forgery": 4, "generator": 5}


class ManifestError(ValueError):
    """Manifesto inválido; carrega a lista completa de problemas."""

    def __init__(self, problemas: Sequence[str], path: Optional[Path] = None):
        self.problems = list(problemas)
        self.path = path
        origem = f"{path}: " if path else ""
        resumo = "; ".join(self.problems[:10])
        extra = f" (+{len(self.problems) - 10})" if len(self.problems) > 10 else ""
        super().__init__(f"{origem}{len(self.problems)} problema(s) no manifesto: {resumo}{extra}")


class CorpusWriteError(OSError):
    """Falha ao gravar um arquivo do corpus."""

    def __init__(self, path: Path, causa: Exception):
        self.path = Path(path)
        super().__init__(f"Falha ao gravar {self.path}: {causa}")


class SplitError(ValueError):
    """Proporções inválidas ou identidades insuficientes para as partições."""


# =============================================================================
# TIPOS
# =============================================================================

@dataclass(frozen=True)
class TaxonomyLabel:
    level1: str
    level2: str = NONE
    level3: str = NONE
    level4: str = NONE

    def problems(self) -> List[str]:
        erros = []
        if self.level1 not in LEVEL1:
            erros.append(f"level1 inválido: {self.level1}")
        elif self.level1 == "real":
            if (self.level2, self.level3, self.level4) != (NONE, NONE, NONE):
                erros.append(f"real com níveis 2-4 preenchidos: {self.level2}/{self.level3}/{self.level4}")
        else:
            if self.level2 not in LEVEL2:
                erros.append(f"level2 inválido para fake: {self.level2}")
            if self.level3 not in LEVEL3:
                erros.append(f"level3 inválido para fake: {self.level3}")
            if not self.level4 or self.level4 == NONE:
                erros.append("level4 ausente para fake")
        return erros

    def validate(self) -> "TaxonomyLabel":
        erros = self.problems()
        if erros:
            raise ValueError("; ".join(erros))
        return self

    @property
    def is_fake(self) -> bool:
        return self.level1 == "fake"


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    label: TaxonomyLabel
    split: str
    identity_id: Optional[int] = None

    @property
    def family(self) -> str:
        """Família sintética deduzida do rótulo (ou 'other')."""
        return FAMILY_BY_LABEL.get(self.label, "other")


@dataclass(frozen=True)
class SyntheticFamily:
    kind: str
    artifact_strength: float

    @property
    def label(self) -> TaxonomyLabel:
        return FAMILY_LABELS[self.kind]


FAMILIES = ("smooth_real", "grid_artifact_gan", "low_artifact_diffusion", "patch_edit_am", "blend_boundary_fs")

FAMILY_LABELS = {
    "smooth_real": TaxonomyLabel("real"),
    "grid_artifact_gan": TaxonomyLabel("fake", "EFS", "gan", "gridgan"),
    "low_artifact_diffusion": TaxonomyLabel("fake", "EFS", "diffusion", "softdiff"),
    "patch_edit_am": TaxonomyLabel("fake", "AM", "gan", "patchedit"),
    "blend_boundary_fs": TaxonomyLabel("fake", "FS", "gan", "ellipseswap"),
}
FAMILY_BY_LABEL = {rotulo: familia for familia, rotulo in FAMILY_LABELS.items()}

# Famílias ditas "EFS-like", "AM-like" e "FS-like" no protocolo cross-forgery
FORGERY_GROUPS = {"EFS": ("grid_artifact_gan", "low_artifact_diffusion"),
                  "AM": ("patch_edit_am",),
                  "FS": ("blend_boundary_fs",)}


def class_index(label: TaxonomyLabel, level: str) -> int:
    """Índice da classe no nível pedido (coarse 2, forgery 4, generator 5 classes)."""
    if label.level1 == "real":
        return 0
    if level == "coarse":
        return 1
    if level == "forgery":
        return 1 + LEVEL2.index(label.level2)
    if level == "generator":
        if label.level2 == "EFS":
            return 1 if label.level3 == "gan" else 2
        return 3 if label.level2 == "AM" else 4
    raise ValueError(f"Nível desconhecido: {level}")


# =============================================================================
# GERAÇÃO DAS FAMÍLIAS
# =============================================================================

def _rng(seed: int, familia: str, indice: int) -> np.random.Generator:
    return np.random.default_rng([seed, FAMILIES.index(familia), indice])


def smooth_real(rng: np.random.Generator, size: int) -> np.ndarray:
    """Gradiente radial suave entre duas cores + ruído passa-baixa, em [0, 1]."""
    yy, xx = np.mgrid[0:size, 0:size] / float(size)
    centro = rng.uniform(0.3, 0.7, size=2)
    escala = rng.uniform(0.4, 0.9)
    cor_a = rng.uniform(0.2, 0.8, size=3)
    cor_b = rng.uniform(0.2, 0.8, size=3)
    t = np.clip(np.hypot(yy - centro[0], xx - centro[1]) / escala, 0.0, 1.0)[..., None]
    img = cor_a * (1.0 - t) + cor_b * t

    ruido = ndimage.gaussian_filter(rng.normal(size=(size, size, 3)), sigma=(size / 16.0, size / 16.0, 0))
    ruido /= max(np.abs(ruido).max(), 1e-12)
    return np.clip(img + 0.08 * ruido, 0.0, 1.0)


def grid_residual(rng: np.random.Generator, size: int) -> np.ndarray:
    """Padrão xadrez periódico (período 4-8 px), amplitude 1."""
    periodo = int(rng.integers(4, 9))
    fase = rng.uniform(0, 2 * np.pi, size=2)
    yy, xx = np.mgrid[0:size, 0:size]
    padrao = np.cos(2 * np.pi * yy / periodo + fase[0]) * np.cos(2 * np.pi * xx / periodo + fase[1])
    return padrao[..., None] * np.ones(3)


def high_frequency_residual(rng: np.random.Generator, size: int) -> np.ndarray:
    ruido = rng.normal(size=(size, size, 3))
    alta = ruido - ndimage.gaussian_filter(ruido, sigma=(1.0, 1.0, 0))
    return alta / max(np.abs(alta).max(), 1e-12)


def _elipse(rng: np.random.Generator, size: int) -> np.ndarray:
    """Raio elíptico normalizado (1.0 na borda da elipse)."""
    yy, xx = np.mgrid[0:size, 0:size] / float(size)
    cy, cx = rng.uniform(0.4, 0.6, size=2)
    ry, rx = rng.uniform(0.2, 0.35, size=2)
    return np.hypot((yy - cy) / ry, (xx - cx) / rx)


def render_entry(familia: str, indice: int, seed: int, size: int, strength: float,
                 base_identity: Optional[int] = None, donor_identity: Optional[int] = None) -> np.ndarray:
    """
    Renderiza uma imagem de uma família de forma determinística.

    EFS (gan/diffusion) usa uma base real própria sorteada do fluxo da entrada;
    AM/FS partem do real da identidade base (mesmo fluxo do real original).
    """
    rng = _rng(seed, familia, indice)
    if familia == "smooth_real":
        return smooth_real(rng, size)

    if familia in ("grid_artifact_gan", "low_artifact_diffusion"):
        base = smooth_real(rng, size)
        residuo = grid_residual(rng, size) if familia == "grid_artifact_gan" else high_frequency_residual(rng, size)
        return np.clip(base + strength * residuo, 0.0, 1.0)

    if base_identity is None:
        raise ValueError(f"{familia} exige identidade base")
    base = smooth_real(_rng(seed, "smooth_real", base_identity), size)

    if familia == "patch_edit_am":
        altura, largura = rng.integers(size // 4, size // 2 + 1, size=2)
        y0 = int(rng.integers(0, size - altura + 1))
        x0 = int(rng.integers(0, size - largura + 1))
        novo = smooth_real(rng, size)
        img = base.copy()
        regiao = (slice(y0, y0 + altura), slice(x0, x0 + largura))
        img[regiao] = (1.0 - strength) * base[regiao] + strength * novo[regiao]
        return np.clip(img, 0.0, 1.0)

    if familia == "blend_boundary_fs":
        doador = smooth_real(_rng(seed, "smooth_real", donor_identity if donor_identity is not None else indice), size)
        raio = _elipse(rng, size)
        alfa = strength * (raio < 1.0)[..., None]
        img = base * (1.0 - alfa) + doador * alfa
        anel = (np.abs(raio - 1.0) < 0.08)[..., None]
        img = np.where(anel, img * (1.0 - 0.25 * strength), img)
        return np.clip(img, 0.0, 1.0)

    raise ValueError(f"Família desconhecida: {familia}")


# =============================================================================
# CORPUS
# =============================================================================

@dataclass(frozen=True)
class CorpusSpec:
    counts: Dict[str, int]
    strengths: Dict[str, float]
    size: int
    ratios: Tuple[float, ...] = (0.8, 0.1, 0.1)
    workers: int = 4

    @classmethod
    def from_config(cls, cfg) -> "CorpusSpec":
        return cls(
            counts={"smooth_real": cfg.n_real, "grid_artifact_gan": cfg.n_gan,
                    "low_artifact_diffusion": cfg.n_diffusion, "patch_edit_am": cfg.n_am,
                    "blend_boundary_fs": cfg.n_fs},
            strengths={"smooth_real": 0.0, "grid_artifact_gan": cfg.gan_strength,
                       "low_artifact_diffusion": cfg.diffusion_strength, "patch_edit_am": cfg.am_strength,
                       "blend_boundary_fs": cfg.fs_strength},
            size=cfg.image_size, ratios=tuple(cfg.split_ratios), workers=cfg.workers)

    def validate(self) -> "CorpusSpec":
        if any(c < 0 for c in self.counts.values()):
            raise ValueError(f"Contagens negativas: {self.counts}")
        if self.size <= 0 or self.size % 32 != 0:
            raise ValueError(f"Tamanho {self.size} precisa ser múltiplo de 32")
        desconhecidas = set(self.counts) - set(FAMILIES)
        if desconhecidas:
            raise ValueError(f"Famílias desconhecidas: {sorted(desconhecidas)}")
        n_real = self.counts.get("smooth_real", 0)
        if n_real == 0 and (self.counts.get("patch_edit_am", 0) or self.counts.get("blend_boundary_fs", 0)):
            raise ValueError("patch_edit_am/blend_boundary_fs exigem n_real > 0 (identidade base)")
        return self

    def families(self) -> List[SyntheticFamily]:
        """Famílias com contagem positiva, na ordem canônica."""
        return [SyntheticFamily(kind, self.strengths.get(kind, 0.0)) for kind in FAMILIES if self.counts.get(kind, 0)]


@dataclass(frozen=True)
class _Tarefa:
    familia: SyntheticFamily
    indice: int
    identity: Optional[int]
    doador: Optional[int]
    caminho: Path
    relativo: str


def _planejar(spec: CorpusSpec, raiz: Path) -> List[_Tarefa]:
    n_real = spec.counts.get("smooth_real", 0)
    tarefas = []
    for familia in spec.families():
        for i in range(spec.counts[familia.kind]):
            identity = None
            if familia.kind == "smooth_real":
                identity = i
            elif familia.kind in ("patch_edit_am", "blend_boundary_fs"):
                identity = i % n_real
            relativo = f"images/{familia.kind}/{familia.kind}_{i:05d}.ppm"
            tarefas.append(_Tarefa(familia, i, identity, None, raiz / relativo, relativo))
    return tarefas


def face_swap_donors(entries: Sequence[ManifestEntry], seed: int) -> Dict[str, int]:
    """
    Identidade doadora de cada entrada FS, sorteada entre os reais do mesmo split.

    A própria identidade base só é usada quando é a única do split.
    """
    reais_por_split: Dict[str, List[int]] = {}
    for e in entries:
        if e.family == "smooth_real" and e.identity_id is not None:
            reais_por_split.setdefault(e.split, []).append(e.identity_id)
    fs = FAMILIES.index("blend_boundary_fs")
    doadores = {}
    for k, e in enumerate(x for x in entries if x.family == "blend_boundary_fs"):
        candidatos = sorted(set(reais_por_split.get(e.split, [])))
        outros = [c for c in candidatos if c != e.identity_id] or candidatos
        if not outros:
            raise SplitError(f"{e.path}: nenhum real no split {e.split} para doador")
        doadores[e.path] = outros[int(np.random.default_rng([seed, fs, k, 1]).integers(len(outros)))]
    return doadores


def _executar(tarefa: _Tarefa, spec: CorpusSpec, seed: int) -> None:
    img = render_entry(tarefa.familia.kind, tarefa.indice, seed, spec.size, tarefa.familia.artifact_strength,
                       base_identity=tarefa.identity, donor_identity=tarefa.doador)
    try:
        image_ops.write_image(tarefa.caminho, img)
    except OSError as e:
        raise CorpusWriteError(tarefa.caminho, e) from e


def generate_corpus(spec: CorpusSpec, seed: int, out_dir: Union[str, Path],
                    manifest_name: str = "manifest.tsv") -> List[ManifestEntry]:
    """
    Gera imagens e manifesto do corpus sintético.

    Args:
        spec: Contagens e intensidades por família, tamanho e proporções
        seed: Semente (cada entrada deriva seu próprio fluxo de seed + índice)
        out_dir: Diretório do corpus (imagens em images/<familia>/)
        manifest_name: Nome do arquivo de manifesto

    Returns:
        Entradas já particionadas
    """
    spec.validate()
    raiz = Path(out_dir)
    tarefas = _planejar(spec, raiz)
    entradas = [ManifestEntry(t.relativo, t.familia.label, "train", t.identity) for t in tarefas]
    entradas = split_corpus(entradas, spec.ratios, seed)
    doadores = face_swap_donors(entradas, seed)
    tarefas = [replace(t, doador=doadores.get(t.relativo)) for t in tarefas]
    logger.info(f"Gerando {len(tarefas)} imagens {spec.size}x{spec.size} com {spec.workers} workers")

    with ThreadPoolExecutor(max_workers=max(1, spec.workers)) as executor:
        list(executor.map(lambda t: _executar(t, spec, seed), tarefas))

    write_manifest(raiz / manifest_name, entradas)

    for familia in spec.families():
        logger.info(f"  ✓ {familia.kind}: {spec.counts[familia.kind]} imagens (força {familia.artifact_strength})")
    return entradas


# =============================================================================
# PARTIÇÃO
# =============================================================================

def largest_remainder(total: int, ratios: Sequence[float]) -> List[int]:
    """Cotas inteiras somando total: piso de total*r, sobra para as maiores frações (empate: ordem)."""
    cotas = [total * r for r in ratios]
    inteiras = [int(np.floor(c)) for c in cotas]
    sobra = total - sum(inteiras)
    ordem = sorted(range(len(ratios)), key=lambda i: (-(cotas[i] - inteiras[i]), i))
    for i in ordem[:sobra]:
        inteiras[i] += 1
    return inteiras


def _distribuir(unidades: List, ratios: Sequence[float], rng: np.random.Generator) -> Dict[object, str]:
    embaralhadas = [unidades[i] for i in rng.permutation(len(unidades))]
    destino, inicio = {}, 0
    for nome, cota in zip(SPLITS, largest_remainder(len(embaralhadas), ratios)):
        for unidade in embaralhadas[inicio:inicio + cota]:
            destino[unidade] = nome
        inicio += cota
    return destino


def split_corpus(entries: Sequence[ManifestEntry], ratios: Sequence[float], seed: int,
                 strict: bool = False) -> List[ManifestEntry]:
    """
    Atribui train/val/test com exclusividade de identidade.

    Identidades (reais e os AM/FS derivados delas) são sorteadas em bloco;
    entradas sem identidade são divididas por contagem, família a família.

    Args:
        entries: Entradas (split atual é ignorado)
        ratios: Proporções (train, val, test), somando 1
        seed: Semente do sorteio
        strict: Exige ao menos uma identidade por partição com proporção > 0

    Returns:
        Novas entradas, na mesma ordem
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != len(SPLITS) or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise SplitError(f"Proporções inválidas: {ratios} (3 valores >= 0 somando 1)")

    rng = np.random.default_rng(seed)
    identidades = sorted({e.identity_id for e in entries if e.identity_id is not None})
    pedidas = sum(1 for r in ratios if r > 0)
    if strict and identidades and len(identidades) < pedidas:
        raise SplitError(f"{len(identidades)} identidade(s) para {pedidas} partições")
    por_identidade = _distribuir(identidades, ratios, rng)

    por_indice = {}
    sem_identidade: Dict[TaxonomyLabel, List[int]] = {}
    for i, e in enumerate(entries):
        if e.identity_id is None:
            sem_identidade.setdefault(e.label, []).append(i)
    for rotulo in sorted(sem_identidade, key=lambda r: (r.level1, r.level2, r.level3, r.level4)):
        por_indice.update(_distribuir(sem_identidade[rotulo], ratios, rng))

    saida = []
    for i, e in enumerate(entries):
        split = por_identidade[e.identity_id] if e.identity_id is not None else por_indice[i]
        saida.append(replace(e, split=split))
    return saida


def identity_overlaps(entries: Sequence[ManifestEntry]) -> Dict[int, List[str]]:
    """Identidades presentes em mais de uma partição."""
    splits: Dict[int, set] = {}
    for e in entries:
        if e.identity_id is not None:
            splits.setdefault(e.identity_id, set()).add(e.split)
    return {i: sorted(s) for i, s in splits.items() if len(s) > 1}


# =============================================================================
# MANIFESTO
# =============================================================================

MANIFEST_HEADER = (
    "# manifesto CAEL: path\tlevel1\tlevel2\tlevel3\tlevel4\tsplit\tidentity\n"
    "# identity = none para entradas sem identidade (EFS)\n"
)


def format_entry(e: ManifestEntry) -> str:
    identidade = NONE if e.identity_id is None else str(e.identity_id)
    rotulo = e.label
    return "\t".join([e.path, rotulo.level1, rotulo.level2, rotulo.level3, rotulo.level4, e.split, identidade])


def write_manifest(path: Union[str, Path], entries: Sequence[ManifestEntry]) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(MANIFEST_HEADER)
            for e in entries:
                f.write(format_entry(e) + "\n")
    except OSError as e:
        raise CorpusWriteError(path, e) from e
    logger.info(f"✓ Manifesto gravado: {path} ({len(entries)} entradas)")
    return path


def load_manifest(path: Union[str, Path], check_files: bool = True) -> List[ManifestEntry]:
    """
    Lê e valida um manifesto; todos os problemas são reunidos num único ManifestError.

    Verifica: 7 campos por linha, rótulo consistente com a taxonomia, split
    conhecido, identidade inteira ou 'none', exclusividade de identidade e
    (opcionalmente) existência dos arquivos de imagem.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Manifesto não encontrado: {path}")
    raiz = path.parent
    entradas, problemas = [], []

    with open(path, encoding="utf-8") as f:
        for numero, linha in enumerate(f, start=1):
            linha = linha.rstrip("\r\n")
            if not linha.strip() or linha.lstrip().startswith("#"):
                continue
            campos = linha.split("\t")
            if len(campos) != 7:
                problemas.append(f"linha {numero}: esperados 7 campos, encontrados {len(campos)}")
                continue
            caminho, l1, l2, l3, l4, split, identidade = campos
            rotulo = TaxonomyLabel(l1, l2, l3, l4)
            erros = [f"linha {numero}: {erro}" for erro in rotulo.problems()]
            if split not in SPLITS:
                erros.append(f"linha {numero}: split desconhecido '{split}'")
            identity_id = None
            if identidade != NONE:
                try:
                    identity_id = int(identidade)
                except ValueError:
                    erros.append(f"linha {numero}: identidade inválida '{identidade}'")
            if check_files and not (raiz / caminho).exists():
                erros.append(f"linha {numero}: imagem inexistente '{caminho}'")
            if erros:
                problemas.extend(erros)
                continue
            entradas.append(ManifestEntry(caminho, rotulo, split, identity_id))

    for identidade, splits in sorted(identity_overlaps(entradas).items()):
        problemas.append(f"identidade {identidade} em mais de uma partição: {','.join(splits)}")

    if problemas:
        for problema in problemas[:20]:
            logger.error(f"✗ {problema}")
        raise ManifestError(problemas, path)
    logger.info(f"✓ Manifesto carregado: {path.name} ({len(entradas)} entradas)")
    return entradas


# =============================================================================
# CARREGAMENTO DE IMAGENS
# =============================================================================

def load_images(entries: Sequence[ManifestEntry], root: Union[str, Path], workers: int = 4) -> np.ndarray:
    """Empilha as imagens (B, H, W, 3) em [0, 1]."""
    root = Path(root)
    if not entries:
        return np.zeros((0, 0, 0, 3))
    with ThreadPoolExecutor(max_workers=max(1, workers)) as executor:
        imagens = list(executor.map(lambda e: image_ops.read_image(root / e.path), entries))
    return np.stack(imagens)


def select(entries: Sequence[ManifestEntry], split: Optional[str] = None,
           families: Optional[Sequence[str]] = None) -> List[ManifestEntry]:
    return [e for e in entries
            if (split is None or e.split == split) and (families is None or e.family in families)]
