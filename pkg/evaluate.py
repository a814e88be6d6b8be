#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Avaliação
=========
Métricas (ACC, AUC, precisão, recall, F1), protocolos de avaliação
(holdout, cross-generator, cross-forgery, multinível, robustez), sonda de
frequência e emissão de relatórios (CSV, JSON-lines, Excel).
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy import fft as sp_fft
from scipy import stats
from sklearn import metrics as sk_metrics
from sklearn.linear_model import LogisticRegression
from sklearn.pipeline import make_pipeline
from sklearn.preprocessing import StandardScaler

import dataset
import image_ops
from config import CaelConfig, config_fingerprint, parse_pairs
from maet import CaelModel
from train import fit, predict_proba

logger = logging.getLogger(__name__)

REPORT_COLUMNS = ["protocol", "cell", "train_family", "test_family", "seed", "corruption", "level",
                  "method", "status", "n", "acc", "auc", "precision", "recall", "f1"]


class UndefinedMetricError(ValueError):
    """Métrica indefinida para a entrada (ex: AUC com uma só classe)."""


# =============================================================================
# MÉTRICAS
# =============================================================================

@dataclass(frozen=True)
class ScoredExample:
    score: float
    true_label: int
    cell: str = ""


def _separar(scores, labels) -> Tuple[np.ndarray, np.ndarray]:
    if labels is None:
        pares = [(e.score, e.true_label) if isinstance(e, ScoredExample) else e for e in scores]
        scores = [p[0] for p in pares]
        labels = [p[1] for p in pares]
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape or s.ndim != 1:
        raise ValueError(f"auc: {s.shape} scores para {y.shape} rótulos")
    if not np.all(np.isfinite(s)):
        raise ValueError("auc: score não finito")
    return s, y


def auc(scores, labels=None) -> float:
    """
    AUC pela estatística de Mann-Whitney (empates contam 0.5).

    Args:
        scores: Scores de fake, ou sequência de pares (score, rótulo) / ScoredExample
        labels: Rótulos 0 (real) / 1 (fake), quando scores é uma lista de números

    Returns:
        Probabilidade de um fake aleatório superar um real aleatório
    """
    s, y = _separar(scores, labels)
    positivos = y != 0
    n_pos = int(positivos.sum())
    n_neg = int(len(y) - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError(f"AUC indefinida: {n_pos} fakes e {n_neg} reais")
    postos = stats.rankdata(s, method="average")
    u = postos[positivos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def roc_auc_trapezoid(scores, labels) -> float:
    """AUC pela integração trapezoidal da curva ROC (usada como oráculo)."""
    s, y = _separar(scores, labels)
    if len(np.unique(y != 0)) < 2:
        raise UndefinedMetricError("AUC indefinida: uma só classe")
    fpr, tpr, _ = sk_metrics.roc_curve(y != 0, s)
    return float(sk_metrics.auc(fpr, tpr))


def classification_metrics(preds, labels, n_classes: int) -> Dict[str, float]:
    """ACC (acerto exato) e precisão/recall/F1 com média macro sobre as n_classes."""
    p = np.asarray(preds)
    y = np.asarray(labels)
    if p.size == 0 or y.size == 0:
        raise ValueError("classification_metrics: entrada vazia")
    if p.shape != y.shape:
        raise ValueError(f"classification_metrics: {p.shape} predições para {y.shape} rótulos")
    for nome, arr in (("preds", p), ("labels", y)):
        if arr.min() < 0 or arr.max() >= n_classes:
            raise ValueError(f"classification_metrics: {nome} fora de [0, {n_classes})")
    precisao, recall, f1, _ = sk_metrics.precision_recall_fscore_support(
        y, p, labels=list(range(n_classes)), average="macro", zero_division=0)
    return {"acc": float(np.mean(p == y)), "precision": float(precisao),
            "recall": float(recall), "f1": float(f1)}


# =============================================================================
# RELATÓRIO
# =============================================================================

@dataclass
class EvalCell:
    protocol: str
    cell: str
    train_family: str = ""
    test_family: str = ""
    seed: Optional[int] = None
    corruption: str = ""
    level: Optional[int] = None
    method: str = "cael"
    status: str = "ok"
    n: int = 0
    acc: float = math.nan
    auc: float = math.nan
    precision: float = math.nan
    recall: float = math.nan
    f1: float = math.nan


@dataclass
class EvalReport:
    protocol: str
    fingerprint: str
    seeds: Tuple[int, ...]
    cells: List[EvalCell] = field(default_factory=list)
    corruption_table_version: str = ""

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([asdict(c) for c in self.cells], columns=REPORT_COLUMNS)

    def present(self) -> List[EvalCell]:
        return [c for c in self.cells if c.status == "ok"]

    def mean_auc(self, **filtros) -> float:
        """AUC média das células presentes que casam com os filtros (ex: train_family=...)."""
        valores = [c.auc for c in self.present()
                   if all(getattr(c, chave) == valor for chave, valor in filtros.items())]
        return float(np.nanmean(valores)) if valores else math.nan

    def matrix(self, metric: str = "auc") -> pd.DataFrame:
        """Matriz treino x teste (média sobre sementes)."""
        df = self.to_frame()
        df = df[df["status"] == "ok"]
        if df.empty:
            return pd.DataFrame()
        return df.pivot_table(index="train_family", columns="test_family", values=metric, aggfunc="mean")

    def write(self, out_dir: Union[str, Path]) -> Dict[str, Path]:
        """Grava report.csv, report.jsonl, report.xlsx e (robustez) robustness_curves.csv."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        df = self.to_frame()
        df.insert(0, "fingerprint", self.fingerprint)
        df.insert(1, "seeds", ",".join(str(s) for s in self.seeds))
        if self.corruption_table_version:
            df["corruption_table_version"] = self.corruption_table_version

        arquivos = {"csv": out_dir / "report.csv", "jsonl": out_dir / "report.jsonl",
                    "xlsx": out_dir / "report.xlsx"}
        df.to_csv(arquivos["csv"], index=False, float_format="%.6f")
        df.to_json(arquivos["jsonl"], orient="records", lines=True, force_ascii=False)
        with pd.ExcelWriter(arquivos["xlsx"], engine="openpyxl") as writer:
            df.to_excel(writer, index=False, sheet_name="Celulas")
            matriz = self.matrix()
            if not matriz.empty and self.protocol in ("cross_generator", "cross_forgery"):
                matriz.to_excel(writer, sheet_name="Matriz AUC")

        if self.protocol == "robustness":
            curvas = df[df["status"] == "ok"][["level", "corruption", "auc"]].rename(columns={"corruption": "method"})
            curvas = curvas.groupby(["level", "method"], as_index=False)["auc"].mean()
            arquivos["curves"] = out_dir / "robustness_curves.csv"
            curvas[["level", "method", "auc"]].to_csv(arquivos["curves"], index=False, float_format="%.6f")

        for nome, caminho in arquivos.items():
            logger.info(f"  ✓ {nome}: {caminho}")
        return arquivos


def score_cell(scores: np.ndarray, labels: np.ndarray, threshold: float, **meta) -> EvalCell:
    """Célula binária: ACC/precisão/recall/F1 no limiar e AUC."""
    labels = (np.asarray(labels) != 0).astype(int)
    preds = (np.asarray(scores) >= threshold).astype(int)
    cell = EvalCell(n=len(labels), **meta)
    for chave, valor in classification_metrics(preds, labels, 2).items():
        setattr(cell, chave, valor)
    try:
        cell.auc = auc(scores, labels)
    except UndefinedMetricError as e:
        logger.warning(f"⚠ {meta.get('cell', '')}: {e}")
    return cell


# =============================================================================
# SONDA DE FREQUÊNCIA
# =============================================================================

def frequency_features(imgs: np.ndarray, bands: int = 8) -> np.ndarray:
    """Energia média de log|DCT| da imagem cinza em anéis de raio normalizado."""
    if len(imgs) == 0:
        return np.zeros((0, bands))
    altura, largura = imgs[0].shape[:2]
    yy, xx = np.mgrid[0:altura, 0:largura]
    raio = np.hypot(yy / altura, xx / largura) / np.sqrt(2.0)
    faixa = np.minimum((raio * bands).astype(int), bands - 1)
    linhas = []
    for img in imgs:
        espectro = np.log1p(np.abs(sp_fft.dctn(image_ops.to_gray(img), type=2, norm="ortho")))
        soma = np.bincount(faixa.ravel(), weights=espectro.ravel(), minlength=bands)
        linhas.append(soma / np.maximum(np.bincount(faixa.ravel(), minlength=bands), 1))
    return np.asarray(linhas)


def frequency_probe(train_imgs: np.ndarray, train_labels: np.ndarray,
                    test_imgs: np.ndarray, test_labels: np.ndarray, seed: int = 0) -> float:
    """AUC de uma regressão logística sobre energias DCT por anel (fake vs real)."""
    modelo = make_pipeline(StandardScaler(), LogisticRegression(max_iter=1000, random_state=seed))
    modelo.fit(frequency_features(train_imgs), (np.asarray(train_labels) != 0).astype(int))
    scores = modelo.predict_proba(frequency_features(test_imgs))[:, 1]
    return auc(scores, (np.asarray(test_labels) != 0).astype(int))


# =============================================================================
# PROTOCOLOS
# =============================================================================

class ImageCache:
    """Carrega imagens do manifesto uma única vez por caminho."""

    def __init__(self, root: Union[str, Path], workers: int = 4):
        self.root = Path(root)
        self.workers = workers
        self._imagens: Dict[str, np.ndarray] = {}

    def load(self, entries: Sequence[dataset.ManifestEntry]) -> np.ndarray:
        faltando = [e for e in entries if e.path not in self._imagens]
        if faltando:
            for e, img in zip(faltando, dataset.load_images(faltando, self.root, self.workers)):
                self._imagens[e.path] = img
        if not entries:
            return np.zeros((0, 0, 0, 3))
        return np.stack([self._imagens[e.path] for e in entries])


def _orcamento(entries: List[dataset.ManifestEntry], limite: int, seed: int) -> List[dataset.ManifestEntry]:
    """Subamostra determinística balanceada por classe (real / fake)."""
    if limite <= 0 or len(entries) <= limite:
        return entries
    rng = np.random.default_rng(seed)
    reais = [e for e in entries if not e.label.is_fake]
    fakes = [e for e in entries if e.label.is_fake]
    metade = limite // 2
    n_reais = min(len(reais), max(metade, limite - len(fakes)))
    n_fakes = min(len(fakes), limite - n_reais)
    escolhidos = ([reais[i] for i in sorted(rng.choice(len(reais), n_reais, replace=False))]
                  + [fakes[i] for i in sorted(rng.choice(len(fakes), n_fakes, replace=False))])
    return sorted(escolhidos, key=lambda e: e.path)


def train_cell_model(cfg: CaelConfig, entries: List[dataset.ManifestEntry], cache: ImageCache,
                     seed: int, level: str = "coarse") -> CaelModel:
    """Treina um modelo de célula com o orçamento cell_epochs / cell_train_limit."""
    treino = _orcamento(entries, cfg.cell_train_limit, seed)
    cfg_celula = cfg.with_overrides(seed=seed, n_classes=dataset.LEVEL_CLASSES[level])
    modelo = CaelModel(cfg_celula)
    rotulos = np.array([dataset.class_index(e.label, level) for e in treino])
    fit(modelo, cache.load(treino), rotulos, cfg_celula, epochs=cfg.cell_epochs, seed=seed)
    return modelo


def _familias_presentes(entries: Sequence[dataset.ManifestEntry]) -> set:
    return {e.family for e in entries}


def _faltas_por_split(entries: Sequence[dataset.ManifestEntry], split: str,
                      familias: Sequence[str]) -> List[str]:
    """Classes (real / fake) sem nenhuma imagem no split, restritas às famílias pedidas."""
    escolhidas = dataset.select(entries, split, ("smooth_real", *familias))
    faltas = []
    if not any(not e.label.is_fake for e in escolhidas):
        faltas.append(f"{split} sem reais")
    if not any(e.label.is_fake for e in escolhidas):
        faltas.append(f"{split} sem fakes de {','.join(familias) or '-'}")
    return faltas


def _cross_cell(cfg, entries, cache, protocolo, treino_nome, treino_fam, teste_nome, teste_fam, seed,
                modelos: Dict) -> EvalCell:
    presentes = _familias_presentes(entries)
    treino_fam = tuple(f for f in treino_fam if f in presentes)
    teste_fam = tuple(f for f in teste_fam if f in presentes)
    celula = f"{treino_nome}->{teste_nome}"
    faltas = _faltas_por_split(entries, "train", treino_fam) + _faltas_por_split(entries, "test", teste_fam)
    if faltas:
        logger.warning(f"⚠ {celula} (seed {seed}): ausente ({'; '.join(faltas)})")
        return EvalCell(protocolo, celula, treino_nome, teste_nome, seed, status="absent")

    chave = (treino_nome, seed)
    if chave not in modelos:
        treino = dataset.select(entries, "train", ("smooth_real", *treino_fam))
        modelos[chave] = train_cell_model(cfg, treino, cache, seed)
    teste = dataset.select(entries, "test", ("smooth_real", *teste_fam))
    rotulos = np.array([int(e.label.is_fake) for e in teste])
    scores = 1.0 - predict_proba(modelos[chave], cache.load(teste))[:, 0]
    return score_cell(scores, rotulos, cfg.threshold, protocol=protocolo, cell=celula,
                      train_family=treino_nome, test_family=teste_nome, seed=seed)


def _grade_cruzada(cfg, entries, cache, protocolo, grupos: Dict[str, Tuple[str, ...]]) -> List[EvalCell]:
    celulas = []
    for seed in cfg.seeds:
        modelos: Dict = {}
        tarefas = [(tn, tf, sn, sf) for tn, tf in grupos.items() for sn, sf in grupos.items()]

        def _rodar(t, seed=seed, modelos=modelos):
            return _cross_cell(cfg, entries, cache, protocolo, t[0], t[1], t[2], t[3], seed, modelos)

        # Modelos de treino primeiro (uma linha por família de treino), depois as células
        linhas = [[t for t in tarefas if t[0] == tn] for tn in grupos]
        with ThreadPoolExecutor(max_workers=max(1, cfg.workers)) as executor:
            resultados = list(executor.map(lambda linha: [_rodar(t) for t in linha], linhas))
        for linha in resultados:
            celulas.extend(linha)
    return celulas


def _holdout(cfg, entries, cache, model: CaelModel) -> List[EvalCell]:
    teste = dataset.select(entries, "test")
    rotulos = np.array([int(e.label.is_fake) for e in teste])
    imagens = cache.load(teste)
    celulas = [score_cell(1.0 - predict_proba(model, imagens)[:, 0], rotulos, cfg.threshold,
                          protocol="holdout", cell="holdout", train_family="all", test_family="all",
                          seed=model.cfg.seed)]
    treino = dataset.select(entries, "train")
    try:
        sonda = frequency_probe(cache.load(treino), [int(e.label.is_fake) for e in treino],
                                imagens, rotulos, seed=cfg.seed)
        celulas.append(EvalCell("holdout", "holdout", "all", "all", cfg.seed, method="frequency_probe",
                                n=len(teste), auc=sonda))
    except (UndefinedMetricError, ValueError) as e:
        logger.warning(f"⚠ Sonda de frequência indisponível: {e}")
    return celulas


def _multinivel(cfg, entries, cache) -> List[EvalCell]:
    nivel = cfg.level
    n_classes = dataset.LEVEL_CLASSES[nivel]
    celulas = []
    for seed in cfg.seeds:
        treino = dataset.select(entries, "train")
        teste = dataset.select(entries, "test")
        classes_treino = {dataset.class_index(e.label, nivel) for e in treino}
        faltas = _faltas_por_split(entries, "test", dataset.FAMILIES[1:])
        if len(classes_treino) < 2 or faltas:
            logger.warning(f"⚠ level={nivel} (seed {seed}): classes insuficientes {sorted(classes_treino)} {faltas}")
            celulas.append(EvalCell("level", nivel, "all", "all", seed, status="absent"))
            continue
        modelo = train_cell_model(cfg, treino, cache, seed, level=nivel)
        probs = predict_proba(modelo, cache.load(teste))
        rotulos = np.array([dataset.class_index(e.label, nivel) for e in teste])
        celula = EvalCell("level", nivel, "all", "all", seed, n=len(teste))
        for chave, valor in classification_metrics(probs.argmax(axis=1), rotulos, n_classes).items():
            setattr(celula, chave, valor)
        try:
            celula.auc = auc(1.0 - probs[:, 0], (rotulos != 0).astype(int))
        except UndefinedMetricError as e:
            logger.warning(f"⚠ level={nivel}: {e}")
        celulas.append(celula)
    return celulas


def _robustez(cfg, entries, cache, model: CaelModel) -> List[EvalCell]:
    teste = dataset.select(entries, "test")
    rotulos = np.array([int(e.label.is_fake) for e in teste])
    limpas = cache.load(teste)
    celulas = []
    for tipo in image_ops.CORRUPTION_LEVELS:
        for nivel in cfg.corruption_levels:
            spec = image_ops.CorruptionSpec(tipo, int(nivel)).validate()
            if nivel == 0:
                imagens = limpas
            else:
                imagens = np.stack([image_ops.corrupt(img, spec, seed=cfg.seed * 100003 + i)
                                    for i, img in enumerate(limpas)])
            scores = 1.0 - predict_proba(model, imagens)[:, 0]
            celulas.append(score_cell(scores, rotulos, cfg.threshold, protocol="robustness",
                                      cell=f"{tipo}@{nivel}", train_family="all", test_family="all",
                                      seed=model.cfg.seed, corruption=tipo, level=int(nivel)))
        logger.info(f"  ✓ {tipo}: níveis {','.join(str(n) for n in cfg.corruption_levels)}")
    return celulas


def run_protocol(model: Optional[CaelModel], entries: Sequence[dataset.ManifestEntry], protocol: str,
                 cfg: CaelConfig, root: Union[str, Path]) -> EvalReport:
    """
    Executa um protocolo de avaliação.

    Args:
        model: Modelo treinado (holdout e robustness); os protocolos cruzados
               e multinível treinam modelos por célula
        entries: Entradas do manifesto
        protocol: holdout, cross_generator, cross_forgery, level ou robustness
        cfg: Configuração (sementes, orçamento por célula, limiar, níveis)
        root: Diretório base dos caminhos do manifesto

    Returns:
        EvalReport com uma célula por (treino, teste, semente) ou (corrupção, nível)
    """
    entradas = sorted(entries, key=lambda e: e.path)
    cache = ImageCache(root, cfg.workers)
    relatorio = EvalReport(protocol, config_fingerprint(cfg), tuple(cfg.seeds))
    logger.info(f"Protocolo {protocol}: {len(entradas)} entradas, sementes {list(cfg.seeds)}")

    if protocol in ("holdout", "robustness") and model is None:
        raise ValueError(f"Protocolo {protocol} exige um modelo treinado (checkpoint)")

    if protocol == "holdout":
        relatorio.cells = _holdout(cfg, entradas, cache, model)
    elif protocol == "cross_generator":
        grupos = {f: (f,) for f in dataset.FAMILIES if f != "smooth_real"}
        relatorio.cells = _grade_cruzada(cfg, entradas, cache, protocol, grupos)
    elif protocol == "cross_forgery":
        relatorio.cells = _grade_cruzada(cfg, entradas, cache, protocol, dict(dataset.FORGERY_GROUPS))
    elif protocol == "level":
        relatorio.cells = _multinivel(cfg, entradas, cache)
    elif protocol == "robustness":
        relatorio.cells = _robustez(cfg, entradas, cache, model)
        relatorio.corruption_table_version = image_ops.CORRUPTION_TABLE_VERSION
    else:
        raise ValueError(f"Protocolo desconhecido: {protocol}")

    ausentes = len(relatorio.cells) - len(relatorio.present())
    logger.info(f"✓ {len(relatorio.present())} células avaliadas, {ausentes} ausentes")
    return relatorio


# =============================================================================
# ABLAÇÕES
# =============================================================================

ABLATION_AXES = {
    "branches": ("F", "C", "E", "F,C", "F,C,E"),
    "operator": ("sobel", "canny", "log", "marrhildreth", "dct"),
    "fusion_mode": ("concatenation", "summation", "cross_attention"),
    "query_mode": ("cls", "patch", "all"),
    "aeca_enabled": ("false", "true"),
    "E": ("0", "1", "2", "3", "4"),
    "K": ("1", "2", "3", "4", "5"),
}


def run_ablation(entries: Sequence[dataset.ManifestEntry], cfg: CaelConfig, root: Union[str, Path],
                 axis: str, values: Optional[Sequence[str]] = None) -> pd.DataFrame:
    """
    Varre um eixo de ablação: para cada valor e semente, treina no split de
    treino (orçamento de célula) e mede AUC/ACC no split de teste.

    Returns:
        DataFrame com uma linha por valor (axis, value, auc médio, acc médio, params e AUC por semente)
    """
    from maet import count_parameters

    if axis not in ABLATION_AXES:
        raise ValueError(f"Eixo de ablação desconhecido: {axis} (use {', '.join(ABLATION_AXES)})")
    valores = list(values) if values else list(ABLATION_AXES[axis])
    entradas = sorted(entries, key=lambda e: e.path)
    cache = ImageCache(root, cfg.workers)
    treino = dataset.select(entradas, "train")
    teste = dataset.select(entradas, "test")
    faltas = (_faltas_por_split(entradas, "train", dataset.FAMILIES[1:])
              + _faltas_por_split(entradas, "test", dataset.FAMILIES[1:]))
    if faltas:
        raise ValueError(f"Ablação exige reais e fakes nos splits de treino e teste: {'; '.join(faltas)}")
    rotulos = np.array([int(e.label.is_fake) for e in teste])
    imagens_teste = cache.load(teste)

    linhas = []
    for valor in valores:
        variante = cfg.with_overrides(**parse_pairs([f"{axis}={valor}"], "<ablate>"))
        linha = {"axis": axis, "value": valor, "params": count_parameters(variante)}
        aucs, accs = [], []
        for seed in cfg.seeds:
            modelo = train_cell_model(variante, treino, cache, seed)
            celula = score_cell(1.0 - predict_proba(modelo, imagens_teste)[:, 0], rotulos, cfg.threshold,
                                protocol="ablate", cell=f"{axis}={valor}", seed=seed)
            linha[f"auc_seed{seed}"] = celula.auc
            aucs.append(celula.auc)
            accs.append(celula.acc)
        linha["auc"] = float(np.nanmean(aucs)) if aucs else math.nan
        linha["acc"] = float(np.nanmean(accs)) if accs else math.nan
        logger.info(f"  ✓ {axis}={valor}: AUC {linha['auc']:.4f}")
        linhas.append(linha)
    return pd.DataFrame(linhas)
