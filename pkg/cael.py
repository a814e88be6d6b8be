#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
CAEL - Linha de Comando
=======================
Subcomandos:
    gen       gera o corpus sintético (imagens + manifest.tsv)
    train     treina o CAEL (checkpoint + loss_log.csv)
    eval      executa um protocolo de avaliação (report.csv/.jsonl/.xlsx)
    ablate    varre um eixo de ablação
    bench     tabelas de parâmetros, multiplicações e tempo de atenção
    spectrum  espectro médio de Fourier por família

Opções comuns: --config, --seed, --out, --set chave=valor (repetível).

Códigos de saída: 0 sucesso, 1 erro do usuário/dados, 2 erro interno.
Em caso de erro, uma linha JSON é escrita em stderr.

Uso:
    python cael.py gen --out runs/demo
    python cael.py train --out runs/demo
    python cael.py eval --out runs/demo
"""

import argparse
import json
import logging
import sys
from datetime import datetime
from pathlib import Path
from typing import List, Optional

import numpy as np
import pandas as pd

import bench
import dataset
import evaluate
import image_ops
from config import (CHECKPOINT_NAME, EFFECTIVE_CONFIG_NAME, LOGS_DIR_NAME, MANIFEST_NAME, OUTPUT_DIR,
                    CaelConfig, ConfigError, dump_config, load_config)
from maet import CaelModel
from train import fit, load_model, save_model

logger = logging.getLogger("cael")


# ============================================================================
# CONFIGURAÇÃO DE LOGS
# ============================================================================

def configurar_logs(out_dir: Path) -> Path:
    """Configura logs em arquivo (<out>/logs/cael.log) e console."""
    logs_dir = Path(out_dir) / LOGS_DIR_NAME
    logs_dir.mkdir(parents=True, exist_ok=True)
    log_filename = logs_dir / "cael.log"

    log_format = '%(asctime)s | %(levelname)-8s | %(message)s'
    date_format = '%Y-%m-%d %H:%M:%S'

    logging.basicConfig(
        level=logging.INFO,
        format=log_format,
        datefmt=date_format,
        handlers=[
            logging.FileHandler(log_filename, encoding='utf-8'),
            logging.StreamHandler(),
        ],
        force=True,
    )
    return log_filename


def _banner(titulo: str) -> None:
    logger.info("")
    logger.info("=" * 70)
    logger.info(titulo)
    logger.info("=" * 70)


# ============================================================================
# ARGUMENTOS
# ============================================================================

class _Parser(argparse.ArgumentParser):
    """Erros de uso viram ConfigError (saída 1 com linha JSON)."""

    def error(self, message):
        raise ConfigError(f"argumentos inválidos: {message}")


def build_parser() -> argparse.ArgumentParser:
    comum = _Parser(add_help=False)
    comum.add_argument("--config", type=Path, default=None, help="arquivo chave=valor")
    comum.add_argument("--seed", type=int, default=None, help="semente (sobrescreve seed)")
    comum.add_argument("--out", type=Path, default=OUTPUT_DIR, help="diretório de saída")
    comum.add_argument("--set", dest="overrides", action="append", default=[], metavar="CHAVE=VALOR",
                       help="sobrescreve uma chave da configuração (repetível)")

    parser = _Parser(prog="cael", description="CAEL: detector com aparência multi-granular e bordas")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sub.add_parser("gen", parents=[comum], help="gera o corpus sintético")

    p = sub.add_parser("train", parents=[comum], help="treina o modelo")
    p.add_argument("--manifest", type=Path, default=None)

    p = sub.add_parser("eval", parents=[comum], help="avalia por protocolo")
    p.add_argument("--manifest", type=Path, default=None)
    p.add_argument("--checkpoint", type=Path, default=None)
    p.add_argument("--protocol", choices=("holdout", "cross_generator", "cross_forgery", "level", "robustness"),
                   default=None)

    p = sub.add_parser("ablate", parents=[comum], help="varre um eixo de ablação")
    p.add_argument("--manifest", type=Path, default=None)
    p.add_argument("--axis", choices=tuple(evaluate.ABLATION_AXES), required=True)
    p.add_argument("--values", default=None, help="valores separados por ';' (padrão: todos do eixo)")

    p = sub.add_parser("bench", parents=[comum], help="tabelas de complexidade")
    p.add_argument("--walltime-n", type=int, default=1024)

    p = sub.add_parser("spectrum", parents=[comum], help="espectro médio por família")
    p.add_argument("--manifest", type=Path, default=None)
    p.add_argument("--limit", type=int, default=200, help="imagens por família")
    return parser


def _manifesto(args) -> Path:
    return args.manifest if args.manifest is not None else args.out / MANIFEST_NAME


# ============================================================================
# COMANDOS
# ============================================================================

def cmd_gen(args, cfg: CaelConfig) -> None:
    _banner("1/2 - GERANDO CORPUS SINTÉTICO")
    spec = dataset.CorpusSpec.from_config(cfg)
    entradas = dataset.generate_corpus(spec, cfg.seed, args.out, MANIFEST_NAME)

    _banner("2/2 - RESUMO DAS PARTIÇÕES")
    for split in dataset.SPLITS:
        n = sum(1 for e in entradas if e.split == split)
        logger.info(f"  {split}: {n} imagens")


def cmd_train(args, cfg: CaelConfig) -> None:
    _banner("1/4 - CARREGANDO MANIFESTO")
    caminho = _manifesto(args)
    entradas = sorted(dataset.load_manifest(caminho), key=lambda e: e.path)
    cache = evaluate.ImageCache(caminho.parent, cfg.workers)
    treino = dataset.select(entradas, "train")
    teste = dataset.select(entradas, "test")
    if not treino:
        raise ValueError(f"Manifesto sem entradas de treino: {caminho}")
    imagens = cache.load(treino)
    rotulos = np.array([dataset.class_index(e.label, "coarse") for e in treino])

    _banner("2/4 - SONDA DE FREQUÊNCIA (DCT)")
    try:
        sonda = evaluate.frequency_probe(imagens, rotulos, cache.load(teste),
                                         [int(e.label.is_fake) for e in teste], seed=cfg.seed)
        logger.info(f"  AUC da sonda logística: {sonda:.4f}")
    except ValueError as e:
        logger.warning(f"⚠ Sonda indisponível: {e}")

    _banner("3/4 - TREINANDO CAEL")
    modelo = CaelModel(cfg)
    logger.info(f"  {modelo.num_parameters():,} parâmetros | ramos {','.join(cfg.branches)} | "
                f"{len(treino)} imagens | {cfg.epochs} épocas")
    resultado = fit(modelo, imagens, rotulos, cfg, loss_log=args.out / "loss_log.csv")

    _banner("4/4 - SALVANDO CHECKPOINT")
    save_model(args.out / CHECKPOINT_NAME, resultado.model, resultado.state)


def cmd_eval(args, cfg: CaelConfig) -> None:
    protocolo = args.protocol or cfg.protocol
    _banner(f"1/3 - CARREGANDO DADOS ({protocolo})")
    caminho = _manifesto(args)
    entradas = dataset.load_manifest(caminho)

    modelo = None
    checkpoint = args.checkpoint or args.out / CHECKPOINT_NAME
    if protocolo in ("holdout", "robustness"):
        modelo, _ = load_model(checkpoint)
        logger.info(f"  ✓ Modelo carregado: {checkpoint}")

    _banner("2/3 - EXECUTANDO PROTOCOLO")
    relatorio = evaluate.run_protocol(modelo, entradas, protocolo, cfg, caminho.parent)

    _banner("3/3 - GRAVANDO RELATÓRIO")
    relatorio.write(args.out)
    for celula in relatorio.present():
        logger.info(f"  {celula.cell} [{celula.method}] seed={celula.seed}: AUC {celula.auc:.4f} ACC {celula.acc:.4f}")


def cmd_ablate(args, cfg: CaelConfig) -> None:
    _banner(f"1/2 - ABLAÇÃO: {args.axis}")
    caminho = _manifesto(args)
    entradas = dataset.load_manifest(caminho)
    valores = args.values.split(";") if args.values else None
    tabela = evaluate.run_ablation(entradas, cfg, caminho.parent, args.axis, valores)

    _banner("2/2 - GRAVANDO TABELA")
    destino = args.out / f"ablation_{args.axis}.csv"
    tabela.to_csv(destino, index=False, float_format="%.6f")
    logger.info(f"✓ {destino}")


def cmd_bench(args, cfg: CaelConfig) -> None:
    _banner("1/2 - CALCULANDO TABELAS")
    tabelas = bench.run_bench(cfg, args.walltime_n)

    _banner("2/2 - GRAVANDO")
    for nome, tabela in tabelas.items():
        destino = args.out / f"bench_{nome}.csv"
        tabela.to_csv(destino, index=False)
        logger.info(f"✓ {destino}")
        logger.info("\n" + tabela.to_string(index=False))


def cmd_spectrum(args, cfg: CaelConfig) -> None:
    _banner("1/2 - ESPECTRO MÉDIO POR FAMÍLIA")
    caminho = _manifesto(args)
    entradas = sorted(dataset.load_manifest(caminho), key=lambda e: e.path)
    cache = evaluate.ImageCache(caminho.parent, cfg.workers)
    destino = args.out / "spectrum"

    espectros = {}
    for familia in dataset.FAMILIES:
        grupo = dataset.select(entradas, families=(familia,))[:max(1, args.limit)]
        if not grupo:
            continue
        espectros[familia] = image_ops.mean_spectrum(list(cache.load(grupo)))
        image_ops.write_map(destino / familia, espectros[familia])
        logger.info(f"  ✓ {familia}: {len(grupo)} imagens")

    _banner("2/2 - DIFERENÇAS E ENERGIA POR ANEL")
    linhas = []
    real = espectros.get("smooth_real")
    for familia, espectro in espectros.items():
        linha = {"family": familia, "annulus_low": image_ops.annulus_energy(espectro, 0.0, 0.25),
                 "annulus_mid": image_ops.annulus_energy(espectro, 0.25, 0.75),
                 "annulus_high": image_ops.annulus_energy(espectro, 0.75, 1.5)}
        if real is not None and familia != "smooth_real":
            diferenca = espectro - real
            image_ops.write_map(destino / f"{familia}_minus_real", diferenca)
            linha["diff_mid"] = image_ops.annulus_energy(diferenca, 0.25, 0.75)
            linha["diff_high"] = image_ops.annulus_energy(diferenca, 0.75, 1.5)
        linhas.append(linha)
    tabela = pd.DataFrame(linhas)
    destino.mkdir(parents=True, exist_ok=True)
    tabela.to_csv(destino / "annulus_energy.csv", index=False, float_format="%.6f")
    logger.info("\n" + tabela.to_string(index=False))


HANDLERS = {"gen": cmd_gen, "train": cmd_train, "eval": cmd_eval, "ablate": cmd_ablate,
            "bench": cmd_bench, "spectrum": cmd_spectrum}


# ============================================================================
# EXECUÇÃO
# ============================================================================

def _erro(e: BaseException, codigo: int) -> int:
    linha = {"error": str(e), "kind": type(e).__name__, "exit_code": codigo}
    print(json.dumps(linha, ensure_ascii=False), file=sys.stderr)
    return codigo


def main(argv: Optional[List[str]] = None) -> int:
    """Ponto de entrada; devolve o código de saída."""
    try:
        args = build_parser().parse_args(argv)
        extras = {"seed": args.seed} if args.seed is not None else {}
        cfg = load_config(args.config, args.overrides, **extras)
    except (ValueError, OSError) as e:
        return _erro(e, 1)

    inicio = datetime.now()
    try:
        args.out.mkdir(parents=True, exist_ok=True)
        configurar_logs(args.out)
        (args.out / EFFECTIVE_CONFIG_NAME).write_text(dump_config(cfg), encoding="utf-8")

        logger.info("")
        logger.info("╔" + "═" * 68 + "╗")
        logger.info("║" + f" CAEL - {args.command.upper()} ".center(68) + "║")
        logger.info("╚" + "═" * 68 + "╝")
        logger.info(f"Saída: {args.out} | seed {cfg.seed}")

        HANDLERS[args.command](args, cfg)

        logger.info("")
        logger.info(f"✓ Concluído em {(datetime.now() - inicio).total_seconds():.1f}s")
        return 0
    except (ValueError, OSError) as e:
        logger.error(f"✗ {type(e).__name__}: {e}")
        logger.exception("Detalhes:")
        return _erro(e, 1)
    except Exception as e:
        logger.error(f"✗ Erro interno: {e}")
        logger.exception("Detalhes:")
        return _erro(e, 2)


if __name__ == "__main__":
    sys.exit(main())
