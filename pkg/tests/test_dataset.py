# -*- coding: utf-8 -*-
import numpy as np
import pytest

import dataset
from dataset import (FAMILY_LABELS, CorpusSpec, CorpusWriteError, ManifestEntry, ManifestError, SplitError,
                     TaxonomyLabel, class_index, generate_corpus, identity_overlaps, largest_remainder,
                     load_manifest, render_entry, split_corpus, write_manifest)
from image_ops import annulus_energy, mean_spectrum, read_image


def _spec(size=32, **counts):
    base = {familia: 0 for familia in dataset.FAMILIES}
    base.update(counts)
    forcas = {familia: 0.2 for familia in dataset.FAMILIES}
    return CorpusSpec(counts=base, strengths=forcas, size=size, ratios=(0.6, 0.2, 0.2), workers=2)


# =============================================================================
# TAXONOMIA
# =============================================================================

@pytest.mark.parametrize("rotulo", [
    TaxonomyLabel("real", "none", "none", "ddpm"),
    TaxonomyLabel("fake", "EFS", "none", "stylegan"),
    TaxonomyLabel("fake", "XYZ", "gan", "stylegan"),
    TaxonomyLabel("fake", "FS", "gan", "none"),
    TaxonomyLabel("talvez"),
])
def test_invalid_labels(rotulo):
    assert rotulo.problems()
    with pytest.raises(ValueError):
        rotulo.validate()


def test_family_labels_are_valid():
    for rotulo in FAMILY_LABELS.values():
        rotulo.validate()
    assert not TaxonomyLabel("real").is_fake


@pytest.mark.parametrize("familia,coarse,forgery,generator", [
    ("smooth_real", 0, 0, 0),
    ("grid_artifact_gan", 1, 1, 1),
    ("low_artifact_diffusion", 1, 1, 2),
    ("patch_edit_am", 1, 2, 3),
    ("blend_boundary_fs", 1, 3, 4),
])
def test_class_index_per_level(familia, coarse, forgery, generator):
    rotulo = FAMILY_LABELS[familia]
    assert [class_index(rotulo, nivel) for nivel in ("coarse", "forgery", "generator")] == [coarse, forgery, generator]


# =============================================================================
# FAMÍLIAS SINTÉTICAS
# =============================================================================

@pytest.mark.parametrize("familia", ["grid_artifact_gan", "low_artifact_diffusion"])
def test_zero_strength_returns_base(familia):
    for i in range(3):
        img = render_entry(familia, i, 7, 32, 0.0)
        base = dataset.smooth_real(np.random.default_rng([7, dataset.FAMILIES.index(familia), i]), 32)
        np.testing.assert_array_equal(img, base)


def test_zero_strength_edit_returns_identity_real():
    real = render_entry("smooth_real", 2, 7, 32, 0.0)
    for familia in ("patch_edit_am", "blend_boundary_fs"):
        np.testing.assert_array_equal(render_entry(familia, 0, 7, 32, 0.0, base_identity=2, donor_identity=1), real)


def test_edit_requires_base_identity():
    with pytest.raises(ValueError):
        render_entry("patch_edit_am", 0, 0, 32, 0.5)


def test_render_is_in_unit_range():
    for familia in dataset.FAMILIES:
        img = render_entry(familia, 1, 3, 32, 1.0, base_identity=0, donor_identity=1)
        assert img.shape == (32, 32, 3)
        assert img.min() >= 0.0 and img.max() <= 1.0


def test_grid_family_has_mid_frequency_excess():
    reais = [render_entry("smooth_real", i, 0, 64, 0.0) for i in range(16)]
    gans = [render_entry("grid_artifact_gan", i, 0, 64, 0.1) for i in range(16)]
    diferenca = mean_spectrum(gans) - mean_spectrum(reais)
    assert annulus_energy(diferenca, 0.3, 0.75) > 0.0


# =============================================================================
# CORPUS
# =============================================================================

def test_empty_corpus_writes_valid_manifest(tmp_path):
    entradas = generate_corpus(_spec(), 0, tmp_path)
    assert entradas == []
    assert load_manifest(tmp_path / "manifest.tsv") == []


def test_corpus_is_byte_deterministic(tmp_path):
    spec = _spec(smooth_real=6, grid_artifact_gan=4, low_artifact_diffusion=2, patch_edit_am=2, blend_boundary_fs=2)
    a = generate_corpus(spec, 5, tmp_path / "a")
    b = generate_corpus(spec, 5, tmp_path / "b")
    assert a == b
    assert (tmp_path / "a" / "manifest.tsv").read_bytes() == (tmp_path / "b" / "manifest.tsv").read_bytes()
    for e in a:
        assert (tmp_path / "a" / e.path).read_bytes() == (tmp_path / "b" / e.path).read_bytes()
    assert len(load_manifest(tmp_path / "a" / "manifest.tsv")) == 16


def test_corpus_keeps_identities_in_one_split(tmp_path):
    spec = _spec(smooth_real=10, patch_edit_am=10, blend_boundary_fs=10)
    entradas = generate_corpus(spec, 1, tmp_path)
    assert identity_overlaps(entradas) == {}
    splits_reais = {e.identity_id: e.split for e in entradas if e.family == "smooth_real"}
    for e in entradas:
        assert e.split == splits_reais[e.identity_id]


def test_face_swap_donor_shares_split_with_base(tmp_path):
    spec = _spec(smooth_real=20, blend_boundary_fs=20)
    entradas = generate_corpus(spec, 0, tmp_path)
    splits_reais = {e.identity_id: e.split for e in entradas if e.family == "smooth_real"}
    doadores = dataset.face_swap_donors(entradas, 0)
    trocas = [e for e in entradas if e.family == "blend_boundary_fs"]
    assert set(doadores) == {e.path for e in trocas}
    for indice, e in enumerate(trocas):
        doador = doadores[e.path]
        assert splits_reais[doador] == e.split and doador != e.identity_id
        esperado = render_entry("blend_boundary_fs", indice, 0, 32, 0.2, base_identity=e.identity_id,
                                donor_identity=doador)
        np.testing.assert_allclose(read_image(tmp_path / e.path), esperado, atol=1.0 / 255)


def test_edit_families_need_reals():
    with pytest.raises(ValueError, match="n_real"):
        _spec(patch_edit_am=2).validate()


def test_corpus_write_error(tmp_path):
    bloqueio = tmp_path / "arquivo"
    bloqueio.write_text("x")
    with pytest.raises(CorpusWriteError) as info:
        generate_corpus(_spec(smooth_real=1), 0, bloqueio)
    assert bloqueio in info.value.path.parents


def test_spec_from_config(toy_cfg):
    spec = CorpusSpec.from_config(toy_cfg(n_am=3))
    assert spec.counts["patch_edit_am"] == 3 and spec.size == 32
    spec.validate()


def test_spec_families_carry_strength_and_label(toy_cfg):
    cfg = toy_cfg(n_am=3, am_strength=0.7)
    familias = CorpusSpec.from_config(cfg).families()
    assert [f.kind for f in familias] == ["smooth_real", "grid_artifact_gan", "patch_edit_am"]
    edicao = familias[-1]
    assert edicao.artifact_strength == 0.7
    assert edicao.label == FAMILY_LABELS["patch_edit_am"] and edicao.label.level2 == "AM"


# =============================================================================
# PARTIÇÃO
# =============================================================================

def test_largest_remainder_counts():
    assert largest_remainder(30000, (0.806, 0.1, 0.094)) == [24180, 3000, 2820]
    assert largest_remainder(10, (0.8, 0.1, 0.1)) == [8, 1, 1]
    assert sum(largest_remainder(7, (1 / 3, 1 / 3, 1 / 3))) == 7


def test_split_counts_without_identities():
    entradas = [ManifestEntry(f"x{i}.ppm", FAMILY_LABELS["grid_artifact_gan"], "train") for i in range(30000)]
    saida = split_corpus(entradas, (0.806, 0.1, 0.094), seed=0)
    contagem = {s: sum(1 for e in saida if e.split == s) for s in dataset.SPLITS}
    assert contagem == {"train": 24180, "val": 3000, "test": 2820}


def test_single_identity_lands_in_one_split():
    rotulo = FAMILY_LABELS["smooth_real"]
    entradas = [ManifestEntry(f"r{i}.ppm", rotulo, "train", identity_id=0) for i in range(5)]
    saida = split_corpus(entradas, (0.8, 0.1, 0.1), seed=3)
    assert len({e.split for e in saida}) == 1


def test_strict_split_needs_enough_identities():
    rotulo = FAMILY_LABELS["smooth_real"]
    entradas = [ManifestEntry("r.ppm", rotulo, "train", identity_id=0)]
    with pytest.raises(SplitError):
        split_corpus(entradas, (0.8, 0.1, 0.1), seed=0, strict=True)


@pytest.mark.parametrize("ratios", [(0.5, 0.5), (0.7, 0.2, 0.2), (1.2, -0.1, -0.1)])
def test_invalid_ratios(ratios):
    with pytest.raises(SplitError):
        split_corpus([], ratios, seed=0)


# =============================================================================
# MANIFESTO
# =============================================================================

def _gravar(tmp_path, *linhas):
    caminho = tmp_path / "manifest.tsv"
    caminho.write_text(dataset.MANIFEST_HEADER + "".join(linha + "\n" for linha in linhas), encoding="utf-8")
    return caminho


def test_manifest_roundtrip(tmp_path):
    entradas = [ManifestEntry("a.ppm", FAMILY_LABELS["smooth_real"], "train", 0),
                ManifestEntry("b.ppm", FAMILY_LABELS["grid_artifact_gan"], "test"),
                ManifestEntry("c.ppm", FAMILY_LABELS["patch_edit_am"], "train", 0)]
    caminho = write_manifest(tmp_path / "m.tsv", entradas)
    assert load_manifest(caminho, check_files=False) == entradas


def test_manifest_reports_label_error_with_line(tmp_path):
    caminho = _gravar(tmp_path,
                      "a.ppm\treal\tnone\tnone\tnone\ttrain\t0",
                      "b.ppm\treal\tnone\tnone\tddpm\ttrain\t1")
    with pytest.raises(ManifestError) as info:
        load_manifest(caminho, check_files=False)
    assert len(info.value.problems) == 1
    assert "linha 4" in info.value.problems[0]


def test_manifest_collects_every_problem(tmp_path):
    caminho = _gravar(tmp_path,
                      "a.ppm\treal\tnone\tnone\tnone\ttrain\t0",
                      "b.ppm\treal\tnone\tnone\tnone\tholdout\t1",
                      "c.ppm\tfake\tEFS\tgan",
                      "d.ppm\treal\tnone\tnone\tnone\ttrain\tabc")
    with pytest.raises(ManifestError) as info:
        load_manifest(caminho)
    textos = " | ".join(info.value.problems)
    assert "imagem inexistente 'a.ppm'" in textos
    assert "split desconhecido" in textos
    assert "7 campos" in textos
    assert "identidade inválida" in textos


def test_manifest_identity_overlap(tmp_path):
    caminho = _gravar(tmp_path,
                      "a.ppm\treal\tnone\tnone\tnone\ttrain\t3",
                      "b.ppm\tfake\tAM\tgan\tpatchedit\ttest\t3")
    with pytest.raises(ManifestError, match="identidade 3"):
        load_manifest(caminho, check_files=False)


def test_manifest_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_manifest(tmp_path / "nada.tsv")


def test_select_by_split_and_family():
    entradas = [ManifestEntry("a", FAMILY_LABELS["smooth_real"], "train", 0),
                ManifestEntry("b", FAMILY_LABELS["grid_artifact_gan"], "test"),
                ManifestEntry("c", FAMILY_LABELS["grid_artifact_gan"], "train")]
    assert [e.path for e in dataset.select(entradas, split="train")] == ["a", "c"]
    assert [e.path for e in dataset.select(entradas, families=["grid_artifact_gan"])] == ["b", "c"]


def test_load_images_stacks_in_order(tmp_path):
    entradas = generate_corpus(_spec(smooth_real=3), 0, tmp_path)
    imagens = dataset.load_images(entradas, tmp_path, workers=2)
    assert imagens.shape == (3, 32, 32, 3)
    np.testing.assert_allclose(imagens[1], np.round(render_entry("smooth_real", 1, 0, 32, 0.0) * 255) / 255)
