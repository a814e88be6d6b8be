# -*- coding: utf-8 -*-
import numpy as np
import pytest

from maet import (AECA, BranchState, CaelModel, CrossAttention, MAETBlock, MultiGrainedCrossAttention, aeca,
                  attention, cael_forward, count_parameters, encoder_block_params, maet_block, monitor_attention,
                  multi_grained_cross_attention)
from tensor import ShapeError, Tensor, add, concat, gradcheck, mul, no_grad, slice_axis, softmax, sum_


def _estado(rng, d, n, lote=1, grad=False):
    return BranchState(Tensor(rng.normal(size=(lote, n + 1, d)), requires_grad=grad),
                       Tensor(rng.normal(size=(lote, n + 1, 2 * d)), requires_grad=grad),
                       Tensor(rng.normal(size=(lote, n + 1, 2 * d)), requires_grad=grad))


# =============================================================================
# BLOCO MAET
# =============================================================================

def test_block_preserves_shapes_at_reference_dims(toy_cfg, rng):
    cfg = toy_cfg(dim=192, heads=8, S=2, L=3, E=3, N=2, mlp_ratio=4.0, image_size=224)
    bloco = MAETBlock(cfg, rng)
    estado = _estado(rng, 192, 49)
    with no_grad():
        saida = maet_block(estado, bloco, cfg)
    assert saida.shapes() == estado.shapes() == ((1, 50, 192), (1, 50, 384), (1, 50, 384))


def test_empty_edge_encoder_passes_tokens_through(toy_cfg, rng):
    cfg = toy_cfg(E=0, aeca_enabled=False)
    bloco = MAETBlock(cfg, rng)
    assert bloco.edge_encoder.blocks == []
    estado = _estado(rng, cfg.dim, 4)
    with no_grad():
        saida = maet_block(estado, bloco, cfg)
    np.testing.assert_array_equal(saida.edge.data, estado.edge.data)


def test_attention_rows_sum_to_one(toy_cfg, rng):
    for query_mode in ("cls", "patch", "all"):
        cfg = toy_cfg(query_mode=query_mode, S=2, L=2, E=2, N=2)
        bloco = MAETBlock(cfg, rng)
        for _ in range(5):
            estado = _estado(rng, cfg.dim, 4, lote=2)
            with no_grad(), monitor_attention() as monitor:
                maet_block(estado, bloco, cfg)
            assert {r.kind for r in monitor.records} == {"mhsa", "mgca", "aeca"}
            for registro in monitor.records:
                assert (registro.probs >= 0).all()
                np.testing.assert_allclose(registro.probs.sum(axis=-1), 1.0, atol=1e-9)


def test_nested_monitors_detach_by_identity(rng):
    tokens = Tensor(rng.normal(size=(1, 3, 8)))
    with no_grad(), monitor_attention() as externo:
        with monitor_attention() as interno:
            pass
        attention(tokens, tokens, tokens, 2, "mhsa")
    attention(tokens, tokens, tokens, 2, "mhsa")
    assert len(externo.records) == 1
    assert interno.records == []


def test_gradcheck_full_block(toy_cfg, rng):
    cfg = toy_cfg()
    bloco = MAETBlock(cfg, rng)
    estado = _estado(rng, cfg.dim, 4, grad=True)
    pesos = [Tensor(np.random.default_rng(i).normal(size=s)) for i, s in enumerate(estado.shapes())]

    def perda(f, c, e):
        saida = maet_block(BranchState(f, c, e), bloco, cfg)
        total = sum_(mul(saida.fine, pesos[0]))
        total = add(total, sum_(mul(saida.coarse, pesos[1])))
        return add(total, sum_(mul(saida.edge, pesos[2])))

    assert gradcheck(perda, [estado.fine, estado.coarse, estado.edge]) < 1e-3


def test_block_rejects_shape_drift(toy_cfg, rng):
    cfg = toy_cfg()
    bloco = MAETBlock(cfg, rng)
    estado = _estado(rng, cfg.dim, 4)
    estado.coarse = Tensor(rng.normal(size=(1, 3, 2 * cfg.dim)))
    with pytest.raises(ShapeError):
        with no_grad():
            maet_block(estado, bloco, cfg)


# =============================================================================
# ATENÇÃO CRUZADA MULTI-GRANULAR
# =============================================================================

def test_zero_logits_give_mean_of_values(rng):
    attn = CrossAttention(8, 2, rng, 0.02, "mgca")
    attn.wq.weight.data[:] = 0.0
    consulta = Tensor(rng.normal(size=(1, 1, 8)))
    contexto = Tensor(rng.normal(size=(1, 6, 8)))
    with no_grad():
        saida = attn(consulta, contexto).data
        valores = attn.wv(contexto).data
    np.testing.assert_allclose(saida[0, 0], valores[0].mean(axis=0), rtol=1e-12, atol=1e-15)


def test_mgca_patch_tokens_unchanged(toy_cfg, rng):
    cfg = toy_cfg()
    modulo = MultiGrainedCrossAttention(cfg.dim, cfg.heads, rng, 0.02)
    estado = _estado(rng, cfg.dim, 4, lote=2)
    with no_grad():
        fino, grosso = multi_grained_cross_attention(estado.fine, estado.coarse, modulo)
    np.testing.assert_array_equal(fino.data[:, 1:], estado.fine.data[:, 1:])
    np.testing.assert_array_equal(grosso.data[:, 1:], estado.coarse.data[:, 1:])
    assert not np.allclose(fino.data[:, 0], estado.fine.data[:, 0])


def test_mgca_rejects_different_n(toy_cfg, rng):
    cfg = toy_cfg()
    modulo = MultiGrainedCrossAttention(cfg.dim, cfg.heads, rng, 0.02)
    with pytest.raises(ShapeError):
        modulo(Tensor(np.zeros((1, 5, cfg.dim))), Tensor(np.zeros((1, 4, 2 * cfg.dim))))


def test_softmax_argmax_shift_invariant(rng):
    logits = rng.normal(size=(3, 7))
    np.testing.assert_array_equal(softmax(Tensor(logits)).data.argmax(-1),
                                  softmax(Tensor(logits + 123.0)).data.argmax(-1))


# =============================================================================
# AECA
# =============================================================================

def test_aeca_row_structure(toy_cfg, rng):
    cfg = toy_cfg()
    modulo = AECA(cfg, rng)
    estado = _estado(rng, cfg.dim, 4, lote=2)
    with no_grad():
        saida = aeca(estado.fine, estado.coarse, estado.edge, modulo, cfg).data
        cls_e = slice_axis(estado.edge, 0, 1, axis=1)
        fundidos = []
        for ramo, proj, attn, volta in ((estado.fine, modulo.fine_query, modulo.fine_attn, modulo.fine_back),
                                        (estado.coarse, modulo.coarse_query, modulo.coarse_attn,
                                         modulo.coarse_back)):
            q = proj(cls_e)
            t_all = concat([q, slice_axis(ramo, 1, 5, axis=1)], axis=1)
            fundidos.append(add(cls_e, volta(attn(q, t_all))).data)
    assert saida.shape == estado.edge.shape
    np.testing.assert_allclose(saida[:, 0], (fundidos[0] + fundidos[1])[:, 0], rtol=1e-12, atol=1e-14)
    np.testing.assert_array_equal(saida[:, 1:], estado.edge.data[:, 1:])


def test_aeca_cls_query_attends_one_row(toy_cfg, rng):
    cfg = toy_cfg()
    modulo = AECA(cfg, rng)
    estado = _estado(rng, cfg.dim, 4)
    with no_grad(), monitor_attention() as monitor:
        modulo(estado.fine, estado.coarse, estado.edge)
    formas = [r.probs.shape for r in monitor.of_kind("aeca")]
    assert formas == [(1, cfg.heads, 1, 5), (1, cfg.heads, 1, 5)]
    dh_fino, dh_grosso = cfg.dim // cfg.heads, 2 * cfg.dim // cfg.heads
    assert monitor.mults("aeca") == cfg.heads * 5 * (dh_fino + dh_grosso)


def test_aeca_all_query_matches_dense_oracle(toy_cfg, rng):
    cfg = toy_cfg(query_mode="all")
    modulo = AECA(cfg, rng)
    n = 3
    estado = _estado(rng, cfg.dim, n)
    with no_grad(), monitor_attention() as monitor:
        modulo(estado.fine, estado.coarse, estado.edge)
        q_proj = modulo.fine_query(estado.edge).data
        cls_proj = q_proj[:, :1]
        t_all = np.concatenate([cls_proj, estado.fine.data[:, 1:]], axis=1)
        q = q_proj @ modulo.fine_attn.wq.weight.data + modulo.fine_attn.wq.bias.data
        k = t_all @ modulo.fine_attn.wk.weight.data + modulo.fine_attn.wk.bias.data

    mapa = monitor.of_kind("aeca")[0].probs
    assert mapa.shape == (1, cfg.heads, n + 1, n + 1)
    dh = cfg.dim // cfg.heads
    for h in range(cfg.heads):
        qh, kh = q[0, :, h * dh:(h + 1) * dh], k[0, :, h * dh:(h + 1) * dh]
        esperado = np.empty((n + 1, n + 1))
        for i in range(n + 1):
            scores = [qh[i] @ kh[j] / np.sqrt(dh) for j in range(n + 1)]
            e = np.exp(np.array(scores) - max(scores))
            esperado[i] = e / e.sum()
        np.testing.assert_allclose(mapa[0, h], esperado, rtol=1e-10)


def test_aeca_patch_query_requires_patches(toy_cfg, rng):
    cfg = toy_cfg(query_mode="patch")
    modulo = AECA(cfg, rng)
    estado = _estado(rng, cfg.dim, 0)
    with pytest.raises(ShapeError, match="patch"):
        modulo(estado.fine, estado.coarse, estado.edge)


def test_aeca_disabled_is_identity(toy_cfg, rng):
    cfg = toy_cfg(aeca_enabled=False)
    bloco = MAETBlock(cfg, rng)
    assert not hasattr(bloco, "aeca")
    estado = _estado(rng, cfg.dim, 4)
    assert aeca(estado.fine, estado.coarse, estado.edge, None, cfg) is estado.edge


@pytest.mark.parametrize("query_mode", ["cls", "patch", "all"])
def test_fusion_modes_share_output_shape(toy_cfg, rng, query_mode):
    estado = _estado(rng, 8, 4, lote=2)
    formas = set()
    for fusao in ("cross_attention", "concatenation", "summation"):
        cfg = toy_cfg(fusion_mode=fusao, query_mode=query_mode)
        with no_grad():
            formas.add(AECA(cfg, rng)(estado.fine, estado.coarse, estado.edge).shape)
    assert formas == {estado.edge.shape}


def test_aeca_single_appearance_branch(toy_cfg, rng):
    cfg = toy_cfg(branches=("C", "E"))
    modulo = AECA(cfg, rng)
    assert not hasattr(modulo, "fine_query")
    estado = _estado(rng, cfg.dim, 4)
    with no_grad():
        saida = modulo(None, estado.coarse, estado.edge)
    np.testing.assert_array_equal(saida.data[:, 1:], estado.edge.data[:, 1:])


# =============================================================================
# MODELO E CONTAGEM DE PARÂMETROS
# =============================================================================

@pytest.mark.parametrize("overrides", [
    {},
    {"branches": ("F",)},
    {"branches": ("C", "E")},
    {"branches": ("F", "E")},
    {"branches": ("E",)},
    {"fusion_mode": "concatenation"},
    {"fusion_mode": "summation", "branches": ("F", "E")},
    {"aeca_enabled": False},
    {"E": 0, "K": 2, "N": 2},
    {"image_size": 64, "n_classes": 5},
])
def test_count_parameters_matches_allocation(toy_cfg, overrides):
    cfg = toy_cfg(**overrides)
    assert count_parameters(cfg) == CaelModel(cfg).num_parameters()


def test_fine_only_model_structure(toy_cfg):
    cfg = toy_cfg(branches=("F",), K=2, S=2)
    modelo = CaelModel(cfg)
    assert list(modelo.experts) == ["F"]
    for bloco in modelo.blocks:
        assert len(bloco.fine_encoder.blocks) == 2
        assert not any(hasattr(bloco, nome) for nome in ("coarse_encoder", "edge_encoder", "cross", "aeca"))
    assert not hasattr(modelo.align, "coarse_stem") and not hasattr(modelo.align, "edge_stem")


def test_forward_is_deterministic_and_averages_experts(toy_cfg, rgb):
    cfg = toy_cfg()
    imagens = rgb(32, batch=2)
    with no_grad():
        a, ramos = cael_forward(imagens, cfg, CaelModel(cfg, seed=3))
        b, _ = cael_forward(imagens, cfg, CaelModel(cfg, seed=3))
    np.testing.assert_array_equal(a.data, b.data)
    assert a.shape == (2, cfg.n_classes)
    assert set(ramos) == {"F", "C", "E"}
    np.testing.assert_allclose(a.data, np.mean([r.data for r in ramos.values()], axis=0), rtol=1e-12)


def test_forward_computes_edges_with_configured_operator(toy_cfg, rgb):
    cfg = toy_cfg(operator="canny")
    modelo = CaelModel(cfg)
    imagens = rgb(32, batch=1)
    with no_grad():
        implicito, _ = modelo(imagens)
        explicito, _ = modelo(imagens, modelo.edges_for(imagens))
    np.testing.assert_array_equal(implicito.data, explicito.data)


def test_cael_forward_rejects_other_config(toy_cfg, rgb):
    cfg = toy_cfg()
    with pytest.raises(ValueError):
        cael_forward(rgb(32, batch=1), toy_cfg(K=2), CaelModel(cfg))


def test_prediction_invariant_to_logit_shift(toy_cfg, rgb):
    cfg = toy_cfg()
    with no_grad():
        logits, _ = CaelModel(cfg)(rgb(32, batch=3))
    np.testing.assert_array_equal(logits.data.argmax(1), (logits.data + 5.0).argmax(1))


def test_parameter_deltas_at_reference_dims(toy_cfg):
    cfg = toy_cfg(dim=192, heads=8, image_size=224, K=4, S=2, L=3, E=3, N=2, mlp_ratio=4.0,
                  fine_channels=192, coarse_channels=64)
    por_e = [count_parameters(cfg.with_overrides(E=e)) for e in range(5)]
    por_k = [count_parameters(cfg.with_overrides(K=k)) for k in range(1, 6)]
    assert len(set(np.diff(por_e))) == 1
    assert len(set(np.diff(por_k))) == 1
    assert por_e[1] - por_e[0] == 4 * encoder_block_params(384, 4.0)


@pytest.mark.parametrize("campo", ["S", "L", "N", "E", "K"])
def test_count_is_affine_in_each_depth(toy_cfg, campo):
    cfg = toy_cfg()
    contagens = [count_parameters(cfg.with_overrides(**{campo: v})) for v in (1, 2, 3, 4)]
    assert len(set(np.diff(contagens))) == 1
