import numpy as np
import pytest
import torch
import torch.nn.functional as F

from bgcrack.decoder import (BGCrack, CrossOptim, FeatureEmbed, FeatureFusion,
                             ModelConfig, SelfFusion, dense_add, final_fuse)

from conftest import fill_params, small_model_config
from oracles import (batchnorm_infer_np, bilinear_resize_np, conv2d_np,
                     conv_transpose2d_np, maxpool2_np, sigmoid_np, silu_np)


def _zero_biases(module):
    with torch.no_grad():
        for name, p in module.named_parameters():
            if name.endswith("bias"):
                p.zero_()
    return module


def _rand_levels(rng, channels, base=8, batch=1):
    return [torch.from_numpy(rng.uniform(-1, 1, (batch, channels, base >> k, base >> k)))
            for k in range(4)]


# -------------------------------------------------------------------- embeds

def test_embed_shape_contract():
    embed = FeatureEmbed(64, 32)
    assert embed(torch.rand(1, 64, 16, 16)).shape == (1, 32, 16, 16)


def test_embed_zero_fixed_point():
    embed = _zero_biases(FeatureEmbed(8, 4).eval())
    assert torch.all(embed(torch.zeros(1, 8, 6, 6)) == 0)


def test_embed_golden_against_loop_convs():
    embed = fill_params(FeatureEmbed(3, 2).double(), seed=51).eval()
    x = np.random.default_rng(52).uniform(-1, 1, (3, 5, 5))
    out = embed(torch.from_numpy(x)[None])[0].detach().numpy()

    pw, bn, _, conv = embed.block
    ref = conv2d_np(x, pw.weight.detach().numpy(), pw.bias.detach().numpy())
    ref = batchnorm_infer_np(ref, bn.running_mean.numpy(), bn.running_var.numpy(),
                             bn.weight.detach().numpy(), bn.bias.detach().numpy())
    ref = silu_np(ref)
    ref = conv2d_np(ref, conv.weight.detach().numpy(), conv.bias.detach().numpy(), padding=1)
    np.testing.assert_allclose(out, ref, atol=1e-10)


def test_body_embed_with_global_block_composition():
    torch.manual_seed(53)
    model = BGCrack(small_model_config()).eval()
    level3 = torch.rand(1, 48, 4, 4)
    expected = model.body_gips[0](model.body_embeds[2](level3))
    pyramid_like = model.body_embeds[2](level3)
    assert torch.allclose(model.body_gips[0](pyramid_like), expected)


# ----------------------------------------------------------------------- SFM

def test_sfm_preserves_level_shapes():
    torch.manual_seed(54)
    sfm = SelfFusion(4)
    levels = [torch.rand(2, 4, 16 >> k, 16 >> k) for k in range(4)]
    outs = sfm(levels)
    assert [tuple(o.shape) for o in outs] == [tuple(l.shape) for l in levels]


def test_sfm_zero_fixed_point():
    sfm = _zero_biases(SelfFusion(4))
    outs = sfm([torch.zeros(1, 4, 16 >> k, 16 >> k) for k in range(4)])
    assert all(torch.all(o == 0) for o in outs)


def test_sfm_golden_against_loop_oracle():
    sfm = fill_params(SelfFusion(2).double(), seed=55)
    rng = np.random.default_rng(56)
    levels = _rand_levels(rng, 2)
    outs = [o[0].detach().numpy() for o in sfm(levels)]

    f = [l[0].numpy() for l in levels]
    w = [(c.weight.detach().numpy(), c.bias.detach().numpy()) for c in sfm.up_convs]
    u3 = conv2d_np(bilinear_resize_np(f[3], 2, 2), *w[0], padding=1) + f[2]
    u2 = conv2d_np(bilinear_resize_np(u3, 4, 4), *w[1], padding=1) + f[1]
    u1 = conv2d_np(bilinear_resize_np(u2, 8, 8), *w[2], padding=1) + f[0]
    w = [(c.weight.detach().numpy(), c.bias.detach().numpy()) for c in sfm.down_convs]
    d2 = conv2d_np(maxpool2_np(f[0]), *w[0], padding=1) + f[1]
    d3 = conv2d_np(maxpool2_np(d2), *w[1], padding=1) + f[2]
    d4 = conv2d_np(maxpool2_np(d3), *w[2], padding=1) + f[3]
    for out, ref in zip(outs, [u1 + f[0], u2 + d2, u3 + d3, f[3] + d4]):
        np.testing.assert_allclose(out, ref, atol=1e-10)


def test_bilinear_oracle_matches_torch():
    x = torch.from_numpy(np.random.default_rng(57).uniform(-1, 1, (1, 3, 4, 4)))
    up = F.interpolate(x, size=(8, 8), mode="bilinear", align_corners=False)
    np.testing.assert_allclose(up[0].numpy(), bilinear_resize_np(x[0].numpy(), 8, 8),
                               atol=1e-12)
    down = F.interpolate(x, size=(2, 2), mode="bilinear", align_corners=False)
    np.testing.assert_allclose(down[0].numpy(), bilinear_resize_np(x[0].numpy(), 2, 2),
                               atol=1e-12)


# ----------------------------------------------------------------------- COM

def _identity_weights(com):
    with torch.no_grad():
        for plist in (com.edge_weights, com.body_weights):
            for vec in plist:
                vec.zero_()
                vec[0] = 1.0


def test_com_identity_degeneracy():
    com = CrossOptim()
    _identity_weights(com)
    rng = np.random.default_rng(58)
    edge, body = _rand_levels(rng, 3), _rand_levels(rng, 3)
    new_edge, new_body = com(edge, body)
    for a, b in zip(new_edge, edge):
        assert torch.equal(a, b)
    for a, b in zip(new_body, body):
        assert torch.equal(a, b)


def test_com_zero_edge_stream_algebra():
    com = CrossOptim()
    rng = np.random.default_rng(59)
    edge = [torch.zeros_like(t) for t in _rand_levels(rng, 3)]
    body = _rand_levels(rng, 3)
    new_edge, new_body = com(edge, body)
    for t in new_edge:
        assert torch.all(t == 0)
    for j, t in enumerate(new_body):
        total = com.body_weights[j].sum().double()
        assert torch.allclose(t, total * body[j], atol=1e-12)


def test_com_golden_against_formula_oracle():
    com = CrossOptim().double()
    rng = np.random.default_rng(60)
    with torch.no_grad():
        for plist in (com.edge_weights, com.body_weights):
            for vec in plist:
                vec.copy_(torch.from_numpy(rng.uniform(-1, 1, vec.shape)))
    edge, body = _rand_levels(rng, 2), _rand_levels(rng, 2)
    new_edge, new_body = com(edge, body)

    e = [t[0].numpy() for t in edge]
    b = [t[0].numpy() for t in body]
    for j in range(4):
        size = e[j].shape[-1]
        we = com.edge_weights[j].detach().numpy()
        wb = com.body_weights[j].detach().numpy()
        ref_e = we[0] * e[j]
        ref_b = wb[0] * b[j]
        for idx, k in enumerate(range(j, 4), start=1):
            ref_e = ref_e + we[idx] * (e[j] * sigmoid_np(bilinear_resize_np(b[k], size, size)))
            ref_b = ref_b + wb[idx] * (b[j] + bilinear_resize_np(e[k], size, size))
        np.testing.assert_allclose(new_edge[j][0].detach().numpy(), ref_e, atol=1e-10)
        np.testing.assert_allclose(new_body[j][0].detach().numpy(), ref_b, atol=1e-10)


def test_com_weight_length_validation():
    com = CrossOptim()
    with torch.no_grad():
        bad = torch.nn.Parameter(torch.ones(3))
        com.edge_weights[0] = bad
    rng = np.random.default_rng(61)
    with pytest.raises(ValueError):
        com(_rand_levels(rng, 2), _rand_levels(rng, 2))


# ----------------------------------------------------------------- dense add

def test_dense_add_empty_history():
    rng = np.random.default_rng(62)
    state = _rand_levels(rng, 2)
    out = dense_add(state, [])
    for a, b in zip(out, state):
        assert torch.equal(a, b)


def test_dense_add_zero_history():
    rng = np.random.default_rng(63)
    state = _rand_levels(rng, 2)
    zeros = [torch.zeros_like(t) for t in state]
    for a, b in zip(dense_add(state, [zeros]), state):
        assert torch.equal(a, b)


def test_dense_add_sums_two_states():
    rng = np.random.default_rng(64)
    s1, s2 = _rand_levels(rng, 2), _rand_levels(rng, 2)
    for out, a, b in zip(dense_add(s1, [s2]), s1, s2):
        assert torch.allclose(out, a + b)


def test_dense_add_geometry_mismatch():
    rng = np.random.default_rng(65)
    s1 = _rand_levels(rng, 2)
    s2 = _rand_levels(rng, 2, base=16)
    with pytest.raises(ValueError):
        dense_add(s1, [s2])


# ----------------------------------------------------------------------- FFM

def test_ffm_output_geometry():
    torch.manual_seed(66)
    ffm = FeatureFusion(4, 3, dual=True).eval()
    primary = [torch.rand(1, 4, 8 >> k, 8 >> k) for k in range(4)]
    aux = [torch.rand(1, 4, 8 >> k, 8 >> k) for k in range(4)]
    stem = torch.rand(1, 3, 8, 8)
    assert ffm(primary, aux, stem).shape == (1, 1, 32, 32)


def test_ffm_zero_features_give_even_odds():
    ffm = _zero_biases(FeatureFusion(4, 3, dual=True).eval())
    primary = [torch.zeros(1, 4, 8 >> k, 8 >> k) for k in range(4)]
    aux = [torch.zeros_like(t) for t in primary]
    logits = ffm(primary, aux, torch.zeros(1, 3, 8, 8))
    assert torch.all(logits == 0)
    assert torch.all(torch.sigmoid(logits) == 0.5)


def _fuse_step_np(step, x):
    dw, bn, conv, _ = step.block
    z = conv2d_np(x, dw.weight.detach().numpy(), dw.bias.detach().numpy(),
                  padding=3, groups=x.shape[0])
    z = batchnorm_infer_np(z, bn.running_mean.numpy(), bn.running_var.numpy(),
                           bn.weight.detach().numpy(), bn.bias.detach().numpy())
    z = conv2d_np(z, conv.weight.detach().numpy(), conv.bias.detach().numpy(), padding=1)
    return silu_np(z)


def test_ffm_golden_against_loop_oracle():
    ffm = fill_params(FeatureFusion(2, 2, dual=True).double(), seed=67).eval()
    rng = np.random.default_rng(68)
    primary = _rand_levels(rng, 2)
    aux = _rand_levels(rng, 2)
    stem = torch.from_numpy(rng.uniform(-1, 1, (1, 2, 8, 8)))
    out = ffm(primary, aux, stem)[0].detach().numpy()

    p = [t[0].numpy() for t in primary]
    a = [t[0].numpy() for t in aux]
    x = _fuse_step_np(ffm.steps[0], np.concatenate([p[3], a[3]]))
    for step, up, j in zip(list(ffm.steps[1:]), ffm.level_up, (2, 1, 0)):
        x = conv_transpose2d_np(x, up.weight.detach().numpy(), up.bias.detach().numpy())
        x = _fuse_step_np(step, np.concatenate([x, p[j], a[j]]))
    x = _fuse_step_np(ffm.stem_step, np.concatenate([x, stem[0].numpy()]))
    for up in ffm.final_up:
        x = conv_transpose2d_np(x, up.weight.detach().numpy(), up.bias.detach().numpy())
    ref = conv2d_np(x, ffm.head.weight.detach().numpy(), ffm.head.bias.detach().numpy())
    np.testing.assert_allclose(out, ref, atol=1e-9)


# ---------------------------------------------------------------- final fuse

def test_final_fuse_zero_edge_keeps_body():
    z_body = torch.randn(1, 1, 4, 4)
    pair = final_fuse(z_body, torch.zeros_like(z_body))
    assert torch.allclose(pair.prob_body, torch.sigmoid(z_body))


def test_final_fuse_all_zero_is_even_odds():
    pair = final_fuse(torch.zeros(1, 1, 4, 4), torch.zeros(1, 1, 4, 4))
    assert torch.all(pair.prob_body == 0.5)
    assert torch.all(pair.prob_edge == 0.5)


def test_final_fuse_closed_form():
    pair = final_fuse(torch.full((1, 1, 2, 2), 2.0), torch.full((1, 1, 2, 2), -1.0))
    assert torch.allclose(pair.prob_body, torch.full((1, 1, 2, 2), 0.7310585786300049))


def test_final_fuse_shape_mismatch():
    with pytest.raises(ValueError):
        final_fuse(torch.zeros(1, 1, 4, 4), torch.zeros(1, 1, 4, 2))


# --------------------------------------------------------------- whole model

def test_forward_output_contract():
    torch.manual_seed(69)
    model = BGCrack(small_model_config()).eval()
    pair = model(torch.rand(1, 3, 64, 64))
    assert pair.prob_body.shape == (1, 1, 64, 64)
    assert pair.prob_edge.shape == (1, 1, 64, 64)
    for prob in (pair.prob_body, pair.prob_edge):
        assert torch.all(prob > 0) and torch.all(prob < 1)
    assert torch.allclose(pair.prob_body, torch.sigmoid(pair.logit_body))
    assert torch.allclose(pair.prob_edge, torch.sigmoid(pair.logit_edge))


def test_forward_deterministic():
    torch.manual_seed(70)
    model = BGCrack(small_model_config()).eval()
    x = torch.rand(1, 3, 64, 64)
    a, b = model(x), model(x)
    assert torch.equal(a.prob_body, b.prob_body)
    assert torch.equal(a.prob_edge, b.prob_edge)


def test_edge_ablated_forward_still_predicts_body():
    torch.manual_seed(71)
    model = BGCrack(small_model_config(use_edge=False)).eval()
    pair = model(torch.rand(1, 3, 64, 64))
    assert pair.prob_body.shape == (1, 1, 64, 64)
    assert pair.prob_edge is None and pair.logit_edge is None


def test_every_parameter_receives_gradient():
    torch.manual_seed(72)
    model = BGCrack(small_model_config()).eval()
    pair = model(torch.rand(1, 3, 64, 64))
    target_b = torch.zeros(1, 1, 64, 64)
    target_b[0, 0, 20:40, 30:34] = 1.0
    loss = ((pair.prob_body - target_b) ** 2).mean() + (pair.prob_edge ** 2).mean()
    loss.backward()
    missing = [name for name, p in model.named_parameters()
               if p.grad is None or torch.all(p.grad == 0)]
    assert missing == []


def test_config_roundtrip():
    cfg = small_model_config(use_gip=False)
    rebuilt = ModelConfig.from_dict(cfg.to_dict())
    assert rebuilt.to_dict() == cfg.to_dict()


def test_minimal_geometry_forward():
    torch.manual_seed(73)
    model = BGCrack(small_model_config()).eval()
    pair = model(torch.rand(1, 3, 32, 32))
    assert pair.prob_body.shape == (1, 1, 32, 32)


def test_rejects_bad_geometry():
    model = BGCrack(small_model_config()).eval()
    with pytest.raises(ValueError):
        model(torch.rand(1, 3, 48, 48))
