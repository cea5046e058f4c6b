import numpy as np
import pytest

from cmrecon import ops
from cmrecon.attention import param_count
from cmrecon.autodiff import ShapeError, Tensor, grad_check
from cmrecon.rng import RngStream
from cmrecon.unet import (UNetConfig, attention_sites, build_unet,
                          model_param_count, unet_forward)

RNG = RngStream(43, "test.unet")


def _cfg(**kw):
    base = dict(base_channels=4, depth=2, input_size=(16, 16))
    base.update(kw)
    return UNetConfig(**base)


def test_backbone_count_closed_form_depth2_base8():
    # two 3x3 convs + bn per block; blocks at 8, 16, 32 channels; two
    # transposed 2x2 convs; 1x1 head. Tallied by hand: 29,641.
    model = build_unet(UNetConfig(base_channels=8, depth=2, input_size=(16, 16)),
                       RNG.child("count"))

    def conv(oc, ic, k):
        return oc * ic * k * k + oc

    def block(ic, oc):
        return conv(oc, ic, 3) + conv(oc, oc, 3) + 4 * oc  # two bn pairs

    expect = (block(1, 8) + block(8, 16)            # encoder path
              + block(16, 32)                       # bridge
              + (32 * 16 * 4 + 16) + block(32, 16)  # up + decoder level 1
              + (16 * 8 * 4 + 8) + block(16, 8)     # up + decoder level 0
              + (8 * 1 + 1))                        # head
    assert expect == 29641
    total, overhead = model_param_count(model)
    assert total == 29641 and overhead == 0


def test_attention_site_schedule():
    sites3 = attention_sites(_cfg(depth=3, attention="simam", input_size=(32, 32)))
    sites4 = attention_sites(UNetConfig(base_channels=8, depth=4,
                                        attention="simam", input_size=(64, 64)))
    assert len(sites3) == 17 and len(sites4) == 22
    names3 = [n for n, _ in sites3]
    assert names3[:3] == ["enc0.att1", "enc0.att2", "enc0.attskip"]
    assert "bridge.att1" in names3 and "bridge.att2" in names3
    assert names3[-2:] == ["dec0.att1", "dec0.att2"]
    # channel widths double per level
    widths = dict(sites3)
    assert widths["enc0.att1"] == 4 and widths["enc1.att1"] == 8
    assert widths["bridge.att1"] == 32 and widths["dec2.att1"] == 16
    assert attention_sites(_cfg(attention="none")) == []


def test_overhead_equals_schedule_count():
    for kind in ("se", "cbam", "hadamard", "cmratt"):
        opts = {"reduction": 4} if kind in ("se", "cbam") else {}
        cfg = UNetConfig(base_channels=8, depth=3, attention=kind,
                         attention_options=opts, input_size=(32, 32))
        model = build_unet(cfg, RNG.child(f"ovh.{kind}"))
        _, overhead = model_param_count(model)
        sched = [c for _, c in attention_sites(cfg)]
        from cmrecon.attention import make_attention
        assert overhead == param_count(make_attention(kind, **opts), sched), kind


def test_paper_scale_overheads():
    # base 32, depth 4: the 22-site schedule gives cbam 122,092 and the
    # gated-product pipeline 724,752
    cfg = UNetConfig(base_channels=32, depth=4, attention="cbam",
                     input_size=(64, 64))
    sched = [c for _, c in attention_sites(cfg)]
    assert param_count("cbam", sched) == 122092
    assert param_count("cmratt", sched) == 724752
    assert param_count("hadamard", sched) == 724752
    assert param_count("se", sched) == 123574
    assert param_count("simam", sched) == 0


def test_build_is_deterministic_and_seed_sensitive():
    cfg = _cfg(attention="se", attention_options={"reduction": 4})
    a = build_unet(cfg, RngStream(5, "init"))
    b = build_unet(cfg, RngStream(5, "init"))
    c = build_unet(cfg, RngStream(6, "init"))
    assert set(a.params) == set(b.params)
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)
    assert any(not np.array_equal(a.params[k], c.params[k]) for k in a.params)


def test_backbone_names_invariant_across_attention_kinds():
    base = None
    for kind in ("none", "simam", "se", "cmratt"):
        opts = {"reduction": 4} if kind == "se" else {}
        model = build_unet(_cfg(attention=kind, attention_options=opts),
                           RngStream(7, "init"))
        names = {k for k in model.params if ".att" not in k}
        shapes = {k: model.params[k].shape for k in names}
        if base is None:
            base = shapes
        else:
            assert shapes == base, kind
        # identical init stream -> identical backbone weights for every kind
        ref = build_unet(_cfg(), RngStream(7, "init"))
        assert all(np.array_equal(model.params[k], ref.params[k]) for k in names)


def test_forward_shapes_and_determinism():
    model = build_unet(_cfg(attention="cmratt"), RNG.child("fwd"))
    x = Tensor(RNG.child("fwd.x").normal((2, 1, 16, 16)))
    y1 = unet_forward(model, x, ops.EVAL)
    y2 = unet_forward(model, x, ops.EVAL)
    assert y1.shape == (2, 1, 16, 16)
    assert np.array_equal(y1.data, y2.data)


def test_forward_validates_input_size():
    model = build_unet(_cfg(), RNG.child("val"))
    with pytest.raises(ShapeError):
        unet_forward(model, Tensor(np.ones((1, 1, 8, 8))), ops.EVAL)
    with pytest.raises(ShapeError):
        unet_forward(model, Tensor(np.ones((1, 2, 16, 16))), ops.EVAL)


def test_train_mode_requires_rng_when_dropout_active():
    model = build_unet(_cfg(), RNG.child("rng"))
    x = Tensor(np.ones((1, 1, 16, 16)))
    with pytest.raises(ValueError):
        unet_forward(model, x, ops.TRAIN)
    unet_forward(model, x, ops.TRAIN, rng=RngStream(1, "d"),
                 update_stats=False)


def test_attention_changes_output():
    x = Tensor(RNG.child("att.x").normal((1, 1, 16, 16)))
    plain = build_unet(_cfg(), RngStream(9, "init"))
    gated = build_unet(_cfg(attention="simam"), RngStream(9, "init"))
    y0 = unet_forward(plain, x, ops.EVAL)
    y1 = unet_forward(gated, x, ops.EVAL)
    assert not np.array_equal(y0.data, y1.data)


def test_config_validation():
    with pytest.raises(ValueError):
        UNetConfig(base_channels=0).validate()
    with pytest.raises(ValueError):
        UNetConfig(depth=3, input_size=(20, 20)).validate()
    with pytest.raises(ValueError):
        UNetConfig(dropout_p=1.0).validate()
    with pytest.raises(ValueError):
        build_unet(_cfg(attention="bogus"), RNG.child("bad"))


def test_running_stats_start_as_identity():
    model = build_unet(_cfg(), RNG.child("stats"))
    for name, rs in model.stats.items():
        assert rs.initialized
        assert np.array_equal(rs.mean, np.zeros(rs.channels))
        assert np.array_equal(rs.var, np.ones(rs.channels))


def _tiny_model():
    cfg = UNetConfig(base_channels=2, depth=2, dropout_p=0.25,
                     input_size=(8, 8))
    return build_unet(cfg, RngStream(11, "fd.init"))


def test_gradients_match_finite_differences_eval_mode():
    model = _tiny_model()
    cot = Tensor(RNG.child("fd.cot").normal((1, 1, 8, 8)))
    x0 = RNG.child("fd.x").normal((1, 1, 8, 8))

    def wrt_x(x):
        return ops.tsum(ops.mul(unet_forward(model, x, ops.EVAL), cot))
    assert grad_check(wrt_x, x0) < 1e-5

    for pname in ("enc0.conv1.weight", "bridge.bn2.gamma", "head.bias",
                  "dec1.up.weight"):
        def wrt_p(p, pname=pname):
            params = {k: (p if k == pname else Tensor(v))
                      for k, v in model.params.items()}
            out = unet_forward(model, Tensor(x0), ops.EVAL, params=params)
            return ops.tsum(ops.mul(out, cot))
        err = grad_check(wrt_p, model.params[pname])
        assert err < 1e-5, f"{pname}: {err}"


def test_gradients_match_finite_differences_train_mode():
    model = _tiny_model()
    cot = Tensor(RNG.child("fdt.cot").normal((1, 1, 8, 8)))
    x0 = RNG.child("fdt.x").normal((1, 1, 8, 8))

    def wrt_x(x):
        # fresh stream per call keeps the dropout mask fixed; stats untouched
        out = unet_forward(model, x, ops.TRAIN, rng=RngStream(3, "fd.mask"),
                           update_stats=False)
        return ops.tsum(ops.mul(out, cot))
    assert grad_check(wrt_x, x0) < 1e-5
