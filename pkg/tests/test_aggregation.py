import numpy as np
import pytest

from patchnet.aggregation import (adjacency_masks, children, forward, forward_train, init_params,
                                  input_scale, masked_conv, net_flops)
from patchnet.boxes import BBox, DegenerateOutput, compose_box, crop_geometry
from patchnet.correlation import CorrelationConfig
from patchnet.kernels import InvalidArgument, apply_mask, conv2d_valid

DEFAULT = CorrelationConfig()
SMALL = CorrelationConfig(N=4, K=4, template_size=16, search_size=30, corr_stride=2)


def maxpool(x):
    c, h, w = x.shape
    return x.reshape(c, h // 2, 2, w // 2, 2).max(axis=(2, 4))


def score_path_oracle(corr, params):
    """Plain conv + max-pool network, ignoring offsets entirely."""
    x = corr * input_scale(params.config)
    for st in params.stages:
        x = maxpool(conv2d_valid(x, st.score_conv * st.score_mask, 1))
    return x


def test_children_layout():
    np.testing.assert_array_equal(children(1), [[0, 1, 2, 3]])
    k = children(2)
    np.testing.assert_array_equal(k[0], [0, 1, 4, 5])
    np.testing.assert_array_equal(k[3], [10, 11, 14, 15])


def test_masks_fan_in_and_grouping():
    for s in (1, 2, 3):
        sm, om = adjacency_masks(DEFAULT, s)
        n_out = (8 >> s) ** 2
        assert sm.shape == (n_out, 4 * n_out, 3, 3)
        assert om.shape == (4 * n_out, 16 * n_out, 3, 3)
        assert np.all(sm.sum(axis=(1, 2, 3)) == 4 * 9)
        assert np.all(om.sum(axis=(1, 2, 3)) == 4 * 9)
        # offset component k only reads component k of the children
        for o in range(om.shape[0]):
            live = np.nonzero(om[o].any(axis=(1, 2)))[0]
            assert np.all(live % 4 == o % 4)
            assert np.array_equal(np.unique(live // 4), np.sort(children(8 >> s)[o // 4]))


def test_init_masked_positions_zero_and_bias():
    p = init_params(DEFAULT, seed=3)
    for st in p.stages:
        assert np.all(st.score_conv[st.score_mask == 0] == 0)
        assert np.all(st.offset_conv[st.offset_mask == 0] == 0)
    b1 = p.stages[0].pool_bias
    np.testing.assert_array_equal(b1[1], [4, 0, 4, 0])      # window (0,1): dx = corr_stride
    np.testing.assert_array_equal(b1[2], [0, 4, 0, 4])
    np.testing.assert_array_equal(p.stages[2].pool_bias[3], [16, 16, 16, 16])
    assert p.coeffs.is_symmetric() and np.all(p.coeffs.weights == 1)


def test_init_noise_is_seeded():
    a = init_params(DEFAULT, seed=5).stages[0].score_conv
    b = init_params(DEFAULT, seed=5).stages[0].score_conv
    c = init_params(DEFAULT, seed=6).stages[0].score_conv
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


@pytest.mark.parametrize("aligned", [False, True])
def test_init_is_patch_average_pooling(rng, aligned):
    p = init_params(DEFAULT, noise=0.0, aligned=aligned)
    corr = rng.normal(size=(64, 38, 38))
    x = corr * input_scale(DEFAULT)
    for s in range(3):
        kids = children(8 >> (s + 1))
        h = x.shape[1] - 2
        y = np.zeros((kids.shape[0], h, h))
        for m, ks in enumerate(kids):
            for a, k in enumerate(ks):
                dy, dx = (2 * (a // 2), 2 * (a % 2)) if aligned else (1, 1)
                y[m] += 0.25 * x[k, dy:dy + h, dx:dx + h]
        x = maxpool(y)
    resp, _, _ = forward_train(corr, p)
    np.testing.assert_allclose(resp, x, atol=1e-12)


def test_forward_zero_map_zero_bias():
    p = init_params(DEFAULT, noise=0.0)
    for st in p.stages:
        st.pool_bias = np.zeros((4, 4))
    r = forward(np.zeros((64, 38, 38)), p)
    assert np.all(r.response == 0) and np.all(r.offsets == 0)
    assert r.peak == (0, 0) and r.confidence == 0.0
    assert r.box is None


def test_forward_one_hot_toy():
    # N=4, two stages: 14 -> 6 -> 2; a hot cell in channel 5 at (9, 9)
    p = init_params(SMALL, noise=0.0, aligned=False)
    corr = np.zeros((16, 14, 14))
    corr[5, 9, 9] = 1.0
    r = forward(corr, p)
    # stage 1: center tap moves (9,9) to (8,8), pool -> (4,4); stage 2: -> (3,3), pool -> (1,1)
    assert r.peak == (1, 1)
    assert r.confidence == pytest.approx(input_scale(SMALL) / 16)


def test_forward_score_path_oracle(rng):
    p = init_params(DEFAULT, seed=1, noise=0.3)
    corr = rng.normal(size=(64, 38, 38))
    r = forward(corr, p)
    np.testing.assert_allclose(r.response, score_path_oracle(corr, p), rtol=1e-6, atol=1e-12)
    assert r.confidence == r.response[0, r.peak[0], r.peak[1]]


def test_forward_errors_name_stage():
    p = init_params(DEFAULT)
    with pytest.raises(InvalidArgument, match="stage 1"):
        forward(np.zeros((16, 38, 38)), p)
    with pytest.raises(InvalidArgument, match="stage 2"):
        forward(np.zeros((64, 36, 36)), p)   # 34/2 = 17 -> 15 cannot pool


def test_masked_positions_do_not_leak(rng):
    p = init_params(DEFAULT, seed=2, noise=0.2)
    corr = rng.normal(size=(64, 38, 38))
    ref_s, ref_f, _ = forward_train(corr, p)
    q = p.copy()
    for st in q.stages:
        st.score_conv = st.score_conv + (1 - st.score_mask) * rng.normal(size=st.score_conv.shape)
        st.offset_conv = st.offset_conv + (1 - st.offset_mask) * rng.normal(size=st.offset_conv.shape)
    s1, f1, _ = forward_train(corr, q)
    np.testing.assert_array_equal(s1, ref_s)
    np.testing.assert_array_equal(f1, ref_f)
    for st in q.stages:
        st.score_conv = apply_mask(st.score_conv, st.score_mask)
        st.offset_conv = apply_mask(st.offset_conv, st.offset_mask)
    s2, f2, _ = forward_train(corr, q)
    np.testing.assert_array_equal(s2, ref_s)
    np.testing.assert_array_equal(f2, ref_f)


def test_masked_conv_matches_dense(rng):
    sm, _ = adjacency_masks(DEFAULT, 2)
    w = rng.normal(size=sm.shape) * sm
    x = rng.normal(size=(16, 18, 18))
    out, _ = masked_conv(x, w, sm)
    np.testing.assert_allclose(out, conv2d_valid(x, w, 1), atol=1e-12)


def test_translation_equivariance(rng):
    p = init_params(DEFAULT, seed=4, noise=0.3)
    big = rng.normal(size=(64, 46, 46))
    full, _, _ = forward_train(big, p)
    a, _, _ = forward_train(big[:, :38, :38], p)
    b, _, _ = forward_train(big[:, 8:, 8:], p)
    np.testing.assert_allclose(a, full[:, :3, :3], atol=1e-5)
    np.testing.assert_allclose(b, full[:, 1:, 1:], atol=1e-5)


def test_confidence_scales_linearly(rng):
    p = init_params(DEFAULT, seed=4, noise=0.3)
    corr = rng.normal(size=(64, 38, 38))
    r1 = forward(corr, p)
    r2 = forward(2.5 * corr, p)
    assert r2.peak == r1.peak
    assert r2.confidence == pytest.approx(2.5 * r1.confidence)


def test_offsets_stay_in_bias_hull_for_zero_input():
    # zero correlation: every window has equal scores, so offsets are bias means
    p = init_params(DEFAULT, noise=0.0)
    _, f, _ = forward_train(np.zeros((64, 38, 38)), p)
    expect = sum(st.pool_bias.mean(axis=0) for st in p.stages)
    np.testing.assert_allclose(f[:, 0, 0], expect)


# --- compose_box ------------------------------------------------------------

def _geom(prior, cfg=DEFAULT):
    return crop_geometry(prior, cfg.search_size, cfg.search_context)


def test_compose_stationary():
    prior = BBox(40, 50, 80, 100)
    box = compose_box(prior, (1, 1), np.zeros(4), (3, 3), 156, 32, _geom(prior))
    assert box.as_tuple() == pytest.approx(prior.as_tuple())


def test_compose_one_cell_right():
    prior = BBox(40, 50, 80, 100)
    g = _geom(prior)
    box = compose_box(prior, (1, 2), np.zeros(4), (3, 3), 156, 32, g)
    shift = 32 / g.scale      # corr_stride * 8 crop pixels, mapped to frame pixels
    assert box.x_min == pytest.approx(prior.x_min + shift)
    assert box.x_max == pytest.approx(prior.x_max + shift)
    assert box.y_min == pytest.approx(prior.y_min)
    # independent geometry: crop side 2.4375*50 = 121.875 frame px spans 156 crop px
    assert shift == pytest.approx(32 * 121.875 / 156)


def test_compose_symmetric_growth_unit_scale():
    prior = BBox(0, 0, 64, 64)
    g = crop_geometry(prior, 156, 156 / 64)
    assert g.scale == pytest.approx(1.0)
    box = compose_box(prior, (1, 1), [-2, -2, 2, 2], (3, 3), 156, 32, g)
    assert box.as_tuple() == pytest.approx((-2, -2, 66, 66))


def test_compose_errors():
    prior = BBox(0, 0, 10, 10)
    with pytest.raises(DegenerateOutput):
        compose_box(prior, (1, 1), [50, 0, -50, 0], (3, 3), 156, 32, _geom(prior))
    with pytest.raises(InvalidArgument):
        compose_box(prior, (3, 0), np.zeros(4), (3, 3), 156, 32, _geom(prior))


def test_forward_box_uses_offsets_when_enabled(rng):
    p = init_params(DEFAULT, seed=0)
    prior = BBox(40, 50, 80, 100)
    corr = rng.normal(size=(64, 38, 38))
    with_off = forward(corr, p, prior, _geom(prior), use_offsets=True)
    no_off = forward(corr, p, prior, _geom(prior), use_offsets=False)
    assert no_off.box.width == pytest.approx(prior.width)
    assert with_off.box != no_off.box


# --- FLOPs --------------------------------------------------------------------

def test_net_flops_components():
    n = net_flops(DEFAULT)
    dense = net_flops(DEFAULT, dense=True)
    # masked vs dense: difference is exactly the skipped zero-weight multiply-adds
    missing = 0
    h = 38
    for s in (1, 2, 3):
        sm, om = adjacency_masks(DEFAULT, s)
        ho = h - 2
        missing_s = 2 * ho * ho * int((sm == 0).sum())
        missing_o = 2 * ho * ho * int((om == 0).sum())
        missing += missing_s + missing_o
        h = ho // 2
    assert (dense["score_path"] + dense["offset_path"]) - (n["score_path"] + n["offset_path"]) == missing
    assert n == {"score_path": 1585659, "offset_path": 6582392}


def test_full_model_flops_range():
    from patchnet.flops import variant_flops
    full = variant_flops(DEFAULT, True, True)["total"]
    base = variant_flops(DEFAULT, False, False)["total"]
    assert 40e6 <= full <= 80e6
    assert variant_flops(DEFAULT, False, True)["total"] - base == net_flops(DEFAULT)["offset_path"]
