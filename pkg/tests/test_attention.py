import numpy as np
import pytest

from oracles import (
    attend,
    mac_loop,
    nl_loop,
    positions,
    project,
    selective_alpha_np,
    sma_loop,
    softmax_loop,
    to_map,
)
from smac import attention as at
from smac import ops
from smac.errors import DimensionError
from smac.gradsuite import tensors_of
from smac.tensor import Tensor

N_INSTANCES = 50
TOL = 1e-10


def _random_instance(rng, min_size=1, even=False):
    c = int(rng.integers(2, 5))
    sizes = [2, 4] if even else list(range(min_size, 5))
    h, w = int(rng.choice(sizes)), int(rng.choice(sizes))
    return c, h, w


def _mac_params(rng, c):
    p = at.MacParams.create(c, rng, zero_residual=False)
    for t in tensors_of(p):
        t.data[...] = rng.uniform(-1, 1, t.shape)
    return p


def _nl_arrays(p):
    return tuple(t.data for t in (p.w_theta, p.w_phi, p.w_g, p.w_z))


def _max_err(a, b):
    return float(np.max(np.abs(np.asarray(a) - np.asarray(b))))


# ------------------------------------------------------------------- oracles

def test_nl_block_matches_oracle(rng):
    for _ in range(N_INSTANCES):
        c, h, w = _random_instance(rng)
        p = at.NlParams.create(c, rng, zero_residual=False)
        x = rng.normal(size=(c, h, w))
        got = at.nl_block(Tensor(x), p).data
        assert _max_err(got, nl_loop(x, *_nl_arrays(p))) <= TOL


def test_mutual_attention_matches_oracle(rng):
    for _ in range(N_INSTANCES):
        c, h, w = _random_instance(rng)
        p = _mac_params(rng, c)
        xr, xd = rng.normal(size=(c, h, w)), rng.normal(size=(c, h, w))
        y_r, y_d, _ = at.mutual_attention(Tensor(xr), Tensor(xd), p)
        pr, pd = _nl_arrays(p.rgb), _nl_arrays(p.depth)
        emb = {}
        for key, x, q in (("r", xr, pr), ("d", xd, pd)):
            pos = positions(x)
            emb[key] = [[project(v, q[i]) for v in pos] for i in range(3)]
        want_r = to_map(attend(emb["d"][0], emb["d"][1], emb["r"][2]), h, w)
        want_d = to_map(attend(emb["r"][0], emb["r"][1], emb["d"][2]), h, w)
        assert _max_err(y_r.data, want_r) <= TOL
        assert _max_err(y_d.data, want_d) <= TOL


def test_contrast_attention_matches_oracle(rng):
    for _ in range(N_INSTANCES):
        n = int(rng.integers(1, 17))
        f = rng.normal(size=(n, n)) * 3
        t = float(rng.uniform(0.2, 3.0))
        got = at.contrast_attention(Tensor(f), t).data
        want = np.array([softmax_loop([-v / t for v in row]) for row in f])
        assert _max_err(got, want) <= TOL


def test_mac_block_matches_oracle(rng):
    for _ in range(N_INSTANCES):
        c, h, w = _random_instance(rng)
        p = _mac_params(rng, c)
        xr, xd = rng.normal(size=(c, h, w)), rng.normal(size=(c, h, w))
        z_r, z_d = at.mac_block(Tensor(xr), Tensor(xd), p)
        want_r, want_d = mac_loop(xr, xd, _nl_arrays(p.rgb), _nl_arrays(p.depth), p.w_c_r.data,
                                  p.w_c_d.data, float(np.exp(p.t_raw.data[0])))
        assert _max_err(z_r.data, want_r) <= TOL
        assert _max_err(z_d.data, want_d) <= TOL


def test_selective_alpha_matches_oracle(rng):
    for _ in range(N_INSTANCES):
        c = int(rng.integers(2, 5))
        n = int(rng.integers(1, 4))
        head = at.SelectiveHeadParams.create(c, 4, 4, rng, down_channels=(3, 2), fc_hidden=3)
        for bn in (head.est_bn1, head.down_bn1, head.down_bn2):
            bn.gamma.data[...] = rng.uniform(0.5, 1.5, bn.gamma.shape)
            bn.beta.data[...] = rng.uniform(-0.5, 0.5, bn.beta.shape)
        xr, xd = rng.normal(size=(n, c, 4, 4)), rng.normal(size=(n, c, 4, 4))
        got = at.selective_alpha(Tensor(xr), Tensor(xd), head, train=True).data
        assert got.shape == (n,)
        assert _max_err(got, selective_alpha_np(xr, xd, head)) <= TOL


def test_smac_block_matches_oracle(rng):
    for _ in range(N_INSTANCES):
        c = int(rng.integers(2, 5))
        n = int(rng.integers(1, 3))
        p = _mac_params(rng, c)
        head = at.SelectiveHeadParams.create(c, 4, 4, rng, down_channels=(3, 2), fc_hidden=3)
        xr, xd = rng.normal(size=(n, c, 4, 4)), rng.normal(size=(n, c, 4, 4))
        z_r, z_d, alpha = at.smac_block(Tensor(xr), Tensor(xd), p, head, train=True)
        want_alpha = selective_alpha_np(xr, xd, head)
        assert _max_err(alpha.data, want_alpha) <= TOL
        for i in range(n):
            want_r, want_d = mac_loop(xr[i], xd[i], _nl_arrays(p.rgb), _nl_arrays(p.depth),
                                      p.w_c_r.data, p.w_c_d.data, float(np.exp(p.t_raw.data[0])),
                                      alpha=want_alpha[i])
            assert _max_err(z_r.data[i], want_r) <= TOL
            assert _max_err(z_d.data[i], want_d) <= TOL


@pytest.mark.parametrize("downsample", [False, True])
def test_sma_block_matches_oracle(rng, downsample):
    for _ in range(N_INSTANCES):
        c, h, w = _random_instance(rng, even=downsample)
        p = _mac_params(rng, c)
        alpha = float(rng.uniform(0, 1))
        xr, xd = rng.normal(size=(c, h, w)), rng.normal(size=(c, h, w))
        z_r, z_d = at.sma_block(Tensor(xr), Tensor(xd), p.rgb, p.depth, alpha, downsample_kv=downsample)
        want_r, want_d = sma_loop(xr, xd, _nl_arrays(p.rgb), _nl_arrays(p.depth), alpha, downsample)
        assert _max_err(z_r.data, want_r) <= TOL
        assert _max_err(z_d.data, want_d) <= TOL


# ---------------------------------------------------------------- identities

def test_tied_mutual_attention_equals_self_attention(rng):
    for _ in range(20):
        c, h, w = _random_instance(rng)
        p = _mac_params(rng, c)
        p.depth = p.rgb
        x = Tensor(rng.normal(size=(1, c, h, w)))
        y_r, y_d, _ = at.mutual_attention(x, x, p)
        _, attn = at.nl_block(x, p.rgb, return_attention=True)
        g = ops.to_positions(x) @ p.rgb.w_g
        self_att = ops.from_positions(ops.matmul(attn, g), h, w).data
        assert _max_err(y_r.data, self_att) <= 1e-12
        assert _max_err(y_d.data, self_att) <= 1e-12


def test_zero_alpha_leaves_rgb_unchanged(rng):
    c = 3
    p = _mac_params(rng, c)
    head = at.SelectiveHeadParams.create(c, 4, 4, rng, down_channels=(3, 2), fc_hidden=3)
    xr = Tensor(rng.normal(size=(2, c, 4, 4)))
    xd = Tensor(rng.normal(size=(2, c, 4, 4)))
    z_r, z_d, _ = at.smac_block(xr, xd, p, head, alpha=0.0)
    np.testing.assert_array_equal(z_r.data, xr.data)
    assert not np.allclose(z_d.data, xd.data)
    s_r, _ = at.sma_block(xr, xd, p.rgb, p.depth, 0.0)
    np.testing.assert_array_equal(s_r.data, xr.data)


def test_zero_output_projections_make_every_block_identity(rng):
    c = 4
    xr = Tensor(rng.normal(size=(2, c, 4, 4)))
    xd = Tensor(rng.normal(size=(2, c, 4, 4)))
    nl = at.NlParams.create(c, rng)  # default init zeroes W_z
    mac = at.MacParams.create(c, rng)  # and W_c
    head = at.SelectiveHeadParams.create(c, 4, 4, rng, down_channels=(3, 2), fc_hidden=3)
    np.testing.assert_array_equal(at.nl_block(xr, nl).data, xr.data)
    for z, x in zip(at.mac_block(xr, xd, mac), (xr, xd)):
        np.testing.assert_array_equal(z.data, x.data)
    z_r, z_d, _ = at.smac_block(xr, xd, mac, head, train=True)
    np.testing.assert_array_equal(z_r.data, xr.data)
    np.testing.assert_array_equal(z_d.data, xd.data)
    for kv in (False, True):
        for z, x in zip(at.sma_block(xr, xd, mac.rgb, mac.depth, 0.7, downsample_kv=kv), (xr, xd)):
            np.testing.assert_array_equal(z.data, x.data)


def test_contrast_argmax_is_affinity_argmin(rng):
    f = rng.normal(size=(100, 37)) * 2
    c = at.contrast_attention(Tensor(f), 0.8).data
    np.testing.assert_array_equal(np.argmax(c, axis=1), np.argmin(f, axis=1))


# ------------------------------------------------------------------- shapes

def test_attention_rows_are_stochastic(rng):
    p = _mac_params(rng, 3)
    x = Tensor(rng.normal(size=(2, 3, 4, 4)))
    _, _, maps = at.mac_block(x, x, p, return_maps=True)
    for m in (maps.A_r, maps.A_d, maps.C_r, maps.C_d):
        assert m.shape == (2, 16, 16)
        np.testing.assert_allclose(m.data.sum(axis=-1), 1.0, atol=1e-12)


def test_pooled_sma_has_quarter_width_maps(rng):
    p = _mac_params(rng, 2)
    x = Tensor(rng.normal(size=(1, 2, 4, 4)))
    _, _, maps = at.sma_block(x, x, p.rgb, p.depth, 0.5, downsample_kv=True, return_maps=True)
    assert maps.A_r.shape == (1, 16, 4)


def test_shape_errors(rng):
    p = _mac_params(rng, 2)
    with pytest.raises(DimensionError):
        at.mac_block(Tensor(np.ones((1, 2, 4, 4))), Tensor(np.ones((1, 2, 4, 2))), p)
    with pytest.raises(DimensionError):
        at.nl_block(Tensor(np.ones((1, 3, 2, 2))), p.rgb)
    with pytest.raises(DimensionError):
        at.sma_block(Tensor(np.ones((1, 2, 3, 3))), Tensor(np.ones((1, 2, 3, 3))), p.rgb, p.depth,
                     0.5, downsample_kv=True)
    with pytest.raises(DimensionError):
        at.SelectiveHeadParams.create(2, 2, 2, rng)


def test_contrast_rejects_nonpositive_temperature():
    with pytest.raises(ValueError):
        at.contrast_attention(Tensor(np.ones((2, 2))), 0.0)


def test_alpha_is_in_unit_interval_per_image(rng):
    head = at.SelectiveHeadParams.create(3, 4, 4, rng, down_channels=(3, 2), fc_hidden=3)
    a = at.selective_alpha(Tensor(rng.normal(size=(3, 3, 4, 4))), Tensor(rng.normal(size=(3, 3, 4, 4))),
                           head, train=True).data
    assert a.shape == (3,) and np.all((a > 0) & (a < 1))


def test_temperature_starts_at_one(rng):
    assert at.MacParams.create(2, rng).temperature().data[0] == 1.0
