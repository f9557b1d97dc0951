import numpy as np
import pytest

from smac import train as tr
from smac.errors import ConfigError, DataError, NumericError
from smac.imageio import Sample
from smac.network import NetworkConfig, TwoStreamState, named_parameters
from smac.synthetic import make_dataset
from smac.tensor import Parameter

TINY = NetworkConfig(stage_channels=(4, 4, 4, 4, 4), fc_channels=4, aspp_compress=4,
                     aspp_branch_channels=2, input_size=32, head_down_channels=(4, 4),
                     head_fc_hidden=4)


# ------------------------------------------------------------------ schedule

def test_default_constants():
    cfg = tr.TrainConfig()
    assert (cfg.lr0, cfg.momentum, cfg.weight_decay) == (0.01, 0.9, 0.0005)
    full = tr.TrainConfig.full()
    assert (full.batch_size, full.total_iters) == (12, 40000)


@pytest.mark.parametrize("it,expected", [(0, 0.01), (19999, 0.01), (20000, 0.001),
                                         (25000, 0.001), (30000, 0.0001), (39999, 0.0001)])
def test_lr_schedule(it, expected):
    assert tr.lr_schedule(it, tr.TrainConfig.full()) == pytest.approx(expected, rel=1e-12)


def test_lr_schedule_is_monotone():
    cfg = tr.TrainConfig(total_iters=97)
    lrs = [tr.lr_schedule(i, cfg) for i in range(97)]
    assert all(b <= a for a, b in zip(lrs, lrs[1:]))
    assert len(set(lrs)) == 3


@pytest.mark.parametrize("it", [-1, 40000])
def test_lr_schedule_range(it):
    with pytest.raises(ValueError):
        tr.lr_schedule(it, tr.TrainConfig.full())


@pytest.mark.parametrize("kw", [dict(total_iters=0), dict(batch_size=0),
                                dict(decay_points=(0.75, 0.5)), dict(decay_points=(0.5, 1.0)),
                                dict(crop_from=0.9), dict(hflip_prob=1.5), dict(momentum=1.0)])
def test_config_validate(kw):
    with pytest.raises(ConfigError):
        tr.TrainConfig(**kw).validate()


# ------------------------------------------------------------------------ sgd

def _param(value, grad):
    p = Parameter(np.array(value, dtype=float), name="w")
    p.grad = np.array(grad, dtype=float)
    return p


def test_sgd_zero_grad_fixed_point():
    p = _param([0.0, 0.0], [0.0, 0.0])
    tr.sgd_step([p], tr.TrainConfig(), 0)
    np.testing.assert_array_equal(p.data, [0.0, 0.0])


def test_sgd_plain_step():
    p = _param([0.0], [1.0])
    lr = tr.sgd_step([p], tr.TrainConfig(), 0)
    assert lr == 0.01
    assert p.data[0] == pytest.approx(-0.01, abs=1e-15)
    np.testing.assert_array_equal(p.grad, [0.0])


def test_sgd_momentum_accumulates():
    cfg = tr.TrainConfig(weight_decay=0.0)
    p = _param([0.0], [1.0])
    tr.sgd_step([p], cfg, 0)
    p.grad = np.array([1.0])
    tr.sgd_step([p], cfg, 1)
    assert p.data[0] == pytest.approx(-0.01 * 2.9, abs=1e-15)


def test_sgd_weight_decay_shrinks():
    p = _param([2.0], [0.0])
    tr.sgd_step([p], tr.TrainConfig(), 0)
    assert p.data[0] == pytest.approx(2.0 * (1 - 0.01 * 0.0005), abs=1e-15)


def test_sgd_nan_grad_names_parameter():
    good = _param([1.0], [0.0])
    bad = _param([1.0], [np.nan])
    with pytest.raises(NumericError, match="conv.weight"):
        tr.sgd_step([("ok", good), ("conv.weight", bad)], tr.TrainConfig(), 3)
    assert good.data[0] == 1.0


# ---------------------------------------------------------------- preprocess

def _sample(rng, size=8, gt_value=255):
    rgb = rng.integers(0, 256, (size, size, 3)).astype(np.uint8)
    depth = rng.integers(0, 256, (size, size)).astype(np.uint8)
    gt = np.full((size, size), gt_value, dtype=np.uint8)
    return Sample("s", rgb, depth, gt)


def test_preprocess_shapes_and_means(rng):
    rgb, depth, gt = tr.preprocess(_sample(rng), 8)
    assert rgb.shape == depth.shape == (3, 8, 8)
    assert gt.shape == (1, 8, 8)
    np.testing.assert_allclose(rgb.mean(axis=(1, 2)), 0, atol=1e-12)
    np.testing.assert_allclose(depth.mean(axis=(1, 2)), 0, atol=1e-12)
    np.testing.assert_array_equal(gt, 1.0)


def test_preprocess_constant_depth(rng):
    s = _sample(rng)
    s.depth = np.full((8, 8), 77, dtype=np.uint8)
    _, depth, _ = tr.preprocess(s, 8)
    np.testing.assert_array_equal(depth, 0.0)


def test_normalize_depth_invert():
    d = np.array([[0.0, 100.0], [200.0, 250.0]])
    np.testing.assert_allclose(tr.normalize_depth(d), [[0, 102], [204, 255]])
    np.testing.assert_allclose(tr.normalize_depth(d, invert=True), [[255, 153], [51, 0]])
    np.testing.assert_array_equal(tr.normalize_depth(np.full((3, 3), 9.0)), 128.0)


def test_preprocess_binarizes_gt(rng):
    s = _sample(rng)
    s.gt = np.array([[0, 127, 128, 255]] * 2 + [[0] * 4] * 2, dtype=np.uint8).repeat(2, 0).repeat(2, 1)
    _, _, gt = tr.preprocess(s, 8)
    assert set(np.unique(gt)) <= {0.0, 1.0}
    assert gt[0, 0, 4] == 1.0 and gt[0, 0, 2] == 0.0


def test_preprocess_mismatched_sizes(rng):
    s = _sample(rng)
    s.depth = np.zeros((7, 8), dtype=np.uint8)
    with pytest.raises(DataError):
        tr.preprocess(s, 8)


# ------------------------------------------------------------------- augment

def test_forced_flip_twice_is_identity(rng):
    s = _sample(rng, 16)
    once = tr.hflip(s)
    twice = tr.hflip(once)
    np.testing.assert_array_equal(twice.rgb, s.rgb)
    np.testing.assert_array_equal(twice.depth, s.depth)
    np.testing.assert_array_equal(twice.gt, s.gt)
    assert not np.array_equal(once.rgb, s.rgb)


def test_augment_forced_flip_matches_hflip(rng):
    s = _sample(rng, 16)
    a = tr.augment(s, np.random.default_rng(0), 16, crop_from=1.0, flip=True)
    b = tr.augment(s, np.random.default_rng(0), 16, crop_from=1.0, flip=False)
    np.testing.assert_array_equal(a.rgb, b.rgb[:, ::-1])
    np.testing.assert_array_equal(a.gt, b.gt[:, ::-1])


def test_augment_crop_bounds():
    rng = np.random.default_rng(5)
    size, big = 8, 10
    # crop_from chosen so no resize happens: big == size * crop_from
    gt = (np.arange(big * big).reshape(big, big) % 251).astype(np.uint8)
    s = Sample("s", np.zeros((big, big, 3)), np.zeros((big, big)), gt)
    windows = {(t, l): gt[t:t + size, l:l + size] for t in range(3) for l in range(3)}
    seen = set()
    for _ in range(1000):
        out = tr.augment(s, rng, size, crop_from=big / size, hflip_prob=0.0)
        assert out.rgb.shape == (size, size, 3)
        assert out.depth.shape == out.gt.shape == (size, size)
        hits = [k for k, w in windows.items() if np.array_equal(w, out.gt)]
        assert len(hits) == 1
        seen.add(hits[0])
    assert seen == set(windows)


def test_augment_keeps_planes_aligned():
    rng = np.random.default_rng(9)
    s = make_dataset(1, seed=2, size=32)[0]
    for _ in range(20):
        out = tr.augment(s, rng, 32)
        # depth is small on the object in the synthetic scenes
        obj = out.gt >= 128
        if obj.any() and (~obj).any():
            assert out.depth[obj].mean() < out.depth[~obj].mean()


def test_augment_deterministic(rng):
    s = _sample(rng, 16)
    a = tr.augment(s, np.random.default_rng(42), 16)
    b = tr.augment(s, np.random.default_rng(42), 16)
    np.testing.assert_array_equal(a.rgb, b.rgb)
    np.testing.assert_array_equal(a.gt, b.gt)


# ---------------------------------------------------------------------- loop

def test_zero_lr_keeps_weights(tmp_path):
    data = make_dataset(2, seed=0, size=32)
    cfg = tr.TrainConfig(lr0=0.0, total_iters=2, batch_size=1, seed=1)
    before = [p.data.copy() for _, p in named_parameters(TwoStreamState.create(TINY, 1))]
    result = tr.train_loop(data, TINY, cfg)
    after = [p.data for _, p in named_parameters(result.state)]
    for a, b in zip(before, after):
        np.testing.assert_array_equal(a, b)


def test_loop_writes_outputs(tmp_path):
    data = make_dataset(2, seed=0, size=32)
    cfg = tr.TrainConfig(total_iters=3, batch_size=1, seed=1)
    result = tr.train_loop(data, TINY, cfg, tmp_path)
    rows = (tmp_path / tr.LOSS_FILE).read_text().splitlines()
    assert len(rows) == 3
    assert [int(r.split(",")[0]) for r in rows] == [0, 1, 2]
    assert [float(r.split(",")[1]) for r in rows] == result.losses
    assert (tmp_path / tr.CHECKPOINT_FILE).exists()


def test_loop_empty_dataset():
    with pytest.raises(DataError):
        tr.train_loop([], TINY, tr.TrainConfig(total_iters=1))


def test_loop_requires_gt():
    s = make_dataset(1, size=32)[0]
    s.gt = None
    with pytest.raises(DataError):
        tr.train_loop([s], TINY, tr.TrainConfig(total_iters=1))


def test_predict_map_range_and_size():
    s = make_dataset(1, seed=3, size=40)[0]
    state = TwoStreamState.create(TINY, 0)
    pred = tr.predict_map(state, s)
    assert pred.shape == (40, 40)
    assert pred.min() >= 0 and pred.max() <= 1
