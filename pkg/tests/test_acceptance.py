"""One test per acceptance criterion. Each prints a PASS/FAIL line in the
"acceptance criteria" section of the pytest summary.
"""

import math
import subprocess
import sys
import time

import numpy as np
import pytest

import test_attention as ta
import test_ops as to
from smac import kernels
from smac import metrics as mt
from smac import stats as ss
from smac.attention import contrast_attention
from smac.gradsuite import BLOCK_CASES, OP_CASES, run_suite
from smac.network import LOSS_WEIGHTS, NetworkConfig
from smac.synthetic import make_dataset
from smac.tensor import Tensor
from smac.train import TrainConfig, lr_schedule, predict_map, train_loop

REQUIRED_BLOCKS = {"nl_block", "mutual_attention", "contrast_attention", "mac_block",
                   "selective_alpha", "smac_block", "sma_block"}


@pytest.mark.acceptance("gradient suite: all ops and blocks pass gradcheck, 5 seeds, < 2 min")
def test_gradient_suite():
    assert REQUIRED_BLOCKS <= set(BLOCK_CASES)
    start = time.perf_counter()
    rows = run_suite(range(5), h=1e-6, tol=1e-4)
    elapsed = time.perf_counter() - start
    names = {r.name for r in rows}
    assert names == set(OP_CASES) | set(BLOCK_CASES)
    failed = [(r.name, r.max_rel_err) for r in rows if not r.passed]
    assert not failed, failed
    assert elapsed < 120, f"suite took {elapsed:.1f}s"


@pytest.mark.acceptance("oracle equivalence: matmul, conv2d, pool, attention blocks within 1e-10")
def test_oracle_equivalence():
    assert ta.N_INSTANCES >= 50 and to.N_INSTANCES >= 50
    assert ta.TOL <= 1e-10
    rng = np.random.default_rng(2024)
    to.test_matmul_matches_loop_oracle(rng)
    previous = kernels.BACKEND
    try:
        for backend in kernels.available_backends():
            kernels.use_backend(backend)
            to.test_conv2d_matches_loop_oracle(rng, backend)
            for kind in ("max", "avg"):
                to.test_pool_matches_loop_oracle(rng, backend, kind)
    finally:
        kernels.use_backend(previous)
    ta.test_nl_block_matches_oracle(rng)
    ta.test_mutual_attention_matches_oracle(rng)
    ta.test_contrast_attention_matches_oracle(rng)
    ta.test_mac_block_matches_oracle(rng)
    ta.test_selective_alpha_matches_oracle(rng)
    ta.test_smac_block_matches_oracle(rng)
    for downsample in (False, True):
        ta.test_sma_block_matches_oracle(rng, downsample)


@pytest.mark.acceptance("degeneracy identities: tied inputs, alpha=0, zero projections, contrast argmax")
def test_degeneracy_identities():
    rng = np.random.default_rng(99)
    ta.test_tied_mutual_attention_equals_self_attention(rng)
    ta.test_zero_alpha_leaves_rgb_unchanged(rng)
    ta.test_zero_output_projections_make_every_block_identity(rng)
    f = rng.normal(size=(100, 16))
    c = contrast_attention(Tensor(f), 1.0).data
    assert np.array_equal(np.argmax(c, axis=1), np.argmin(f, axis=1))


@pytest.mark.acceptance("schedule and constants: lr, decay points, loss weights, momentum, wd")
def test_schedule_and_constants():
    for cfg in (TrainConfig(), TrainConfig.full(), TrainConfig(total_iters=1000)):
        t = cfg.total_iters
        assert lr_schedule(0, cfg) == 0.01
        assert lr_schedule(t // 2 - 1, cfg) == 0.01
        assert lr_schedule(t // 2, cfg) == pytest.approx(0.001, rel=1e-12)
        assert lr_schedule(3 * t // 4 - 1, cfg) == pytest.approx(0.001, rel=1e-12)
        assert lr_schedule(3 * t // 4, cfg) == pytest.approx(0.0001, rel=1e-12)
        assert lr_schedule(t - 1, cfg) == pytest.approx(0.0001, rel=1e-12)
        assert cfg.momentum == 0.9
        assert cfg.weight_decay == 5e-4
    assert list(LOSS_WEIGHTS) == [0.5, 0.5, 0.8, 0.8, 1.0]
    assert list(NetworkConfig().loss_weights) == [0.5, 0.5, 0.8, 0.8, 1.0]


@pytest.mark.slow
@pytest.mark.acceptance("training sanity: toy net overfits one image in 300 iterations, < 5 min")
def test_training_sanity():
    data = make_dataset(1, seed=0, size=64)
    net = NetworkConfig()
    assert net.input_size == 64
    cfg = TrainConfig(batch_size=4, total_iters=300, seed=7)
    start = time.perf_counter()
    result = train_loop(data, net, cfg)
    pred = predict_map(result.state, data[0])
    elapsed = time.perf_counter() - start
    first, last = result.losses[0], result.losses[-1]
    max_f = mt.max_f_measure(pred, data[0].gt >= 128)
    print(f"initial={first:.4f} final={last:.4f} ratio={last / first:.4f} "
          f"maxF={max_f:.4f} seconds={elapsed:.0f}")
    assert last < 0.1 * first
    assert max_f >= 0.95
    assert elapsed < 300


@pytest.mark.acceptance("metric identities: perfect, complement, 2x2 F-measure")
def test_metric_identities():
    rng = np.random.default_rng(5)
    for _ in range(10):
        gt = rng.random((12, 9)) < 0.4
        gt[0, 0], gt[-1, -1] = True, False
        perfect = gt.astype(float)
        assert mt.s_measure(perfect, gt) == pytest.approx(1.0, abs=1e-12)
        assert mt.max_f_measure(perfect, gt) == pytest.approx(1.0, abs=1e-12)
        assert mt.e_measure(perfect, gt) == pytest.approx(1.0, abs=1e-12)
        assert mt.mae(perfect, gt) == 0.0
        assert mt.mae(1.0 - perfect, gt) == 1.0
    pred = np.array([[1.0, 1.0], [0.0, 0.0]])
    gt = np.array([[True, False], [False, False]])
    assert abs(mt.max_f_measure(pred, gt) - 0.65 / 1.15) <= 1e-6


@pytest.mark.acceptance("stats oracles: chi2 disjoint, uniform entropy, Gaussian sigma, object size")
def test_stats_oracles():
    a = np.array([0.5, 0.5, 0.0, 0.0])
    b = np.array([0.0, 0.0, 0.3, 0.7])
    assert ss.chi2_distance(a, b) == pytest.approx(1.0, abs=1e-15)
    for k in (2, 8, 256, 512):
        assert abs(ss.entropy(np.full(k, 1.0 / k)) - math.log(k)) <= 1e-12
    yy, xx = np.mgrid[0:256, 0:256].astype(float)
    for sx, sy in ((40.0, 40.0), (30.0, 60.0)):
        z = np.exp(-(xx - 120) ** 2 / (2 * sx * sx) - (yy - 135) ** 2 / (2 * sy * sy))
        fit = ss.fit_gaussian(z)
        assert abs(fit.sigma_x - sx) <= 0.01 * sx
        assert abs(fit.sigma_y - sy) <= 0.01 * sy
    assert ss.object_size(np.zeros((10, 10), dtype=bool)) == 0.0
    assert ss.object_size(np.ones((10, 10), dtype=bool)) == 1.0


@pytest.mark.acceptance("determinism: two `train --seed 7` runs give identical losses and checkpoints")
def test_determinism(tmp_path):
    from smac.imageio import write_sample

    data = tmp_path / "ds"
    for s in make_dataset(3, seed=1, size=48):
        write_sample(data, s)
    outputs = []
    for run in ("a", "b"):
        out = tmp_path / run
        cmd = [sys.executable, "-m", "smac", "train", "--dataset", str(data), "--out", str(out),
               "--seed", "7", "--iters", "4", "--batch-size", "2"]
        proc = subprocess.run(cmd, capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
        outputs.append(out)
    a, b = outputs
    for name in ("loss.csv", "checkpoint.bin", "checkpoint.bin.manifest"):
        assert (a / name).read_bytes() == (b / name).read_bytes(), name
    assert len((a / "loss.csv").read_text().splitlines()) == 4
