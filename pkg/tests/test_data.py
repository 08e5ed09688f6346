import math
import numpy as np
import pytest
from numpy.testing import assert_array_equal
from src.cli.commands import denoise_scores
from src.data.metrics import PSNR_CAP, median_bandwidth, mmd, psnr, ssim
from src.data.storage import load_dataset, save_dataset
from src.data.tasks import TaskSpec, build_task, disjoint, make_denoise_task, make_style_task
from src.nn.models import CycleModels
from src.nn.networks import ModelConfig
from src.utils.errors import ChecksumError, DatasetError, MetricError


# ============================================================================
# Tasks
# ============================================================================

def test_denoise_task_shapes_and_range():
    task = make_denoise_task(n_train=12, n_eval=5, noise_sigma=0.1, seed=0)
    assert task.x.samples.shape == (12, 1, 16, 16)
    assert task.y.samples.shape == (12, 1, 16, 16)
    assert len(task.paired) == 5
    assert task.x.samples.dtype == np.float32
    assert task.x.samples.min() >= 0.0 and task.x.samples.max() <= 1.0


def test_tasks_are_deterministic():
    a = make_denoise_task(8, 4, 0.1, seed=3)
    b = make_denoise_task(8, 4, 0.1, seed=3)
    assert_array_equal(a.x.samples, b.x.samples)
    assert_array_equal(a.y.samples, b.y.samples)
    assert_array_equal(a.paired.degraded, b.paired.degraded)
    c = make_denoise_task(8, 4, 0.1, seed=4)
    assert not np.array_equal(a.x.samples, c.x.samples)


def test_domains_and_eval_never_share_images():
    task = make_denoise_task(32, 8, 0.0, seed=1)
    assert disjoint(task.x.samples, task.y.samples, task.paired.clean)


def test_zero_noise_keeps_images_clean():
    task = make_denoise_task(8, 4, 0.0, seed=2)
    assert_array_equal(task.paired.clean, task.paired.degraded)


def test_noise_has_requested_scale():
    task = make_denoise_task(8, 64, 0.1, seed=2)
    residual = task.paired.degraded - task.paired.clean
    assert residual.std() == pytest.approx(0.1, rel=0.05)


def test_style_domains_have_distinct_ranges():
    task = make_style_task(16, seed=0, n_eval=8)
    assert task.x.samples.min() >= 0.2 - 1e-6 and task.x.samples.max() <= 0.5 + 1e-6
    assert task.y.samples.min() >= 0.3 - 1e-6 and task.y.samples.max() <= 0.9 + 1e-6
    assert len(task.eval_x) == 8 and len(task.eval_y) == 8
    assert task.paired is None


def test_build_task_dispatches_on_name():
    assert build_task(TaskSpec(name="style", n_train=4, n_eval=2)).eval_x is not None
    assert build_task(TaskSpec(name="denoise", n_train=4, n_eval=2)).paired is not None


def test_invalid_sizes_rejected():
    with pytest.raises(DatasetError):
        make_denoise_task(0, 4, 0.1, seed=0)
    with pytest.raises(DatasetError):
        make_denoise_task(4, 4, -0.1, seed=0)


# ============================================================================
# Metrics
# ============================================================================

def test_psnr_values():
    a = np.zeros((1, 1, 8, 8))
    assert psnr(a, a) == PSNR_CAP
    assert psnr(a, a + 0.1) == pytest.approx(20.0)
    assert psnr(a, a + 0.1, peak=2.0) == pytest.approx(20.0 + 20 * math.log10(2))


def test_ssim_of_identical_images_is_one(rng):
    a = rng.uniform(0, 1, size=(3, 1, 8, 8))
    assert ssim(a, a) == pytest.approx(1.0)
    assert ssim(a, 1 - a) < 0


def test_ssim_needs_eight_pixels():
    with pytest.raises(MetricError):
        ssim(np.zeros((1, 1, 4, 4)), np.zeros((1, 1, 4, 4)))


def test_psnr_is_symmetric(rng):
    a = rng.uniform(0, 1, size=(2, 1, 8, 8))
    b = rng.uniform(0, 1, size=(2, 1, 8, 8))
    assert psnr(a, b) == psnr(b, a)


def test_psnr_is_capped_for_tiny_errors():
    a = np.zeros((1, 1, 8, 8))
    b = a.copy()
    b[0, 0, 0, 0] = 1e-9
    assert psnr(a, b) == PSNR_CAP


def test_eval_set_psnr_matches_the_noise_level():
    task = make_denoise_task(8, 16, 0.1, seed=0)
    assert psnr(task.paired.clean, task.paired.degraded) == pytest.approx(20.0, abs=0.5)


def test_untrained_residual_generator_keeps_input_psnr():
    cfg = ModelConfig(width=4, depth=2, residual_skip=True)
    models = CycleModels.create("standard", cfg, ModelConfig(width=4, depth=2), seed=0, code_hidden=8)
    task = make_denoise_task(4, 8, 0.1, seed=1)
    before, after = denoise_scores(models, task.paired)["psnr"]
    assert after == pytest.approx(before, abs=1e-6)


def test_metric_shape_mismatch():
    with pytest.raises(MetricError):
        psnr(np.zeros((2, 2)), np.zeros((2, 3)))


def test_mmd_separates_domains():
    task = make_style_task(32, seed=5, n_eval=32)
    same = mmd(task.x.samples, task.eval_x.samples)
    shifted = mmd(task.eval_x.samples, task.eval_y.samples)
    assert shifted > same + 0.1


def test_mmd_with_explicit_bandwidth(rng):
    a = rng.normal(size=(20, 3))
    b = rng.normal(size=(20, 3)) + 3.0
    assert mmd(a, b, bandwidth=1.0) > mmd(a, rng.normal(size=(20, 3)), bandwidth=1.0)


def test_mmd_needs_two_samples():
    with pytest.raises(MetricError):
        mmd(np.zeros((1, 4)), np.zeros((5, 4)))


def test_median_bandwidth_falls_back_for_identical_samples():
    assert median_bandwidth(np.zeros((4, 3))) == 1.0


def brute_force_mmd(a, b, bandwidth):
    def k(u, v):
        return math.exp(-float(np.sum((u - v) ** 2)) / (2 * bandwidth ** 2))

    n, m = len(a), len(b)
    within_a = sum(k(a[i], a[j]) for i in range(n) for j in range(n) if i != j) / (n * (n - 1))
    within_b = sum(k(b[i], b[j]) for i in range(m) for j in range(m) if i != j) / (m * (m - 1))
    across = sum(k(a[i], b[j]) for i in range(n) for j in range(m)) / (n * m)
    return within_a + within_b - 2 * across


def test_mmd_matches_double_loop(rng):
    a = rng.normal(size=(7, 3))
    b = rng.normal(size=(5, 3)) + 0.5
    assert mmd(a, b, bandwidth=1.3) == pytest.approx(brute_force_mmd(a, b, 1.3), abs=1e-12)
    pooled = np.vstack([a, b])
    assert mmd(a, b) == pytest.approx(brute_force_mmd(a, b, median_bandwidth(pooled)), abs=1e-12)


def test_mmd_is_symmetric(rng):
    a = rng.normal(size=(12, 4))
    b = rng.normal(size=(9, 4)) * 2.0
    assert abs(mmd(a, b) - mmd(b, a)) <= 1e-9


def test_mmd_of_a_set_with_itself_is_not_positive(rng):
    a = rng.normal(size=(30, 5))
    # the unbiased estimate drops the diagonal, so identical sets land slightly below zero
    assert mmd(a, a) <= 1e-6


def test_mmd_separates_distant_gaussians(rng):
    a = rng.normal(0.0, 1.0, size=100)
    b = rng.normal(10.0, 1.0, size=100)
    assert mmd(a, b) > 0.5


# ============================================================================
# Dataset files
# ============================================================================

def test_dataset_file_restores_task(tmp_path):
    task = make_style_task(6, seed=1, n_eval=4)
    loaded = load_dataset(save_dataset(task, tmp_path / "data.bin"))
    assert_array_equal(loaded.x.samples, task.x.samples)
    assert_array_equal(loaded.eval_y.samples, task.eval_y.samples)
    assert loaded.x.spec == task.x.spec
    assert loaded.paired is None


def test_corrupted_dataset_file(tmp_path):
    path = save_dataset(make_denoise_task(4, 2, 0.1, seed=0), tmp_path / "data.bin")
    raw = bytearray(path.read_bytes())
    raw[-10] ^= 1
    path.write_bytes(bytes(raw))
    with pytest.raises(ChecksumError):
        load_dataset(path)


def test_missing_dataset_file(tmp_path):
    with pytest.raises(DatasetError):
        load_dataset(tmp_path / "missing.bin")
