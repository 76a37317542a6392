import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xgans.corruption import CorruptionSpec
from xgans.evaluation import MetricsReport, MetricsRow, evaluate_grid, plot_report, psnr, ssim
from xgans.generator import GeneratorConfig, build_generator

LUMA = np.array([0.299, 0.587, 0.114])


def psnr_reference(a, b):
    """Direct formula in [-1, 1] space, where the peak-to-peak range is 2."""
    mse = np.mean((a.astype(np.float64) - b.astype(np.float64)) ** 2)
    return 100.0 if mse == 0 else min(100.0, 10 * math.log10(4.0 / mse))


def ssim_reference(a, b, size=11, sigma=1.5):
    """Window-by-window SSIM straight from the definition."""
    x = ((a.astype(np.float64) + 1) / 2) @ LUMA
    y = ((b.astype(np.float64) + 1) / 2) @ LUMA
    r = np.arange(size) - size // 2
    w = np.exp(-(r[:, None] ** 2 + r[None, :] ** 2) / (2 * sigma ** 2))
    w /= w.sum()
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    vals = []
    for i in range(x.shape[0] - size + 1):
        for j in range(x.shape[1] - size + 1):
            px, py = x[i:i + size, j:j + size], y[i:i + size, j:j + size]
            mx, my = (w * px).sum(), (w * py).sum()
            vx = (w * (px - mx) ** 2).sum()
            vy = (w * (py - my) ** 2).sum()
            cxy = (w * (px - mx) * (py - my)).sum()
            vals.append(((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx ** 2 + my ** 2 + c1) * (vx + vy + c2)))
    return float(np.mean(vals))


def random_pair(seed, size=24):
    rng = np.random.default_rng(seed)
    a = rng.uniform(-1, 1, (size, size, 3))
    b = np.clip(a + rng.normal(0, rng.uniform(0.01, 0.5), a.shape), -1, 1)
    return a, b


def test_psnr_identical_is_cap():
    a = np.random.default_rng(0).uniform(-1, 1, (8, 8, 3))
    assert psnr(a, a) == 100.0
    assert psnr(a, a, cap=60.0) == 60.0


def test_psnr_uniform_offset_is_20db():
    # 0.1 in [0, 1] space is 0.2 in [-1, 1] space
    a = np.full((16, 16, 3), -0.5)
    b = a + 0.2
    assert psnr(a, b) == pytest.approx(20.0, abs=1e-9)


def test_psnr_shape_mismatch():
    with pytest.raises(ValueError):
        psnr(np.zeros((4, 4, 3)), np.zeros((4, 5, 3)))


def test_ssim_identical_is_exactly_one(backend):
    a, _ = random_pair(3)
    assert ssim(a, a) == 1.0


def test_ssim_black_white_closed_form(backend):
    white, black = np.ones((16, 16, 3)), -np.ones((16, 16, 3))
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    expected = (2 * 1 * 0 + c1) * c2 / ((1 + 0 + c1) * c2)
    assert ssim(white, black) == pytest.approx(expected, abs=1e-12)
    assert ssim(white, black) < 1e-3


def test_ssim_too_small():
    with pytest.raises(ValueError):
        ssim(np.zeros((10, 10, 3)), np.zeros((10, 10, 3)))


def test_metric_oracles_agree_on_50_pairs(backend):
    for seed in range(50):
        a, b = random_pair(seed, size=20)
        assert abs(psnr(a, b) - psnr_reference(a, b)) < 1e-6
        assert abs(ssim(a, b) - ssim_reference(a, b)) < 1e-6


def test_ssim_matches_scikit_image():
    from skimage.metrics import structural_similarity

    for seed in range(5):
        a, b = random_pair(seed, size=40)
        ya, yb = ((a + 1) / 2) @ LUMA, ((b + 1) / 2) @ LUMA
        ref = structural_similarity(ya, yb, data_range=1.0, gaussian_weights=True, sigma=1.5,
                                    use_sample_covariance=False)
        assert ssim(a, b) == pytest.approx(ref, abs=1e-6)


def test_backends_agree_bitwise():
    from xgans import kernels

    a, b = random_pair(7, size=32)
    prev = kernels.set_backend("numpy")
    try:
        x = ssim(a, b)
        kernels.set_backend("numba")
        y = ssim(a, b)
    finally:
        kernels.set_backend(prev)
    assert x == y


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_symmetry_property(seed):
    a, b = random_pair(seed, size=16)
    assert psnr(a, b) == psnr(b, a)
    assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-12)
    assert -1.0 <= ssim(a, b) <= 1.0


def test_psnr_decreases_with_noise_amplitude():
    rng = np.random.default_rng(0)
    a = rng.uniform(-0.5, 0.5, (32, 32, 3))
    eps = rng.uniform(-1, 1, a.shape)
    values = [psnr(a, a + s * eps) for s in (0.01, 0.02, 0.05, 0.1, 0.2, 0.4)]
    assert all(x > y for x, y in zip(values, values[1:]))


# ---------------------------------------------------------------------------
# reports


def tiny_generator():
    return build_generator(GeneratorConfig(base_channels=4, residual_blocks=1), 0)


def val_images(n=3, size=32):
    rng = np.random.default_rng(1)
    return [(f"img{i}", rng.uniform(-1, 1, (size, size, 3)).astype(np.float32)) for i in range(n)]


def test_grid_full_keep_rows_at_cap():
    rep = evaluate_grid(tiny_generator(), val_images(), [CorruptionSpec("uniform_points_white", keep_fraction=1.0)])
    assert len(rep.rows) == 3
    assert all(r.psnr_db == 100.0 and r.ssim == 1.0 for r in rep.rows)


def test_grid_sweep_and_compare():
    specs = [CorruptionSpec(k, keep_fraction=p, seed=5)
             for k in ("uniform_points_white", "feature_points_white") for p in (0.01, 0.05, 0.10, 0.15, 0.20)]
    rep = evaluate_grid(tiny_generator(), val_images(2), specs)
    agg = rep.aggregates()
    assert len(agg) == 10
    assert {k for k, _ in agg} == {"uniform_points_white", "feature_points_white"}
    assert all(v["n"] == 2 for v in agg.values())


def test_grid_is_byte_deterministic(tmp_path):
    specs = [CorruptionSpec("uniform_points_color_noise", keep_fraction=0.1, seed=3),
             CorruptionSpec("center_white_block", block_size=16, seed=3)]
    a = evaluate_grid(tiny_generator(), val_images(), specs).to_csv()
    b = evaluate_grid(tiny_generator(), val_images(), specs).to_csv()
    assert a == b
    assert a.splitlines()[0] == "kind,param,image_id,psnr_db,ssim"


def test_grid_clutter_needs_donors():
    spec = CorruptionSpec("clutter_color_block", block_size=16)
    with pytest.raises(ValueError):
        evaluate_grid(tiny_generator(), val_images(), [spec])
    rep = evaluate_grid(tiny_generator(), val_images(), [spec], donors=[v for _, v in val_images(2)])
    assert len(rep.rows) == 3


def test_grid_corrupted_region_option():
    spec = [CorruptionSpec("center_white_block", block_size=16)]
    whole = evaluate_grid(tiny_generator(), val_images(), spec)
    region = evaluate_grid(tiny_generator(), val_images(), spec, region="corrupted")
    assert [r.psnr_db for r in whole.rows] != [r.psnr_db for r in region.rows]


def test_grid_requires_specs_and_images():
    with pytest.raises(ValueError):
        evaluate_grid(tiny_generator(), val_images(), [])
    with pytest.raises(ValueError):
        evaluate_grid(tiny_generator(), [], [CorruptionSpec("uniform_points_white", keep_fraction=0.1)])


def test_report_csv_roundtrip_and_plot(tmp_path):
    rep = MetricsReport([MetricsRow("uniform_points_white", 0.1, "a", 21.5, 0.7)])
    rep.to_csv(tmp_path / "m.csv")
    back = MetricsReport.from_csv(tmp_path / "m.csv")
    assert back.rows == rep.rows
    # single-point chart
    plot_report(back, tmp_path / "p.png")
    plot_report(back, tmp_path / "p.svg", metric="ssim")
    assert (tmp_path / "p.png").stat().st_size > 0 and (tmp_path / "p.svg").exists()
