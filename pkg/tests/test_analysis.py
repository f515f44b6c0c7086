import numpy as np
import pytest
from scipy import integrate

from gsrdenoise.analysis import (
    FAMILIES,
    ResidualSample,
    bench,
    bench_images,
    collect_residuals,
    fit,
    fit_all,
    histogram,
    histogram_csv,
)
from gsrdenoise.denoiser import DenoiseParams
from gsrdenoise.grouping import reference_positions
from gsrdenoise.image import add_awgn, save_pgm


def small_params(sigma, **kw):
    base = dict(d=4, m=16, window=20)
    base.update(kw)
    return DenoiseParams.for_sigma(sigma, **base)


def test_sample_validation():
    with pytest.raises(ValueError):
        ResidualSample([])
    with pytest.raises(ValueError):
        ResidualSample([1.0, np.nan])


def test_collect_size_and_determinism(small_model, test_crops):
    _, clean = test_crops[0]
    y = add_awgn(clean[:40, :40], 30.0, 1)
    p = small_params(30.0)
    a = collect_residuals(y, small_model, p, source="x")
    b = collect_residuals(y, small_model, p, source="x")
    assert np.array_equal(a.values, b.values)
    assert a.values.size == len(reference_positions(y.shape, p.spec)) * 16 * 16
    assert a.sigma == 30.0 and a.source == "x"


def test_collect_shared_basis_zero(small_model, test_crops):
    _, clean = test_crops[0]
    y = add_awgn(clean[:40, :40], 30.0, 1)
    sample = collect_residuals(y, small_model, small_params(30.0, prior_code="direct"), shared_basis=True)
    np.testing.assert_allclose(sample.values, 0, atol=1e-9)


def test_fit_laplace_sample():
    x = np.random.default_rng(0).laplace(0, 2.0, 100_000)
    fits = fit_all(x)
    assert 1.9 <= fits["laplacian"].params["b"] <= 2.1
    assert fits["laplacian"].log_fit_error < fits["gaussian"].log_fit_error


def test_fit_gaussian_sample():
    x = np.random.default_rng(1).normal(0, 3.0, 100_000)
    fits = fit_all(x)
    assert fits["gaussian"].params["s"] == pytest.approx(3.0, rel=0.02)
    assert fits["gaussian"].log_fit_error < fits["laplacian"].log_fit_error


def test_hyper_laplacian_nests_laplacian():
    x = np.random.default_rng(2).laplace(0, 1.5, 20_000)
    hyper, lap = fit(x, "hyper-laplacian"), fit(x, "laplacian")
    assert hyper.params["a"] == 1.0
    assert hyper.params["s"] == pytest.approx(lap.params["b"], abs=1e-6)


def test_hyper_laplacian_heavy_tails():
    rng = np.random.default_rng(3)
    # |x/s|^a ~ Gamma(1/a): a generalized-Gaussian sample with a = 0.5
    a = 0.5
    x = rng.choice([-1, 1], 50_000) * rng.gamma(1 / a, 1.0, 50_000) ** (1 / a)
    f = fit(x, "hyper-laplacian")
    assert f.params["a"] == pytest.approx(0.5)


@pytest.mark.parametrize("family", FAMILIES)
def test_densities_integrate_to_one(family):
    rng = np.random.default_rng(4)
    f = fit(rng.laplace(0, 2.0, 5000) * rng.uniform(0.5, 1.5, 5000), family)
    if family == "hyper-laplacian":
        # the lightest tail on the exponent grid still needs the whole line
        total = 2 * integrate.quad(f.pdf, 0, np.inf, limit=200)[0]
    else:
        scale = f.params.get("s", f.params.get("b"))
        total = integrate.quad(f.pdf, -20 * scale, 20 * scale, limit=200)[0]
    assert total == pytest.approx(1.0, abs=1e-3)


def test_fit_order_invariant():
    x = np.random.default_rng(5).laplace(0, 1.0, 5000)
    y = np.random.default_rng(6).permutation(x)
    for fam in FAMILIES:
        a, b = fit(x, fam), fit(y, fam)
        assert a.params == pytest.approx(b.params)
        assert a.log_fit_error == pytest.approx(b.log_fit_error)


def test_fit_errors():
    with pytest.raises(ValueError):
        fit(np.ones(50), "gaussian")
    with pytest.raises(ValueError):
        fit(np.ones(200), "cauchy")
    with pytest.raises(ValueError):
        fit(np.zeros(200), "laplacian")


def test_histogram_symmetric():
    centers, counts, density = histogram(np.array([-2.0, 0.0, 0.1, 1.0]))
    assert len(centers) == 129
    assert centers[64] == pytest.approx(0.0, abs=1e-12)
    assert counts.sum() == 4
    assert np.sum(density) * (centers[1] - centers[0]) == pytest.approx(1.0)


def test_histogram_csv():
    text = histogram_csv(ResidualSample(np.random.default_rng(0).normal(size=500)))
    lines = text.strip().split("\n")
    assert lines[0] == "bin_center,count,density"
    assert len(lines) == 130
    assert sum(int(l.split(",")[1]) for l in lines[1:]) == 500


def test_bench_constant_image(small_model):
    res = bench_images([("flat", np.full((40, 40), 120.0))], small_model, [20], seed=0, m=16, window=20)
    (_, sigma, noisy, den), = res.rows
    assert sigma == 20 and den > noisy


def test_bench_dir_counts_and_determinism(small_model, test_crops, tmp_path):
    for name, img in test_crops[:2]:
        save_pgm(img[:40, :40], tmp_path / f"{name}.pgm")
    kw = dict(m=16, window=20, iters=2)
    a = bench(tmp_path, small_model, [20, 30], seed=3, **kw).to_csv()
    b = bench(tmp_path, small_model, [20, 30], seed=3, **kw).to_csv()
    assert a == b
    lines = a.strip().split("\n")
    assert lines[0] == "image,sigma,psnr_noisy,psnr_denoised"
    assert [l.split(",")[0] for l in lines[1:]] == ["astronaut", "coffee", "astronaut", "coffee",
                                                    "average", "average"]


def test_bench_empty_dir(small_model, tmp_path):
    with pytest.raises(ValueError):
        bench(tmp_path, small_model, [20])
