"""Smoke test for the `nerd` extension module.

Build and run:

    cargo build -p nerd-py --features extension-module --release
    cp target/release/libnerd.so python/nerd.so
    python3 python/smoke_test.py
"""

import os
import sys

import numpy as np

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))
import nerd  # noqa: E402


def check(name, cond):
    print(f"{'ok  ' if cond else 'FAIL'} {name}")
    return bool(cond)


def main():
    results = []
    rng = np.random.default_rng(0)

    vol = nerd.shepp_logan_3d(32, 32, 8)
    results.append(check("phantom shape (nz, ny, nx) and range", vol.shape == (8, 32, 32) and vol.min() >= 0 and vol.max() <= 1))

    op = nerd.ForwardOperator(32, 32, 8, n_views=8)
    sino = op.apply(vol)
    results.append(check("sinogram shape", sino.shape[:2] == (8, 8)))
    v = rng.standard_normal(vol.shape)
    s = rng.standard_normal(sino.shape)
    lhs, rhs = np.vdot(op.apply(v), s), np.vdot(v, op.adjoint(s))
    results.append(check("adjoint identity", abs(lhs - rhs) <= 1e-10 * abs(lhs)))

    noisy = nerd.add_gaussian_noise(sino, 0.1, 3)
    results.append(check("noise is seeded", np.array_equal(noisy, nerd.add_gaussian_noise(sino, 0.1, 3))))
    results.append(check("noise level", abs(np.std(noisy - sino) - 0.1) < 0.02))

    x = np.linspace(-2, 2, 41)
    expected = np.sign(x) * np.maximum(np.abs(x) - 0.5, 0)
    results.append(check("soft threshold", np.allclose(nerd.soft_threshold(x, 0.5), expected, atol=1e-15)))
    results.append(check("l-inf projection", np.array_equal(nerd.project_linf_ball(x), np.clip(x, -1, 1))))

    g = rng.standard_normal(vol.shape)
    dz = nerd.dz_forward(v)
    results.append(check("dz adjoint", abs(np.vdot(dz, g) - np.vdot(v, nerd.dz_adjoint(g))) < 1e-9))
    results.append(check("tv_z", np.isclose(nerd.tv_z(vol), np.abs(np.diff(vol, axis=0)).sum())))

    prior = nerd.GmmPrior([(0.5, 0.0, 0.1), (0.5, 1.0, 0.1)])
    results.append(check("gmm symmetric posterior mean", abs(prior.posterior_mean(0.5 * np.sqrt(0.5), 0.5) - 0.5) < 1e-12))
    den = prior.denoise(np.full((2, 2, 2), 0.3), 0.9)
    results.append(check("gmm denoise matches scalar", np.allclose(den, prior.posterior_mean(0.3, 0.9))))

    mse = np.mean((0.9 * vol - vol) ** 2)
    results.append(check("psnr", np.isclose(nerd.psnr(0.9 * vol, vol), 10 * np.log10(1 / mse))))
    img = nerd.slice(vol, "axial", 4)
    results.append(check("axial slice", np.array_equal(img, vol[4])))
    results.append(check("ssim of identical slices", nerd.ssim(img, img) == 1.0))

    report = nerd.evaluate_volume(vol, vol)
    results.append(check("report views", [v["view"] for v in report["views"]] == ["axial", "coronal", "sagittal"]))

    cfg = "nx = 32\nny = 32\nnz = 8\nn_views = 8\nmethod = nerd-p\nn_steps = 5\nlr = 0.05\n"
    recon, trace = nerd.reconstruct(noisy, cfg, ground_truth=vol)
    again, _ = nerd.reconstruct(noisy, cfg, ground_truth=vol)
    results.append(check("reconstruction shape and trace", recon.shape == vol.shape and len(trace) == 5))
    results.append(check("reconstruction is deterministic", np.array_equal(recon, again)))
    results.append(check("trace psnr recorded", all(r["psnr"] is not None for r in trace)))
    try:
        nerd.reconstruct(noisy, "nx = 16\nny = 16\n")
        results.append(check("geometry mismatch raises", False))
    except ValueError:
        results.append(check("geometry mismatch raises", True))

    print(f"{sum(results)}/{len(results)} checks passed")
    return 0 if all(results) else 1


if __name__ == "__main__":
    sys.exit(main())
