"""End-to-end acceptance checks, one test per criterion.

Each test records a one-line PASS/FAIL verdict that is repeated in the
terminal summary under "acceptance criteria".
"""
import time

import numpy as np
import pytest
import scipy.sparse as sp

from msdenoise.cli import main
from msdenoise.fine_solver import TimeScheme, denoise_fine
from msdenoise.fvm import PixelGrid, assemble_stiffness, mass_matrix
from msdenoise.image_core import Image, NoiseSpec, add_noise, rgb_to_ycrcb, ycrcb_to_rgb
from msdenoise.metrics import psnr, rrmse, ssim
from msdenoise.multiscale import (MultiscaleConfig, build_basis, build_coarse_grid,
                                  coarse_denoise, partition_of_unity, serialize_basis)
from msdenoise.sparse_linalg import cg_solve, dense_generalized_eigh, smallest_eigenpairs
from msdenoise.synthetic import geometric_channel


# ---------------------------------------------------------------- 1, 2

@pytest.fixture(scope="module")
def fine_runs():
    runs = []
    for seed in range(5):
        u0 = np.random.default_rng(seed).random((64, 64))
        traj = []
        t0 = time.perf_counter()
        denoise_fine(u0, TimeScheme(5.0, 40), 0.3, callback=lambda n, u: traj.append(u.copy()))
        runs.append((u0, traj, time.perf_counter() - t0))
    return runs


def test_criterion_01_mass_conservation(fine_runs, criterion):
    drift = max(abs(traj[-1].sum() - u0.sum()) / u0.sum() for u0, traj, _ in fine_runs)
    slowest = max(t for *_, t in fine_runs)
    criterion(1, drift <= 1e-7 and slowest < 5.0,
              f"relative mass drift {drift:.2e} (<= 1e-7), slowest run {slowest:.2f} s (< 5 s)")


def test_criterion_02_maximum_principle(fine_runs, criterion):
    worst = 0.0
    for u0, traj, _ in fine_runs:
        lo, hi = u0.min() - 1e-7, u0.max() + 1e-7
        for u in traj:
            worst = max(worst, lo - u.min(), u.max() - hi)
    criterion(2, worst <= 0, f"largest excursion beyond [min-1e-7, max+1e-7]: {worst:.2e}")


# ---------------------------------------------------------------- 3, 4

def test_criterion_03_cg_vs_dense(criterion):
    # A = I + tau L has smallest eigenvalue >= 1, so |x - x*| <= |r| <= tol |b|
    # and |b| <= 8 here: tol = 1e-10 guarantees the 1e-8 error bound, while
    # the 1e-8 default only bounds the error by about 5e-8.
    grid = PixelGrid(nx=8, ny=8)
    tol = 1e-10
    worst = worst_default = 0.0
    for seed in range(10):
        u = np.random.default_rng(100 + seed).random((8, 8))
        A = (mass_matrix(grid) + 0.125 * assemble_stiffness(u, 0.3)).tocsr()
        b = u.ravel()
        exact = np.linalg.solve(A.toarray(), b)
        worst = max(worst, np.abs(cg_solve(A, b, tol=tol) - exact).max())
        worst_default = max(worst_default, np.abs(cg_solve(A, b) - exact).max())
    criterion(3, worst <= 1e-8, f"max |x_cg - x_dense| = {worst:.2e} (<= 1e-8) at tol {tol:g}; "
                                f"{worst_default:.2e} at the default tol 1e-8")


@pytest.mark.parametrize("dense_limit", [1024, 0], ids=["dense", "lanczos"])
def test_criterion_04_eigensolver(criterion, dense_limit):
    worst_rel = worst_res = worst_l1 = 0.0
    worst_cos = 1.0
    for seed in range(5):
        u = np.random.default_rng(200 + seed).random((16, 16))
        S = assemble_stiffness(u, 0.3)
        d = S.diagonal()
        pairs = smallest_eigenpairs(S, d, 8, seed=seed, dense_limit=dense_limit)
        ref = dense_generalized_eigh(S, d)[0][:8]
        worst_rel = max(worst_rel, np.max(np.abs(pairs.values[1:] - ref[1:]) / ref[1:]))
        psi = pairs.vectors
        res = np.linalg.norm(S @ psi - (d[:, None] * psi) * pairs.values, axis=0)
        worst_res = max(worst_res, np.max(res / np.linalg.norm(d[:, None] * psi, axis=0)))
        worst_l1 = max(worst_l1, abs(pairs.values[0]))
        v = psi[:, 0]
        worst_cos = min(worst_cos, abs(v.sum()) / (np.linalg.norm(v) * np.sqrt(v.size)))
    ok = worst_rel <= 1e-6 and worst_res <= 1e-6 and worst_l1 <= 1e-10 and worst_cos >= 1 - 1e-8
    path = "dense" if dense_limit else "Lanczos"
    criterion(4, ok, f"[{path}] eigenvalue rel err {worst_rel:.1e}, "
                     f"residual {worst_res:.1e}, |lambda_1| {worst_l1:.1e}, cosine {worst_cos:.12f}",
              variant=path)


# ---------------------------------------------------------------- 5, 6, 7

def test_criterion_05_partition_of_unity(criterion):
    worst = 0.0
    for ncy, ncx in [(8, 8), (16, 16), (16, 24)]:
        g = build_coarse_grid(ncx * 32, ncy * 32, 32)
        worst = max(worst, np.abs(partition_of_unity(g).total() - 1).max())
    criterion(5, worst <= 1e-14, f"max |sum chi - 1| = {worst:.1e} over 8x8, 16x16, 16x24 coarse grids")


def test_criterion_07_trivial_projection(criterion):
    u0 = np.random.default_rng(7).random((32, 32))
    cfg = MultiscaleConfig(cell_px=32, m=1024, n_steps=5)
    basis = build_basis(u0, cfg)
    ms = coarse_denoise(u0, basis, cfg.scheme, cfg.lam)
    fine = denoise_fine(u0, cfg.scheme, cfg.lam)
    err = np.abs(ms - fine).max()
    criterion(7, err <= 1e-6, f"one 32x32 cell, m=1024: max |ms - fine| = {err:.1e} (<= 1e-6)")


# ---------------------------------------------------------------- 6, 8, 9 on the 512x512 image

T_MAX, FINE_STEPS, MS_STEPS = 6.0, 36, 5
M_SWEEP = (1, 2, 4, 8, 16)


@pytest.fixture(scope="module")
def synthetic512():
    start = time.perf_counter()
    clean = geometric_channel(512)
    noisy = add_noise(Image(clean), NoiseSpec(0.2, 42)).channel(0)
    cfg = MultiscaleConfig(lam=0.3, t_max=T_MAX, n_steps=MS_STEPS, cell_px=32, m=16,
                           local_tmax=5.0, local_steps=30)
    t0 = time.perf_counter()
    basis = build_basis(noisy, cfg)
    offline = time.perf_counter() - t0
    fine_scheme = TimeScheme(T_MAX, FINE_STEPS)
    fine_times, fine = [], None
    for _ in range(2):
        t0 = time.perf_counter()
        fine = denoise_fine(noisy, fine_scheme, 0.3)
        fine_times.append(time.perf_counter() - t0)
    ms = {}
    for m in M_SWEEP:
        sub = basis.truncate(m).prepare() if m < 16 else basis.prepare()
        times = []
        for _ in range(2 if m == 16 else 1):
            t0 = time.perf_counter()
            out = coarse_denoise(noisy, sub, cfg.scheme, cfg.lam)
            times.append(time.perf_counter() - t0)
        ms[m] = (out, min(times))
    return dict(clean=clean, noisy=noisy, basis=basis, offline=offline,
                fine=fine, fine_time=min(fine_times), ms=ms, wall=time.perf_counter() - start)


def test_criterion_06_dof(synthetic512, tmp_path, capsys, criterion):
    path = tmp_path / "basis.msb"
    serialize_basis(synthetic512["basis"], path)
    img = tmp_path / "noisy.png"
    from msdenoise.image_core import save_image
    save_image(Image(synthetic512["noisy"]), img)
    rc = main(["denoise", "--input", str(img), "--output", str(tmp_path / "out.png"),
               "--method", "ms", "--coarse-cell", "32", "--bases", "16",
               "--basis-file", str(path)])
    out = capsys.readouterr().out
    ok = rc == 0 and "DOF_H = 4624" in out and synthetic512["basis"].dof == 4624
    line = next((s for s in out.splitlines() if "DOF_H" in s), "")
    criterion(6, ok, f"512x512, cell 32, m=16: {line.strip()}")


def test_criterion_08_quality_trends(synthetic512, criterion):
    clean, noisy = synthetic512["clean"], synthetic512["noisy"]
    s_noisy = ssim(noisy, clean)
    s_fine = ssim(synthetic512["fine"], clean)
    errs = [rrmse(synthetic512["ms"][m][0], clean) for m in M_SWEEP]
    s_ms = ssim(synthetic512["ms"][16][0], clean)
    ok_a = s_fine - s_noisy >= 0.3
    ok_b = all(b <= 1.05 * a for a, b in zip(errs, errs[1:]))
    ok_c = abs(s_ms - s_fine) <= 0.1
    detail = (f"(a) SSIM {s_noisy:.3f} -> fine {s_fine:.3f} (+{s_fine - s_noisy:.3f}); "
              f"(b) RRMSE over m={list(M_SWEEP)}: {[round(e, 4) for e in errs]}; "
              f"(c) SSIM ms16 {s_ms:.4f} vs fine {s_fine:.4f}; pipeline {synthetic512['wall']:.0f} s")
    criterion(8, ok_a and ok_b and ok_c and synthetic512["wall"] < 600, detail)


def test_criterion_09_online_faster(synthetic512, criterion):
    t_ms, t_fine = synthetic512["ms"][16][1], synthetic512["fine_time"]
    criterion(9, t_ms < t_fine,
              f"ms online (m=16) {t_ms:.2f} s vs fine {t_fine:.2f} s; offline basis {synthetic512['offline']:.1f} s")


# ---------------------------------------------------------------- 10, 11

def test_criterion_10_metrics(criterion):
    rng = np.random.default_rng(10)
    u = rng.random((32, 32))
    checks = {
        "ssim(u,u)=1": ssim(u, u) == 1.0,
        "rrmse(u,u)=0": rrmse(u, u) == 0.0,
        "psnr 0.1 error = 20 dB": abs(psnr(u + 0.1, u) - 20.0) <= 1e-9,
        "rrmse(2v,v)=1": abs(rrmse(2 * u, u) - 1) <= 1e-14,
        "constant ssim": abs(ssim(np.full(9, 0.3), np.full(9, 0.7))
                             - (2 * 0.21 + 1e-4) / (0.09 + 0.49 + 1e-4)) <= 1e-14,
        "anti-correlated ssim < 0": ssim(u, 1 - u) < 0,
        "psnr identical = inf": psnr(u, u) == float("inf"),
        "halving error +6.02 dB": abs(psnr(u + 0.05, u) - psnr(u + 0.1, u) - 20 * np.log10(2)) <= 1e-9,
        "ssim symmetric": abs(ssim(u, u ** 2) - ssim(u ** 2, u)) <= 1e-14,
    }
    img = Image(rng.random((32, 32, 3)))
    round_trip = np.abs(ycrcb_to_rgb(rgb_to_ycrcb(img)).data - img.data).max()
    checks["YCrCb roundtrip <= 1e-12"] = round_trip <= 1e-12
    failed = [k for k, ok in checks.items() if not ok]
    criterion(10, not failed, f"{len(checks) - len(failed)}/{len(checks)} metric checks, "
                              f"YCrCb roundtrip {round_trip:.1e}" + (f"; failed {failed}" if failed else ""))


def test_criterion_11_determinism(tmp_path, criterion):
    clean = geometric_channel(256)
    noisy = add_noise(Image(clean), NoiseSpec(0.2, 42)).channel(0)
    blobs = {}
    for threads in (1, 1, 4):
        basis = build_basis(noisy, MultiscaleConfig(m=16, seed=42, threads=threads))
        path = tmp_path / f"b{len(blobs)}.msb"
        serialize_basis(basis, path)
        blobs[len(blobs)] = (threads, path.read_bytes())
    ref = blobs[0][1]
    same = all(b == ref for _, b in blobs.values())
    criterion(11, same, f"{len(blobs)} basis files (threads 1, 1, 4), {len(ref)} bytes each, "
                        f"byte-identical: {same}")
