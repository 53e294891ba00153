"""Command-line front end: ``msdenoise {synth,add-noise,denoise,basis,bench}``.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import io
import os
import sys
import tempfile
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import metrics
from .fine_solver import TimeScheme, denoise_fine, denoise_fine_color
from .image_core import (Image, ImageError, NoiseSpec, add_noise, load_image,
                         rgb_to_ycrcb, save_image)
from .multiscale import (BasisFormatError, MultiscaleConfig, build_basis, coarse_denoise,
                         denoise_color, deserialize_basis, serialize_basis)
from .sparse_linalg import CG_TOL, EIGEN_TOL, ConvergenceError
from .synthetic import geometric_image

BENCH_HEADER = ["test", "variant", "rrmse_y", "rrmse_cr", "rrmse_cb", "ssim", "psnr", "dof", "time_s"]
THREADS_ENV = "MSDENOISE_THREADS"


class CLIError(Exception):
    """Runtime failure reported to the user with exit code 1."""


@dataclass
class RunConfig:
    method: str = "fine"
    lam: float = 0.3
    t_max: float = 5.0
    n_steps: int | None = None
    coarse_cell_px: int = 32
    bases: int = 16
    local_t_max: float = 5.0
    local_steps: int = 30
    local_denoising: bool = True
    cg_tol: float = CG_TOL
    eig_tol: float = EIGEN_TOL
    seed: int = 42
    threads: int = 1

    def steps(self) -> int:
        if self.n_steps is not None:
            return self.n_steps
        return 40 if self.method == "fine" else 5

    @property
    def scheme(self) -> TimeScheme:
        return TimeScheme(self.t_max, self.steps())

    def multiscale(self) -> MultiscaleConfig:
        return MultiscaleConfig(
            lam=self.lam, t_max=self.t_max, n_steps=self.steps(), cell_px=self.coarse_cell_px,
            m=self.bases, local_tmax=self.local_t_max, local_steps=self.local_steps,
            local_denoising=self.local_denoising, cg_tol=self.cg_tol, eig_tol=self.eig_tol,
            seed=self.seed, threads=self.threads)


def _threads(value):
    if value is not None:
        return value
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise CLIError(f"{THREADS_ENV} must be an integer, got {env!r}")
    return 1


def write_csv_atomic(path, header, rows) -> None:
    """Write a CSV through a temporary file in the target directory, then rename."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n")
    writer.writerow(header)
    writer.writerows(rows)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".csv-", dir=directory)
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(buf.getvalue())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(x) -> str:
    if isinstance(x, str):
        return x
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if np.isinf(x):
        return "inf"
    return f"{x:.6g}"


# ---------------------------------------------------------------- shared options

def _add_solver_options(p):
    p.add_argument("--lambda", dest="lam", type=float, default=0.3, help="edge threshold (default 0.3)")
    p.add_argument("--t-max", type=float, default=5.0, help="final time (default 5)")
    p.add_argument("--steps", type=int, default=None,
                   help="time steps (default 40 for fine, 5 for ms)")
    p.add_argument("--coarse-cell", type=int, default=32, help="coarse cell size in pixels")
    p.add_argument("--bases", type=int, default=16, help="basis functions per coarse vertex")
    p.add_argument("--local-t-max", type=float, default=5.0)
    p.add_argument("--local-steps", type=int, default=30)
    p.add_argument("--no-local-denoise", action="store_true",
                   help="build eigenproblems from the raw noisy image")
    p.add_argument("--cg-tol", type=float, default=CG_TOL)
    p.add_argument("--eig-tol", type=float, default=EIGEN_TOL)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--threads", type=int, default=None,
                   help=f"worker threads for the offline stage (env {THREADS_ENV})")


def _run_config(args, method="ms") -> RunConfig:
    return RunConfig(
        method=method, lam=args.lam, t_max=args.t_max, n_steps=args.steps,
        coarse_cell_px=args.coarse_cell, bases=args.bases, local_t_max=args.local_t_max,
        local_steps=args.local_steps, local_denoising=not args.no_local_denoise,
        cg_tol=args.cg_tol, eig_tol=args.eig_tol, seed=args.seed, threads=_threads(args.threads))


def _luminance(img: Image) -> np.ndarray:
    return img.channel(0) if img.channels == 1 else rgb_to_ycrcb(img).channel(0)


# ---------------------------------------------------------------- commands

def cmd_synth(args) -> int:
    img = geometric_image(args.size, args.width, color=args.color)
    save_image(img, args.output)
    print(f"wrote {img.height}x{img.width}x{img.channels} synthetic image to {args.output}")
    return 0


def cmd_add_noise(args) -> int:
    img = load_image(args.input)
    noisy = add_noise(img, NoiseSpec(args.level, args.seed))
    save_image(noisy, args.output)
    errs = [metrics.rrmse(noisy.channel(k), img.channel(k)) for k in range(img.channels)]
    print("rrmse " + " ".join(f"{e:.6f}" for e in errs))
    return 0


class _MetricLog:
    """Collects per-step metrics against a reference image."""

    def __init__(self, reference: Image, tau: float):
        self.ref = reference
        self.tau = tau
        self.color = reference.channels == 3
        self.ref_ch = rgb_to_ycrcb(reference) if self.color else reference
        self.values = {}

    def observe(self, k, n, u):
        ref = self.ref_ch.channel(k)
        entry = self.values.setdefault(n, {})
        entry[f"rrmse{k}"] = metrics.rrmse(u, ref)
        if k == 0:
            entry["ssim"] = metrics.ssim(u, ref)
            entry["psnr"] = metrics.psnr(u, ref)

    def header(self):
        if self.color:
            return ["step", "t", "rrmse_y", "rrmse_cr", "rrmse_cb", "ssim", "psnr"]
        return ["step", "t", "rrmse", "ssim", "psnr"]

    def rows(self):
        steps = sorted(self.values)
        out = []
        nch = 3 if self.color else 1
        for n in steps:
            e = self.values[n]
            out.append([str(n), _fmt(n * self.tau)]
                       + [_fmt(e.get(f"rrmse{k}", float("nan"))) for k in range(nch)]
                       + [_fmt(e.get("ssim", float("nan"))), _fmt(e.get("psnr", float("nan")))])
        return out


def _load_basis(path, shape, cfg: RunConfig):
    basis = deserialize_basis(path, expected_shape=shape)
    if basis.grid.cell_px != cfg.coarse_cell_px:
        print(f"note: basis file uses {basis.grid.cell_px}-pixel coarse cells")
    if basis.m < cfg.bases:
        raise CLIError(f"basis file holds {basis.m} functions per vertex, {cfg.bases} requested")
    return basis.truncate(cfg.bases) if basis.m > cfg.bases else basis


def cmd_denoise(args) -> int:
    cfg = _run_config(args, method=args.method)
    img = load_image(args.input)
    reference = load_image(args.reference) if args.reference else None
    if reference is not None and reference.data.shape != img.data.shape:
        raise CLIError("reference image dimensions differ from the input")
    log = _MetricLog(reference, cfg.scheme.tau) if reference is not None else None
    if log is not None:
        start = rgb_to_ycrcb(img) if img.channels == 3 else img
        for k in range(img.channels):
            log.observe(k, 0, start.channel(k))

    t0 = time.perf_counter()
    if cfg.method == "fine":
        print(f"fine solver: DOF_h = {img.width * img.height}, N_t = {cfg.steps()}, "
              f"tau = {cfg.scheme.tau:g}")
        if img.channels == 1:
            cb = None if log is None else (lambda n, u: log.observe(0, n, u))
            out = Image(denoise_fine(img.channel(0), cfg.scheme, cfg.lam, cb, cg_tol=cfg.cg_tol))
        else:
            out = denoise_fine_color(img, cfg.scheme, cfg.lam,
                                     None if log is None else log.observe, cg_tol=cfg.cg_tol)
        online = time.perf_counter() - t0
        offline = 0.0
    else:
        ms = cfg.multiscale()
        shape = (img.height, img.width)
        if args.basis_file:
            try:
                basis = _load_basis(args.basis_file, shape, cfg)
            except BasisFormatError as exc:
                raise CLIError(f"basis file: {exc}")
            except OSError as exc:
                raise CLIError(f"cannot read basis file: {exc}")
        else:
            try:
                basis = build_basis(_luminance(img), ms)
            except ConvergenceError as exc:
                raise CLIError(f"offline stage (local eigenproblems) failed: {exc}")
        basis.prepare()
        offline = time.perf_counter() - t0
        print(f"multiscale solver: coarse grid {basis.grid.ncx}x{basis.grid.ncy}, "
              f"N_c = {basis.grid.n_nodes}, M = {basis.m}, DOF_H = {basis.dof}, N_t = {cfg.steps()}")
        t1 = time.perf_counter()
        try:
            if img.channels == 1:
                cb = None if log is None else (lambda n, u: log.observe(0, n, u))
                out = Image(coarse_denoise(img.channel(0), basis, ms.scheme, ms.lam, cb, ms.cg_tol))
            else:
                out = denoise_color(img, replace(ms, m=basis.m), basis=basis,
                                    callback=None if log is None else log.observe, threads=1)
        except ConvergenceError as exc:
            raise CLIError(f"online stage failed: {exc}")
        online = time.perf_counter() - t1
    save_image(out, args.output)
    print(f"offline {offline:.3f} s, online {online:.3f} s")
    if log is not None:
        if args.metrics_csv:
            write_csv_atomic(args.metrics_csv, log.header(), log.rows())
        last = log.rows()[-1]
        print("final " + ", ".join(f"{h}={v}" for h, v in zip(log.header(), last)))
    return 0


def cmd_basis(args) -> int:
    cfg = _run_config(args)
    img = load_image(args.input)
    t0 = time.perf_counter()
    try:
        basis = build_basis(_luminance(img), cfg.multiscale())
    except ConvergenceError as exc:
        raise CLIError(f"offline stage (local eigenproblems) failed: {exc}")
    elapsed = time.perf_counter() - t0
    serialize_basis(basis, args.out)
    g = basis.grid
    print(f"coarse grid {g.ncx}x{g.ncy}, N_c = {g.n_nodes}, M = {basis.m}, DOF_H = {basis.dof}, "
          f"offline {elapsed:.3f} s")
    if args.verbose:
        for i, ev in enumerate(basis.eigenvalues):
            print(f"node {i}: " + " ".join(f"{v:.4e}" for v in ev))
    else:
        ev = basis.eigenvalues
        print(f"eigenvalue ranges per index l: "
              + "; ".join(f"l={l + 1}: [{ev[:, l].min():.3e}, {ev[:, l].max():.3e}]"
                          for l in range(basis.m)))
    print(f"wrote {args.out}")
    return 0


# ---------------------------------------------------------------- bench

@dataclass
class BenchConfig:
    images: list = field(default_factory=lambda: ["synthetic"])
    noise_levels: list = field(default_factory=lambda: [0.2, 0.4])
    bases: list = field(default_factory=lambda: [1, 2, 4, 6, 8, 12, 16])
    run: RunConfig = field(default_factory=RunConfig)
    fine_t_max: float = 5.0
    fine_steps: int = 40
    ms_t_max: float = 5.0
    ms_steps: int = 5
    fine: bool = True
    synthetic_size: int = 512
    synthetic_color: bool = True


def _csv_list(text, cast):
    return [cast(x.strip()) for x in text.split(",") if x.strip()]


def read_bench_config(path) -> BenchConfig:
    """Parse the INI ``[bench]`` section into a :class:`BenchConfig`."""
    parser = configparser.ConfigParser()
    if not parser.read(path):
        raise CLIError(f"cannot read config file {path}")
    if "bench" not in parser:
        raise CLIError(f"{path}: missing [bench] section")
    sec = parser["bench"]
    cfg = BenchConfig()
    run = cfg.run
    if "images" in sec:
        cfg.images = _csv_list(sec["images"], str)
    if "noise_levels" in sec:
        cfg.noise_levels = _csv_list(sec["noise_levels"], float)
    if "bases" in sec:
        cfg.bases = sorted(_csv_list(sec["bases"], int))
    cfg.fine = sec.getboolean("fine", cfg.fine)
    cfg.fine_t_max = sec.getfloat("fine_t_max", cfg.fine_t_max)
    cfg.fine_steps = sec.getint("fine_steps", cfg.fine_steps)
    cfg.ms_t_max = sec.getfloat("ms_t_max", cfg.ms_t_max)
    cfg.ms_steps = sec.getint("ms_steps", cfg.ms_steps)
    cfg.synthetic_size = sec.getint("synthetic_size", cfg.synthetic_size)
    cfg.synthetic_color = sec.getboolean("synthetic_color", cfg.synthetic_color)
    run.lam = sec.getfloat("lambda", run.lam)
    run.coarse_cell_px = sec.getint("coarse_cell", run.coarse_cell_px)
    run.local_t_max = sec.getfloat("local_t_max", run.local_t_max)
    run.local_steps = sec.getint("local_steps", run.local_steps)
    run.local_denoising = sec.getboolean("local_denoise", run.local_denoising)
    run.cg_tol = sec.getfloat("cg_tol", run.cg_tol)
    run.eig_tol = sec.getfloat("eig_tol", run.eig_tol)
    run.seed = sec.getint("seed", run.seed)
    run.threads = sec.getint("threads", run.threads)
    return cfg


def _bench_image(name, cfg: BenchConfig) -> Image:
    if name == "synthetic":
        return geometric_image(cfg.synthetic_size, color=cfg.synthetic_color)
    return load_image(name)


def _quality(u: Image, v: Image):
    if v.channels == 3:
        q = metrics.report_color(u, v)
        return list(q.rrmse), q.ssim, q.psnr
    ch_u, ch_v = u.channel(0), v.channel(0)
    return [metrics.rrmse(ch_u, ch_v), None, None], metrics.ssim(ch_u, ch_v), metrics.psnr(ch_u, ch_v)


def _bench_row(test, variant, quality, dof, seconds):
    if quality is None:
        errs, s, p = [float("nan")] * 3, float("nan"), float("nan")
    else:
        errs, s, p = quality
    return [test, variant, *(_fmt(e) for e in errs), _fmt(s), _fmt(p),
            _fmt(dof), _fmt(seconds)]


def run_bench(cfg: BenchConfig, log=print) -> list:
    """Run every (image, noise level, variant) combination; returns CSV rows.

    Rows per test: ``ic`` (noisy input), ``offline`` (basis construction at
    the largest ``m``; time only), one row per ``m`` (online time only) and
    ``f`` (fine solver). A failing variant yields a row of ``nan`` values.
    """
    rows = []
    run = cfg.run
    for name in cfg.images:
        base = "synthetic" if name == "synthetic" else os.path.splitext(os.path.basename(name))[0]
        try:
            clean = _bench_image(name, cfg)
        except (ImageError, OSError) as exc:
            log(f"[{base}] cannot load image: {exc}")
            rows.append(_bench_row(base, "ic", None, None, float("nan")))
            continue
        n_pix = clean.width * clean.height
        for level in cfg.noise_levels:
            test = f"{base}-n{int(round(level * 100))}"
            noisy = add_noise(clean, NoiseSpec(level, run.seed))
            rows.append(_bench_row(test, "ic", _quality(noisy, clean), None, None))
            log(f"[{test}] ic: {rows[-1][2:7]}")

            m_max = max(cfg.bases)
            ms_cfg = MultiscaleConfig(
                lam=run.lam, t_max=cfg.ms_t_max, n_steps=cfg.ms_steps, cell_px=run.coarse_cell_px,
                m=m_max, local_tmax=run.local_t_max, local_steps=run.local_steps,
                local_denoising=run.local_denoising, cg_tol=run.cg_tol, eig_tol=run.eig_tol,
                seed=run.seed, threads=run.threads)
            basis = None
            try:
                t0 = time.perf_counter()
                basis = build_basis(_luminance(noisy), ms_cfg)
                offline = time.perf_counter() - t0
                rows.append(_bench_row(test, "offline", None, basis.dof, offline))
                rows[-1][2:7] = [""] * 5
                log(f"[{test}] offline basis (M={m_max}): {offline:.2f} s")
            except (ConvergenceError, ValueError) as exc:
                log(f"[{test}] offline stage failed: {exc}")
                rows.append(_bench_row(test, "offline", None, None, float("nan")))

            for m in cfg.bases:
                if basis is None:
                    rows.append(_bench_row(test, str(m), None, None, float("nan")))
                    continue
                try:
                    sub = basis.truncate(m).prepare()
                    mcfg = replace(ms_cfg, m=m)
                    t0 = time.perf_counter()
                    if noisy.channels == 3:
                        out = denoise_color(noisy, mcfg, basis=sub, threads=1)
                    else:
                        out = Image(coarse_denoise(noisy.channel(0), sub, mcfg.scheme, mcfg.lam,
                                                   cg_tol=mcfg.cg_tol))
                    online = time.perf_counter() - t0
                    rows.append(_bench_row(test, str(m), _quality(out, clean), sub.dof, online))
                except (ConvergenceError, ValueError) as exc:
                    log(f"[{test}] m={m} failed: {exc}")
                    rows.append(_bench_row(test, str(m), None, m * basis.grid.n_nodes, float("nan")))
                log(f"[{test}] m={m}: {rows[-1][2:]}")

            if cfg.fine:
                scheme = TimeScheme(cfg.fine_t_max, cfg.fine_steps)
                try:
                    t0 = time.perf_counter()
                    if noisy.channels == 3:
                        out = denoise_fine_color(noisy, scheme, run.lam, cg_tol=run.cg_tol)
                    else:
                        out = Image(denoise_fine(noisy.channel(0), scheme, run.lam, cg_tol=run.cg_tol))
                    fine_t = time.perf_counter() - t0
                    rows.append(_bench_row(test, "f", _quality(out, clean), n_pix, fine_t))
                except ConvergenceError as exc:
                    log(f"[{test}] fine solver failed: {exc}")
                    rows.append(_bench_row(test, "f", None, n_pix, float("nan")))
                log(f"[{test}] f: {rows[-1][2:]}")
    return rows


def cmd_bench(args) -> int:
    cfg = read_bench_config(args.config) if args.config else BenchConfig()
    if args.threads is not None or os.environ.get(THREADS_ENV):
        cfg.run.threads = _threads(args.threads)
    if args.images:
        cfg.images = _csv_list(args.images, str)
    if args.bases:
        cfg.bases = sorted(_csv_list(args.bases, int))
    if args.noise_levels:
        cfg.noise_levels = _csv_list(args.noise_levels, float)
    if args.synthetic_size:
        cfg.synthetic_size = args.synthetic_size
    if args.no_fine:
        cfg.fine = False
    rows = run_bench(cfg)
    write_csv_atomic(args.output, BENCH_HEADER, rows)
    print(f"wrote {len(rows)} rows to {args.output}")
    return 0


# ---------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="msdenoise",
        description="Perona-Malik image denoising with fine and spectral multiscale solvers.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write the bundled synthetic geometric test image")
    p.add_argument("--output", required=True)
    p.add_argument("--size", type=int, default=512, help="image height (and width)")
    p.add_argument("--width", type=int, default=None)
    p.add_argument("--color", action="store_true")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("add-noise", help="add seeded relative Gaussian noise")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--level", type=float, required=True, help="relative noise level, e.g. 0.2")
    p.add_argument("--seed", type=int, required=True)
    p.set_defaults(func=cmd_add_noise)

    p = sub.add_parser("denoise", help="denoise an image with the fine or multiscale solver")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--method", choices=["fine", "ms"], required=True)
    p.add_argument("--basis-file", default=None, help="reuse an MSB1 basis (ms only)")
    p.add_argument("--reference", default=None, help="clean image for per-step metrics")
    p.add_argument("--metrics-csv", default=None)
    _add_solver_options(p)
    p.set_defaults(func=cmd_denoise)

    p = sub.add_parser("basis", help="offline stage only: build and save the multiscale basis")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--verbose", action="store_true", help="print every vertex's eigenvalues")
    _add_solver_options(p)
    p.set_defaults(func=cmd_basis)

    p = sub.add_parser("bench", help="compare noisy input, multiscale sizes and the fine solver as CSV")
    p.add_argument("--config", default=None, help="INI file with a [bench] section")
    p.add_argument("--output", required=True)
    p.add_argument("--images", default=None, help="comma-separated paths or 'synthetic'")
    p.add_argument("--bases", default=None, help="comma-separated m sweep")
    p.add_argument("--noise-levels", default=None)
    p.add_argument("--synthetic-size", type=int, default=None)
    p.add_argument("--no-fine", action="store_true")
    p.add_argument("--threads", type=int, default=None)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "method", None) != "ms" and getattr(args, "basis_file", None):
        parser.error("--basis-file requires --method ms")
    try:
        return args.func(args)
    except (CLIError, ImageError, BasisFormatError, ConvergenceError) as exc:
        print(f"msdenoise {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"msdenoise {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
