"""Command-line front end: train, denoise, bench, residual-hist, synth-noise.

Settings come from three layers, highest priority first: command-line
flags, a ``key = value`` config file (``--config``), and the built-in
noise-level schedule. Exit codes: 0 success, 1 usage, 2 I/O, 3 numerical.
"""

from __future__ import annotations

import argparse
import contextlib
import logging
import os
import sys
import time

import numpy as np

from . import analysis
from .denoiser import DenoiseParams, denoise
from .gmm import ModelFormatError, TrainingConfig, load_model, sample_training_groups, save_model, train_em
from .grouping import PatchSpec
from .image import PgmError, add_awgn, load_pgm, psnr, save_pgm

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("gsrdenoise")


class UsageError(Exception):
    pass


class ConfigError(UsageError):
    pass


class NumericalError(Exception):
    pass


def _bool(text):
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _floats(text):
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    return [float(v) for v in str(text).split(",") if v.strip()]


CONFIG_KEYS = {
    "corpus_dir": str,
    "model_path": str,
    "input": str,
    "output": str,
    "clean": str,
    "test_dir": str,
    "sigma": float,
    "sigmas": _floats,
    "seed": int,
    "threads": int,
    # denoising / patch parameters
    "K": int,
    "window": int,
    "d": int,
    "m": int,
    "c": float,
    "rho": float,
    "gamma": float,
    "iters": int,
    "stride": int,
    "use_weights": _bool,
    "prior_code": str,
    # training
    "n_groups": int,
    "max_em_iters": int,
    "tol": float,
    "floor": float,
}

DENOISE_KEYS = ("K", "window", "d", "m", "c", "rho", "gamma", "iters", "stride", "use_weights", "prior_code")

DEFAULTS = {
    "sigma": 30.0,
    "sigmas": [20.0, 30.0, 40.0, 50.0, 75.0, 100.0],
    "seed": 0,
    "threads": 0,
    "n_groups": 20000,
    "max_em_iters": 100,
    "tol": 1e-6,
    "floor": 1e-4,
}


def parse_config(text: str, origin: str = "<config>") -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment. Unknown keys are errors."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{origin}:{lineno}: expected key=value, got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise ConfigError(f"{origin}:{lineno}: unknown key {key!r}")
        try:
            out[key] = CONFIG_KEYS[key](value)
        except ValueError as exc:
            raise ConfigError(f"{origin}:{lineno}: bad value for {key!r}: {exc}") from None
    return out


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise OSError(f"cannot read config {path}: {exc.strerror}") from exc
    return parse_config(text, origin=str(path))


def resolve(args, keys) -> dict:
    """Merge defaults < config file < flags for `keys`."""
    settings = {k: DEFAULTS[k] for k in keys if k in DEFAULTS}
    if getattr(args, "config", None):
        settings.update({k: v for k, v in load_config(args.config).items() if k in keys})
    for k in keys:
        v = getattr(args, k, None)
        if v is not None:
            settings[k] = v
    return settings


def denoise_params(settings, sigma) -> DenoiseParams:
    overrides = {k: settings[k] for k in DENOISE_KEYS if k in settings}
    try:
        return DenoiseParams.for_sigma(sigma, **overrides)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _describe(p: DenoiseParams) -> str:
    return (
        f"sigma={p.sigma:g} K={p.K} W={p.window} d={p.d} m={p.m} c={p.c:g} "
        f"rho={p.rho:g} gamma={p.gamma:g} iters={p.iters} stride={p.stride}"
    )


def _thread_limit(n):
    if not n:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def _require_dir(path, what):
    if not path:
        raise UsageError(f"missing {what}")
    if not os.path.isdir(path):
        raise FileNotFoundError(f"{what} not found: {path}")


def _require(settings, key, flag):
    if not settings.get(key):
        raise UsageError(f"missing required option {flag}")
    return settings[key]


def _load_corpus(directory):
    names = analysis.list_pgm(directory)
    if not names:
        raise FileNotFoundError(f"no PGM files in {directory}")
    return [load_pgm(os.path.join(directory, n)) for n in names]


def cmd_train(args) -> int:
    keys = ("corpus_dir", "model_path", "sigma", "seed", "threads", "K", "window", "d", "m",
            "stride", "n_groups", "max_em_iters", "tol", "floor")
    s = resolve(args, keys)
    _require_dir(s.get("corpus_dir"), "corpus directory")
    model_path = _require(s, "model_path", "--model")
    p = denoise_params(s, s["sigma"])
    cfg = TrainingConfig(
        n_groups=s["n_groups"],
        spec=PatchSpec(p.d, p.m, p.window, p.stride),
        max_em_iters=s["max_em_iters"],
        tol=s["tol"],
        floor=s["floor"],
        seed=s["seed"],
    )
    corpus = _load_corpus(s["corpus_dir"])
    with _thread_limit(s["threads"]):
        try:
            groups = sample_training_groups(corpus, cfg)
            result = train_em(groups, p.K, cfg, return_history=True)
        except (ValueError, FloatingPointError, np.linalg.LinAlgError) as exc:
            raise NumericalError(f"training failed: {exc}") from exc
    save_model(result.model, model_path)
    print(f"components: {result.model.n_components}")
    print(f"patch size: {p.d}x{p.d}")
    print(f"em iterations: {len(result.log_likelihood)} (converged: {result.converged})")
    print(f"mean log-likelihood: {result.log_likelihood[-1]:.6f}")
    return EXIT_OK


def cmd_denoise(args) -> int:
    keys = ("input", "output", "model_path", "clean", "sigma", "threads") + DENOISE_KEYS
    s = resolve(args, keys)
    src = _require(s, "input", "--in")
    dst = _require(s, "output", "--out")
    model = load_model(_require(s, "model_path", "--model"))
    p = denoise_params(s, s["sigma"])
    if model.patch_dim != p.d * p.d:
        raise NumericalError(
            f"model patch size {model.patch_size}x{model.patch_size} does not match "
            f"scheduled patch size {p.d}x{p.d}"
        )
    noisy = load_pgm(src)
    clean = load_pgm(s["clean"]) if s.get("clean") else None
    print(f"parameters: {_describe(p)}")
    start = time.perf_counter()
    with _thread_limit(s["threads"]):
        try:
            out = denoise(noisy, model, p)
        except (ValueError, FloatingPointError, np.linalg.LinAlgError) as exc:
            raise NumericalError(f"denoising failed: {exc}") from exc
    elapsed = time.perf_counter() - start
    save_pgm(out, dst)
    print(f"sigma used: {p.sigma:g}")
    print(f"iterations: {p.iters}")
    print(f"wall time: {elapsed:.2f} s")
    if clean is not None:
        print(f"psnr noisy: {psnr(clean, noisy):.4f} dB")
        print(f"psnr denoised: {psnr(clean, out):.4f} dB")
    return EXIT_OK


def cmd_bench(args) -> int:
    keys = ("test_dir", "output", "sigmas", "seed", "threads") + DENOISE_KEYS
    s = resolve(args, keys)
    _require_dir(s.get("test_dir"), "test directory")
    paths = args.model_path or []
    if not paths and getattr(args, "config", None):
        cfg_model = load_config(args.config).get("model_path")
        paths = [cfg_model] if cfg_model else []
    if not paths:
        raise UsageError("missing required option --model")
    models = {}
    for path in paths:
        m = load_model(path)
        models[m.patch_size] = m
    overrides = {k: s[k] for k in DENOISE_KEYS if k in s}
    with _thread_limit(s["threads"]):
        try:
            result = analysis.bench(s["test_dir"], models, s["sigmas"], s["seed"], **overrides)
        except (ValueError, KeyError, FloatingPointError, np.linalg.LinAlgError) as exc:
            raise NumericalError(f"benchmark failed: {exc}") from exc
    csv = result.to_csv()
    if s.get("output"):
        with open(s["output"], "w", newline="") as fh:
            fh.write(csv)
    sys.stdout.write(csv)
    refs = [f"{int(sig)}: {analysis.PUBLISHED_AVERAGES[int(sig)]:.2f}"
            for sig in s["sigmas"] if float(sig).is_integer() and int(sig) in analysis.PUBLISHED_AVERAGES]
    if refs:
        print("# published full-scale averages (reference only) " + ", ".join(refs))
    return EXIT_OK


def cmd_residual_hist(args) -> int:
    keys = ("input", "output", "model_path", "sigma", "seed", "threads") + DENOISE_KEYS
    s = resolve(args, keys)
    src = _require(s, "input", "--in")
    model = load_model(_require(s, "model_path", "--model"))
    p = denoise_params(s, s["sigma"])
    if model.patch_dim != p.d * p.d:
        raise NumericalError(
            f"model patch size {model.patch_size}x{model.patch_size} does not match "
            f"scheduled patch size {p.d}x{p.d}"
        )
    img = load_pgm(src)
    noisy = img if args.noisy else add_awgn(img, p.sigma, s["seed"])
    with _thread_limit(s["threads"]):
        try:
            sample = analysis.collect_residuals(noisy, model, p, source=os.path.basename(src))
            fits = analysis.fit_all(sample)
        except (ValueError, FloatingPointError, np.linalg.LinAlgError) as exc:
            raise NumericalError(f"residual analysis failed: {exc}") from exc
    best = min(fits.values(), key=lambda f: f.log_fit_error)
    print(f"residual entries: {sample.values.size}")
    for fam, f in fits.items():
        params = " ".join(f"{k}={v:.6g}" for k, v in f.params.items())
        mark = "  <- best" if f is best else ""
        print(f"{fam}: {params} log_fit_error={f.log_fit_error:.6f}{mark}")
    if s.get("output"):
        with open(s["output"], "w", newline="") as fh:
            fh.write(analysis.histogram_csv(sample))
    return EXIT_OK


def cmd_synth_noise(args) -> int:
    s = resolve(args, ("input", "output", "sigma", "seed"))
    src = _require(s, "input", "--in")
    dst = _require(s, "output", "--out")
    img = load_pgm(src)
    if s["sigma"] < 0:
        raise UsageError("sigma must be >= 0")
    save_pgm(add_awgn(img, s["sigma"], s["seed"]), dst)
    print(f"wrote {dst} (sigma={s['sigma']:g}, seed={s['seed']})")
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_denoise_overrides(p):
    g = p.add_argument_group("parameter overrides")
    g.add_argument("--K", type=int, dest="K")
    g.add_argument("--window", type=int)
    g.add_argument("--d", type=int)
    g.add_argument("--m", type=int)
    g.add_argument("--c", type=float)
    g.add_argument("--rho", type=float)
    g.add_argument("--gamma", type=float)
    g.add_argument("--iters", type=int)
    g.add_argument("--stride", type=int)
    g.add_argument("--use-weights", type=_bool, dest="use_weights")
    g.add_argument("--prior-code", choices=("wiener", "direct"), dest="prior_code")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gsrdenoise", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def common(p, seed=True, threads=True):
        p.add_argument("--config", help="key=value settings file")
        p.add_argument("--sigma", type=float)
        if seed:
            p.add_argument("--seed", type=int)
        if threads:
            p.add_argument("--threads", type=int, help="worker thread cap (0 = auto)")

    p = sub.add_parser("train", help="learn a GMM prior from a PGM corpus")
    common(p)
    p.add_argument("--corpus", dest="corpus_dir")
    p.add_argument("--model", dest="model_path", help="output model file")
    p.add_argument("--n-groups", type=int, dest="n_groups")
    p.add_argument("--max-em-iters", type=int, dest="max_em_iters")
    p.add_argument("--tol", type=float)
    p.add_argument("--floor", type=float)
    for flag, kind in (("--K", int), ("--window", int), ("--d", int), ("--m", int), ("--stride", int)):
        p.add_argument(flag, type=kind, dest=flag[2:])
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("denoise", help="denoise a PGM image")
    common(p, seed=False)
    p.add_argument("--in", dest="input")
    p.add_argument("--out", dest="output")
    p.add_argument("--model", dest="model_path")
    p.add_argument("--clean", help="clean reference for PSNR")
    _add_denoise_overrides(p)
    p.set_defaults(func=cmd_denoise)

    p = sub.add_parser("bench", help="PSNR table over a directory of clean PGMs")
    common(p)
    p.add_argument("--test-dir", dest="test_dir")
    p.add_argument("--model", dest="model_path", action="append", help="model file (repeatable)")
    p.add_argument("--sigmas", type=_floats, help="comma-separated noise levels")
    p.add_argument("--out", dest="output", help="CSV output path")
    _add_denoise_overrides(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("residual-hist", help="fit densities to group sparsity residuals")
    common(p)
    p.add_argument("--in", dest="input", help="clean image (noise is added) or noisy with --noisy")
    p.add_argument("--noisy", action="store_true", help="input already contains noise")
    p.add_argument("--model", dest="model_path")
    p.add_argument("--out", dest="output", help="histogram CSV output path")
    _add_denoise_overrides(p)
    p.set_defaults(func=cmd_residual_hist)

    p = sub.add_parser("synth-noise", help="add white Gaussian noise to a PGM")
    common(p, threads=False)
    p.add_argument("--in", dest="input")
    p.add_argument("--out", dest="output")
    p.set_defaults(func=cmd_synth_noise)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, PgmError, ModelFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
