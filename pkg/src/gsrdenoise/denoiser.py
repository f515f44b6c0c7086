"""Group-sparsity-residual denoising with an external GMM prior.

Each outer iteration regularizes the current estimate back toward the noisy
input, re-matches groups, and for every group

* picks the GMM component that best explains it under the current noise level,
* forms the component's posterior-mean estimate of the clean group and codes
  it (``B``) alongside the noisy group (``A``) in the group's own PCA basis,
* soft-thresholds the residual ``A - B`` with a per-atom threshold,
* reconstructs from the shrunk codes and averages overlapping patches.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .gmm import GmmModel, select_components, sym_eig
from .grouping import (
    PatchGroup,
    PatchSpec,
    _accumulate,
    _finish,
    default_stride,
    extract_group,
    match_positions,
    patch_view,
    reference_positions,
)
from .image import as_image

__all__ = [
    "DenoiseParams",
    "GroupCodes",
    "IterationState",
    "SCHEDULE",
    "schedule_row",
    "default_iters",
    "group_dictionary",
    "compute_codes",
    "wiener_gains",
    "lambda_schedule",
    "soft_threshold",
    "shrink",
    "denoise",
    "group_pass",
    "SIGMA_FLOOR",
]

log = logging.getLogger(__name__)

SIGMA_FLOOR = 1e-4

# upper noise bound (inclusive), K, W, d, m, c, rho, gamma
SCHEDULE = (
    (10, 64, 50, 6, 80, 0.14, 0.19, 1.08),
    (20, 64, 50, 6, 80, 0.13, 0.20, 1.05),
    (30, 64, 50, 7, 90, 0.12, 0.21, 1.05),
    (40, 64, 50, 8, 100, 0.11, 0.22, 1.05),
    (50, 64, 50, 8, 100, 0.10, 0.23, 1.05),
    (75, 64, 50, 9, 120, 0.09, 0.24, 1.00),
    (100, 64, 50, 9, 120, 0.08, 0.25, 1.00),
)


def schedule_row(sigma: float) -> dict:
    """Parameter row for noise level `sigma` (intervals are open below, closed above).

    Levels above the last bound reuse the last row.
    """
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    for bound, K, W, d, m, c, rho, gamma in SCHEDULE:
        if sigma <= bound:
            break
    return dict(K=K, window=W, d=d, m=m, c=c, rho=rho, gamma=gamma)


def default_iters(sigma: float) -> int:
    if sigma <= 30:
        return 4
    if sigma <= 60:
        return 6
    return 8


@dataclass(frozen=True)
class DenoiseParams:
    sigma: float
    K: int
    window: int
    d: int
    m: int
    c: float
    rho: float
    gamma: float
    iters: int
    stride: int | None = None
    use_weights: bool = True
    # "wiener": B codes the component's posterior mean in the group basis.
    # "direct": B = U_k^T Y, the raw component-basis code.
    prior_code: str = "wiener"

    def __post_init__(self):
        if self.stride is None:
            object.__setattr__(self, "stride", default_stride(self.d))
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if self.prior_code not in ("wiener", "direct"):
            raise ValueError(f"unknown prior_code {self.prior_code!r}")
        if self.c < 0 or self.gamma <= 0 or not 0 < self.rho <= 1 or self.iters < 1:
            raise ValueError(f"invalid denoising parameters {self}")

    @classmethod
    def for_sigma(cls, sigma: float, **overrides) -> "DenoiseParams":
        """Table-driven defaults for `sigma`, with keyword overrides."""
        values = schedule_row(sigma)
        values.update(sigma=sigma, iters=default_iters(sigma))
        values.update(overrides)
        return cls(**values)

    @property
    def spec(self) -> PatchSpec:
        return PatchSpec(self.d, self.m, self.window, self.stride)


@dataclass
class GroupCodes:
    """Noisy codes ``A``, estimated clean codes ``B`` and their residual ``R = A - B``."""

    A: np.ndarray
    B: np.ndarray
    R: np.ndarray = field(default=None)
    lambda_rows: np.ndarray | None = None
    sigma_rows: np.ndarray | None = None

    def __post_init__(self):
        if self.R is None:
            self.R = self.A - self.B


@dataclass
class IterationState:
    y_reg: np.ndarray
    x_hat: np.ndarray
    sigma_t: float
    t: int


def _sorted_eigh(mats):
    """Batched :func:`sym_eig`: descending eigenvalues and sign-normalized eigenvectors."""
    vals, vecs = np.linalg.eigh(mats)
    vals = vals[..., ::-1]
    vecs = vecs[..., ::-1]
    mag = np.abs(vecs)
    tol = 1e-12 * np.maximum(mag.max(axis=-2, keepdims=True), 1.0)
    lead = np.argmax(mag > tol, axis=-2)
    signs = np.sign(np.take_along_axis(vecs, lead[..., None, :], axis=-2))
    signs[signs == 0] = 1.0
    return vals, vecs * signs


def group_dictionary(group: PatchGroup) -> tuple[np.ndarray, np.ndarray]:
    """PCA basis of a centered group: eigenvectors of ``Y Y^T / m``, eigenvalues descending."""
    Y = group.matrix
    vals, vecs = sym_eig(Y @ Y.T / Y.shape[1])
    return vecs, vals


def wiener_gains(prior_eigvals, sigma):
    """Per-atom posterior-mean gains ``lambda / (lambda + sigma^2)`` (1 where both vanish)."""
    lam = np.maximum(np.asarray(prior_eigvals, dtype=np.float64), 0.0)
    den = lam + sigma * sigma
    return np.divide(lam, den, out=np.ones_like(lam), where=den > 0)


def _prior_codes(Y, U, D, prior_eigvals, sigma):
    Ut = np.swapaxes(U, -1, -2)
    if prior_eigvals is None:
        return Ut @ Y
    gains = wiener_gains(prior_eigvals, sigma)
    estimate = U @ (gains[..., None] * (Ut @ Y))
    return np.swapaxes(D, -1, -2) @ estimate


def compute_codes(group: PatchGroup, U: np.ndarray, D: np.ndarray,
                  prior_eigvals=None, sigma: float = 0.0) -> GroupCodes:
    """Code a centered group with dictionaries `U` (prior) and `D` (group PCA).

    Without `prior_eigvals`, ``B = U^T Y``. With them, ``B`` is the group-basis
    code of the component's posterior mean ``U diag(g) U^T Y``, where
    ``g = lambda / (lambda + sigma^2)``. At ``sigma = 0`` that mean is ``Y``
    itself, so both forms agree when ``U == D``.
    """
    Y = group.matrix
    return GroupCodes(A=D.T @ Y, B=_prior_codes(Y, U, D, prior_eigvals, sigma))


def _row_thresholds(R, sigma_t, c):
    sigma_rows = np.maximum(R.std(axis=-1), SIGMA_FLOOR)
    return c * 2.0 * math.sqrt(2.0) * sigma_t**2 / sigma_rows, sigma_rows


def lambda_schedule(codes: GroupCodes, sigma_t: float, c: float) -> GroupCodes:
    """Per-atom thresholds ``c 2 sqrt(2) sigma_t^2 / std(R_row)``, std floored at SIGMA_FLOOR."""
    lam, srows = _row_thresholds(codes.R, sigma_t, c)
    return replace(codes, lambda_rows=lam, sigma_rows=srows)


def soft_threshold(x, lam):
    return np.sign(x) * np.maximum(np.abs(x) - lam, 0.0)


def shrink(codes: GroupCodes) -> np.ndarray:
    """Minimizer of ``1/2 (x - A)^2 + lambda |x - B|`` per coefficient."""
    if codes.lambda_rows is None:
        raise ValueError("thresholds not set; call lambda_schedule first")
    return soft_threshold(codes.R, codes.lambda_rows[:, None]) + codes.B


def _match_all(img, refs, spec):
    view = patch_view(img, spec.d)
    positions = np.stack([match_positions(view, ref, spec) for ref in refs])
    flat = positions.reshape(-1, 2)
    mats = extract_group(view, flat).T.reshape(len(refs), spec.m, spec.dim).transpose(0, 2, 1)
    return positions, np.ascontiguousarray(mats)


def group_pass(y_reg, model: GmmModel, p: DenoiseParams, sigma_t: float, refs,
               shrinkage: bool = True, shared_basis: bool = False):
    """Run match, select, code and (optionally) shrink on every reference group.

    Returns ``(positions, patches, info)`` where `patches` is (G, d^2, m) with
    group means restored (None when `shrinkage` is off) and `info` holds the
    stacked codes ``A``, ``B``, ``R``, selected ``components`` and, after
    shrinkage, ``A_new`` and ``lambda``. `shared_basis` replaces each prior
    dictionary by the group's own basis (diagnostic use).
    """
    positions, mats = _match_all(y_reg, refs, p.spec)
    means = mats.mean(axis=2, keepdims=True)
    Y = mats - means
    scatter = Y @ Y.transpose(0, 2, 1)
    ks = select_components(model, scatter, p.m, sigma_t, p.use_weights)
    U = model.eigvecs[ks]
    _, D = _sorted_eigh(scatter / p.m)
    if shared_basis:
        U = D
    A = D.transpose(0, 2, 1) @ Y
    prior_vals = model.eigvals[ks] if p.prior_code == "wiener" else None
    B = _prior_codes(Y, U, D, prior_vals, sigma_t)
    R = A - B
    out = {"A": A, "B": B, "R": R, "components": ks}
    if not shrinkage:
        return positions, None, out
    lam, _ = _row_thresholds(R, sigma_t, p.c)
    A_new = soft_threshold(R, lam[..., None]) + B
    out["A_new"] = A_new
    out["lambda"] = lam
    X = D @ A_new + means
    return positions, X, out


def denoise(y, model: GmmModel, p: DenoiseParams, callback=None) -> np.ndarray:
    """Denoise image `y` (float array, [0, 255] scale) with the prior `model`.

    `callback`, if given, is called with an :class:`IterationState` after each
    outer iteration. The result is clamped to [0, 255].
    """
    y = as_image(y)
    if model.patch_dim != p.d * p.d:
        raise ValueError(
            f"model patch size {model.patch_size}x{model.patch_size} "
            f"(dim {model.patch_dim}) does not match d={p.d} (dim {p.d * p.d})"
        )
    spec = p.spec
    spec.check_image(y.shape)
    refs = reference_positions(y.shape, spec)
    height, width = y.shape
    x_hat = y.copy()
    sigma_t = p.sigma
    for t in range(1, p.iters + 1):
        if t > 1:
            resid = np.mean((y - x_hat) ** 2)
            sigma_t = p.gamma * math.sqrt(max(p.sigma**2 - resid, 0.0))
        y_reg = x_hat + p.rho * (y - x_hat)
        positions, X, _ = group_pass(y_reg, model, p, sigma_t, refs)
        sums = np.zeros(height * width)
        counts = np.zeros(height * width)
        _accumulate(
            sums, counts, X.transpose(1, 0, 2).reshape(spec.dim, -1),
            positions.reshape(-1, 2), p.d, width,
        )
        x_hat = _finish(sums, counts, y.shape, fallback=y_reg)
        log.debug("iteration %d: sigma_t=%.4f", t, sigma_t)
        if callback is not None:
            callback(IterationState(y_reg, x_hat, sigma_t, t))
    return np.clip(x_hat, 0.0, 255.0)
