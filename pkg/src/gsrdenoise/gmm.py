"""Zero-mean Gaussian mixture prior over mean-subtracted patch groups.

Every member patch of a group shares one mixture component, so the group
likelihood is ``sum_k pi_k prod_j N(z_j | 0, Sigma_k)``. EM therefore works
on per-group scatter matrices ``S_i = Z_i Z_i^T`` rather than on individual
patches, which keeps both E- and M-steps at O(n D^2 K).
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .grouping import (
    PatchGroup,
    PatchSpec,
    extract_group,
    match_positions,
    patch_view,
    subtract_group_mean,
)

__all__ = [
    "GmmModel",
    "TrainingConfig",
    "TrainingResult",
    "sym_eig",
    "sample_training_groups",
    "group_scatters",
    "train_em",
    "component_log_likelihoods",
    "select_component",
    "select_components",
    "component_dictionary",
    "responsibilities",
    "save_model",
    "load_model",
    "ModelFormatError",
]

log = logging.getLogger(__name__)

MAGIC = b"GSR-GMM\0"
VERSION = 1
_LOG_2PI = np.log(2.0 * np.pi)


class ModelFormatError(ValueError):
    pass


def sym_eig(mat: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a symmetric matrix, eigenvalues descending.

    Each eigenvector is flipped so that its first entry of non-negligible
    magnitude is positive, which makes the basis unique up to repeated
    eigenvalues.
    """
    vals, vecs = np.linalg.eigh(mat)
    vals = vals[::-1].copy()
    vecs = vecs[:, ::-1].copy()
    tol = 1e-12 * max(np.abs(vecs).max(), 1.0)
    lead = np.argmax(np.abs(vecs) > tol, axis=0)
    signs = np.sign(vecs[lead, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    return vals, vecs * signs


@dataclass
class GmmModel:
    """K-component GMM with cached per-component eigenbases.

    ``covariances[k] == eigvecs[k] @ diag(eigvals[k]) @ eigvecs[k].T``; the
    eigenbasis doubles as the component's orthonormal dictionary.
    """

    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    eigvals: np.ndarray = field(init=False, repr=False)
    eigvecs: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.covariances = np.asarray(self.covariances, dtype=np.float64)
        K, D = self.covariances.shape[:2]
        if self.means is None:
            self.means = np.zeros((K, D))
        self.means = np.asarray(self.means, dtype=np.float64)
        self.validate()
        decomp = [sym_eig(c) for c in self.covariances]
        self.eigvals = np.stack([v for v, _ in decomp])
        self.eigvecs = np.stack([u for _, u in decomp])
        if self.eigvals.min() < -1e-10 * max(1.0, self.eigvals.max()):
            raise ValueError(f"covariance is not PSD (min eigenvalue {self.eigvals.min():.3e})")

    @property
    def n_components(self) -> int:
        return self.weights.shape[0]

    @property
    def patch_dim(self) -> int:
        return self.covariances.shape[1]

    @property
    def patch_size(self) -> int:
        return int(round(np.sqrt(self.patch_dim)))

    def validate(self) -> None:
        K = self.weights.shape[0]
        if self.weights.ndim != 1 or K < 1:
            raise ValueError("weights must be a non-empty vector")
        D = self.covariances.shape[1] if self.covariances.ndim == 3 else -1
        if self.covariances.shape != (K, D, D) or self.means.shape != (K, D):
            raise ValueError(
                f"inconsistent shapes: weights {self.weights.shape}, means {self.means.shape}, "
                f"covariances {self.covariances.shape}"
            )
        for name in ("weights", "means", "covariances"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"non-finite values in {name}")
        if np.any(self.weights <= 0):
            raise ValueError("mixture weights must be positive")
        if abs(self.weights.sum() - 1.0) > 1e-10:
            raise ValueError(f"mixture weights sum to {self.weights.sum():.12g}, not 1")
        asym = np.abs(self.covariances - self.covariances.transpose(0, 2, 1)).max()
        if asym > 1e-10:
            raise ValueError(f"covariance not symmetric (max deviation {asym:.3e})")


@dataclass(frozen=True)
class TrainingConfig:
    n_groups: int
    spec: PatchSpec
    max_em_iters: int = 100
    tol: float = 1e-6
    floor: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if self.n_groups < 1:
            raise ValueError("n_groups must be >= 1")
        if self.floor <= 0:
            raise ValueError("covariance floor must be > 0")


@dataclass
class TrainingResult:
    model: GmmModel
    log_likelihood: list  # per-group mean log-likelihood, one entry per E-step
    converged: bool


def sample_training_groups(corpus, cfg: TrainingConfig) -> list[PatchGroup]:
    """Draw `cfg.n_groups` centered groups at uniformly random (image, position) pairs."""
    if len(corpus) == 0:
        raise ValueError("training corpus is empty")
    spec = cfg.spec
    for img in corpus:
        spec.check_image(img.shape)
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    views = [patch_view(np.asarray(img, dtype=np.float64), spec.d) for img in corpus]
    groups = []
    for _ in range(cfg.n_groups):
        view = views[rng.integers(len(views))]
        ref = (int(rng.integers(view.shape[0])), int(rng.integers(view.shape[1])))
        pos = match_positions(view, ref, spec)
        groups.append(subtract_group_mean(PatchGroup(extract_group(view, pos), pos)))
    return groups


def group_scatters(matrices) -> np.ndarray:
    """Stack of ``Y Y^T`` for an (n, D, m) array or a sequence of D x m matrices."""
    Y = np.asarray(matrices, dtype=np.float64)
    return Y @ Y.transpose(0, 2, 1)


class _Packed:
    """Upper-triangle packing of symmetric D x D matrices."""

    def __init__(self, dim):
        self.iu = np.triu_indices(dim)
        self.dim = dim
        self.w = np.where(self.iu[0] == self.iu[1], 1.0, 2.0)

    def pack(self, mats):
        return mats[..., self.iu[0], self.iu[1]]

    def unpack(self, packed):
        out = np.zeros(packed.shape[:-1] + (self.dim, self.dim))
        out[..., self.iu[0], self.iu[1]] = packed
        out[..., self.iu[1], self.iu[0]] = packed
        return out


def _floored(cov: np.ndarray, floor: float) -> np.ndarray:
    sym = 0.5 * (cov + cov.T)
    vals, vecs = np.linalg.eigh(sym)
    out = (vecs * np.maximum(vals, floor)) @ vecs.T
    return 0.5 * (out + out.T)


def _precision_terms(eigvals, eigvecs, sigma2=0.0):
    lam = np.maximum(eigvals + sigma2, 1e-300)
    logdet = np.sum(np.log(lam), axis=1)
    prec = np.einsum("kab,kb,kcb->kac", eigvecs, 1.0 / lam, eigvecs)
    return logdet, prec


def component_log_likelihoods(model: GmmModel, scatters, m: int, sigma: float = 0.0,
                              use_weights: bool = True) -> np.ndarray:
    """(n, K) array of ``sum_j log N(y_j | 0, Sigma_k + sigma^2 I) [+ log pi_k]``.

    `scatters` holds ``Y_i Y_i^T`` for n groups of m centered patches each.
    """
    scatters = np.asarray(scatters, dtype=np.float64)
    if scatters.ndim == 2:
        scatters = scatters[None]
    D = model.patch_dim
    logdet, prec = _precision_terms(model.eigvals, model.eigvecs, sigma * sigma)
    quad = scatters.reshape(len(scatters), -1) @ prec.reshape(len(prec), -1).T
    out = -0.5 * (m * (D * _LOG_2PI + logdet)[None, :] + quad)
    if use_weights:
        out = out + np.log(model.weights)[None, :]
    return out


def select_components(model: GmmModel, scatters, m: int, sigma: float,
                      use_weights: bool = True) -> np.ndarray:
    """Vectorized :func:`select_component` over stacked scatter matrices."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    ll = component_log_likelihoods(model, scatters, m, sigma, use_weights)
    return np.argmax(ll, axis=1)


def select_component(model: GmmModel, group: PatchGroup, sigma: float,
                     use_weights: bool = True) -> int:
    """MAP component for a centered noisy group under covariances Sigma_k + sigma^2 I.

    With ``use_weights=False`` the mixture weights are ignored and the choice
    is the pure maximum-likelihood one. Ties go to the smallest index.
    """
    Y = group.matrix
    return int(select_components(model, (Y @ Y.T)[None], Y.shape[1], sigma, use_weights)[0])


def component_dictionary(model: GmmModel, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Orthonormal eigenbasis ``U_k`` (columns) and descending eigenvalues of component k."""
    if not 0 <= k < model.n_components:
        raise IndexError(f"component {k} out of range [0, {model.n_components})")
    return model.eigvecs[k], model.eigvals[k]


def _m_step(packer, spacked, resp, m, floor, prev=None):
    n = resp.shape[0]
    nk = resp.sum(axis=0)
    covs = packer.unpack(resp.T @ spacked)
    out = np.empty_like(covs)
    for k in range(len(nk)):
        if nk[k] <= 1e-12 * n:
            # starved component: keep the previous estimate
            base = prev[k] if prev is not None else np.eye(packer.dim) * floor
            out[k] = base
        else:
            out[k] = _floored(covs[k] / (m * nk[k]), floor)
    weights = np.maximum(nk / n, 1e-12)
    weights /= weights.sum()
    return weights, out


def train_em(groups, K: int, cfg: TrainingConfig, return_history: bool = False):
    """Fit a K-component zero-mean group GMM by EM.

    Groups must be centered (columns summing to zero). Initialization is a
    random hard assignment from the seeded generator followed by one M-step.
    Returns the model, or a :class:`TrainingResult` with the per-iteration
    mean log-likelihood when `return_history` is set.
    """
    mats = np.stack([g.matrix for g in groups]) if not isinstance(groups, np.ndarray) else groups
    n, D, m = mats.shape
    if n < K:
        raise ValueError(f"need at least K={K} groups, got {n}")
    if K < 1:
        raise ValueError("K must be >= 1")
    col_sums = np.abs(mats.sum(axis=2)).max()
    if col_sums > 1e-8 * max(1.0, np.abs(mats).max()) * m:
        raise ValueError("training groups must be mean-subtracted")

    packer = _Packed(D)
    spacked = np.empty((n, len(packer.w)))
    for start in range(0, n, 2048):
        chunk = mats[start : start + 2048]
        spacked[start : start + 2048] = packer.pack(group_scatters(chunk))
    total = spacked @ packer.w
    if not np.any(total > 0):
        raise ValueError("degenerate training data: every group is identically zero")

    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    labels = rng.integers(K, size=n)
    # every component gets at least one group
    labels[rng.permutation(n)[:K]] = np.arange(K)
    resp = np.zeros((n, K))
    resp[np.arange(n), labels] = 1.0
    weights, covs = _m_step(packer, spacked, resp, m, cfg.floor)

    history = []
    converged = False
    wpacked = packer.w
    for it in range(cfg.max_em_iters):
        vals, vecs = np.linalg.eigh(covs)
        lam = np.maximum(vals, 1e-300)
        logdet = np.log(lam).sum(axis=1)
        prec = np.einsum("kab,kb,kcb->kac", vecs, 1.0 / lam, vecs)
        quad = spacked @ (packer.pack(prec) * wpacked).T
        ll = -0.5 * (m * (D * _LOG_2PI + logdet)[None, :] + quad) + np.log(weights)[None, :]
        norm = logsumexp(ll, axis=1)
        mean_ll = float(norm.mean())
        if not np.isfinite(mean_ll):
            raise FloatingPointError("EM produced a non-finite log-likelihood")
        history.append(mean_ll)
        log.debug("EM iter %d: mean log-likelihood %.6f", it, mean_ll)
        if len(history) > 1 and abs(history[-1] - history[-2]) <= cfg.tol * abs(history[-2]):
            converged = True
            break
        resp = np.exp(ll - norm[:, None])
        weights, covs = _m_step(packer, spacked, resp, m, cfg.floor, prev=covs)

    model = GmmModel(weights, np.zeros((K, D)), covs)
    if return_history:
        return TrainingResult(model, history, converged)
    return model


def responsibilities(model: GmmModel, groups) -> np.ndarray:
    mats = np.stack([g.matrix for g in groups])
    ll = component_log_likelihoods(model, group_scatters(mats), mats.shape[2])
    return np.exp(ll - logsumexp(ll, axis=1, keepdims=True))


_HEADER = struct.Struct("<8sIII")


def save_model(model: GmmModel, path) -> None:
    K, D = model.n_components, model.patch_dim
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, K, D))
        for k in range(K):
            fh.write(struct.pack("<d", model.weights[k]))
            fh.write(model.means[k].astype("<f8").tobytes())
            fh.write(model.covariances[k].astype("<f8").tobytes())


def load_model(path) -> GmmModel:
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) < _HEADER.size:
        raise ModelFormatError(f"{path}: file too short for header")
    magic, version, K, D = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise ModelFormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise ModelFormatError(f"{path}: unsupported version {version}")
    if K < 1 or D < 1:
        raise ModelFormatError(f"{path}: invalid dimensions K={K}, patch_dim={D}")
    per = 1 + D + D * D
    body = buf[_HEADER.size :]
    if len(body) != 8 * per * K:
        raise ModelFormatError(
            f"{path}: body has {len(body)} bytes, expected {8 * per * K} for K={K}, patch_dim={D}"
        )
    arr = np.frombuffer(body, dtype="<f8").reshape(K, per).astype(np.float64)
    if not np.all(np.isfinite(arr)):
        raise ModelFormatError(f"{path}: non-finite values")
    try:
        return GmmModel(arr[:, 0], arr[:, 1 : 1 + D], arr[:, 1 + D :].reshape(K, D, D))
    except ValueError as exc:
        raise ModelFormatError(f"{path}: {exc}") from exc
