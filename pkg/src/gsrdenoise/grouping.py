"""Nonlocal patch grouping: block matching, group centering and aggregation."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "PatchSpec",
    "PatchGroup",
    "default_stride",
    "reference_positions",
    "patch_view",
    "block_match",
    "match_positions",
    "extract_group",
    "subtract_group_mean",
    "aggregate",
]


def default_stride(d: int) -> int:
    return 4 if d <= 8 else 5


@dataclass(frozen=True)
class PatchSpec:
    """Patch side `d`, group size `m`, search window side `window`, reference stride."""

    d: int
    m: int
    window: int
    stride: int | None = None

    def __post_init__(self):
        if self.stride is None:
            object.__setattr__(self, "stride", default_stride(self.d))
        if self.d < 1 or self.m < 1 or self.stride < 1:
            raise ValueError(f"invalid patch spec {self}")
        if self.window < self.d:
            raise ValueError(f"window {self.window} smaller than patch size {self.d}")

    @property
    def dim(self) -> int:
        return self.d * self.d

    def check_image(self, shape) -> None:
        if self.d > min(shape):
            raise ValueError(f"image {shape[1]}x{shape[0]} smaller than one {self.d}x{self.d} patch")


@dataclass
class PatchGroup:
    """A d^2 x m stack of similar patches.

    Column ``j`` is the vectorized (row-major) patch whose top-left corner is
    ``positions[j]``. ``mean_patch`` holds whatever has been subtracted from
    every column so far; it is zero for a freshly matched group.
    """

    matrix: np.ndarray
    positions: np.ndarray
    mean_patch: np.ndarray = field(default=None)
    reference_index: int = 0

    def __post_init__(self):
        if self.mean_patch is None:
            self.mean_patch = np.zeros(self.matrix.shape[0])

    @property
    def m(self) -> int:
        return self.matrix.shape[1]

    @property
    def d(self) -> int:
        return int(round(np.sqrt(self.matrix.shape[0])))

    def restored(self) -> np.ndarray:
        """Patches with the subtracted mean added back."""
        return self.matrix + self.mean_patch[:, None]


def reference_positions(shape, spec: PatchSpec) -> list[tuple[int, int]]:
    """Raster-ordered reference corners at `spec.stride`, always reaching the last offset."""
    spec.check_image(shape)

    def axis(n):
        last = n - spec.d
        steps = list(range(0, last + 1, spec.stride))
        if steps[-1] != last:
            steps.append(last)
        return steps

    rows, cols = axis(shape[0]), axis(shape[1])
    return [(r, c) for r in rows for c in cols]


def patch_view(img: np.ndarray, d: int) -> np.ndarray:
    """Read-only view of shape (H-d+1, W-d+1, d, d); element [r, c] is the patch at (r, c)."""
    return sliding_window_view(img, (d, d))


def _window_bounds(ref: int, n_positions: int, window: int) -> tuple[int, int]:
    lo = max(ref - window // 2, 0)
    hi = min(ref - window // 2 + window - 1, n_positions - 1)
    return lo, hi


def match_positions(view: np.ndarray, ref, spec: PatchSpec) -> np.ndarray:
    """Top-left corners (m, 2) of the `spec.m` nearest patches to `ref`.

    `view` is ``patch_view(img, d)``. Distances are squared Euclidean on raw
    intensities; equal distances keep raster order (stable sort), and a window
    with fewer than m candidates is reused cyclically.
    """
    n_rows, n_cols = view.shape[:2]
    r, c = ref
    if not (0 <= r < n_rows and 0 <= c < n_cols):
        raise ValueError(f"reference {ref} is not a valid patch position")
    r0, r1 = _window_bounds(r, n_rows, spec.window)
    c0, c1 = _window_bounds(c, n_cols, spec.window)
    cand = view[r0 : r1 + 1, c0 : c1 + 1].reshape(-1, spec.dim)
    target = view[r, c].reshape(-1)
    dist = np.sum((cand - target) ** 2, axis=1)
    order = np.argsort(dist, kind="stable")
    # the reference itself is distance 0, but so may be others earlier in raster order
    self_idx = (r - r0) * (c1 - c0 + 1) + (c - c0)
    order = np.concatenate(([self_idx], order[order != self_idx]))
    chosen = order[np.arange(spec.m) % order.size]
    width = c1 - c0 + 1
    return np.stack([r0 + chosen // width, c0 + chosen % width], axis=1)


def extract_group(view: np.ndarray, positions: np.ndarray) -> np.ndarray:
    """Stack the patches at `positions` as columns of a d^2 x m matrix."""
    d = view.shape[-1]
    return view[positions[:, 0], positions[:, 1]].reshape(len(positions), d * d).T.copy()


def block_match(img: np.ndarray, ref, spec: PatchSpec) -> PatchGroup:
    spec.check_image(img.shape)
    view = patch_view(img, spec.d)
    pos = match_positions(view, ref, spec)
    return PatchGroup(extract_group(view, pos), pos)


def subtract_group_mean(group: PatchGroup) -> PatchGroup:
    """Center the group's columns; the removed mean accumulates in ``mean_patch``."""
    mu = group.matrix.mean(axis=1)
    return replace(
        group,
        matrix=group.matrix - mu[:, None],
        mean_patch=group.mean_patch + mu,
    )


def aggregate(groups, shape, fallback: np.ndarray | None = None) -> np.ndarray:
    """Average every patch contribution per pixel.

    Groups must carry their final (mean-restored) patches in ``restored()``.
    Pixels nobody covers are copied from `fallback`.
    """
    height, width = shape
    sums = np.zeros(height * width)
    counts = np.zeros(height * width)
    for g in groups:
        _accumulate(sums, counts, g.restored(), g.positions, g.d, width)
    return _finish(sums, counts, shape, fallback)


def _pixel_offsets(d: int, width: int) -> np.ndarray:
    rr, cc = np.divmod(np.arange(d * d), d)
    return rr * width + cc


def _accumulate(sums, counts, patches, positions, d, width) -> None:
    # patches: (d^2, n) columns, positions: (n, 2)
    flat = positions[:, 0] * width + positions[:, 1]
    idx = (flat[:, None] + _pixel_offsets(d, width)[None, :]).ravel()
    sums += np.bincount(idx, weights=patches.T.ravel(), minlength=sums.size)
    counts += np.bincount(idx, minlength=counts.size)


def _finish(sums, counts, shape, fallback):
    covered = counts > 0
    if not covered.all() and fallback is None:
        raise ValueError("some pixels are not covered by any patch and no fallback was given")
    out = np.empty(sums.size)
    out[covered] = sums[covered] / counts[covered]
    if not covered.all():
        out[~covered] = np.asarray(fallback, dtype=np.float64).ravel()[~covered]
    return out.reshape(shape)
