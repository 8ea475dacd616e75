"""Dense float64 tensor primitives shared by every other module.

Tensors are plain numpy float64 arrays. Inputs live in the unit box [0, 1],
perturbations are measured in the L-inf norm, and every operation here is a
pure function: nothing is mutated in place.
"""

from dataclasses import dataclass

import numpy as np

L1 = "l1"
L2 = "l2"
LINF = "linf"

_NORM_ORDERS = (L1, L2, LINF)


def as_tensor(values, ndim: int | None = None) -> np.ndarray:
    """Validate `values` into a float64 array with all-finite entries."""
    arr = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError("tensor contains non-finite values")
    if ndim is not None and arr.ndim != ndim:
        raise ValueError(f"expected {ndim}-d tensor, got shape {arr.shape}")
    return arr


def ensure_finite(arr: np.ndarray, context: str) -> np.ndarray:
    """Raise instead of silently propagating NaN/Inf produced by an operation."""
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"non-finite values produced by {context}")
    return arr


@dataclass(frozen=True)
class GridShape:
    """Height x width x channels layout of a flattened grid input.

    Flattening is row-major with channels last: index = (row*width + col)*channels + ch.
    """

    height: int
    width: int
    channels: int = 1

    def __post_init__(self):
        if min(self.height, self.width, self.channels) < 1:
            raise ValueError(f"grid extents must be positive, got {self}")

    @property
    def size(self) -> int:
        return self.height * self.width * self.channels

    def check_matches(self, flat_dim: int) -> None:
        if self.size != flat_dim:
            raise ValueError(
                f"grid {self.height}x{self.width}x{self.channels} has {self.size} "
                f"cells, input has {flat_dim}"
            )


def dot(a: np.ndarray, b: np.ndarray) -> float:
    """Sum of elementwise products; shapes must match exactly."""
    if a.shape != b.shape:
        raise ValueError(f"dot: shape mismatch {a.shape} vs {b.shape}")
    out = float(np.dot(a.ravel(), b.ravel()))
    if not np.isfinite(out):
        raise ValueError("non-finite values produced by dot")
    return out


def norm(a: np.ndarray, order: str = L2) -> float:
    if order == L1:
        out = float(np.sum(np.abs(a)))
    elif order == L2:
        out = float(np.sqrt(np.sum(a * a)))
    elif order == LINF:
        out = float(np.max(np.abs(a))) if a.size else 0.0
    else:
        raise ValueError(f"unknown norm order {order!r}, expected one of {_NORM_ORDERS}")
    if not np.isfinite(out):
        raise ValueError("non-finite values produced by norm")
    return out


def sign(a: np.ndarray) -> np.ndarray:
    """Elementwise sign with sign(0) = 0, so zero gradients never drift."""
    return np.sign(a)


def clip_ball(x: np.ndarray, x0: np.ndarray, eps: float, order: str = LINF) -> np.ndarray:
    """Project x onto the L-inf ball of radius eps around x0, then into [0, 1]."""
    if x.shape != x0.shape:
        raise ValueError(f"clip_ball: shape mismatch {x.shape} vs {x0.shape}")
    if eps < 0:
        raise ValueError(f"clip_ball: negative radius {eps}")
    if order != LINF:
        raise ValueError(f"clip_ball: only {LINF} projection is supported")
    out = np.clip(x, x0 - eps, x0 + eps)
    return np.clip(out, 0.0, 1.0)


def gaussian_kernel(side: int, sigma: float) -> np.ndarray:
    """Odd-sided square Gaussian kernel normalized to sum 1.

    sigma <= 0 degenerates to the delta kernel (1 at the center), which makes
    smoothing a no-op.
    """
    if side < 1 or side % 2 == 0:
        raise ValueError(f"kernel side must be odd and positive, got {side}")
    if sigma <= 0:
        kern = np.zeros((side, side))
        kern[side // 2, side // 2] = 1.0
        return kern
    offsets = np.arange(side, dtype=np.float64) - side // 2
    one_d = np.exp(-0.5 * (offsets / sigma) ** 2)
    kern = np.outer(one_d, one_d)
    return kern / kern.sum()


def smooth2d(g: np.ndarray, grid: GridShape, kernel: np.ndarray) -> np.ndarray:
    """Per-channel 2-D cross-correlation of a flattened gradient with `kernel`.

    Same-size output with zero padding at the borders. The kernel must be
    square, odd-sided, and normalized to sum 1.
    """
    if kernel.ndim != 2 or kernel.shape[0] != kernel.shape[1]:
        raise ValueError(f"kernel must be square, got shape {kernel.shape}")
    k = kernel.shape[0]
    if k % 2 == 0:
        raise ValueError(f"kernel side must be odd, got {k}")
    if abs(float(kernel.sum()) - 1.0) > 1e-8:
        raise ValueError(f"kernel must sum to 1, sums to {kernel.sum()}")
    flat = g.ravel()
    grid.check_matches(flat.size)
    img = flat.reshape(grid.height, grid.width, grid.channels)
    r = k // 2
    padded = np.zeros((grid.height + 2 * r, grid.width + 2 * r, grid.channels))
    padded[r:r + grid.height, r:r + grid.width, :] = img
    out = np.zeros_like(img)
    for dr in range(k):
        for dc in range(k):
            w = kernel[dr, dc]
            if w == 0.0:
                continue
            out += w * padded[dr:dr + grid.height, dc:dc + grid.width, :]
    out = out.reshape(g.shape)
    return ensure_finite(out, "smooth2d")
