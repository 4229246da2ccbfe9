import numpy as np
from numpy.typing import NDArray


def project_simplex(values: NDArray[np.float64], radius, axis: int = 0) -> NDArray[np.float64]:
    """
    Euclidean projection onto {y >= 0, sum(y) = radius} along ``axis``

    Args:
        values: 2-D array to project
        radius: Scalar or one radius per projected slice
        axis: 0 projects every column, 1 every row

    Returns:
        Projected array of the same shape
    """
    v = np.asarray(values, dtype=float)
    if axis == 0:
        return project_simplex(v.T, radius, axis=1).T
    n_slices, width = v.shape
    z = np.broadcast_to(np.asarray(radius, dtype=float), (n_slices,))
    # shifting by the slice maximum keeps v - theta exact for the largest entries
    v = v - v.max(axis=1, keepdims=True)
    u = np.sort(v, axis=1)[:, ::-1]
    cssv = np.cumsum(u, axis=1) - z[:, np.newaxis]
    ind = np.arange(1, width + 1)
    rho = np.count_nonzero(u - cssv / ind > 0, axis=1)
    rho = np.maximum(rho, 1)
    theta = cssv[np.arange(n_slices), rho - 1] / rho
    projected = np.maximum(v - theta[:, np.newaxis], 0.0)
    sums = projected.sum(axis=1, keepdims=True)
    return np.where(sums > 0, projected * (z[:, np.newaxis] / np.where(sums > 0, sums, 1.0)), projected)


def project_capped_simplex(values: NDArray[np.float64], radius, axis: int = 0) -> NDArray[np.float64]:
    """
    Euclidean projection onto {y >= 0, sum(y) <= radius} along ``axis``

    Slices whose positive part already fits are clipped at zero, the rest are
    projected onto the simplex of the given radius.
    """
    v = np.asarray(values, dtype=float)
    clipped = np.maximum(v, 0.0)
    z = np.asarray(radius, dtype=float)
    sums = clipped.sum(axis=axis)
    over = sums > np.broadcast_to(z, sums.shape)
    if not over.any():
        return clipped
    projected = project_simplex(v, z, axis=axis)
    mask = over[np.newaxis, :] if axis == 0 else over[:, np.newaxis]
    return np.where(mask, projected, clipped)
