"""Image objectives: thickness, aspect ratio, rotation, and pairwise diversity.

All operate on square grayscale rasters with intensities in [0, m]. Aspect
ratio and rotation binarise at the strict threshold m/2. Rotation works in an
x-right / y-up frame (x = column index, y = negative row index), so a larger
slope of the second principal component means a larger anticlockwise rotation.
"""

import math

import numpy as np


class ObjectiveUndefinedError(ValueError):
    """The metric is not defined for this image (e.g. nothing above threshold)."""


def _check_image(pixels, maxval):
    pixels = np.asarray(pixels, dtype=np.float64)
    if pixels.ndim != 2 or pixels.shape[0] != pixels.shape[1]:
        raise ValueError(f"image must be square, got shape {pixels.shape}")
    if np.any(pixels < 0) or np.any(pixels > maxval):
        raise ValueError(f"intensities must lie in [0, {maxval}]")
    return pixels


def thickness(pixels, maxval=255):
    """Mean pixel intensity."""
    return float(np.mean(_check_image(pixels, maxval)))


def aspect_ratio(pixels, maxval=255):
    """width / height of the above-threshold bounding extents.

    height = max{i: row i has a pixel > m/2} - min{...}; width likewise over
    columns. Raises if no row/column qualifies or if height is zero.
    """
    pixels = _check_image(pixels, maxval)
    rows = np.nonzero(np.max(pixels, axis=1) > maxval / 2)[0]
    cols = np.nonzero(np.max(pixels, axis=0) > maxval / 2)[0]
    if len(rows) == 0:
        raise ObjectiveUndefinedError("no qualifying rows (all intensities <= m/2)")
    height = int(rows[-1] - rows[0])
    width = int(cols[-1] - cols[0])
    if height == 0:
        raise ObjectiveUndefinedError("height is zero (single qualifying row)")
    return width / height


def rotation(pixels, maxval=255):
    """Slope of the second principal component of the on-pixel coordinates.

    Returns +inf when the second component is vertical. Raises when fewer
    than two pixels exceed m/2 or when the coordinate covariance is isotropic
    (the principal directions are then arbitrary).
    """
    pixels = _check_image(pixels, maxval)
    on_rows, on_cols = np.nonzero(pixels > maxval / 2)
    if len(on_rows) < 2:
        raise ObjectiveUndefinedError("fewer than 2 on-pixels after binarisation")
    pts = np.stack([on_cols.astype(np.float64), -on_rows.astype(np.float64)], axis=1)
    cov = np.cov(pts, rowvar=False, bias=True)
    eigvals, eigvecs = np.linalg.eigh(cov)
    # eigh returns ascending eigenvalues: column 0 is the second (minor) PC
    if math.isclose(eigvals[0], eigvals[1], rel_tol=1e-9, abs_tol=1e-12):
        raise ObjectiveUndefinedError("rotation undefined: isotropic covariance")
    v2 = eigvecs[:, 0]
    if v2[0] < 0 or (v2[0] == 0 and v2[1] < 0):
        v2 = -v2
    if v2[0] == 0.0:
        return math.inf
    return float(v2[1] / v2[0])


def diversity(images, maxval=255):
    """Average mean-squared pairwise distance between t >= 2 same-size images.

    u = 2 / (t (t - 1)) * sum_{i<j} ||x_i - x_j||_F^2 / h^2
    """
    if len(images) < 2:
        raise ValueError("diversity requires at least 2 images")
    arrs = [_check_image(img, maxval) for img in images]
    h = arrs[0].shape[0]
    if any(a.shape != (h, h) for a in arrs):
        raise ValueError("all images must share the same size")
    t = len(arrs)
    total = 0.0
    for i in range(t):
        for j in range(i + 1, t):
            total += float(np.sum((arrs[i] - arrs[j]) ** 2)) / h**2
    return 2.0 * total / (t * (t - 1))
