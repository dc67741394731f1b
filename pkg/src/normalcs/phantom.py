"""Piecewise-constant head phantom for reconstruction experiments."""

import numpy as np

__all__ = ["shepp_logan", "ELLIPSES"]

# One row per ellipse: centre x0, y0, semi-axes a, b, rotation phi in
# degrees (counter-clockwise), additive intensity.  Coordinates live in
# [-1, 1]^2 with x to the right and y upward.  The intensity set is the
# high-contrast variant so the summed image stays inside [0, 1].
ELLIPSES = np.array(
    [
        [0.0, 0.0, 0.69, 0.92, 0.0, 1.0],
        [0.0, -0.0184, 0.6624, 0.874, 0.0, -0.8],
        [0.22, 0.0, 0.11, 0.31, -18.0, -0.2],
        [-0.22, 0.0, 0.16, 0.41, 18.0, -0.2],
        [0.0, 0.35, 0.21, 0.25, 0.0, 0.1],
        [0.0, 0.1, 0.046, 0.046, 0.0, 0.1],
        [0.0, -0.1, 0.046, 0.046, 0.0, 0.1],
        [-0.08, -0.605, 0.046, 0.023, 0.0, 0.1],
        [0.0, -0.606, 0.023, 0.023, 0.0, 0.1],
        [0.06, -0.605, 0.023, 0.046, 0.0, 0.1],
    ]
)


def shepp_logan(width, height=None):
    """Rasterize the head phantom on a width x height grid.

    Each pixel takes the sum of the intensities of the ellipses whose
    interior contains the pixel centre.  Pixel centres sit at
    x_j = (2j + 1 - W) / W and y_i = (H - 1 - 2i) / H, so the sampling is
    mirror-symmetric about both axes and the output values lie in [0, 1].

    Parameters
    ----------
    width : int
    height : int, optional
        Defaults to `width`.

    Returns
    -------
    ndarray, shape (height, width), float64
    """
    if height is None:
        height = width
    if width < 2 or height < 2:
        raise ValueError("phantom grid must be at least 2x2")
    x = (2.0 * np.arange(width) + 1.0 - width) / width
    y = (height - 1.0 - 2.0 * np.arange(height)) / height
    xg, yg = np.meshgrid(x, y)
    img = np.zeros((height, width))
    for x0, y0, a, b, phi_deg, amp in ELLIPSES:
        phi = np.deg2rad(phi_deg)
        c, s = np.cos(phi), np.sin(phi)
        xr = (xg - x0) * c + (yg - y0) * s
        yr = -(xg - x0) * s + (yg - y0) * c
        img[(xr / a) ** 2 + (yr / b) ** 2 <= 1.0] += amp
    # intensity sums cancel to 0 in the ventricles up to rounding;
    # clip the +-1e-16 dust so the range contract is exact
    return np.clip(img, 0.0, 1.0)
