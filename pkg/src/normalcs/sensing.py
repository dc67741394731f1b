"""Radial partial-Fourier sampling: masks, the measurement map and its adjoint.

The measurement operator is A = R F with F the unitary 2-d DFT and R a
row selector over a set of radial lines through the DC frequency.  Masks
are built in centered frequency coordinates and shifted to FFT layout, so
DC lives at index (0, 0) of the stored mask.
"""

from dataclasses import dataclass, field

import numpy as np

from .grid import forward_fft

__all__ = [
    "SamplingPlan",
    "Measurements",
    "radial_mask",
    "full_mask",
    "lines_for_ratio",
    "measure",
    "adjoint",
    "add_noise",
]


@dataclass(frozen=True)
class SamplingPlan:
    """Which Fourier coefficients are observed.

    mask is boolean, shape (height, width), in FFT index layout; true
    cells are sampled.  Measurement vectors follow the row-major scan
    order of the true cells.  rng_seed is carried as provenance for
    plans built by randomized generators; the radial generator itself
    is deterministic.
    """

    mask: np.ndarray
    line_count: int
    rng_seed: int = 0

    def __post_init__(self):
        m = np.ascontiguousarray(np.asarray(self.mask, dtype=bool))
        if m.ndim != 2 or m.shape[0] < 2 or m.shape[1] < 2:
            raise ValueError("mask must be 2-d with both sides >= 2")
        if not m[0, 0]:
            raise ValueError("DC frequency must be sampled")
        m.setflags(write=False)
        object.__setattr__(self, "mask", m)

    @property
    def shape(self):
        return self.mask.shape

    @property
    def sample_count(self):
        return int(self.mask.sum())

    @property
    def sample_ratio(self):
        return self.sample_count / self.mask.size


@dataclass(frozen=True)
class Measurements:
    """Observed Fourier coefficients in mask scan order."""

    values: np.ndarray
    plan: SamplingPlan
    noise_sigma: float = 0.0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.complex128)
        if v.ndim != 1 or v.size != self.plan.sample_count:
            raise ValueError("value count does not match the plan's mask")
        object.__setattr__(self, "values", v)


def _radial_cells(width, height, line_count):
    # Centered coordinates: cx in [-(W//2), ...], cy likewise; the line at
    # angle theta is rasterized along its major axis with rounding, which
    # keeps the cell set symmetric under (cx, cy) -> (-cx, -cy) up to the
    # self-paired Nyquist edge.
    cys, cxs = [np.zeros(1, dtype=int)], [np.zeros(1, dtype=int)]
    half_w = width // 2
    half_h = height // 2
    cx_range = np.arange(-half_w, width - half_w)
    cy_range = np.arange(-half_h, height - half_h)
    for k in range(line_count):
        theta = np.pi * k / line_count
        c, s = np.cos(theta), np.sin(theta)
        if abs(c) >= abs(s):
            cy = np.round(cx_range * (s / c)).astype(int)
            keep = (cy >= -half_h) & (cy <= height - half_h - 1)
            cxs.append(cx_range[keep])
            cys.append(cy[keep])
        else:
            cx = np.round(cy_range * (c / s)).astype(int)
            keep = (cx >= -half_w) & (cx <= width - half_w - 1)
            cxs.append(cx[keep])
            cys.append(cy_range[keep])
    return np.concatenate(cys), np.concatenate(cxs)


def radial_mask(width, height, line_count, rng_seed=0):
    """Sampling plan for `line_count` radial lines through DC.

    Lines sit at angles theta_k = k*pi/line_count, k = 0..line_count-1,
    drawn through the centered origin by stepping the major axis one cell
    at a time and rounding the minor coordinate.  A line count large
    enough to cover every cell simply saturates at the full mask.
    """
    if line_count < 1:
        raise ValueError("line_count must be >= 1")
    cy, cx = _radial_cells(width, height, line_count)
    centered = np.zeros((height, width), dtype=bool)
    centered[cy + height // 2, cx + width // 2] = True
    mask = np.fft.ifftshift(centered)
    return SamplingPlan(mask=mask, line_count=line_count, rng_seed=rng_seed)


def full_mask(width, height):
    """Plan observing every coefficient; A becomes unitary."""
    mask = np.ones((height, width), dtype=bool)
    return SamplingPlan(mask=mask, line_count=max(width, height))


def lines_for_ratio(width, height, target_ratio, rng_seed=0):
    """Smallest-error line count whose sampling ratio best matches target_ratio."""
    if not 0.0 < target_ratio <= 1.0:
        raise ValueError("target_ratio must be in (0, 1]")
    best_lines, best_err = 1, np.inf
    for lines in range(1, 4 * max(width, height)):
        ratio = radial_mask(width, height, lines, rng_seed).sample_ratio
        err = abs(ratio - target_ratio)
        if err < best_err:
            best_lines, best_err = lines, err
        if ratio >= 1.0 or ratio > target_ratio + 0.05:
            break
    return best_lines


def measure(u, plan):
    """Apply A = R F: sample the unitary spectrum of u on the plan's mask."""
    u = np.asarray(u, dtype=np.float64)
    if u.shape != plan.shape:
        raise ValueError("image shape %s does not match plan %s" % (u.shape, plan.shape))
    spectrum = forward_fft(u)
    return Measurements(values=spectrum[plan.mask], plan=plan)


def adjoint(f):
    """Apply A^T: zero-fill the spectrum and invert, keeping the real part.

    For the unitary transform this is also the minimum-l2 back-projection
    consistent with the data.  The real part is exact as the adjoint of
    the real-restricted forward map; noisy data may carry a genuine
    imaginary component, which the restriction discards.
    """
    plan = f.plan
    spectrum = np.zeros(plan.shape, dtype=np.complex128)
    spectrum[plan.mask] = f.values
    return np.fft.ifft2(spectrum, norm="ortho").real


def add_noise(f, sigma_fraction, rng_seed):
    """Contaminate measurements with i.i.d. complex Gaussian noise.

    Each of the real and imaginary components receives standard deviation
    sigma_fraction * RMS(values), so sigma_fraction is the per-component
    noise level relative to the signal's root-mean-square.  The recorded
    noise_sigma is that absolute per-component deviation.
    """
    if sigma_fraction < 0:
        raise ValueError("sigma_fraction must be >= 0")
    if sigma_fraction == 0:
        return f
    rms = np.linalg.norm(f.values) / np.sqrt(f.values.size)
    sigma = sigma_fraction * rms
    rng = np.random.default_rng(rng_seed)
    noise = rng.normal(0.0, sigma, f.values.size) + 1j * rng.normal(0.0, sigma, f.values.size)
    return Measurements(values=f.values + noise, plan=f.plan, noise_sigma=float(sigma))
