"""Measurements of entropy structure and entropy collapse: per-frame grids of
normalized entropy, frame averages, the share of low-entropy sites, top-1 and
top-k mass statistics, and blue-to-red heatmap images written as binary PPM.
"""
from dataclasses import dataclass, field
import io
import logging
from pathlib import Path

import numpy as np
import pandas as pd

from .distributions import as_distribution, normalized_entropy, validate
from .errors import DimensionMismatch, EntropyOutOfRange, InvalidThreshold

logger = logging.getLogger(__name__)

# Normalized entropy below which a site counts as low-entropy.  Same value as
# the default h_low of ENkG.
DEFAULT_LOW_ENTROPY_THRESHOLD = 0.25

# Column names of the collapse report CSV.
REPORT_COLUMNS = ['frame', 'avg_entropy', 'low_entropy_share', 'top1_mass']


@dataclass(frozen=True)
class EntropyGrid:
    """Normalized entropies of the m = height * width sites of one frame,
    row-major.
    """
    frame_index: int
    height: int
    width: int
    values: np.ndarray

    def __post_init__(self):
        vals = np.array(self.values, dtype=np.float64).ravel()
        if vals.size != self.height * self.width:
            raise DimensionMismatch(
                f'Grid of {self.height}x{self.width} needs {self.height * self.width} values, got {vals.size}.')
        if vals.size and not np.all((vals >= 0.0) & (vals <= 1.0)):
            raise EntropyOutOfRange(
                f'Normalized entropies must lie in [0, 1]; got values from {vals.min()} to {vals.max()}.')
        vals.setflags(write=False)
        object.__setattr__(self, 'values', vals)

    def as_2d(self):
        return self.values.reshape(self.height, self.width)


@dataclass(frozen=True)
class CollapseReport:
    """Per-frame series describing entropy collapse over a rollout.
    """
    frame_avg_entropy: np.ndarray
    low_entropy_share: np.ndarray
    threshold: float
    top1_mass_avg: np.ndarray
    frames: np.ndarray = field(default=None)

    def __post_init__(self):
        series = [np.array(s, dtype=np.float64) for s in
                  (self.frame_avg_entropy, self.low_entropy_share, self.top1_mass_avg)]
        if len({s.size for s in series}) != 1:
            raise DimensionMismatch('Collapse report series must all have the same length.')
        frames = np.arange(series[0].size) if self.frames is None else np.array(self.frames, dtype=np.int64)
        if frames.size != series[0].size:
            raise DimensionMismatch('Collapse report needs one frame index per entry.')
        for name, s in zip(('frame_avg_entropy', 'low_entropy_share', 'top1_mass_avg'), series):
            s.setflags(write=False)
            object.__setattr__(self, name, s)
        frames.setflags(write=False)
        object.__setattr__(self, 'frames', frames)

    def __len__(self):
        return self.frames.size

    def to_frame(self):
        """Returns the report as a pandas DataFrame with the CSV columns.
        """
        return pd.DataFrame({
            'frame': self.frames,
            'avg_entropy': self.frame_avg_entropy,
            'low_entropy_share': self.low_entropy_share,
            'top1_mass': self.top1_mass_avg,
        }, columns=REPORT_COLUMNS)


@dataclass(frozen=True)
class HeatmapImage:
    """RGB image; 'pixels' has shape (height, width, 3) and dtype uint8.
    """
    width: int
    height: int
    pixels: np.ndarray

    def __post_init__(self):
        if self.pixels.shape != (self.height, self.width, 3):
            raise DimensionMismatch(
                f'Pixel array of shape {self.pixels.shape} does not match {self.width}x{self.height} RGB.')

# ---------------------------------------------------------------------------

def check_threshold(threshold):
    if not (0.0 < threshold < 1.0):
        raise InvalidThreshold(f'Low-entropy threshold must be in (0, 1), got {threshold}.')

def entropy_grid(dists, frame_index, height, width):
    """Normalized entropy of each of the height * width distributions of a
    frame, in input order.
    """
    if len(dists) != height * width:
        raise DimensionMismatch(f'Expected {height * width} distributions for a {height}x{width} grid, got {len(dists)}.')
    values = [normalized_entropy(d) for d in dists]
    return EntropyGrid(frame_index, height, width, values)

def frame_avg_entropy(grid):
    """Mean normalized entropy over the sites of 'grid'.
    """
    return float(np.mean(grid.values))

def low_entropy_share(grid, threshold=DEFAULT_LOW_ENTROPY_THRESHOLD):
    """Fraction of sites whose normalized entropy is strictly below 'threshold'.
    """
    check_threshold(threshold)
    return float(np.count_nonzero(grid.values < threshold)) / grid.values.size

def top1_mass(dist):
    dist = as_distribution(dist)
    return float(dist.probs.max())

def top_k_mass(dist, k):
    """Probability mass of the 'k' most probable tokens.
    """
    dist = as_distribution(dist)
    validate(dist)
    k = min(k, dist.V)
    return float(np.sort(dist.probs)[::-1][:k].sum())

def top_mass_profile(dists, k=20):
    """Mean of the sorted top-'k' probabilities over 'dists': entry r is the
    average probability of the rank-r token.  Codebooks smaller than 'k' are
    padded with zeros.
    """
    profile = np.zeros(k)
    for d in dists:
        d = as_distribution(d)
        top = np.sort(d.probs)[::-1][:k]
        profile[:top.size] += top
    return profile / len(dists)

def report_from_grids(grids, top1_avgs, threshold=DEFAULT_LOW_ENTROPY_THRESHOLD):
    """Builds a CollapseReport from per-frame grids and per-frame mean top-1
    masses.
    """
    check_threshold(threshold)
    if len(grids) != len(top1_avgs):
        raise DimensionMismatch('Need one top-1 mass per entropy grid.')
    if len({g.values.size for g in grids}) > 1:
        raise DimensionMismatch('All frames must have the same number of sites.')
    return CollapseReport(
        frame_avg_entropy=[frame_avg_entropy(g) for g in grids],
        low_entropy_share=[low_entropy_share(g, threshold) for g in grids],
        threshold=threshold,
        top1_mass_avg=top1_avgs,
        frames=[g.frame_index for g in grids],
    )

def collapse_report(per_frame_dists, threshold=DEFAULT_LOW_ENTROPY_THRESHOLD):
    """CollapseReport of a sequence of frames, each a sequence of m
    distributions.  Frames are treated independently; there is no state
    carried from one frame to the next.
    """
    check_threshold(threshold)
    sizes = {len(frame) for frame in per_frame_dists}
    if len(sizes) > 1:
        raise DimensionMismatch(f'Frames have differing site counts: {sorted(sizes)}.')
    if 0 in sizes:
        raise DimensionMismatch('A frame needs at least one site.')
    grids = []
    top1 = []
    for t, frame in enumerate(per_frame_dists):
        grids.append(entropy_grid(frame, t, 1, len(frame)))
        top1.append(float(np.mean([top1_mass(d) for d in frame])))
    return report_from_grids(grids, top1, threshold)

def report_to_csv(report, dest=None):
    """Writes the report as CSV to 'dest' (a path or text buffer).  Returns the
    CSV text when 'dest' is None.
    """
    df = report.to_frame()
    text = df.to_csv(index=False, float_format='%.6f', lineterminator='\n')
    if dest is None:
        return text
    if isinstance(dest, (str, Path)):
        Path(dest).write_text(text, encoding='utf-8')
        logger.info('Wrote collapse report %s', dest)
    else:
        dest.write(text)
    return text

# ------------------------------- Heatmaps

def _round_half_up(x):
    return np.floor(x + 0.5)

def render_heatmap(grid, scale=1):
    """Renders 'grid' with a linear blue (0) to red (1) colormap.  Each site
    becomes a 'scale' x 'scale' block of identical pixels.
    """
    if int(scale) != scale or scale < 1:
        raise DimensionMismatch(f'Scale must be a positive integer, got {scale}.')
    h = grid.as_2d()
    rgb = np.zeros((grid.height, grid.width, 3), dtype=np.uint8)
    rgb[..., 0] = _round_half_up(255.0 * h)
    rgb[..., 2] = _round_half_up(255.0 * (1.0 - h))
    rgb = np.repeat(np.repeat(rgb, scale, axis=0), scale, axis=1)
    return HeatmapImage(grid.width * scale, grid.height * scale, rgb)

def ppm_bytes(image):
    """Binary PPM (P6) encoding of 'image', top row first.
    """
    header = f'P6\n{image.width} {image.height}\n255\n'.encode('ascii')
    return header + np.ascontiguousarray(image.pixels, dtype=np.uint8).tobytes()

def write_ppm(image, dest):
    """Writes 'image' to 'dest', a path or a binary stream.
    """
    data = ppm_bytes(image)
    if isinstance(dest, (str, Path)):
        Path(dest).write_bytes(data)
        logger.debug('Wrote heatmap %s', dest)
    else:
        dest.write(data)

def read_ppm(source):
    """Reads a binary PPM written by write_ppm() from a path or bytes.
    """
    data = Path(source).read_bytes() if isinstance(source, (str, Path)) else bytes(source)
    buf = io.BytesIO(data)
    tag = buf.readline().strip()
    if tag != b'P6':
        raise DimensionMismatch(f'Not a binary PPM file (tag {tag!r}).')
    width, height = (int(v) for v in buf.readline().split())
    max_val = int(buf.readline())
    if max_val != 255:
        raise DimensionMismatch(f'Only 8-bit PPM files are supported, max value is {max_val}.')
    pixels = np.frombuffer(buf.read(width * height * 3), dtype=np.uint8)
    if pixels.size != width * height * 3:
        raise DimensionMismatch('PPM pixel data is truncated.')
    return HeatmapImage(width, height, pixels.reshape(height, width, 3).copy())
