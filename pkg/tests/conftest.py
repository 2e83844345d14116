import numpy as np
import pytest

from roughlaplace.grids import SampledPath, TimeGrid


@pytest.fixture
def smooth_pair():
    """Two smooth 2-d paths on a common 33-point grid."""
    g = TimeGrid.uniform(33)
    t = g.points
    x = SampledPath(g, np.stack([np.sin(2 * np.pi * t) + 0.3 * t, np.cos(3 * t) - 1], axis=1))
    k = SampledPath(g, np.stack([0.5 * t**2, np.sin(t)], axis=1))
    return x, k


def random_smooth_path(grid: TimeGrid, dim: int, rng, n_modes: int = 4, scale: float = 0.5):
    """Random trigonometric polynomial path started at 0."""
    t = grid.points
    vals = np.zeros((len(t), dim))
    for j in range(dim):
        for m in range(1, n_modes + 1):
            a, b = rng.normal(size=2) * scale / m
            vals[:, j] += a * np.sin(m * np.pi * t) + b * (np.cos(m * np.pi * t) - 1.0)
    return SampledPath(grid, vals)
