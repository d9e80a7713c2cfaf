import numpy as np
import pytest

from abelscale import (
    ConstantKernel,
    Grid,
    NoiseModel,
    add_noise,
    apply_forward,
    build_abel_matrix,
    build_penalty,
)

UNIT_GAUSSIAN_AMP = (0.05 * np.sqrt(np.pi)) ** -0.5


def gaussian(nodes, center=0.5, sigma=0.05, amplitude=UNIT_GAUSSIAN_AMP):
    return amplitude * np.exp(-((nodes - center) ** 2) / (2.0 * sigma**2))


@pytest.fixture(scope="session")
def benchmark():
    """a=1 constant-kernel problem at n=100 with a unit-norm Gaussian truth."""
    grid = Grid(100)
    x_true = gaussian(grid.nodes)
    forward = build_abel_matrix(1.0, grid, ConstantKernel())
    penalty = build_penalty(1, 1.0, grid)
    y_clean = apply_forward(forward, x_true)
    y_noisy = add_noise(y_clean, NoiseModel(delta=0.05, seed=42))
    return {
        "grid": grid,
        "x_true": x_true,
        "forward": forward,
        "penalty": penalty,
        "y_clean": y_clean,
        "y_noisy": y_noisy,
        "delta": 0.05,
    }
