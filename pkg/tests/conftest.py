import warnings

import numpy as np
import pytest

from khess.approx import CutoffSpec, ProblemSpec, build_corrector, parse_kmodel_terms
from khess.field import GridSpec
from khess import nashmoser

DEFAULT_2D_TERMS = "1.0 0 2\n0.1 0 3"
DEFAULT_3D_TERMS = "1.0 0 2 0\n0.8 0 0 2\n0.1 0 0 3"


@pytest.fixture(scope="session")
def spec2d():
    return ProblemSpec(n=2, k=2, tau=(1.0,), curvatures=(1.0,),
                       epsilon=0.1, delta0=0.5)


@pytest.fixture(scope="session")
def approx2d(spec2d):
    km = parse_kmodel_terms(DEFAULT_2D_TERMS, 2, 2)
    return build_corrector(km, CutoffSpec(), spec2d)


@pytest.fixture(scope="session")
def grid2d():
    return GridSpec(n=2, k=2, periodic_points=(64,), dirichlet_points=(65,),
                    delta0=0.5)


@pytest.fixture(scope="session")
def grid2d_small():
    return GridSpec(n=2, k=2, periodic_points=(32,), dirichlet_points=(33,),
                    delta0=0.5)


@pytest.fixture(scope="session")
def spec3d():
    return ProblemSpec(n=3, k=2, tau=(1.0,), curvatures=(1.0, 0.8),
                       epsilon=0.1, delta0=0.5)


@pytest.fixture(scope="session")
def approx3d(spec3d):
    km = parse_kmodel_terms(DEFAULT_3D_TERMS, 3, 2)
    return build_corrector(km, CutoffSpec(), spec3d)


@pytest.fixture(scope="session")
def grid3d():
    return GridSpec(n=3, k=2, periodic_points=(32,), dirichlet_points=(33, 33),
                    delta0=0.5)


@pytest.fixture(scope="session")
def run2d(approx2d, grid2d):
    params = nashmoser.params_from_schedule(2, 2, gamma=1.2, sigma=2.0, seed=1234)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        result = nashmoser.run(approx2d, params, grid2d)
    return result


@pytest.fixture(scope="session")
def run3d(approx3d, grid3d):
    params = nashmoser.params_from_schedule(3, 2, gamma=1.2, sigma=2.0, seed=1234)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        result = nashmoser.run(approx3d, params, grid3d)
    return result


def smooth_random_field(grid, rng, modes=3, amplitude=1.0):
    """Smooth random field vanishing on the Dirichlet faces."""
    pts = grid.points()
    vals = np.zeros(grid.shape)
    for _ in range(modes):
        term = np.ones(grid.shape)
        for a in range(grid.n):
            if grid.is_periodic(a):
                ell = rng.integers(1, 4)
                phase = rng.uniform(0, 2 * np.pi)
                term = term * np.cos(ell * pts[..., a] + phase)
            else:
                m = rng.integers(1, 4)
                term = term * np.sin(m * np.pi * (pts[..., a] + grid.delta0)
                                     / (2 * grid.delta0))
        vals += rng.normal() * term
    scale = np.max(np.abs(vals))
    if scale > 0:
        vals *= amplitude / scale
    return vals
