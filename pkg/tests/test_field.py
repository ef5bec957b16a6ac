import numpy as np
import pytest

from khess import field as fd


@pytest.fixture
def grid():
    return fd.GridSpec(n=2, k=2, periodic_points=(32,), dirichlet_points=(33,),
                       delta0=0.5)


def make(grid, fun):
    return fd.field_from_function(grid, fun)


# ---------------------------------------------------------------------------
# grids


def test_gridspec_rounds_dirichlet_to_odd():
    g = fd.GridSpec(n=2, k=2, periodic_points=(32,), dirichlet_points=(64,),
                    delta0=0.5)
    assert g.dirichlet_points == (65,)
    assert 0.0 in g.axis_coords(1)


def test_gridspec_validation():
    with pytest.raises(ValueError):
        fd.GridSpec(n=2, k=2, periodic_points=(31,), dirichlet_points=(33,),
                    delta0=0.5)  # odd periodic
    with pytest.raises(ValueError):
        fd.GridSpec(n=2, k=2, periodic_points=(32,), dirichlet_points=(4,),
                    delta0=0.5)  # too coarse
    with pytest.raises(ValueError):
        fd.GridSpec(n=2, k=2, periodic_points=(4096,), dirichlet_points=(4097,),
                    delta0=0.5)  # budget


def test_field_shape_and_finiteness(grid):
    with pytest.raises(ValueError):
        fd.GridField(np.zeros((3, 3)), grid)
    bad = np.zeros(grid.shape)
    bad[0, 0] = np.nan
    with pytest.raises(ValueError):
        fd.GridField(bad, grid)


# ---------------------------------------------------------------------------
# derivatives


def test_spectral_derivative_bandlimited(grid):
    f = make(grid, lambda p: np.sin(p[..., 0]))
    df = fd.derivative(f, 0, 1)
    exact = np.cos(grid.points()[..., 0])
    assert np.max(np.abs(df.values - exact)) < 1e-10


def test_fd_second_derivative_polynomial(grid):
    f = make(grid, lambda p: p[..., 1] ** 2)
    d2 = fd.derivative(f, 1, 2)
    assert np.max(np.abs(d2.values - 2.0)) < 1e-10  # degree <= 4 is exact


def test_mixed_derivative_closed_form(grid):
    f = make(grid, lambda p: np.sin(p[..., 0]) * p[..., 1] ** 2)
    m = fd.derivative(fd.derivative(f, 0, 1), 1, 1)
    pts = grid.points()
    exact = np.cos(pts[..., 0]) * 2 * pts[..., 1]
    assert np.max(np.abs(m.values - exact)) < 1e-6


def test_derivative_order_validation(grid):
    f = fd.zero_field(grid)
    with pytest.raises(ValueError):
        fd.derivative(f, 0, 3)


def test_hessian_entries_symmetric_pairs(grid):
    f = make(grid, lambda p: np.sin(p[..., 0]) * np.cos(np.pi * p[..., 1]))
    hw = fd.hessian_entries(f)
    assert set(hw) == {(0, 0), (0, 1), (1, 1)}


# ---------------------------------------------------------------------------
# norms


def test_sobolev_norm_zero(grid):
    assert fd.sobolev_norm(fd.zero_field(grid), 3) == 0.0


def test_sobolev_norm_single_mode_hand_value(grid):
    # f = cos x_1: alpha_{+-1} = 1/2 constant in x'', so
    # norm^2 = 2 delta0 * 2 * (1/4) * sum_{t+j<=s} 2^t
    f = make(grid, lambda p: np.cos(p[..., 0]))
    for s in (0, 1, 2, 3):
        hand = np.sqrt(grid.delta0 * sum((s - t + 1) * 2**t for t in range(s + 1)))
        assert fd.sobolev_norm(f, s) == pytest.approx(hand, rel=1e-12)


def test_sobolev_norm_monotone_in_s(grid):
    rng = np.random.default_rng(0)
    pts = grid.points()
    vals = sum(rng.normal() * np.cos(l * pts[..., 0])
               * np.sin(m * np.pi * (pts[..., 1] + 0.5))
               for l in range(3) for m in range(1, 4))
    f = fd.GridField(vals, grid)
    norms = [fd.sobolev_norm(f, s) for s in range(5)]
    assert all(a <= b * (1 + 1e-12) for a, b in zip(norms, norms[1:]))
    assert norms[0] > 0


def test_sobolev_norm_cap(grid):
    with pytest.raises(fd.ResolutionError):
        fd.sobolev_norm(fd.zero_field(grid), 20)


def test_cnorm_examples(grid):
    one = make(grid, lambda p: np.ones(p.shape[:-1]))
    assert fd.cnorm(one, 2) == pytest.approx(1.0)
    f = make(grid, lambda p: 3.0 * np.sin(p[..., 0]))
    assert fd.cnorm(f, 0) == pytest.approx(3.0, rel=1e-12)
    assert fd.cnorm(fd.zero_field(grid), 3) == 0.0


# ---------------------------------------------------------------------------
# smoothing


def dirichlet_mode(grid, m):
    L = 2 * grid.delta0
    return lambda p: np.sin(m * np.pi * (p[..., 1] + grid.delta0) / L)


def test_smooth_passthrough_bandlimited(grid):
    f = make(grid, lambda p: np.cos(2 * p[..., 0]) * dirichlet_mode(grid, 1)(p))
    out = fd.smooth(f, 8.0)
    assert np.max(np.abs(out.values - f.values)) < 1e-12


def test_smooth_kills_high_modes(grid):
    f = make(grid, lambda p: np.cos(12 * p[..., 0]))
    out = fd.smooth(f, 3.0)  # 12 = 4t lies beyond the cutoff support
    assert np.max(np.abs(out.values)) < 1e-12


def test_smooth_identity_for_large_t(grid):
    rng = np.random.default_rng(1)
    from conftest import smooth_random_field
    f = fd.GridField(smooth_random_field(grid, rng, modes=5), grid)
    out = fd.smooth(f, 1e4)
    assert np.max(np.abs(out.values - f.values)) < 1e-12


def test_smooth_preserves_boundary_zeros(grid):
    vals = np.sin(np.pi * (grid.points()[..., 1] + 0.5)) \
        * np.cos(3 * grid.points()[..., 0])
    vals[:, 0] = 0.0
    vals[:, -1] = 0.0
    out = fd.smooth(fd.GridField(vals, grid), 2.0)
    assert np.max(np.abs(out.values[:, 0])) == 0.0
    assert np.max(np.abs(out.values[:, -1])) == 0.0


def test_smooth_requires_t_geq_one(grid):
    with pytest.raises(ValueError):
        fd.smooth(fd.zero_field(grid), 0.5)


def test_smooth_periodicity_wrap(grid):
    # smoothing and derivatives commute with the discrete torus shift
    rng = np.random.default_rng(2)
    from conftest import smooth_random_field
    vals = smooth_random_field(grid, rng, modes=5)
    f = fd.GridField(vals, grid)
    shifted = fd.GridField(np.roll(vals, 5, axis=0), grid)
    a = np.roll(fd.smooth(f, 3.0).values, 5, axis=0)
    b = fd.smooth(shifted, 3.0).values
    assert np.max(np.abs(a - b)) < 1e-12
    a = np.roll(fd.derivative(f, 0, 1).values, 5, axis=0)
    b = fd.derivative(shifted, 0, 1).values
    assert np.max(np.abs(a - b)) < 1e-10


def test_smoothing_bounds_small_battery(grid):
    # scaled-down version of the full acceptance battery
    rng = np.random.default_rng(3)
    from conftest import smooth_random_field
    fields = [fd.GridField(smooth_random_field(grid, rng, modes=6), grid)
              for _ in range(8)]
    ts = (2.0, 4.0, 8.0)
    for s1, s2 in ((0, 2), (1, 3)):
        cs = []
        for t in ts:
            ratios = [fd.sobolev_norm(fd.smooth(f, t), s1) / fd.sobolev_norm(f, s2)
                      for f in fields]
            cs.append(max(ratios))
        assert max(cs) / min(cs) < 2.0  # boundedness constant is t-stable
    for s1, s2 in ((2, 0), (3, 1)):
        for t in ts:
            for f in fields:
                lhs = fd.sobolev_norm(fd.smooth(f, t), s1)
                rhs = t ** (s1 - s2) * fd.sobolev_norm(f, s2)
                assert lhs <= 50.0 * rhs  # growth bound with a measured C


# ---------------------------------------------------------------------------
# serialization


def test_snapshot_roundtrip(tmp_path, grid):
    rng = np.random.default_rng(4)
    f = fd.GridField(rng.normal(size=grid.shape), grid)
    path = tmp_path / "f.field"
    fd.save_field(path, f)
    g = fd.load_field(path)
    assert g.grid == grid
    assert np.array_equal(g.values, f.values)  # bit exact


def test_snapshot_rejects_other_files(tmp_path):
    path = tmp_path / "x.field"
    path.write_bytes(b"something else\n---\n")
    with pytest.raises(ValueError):
        fd.load_field(path)


def test_csv_slices(tmp_path, grid):
    f = make(grid, lambda p: p[..., 0] + 10 * p[..., 1])
    p1 = tmp_path / "slice1.csv"
    fd.slice_to_csv(p1, f, keep_axes=[1])
    lines = p1.read_text().splitlines()
    assert lines[0] == "x2,value"
    assert len(lines) == 1 + grid.shape[1]
    p2 = tmp_path / "slice2.csv"
    fd.slice_to_csv(p2, f, keep_axes=[0, 1])
    assert len(p2.read_text().splitlines()) == 1 + grid.shape[0] * grid.shape[1]


def test_interior_max_abs(grid):
    vals = np.zeros(grid.shape)
    vals[:, 0] = 100.0  # boundary row
    vals[5, 7] = 1.0
    assert fd.interior_max_abs(fd.GridField(vals, grid)) == 1.0
