import numpy as np
import pytest

from airmarkov.errors import FormatError
from airmarkov.flowfield import (VelocityField, gen_channel_flow, gen_double_gyre,
                                 load_field, write_field)
from airmarkov.grid import CellSet, Grid


def unit_grid(nx, ny, **kwargs):
    return Grid(nx=nx, ny=ny, dx=1.0 / nx, dy=1.0 / ny, **kwargs)


class TestVelocityField:
    def test_length_and_finiteness_enforced(self):
        grid = unit_grid(3, 3)
        with pytest.raises(ValueError):
            VelocityField(grid=grid, u=np.zeros(8), v=np.zeros(9))
        bad = np.zeros(9)
        bad[4] = np.nan
        with pytest.raises(ValueError):
            VelocityField(grid=grid, u=bad, v=np.zeros(9))

    def test_obstructed_cells_zeroed(self):
        grid = unit_grid(3, 3).with_obstructions(CellSet([4], 9).mask())
        field = VelocityField(grid=grid, u=np.ones(9), v=np.ones(9))
        assert field.u[4] == 0.0 and field.v[4] == 0.0
        assert field.u[0] == 1.0

    def test_immutable_after_construction(self):
        field = VelocityField(grid=unit_grid(2, 2), u=np.ones(4), v=np.zeros(4))
        with pytest.raises(ValueError):
            field.u[0] = 2.0


class TestDoubleGyre:
    def test_zero_amplitude_gives_zero_field(self):
        field = gen_double_gyre(unit_grid(8, 8), 0.0)
        assert np.all(field.u == 0.0) and np.all(field.v == 0.0)

    def test_negative_amplitude_rejected(self):
        with pytest.raises(ValueError):
            gen_double_gyre(unit_grid(8, 8), -0.1)

    def test_center_symmetry(self):
        # odd grid: u ~ 0 at the center; |v| peaks on the horizontal midline
        grid = unit_grid(9, 9)
        field = gen_double_gyre(grid, 1.0)
        center = grid.cell_index(4, 4)
        assert abs(field.u[center]) < 1e-15
        v = np.abs(field.v.reshape(9, 9))
        assert np.all(v[4, :] >= v.max(axis=0) - 1e-15)

    def test_discrete_divergence_small(self):
        # central-difference divergence; bound frozen from an oracle run
        # (observed 4.8e-14 on this case, spec-scale bound ~3.1e-4)
        amplitude = 1.0
        grid = unit_grid(64, 64)
        field = gen_double_gyre(grid, amplitude)
        u = field.u.reshape(64, 64)
        v = field.v.reshape(64, 64)
        div = ((u[1:-1, 2:] - u[1:-1, :-2]) / (2 * grid.dx)
               + (v[2:, 1:-1] - v[:-2, 1:-1]) / (2 * grid.dy))
        assert np.abs(div).max() < 1e-12 * amplitude / min(grid.dx, grid.dy)

    def test_deterministic(self):
        grid = unit_grid(12, 7)
        a = gen_double_gyre(grid, 0.7)
        b = gen_double_gyre(grid, 0.7)
        np.testing.assert_array_equal(a.u, b.u)
        np.testing.assert_array_equal(a.v, b.v)


class TestChannelFlow:
    def test_wall_adjacent_profile(self):
        grid = Grid(nx=4, ny=6, dx=0.25, dy=0.5)
        field = gen_channel_flow(grid, 2.0)
        ly = 3.0
        yn = 0.5 * grid.dy / ly
        expected = 2.0 * 4.0 * yn * (1 - yn)
        assert field.u[0] == pytest.approx(expected, rel=1e-15)
        assert field.u[grid.cell_index(0, 5)] == pytest.approx(expected, rel=1e-15)
        assert np.all(field.v == 0.0)

    def test_mid_height_cell_hits_u_max(self):
        grid = unit_grid(4, 9)  # center row sits exactly at yn = 0.5
        field = gen_channel_flow(grid, 1.5)
        assert field.u[grid.cell_index(0, 4)] == 1.5

    def test_flux_constant_across_columns(self):
        grid = Grid(nx=7, ny=9, dx=0.1, dy=0.2)
        field = gen_channel_flow(grid, 1.5)
        flux = (field.u.reshape(9, 7) * grid.dy).sum(axis=0)
        assert flux.max() - flux.min() <= 1e-12

    def test_nonpositive_umax_rejected(self):
        with pytest.raises(ValueError):
            gen_channel_flow(unit_grid(4, 4), 0.0)


class TestFieldFiles:
    def test_tiny_file_read_back(self, tmp_path):
        grid = Grid(nx=2, ny=2, dx=1.0, dy=1.0)
        path = tmp_path / "f.field"
        path.write_text("pffield v1 nx=2 ny=2\n"
                        "0,0.5,0\n1,-0.25,0.125\n2,0,1\n3,0,0\n")
        field = load_field(path, grid)
        assert field.u.tolist() == [0.5, -0.25, 0.0, 0.0]
        assert field.v.tolist() == [0.0, 0.125, 1.0, 0.0]

    def test_write_load_roundtrip_exact(self, tmp_path):
        grid = unit_grid(6, 5)
        field = gen_double_gyre(grid, 1.234567890123)
        path = tmp_path / "gyre.field"
        write_field(field, path)
        back = load_field(path, grid)
        np.testing.assert_array_equal(back.u, field.u)
        np.testing.assert_array_equal(back.v, field.v)

    def test_missing_rows_reports_counts(self, tmp_path):
        path = tmp_path / "short.field"
        path.write_text("pffield v1 nx=2 ny=2\n0,1,0\n1,1,0\n2,1,0\n")
        with pytest.raises(FormatError) as err:
            load_field(path, Grid(nx=2, ny=2, dx=1, dy=1))
        assert "4" in str(err.value) and "3" in str(err.value)

    def test_bad_entries_name_line(self, tmp_path):
        grid = Grid(nx=2, ny=1, dx=1, dy=1)
        path = tmp_path / "bad.field"
        path.write_text("pffield v1 nx=2 ny=1\n0,1,0\n1,abc,0\n")
        with pytest.raises(FormatError) as err:
            load_field(path, grid)
        assert ":3" in str(err.value)
        path.write_text("pffield v1 nx=2 ny=1\n0,1,0\n1,nan,0\n")
        with pytest.raises(FormatError):
            load_field(path, grid)

    def test_header_mismatch(self, tmp_path):
        path = tmp_path / "wrong.field"
        path.write_text("pffield v1 nx=3 ny=1\n0,1,0\n1,1,0\n2,1,0\n")
        with pytest.raises(FormatError):
            load_field(path, Grid(nx=2, ny=1, dx=1, dy=1))

    def test_obstruction_disagreement_warns_and_zeroes(self, tmp_path):
        grid = Grid(nx=2, ny=1, dx=1, dy=1).with_obstructions([True, False])
        path = tmp_path / "obs.field"
        path.write_text("pffield v1 nx=2 ny=1\n0,1,0\n1,1,0\n")
        with pytest.warns(UserWarning):
            field = load_field(path, grid)
        assert field.u[0] == 0.0 and field.u[1] == 1.0
