"""Derived-field correctness, export formats, and the discrete Stokes identity."""

import math
from types import SimpleNamespace

import numpy as np
import pytest

from acteuler.assembly import Assembler, DirichletBC, ProblemSetup
from acteuler.constitutive import ConstitutiveParams
from acteuler.fem import VelocitySpace, interpolate_velocity
from acteuler.mesh import generate_rectangle
from acteuler.postprocess import (
    FieldSnapshot,
    ScatterData,
    SliceProfile,
    circulation_identity,
    compute_vorticity,
    constitutive_scatter,
    extract_slice,
    output_basename,
    read_csv,
    write_csv,
    write_vtk,
)
from acteuler.solver import continuation_solve
from acteuler.verification import ChannelOracle

from conftest import perturbed_rectangle


def uniform_flow(space, speed=10.0):
    return interpolate_velocity(
        space, lambda x: np.column_stack(
            [np.full(len(x), speed), np.zeros(len(x))]))


@pytest.fixture(scope="module")
def channel_solution():
    """Activated channel solve shared by scatter and snapshot tests."""
    par = ConstitutiveParams(1.0, 15.0, 1e-3, ga=20.0)
    oracle = ChannelOracle(g_force=20.0, params=par)
    prof = oracle.profile()
    force = lambda x: np.column_stack([np.ones(len(x)), np.zeros(len(x))])
    tri = generate_rectangle(8, 8, x_range=(0.0, 2.0), y_range=(-1.0, 1.0))

    def make(stage):
        p = ConstitutiveParams(1.0, 15.0, stage["eps"], ga=20.0)
        return Assembler(tri, ProblemSetup(
            params=p, bcs={"inflow": DirichletBC(prof),
                           "outflow": DirichletBC(prof),
                           "wall": DirichletBC(prof)},
            body_force=force, gamma=1e4))

    schedule = [{"eps": 1e-1}, {"eps": 1e-2}, {"eps": 1e-3}]
    result, _ = continuation_solve(make, schedule)
    return make(schedule[-1]), result.state


class TestVorticity:
    def test_rigid_rotation(self, small_mesh):
        V = VelocitySpace(small_mesh)
        v = interpolate_velocity(
            V, lambda x: np.column_stack([-x[:, 1], x[:, 0]]))
        assert compute_vorticity(V, v) == pytest.approx(
            np.full(small_mesh.n_cells, 2.0), abs=1e-12)

    def test_uniform_flow(self, small_mesh):
        V = VelocitySpace(small_mesh)
        assert np.max(np.abs(compute_vorticity(V, uniform_flow(V)))) <= 1e-12

    def test_poiseuille_first_order(self):
        # interpolant curl carries an O(h) error, measured at h/3
        errs = []
        for n in (8, 16):
            tri = generate_rectangle(n, n, x_range=(0.0, 2.0),
                                     y_range=(-1.0, 1.0))
            V = VelocitySpace(tri)
            v = interpolate_velocity(V, lambda x: np.column_stack(
                [1.0 - x[:, 1] ** 2, np.zeros(len(x))]))
            omega = compute_vorticity(V, v)
            yc = tri.cell_centroids()[:, 1]
            errs.append(np.max(np.abs(omega - 2.0 * yc)))
            assert errs[-1] <= 0.4 * (2.0 / n)
        assert errs[1] == pytest.approx(0.5 * errs[0], rel=1e-10)


class TestCirculationIdentity:
    def test_arbitrary_field_satisfies_stokes_theorem(self):
        tri = perturbed_rectangle(5, 4, seed=2)
        V = VelocitySpace(tri)
        rng = np.random.default_rng(8)
        v = rng.standard_normal(V.n_dofs)
        terms = circulation_identity(V, v)
        lhs = terms["vorticity_integral"]
        rhs = terms["boundary_circulation"] \
            + terms["interior_jump_circulation"]
        assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(lhs))

    def test_rotation_has_circulation_twice_area(self, small_mesh):
        V = VelocitySpace(small_mesh)
        v = interpolate_velocity(
            V, lambda x: np.column_stack([-x[:, 1], x[:, 0]]))
        terms = circulation_identity(V, v)
        area = small_mesh.cell_areas.sum()
        assert terms["vorticity_integral"] == pytest.approx(
            2.0 * area, rel=1e-12)
        # exact interpolation of a linear field leaves no tangential jumps
        assert abs(terms["interior_jump_circulation"]) <= 1e-12
        assert terms["boundary_circulation"] == pytest.approx(
            2.0 * area, rel=1e-12)


class TestConstitutiveScatter:
    def test_lifted_identity_every_cell(self, channel_solution):
        asm, state = channel_solution
        scatter = constitutive_scatter(asm, state)
        assert scatter.identity_gap.max() <= 1e-9

    def test_identity_written_out(self, channel_solution):
        asm, state = channel_solution
        sc = constitutive_scatter(asm, state)
        params = asm.setup.params
        curve = (params.alpha + params.eu / np.sqrt(
            sc.stress_norm**2 + params.eps**2)) * sc.stress_norm
        assert sc.curve_rate == pytest.approx(curve, rel=1e-14)
        assert np.array_equal(sc.identity_gap,
                              np.abs(sc.lifted_rate - sc.curve_rate))

    def test_activated_asymptote(self, channel_solution):
        # |S| >> eps pairs approach slope alpha with intercept eu
        asm, state = channel_solution
        sc = constitutive_scatter(asm, state)
        params = asm.setup.params
        big = sc.stress_norm > 100.0 * params.eps
        assert big.sum() > 0
        dev = np.abs(sc.lifted_rate[big]
                     - (params.alpha * sc.stress_norm[big] + params.eu))
        assert dev.max() <= 1e-3

    def test_newtonian_scatter_is_line(self):
        tri = generate_rectangle(6, 6, x_range=(0.0, 2.0),
                                 y_range=(-1.0, 1.0))
        prof = lambda x: np.column_stack(
            [1.0 - x[:, 1] ** 2, np.zeros(len(x))])
        force = lambda x: np.column_stack(
            [np.full(len(x), 2.0), np.zeros(len(x))])
        asm = Assembler(tri, ProblemSetup(
            params=ConstitutiveParams(1.0, 0.0, 1e-3, ga=1.0),
            bcs={"inflow": DirichletBC(prof), "outflow": DirichletBC(prof),
                 "wall": DirichletBC(prof)},
            body_force=force, gamma=1e4))
        from acteuler.solver import newton_solve
        state = newton_solve(asm).state
        sc = constitutive_scatter(asm, state)
        assert np.max(np.abs(sc.lifted_rate - 1.0 * sc.stress_norm)) <= 1e-9

    def test_raw_rate_differs_from_lifted(self, channel_solution):
        # the jump lifting is part of the strain; dropping it must show
        asm, state = channel_solution
        sc = constitutive_scatter(asm, state)
        assert np.max(np.abs(sc.raw_rate - sc.lifted_rate)) > 1e-3


class TestFieldSnapshot:
    def test_from_state_fields(self, channel_solution):
        asm, state = channel_solution
        snap = FieldSnapshot.from_state(asm, state)
        m = asm.tri.n_cells
        assert snap.velocity.shape == (m, 2)
        for name in ("speed", "pressure", "vorticity", "stress_norm",
                     "rate_norm"):
            assert getattr(snap, name).shape == (m,)
        assert snap.speed == pytest.approx(
            np.hypot(snap.velocity[:, 0], snap.velocity[:, 1]))
        assert snap.params is asm.setup.params

    def test_rejects_non_finite(self, channel_solution):
        asm, state = channel_solution
        bad = state.copy()
        bad.p[0] = np.nan
        with pytest.raises(ValueError, match="finite"):
            FieldSnapshot.from_state(asm, bad)

    def test_rejects_wrong_length(self, small_mesh):
        m = small_mesh.n_cells
        with pytest.raises(ValueError, match="per cell"):
            FieldSnapshot(tri=small_mesh, velocity=np.zeros((m, 2)),
                          speed=np.zeros(m + 1), pressure=np.zeros(m),
                          vorticity=np.zeros(m), stress_norm=np.zeros(m),
                          rate_norm=np.zeros(m))


class TestSliceExtraction:
    def setup_method(self):
        self.tri = perturbed_rectangle(6, 5, seed=4)
        self.V = VelocitySpace(self.tri)
        self.holder = SimpleNamespace(tri=self.tri, velocity=self.V)

    def test_uniform_flow_samples(self):
        v = uniform_flow(self.V, 10.0)
        prof = extract_slice(self.holder, SimpleNamespace(v=v), 0.5)
        assert prof.n_requested == 400
        assert prof.n_absent == 0
        assert np.all(np.diff(prof.y) > 0)
        assert prof.speed == pytest.approx(np.full(400, 10.0), abs=1e-11)
        assert prof.vorticity == pytest.approx(np.zeros(400), abs=1e-11)

    def test_station_outside_domain(self):
        v = uniform_flow(self.V)
        with pytest.raises(ValueError, match="outside"):
            extract_slice(self.holder, SimpleNamespace(v=v), 1.5)

    def test_sample_counts_agree_at_shared_points(self):
        rng = np.random.default_rng(31)
        v = rng.standard_normal(self.V.n_dofs)
        coarse = extract_slice(self.holder, SimpleNamespace(v=v), 0.37,
                               n_samples=100)
        fine = extract_slice(self.holder, SimpleNamespace(v=v), 0.37,
                             n_samples=199)
        assert coarse.n_absent == 0 and fine.n_absent == 0
        assert fine.y[::2] == pytest.approx(coarse.y, abs=1e-14)
        assert fine.speed[::2] == pytest.approx(coarse.speed, abs=1e-12)
        assert fine.vorticity[::2] == pytest.approx(
            coarse.vorticity, abs=1e-12)

    def test_extraction_scales_with_state(self):
        rng = np.random.default_rng(37)
        v = rng.standard_normal(self.V.n_dofs)
        one = extract_slice(self.holder, SimpleNamespace(v=v), 0.61)
        three = extract_slice(self.holder, SimpleNamespace(v=3.0 * v), 0.61)
        assert three.speed == pytest.approx(3.0 * one.speed, rel=1e-12)
        assert three.vorticity == pytest.approx(
            3.0 * one.vorticity, rel=1e-12)

    def test_profile_requires_increasing_y(self):
        with pytest.raises(ValueError, match="increasing"):
            SliceProfile(x_station=0.0, y=np.array([0.0, 0.0]),
                         speed=np.zeros(2), vorticity=np.zeros(2),
                         n_requested=2)


class TestWriters:
    def test_vtk_parses_in_reference_reader(self, tmp_path, channel_solution):
        asm, state = channel_solution
        snap = FieldSnapshot.from_state(asm, state)
        path = tmp_path / "flow.vtk"
        write_vtk(snap, path)
        points, cells, cell_data = _parse_legacy_vtk(path)
        tri = asm.tri
        assert points.shape == (tri.n_vertices, 3)
        assert np.array_equal(cells, tri.cells)
        assert points[:, :2] == pytest.approx(tri.vertices, abs=0.0)
        assert set(cell_data) == {"velocity", "pressure", "vorticity",
                                  "stress_norm", "rate_norm"}
        assert cell_data["velocity"][:, :2] == pytest.approx(
            snap.velocity, abs=0.0)
        assert cell_data["pressure"] == pytest.approx(snap.pressure, abs=0.0)
        assert cell_data["rate_norm"] == pytest.approx(
            snap.rate_norm, abs=0.0)

    def test_vtk_header_lines(self, tmp_path, small_mesh):
        m = small_mesh.n_cells
        snap = FieldSnapshot(
            tri=small_mesh, velocity=np.ones((m, 2)), speed=np.ones(m),
            pressure=np.zeros(m), vorticity=np.zeros(m),
            stress_norm=np.zeros(m), rate_norm=np.zeros(m))
        path = tmp_path / "tiny.vtk"
        write_vtk(snap, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "# vtk DataFile Version 2.0"
        assert lines[2] == "ASCII"
        assert lines[3] == "DATASET UNSTRUCTURED_GRID"
        assert lines[4] == f"POINTS {small_mesh.n_vertices} double"

    def test_scatter_csv_round_trip_bit_identical(self, tmp_path,
                                                  channel_solution):
        asm, state = channel_solution
        sc = constitutive_scatter(asm, state)
        first = tmp_path / "scatter.csv"
        write_csv(sc, first)
        header, cols = read_csv(first)
        assert header == ("stress_norm", "lifted_rate", "raw_rate")
        again = ScatterData(stress_norm=cols[0], lifted_rate=cols[1],
                            raw_rate=cols[2], curve_rate=cols[1])
        second = tmp_path / "scatter2.csv"
        write_csv(again, second)
        assert first.read_bytes() == second.read_bytes()

    def test_profile_csv_layout(self, tmp_path):
        prof = SliceProfile(x_station=0.2,
                            y=np.array([-1.0, 0.0, 1.0]),
                            speed=np.array([0.5, 2.0, 0.5]),
                            vorticity=np.array([3.0, 0.0, 3.0]),
                            n_requested=3)
        path = tmp_path / "slice.csv"
        write_csv(prof, path)
        header, cols = read_csv(path)
        assert header == ("y", "speed", "vorticity")
        assert cols[0] == pytest.approx(prof.y, abs=0.0)
        assert cols[1] == pytest.approx(prof.speed, abs=0.0)

    def test_write_rejects_unknown_type(self, tmp_path):
        with pytest.raises(TypeError, match="CSV layout"):
            write_csv({"not": "supported"}, tmp_path / "x.csv")

    def test_io_errors_carry_path(self, tmp_path):
        missing = tmp_path / "no_such_dir" / "out.csv"
        prof = SliceProfile(x_station=0.0, y=np.array([0.0]),
                            speed=np.array([1.0]),
                            vorticity=np.array([0.0]), n_requested=1)
        with pytest.raises(OSError, match="out.csv"):
            write_csv(prof, missing)
        with pytest.raises(OSError, match="absent.csv"):
            read_csv(tmp_path / "absent.csv")

    def test_output_basename(self):
        assert output_basename("airfoil", 1, 15.0) == "airfoil_1_15"
        assert output_basename("channel", 0, 0.0) == "channel_0_0"
        assert output_basename("cavity", 2, 0.5) == "cavity_2_0.5"


def _parse_legacy_vtk(path):
    """Minimal independent reader for the legacy ASCII format."""
    lines = path.read_text().splitlines()
    assert lines[1].strip() != ""
    i = lines.index("DATASET UNSTRUCTURED_GRID") + 1
    tag, n_pts, dtype = lines[i].split()
    assert tag == "POINTS" and dtype == "double"
    n_pts = int(n_pts)
    points = np.array([[float(t) for t in lines[i + 1 + j].split()]
                       for j in range(n_pts)])
    i += 1 + n_pts
    tag, n_cells, total = lines[i].split()
    assert tag == "CELLS"
    n_cells = int(n_cells)
    assert int(total) == 4 * n_cells
    cells = []
    for j in range(n_cells):
        parts = [int(t) for t in lines[i + 1 + j].split()]
        assert parts[0] == 3
        cells.append(parts[1:])
    i += 1 + n_cells
    assert lines[i] == f"CELL_TYPES {n_cells}"
    for j in range(n_cells):
        assert lines[i + 1 + j] == "5"
    i += 1 + n_cells
    assert lines[i] == f"CELL_DATA {n_cells}"
    i += 1
    data = {}
    while i < len(lines):
        parts = lines[i].split()
        if parts[0] == "VECTORS":
            name, dtype = parts[1], parts[2]
            assert dtype == "double"
            vals = np.array([[float(t) for t in lines[i + 1 + j].split()]
                             for j in range(n_cells)])
            i += 1 + n_cells
        else:
            assert parts[0] == "SCALARS" and parts[3] == "1"
            name = parts[1]
            assert lines[i + 1] == "LOOKUP_TABLE default"
            vals = np.array([float(lines[i + 2 + j])
                             for j in range(n_cells)])
            i += 2 + n_cells
        data[name] = vals
    return points, np.array(cells), data
