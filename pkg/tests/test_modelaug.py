"""Tests for mesh I/O and symmetry-preserving lattice deformation."""

import numpy as np
import pytest

from viewsynth.modelaug import (
    Mesh,
    apply_deformation,
    build_lattice,
    compute_vertex_normals,
    load_obj,
    mirror_x,
    sample_deformation,
    save_obj,
)

from meshes import symmetric_mesh, unit_cube


def reflection_error(mesh):
    """Oracle: match each reflected vertex to its nearest original vertex."""
    reflected = mirror_x(mesh.vertices)
    dist = np.linalg.norm(reflected[:, None, :] - mesh.vertices[None, :, :], axis=2)
    return dist.min(axis=1).max()


class TestMeshBasics:
    def test_face_index_validation(self):
        with pytest.raises(ValueError):
            Mesh(np.zeros((2, 3)), np.array([[0, 1, 2]]))

    def test_drop_degenerate_faces(self):
        vertices = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [2, 0, 0]], dtype=float)
        faces = np.array([[0, 1, 2], [0, 1, 3]])  # second face is collinear
        cleaned = Mesh(vertices, faces).drop_degenerate_faces()
        assert len(cleaned.faces) == 1

    def test_vertex_normals_unit_length(self):
        mesh = unit_cube()
        normals = compute_vertex_normals(mesh)
        np.testing.assert_allclose(np.linalg.norm(normals, axis=1), 1.0, atol=1e-12)


class TestObjRoundTrip:
    def test_roundtrip(self, tmp_path):
        mesh = symmetric_mesh()
        path = tmp_path / "shape.obj"
        save_obj(mesh, path)
        loaded = load_obj(path)
        np.testing.assert_allclose(loaded.vertices, mesh.vertices, atol=1e-8)
        np.testing.assert_array_equal(loaded.faces, mesh.faces)

    def test_parses_slash_forms_and_quads(self, tmp_path):
        path = tmp_path / "quad.obj"
        path.write_text(
            "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\n"
            "vn 0 0 1\nvt 0 0\n"
            "f 1/1/1 2/1/1 3/1/1 4/1/1\n"
        )
        mesh = load_obj(path)
        assert len(mesh.faces) == 2  # fan triangulation
        np.testing.assert_array_equal(mesh.faces, [[0, 1, 2], [0, 2, 3]])

    def test_empty_obj_rejected(self, tmp_path):
        path = tmp_path / "empty.obj"
        path.write_text("# nothing\n")
        with pytest.raises(ValueError):
            load_obj(path)


class TestBuildLattice:
    def test_n2_corners_and_pairs(self):
        lattice = build_lattice(symmetric_mesh(), resolution=2)
        assert len(lattice.points) == 8
        assert len(lattice.symmetry_pairs) == 4
        assert all(a != b for a, b in lattice.symmetry_pairs)

    def test_n3_selfpaired_plane(self):
        lattice = build_lattice(symmetric_mesh(), resolution=3)
        assert len(lattice.points) == 27
        self_paired = [p for p in lattice.symmetry_pairs if p[0] == p[1]]
        assert len(self_paired) == 9
        for a, _ in self_paired:
            assert lattice.points[a][0] == pytest.approx(0.0, abs=1e-12)

    def test_pairs_mirror_positions(self):
        lattice = build_lattice(symmetric_mesh(), resolution=4)
        for a, b in lattice.symmetry_pairs:
            np.testing.assert_allclose(
                lattice.points[a], mirror_x(lattice.points[b]), atol=1e-12
            )

    def test_lattice_spans_bounding_box(self):
        mesh = symmetric_mesh()
        lattice = build_lattice(mesh, resolution=3)
        lo, hi = mesh.bounding_box()
        np.testing.assert_allclose(lattice.points.min(axis=0), lo, atol=1e-12)
        np.testing.assert_allclose(lattice.points.max(axis=0), hi, atol=1e-12)

    def test_max_spacing(self):
        lattice = build_lattice(unit_cube(), resolution=3)
        assert lattice.max_spacing == pytest.approx(0.5)

    def test_rejects_empty_mesh(self):
        with pytest.raises(ValueError):
            build_lattice(Mesh(np.zeros((0, 3)), np.zeros((0, 3))), resolution=2)


class TestSampleDeformation:
    def test_zero_stddev(self):
        lattice = build_lattice(symmetric_mesh(), resolution=3)
        field = sample_deformation(lattice, 0.0, np.random.default_rng(1))
        np.testing.assert_array_equal(field.offsets, 0.0)

    def test_mirror_invariant_exact(self):
        lattice = build_lattice(symmetric_mesh(), resolution=4)
        field = sample_deformation(lattice, 0.05, np.random.default_rng(2))
        for a, b in lattice.symmetry_pairs:
            np.testing.assert_array_equal(
                field.offsets[a], mirror_x(field.offsets[b][None])[0]
            )

    def test_deterministic_given_seed(self):
        lattice = build_lattice(symmetric_mesh(), resolution=3)
        f1 = sample_deformation(lattice, 0.03, np.random.default_rng(7))
        f2 = sample_deformation(lattice, 0.03, np.random.default_rng(7))
        np.testing.assert_array_equal(f1.offsets, f2.offsets)

    def test_empirical_stddev(self):
        # the free (non-mirrored, off-plane) x components and all y/z
        # components are i.i.d. N(0, stddev^2)
        lattice = build_lattice(unit_cube(), resolution=2)
        rng = np.random.default_rng(11)
        stddev = 0.5
        draws = []
        for _ in range(12500):
            field = sample_deformation(lattice, stddev, rng)
            lower = [a for a, b in lattice.symmetry_pairs]
            draws.append(field.offsets[lower].ravel())
        samples = np.concatenate(draws)  # 12500 * 12 = 150k draws
        assert abs(samples.std() - stddev) / stddev < 0.02


class TestApplyDeformation:
    def test_zero_field_is_identity(self):
        mesh = symmetric_mesh()
        lattice = build_lattice(mesh, resolution=4)
        field = sample_deformation(lattice, 0.0, np.random.default_rng(0))
        out = apply_deformation(mesh, lattice, field)
        assert np.max(np.abs(out.vertices - mesh.vertices)) < 1e-12
        np.testing.assert_array_equal(out.faces, mesh.faces)

    def test_uniform_field_translates_exactly(self):
        mesh = symmetric_mesh()
        lattice = build_lattice(mesh, resolution=3)
        shift = np.array([0.013, -0.021, 0.007])
        field = sample_deformation(lattice, 0.0, np.random.default_rng(0))
        field.offsets[:] = shift
        out = apply_deformation(mesh, lattice, field)
        assert np.max(np.abs(out.vertices - (mesh.vertices + shift))) < 1e-12

    def test_symmetry_preserved(self):
        mesh = symmetric_mesh()
        assert reflection_error(mesh) < 1e-12  # the fixture itself is symmetric
        lattice = build_lattice(mesh, resolution=4)
        rng = np.random.default_rng(3)
        for _ in range(10):
            field = sample_deformation(lattice, 0.04, rng)
            out = apply_deformation(mesh, lattice, field)
            assert reflection_error(out) < 1e-9

    def test_topology_bit_identical(self):
        mesh = symmetric_mesh()
        lattice = build_lattice(mesh, resolution=3)
        field = sample_deformation(lattice, 0.05, np.random.default_rng(5))
        out = apply_deformation(mesh, lattice, field)
        assert out.faces.tobytes() == mesh.faces.tobytes()

    def test_single_corner_moves_only_nearby_vertices(self):
        mesh = unit_cube()
        lattice = build_lattice(mesh, resolution=4)
        field = sample_deformation(lattice, 0.0, np.random.default_rng(0))
        corner = 0  # grid corner at the bbox minimum
        field.offsets[corner] = np.array([0.05, 0.0, 0.0])
        out = apply_deformation(mesh, lattice, field)
        moved = np.linalg.norm(out.vertices - mesh.vertices, axis=1) > 0
        dist = np.linalg.norm(mesh.vertices - lattice.points[corner], axis=1)
        assert np.all(dist[moved] < lattice.max_spacing)
        assert np.all(~moved[dist >= lattice.max_spacing])

    def test_normals_recomputed(self):
        mesh = symmetric_mesh()
        lattice = build_lattice(mesh, resolution=3)
        field = sample_deformation(lattice, 0.03, np.random.default_rng(9))
        out = apply_deformation(mesh, lattice, field)
        assert out.normals is not None
        np.testing.assert_allclose(
            out.normals, compute_vertex_normals(out), atol=1e-12
        )
