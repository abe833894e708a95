import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from meshvae import shapes
from meshvae.mesh import (
    Adjacency, Mesh, MeshError, boundary_edges, build_adjacency, estimate_lambda_max, load_obj,
    normalized_laplacian, parse_obj, save_obj, validate_same_connectivity, write_obj,
)

from conftest import tetrahedron

TRI = "v 0 0 0\nv 1 0 0\nv 0 1 0\n"


class TestObj:
    def test_single_triangle(self):
        m = parse_obj(TRI + "f 1 2 3\n")
        assert m.n_vertices == 3 and m.n_faces == 1
        assert m.faces.tolist() == [[0, 1, 2]]

    def test_slashes_stripped(self):
        assert parse_obj(TRI + "f 1/1/1 2/2/2 3/3/3\n").faces.tolist() == [[0, 1, 2]]
        assert parse_obj(TRI + "f 1//4 2//5 3//6\n").faces.tolist() == [[0, 1, 2]]

    def test_negative_indices_relative(self):
        assert parse_obj(TRI + "f -3 -2 -1\n").faces.tolist() == [[0, 1, 2]]

    def test_index_out_of_range(self):
        with pytest.raises(MeshError, match="out of range"):
            parse_obj(TRI + "f 1 2 4\n")

    def test_quad_rejected(self):
        with pytest.raises(MeshError, match="triangular"):
            parse_obj(TRI + "v 1 1 0\nf 1 2 4 3\n")

    @pytest.mark.parametrize("text", ["v 0 0 x\n", "v 0 0\n", TRI + "f 1 a 3\n"])
    def test_malformed(self, text):
        with pytest.raises(MeshError):
            parse_obj(text)

    def test_comments_and_other_records_ignored(self):
        m = parse_obj("# hi\nvn 0 0 1\n" + TRI + "vt 0 0\ns off\nf 1 2 3 # tail\n")
        assert m.n_vertices == 3 and m.n_faces == 1

    def test_degenerate_face_rejected(self):
        with pytest.raises(MeshError, match="degenerate"):
            parse_obj(TRI + "f 1 1 3\n")

    def test_write_layout(self):
        text = write_obj(parse_obj(TRI + "f 1 2 3\n"))
        lines = text.splitlines()
        assert [ln.split()[0] for ln in lines] == ["v", "v", "v", "f"]
        assert lines[-1] == "f 1 2 3"

    def test_empty_mesh(self):
        m = Mesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=int))
        assert write_obj(m) == ""
        assert parse_obj("") == m

    def test_roundtrip_sphere(self, sphere642, tmp_path):
        assert parse_obj(write_obj(sphere642)) == sphere642
        save_obj(sphere642, tmp_path / "s.obj")
        assert load_obj(tmp_path / "s.obj") == sphere642

    def test_accepts_stream(self):
        assert parse_obj(io.StringIO(TRI + "f 1 2 3\n")).n_faces == 1

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.tuples(*[st.floats(allow_nan=False, allow_infinity=False, width=64)] * 3),
                    min_size=3, max_size=12))
    def test_roundtrip_arbitrary_floats(self, pts):
        faces = [[0, 1, 2]] + [[0, k - 1, k] for k in range(3, len(pts))]
        m = Mesh(np.array(pts), np.array(faces))
        back = parse_obj(write_obj(m))
        assert back == m


class TestMeshType:
    def test_arrays_read_only(self):
        m = tetrahedron()
        with pytest.raises(ValueError):
            m.positions[0, 0] = 5.0

    def test_with_positions_shape_checked(self):
        with pytest.raises(MeshError):
            tetrahedron().with_positions(np.zeros((3, 3)))

    def test_bbox_diagonal(self):
        assert tetrahedron().bbox_diagonal() == pytest.approx(np.sqrt(3))


class TestConnectivity:
    def test_same_faces_different_positions_ok(self):
        m = tetrahedron()
        assert validate_same_connectivity(m, m.with_positions(m.positions * 3))

    def test_reordered_triple_reported(self):
        m = tetrahedron()
        faces = m.faces.copy()
        faces[2] = faces[2][[0, 2, 1]]
        rep = validate_same_connectivity(m, Mesh(m.positions, faces))
        assert not rep and rep.face_index == 2
        assert "face 2" in rep.message

    def test_vertex_count_differs(self):
        m = tetrahedron()
        other = Mesh(np.vstack([m.positions, [[5, 5, 5]]]), m.faces)
        rep = validate_same_connectivity(m, other)
        assert not rep and "vertex count 4 != 5" in rep.message


class TestAdjacency:
    def test_single_triangle(self):
        adj = build_adjacency(parse_obj(TRI + "f 1 2 3\n"))
        assert len(adj.edges) == 3
        assert adj.degrees.tolist() == [2, 2, 2]

    def test_two_triangles(self):
        adj = build_adjacency(parse_obj(TRI + "v 1 1 0\nf 1 2 3\nf 2 4 3\n"))
        assert len(adj.edges) == 5
        assert adj.degrees.tolist() == [2, 3, 3, 2]

    def test_tetrahedron(self):
        adj = build_adjacency(tetrahedron())
        assert len(adj.edges) == 6 and (adj.degrees == 3).all()

    def test_non_manifold_edge(self):
        pos = np.random.default_rng(0).normal(size=(5, 3))
        with pytest.raises(MeshError, match="non-manifold edge \\[0, 1\\]"):
            build_adjacency(Mesh(pos, [[0, 1, 2], [1, 0, 3], [0, 1, 4]]))

    def test_symmetric_and_sorted(self, sphere642):
        adj = build_adjacency(sphere642)
        for i, ring in enumerate(adj.one_rings):
            assert list(ring) == sorted(ring)
            assert adj.degrees[i] == len(ring)
            for j in ring:
                assert i in adj.one_rings[j]
        assert len({tuple(e) for e in adj.edges.tolist()}) == len(adj.edges)

    def test_face_order_invariant(self, sphere642):
        perm = np.random.default_rng(1).permutation(sphere642.n_faces)
        a = build_adjacency(sphere642)
        b = build_adjacency(Mesh(sphere642.positions, sphere642.faces[perm]))
        assert np.array_equal(a.edges, b.edges) and a.one_rings == b.one_rings

    def test_boundary_edges(self):
        assert len(boundary_edges(parse_obj(TRI + "f 1 2 3\n"))) == 3
        assert len(boundary_edges(tetrahedron())) == 0


def _k3():
    return build_adjacency(parse_obj(TRI + "f 1 2 3\n"))


class TestLaplacian:
    def test_k3(self):
        L = normalized_laplacian(_k3()).toarray()
        assert np.allclose(np.diag(L), 1.0)
        assert np.allclose(L[~np.eye(3, dtype=bool)], -0.5)
        assert np.allclose(np.linalg.eigvalsh(L), [0.0, 1.5, 1.5])

    def test_single_edge(self):
        # a lone edge is not a mesh, so build the adjacency by hand
        adj = Adjacency(np.array([[0, 1]]), ((1,), (0,)), np.array([1, 1]))
        L = normalized_laplacian(adj).toarray()
        assert np.array_equal(L, [[1.0, -1.0], [-1.0, 1.0]])
        assert estimate_lambda_max(normalized_laplacian(adj)) == pytest.approx(2.0)

    def test_null_space(self, sphere642):
        adj = build_adjacency(sphere642)
        L = normalized_laplacian(adj)
        assert np.abs(L @ np.sqrt(adj.degrees.astype(float))).max() < 1e-12

    def test_exact_symmetry_and_rayleigh_bounds(self, sphere642, rng):
        L = normalized_laplacian(build_adjacency(sphere642))
        assert (L != L.T).nnz == 0
        for _ in range(100):
            x = rng.normal(size=L.shape[0])
            q = x @ (L @ x) / (x @ x)
            assert -1e-12 <= q <= 2 + 1e-9

    def test_isolated_vertex(self):
        m = Mesh(np.vstack([np.eye(3), [[9, 9, 9]]]), [[0, 1, 2]])
        with pytest.raises(MeshError, match="isolated vertex 3"):
            normalized_laplacian(build_adjacency(m))

    def test_disconnected_warns(self, caplog):
        pos = np.random.default_rng(2).normal(size=(6, 3))
        m = Mesh(pos, [[0, 1, 2], [3, 4, 5]])
        normalized_laplacian(build_adjacency(m))
        assert "disconnected" in caplog.text

    def test_lambda_max_k3(self):
        assert estimate_lambda_max(normalized_laplacian(_k3())) == pytest.approx(1.5, abs=1e-6)

    def test_lambda_max_zero_matrix(self):
        from scipy import sparse

        assert estimate_lambda_max(sparse.csr_matrix((5, 5))) == 2.0

    def test_lambda_max_converged_or_bound(self, sphere642):
        # slow convergence on the sphere hits the iteration cap and falls back
        L = normalized_laplacian(build_adjacency(sphere642))
        lam = estimate_lambda_max(L)
        dense = np.linalg.eigvalsh(L.toarray()).max()
        assert lam == 2.0 or abs(lam - dense) < 1e-6 * dense
        assert lam >= dense - 1e-6

    def test_lambda_max_small_graph_converges(self):
        L = normalized_laplacian(build_adjacency(shapes.icosahedron()))
        dense = np.linalg.eigvalsh(L.toarray()).max()
        assert estimate_lambda_max(L, max_iter=10000) == pytest.approx(dense, rel=1e-6)

    def test_icosphere_counts(self):
        assert shapes.icosphere(3).n_vertices == 642
        assert shapes.icosphere(0).n_vertices == 12
