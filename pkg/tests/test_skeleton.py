import numpy as np
import pytest

from ampose.skeleton import (
    SkeletonError,
    chain,
    hop_distances,
    load_skeleton,
    make_skeleton,
    normalize_adjacency,
    partition_adjacency,
    star,
)


def relaxation_hops(skel):
    """All-pairs shortest paths by repeated relaxation, read off at the root."""
    n = skel.num_joints
    dist = np.full((n, n), np.inf)
    np.fill_diagonal(dist, 0)
    for i, j in skel.edges:
        dist[i, j] = dist[j, i] = 1
    for k in range(n):
        dist = np.minimum(dist, dist[:, [k]] + dist[[k], :])
    return dist[skel.root]


class TestLoad:
    def test_chain(self):
        s = load_skeleton({"num_joints": 3, "root": 0, "edges": [[0, 1], [1, 2]]})
        assert s.num_joints == 3 and s.is_tree

    def test_self_loop_rejected(self):
        with pytest.raises(SkeletonError, match="self loop"):
            load_skeleton({"num_joints": 2, "root": 0, "edges": [[0, 0], [0, 1]]})

    @pytest.mark.parametrize(
        "cfg, msg",
        [
            ({"num_joints": 3, "root": 0, "edges": [[0, 1]]}, "disconnected"),
            ({"num_joints": 3, "root": 0, "edges": [[0, 1], [1, 5]]}, "out of range"),
            ({"num_joints": 3, "root": 0, "edges": [[0, 1], [1, 0], [1, 2]]}, "duplicate"),
            ({"num_joints": 3, "root": 7, "edges": [[0, 1], [1, 2]]}, "root index 7"),
            ({"num_joints": 3, "edges": [[0, 1], [1, 2]], "names": ["a"]}, "names"),
            ({"root": 0, "edges": []}, "num_joints"),
        ],
    )
    def test_validation_errors(self, cfg, msg):
        with pytest.raises(SkeletonError, match=msg):
            load_skeleton(cfg)

    @pytest.mark.parametrize("name, joints", [("h36m17", 17), ("h36m16", 16)])
    def test_bundled(self, name, joints):
        s = load_skeleton(name)
        assert s.num_joints == joints
        assert len(s.edges) == joints - 1
        assert np.all(np.isfinite(relaxation_hops(s)))  # connected
        assert len(s.joint_names) == joints

    def test_from_yaml_file(self, tmp_path):
        path = tmp_path / "s.yaml"
        path.write_text("num_joints: 3\nroot: 1\nedges:\n  - [0, 1]\n  - [1, 2]\n")
        s = load_skeleton(path)
        assert s.root == 1
        assert hop_distances(s).tolist() == [1, 0, 1]

    def test_missing_file(self, tmp_path):
        with pytest.raises(SkeletonError, match="not found"):
            load_skeleton(tmp_path / "nope.yaml")


class TestHops:
    def test_chain(self):
        assert hop_distances(chain(3)).tolist() == [0, 1, 2]

    def test_star(self):
        assert hop_distances(star(4)).tolist() == [0, 1, 1, 1, 1]

    def test_h36m17(self):
        s = load_skeleton("h36m17")
        hop = hop_distances(s)
        np.testing.assert_array_equal(hop, relaxation_hops(s))
        assert hop.tolist() == [0, 1, 2, 3, 1, 2, 3, 1, 2, 3, 4, 3, 4, 5, 3, 4, 5]
        names = s.joint_names
        by_name = dict(zip(names, hop.tolist()))
        assert by_name["hip"] == 0
        assert by_name["l_knee"] == by_name["r_knee"] == 2
        assert by_name["l_ankle"] == by_name["r_ankle"] == 3
        assert by_name["l_wrist"] == by_name["r_wrist"] == 5

    def test_tree_edges_differ_by_one(self, any_skeleton):
        hop = hop_distances(any_skeleton)
        for i, j in any_skeleton.edges:
            assert abs(hop[i] - hop[j]) == 1


class TestPartition:
    def test_chain_entries(self):
        p = partition_adjacency(chain(3))
        a1, a2, a3 = p.groups
        assert a1.tolist() == np.eye(3, dtype=int).tolist()
        assert sorted(zip(*np.nonzero(a2))) == [(1, 0), (2, 1)]
        assert sorted(zip(*np.nonzero(a3))) == [(0, 1), (1, 2)]
        np.testing.assert_array_equal(a1 + a2 + a3, p.adjacency)

    def test_single_joint(self):
        p = partition_adjacency(make_skeleton(1, []))
        assert p.groups[0].tolist() == [[1]]
        assert not p.groups[1].any() and not p.groups[2].any()
        assert p.normalized[0].tolist() == [[1.0]]

    def test_star(self):
        p = partition_adjacency(star(4))
        _, a2, a3 = p.groups
        assert sorted(zip(*np.nonzero(a2))) == [(k, 0) for k in range(1, 5)]
        assert sorted(zip(*np.nonzero(a3))) == [(0, k) for k in range(1, 5)]

    def test_invariants(self, any_skeleton):
        p = partition_adjacency(any_skeleton)
        a1, a2, a3 = p.groups
        np.testing.assert_array_equal(a1 + a2 + a3, p.adjacency)
        np.testing.assert_array_equal(a1, np.eye(any_skeleton.num_joints, dtype=int))
        assert not np.diag(a2).any() and not np.diag(a3).any()
        np.testing.assert_array_equal(p.adjacency, p.adjacency.T)
        if any_skeleton.is_tree:
            np.testing.assert_array_equal(a2, a3.T)
        np.testing.assert_array_equal(p.normalized[0], np.eye(any_skeleton.num_joints))
        for g, n in zip(p.groups, p.normalized):
            assert np.all(np.isfinite(n))
            np.testing.assert_array_equal(n[g.sum(axis=1) == 0], 0.0)

    def test_cycle_tie_goes_to_further_group(self):
        # triangle: joints 1 and 2 share hop 1
        p = partition_adjacency(make_skeleton(3, [(0, 1), (0, 2), (1, 2)]))
        _, a2, a3 = p.groups
        assert a3[1, 2] == 1 and a3[2, 1] == 1
        assert a2[1, 2] == 0 and a2[2, 1] == 0
        np.testing.assert_array_equal(sum(p.groups), p.adjacency)


class TestNormalize:
    def test_all_ones(self):
        np.testing.assert_allclose(normalize_adjacency(np.ones((2, 2))), np.full((2, 2), 0.5))

    def test_zero(self):
        np.testing.assert_array_equal(normalize_adjacency(np.zeros((3, 3))), np.zeros((3, 3)))

    def test_scalar_identity(self):
        assert normalize_adjacency(np.array([[1]])).tolist() == [[1.0]]

    def test_symmetric_input_gives_symmetric_output(self, any_skeleton):
        a = partition_adjacency(any_skeleton).adjacency
        n = normalize_adjacency(a)
        np.testing.assert_allclose(n, n.T, atol=1e-15)
