"""Graph construction, residuals, robust cost, and the LM optimizer."""

import math

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.spatial.transform import Rotation

from geofuse import (
    AbsoluteEdge,
    GraphNode,
    GraphOptions,
    OptimizeError,
    Pose,
    PoseGraph,
    Quat,
    RegistrationResult,
    RelativeEdge,
    build_graph_from_run,
    camera_pose_from_body,
    load_graph,
    nadir_extrinsics,
    optimize,
    relative_edge_from_vio,
    save_graph,
)
from geofuse.posegraph import (
    absolute_residual,
    huber_cost,
    relative_jacobians,
    relative_residual,
)
from geofuse.simulation import VioOutput

EXT = nadir_extrinsics()


def random_pose(rng, scale: float = 10.0) -> Pose:
    return Pose(rng.normal(scale=scale, size=3), Quat.from_array(rng.normal(size=4)).normalized())


def info6(sig_p: float = 1.0, sig_r: float = 1.0) -> np.ndarray:
    return np.diag([1.0 / sig_p**2] * 3 + [1.0 / sig_r**2] * 3)


def fake_vio(index: int, pose: Pose) -> VioOutput:
    return VioOutput(
        index=index, time=float(index), pose=pose,
        ids=np.zeros(0, dtype=int), pixels=np.zeros((0, 2)), inv_depths=np.zeros(0),
        reproj_errors=np.zeros(0), descriptors=np.zeros((0, 64)),
        altitude=float(pose.position[2]), compass_heading=0.0,
    )


def fake_registration(k: int, body_pose: Pose, inliers: int = 20) -> RegistrationResult:
    return RegistrationResult(
        keyframe=k,
        translation=np.array([0.0, 0.0, 0.0]),
        inlier_pairs=np.zeros((inliers, 2), dtype=np.int64),
        inlier_count=inliers,
        camera_pose=camera_pose_from_body(body_pose, EXT),
        body_position=body_pose.position.copy(),
        reproj_rmse=0.1,
    )


# ---------------------------------------------------------------- measurements


def test_relative_edge_null_motion():
    rng = np.random.default_rng(0)
    p = random_pose(rng)
    e = relative_edge_from_vio(0, 1, p, p, info6())
    assert_allclose(e.rel_position, np.zeros(3), atol=1e-12)
    assert_allclose(e.rel_rotation.canonical().as_array(), [1, 0, 0, 0], atol=1e-12)


def test_relative_edge_world_equals_body():
    e = relative_edge_from_vio(0, 1, Pose.identity(), Pose(np.array([1.0, 2.0, 3.0]), Quat.identity()), info6())
    assert_allclose(e.rel_position, [1.0, 2.0, 3.0], atol=1e-12)


def test_relative_edge_left_invariant():
    rng = np.random.default_rng(1)
    for _ in range(20):
        a, b, t = random_pose(rng), random_pose(rng), random_pose(rng)
        e1 = relative_edge_from_vio(0, 1, a, b, info6())
        e2 = relative_edge_from_vio(0, 1, t.compose(a), t.compose(b), info6())
        assert_allclose(e1.rel_position, e2.rel_position, atol=1e-9)
        assert_allclose(
            e1.rel_rotation.canonical().as_array(), e2.rel_rotation.canonical().as_array(), atol=1e-9
        )


def test_relative_edge_validation():
    with pytest.raises(ValueError):
        RelativeEdge(2, 2, np.zeros(3), Quat.identity(), info6())
    bad = np.eye(6)
    bad[0, 1] = 0.5  # asymmetric
    with pytest.raises(ValueError):
        RelativeEdge(0, 1, np.zeros(3), Quat.identity(), bad)
    with pytest.raises(ValueError):
        RelativeEdge(0, 1, np.zeros(3), Quat.identity(), -np.eye(6))


def test_relative_residual_zero_when_consistent():
    rng = np.random.default_rng(2)
    for _ in range(10):
        a, b = random_pose(rng), random_pose(rng)
        e = relative_edge_from_vio(0, 1, a, b, info6())
        assert np.max(np.abs(relative_residual(a, b, e))) < 1e-12


def test_relative_residual_body_frame_displacement():
    rng = np.random.default_rng(3)
    a, b = random_pose(rng), random_pose(rng)
    e = relative_edge_from_vio(0, 1, a, b, info6())
    shifted = Pose(b.position + a.orientation.rotate([0.5, 0.0, 0.0]), b.orientation)
    assert_allclose(relative_residual(a, shifted, e), [0.5, 0, 0, 0, 0, 0], atol=1e-9)


def test_relative_residual_matches_independent_reimplementation():
    def oracle(pose_i, pose_j, edge):
        # same formula, rebuilt on scipy Rotation (quaternions stored x,y,z,w)
        ri = Rotation.from_quat([*pose_i.orientation.as_array()[1:], pose_i.orientation.w])
        rj = Rotation.from_quat([*pose_j.orientation.as_array()[1:], pose_j.orientation.w])
        rm = Rotation.from_quat([*edge.rel_rotation.as_array()[1:], edge.rel_rotation.w])
        top = ri.as_matrix().T @ (pose_j.position - pose_i.position) - edge.rel_position
        err = ri.inv() * rj * rm.inv()
        q = err.as_quat()  # x, y, z, w
        if q[3] < 0:
            q = -q
        return np.concatenate([top, 2.0 * q[:3]])

    rng = np.random.default_rng(4)
    for _ in range(30):
        a, b, c = random_pose(rng), random_pose(rng), random_pose(rng)
        e = relative_edge_from_vio(0, 1, a, b, info6())
        assert_allclose(relative_residual(a, c, e), oracle(a, c, e), atol=1e-9)


def test_absolute_residual():
    edge = AbsoluteEdge(0, np.zeros(3), np.eye(3))
    assert_allclose(absolute_residual(Pose(np.zeros(3), Quat.identity()), edge), np.zeros(3))
    assert_allclose(absolute_residual(Pose(np.array([5.0, 0.0, 0.0]), Quat.identity()), edge), [5, 0, 0])
    rng = np.random.default_rng(5)
    p1, p2 = rng.normal(size=3), rng.normal(size=3)
    r1 = absolute_residual(Pose(p1, Quat.identity()), edge)
    r2 = absolute_residual(Pose(p2, Quat.identity()), edge)
    r12 = absolute_residual(Pose(p1 + p2, Quat.identity()), edge)
    assert_allclose(r12, r1 + r2 - absolute_residual(Pose(np.zeros(3), Quat.identity()), edge), atol=1e-12)


def test_huber_cost_branches():
    assert huber_cost(0.25, 1.0) == 0.25
    assert huber_cost(4.0, 1.0) == 3.0
    # seam: both branches agree at a = delta^2
    delta = 1.7
    a = delta * delta
    assert abs(huber_cost(a, delta) - a) < 1e-12
    assert huber_cost(123.4, math.inf) == 123.4
    with pytest.raises(ValueError):
        huber_cost(-0.1, 1.0)


# ------------------------------------------------------------------- jacobians


def box_plus(pose: Pose, delta: np.ndarray) -> Pose:
    return Pose(pose.position + delta[:3], (pose.orientation * Quat.exp(delta[3:])).normalized())


def test_relative_jacobians_match_central_differences():
    rng = np.random.default_rng(6)
    h = 1e-7
    for _ in range(30):
        a, b, c = random_pose(rng), random_pose(rng), random_pose(rng)
        e = relative_edge_from_vio(0, 1, a, b, info6())
        j_i, j_j = relative_jacobians(a, c, e)
        num_i = np.zeros((6, 6))
        num_j = np.zeros((6, 6))
        for k in range(6):
            step = np.zeros(6)
            step[k] = h
            num_i[:, k] = (
                relative_residual(box_plus(a, step), c, e) - relative_residual(box_plus(a, -step), c, e)
            ) / (2 * h)
            num_j[:, k] = (
                relative_residual(a, box_plus(c, step), e) - relative_residual(a, box_plus(c, -step), e)
            ) / (2 * h)
        scale = max(1.0, np.abs(j_i).max(), np.abs(j_j).max())
        assert np.max(np.abs(j_i - num_i)) / scale < 1e-5
        assert np.max(np.abs(j_j - num_j)) / scale < 1e-5


# ------------------------------------------------------------------- optimizer


def test_optimize_single_node_to_absolute_fix():
    g = PoseGraph(
        nodes=[GraphNode(0, Pose.identity())],
        absolute_edges=[AbsoluteEdge(0, np.array([5.0, 0.0, 0.0]), np.eye(3))],
    )
    report = optimize(g)
    assert report.converged
    assert_allclose(g.nodes[0].pose.position, [5.0, 0.0, 0.0], atol=1e-9)


def test_optimize_two_node_chain_matches_normal_equations():
    # relative edge 1 m, absolute fixes at 0 and 2 m, all unit information:
    # the quadratic optimum solves [[2,-1],[-1,2]] x = [-1, 3]
    oracle = np.linalg.solve(np.array([[2.0, -1.0], [-1.0, 2.0]]), np.array([-1.0, 3.0]))
    assert_allclose(oracle, [1.0 / 3.0, 5.0 / 3.0])

    g = PoseGraph(
        nodes=[GraphNode(0, Pose.identity()), GraphNode(1, Pose(np.array([1.0, 0, 0]), Quat.identity()))],
        relative_edges=[RelativeEdge(0, 1, np.array([1.0, 0.0, 0.0]), Quat.identity(), np.eye(6))],
        absolute_edges=[
            AbsoluteEdge(0, np.zeros(3), np.eye(3), huber_delta=1e9),
            AbsoluteEdge(1, np.array([2.0, 0.0, 0.0]), np.eye(3), huber_delta=1e9),
        ],
    )
    report = optimize(g)
    assert report.converged
    assert_allclose(g.nodes[0].pose.position, [oracle[0], 0.0, 0.0], atol=1e-9)
    assert_allclose(g.nodes[1].pose.position, [oracle[1], 0.0, 0.0], atol=1e-9)


def chain_graph(rng, n: int = 50, perturb: float = 0.0, anchors=(0,)) -> tuple[PoseGraph, list[Pose]]:
    """Smooth chain with self-consistent edges and exact absolute anchors."""
    truth = []
    pose = Pose(np.array([0.0, 0.0, 100.0]), Quat.identity())
    for k in range(n):
        truth.append(pose)
        step = Pose(np.array([8.0, 0.2 * math.sin(k / 5.0), 0.0]), Quat.from_yaw(0.02))
        pose = pose.compose(step)

    nodes = []
    for k, p in enumerate(truth):
        if perturb > 0.0:
            start = Pose(
                p.position + rng.normal(scale=perturb, size=3),
                (p.orientation * Quat.exp(rng.normal(scale=perturb / 10.0, size=3))).normalized(),
            )
        else:
            start = p
        nodes.append(GraphNode(k, start))
    rel = [
        relative_edge_from_vio(k, k + 1, truth[k], truth[k + 1], info6(0.05, 0.001))
        for k in range(n - 1)
    ]
    ab = [AbsoluteEdge(k, truth[k].position.copy(), np.eye(3) * 25.0, huber_delta=1e9) for k in anchors]
    return PoseGraph(nodes, rel, ab), truth


def test_optimize_consistent_chain_reaches_zero_cost():
    rng = np.random.default_rng(7)
    g, truth = chain_graph(rng, n=50, perturb=0.5, anchors=(0, 25, 49))
    report = optimize(g, GraphOptions(max_iterations=100, tolerance=1e-14))
    assert report.final_cost < 1e-12
    for node, p in zip(g.nodes, truth):
        assert np.linalg.norm(node.pose.position - p.position) < 1e-6
        assert abs(node.pose.orientation.norm() - 1.0) < 1e-9


def test_optimize_rejects_gauge_free_graph():
    rng = np.random.default_rng(8)
    g, _ = chain_graph(rng, n=5, anchors=())
    with pytest.raises(OptimizeError, match="gauge"):
        optimize(g)


def test_optimize_fixed_node_anchors_gauge():
    rng = np.random.default_rng(9)
    g, truth = chain_graph(rng, n=10, perturb=0.3, anchors=())
    g.nodes[0].fixed = True
    g.nodes[0].pose = truth[0]
    report = optimize(g, GraphOptions(max_iterations=100))
    assert report.converged
    assert np.array_equal(g.nodes[0].pose.position, truth[0].position)
    for node, p in zip(g.nodes, truth):
        assert np.linalg.norm(node.pose.position - p.position) < 1e-6


def test_optimize_cost_history_non_increasing():
    rng = np.random.default_rng(10)
    g, _ = chain_graph(rng, n=30, perturb=1.0, anchors=(0, 29))
    report = optimize(g)
    h = np.array(report.cost_history)
    assert h[0] == report.initial_cost
    assert h[-1] == report.final_cost
    assert len(h) >= 2
    assert np.all(np.diff(h) < 0)  # every recorded step was an accepted decrease


def test_optimize_huber_inactive_matches_quadratic():
    rng = np.random.default_rng(11)
    g_h, _ = chain_graph(rng, n=20, perturb=0.05, anchors=(0, 10, 19))
    rng = np.random.default_rng(11)
    g_q, _ = chain_graph(rng, n=20, perturb=0.05, anchors=(0, 10, 19))
    # residuals stay far below these deltas, so the loss is identical
    g_h = PoseGraph(
        g_h.nodes,
        g_h.relative_edges,
        [AbsoluteEdge(e.node, e.position, e.information, huber_delta=1e6) for e in g_h.absolute_edges],
    )
    g_q = PoseGraph(
        g_q.nodes,
        g_q.relative_edges,
        [AbsoluteEdge(e.node, e.position, e.information, huber_delta=math.inf) for e in g_q.absolute_edges],
    )
    rh = optimize(g_h)
    rq = optimize(g_q)
    assert abs(rh.initial_cost - rq.initial_cost) < 1e-9
    for nh, nq in zip(g_h.nodes, g_q.nodes):
        assert np.linalg.norm(nh.pose.position - nq.pose.position) < 1e-8


def test_optimize_argmin_invariant_to_information_scaling():
    rng = np.random.default_rng(12)
    g1, _ = chain_graph(rng, n=15, perturb=0.4, anchors=(0, 7, 14))
    rng = np.random.default_rng(12)
    g2, _ = chain_graph(rng, n=15, perturb=0.4, anchors=(0, 7, 14))
    scale = 1000.0
    g2 = PoseGraph(
        g2.nodes,
        [RelativeEdge(e.i, e.j, e.rel_position, e.rel_rotation, scale * e.information) for e in g2.relative_edges],
        [AbsoluteEdge(e.node, e.position, scale * e.information, e.huber_delta) for e in g2.absolute_edges],
    )
    optimize(g1, GraphOptions(max_iterations=100, tolerance=1e-14))
    optimize(g2, GraphOptions(max_iterations=100, tolerance=1e-14))
    for n1, n2 in zip(g1.nodes, g2.nodes):
        assert np.linalg.norm(n1.pose.position - n2.pose.position) < 1e-6


def outlier_graph(rng, huber_delta: float):
    g, truth = chain_graph(rng, n=11, perturb=0.2, anchors=tuple(range(11)))
    edges = list(g.absolute_edges)
    bad = edges[5]
    edges[5] = AbsoluteEdge(5, bad.position + np.array([100.0, 0.0, 0.0]), bad.information, huber_delta)
    fixed_delta = [AbsoluteEdge(e.node, e.position, e.information, huber_delta) for e in edges[:5]]
    fixed_delta += [edges[5]]
    fixed_delta += [AbsoluteEdge(e.node, e.position, e.information, huber_delta) for e in edges[6:]]
    return PoseGraph(g.nodes, g.relative_edges, fixed_delta), truth


def test_optimize_huber_suppresses_gross_outlier():
    rng = np.random.default_rng(13)
    g_huber, truth = outlier_graph(rng, huber_delta=1.0)
    rng = np.random.default_rng(13)
    g_quad, _ = outlier_graph(rng, huber_delta=math.inf)
    optimize(g_huber, GraphOptions(max_iterations=100))
    optimize(g_quad, GraphOptions(max_iterations=100))

    def rms(graph):
        errs = [np.linalg.norm(n.pose.position - t.position) for n, t in zip(graph.nodes, truth)]
        return float(np.sqrt(np.mean(np.square(errs))))

    assert rms(g_huber) < rms(g_quad)
    assert rms(g_huber) < 1.0  # the 100 m outlier barely moves the robust solution


def test_quaternions_stay_unit_through_optimization():
    rng = np.random.default_rng(14)
    g, _ = chain_graph(rng, n=25, perturb=2.0, anchors=(0, 12, 24))
    optimize(g)
    for n in g.nodes:
        assert abs(n.pose.orientation.norm() - 1.0) < 1e-9


# ---------------------------------------------------------- graph construction


def drifting_chain(n: int = 12):
    rng = np.random.default_rng(15)
    vio = []
    pose = Pose(np.zeros(3) + [0, 0, 100.0], Quat.identity())
    for k in range(n):
        vio.append(fake_vio(k, pose))
        pose = pose.compose(Pose(np.array([5.0, 0.0, 0.0]), Quat.from_yaw(0.01)))
    return vio


def test_build_graph_structure_counts():
    vio = drifting_chain(12)
    regs = {
        3: fake_registration(3, Pose(np.array([103.0, 6.0, 100.0]), Quat.from_yaw(0.2))),
        7: fake_registration(7, Pose(np.array([123.0, 7.0, 100.0]), Quat.from_yaw(0.25))),
        9: fake_registration(9, Pose(np.array([133.0, 8.0, 100.0]), Quat.from_yaw(0.28))),
    }
    g = build_graph_from_run(vio, regs, EXT, drift_rate=0.03, yaw_drift_rate=2e-5, grid_scale_m=3.0)
    assert len(g.nodes) == 12
    assert len(g.relative_edges) == 11
    assert len(g.absolute_edges) == 3
    assert sorted(e.node for e in g.absolute_edges) == [3, 7, 9]
    # nodes before the first success carry only chain constraints
    assert all(e.node >= 3 for e in g.absolute_edges)


def test_build_graph_aligns_to_first_registration():
    vio = drifting_chain(10)
    body = Pose(np.array([250.0, -40.0, 101.0]), Quat.from_yaw(0.4))
    regs = {2: fake_registration(2, body)}
    g = build_graph_from_run(vio, regs, EXT, 0.03, 2e-5, 3.0)
    # the anchoring keyframe's node starts exactly at the registered pose
    assert np.linalg.norm(g.node_by_index(2).pose.position - body.position) < 1e-9
    # relative edges reproduce the odometry increments regardless of gauge
    e = g.relative_edges[0]
    expect = relative_edge_from_vio(0, 1, vio[0].pose, vio[1].pose, e.information)
    assert_allclose(e.rel_position, expect.rel_position, atol=1e-12)


def test_build_graph_no_registrations_is_gauge_free():
    vio = drifting_chain(6)
    g = build_graph_from_run(vio, {}, EXT, 0.03, 2e-5, 3.0)
    assert len(g.absolute_edges) == 0
    with pytest.raises(OptimizeError):
        optimize(g)


def test_build_graph_validation():
    vio = drifting_chain(4)
    with pytest.raises(ValueError):
        build_graph_from_run(vio, {}, EXT, 0.03, 2e-5, 3.0, info_scale=0.0)
    with pytest.raises(ValueError):
        build_graph_from_run([], {}, EXT, 0.03, 2e-5, 3.0)


def test_graph_validate_rejects_bad_references():
    g = PoseGraph(nodes=[GraphNode(0, Pose.identity())])
    g.relative_edges.append(RelativeEdge(0, 5, np.zeros(3), Quat.identity(), np.eye(6)))
    with pytest.raises(ValueError, match="missing node"):
        g.validate()
    g2 = PoseGraph(nodes=[GraphNode(0, Pose.identity()), GraphNode(0, Pose.identity())])
    with pytest.raises(ValueError, match="duplicate"):
        g2.validate()


# ---------------------------------------------------------------- persistence


def test_graph_json_round_trip(tmp_path):
    vio = drifting_chain(8)
    regs = {
        1: fake_registration(1, Pose(np.array([10.0, 1.0, 100.0]), Quat.from_yaw(0.1))),
        5: fake_registration(5, Pose(np.array([30.0, 2.0, 100.0]), Quat.from_yaw(0.15))),
    }
    g = build_graph_from_run(vio, regs, EXT, 0.03, 2e-5, 3.0)
    g.absolute_edges.append(AbsoluteEdge(7, np.array([40.0, 3.0, 100.0]), np.eye(3), math.inf))
    path = tmp_path / "graph.json"
    save_graph(g, path)
    back = load_graph(path)

    assert len(back.nodes) == len(g.nodes)
    for a, b in zip(g.nodes, back.nodes):
        assert a.index == b.index and a.fixed == b.fixed
        assert_allclose(a.pose.position, b.pose.position, atol=0)
        assert_allclose(a.pose.orientation.as_array(), b.pose.orientation.as_array(), atol=0)
    for a, b in zip(g.relative_edges, back.relative_edges):
        assert (a.i, a.j) == (b.i, b.j)
        assert_allclose(a.information, b.information, atol=0)
        assert_allclose(a.rel_position, b.rel_position, atol=0)
    for a, b in zip(g.absolute_edges, back.absolute_edges):
        assert a.node == b.node and a.huber_delta == b.huber_delta
        assert_allclose(a.position, b.position, atol=0)
