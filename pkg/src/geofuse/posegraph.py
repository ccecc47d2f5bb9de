"""Pose-graph fusion of odometry with absolute registrations.

Nodes are keyframe body poses in the geodetic frame. Two factor types:

  * relative edges between consecutive keyframes, measured from the
    odometry (position of j in body-i axes, rotation i->j);
  * absolute position edges from successful map registrations, robustified
    with a Huber loss so a wrong registration cannot drag the trajectory.

Residuals:
  relative:  [ R_i^T (p_j - p_i) - p_hat,
               2 * vec( (q_i^-1 q_j) * q_hat^-1 ) ]   (sign fixed to w >= 0)
  absolute:  p_i - p_hat

Total cost = sum_rel ||r||^2_Sigma + sum_abs rho(||r||^2_Omega), with
rho(a) = a for a <= delta^2 and 2*delta*sqrt(a) - delta^2 beyond.

Optimization is Levenberg-Marquardt on the manifold: position increments
in the world frame, rotation increments right-multiplied in the body frame
(q <- q * exp(dtheta)). The normal equations are assembled sparsely
(chain-plus-unary structure) and solved with a sparse LU factorization.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .frames import Extrinsics, Pose, Quat

__all__ = [
    "GraphNode",
    "RelativeEdge",
    "AbsoluteEdge",
    "PoseGraph",
    "GraphOptions",
    "OptimizeReport",
    "OptimizeError",
    "relative_edge_from_vio",
    "relative_residual",
    "relative_jacobians",
    "absolute_residual",
    "huber_cost",
    "optimize",
    "build_graph_from_run",
    "graph_to_dict",
    "graph_from_dict",
    "save_graph",
    "load_graph",
]

# information defaults for build_graph_from_run
_REL_POS_SIGMA_FLOOR = 0.01   # m
_REL_ROT_SIGMA_FLOOR = 1e-4   # rad
_ABS_SIGMA_FLOOR = 0.2        # m, before division by inlier count


class OptimizeError(RuntimeError):
    """Optimization could not proceed (singular system, bad gauge, ...)."""


def _check_information(info, size: int) -> np.ndarray:
    m = np.asarray(info, dtype=float)
    if m.shape != (size, size):
        raise ValueError(f"information matrix must be {size}x{size}")
    if not np.allclose(m, m.T, atol=1e-9):
        raise ValueError("information matrix must be symmetric")
    try:
        np.linalg.cholesky(m)
    except np.linalg.LinAlgError as e:
        raise ValueError("information matrix must be positive definite") from e
    return m


@dataclass
class GraphNode:
    index: int
    pose: Pose
    fixed: bool = False


@dataclass(frozen=True)
class RelativeEdge:
    """Odometry constraint between nodes i and j (j's pose seen from i)."""

    i: int
    j: int
    rel_position: np.ndarray
    rel_rotation: Quat
    information: np.ndarray  # 6x6, position block first

    def __post_init__(self):
        if self.i == self.j:
            raise ValueError("relative edge must join distinct nodes")
        object.__setattr__(self, "rel_position", np.asarray(self.rel_position, dtype=float).reshape(3))
        object.__setattr__(self, "information", _check_information(self.information, 6))


@dataclass(frozen=True)
class AbsoluteEdge:
    """Registration-derived position measurement of one node."""

    node: int
    position: np.ndarray
    information: np.ndarray  # 3x3
    huber_delta: float = 1.0  # on the whitened residual norm; inf = quadratic

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float).reshape(3))
        object.__setattr__(self, "information", _check_information(self.information, 3))
        if self.huber_delta <= 0:
            raise ValueError("huber_delta must be positive")


@dataclass
class PoseGraph:
    nodes: list[GraphNode] = field(default_factory=list)
    relative_edges: list[RelativeEdge] = field(default_factory=list)
    absolute_edges: list[AbsoluteEdge] = field(default_factory=list)

    def node_by_index(self, index: int) -> GraphNode:
        node = self._lookup().get(index)
        if node is None:
            raise KeyError(f"no node {index}")
        return node

    def _lookup(self) -> dict[int, GraphNode]:
        return {n.index: n for n in self.nodes}

    def validate(self) -> None:
        seen = set()
        for n in self.nodes:
            if n.index in seen:
                raise ValueError(f"duplicate node index {n.index}")
            seen.add(n.index)
        for e in self.relative_edges:
            if e.i not in seen or e.j not in seen:
                raise ValueError(f"relative edge {e.i}->{e.j} references missing node")
        for e in self.absolute_edges:
            if e.node not in seen:
                raise ValueError(f"absolute edge references missing node {e.node}")


@dataclass(frozen=True)
class GraphOptions:
    huber_delta: float = 1.0
    max_iterations: int = 50
    tolerance: float = 1e-10
    initial_lambda: float = 1e-6


@dataclass(frozen=True)
class OptimizeReport:
    iterations: int
    initial_cost: float
    final_cost: float
    converged: bool
    cost_history: tuple = ()  # robust cost after each accepted step, initial first


def relative_edge_from_vio(index_i: int, index_j: int, pose_i: Pose, pose_j: Pose, information) -> RelativeEdge:
    """Build the odometry constraint implied by two (estimated) poses."""
    r_it = pose_i.rotation_matrix().T
    rel_p = r_it @ (pose_j.position - pose_i.position)
    rel_q = (pose_i.orientation.inverse() * pose_j.orientation).normalized()
    return RelativeEdge(index_i, index_j, rel_p, rel_q, information)


def _rotation_error_quat(pose_i: Pose, pose_j: Pose, edge: RelativeEdge) -> Quat:
    q_ij = pose_i.orientation.inverse() * pose_j.orientation
    return (q_ij * edge.rel_rotation.inverse()).canonical()


def relative_residual(pose_i: Pose, pose_j: Pose, edge: RelativeEdge) -> np.ndarray:
    """(6,) residual: position part in body-i axes, then 2*vec of the quat error."""
    r_it = pose_i.rotation_matrix().T
    rp = r_it @ (pose_j.position - pose_i.position) - edge.rel_position
    qe = _rotation_error_quat(pose_i, pose_j, edge)
    return np.concatenate([rp, 2.0 * np.array([qe.x, qe.y, qe.z])])


def absolute_residual(pose_i: Pose, edge: AbsoluteEdge) -> np.ndarray:
    return pose_i.position - edge.position


def huber_cost(a: float, delta: float) -> float:
    """Huber rho applied to a squared whitened norm `a`."""
    if a < 0:
        raise ValueError("squared norm must be nonnegative")
    d2 = delta * delta
    if a <= d2 or math.isinf(delta):
        return float(a)
    return float(2.0 * delta * math.sqrt(a) - d2)


def _skew(v: np.ndarray) -> np.ndarray:
    return np.array([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])


def relative_jacobians(pose_i: Pose, pose_j: Pose, edge: RelativeEdge):
    """d(residual)/d(node i), d(residual)/d(node j), each (6, 6).

    Parameter order per node: [position (world), rotation (body, right)].
    """
    r_it = pose_i.rotation_matrix().T
    v = r_it @ (pose_j.position - pose_i.position)
    qe = _rotation_error_quat(pose_i, pose_j, edge)
    w, vec = qe.w, np.array([qe.x, qe.y, qe.z])
    r_meas = edge.rel_rotation.to_matrix()

    j_i = np.zeros((6, 6))
    j_j = np.zeros((6, 6))
    j_i[:3, :3] = -r_it
    j_i[:3, 3:] = _skew(v)
    j_j[:3, :3] = r_it
    j_i[3:, 3:] = -w * np.eye(3) + _skew(vec)
    j_j[3:, 3:] = (w * np.eye(3) + _skew(vec)) @ r_meas
    return j_i, j_j


def _cost(graph: PoseGraph, poses: dict[int, Pose]) -> float:
    total = 0.0
    for e in graph.relative_edges:
        r = relative_residual(poses[e.i], poses[e.j], e)
        total += float(r @ e.information @ r)
    for e in graph.absolute_edges:
        r = absolute_residual(poses[e.node], e)
        total += huber_cost(float(r @ e.information @ r), e.huber_delta)
    return total


def optimize(graph: PoseGraph, options: GraphOptions = GraphOptions()) -> OptimizeReport:
    """Robust LM over the graph; node poses are updated in place.

    Raises OptimizeError for a gauge-free graph (no absolute edges and no
    fixed node) or a singular linearized system. Accepted steps never
    increase the robust cost, by construction of the accept/reject loop.
    """
    graph.validate()
    if not graph.absolute_edges and not any(n.fixed for n in graph.nodes):
        raise OptimizeError("gauge-free graph: no absolute edges and no fixed node")

    free = [n.index for n in graph.nodes if not n.fixed]
    slot = {idx: k for k, idx in enumerate(free)}
    n_var = 6 * len(free)
    if n_var == 0:
        c = _cost(graph, {n.index: n.pose for n in graph.nodes})
        return OptimizeReport(0, c, c, True, (c,))

    poses = {n.index: n.pose for n in graph.nodes}

    def whiten(information):
        return np.linalg.cholesky(information).T

    def assemble(cur: dict[int, Pose]):
        rows, cols, vals = [], [], []
        resids = []
        row0 = 0

        def put(block, node_idx):
            if node_idx not in slot:
                return
            base = 6 * slot[node_idx]
            r_idx, c_idx = np.nonzero(block)
            rows.extend((row0 + r_idx).tolist())
            cols.extend((base + c_idx).tolist())
            vals.extend(block[r_idx, c_idx].tolist())

        for e in graph.relative_edges:
            lt = whiten(e.information)
            r = lt @ relative_residual(cur[e.i], cur[e.j], e)
            j_i, j_j = relative_jacobians(cur[e.i], cur[e.j], e)
            put(lt @ j_i, e.i)
            put(lt @ j_j, e.j)
            resids.append(r)
            row0 += 6
        for e in graph.absolute_edges:
            lt = whiten(e.information)
            r = lt @ absolute_residual(cur[e.node], e)
            a = float(r @ r)
            scale = 1.0
            if math.isfinite(e.huber_delta) and a > e.huber_delta**2:
                scale = math.sqrt(e.huber_delta / math.sqrt(a))
            block = np.zeros((3, 6))
            block[:, :3] = lt
            put(scale * block, e.node)
            resids.append(scale * r)
            row0 += 3
        jac = sp.coo_matrix((vals, (rows, cols)), shape=(row0, n_var)).tocsr()
        return jac, np.concatenate(resids) if resids else np.zeros(0)

    def retract(cur: dict[int, Pose], delta: np.ndarray) -> dict[int, Pose]:
        out = dict(cur)
        for idx, k in slot.items():
            dp = delta[6 * k : 6 * k + 3]
            dth = delta[6 * k + 3 : 6 * k + 6]
            p = cur[idx]
            out[idx] = Pose(p.position + dp, (p.orientation * Quat.exp(dth)).normalized())
        return out

    cost = _cost(graph, poses)
    initial_cost = cost
    history = [cost]
    lam = options.initial_lambda
    converged = False
    iterations = 0
    for iterations in range(1, options.max_iterations + 1):
        jac, r = assemble(poses)
        g = jac.T @ r
        if float(np.max(np.abs(g), initial=0.0)) < 1e-12:
            converged = True
            break
        h = (jac.T @ jac).tocsc()
        accepted = False
        for _ in range(14):
            damped = h + sp.diags(lam * h.diagonal() + 1e-15)
            try:
                lu = splu(damped.tocsc())
                delta = lu.solve(-g)
            except RuntimeError as e:
                raise OptimizeError(f"singular normal equations: {e}") from e
            if not np.all(np.isfinite(delta)):
                raise OptimizeError("non-finite step from linear solve")
            cand = retract(poses, delta)
            cost_new = _cost(graph, cand)
            if cost_new < cost:
                rel = (cost - cost_new) / max(cost, 1e-300)
                poses, cost = cand, cost_new
                history.append(cost)
                lam = max(lam * 0.3, 1e-12)
                accepted = True
                if rel < options.tolerance or cost < 1e-20:
                    converged = True
                break
            lam *= 10.0
        if not accepted:
            converged = converged or float(np.max(np.abs(g), initial=0.0)) <= 1e-8 * (1.0 + cost)
            break
        if converged:
            break

    for n in graph.nodes:
        n.pose = poses[n.index]
    return OptimizeReport(iterations, initial_cost, cost, converged, tuple(history))


def build_graph_from_run(
    vio_outputs,
    registrations: dict,
    ext: Extrinsics,
    drift_rate: float,
    yaw_drift_rate: float,
    grid_scale_m: float,
    options: GraphOptions = GraphOptions(),
    info_scale: float = 1.0,
) -> PoseGraph:
    """Assemble the fusion graph for one flight.

    Node poses start from the odometry transformed by the first successful
    registration's pose (full rigid alignment W->G); with no registrations
    the odometry is used as-is and the resulting graph is gauge-free, which
    `optimize` rejects. Consecutive keyframes get relative edges whose
    information follows the drift model (sigma = rate * step, floored);
    each registration contributes an absolute position edge with variance
    max(grid_scale, floor)^2 / inlier_count, Huber-robustified. info_scale
    multiplies every information matrix (a global confidence knob).

    `registrations` maps keyframe index -> RegistrationResult (successes
    only; the result must expose body_position, camera_pose, inlier_count).
    """
    if info_scale <= 0:
        raise ValueError("info_scale must be positive")
    if not vio_outputs:
        raise ValueError("no keyframes")
    t_align = Pose.identity()
    if registrations:
        first_k = min(registrations)
        res = registrations[first_k]
        body_q = (res.camera_pose.orientation * ext.rotation.inverse()).normalized()
        pose_g_b = Pose(res.body_position, body_q)
        vio_first = next(v for v in vio_outputs if v.index == first_k)
        t_align = pose_g_b.compose(vio_first.pose.inverse())

    graph = PoseGraph()
    for v in vio_outputs:
        graph.nodes.append(GraphNode(v.index, t_align.compose(v.pose)))

    for prev, cur in zip(vio_outputs, vio_outputs[1:]):
        step = float(np.linalg.norm(cur.pose.position - prev.pose.position))
        sig_p = max(drift_rate * step, _REL_POS_SIGMA_FLOOR)
        sig_r = max(yaw_drift_rate * step, _REL_ROT_SIGMA_FLOOR)
        info = info_scale * np.diag([1.0 / sig_p**2] * 3 + [1.0 / sig_r**2] * 3)
        graph.relative_edges.append(
            relative_edge_from_vio(prev.index, cur.index, prev.pose, cur.pose, info)
        )

    for k in sorted(registrations):
        res = registrations[k]
        var = max(grid_scale_m, _ABS_SIGMA_FLOOR) ** 2 / max(res.inlier_count, 1)
        info = info_scale * np.diag([1.0 / var] * 3)
        graph.absolute_edges.append(AbsoluteEdge(k, res.body_position, info, options.huber_delta))

    graph.validate()
    return graph


def graph_to_dict(graph: PoseGraph) -> dict:
    """JSON-ready snapshot: nodes, edges, information matrices."""
    return {
        "nodes": [
            {
                "index": n.index,
                "position": n.pose.position.tolist(),
                "quaternion": n.pose.orientation.as_array().tolist(),
                "fixed": n.fixed,
            }
            for n in graph.nodes
        ],
        "relative_edges": [
            {
                "i": e.i,
                "j": e.j,
                "position": e.rel_position.tolist(),
                "quaternion": e.rel_rotation.as_array().tolist(),
                "information": e.information.tolist(),
            }
            for e in graph.relative_edges
        ],
        "absolute_edges": [
            {
                "node": e.node,
                "position": e.position.tolist(),
                "information": e.information.tolist(),
                "huber_delta": e.huber_delta if math.isfinite(e.huber_delta) else "inf",
            }
            for e in graph.absolute_edges
        ],
    }


def graph_from_dict(data: dict) -> PoseGraph:
    nodes = [
        GraphNode(d["index"], Pose(np.array(d["position"]), Quat.from_array(d["quaternion"])), d.get("fixed", False))
        for d in data["nodes"]
    ]
    rel = [
        RelativeEdge(d["i"], d["j"], np.array(d["position"]), Quat.from_array(d["quaternion"]), np.array(d["information"]))
        for d in data["relative_edges"]
    ]
    ab = [
        AbsoluteEdge(
            d["node"],
            np.array(d["position"]),
            np.array(d["information"]),
            math.inf if d["huber_delta"] == "inf" else float(d["huber_delta"]),
        )
        for d in data["absolute_edges"]
    ]
    g = PoseGraph(nodes, rel, ab)
    g.validate()
    return g


def save_graph(graph: PoseGraph, path) -> None:
    with open(path, "w") as fh:
        json.dump(graph_to_dict(graph), fh, indent=2, sort_keys=True)


def load_graph(path) -> PoseGraph:
    with open(path) as fh:
        return graph_from_dict(json.load(fh))
