"""Surround-rig extrinsics: pose graph, spanning-tree initialisation, bundle adjustment.

The pose graph is bipartite: camera nodes and board nodes (one per capture
instant), with an edge wherever a camera saw the board.  Poses of the rig
are expressed in the reference camera's frame; the reference camera is
pinned to identity.
"""
from __future__ import annotations

import logging
import math
from collections import defaultdict, deque
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from . import lm
from .camera import (
    CameraIntrinsics,
    CheckerboardSpec,
    ViewObservation,
    board_points,
    estimate_board_pose,
    project,
    project_jacobians,
)
from .errors import BehindCamera, CalibrationError, DisconnectedGraph, InsufficientViews, NoConvergence, NumericalFailure
from .geometry import Pose, compose, inverse, retract, retract_batch, skew

log = logging.getLogger(__name__)

HUBER_SCALE_PX = 1.0


@dataclass(frozen=True)
class PoseEdge:
    camera_id: str
    capture_index: int
    view: ViewObservation
    weight: float
    board_to_camera: Pose


@dataclass
class PoseGraph:
    camera_nodes: List[str]
    board_nodes: List[int]
    edges: List[PoseEdge]
    warnings: List[str] = field(default_factory=list)

    def components(self) -> List[Tuple[List[str], List[int]]]:
        """Connected components as (cameras, boards), sorted for determinism."""
        parent = {}

        def find(a):
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        for c in self.camera_nodes:
            parent[("c", c)] = ("c", c)
        for b in self.board_nodes:
            parent[("b", b)] = ("b", b)
        for e in self.edges:
            ra, rb = find(("c", e.camera_id)), find(("b", e.capture_index))
            if ra != rb:
                parent[max(ra, rb)] = min(ra, rb)
        groups = defaultdict(lambda: ([], []))
        for node in parent:
            cams, boards = groups[find(node)]
            (cams if node[0] == "c" else boards).append(node[1])
        comps = [(sorted(c), sorted(b)) for c, b in groups.values()]
        return sorted(comps, key=lambda cb: (-len(cb[0]), cb[0], cb[1]))

    def is_connected(self) -> bool:
        return len(self.components()) <= 1

    def require_connected(self):
        comps = self.components()
        if len(comps) > 1:
            cams = [c for c, _ in comps]
            isolated = sorted(c for cs in cams[1:] for c in cs)
            raise DisconnectedGraph(
                "pose graph is disconnected; camera components: "
                + "; ".join("{" + ", ".join(c) + "}" for c in cams if c)
                + (f"; isolated cameras: {', '.join(isolated)}" if isolated else ""),
                [c for c in cams if c],
            )

    def without_edge(self, camera_id, capture_index) -> "PoseGraph":
        edges = [e for e in self.edges if (e.camera_id, e.capture_index) != (camera_id, capture_index)]
        return PoseGraph(list(self.camera_nodes), list(self.board_nodes), edges, list(self.warnings))


def build_pose_graph(
    views: Sequence[ViewObservation],
    intrinsics: Mapping[str, CameraIntrinsics],
    spec: CheckerboardSpec,
    require_connected: bool = True,
) -> PoseGraph:
    """Estimate every single-view board pose and connect cameras to board instants.

    Edge weight is the reprojection rms of the single-view estimate.  Views
    whose pose estimation fails are dropped and recorded in ``warnings``.
    """
    edges, warnings = [], []
    for v in sorted(views, key=lambda v: (v.capture_index, v.camera_id)):
        if v.camera_id not in intrinsics:
            warnings.append(f"{v.camera_id}@{v.capture_index}: no intrinsics, view skipped")
            continue
        if len(v) < 4:
            warnings.append(f"{v.camera_id}@{v.capture_index}: fewer than 4 corners, view skipped")
            continue
        try:
            est = estimate_board_pose(intrinsics[v.camera_id], v, spec)
        except CalibrationError as exc:
            warnings.append(f"{v.camera_id}@{v.capture_index}: pose estimation failed ({exc})")
            continue
        edges.append(PoseEdge(v.camera_id, v.capture_index, v, est.rms, est.pose))
    for w in warnings:
        log.warning(w)
    graph = PoseGraph(sorted(intrinsics), sorted({e.capture_index for e in edges}), edges, warnings)
    if require_connected:
        graph.require_connected()
    return graph


@dataclass
class RigExtrinsics:
    """Camera->reference poses; the reference camera is identity."""

    poses: Dict[str, Pose]
    reference_camera_id: str

    def __post_init__(self):
        ref = self.poses.get(self.reference_camera_id)
        if ref is None:
            raise ValueError(f"reference camera {self.reference_camera_id!r} missing")
        if not (np.array_equal(ref.rotation.quat, [1.0, 0, 0, 0]) and not np.any(ref.t)):
            raise ValueError("reference camera pose must be exactly identity")

    @property
    def camera_ids(self) -> List[str]:
        return sorted(self.poses)

    def center(self, cam_id) -> np.ndarray:
        return self.poses[cam_id].t


@dataclass
class BundleState:
    rig: RigExtrinsics
    board_poses: Dict[int, Pose]  # board -> reference
    intrinsics: Dict[str, CameraIntrinsics]
    total_error: float
    iterations: int = 0
    converged: bool = True
    reason: str = ""
    robust: bool = False

    def edge_residuals(self, graph: PoseGraph, spec: CheckerboardSpec) -> Dict[Tuple[str, int], np.ndarray]:
        """Per-edge (N, 2) pixel residuals of the state."""
        obj = board_points(spec)
        out = {}
        for e in graph.edges:
            cam = inverse(self.rig.poses[e.camera_id])
            b = self.board_poses[e.capture_index]
            T = compose(cam, b)
            pts = obj[e.view.corner_ids] @ T.R.T + T.t
            out[(e.camera_id, e.capture_index)] = project(self.intrinsics[e.camera_id], pts) - e.view.pixels
        return out

    def squared_error(self, graph: PoseGraph, spec: CheckerboardSpec) -> float:
        return float(sum(np.sum(r * r) for r in self.edge_residuals(graph, spec).values()))

    def rms(self, graph: PoseGraph, spec: CheckerboardSpec) -> float:
        res = self.edge_residuals(graph, spec)
        n = sum(len(r) for r in res.values())
        return math.sqrt(sum(float(np.sum(r * r)) for r in res.values()) / (2 * n))


def _spanning_tree(graph: PoseGraph) -> List[PoseEdge]:
    """Kruskal on (weight, capture_index, camera_id)."""
    parent = {}

    def find(a):
        while parent.setdefault(a, a) != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    tree = []
    for e in sorted(graph.edges, key=lambda e: (e.weight, e.capture_index, e.camera_id)):
        a, b = find(("c", e.camera_id)), find(("b", e.capture_index))
        if a != b:
            parent[a] = b
            tree.append(e)
    return tree


def spanning_tree_init(
    graph: PoseGraph,
    intrinsics: Mapping[str, CameraIntrinsics],
    spec: CheckerboardSpec,
    reference_camera: str = "cam0",
) -> BundleState:
    """Initial rig and board poses chained along the minimum spanning tree.

    The tree is walked breadth-first from the reference camera; children are
    visited in (capture_index, camera_id) order.
    """
    if reference_camera not in graph.camera_nodes:
        raise DisconnectedGraph(f"reference camera {reference_camera!r} is not in the graph", [])
    graph.require_connected()
    tree = _spanning_tree(graph)
    adj = defaultdict(list)
    for e in tree:
        adj[("c", e.camera_id)].append(e)
        adj[("b", e.capture_index)].append(e)
    for k in adj:
        adj[k].sort(key=lambda e: (e.capture_index, e.camera_id))

    cams: Dict[str, Pose] = {reference_camera: Pose.identity()}
    boards: Dict[int, Pose] = {}
    queue = deque([("c", reference_camera)])
    while queue:
        node = queue.popleft()
        for e in adj[node]:
            if node[0] == "c":
                if e.capture_index in boards:
                    continue
                boards[e.capture_index] = compose(cams[e.camera_id], e.board_to_camera)
                queue.append(("b", e.capture_index))
            else:
                if e.camera_id in cams:
                    continue
                cams[e.camera_id] = compose(boards[e.capture_index], inverse(e.board_to_camera))
                queue.append(("c", e.camera_id))
    state = BundleState(RigExtrinsics(cams, reference_camera), boards, {c: intrinsics[c] for c in cams}, 0.0)
    state.total_error = state.squared_error(graph, spec)
    return state


@dataclass(frozen=True)
class BundleConfig:
    refine_intrinsics: bool = False
    robust: bool = False
    huber_scale: float = HUBER_SCALE_PX
    max_iterations: int = 100
    rel_tol: float = 1e-10
    grad_tol: float = 1e-8


def _huber(err_norm, scale):
    """Per-corner (cost, sqrt weight) of the Huber loss on residual length."""
    w = np.where(err_norm <= scale, 1.0, scale / np.maximum(err_norm, 1e-300))
    cost = np.where(err_norm <= scale, err_norm**2, 2.0 * scale * err_norm - scale * scale)
    return cost, np.sqrt(w)


class _BundleProblem:
    """Global: non-reference camera tangents, then (optionally) 8 intrinsics
    per camera with xi held at its input value; local: one 6-DOF block per board.

    State ``x = (Rc, tc, Rb, tb, intr)``: stacked reference->camera and
    board->reference rotations/translations plus an (n_cams, 9) intrinsics array.
    """

    def __init__(self, graph: PoseGraph, spec: CheckerboardSpec, ref: str, config: BundleConfig):
        obj = board_points(spec)
        self.cfg = config
        self.ref = ref
        self.cams = sorted(graph.camera_nodes)
        cam_index = {c: i for i, c in enumerate(self.cams)}
        self.free_cams = [c for c in self.cams if c != ref]
        self.cam_slot = {c: 6 * i for i, c in enumerate(self.free_cams)}
        n_pose = 6 * len(self.free_cams)
        self.intr_slot = {}
        if config.refine_intrinsics:
            self.intr_slot = {c: n_pose + 8 * i for i, c in enumerate(self.cams)}
        self.n_global = n_pose + 8 * len(self.intr_slot)
        self.boards = sorted(graph.board_nodes)
        board_slot = {b: i for i, b in enumerate(self.boards)}
        # camera-major order keeps each camera's corners contiguous
        edges = sorted(graph.edges, key=lambda e: (cam_index[e.camera_id], e.capture_index))
        counts = np.array([len(e.view) for e in edges])
        self.starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
        self.pts = np.concatenate([obj[e.view.corner_ids] for e in edges])
        self.pixels = np.concatenate([e.view.pixels for e in edges])
        self.board_of = np.repeat([board_slot[e.capture_index] for e in edges], counts)
        self.edge_board = np.array([board_slot[e.capture_index] for e in edges])
        cam_of_edge = np.array([cam_index[e.camera_id] for e in edges])
        self.cam_ranges = []
        for i in range(len(self.cams)):
            sel = np.flatnonzero(cam_of_edge == i)
            lo = self.starts[sel[0]] if sel.size else 0
            hi = self.starts[sel[-1]] + counts[sel[-1]] if sel.size else 0
            self.cam_ranges.append((lo, hi))
        width = 6 + (9 if self.intr_slot else 0)
        self.edge_gidx = np.full((len(edges), width), -1)
        for k, e in enumerate(edges):
            if e.camera_id != ref:
                self.edge_gidx[k, :6] = self.cam_slot[e.camera_id] + np.arange(6)
            if self.intr_slot:
                # column 0 of the intrinsics block is xi: never a free parameter here
                self.edge_gidx[k, 7:] = self.intr_slot[e.camera_id] + np.arange(8)
        self.n_corners = len(self.pts)

    def _residuals(self, x, with_jac):
        Rc, tc, Rb, tb, intr = x
        p_ref = np.einsum("nij,nj->ni", Rb[self.board_of], self.pts) + tb[self.board_of]
        r = np.empty_like(self.pixels)
        if with_jac:
            Jg = np.zeros((self.n_corners, 2, self.edge_gidx.shape[1]))
            Jl = np.empty((self.n_corners, 2, 6))
        for i, c in enumerate(self.cams):
            lo, hi = self.cam_ranges[i]
            if hi == lo:
                continue
            iv = CameraIntrinsics.from_vector(intr[i])
            pc = p_ref[lo:hi] @ Rc[i].T + tc[i]
            if not with_jac:
                r[lo:hi] = project(iv, pc) - self.pixels[lo:hi]
                continue
            uv, Jpt, Ji, Jcam = project_jacobians(iv, pc)
            r[lo:hi] = uv - self.pixels[lo:hi]
            JR = Jpt @ Rc[i]
            Jl[lo:hi, :, :3] = -JR @ skew(p_ref[lo:hi])
            Jl[lo:hi, :, 3:] = JR
            Jg[lo:hi, :, :6] = Jcam
            if self.intr_slot:
                Jg[lo:hi, :, 6:] = Ji
        if with_jac:
            return r, Jg, Jl
        return r

    def _loss(self, r):
        if self.cfg.robust:
            c, sw = _huber(np.linalg.norm(r, axis=1), self.cfg.huber_scale)
            return float(np.sum(c)), sw
        return float(np.sum(r * r)), None

    def cost(self, x):
        try:
            return self._loss(self._residuals(x, False))[0]
        except BehindCamera:
            return np.inf

    def linearize(self, x):
        r, Jg, Jl = self._residuals(x, True)
        total, sw = self._loss(r)
        if sw is not None:
            r = r * sw[:, None]
            Jg = Jg * sw[:, None, None]
            Jl = Jl * sw[:, None, None]
        sys = lm.SchurSystem(self.n_global, len(self.boards))
        sys.add_batched(self.starts, self.edge_board, self.edge_gidx, Jg, Jl, r)
        return total, sys.finalize()

    def update(self, x, step):
        Rc, tc, Rb, tb, intr = x
        Rc, tc, intr = Rc.copy(), tc.copy(), intr.copy()
        for i, c in enumerate(self.cams):
            if c in self.cam_slot:
                s = self.cam_slot[c]
                Rn, tn = retract_batch(Rc[i : i + 1], tc[i : i + 1], step[s : s + 6])
                Rc[i], tc[i] = Rn[0], tn[0]
            if c in self.intr_slot:
                s = self.intr_slot[c]
                intr[i, 1:] += step[s : s + 8]
                intr[i, 1] = max(intr[i, 1], 1e-6)
                intr[i, 2] = max(intr[i, 2], 1e-6)
        Rb, tb = retract_batch(Rb, tb, step[self.n_global :])
        return Rc, tc, Rb, tb, intr


def bundle_adjust(
    init: BundleState,
    graph: PoseGraph,
    spec: CheckerboardSpec,
    config: BundleConfig = BundleConfig(),
) -> BundleState:
    """Levenberg-Marquardt refinement of all non-reference camera poses and all board poses.

    With ``config.refine_intrinsics`` the intrinsics are refined too, except
    for xi: it trades off almost exactly against focal length and radial
    distortion, so it stays at the per-camera calibration value.

    Raises :class:`NoConvergence` (carrying the best state as ``result``)
    when the iteration budget runs out.
    """
    ref = init.rig.reference_camera_id
    problem = _BundleProblem(graph, spec, ref, config)
    inv = [inverse(init.rig.poses[c]) for c in problem.cams]
    x0 = (
        np.array([T.R for T in inv]),
        np.array([T.t for T in inv]),
        np.array([init.board_poses[b].R for b in problem.boards]),
        np.array([init.board_poses[b].t for b in problem.boards]),
        np.array([init.intrinsics[c].to_vector() for c in problem.cams]),
    )
    if not np.isfinite(problem.cost(x0)):
        raise NumericalFailure("initial state projects observed corners outside the camera model")

    def to_state(res):
        Rc, tc, Rb, tb, intr = res.x
        rig = {ref: Pose.identity()}
        for i, c in enumerate(problem.cams):
            if c != ref:
                rig[c] = inverse(Pose.from_matrix(Rc[i], tc[i]))
        bp = {b: Pose.from_matrix(Rb[i], tb[i]) for i, b in enumerate(problem.boards)}
        intrinsics = {c: init.intrinsics[c].with_vector(intr[i]) for i, c in enumerate(problem.cams)}
        st = BundleState(RigExtrinsics(rig, ref), bp, intrinsics, 0.0, res.iterations, res.converged, res.reason, config.robust)
        st.total_error = st.squared_error(graph, spec)
        return st

    try:
        res = lm.levenberg_marquardt(
            x0,
            problem.linearize,
            problem.cost,
            problem.update,
            max_iterations=config.max_iterations,
            rel_tol=config.rel_tol,
            grad_tol=config.grad_tol,
        )
    except NoConvergence as exc:
        raise NoConvergence(str(exc), to_state(exc.result)) from None
    return to_state(res)


def baseline_report(rig: RigExtrinsics) -> Tuple[List[str], np.ndarray]:
    """Pairwise camera-centre distances in metres."""
    ids = rig.camera_ids
    C = np.array([rig.center(c) for c in ids])
    D = np.linalg.norm(C[:, None, :] - C[None, :, :], axis=2)
    D = 0.5 * (D + D.T)
    np.fill_diagonal(D, 0.0)
    return ids, D


def calibrate_rig(
    views: Sequence[ViewObservation],
    intrinsics: Mapping[str, CameraIntrinsics],
    spec: CheckerboardSpec,
    reference_camera: str = "cam0",
    config: BundleConfig = BundleConfig(),
):
    """Graph construction, spanning-tree initialisation and bundle adjustment in one call."""
    graph = build_pose_graph(views, intrinsics, spec)
    init = spanning_tree_init(graph, intrinsics, spec, reference_camera)
    final = bundle_adjust(init, graph, spec, config)
    return graph, init, final


def locate_board(
    views: Sequence[ViewObservation],
    rig_poses: Mapping[str, Pose],
    intrinsics: Mapping[str, CameraIntrinsics],
    spec: CheckerboardSpec,
    max_iterations: int = 100,
) -> Pose:
    """Board->reference pose from every camera that saw one capture, rig held fixed.

    Starts from the single-camera estimate of the view with the most corners.
    """
    views = [v for v in views if v.camera_id in rig_poses and v.camera_id in intrinsics]
    if not views:
        raise InsufficientViews("no view of this capture comes from a calibrated camera")
    first = max(views, key=lambda v: (len(v), v.camera_id))
    init = compose(rig_poses[first.camera_id], estimate_board_pose(intrinsics[first.camera_id], first, spec).pose)
    obj = board_points(spec)
    cams = [(inverse(rig_poses[v.camera_id]), intrinsics[v.camera_id], obj[v.corner_ids], v.pixels) for v in views]

    def residuals(x, jac):
        R, t = x
        rs, js = [], []
        for T, iv, pts, px in cams:
            p_ref = pts @ R.T + t
            pc = p_ref @ T.R.T + T.t
            if not jac:
                rs.append((project(iv, pc) - px).ravel())
                continue
            uv, Jpt, _, _ = project_jacobians(iv, pc)
            JR = Jpt @ T.R
            rs.append((uv - px).ravel())
            js.append(np.concatenate([-JR @ skew(p_ref), JR], axis=2).reshape(-1, 6))
        return (np.concatenate(rs), np.concatenate(js)) if jac else np.concatenate(rs)

    def cost(x):
        try:
            r = residuals(x, False)
        except BehindCamera:
            return np.inf
        return float(r @ r)

    def linearize(x):
        r, J = residuals(x, True)
        return float(r @ r), lm.DenseSystem(J, r)

    res = lm.levenberg_marquardt((init.R, init.t), linearize, cost, lambda x, s: retract(x[0], x[1], s), max_iterations=max_iterations)
    return Pose.from_matrix(*res.x)
