"""Differentiable collision costs over object footprints.

Each object's footprint is the axis-aligned bounding box of its oriented
w x h rectangle: half-extents ex = (w|cos t| + h|sin t|)/2 and
ey = (w|sin t| + h|cos t|)/2. A pair of boxes incurs

    ox = max(0, ex_a + ex_b + margin - |xa - xb|)   (oy likewise)
    cost = min(ox, oy)

which is zero exactly when the (margin-inflated) boxes do not overlap
and grows linearly with penetration depth. The subgradient flows through
the smaller-overlap axis (ties pick x); the orientation gradient flows
through the half-extents, taking the incoming branch at the |cos|/|sin|
kinks.

``scene_collision_cost`` aggregates all unordered pairs — graph objects
against each other and against the scene's clutter, which acts as a
fixed obstacle field with no gradient of its own — packaged as a
:class:`~scenefit.sampler.CostTerm` for composition with the learned
energy during sampling.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .sampler import CostTerm
from .scene import Pose, Scene, SceneGraph, build_graph

__all__ = [
    "COLLISION_WEIGHT",
    "COLLISION_MARGIN",
    "Footprint",
    "footprint",
    "hinge_pair",
    "scene_collision_cost",
    "collision_free",
    "rejection_sample",
]

# Defaults when composing the collision term with the learned energy:
# strong enough that contact gradients dominate near overlap, with a
# small safety margin around each box.
COLLISION_WEIGHT = 5.0
COLLISION_MARGIN = 0.5


@dataclass(frozen=True)
class Footprint:
    """Axis-aligned box: centre (x, y), half-extents (ex, ey) > 0."""

    x: float
    y: float
    ex: float
    ey: float

    def __post_init__(self):
        if not (self.ex > 0 and self.ey > 0):
            raise ValueError("half-extents must be positive")


def footprint(pose: Pose, scale) -> Footprint:
    """Bounding box of the oriented rectangle ``scale`` at ``pose``."""
    w, h = scale
    c, s = abs(pose.cos), abs(pose.sin)
    return Footprint(pose.x, pose.y, (w * c + h * s) / 2.0, (w * s + h * c) / 2.0)


def hinge_pair(a: Footprint, b: Footprint, margin: float = 0.0):
    """Penetration cost of two footprints plus centre gradients.

    Returns ``(cost, d_cost/d(ax, ay), d_cost/d(bx, by))``.
    """
    dx = a.x - b.x
    dy = a.y - b.y
    ox = max(0.0, a.ex + b.ex + margin - abs(dx))
    oy = max(0.0, a.ey + b.ey + margin - abs(dy))
    cost = min(ox, oy)
    ga = np.zeros(2)
    gb = np.zeros(2)
    if cost > 0.0:
        if ox <= oy:
            ga[0] = -np.sign(dx)
            gb[0] = np.sign(dx)
        else:
            ga[1] = -np.sign(dy)
            gb[1] = np.sign(dy)
    return cost, ga, gb


def _extents(scales: np.ndarray, theta: np.ndarray):
    """Half-extents and their theta derivatives, batched.

    ``scales`` is (n, 2); ``theta`` is (..., n). Derivatives use
    d|cos|/dt = -sin * sign(cos) and d|sin|/dt = cos * sign(sin).
    """
    w, h = scales[:, 0], scales[:, 1]
    c, s = np.cos(theta), np.sin(theta)
    ac, asn = np.abs(c), np.abs(s)
    sc, ss = np.sign(c), np.sign(s)
    ex = (w * ac + h * asn) / 2.0
    ey = (w * asn + h * ac) / 2.0
    dex = (-w * s * sc + h * c * ss) / 2.0
    dey = (w * c * ss - h * s * sc) / 2.0
    return ex, ey, dex, dey


def _pair_terms(
    xi, yi, exi, eyi, xj, yj, exj, eyj, margin
):
    """Vectorised hinge costs and activation flags for index-aligned
    pairs. Shapes are (..., P). Returns (cost, sign dx, sign dy,
    x-axis active, y-axis active)."""
    dx = xi - xj
    dy = yi - yj
    ox = np.maximum(0.0, exi + exj + margin - np.abs(dx))
    oy = np.maximum(0.0, eyi + eyj + margin - np.abs(dy))
    cost = np.minimum(ox, oy)
    hit = cost > 0.0
    ax = hit & (ox <= oy)
    ay = hit & (oy < ox)
    return cost, np.sign(dx), np.sign(dy), ax, ay


def _obstacles(scene: Scene):
    """Objects excluded from the graph (immovable clutter) as fixed
    footprint arrays (m, 2) centres / extents."""
    out = [o for o in scene.objects if o.clutter and not o.movable]
    if not out:
        return np.zeros((0, 2)), np.zeros(0), np.zeros(0)
    centres = np.array([[o.pose.x, o.pose.y] for o in out])
    fps = [footprint(o.pose, o.scale) for o in out]
    return centres, np.array([f.ex for f in fps]), np.array([f.ey for f in fps])


def scene_collision_cost(
    scene: Scene, margin: float = 0.0, weight: float = 1.0
) -> CostTerm:
    """Total pairwise penetration over graph objects and clutter.

    The returned term evaluates batched graph poses (B, n, 3); clutter
    stays at its stored pose and receives no gradient.
    """
    obst_c, obst_ex, obst_ey = _obstacles(scene)

    def fn(poses: np.ndarray, graph: SceneGraph):
        n = graph.n
        scales = np.array([o.scale for o in graph.objects])
        x, y, th = poses[..., 0], poses[..., 1], poses[..., 2]
        ex, ey, dex, dey = _extents(scales, th)
        total = np.zeros(poses.shape[:-2])
        grad = np.zeros_like(poses)

        iu, ju = np.triu_indices(n, 1)
        if iu.size:
            cost, sdx, sdy, ax, ay = _pair_terms(
                x[..., iu], y[..., iu], ex[..., iu], ey[..., iu],
                x[..., ju], y[..., ju], ex[..., ju], ey[..., ju],
                margin,
            )
            total += cost.sum(axis=-1)
            sel_i = np.zeros((iu.size, n))
            sel_i[np.arange(iu.size), iu] = 1.0
            sel_j = np.zeros((ju.size, n))
            sel_j[np.arange(ju.size), ju] = 1.0
            grad[..., 0] += (-sdx * ax) @ sel_i + (sdx * ax) @ sel_j
            grad[..., 1] += (-sdy * ay) @ sel_i + (sdy * ay) @ sel_j
            grad[..., 2] += (dex[..., iu] * ax) @ sel_i + (dex[..., ju] * ax) @ sel_j
            grad[..., 2] += (dey[..., iu] * ay) @ sel_i + (dey[..., ju] * ay) @ sel_j

        if obst_c.shape[0]:
            # (..., n, m) grids: every graph object against every obstacle
            cost, sdx, sdy, ax, ay = _pair_terms(
                x[..., :, None], y[..., :, None],
                ex[..., :, None], ey[..., :, None],
                obst_c[:, 0], obst_c[:, 1], obst_ex, obst_ey,
                margin,
            )
            total += cost.sum(axis=(-2, -1))
            grad[..., 0] += (-sdx * ax).sum(axis=-1)
            grad[..., 1] += (-sdy * ay).sum(axis=-1)
            grad[..., 2] += (dex[..., :, None] * ax).sum(axis=-1)
            grad[..., 2] += (dey[..., :, None] * ay).sum(axis=-1)

        return total, grad

    return CostTerm(fn=fn, weight=weight, name="collision")


def collision_free(
    scene: Scene, poses: np.ndarray | None = None, graph: SceneGraph | None = None
) -> bool:
    """True iff no two footprints overlap (margin 0; touching counts as
    free). Clutter is included in the check."""
    if graph is None:
        graph = build_graph(scene)
    if poses is None:
        poses = graph.poses()
    term = scene_collision_cost(scene, margin=0.0)
    cost, _ = term.fn(poses[None], graph)
    return bool(cost[0] == 0.0)


def rejection_sample(
    generator: Callable[[], np.ndarray],
    budget: int,
    predicate: Callable[[np.ndarray], bool],
):
    """Draw exactly ``budget`` samples, keep those passing ``predicate``.

    Returns ``(accepted, acceptance_count)``.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    accepted = []
    for _ in range(budget):
        sample = generator()
        if predicate(sample):
            accepted.append(sample)
    return accepted, len(accepted)
