"""Capsule/sphere collision primitives and exact minimum-distance queries.

Links carry capsule primitives (a segment plus a radius); obstacles are
spheres. Distances are computed analytically; the brute-force oracles live in
the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .model import NQ, RobotParams, fk_points

# non-adjacent link pairs checked for self-collision (1-based link indices)
SELF_PAIRS = ((1, 3), (1, 4), (2, 4))

DEFAULT_CAPSULE_RADIUS = 0.02
DEFAULT_OBSTACLE_MARGIN = 0.01
DEFAULT_SELF_CLEARANCE = 0.04


@dataclass(frozen=True)
class Segment:
    """Parametric segment P(t) = p + t v, t in [0, 1]."""

    p: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "p", np.asarray(self.p, dtype=float))
        object.__setattr__(self, "v", np.asarray(self.v, dtype=float))

    def at(self, t: float) -> np.ndarray:
        return self.p + t * self.v


@dataclass(frozen=True)
class Obstacle:
    """Spherical obstacle with center c and radius r."""

    c: np.ndarray
    r: float

    def __post_init__(self):
        object.__setattr__(self, "c", np.asarray(self.c, dtype=float))
        if self.r < 0:
            raise ValueError("obstacle radius must be non-negative")


@dataclass(frozen=True)
class ClearanceReport:
    """Distance of one primitive pair against its clearance threshold."""

    pair: str
    distance: float
    threshold: float
    margin: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "margin", self.distance - self.threshold)


def link_capsule(q, link: int, p: RobotParams) -> Segment:
    """Capsule axis of link `link` (1-based): joint i to joint i+1."""
    if not 1 <= link <= NQ:
        raise ValueError(f"link index must be in 1..{NQ}")
    pts = fk_points(q, p)
    return Segment(p=pts[link - 1], v=pts[link] - pts[link - 1])


def point_segment_closest(pt, s: Segment) -> tuple[float, float]:
    """(distance, t*) of the closest point on the segment to pt."""
    pt = np.asarray(pt, dtype=float)
    vv = float(s.v @ s.v)
    if vv < 1e-16:
        t = 0.0
    else:
        t = float(np.clip((pt - s.p) @ s.v / vv, 0.0, 1.0))
    return float(np.linalg.norm(pt - s.at(t))), t


def point_segment_distance(pt, s: Segment) -> float:
    """Minimum distance between a point and a segment."""
    return point_segment_closest(pt, s)[0]


def segment_segment_closest(a: Segment, b: Segment) -> tuple[float, float, float]:
    """(distance, s*, t*) minimizing |a(s) - b(t)| over the unit square.

    Candidates are the interior stationary point (when the segments are not
    parallel) plus the four clamped edges; ties (parallel overlap) resolve to
    the lexicographically smallest (s, t).
    """
    u, v = a.v, b.v
    w0 = a.p - b.p
    uu = float(u @ u)
    vv = float(v @ v)
    uv = float(u @ v)
    det = uu * vv - uv * uv

    candidates: list[tuple[float, float]] = []
    if det > 1e-12 * max(uu * vv, 1e-300):
        s_int = (uv * float(v @ w0) - vv * float(u @ w0)) / det
        t_int = (uu * float(v @ w0) - uv * float(u @ w0)) / det
        if 0.0 <= s_int <= 1.0 and 0.0 <= t_int <= 1.0:
            candidates.append((s_int, t_int))

    def _proj(pt, seg: Segment) -> float:
        den = float(seg.v @ seg.v)
        if den < 1e-16:
            return 0.0
        return float(np.clip((np.asarray(pt) - seg.p) @ seg.v / den, 0.0, 1.0))

    candidates.append((0.0, _proj(a.p, b)))
    candidates.append((1.0, _proj(a.at(1.0), b)))
    candidates.append((_proj(b.p, a), 0.0))
    candidates.append((_proj(b.at(1.0), a), 1.0))

    best = None
    for s_c, t_c in candidates:
        d = float(np.linalg.norm(a.at(s_c) - b.at(t_c)))
        key = (round(d, 12), s_c, t_c)
        if best is None or key < best[0]:
            best = (key, d, s_c, t_c)
    return best[1], best[2], best[3]


def segment_segment_distance(a: Segment, b: Segment) -> float:
    """Minimum distance between two segments."""
    return segment_segment_closest(a, b)[0]


def segment_segment_signed(a: Segment, b: Segment) -> tuple[float, float, float]:
    """(signed distance, s*, t*) between two segments.

    Equals the ordinary minimum distance when the segments are disjoint. When
    they touch or cross, returns minus the penetration depth: the smallest
    translation that separates them, which for planar segments is the least
    endpoint-to-other-segment distance. The witness parameters always satisfy
    |a(s*) - b(t*)| = |signed distance|, so gradients stay informative inside
    the crossed region where the plain distance is identically zero.
    """
    d, s_star, t_star = segment_segment_closest(a, b)
    if d > 1e-12:
        return d, s_star, t_star
    candidates = (
        (0.0, point_segment_closest(a.p, b)[1]),
        (1.0, point_segment_closest(a.at(1.0), b)[1]),
        (point_segment_closest(b.p, a)[1], 0.0),
        (point_segment_closest(b.at(1.0), a)[1], 1.0),
    )
    best = None
    for s_c, t_c in candidates:
        pen = float(np.linalg.norm(a.at(s_c) - b.at(t_c)))
        key = (round(pen, 12), s_c, t_c)
        if best is None or key < best[0]:
            best = (key, pen, s_c, t_c)
    return -best[1], best[2], best[3]


def clearance_all(
    q,
    p: RobotParams,
    obstacles: Sequence[Obstacle] = (),
    d_min_self: float = DEFAULT_SELF_CLEARANCE,
    capsule_radius: float = DEFAULT_CAPSULE_RADIUS,
    obstacle_margin: float = DEFAULT_OBSTACLE_MARGIN,
) -> list[ClearanceReport]:
    """Clearance reports for every link-obstacle pair and non-adjacent self pair."""
    capsules = {i: link_capsule(q, i, p) for i in range(1, NQ + 1)}
    reports: list[ClearanceReport] = []
    for i in range(1, NQ + 1):
        for oi, obs in enumerate(obstacles):
            d = point_segment_distance(obs.c, capsules[i])
            thr = obs.r + capsule_radius + obstacle_margin
            reports.append(ClearanceReport(f"link{i}-obstacle{oi}", d, thr))
    for i, j in SELF_PAIRS:
        d = segment_segment_distance(capsules[i], capsules[j])
        reports.append(ClearanceReport(f"link{i}-link{j}", d, d_min_self))
    return reports
