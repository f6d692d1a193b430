"""Two-vehicle scenario records, road rasters, corpus generators and the
line-delimited dataset format.

All generators are pure functions of their arguments and seed. Each record
draws from its own generator seeded with ``(seed, index)`` so records can be
produced independently.
"""
import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import GenerationError, InputError, ParseError, ShapeError, ValidationError, VersionError

LABELS = ("safe", "collision", "synthetic", "risky")
LAYOUTS = ("straight", "intersection", "curve")
RISKY_TEMPLATES = ("head_on", "intersection_crossing", "hard_brake_follow", "cut_in",
                   "merge_squeeze", "left_turn_across_path")
D_SAFE = 2.0
MAP_SIZE = 32
MAP_RESOLUTION = 1.0
LANE_WIDTH = 3.5
MAX_ATTEMPTS = 1000
FORMAT_HEADER = {"format": "cmts-dataset", "version": 1}


@dataclass(frozen=True, eq=False)
class Trajectory:
    waypoints: np.ndarray
    dt: float = 0.1

    def __post_init__(self):
        w = np.array(self.waypoints, dtype=np.float64)
        if w.ndim != 2 or w.shape[1] != 2:
            raise ValidationError(f"waypoints must have shape (T, 2), got {w.shape}")
        if w.shape[0] < 2:
            raise ValidationError("a trajectory needs at least 2 waypoints")
        if not np.all(np.isfinite(w)):
            raise ValidationError("waypoints must be finite")
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ValidationError(f"dt must be positive, got {self.dt}")
        w.setflags(write=False)
        object.__setattr__(self, "waypoints", w)
        object.__setattr__(self, "dt", float(self.dt))

    @property
    def T(self):
        return self.waypoints.shape[0]

    def translated(self, offset):
        return Trajectory(self.waypoints + np.asarray(offset, dtype=np.float64), self.dt)

    def __eq__(self, other):
        if not isinstance(other, Trajectory):
            return NotImplemented
        return self.dt == other.dt and np.array_equal(self.waypoints, other.waypoints)

    def __repr__(self):
        return f"Trajectory(T={self.T}, dt={self.dt})"


@dataclass(eq=False)
class GridMap:
    """Binary drivable-area raster; ``cells[row, col]``, row 0 at ``origin[1]``."""
    width: int
    height: int
    resolution: float
    origin: tuple
    cells: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.cells)
        if c.size != self.width * self.height:
            raise ValidationError(f"map has {c.size} cells, expected {self.width}x{self.height}")
        if not self.resolution > 0:
            raise ValidationError("map resolution must be positive")
        if not np.all((c == 0) | (c == 1)):
            raise ValidationError("map cells must be 0 or 1")
        self.cells = c.reshape(self.height, self.width).astype(np.uint8)
        self.origin = (float(self.origin[0]), float(self.origin[1]))
        self.width = int(self.width)
        self.height = int(self.height)
        self.resolution = float(self.resolution)

    @classmethod
    def all_drivable(cls, size=MAP_SIZE, resolution=MAP_RESOLUTION, center=(0.0, 0.0)):
        half = size * resolution / 2.0
        return cls(size, size, resolution, (center[0] - half, center[1] - half),
                   np.ones((size, size), dtype=np.uint8))

    @property
    def center(self):
        return np.array([self.origin[0] + self.width * self.resolution / 2.0,
                         self.origin[1] + self.height * self.resolution / 2.0])

    def cell_centers(self):
        xs = self.origin[0] + (np.arange(self.width) + 0.5) * self.resolution
        ys = self.origin[1] + (np.arange(self.height) + 0.5) * self.resolution
        gx, gy = np.meshgrid(xs, ys)
        return np.stack([gx.ravel(), gy.ravel()], axis=1)

    def drivable(self, points):
        """True for points inside the raster on a drivable cell."""
        p = np.atleast_2d(np.asarray(points, dtype=np.float64))
        col = np.floor((p[:, 0] - self.origin[0]) / self.resolution).astype(int)
        row = np.floor((p[:, 1] - self.origin[1]) / self.resolution).astype(int)
        inside = (col >= 0) & (col < self.width) & (row >= 0) & (row < self.height)
        out = np.zeros(len(p), dtype=bool)
        out[inside] = self.cells[row[inside], col[inside]] == 1
        return out

    def __eq__(self, other):
        if not isinstance(other, GridMap):
            return NotImplemented
        return (self.width == other.width and self.height == other.height
                and self.resolution == other.resolution and self.origin == other.origin
                and np.array_equal(self.cells, other.cells))


@dataclass(eq=False)
class ScenarioRecord:
    id: str
    traj_a: Trajectory
    traj_b: Trajectory
    map: GridMap
    label: str
    template: str = None

    def __post_init__(self):
        if self.label not in LABELS:
            raise ValidationError(f"unknown label {self.label!r}")
        if self.traj_a.T != self.traj_b.T:
            raise ValidationError(f"trajectory lengths differ: {self.traj_a.T} vs {self.traj_b.T}")
        if self.traj_a.dt != self.traj_b.dt:
            raise ValidationError("trajectory time steps differ")

    @property
    def T(self):
        return self.traj_a.T

    @property
    def dt(self):
        return self.traj_a.dt

    def __eq__(self, other):
        if not isinstance(other, ScenarioRecord):
            return NotImplemented
        return (self.id == other.id and self.label == other.label and self.template == other.template
                and self.traj_a == other.traj_a and self.traj_b == other.traj_b and self.map == other.map)


def min_distance(a, b):
    """Closest approach between two equal-length waypoint arrays."""
    return float(np.min(np.linalg.norm(np.asarray(a) - np.asarray(b), axis=1)))


def check_label_invariants(record):
    """Raise ValidationError if the record breaks its label's distance band."""
    d = min_distance(record.traj_a.waypoints, record.traj_b.waypoints)
    if record.label == "safe" and d < D_SAFE:
        raise ValidationError(f"{record.id}: safe record with closest approach {d:.3f} m")
    if record.label == "collision" and d > 0.1:
        raise ValidationError(f"{record.id}: collision record with closest approach {d:.3f} m")
    if record.label == "risky" and not (0.2 < d < 1.5):
        raise ValidationError(f"{record.id}: risky record with closest approach {d:.3f} m")


# ---------------------------------------------------------------------------
# geometry helpers

def _record_rng(seed, index):
    return np.random.default_rng([int(seed), int(index)])


def _polyline_lengths(poly):
    seg = np.linalg.norm(np.diff(poly, axis=0), axis=1)
    return np.concatenate([[0.0], np.cumsum(seg)])


def _at_arclength(poly, s):
    cum = _polyline_lengths(poly)
    return np.stack([np.interp(s, cum, poly[:, 0]), np.interp(s, cum, poly[:, 1])], axis=1)


def _line(p0, direction, length, offset=0.0, step=1.0):
    d = np.asarray(direction, dtype=np.float64)
    d = d / np.linalg.norm(d)
    n = np.array([-d[1], d[0]])
    s = np.arange(0.0, length + step / 2, step)
    return np.asarray(p0) + offset * n + s[:, None] * d


def _arc(center, radius, start_angle, sweep, step=0.5):
    n = max(2, int(abs(sweep) * radius / step) + 1)
    ang = start_angle + np.linspace(0.0, sweep, n)
    return np.asarray(center) + radius * np.stack([np.cos(ang), np.sin(ang)], axis=1)


def _rotation(theta):
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def _speed_profile(rng, T, dt, lo=2.5, hi=6.5):
    v0 = rng.uniform(lo, hi)
    acc = rng.uniform(-0.6, 0.6)
    v = np.clip(v0 + acc * dt * np.arange(T - 1), lo, hi)
    return np.concatenate([[0.0], np.cumsum(v * dt)])


def _segment_distance(points, poly):
    a = poly[:-1]
    b = poly[1:]
    ab = b - a
    denom = np.maximum((ab * ab).sum(axis=1), 1e-12)
    ap = points[:, None, :] - a[None]
    t = np.clip((ap * ab[None]).sum(axis=2) / denom, 0.0, 1.0)
    closest = a[None] + t[..., None] * ab[None]
    return np.linalg.norm(points[:, None, :] - closest, axis=2).min(axis=1)


def rasterize_roads(roads, center, size=MAP_SIZE, resolution=MAP_RESOLUTION):
    """Rasterize ``[(centerline, half_width), ...]`` onto a map centered at ``center``."""
    half = size * resolution / 2.0
    gm = GridMap(size, size, resolution, (center[0] - half, center[1] - half),
                 np.zeros((size, size), dtype=np.uint8))
    pts = gm.cell_centers()
    mask = np.zeros(len(pts), dtype=bool)
    for poly, hw in roads:
        mask |= _segment_distance(pts, np.asarray(poly, dtype=np.float64)) <= hw
    gm.cells = mask.reshape(size, size).astype(np.uint8)
    return gm


def _transform(poly, R, shift):
    return np.asarray(poly) @ R.T + shift


def _step_speeds(w, dt):
    return np.linalg.norm(np.diff(w, axis=0), axis=1) / dt


# ---------------------------------------------------------------------------
# safe corpus

def _safe_scene(rng, layout, T, dt):
    """Return (roads, waypoints_a, waypoints_b) in a local frame."""
    hw = LANE_WIDTH
    half_lane = LANE_WIDTH / 2.0
    sa = _speed_profile(rng, T, dt)
    sb = _speed_profile(rng, T, dt)
    if layout == "straight":
        road = _line((-80.0, 0.0), (1.0, 0.0), 160.0)
        roads = [(road, hw)]
        mode = rng.integers(3)
        pa = _line((-80.0, 0.0), (1.0, 0.0), 160.0, offset=-half_lane)
        a0 = 80.0 - sa[-1] / 2 + rng.uniform(-3, 3)
        wa = _at_arclength(pa, a0 + sa)
        if mode == 0:      # same direction, adjacent lane
            pb = _line((-80.0, 0.0), (1.0, 0.0), 160.0, offset=half_lane)
            b0 = 80.0 - sb[-1] / 2 + rng.uniform(-6, 6)
        elif mode == 1:    # oncoming
            pb = _line((80.0, 0.0), (-1.0, 0.0), 160.0, offset=-half_lane)
            b0 = 80.0 - sb[-1] / 2 + rng.uniform(-3, 3)
        else:              # following in the same lane
            pb = pa
            b0 = a0 - rng.uniform(4.0, 10.0)
        wb = _at_arclength(pb, b0 + sb)
    elif layout == "intersection":
        roads = [(_line((-80.0, 0.0), (1.0, 0.0), 160.0), hw), (_line((0.0, -80.0), (0.0, 1.0), 160.0), hw)]
        da = 1.0 if rng.random() < 0.5 else -1.0
        db = 1.0 if rng.random() < 0.5 else -1.0
        pa = _line((-80.0 * da, 0.0), (da, 0.0), 160.0, offset=-half_lane)
        pb = _line((0.0, -80.0 * db), (0.0, db), 160.0, offset=-half_lane)
        a0 = 80.0 - sa[-1] * rng.uniform(0.2, 0.8)
        b0 = 80.0 - sb[-1] * rng.uniform(0.2, 0.8)
        wa = _at_arclength(pa, a0 + sa)
        wb = _at_arclength(pb, b0 + sb)
    elif layout == "curve":
        radius = rng.uniform(14.0, 30.0)
        sweep = 160.0 / radius
        start = math.pi / 2 - sweep / 2
        roads = [(_arc((0.0, 0.0), radius, start, sweep), hw)]
        # counter-clockwise travel keeps its right-hand lane on the outside
        pa = _arc((0.0, 0.0), radius + half_lane, start, sweep)
        la = _polyline_lengths(pa)[-1]
        a0 = la / 2 - sa[-1] / 2 + rng.uniform(-3, 3)
        wa = _at_arclength(pa, a0 + sa)
        if rng.random() < 0.5:
            pb = _arc((0.0, 0.0), radius - half_lane, start + sweep, -sweep)
        else:
            pb = _arc((0.0, 0.0), radius - half_lane, start, sweep)
        lb = _polyline_lengths(pb)[-1]
        b0 = lb / 2 - sb[-1] / 2 + rng.uniform(-4, 4)
        wb = _at_arclength(pb, b0 + sb)
    else:
        raise InputError(f"unknown layout {layout!r}")
    return roads, wa, wb


def _place(rng, roads, wa, wb):
    R = _rotation(rng.uniform(0.0, 2 * math.pi))
    shift = rng.uniform(-50.0, 50.0, size=2)
    wa = _transform(wa, R, shift)
    wb = _transform(wb, R, shift)
    roads = [(_transform(p, R, shift), hw) for p, hw in roads]
    center = np.concatenate([wa, wb]).mean(axis=0)
    return roads, wa, wb, center


def _layout_weights(layout_mix):
    if layout_mix is None:
        layout_mix = {k: 1.0 for k in LAYOUTS}
    w = np.array([float(layout_mix.get(k, 0.0)) for k in LAYOUTS])
    unknown = set(layout_mix) - set(LAYOUTS)
    if unknown:
        raise InputError(f"unknown layouts {sorted(unknown)}")
    if np.any(w < 0) or w.sum() <= 0:
        raise InputError("layout weights must be non-negative and not all zero")
    return w / w.sum()


def generate_safe_record(seed, index, layout_mix=None, T=50, dt=0.1):
    rng = _record_rng(seed, index)
    probs = _layout_weights(layout_mix)
    layout = LAYOUTS[int(rng.choice(len(LAYOUTS), p=probs))]
    for _ in range(MAX_ATTEMPTS):
        roads, wa, wb = _safe_scene(rng, layout, T, dt)
        roads, wa, wb, center = _place(rng, roads, wa, wb)
        if min_distance(wa, wb) < D_SAFE:
            continue
        speeds = np.concatenate([_step_speeds(wa, dt), _step_speeds(wb, dt)])
        if speeds.min() < 2.0 or speeds.max() > 15.0:
            continue
        gm = rasterize_roads(roads, center)
        if not (gm.drivable(wa).all() and gm.drivable(wb).all()):
            continue
        return ScenarioRecord(f"safe-{seed}-{index:05d}", Trajectory(wa, dt), Trajectory(wb, dt), gm, "safe",
                              template=layout)
    raise GenerationError(f"could not generate a safe {layout!r} scenario after {MAX_ATTEMPTS} attempts")


def generate_safe_corpus(n, layout_mix=None, seed=0, T=50, dt=0.1):
    if n < 1:
        raise InputError("n must be >= 1")
    _layout_weights(layout_mix)
    return [generate_safe_record(seed, i, layout_mix, T, dt) for i in range(n)]


# ---------------------------------------------------------------------------
# collision corpus

def synthesize_collision_pair(record, collision_point, t_star, seed=None):
    """Translate both vehicles so they occupy ``collision_point`` at ``t_star``."""
    if record.label != "safe":
        raise InputError(f"{record.id}: collision synthesis needs a safe record, got {record.label!r}")
    if not 0 <= t_star < record.T:
        raise IndexError(f"t_star {t_star} outside [0, {record.T})")
    cp = np.asarray(collision_point, dtype=np.float64)
    if not record.map.drivable(cp)[0]:
        raise InputError(f"collision point {tuple(cp)} is not on a drivable cell")
    wa = record.traj_a.waypoints + (cp - record.traj_a.waypoints[t_star])
    wb = record.traj_b.waypoints + (cp - record.traj_b.waypoints[t_star])
    # pin the meeting point so rounding in the shift cannot leave a 1e-16 gap
    wa[t_star] = cp
    wb[t_star] = cp
    ta, tb = Trajectory(wa, record.dt), Trajectory(wb, record.dt)
    return ScenarioRecord(f"{record.id}-col", ta, tb, record.map, "collision", template=record.template)


def collision_time_range(T):
    lo = int(math.ceil(0.6 * T))
    hi = min(T - 1, int(math.floor(0.9 * T)))
    return lo, hi


def generate_collision_corpus(safe_records, seed=0):
    out = []
    for i, rec in enumerate(safe_records):
        rng = _record_rng(seed, i)
        lo, hi = collision_time_range(rec.T)
        t_star = int(rng.integers(lo, hi + 1))
        pa = rec.traj_a.waypoints[t_star]
        pb = rec.traj_b.waypoints[t_star]
        mid = (pa + pb) / 2.0
        cp = mid if rec.map.drivable(mid)[0] else pa
        out.append(synthesize_collision_pair(rec, cp, t_star))
    return out


# ---------------------------------------------------------------------------
# lines corpus

def line_waypoints(angle, T):
    k = np.arange(T) / (T - 1)
    return np.stack([k * math.cos(angle), k * math.sin(angle)], axis=1)


def generate_lines_corpus(n, T=16, seed=0):
    """Unit segments from the origin at uniform random angles; ``traj_b`` copies ``traj_a``."""
    if n < 1 or T < 2:
        raise InputError("need n >= 1 and T >= 2")
    gm = GridMap.all_drivable()
    out = []
    for i in range(n):
        angle = _record_rng(seed, i).uniform(0.0, 2 * math.pi)
        w = line_waypoints(angle, T)
        out.append(ScenarioRecord(f"line-{seed}-{i:05d}", Trajectory(w), Trajectory(w), gm, "safe"))
    return out


# ---------------------------------------------------------------------------
# risky scenarios

def _mdv_after_shift(wa, wb, u, shift):
    return min_distance(wa, wb + shift * u)


def _tune_shift(wa, wb, u, target, hi=10.0):
    if _mdv_after_shift(wa, wb, u, hi) < target:
        return None
    lo = 0.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if _mdv_after_shift(wa, wb, u, mid) < target:
            lo = mid
        else:
            hi = mid
    return hi


def _risky_scene(rng, template, T, dt):
    """Build a colliding configuration in a local frame.

    Returns (roads, wa, wb, u): B collides with A at step ``t_c``; shifting B
    along ``u`` opens the gap.
    """
    t_c = int(rng.integers(28, 45))
    hw = LANE_WIDTH
    sa = _speed_profile(rng, T, dt, 3.0, 6.5)
    sb = _speed_profile(rng, T, dt, 3.0, 6.5)
    if template == "head_on":
        roads = [(_line((-80.0, 0.0), (1.0, 0.0), 160.0), hw)]
        wa = np.stack([sa - sa[t_c], np.zeros(T)], axis=1)
        wb = np.stack([sb[t_c] - sb, np.zeros(T)], axis=1)
        u = np.array([0.0, 1.0])
    elif template == "intersection_crossing":
        roads = [(_line((-80.0, 0.0), (1.0, 0.0), 160.0), hw), (_line((0.0, -80.0), (0.0, 1.0), 160.0), hw)]
        wa = np.stack([sa - sa[t_c], np.zeros(T)], axis=1)
        wb = np.stack([np.zeros(T), sb - sb[t_c]], axis=1)
        u = np.array([0.0, -1.0])
    elif template == "hard_brake_follow":
        roads = [(_line((-80.0, 0.0), (1.0, 0.0), 160.0), hw)]
        v0 = rng.uniform(4.5, 6.5)
        t_brake = int(rng.integers(15, 25))
        decel = rng.uniform(4.0, 7.0)
        t = np.arange(T - 1) * dt
        va = np.where(t < t_brake * dt, v0, np.maximum(v0 - decel * (t - t_brake * dt), 0.0))
        react = rng.uniform(0.6, 1.2)
        vb0 = v0 + rng.uniform(0.0, 1.0)
        vb = np.where(t < t_brake * dt + react, vb0,
                      np.maximum(vb0 - 0.7 * decel * (t - t_brake * dt - react), 0.0))
        xa = np.concatenate([[0.0], np.cumsum(va * dt)])
        xb = np.concatenate([[0.0], np.cumsum(vb * dt)])
        k = int(np.argmin(xa - xb))
        xb = xb + (xa[k] - xb[k])
        wa = np.stack([xa, np.zeros(T)], axis=1)
        wb = np.stack([xb, np.zeros(T)], axis=1)
        u = np.array([-1.0, 0.0])
    elif template == "cut_in":
        roads = [(_line((-80.0, 1.75), (1.0, 0.0), 160.0), hw)]
        xa = sa - sa[t_c]
        xb = 0.8 * (sb - sb[t_c])
        span = int(rng.integers(15, 25))
        t0 = max(0, t_c - span)
        phase = np.clip((np.arange(T) - t0) / max(1, t_c - t0), 0.0, 1.0)
        yb = LANE_WIDTH * 0.5 * (1.0 + np.cos(math.pi * phase))
        wa = np.stack([xa, np.zeros(T)], axis=1)
        wb = np.stack([xb, yb], axis=1)
        u = np.array([1.0, 0.0])
    elif template == "merge_squeeze":
        ang = math.radians(rng.uniform(12.0, 25.0))
        ramp_dir = np.array([math.cos(ang), math.sin(ang)])
        ramp = np.concatenate([-ramp_dir[None] * np.arange(80.0, 0.0, -1.0)[:, None], _line((0.0, 0.0), (1.0, 0.0), 80.0)])
        roads = [(_line((-80.0, 0.0), (1.0, 0.0), 160.0), hw), (ramp, hw)]
        wa = np.stack([sa - sa[t_c], np.zeros(T)], axis=1)
        lb = _polyline_lengths(ramp)
        wb = _at_arclength(ramp, lb[80] + sb - sb[t_c])
        u = np.array([1.0, 0.0])
    elif template == "left_turn_across_path":
        radius = rng.uniform(6.0, 9.0)
        roads = [(_line((-80.0, 0.0), (1.0, 0.0), 160.0), hw), (_line((0.0, -80.0), (0.0, 1.0), 80.0), hw)]
        # B approaches heading -x in the upper lane and turns left towards -y
        cx, cy = 1.75 + 0.0, 1.75 - radius
        approach = _line((60.0, 1.75), (-1.0, 0.0), 60.0 - cx)
        turn = _arc((cx, cy), radius, math.pi / 2, math.pi / 2)
        exit_leg = _line((cx - radius, cy), (0.0, -1.0), 60.0)
        pb = np.concatenate([approach, turn[1:], exit_leg[1:]])
        # conflict where B's path crosses A's lane (y = -1.75)
        lb = _polyline_lengths(pb)
        below = np.nonzero(pb[:, 1] <= -1.75)[0][0]
        f = (pb[below - 1, 1] + 1.75) / (pb[below - 1, 1] - pb[below, 1])
        s_conf = lb[below - 1] + f * (lb[below] - lb[below - 1])
        conflict = _at_arclength(pb, np.array([s_conf]))[0]
        wb = _at_arclength(pb, s_conf + sb - sb[t_c])
        wa = np.stack([conflict[0] + sa - sa[t_c], np.full(T, -1.75)], axis=1)
        u = np.array([1.0, 1.0]) / math.sqrt(2.0)
    else:
        raise InputError(f"unknown risky template {template!r}")
    return roads, wa, wb, u


def generate_risky_record(template, seed, index, T=50, dt=0.1):
    rng = _record_rng(seed, index)
    for _ in range(MAX_ATTEMPTS):
        roads, wa, wb, u = _risky_scene(rng, template, T, dt)
        target = rng.uniform(0.3, 1.4)
        shift = _tune_shift(wa, wb, u, target)
        if shift is None:
            continue
        wb = wb + shift * u
        roads, wa, wb, center = _place(rng, roads, wa, wb)
        d = min_distance(wa, wb)
        if not 0.2 < d < 1.5:
            continue
        gm = rasterize_roads(roads, center)
        return ScenarioRecord(f"risky-{template}-{seed}-{index:04d}", Trajectory(wa, dt), Trajectory(wb, dt),
                              gm, "risky", template=template)
    raise GenerationError(f"could not generate a {template!r} scenario after {MAX_ATTEMPTS} attempts")


def generate_risky_scenarios(per_template, seed=0, T=50, dt=0.1):
    if per_template < 1:
        raise InputError("per_template must be >= 1")
    out = []
    for k, template in enumerate(RISKY_TEMPLATES):
        for i in range(per_template):
            out.append(generate_risky_record(template, seed, k * 100000 + i, T, dt))
    return out


# ---------------------------------------------------------------------------
# perturbation baseline

def arclength_fractions(w):
    cum = _polyline_lengths(w)
    if cum[-1] <= 0:
        return np.linspace(0.0, 1.0, len(w))
    return cum / cum[-1]


def perturb_trajectory(traj, magnitude, seed=0):
    """Pin the endpoints, move the midpoint by a random vector of norm <= ``magnitude``
    and spread the displacement with the minimum-norm cubic through the three poses."""
    if traj.T < 3:
        raise ShapeError("perturbation needs at least 3 waypoints")
    if magnitude < 0:
        raise InputError("magnitude must be non-negative")
    rng = np.random.default_rng(seed)
    w = traj.waypoints
    mid = traj.T // 2
    r = magnitude * math.sqrt(rng.random())
    phi = rng.uniform(0.0, 2 * math.pi)
    delta = np.array([r * math.cos(phi), r * math.sin(phi)])
    u = arclength_fractions(w)
    knots = np.array([0.0, u[mid], 1.0])
    V = np.vander(knots, 4, increasing=True)
    target = np.stack([np.zeros(2), delta, np.zeros(2)])
    coef = np.linalg.lstsq(V, target, rcond=None)[0]
    disp = np.vander(u, 4, increasing=True) @ coef
    out = w + disp
    out[0] = w[0]
    out[-1] = w[-1]
    out[mid] = w[mid] + delta
    return Trajectory(out, traj.dt)


def perturb_record(record, magnitude, seed, index=0):
    sa, sb = np.random.SeedSequence([int(seed), int(index)]).generate_state(2)
    return ScenarioRecord(f"{record.id}-pert", perturb_trajectory(record.traj_a, magnitude, int(sa)),
                          perturb_trajectory(record.traj_b, magnitude, int(sb)), record.map, "synthetic",
                          template=record.template)


# ---------------------------------------------------------------------------
# file format

def record_to_dict(rec):
    d = {"id": rec.id, "label": rec.label}
    if rec.template is not None:
        d["template"] = rec.template
    d["dt"] = rec.dt
    d["traj_a"] = rec.traj_a.waypoints.tolist()
    d["traj_b"] = rec.traj_b.waypoints.tolist()
    m = rec.map
    d["map"] = {"width": m.width, "height": m.height, "resolution": m.resolution,
                "origin": [m.origin[0], m.origin[1]], "cells": m.cells.ravel().tolist()}
    return d


_REQUIRED = ("id", "label", "dt", "traj_a", "traj_b", "map")
_MAP_KEYS = ("width", "height", "resolution", "origin", "cells")


def record_from_dict(d):
    """Schema problems raise ParseError, broken invariants ValidationError."""
    missing = [k for k in _REQUIRED if k not in d]
    if missing:
        raise ParseError(f"missing field(s) {', '.join(repr(k) for k in missing)}")
    extra = set(d) - set(_REQUIRED) - {"template"}
    if extra:
        raise ParseError(f"unexpected field(s) {sorted(extra)}")
    m = d["map"]
    if not isinstance(m, dict) or any(k not in m for k in _MAP_KEYS):
        raise ParseError("map must be an object with width, height, resolution, origin, cells")
    try:
        gm = GridMap(int(m["width"]), int(m["height"]), float(m["resolution"]), tuple(m["origin"]),
                     np.asarray(m["cells"]))
        dt = float(d["dt"])
        ta = Trajectory(np.asarray(d["traj_a"], dtype=np.float64), dt)
        tb = Trajectory(np.asarray(d["traj_b"], dtype=np.float64), dt)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ValidationError):
            raise
        raise ValidationError(str(exc)) from exc
    return ScenarioRecord(str(d["id"]), ta, tb, gm, d["label"], d.get("template"))


def dumps_record(rec):
    return json.dumps(record_to_dict(rec), separators=(",", ":"))


def store_dataset(records, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(FORMAT_HEADER, separators=(",", ":")) + "\n")
        for rec in records:
            fh.write(dumps_record(rec) + "\n")


def load_dataset(path):
    records = []
    with open(path, encoding="utf-8") as fh:
        header_seen = False
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON ({exc.msg})", lineno) from exc
            if not isinstance(obj, dict):
                raise ParseError("expected a JSON object", lineno)
            if not header_seen:
                if obj.get("format") != "cmts-dataset":
                    raise ParseError("missing cmts-dataset header", lineno)
                if obj.get("version") != FORMAT_HEADER["version"]:
                    raise VersionError(f"line {lineno}: unsupported dataset version {obj.get('version')!r}")
                header_seen = True
                continue
            try:
                records.append(record_from_dict(obj))
            except ParseError as exc:
                raise ParseError(str(exc), lineno) from exc
            except ValidationError as exc:
                raise ValidationError(f"line {lineno}: {exc}") from exc
    if not header_seen:
        raise ParseError("empty file: missing cmts-dataset header", 1)
    return records
