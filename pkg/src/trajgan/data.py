"""Trajectory data: ETH/UCY text files, scene windows, synthetic crowds.

Text format: one observation per line, whitespace separated::

    <frame> <agent id> <x metres> <y metres>

Frames are integers (a trailing ``.0`` is accepted). The agent id ``-1`` is
reserved for the single vehicle of a scene; everything else is a pedestrian.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

VEHICLE_ID = -1


class TrajectoryParseError(ValueError):
    def __init__(self, path, lineno, msg):
        super().__init__(f"{path}:{lineno}: {msg}")
        self.path = path
        self.lineno = lineno


@dataclass
class RawTrack:
    agent_id: int
    frames: np.ndarray   # (n,) int, strictly increasing
    xy: np.ndarray       # (n, 2)

    def __len__(self):
        return len(self.frames)


@dataclass
class Scene:
    peds: np.ndarray                 # (N, T, 2)
    vehicle: np.ndarray | None       # (T, 2)
    frames: np.ndarray               # (T,)
    agent_ids: np.ndarray            # (N,)
    dt: float = 0.4
    source: str = ""

    @property
    def n_agents(self):
        return self.peds.shape[0]

    @property
    def n_frames(self):
        return self.peds.shape[1]


def validate_scene(scene):
    """Raise ValueError unless every agent (and the vehicle) is present and finite at every frame."""
    peds = np.asarray(scene.peds)
    if peds.ndim != 3 or peds.shape[2] != 2 or peds.shape[0] < 1:
        raise ValueError(f"scene pedestrians must be (N>=1, T, 2), got {peds.shape}")
    if peds.shape[1] != len(scene.frames):
        raise ValueError("frame list does not match trajectory length")
    if not np.all(np.isfinite(peds)):
        raise ValueError("scene has missing pedestrian positions")
    if scene.vehicle is not None:
        v = np.asarray(scene.vehicle)
        if v.shape != (peds.shape[1], 2) or not np.all(np.isfinite(v)):
            raise ValueError("vehicle track must cover every frame of the scene")
    if len(scene.frames) > 1 and np.any(np.diff(scene.frames) <= 0):
        raise ValueError("scene frames must be strictly increasing")
    return scene


# -- ETH / UCY text files -----------------------------------------------------

def load_ethucy(path):
    """Read a trajectory text file into tracks sorted by agent id then frame."""
    rows = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if len(parts) != 4:
                raise TrajectoryParseError(path, lineno, f"expected 4 fields, found {len(parts)}")
            try:
                frame_f, aid_f, x, y = (float(p) for p in parts)
            except ValueError:
                raise TrajectoryParseError(path, lineno, f"non-numeric field in {line.strip()!r}") from None
            if not (math.isfinite(x) and math.isfinite(y)):
                raise TrajectoryParseError(path, lineno, "non-finite position")
            if frame_f != int(frame_f) or aid_f != int(aid_f):
                raise TrajectoryParseError(path, lineno, "frame and agent id must be integers")
            rows.setdefault(int(aid_f), []).append((int(frame_f), x, y))
    tracks = []
    for aid in sorted(rows):
        obs = sorted(rows[aid])
        frames = np.array([o[0] for o in obs], dtype=np.int64)
        if np.any(np.diff(frames) == 0):
            dup = int(frames[np.flatnonzero(np.diff(frames) == 0)[0]])
            raise TrajectoryParseError(path, 0, f"agent {aid} has two rows for frame {dup}")
        tracks.append(RawTrack(aid, frames, np.array([[o[1], o[2]] for o in obs])))
    return tracks


def infer_frame_step(tracks):
    """Most common positive frame difference within tracks (smallest on ties)."""
    diffs = np.concatenate([np.diff(t.frames) for t in tracks if len(t) > 1] or [np.array([], dtype=np.int64)])
    diffs = diffs[diffs > 0]
    if diffs.size == 0:
        return 1
    vals, counts = np.unique(diffs, return_counts=True)
    return int(vals[np.argmax(counts)])


def downsample(tracks, factor, frame_step=None):
    """Keep every ``factor``-th grid frame (integer frame skip)."""
    if factor == 1:
        return list(tracks)
    step = frame_step or infer_frame_step(tracks)
    start = min(int(t.frames[0]) for t in tracks if len(t))
    out = []
    for t in tracks:
        keep = (t.frames - start) % (step * factor) == 0
        out.append(RawTrack(t.agent_id, t.frames[keep], t.xy[keep]))
    return out


def window_scenes(tracks, obs_len, pred_len, stride=1, frame_step=None, dt=0.4, source=""):
    """Cut tracks into fixed-length scene windows.

    Windows slide over a frame grid of spacing ``frame_step`` (inferred when
    omitted). A pedestrian is kept only if present at every frame of the
    window; a vehicle (id -1) is attached only when likewise complete.
    Windows with no complete pedestrian are dropped.
    """
    if obs_len < 1 or pred_len < 1 or stride < 1:
        raise ValueError("obs_len, pred_len and stride must be >= 1")
    tracks = [t for t in tracks if len(t)]
    if not tracks:
        return []
    step = frame_step or infer_frame_step(tracks)
    lo = min(int(t.frames[0]) for t in tracks)
    hi = max(int(t.frames[-1]) for t in tracks)
    n_grid = (hi - lo) // step + 1
    length = obs_len + pred_len

    ped_ids, vehicle = [], None
    grid_pos = {}
    for t in tracks:
        on_grid = (t.frames - lo) % step == 0
        idx = (t.frames[on_grid] - lo) // step
        arr = np.full((n_grid, 2), np.nan)
        arr[idx] = t.xy[on_grid]
        if t.agent_id == VEHICLE_ID:
            vehicle = arr
        else:
            grid_pos[t.agent_id] = arr
            ped_ids.append(t.agent_id)
    ped_ids.sort()
    ped_arr = np.stack([grid_pos[a] for a in ped_ids]) if ped_ids else np.zeros((0, n_grid, 2))
    present = np.all(np.isfinite(ped_arr), axis=2)   # (N, n_grid)

    scenes = []
    for s in range(0, n_grid - length + 1, stride):
        full = np.all(present[:, s:s + length], axis=1)
        if not np.any(full):
            continue
        veh = None
        if vehicle is not None and np.all(np.isfinite(vehicle[s:s + length])):
            veh = vehicle[s:s + length].copy()
        scenes.append(Scene(
            peds=ped_arr[full, s:s + length].copy(),
            vehicle=veh,
            frames=lo + step * np.arange(s, s + length),
            agent_ids=np.asarray(ped_ids)[full],
            dt=dt,
            source=source,
        ))
    return scenes


def scene_windows(scenes, obs_len, pred_len, stride=1):
    """Cut each (longer) scene into fixed-length windows, never across scenes."""
    out = []
    for scene in scenes:
        tracks = [RawTrack(int(a), np.asarray(scene.frames), np.asarray(p)) for a, p in zip(scene.agent_ids, scene.peds)]
        if scene.vehicle is not None:
            tracks.append(RawTrack(VEHICLE_ID, np.asarray(scene.frames), np.asarray(scene.vehicle)))
        step = int(scene.frames[1] - scene.frames[0]) if len(scene.frames) > 1 else 1
        out.extend(window_scenes(tracks, obs_len, pred_len, stride, step, scene.dt, scene.source))
    return out


def scenes_to_tracks(scenes, frame_step=10, gap=1):
    """Lay scenes end to end on one frame axis with fresh agent ids.

    Consecutive scenes are separated by ``gap`` empty grid frames so no
    window can straddle two scenes.
    """
    tracks = []
    next_id = 0
    veh_frames, veh_xy = [], []
    cursor = 0
    for scene in scenes:
        n_t = scene.n_frames
        frames = frame_step * (cursor + np.arange(n_t))
        for i in range(scene.n_agents):
            tracks.append(RawTrack(next_id, frames.copy(), np.asarray(scene.peds[i], dtype=np.float64)))
            next_id += 1
        if scene.vehicle is not None:
            veh_frames.append(frames)
            veh_xy.append(np.asarray(scene.vehicle, dtype=np.float64))
        cursor += n_t + gap
    if veh_frames:
        tracks.append(RawTrack(VEHICLE_ID, np.concatenate(veh_frames), np.concatenate(veh_xy)))
    return tracks


def write_tracks(tracks, path):
    """Write tracks in the text format, sorted by frame then agent id."""
    rows = []
    for t in tracks:
        for f, (x, y) in zip(t.frames, t.xy):
            rows.append((int(f), int(t.agent_id), float(x), float(y)))
    rows.sort(key=lambda r: (r[0], r[1]))
    with open(path, "w", encoding="utf-8") as fh:
        for f, a, x, y in rows:
            fh.write(f"{f}\t{a}\t{x:.10f}\t{y:.10f}\n")
    return len(rows)


def split_contiguous(items, ratios=(0.6, 0.2, 0.2)):
    """Split an ordered sequence into contiguous blocks by ratio."""
    n = len(items)
    cuts = np.floor(np.cumsum(ratios)[:-1] / np.sum(ratios) * n).astype(int)
    bounds = [0, *cuts.tolist(), n]
    return [items[bounds[i]:bounds[i + 1]] for i in range(len(ratios))]


# -- augmentation -------------------------------------------------------------

def flip_scene(scene, axis):
    """Mirror a scene: axis 'x' negates y (mirror about the x-axis), 'y' negates x."""
    if axis is None:
        return scene
    sign = np.array([1.0, -1.0]) if axis == "x" else np.array([-1.0, 1.0])
    veh = None if scene.vehicle is None else np.asarray(scene.vehicle) * sign
    return replace(scene, peds=np.asarray(scene.peds) * sign, vehicle=veh)


FLIP_CHOICES = (None, "x", "y")


def augment_flip(scenes, seed):
    """Independently leave each scene unchanged or mirror it about x or y, uniformly."""
    rng = np.random.default_rng(seed)
    picks = rng.integers(0, 3, size=len(scenes))
    return [flip_scene(s, FLIP_CHOICES[p]) for s, p in zip(scenes, picks)]


# -- synthetic social-force crowds --------------------------------------------

TEMPLATES = ("head_on", "crossing", "group_crossing", "vehicle_behind")


@dataclass
class SfmConfig:
    goal_gain: float = 2.0            # 1/s, relaxation rate towards desired velocity
    ped_repulsion: float = 10.0       # m/s^2
    ped_range: float = 0.5            # m, exponential decay length
    vehicle_repulsion: float = 8.0    # m/s^2
    vehicle_range: float = 1.0        # m
    preferred_speed: float = 1.3      # m/s
    speed_spread: float = 0.15        # fractional per-agent speed variation
    vehicle_speed: float = 3.0        # m/s
    frame_dt: float = 0.4             # s between recorded frames
    substeps: int = 8                 # Euler steps per recorded frame
    n_frames: int = 20
    arena: float = 8.0                # m, half-width of the spawn area
    frame_step: int = 10              # frame-number spacing in written files
    mix: dict = field(default_factory=lambda: {"head_on": 1, "crossing": 1, "group_crossing": 1})
    seed: int = 0

    def validate(self):
        for name in ("goal_gain", "ped_repulsion", "ped_range", "vehicle_repulsion", "vehicle_range",
                     "preferred_speed", "frame_dt", "arena"):
            if not getattr(self, name) > 0:
                raise ValueError(f"SfmConfig.{name} must be positive")
        if self.substeps < 1 or self.n_frames < 1:
            raise ValueError("substeps and n_frames must be >= 1")
        unknown = set(self.mix) - set(TEMPLATES)
        if unknown:
            raise ValueError(f"unknown scene templates: {sorted(unknown)}")
        if not self.mix or sum(self.mix.values()) <= 0:
            raise ValueError("template mix must have positive total weight")
        return self


def simulate(cfg, start, vel, goals, speeds, vehicle=None):
    """Euler-integrate goal attraction plus exponential repulsion.

    ``vehicle`` is an optional (start, velocity) pair; the vehicle moves at
    constant velocity. Returns recorded pedestrian positions (N, n_frames, 2)
    and the vehicle track (n_frames, 2) or None.
    """
    pos = np.array(start, dtype=np.float64)
    v = np.array(vel, dtype=np.float64)
    goals = np.asarray(goals, dtype=np.float64)
    speeds = np.asarray(speeds, dtype=np.float64)
    n = pos.shape[0]
    h = cfg.frame_dt / cfg.substeps
    vpos = None if vehicle is None else np.array(vehicle[0], dtype=np.float64)
    vvel = None if vehicle is None else np.array(vehicle[1], dtype=np.float64)
    out = np.empty((n, cfg.n_frames, 2))
    vout = None if vehicle is None else np.empty((cfg.n_frames, 2))
    for f in range(cfg.n_frames):
        out[:, f] = pos
        if vout is not None:
            vout[f] = vpos
        if f == cfg.n_frames - 1:
            break
        for _ in range(cfg.substeps):
            to_goal = goals - pos
            dist = np.linalg.norm(to_goal, axis=1, keepdims=True)
            desired = np.where(dist > 1e-9, to_goal / np.maximum(dist, 1e-12), 0.0) * speeds[:, None]
            force = cfg.goal_gain * (desired - v)
            if n > 1:
                diff = pos[:, None, :] - pos[None, :, :]
                d = np.linalg.norm(diff, axis=2)
                np.fill_diagonal(d, np.inf)
                mag = cfg.ped_repulsion * np.exp(-d / cfg.ped_range)
                force += np.sum(mag[:, :, None] * diff / np.where(np.isinf(d), 1.0, d)[:, :, None], axis=1)
            if vpos is not None:
                dv = pos - vpos
                dd = np.maximum(np.linalg.norm(dv, axis=1, keepdims=True), 1e-9)
                force += cfg.vehicle_repulsion * np.exp(-dd / cfg.vehicle_range) * dv / dd
            v = v + h * force
            pos = pos + h * v
            if vpos is not None:
                vpos = vpos + h * vvel
    return out, vout


def _template_counts(mix, n):
    names = [t for t in TEMPLATES if mix.get(t, 0) > 0]
    w = np.array([mix[t] for t in names], dtype=np.float64)
    raw = w / w.sum() * n
    counts = np.floor(raw).astype(int)
    rem = n - counts.sum()
    order = np.argsort(-(raw - counts), kind="stable")
    counts[order[:rem]] += 1
    return dict(zip(names, counts.tolist()))


def _rotation(theta):
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def _template_scene(cfg, rng, name, with_vehicle):
    L = cfg.arena
    travel = cfg.preferred_speed * cfg.frame_dt * (cfg.n_frames - 1)
    half = 0.5 * travel
    vehicle = None
    if name == "head_on":
        lateral = rng.choice([-1.0, 1.0]) * rng.uniform(0.1, 0.5)
        start = [[-half, 0.0], [half, lateral]]
        goals = [[half + L, 0.0], [-half - L, lateral]]
    elif name == "crossing":
        start = [[-half, 0.0], [rng.uniform(-0.5, 0.5), -half * rng.uniform(0.8, 1.2)]]
        goals = [[half + L, 0.0], [start[1][0], half + L]]
    elif name == "group_crossing":
        n_a = int(rng.integers(2, 4))
        n_b = int(rng.integers(1, 3))
        start, goals = [], []
        for i in range(n_a):
            y = (i - (n_a - 1) / 2) * 0.8 + rng.uniform(-0.1, 0.1)
            x = -half + rng.uniform(-0.3, 0.3)
            start.append([x, y])
            goals.append([half + L, y])
        for i in range(n_b):
            x = (i - (n_b - 1) / 2) * 0.8 + rng.uniform(-0.3, 0.3)
            y = half * rng.uniform(0.8, 1.2)
            start.append([x, y])
            goals.append([x, -half - L])
    elif name == "vehicle_behind":
        n_p = int(rng.integers(1, 4))
        start, goals = [], []
        for i in range(n_p):
            y = (i - (n_p - 1) / 2) * 1.0 + rng.uniform(-0.2, 0.2)
            x = -half + rng.uniform(-0.5, 0.5)
            start.append([x, y])
            goals.append([half + L, y])
        closing = max(cfg.vehicle_speed - cfg.preferred_speed, 0.5)
        lag = closing * cfg.frame_dt * cfg.n_frames * rng.uniform(0.45, 0.7)
        vehicle = (np.array([-half - lag, rng.uniform(-0.6, 0.6)]), np.array([cfg.vehicle_speed, 0.0]))
    else:
        raise ValueError(f"unknown template {name!r}")

    start = np.asarray(start, dtype=np.float64)
    goals = np.asarray(goals, dtype=np.float64)
    if with_vehicle and vehicle is None:
        y0 = rng.choice([-1.0, 1.0]) * rng.uniform(2.5, 4.0)
        vehicle = (np.array([-half - L, y0]), np.array([cfg.vehicle_speed, 0.0]))
    n = start.shape[0]
    speeds = cfg.preferred_speed * (1.0 + cfg.speed_spread * rng.uniform(-1.0, 1.0, size=n))
    heading = goals - start
    heading /= np.linalg.norm(heading, axis=1, keepdims=True)
    vel = heading * speeds[:, None] * rng.uniform(0.6, 1.0, size=(n, 1))

    rot = _rotation(rng.uniform(0.0, 2 * math.pi))
    shift = rng.uniform(-L, L, size=2)
    start = start @ rot.T + shift
    goals = goals @ rot.T + shift
    vel = vel @ rot.T
    if vehicle is not None:
        vehicle = (vehicle[0] @ rot.T + shift, vehicle[1] @ rot.T)
    peds, vtrack = simulate(cfg, start, vel, goals, speeds, vehicle)
    return peds, vtrack


def generate_sfm(config, n_scenes, with_vehicle=False):
    """Sample synthetic scenes from the template mix, deterministically per seed.

    With ``with_vehicle`` every scene carries a vehicle track: the
    ``vehicle_behind`` template drives it up behind the pedestrians, other
    templates get a vehicle passing at a distance.
    """
    cfg = config.validate()
    if not with_vehicle and cfg.mix.get("vehicle_behind", 0) > 0:
        raise ValueError("template 'vehicle_behind' requires with_vehicle=True")
    rng = np.random.default_rng(cfg.seed)
    counts = _template_counts(cfg.mix, n_scenes)
    names = [name for name, c in counts.items() for _ in range(c)]
    order = rng.permutation(len(names))
    scenes = []
    frames = cfg.frame_step * np.arange(cfg.n_frames)
    for idx in order:
        name = names[idx]
        peds, veh = _template_scene(cfg, rng, name, with_vehicle)
        scenes.append(Scene(peds=peds, vehicle=veh, frames=frames.copy(),
                            agent_ids=np.arange(peds.shape[0]), dt=cfg.frame_dt, source=name))
    return scenes
