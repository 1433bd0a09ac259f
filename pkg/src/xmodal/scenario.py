"""Synthetic multi-agent driving scenes and their two geometric views.

A scenario holds K agent tracks in a world frame plus ego poses and a
rasterized semantic grid, split into tau observation steps and delta
prediction steps. Rendering re-expresses everything in the rigid frame of
the ego at the first observation step, so transformed coordinates are
independent of later (unknown) ego motion, and then projects into either a
top-down metric raster or a frontal pinhole image plane.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ScenarioError",
    "ScenarioFormatError",
    "AGENT_CLASSES",
    "AgentTrack",
    "EgoPose",
    "StaticMap",
    "Scenario",
    "GenConfig",
    "generate_scenario",
    "ego_future_eliminate",
    "project_topdown",
    "FrontalCamera",
    "project_frontal",
    "ModalityView",
    "build_view",
    "MODALITIES",
    "save_scenarios",
    "load_scenarios",
    "TOPDOWN_CELLS",
    "TOPDOWN_CELL_M",
]


class ScenarioError(ValueError):
    """Infeasible generation config or inconsistent scenario data."""


class ScenarioFormatError(ValueError):
    """Scenario file violates the JSONL schema."""


# per-class speed caps, m/s
AGENT_CLASSES = {"vehicle": 15.0, "pedestrian": 2.0, "cyclist": 6.0}

# semantic labels of the static grid
LABEL_OFFROAD, LABEL_ROAD, LABEL_SIDEWALK = 0, 1, 2

# top-down extent: 80 m longitudinal, +-40 m lateral, 0.5 m cells -> 160x160
TOPDOWN_CELLS = 160
TOPDOWN_CELL_M = 0.5
TOPDOWN_LON_M = 80.0
TOPDOWN_LAT_M = 40.0

FRONTAL_WIDTH = 414
FRONTAL_HEIGHT = 125

MODALITIES = ("topdown", "frontal")


@dataclass
class AgentTrack:
    agent_id: int
    agent_class: str
    xy: np.ndarray  # (tau+delta, 2) world meters

    def __post_init__(self):
        self.xy = np.asarray(self.xy, dtype=np.float64)
        if self.agent_class not in AGENT_CLASSES:
            raise ScenarioError(f"unknown agent class {self.agent_class!r}")
        if not np.all(np.isfinite(self.xy)):
            raise ScenarioError(f"agent {self.agent_id}: non-finite positions")

    def __eq__(self, other):
        return (
            self.agent_id == other.agent_id
            and self.agent_class == other.agent_class
            and np.array_equal(self.xy, other.xy)
        )


@dataclass
class EgoPose:
    poses: np.ndarray  # (tau+delta, 3): x, y, heading

    def __post_init__(self):
        self.poses = np.asarray(self.poses, dtype=np.float64)
        if self.poses.ndim != 2 or self.poses.shape[1] != 3:
            raise ScenarioError(f"ego poses must be (T, 3), got {self.poses.shape}")

    def __eq__(self, other):
        return np.array_equal(self.poses, other.poses)


@dataclass
class StaticMap:
    labels: np.ndarray  # (h, w) int, row = longitudinal cell, col = lateral cell
    cell_m: float = TOPDOWN_CELL_M

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)

    def __eq__(self, other):
        return self.cell_m == other.cell_m and np.array_equal(self.labels, other.labels)


@dataclass
class Scenario:
    tau: int
    delta: int
    dt: float
    tracks: list
    ego: EgoPose
    static_map: StaticMap
    seed: int
    target: int = 0

    @property
    def steps(self):
        return self.tau + self.delta

    @property
    def n_agents(self):
        return len(self.tracks)

    def validate(self):
        if self.n_agents < 1:
            raise ScenarioError("scenario needs at least one agent")
        if not (0 <= self.target < self.n_agents):
            raise ScenarioError(f"target index {self.target} out of range")
        if self.ego.poses.shape[0] != self.steps:
            raise ScenarioError("ego poses must cover every step")
        for tr in self.tracks:
            if tr.xy.shape != (self.steps, 2):
                raise ScenarioError(f"agent {tr.agent_id}: track length != tau+delta")
            step_len = np.linalg.norm(np.diff(tr.xy, axis=0), axis=1)
            cap = AGENT_CLASSES[tr.agent_class] * self.dt
            if np.any(step_len > cap + 1e-9):
                raise ScenarioError(
                    f"agent {tr.agent_id}: displacement exceeds v_max*dt for class "
                    f"{tr.agent_class}"
                )
        return self

    def __eq__(self, other):
        return (
            (self.tau, self.delta, self.dt, self.seed, self.target)
            == (other.tau, other.delta, other.dt, other.seed, other.target)
            and self.ego == other.ego
            and self.static_map == other.static_map
            and len(self.tracks) == len(other.tracks)
            and all(a == b for a, b in zip(self.tracks, other.tracks))
        )


# ---------------------------------------------------------------------------
# geometry
# ---------------------------------------------------------------------------


def _rigid_inverse_apply(points, pose):
    """Express world points in the rigid frame given by pose (x, y, heading)."""
    x, y, th = pose
    c, s = np.cos(th), np.sin(th)
    p = np.asarray(points, dtype=np.float64) - np.array([x, y])
    # rotate by -heading
    return np.stack([c * p[..., 0] + s * p[..., 1], -s * p[..., 0] + c * p[..., 1]], axis=-1)


def ego_future_eliminate(points, ego):
    """Transform world points into the ego frame at the first observation step.

    The transform depends on the ego pose at step 1 only, so perturbing ego
    poses at steps >= 2 leaves the output bitwise unchanged, and a point
    fixed in the world maps to the same coordinates at every step.
    """
    poses = ego.poses if isinstance(ego, EgoPose) else np.asarray(ego, dtype=np.float64)
    if poses.ndim == 1:
        first = poses
    else:
        first = poses[0]
    return _rigid_inverse_apply(points, first)


def project_topdown(points):
    """Map ego-frame metric points to top-down cell coordinates.

    cell = floor(offset / 0.5) with the ego anchored at the mid-lateral,
    near-longitudinal edge: point (0, 0) -> cell (0, 80). Out-of-extent
    points are flagged, not clamped.

    Returns ``(cells, on_raster)`` with cells as (..., 2) int arrays of
    (longitudinal, lateral) indices.
    """
    p = np.asarray(points, dtype=np.float64)
    row = np.floor(p[..., 0] / TOPDOWN_CELL_M).astype(np.int64)
    col = np.floor((p[..., 1] + TOPDOWN_LAT_M) / TOPDOWN_CELL_M).astype(np.int64)
    ok = (row >= 0) & (row < TOPDOWN_CELLS) & (col >= 0) & (col < TOPDOWN_CELLS)
    return np.stack([row, col], axis=-1), ok


@dataclass(frozen=True)
class FrontalCamera:
    """Pinhole camera fixed at the ego t=1 frame origin, looking along +x."""

    fu: float = 120.0
    fv: float = 120.0
    cu: float = 207.0
    cv: float = 62.5
    width: int = FRONTAL_WIDTH
    height: int = FRONTAL_HEIGHT
    mount_height: float = 1.6  # meters above ground

    def __post_init__(self):
        if not (0 <= self.cu < self.width and 0 <= self.cv < self.height):
            raise ScenarioError("principal point must lie within the image plane")


def project_frontal(points3, camera: FrontalCamera = FrontalCamera()):
    """Pinhole projection of ego-frame 3D points (x forward, y left, z up).

    u = fu * x_cam / depth + cu, v = fv * y_cam / depth + cv, with image x
    to the right (-y) and image y downward. Non-positive depth is flagged
    as unprojectable (pixel values are meaningless there).

    Returns ``(uv, projectable)``.
    """
    p = np.asarray(points3, dtype=np.float64)
    depth = p[..., 0]
    ok = depth > 0.0
    safe = np.where(ok, depth, 1.0)
    u = camera.fu * (-p[..., 1]) / safe + camera.cu
    v = camera.fv * (camera.mount_height - p[..., 2]) / safe + camera.cv
    return np.stack([u, v], axis=-1), ok


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------


@dataclass
class GenConfig:
    n_agents_min: int = 2
    n_agents_max: int = 4
    k_max: int = 8
    dt: float = 0.4
    tau: int = 5
    delta: int = 10
    speed_scale: float = 1.5     # global multiplier on sampled agent speeds
                                 # (the simulator clamps at the class caps)
    repulsion_radius: float = 1.0
    # at the prediction boundary every agent re-samples its goal direction
    # (uniform within +- this angle) and its cruise speed, so the future is
    # genuinely multi-modal given the past; 0 keeps headings deterministic
    maneuver_angle: float = 1.3
    class_probs: dict = field(
        default_factory=lambda: {"vehicle": 0.7, "pedestrian": 0.1, "cyclist": 0.2}
    )

    def validate(self):
        if not (1 <= self.n_agents_min <= self.n_agents_max <= self.k_max):
            raise ScenarioError(
                f"need 1 <= n_agents_min <= n_agents_max <= k_max, got "
                f"{self.n_agents_min}..{self.n_agents_max} (k_max={self.k_max})"
            )
        if self.dt <= 0:
            raise ScenarioError("dt must be positive")
        if self.repulsion_radius <= 0:
            raise ScenarioError("repulsion_radius must be positive")
        return self


# spawn/goal region keeping past positions inside both rasters (with margin
# for motion during the tau observation steps)
_X_MIN, _X_MAX = 8.0, 50.0
_LAT_FRAC, _LAT_MAX = 0.45, 25.0


def _in_safe_region(p):
    return (_X_MIN <= p[0] <= _X_MAX) and abs(p[1]) <= min(_LAT_FRAC * p[0], _LAT_MAX)


def _clip_to_safe_region(p):
    x = float(np.clip(p[0], _X_MIN, _X_MAX))
    lat = min(_LAT_FRAC * x, _LAT_MAX)
    return np.array([x, float(np.clip(p[1], -lat, lat))])


def simulate_tracks(spawns, goals, speeds, classes, steps, dt, radius):
    """Waypoint-following kinematics with pairwise repulsion.

    Inverse-square repulsion steers agents apart; a hard projection pass
    separates any residual overlap, and agents whose pair still violates the
    radius are reverted to their previous (valid) position. Consequently the
    minimum pairwise distance stays >= radius at every recorded step and
    per-step displacement never exceeds the class speed cap times dt.
    """
    k = len(spawns)
    pos = np.array(spawns, dtype=np.float64)
    caps = np.array([AGENT_CLASSES[c] for c in classes])
    out = np.empty((k, steps, 2))
    out[:, 0] = pos
    goals = np.array(goals, dtype=np.float64)
    for t in range(1, steps):
        vel = np.zeros((k, 2))
        for i in range(k):
            to_goal = goals[i] - pos[i]
            dist = np.linalg.norm(to_goal)
            if dist > 1e-12:
                v = min(speeds[i], dist / dt)
                vel[i] = to_goal / dist * v
        # soft inverse-square repulsion
        for i in range(k):
            for j in range(i + 1, k):
                d_vec = pos[i] - pos[j]
                d = np.linalg.norm(d_vec)
                if d < 4.0 * radius and d > 1e-12:
                    push = d_vec / d * (radius * radius) / max(d - radius, 0.2) ** 2
                    vel[i] += push
                    vel[j] -= push
        # clamp to class caps (small slack reserved for the projection pass)
        speed = np.linalg.norm(vel, axis=1)
        over = speed > 0.9 * caps
        vel[over] *= (0.9 * caps[over] / speed[over])[:, None]
        new = pos + vel * dt

        for _ in range(10):
            moved = False
            for i in range(k):
                for j in range(i + 1, k):
                    d_vec = new[i] - new[j]
                    d = np.linalg.norm(d_vec)
                    if d < radius:
                        axis = d_vec / d if d > 1e-12 else np.array([1.0, 0.0])
                        shift = 0.5 * (radius * (1.0 + 1e-9) - d)
                        new[i] += axis * shift
                        new[j] -= axis * shift
                        moved = True
            # keep displacement within the speed caps
            step_vec = new - pos
            step_len = np.linalg.norm(step_vec, axis=1)
            over = step_len > caps * dt
            if np.any(over):
                new[over] = pos[over] + step_vec[over] * (caps[over] * dt / step_len[over])[:, None]
                moved = True
            if not moved:
                break
        # revert agents that could not be reconciled; the previous
        # configuration is valid by induction
        for _ in range(k):
            bad = set()
            for i in range(k):
                for j in range(i + 1, k):
                    if np.linalg.norm(new[i] - new[j]) < radius:
                        bad.update((i, j))
            if not bad:
                break
            for i in bad:
                new[i] = pos[i]
        pos = new
        out[:, t] = pos
    return out


def _sample_static_map(rng):
    """Straight road band along the longitudinal axis with sidewalks."""
    center = rng.uniform(-5.0, 5.0)
    half_road = rng.uniform(4.0, 8.0)
    walk = 2.0
    rows = (np.arange(TOPDOWN_CELLS) + 0.5) * TOPDOWN_CELL_M  # unused, road is along x
    cols = (np.arange(TOPDOWN_CELLS) + 0.5) * TOPDOWN_CELL_M - TOPDOWN_LAT_M
    lat = np.abs(cols - center)
    line = np.full(TOPDOWN_CELLS, LABEL_OFFROAD, dtype=np.int64)
    line[lat <= half_road + walk] = LABEL_SIDEWALK
    line[lat <= half_road] = LABEL_ROAD
    labels = np.tile(line, (len(rows), 1))
    return StaticMap(labels=labels)


def _try_generate(config: GenConfig, rng, seed):
    steps = config.tau + config.delta
    static_map = _sample_static_map(rng)

    # ego pose in the world frame at t=1, then forward motion in its own frame
    ego_world = np.array([rng.uniform(-50, 50), rng.uniform(-50, 50), rng.uniform(-np.pi, np.pi)])
    ego_speed = rng.uniform(3.0, 8.0)
    yaw_rate = rng.uniform(-0.05, 0.05)
    local = np.zeros((steps, 3))
    for t in range(1, steps):
        th = local[t - 1, 2]
        local[t, 0] = local[t - 1, 0] + ego_speed * config.dt * np.cos(th)
        local[t, 1] = local[t - 1, 1] + ego_speed * config.dt * np.sin(th)
        local[t, 2] = th + yaw_rate
    c, s = np.cos(ego_world[2]), np.sin(ego_world[2])
    world_xy = ego_world[:2] + np.stack(
        [c * local[:, 0] - s * local[:, 1], s * local[:, 0] + c * local[:, 1]], axis=-1
    )
    ego = EgoPose(np.column_stack([world_xy, local[:, 2] + ego_world[2]]))

    k = int(rng.integers(config.n_agents_min, config.n_agents_max + 1))
    names = sorted(config.class_probs)
    probs = np.array([config.class_probs[n] for n in names], dtype=np.float64)
    probs = probs / probs.sum()
    classes = [names[i] for i in rng.choice(len(names), size=k, p=probs)]

    spawns = []
    for i in range(k):
        for _ in range(100):
            x = rng.uniform(_X_MIN, _X_MAX)
            y = rng.uniform(-1, 1) * min(_LAT_FRAC * x, _LAT_MAX)
            p = np.array([x, y])
            if all(np.linalg.norm(p - q) >= 2.0 * config.repulsion_radius for q in spawns):
                spawns.append(p)
                break
        else:
            return None
    goals, speeds = [], []
    horizon = steps * config.dt
    for i, cls in enumerate(classes):
        speed = config.speed_scale * AGENT_CLASSES[cls] * rng.uniform(0.2, 0.7)
        # mostly longitudinal headings keep agents inside both rasters
        base = 0.0 if rng.random() < 0.5 else np.pi
        ang = base + rng.uniform(-0.4, 0.4) if cls != "pedestrian" else rng.uniform(0, 2 * np.pi)
        reach = speed * horizon
        goal = _clip_to_safe_region(spawns[i] + reach * np.array([np.cos(ang), np.sin(ang)]))
        goals.append(goal)
        speeds.append(speed)

    past_tracks = simulate_tracks(
        spawns, goals, speeds, classes, config.tau, config.dt, config.repulsion_radius
    )
    # maneuver branch at the prediction boundary: each agent keeps course or
    # veers left/right, a choice the observed past cannot reveal
    boundary = past_tracks[:, -1]
    future_goals, future_speeds = [], []
    for i in range(k):
        theta = config.maneuver_angle * rng.uniform(-1.0, 1.0)
        ct, st = np.cos(theta), np.sin(theta)
        d = goals[i] - boundary[i]
        turned = np.array([ct * d[0] - st * d[1], st * d[0] + ct * d[1]])
        future_goals.append(_clip_to_safe_region(boundary[i] + turned))
        future_speeds.append(speeds[i] * rng.uniform(0.6, 1.0))
    future_tracks = simulate_tracks(
        boundary, future_goals, future_speeds, classes, config.delta + 1, config.dt,
        config.repulsion_radius,
    )
    local_tracks = np.concatenate([past_tracks, future_tracks[:, 1:]], axis=1)
    # past positions must land on both rasters
    past = local_tracks[:, : config.tau]
    _, ok_td = project_topdown(past)
    lifted = np.concatenate([past, np.ones(past.shape[:-1] + (1,))], axis=-1)
    uv, ok_depth = project_frontal(lifted)
    ok_fr = (
        ok_depth
        & (uv[..., 0] >= 0) & (uv[..., 0] < FRONTAL_WIDTH)
        & (uv[..., 1] >= 0) & (uv[..., 1] < FRONTAL_HEIGHT)
    )
    if not (ok_td.all() and ok_fr.all()):
        return None

    # agents live in the ego t=1 frame; store world coordinates
    tracks = []
    for i in range(k):
        pw = ego_world[:2] + np.stack(
            [
                c * local_tracks[i, :, 0] - s * local_tracks[i, :, 1],
                s * local_tracks[i, :, 0] + c * local_tracks[i, :, 1],
            ],
            axis=-1,
        )
        tracks.append(AgentTrack(agent_id=i, agent_class=classes[i], xy=pw))
    target = int(rng.integers(0, k))
    return Scenario(
        tau=config.tau,
        delta=config.delta,
        dt=config.dt,
        tracks=tracks,
        ego=ego,
        static_map=static_map,
        seed=seed,
        target=target,
    )


def generate_scenario(config: GenConfig, seed: int) -> Scenario:
    """Deterministically generate one interacting multi-agent scenario.

    Rejection-samples (with sub-seeds derived from ``seed``) until every
    agent's past positions project onto both modality rasters.
    """
    config.validate()
    for attempt in range(64):
        rng = np.random.default_rng(np.random.SeedSequence(entropy=(seed, attempt)))
        scenario = _try_generate(config, rng, seed)
        if scenario is not None:
            return scenario.validate()
    raise ScenarioError(f"could not place agents on the map for seed {seed} (config infeasible?)")


# ---------------------------------------------------------------------------
# modality views
# ---------------------------------------------------------------------------

# frontal occupancy/static raster: coarse grid over the 414x125 image plane
FRONTAL_RASTER_W = 48
FRONTAL_RASTER_H = 16

# physical half-extents for occupancy boxes, meters
_HALF_EXTENT = {"vehicle": 1.0, "cyclist": 0.6, "pedestrian": 0.3}
_AGENT_HEIGHT = 1.0  # fixed height lift for the frontal pinhole projection


@dataclass
class ModalityView:
    """One scenario rendered into one modality's coordinate frame.

    ``coords`` are meters in the ego t=1 frame for topdown and pixels for
    frontal. Occupancy rasters (one per observation step) stand in for
    optical-flow imagery; the static raster stands in for the semantic map.
    """

    modality: str
    coords: np.ndarray        # (K, tau+delta, 2)
    valid: np.ndarray         # (K, tau+delta) on-raster / projectable
    occupancy: np.ndarray     # (tau, h, w)
    static_raster: np.ndarray  # (h, w) labels
    tau: int
    target: int
    camera: FrontalCamera | None = None

    @property
    def raster_shape(self):
        return self.static_raster.shape

    def raster_cell(self, coords):
        """Map view coordinates to occupancy-raster cell (row, col) + flag."""
        p = np.asarray(coords, dtype=np.float64)
        h, w = self.raster_shape
        if self.modality == "topdown":
            cells, ok = project_topdown(p)
            return cells, ok
        cw = FRONTAL_WIDTH / w
        ch = FRONTAL_HEIGHT / h
        col = np.floor(p[..., 0] / cw).astype(np.int64)
        row = np.floor(p[..., 1] / ch).astype(np.int64)
        ok = (row >= 0) & (row < h) & (col >= 0) & (col < w)
        return np.stack([row, col], axis=-1), ok


def _topdown_view(scenario: Scenario) -> ModalityView:
    k, tau = scenario.n_agents, scenario.tau
    coords = np.stack(
        [ego_future_eliminate(tr.xy, scenario.ego) for tr in scenario.tracks]
    )
    cells, ok = project_topdown(coords)
    occupancy = np.zeros((tau, TOPDOWN_CELLS, TOPDOWN_CELLS))
    for t in range(tau):
        for i, tr in enumerate(scenario.tracks):
            if not ok[i, t]:
                continue
            half = int(np.ceil(_HALF_EXTENT[tr.agent_class] / TOPDOWN_CELL_M))
            r, cc = cells[i, t]
            occupancy[
                t,
                max(r - half, 0): r + half + 1,
                max(cc - half, 0): cc + half + 1,
            ] = 1.0
    return ModalityView(
        modality="topdown",
        coords=coords,
        valid=ok,
        occupancy=occupancy,
        static_raster=scenario.static_map.labels.copy(),
        tau=tau,
        target=scenario.target,
    )


def _frontal_static_raster(scenario: Scenario, camera: FrontalCamera) -> np.ndarray:
    labels = scenario.static_map.labels
    rows, cols = np.nonzero(labels > 0)
    x = (rows + 0.5) * TOPDOWN_CELL_M
    y = (cols + 0.5) * TOPDOWN_CELL_M - TOPDOWN_LAT_M
    ground = np.stack([x, y, np.zeros_like(x)], axis=-1)
    uv, ok = project_frontal(ground, camera)
    raster = np.zeros((FRONTAL_RASTER_H, FRONTAL_RASTER_W), dtype=np.int64)
    cw = FRONTAL_WIDTH / FRONTAL_RASTER_W
    ch = FRONTAL_HEIGHT / FRONTAL_RASTER_H
    cc = np.floor(uv[..., 0] / cw).astype(np.int64)
    rr = np.floor(uv[..., 1] / ch).astype(np.int64)
    keep = ok & (rr >= 0) & (rr < FRONTAL_RASTER_H) & (cc >= 0) & (cc < FRONTAL_RASTER_W)
    # write far-to-near so the nearest ground label wins per raster cell
    order = np.argsort(-x[keep], kind="stable")
    raster[rr[keep][order], cc[keep][order]] = labels[rows[keep], cols[keep]][order]
    return raster


def _frontal_view(scenario: Scenario, camera: FrontalCamera) -> ModalityView:
    tau = scenario.tau
    local = np.stack(
        [ego_future_eliminate(tr.xy, scenario.ego) for tr in scenario.tracks]
    )
    lifted = np.concatenate(
        [local, np.full(local.shape[:-1] + (1,), _AGENT_HEIGHT)], axis=-1
    )
    uv, ok_depth = project_frontal(lifted, camera)
    on_image = (
        ok_depth
        & (uv[..., 0] >= 0) & (uv[..., 0] < camera.width)
        & (uv[..., 1] >= 0) & (uv[..., 1] < camera.height)
    )
    occupancy = np.zeros((tau, FRONTAL_RASTER_H, FRONTAL_RASTER_W))
    cw = camera.width / FRONTAL_RASTER_W
    ch = camera.height / FRONTAL_RASTER_H
    for t in range(tau):
        for i, tr in enumerate(scenario.tracks):
            if not on_image[i, t]:
                continue
            depth = local[i, t, 0]
            half_px = camera.fu * _HALF_EXTENT[tr.agent_class] / depth
            u, v = uv[i, t]
            c0 = max(int((u - half_px) // cw), 0)
            c1 = min(int((u + half_px) // cw), FRONTAL_RASTER_W - 1)
            r0 = max(int((v - half_px) // ch), 0)
            r1 = min(int((v + half_px) // ch), FRONTAL_RASTER_H - 1)
            occupancy[t, r0: r1 + 1, c0: c1 + 1] = 1.0
    return ModalityView(
        modality="frontal",
        coords=uv,
        valid=on_image,
        occupancy=occupancy,
        static_raster=_frontal_static_raster(scenario, camera),
        tau=tau,
        target=scenario.target,
        camera=camera,
    )


def build_view(scenario: Scenario, modality: str, camera: FrontalCamera | None = None) -> ModalityView:
    """Render one scenario into one modality's frame."""
    if modality == "topdown":
        view = _topdown_view(scenario)
    elif modality == "frontal":
        view = _frontal_view(scenario, camera or FrontalCamera())
    else:
        raise ScenarioError(f"unknown modality {modality!r}")
    if not view.valid[:, : scenario.tau].all():
        raise ScenarioError(
            f"past positions fall off the {modality} raster; regenerate the scenario"
        )
    return view


# ---------------------------------------------------------------------------
# file format: JSON lines, one scenario per line, after a header line
# ---------------------------------------------------------------------------

FORMAT_VERSION = 1
_HEADER = {"format": "xmodal-scenarios", "version": FORMAT_VERSION}


def _scenario_to_obj(s: Scenario) -> dict:
    return {
        "version": FORMAT_VERSION,
        "seed": s.seed,
        "dt": s.dt,
        "tau": s.tau,
        "delta": s.delta,
        "target": s.target,
        "ego": s.ego.poses.tolist(),
        "agents": [
            {"id": tr.agent_id, "class": tr.agent_class, "xy": tr.xy.tolist()}
            for tr in s.tracks
        ],
        "static_map": {
            "w": int(s.static_map.labels.shape[1]),
            "h": int(s.static_map.labels.shape[0]),
            "cell_m": s.static_map.cell_m,
            "labels": s.static_map.labels.reshape(-1).tolist(),
        },
    }


def _require(obj, key, kind, line):
    if key not in obj:
        raise ScenarioFormatError(f"line {line}: missing field {key!r}")
    value = obj[key]
    if kind is float:
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise ScenarioFormatError(f"line {line}: field {key!r} must be a number")
        return float(value)
    if not isinstance(value, kind):
        raise ScenarioFormatError(f"line {line}: field {key!r} must be {kind.__name__}")
    return value


def _scenario_from_obj(obj, line) -> Scenario:
    if _require(obj, "version", int, line) != FORMAT_VERSION:
        raise ScenarioFormatError(f"line {line}: field 'version' unsupported: {obj['version']}")
    tau = _require(obj, "tau", int, line)
    delta = _require(obj, "delta", int, line)
    agents = _require(obj, "agents", list, line)
    tracks = []
    for a in agents:
        tracks.append(
            AgentTrack(
                agent_id=_require(a, "id", int, line),
                agent_class=_require(a, "class", str, line),
                xy=np.asarray(_require(a, "xy", list, line), dtype=np.float64),
            )
        )
    sm = _require(obj, "static_map", dict, line)
    labels = np.asarray(_require(sm, "labels", list, line), dtype=np.int64)
    h, w = _require(sm, "h", int, line), _require(sm, "w", int, line)
    if labels.size != h * w:
        raise ScenarioFormatError(f"line {line}: field 'labels' has {labels.size} entries, expected {h * w}")
    try:
        scenario = Scenario(
            tau=tau,
            delta=delta,
            dt=_require(obj, "dt", float, line),
            tracks=tracks,
            ego=EgoPose(np.asarray(_require(obj, "ego", list, line), dtype=np.float64)),
            static_map=StaticMap(labels=labels.reshape(h, w), cell_m=_require(sm, "cell_m", float, line)),
            seed=_require(obj, "seed", int, line),
            target=_require(obj, "target", int, line),
        ).validate()
    except ScenarioError as err:
        raise ScenarioFormatError(f"line {line}: {err}") from err
    return scenario


def save_scenarios(path, scenarios) -> None:
    with open(path, "w") as f:
        f.write(json.dumps(_HEADER, separators=(",", ":")) + "\n")
        for s in scenarios:
            f.write(json.dumps(_scenario_to_obj(s), separators=(",", ":")) + "\n")


def load_scenarios(path) -> list:
    out = []
    with open(path) as f:
        for n, raw in enumerate(f, start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as err:
                raise ScenarioFormatError(f"line {n}: invalid JSON: {err}") from err
            if n == 1:
                if obj.get("format") != _HEADER["format"] or obj.get("version") != FORMAT_VERSION:
                    raise ScenarioFormatError(f"line 1: bad header: field 'format'/'version'")
                continue
            out.append(_scenario_from_obj(obj, n))
    return out
