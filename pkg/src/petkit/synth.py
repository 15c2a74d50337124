"""Procedural polarized eye scenes, PFA capture simulation and stimulus
protocols for synthetic datasets.

Scene geometry is expressed in "base pixels" of a 256 px wide image and scaled
by ``min(width, height) / 256``. The eye is centred in the frame:

* an elliptical eye opening (semi-axes 110 x 70 base px) over a skin background;
* sclera filling the opening, carrying a fine value-noise DoLP texture
  (3 octaves, lattice 12/6/3 base px) and an AoLP field near the
  illuminator axis with a smooth subject-specific spread, both keyed by
  ``subject_seed`` and carried along with the iris when gaze changes;
* iris (radius 36) and pupil (``pupil_radius``, image px at unit eye relief)
  centred at ``GAZE_PX_PER_DEG`` base px per degree of (yaw, -pitch);
* a corneal highlight (radius 16, drawn under the pupil) whose centre moves
  at ``CORNEA_PX_PER_DEG`` base px per degree and whose AoLP rotates
  azimuthally about that centre.

``eye_relief_scale`` magnifies everything about the image centre and
``shift`` translates the camera.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import IoFailure
from .mosaic_io import (
    DEFAULT_LAYOUT,
    FrameRecord,
    GazeDataset,
    ParticipantRecords,
    RawMosaicFrame,
    SuperpixelLayout,
    save_gaze_dataset,
    write_raw_frame,
)

BASE_SIZE = 256.0
GAZE_PX_PER_DEG = 2.0
CORNEA_PX_PER_DEG = 1.0
EYE_SEMI_AXES = (110.0, 70.0)
IRIS_RADIUS = 36.0
CORNEA_RADIUS = 16.0
CORNEA_OFFSET = (-12.0, -10.0)
CORNEA_PEAK_DOLP = 0.45

SCLERA_LEVEL = 0.75
IRIS_LEVEL = 0.45
PUPIL_LEVEL = 0.03
CORNEA_LEVEL = 0.85

SCLERA_DOLP_RANGE = (0.05, 0.6)
# scattered light keeps roughly the illuminator's orientation
ILLUMINATOR_AOLP = 0.0
SCLERA_AOLP_SPREAD = 0.4 * math.pi
SCLERA_CELL = 12.0
SCLERA_OCTAVES = 3
AOLP_CELL = 48.0

BACKGROUND, SCLERA, IRIS, PUPIL, CORNEA_HIGHLIGHT = range(5)
REGION_NAMES = ("background", "sclera", "iris", "pupil", "cornea_highlight")

# monitor geometry recorded in manifests; not modelled
MONITOR_DISTANCE_CM = 48.0
DISPLAY_TILT_DEG = -9.7


@dataclass(frozen=True)
class SceneParams:
    width: int = 256
    height: int = 256
    gaze: tuple[float, float] = (0.0, 0.0)
    pupil_radius: float = 14.0
    eye_relief_scale: float = 1.0
    subject_seed: int = 0
    background_level: float = 0.25
    shift: tuple[float, float] = (0.0, 0.0)
    # 1 = natural intensity contrast between regions, 0 = uniform S0
    intensity_contrast: float = 1.0

    def __post_init__(self):
        if not self.pupil_radius > 0:
            raise ValueError("pupil_radius must be > 0")
        if not 0.7 <= self.eye_relief_scale <= 1.3:
            raise ValueError("eye_relief_scale must lie in [0.7, 1.3]")
        if not 0 <= self.background_level <= 1:
            raise ValueError("background_level must lie in [0, 1]")
        if not 0 <= self.intensity_contrast <= 1:
            raise ValueError("intensity_contrast must lie in [0, 1]")
        if self.width < 2 or self.height < 2:
            raise ValueError("scene must be at least 2x2")

    @property
    def unit(self) -> float:
        """Image pixels per base pixel at unit eye relief."""
        return min(self.width, self.height) / BASE_SIZE


@dataclass(eq=False)
class GroundTruthScene:
    s0_true: np.ndarray
    dolp_true: np.ndarray
    aolp_true: np.ndarray
    gaze: tuple[float, float]
    region_map: np.ndarray
    cornea_center: tuple[float, float] = (0.0, 0.0)  # image (x, y) px

    @property
    def shape(self) -> tuple[int, int]:
        return self.s0_true.shape


def cornea_px_per_deg(params: SceneParams) -> float:
    """Image-pixel shift of the corneal pattern centre per degree of gaze."""
    return CORNEA_PX_PER_DEG * params.unit * params.eye_relief_scale


def _value_noise(tx, ty, seed: int, channel: int, cell: float, octaves: int) -> np.ndarray:
    # Cubic-spline interpolated random lattices; octave k has cell / 2**k
    # spacing and weight 0.5**k. Lattices span [-512, 512] base px.
    total = np.zeros_like(tx)
    norm = 0.0
    for k in range(octaves):
        c = cell / 2**k
        n = int(math.ceil(1024.0 / c)) + 4
        rng = np.random.default_rng([int(seed) & 0xFFFFFFFF, channel, k])
        lattice = rng.random((n, n))
        coords = np.stack([(ty + 512.0) / c + 1.0, (tx + 512.0) / c + 1.0])
        total += 0.5**k * ndimage.map_coordinates(lattice, coords, order=3, mode="nearest")
        norm += 0.5**k
    # spread the averaged noise (std ~0.2) back over [0, 1]
    return np.clip(0.5 + 1.6 * (total / norm - 0.5), 0.0, 1.0)


def principal_aolp(angle):
    """Wrap an orientation (radians) into (-pi/2, pi/2]."""
    return np.pi / 2 - np.mod(np.pi / 2 - np.asarray(angle, dtype=np.float64), np.pi)


def generate_scene(params: SceneParams) -> GroundTruthScene:
    w, h = params.width, params.height
    unit = params.unit
    m = params.eye_relief_scale
    yaw, pitch = params.gaze
    cx = (w - 1) / 2.0 + params.shift[0]
    cy = (h - 1) / 2.0 + params.shift[1]

    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    # scene coordinates in base px about the eye centre
    ux = (xx - cx) / (m * unit)
    uy = (yy - cy) / (m * unit)

    dx, dy = GAZE_PX_PER_DEG * yaw, -GAZE_PX_PER_DEG * pitch
    hx = CORNEA_OFFSET[0] + CORNEA_PX_PER_DEG * yaw
    hy = CORNEA_OFFSET[1] - CORNEA_PX_PER_DEG * pitch

    a, b = EYE_SEMI_AXES
    opening = (ux / a) ** 2 + (uy / b) ** 2 <= 1.0
    r_iris = np.hypot(ux - dx, uy - dy)
    iris = opening & (r_iris <= IRIS_RADIUS)
    pupil = opening & (r_iris <= params.pupil_radius / unit)
    r_h = np.hypot(ux - hx, uy - hy)
    cornea = opening & (r_h < CORNEA_RADIUS)

    region = np.full((h, w), BACKGROUND, dtype=np.uint8)
    region[opening] = SCLERA
    region[iris] = IRIS
    region[cornea] = CORNEA_HIGHLIGHT
    region[pupil] = PUPIL

    # texture coordinates ride with the eyeball
    tx, ty = ux - dx, uy - dy
    seed = params.subject_seed
    tex_dolp = _value_noise(tx, ty, seed, 0, SCLERA_CELL, SCLERA_OCTAVES)
    tex_aolp = _value_noise(tx, ty, seed, 1, AOLP_CELL, 2)
    tex_int = _value_noise(tx, ty, seed, 2, SCLERA_CELL, 2)
    tex_iris = _value_noise(tx, ty, seed, 3, 6.0, 2)
    skin = _value_noise(ux, uy, seed, 4, 24.0, 2)

    c = params.intensity_contrast
    level = lambda v: SCLERA_LEVEL + c * (v - SCLERA_LEVEL)

    s0 = np.empty((h, w))
    dolp = np.zeros((h, w))
    aolp = np.zeros((h, w))

    sel = region == BACKGROUND
    s0[sel] = level(params.background_level * (0.9 + 0.2 * skin[sel]))
    dolp[sel] = 0.02 * skin[sel]
    aolp[sel] = principal_aolp(0.3 * np.pi * (skin[sel] - 0.5))

    sel = region == SCLERA
    lo, hi = SCLERA_DOLP_RANGE
    s0[sel] = level(SCLERA_LEVEL * (0.95 + 0.1 * tex_int[sel]))
    dolp[sel] = lo + (hi - lo) * tex_dolp[sel]
    aolp[sel] = principal_aolp(ILLUMINATOR_AOLP + SCLERA_AOLP_SPREAD * (tex_aolp[sel] - 0.5))

    sel = region == IRIS
    s0[sel] = level(IRIS_LEVEL * (0.85 + 0.3 * tex_iris[sel]))
    dolp[sel] = 0.01 + 0.03 * tex_iris[sel]
    aolp[sel] = principal_aolp(ILLUMINATOR_AOLP + 0.5 * np.pi * (tex_aolp[sel] - 0.5))

    sel = region == PUPIL
    s0[sel] = level(PUPIL_LEVEL)

    sel = region == CORNEA_HIGHLIGHT
    rr = r_h[sel] / CORNEA_RADIUS
    s0[sel] = level(CORNEA_LEVEL)
    dolp[sel] = CORNEA_PEAK_DOLP * 4.0 * rr * (1.0 - rr)
    aolp[sel] = principal_aolp(np.arctan2(uy[sel] - hy, ux[sel] - hx))

    center = (cx + hx * m * unit, cy + hy * m * unit)
    return GroundTruthScene(s0, dolp, aolp, (float(yaw), float(pitch)), region, center)


@dataclass(frozen=True)
class NoiseModel:
    read_noise_dn: float = 0.0
    shot_noise: bool = False
    polarizer_extinction: float = 1.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.read_noise_dn < 0:
            raise ValueError("read_noise_dn must be >= 0")
        if not 0 < self.polarizer_extinction <= 1:
            raise ValueError("polarizer_extinction must lie in (0, 1]")


NOISELESS = NoiseModel()


def polarizer_samples(s0, dolp, aolp, angle_deg, extinction: float = 1.0):
    """Ideal intensity behind a linear polarizer at ``angle_deg``.

    ``extinction`` < 1 leaks the orthogonal state in.
    """
    s0 = np.asarray(s0, dtype=np.float64)
    th = np.deg2rad(angle_deg)
    s1 = s0 * dolp * np.cos(2 * aolp)
    s2 = s0 * dolp * np.sin(2 * aolp)
    return 0.5 * (s0 + (2 * extinction - 1) * (s1 * np.cos(2 * th) + s2 * np.sin(2 * th)))


def simulate_pfa_capture(scene: GroundTruthScene, layout: SuperpixelLayout = DEFAULT_LAYOUT,
                         noise: NoiseModel = NOISELESS, bit_depth: int | None = 12,
                         exposure: float | None = None) -> RawMosaicFrame:
    """Sample the scene through the micro-polarizer mosaic.

    ``exposure`` is DN per unit of ``s0_true`` (default: full scale,
    ``2**bit_depth - 1``). ``bit_depth=None`` returns an unquantized float
    frame with ``exposure`` defaulting to 1.
    """
    h, w = scene.shape
    if h % 2 or w % 2:
        raise ValueError("scene dimensions must be even to tile the mosaic")
    if exposure is None:
        exposure = 1.0 if bit_depth is None else float(2**bit_depth - 1)
    angle = np.empty((h, w))
    for r in range(2):
        for c in range(2):
            angle[r::2, c::2] = layout.angle_at[r][c]
    value = exposure * polarizer_samples(scene.s0_true, scene.dolp_true, scene.aolp_true, angle,
                                         noise.polarizer_extinction)
    rng = np.random.default_rng(noise.rng_seed)
    if noise.shot_noise:
        value = rng.poisson(np.maximum(value, 0.0)).astype(np.float64)
    if noise.read_noise_dn > 0:
        value = value + rng.normal(0.0, noise.read_noise_dn, size=value.shape)
    if bit_depth is None:
        return RawMosaicFrame(value, layout, None)
    data = np.clip(np.round(value), 0, 2**bit_depth - 1).astype(np.uint16)
    return RawMosaicFrame(data, layout, bit_depth)


# --------------------------------------------------------------------------
# stimulus protocols

PATTERN_TARGETS = {"ring20": 9, "fp18": 18, "random_saccade": 20}
SEQUENCE_TAGS = {"ring20": "RING20", "fp18": "FP18", "random_saccade": "RS"}


@dataclass(frozen=True)
class ProtocolConfig:
    pattern: str = "ring20"
    fov: tuple[float, float] = (30.0, 20.0)
    n_targets: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.pattern not in PATTERN_TARGETS:
            raise ValueError(f"unknown pattern {self.pattern!r}")
        n = self.n_targets if self.n_targets is not None else PATTERN_TARGETS[self.pattern]
        if self.pattern != "random_saccade" and n != PATTERN_TARGETS[self.pattern]:
            raise ValueError(f"{self.pattern} has exactly {PATTERN_TARGETS[self.pattern]} targets")
        if n < 1:
            raise ValueError("n_targets must be >= 1")
        object.__setattr__(self, "n_targets", n)


def protocol_targets(protocol: ProtocolConfig) -> list[tuple[float, float]]:
    """(yaw, pitch) gaze targets in degrees, in presentation order."""
    if protocol.pattern == "ring20":
        ang = 2 * np.pi * np.arange(9) / 9
        return [(20.0 * math.cos(t), 20.0 * math.sin(t)) for t in ang]
    if protocol.pattern == "fp18":
        hx, hy = protocol.fov[0] / 2, protocol.fov[1] / 2
        ang = 2 * np.pi * np.arange(9) / 9
        oval = [(hx * math.cos(t), hy * math.sin(t)) for t in ang]
        circle = [(5.0 * math.cos(t + np.pi / 9), 5.0 * math.sin(t + np.pi / 9)) for t in ang]
        return oval + circle
    rng = np.random.default_rng(protocol.seed)
    hx, hy = protocol.fov[0] / 2, protocol.fov[1] / 2
    pts = rng.uniform([-hx, -hy], [hx, hy], size=(protocol.n_targets, 2))
    return [(float(y), float(p)) for y, p in pts]


def _frame_seed(base: int, *parts: int) -> int:
    return int(np.random.SeedSequence([int(base), *parts]).generate_state(1)[0])


def generate_dataset(protocol: ProtocolConfig, scene_base: SceneParams, per_condition=None, out_dir=".",
                     noise: NoiseModel = NOISELESS, layout: SuperpixelLayout = DEFAULT_LAYOUT,
                     bit_depth: int = 12, participant_id: str = "P000", eye: str = "left",
                     camera_position: str = "lower_temporal", context: str = "NW", threads: int = 1,
                     manifest_name: str = "manifest.json") -> GazeDataset:
    """Render one frame per target per condition and write a manifest.

    ``per_condition`` is a list of dicts with a ``tag`` and optional
    ``pupil_radius`` / ``eye_relief_scale`` overrides.
    """
    out_dir = Path(out_dir)
    conditions = per_condition or [{"tag": "nominal"}]
    targets = protocol_targets(protocol)
    seq = f"{context}_{SEQUENCE_TAGS[protocol.pattern]}"
    jobs = []
    for ci, cond in enumerate(conditions):
        overrides = {k: v for k, v in cond.items() if k in ("pupil_radius", "eye_relief_scale")}
        for ti, target in enumerate(targets):
            params = replace(scene_base, gaze=target, **overrides)
            nm = replace(noise, rng_seed=_frame_seed(noise.rng_seed, ci, ti))
            rel = f"frames/{participant_id}_{seq}_{cond['tag']}_{ti:03d}.pfaraw"
            jobs.append((params, nm, rel, cond["tag"], target))

    def render(job):
        params, nm, rel, _, _ = job
        frame = simulate_pfa_capture(generate_scene(params), layout, nm, bit_depth)
        write_raw_frame(frame, out_dir / rel)

    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
            list(pool.map(render, jobs))
    except OSError as exc:
        raise IoFailure(f"cannot write dataset to {out_dir}: {exc}") from exc

    records = [FrameRecord(rel, target, tag, seq) for _, _, rel, tag, target in jobs]
    metadata = {
        "protocol": asdict(protocol),
        "scene_base": asdict(scene_base),
        "noise": asdict(noise),
        "conditions": conditions,
        "monitor_distance_cm": MONITOR_DISTANCE_CM,
        "display_tilt_deg": DISPLAY_TILT_DEG,
    }
    dataset = GazeDataset([ParticipantRecords(participant_id, eye, camera_position, records)], out_dir, metadata)
    save_gaze_dataset(dataset, out_dir / manifest_name)
    return dataset
