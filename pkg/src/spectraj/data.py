"""Scenario tensors: neighbour-grid assembly, upsampling, maneuver labels,
balanced splits, a synthetic highway generator, and CSV ingestion."""
from __future__ import annotations

import csv
import functools
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

log = logging.getLogger(__name__)

FEATURES = ("x", "y", "vx", "vy")
N_FEATURES = len(FEATURES)
MANEUVERS = ("keep-lane", "lane-change-left", "lane-change-right")
SLOT_NAMES = (
    "target",
    "preceding",
    "following",
    "left_preceding",
    "left_alongside",
    "left_following",
    "right_preceding",
    "right_alongside",
    "right_following",
)
N_SLOTS = len(SLOT_NAMES)
LANE_WIDTH_M = 3.5


class ScenarioFormatError(ValueError):
    """Malformed scenario or track file; ``line`` is 1-based when known."""

    def __init__(self, message: str, path=None, line: Optional[int] = None):
        where = f"{path}:" if path is not None else ""
        where += f"line {line}: " if line is not None else (" " if where else "")
        super().__init__(f"{where}{message}")
        self.path = path
        self.line = line


@dataclass(frozen=True, eq=False)
class ScenarioTensor:
    """Graph signal of shape (feature, vehicle slot, time step).

    Features are (x, y, vx, vy) in metres and m/s, target-relative positions;
    slot 0 is the target.
    """

    values: np.ndarray
    sample_rate_hz: float
    slot_mask: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 3 or v.shape[0] != N_FEATURES:
            raise ValueError(f"values must have shape ({N_FEATURES}, N, H), got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("scenario values must be finite")
        m = np.asarray(self.slot_mask, dtype=bool)
        if m.shape != (v.shape[1],):
            raise ValueError(f"slot_mask must have length {v.shape[1]}")
        if not m[0]:
            raise ValueError("slot 0 (target) must be occupied")
        if not self.sample_rate_hz > 0:
            raise ValueError("sample_rate_hz must be positive")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "slot_mask", m)

    @property
    def n_slots(self) -> int:
        return self.values.shape[1]

    @property
    def n_steps(self) -> int:
        return self.values.shape[2]


@dataclass(frozen=True, eq=False)
class LabeledScenario:
    """Raw observation plus (optional) future of every slot.

    ``future`` has shape (4, N, H_pred) in the same target-relative frame as
    the observation; ``ground_truth`` is its target (x, y) rows.
    """

    scenario_id: str
    raw_observation: ScenarioTensor
    future: Optional[np.ndarray]
    maneuver: Optional[str]
    h_pred: int

    def __post_init__(self):
        if self.maneuver is not None and self.maneuver not in MANEUVERS:
            raise ValueError(f"unknown maneuver {self.maneuver!r}")
        if self.future is not None:
            fut = np.asarray(self.future, dtype=np.float64)
            expected = (N_FEATURES, self.raw_observation.n_slots, self.h_pred)
            if fut.shape != expected:
                raise ValueError(f"future must have shape {expected}, got {fut.shape}")
            if not np.all(np.isfinite(fut)):
                raise ValueError("future values must be finite")
            object.__setattr__(self, "future", fut)
        if self.h_pred < self.raw_observation.n_steps:
            raise ValueError("h_pred must be at least the observed step count")

    @functools.cached_property
    def observation(self) -> ScenarioTensor:
        """Observation linearly upsampled to ``h_pred`` steps."""
        return upsample_observation(self.raw_observation, self.h_pred)

    @property
    def ground_truth(self) -> np.ndarray:
        if self.future is None:
            raise ValueError(f"scenario {self.scenario_id} has no future")
        return self.future[:2, 0, :]

    def is_continuous(self) -> bool:
        """First future position lies within 0.5 s of travel of the last observed one."""
        obs = self.raw_observation.values
        speed = float(np.hypot(obs[2, 0, -1], obs[3, 0, -1]))
        gap = float(np.hypot(*(self.ground_truth[:, 0] - obs[:2, 0, -1])))
        return gap <= 0.5 * max(speed, 1.0)


# --------------------------------------------------------------------------- tracks


@dataclass(eq=False)
class Track:
    """Per-vehicle time series on contiguous integer frames, in a vehicle-aligned
    frame (x along the driving direction, y to the left)."""

    track_id: int
    frames: np.ndarray
    x: np.ndarray
    y: np.ndarray
    vx: np.ndarray
    vy: np.ndarray
    lane: np.ndarray
    neighbor_ids: dict = field(default_factory=dict)

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.int64)
        for name in ("x", "y", "vx", "vy"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        self.lane = np.asarray(self.lane, dtype=np.int64)
        n = self.frames.shape[0]
        if n == 0:
            raise ValueError(f"track {self.track_id} is empty")
        if np.any(np.diff(self.frames) != 1):
            raise ValueError(f"track {self.track_id} frames must be contiguous and sorted")
        for name in ("x", "y", "vx", "vy", "lane"):
            if getattr(self, name).shape != (n,):
                raise ValueError(f"track {self.track_id}: {name} length mismatch")

    @property
    def first(self) -> int:
        return int(self.frames[0])

    @property
    def last(self) -> int:
        return int(self.frames[-1])

    def has(self, frame: int) -> bool:
        return self.first <= frame <= self.last

    def covers(self, start: int, stop: int) -> bool:
        return self.first <= start and stop <= self.last

    def state(self, start: int, stop: int) -> np.ndarray:
        """(4, stop - start + 1) states; frames outside the track repeat the nearest edge."""
        idx = np.clip(np.arange(start, stop + 1) - self.first, 0, len(self.frames) - 1)
        return np.stack([self.x[idx], self.y[idx], self.vx[idx], self.vy[idx]])

    def lane_at(self, frame: int) -> int:
        return int(self.lane[frame - self.first])


def select_neighbors(
    tracks: Mapping[int, Track],
    target_id: int,
    t0: int,
    *,
    alongside_gap_m: float = 5.0,
    use_neighbor_ids: bool = False,
) -> list[Optional[int]]:
    """Track id (or None) for each of the 9 slots at frame ``t0``.

    Geometric assignment uses lane ids, where left of lane ``l`` is ``l - 1``.
    A vehicle in an adjacent lane within ``alongside_gap_m`` longitudinally is
    alongside; otherwise the nearest ahead / behind fills the preceding /
    following slot.
    """
    target = tracks[target_id]
    if not target.has(t0):
        raise ValueError(f"target {target_id} absent at frame {t0}")
    slots: list[Optional[int]] = [target_id] + [None] * (N_SLOTS - 1)

    if use_neighbor_ids:
        for s, name in enumerate(SLOT_NAMES[1:], start=1):
            col = target.neighbor_ids.get(name)
            if col is None:
                continue
            nid = int(col[t0 - target.first])
            if nid > 0 and nid in tracks and tracks[nid].has(t0):
                slots[s] = nid
        return slots

    i0 = t0 - target.first
    tx, lane = target.x[i0], int(target.lane[i0])
    best: dict[int, tuple[float, int]] = {}
    for tid, tr in tracks.items():
        if tid == target_id or not tr.has(t0):
            continue
        j = t0 - tr.first
        dx = tr.x[j] - tx
        dl = int(tr.lane[j]) - lane
        if dl == 0:
            slot = 1 if dx >= 0 else 2
        elif dl in (-1, 1):
            base = 3 if dl == -1 else 6
            if abs(dx) < alongside_gap_m:
                slot = base + 1
            else:
                slot = base if dx > 0 else base + 2
        else:
            continue
        key = abs(dx)
        if slot not in best or (key, tid) < best[slot]:
            best[slot] = (key, tid)
    for slot, (_, tid) in best.items():
        slots[slot] = tid
    return slots


def _relative_block(tracks, slots, target, t0, start, stop) -> tuple[np.ndarray, np.ndarray]:
    i0 = t0 - target.first
    ref_x, ref_y = target.x[i0], target.y[i0]
    out = np.zeros((N_FEATURES, len(slots), stop - start + 1))
    mask = np.zeros(len(slots), dtype=bool)
    for s, tid in enumerate(slots):
        if tid is None:
            continue
        block = tracks[tid].state(start, stop)
        block[0] -= ref_x
        block[1] -= ref_y
        out[:, s] = block
        mask[s] = True
    return out, mask


def assemble_neighbor_grid(
    tracks: Mapping[int, Track],
    target_id: int,
    t0: int,
    h_obs: int,
    f_hz: float,
    *,
    alongside_gap_m: float = 5.0,
    use_neighbor_ids: bool = False,
) -> ScenarioTensor:
    """Observation tensor for the ``h_obs`` frames ending at ``t0``.

    Positions are relative to the target at ``t0``; empty slots are zero.
    """
    if target_id not in tracks or not tracks[target_id].has(t0):
        raise ValueError(f"target {target_id} absent at frame {t0}")
    target = tracks[target_id]
    start = t0 - h_obs + 1
    if not target.covers(start, t0):
        raise ValueError(f"target {target_id} lacks {h_obs} frames of history at {t0}")
    slots = select_neighbors(
        tracks, target_id, t0, alongside_gap_m=alongside_gap_m, use_neighbor_ids=use_neighbor_ids
    )
    values, mask = _relative_block(tracks, slots, target, t0, start, t0)
    values[:2, 0, -1] = 0.0
    return ScenarioTensor(values, f_hz, mask)


def extract_scenario(
    tracks: Mapping[int, Track],
    target_id: int,
    t0: int,
    h_obs: int,
    h_pred: int,
    f_hz: float,
    *,
    scenario_id: Optional[str] = None,
    alongside_gap_m: float = 5.0,
    use_neighbor_ids: bool = False,
) -> LabeledScenario:
    """Observation up to ``t0`` plus ``h_pred`` future frames, labelled by maneuver."""
    target = tracks.get(target_id)
    if target is None or not target.has(t0):
        raise ValueError(f"target {target_id} absent at frame {t0}")
    if not target.covers(t0 - h_obs + 1, t0 + h_pred):
        raise ValueError(f"target {target_id} does not cover the window around {t0}")
    obs = assemble_neighbor_grid(
        tracks, target_id, t0, h_obs, f_hz,
        alongside_gap_m=alongside_gap_m, use_neighbor_ids=use_neighbor_ids,
    )
    slots = select_neighbors(
        tracks, target_id, t0, alongside_gap_m=alongside_gap_m, use_neighbor_ids=use_neighbor_ids
    )
    future, _ = _relative_block(tracks, slots, target, t0, t0 + 1, t0 + h_pred)
    lanes = target.lane[t0 - target.first : t0 - target.first + h_pred + 1]
    return LabeledScenario(
        scenario_id if scenario_id is not None else f"{target_id}@{t0}",
        obs,
        future,
        label_maneuver(lanes),
        h_pred,
    )


# --------------------------------------------------------------------------- transforms


def upsample_observation(scenario: ScenarioTensor, target_steps: int) -> ScenarioTensor:
    """Linear interpolation along time to ``target_steps`` samples.

    Sample ``t`` of the result sits at source position ``t (H - 1) / (target_steps - 1)``,
    so both endpoints are reproduced exactly.
    """
    v = scenario.values
    h = v.shape[-1]
    if target_steps < h:
        raise ValueError(f"cannot upsample {h} steps down to {target_steps}")
    if target_steps == h:
        return ScenarioTensor(v.copy(), scenario.sample_rate_hz, scenario.slot_mask)
    if h == 1:
        out = np.repeat(v, target_steps, axis=-1)
        return ScenarioTensor(out, scenario.sample_rate_hz, scenario.slot_mask)
    pos = np.arange(target_steps) * (h - 1) / (target_steps - 1)
    i0 = np.minimum(np.floor(pos).astype(np.int64), h - 2)
    frac = pos - i0
    out = (1.0 - frac) * v[..., i0] + frac * v[..., i0 + 1]
    rate = scenario.sample_rate_hz * (target_steps - 1) / (h - 1)
    return ScenarioTensor(out, rate, scenario.slot_mask)


def label_maneuver(lanes: Sequence[int]) -> str:
    """Maneuver from a lane-id sequence starting at the last observed frame.

    Lane ids decrease to the left. Only the first lane change counts.
    """
    seq = np.asarray(lanes)
    if seq.size == 0:
        raise ValueError("lane sequence is empty")
    if not np.issubdtype(seq.dtype, np.number) or not np.all(np.isfinite(seq)):
        raise ValueError("lane sequence has missing entries")
    steps = np.diff(seq)
    changed = np.flatnonzero(steps)
    if changed.size == 0:
        return "keep-lane"
    return "lane-change-left" if steps[changed[0]] < 0 else "lane-change-right"


def balanced_split(
    scenarios: Sequence[LabeledScenario],
    train_fraction: float = 0.7,
    seed: int = 0,
) -> tuple[list[LabeledScenario], list[LabeledScenario]]:
    """Downsample every maneuver class to the smallest, then split each class
    ``floor(train_fraction * m)`` / rest. Deterministic for a given seed."""
    if not scenarios:
        raise ValueError("no scenarios to split")
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must lie in (0, 1)")
    by_class: dict[str, list[int]] = {m: [] for m in MANEUVERS}
    for i, sc in enumerate(scenarios):
        if sc.maneuver is None:
            raise ValueError(f"scenario {sc.scenario_id} is unlabelled")
        by_class[sc.maneuver].append(i)
    empty = [m for m, idx in by_class.items() if not idx]
    if empty:
        raise ValueError(f"maneuver classes without scenarios: {', '.join(empty)}")
    m = min(len(idx) for idx in by_class.values())
    n_train = math.floor(train_fraction * m + 1e-9)
    rng = np.random.default_rng(seed)
    train: list[int] = []
    test: list[int] = []
    for name in MANEUVERS:
        chosen = rng.permutation(by_class[name])[:m]
        train.extend(chosen[:n_train].tolist())
        test.extend(chosen[n_train:].tolist())
    train = rng.permutation(train).tolist() if train else []
    test = rng.permutation(test).tolist() if test else []
    return [scenarios[i] for i in train], [scenarios[i] for i in test]


# --------------------------------------------------------------------------- synthetic


def _lane_y(lane: int, n_lanes: int, width: float) -> float:
    return (n_lanes - lane) * width


def _lane_of(y: np.ndarray, n_lanes: int, width: float) -> np.ndarray:
    return n_lanes - np.floor(y / width + 0.5).astype(np.int64)


def lane_change_profile(t: np.ndarray, start: float, duration: float, width: float) -> np.ndarray:
    """Quintic lateral offset rising smoothly from 0 to ``width``."""
    tau = np.clip((np.asarray(t, dtype=np.float64) - start) / duration, 0.0, 1.0)
    return width * tau**3 * (10.0 - 15.0 * tau + 6.0 * tau * tau)


def lane_change_rate(t: np.ndarray, start: float, duration: float, width: float) -> np.ndarray:
    tau = np.clip((np.asarray(t, dtype=np.float64) - start) / duration, 0.0, 1.0)
    return width / duration * 30.0 * tau**2 * (1.0 - tau) ** 2


@dataclass(frozen=True)
class SyntheticSpec:
    n_lanes: int = 3
    n_vehicles: int = 9
    maneuver: str = "keep-lane"
    noise: float = 0.05
    seed: int = 0
    f_hz: float = 10.0
    t_obs_s: float = 3.0
    t_pred_s: float = 5.0
    lane_width_m: float = LANE_WIDTH_M
    speed_range: tuple[float, float] = (25.0, 35.0)
    lc_start_range: tuple[float, float] = (-2.0, -1.0)
    lc_duration_range: tuple[float, float] = (4.5, 5.5)


def generate_synthetic(spec: SyntheticSpec, scenario_id: Optional[str] = None) -> LabeledScenario:
    """One seeded highway scenario.

    Every vehicle drives at constant longitudinal speed. For lane changes the
    target follows :func:`lane_change_profile`, starting before the last
    observed frame so the manoeuvre is visible in the observation. Gaussian
    noise of std ``spec.noise`` perturbs the observed states only.
    """
    if spec.maneuver not in MANEUVERS:
        raise ValueError(f"unknown maneuver {spec.maneuver!r}")
    if spec.n_lanes < 2 and spec.maneuver != "keep-lane":
        raise ValueError("lane changes need at least 2 lanes")
    if not 1 <= spec.n_vehicles <= N_SLOTS:
        raise ValueError(f"n_vehicles must be in [1, {N_SLOTS}]")
    if spec.noise < 0:
        raise ValueError("noise must be non-negative")
    h_obs = int(round(spec.t_obs_s * spec.f_hz))
    h_pred = int(round(spec.t_pred_s * spec.f_hz))
    if h_obs < 2 or h_pred < h_obs:
        raise ValueError("need at least 2 observed steps and h_pred >= h_obs")
    rng = np.random.default_rng(spec.seed)
    w, nl = spec.lane_width_m, spec.n_lanes

    # Interior lanes (neighbour lanes on both sides) whenever the road has them.
    lo_lane, hi_lane = (2, nl - 1) if nl >= 3 else (1, nl)
    if spec.maneuver == "lane-change-left":
        lo_lane = max(lo_lane, 2)
    elif spec.maneuver == "lane-change-right":
        hi_lane = min(hi_lane, nl - 1)
    lane = int(rng.integers(lo_lane, hi_lane + 1))
    t0 = h_obs - 1
    frames = np.arange(h_obs + h_pred)
    t = (frames - t0) / spec.f_hz
    v0 = rng.uniform(*spec.speed_range)

    y0 = _lane_y(lane, nl, w)
    if spec.maneuver == "keep-lane":
        y = np.full_like(t, y0)
        vy = np.zeros_like(t)
    else:
        start = rng.uniform(*spec.lc_start_range)
        dur = rng.uniform(*spec.lc_duration_range)
        sign = 1.0 if spec.maneuver == "lane-change-left" else -1.0
        y = y0 + sign * lane_change_profile(t, start, dur, w)
        vy = sign * lane_change_rate(t, start, dur, w)
    tracks = {1: Track(1, frames, v0 * t, y, np.full_like(t, v0), vy, _lane_of(y, nl, w))}

    candidates = []
    for slot in range(1, N_SLOTS):
        name = SLOT_NAMES[slot]
        dl = -1 if name.startswith("left") else (1 if name.startswith("right") else 0)
        if 1 <= lane + dl <= nl:
            candidates.append((slot, dl))
    n_nb = min(spec.n_vehicles - 1, len(candidates))
    picks = sorted(rng.choice(len(candidates), size=n_nb, replace=False).tolist()) if n_nb else []
    for k, ci in enumerate(picks):
        slot, dl = candidates[ci]
        name = SLOT_NAMES[slot]
        if name.endswith("alongside"):
            gap = rng.uniform(-2.0, 2.0)
        elif name.endswith("preceding"):
            gap = rng.uniform(15.0, 60.0)
        else:
            gap = -rng.uniform(15.0, 60.0)
        vn = v0 + rng.uniform(-3.0, 3.0)
        nlane = lane + dl
        yn = np.full_like(t, _lane_y(nlane, nl, w))
        tid = k + 2
        tracks[tid] = Track(tid, frames, gap + vn * t, yn, np.full_like(t, vn), np.zeros_like(t),
                            np.full(t.shape, nlane))

    if spec.noise > 0:
        for tr in tracks.values():
            for name in ("x", "y", "vx", "vy"):
                arr = getattr(tr, name)
                arr[: h_obs] += rng.normal(0.0, spec.noise, size=h_obs)

    sc = extract_scenario(
        tracks, 1, t0, h_obs, h_pred, spec.f_hz,
        scenario_id=scenario_id if scenario_id is not None else f"synth-{spec.seed}",
    )
    if sc.maneuver != spec.maneuver:  # pragma: no cover - generator ranges make this unreachable
        raise RuntimeError(f"generated {sc.maneuver} for requested {spec.maneuver}")
    return sc


def generate_dataset(
    n_per_class: int, seed: int = 0, **spec_kwargs
) -> list[LabeledScenario]:
    """``n_per_class`` scenarios of each maneuver with per-scenario seeds drawn from ``seed``."""
    seeds = np.random.default_rng(seed).integers(0, 2**31 - 1, size=(len(MANEUVERS), n_per_class))
    out = []
    for ci, man in enumerate(MANEUVERS):
        for i in range(n_per_class):
            s = int(seeds[ci, i])
            spec = SyntheticSpec(maneuver=man, seed=s, **spec_kwargs)
            out.append(generate_synthetic(spec, scenario_id=f"{man}-{i:04d}"))
    return out


# --------------------------------------------------------------------------- neutral file format

SCENARIO_COLUMNS = ("scenario_id", "slot", "t_index", "x_m", "y_m", "vx_mps", "vy_mps")


def sidecar_path(csv_path) -> Path:
    return Path(csv_path).with_suffix(".json")


def write_scenarios(path, scenarios: Sequence[LabeledScenario]) -> list[Path]:
    """Write scenarios to ``path`` (CSV) plus a JSON sidecar; returns both paths.

    Rows with ``t_index < H_obs`` are observation, the rest future. Empty slots
    have no rows.
    """
    path = Path(path)
    if not scenarios:
        raise ValueError("nothing to write")
    first = scenarios[0].raw_observation
    h_obs, h_pred = first.n_steps, scenarios[0].h_pred
    f = first.sample_rate_hz
    meta = {
        "f_hz": f,
        "t_obs_s": h_obs / f,
        "t_pred_s": h_pred / f,
        "n_slots": first.n_slots,
        "scenarios": {},
    }
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SCENARIO_COLUMNS)
        for sc in scenarios:
            obs = sc.raw_observation
            if obs.n_steps != h_obs or sc.h_pred != h_pred or obs.sample_rate_hz != f:
                raise ValueError("all scenarios in one file must share f_hz, H_obs and H_pred")
            meta["scenarios"][sc.scenario_id] = {"maneuver": sc.maneuver}
            for s in np.flatnonzero(obs.slot_mask):
                series = obs.values[:, s, :]
                if sc.future is not None:
                    series = np.concatenate([series, sc.future[:, s, :]], axis=1)
                for ti in range(series.shape[1]):
                    w.writerow([sc.scenario_id, int(s), ti] + [repr(float(x)) for x in series[:, ti]])
    if len(scenarios) == 1:
        meta["maneuver"] = scenarios[0].maneuver
    side = sidecar_path(path)
    side.write_text(json.dumps(meta, indent=2) + "\n")
    return [path, side]


def read_scenarios(path) -> list[LabeledScenario]:
    """Inverse of :func:`write_scenarios`; malformed rows raise ScenarioFormatError."""
    path = Path(path)
    side = sidecar_path(path)
    if not side.exists():
        raise ScenarioFormatError("missing JSON sidecar " + side.name, path)
    try:
        meta = json.loads(side.read_text())
        f = float(meta["f_hz"])
        h_obs = int(round(float(meta["t_obs_s"]) * f))
        h_pred = int(round(float(meta["t_pred_s"]) * f))
    except (KeyError, ValueError, TypeError) as exc:
        raise ScenarioFormatError(f"bad sidecar: {exc}", side) from exc
    n_slots = int(meta.get("n_slots", N_SLOTS))
    per_scn = meta.get("scenarios", {})

    rows: dict[str, dict[tuple[int, int], list[float]]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return []
        if tuple(h.strip() for h in header) != SCENARIO_COLUMNS:
            raise ScenarioFormatError(f"expected header {','.join(SCENARIO_COLUMNS)}", path, 1)
        for rec in reader:
            line = reader.line_num
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) != len(SCENARIO_COLUMNS):
                raise ScenarioFormatError(f"expected {len(SCENARIO_COLUMNS)} fields, got {len(rec)}", path, line)
            try:
                slot, ti = int(rec[1]), int(rec[2])
                vals = [float(x) for x in rec[3:]]
            except ValueError as exc:
                raise ScenarioFormatError(str(exc), path, line) from None
            if not 0 <= slot < n_slots or not 0 <= ti < h_obs + h_pred:
                raise ScenarioFormatError(f"slot {slot} / t_index {ti} out of range", path, line)
            if not all(math.isfinite(x) for x in vals):
                raise ScenarioFormatError("non-finite value", path, line)
            rows.setdefault(rec[0], {})[(slot, ti)] = vals

    out = []
    for sid, cells in rows.items():
        obs = np.zeros((N_FEATURES, n_slots, h_obs))
        fut = np.zeros((N_FEATURES, n_slots, h_pred))
        mask = np.zeros(n_slots, dtype=bool)
        has_future = False
        for (slot, ti), vals in cells.items():
            if ti < h_obs:
                obs[:, slot, ti] = vals
                mask[slot] = True
            else:
                fut[:, slot, ti - h_obs] = vals
                has_future = True
        if not mask[0]:
            raise ScenarioFormatError(f"scenario {sid} has no target (slot 0) rows", path)
        man = per_scn.get(sid, {}).get("maneuver", meta.get("maneuver"))
        out.append(LabeledScenario(sid, ScenarioTensor(obs, f, mask), fut if has_future else None, man, h_pred))
    return out


# --------------------------------------------------------------------------- highway CSV ingestion


@dataclass
class IngestConfig:
    """Column mapping and window settings for highD-style track files.

    Column defaults follow highD. ``y_axis`` is ``"down"`` when lateral
    coordinates grow to the right of +x traffic (image coordinates), ``"left"``
    otherwise. Lane ids must decrease towards the left for +x traffic; the
    opposite direction is mirrored.
    """

    col_frame: str = "frame"
    col_id: str = "id"
    col_x: str = "x"
    col_y: str = "y"
    col_vx: str = "xVelocity"
    col_vy: str = "yVelocity"
    col_lane: str = "laneId"
    col_width: str = "width"
    col_height: str = "height"
    neighbor_columns: dict = field(default_factory=lambda: {
        "preceding": "precedingId",
        "following": "followingId",
        "left_preceding": "leftPrecedingId",
        "left_alongside": "leftAlongsideId",
        "left_following": "leftFollowingId",
        "right_preceding": "rightPrecedingId",
        "right_alongside": "rightAlongsideId",
        "right_following": "rightFollowingId",
    })
    meta_id: str = "id"
    meta_direction: str = "drivingDirection"
    # drivingDirection value that means travel towards -x.
    negative_direction_value: int = 1
    y_axis: str = "down"
    units_scale: float = 1.0
    f_hz: float = 25.0
    t_obs_s: float = 3.0
    t_pred_s: float = 5.0
    stride_frames: int = 25
    alongside_gap_m: float = 5.0
    use_neighbor_ids: bool = False

    @property
    def h_obs(self) -> int:
        return int(round(self.t_obs_s * self.f_hz))

    @property
    def h_pred(self) -> int:
        return int(round(self.t_pred_s * self.f_hz))

    @classmethod
    def from_mapping(cls, values: Mapping[str, str]) -> "IngestConfig":
        cfg = cls()
        nb = dict(cfg.neighbor_columns)
        for key, raw in values.items():
            if key.startswith("col_") and key[4:] in nb:
                nb[key[4:]] = raw
                continue
            if not hasattr(cfg, key) or key == "neighbor_columns":
                continue
            cur = getattr(cfg, key)
            if isinstance(cur, bool):
                val = str(raw).strip().lower() in {"1", "true", "yes", "on"}
            elif isinstance(cur, int):
                val = int(raw)
            elif isinstance(cur, float):
                val = float(raw)
            else:
                val = str(raw)
            setattr(cfg, key, val)
        cfg.neighbor_columns = nb
        return cfg


def _read_rows(path: Path, required: Iterable[str]):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            return [], []
        fields = [f.strip() for f in reader.fieldnames]
        reader.fieldnames = fields
        missing = [c for c in required if c and c not in fields]
        if missing:
            raise ScenarioFormatError(f"missing required columns: {', '.join(missing)}", path, 1)
        rows = [(reader.line_num, r) for r in reader]
    return fields, rows


def _load_directions(meta_file, cfg: IngestConfig) -> dict[int, int]:
    if meta_file is None:
        return {}
    meta_file = Path(meta_file)
    _, rows = _read_rows(meta_file, [cfg.meta_id, cfg.meta_direction])
    out = {}
    for line, r in rows:
        try:
            out[int(float(r[cfg.meta_id]))] = int(float(r[cfg.meta_direction]))
        except (TypeError, ValueError):
            raise ScenarioFormatError("bad meta row", meta_file, line) from None
    return out


def load_tracks(tracks_file, meta_file=None, config: Optional[IngestConfig] = None) -> dict[int, dict[int, Track]]:
    """Parse a track file into vehicle-aligned Tracks grouped by driving direction
    (+1 or -1)."""
    cfg = config or IngestConfig()
    path = Path(tracks_file)
    required = [cfg.col_frame, cfg.col_id, cfg.col_x, cfg.col_y, cfg.col_vx, cfg.col_vy, cfg.col_lane]
    fields, rows = _read_rows(path, required)
    if not rows:
        return {}
    use_bbox = cfg.col_width in fields and cfg.col_height in fields and cfg.col_width and cfg.col_height
    nb_cols = {k: c for k, c in cfg.neighbor_columns.items() if c in fields}

    per_id: dict[int, list] = {}
    for line, r in rows:
        try:
            frame = int(float(r[cfg.col_frame]))
            tid = int(float(r[cfg.col_id]))
            x = float(r[cfg.col_x]) * cfg.units_scale
            y = float(r[cfg.col_y]) * cfg.units_scale
            if use_bbox:
                x += 0.5 * float(r[cfg.col_width]) * cfg.units_scale
                y += 0.5 * float(r[cfg.col_height]) * cfg.units_scale
            vx = float(r[cfg.col_vx]) * cfg.units_scale
            vy = float(r[cfg.col_vy]) * cfg.units_scale
            lane = int(float(r[cfg.col_lane]))
            nbs = {k: int(float(r[c] or 0)) for k, c in nb_cols.items()}
        except (TypeError, ValueError) as exc:
            raise ScenarioFormatError(f"malformed row ({exc})", path, line) from None
        if not all(math.isfinite(v) for v in (x, y, vx, vy)):
            raise ScenarioFormatError("non-finite value", path, line)
        per_id.setdefault(tid, []).append((frame, x, y, vx, vy, lane, nbs))

    directions = _load_directions(meta_file, cfg)
    groups: dict[int, dict[int, Track]] = {}
    for tid, recs in per_id.items():
        recs.sort(key=lambda rec: rec[0])
        frames = np.array([rec[0] for rec in recs])
        if np.any(np.diff(frames) != 1):
            log.warning("track %d has frame gaps; skipped", tid)
            continue
        arr = np.array([rec[1:6] for rec in recs], dtype=np.float64)
        x, y, vx, vy, lane = arr.T
        if tid in directions:
            sign = -1 if directions[tid] == cfg.negative_direction_value else 1
        else:
            sign = -1 if np.mean(vx) < 0 else 1
        lat = -1.0 if cfg.y_axis == "down" else 1.0
        # Rotate into the driving frame; lane ids of -x traffic are negated so
        # "left" is always the decreasing direction.
        x, vx = sign * x, sign * vx
        y, vy = sign * lat * y, sign * lat * vy
        lane = sign * lane.astype(np.int64)
        nbs = {k: np.array([rec[6][k] for rec in recs]) for k in nb_cols}
        groups.setdefault(sign, {})[tid] = Track(tid, frames, x, y, vx, vy, lane, nbs)
    return groups


def ingest_highway_csv(tracks_file, meta_file=None, config: Optional[IngestConfig] = None) -> list[LabeledScenario]:
    """Slide (observation, future) windows over every fully tracked vehicle.

    Windows end their observation at ``t0 = first + h_obs - 1 + k * stride``
    and need ``h_pred`` future frames; the count per vehicle is
    ``floor((n_frames - h_obs - h_pred) / stride) + 1``.
    """
    cfg = config or IngestConfig()
    groups = load_tracks(tracks_file, meta_file, cfg)
    out: list[LabeledScenario] = []
    h_obs, h_pred = cfg.h_obs, cfg.h_pred
    for sign in sorted(groups):
        tracks = groups[sign]
        for tid in sorted(tracks):
            tr = tracks[tid]
            t0 = tr.first + h_obs - 1
            while t0 + h_pred <= tr.last:
                try:
                    sc = extract_scenario(
                        tracks, tid, t0, h_obs, h_pred, cfg.f_hz,
                        scenario_id=f"{tid}@{t0}",
                        alongside_gap_m=cfg.alongside_gap_m,
                        use_neighbor_ids=cfg.use_neighbor_ids,
                    )
                except ValueError as exc:
                    log.debug("window %d@%d skipped: %s", tid, t0, exc)
                else:
                    if sc.is_continuous():
                        out.append(sc)
                t0 += cfg.stride_frames
    return out
