"""Action-level assessment: trajectory target matching and anomaly watching.

A reference performance is downsampled to key frames (default 2 Hz). Each
key frame spawns one TargetSet: the reference positions of the tracked
joints. The user bursts the target by bringing every tracked joint within
the match radius; a target with no match for longer than the skip time is
retired as missed and the next one spawns. Meanwhile a short sliding
window of corrected frames feeds anomaly detection (fall, facing away
from the station, hand far from its target); an anomaly continuously
active beyond the wait time aborts the evaluation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .kernels import all_within, joint_distances
from .model import TrajectoryParams
from .telemetry import (ReferenceStats, SkeletonFrame, TaskSlice,
                        scale_frame, skeleton_frames)

ANOMALY_KINDS = ("fall", "orientation", "hand-position")


@dataclass(frozen=True)
class TargetSet:
    frame_index: int
    targets: dict[str, np.ndarray]
    spawned_at: float

    def __eq__(self, other):
        if not isinstance(other, TargetSet):
            return NotImplemented
        return (self.frame_index == other.frame_index
                and self.spawned_at == other.spawned_at
                and self.targets.keys() == other.targets.keys()
                and all(np.array_equal(v, other.targets[k])
                        for k, v in self.targets.items()))


@dataclass(frozen=True)
class MatchResult:
    all_matched: bool
    distances: dict[str, float]
    missing: tuple[str, ...] = ()


@dataclass(frozen=True)
class Anomaly:
    kind: str
    t_start: float
    t_end: float


@dataclass(frozen=True)
class TrajectoryState:
    cursor: int = 0
    burst: int = 0
    missed: int = 0
    repetitions_done: int = 0
    spawned: int = 1
    spawned_at: float = 0.0
    complete: bool = False
    active_anomalies: tuple[tuple[str, float], ...] = ()
    anomaly_log: tuple[Anomaly, ...] = ()
    aborted: bool = False
    abort_kind: str | None = None

    @property
    def retired(self) -> int:
        return self.burst + self.missed


@dataclass(frozen=True)
class ReferenceTrack:
    """Key-framed reference trajectory: times (K,) and positions (K, J, 3)
    for the tracked joints, in params.joint_ids order."""

    joint_ids: tuple[str, ...]
    times: np.ndarray
    positions: np.ndarray

    @property
    def key_frames(self) -> int:
        return len(self.times)


def key_frame_count(duration: float, key_rate: float) -> int:
    if duration <= 0:
        raise ValueError("reference duration must be > 0")
    return max(1, math.ceil(duration * key_rate))


def build_reference_track(ref_slice: TaskSlice, params: TrajectoryParams,
                          user: str | None = None) -> ReferenceTrack:
    """Downsample the reference skeleton stream to key frames.

    Key frame k targets time t0 + k/key_rate and takes the first recorded
    frame at or after it (the last frame when the stream ends early).
    """
    frames = skeleton_frames(ref_slice.events, user)
    if not frames:
        raise ValueError(f"reference slice for {ref_slice.task_id!r} has no skeleton frames")
    count = key_frame_count(ref_slice.duration, params.key_rate)
    frame_times = np.array([t for t, _ in frames])

    times = np.empty(count)
    positions = np.empty((count, len(params.joint_ids), 3))
    for k in range(count):
        goal = ref_slice.t0 + k / params.key_rate
        i = int(np.searchsorted(frame_times, goal, side="left"))
        if i >= len(frames):
            i = len(frames) - 1
        t, frame = frames[i]
        times[k] = t
        for j, joint in enumerate(params.joint_ids):
            if not frame.has(joint):
                raise ValueError(f"reference missing joint {joint!r} at key frame {k}")
            positions[k, j] = frame.position(joint)
    return ReferenceTrack(joint_ids=tuple(params.joint_ids),
                          times=times, positions=positions)


def build_targets(ref_slice: TaskSlice, params: TrajectoryParams,
                  cursor: int) -> TargetSet:
    """TargetSet at a cursor position (spawned-at defaults to the key
    frame's reference time)."""
    track = build_reference_track(ref_slice, params)
    if not 0 <= cursor < track.key_frames:
        raise ValueError("trajectory exhausted")
    targets = {j: track.positions[cursor, i].copy()
               for i, j in enumerate(track.joint_ids)}
    return TargetSet(frame_index=cursor, targets=targets,
                     spawned_at=float(track.times[cursor]))


def match_frame(targets: TargetSet, frame: SkeletonFrame,
                params: TrajectoryParams) -> MatchResult:
    """Closed-ball test: matched iff every target joint is within
    match_radius (boundary inclusive). Missing joints are flagged and
    fail the match."""
    present = [j for j in targets.targets if frame.has(j)]
    missing = tuple(j for j in targets.targets if not frame.has(j))
    distances: dict[str, float] = {}
    ok = not missing
    if present:
        points = np.array([frame.position(j) for j in present])
        goals = np.array([targets.targets[j] for j in present])
        dists = joint_distances(points, goals)
        for joint, d in zip(present, dists):
            distances[joint] = float(d)
            if d > params.match_radius:
                ok = False
    return MatchResult(all_matched=ok, distances=distances, missing=missing)


def step_trajectory(state: TrajectoryState, frame: SkeletonFrame, t: float,
                    track: ReferenceTrack, params: TrajectoryParams,
                    matched: bool | None = None):
    """One matching transition. Returns (new state, feedback primitives).

    Feedback primitives are tuples: ("burst", frame-index, joint-count),
    ("missed", frame-index), ("repetition", n). At most one target is
    retired per call; an already complete or aborted state passes through
    unchanged.
    """
    if state.aborted or state.complete:
        return state, []
    if matched is None:
        goal = track.positions[state.cursor]
        idx = _joint_indices(frame, track.joint_ids)
        matched = idx is not None and bool(
            all_within(frame.positions[idx], goal, params.match_radius))

    events: list[tuple] = []
    if matched:
        state = replace(state, burst=state.burst + 1)
        events.append(("burst", state.cursor, len(track.joint_ids)))
    elif t - state.spawned_at > params.skip_time:
        state = replace(state, missed=state.missed + 1)
        events.append(("missed", state.cursor))
    else:
        return state, events

    cursor = state.cursor + 1
    if cursor >= track.key_frames:
        done = state.repetitions_done + 1
        if done < params.repetitions:
            state = replace(state, cursor=0, repetitions_done=done,
                            spawned=state.spawned + 1, spawned_at=t)
        else:
            state = replace(state, repetitions_done=done, complete=True)
        events.append(("repetition", done))
    else:
        state = replace(state, cursor=cursor,
                        spawned=state.spawned + 1, spawned_at=t)
    return state, events


def _joint_indices(frame: SkeletonFrame, joints: tuple[str, ...]):
    try:
        return np.array([frame.index(j) for j in joints], dtype=np.int64)
    except KeyError:
        return None


# ---------------------------------------------------------------------------
# anomalies

def facing_direction(frame: SkeletonFrame) -> np.ndarray | None:
    """User facing direction projected to the ground plane (y-up).

    Uses the shoulder line when both shoulders are tracked; falls back to
    the head-forward marker joint; None when neither is available or the
    geometry is degenerate.
    """
    if frame.has("shoulder-left") and frame.has("shoulder-right"):
        v = frame.position("shoulder-right") - frame.position("shoulder-left")
        out = np.array([v[2], 0.0, -v[0]])
    elif frame.has("head-forward") and frame.has("head"):
        v = frame.position("head-forward") - frame.position("head")
        out = np.array([v[0], 0.0, v[2]])
    else:
        return None
    norm = float(np.linalg.norm(out))
    if norm < 1e-9:
        return None
    return out / norm


def detect_anomalies(window: Sequence[tuple[float, SkeletonFrame]],
                     params: TrajectoryParams,
                     ref_stats: ReferenceStats,
                     current_target: dict[str, np.ndarray] | None = None):
    """Currently active anomaly kinds over a sliding window of
    (t, height-corrected frame) samples.

    Returns (kinds, warming_up). A window spanning less than
    params.anomaly_window seconds only warms up. Fall and orientation are
    judged on the newest frame; hand-position requires the assessed hand
    to stay beyond hand_proximity_factor * match_radius from its current
    target across the whole window.
    """
    if not window or window[-1][0] - window[0][0] < params.anomaly_window:
        return set(), True
    kinds: set[str] = set()
    latest = window[-1][1]

    if latest.has("head"):
        if latest.position("head")[1] < params.fall_height_fraction * ref_stats.face_height:
            kinds.add("fall")

    facing = facing_direction(latest)
    if facing is not None:
        station = np.asarray(params.station_forward, dtype=np.float64)
        norm = float(np.linalg.norm(station))
        if norm > 0 and float(facing @ station) / norm < 0.0:  # cos > 90 degrees
            kinds.add("orientation")

    hand = ref_stats.hand_joint
    if current_target is not None and hand in current_target:
        limit = params.hand_proximity_factor * params.match_radius
        away = True
        seen = False
        for _, f in window:
            if not f.has(hand):
                continue
            seen = True
            if float(np.linalg.norm(f.position(hand) - current_target[hand])) <= limit:
                away = False
                break
        if seen and away:
            kinds.add("hand-position")
    return kinds, False


def update_anomalies(state: TrajectoryState, kinds: set[str], t: float,
                     params: TrajectoryParams):
    """Fold a detection result into the state: opens and closes episodes,
    and aborts when one kind stays active beyond anomaly_wait.

    Feedback primitives: ("anomaly", kind, "start"|"end"), ("abort", kind).
    """
    if state.aborted:
        return state, []
    events: list[tuple] = []
    active = dict(state.active_anomalies)

    for kind in ANOMALY_KINDS:
        if kind in kinds and kind not in active:
            active[kind] = t
            events.append(("anomaly", kind, "start"))
        elif kind not in kinds and kind in active:
            onset = active.pop(kind)
            state = replace(state, anomaly_log=state.anomaly_log
                            + (Anomaly(kind, onset, t),))
            events.append(("anomaly", kind, "end"))

    for kind in ANOMALY_KINDS:
        if kind in active and t - active[kind] > params.anomaly_wait:
            log = state.anomaly_log + tuple(
                Anomaly(k, onset, t) for k, onset in active.items())
            state = replace(state, active_anomalies=(), anomaly_log=log,
                            aborted=True, abort_kind=kind)
            events.append(("abort", kind))
            return state, events

    state = replace(state, active_anomalies=tuple(active.items()))
    return state, events


def close_anomalies(state: TrajectoryState, t: float) -> TrajectoryState:
    """End any still-active episodes at time t (used at finalize)."""
    if not state.active_anomalies:
        return state
    log = state.anomaly_log + tuple(
        Anomaly(k, onset, max(onset, t)) for k, onset in state.active_anomalies)
    return replace(state, active_anomalies=(), anomaly_log=log)


# ---------------------------------------------------------------------------
# scoring

def trajectory_score(state: TrajectoryState,
                     params: TrajectoryParams) -> tuple[float, str]:
    """Burst ratio minus a penalty per anomaly episode, clamped to [0, 1].

    Aborted evaluations score 0; so does a state that never retired a
    target. Returns (score, detail)."""
    if state.aborted:
        return 0.0, f"aborted: {state.abort_kind} anomaly exceeded wait"
    total = state.burst + state.missed
    if total == 0:
        return 0.0, "no trajectory activity"
    episodes = len(state.anomaly_log)
    score = max(0.0, state.burst / total - params.anomaly_penalty * episodes)
    return score, (f"burst {state.burst}/{total}, {episodes} anomaly episodes")


@dataclass(frozen=True)
class TrajectorySummary:
    task_id: str
    score: float
    detail: str
    burst: int
    missed: int
    spawned: int
    repetitions_done: int
    anomalies: tuple[Anomaly, ...]
    aborted: bool
    abort_kind: str | None
    correction_factor: float
    warnings: tuple[str, ...]


class ActionEvaluator:
    """Streams one user's frames through height correction, target
    matching and anomaly watching for a single task activation.

    Frames inside the first second are buffered so the correction factor
    can be computed from the median face-hand distance of that window
    (matching how reference statistics are taken), then replayed.
    """

    def __init__(self, task_id: str, ref_slice: TaskSlice,
                 params: TrajectoryParams, ref_stats: ReferenceStats,
                 t_start: float, ref_user: str | None = None):
        self.task_id = task_id
        self.params = params
        self.ref_stats = ref_stats
        self.t_start = t_start
        self.track = build_reference_track(ref_slice, params, ref_user)
        self.state = TrajectoryState(spawned_at=t_start)
        self.factor: float | None = None  # None until the warm-up window closes
        self._pending: list[tuple[float, SkeletonFrame]] = []
        self._window: list[tuple[float, SkeletonFrame]] = []
        self._index_cache: dict[tuple[str, ...], object] = {}
        self._warnings: list[str] = []
        self._facing_warned = False

    # -- correction ---------------------------------------------------------

    def _compute_factor(self) -> float:
        frames = [f for _, f in self._pending]
        usable = [f for f in frames
                  if f.has("head") and f.has(self.ref_stats.hand_joint)]
        if not usable:
            self._warnings.append("height correction skipped: no usable frames")
            return 1.0
        heads = np.array([f.position("head") for f in usable])
        hands = np.array([f.position(self.ref_stats.hand_joint) for f in usable])
        d = float(np.median(np.linalg.norm(heads - hands, axis=1)))
        if d < 0.01:
            self._warnings.append("height correction refused: degenerate pose")
            return 1.0
        return self.ref_stats.face_hand_distance / d

    # -- streaming ----------------------------------------------------------

    def observe(self, t: float, frame: SkeletonFrame) -> list[tuple]:
        if self.state.aborted:
            return []
        if self.factor is None:
            if t <= self.t_start + 1.0:
                self._pending.append((t, frame))
                return []
            self.factor = self._compute_factor()
            events: list[tuple] = []
            for pt, pf in self._pending:
                events.extend(self._step(pt, pf))
                if self.state.aborted:
                    return events
            self._pending.clear()
            events.extend(self._step(t, frame))
            return events
        return self._step(t, frame)

    def _step(self, t: float, frame: SkeletonFrame) -> list[tuple]:
        corrected = scale_frame(frame, self.factor)
        window = self._window
        window.append((t, corrected))
        while len(window) >= 2 and window[1][0] <= t - self.params.anomaly_window:
            window.pop(0)

        target = None
        if not self.state.complete:
            target = {j: self.track.positions[self.state.cursor, i]
                      for i, j in enumerate(self.track.joint_ids)}
        kinds, warming = detect_anomalies(window, self.params,
                                          self.ref_stats, target)
        events: list[tuple] = []
        if not warming:
            if (facing_direction(corrected) is None and not self._facing_warned):
                self._facing_warned = True
                self._warnings.append(
                    "orientation anomaly disabled: no shoulder or head-forward joints")
            self.state, anomaly_events = update_anomalies(
                self.state, kinds, t, self.params)
            events.extend(anomaly_events)
            if self.state.aborted:
                return events

        matched = self._matches(corrected)
        self.state, step_events = step_trajectory(
            self.state, corrected, t, self.track, self.params, matched=matched)
        events.extend(step_events)
        return events

    def _matches(self, frame: SkeletonFrame) -> bool:
        if self.state.complete:
            return False
        idx = self._index_cache.get(frame.names)
        if idx is None:
            idx = _joint_indices(frame, self.track.joint_ids)
            if idx is None:
                idx = "missing"
                self._warnings.append(
                    "frames missing tracked joints; targets cannot burst")
            self._index_cache[frame.names] = idx
        if isinstance(idx, str):
            return False
        return bool(all_within(frame.positions[idx],
                               self.track.positions[self.state.cursor],
                               self.params.match_radius))

    # -- finalize -----------------------------------------------------------

    def finalize(self, t_end: float) -> TrajectorySummary:
        if self.factor is None:
            # task ended inside the warm-up window; replay what we have
            self.factor = self._compute_factor() if self._pending else 1.0
            for pt, pf in self._pending:
                self._step(pt, pf)
                if self.state.aborted:
                    break
            self._pending.clear()
        state = self.state
        if not state.aborted and not state.complete and state.spawned > state.retired:
            state = replace(state, missed=state.missed + 1)
        state = close_anomalies(state, t_end)
        self.state = state
        score, detail = trajectory_score(state, self.params)
        return TrajectorySummary(
            task_id=self.task_id, score=score, detail=detail,
            burst=state.burst, missed=state.missed, spawned=state.spawned,
            repetitions_done=state.repetitions_done,
            anomalies=state.anomaly_log, aborted=state.aborted,
            abort_kind=state.abort_kind,
            correction_factor=self.factor if self.factor is not None else 1.0,
            warnings=tuple(self._warnings))
