"""Session recordings: event model, line parser, task slicing, height correction.

Recording format (UTF-8, one event per line, space separated)::

    t=<sec> u=<user> pose <obj> px py pz qx qy qz qw
    t=<sec> u=<user> attach <obj> <target> on|off
    t=<sec> u=<user> collide <obj> <other>
    t=<sec> u=<user> text <field> "<value>"
    t=<sec> u=<user> skel <joint>=x,y,z[;<joint>=x,y,z...]
    t=<sec> u=<user> mark <task> start|end

Timestamps must be non-decreasing; quaternions are written normalized
(scalar-last, checked to 1e-6 here). Blank lines and ``#`` comments are
skipped.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .kernels import scale_about

QUAT_NORM_TOL = 1e-6
MIN_FACE_HAND_DISTANCE = 0.01  # m; below this the pose is degenerate

HAND_JOINTS = ("hand-right", "hand-left")


class RecordingError(ValueError):
    """Malformed recording line or stream-level invariant violation."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line else message)


@dataclass(frozen=True, slots=True)
class Pose:
    object_id: str
    position: tuple[float, float, float]
    orientation: tuple[float, float, float, float]  # qx, qy, qz, qw


@dataclass(frozen=True, slots=True)
class Attach:
    object_id: str
    target_id: str
    attached: bool


@dataclass(frozen=True, slots=True)
class Collision:
    object_id: str
    other_id: str


@dataclass(frozen=True, slots=True)
class TextInput:
    field_id: str
    value: str


@dataclass(frozen=True, slots=True)
class TaskMark:
    task_id: str
    edge: str  # start | end


@dataclass(frozen=True, eq=False)
class SkeletonFrame:
    """One tracked skeleton sample: joint names plus an (J, 3) position array.

    Positions are float64 meters; confidences default to 1 per joint.
    """

    names: tuple[str, ...]
    positions: np.ndarray
    confidences: np.ndarray | None = None

    def __post_init__(self):
        pos = np.ascontiguousarray(self.positions, dtype=np.float64)
        if pos.shape != (len(self.names), 3):
            raise ValueError("positions must be shaped (len(names), 3)")
        object.__setattr__(self, "positions", pos)
        if len(set(self.names)) != len(self.names):
            raise ValueError("duplicate joint name in frame")

    def __eq__(self, other):
        if not isinstance(other, SkeletonFrame):
            return NotImplemented
        if self.names != other.names:
            return False
        if not np.array_equal(self.positions, other.positions):
            return False
        a = self.confidences
        b = other.confidences
        if (a is None) != (b is None):
            return False
        return a is None or np.array_equal(a, b)

    def has(self, joint: str) -> bool:
        return joint in self.names

    def index(self, joint: str) -> int:
        try:
            return self.names.index(joint)
        except ValueError:
            raise KeyError(f"frame has no joint {joint!r}") from None

    def position(self, joint: str) -> np.ndarray:
        return self.positions[self.index(joint)]

    def joints(self) -> dict[str, np.ndarray]:
        return {n: self.positions[i] for i, n in enumerate(self.names)}


Payload = Pose | Attach | Collision | TextInput | SkeletonFrame | TaskMark


@dataclass(frozen=True, eq=False)
class Event:
    t: float
    user: str
    payload: Payload

    def __eq__(self, other):
        if not isinstance(other, Event):
            return NotImplemented
        return (self.t == other.t and self.user == other.user
                and self.payload == other.payload)


@dataclass(frozen=True)
class SessionRecording:
    session_id: str
    user_ids: tuple[str, ...]
    events: tuple[Event, ...]
    frame_rate_hint: float | None = None


@dataclass(frozen=True)
class TaskSlice:
    task_id: str
    t0: float
    t1: float
    events: tuple[Event, ...]

    @property
    def duration(self) -> float:
        return self.t1 - self.t0


@dataclass(frozen=True)
class ReferenceStats:
    """Skeleton statistics of the reference performer for one task."""

    face_height: float
    hand_height: float
    face_hand_distance: float
    hand_joint: str = "hand-right"


@dataclass(frozen=True)
class Reference:
    """One reference performance of one task with its SME quality rating."""

    slice: TaskSlice
    quality: float = 1.0
    stats: ReferenceStats | None = None

    def __post_init__(self):
        if not 0.0 <= self.quality <= 1.0:
            raise ValueError("reference quality must be in [0, 1]")


@dataclass
class ReferenceSet:
    """References grouped per task id, each carrying its skeleton stats."""

    by_task: dict[str, list[Reference]]

    def tasks(self) -> tuple[str, ...]:
        return tuple(self.by_task)

    def for_task(self, task_id: str) -> list[Reference]:
        refs = self.by_task.get(task_id)
        if not refs:
            raise KeyError(f"no reference for task {task_id!r}")
        return refs


# ---------------------------------------------------------------------------
# line parsing

def _parse_prefixed(token: str, prefix: str, lineno: int) -> str:
    if not token.startswith(prefix):
        raise RecordingError(f"expected {prefix}<value>, got {token!r}", lineno)
    return token[len(prefix):]


def _parse_floats(tokens: list[str], lineno: int) -> list[float]:
    try:
        return [float(tok) for tok in tokens]
    except ValueError:
        raise RecordingError(f"not a number in {tokens!r}", lineno) from None


def parse_event_line(line: str, lineno: int = 0) -> Event:
    tokens = line.split()
    if len(tokens) < 3:
        raise RecordingError("event needs t=, u= and a kind", lineno)
    t_text = _parse_prefixed(tokens[0], "t=", lineno)
    user = _parse_prefixed(tokens[1], "u=", lineno)
    try:
        t = float(t_text)
    except ValueError:
        raise RecordingError(f"bad timestamp {t_text!r}", lineno) from None
    if t < 0 or not math.isfinite(t):
        raise RecordingError(f"timestamp out of range: {t_text}", lineno)
    if not user:
        raise RecordingError("empty user id", lineno)
    kind, rest = tokens[2], tokens[3:]

    if kind == "pose":
        if len(rest) != 8:
            raise RecordingError("pose needs <obj> and 7 numbers", lineno)
        nums = _parse_floats(rest[1:], lineno)
        quat = tuple(nums[3:])
        norm = math.sqrt(sum(c * c for c in quat))
        if abs(norm - 1.0) > QUAT_NORM_TOL:
            raise RecordingError(f"quaternion norm {norm:.9f} not within 1e-6 of 1", lineno)
        payload: Payload = Pose(object_id=rest[0],
                                position=tuple(nums[:3]), orientation=quat)
    elif kind == "attach":
        if len(rest) != 3 or rest[2] not in ("on", "off"):
            raise RecordingError("attach needs <obj> <target> on|off", lineno)
        payload = Attach(object_id=rest[0], target_id=rest[1],
                         attached=rest[2] == "on")
    elif kind == "collide":
        if len(rest) != 2:
            raise RecordingError("collide needs <obj> <other>", lineno)
        payload = Collision(object_id=rest[0], other_id=rest[1])
    elif kind == "text":
        if len(rest) < 2:
            raise RecordingError('text needs <field> "<value>"', lineno)
        raw = line.split(None, 4)[4]
        if len(raw) < 2 or raw[0] != '"' or raw[-1] != '"':
            raise RecordingError("text value must be double-quoted", lineno)
        value = raw[1:-1]
        if '"' in value:
            raise RecordingError("text value must not contain quotes", lineno)
        payload = TextInput(field_id=rest[0], value=value)
    elif kind == "skel":
        if not rest:
            raise RecordingError("skel needs joint=x,y,z entries", lineno)
        raw = line.split(None, 3)[3]
        names: list[str] = []
        coords: list[list[float]] = []
        for part in raw.split(";"):
            part = part.strip()
            if "=" not in part:
                raise RecordingError(f"bad skel entry {part!r}", lineno)
            name, xyz = part.split("=", 1)
            pieces = xyz.split(",")
            if len(pieces) != 3:
                raise RecordingError(f"joint {name!r} needs x,y,z", lineno)
            names.append(name)
            coords.append(_parse_floats(pieces, lineno))
        try:
            payload = SkeletonFrame(names=tuple(names),
                                    positions=np.asarray(coords, dtype=np.float64))
        except ValueError as e:
            raise RecordingError(str(e), lineno) from None
    elif kind == "mark":
        if len(rest) != 2 or rest[1] not in ("start", "end"):
            raise RecordingError("mark needs <task> start|end", lineno)
        payload = TaskMark(task_id=rest[0], edge=rest[1])
    else:
        raise RecordingError(f"unknown event kind {kind!r}", lineno)

    return Event(t=t, user=user, payload=payload)


def parse_session(text: str, session_id: str = "session") -> SessionRecording:
    """Parse a full recording. Rejects (never sorts) timestamp regressions
    and unmatched or nested TaskMarks, reporting the offending line."""
    events: list[Event] = []
    users: list[str] = []
    seen_users: set[str] = set()
    open_marks: dict[str, int] = {}
    last_t = -math.inf

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        event = parse_event_line(line, lineno)
        if event.t < last_t:
            raise RecordingError(
                f"timestamp regression: {event.t} after {last_t}", lineno)
        last_t = event.t
        if event.user not in seen_users:
            seen_users.add(event.user)
            users.append(event.user)
        if isinstance(event.payload, TaskMark):
            task_id = event.payload.task_id
            if event.payload.edge == "start":
                if task_id in open_marks:
                    raise RecordingError(
                        f"nested start mark for task {task_id!r}", lineno)
                open_marks[task_id] = lineno
            else:
                if task_id not in open_marks:
                    raise RecordingError(
                        f"end mark without start for task {task_id!r}", lineno)
                del open_marks[task_id]
        events.append(event)

    if open_marks:
        task_id, lineno = next(iter(open_marks.items()))
        raise RecordingError(f"unmatched start mark for task {task_id!r}", lineno)

    return SessionRecording(session_id=session_id, user_ids=tuple(users),
                            events=tuple(events),
                            frame_rate_hint=_frame_rate_hint(events))


def _frame_rate_hint(events: list[Event]) -> float | None:
    times: dict[str, list[float]] = {}
    for e in events:
        if isinstance(e.payload, SkeletonFrame):
            times.setdefault(e.user, []).append(e.t)
    if not times:
        return None
    best = max(times.values(), key=len)
    if len(best) < 2:
        return None
    dt = float(np.median(np.diff(np.asarray(best))))
    return 1.0 / dt if dt > 0 else None


# ---------------------------------------------------------------------------
# serialization (used by the synthetic recorder and round-trip tests)

def _f(x: float) -> str:
    return repr(float(x))


def serialize_event(event: Event) -> str:
    head = f"t={_f(event.t)} u={event.user}"
    p = event.payload
    if isinstance(p, Pose):
        nums = " ".join(_f(v) for v in (*p.position, *p.orientation))
        return f"{head} pose {p.object_id} {nums}"
    if isinstance(p, Attach):
        state = "on" if p.attached else "off"
        return f"{head} attach {p.object_id} {p.target_id} {state}"
    if isinstance(p, Collision):
        return f"{head} collide {p.object_id} {p.other_id}"
    if isinstance(p, TextInput):
        return f'{head} text {p.field_id} "{p.value}"'
    if isinstance(p, SkeletonFrame):
        parts = ";".join(
            f"{n}={_f(x)},{_f(y)},{_f(z)}"
            for n, (x, y, z) in zip(p.names, p.positions))
        return f"{head} skel {parts}"
    if isinstance(p, TaskMark):
        return f"{head} mark {p.task_id} {p.edge}"
    raise TypeError(f"unknown payload {type(p).__name__}")


def serialize_recording(rec: SessionRecording) -> str:
    return "\n".join(serialize_event(e) for e in rec.events) + "\n"


# ---------------------------------------------------------------------------
# slicing

def slice_task(rec: SessionRecording, task_id: str) -> TaskSlice:
    """Cut the sub-stream between a task's start and end marks.

    Events with t in [t0, t1] are kept (closed interval); the task's own
    marks are not part of the slice.
    """
    starts = [e for e in rec.events
              if isinstance(e.payload, TaskMark)
              and e.payload.task_id == task_id and e.payload.edge == "start"]
    ends = [e for e in rec.events
            if isinstance(e.payload, TaskMark)
            and e.payload.task_id == task_id and e.payload.edge == "end"]
    if not starts or not ends:
        raise ValueError(f"no marks for task {task_id!r}")
    if len(starts) > 1 or len(ends) > 1:
        raise ValueError(f"multiple mark pairs for task {task_id!r}")
    t0, t1 = starts[0].t, ends[0].t
    if t1 <= t0:
        raise ValueError(f"task {task_id!r} marks are not a positive interval")
    kept = tuple(
        e for e in rec.events
        if t0 <= e.t <= t1
        and not (isinstance(e.payload, TaskMark) and e.payload.task_id == task_id))
    return TaskSlice(task_id=task_id, t0=t0, t1=t1, events=kept)


def skeleton_frames(events, user: str | None = None) -> list[tuple[float, SkeletonFrame]]:
    """(t, frame) pairs for one user (or all users when user is None)."""
    return [(e.t, e.payload) for e in events
            if isinstance(e.payload, SkeletonFrame)
            and (user is None or e.user == user)]


# ---------------------------------------------------------------------------
# height correction

def _pick_hand(frame: SkeletonFrame, preferred: str | None) -> str:
    if preferred is not None and frame.has(preferred):
        return preferred
    for hand in HAND_JOINTS:
        if frame.has(hand):
            return hand
    raise ValueError("frame has no hand joint")


def correction_factor(frame: SkeletonFrame, stats: ReferenceStats) -> float | None:
    """Scale factor mapping the user's face-hand distance onto the
    reference's, or None when the user pose is degenerate (< 1 cm)."""
    if stats.face_hand_distance <= 0:
        raise ValueError("reference face-hand distance must be > 0")
    if not frame.has("head"):
        raise ValueError("frame has no head joint")
    hand = _pick_hand(frame, stats.hand_joint)
    d = float(np.linalg.norm(frame.position("head") - frame.position(hand)))
    if d < MIN_FACE_HAND_DISTANCE:
        return None
    return stats.face_hand_distance / d


def scale_frame(frame: SkeletonFrame, factor: float) -> SkeletonFrame:
    """Scale all joints about the head position. factor 1 returns the
    input frame unchanged."""
    if factor == 1.0:
        return frame
    center = np.array(frame.position("head"), dtype=np.float64)
    scaled = scale_about(frame.positions, center, float(factor))
    return SkeletonFrame(names=frame.names, positions=scaled,
                         confidences=frame.confidences)


def height_correction(frame: SkeletonFrame, stats: ReferenceStats) -> SkeletonFrame:
    """Normalize a user frame to the reference performer's proportions.

    Joints are scaled about the head so the face-hand distance matches the
    reference. A degenerate user pose (face-hand distance under 1 cm) is
    passed through unchanged; callers detect that by identity with the
    input. Missing head or hand joints raise ValueError.
    """
    s = correction_factor(frame, stats)
    if s is None or s == 1.0:
        return frame
    return scale_frame(frame, s)


def reference_stats(slice_: TaskSlice, subject_object: str | None = None,
                    user: str | None = None) -> ReferenceStats:
    """Skeleton statistics over a slice's first second (median, robust to
    first-frame noise). The measured hand is the one nearer the assessed
    object at slice start, defaulting to the right hand."""
    frames = skeleton_frames(slice_.events, user)
    if not frames:
        raise ValueError(f"slice for {slice_.task_id!r} has no skeleton frames")
    first = frames[0][1]
    hand = _nearest_hand(slice_.events, first, subject_object)
    cutoff = slice_.t0 + 1.0
    window = [f for t, f in frames if t <= cutoff] or [first]
    heads = np.array([f.position("head") for f in window])
    hands = np.array([f.position(hand) for f in window])
    return ReferenceStats(
        face_height=float(np.median(heads[:, 1])),
        hand_height=float(np.median(hands[:, 1])),
        face_hand_distance=float(np.median(
            np.linalg.norm(heads - hands, axis=1))),
        hand_joint=hand,
    )


def _nearest_hand(events, frame: SkeletonFrame, subject_object: str | None) -> str:
    present = [h for h in HAND_JOINTS if frame.has(h)]
    if not present:
        raise ValueError("frame has no hand joint")
    if len(present) == 1 or subject_object is None:
        return present[0]
    target = None
    for e in events:
        if isinstance(e.payload, Pose) and e.payload.object_id == subject_object:
            target = np.asarray(e.payload.position)
            break
    if target is None:
        return present[0]
    return min(present, key=lambda h: float(np.linalg.norm(frame.position(h) - target)))
