"""Task-level object-manipulation checks and their weighted combination.

Five check kinds score how closely a user's slice matches reference
behaviour: mean orientation, mean position, attachment duration ratio,
collision count penalty, and text-input comparison. Scores are linear
ramps clamped to [0, 1]; per-check tolerances come from the CheckSpec and
fall back to the defaults here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .model import CheckSpec, TaskNode, is_joint_id
from .telemetry import (Attach, Collision, Pose, Reference, SkeletonFrame,
                        TaskSlice, TextInput)


@dataclass(frozen=True)
class CheckDefaults:
    """Fallback tolerances for checks that do not set their own, plus an
    optional global collision-penalty override."""

    orientation_tol: float = math.pi / 2
    position_tol: float = 0.5
    text_tol: float = 0.01
    collision_penalty: float | None = None


DEFAULTS = CheckDefaults()


@dataclass(frozen=True)
class CheckResult:
    kind: str
    score: float
    detail: str
    samples_used: int = 0


@dataclass(frozen=True)
class TaskScore:
    """Combined task-level result: check-weight-normalized mean of check
    scores, scaled by the quality of the best-scoring reference."""

    task_id: str
    omega: float
    checks: tuple[CheckResult, ...]
    reference_index: int
    reference_quality: float


# ---------------------------------------------------------------------------
# quaternion helpers

def mean_quaternion(quats: np.ndarray) -> np.ndarray:
    """Sign-aligned component mean, renormalized. quats is (N, 4)."""
    q = np.asarray(quats, dtype=np.float64)
    signs = np.where(q @ q[0] < 0.0, -1.0, 1.0)
    mean = (q * signs[:, None]).mean(axis=0)
    norm = np.linalg.norm(mean)
    if norm == 0.0:
        raise ValueError("degenerate orientation mean")
    return mean / norm


def quaternion_angle(q1: np.ndarray, q2: np.ndarray) -> float:
    """Rotation angle in radians between two unit quaternions, in [0, pi].

    Identical inputs give exactly 0. Uses atan2 of difference and sum
    norms, which stays accurate for tiny angles where acos of a dot
    product loses precision.
    """
    a = np.asarray(q1, dtype=np.float64)
    b = np.asarray(q2, dtype=np.float64)
    if float(a @ b) < 0.0:
        b = -b
    return 4.0 * math.atan2(float(np.linalg.norm(a - b)),
                            float(np.linalg.norm(a + b)))


# ---------------------------------------------------------------------------
# data extraction

def _pose_payloads(slice_: TaskSlice, subject: str) -> list[Pose]:
    return [e.payload for e in slice_.events
            if isinstance(e.payload, Pose) and e.payload.object_id == subject]


def _subject_positions(slice_: TaskSlice, subject: str) -> np.ndarray:
    """(N, 3) positions of an object (Pose events) or a joint (Skeleton)."""
    if is_joint_id(subject):
        rows = [e.payload.position(subject) for e in slice_.events
                if isinstance(e.payload, SkeletonFrame) and e.payload.has(subject)]
    else:
        rows = [p.position for p in _pose_payloads(slice_, subject)]
    if not rows:
        raise ValueError(f"no data: no position samples for {subject!r}")
    return np.asarray(rows, dtype=np.float64)


def _ramp(value: float, limit: float) -> float:
    return max(0.0, 1.0 - value / limit)


# ---------------------------------------------------------------------------
# the five checks

def orientation_score(user_slice: TaskSlice, refs: Sequence[Reference],
                      spec: CheckSpec,
                      defaults: CheckDefaults = DEFAULTS) -> CheckResult:
    """Angle between the mean orientation of the subject in the user slice
    and in the closest reference, mapped linearly to [0, 1]."""
    tol = spec.tol if spec.tol is not None else defaults.orientation_tol
    user_quats = [p.orientation for p in _pose_payloads(user_slice, spec.subject)]
    if not user_quats:
        raise ValueError(f"no data: no Pose events for {spec.subject!r}")
    user_mean = mean_quaternion(np.asarray(user_quats))

    best_theta = None
    for ref in refs:
        ref_quats = [p.orientation for p in _pose_payloads(ref.slice, spec.subject)]
        if not ref_quats:
            continue
        theta = quaternion_angle(user_mean, mean_quaternion(np.asarray(ref_quats)))
        if best_theta is None or theta < best_theta:
            best_theta = theta
    if best_theta is None:
        raise ValueError(f"no data: no reference Pose events for {spec.subject!r}")
    return CheckResult(kind="orientation", score=_ramp(best_theta, tol),
                       detail=f"theta={best_theta:.6f} rad, tol={tol:.6f}",
                       samples_used=len(user_quats))


def position_score(user_slice: TaskSlice, refs: Sequence[Reference],
                   spec: CheckSpec,
                   defaults: CheckDefaults = DEFAULTS) -> CheckResult:
    """Distance between mean user and mean reference position of the
    subject (game object or skeleton joint), mapped linearly to [0, 1]."""
    tol = spec.tol if spec.tol is not None else defaults.position_tol
    user_pos = _subject_positions(user_slice, spec.subject)
    user_mean = user_pos.mean(axis=0)

    best_d = None
    for ref in refs:
        try:
            ref_mean = _subject_positions(ref.slice, spec.subject).mean(axis=0)
        except ValueError:
            continue
        d = float(np.linalg.norm(user_mean - ref_mean))
        if best_d is None or d < best_d:
            best_d = d
    if best_d is None:
        raise ValueError(f"no data: no reference positions for {spec.subject!r}")
    return CheckResult(kind="position", score=_ramp(best_d, tol),
                       detail=f"d={best_d:.6f} m, tol={tol:.6f}",
                       samples_used=len(user_pos))


def attachment_score(user_slice: TaskSlice, spec: CheckSpec) -> CheckResult:
    """Fraction of the slice during which subject was attached to the
    reference object.

    The pair starts detached. A first `on` arriving before the subject's
    first Pose event backdates the attachment to the slice start (the
    object had not moved, so it was held from the beginning). Transitions
    must alternate; anything else is a state mismatch error.
    """
    if user_slice.duration <= 0:
        raise ValueError("zero-duration slice")
    first_pose_t = math.inf
    for e in user_slice.events:
        if isinstance(e.payload, Pose) and e.payload.object_id == spec.subject:
            first_pose_t = e.t
            break

    total = 0.0
    on_t: float | None = None
    seen_any = False
    for e in user_slice.events:
        p = e.payload
        if not (isinstance(p, Attach) and p.object_id == spec.subject
                and p.target_id == spec.reference_object):
            continue
        if p.attached:
            if on_t is not None:
                raise ValueError("attach state mismatch: on while attached")
            on_t = user_slice.t0 if (not seen_any and e.t < first_pose_t) else e.t
        else:
            if on_t is None:
                raise ValueError("attach state mismatch: off while detached")
            total += e.t - on_t
            on_t = None
        seen_any = True
    if on_t is not None:
        total += user_slice.t1 - on_t

    score = min(1.0, max(0.0, total / user_slice.duration))
    return CheckResult(kind="attachment", score=score,
                       detail=f"attached {total:.6f} s of {user_slice.duration:.6f} s",
                       samples_used=sum(
                           1 for e in user_slice.events
                           if isinstance(e.payload, Attach)
                           and e.payload.object_id == spec.subject
                           and e.payload.target_id == spec.reference_object))


def collision_score(user_slice: TaskSlice, spec: CheckSpec,
                    defaults: CheckDefaults = DEFAULTS) -> CheckResult:
    """1 minus a fixed penalty per collision of the subject (optionally
    restricted to one other object), clamped at 0."""
    penalty = (defaults.collision_penalty
               if defaults.collision_penalty is not None else spec.penalty)
    k = sum(1 for e in user_slice.events
            if isinstance(e.payload, Collision)
            and e.payload.object_id == spec.subject
            and (spec.reference_object is None
                 or e.payload.other_id == spec.reference_object))
    return CheckResult(kind="collision", score=max(0.0, 1.0 - penalty * k),
                       detail=f"{k} collisions, penalty {penalty}",
                       samples_used=k)


def text_input_score(user_slice: TaskSlice, refs: Sequence[Reference],
                     spec: CheckSpec,
                     defaults: CheckDefaults = DEFAULTS) -> CheckResult:
    """Compare the user's last text input for the field with the
    reference's. Numeric values ramp from 1 at |u-r| <= tol down to 0 at
    2*tol; non-numeric references require an exact string match."""
    tol = spec.tol if spec.tol is not None else defaults.text_tol
    user_inputs = [e.payload.value for e in user_slice.events
                   if isinstance(e.payload, TextInput)
                   and e.payload.field_id == spec.subject]
    if not user_inputs:
        raise ValueError(f"no data: no TextInput for field {spec.subject!r}")
    user_value = user_inputs[-1]

    best: CheckResult | None = None
    for ref in refs:
        ref_inputs = [e.payload.value for e in ref.slice.events
                      if isinstance(e.payload, TextInput)
                      and e.payload.field_id == spec.subject]
        if not ref_inputs:
            continue
        result = _score_text(user_value, ref_inputs[-1], tol, len(user_inputs))
        if best is None or result.score > best.score:
            best = result
    if best is None:
        raise ValueError(f"no data: no reference TextInput for field {spec.subject!r}")
    return best


def _score_text(user_value: str, ref_value: str, tol: float,
                samples: int) -> CheckResult:
    try:
        r = float(ref_value)
    except ValueError:
        score = 1.0 if user_value == ref_value else 0.0
        return CheckResult(kind="text-input", score=score,
                           detail=f"string match {user_value!r} vs {ref_value!r}",
                           samples_used=samples)
    try:
        u = float(user_value)
    except ValueError:
        return CheckResult(kind="text-input", score=0.0,
                           detail=f"unparsable numeric input {user_value!r}",
                           samples_used=samples)
    d = abs(u - r)
    score = 1.0 if d <= tol else max(0.0, 1.0 - (d - tol) / tol)
    return CheckResult(kind="text-input", score=score,
                       detail=f"|{u!r} - {r!r}| = {d:.6g}, tol {tol:.6g}",
                       samples_used=samples)


# ---------------------------------------------------------------------------
# combination

_CHECK_FUNCS = {
    "orientation": lambda sl, refs, spec, d: orientation_score(sl, refs, spec, d),
    "position": lambda sl, refs, spec, d: position_score(sl, refs, spec, d),
    "attachment": lambda sl, refs, spec, d: attachment_score(sl, spec),
    "collision": lambda sl, refs, spec, d: collision_score(sl, spec, d),
    "text-input": lambda sl, refs, spec, d: text_input_score(sl, refs, spec, d),
}


def run_check(spec: CheckSpec, user_slice: TaskSlice,
              refs: Sequence[Reference],
              defaults: CheckDefaults = DEFAULTS) -> CheckResult:
    """Run one check; errors become a 0-score result with the error text."""
    try:
        return _CHECK_FUNCS[spec.kind](user_slice, refs, spec, defaults)
    except ValueError as e:
        return CheckResult(kind=spec.kind, score=0.0, detail=f"error: {e}")


def evaluate_task_level(node: TaskNode, user_slice: TaskSlice,
                        refs: Sequence[Reference],
                        defaults: CheckDefaults = DEFAULTS) -> TaskScore:
    """Run every check against each reference and keep the best
    quality-scaled outcome.

    For each reference: omega_r = sum(cweight * score) / sum(cweight),
    scaled by that reference's quality. The reference maximizing the
    scaled value wins (first on ties); its per-check results are retained.
    """
    spec = node.assessment
    if spec is None or not spec.has_task_level:
        raise ValueError(f"task {node.id!r} has no task-level assessment")
    if not refs:
        raise ValueError(f"no reference for task {node.id!r}")

    best: TaskScore | None = None
    for index, ref in enumerate(refs):
        results = tuple(run_check(c, user_slice, [ref], defaults)
                        for c in spec.checks)
        total_w = sum(c.check_weight for c in spec.checks)
        if total_w == 0:
            omega = 0.0
        else:
            omega = sum(c.check_weight * r.score
                        for c, r in zip(spec.checks, results)) / total_w
        omega *= ref.quality
        if best is None or omega > best.omega:
            best = TaskScore(task_id=node.id, omega=omega, checks=results,
                             reference_index=index, reference_quality=ref.quality)
    assert best is not None
    return best
