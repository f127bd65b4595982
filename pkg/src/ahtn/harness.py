"""Evaluation harness: correlation statistics and perturbation studies.

Two tools for judging the scorer itself: correlate() compares system
scores with human grades (Pearson, Spearman with average ranks, Kendall
tau-b), and perturb()/monotonicity_report() synthesize degraded sessions
from a reference recording to confirm that the grade falls as corruption
grows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from importlib import resources
from typing import Sequence

import numpy as np

from .engine import EngineConfig, build_reference_set, score_recording
from .kernels import kendall_pair_stats, pearson, rank_average
from .model import TaskNetwork
from .telemetry import (Attach, Collision, Event, Pose, SessionRecording,
                        SkeletonFrame, TextInput)

METHODS = ("pearson", "spearman", "kendall")


class UndefinedCorrelationError(ValueError):
    """Raised when a coefficient has no defined value (zero variance or an
    all-tied ranking)."""


@dataclass(frozen=True)
class ScorePairSet:
    """Aligned system and grader scores, one pair per labelled item."""

    labels: tuple[str, ...]
    system: tuple[float, ...]
    grader: tuple[float, ...]

    def __post_init__(self):
        if not (len(self.labels) == len(self.system) == len(self.grader)):
            raise ValueError("labels, system and grader must align")
        if len(self.labels) < 2:
            raise ValueError("need at least two score pairs")


def parse_score_pairs(text: str) -> ScorePairSet:
    """Parse `<label> <system> <grader>` lines. Values on a 0-100 scale
    (any entry above 1) are normalized to [0, 1]."""
    labels: list[str] = []
    system: list[float] = []
    grader: list[float] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 3:
            raise ValueError(f"line {lineno}: expected <label> <system> <grader>")
        try:
            system.append(float(parts[1]))
            grader.append(float(parts[2]))
        except ValueError:
            raise ValueError(f"line {lineno}: scores must be numbers") from None
        labels.append(parts[0])
    if any(v > 1.0 for v in system + grader):
        system = [v / 100.0 for v in system]
        grader = [v / 100.0 for v in grader]
    for v in system + grader:
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"score {v} outside [0, 1] after normalization")
    return ScorePairSet(labels=tuple(labels), system=tuple(system),
                        grader=tuple(grader))


# ---------------------------------------------------------------------------
# correlation

def correlate_values(x: Sequence[float], y: Sequence[float],
                     method: str) -> float:
    """Correlation coefficient between two aligned vectors."""
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    if len(x) != len(y):
        raise ValueError("vectors must have equal length")
    if len(x) < 2:
        raise ValueError("need at least two pairs")
    ax = np.ascontiguousarray(x, dtype=np.float64)
    ay = np.ascontiguousarray(y, dtype=np.float64)

    if method == "pearson":
        r = float(pearson(ax, ay))
        if math.isnan(r):
            raise UndefinedCorrelationError("zero variance in pearson input")
    elif method == "spearman":
        r = float(pearson(rank_average(ax), rank_average(ay)))
        if math.isnan(r):
            raise UndefinedCorrelationError("all-tied ranking in spearman input")
    else:
        conc, disc, ties_x, ties_y, ties_both = (
            int(v) for v in kendall_pair_stats(ax, ay))
        n = len(ax)
        n0 = n * (n - 1) // 2
        n1 = ties_x + ties_both
        n2 = ties_y + ties_both
        denom = math.sqrt(float(n0 - n1) * float(n0 - n2))
        if denom == 0.0:
            raise UndefinedCorrelationError("all-tied ranking in kendall input")
        r = (conc - disc) / denom
    return min(1.0, max(-1.0, r))


def correlate(pairs: ScorePairSet, method: str) -> float:
    return correlate_values(pairs.system, pairs.grader, method)


# ---------------------------------------------------------------------------
# perturbation

@dataclass(frozen=True)
class PerturbationSpec:
    """How hard to corrupt a recording. All magnitudes must be >= 0; a
    fixed seed makes the corruption reproducible across platforms (the
    generator is counter-based)."""

    position_sigma: float = 0.0
    orientation_sigma: float = 0.0
    drop_attach_prob: float = 0.0
    inject_collisions: int = 0
    text_error: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if (self.position_sigma < 0 or self.orientation_sigma < 0
                or self.text_error < 0 or self.inject_collisions < 0
                or not 0.0 <= self.drop_attach_prob <= 1.0):
            raise ValueError("perturbation magnitudes must be >= 0")

    @property
    def is_identity(self) -> bool:
        return (self.position_sigma == 0 and self.orientation_sigma == 0
                and self.drop_attach_prob == 0 and self.inject_collisions == 0
                and self.text_error == 0)


def spec_for_magnitude(magnitude: float, seed: int = 0) -> PerturbationSpec:
    """Single-knob mapping used by the simulate command: one magnitude m
    drives every corruption channel at a proportionate strength."""
    if magnitude < 0:
        raise ValueError("magnitude must be >= 0")
    return PerturbationSpec(
        position_sigma=magnitude,
        orientation_sigma=2.0 * magnitude,
        drop_attach_prob=min(1.0, magnitude),
        inject_collisions=int(round(50.0 * magnitude)),
        text_error=magnitude,
        seed=seed,
    )


def _quat_mul(a, b):
    ax, ay, az, aw = a
    bx, by, bz, bw = b
    return (
        aw * bx + bw * ax + ay * bz - az * by,
        aw * by + bw * ay + az * bx - ax * bz,
        aw * bz + bw * az + ax * by - ay * bx,
        aw * bw - (ax * bx + ay * by + az * bz),
    )


def perturb(rec: SessionRecording, spec: PerturbationSpec) -> SessionRecording:
    """Deterministically corrupted copy of a recording.

    Gaussian position noise on poses and skeleton joints, axis-angle
    orientation noise on poses, random removal of whole attach intervals,
    spurious collision events, and offsets on numeric text inputs. A
    zero-magnitude spec returns the input unchanged.
    """
    if spec.is_identity:
        return rec
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(spec.seed)))

    dropped = _pick_dropped_attach_events(rec, spec, rng)

    events: list[Event] = []
    for i, e in enumerate(rec.events):
        if i in dropped:
            continue
        p = e.payload
        if isinstance(p, Pose):
            noise = rng.standard_normal(3)
            position = tuple(float(c + spec.position_sigma * z)
                             for c, z in zip(p.position, noise))
            axis = rng.standard_normal(3)
            angle = float(rng.standard_normal()) * spec.orientation_sigma
            orientation = p.orientation
            norm = float(np.linalg.norm(axis))
            if norm > 0 and angle != 0.0:
                axis = axis / norm
                half = angle / 2.0
                q_noise = (axis[0] * math.sin(half), axis[1] * math.sin(half),
                           axis[2] * math.sin(half), math.cos(half))
                q = _quat_mul(q_noise, orientation)
                qn = math.sqrt(sum(c * c for c in q))
                orientation = tuple(c / qn for c in q)
            events.append(Event(e.t, e.user, Pose(p.object_id, position,
                                                  orientation)))
        elif isinstance(p, SkeletonFrame):
            noise = rng.standard_normal(p.positions.shape)
            if spec.position_sigma > 0:
                frame = SkeletonFrame(
                    names=p.names,
                    positions=p.positions + spec.position_sigma * noise,
                    confidences=p.confidences)
            else:
                frame = p
            events.append(Event(e.t, e.user, frame))
        elif isinstance(p, TextInput):
            z = float(rng.standard_normal())
            value = p.value
            if spec.text_error > 0:
                try:
                    value = repr(float(p.value) + spec.text_error * z)
                except ValueError:
                    pass
            events.append(Event(e.t, e.user, TextInput(p.field_id, value)))
        else:
            events.append(e)

    events = _inject_collisions(rec, events, spec, rng)
    return SessionRecording(session_id=rec.session_id, user_ids=rec.user_ids,
                            events=tuple(events),
                            frame_rate_hint=rec.frame_rate_hint)


def _pick_dropped_attach_events(rec: SessionRecording, spec: PerturbationSpec,
                                rng) -> set[int]:
    """Indices of attach on/off events whose whole interval is dropped."""
    open_on: dict[tuple[str, str], int] = {}
    pairs: list[tuple[int, int | None]] = []
    for i, e in enumerate(rec.events):
        p = e.payload
        if not isinstance(p, Attach):
            continue
        key = (p.object_id, p.target_id)
        if p.attached:
            open_on[key] = i
        elif key in open_on:
            pairs.append((open_on.pop(key), i))
    pairs.extend((i, None) for i in open_on.values())

    dropped: set[int] = set()
    for on_i, off_i in pairs:
        if float(rng.random()) < spec.drop_attach_prob:
            dropped.add(on_i)
            if off_i is not None:
                dropped.add(off_i)
    return dropped


def _inject_collisions(rec: SessionRecording, events: list[Event],
                       spec: PerturbationSpec, rng) -> list[Event]:
    if spec.inject_collisions == 0 or not events:
        return events
    counts: dict[str, int] = {}
    for e in rec.events:
        if isinstance(e.payload, Pose):
            counts[e.payload.object_id] = counts.get(e.payload.object_id, 0) + 1
    ranked = sorted(counts, key=lambda o: (-counts[o], o))
    if not ranked:
        return events
    first = ranked[0]
    second = ranked[1] if len(ranked) > 1 else "noise"
    user = rec.user_ids[0] if rec.user_ids else "user"

    t0, t1 = events[0].t, events[-1].t
    times = np.sort(rng.uniform(t0, t1, size=spec.inject_collisions))
    existing = np.array([e.t for e in events])
    out = list(events)
    # insert from the latest time so earlier insertion points stay valid
    for j in range(len(times) - 1, -1, -1):
        t = float(times[j])
        pair = (first, second) if j % 2 == 0 else (second, first)
        idx = int(np.searchsorted(existing, t, side="right"))
        out.insert(idx, Event(t, user, Collision(*pair)))
    return out


# ---------------------------------------------------------------------------
# monotonicity study

MIN_TRIALS = 10


@dataclass(frozen=True)
class MonotonicityRow:
    magnitude: float
    mean_delta: float
    std_delta: float
    trials: int


def monotonicity_report(net: TaskNetwork, reference: SessionRecording,
                        magnitudes: Sequence[float], trials: int,
                        seed: int = 0) -> list[MonotonicityRow]:
    """Score `trials` perturbed copies of the reference at each magnitude
    and tabulate the session grade."""
    if trials < MIN_TRIALS:
        raise ValueError("trials below minimum")
    if len(magnitudes) == 0:
        raise ValueError("need at least one magnitude")
    if any(b <= a for a, b in zip(magnitudes, magnitudes[1:])):
        raise ValueError("magnitudes must be strictly increasing")

    refs = build_reference_set(net, [(reference, 1.0)])
    rows: list[MonotonicityRow] = []
    for mi, magnitude in enumerate(magnitudes):
        deltas = []
        for trial in range(trials):
            child = np.random.SeedSequence(entropy=[seed, mi, trial])
            child_seed = int(child.generate_state(1)[0])
            rec = perturb(reference, spec_for_magnitude(magnitude, child_seed))
            report = score_recording(EngineConfig(network=net, references=refs),
                                     rec)
            scoped = [s.delta for s in report.scopes if s.delta is not None]
            if not scoped:
                raise ValueError("no weighted scope in report")
            deltas.append(sum(scoped) / len(scoped))
        arr = np.asarray(deltas)
        rows.append(MonotonicityRow(magnitude=float(magnitude),
                                    mean_delta=float(arr.mean()),
                                    std_delta=float(arr.std()),
                                    trials=trials))
    return rows


def format_monotonicity(rows: Sequence[MonotonicityRow]) -> str:
    lines = [f"{'magnitude':>10}  {'mean-delta':>10}  {'std':>10}  {'trials':>6}"]
    for r in rows:
        lines.append(f"{r.magnitude:>10.4f}  {r.mean_delta:>10.6f}  "
                     f"{r.std_delta:>10.6f}  {r.trials:>6d}")
    return "\n".join(lines) + "\n"


def monotonicity_csv(rows: Sequence[MonotonicityRow]) -> str:
    lines = ["magnitude,mean_delta,std_delta,trials"]
    for r in rows:
        lines.append(f"{r.magnitude!r},{r.mean_delta!r},{r.std_delta!r},{r.trials}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# published study table

def load_study_correlations() -> dict[str, dict[str, float]]:
    """Published per-task correlation percentages between system and
    instructor scores for the single-user study, keyed by task label then
    method. Reference data for comparison output; not an acceptance
    target."""
    text = (resources.files("ahtn") / "data" /
            "hydrometer_study_correlations.csv").read_text(encoding="utf-8")
    out: dict[str, dict[str, float]] = {}
    lines = text.strip().splitlines()
    header = lines[0].split(",")[1:]
    for line in lines[1:]:
        parts = line.split(",")
        out[parts[0]] = {m: float(v) for m, v in zip(header, parts[1:])}
    return out
