"""Key-frame matching, anomaly detection, and the streaming evaluator."""

import math

import numpy as np
import pytest

from ahtn.model import TrajectoryParams
from ahtn.telemetry import Event, ReferenceStats, SkeletonFrame, TaskSlice
from ahtn.trajectory import (ActionEvaluator, TrajectoryState, build_reference_track,
                             build_targets, detect_anomalies, facing_direction,
                             key_frame_count, match_frame, step_trajectory,
                             trajectory_score, update_anomalies)

PARAMS = TrajectoryParams(joint_ids=("head", "hand-right"))
STATS = ReferenceStats(face_height=1.7, hand_height=1.1,
                       face_hand_distance=0.45, hand_joint="hand-right")


def frame(**joints):
    fixed = {k.replace("_", "-"): v for k, v in joints.items()}
    names = tuple(fixed)
    return SkeletonFrame(names=names,
                         positions=np.array([fixed[n] for n in names], float))


def skel_slice(samples, t0=0.0, t1=10.0, user="u"):
    events = tuple(Event(t=t, user=user, payload=f) for t, f in samples)
    return TaskSlice(task_id="T", t0=t0, t1=t1, events=events)


def straight_line(t0=0.0, duration=10.0, rate=10.0, arm=0.45):
    """Slow straight hand sweep; adjacent 2 Hz key frames sit ~1.5 cm apart."""
    out = []
    n = int(duration * rate) + 1
    for i in range(n):
        t = t0 + i / rate
        x = 0.3 * (i / (n - 1))
        out.append((t, frame(head=(x, 1.7, 0.0),
                             hand_right=(x + arm, 1.7, 0.0),
                             shoulder_left=(x + 0.2, 1.5, 0.0),
                             shoulder_right=(x - 0.2, 1.5, 0.0))))
    return out


# -- key frames ---------------------------------------------------------------

def test_key_frame_count():
    assert key_frame_count(10.0, 2.0) == 20
    assert key_frame_count(0.2, 2.0) == 1  # floor of one target
    assert key_frame_count(2.6, 2.0) == 6
    with pytest.raises(ValueError):
        key_frame_count(0.0, 2.0)


def test_reference_track_takes_first_frame_at_or_after_key_time():
    samples = [(float(i), frame(head=(0, 1.7, float(i)),
                                hand_right=(0.45, 1.7, float(i))))
               for i in range(11)]
    track = build_reference_track(skel_slice(samples), PARAMS)
    assert track.key_frames == 20
    expected = [math.ceil(k / 2) for k in range(20)]
    assert list(track.times) == expected
    assert track.positions.shape == (20, 2, 3)
    assert list(track.positions[:, 0, 2]) == expected  # head z tracks frame time


def test_reference_track_requires_joints():
    samples = [(0.0, frame(head=(0, 1.7, 0)))]
    with pytest.raises(ValueError, match="missing joint 'hand-right'"):
        build_reference_track(skel_slice(samples, t1=1.0), PARAMS)
    with pytest.raises(ValueError, match="no skeleton frames"):
        build_reference_track(skel_slice([], t1=1.0), PARAMS)


def test_build_targets_cursor_bounds():
    samples = straight_line(duration=1.0)
    sl = skel_slice(samples, t1=1.0)
    ts = build_targets(sl, PARAMS, 0)
    assert set(ts.targets) == {"head", "hand-right"}
    with pytest.raises(ValueError, match="exhausted"):
        build_targets(sl, PARAMS, 2)  # K = 2 for 1 s


# -- matching -----------------------------------------------------------------

def test_match_ball_is_closed():
    sl = skel_slice([(0.0, frame(head=(0, 0, 0), hand_right=(1, 0, 0)))], t1=1.0)
    ts = build_targets(sl, PARAMS, 0)
    on_boundary = frame(head=(0.1, 0, 0), hand_right=(1, 0, 0))
    assert match_frame(ts, on_boundary, PARAMS).all_matched
    outside = frame(head=(0.1000001, 0, 0), hand_right=(1, 0, 0))
    assert not match_frame(ts, outside, PARAMS).all_matched


def test_match_requires_every_joint():
    sl = skel_slice([(0.0, frame(head=(0, 0, 0), hand_right=(1, 0, 0)))], t1=1.0)
    ts = build_targets(sl, PARAMS, 0)
    res = match_frame(ts, frame(head=(0, 0, 0)), PARAMS)
    assert not res.all_matched and res.missing == ("hand-right",)
    assert res.distances["head"] == 0.0


# -- stepping -----------------------------------------------------------------

def track_of(duration):
    return build_reference_track(skel_slice(straight_line(duration=duration),
                                            t1=duration), PARAMS)


def test_skip_is_strictly_greater_than_five_seconds():
    track = track_of(10.0)
    state = TrajectoryState(spawned_at=0.0)
    f = frame(head=(9, 9, 9), hand_right=(9, 9, 9))
    state, evs = step_trajectory(state, f, 5.0, track, PARAMS, matched=False)
    assert state.missed == 0 and evs == []
    state, evs = step_trajectory(state, f, 5.01, track, PARAMS, matched=False)
    assert state.missed == 1 and evs == [("missed", 0)]
    assert state.cursor == 1 and state.spawned == 2 and state.spawned_at == 5.01


def test_burst_advances_cursor():
    track = track_of(10.0)
    state = TrajectoryState(spawned_at=0.0)
    f = frame(head=(9, 9, 9), hand_right=(9, 9, 9))
    state, evs = step_trajectory(state, f, 0.3, track, PARAMS, matched=True)
    assert state.burst == 1 and evs == [("burst", 0, 2)]
    assert state.cursor == 1


def test_repetition_wraps_and_completes():
    track = track_of(1.0)  # K = 2
    params = TrajectoryParams(joint_ids=PARAMS.joint_ids, repetitions=2)
    state = TrajectoryState(spawned_at=0.0)
    f = frame(head=(0, 0, 0), hand_right=(0, 0, 0))
    seen = []
    for t in (0.1, 0.2, 0.3, 0.4):
        state, evs = step_trajectory(state, f, t, track, params, matched=True)
        seen.extend(evs)
    assert state.complete and state.repetitions_done == 2
    assert state.burst == 4 and state.spawned == 4
    assert ("repetition", 1) in seen and ("repetition", 2) in seen
    # complete state is inert
    state2, evs = step_trajectory(state, f, 9.0, track, params, matched=True)
    assert state2 == state and evs == []


# -- scoring ------------------------------------------------------------------

def test_score_formula():
    st = TrajectoryState(burst=15, missed=5,
                         anomaly_log=(("fall", 0.0, 1.0),))
    score, detail = trajectory_score(st, PARAMS)
    assert score == pytest.approx(0.70)
    assert "15/20" in detail


def test_score_clamps_at_zero():
    st = TrajectoryState(burst=1, missed=9,
                         anomaly_log=tuple(("fall", float(i), i + 0.5) for i in range(3)))
    assert trajectory_score(st, PARAMS)[0] == 0.0


def test_score_aborted_and_empty():
    aborted = TrajectoryState(aborted=True, abort_kind="fall", burst=10)
    score, detail = trajectory_score(aborted, PARAMS)
    assert score == 0.0 and "aborted" in detail
    score, detail = trajectory_score(TrajectoryState(), PARAMS)
    assert score == 0.0 and detail == "no trajectory activity"


# -- anomalies ----------------------------------------------------------------

def test_facing_from_shoulders():
    f = frame(shoulder_left=(0.2, 1.5, 0), shoulder_right=(-0.2, 1.5, 0))
    assert np.allclose(facing_direction(f), [0, 0, 1])
    g = frame(shoulder_left=(-0.2, 1.5, 0), shoulder_right=(0.2, 1.5, 0))
    assert np.allclose(facing_direction(g), [0, 0, -1])


def test_facing_fallback_and_degenerate():
    f = frame(head=(0, 1.7, 0), head_forward=(0.6, 1.7, 0.8))
    assert np.allclose(facing_direction(f), [0.6, 0, 0.8])
    assert facing_direction(frame(head=(0, 1.7, 0))) is None
    collapsed = frame(shoulder_left=(0, 1.5, 0), shoulder_right=(0, 1.5, 0))
    assert facing_direction(collapsed) is None


def rotated_shoulders(angle):
    """Shoulder pair whose facing direction is `angle` away from +z."""
    c, s = math.cos(angle), math.sin(angle)
    left = np.array([0.2 * c, 1.5, -0.2 * s])
    return frame(head=(0, 1.7, 0), shoulder_left=tuple(left),
                 shoulder_right=tuple(-left + np.array([0, 3.0, 0])))


def window_of(f, span=0.6):
    return [(0.0, f), (span, f)]


def test_orientation_anomaly_threshold_is_ninety_degrees():
    for deg, expect in ((60, False), (90, False), (120, True), (180, True)):
        f = rotated_shoulders(math.radians(deg))
        facing = facing_direction(f)
        assert facing is not None
        kinds, warming = detect_anomalies(window_of(f), PARAMS, STATS)
        assert not warming
        assert ("orientation" in kinds) is expect, deg


def test_fall_anomaly_uses_reference_face_height():
    # threshold: half of 1.7 m
    low = frame(head=(0, 0.84, 0))
    ok = frame(head=(0, 0.86, 0))
    assert "fall" in detect_anomalies(window_of(low), PARAMS, STATS)[0]
    assert "fall" not in detect_anomalies(window_of(ok), PARAMS, STATS)[0]


def test_hand_position_anomaly_needs_whole_window_away():
    target = {"hand-right": np.zeros(3)}
    far = frame(head=(0, 1.7, 0), hand_right=(0.35, 1.1, 0))
    near = frame(head=(0, 1.7, 0), hand_right=(0.25, 0, 0))
    kinds, _ = detect_anomalies(window_of(far), PARAMS, STATS, target)
    assert "hand-position" in kinds
    mixed = [(0.0, far), (0.3, near), (0.6, far)]
    kinds, _ = detect_anomalies(mixed, PARAMS, STATS, target)
    assert "hand-position" not in kinds  # one close sample clears it


def test_window_shorter_than_half_second_only_warms_up():
    f = frame(head=(0, 0.1, 0))  # would be a fall
    kinds, warming = detect_anomalies([(0.0, f)], PARAMS, STATS)
    assert warming and kinds == set()
    kinds, warming = detect_anomalies([(0.0, f), (0.4, f)], PARAMS, STATS)
    assert warming


def test_update_anomalies_episode_lifecycle():
    state = TrajectoryState()
    state, evs = update_anomalies(state, {"fall"}, 1.0, PARAMS)
    assert evs == [("anomaly", "fall", "start")]
    state, evs = update_anomalies(state, set(), 3.5, PARAMS)
    assert evs == [("anomaly", "fall", "end")]
    assert len(state.anomaly_log) == 1
    ep = state.anomaly_log[0]
    assert (ep.kind, ep.t_start, ep.t_end) == ("fall", 1.0, 3.5)


def test_abort_after_wait_is_strict():
    state = TrajectoryState()
    state, _ = update_anomalies(state, {"fall"}, 0.0, PARAMS)
    state, evs = update_anomalies(state, {"fall"}, 10.0, PARAMS)
    assert not state.aborted and evs == []
    state, evs = update_anomalies(state, {"fall"}, 10.01, PARAMS)
    assert state.aborted and state.abort_kind == "fall"
    assert evs == [("abort", "fall")]
    # aborted state ignores further updates
    state2, evs = update_anomalies(state, set(), 11.0, PARAMS)
    assert state2 is state and evs == []


# -- streaming evaluator ------------------------------------------------------

def replay(samples, ref_slice, params=PARAMS, stats=STATS, t_start=0.0):
    ev = ActionEvaluator("T", ref_slice, params, stats, t_start=t_start)
    feedback = []
    for t, f in samples:
        feedback.extend(ev.observe(t, f))
    return ev.finalize(samples[-1][0]), feedback


def test_self_replay_bursts_every_target():
    samples = straight_line()
    sl = skel_slice(samples)
    summary, feedback = replay(samples, sl)
    assert summary.score == 1.0
    assert summary.burst == 20 and summary.missed == 0
    assert summary.correction_factor == 1.0
    assert not summary.aborted and summary.anomalies == ()
    assert sum(1 for e in feedback if e[0] == "burst") == 20
    assert [e for e in feedback if e[0] == "repetition"] == [("repetition", 1)]


def test_evaluator_is_deterministic():
    samples = straight_line()
    sl = skel_slice(samples)
    a, fa = replay(samples, sl)
    b, fb = replay(samples, sl)
    assert a == b and fa == fb


def test_height_correction_lets_smaller_user_burst():
    ref = straight_line(arm=0.45)
    short = straight_line(arm=0.30)  # same head path, shorter reach
    summary, _ = replay(short, skel_slice(ref))
    assert summary.correction_factor == pytest.approx(1.5)
    assert summary.burst == 20 and summary.score == 1.0


def test_idle_user_misses_targets():
    sl = skel_slice(straight_line())
    away = [(t, frame(head=(5, 1.7, 0), hand_right=(5.45, 1.7, 0),
                      shoulder_left=(5.2, 1.5, 0), shoulder_right=(4.8, 1.5, 0)))
            for t in np.arange(0.0, 12.0, 0.1)]
    summary, feedback = replay(away, sl)
    assert summary.burst == 0
    assert summary.missed >= 2  # 12 s of idling retires at least two targets
    assert summary.score == 0.0
    assert any(e[0] == "missed" for e in feedback)


def test_finalize_counts_inflight_target_as_missed():
    sl = skel_slice(straight_line())
    away = [(t, frame(head=(5, 1.7, 0), hand_right=(5.45, 1.7, 0)))
            for t in np.arange(0.0, 3.0, 0.1)]
    summary, _ = replay(away, sl)
    # nothing retired naturally (3 s < skip time) but the open target counts
    assert summary.missed == 1 and summary.burst == 0
    assert summary.spawned == 1


def test_fall_anomaly_aborts_evaluator():
    sl = skel_slice(straight_line())
    floor = [(t, frame(head=(0.0, 0.2, 0.0), hand_right=(0.45, 0.2, 0.0),
                       shoulder_left=(0.2, 0.1, 0), shoulder_right=(-0.2, 0.1, 0)))
             for t in np.arange(0.0, 14.0, 0.1)]
    summary, feedback = replay(floor, sl)
    assert summary.aborted and summary.abort_kind == "fall"
    assert summary.score == 0.0
    assert feedback.count(("abort", "fall")) == 1
    # nothing after the abort
    assert feedback[-1] == ("abort", "fall")


def test_anomaly_episode_penalty_applies():
    samples = straight_line()
    # dip the head below the fall line for 2 s mid-task, then recover
    dipped = []
    for t, f in samples:
        if 4.0 <= t < 6.0:
            pos = f.positions.copy()
            pos[list(f.names).index("head"), 1] = 0.3
            f = SkeletonFrame(names=f.names, positions=pos)
        dipped.append((t, f))
    summary, feedback = replay(dipped, skel_slice(samples))
    assert not summary.aborted
    assert len(summary.anomalies) == 1
    assert summary.anomalies[0].kind == "fall"
    assert any(e == ("anomaly", "fall", "start") for e in feedback)
    assert any(e == ("anomaly", "fall", "end") for e in feedback)
    burst_ratio = summary.burst / (summary.burst + summary.missed)
    assert summary.score == pytest.approx(burst_ratio - 0.05)


def test_missing_tracked_joint_warns_once():
    sl = skel_slice(straight_line())
    headless = [(t, frame(hand_right=(0.45, 1.7, 0)))
                for t in np.arange(0.0, 2.0, 0.1)]
    summary, _ = replay(headless, sl)
    assert summary.burst == 0
    assert sum("cannot burst" in w for w in summary.warnings) == 1


def test_orientation_watch_disabled_without_shoulders_warns():
    samples = [(t, frame(head=(x, 1.7, 0), hand_right=(x + 0.45, 1.7, 0)))
               for t, (x,) in ((t, (0.3 * t / 10.0,)) for t in np.arange(0, 10.5, 0.1))]
    summary, _ = replay(samples, skel_slice(samples))
    assert any("orientation anomaly disabled" in w for w in summary.warnings)
    assert summary.score == 1.0  # still matches fine
