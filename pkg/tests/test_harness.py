"""Correlation statistics, deterministic perturbation, monotonicity study."""

import math
import random

import numpy as np
import pytest

from ahtn.harness import (METHODS, MonotonicityRow, PerturbationSpec,
                          ScorePairSet, UndefinedCorrelationError, correlate,
                          correlate_values, format_monotonicity,
                          load_study_correlations, monotonicity_csv,
                          monotonicity_report, parse_score_pairs, perturb,
                          spec_for_magnitude)
from ahtn.telemetry import (Attach, Collision, Pose, TextInput,
                            parse_session, serialize_recording)


# -- correlation ---------------------------------------------------------------

def test_identical_vectors_correlate_to_one():
    x = [0.2, 0.9, 0.4, 0.7, 0.5]
    for method in METHODS:
        assert correlate_values(x, x, method) == 1.0


def test_reversed_order_correlates_to_minus_one():
    x = [1.0, 2.0, 3.0, 4.0, 5.0]
    y = [5.0, 4.0, 3.0, 2.0, 1.0]
    for method in METHODS:
        assert correlate_values(x, y, method) == -1.0


def test_kendall_two_swaps():
    x = [1, 2, 3, 4, 5]
    y = [2, 1, 4, 3, 5]  # two discordant pairs out of ten
    assert correlate_values(x, y, "kendall") == pytest.approx(0.6)


def test_spearman_uses_average_ranks():
    # scipy-published example with ties in both vectors
    x = [1.0, 2.0, 2.0, 3.0]
    y = [1.0, 3.0, 2.0, 4.0]
    got = correlate_values(x, y, "spearman")
    sp = pytest.importorskip("scipy.stats")
    want = sp.spearmanr(x, y).statistic
    assert got == pytest.approx(want, abs=1e-12)


def test_correlations_match_scipy_on_random_data():
    sp = pytest.importorskip("scipy.stats")
    rng = random.Random(42)
    for trial in range(60):
        n = rng.randint(3, 40)
        if trial % 2:
            x = [rng.uniform(0, 1) for _ in range(n)]
            y = [rng.uniform(0, 1) for _ in range(n)]
        else:  # heavy ties
            x = [float(rng.randint(0, 3)) for _ in range(n)]
            y = [float(rng.randint(0, 3)) for _ in range(n)]
        for method in METHODS:
            try:
                got = correlate_values(x, y, method)
            except UndefinedCorrelationError:
                continue
            if method == "pearson":
                want = sp.pearsonr(x, y).statistic
            elif method == "spearman":
                want = sp.spearmanr(x, y).statistic
            else:
                want = sp.kendalltau(x, y, variant="b").statistic
            assert got == pytest.approx(want, abs=1e-9), (method, x, y)
            assert -1.0 <= got <= 1.0


def test_zero_variance_is_undefined():
    flat = [0.5, 0.5, 0.5]
    wavy = [0.1, 0.9, 0.4]
    for method in METHODS:
        with pytest.raises(UndefinedCorrelationError):
            correlate_values(flat, wavy, method)
        with pytest.raises(UndefinedCorrelationError):
            correlate_values(wavy, flat, method)


def test_correlate_guards():
    with pytest.raises(ValueError, match="unknown method"):
        correlate_values([1, 2], [1, 2], "mannwhitney")
    with pytest.raises(ValueError, match="equal length"):
        correlate_values([1, 2], [1, 2, 3], "pearson")
    with pytest.raises(ValueError, match="at least two"):
        correlate_values([1.0], [1.0], "pearson")


# -- score pair parsing ----------------------------------------------------------

def test_parse_score_pairs_percent_scale():
    pairs = parse_score_pairs("# comment\nT1 87.5 90\nT2 66 70\n")
    assert pairs.labels == ("T1", "T2")
    assert pairs.system == (0.875, 0.66)
    assert pairs.grader == (0.90, 0.70)


def test_parse_score_pairs_unit_scale_untouched():
    pairs = parse_score_pairs("a 0.5 0.25\nb 1.0 0.75\n")
    assert pairs.system == (0.5, 1.0)


@pytest.mark.parametrize("text,fragment", [
    ("a 0.5\n", "expected <label>"),
    ("a x 0.5\nb 1 1\n", "must be numbers"),
    ("a 0.5 0.5\n", "at least two"),
    ("a 150 50\nb 10 10\n", "outside"),
])
def test_parse_score_pairs_errors(text, fragment):
    with pytest.raises(ValueError, match=fragment):
        parse_score_pairs(text)


def test_score_pair_set_alignment():
    with pytest.raises(ValueError, match="align"):
        ScorePairSet(labels=("a",), system=(0.1, 0.2), grader=(0.1,))
    pairs = ScorePairSet(labels=("a", "b"), system=(0.1, 0.9), grader=(0.2, 0.8))
    assert correlate(pairs, "pearson") == pytest.approx(1.0)


# -- perturbation -----------------------------------------------------------------

def test_spec_for_magnitude_mapping():
    spec = spec_for_magnitude(0.1, seed=3)
    assert spec.position_sigma == 0.1
    assert spec.orientation_sigma == pytest.approx(0.2)
    assert spec.drop_attach_prob == pytest.approx(0.1)
    assert spec.inject_collisions == 5
    assert spec.text_error == 0.1
    assert spec.seed == 3
    assert spec_for_magnitude(0.0).is_identity
    with pytest.raises(ValueError):
        spec_for_magnitude(-0.1)
    with pytest.raises(ValueError):
        PerturbationSpec(position_sigma=-1)


def test_perturb_identity_returns_input(hydro_rec):
    assert perturb(hydro_rec, PerturbationSpec()) is hydro_rec


def test_perturb_is_deterministic(hydro_rec):
    spec = spec_for_magnitude(0.05, seed=123)
    a = perturb(hydro_rec, spec)
    b = perturb(hydro_rec, spec)
    assert serialize_recording(a) == serialize_recording(b)
    other = perturb(hydro_rec, spec_for_magnitude(0.05, seed=124))
    assert serialize_recording(other) != serialize_recording(a)


def test_perturb_output_is_still_a_valid_recording(hydro_rec):
    noisy = perturb(hydro_rec, spec_for_magnitude(0.2, seed=9))
    again = parse_session(serialize_recording(noisy), noisy.session_id)
    assert len(again.events) == len(noisy.events)


def test_perturb_position_noise_magnitude(hydro_rec):
    sigma = 0.05
    noisy = perturb(hydro_rec, PerturbationSpec(position_sigma=sigma, seed=1))
    displacements = []
    for before, after in zip(hydro_rec.events, noisy.events):
        if isinstance(before.payload, Pose):
            d = np.linalg.norm(np.subtract(after.payload.position,
                                           before.payload.position))
            displacements.append(float(d))
    mean_d = float(np.mean(displacements))
    # 3D gaussian: expected displacement is sigma * sqrt(8/pi)
    expected = sigma * math.sqrt(8 / math.pi)
    print(f"mean pose displacement {mean_d:.5f} m (theory {expected:.5f} m, "
          f"n={len(displacements)})")
    assert mean_d == pytest.approx(expected, rel=0.15)
    # quaternions stay unit length
    for e in noisy.events:
        if isinstance(e.payload, Pose):
            assert np.linalg.norm(e.payload.orientation) == pytest.approx(1.0, abs=1e-9)


def test_perturb_drops_whole_attach_intervals(hydro_rec):
    spec = PerturbationSpec(drop_attach_prob=1.0, seed=0)
    out = perturb(hydro_rec, spec)
    n_before = sum(isinstance(e.payload, Attach) for e in hydro_rec.events)
    assert n_before > 0
    assert sum(isinstance(e.payload, Attach) for e in out.events) == 0
    # never a dangling on/off pair at lower probabilities
    for seed in range(5):
        half = perturb(hydro_rec, PerturbationSpec(drop_attach_prob=0.5, seed=seed))
        ons = sum(1 for e in half.events
                  if isinstance(e.payload, Attach) and e.payload.attached)
        offs = sum(1 for e in half.events
                   if isinstance(e.payload, Attach) and not e.payload.attached)
        assert ons == offs


def test_perturb_injects_time_ordered_collisions(hydro_rec):
    spec = PerturbationSpec(inject_collisions=10, seed=4)
    out = perturb(hydro_rec, spec)
    extra = (sum(isinstance(e.payload, Collision) for e in out.events)
             - sum(isinstance(e.payload, Collision) for e in hydro_rec.events))
    assert extra == 10
    times = [e.t for e in out.events]
    assert times == sorted(times)


def test_perturb_offsets_numeric_text(hydro_rec):
    out = perturb(hydro_rec, PerturbationSpec(text_error=0.5, seed=2))
    before = [e.payload.value for e in hydro_rec.events
              if isinstance(e.payload, TextInput)]
    after = [e.payload.value for e in out.events
             if isinstance(e.payload, TextInput)]
    assert before and before != after
    assert all(float(v) == float(v) for v in after)  # still parseable numbers


# -- monotonicity -----------------------------------------------------------------

def test_monotonicity_guards(hydro_net, hydro_rec):
    with pytest.raises(ValueError, match="below minimum"):
        monotonicity_report(hydro_net, hydro_rec, [0.0, 0.1], trials=5)
    with pytest.raises(ValueError, match="strictly increasing"):
        monotonicity_report(hydro_net, hydro_rec, [0.1, 0.1], trials=10)
    with pytest.raises(ValueError, match="at least one magnitude"):
        monotonicity_report(hydro_net, hydro_rec, [], trials=10)


def test_monotonicity_zero_magnitude_is_exact(hydro_net, hydro_rec):
    rows = monotonicity_report(hydro_net, hydro_rec, [0.0, 0.08], trials=10, seed=1)
    assert rows[0].mean_delta == 1.0 and rows[0].std_delta == 0.0
    assert rows[1].mean_delta < rows[0].mean_delta
    again = monotonicity_report(hydro_net, hydro_rec, [0.0, 0.08], trials=10, seed=1)
    assert rows == again  # counter-based seeding reproduces exactly


def test_monotonicity_formatting():
    rows = [MonotonicityRow(0.0, 1.0, 0.0, 10),
            MonotonicityRow(0.1, 0.75, 0.02, 10)]
    table = format_monotonicity(rows)
    lines = table.splitlines()
    assert lines[0].split() == ["magnitude", "mean-delta", "std", "trials"]
    assert len(lines) == 3
    csv = monotonicity_csv(rows)
    head, *body = csv.splitlines()
    assert head == "magnitude,mean_delta,std_delta,trials"
    assert [float(b.split(",")[1]) for b in body] == [1.0, 0.75]


# -- published study table ---------------------------------------------------------

def test_study_correlation_table():
    table = load_study_correlations()
    assert set(table) == {"T1", "T2", "T3", "T4", "delta"}
    assert table["delta"]["pearson"] == pytest.approx(91.83)
    assert table["T1"]["spearman"] == pytest.approx(88.12)
    assert table["T4"]["kendall"] == pytest.approx(82.00)
    for label in table:
        assert set(table[label]) == {"pearson", "spearman", "kendall"}
