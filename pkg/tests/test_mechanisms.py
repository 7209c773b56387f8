import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from dpmonitor.mechanisms import (
    Bits,
    BitsBatch,
    ConfigurationError,
    ExactBits,
    GaussianNoise,
    HalfLineLE,
    LaplaceNoise,
    LaplaceSum,
    PointSet,
    ReportNoisyMax,
    RNMVariant,
    Scalar,
    ScalarBatch,
    Svt,
    SvtVariant,
    _RandomNoise,
    event_contains,
    noiseless_output,
    run_laplace_sum,
    run_rnm,
    run_svt,
    sample,
    sample_batch,
)
from oracles import binomial_sd, laplace_cdf, normal_cdf, reference_svt, svt_pattern_prob

N = 100_000
ZEROS = (0.0,) * 10
ONE_HOT = (1.0,) + (0.0,) * 9
SVT_X = (0, 0, 0, 0, 0, 1, 1, 1, 1, 1)
SVT_X_PRIME = (1, 1, 1, 1, 1, 0, 0, 0, 0, 0)


def within_4sd(hits, n, p):
    return abs(hits / n - p) <= 4 * binomial_sd(p, n)


# -- Laplace sum --------------------------------------------------------------


def test_laplace_zeros_half_mass_below_zero():
    batch = sample_batch(LaplaceSum(ZEROS, LaplaceNoise(1.0)), N, 11)
    assert abs(HalfLineLE(0.0).count(batch) / N - 0.5) <= 0.005


@pytest.mark.parametrize(
    "database,noise,a,expected",
    [
        (ONE_HOT, LaplaceNoise(1.0), 0.0, laplace_cdf(0.0, 1.0, loc=1.0)),
        (ONE_HOT, LaplaceNoise(0.5), 0.0, laplace_cdf(0.0, 0.5, loc=1.0)),
        (ZEROS, LaplaceNoise(0.5), 0.0, 0.5),
        (ONE_HOT, GaussianNoise(2.0), -1.0, normal_cdf(-1.0, 2.0, loc=1.0)),
        (ZEROS, GaussianNoise(2.0), -1.0, normal_cdf(-1.0, 2.0)),
    ],
)
def test_laplace_sum_matches_closed_form(database, noise, a, expected):
    batch = sample_batch(LaplaceSum(database, noise), N, 5)
    assert within_4sd(HalfLineLE(a).count(batch), N, expected)


def test_closed_form_reference_values():
    assert laplace_cdf(0.0, 1.0, loc=1.0) == pytest.approx(0.18394, abs=1e-5)
    assert normal_cdf(-1.0, 2.0, loc=1.0) == pytest.approx(0.07865, abs=1e-5)


def test_laplace_sampler_distribution():
    noise = _RandomNoise(np.random.default_rng(3))
    z = noise.laplace(0.7, 50_000)
    assert stats.kstest(z, stats.laplace(scale=0.7).cdf).pvalue > 0.001
    e = noise.exponential(2.0, 50_000)
    assert e.min() > 0
    assert stats.kstest(e, stats.expon(scale=2.0).cdf).pvalue > 0.001


def test_gaussian_variance_matches_laplace_variance():
    b = 1.0
    batch = sample_batch(LaplaceSum(ZEROS, GaussianNoise(2 * b * b)), N, 8)
    assert np.var(batch.values) == pytest.approx(2.0, rel=0.03)


def test_database_outside_unit_interval_rejected():
    with pytest.raises(ConfigurationError):
        LaplaceSum((0.0, 1.5))


@pytest.mark.parametrize("bad", [0.0, -1.0, math.nan, math.inf])
def test_noise_parameters_must_be_positive(bad):
    with pytest.raises(ConfigurationError):
        LaplaceNoise(bad)
    with pytest.raises(ConfigurationError):
        GaussianNoise(bad)


# -- Report Noisy Max -----------------------------------------------------------


def test_rnm_index_uniform_on_equal_queries():
    batch = sample_batch(ReportNoisyMax((1,) * 5, 1.0, RNMVariant.RETURN_INDEX), N, 21)
    values = np.asarray(batch.values)
    assert set(np.unique(values)) <= {1.0, 2.0, 3.0, 4.0, 5.0}
    observed = np.bincount(values.astype(int), minlength=6)[1:]
    assert stats.chisquare(observed).pvalue > 0.001


def test_rnm_max_value_below_query_level():
    batch = sample_batch(ReportNoisyMax((2,) * 5, 1.0, RNMVariant.RETURN_MAX_VALUE), N, 22)
    assert within_4sd(HalfLineLE(2.0).count(batch), N, 0.5**5)


def test_rnm_exponential_index_symmetric():
    batch = sample_batch(ReportNoisyMax((1,) * 5, 1.0, RNMVariant.EXPONENTIAL_NOISE_INDEX), N, 23)
    assert within_4sd(PointSet({3}).count(batch), N, 0.2)


def test_rnm_picks_clear_winner():
    spec = ReportNoisyMax((0, 0, 100, 0), 1.0)
    assert set(sample_batch(spec, 200, 1).values) == {3.0}
    assert noiseless_output(spec) == Scalar(3.0)


def test_rnm_ties_go_to_lowest_index():
    assert noiseless_output(ReportNoisyMax((1, 4, 4, 2))) == Scalar(2.0)


def test_rnm_empty_queries_rejected():
    with pytest.raises(ConfigurationError):
        sample(ReportNoisyMax((), 1.0), 0)


def test_rnm_epsilon_must_be_positive():
    with pytest.raises(ConfigurationError):
        ReportNoisyMax((1, 2), 0.0)


# -- Sparse vector ------------------------------------------------------------


def test_noise_scale_table():
    s = Svt(SVT_X, SvtVariant.V2, epsilon=0.5, bound=3, sensitivity=2.0)
    unit = 4.0
    expected = {
        SvtVariant.V1: (2 * unit, 12 * unit, None, True),
        SvtVariant.V2: (6 * unit, 12 * unit, 6 * unit, True),
        SvtVariant.V4: (4 * unit, 4 * unit / 3, None, True),
        SvtVariant.V5: (6 * unit, 0.0, 6 * unit, True),
        SvtVariant.V6: (2 * unit, 2 * unit, None, False),
    }
    for variant, scales in expected.items():
        got = Svt(s.queries, variant, 0.5, bound=3, sensitivity=2.0).noise_scales()
        assert got[:2] == pytest.approx(scales[:2])
        assert got[2] == pytest.approx(scales[2]) if scales[2] is not None else got[2] is None
        assert got[3] is scales[3]


def test_svt_v2_at_most_one_terminal_positive():
    batch = sample_batch(Svt(SVT_X, SvtVariant.V2), 20_000, 31)
    for out in (batch[i] for i in range(2000)):
        assert len(out.bits) <= 10
        assert sum(out.bits) <= 1
        if 1 in out.bits:
            assert out.bits.index(1) == len(out.bits) - 1
    counts = (batch.bits == 1).sum(axis=1)
    assert counts.max() <= 1


def test_svt_v6_always_answers_every_query():
    batch = sample_batch(Svt(SVT_X_PRIME, SvtVariant.V6), 5000, 32)
    assert set(batch.lengths) == {10}


def test_noiseless_traces():
    assert noiseless_output(Svt(SVT_X, SvtVariant.V2)) == Bits((0, 0, 0, 0, 0, 1))
    assert noiseless_output(Svt(SVT_X_PRIME, SvtVariant.V6)) == Bits((1, 1, 1, 1, 1, 0, 0, 0, 0, 0))


@pytest.mark.parametrize("variant", list(SvtVariant))
@pytest.mark.parametrize("queries", [SVT_X, SVT_X_PRIME])
def test_svt_pattern_probabilities_match_quadrature(variant, queries):
    spec = Svt(queries, variant)
    thr, qs, _, aborts = spec.noise_scales()
    n = 200_000
    batch = sample_batch(spec, n, 41)
    patterns = [(0, 0, 0, 0, 0, 1), (0, 0, 0, 0, 0, 0, 1), (1,), (0,) * 10, (1, 1, 1, 1, 1, 0, 0, 0, 0, 0)]
    for pattern in patterns:
        p = svt_pattern_prob(queries, pattern, thr, qs, aborts=aborts)
        hits = ExactBits(pattern).count(batch)
        if p == 0.0:
            assert hits == 0
        else:
            assert within_4sd(hits, n, p), (pattern, hits / n, p)


@pytest.mark.parametrize("variant", list(SvtVariant))
def test_svt_matches_reference_loop_with_resampling(variant):
    # c = 2 exercises the threshold resampling of V2 and V5.
    spec = Svt((0, 1, 0, 1, 1, 0, 1, 0), variant, epsilon=2.0, bound=2)
    thr, qs, res, aborts = spec.noise_scales()
    n = 20_000
    batch = sample_batch(spec, n, 51)
    ours = Counter(out.bits for out in batch)
    rng = np.random.default_rng(52)
    ref = Counter(reference_svt(spec.queries, 1.0, thr, qs, res, aborts, 2, rng) for _ in range(n))
    keys = [k for k in set(ours) | set(ref) if ours[k] + ref[k] >= 20]
    table = np.array([[ours[k] for k in keys], [ref[k] for k in keys]])
    assert stats.chi2_contingency(table).pvalue > 0.001


@settings(max_examples=30, deadline=None)
@given(
    queries=st.lists(st.integers(-2, 3), min_size=1, max_size=12),
    variant=st.sampled_from(list(SvtVariant)),
    bound=st.integers(1, 3),
    seed=st.integers(0, 2**32 - 1),
)
def test_svt_output_structure(queries, variant, bound, seed):
    spec = Svt(queries, variant, bound=bound)
    batch = sample_batch(spec, 50, seed)
    d = len(queries)
    assert all(0 <= n <= d for n in batch.lengths)
    positives = (batch.bits == 1).sum(axis=1)
    if spec.noise_scales()[3]:
        assert positives.max() <= bound
        # an early stop happens only right after the c-th positive
        short = batch.lengths < d
        assert np.all(positives[short] == bound)
    else:
        assert np.all(batch.lengths == d)


def test_svt_invalid_parameters():
    with pytest.raises(ConfigurationError):
        Svt(SVT_X, SvtVariant.V2, bound=0)
    with pytest.raises(ConfigurationError):
        Svt(SVT_X, SvtVariant.V2, sensitivity=0.0)
    with pytest.raises(ValueError):
        Svt(SVT_X, "V3")


# -- events ---------------------------------------------------------------------


def test_event_examples():
    assert event_contains(HalfLineLE(0.0), Scalar(-0.5))
    assert not event_contains(ExactBits((0, 0, 0, 0, 0, 1)), Bits((0, 0, 0, 0, 0, 1, 1)))
    assert event_contains(PointSet({3}), Scalar(3))
    assert event_contains(HalfLineLE(0.0), Scalar(0.0))
    assert not event_contains(PointSet({3}), Scalar(3.5))
    assert event_contains(ExactBits(()), Bits(()))


@pytest.mark.parametrize(
    "event,output",
    [(HalfLineLE(0.0), Bits((1,))), (PointSet({1}), Bits(())), (ExactBits((1,)), Scalar(1.0))],
)
def test_event_type_mismatch_is_an_error(event, output):
    with pytest.raises(ConfigurationError, match=type(event).__name__):
        event_contains(event, output)
    with pytest.raises(ConfigurationError):
        event.count(BitsBatch([(1,)]) if isinstance(output, Bits) else ScalarBatch([1.0]))


def test_batch_count_agrees_with_elementwise_membership():
    batch = sample_batch(Svt(SVT_X, SvtVariant.V4), 3000, 61)
    event = ExactBits((0, 0, 0, 0, 0, 0, 1))
    assert event.count(batch) == sum(event_contains(event, b) for b in batch)
    sb = sample_batch(LaplaceSum(ONE_HOT), 3000, 62)
    assert HalfLineLE(0.3).count(sb) == sum(event_contains(HalfLineLE(0.3), s) for s in sb)


def test_bits_rejects_non_binary():
    with pytest.raises(ValueError):
        Bits((0, 2))


# -- sampling contract ----------------------------------------------------------


@pytest.mark.parametrize(
    "spec",
    [
        LaplaceSum(ONE_HOT, GaussianNoise(2.0)),
        ReportNoisyMax((1, 2, 3), 1.0, RNMVariant.RETURN_MAX_VALUE),
        Svt(SVT_X, SvtVariant.V5),
    ],
)
def test_seeded_determinism(spec):
    a = sample_batch(spec, 500, 77)
    b = sample_batch(spec, 500, np.random.default_rng(77))
    assert a == b
    assert len(sample_batch(spec, 1, 0)) == 1


def test_outputs_are_finite():
    batch = sample_batch(ReportNoisyMax((0,) * 5, 1e-3, RNMVariant.RETURN_MAX_VALUE), 50_000, 3)
    assert np.all(np.isfinite(batch.values))


def test_typed_runners():
    assert isinstance(run_laplace_sum(LaplaceSum(ZEROS), 0), Scalar)
    assert isinstance(run_rnm(ReportNoisyMax((1, 2)), 0), Scalar)
    assert isinstance(run_svt(Svt(SVT_X), 0), Bits)
    with pytest.raises(ConfigurationError):
        run_svt(LaplaceSum(ZEROS), 0)
