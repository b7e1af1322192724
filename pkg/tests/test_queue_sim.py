import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedqueue import queue_sim
from fedqueue.queue_sim import (ComputeProfile, QueueModel, compute_time,
                                lognormal_delay, max_steps_within,
                                sample_prediction_error, sample_queue_delay)
from fedqueue.streams import substream


def fixed_model(delays=(0.5, 1.5, 2.4, 6.0)):
    return QueueModel(kind="fixed", fixed_delays=np.array(delays),
                      slowdown=np.ones(len(delays)))


def lognormal_model(means=(1.5, 2.5, 3.5, 4.5), rho=0.4, mean_mode="median"):
    return QueueModel(kind="lognormal", means=np.array(means), rho=rho,
                      slowdown=np.ones(len(means)), mean_mode=mean_mode)


def test_fixed_kind_returns_configured_delay_exactly():
    model = fixed_model()
    assert sample_queue_delay(model, 3, substream(0, "queue", 3, 0)) == 6.0


def test_lognormal_zero_noise_collapses_to_the_mean_parameter():
    model = lognormal_model(rho=0.0)
    for _ in range(3):
        assert sample_queue_delay(model, 2, substream(1, "q", 2)) == pytest.approx(3.5)


def test_lognormal_kernel_at_unit_z():
    # exp(ln 1.5 + 0.4) evaluated with 30-digit arithmetic
    assert lognormal_delay(1.5, 0.4, 1.0) == pytest.approx(2.2377370464619055, rel=1e-12)
    assert lognormal_delay(1.5, 0.4, 1.0) == pytest.approx(1.5 * math.exp(0.4))


def test_arithmetic_mean_mode_matches_target_mean():
    model = lognormal_model(rho=0.8, mean_mode="arithmetic")
    rng = substream(7, "meancheck")
    draws = np.array([sample_queue_delay(model, 0, rng) for _ in range(200_000)])
    assert draws.mean() == pytest.approx(1.5, rel=0.02)


def test_unknown_kind_rejected():
    with pytest.raises(ValueError):
        QueueModel(kind="uniform", fixed_delays=np.ones(2))


def test_determinism_same_substream_same_delay():
    model = lognormal_model(rho=0.9)
    a = [sample_queue_delay(model, k, substream(42, "queue", k, r))
         for k in range(4) for r in range(10)]
    b = [sample_queue_delay(model, k, substream(42, "queue", k, r))
         for k in range(4) for r in range(10)]
    assert a == b


def test_tail_percentile_nondecreasing_in_rho():
    p90 = []
    for rho in (0.1, 0.5, 0.9):
        model = lognormal_model(rho=rho)
        rng = substream(3, "tail", int(rho * 10))
        draws = [sample_queue_delay(model, 1, rng) for _ in range(10_000)]
        p90.append(np.percentile(draws, 90))
    assert p90[0] <= p90[1] <= p90[2]


@given(st.integers(0, 3), st.integers(0, 2**31 - 1))
@settings(max_examples=60, deadline=None)
def test_sampled_delays_nonnegative(k, seed):
    model = lognormal_model(rho=0.9)
    assert sample_queue_delay(model, k, substream(seed, "p", k)) >= 0.0


# ---------------------------------------------------------------------------
# compute times
# ---------------------------------------------------------------------------

def profile(throughput=(10.0, 10.0), slowdown=(1.0, 2.0), jitter=0.0):
    return ComputeProfile(throughput=np.array(throughput),
                          slowdown=np.array(slowdown), per_step_jitter=jitter)


def test_compute_time_division():
    assert compute_time(profile(), 0, 60) == pytest.approx(6.0)


def test_compute_time_zero_steps():
    assert compute_time(profile(), 0, 0) == 0.0


def test_compute_time_slowdown_multiplier():
    assert compute_time(profile(), 1, 60) == pytest.approx(12.0)


def test_max_steps_within_inverts_compute_time():
    prof = profile()
    for seconds in (0.0, 0.05, 1.0, 7.3):
        steps = max_steps_within(prof, 0, seconds)
        assert compute_time(prof, 0, steps) <= seconds + 1e-12
        assert compute_time(prof, 0, steps + 1) > seconds


def test_jitter_perturbs_but_stays_nonnegative():
    prof = profile(jitter=0.5)
    rng = substream(0, "jit")
    times = {compute_time(prof, 0, 10, rng) for _ in range(50)}
    assert len(times) > 1
    assert all(t >= 0 for t in times)


# ---------------------------------------------------------------------------
# prediction-error draws
# ---------------------------------------------------------------------------

def test_prediction_error_degenerate_at_zero_scale():
    rng = substream(0, "e")
    assert sample_prediction_error(0.0, rng) == 0.0


def test_prediction_error_moments():
    rng = substream(11, "moments")
    draws = sample_prediction_error(0.4, rng, size=100_000)
    assert abs(draws.mean()) < 0.01
    assert abs(draws.std() - 0.4) < 0.01
