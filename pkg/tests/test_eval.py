import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tcfgo.eval import (
    AlignedErrorSeries,
    NoAlignedEpochs,
    TruthTrack,
    align,
    associate,
    common_epoch_mask,
    interval_mask,
    opt_time_trend_ok,
    rmse,
    service_availability,
)
from tcfgo.geo import GeodeticPosition, LocalFrame


def series(err2d, valid=None, err3d=None):
    e = np.asarray(err2d, dtype=float)
    v = np.ones(e.shape, bool) if valid is None else np.asarray(valid, bool)
    return AlignedErrorSeries(np.arange(e.size, dtype=float), e, e if err3d is None else np.asarray(err3d), v,
                              np.full(e.shape, np.nan))


def test_rmse_examples():
    assert rmse(series([3.0] * 7)) == pytest.approx(3.0)
    assert rmse(series([3.0, 4.0])) == pytest.approx(math.sqrt(12.5))
    assert rmse(series([3.0, 4.0], err3d=[5.0, 5.0]), dims=3) == pytest.approx(5.0)
    with pytest.raises(ValueError):
        rmse(series([3.0, 4.0]), mask=[False, False])
    with pytest.raises(ValueError):
        rmse(series([1.0]), dims=4)


def test_rmse_ignores_invalid_and_masked():
    s = series([3.0, 100.0, 4.0], valid=[True, False, True])
    assert rmse(s) == pytest.approx(math.sqrt(12.5))
    assert rmse(s, mask=[True, True, False]) == pytest.approx(3.0)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0, 1e3), min_size=1, max_size=40), st.randoms(use_true_random=False),
       st.floats(0.01, 100))
def test_rmse_permutation_and_scaling(errs, rnd, k):
    base = rmse(series(errs))
    shuffled = list(errs)
    rnd.shuffle(shuffled)
    assert rmse(series(shuffled)) == pytest.approx(base, rel=1e-12, abs=1e-12)
    assert rmse(series(np.array(errs) * k)) == pytest.approx(k * base, rel=1e-9, abs=1e-12)


def test_availability_examples():
    assert service_availability(series([1.0, 2.0, 100.0]), [10.0])[0] == pytest.approx(2 / 3)
    assert np.all(service_availability(series([1.0, 2.0], valid=[False, False]), [1.0, 10.0, math.inf]) == 0)
    # unavailable epochs stay in the denominator
    assert service_availability(series([1.0, 1.0, 1.0, 1.0], valid=[True, False, True, False]), [5.0])[0] == 0.5
    with pytest.raises(ValueError):
        service_availability(series([]), [1.0])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 50), st.booleans()), min_size=1, max_size=50))
def test_availability_monotone_and_limits(rows):
    s = series([e for e, _ in rows], valid=[v for _, v in rows])
    taus = np.linspace(0, 60, 61)
    curve = service_availability(s, taus)
    assert np.all(np.diff(curve) >= 0)
    assert service_availability(s, [math.inf])[0] == pytest.approx(np.mean(s.valid))
    assert service_availability(s, [0.0])[0] <= curve.min() + 1e-15


def test_association_tolerance():
    truth_t = np.array([0.0, 1.0, 2.0])
    np.testing.assert_array_equal(associate(truth_t, [0.04, 0.96, 1.5, 2.05, 2.06]), [0, 1, -1, 2, -1])
    np.testing.assert_array_equal(associate(np.array([]), [1.0]), [-1])


def _track():
    origin = GeodeticPosition(math.radians(22.3), math.radians(114.2), 30.0)
    frame = LocalFrame(origin)
    t = np.arange(0.0, 10.0, 0.1)
    ned = np.column_stack([t * 3, t * -2, np.zeros_like(t)])
    lla = np.array([tuple(frame.to_lla(p)) for p in ned])
    return frame, ned, TruthTrack.from_lla(t, lla[:, 0], lla[:, 1], lla[:, 2])


def test_align_uses_local_horizontal_frame():
    frame, ned, truth = _track()
    idx = np.arange(0, 100, 10)
    offset = np.array([3.0, 4.0, 12.0])  # NED error: 5 m horizontal, 13 m total
    # the error is defined in the NED frame at each truth point
    ecef = np.array([LocalFrame(GeodeticPosition(*truth.lla[i])).to_ecef(offset) for i in idx])
    s = align(truth, truth.t[idx] + 0.01, ecef, np.ones(idx.size, bool))
    np.testing.assert_allclose(s.err2d, 5.0, atol=1e-6)
    np.testing.assert_allclose(s.err3d, 13.0, atol=1e-6)
    with pytest.raises(NoAlignedEpochs, match="no aligned epochs"):
        align(truth, truth.t + 100.0, np.zeros((100, 3)), np.ones(100, bool))


def test_align_marks_nan_positions_invalid():
    frame, ned, truth = _track()
    ecef = np.array([frame.to_ecef(ned[0]), [np.nan] * 3])
    s = align(truth, truth.t[:2], ecef, [True, True])
    assert list(s.valid) == [True, False]


def test_masks():
    assert list(interval_mask([0, 1, 2, 3, 4], [(1, 2), (4, 9)])) == [True, False, False, True, False]
    a = series([1.0, 2.0, 3.0], valid=[True, True, False])
    b = series([1.0, 2.0, 3.0], valid=[False, True, True])
    assert list(common_epoch_mask(a, b)) == [False, True, False]


def test_opt_time_trend():
    assert opt_time_trend_ok([0.01, 0.02, 0.019, 0.05])
    assert not opt_time_trend_ok([0.01, 0.02, 0.015, 0.05])
