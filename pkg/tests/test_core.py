import numpy as np
import pytest
from hypothesis import given, strategies as st

from fedecado.core import (CentralState, ClientRecord, Config, ShapeError, TrajectorySegment,
                           as_param, check_same_shape, max_abs)
from fedecado.objectives import QuadraticObjective


def test_max_abs_of_zero_and_empty():
    assert max_abs(np.zeros(5)) == 0.0
    assert max_abs(np.array([])) == 0.0


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=20))
def test_max_abs_matches_definition(vals):
    assert max_abs(np.array(vals)) == max(abs(v) for v in vals)


def test_as_param_copies_and_checks_dim():
    src = np.arange(3.0)
    out = as_param(src, 3)
    out[0] = 99
    assert src[0] == 0
    with pytest.raises(ShapeError):
        as_param(src, 4)
    with pytest.raises(ShapeError):
        as_param(np.zeros((2, 2)))


def test_shape_mismatch_is_a_hard_fault():
    with pytest.raises(ShapeError):
        check_same_shape(np.zeros(2), np.zeros(3))


def test_config_defaults_and_validation():
    c = Config()
    assert (c.gamma, c.stop_tol, c.max_rounds) == (1e-2, 1e-6, 500)
    for bad in ({"gamma": 0}, {"gamma": -1}, {"max_rounds": 0}, {"participation": 0},
                {"participation": 1.5}, {"L_override": -1.0}, {"alignment": "cubic"}):
        with pytest.raises(ValueError):
            Config(**bad)
    assert c.with_(gamma=0.5).gamma == 0.5


def test_client_record_validation():
    obj = QuadraticObjective([[1.0]], [0.0])
    with pytest.raises(ValueError):
        ClientRecord(0, 0.0, obj, [0.0], [0.0])
    with pytest.raises(ValueError):
        ClientRecord(0, 0.5, obj, [0.0], [0.0], epochs=0)
    with pytest.raises(ShapeError):
        ClientRecord(0, 0.5, obj, [0.0, 1.0], [0.0])
    c = ClientRecord(0, 0.5, obj, [1.0], [0.0])
    assert np.array_equal(c.prev_x, c.x) and c.prev_x is not c.x


def test_central_state_validation():
    with pytest.raises(ValueError):
        CentralState([0.0], clock=-1.0)
    with pytest.raises(ValueError):
        CentralState([0.0], last_dt=0.0)


def test_segment_rejects_degenerate_interval():
    with pytest.raises(ValueError):
        TrajectorySegment(1.0, 1.0, np.zeros(2), np.ones(2))
    with pytest.raises(ValueError):
        TrajectorySegment(2.0, 1.0, np.zeros(2), np.ones(2))
    seg = TrajectorySegment.constant([1.0, 2.0], 0.0, 3.0)
    assert np.array_equal(seg.slope, np.zeros(2))
