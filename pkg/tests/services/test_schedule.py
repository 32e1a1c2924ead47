# tests/services/test_schedule.py
import pytest

from app.services.schedule import STEP_GROUPS, StageSchedule, active_steps, group_learning_rate, learning_rate

FULL = StageSchedule()  # E1=20, E2=30, 50 epochs, halvings 20/30/40/45


def test_step_gating():
    assert active_steps(0, FULL) == (1,)
    assert active_steps(19, FULL) == (1,)
    assert active_steps(20, FULL) == (1, 2)
    assert active_steps(30, FULL) == (1, 2, 3)


def test_gating_respects_max_step():
    sched = StageSchedule(max_step=1)
    assert active_steps(45, sched) == (1,)


def test_step1_halvings():
    # ค่าคาดหวัง: 1e-4 แล้วลดครึ่งที่ 20/30/40/45
    expected = {0: 1e-4, 19: 1e-4, 20: 5e-5, 30: 2.5e-5, 40: 1.25e-5, 45: 6.25e-6}
    for epoch, lr in expected.items():
        assert learning_rate(epoch, 1, FULL)["encoder"] == pytest.approx(lr)


def test_revisit_factor_in_step2():
    lrs = learning_rate(20, 2, FULL)
    assert lrs["out_mono"] == pytest.approx(1e-5)
    assert lrs["agg_blocks"] == pytest.approx(1e-5)
    # mfm / out_stereo ไม่เคยเทรนใน step 1
    assert lrs["mfm"] == pytest.approx(1e-4)
    assert lrs["out_stereo"] == pytest.approx(1e-4)


def test_halving_counted_from_step_start():
    assert learning_rate(30, 2, FULL)["mfm"] == pytest.approx(5e-5)
    lrs3 = learning_rate(30, 3, FULL)
    assert set(lrs3) == set(STEP_GROUPS[3])
    assert all(v == pytest.approx(1e-5) for v in lrs3.values())
    assert learning_rate(45, 3, FULL)["out_mono"] == pytest.approx(2.5e-6)


def test_group_not_in_step():
    with pytest.raises(ValueError):
        group_learning_rate(0, 3, "encoder", FULL)


def test_bad_schedule():
    with pytest.raises(ValueError):
        StageSchedule(e1=30, e2=20)
    with pytest.raises(ValueError):
        StageSchedule(max_step=4)
