# tests/services/test_optimizer.py
import numpy as np
import pytest

from app.core import Tensor
from app.services.optimizer import Adam, build_param_groups


def _groups():
    a = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    b = Tensor(np.array([[0.5]]), requires_grad=True)
    return a, b, build_param_groups({"enc": {"enc/a": a}, "head": {"head/b": b}}, lr=0.1)


def test_first_step_moves_by_lr_times_sign():
    a, b, groups = _groups()
    opt = Adam(groups)
    a.grad = np.array([3.0, -0.01])
    touched = opt.step()
    # bias-corrected first step = lr·g/|g|
    assert touched == 1
    assert np.allclose(a.data, [0.9, -1.9], atol=1e-6)
    assert np.array_equal(b.data, [[0.5]])


def test_matches_reference_update():
    a, _, groups = _groups()
    opt = Adam(groups, beta1=0.5, beta2=0.999)
    ref = a.data.copy()
    m = np.zeros(2)
    v = np.zeros(2)
    for t, g in enumerate([np.array([0.3, 0.1]), np.array([-0.2, 0.4]), np.array([0.05, 0.05])], start=1):
        a.grad = g.copy()
        opt.step({"enc": 0.01})
        m = 0.5 * m + 0.5 * g
        v = 0.999 * v + 0.001 * g * g
        ref -= 0.01 * (m / (1 - 0.5**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
    assert np.allclose(a.data, ref, rtol=0, atol=1e-14)
    assert opt.updates == 3


def test_set_lr_and_zero_grad():
    a, b, groups = _groups()
    opt = Adam(groups)
    opt.set_lr({"head": 0.5})
    assert [g["lr"] for g in opt.param_groups] == [0.1, 0.5]
    assert opt.tags == ["enc", "head"]
    a.grad = np.ones(2)
    opt.zero_grad()
    assert a.grad is None


def test_state_round_trip():
    a, b, groups = _groups()
    opt = Adam(groups)
    a.grad, b.grad = np.array([0.3, 0.2]), np.array([[1.0]])
    opt.step()
    flat = opt.state_dict()
    assert set(flat) == {"enc/a/m", "enc/a/v", "enc/a/t", "head/b/m", "head/b/v", "head/b/t"}

    a2, b2, groups2 = _groups()
    a2.data, b2.data = a.data.copy(), b.data.copy()
    opt2 = Adam(groups2)
    opt2.load_state_dict(flat, updates=opt.updates)
    for p, q in ((a, a2), (b, b2)):
        p.grad = np.full(p.shape, 0.7)
        q.grad = np.full(q.shape, 0.7)
    opt.step()
    opt2.step()
    assert np.array_equal(a.data, a2.data) and np.array_equal(b.data, b2.data)
    assert opt2.updates == 2


def test_load_rejects_unknown_or_partial_state():
    _, _, groups = _groups()
    opt = Adam(groups)
    with pytest.raises(KeyError):
        opt.load_state_dict({"nope/m": np.zeros(1)})
    with pytest.raises(KeyError):
        opt.load_state_dict({"enc/a/m": np.zeros(2)})
