import math

import numpy as np
import pytest

from demoire.autodiff import ShapeError, Tensor
from demoire.optim import AdamW, PlateauScheduler, adamw_update


def test_adamw_single_scalar_hand_case():
    # step 1: m = 0.05, v = 0.00025, m_hat = 0.5, v_hat = 0.25
    # theta = 1 * (1 - 0.1 * 0.01) - 0.1 * 0.5 / (0.5 + 1e-8)
    theta, m, v = adamw_update(np.array(1.0), np.array(0.5), 0.0, 0.0, 1, lr=0.1, weight_decay=0.01)
    assert abs(float(theta) - 0.899000002) < 1e-7
    assert float(m) == pytest.approx(0.05)
    assert float(v) == pytest.approx(0.00025)


def test_zero_gradient_is_pure_decay():
    theta, _, _ = adamw_update(np.array([2.0, -4.0]), np.zeros(2), np.zeros(2), np.zeros(2), 1,
                               lr=0.01, weight_decay=0.1)
    np.testing.assert_allclose(theta, np.array([2.0, -4.0]) * (1 - 0.01 * 0.1), rtol=1e-15)


def test_shape_mismatch():
    with pytest.raises(ShapeError):
        adamw_update(np.zeros(3), np.zeros(2), 0.0, 0.0, 1, lr=0.1)
    with pytest.raises(ShapeError):
        AdamW([Tensor(np.zeros(2))]).step([])


def _run(seed):
    rng = np.random.default_rng(seed)
    p = Tensor(rng.standard_normal(5).astype(np.float32))
    opt = AdamW([p], lr=1e-2, weight_decay=1e-2)
    for _ in range(20):
        opt.step([(2 * p.data - 1).astype(np.float32)])
    return p.data


def test_identical_runs_are_bit_identical():
    assert _run(0).tobytes() == _run(0).tobytes()


def test_state_dict_round_trip():
    p = Tensor(np.ones(3, dtype=np.float32))
    opt = AdamW([p], lr=1e-2)
    opt.step([np.ones(3, dtype=np.float32)])
    q = Tensor(p.data.copy())
    other = AdamW([q], lr=5.0)
    other.load_state_dict(opt.state_dict())
    opt.step([np.full(3, 0.5, dtype=np.float32)])
    other.step([np.full(3, 0.5, dtype=np.float32)])
    assert p.data.tobytes() == q.data.tobytes()


# --- plateau schedule -----------------------------------------------------------------


def test_improving_losses_keep_lr():
    s = PlateauScheduler(3e-4)
    for loss in (1.0, 0.9, 0.8):
        assert s.step(loss) == 3e-4


def test_flat_losses_reduce_after_fourth_epoch():
    s = PlateauScheduler(3e-4)
    lrs = [s.step(1.0) for _ in range(4)]
    assert lrs[:3] == [3e-4] * 3
    assert lrs[3] == pytest.approx(2.4e-4, rel=1e-12)


def test_lr_clamps_at_floor():
    s = PlateauScheduler(3e-4)
    for _ in range(500):
        s.step(1.0)
    assert s.lr == 5e-6


def test_non_finite_loss_rejected():
    with pytest.raises(ValueError):
        PlateauScheduler().step(math.nan)


@pytest.mark.parametrize("kw", [dict(factor=1.0), dict(factor=0.0), dict(lr=1e-6, min_lr=5e-6)])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        PlateauScheduler(**kw)


def table_oracle(losses, lr=3e-4, factor=0.8, patience=3, floor=5e-6, tol=1e-8):
    """Explicit (improved?, counter) transition table."""
    best, counter, out = None, 0, []
    for x in losses:
        improved = best is None or x < best - tol
        table = {
            True: lambda c: 0,
            False: lambda c: c + 1,
        }
        counter = table[improved](counter)
        if improved:
            best = x
        if counter == patience:
            lr, counter = max(lr * factor, floor), 0
        out.append(lr)
    return out


@pytest.mark.parametrize("seed", range(50))
def test_scheduler_matches_table_oracle(seed):
    rng = np.random.default_rng(seed)
    steps = rng.choice([-0.1, 0.0, 0.0, 5e-9, 0.05], size=60)
    losses = list(1.0 + np.cumsum(steps))
    s = PlateauScheduler(3e-4)
    assert [s.step(x) for x in losses] == table_oracle(losses)


def test_scheduler_state_round_trip():
    s = PlateauScheduler(3e-4)
    for x in (1.0, 1.0):
        s.step(x)
    t = PlateauScheduler(1e-3)
    t.load_state_dict(s.state_dict())
    assert [s.step(1.0) for _ in range(3)] == [t.step(1.0) for _ in range(3)]
    fresh = PlateauScheduler()
    fresh.load_state_dict(PlateauScheduler().state_dict())
    assert fresh.best == math.inf
