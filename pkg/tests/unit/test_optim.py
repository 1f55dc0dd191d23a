import numpy as np
import pytest

from physgan_lab.errors import DimensionError
from physgan_lab.optim import Adam, AdamState, adam_step
from physgan_lab.tensor import Tape, Tensor


class TestAdamStep:
    def test_first_step_moves_by_lr(self):
        """Test the bias-corrected first step is lr * sign(grad)."""
        p = Tensor([1.0, -1.0])
        state = adam_step({"p": p}, {"p": np.array([0.5, -2.0])}, AdamState(), lr=0.1)

        np.testing.assert_allclose(p.data, [0.9, -0.9], atol=1e-6)
        assert state.step == 1

    def test_missing_gradient_counts_as_zero(self):
        """Test a parameter without a gradient stays put."""
        p = Tensor([1.0])
        adam_step({"p": p}, {}, AdamState(), lr=0.1)

        np.testing.assert_array_equal(p.data, [1.0])

    def test_parameters_replaced_not_mutated(self):
        """Test a snapshot of the old array survives the update."""
        p = Tensor([1.0])
        before = p.data
        adam_step({"p": p}, {"p": np.array([1.0])}, AdamState(), lr=0.1)

        assert before[0] == 1.0
        assert p.data is not before

    def test_gradient_shape_mismatch(self):
        """Test a wrongly shaped gradient raises DimensionError."""
        with pytest.raises(DimensionError) as exc_info:
            adam_step({"p": Tensor([1.0, 2.0])}, {"p": np.ones(3)}, AdamState(), lr=0.1)

        assert "'p'" in str(exc_info.value)


class TestAdam:
    def test_minimises_quadratic(self):
        """Test repeated steps drive (w - 3)^2 towards its minimum."""
        w = Tensor([0.0])
        opt = Adam({"w": w}, lr=0.1)
        for _ in range(300):
            tape = Tape()
            opt.zero_grad()
            tape.backward((tape.watch(w) - 3.0).square().sum())
            opt.step()

        assert w.item() == pytest.approx(3.0, abs=0.1)

    def test_negative_scale_ascends(self):
        """Test step(scale=-1) moves uphill."""
        w = Tensor([0.0])
        opt = Adam({"w": w}, lr=0.1)
        tape = Tape()
        tape.backward((tape.watch(w) * 2.0).sum())
        opt.step(scale=-1.0)

        assert w.item() > 0.0

    def test_zero_grad_clears(self):
        """Test zero_grad resets every parameter's gradient."""
        w = Tensor([0.0])
        w.grad = np.array([1.0])
        Adam({"w": w}, lr=0.1).zero_grad()

        assert w.grad is None
