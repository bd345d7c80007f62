"""Engine tests: finite-difference gradient oracles and tape semantics."""

import numpy as np
import pytest

from duet import autodiff as ad
from duet.autodiff import Tape, Tensor
from duet.errors import (
    NumericInstabilityError,
    ShapeError,
    StaleTapeError,
)
from duet.optim import Adam, StepDecaySchedule


def finite_difference(f, x, h=1e-5):
    """Central finite differences of a scalar function of one array."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = f(x)
        flat[i] = orig - h
        down = f(x)
        flat[i] = orig
        gf[i] = (up - down) / (2.0 * h)
    return g


def check_grad(build, x, rtol=1e-4, h=1e-5):
    """Compare tape gradients of sum(build(Tensor(x))) against central differences."""
    t = Tensor(x.copy(), requires_grad=True)
    with Tape() as tape:
        out = ad.tsum(build(t))
    got = tape.gradients(out, wrt=[t])[t]

    def scalar(arr):
        return float(ad.tsum(build(Tensor(arr))).data)

    want = finite_difference(scalar, x.copy(), h=h)
    denom = np.maximum(np.abs(want), 1.0)
    err = np.max(np.abs(got - want) / denom)
    assert err < rtol, f"max relative gradient error {err:.3e}"


RNG = np.random.default_rng(2024)


class TestPrimitiveGradients:
    def test_add(self):
        y = Tensor(RNG.uniform(-1, 1, (3, 4)))
        check_grad(lambda x: ad.add(x, y), RNG.uniform(-1, 1, (3, 4)))

    def test_add_broadcast(self):
        y = Tensor(RNG.uniform(-1, 1, (1, 4)))
        check_grad(lambda x: ad.add(x, y), RNG.uniform(-1, 1, (3, 4)))

    def test_sub(self):
        y = Tensor(RNG.uniform(-1, 1, (3, 4)))
        check_grad(lambda x: ad.sub(x, y), RNG.uniform(-1, 1, (3, 4)))

    def test_mul(self):
        y = Tensor(RNG.uniform(-1, 1, (3, 4)))
        check_grad(lambda x: ad.mul(x, y), RNG.uniform(-1, 1, (3, 4)))

    def test_mul_both_sides(self):
        x0 = RNG.uniform(-1, 1, (2, 3))
        check_grad(lambda x: ad.mul(x, x), x0)

    def test_div(self):
        y = Tensor(RNG.uniform(0.5, 1.5, (3, 4)))
        check_grad(lambda x: ad.div(x, y), RNG.uniform(-1, 1, (3, 4)))

    def test_div_denominator(self):
        y = Tensor(RNG.uniform(-1, 1, (3, 4)))
        check_grad(lambda x: ad.div(y, x), RNG.uniform(0.5, 1.5, (3, 4)))

    def test_neg(self):
        check_grad(ad.neg, RNG.uniform(-1, 1, (5,)))

    def test_power(self):
        check_grad(lambda x: ad.power(x, 2.0), RNG.uniform(-1, 1, (4, 2)))
        check_grad(lambda x: ad.power(x, 3.0), RNG.uniform(-1, 1, (4,)))

    def test_sqrt(self):
        check_grad(ad.sqrt, RNG.uniform(0.2, 1.0, (3, 3)))

    def test_absolute(self):
        # sampled away from the kink, where finite differences are valid
        x = RNG.uniform(0.1, 1.0, (3, 4)) * RNG.choice([-1.0, 1.0], (3, 4))
        check_grad(ad.absolute, x)

    def test_absolute_subgradient_zero_at_zero(self):
        t = Tensor(np.array([0.0, -2.0, 3.0]), requires_grad=True)
        with Tape() as tape:
            out = ad.tsum(ad.absolute(t))
        g = tape.gradients(out, wrt=[t])[t]
        assert np.array_equal(g, [0.0, -1.0, 1.0])

    def test_relu(self):
        x = RNG.uniform(0.1, 1.0, (6,)) * RNG.choice([-1.0, 1.0], (6,))
        check_grad(ad.relu, x)

    def test_gelu(self):
        check_grad(ad.gelu, RNG.uniform(-1, 1, (3, 5)))

    def test_arccos(self):
        check_grad(ad.arccos, RNG.uniform(-0.9, 0.9, (4, 3)))

    def test_matmul(self):
        b = Tensor(RNG.uniform(-1, 1, (4, 2)))
        check_grad(lambda x: ad.matmul(x, b), RNG.uniform(-1, 1, (3, 4)))
        a = Tensor(RNG.uniform(-1, 1, (3, 4)))
        check_grad(lambda x: ad.matmul(a, x), RNG.uniform(-1, 1, (4, 2)))

    def test_matmul_batched(self):
        b = Tensor(RNG.uniform(-1, 1, (2, 4, 3)))
        check_grad(lambda x: ad.matmul(x, b), RNG.uniform(-1, 1, (2, 2, 4)))

    def test_matmul_broadcast_batch(self):
        b = Tensor(RNG.uniform(-1, 1, (3, 2)))
        check_grad(lambda x: ad.matmul(x, b), RNG.uniform(-1, 1, (2, 4, 3)))

    def test_softmax(self):
        check_grad(lambda x: ad.softmax(x, axis=-1), RNG.uniform(-1, 1, (3, 5)))

    def test_layer_norm(self):
        check_grad(ad.layer_norm, RNG.uniform(-1, 1, (2, 6)))

    def test_sum_axes(self):
        check_grad(lambda x: ad.tsum(x, axis=0), RNG.uniform(-1, 1, (3, 4)))
        check_grad(lambda x: ad.tsum(x, axis=(0, 2), keepdims=True), RNG.uniform(-1, 1, (2, 3, 4)))

    def test_mean_axes(self):
        check_grad(lambda x: ad.tmean(x, axis=-1), RNG.uniform(-1, 1, (3, 4)))
        check_grad(lambda x: ad.tmean(x), RNG.uniform(-1, 1, (2, 5)))

    def test_reshape(self):
        check_grad(lambda x: ad.reshape(x, (2, 6)), RNG.uniform(-1, 1, (3, 4)))

    def test_swapaxes(self):
        check_grad(lambda x: ad.swapaxes(x, 0, 1), RNG.uniform(-1, 1, (3, 4)))

    def test_take(self):
        check_grad(lambda x: x[1:, :2], RNG.uniform(-1, 1, (3, 4)))

    def test_concat(self):
        y = Tensor(RNG.uniform(-1, 1, (3, 2)))
        check_grad(lambda x: ad.concat([x, y], axis=1), RNG.uniform(-1, 1, (3, 4)))

    def test_two_layer_network_vs_finite_differences(self):
        # end-to-end check mirroring real use: max relative error < 1e-4
        w1 = RNG.uniform(-1, 1, (5, 4))
        w2 = Tensor(RNG.uniform(-1, 1, (4, 2)))
        b2 = Tensor(RNG.uniform(-1, 1, (2,)))
        x = Tensor(RNG.uniform(-1, 1, (3, 5)))

        def net(w):
            h = ad.gelu(ad.matmul(x, w))
            return ad.softmax(ad.add(ad.matmul(h, w2), b2), axis=-1)

        check_grad(net, w1)


class TestForward:
    def test_softmax_singleton_axis(self):
        out = ad.softmax(Tensor([[3.7]]), axis=-1)
        assert out.data.tolist() == [[1.0]]

    def test_softmax_rows_sum_to_one(self):
        x = Tensor(RNG.uniform(-5, 5, (8, 7)))
        rows = ad.softmax(x, axis=-1).data
        assert np.all(rows >= 0.0)
        assert np.max(np.abs(rows.sum(axis=-1) - 1.0)) < 1e-12

    def test_matmul_identity(self):
        a = RNG.uniform(-1, 1, (3, 3))
        out = ad.matmul(Tensor(np.eye(3)), Tensor(a))
        assert np.array_equal(out.data, a)

    def test_mlp_matches_straight_line_oracle(self):
        # independent straight-line reimplementation of the same arithmetic
        rng = np.random.default_rng(7)
        x = rng.uniform(-1, 1, (2, 4))
        w1, b1 = rng.uniform(-1, 1, (4, 6)), rng.uniform(-1, 1, (6,))
        w2, b2 = rng.uniform(-1, 1, (6, 5)), rng.uniform(-1, 1, (5,))
        w3, b3 = rng.uniform(-1, 1, (5, 3)), rng.uniform(-1, 1, (3,))

        h = ad.relu(ad.add(ad.matmul(Tensor(x), Tensor(w1)), Tensor(b1)))
        h = ad.relu(ad.add(ad.matmul(h, Tensor(w2)), Tensor(b2)))
        got = ad.add(ad.matmul(h, Tensor(w3)), Tensor(b3)).data

        ref = np.maximum(x @ w1 + b1, 0.0)
        ref = np.maximum(ref @ w2 + b2, 0.0)
        ref = ref @ w3 + b3
        assert np.max(np.abs(got - ref)) < 1e-12

    def test_forward_deterministic(self):
        x = RNG.uniform(-1, 1, (4, 4))

        def run():
            return ad.layer_norm(ad.gelu(ad.matmul(Tensor(x), Tensor(x)))).data.tobytes()

        assert run() == run()

    def test_shape_mismatch_raises(self):
        with pytest.raises(ShapeError):
            ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
        with pytest.raises(ShapeError):
            ad.add(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))))

    def test_nan_names_primitive(self):
        with pytest.raises(NumericInstabilityError, match="sqrt"):
            ad.sqrt(Tensor([-1.0]))


class TestTape:
    def test_square_gradient(self):
        x = Tensor(3.0, requires_grad=True)
        with Tape() as tape:
            y = ad.mul(x, x)
        g = tape.gradients(y, wrt=[x])[x]
        assert g == pytest.approx(6.0)

    def test_constant_has_zero_gradient(self):
        x = Tensor(2.0, requires_grad=True)
        c = Tensor(5.0, requires_grad=True)
        with Tape() as tape:
            y = ad.mul(x, x)
        g = tape.gradients(y, wrt=[c])[c]
        assert g == 0.0

    def test_off_tape_leaf_gets_zeros(self):
        x = Tensor(np.ones((2, 2)), requires_grad=True)
        other = Tensor(np.ones((3,)), requires_grad=True)
        with Tape() as tape:
            y = ad.tsum(ad.mul(x, x))
        g = tape.gradients(y, wrt=[other])[other]
        assert np.array_equal(g, np.zeros(3))

    def test_tape_consumed_twice_raises(self):
        x = Tensor(1.5, requires_grad=True)
        with Tape() as tape:
            y = ad.mul(x, x)
        tape.gradients(y)
        with pytest.raises(StaleTapeError):
            tape.gradients(y)

    def test_retain_allows_second_sweep(self):
        x = Tensor(1.5, requires_grad=True)
        with Tape() as tape:
            y = ad.mul(x, x)
            z = ad.add(y, x)
        gy = tape.gradients(y, wrt=[x], retain=True)[x]
        gz = tape.gradients(z, wrt=[x])[x]
        assert gy == pytest.approx(3.0)
        assert gz == pytest.approx(4.0)

    def test_seed_shape_validated(self):
        x = Tensor(np.ones((2, 2)), requires_grad=True)
        with Tape() as tape:
            y = ad.mul(x, x)
        with pytest.raises(ShapeError):
            tape.gradients(y, seed=np.ones((3,)))

    def test_each_node_visited_once(self):
        # diamond graph: d(x*x + x*x)/dx = 4x
        x = Tensor(2.0, requires_grad=True)
        with Tape() as tape:
            y = ad.mul(x, x)
            z = ad.add(y, y)
        g = tape.gradients(z, wrt=[x])[x]
        assert g == pytest.approx(8.0)


class TestAdam:
    def test_first_step_magnitude_is_lr(self):
        p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
        opt = Adam([p], schedule=StepDecaySchedule(base=1e-2))
        opt.step({p: np.array([0.3, -0.7])})
        delta = np.abs(p.data - np.array([1.0, -2.0]))
        assert np.max(np.abs(delta - 1e-2)) < 1e-9

    def test_zero_gradient_keeps_parameters(self):
        p = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        opt = Adam([p])
        for _ in range(5):
            opt.step({})
        assert np.array_equal(p.data, [1.0, 2.0])

    def test_quadratic_bowl_converges(self):
        # direct simulation: 200 steps on f(x) = ||x||^2 from (1, 1)
        p = Tensor(np.array([1.0, 1.0]), requires_grad=True)
        opt = Adam([p], schedule=StepDecaySchedule(base=1e-2))
        norms = []
        for _ in range(200):
            opt.step({p: 2.0 * p.data})
            norms.append(float(np.linalg.norm(p.data)))
        assert norms[-1] < 0.5 * np.sqrt(2.0)
        tail = norms[20:]
        assert all(b <= a + 1e-12 for a, b in zip(tail, tail[1:]))

    def test_non_finite_gradient_rejected(self):
        from duet.errors import NonFiniteGradientError

        p = Tensor(np.array([1.0]), requires_grad=True)
        opt = Adam([p])
        with pytest.raises(NonFiniteGradientError):
            opt.step({p: np.array([np.nan])})
        assert np.array_equal(p.data, [1.0])

    def test_schedule_decays(self):
        sched = StepDecaySchedule()
        assert sched(1) == 1e-4
        assert sched(20_000) == 1e-4
        assert sched(20_001) == 1e-5
        assert sched(40_001) == 5e-6
