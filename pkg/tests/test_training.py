import math

import numpy as np
import pytest

from gradcheck import central_diff, max_rel_error
from kanforge import lbfgs
from kanforge.errors import InvalidArgumentError, ShapeError, TrainingError
from kanforge.network import (
    activation_stats,
    flatten_params,
    forward,
    new_kan,
    silu,
    unflatten_params,
    update_grid_from_samples,
)
from kanforge.splines import basis_eval
from kanforge.training import ENTROPY_EPS, TrainConfig, TrainTrace, grad, lbfgs_minimize, loss

NO_REG = TrainConfig(lambda_sparsity=0.0, lambda_entropy=0.0)


def random_problem(seed, widths=(3, 2, 1), G=3, k=3, n=12):
    rng = np.random.default_rng(seed)
    m = new_kan(list(widths), G, k, seed=seed)
    v = flatten_params(m) + 0.3 * rng.normal(size=m.param_count)
    m = unflatten_params(m, v)
    X = rng.uniform(-1, 1, (n, widths[0]))
    m = update_grid_from_samples(m, X, margin=0.1)
    Y = rng.normal(size=(n, widths[-1]))
    return m, X, Y


class TestLoss:
    def test_zero(self):
        m = new_kan([2, 1], 2, 3)
        m = unflatten_params(m, np.zeros(m.param_count))
        assert loss(m, np.zeros((4, 2)), np.zeros(4), NO_REG) == (0.0, 0.0, 0.0)

    def test_constant_predictor(self):
        m = new_kan([1, 1], 2, 3)
        m = unflatten_params(m, np.zeros(m.param_count))
        m.output_shift = 2.0
        y = np.array([1.0, 2.5, -1.0])
        total, data, reg = loss(m, np.zeros((3, 1)), y, NO_REG)
        assert data == pytest.approx(((2 - 1) ** 2 + (2 - 2.5) ** 2 + (2 + 1) ** 2) / 3, abs=1e-15)
        assert total == data and reg == 0.0

    def test_regularizer_recomputed(self):
        m, X, Y = random_problem(1, widths=(3, 4, 2), n=5)
        cfg = TrainConfig(lambda_sparsity=0.3, lambda_entropy=0.7)
        total, data, reg = loss(m, X, Y, cfg)
        hand = 0.0
        for A in activation_stats(m, X):
            a = A.ravel().tolist()
            s = sum(a) + len(a) * ENTROPY_EPS
            H = -sum((ai + ENTROPY_EPS) / s * math.log((ai + ENTROPY_EPS) / s) for ai in a)
            hand += 0.3 * sum(a) + 0.7 * H
        assert reg == pytest.approx(hand, rel=1e-12)
        assert total == pytest.approx(data + reg, rel=1e-15)
        pred = forward(m, X)
        assert data == pytest.approx(np.mean((pred - Y) ** 2), rel=1e-14)

    def test_shape_mismatch(self):
        m = new_kan([2, 1], 2, 3)
        with pytest.raises(ShapeError):
            loss(m, np.zeros((4, 2)), np.zeros(3), NO_REG)

    def test_config_validation(self):
        with pytest.raises(InvalidArgumentError):
            TrainConfig(max_iters=0)
        with pytest.raises(InvalidArgumentError):
            TrainConfig(lambda_sparsity=-1.0)


class TestGrad:
    @pytest.mark.parametrize("seed", range(5))
    @pytest.mark.parametrize("cfg", [NO_REG, TrainConfig(lambda_sparsity=0.05, lambda_entropy=0.02)])
    def test_finite_differences(self, seed, cfg):
        m, X, Y = random_problem(seed)
        v = flatten_params(m)
        fd = central_diff(lambda z: loss(unflatten_params(m, z), X, Y, cfg)[0], v)
        assert max_rel_error(grad(m, X, Y, cfg), fd) < 1e-4

    def test_output_affine_included(self):
        m, X, Y = random_problem(7)
        m.output_shift, m.output_scale = 0.5, 3.0
        v = flatten_params(m)
        fd = central_diff(lambda z: loss(unflatten_params(m, z), X, Y, NO_REG)[0], v)
        assert max_rel_error(grad(m, X, Y, NO_REG), fd) < 1e-4

    def test_perfect_fit_zero_gradient(self):
        m, X, _ = random_problem(3)
        Y = forward(m, X)
        assert np.max(np.abs(grad(m, X, Y, NO_REG))) <= 1e-10

    def test_hand_chain_rule(self):
        m = new_kan([1, 1], 2, 1, seed=0)  # hats at -1, 0, 1
        m.layers[0].coeffs[0, 0] = [0.3, -0.4, 0.9]
        m.layers[0].w_base[0, 0], m.layers[0].w_spline[0, 0] = 0.7, 1.3
        x, y = 0.4, 0.25
        B = np.array([0.0, 0.6, 0.4])
        spl = B @ [0.3, -0.4, 0.9]
        phi = 0.7 * x / (1 + math.exp(-x)) + 1.3 * spl
        r = 2 * (phi - y)
        expected = np.concatenate([r * 1.3 * B, [r * x / (1 + math.exp(-x)), r * spl]])
        np.testing.assert_allclose(basis_eval(m.layers[0].grids[0], x), B, atol=1e-15)
        np.testing.assert_allclose(grad(m, [[x]], [y], NO_REG), expected, rtol=1e-13, atol=1e-15)

    def test_two_layer_chain_rule(self):
        # d/dx of the inner edge flows through the outer edge derivative
        m = new_kan([1, 1, 1], 2, 1, seed=0)
        m.layers[1].coeffs[0, 0] = [0.0, 0.0, 0.0]
        m.layers[1].w_base[0, 0], m.layers[1].w_spline[0, 0] = 2.0, 0.0
        x = 0.3
        L0 = m.layers[0]
        h = float(L0.w_base[0, 0] * silu(x) + L0.w_spline[0, 0] * (basis_eval(L0.grids[0], x) @ L0.coeffs[0, 0]))
        out = 2.0 * float(silu(h))
        s = 1 / (1 + math.exp(-h))
        dout_dh = 2.0 * s * (1 + h * (1 - s))
        g = grad(m, [[x]], [0.0], NO_REG)
        # gradient wrt the inner w_base = 2 * out * dout/dh * silu(x)
        assert g[3] == pytest.approx(2 * out * dout_dh * float(silu(x)), rel=1e-12)


class TestLbfgs:
    def test_convex_linear_spline(self):
        rng = np.random.default_rng(0)
        m = new_kan([1, 1], 6, 1, seed=0)
        m.layers[0].w_base[:] = 0.0
        x = rng.uniform(-1, 1, 40)
        y = np.cos(2 * x) + 0.1 * rng.normal(size=40)
        mask = np.zeros(m.param_count, bool)
        mask[:7] = True  # coefficients only; w_base = 0 and w_spline = 1 frozen
        cfg = TrainConfig(max_iters=200, grad_tol=1e-13, lambda_sparsity=0.0, lambda_entropy=0.0)
        trained, trace = lbfgs_minimize(m, x[:, None], y, cfg, trainable=mask)
        B = basis_eval(m.layers[0].grids[0], x)
        oracle = np.linalg.solve(B.T @ B, B.T @ y)
        assert np.max(np.abs(trained.layers[0].coeffs[0, 0] - oracle)) <= 1e-6
        assert trained.layers[0].w_base[0, 0] == 0.0 and trained.layers[0].w_spline[0, 0] == 1.0

    def test_sin_fit(self):
        x = np.linspace(-1, 1, 50)
        m = new_kan([1, 1], 8, 3, seed=0)
        trained, trace = lbfgs_minimize(m, x[:, None], np.sin(np.pi * x), TrainConfig(max_iters=200, lambda_sparsity=0, lambda_entropy=0))
        _, data, _ = loss(trained, x[:, None], np.sin(np.pi * x), NO_REG)
        assert data < 1e-4
        assert len(trace.records) <= 200

    def test_stationary_start(self):
        m, X, _ = random_problem(2)
        Y = forward(m, X)
        trained, trace = lbfgs_minimize(m, X, Y, NO_REG)
        assert trace.records == [] and trace.reason == "grad_tol"
        assert flatten_params(trained).tobytes() == flatten_params(m).tobytes()

    def test_monotone_trace_and_determinism(self):
        m, X, Y = random_problem(4, n=20)
        cfg = TrainConfig(max_iters=60)
        a, ta = lbfgs_minimize(m, X, Y, cfg)
        b, tb = lbfgs_minimize(m, X, Y, cfg)
        assert flatten_params(a).tobytes() == flatten_params(b).tobytes()
        assert ta.records == tb.records
        losses = [r[1] for r in ta.records]
        assert all(l1 <= l0 for l0, l1 in zip(losses, losses[1:]))
        assert [r[0] for r in ta.records] == list(range(1, len(losses) + 1))

    def test_non_finite_aborts_with_iteration(self):
        m, X, Y = random_problem(5)
        Y[0, 0] = np.nan
        with pytest.raises(TrainingError, match="iteration 0"):
            lbfgs_minimize(m, X, Y, NO_REG)

    def test_accepted_steps_satisfy_strong_wolfe(self):
        m, X, Y = random_problem(6, n=15)
        cfg = TrainConfig(lambda_sparsity=0.0, lambda_entropy=0.0)

        def fun(z):
            total, *_ = loss(unflatten_params(m, z), X, Y, cfg)
            return total, grad(unflatten_params(m, z), X, Y, cfg)

        state = {}
        v0 = flatten_params(m)
        state["x"], (state["f"], state["g"]) = v0, fun(v0)
        checked = []

        def cb(it, x, f, g):
            s = x - state["x"]
            slope0, slope1 = float(state["g"] @ s), float(g @ s)
            checked.append((f <= state["f"] + 1e-4 * slope0 + 1e-12 * abs(state["f"]),
                            abs(slope1) <= 0.9 * abs(slope0) + 1e-15))
            state.update(x=x, f=f, g=g)

        lbfgs.minimize(fun, v0, max_iters=40, callback=cb)
        assert len(checked) > 10
        assert all(a and c for a, c in checked)

    def test_rosenbrock(self):
        def fun(z):
            x, y = z
            return (1 - x) ** 2 + 100 * (y - x * x) ** 2, np.array([-2 * (1 - x) - 400 * x * (y - x * x), 200 * (y - x * x)])

        res = lbfgs.minimize(fun, [-1.2, 1.0], max_iters=200, grad_tol=1e-9)
        np.testing.assert_allclose(res.x, [1.0, 1.0], atol=1e-6)
        assert res.reason == "grad_tol"

    def test_overflowing_trials_are_halved(self):
        # exp blows up for long steps; the search must back off instead of failing
        def fun(z):
            with np.errstate(over="ignore"):
                e = np.exp(z[0])
            return e - 50 * z[0], np.array([e - 50])

        res = lbfgs.minimize(fun, [0.0], max_iters=50, grad_tol=1e-8)
        assert res.x[0] == pytest.approx(math.log(50), abs=1e-6)

    def test_regularizer_monotonicity(self):
        rng = np.random.default_rng(8)
        X = rng.uniform(-1, 1, (60, 3))
        Y = np.sin(2 * X[:, 0]) + 0.5 * X[:, 1] ** 2
        l1 = []
        for lam in (0.0, 0.01, 0.1):
            m = new_kan([3, 3, 1], 3, 3, seed=0)
            trained, _ = lbfgs_minimize(m, X, Y, TrainConfig(max_iters=100, lambda_sparsity=lam, lambda_entropy=0.0))
            l1.append(sum(float(A.sum()) for A in activation_stats(trained, X)))
        assert l1[0] >= l1[1] - 1e-6 and l1[1] >= l1[2] - 1e-6

    def test_grid_updates_run(self):
        rng = np.random.default_rng(9)
        X = rng.uniform(-1, 1, (40, 2))
        Y = np.exp(X[:, 0]) - X[:, 1]
        m = new_kan([2, 2, 1], 3, 3, seed=0)
        trained, trace = lbfgs_minimize(m, X, Y, TrainConfig(max_iters=40, grid_update_every=10, stop_grid_update=30))
        its = [r[0] for r in trace.records]
        assert its == sorted(set(its)) and its[-1] <= 40
        assert loss(trained, X, Y, NO_REG)[1] < loss(m, X, Y, NO_REG)[1]


class TestTrace:
    def test_csv_round_trip(self, tmp_path):
        t = TrainTrace()
        t.append(1, 0.5, 0.01, 1e-3)
        t.append(2, 0.25, 0.02, 2e-4)
        p = tmp_path / "t.csv"
        t.to_csv(p)
        assert p.read_text().splitlines()[0] == "iteration,train_loss,reg,grad_norm"
        assert TrainTrace.from_csv(p).records == t.records

    def test_invariants(self):
        t = TrainTrace()
        t.append(3, 1.0, 0.0, 1.0)
        with pytest.raises(InvalidArgumentError):
            t.append(3, 1.0, 0.0, 1.0)
        with pytest.raises(TrainingError):
            t.append(4, float("inf"), 0.0, 1.0)
