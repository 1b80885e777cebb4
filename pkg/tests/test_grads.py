import numpy as np
import pytest

from _support import make_lasso_spec, make_quad_spec, random_batch
from descentunroll.grads import (
    Batch,
    ConstraintFamily,
    ConstraintKind,
    constraint_slack_matrix,
    constraint_slacks,
    empirical_lagrangian,
    finite_diff_check,
    lagrangian_grad,
    lagrangian_value_and_grad,
)
from descentunroll.network import (
    Arch,
    ListaLayerParams,
    ModelParams,
    NoiseMode,
    NoiseSchedule,
    forward,
    forward_batch,
    init_lista,
    init_resgd,
)

CII = ConstraintKind(ConstraintFamily.DIST_TO_OPT, 0.05)
CI = ConstraintKind(ConstraintFamily.GRAD_NORM, 0.05)
OFF = NoiseSchedule.off()


class FakeSample:
    def __init__(self, x, y_star):
        self.x = x
        self.y_star = y_star


def perturbed_lista(spec, num_layers, seed, scale=0.05):
    """Move off the solver-equivalent point so gradients are generic."""
    params = init_lista(spec, num_layers)
    rng = np.random.default_rng(seed)
    for layer in params.layers:
        layer.d_u += scale * rng.standard_normal(layer.d_u.shape)
        layer.d_e += scale * rng.standard_normal(layer.d_e.shape)
        layer.beta += scale * np.abs(rng.standard_normal(layer.beta.shape))
    return params


class TestConstraintSlacks:
    def test_stalled_layer_has_positive_slack(self):
        spec = make_lasso_spec(3, 5, seed=1)
        rng = np.random.default_rng(2)
        y = rng.standard_normal((5, 1))
        y_star = rng.standard_normal((5, 1))
        slacks = constraint_slack_matrix([y, y.copy()], rng.standard_normal((3, 1)), y_star, spec, CII)
        expected = CII.epsilon * np.linalg.norm(y[:, 0] - y_star[:, 0])
        assert slacks[0, 0] == pytest.approx(expected, rel=1e-12)

    def test_reaching_optimum_gives_nonpositive_slack(self):
        spec = make_lasso_spec(3, 5, seed=3)
        rng = np.random.default_rng(4)
        y_prev = rng.standard_normal((5, 1))
        y_star = rng.standard_normal((5, 1))
        slacks = constraint_slack_matrix(
            [y_prev, y_star.copy()], rng.standard_normal((3, 1)), y_star, spec, CII
        )
        expected = -(1 - CII.epsilon) * np.linalg.norm(y_prev[:, 0] - y_star[:, 0])
        assert slacks[0, 0] == pytest.approx(expected, rel=1e-12)

    def test_grad_norm_slack_matches_direct_evaluation(self):
        # Independent reimplementation: norms computed sample by sample.
        spec = make_quad_spec(3, 4, seed=5)
        rng = np.random.default_rng(6)
        ys = [rng.standard_normal((4, 3)) for _ in range(4)]
        x = rng.standard_normal((3, 3))
        slacks = constraint_slack_matrix(ys, x, rng.standard_normal((4, 3)), spec, CI)
        for l in range(1, 4):
            for i in range(3):
                gl = spec.mat.T @ (spec.mat @ ys[l][:, i] - x[:, i])
                gp = spec.mat.T @ (spec.mat @ ys[l - 1][:, i] - x[:, i])
                direct = np.linalg.norm(gl) - (1 - 0.05) * np.linalg.norm(gp)
                assert abs(slacks[l - 1, i] - direct) <= 1e-12

    def test_grad_norm_constraint_rejected_on_lasso(self):
        spec = make_lasso_spec(3, 5, seed=7)
        rng = np.random.default_rng(8)
        with pytest.raises(ValueError, match="smooth"):
            constraint_slack_matrix(
                [rng.standard_normal((5, 1))] * 2,
                rng.standard_normal((3, 1)),
                rng.standard_normal((5, 1)),
                spec,
                CI,
            )

    def test_per_sample_wrapper_matches_trajectory(self):
        spec = make_lasso_spec(3, 5, seed=9)
        params = perturbed_lista(spec, 4, seed=10)
        rng = np.random.default_rng(11)
        x = rng.standard_normal(3)
        y_star = rng.standard_normal(5)
        traj = forward(x, rng.standard_normal(5), params, OFF, spec)
        slacks = constraint_slacks(traj, FakeSample(x, y_star), spec, CII)
        assert slacks.shape == (4,)
        dists = [np.linalg.norm(y[:, 0] - y_star) for y in traj.y]
        for l in range(1, 5):
            assert slacks[l - 1] == pytest.approx(dists[l] - 0.95 * dists[l - 1], rel=1e-12)


class TestEmpiricalLagrangian:
    def test_zero_duals_reduce_to_mse(self):
        spec = make_lasso_spec(3, 5, seed=12)
        params = perturbed_lista(spec, 3, seed=13)
        batch = random_batch(spec, 8, seed=14)
        value, _ = empirical_lagrangian(batch, params, np.zeros(3), CII, OFF, spec)
        traj = forward_batch(batch.x, batch.y0, params, OFF, spec)
        resid = traj.y[-1] - batch.y_star
        assert value == float(np.mean(np.sum(resid * resid, axis=0)))

    def test_hand_worked_single_layer_micro_instance(self):
        # d = p = 1, one layer: y1 = S_beta(du * x + de * y0).
        # du = 2, de = 0.5, beta = 1, x = 3, y0 = 2, y* = 4, lambda = 0.5, eps = 0.05.
        # Pre-activation a = 6 + 1 = 7 -> y1 = 6. MSE = (6-4)^2 = 4.
        # Slack = |6-4| - 0.95 * |2-4| = 2 - 1.9 = 0.1.
        # Lagrangian = 4 + 0.5 * 0.1 = 4.05.
        spec = make_lasso_spec(1, 1, alpha=0.5, seed=0)
        layer = ListaLayerParams(np.array([[2.0]]), np.array([[0.5]]), np.array([1.0]))
        params = ModelParams(Arch.LISTA, [layer], (1, 1, 0))
        batch = Batch(np.array([[3.0]]), np.array([[4.0]]), np.array([[2.0]]))
        value, slacks = empirical_lagrangian(batch, params, np.array([0.5]), CII, OFF, spec)
        assert slacks[0] == pytest.approx(0.1, abs=1e-15)
        assert value == pytest.approx(4.05, abs=1e-14)

    def test_linear_in_duals(self):
        spec = make_lasso_spec(3, 5, seed=15)
        params = perturbed_lista(spec, 3, seed=16)
        batch = random_batch(spec, 4, seed=17)
        c = 0.3
        v0, slacks = empirical_lagrangian(batch, params, np.zeros(3), CII, OFF, spec)
        vc, _ = empirical_lagrangian(batch, params, np.full(3, c), CII, OFF, spec)
        assert vc == pytest.approx(v0 + c * slacks.sum(), rel=1e-13)


class TestLagrangianGrad:
    def test_beta_gradient_matches_finite_differences(self):
        spec = make_lasso_spec(3, 5, seed=18)
        params = perturbed_lista(spec, 1, seed=19)
        batch = random_batch(spec, 1, seed=20)
        err = finite_diff_check(params, batch, np.zeros(1), CII, spec, samples=10**9)
        assert err <= 1e-5

    def test_zero_residual_zero_slack_gives_zero_gradient(self):
        # A single resgd layer with zero update weights: y1 = y0; choosing
        # y* = y0 makes both the loss and its gradient vanish with lambda = 0.
        spec = make_quad_spec(2, 3, seed=21)
        params = init_resgd((2, 3, 4), 1, seed=22)
        params.layers[0].w2[:] = 0.0
        params.layers[0].b2[:] = 0.0
        rng = np.random.default_rng(23)
        y0 = rng.standard_normal((3, 5))
        batch = Batch(rng.standard_normal((2, 5)), y0.copy(), y0)
        grads = lagrangian_grad(batch, params, np.zeros(1), CII, OFF, spec)
        for _, name, arr in grads.arrays():
            if name in ("w2", "b2"):
                assert np.all(arr == 0.0)

    def test_resgd_grad_norm_constraint_matches_finite_differences(self):
        spec = make_quad_spec(3, 4, seed=24)
        params = init_resgd((3, 4, 6), 3, seed=25)
        batch = random_batch(spec, 4, seed=26)
        duals = np.array([0.2, 0.1, 0.3])
        err = finite_diff_check(params, batch, duals, CI, spec, samples=60, seed=1)
        assert err <= 1e-5

    def test_gradient_oracle_battery(self):
        # 20 instances per architecture x constraint pairing.
        for seed in range(20):
            spec = make_lasso_spec(3, 4, seed=300 + seed)
            params = perturbed_lista(spec, 2, seed=400 + seed)
            batch = random_batch(spec, 3, seed=500 + seed)
            duals = np.abs(np.random.default_rng(600 + seed).standard_normal(2))
            assert finite_diff_check(params, batch, duals, CII, spec, samples=25, seed=seed) <= 1e-4

            qspec = make_quad_spec(3, 4, seed=700 + seed)
            qparams = init_resgd((3, 4, 5), 2, seed=800 + seed)
            qbatch = random_batch(qspec, 3, seed=900 + seed)
            qduals = np.abs(np.random.default_rng(1000 + seed).standard_normal(2))
            assert finite_diff_check(qparams, qbatch, qduals, CI, qspec, samples=25, seed=seed) <= 1e-4

    def test_mutation_detected(self):
        spec = make_quad_spec(3, 4, seed=27)
        params = init_resgd((3, 4, 5), 2, seed=28)
        batch = random_batch(spec, 3, seed=29)
        duals = np.array([0.1, 0.2])
        grads = lagrangian_grad(batch, params, duals, CI, OFF, spec)
        grads.layers[0]["w1"][0, 0] *= 2.0
        err = finite_diff_check(params, batch, duals, CI, spec, samples=10**9, grads=grads)
        assert err > 0.3

    def test_linearity_in_duals(self):
        spec = make_lasso_spec(3, 5, seed=30)
        params = perturbed_lista(spec, 3, seed=31)
        batch = random_batch(spec, 4, seed=32)
        rng = np.random.default_rng(33)
        lam1 = np.abs(rng.standard_normal(3))
        lam2 = np.abs(rng.standard_normal(3))
        g_sum = lagrangian_grad(batch, params, lam1 + lam2, CII, OFF, spec)
        g1 = lagrangian_grad(batch, params, lam1, CII, OFF, spec)
        g2 = lagrangian_grad(batch, params, lam2, CII, OFF, spec)
        g0 = lagrangian_grad(batch, params, np.zeros(3), CII, OFF, spec)
        for (_, _, s), (_, _, a), (_, _, b), (_, _, z) in zip(
            g_sum.arrays(), g1.arrays(), g2.arrays(), g0.arrays()
        ):
            assert np.allclose(s, a + b - z, atol=1e-10)

    def test_directional_derivative_consistency(self):
        # (L(W + h u) - L(W - h u)) / 2h must equal <grad, u> for the same
        # noise draws; noise off makes the draw trivially shared.
        spec = make_lasso_spec(3, 5, seed=34)
        params = perturbed_lista(spec, 2, seed=35)
        batch = random_batch(spec, 4, seed=36)
        duals = np.array([0.2, 0.4])
        step = lagrangian_value_and_grad(batch, params, duals, CII, OFF, spec)
        rng = np.random.default_rng(37)
        h = 1e-6
        direction = [
            {k: rng.standard_normal(v.shape) for k, v in layer.fields().items()}
            for layer in params.layers
        ]
        inner = sum(
            float(np.sum(gl[name] * direction[i][name]))
            for i, gl in enumerate(step.grads.layers)
            for name in gl
        )
        for sign in (1.0, -1.0):
            for i, layer in enumerate(params.layers):
                for name, arr in layer.fields().items():
                    arr += sign * h * direction[i][name]
            if sign > 0:
                v_plus, _ = empirical_lagrangian(batch, params, duals, CII, OFF, spec)
                for i, layer in enumerate(params.layers):
                    for name, arr in layer.fields().items():
                        arr -= h * direction[i][name]
        v_minus, _ = empirical_lagrangian(batch, params, duals, CII, OFF, spec)
        for i, layer in enumerate(params.layers):
            for name, arr in layer.fields().items():
                arr += h * direction[i][name]
        fd = (v_plus - v_minus) / (2 * h)
        assert fd == pytest.approx(inner, rel=1e-4, abs=1e-8)

    def test_noisy_value_and_grad_share_draws(self):
        spec = make_lasso_spec(3, 5, seed=38)
        params = perturbed_lista(spec, 3, seed=39)
        batch = random_batch(spec, 4, seed=40)
        schedule = NoiseSchedule(NoiseMode.GRAD_PROPORTIONAL, 0.5)
        step1 = lagrangian_value_and_grad(
            batch, params, np.zeros(3), CII, schedule, spec, np.random.default_rng(41)
        )
        step2 = lagrangian_value_and_grad(
            batch, params, np.zeros(3), CII, schedule, spec, np.random.default_rng(41)
        )
        assert step1.value == step2.value
        for (_, _, a), (_, _, b) in zip(step1.grads.arrays(), step2.grads.arrays()):
            assert np.array_equal(a, b)
