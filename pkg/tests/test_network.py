import numpy as np
import pytest

from _support import identity_lasso_spec, make_lasso_spec, make_quad_spec
from descentunroll.errors import NumericalError
from descentunroll.network import (
    Arch,
    ListaLayerParams,
    ModelParams,
    NoiseMode,
    NoiseSchedule,
    ResGdLayerParams,
    forward,
    forward_batch,
    init_lista,
    init_resgd,
)
from descentunroll.optimizee import ista_step


class TestInitLista:
    def test_identity_dictionary(self):
        spec = identity_lasso_spec(2, 0.5)
        params = init_lista(spec, 3)
        layer = params.layers[0]
        assert np.allclose(layer.d_u, np.eye(2) / spec.nu)
        assert np.allclose(layer.d_e, np.eye(2) - np.eye(2) / spec.nu)
        assert np.allclose(layer.beta, 0.5 / spec.nu)

    def test_thresholds_equal_alpha_over_nu(self):
        spec = make_lasso_spec(3, 6, alpha=0.7, seed=5)
        params = init_lista(spec, 4)
        for layer in params.layers:
            assert np.all(layer.beta == 0.7 / spec.nu)

    def test_forward_reproduces_solver_iterates(self):
        for seed in range(20):
            spec = make_lasso_spec(4, 8, alpha=0.5, seed=seed)
            x = np.random.default_rng(1000 + seed).standard_normal(4)
            for num_layers in range(1, 11):
                params = init_lista(spec, num_layers)
                traj = forward(x, np.zeros(8), params, NoiseSchedule.off(), spec)
                y = np.zeros(8)
                for _ in range(num_layers):
                    y = ista_step(y, x, spec)
                assert np.linalg.norm(traj.y[-1][:, 0] - y) <= 1e-12


class TestInitResgd:
    def test_deterministic_given_seed(self):
        a = init_resgd((3, 4, 8), 3, seed=7)
        b = init_resgd((3, 4, 8), 3, seed=7)
        for la, lb in zip(a.layers, b.layers):
            for name in ("w1", "b1", "w2", "b2"):
                assert np.array_equal(getattr(la, name), getattr(lb, name))

    def test_zero_biases(self):
        params = init_resgd((3, 4, 8), 2, seed=1)
        for layer in params.layers:
            assert np.all(layer.b1 == 0.0)
            assert np.all(layer.b2 == 0.0)

    def test_fan_in_scaling(self):
        p, d, h = 60, 80, 100  # h * (d + p) = 14000 samples
        params = init_resgd((p, d, h), 1, seed=3)
        var = params.layers[0].w1.var()
        assert abs(var - 1.0 / (d + p)) <= 0.2 / (d + p)


class TestForward:
    def test_zero_update_passes_input_through(self):
        p, d, h = 2, 3, 4
        layers = [
            ResGdLayerParams(
                np.random.default_rng(i).standard_normal((h, d + p)),
                np.random.default_rng(i + 1).standard_normal(h),
                np.zeros((d, h)),
                np.zeros(d),
            )
            for i in range(3)
        ]
        params = ModelParams(Arch.RESGD, layers, (p, d, h))
        spec = make_quad_spec(p, d, seed=9)
        rng = np.random.default_rng(42)
        schedule = NoiseSchedule(NoiseMode.INVERSE_LAYER, 0.5)
        traj = forward(np.ones(p), np.zeros(d), params, schedule, spec, rng)
        for l in range(1, 4):
            expected = traj.y[l - 1] + traj.noise[l - 1]
            assert np.array_equal(traj.y[l], expected)

    def test_noise_off_records_zero_draws(self):
        spec = make_lasso_spec(3, 5, seed=11)
        params = init_lista(spec, 4)
        traj = forward(np.ones(3), np.zeros(5), params, NoiseSchedule.off(), spec)
        assert all(np.all(n == 0.0) for n in traj.noise)

    def test_noise_off_is_deterministic_without_rng(self):
        spec = make_lasso_spec(3, 5, seed=12)
        params = init_lista(spec, 3)
        x = np.random.default_rng(0).standard_normal(3)
        y0 = np.random.default_rng(1).standard_normal(5)
        a = forward(x, y0, params, NoiseSchedule.off(), spec)
        b = forward(x, y0, params, NoiseSchedule.off(), spec)
        for ya, yb in zip(a.y, b.y):
            assert np.array_equal(ya, yb)

    def test_noise_requires_rng(self):
        spec = make_lasso_spec(3, 5, seed=13)
        params = init_lista(spec, 2)
        with pytest.raises(ValueError, match="rng"):
            forward(np.ones(3), np.zeros(5), params, NoiseSchedule(NoiseMode.INVERSE_LAYER, 1.0), spec)

    def test_grad_proportional_sigma_scales_draws(self):
        # With sigma_hat = 0 the draws are exactly zero even though noise is on.
        spec = make_lasso_spec(3, 5, seed=14)
        params = init_lista(spec, 3)
        schedule = NoiseSchedule(NoiseMode.GRAD_PROPORTIONAL, 0.0)
        traj = forward(
            np.ones(3), np.ones(5), params, schedule, spec, np.random.default_rng(3)
        )
        assert all(np.all(n == 0.0) for n in traj.noise)

    def test_batch_width_matches_single_sample(self):
        spec = make_lasso_spec(3, 5, seed=15)
        params = init_lista(spec, 4)
        rng = np.random.default_rng(5)
        x = rng.standard_normal((3, 6))
        y0 = rng.standard_normal((5, 6))
        batch_traj = forward_batch(x, y0, params, NoiseSchedule.off(), spec)
        for i in range(6):
            single = forward(x[:, i], y0[:, i], params, NoiseSchedule.off(), spec)
            assert np.allclose(single.y[-1][:, 0], batch_traj.y[-1][:, i], atol=1e-12)

    def test_non_finite_output_names_layer(self):
        spec = make_lasso_spec(2, 3, seed=16)
        params = init_lista(spec, 2)
        params.layers[1].d_u[0, 0] = 1e308
        params.layers[1].d_e[:] = 1e308
        with np.errstate(over="ignore"), pytest.raises(NumericalError, match="layer 2"):
            forward(np.ones(2) * 10, np.ones(3) * 10, params, NoiseSchedule.off(), spec)


class TestTypes:
    def test_negative_beta_rejected(self):
        with pytest.raises(ValueError, match="beta"):
            ListaLayerParams(np.zeros((3, 2)), np.zeros((3, 3)), np.array([0.1, -0.1, 0.2]))

    def test_layer_dim_consistency_checked(self):
        layer = ListaLayerParams(np.zeros((3, 2)), np.zeros((3, 3)), np.zeros(3))
        with pytest.raises(ValueError, match="layer"):
            ModelParams(Arch.LISTA, [layer], (5, 3, 0))

    def test_schedule_rejects_negative_sigma(self):
        with pytest.raises(ValueError, match="sigma_hat"):
            NoiseSchedule(NoiseMode.INVERSE_LAYER, -1.0)
