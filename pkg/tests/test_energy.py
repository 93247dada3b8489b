import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from pscd.energy import (
    EnergyModel,
    ForwardPass,
    energy_eval,
    energy_values,
    from_dict,
    gaussian_quadratic,
    init_mlp,
    load_checkpoint,
    load_params_binary,
    mlp_param_count,
    save_checkpoint,
    save_params_binary,
    to_dict,
)
from pscd.errors import InvalidModelKind, InvalidShape, NumericalError
from pscd.rng import make_rng
from pscd.scoring import QuadratureDomain, log_integral


def central_diff(f, theta, step=1e-5):
    out = np.empty_like(theta)
    for k in range(theta.size):
        up, dn = theta.copy(), theta.copy()
        up[k] += step
        dn[k] -= step
        out[k] = (f(up) - f(dn)) / (2 * step)
    return out


def rel_err(a, b):
    scale = max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-12)
    return np.max(np.abs(a - b)) / scale


class TestGaussianEval:
    def test_at_minimum(self):
        ev = energy_eval(gaussian_quadratic(0, 1), 0.0)
        assert ev.value == 0.0
        assert_array_equal(ev.grad_x, [0.0])
        assert_array_equal(ev.grad_params, [0.0, 0.0])

    def test_at_two(self):
        ev = energy_eval(gaussian_quadratic(0, 1), 2.0)
        assert ev.value == 2.0
        assert_allclose(ev.grad_x, [2.0])
        assert_allclose(ev.grad_params, [-2.0, -4.0])

    def test_stores_log_sigma(self):
        m = gaussian_quadratic(1.5, 0.3)
        assert_allclose(m.params, [1.5, np.log(0.3)])
        assert m.sigma == pytest.approx(0.3)

    def test_fd_params_and_input(self):
        rng = make_rng(11)
        worst_p = worst_x = 0.0
        for _ in range(100):
            theta = np.array([rng.normal(), rng.normal(scale=0.5)])
            x = rng.normal(scale=2.0)
            m = EnergyModel("gaussian", theta)
            ev = energy_eval(m, x)
            fd = central_diff(lambda t: energy_values(m.with_params(t), [x])[0], theta)
            worst_p = max(worst_p, rel_err(ev.grad_params, fd))
            fdx = (energy_values(m, [x + 1e-5])[0] - energy_values(m, [x - 1e-5])[0]) / 2e-5
            worst_x = max(worst_x, abs(fdx - ev.grad_x[0]) / max(abs(fdx), 1e-8))
        assert worst_p <= 1e-8
        assert worst_x <= 1e-6

    def test_normalized_density_is_normal(self):
        m = gaussian_quadratic(0.7, 1.3)
        dom = QuadratureDomain(-15, 15, 8192)
        x = dom.grid()
        e = energy_values(m, x)
        log_z = log_integral(-e, dom)
        assert log_z == pytest.approx(np.log(1.3 * np.sqrt(2 * np.pi)), abs=1e-8)
        dens = np.exp(-e - log_z)
        ref = np.exp(-0.5 * ((x - 0.7) / 1.3) ** 2) / (1.3 * np.sqrt(2 * np.pi))
        assert_allclose(dens, ref, atol=1e-8)


class TestMlp:
    def test_param_count(self):
        assert mlp_param_count([2, 64, 64, 1]) == 4417
        assert init_mlp([2, 64, 64, 1], 0).n_params == 4417

    def test_init_deterministic(self):
        assert_array_equal(init_mlp([2, 64, 64, 1], 7).params, init_mlp([2, 64, 64, 1], 7).params)
        assert not np.array_equal(init_mlp([2, 64, 64, 1], 7).params, init_mlp([2, 64, 64, 1], 8).params)

    def test_init_ranges(self):
        m = init_mlp([2, 64, 1], 3)
        w1 = m.params[:128]
        b1 = m.params[128:192]
        assert np.all(np.abs(w1) <= 1 / np.sqrt(2))
        assert_array_equal(b1, 0.0)

    def test_forward_at_origin_finite(self):
        ev = energy_eval(init_mlp([2, 64, 64, 1], 5), [0.0, 0.0])
        assert np.isfinite(ev.value)

    @pytest.mark.parametrize("widths", [[], [2], [2, 8], [2, 8, 0, 1]])
    def test_bad_widths(self, widths):
        with pytest.raises(InvalidShape):
            init_mlp(widths, 0)

    def test_fd_params_kink_free(self):
        rng = make_rng(21)
        worst = 0.0
        checked = 0
        while checked < 100:
            m = init_mlp([2, 64, 64, 1], int(rng.integers(1 << 30)))
            m = m.with_params(m.params + 0.05 * rng.standard_normal(m.n_params))
            x = rng.normal(scale=2.0, size=(1, 2))
            fp = ForwardPass(m, x)
            if fp.min_abs_preactivation()[0] < 1e-3:
                continue
            g = fp.param_vjp()
            idx = rng.choice(m.n_params, 40, replace=False)
            fd = np.empty(idx.size)
            for j, k in enumerate(idx):
                up, dn = m.params.copy(), m.params.copy()
                up[k] += 1e-5
                dn[k] -= 1e-5
                fd[j] = (energy_values(m.with_params(up), x)[0] - energy_values(m.with_params(dn), x)[0]) / 2e-5
            worst = max(worst, rel_err(g[idx], fd))
            checked += 1
        assert worst <= 1e-4

    def test_fd_input_grad(self):
        rng = make_rng(22)
        m = init_mlp([2, 32, 32, 1], 1)
        x = rng.normal(size=(50, 2))
        fp = ForwardPass(m, x)
        ok = fp.min_abs_preactivation() > 1e-3
        g = fp.input_grad()
        for d in range(2):
            e = np.zeros(2)
            e[d] = 1e-5
            fd = (energy_values(m, x + e) - energy_values(m, x - e)) / 2e-5
            assert_allclose(g[ok, d], fd[ok], rtol=1e-5, atol=1e-7)

    def test_jacobian_rows_match_vjp(self):
        rng = make_rng(23)
        m = init_mlp([2, 16, 16, 1], 2)
        x = rng.normal(size=(7, 2))
        c = rng.normal(size=7)
        fp = ForwardPass(m, x)
        assert_allclose(c @ fp.param_jacobian(), fp.param_vjp(c), rtol=1e-12, atol=1e-12)

    def test_overflow_names_layer(self):
        m = init_mlp([2, 4, 1], 0)
        m = m.with_params(np.full(m.n_params, 1e200))
        with pytest.raises(NumericalError, match="layer"):
            energy_values(m, [[1e200, 1e200]])


class TestModelValue:
    def test_rejects_unknown_kind(self):
        with pytest.raises(InvalidModelKind):
            EnergyModel("conv", [0.0])

    def test_rejects_nonfinite(self):
        with pytest.raises(NumericalError):
            EnergyModel("gaussian", [0.0, np.nan])

    def test_params_read_only(self):
        m = gaussian_quadratic(0, 1)
        with pytest.raises(ValueError):
            m.params[0] = 3.0

    def test_shift_adds_constant(self):
        m = init_mlp([2, 8, 1], 4)
        x = make_rng(0).normal(size=(5, 2))
        assert_allclose(energy_values(m.shifted(2.5), x), energy_values(m, x) + 2.5)

    def test_wrong_dim(self):
        with pytest.raises(InvalidShape):
            energy_values(init_mlp([2, 8, 1], 0), np.zeros((3, 3)))


class TestCheckpoints:
    def test_json_roundtrip(self, tmp_path):
        m = init_mlp([2, 8, 8, 1], 9)
        back = load_checkpoint(save_checkpoint(m, tmp_path / "m.json"))
        assert back == m
        assert json.loads((tmp_path / "m.json").read_text())["kind"] == "mlp"

    def test_dict_roundtrip_decimal(self):
        m = gaussian_quadratic(0.25, 1.0)
        assert from_dict(json.loads(json.dumps(to_dict(m)))) == m

    def test_binary_roundtrip(self, tmp_path):
        m = init_mlp([2, 8, 1], 1)
        path = save_params_binary(m, tmp_path / "p.bin")
        assert path.stat().st_size == 8 * m.n_params
        assert load_params_binary(path, init_mlp([2, 8, 1], 0)) == m


@settings(max_examples=50, deadline=None)
@given(mu=st.floats(-5, 5), log_s=st.floats(-2, 2), x=st.floats(-10, 10))
def test_gaussian_value_formula(mu, log_s, x):
    m = EnergyModel("gaussian", [mu, log_s])
    s = np.exp(log_s)
    assert energy_values(m, [x])[0] == pytest.approx((x - mu) ** 2 / (2 * s * s), rel=1e-12, abs=1e-300)
