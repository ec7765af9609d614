import numpy as np
import pytest
from hypothesis import given, strategies as st

from bubblenet.params import (
    FitnessFn,
    InvalidInputError,
    NetworkParams,
    ParameterError,
    estimate_lipschitz,
    eval_F,
    eval_fitness,
    validate_params,
)

ARC = FitnessFn.arctan()


def test_fitness_examples():
    assert eval_fitness(ARC, 0.0) == pytest.approx(1.0, abs=1e-15)
    assert eval_fitness(FitnessFn.constant(1.0), 37.2) == 1.0
    assert eval_fitness(ARC, 1.0) == pytest.approx(1.5, abs=1e-15)


def test_eval_F_examples():
    assert eval_F(ARC, 0.0) == 0.0
    assert eval_F(FitnessFn.constant(2.0), 3.0) == 6.0
    assert eval_F(ARC, 1.0) == pytest.approx(1.5, abs=1e-15)


def test_nonfinite_input_rejected():
    for bad in (np.nan, np.inf, -np.inf):
        with pytest.raises(InvalidInputError):
            eval_fitness(ARC, bad)
        with pytest.raises(InvalidInputError):
            eval_F(ARC, bad)


def test_fitness_kind_validation():
    with pytest.raises(ParameterError):
        FitnessFn("tanh")
    with pytest.raises(ParameterError):
        FitnessFn.constant(-0.5)


@given(st.floats(-1e6, 1e6))
def test_arctan_in_open_interval(x):
    y = eval_fitness(ARC, x)
    assert 0.0 < y < 2.0


@given(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3))
def test_arctan_monotone(x, y):
    lo, hi = min(x, y), max(x, y)
    assert eval_fitness(ARC, lo) <= eval_fitness(ARC, hi)


@given(st.floats(-1e6, 1e6), st.sampled_from([ARC, FitnessFn.constant(0.7)]))
def test_F_is_x_times_f(x, f):
    assert eval_F(f, x) == x * eval_fitness(f, x)


def test_lipschitz_constant_fn():
    k1, k2 = estimate_lipschitz(FitnessFn.constant(1.0), 10.0, 101)
    assert k1 == 0.0
    assert k2 == pytest.approx(1.0, abs=1e-12)


def test_lipschitz_arctan_k1_matches_derivative_bound():
    # sup|f'| = 2/pi attained at 0; grid quotients approach it from below.
    k1, _ = estimate_lipschitz(ARC, 10.0, 1001)
    assert k1 == pytest.approx(2.0 / np.pi, rel=1e-3)
    assert k1 <= 2.0 / np.pi + 1e-12


def test_lipschitz_arctan_k2_matches_derivative_oracle():
    # Analytic F'(x) = f(x) + 2x/(pi(1+x^2)); maximize on a fine grid.
    x = np.linspace(-10, 10, 400001)
    fprime = (1 + 2 * np.arctan(x) / np.pi) + 2 * x / (np.pi * (1 + x**2))
    _, k2 = estimate_lipschitz(ARC, 10.0, 1001)
    assert k2 == pytest.approx(fprime.max(), rel=1e-3)


@pytest.mark.parametrize("f", [ARC, FitnessFn.constant(1.3)])
def test_quotients_never_exceed_estimates_on_same_grid(f):
    k1, k2 = estimate_lipschitz(f, 5.0, 301)
    x = np.linspace(-5, 5, 301)
    fx = eval_fitness(f, x)
    Fx = x * fx
    ii, jj = np.triu_indices(len(x), k=1)
    dx = x[jj] - x[ii]
    assert np.all(np.abs(fx[jj] - fx[ii]) / dx <= k1 + 1e-12)
    assert np.all(np.abs(Fx[jj] - Fx[ii]) / dx <= k2 + 1e-12)


@pytest.mark.parametrize("f", [ARC, FitnessFn.constant(0.4)])
def test_F_bounded_by_k2_times_x(f):
    _, k2 = estimate_lipschitz(f, 8.0, 801)
    x = np.linspace(-8, 8, 801)
    assert np.all(np.abs(eval_F(f, x)) <= k2 * np.abs(x) + 1e-12)


def test_lipschitz_input_validation():
    with pytest.raises(InvalidInputError):
        estimate_lipschitz(ARC, 10.0, 2)
    with pytest.raises(InvalidInputError):
        estimate_lipschitz(ARC, 0.0, 11)


def test_validate_params_accepts_table_setup():
    p = NetworkParams(n=6, m=2, delta=0.1, dt=0.01)
    assert validate_params(p) is p


def test_validate_params_rejects_single_core_bank():
    with pytest.raises(ParameterError, match="m must be >= 2"):
        validate_params(NetworkParams(n=6, m=1))


def test_validate_params_rejects_offgrid_delta():
    with pytest.raises(ParameterError, match="delta not multiple of dt"):
        validate_params(NetworkParams(delta=0.1, dt=0.03, horizon=0.99))


def test_validate_params_collects_all_problems():
    try:
        validate_params(NetworkParams(n=1, m=1, lam=-1.0, sigma1=0.0))
    except ParameterError as e:
        text = str(e)
        assert "n must be" in text and "m must be" in text
        assert "lambda" in text and "sigma1" in text
    else:
        pytest.fail("expected ParameterError")


def test_validate_params_horizon_vs_delta():
    with pytest.raises(ParameterError, match="horizon"):
        validate_params(NetworkParams(delta=0.5, horizon=0.4))


def test_rho0_core_length_checked():
    with pytest.raises(ParameterError, match="rho0_core"):
        validate_params(NetworkParams(m=2, rho0_core=(0.5, 0.5, 0.5)))
    p = validate_params(NetworkParams(m=2, rho0_core=(0.4, 0.6)))
    assert p.rho0_core_array().tolist() == [0.4, 0.6]
