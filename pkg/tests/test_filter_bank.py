import numpy as np
import pytest
from hypothesis import given, strategies as st

from dimm.errors import IllConditionedError
from dimm.filter_bank import (FilterState, bank_init, bank_run, bank_step, filter_sequence,
                              kf_predict, kf_update, position)
from dimm.motion_models import CA, CJ, CV, ModelKind, ModelSpec, make_bank_models, make_model
from oracles import gaussian_pdf, wls_final_state


def _random_problem(rng, T=None):
    kind = (CV, CA, CJ)[rng.integers(3)]
    m = make_model(kind, rng.uniform(0.3, 1.5), rng.uniform(0.1, 3.0), rng.uniform(0.5, 3.0))
    T = T or int(rng.integers(1, 31))
    m0 = rng.normal(0, 5, m.n)
    A = rng.normal(size=(m.n, m.n))
    P0 = A @ A.T + m.n * np.eye(m.n)
    x = rng.multivariate_normal(m0, P0)
    zs = []
    for _ in range(T):
        x = m.F @ x + rng.multivariate_normal(np.zeros(m.n), m.Q)
        zs.append(m.H @ x + rng.multivariate_normal(np.zeros(3), m.R))
    return m, m0, P0, np.array(zs)


def _kf(m, m0, P0, zs):
    fs = FilterState(mean=m0, cov=P0)
    for z in zs:
        fs = kf_update(kf_predict(fs, m), m, z)
    return fs


def test_predict_example():
    m = make_model(CV, 1.0, 0.0, 1.0)
    fs = kf_predict(FilterState(np.zeros(6), np.eye(6)), m)
    assert not fs.mean.any()
    assert np.array_equal(fs.cov[:2, :2], [[2, 1], [1, 1]])


def test_identity_model_predict_is_noop():
    F = np.eye(6)
    m = ModelSpec(CV, 1.0, F, np.zeros((6, 6)), np.eye(3, 6), np.eye(3))
    rng = np.random.default_rng(1)
    A = rng.normal(size=(6, 6))
    fs = FilterState(rng.normal(size=6), A @ A.T + np.eye(6))
    out = kf_predict(fs, m)
    assert np.array_equal(out.mean, fs.mean) and np.allclose(out.cov, fs.cov, rtol=0, atol=1e-15)


def test_predict_noise_raises_eigenvalues():
    m0 = make_model(CA, 0.5, 0.0, 1.0)
    m1 = make_model(CA, 0.5, 2.0, 1.0)
    fs = FilterState(np.zeros(9), np.eye(9))
    e0 = np.linalg.eigvalsh(kf_predict(fs, m0).cov)
    e1 = np.linalg.eigvalsh(kf_predict(fs, m1).cov)
    assert (e1 >= e0 - 1e-12).all()


def test_scalar_textbook_update():
    # per axis: P = 1, R = 1, H = 1 -> gain 1/2, posterior variance 1/2
    m = make_model(CV, 1.0, 0.0, 1.0)
    P = np.eye(6)
    fs = kf_update(FilterState(np.zeros(6), P), m, np.array([2.0, 4.0, 6.0]))
    assert np.allclose(position(fs, m), [1.0, 2.0, 3.0], rtol=0, atol=1e-15)
    assert np.allclose(np.diag(fs.cov)[[0, 2, 4]], 0.5, rtol=0, atol=1e-15)


def test_uninformative_measurement():
    m = make_model(CA, 0.1, 1.0, 1e6)
    fs = FilterState(np.arange(9.0), np.eye(9))
    out = kf_update(fs, m, np.array([1e3, -1e3, 5e2]))
    assert np.allclose(out.mean, fs.mean, rtol=0, atol=1e-6)


def test_singular_innovation_raises():
    m = make_model(CV, 1.0, 0.0, 1.0)
    bad = ModelSpec(m.kind, m.dt, m.F, m.Q, m.H, np.zeros((3, 3)))
    with pytest.raises(IllConditionedError) as ei:
        kf_update(FilterState(np.zeros(6), np.zeros((6, 6))), bad, np.zeros(3))
    assert ei.value.model == CV


def test_bank_step_tags_failing_model():
    specs = make_bank_models(0.1, (0.1, 0.1, 0.0), 1.0)
    cj = specs[2]
    specs[2] = ModelSpec(cj.kind, cj.dt, cj.F, cj.Q, cj.H, np.zeros((3, 3)))
    bank = bank_init(specs, np.zeros(3), 1.0)
    bank = type(bank)(tuple((m, FilterState(fs.mean, 0 * fs.cov)) for m, fs in bank.filters))
    with pytest.raises(IllConditionedError) as ei:
        bank_step(bank, np.zeros(3))
    assert ei.value.model == CJ


def test_matches_wls_oracle_20_steps():
    rng = np.random.default_rng(7)
    for _ in range(10):
        m, m0, P0, zs = _random_problem(rng, T=20)
        got = _kf(m, m0, P0, zs).mean
        ref = wls_final_state(m.F, m.Q, m.H, m.R, m0, P0, zs)
        assert np.linalg.norm(got - ref) <= 1e-8 * np.linalg.norm(ref)


def test_likelihood_cache_matches_independent_pdf():
    rng = np.random.default_rng(3)
    m = make_model(CA, 0.2, 1.0, 2.0)
    fs = FilterState(np.zeros(9), 10 * np.eye(9))
    for _ in range(100):
        fs = kf_update(kf_predict(fs, m), m, rng.normal(0, 3, 3))
        ref = gaussian_pdf(fs.last_innovation, fs.last_innovation_cov)
        assert fs.last_likelihood == pytest.approx(ref, rel=1e-10)


def test_bank_init_examples():
    specs = make_bank_models(0.1, (0.1, 1.0, 10.0), 1.0)
    bank = bank_init(specs, [1.0, 2.0, 3.0], 10.0)
    assert np.array_equal(bank.positions(), np.tile([1.0, 2.0, 3.0], (3, 1)))
    for m, fs in bank.filters:
        assert np.trace(fs.cov) == pytest.approx(10.0 * m.n)
    again = bank_init(specs, [1.0, 2.0, 3.0], 10.0)
    for (_, a), (_, b) in zip(bank.filters, again.filters):
        assert np.array_equal(a.mean, b.mean) and np.array_equal(a.cov, b.cov)
    with pytest.raises(ValueError):
        bank_init(specs, [0, 0, 0], 0.0)


def test_bank_output_order_and_consensus():
    specs = make_bank_models(0.1, (0.1, 1.0, 10.0), 1e-9)
    bank = bank_init(specs, [4.0, 5.0, 6.0], 1.0)
    # zero derivatives: every model predicts the initial position
    bank, pos = bank_step(bank, np.array([4.0, 5.0, 6.0]))
    assert [str(m.kind) for m in bank.specs] == ["CV", "CA", "CJ"]
    assert np.allclose(pos, [4.0, 5.0, 6.0], rtol=0, atol=1e-9)


def test_stationary_target_converges():
    # the first fix is 3 m off, every later one is exact
    specs = make_bank_models(0.1, (0.1, 1.0, 10.0), 0.1)
    truth = np.array([10.0, -20.0, 30.0])
    bank = bank_init(specs, truth + 3.0, 100.0)
    for _ in range(50):
        bank, pos = bank_step(bank, truth)
    assert np.abs(pos - truth).max() < 1e-6


def test_covariance_stays_symmetric_pd():
    rng = np.random.default_rng(11)
    specs = make_bank_models(0.1, (0.03, 0.3, 10.0), 5.0)
    bank = bank_init(specs, np.zeros(3), 100.0)
    z = np.zeros(3)
    for _ in range(300):
        z = z + rng.normal(0, 1, 3)
        bank, _ = bank_step(bank, z + rng.normal(0, 5, 3))
        for _, fs in bank.filters:
            assert np.abs(fs.cov - fs.cov.T).max() <= 1e-10
            assert np.linalg.eigvalsh(fs.cov).min() > 0


def test_filters_are_independent():
    specs = make_bank_models(0.1, (0.03, 0.3, 10.0), 2.0)
    rng = np.random.default_rng(5)
    zs = rng.normal(0, 10, (20, 3))
    a = bank_init(specs, zs[0])
    b = bank_init(specs[::-1], zs[0])
    for z in zs[1:]:
        a, _ = bank_step(a, z)
        b, _ = bank_step(b, z)
    for (_, fa), (_, fb) in zip(a.filters, b.filters[::-1]):
        assert np.array_equal(fa.mean, fb.mean) and np.array_equal(fa.cov, fb.cov)


def test_compiled_sequence_matches_step_api():
    specs = make_bank_models(0.1, (0.03, 0.3, 10.0), 5.0)
    rng = np.random.default_rng(2)
    zs = np.cumsum(rng.normal(0, 2, (60, 3)), axis=0)
    fast = bank_run(specs, zs)
    bank = bank_init(specs, zs[0])
    assert np.array_equal(fast[0], bank.positions())
    for k in range(1, len(zs)):
        bank, pos = bank_step(bank, zs[k])
        assert np.allclose(fast[k], pos, rtol=1e-12, atol=1e-10)
    _, _, ll = filter_sequence(specs[0], zs)
    assert np.isfinite(ll[1:]).all()


@given(st.integers(0, 2 ** 32 - 1))
def test_wls_oracle_property(seed):
    m, m0, P0, zs = _random_problem(np.random.default_rng(seed))
    got = _kf(m, m0, P0, zs).mean
    ref = wls_final_state(m.F, m.Q, m.H, m.R, m0, P0, zs)
    assert np.linalg.norm(got - ref) <= 1e-8 * max(np.linalg.norm(ref), 1e-12)


def test_ct_kind_filters_too():
    m = make_model(ModelKind.ct(0.3), 0.1, 0.5, 1.0)
    rng = np.random.default_rng(0)
    fs = FilterState(np.zeros(6), np.eye(6))
    for _ in range(10):
        fs = kf_update(kf_predict(fs, m), m, rng.normal(size=3))
    assert np.isfinite(fs.mean).all()
