import math
import warnings
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from misodelay import oracle, service
from misodelay.service import (
    CancellationError,
    CancellationWarning,
    ChannelParams,
    CoefficientTable,
    FiniteBlocklengthSpec,
    SchemeKind,
    SchemeSpec,
)
from misodelay.specfun import DomainError

from .reference import siso_mellin

DATA = Path(__file__).parent / "data"


def rel(a, b):
    return abs(a - b) / abs(b)


@pytest.mark.parametrize("zeta", [0.1, 1.0, 10.0, 1e3])
@pytest.mark.parametrize("s", [-20.0, -3.0, 0.0, 0.5, 1.0, 2.5])
def test_single_antenna_forms_agree_with_direct_integral(zeta, s):
    ref = siso_mellin(zeta, s)
    p = ChannelParams(1, zeta)
    assert service.mellin_mrt_tricomi(p)(s) == pytest.approx(ref, rel=1e-10)
    assert service.mellin_mrt_sum(p)(s) == pytest.approx(ref, rel=1e-10)
    # with one antenna every diversity scheme is the same channel
    assert service.mellin_ostbc(p)(s) == pytest.approx(ref, rel=1e-10)
    assert service.mellin_tas(p)(s) == pytest.approx(ref, rel=1e-10)
    assert service.mellin_nakagami(1, zeta)(s) == pytest.approx(ref, rel=1e-10)


def test_single_antenna_sum_is_the_exponential_integral_expression():
    # E[(1+g)^(s-1)] = e^(1/z) z^(s-1) Gamma(s, 1/z)
    zeta, s = 2.0, -1.5
    expected = math.exp(1 / zeta) * zeta ** (s - 1) * float(
        __import__("mpmath").gammainc(s, 1 / zeta))
    value, lost = service.mrt_sum_terms(1, zeta, s)
    assert lost == 0.0
    assert value == pytest.approx(expected, rel=1e-13)


@pytest.mark.parametrize("M", [1, 2, 3, 4, 6])
@pytest.mark.parametrize("zeta", [0.25, 1.0, 4.0, 100.0])
@pytest.mark.parametrize("s", [-20.0, -5.0, -1.0, 0.0, 0.5, 0.9, 1.0, 1.5])
def test_sum_and_tricomi_agree(M, zeta, s):
    log_sum, lost = service.mrt_log_sum(M, zeta, s)
    if lost > 6:
        pytest.skip("cancellation sentinel fires")
    log_u = service.mellin_mrt_tricomi(ChannelParams(M, zeta)).log(s)
    assert math.exp(log_sum - log_u) == pytest.approx(1.0, abs=1e-8)


def test_every_transform_equals_one_at_s_one():
    p = ChannelParams(3, 2.0)
    for fn in (service.mellin_mrt(p), service.mellin_mrt_tricomi(p), service.mellin_ostbc(p),
               service.mellin_tas(p), service.mellin_hardening(p), service.mellin_low_snr(p),
               service.mellin_gaussian(0.7, 0.2), service.mellin_nakagami(2.5, 2.0)):
        assert fn(1.0) == pytest.approx(1.0, rel=1e-12)


def test_cancellation_warning():
    p = ChannelParams(6, 0.05)
    with pytest.warns(CancellationWarning) as rec:
        value = service.mellin_mrt_sum(p)(-1.0)
    assert rec[0].message.lost_digits > 6
    assert value == pytest.approx(service.mellin_mrt_tricomi(p)(-1.0), rel=1e-7)


def test_cancellation_error_and_fallback():
    p = ChannelParams(12, 0.01)
    with pytest.raises(CancellationError):
        service.mellin_mrt_sum(p)(0.0)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        fallback = service.mellin_mrt(p)(0.0)
    assert fallback == pytest.approx(service.mellin_mrt_tricomi(p)(0.0), rel=1e-14)
    assert fallback == pytest.approx(oracle.mellin_quadrature_oracle(SchemeSpec(SchemeKind.MRT_EXACT, p), 0.0),
                                     rel=1e-9)


def test_moderate_cancellation_is_silent_and_accurate():
    p = ChannelParams(5, 0.05)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        value = service.mellin_mrt_sum(p)(0.5)
    assert value == pytest.approx(service.mellin_mrt_tricomi(p)(0.5), rel=1e-9)


def test_large_array_log_does_not_underflow():
    p = ChannelParams(64, 1e4)
    fn = service.mellin_mrt(p)
    value = fn.log(-1000.0)
    assert math.isfinite(value) and value < -745  # below the smallest subnormal
    assert value == pytest.approx(service.mellin_mrt_tricomi(p).log(-1000.0), rel=1e-12)
    with pytest.raises(OverflowError):
        service.mellin_mrt(ChannelParams(64, 1e-3))(4000.0)


def test_channel_params_zeta():
    assert ChannelParams(2, 3.0).zeta == 3.0
    p = ChannelParams(2, 10.0, sigma_e2=0.1)
    assert p.zeta == pytest.approx(1 / (0.1 + 1.1 / 10.0))
    # zeta saturates at 1/sigma_e2 for large snr
    assert ChannelParams(1, 1e12, sigma_e2=0.05).zeta == pytest.approx(20.0, rel=1e-9)
    for bad in (dict(M=0, snr=1.0), dict(M=1, snr=0.0), dict(M=1, snr=1.0, sigma_e2=-1.0), dict(M=1.5, snr=1.0)):
        with pytest.raises(DomainError):
            ChannelParams(**bad)


def test_scheme_spec_validation():
    with pytest.raises(DomainError):
        SchemeSpec(SchemeKind.GAUSSIAN, mu=1.0)
    with pytest.raises(DomainError):
        SchemeSpec(SchemeKind.MRT_EXACT)
    with pytest.raises(DomainError):
        SchemeSpec(SchemeKind.NAKAGAMI, ChannelParams(2, 1.0), m=2)
    with pytest.raises(DomainError):
        SchemeSpec(SchemeKind.MIMO_EIGEN, ChannelParams(2, 1.0, N=2))


def test_coefficient_table_loading_and_validation(tmp_path):
    table = service.load_coefficient_table(DATA / "dighe_2x2.txt")
    assert len(table.entries) == 4
    table.validate(2, 2)
    with pytest.raises(DomainError):
        table.validate(3, 1)
    bad = tmp_path / "bad.txt"
    bad.write_text("1 0\n")
    with pytest.raises(ValueError, match="bad.txt:1"):
        service.load_coefficient_table(bad)
    bad.write_text("1 0 nan\n")
    with pytest.raises(ValueError):
        service.load_coefficient_table(bad)
    with pytest.raises(DomainError):
        CoefficientTable(()).validate(1, 1)


def test_tabulated_eigenvalue_density_is_normalised():
    table = service.load_coefficient_table(DATA / "dighe_2x2.txt")
    pdf = lambda x: sum(c * x**m * math.exp(-i * x) for i, m, c in table.entries)
    mass = integrate.quad(pdf, 0, math.inf)[0]
    mean = integrate.quad(lambda x: x * pdf(x), 0, math.inf)[0]
    assert mass == pytest.approx(1.0, rel=1e-12)
    assert mean == pytest.approx(3.5, rel=1e-12)


@pytest.mark.parametrize("zeta", [0.5, 2.0])
@pytest.mark.parametrize("s", [-5.0, -1.0, 0.5, 1.5])
def test_mimo_eigen_against_quadrature(zeta, s):
    table = service.load_coefficient_table(DATA / "dighe_2x2.txt")
    scheme = SchemeSpec(SchemeKind.MIMO_EIGEN, ChannelParams(2, zeta, N=2), table=table)
    closed = service.scheme_mellin(scheme)(s)
    assert closed == pytest.approx(oracle.mellin_quadrature_oracle(scheme, s), rel=1e-9)


@pytest.mark.parametrize("M", [1, 2, 4])
def test_mimo_with_one_receive_antenna_is_mrt(M):
    table = CoefficientTable(((1, M - 1, 1.0),))
    p = ChannelParams(M, 3.0)
    mimo = service.mellin_mimo_eigen(p, table)
    for s in (-4.0, 0.0, 0.7):
        assert mimo(s) == pytest.approx(service.mellin_mrt_tricomi(p)(s), rel=1e-12)


@pytest.mark.parametrize("M", [1, 2, 3])
def test_low_snr_form(M):
    zeta = 0.01  # -20 dB
    p = ChannelParams(M, zeta)
    low, exact = service.mellin_low_snr(p), service.mellin_mrt(p)
    for s in (-20.0, -5.0, -1.0, 0.0, 0.5, 1.5):
        assert rel(low(s), exact(s)) < 0.01
    with pytest.raises(DomainError):
        low(1.0 + 1.0 / zeta)


@pytest.mark.parametrize("M", [1, 2, 3])
def test_high_snr_far_from_edge(M):
    p = ChannelParams(M, 1e4)
    high, exact = service.mellin_high_snr(p), service.mellin_mrt(p)
    edge = 1.0 - M
    for s in (edge + 1.0, edge + 1.5, edge - 1.5, -20.0):
        assert rel(high(s), exact(s)) < 0.01


def test_high_snr_edge_needs_euler_constant():
    for M in (1, 2, 3):
        p = ChannelParams(M, 1e6)
        exact = service.mellin_mrt_tricomi(p)(1.0 - M)
        corrected = service.mellin_high_snr(p)(1.0 - M)
        printed = service.mellin_high_snr(p, euler_correction=False)(1.0 - M)
        assert rel(corrected, exact) < 1e-4
        assert rel(printed, exact) > 0.05


def test_hardening_at_large_arrays():
    p = ChannelParams(64, 1.0)
    hard, exact = service.mellin_hardening(p), service.mellin_mrt(p)
    for s in (0.0, 0.5, 0.9, 1.5):
        assert rel(hard(s), exact(s)) < 0.02
    # the residual variance of ln g enters as (s-1)^2 Var / 2 in the log
    assert rel(hard(-5.0), exact(-5.0)) > 0.2


def test_gaussian_form():
    fn = service.mellin_gaussian(1.2, 0.3)
    assert fn(0.0) == pytest.approx(math.exp(-1.2 + 0.15), rel=1e-15)
    assert fn.log(-1000.0) == pytest.approx(-1001 * 1.2 + 0.5 * 1001**2 * 0.3)
    scheme = SchemeSpec(SchemeKind.GAUSSIAN, mu=1.2, sigma2=0.3)
    assert fn(-2.0) == pytest.approx(oracle.mellin_quadrature_oracle(scheme, -2.0), rel=1e-9)
    with pytest.raises(DomainError):
        service.mellin_gaussian(0.0, -1.0)


def test_fb_without_dispersion_penalty_is_a_mixture():
    # eps = 1/2 makes Q^-1(eps) = 0
    fb = FiniteBlocklengthSpec(n=168, eps=0.5)
    assert fb.F == 0.0
    p = ChannelParams(2, 3.0)
    exact = service.mellin_mrt(p)
    for fn in (service.mellin_fb(p, fb), service.mellin_fb_high_snr(p, fb)):
        assert fn(-2.0) == pytest.approx(0.5 * exact(-2.0) + 0.5, rel=1e-14)


@pytest.mark.parametrize("M,zeta", [(1, 0.63), (2, 3.16), (3, 10.0)])
@pytest.mark.parametrize("eps", [1e-5, 1e-3, 1e-1])
def test_fb_against_quadrature(M, zeta, eps):
    fb = FiniteBlocklengthSpec(n=168, eps=eps)
    p = ChannelParams(M, zeta)
    scheme = SchemeSpec(SchemeKind.MRT_EXACT, p)
    fn = service.mellin_fb(p, fb)
    for s in (-30.0, -5.0, 0.0, 0.5):
        assert fn(s) == pytest.approx(oracle.mellin_quadrature_oracle(scheme, s, fb=fb), rel=1e-7)
    assert fn(1.0) == pytest.approx(1.0, rel=1e-12)


@pytest.mark.parametrize("M", [1, 3])
def test_fb_high_snr_form_with_penalty(M):
    fb = FiniteBlocklengthSpec(n=64, eps=1e-3)
    p = ChannelParams(M, 10.0)
    scheme = SchemeSpec(SchemeKind.MRT_EXACT, p)
    fn = service.mellin_fb_high_snr(p, fb)
    for s in (-10.0, -1.0, 0.5):
        ref = oracle.mellin_quadrature_oracle(scheme, s, fb=fb, unit_dispersion=True)
        assert fn(s) == pytest.approx(ref, rel=1e-8)


def test_half_log_term_raises_the_rate():
    p = ChannelParams(2, 3.0)
    plain = service.mellin_fb(p, FiniteBlocklengthSpec(168, 1e-3))
    shifted = service.mellin_fb(p, FiniteBlocklengthSpec(168, 1e-3, include_half_log_term=True))
    # larger rate means a smaller negative moment
    assert shifted(-5.0) < plain(-5.0)


def test_clipping_interval_endpoints_are_roots():
    fb = FiniteBlocklengthSpec(n=32, eps=1e-5)
    lo, hi = service.fb_threshold(ChannelParams(1, 1.0), fb)
    assert lo == 0.0 and hi > 0.0
    g = lambda x: math.log1p(x) - fb.F * math.sqrt(service.dispersion(x))
    assert abs(g(hi)) < 1e-12
    assert g(hi * 0.99) < 0.0 < g(hi * 1.01)


def test_mellin_log_handles_overflow_and_bad_values():
    huge = service.MellinFn(lambda s: math.exp(1e4 * s), "huge")
    assert huge.log(1.0) == math.inf
    assert service.MellinFn(lambda s: 0.0, "zero").log(0.0) == -math.inf
    with pytest.raises(ArithmeticError):
        service.MellinFn(lambda s: -1.0, "neg").log(0.0)
    bounded = service.MellinFn(lambda s: 1.0, "b", upper=2.0)
    with pytest.raises(DomainError):
        bounded(2.0)


@given(M=st.integers(1, 8), zdb=st.floats(-10, 30), a=st.floats(-40, 2), b=st.floats(-40, 2))
@settings(max_examples=100, deadline=None)
def test_log_mellin_is_convex(M, zdb, a, b):
    fn = service.mellin_mrt(ChannelParams(M, 10 ** (zdb / 10)))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", CancellationWarning)
        mid = fn.log(0.5 * (a + b))
        ends = 0.5 * (fn.log(a) + fn.log(b))
    assert mid <= ends + 1e-9 * max(1.0, abs(ends))


def test_dispatch_covers_every_kind():
    p = ChannelParams(2, 2.0)
    table = CoefficientTable(((1, 1, 1.0),))
    for kind in SchemeKind:
        kw = {}
        if kind is SchemeKind.GAUSSIAN:
            spec = SchemeSpec(kind, mu=1.0, sigma2=0.1)
        elif kind is SchemeKind.NAKAGAMI:
            spec = SchemeSpec(kind, ChannelParams(1, 2.0), m=1.5)
        elif kind is SchemeKind.MIMO_EIGEN:
            spec = SchemeSpec(kind, p, table=table)
        else:
            spec = SchemeSpec(kind, p, **kw)
        assert service.scheme_mellin(spec)(0.25) > 0.0
