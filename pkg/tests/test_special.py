import pytest
from hypothesis import given, settings, strategies as st
from scipy import special, stats

from timedtr._special import digamma, gamma_pdf, gammainc_p, gammainc_p_da, gammainc_q


@pytest.mark.parametrize("a", [1.01, 1.5, 2.7, 5.0, 20.0, 150.0])
@pytest.mark.parametrize("x", [1e-6, 0.01, 0.5, 1.0, 3.0, 10.0, 80.0, 400.0])
def test_incomplete_gamma_matches_scipy(a, x):
    ref = special.gammainc(a, x)
    assert gammainc_p(a, x) == pytest.approx(ref, rel=1e-12, abs=1e-300)
    assert gammainc_q(a, x) == pytest.approx(special.gammaincc(a, x), rel=1e-11, abs=1e-300)


def test_incomplete_gamma_edges():
    assert gammainc_p(2.0, 0.0) == 0.0
    assert gammainc_q(2.0, 0.0) == 1.0
    assert gammainc_p(3.0, 1e4) == 1.0


@pytest.mark.parametrize("x", [0.1, 0.9, 1.0, 2.5, 7.0, 40.0])
def test_digamma(x):
    assert digamma(x) == pytest.approx(special.digamma(x), rel=1e-11, abs=1e-12)


@pytest.mark.parametrize("a,x", [(1.5, 0.3), (2.0, 2.0), (4.5, 3.0), (5.0, 12.0), (30.0, 25.0)])
def test_shape_derivative_against_differences(a, x):
    h = 1e-5
    fd = (special.gammainc(a + h, x) - special.gammainc(a - h, x)) / (2 * h)
    assert gammainc_p_da(a, x) == pytest.approx(fd, rel=1e-6, abs=1e-12)


def test_gamma_density_matches_scipy():
    for a, x in [(1.2, 0.3), (4.48, 2.0), (10.0, 15.0)]:
        assert gamma_pdf(x, a) == pytest.approx(stats.gamma.pdf(x, a), rel=1e-12)


@settings(max_examples=200, deadline=None)
@given(a=st.floats(1.0, 60.0), x=st.floats(0.0, 200.0), dx=st.floats(1e-3, 10.0))
def test_incomplete_gamma_is_a_cdf(a, x, dx):
    p0, p1 = gammainc_p(a, x), gammainc_p(a, x + dx)
    assert 0.0 <= p0 <= 1.0
    assert p1 >= p0 - 1e-14
    assert p0 + gammainc_q(a, x) == pytest.approx(1.0, abs=1e-12)
