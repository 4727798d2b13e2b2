import itertools
import struct
from math import factorial

import numpy as np
import pytest

from indexlab.quantize import (BasisSpec, QuantizationError, dump_matrix, eigenpairs, ladder_matrices,
                               load_matrix, quantize, quantize_terms, reliable_eigenpairs)
from indexlab.symbols import Symbol, constant, random_hermitian


def exact_E_spectrum(mu, kmax=400):
    ks = np.arange(1, kmax)
    r = np.sqrt(mu ** 2 + 2 * ks)
    return np.concatenate([[mu], r, -r])


def hermite_functions(nmax, x):
    """phi_0 .. phi_nmax by the stable three-term recurrence."""
    phi = np.zeros((nmax + 1, len(x)))
    phi[0] = np.pi ** -0.25 * np.exp(-x ** 2 / 2)
    if nmax:
        phi[1] = np.sqrt(2) * x * phi[0]
    for n in range(2, nmax + 1):
        phi[n] = np.sqrt(2 / n) * x * phi[n - 1] - np.sqrt((n - 1) / n) * phi[n - 2]
    return phi


def test_ladder_three_levels():
    a, ad, X, P = ladder_matrices(3, 1.0)
    np.testing.assert_allclose(a, [[0, 1, 0], [0, 0, np.sqrt(2)], [0, 0, 0]])
    np.testing.assert_allclose(ad, a.T)


def test_ladder_structure():
    _, _, X, P = ladder_matrices(12, 0.7)
    assert np.all(X.imag == 0)
    np.testing.assert_allclose(X, X.T)
    assert np.all(P.real == 0)
    np.testing.assert_allclose(P.imag, -P.imag.T)
    np.testing.assert_allclose(P, P.conj().T)


@pytest.mark.parametrize("eps", [1.0, 0.5, 0.1])
def test_canonical_commutator(eps):
    L = 20
    _, _, X, P = ladder_matrices(L, eps)
    c = X @ P - P @ X
    np.testing.assert_allclose(c[:L - 2, :L - 2], 1j * eps * np.eye(L - 2), atol=1e-12)


def test_position_matrix_against_hermite_quadrature():
    # <phi_m | x | phi_n> by Gauss-Hermite quadrature of the Hermite functions
    nodes, weights = np.polynomial.hermite.hermgauss(80)
    phi = hermite_functions(15, nodes) * np.exp(nodes ** 2 / 2)
    xm = (phi * weights * nodes) @ phi.T
    _, _, X, _ = ladder_matrices(16, 1.0)
    np.testing.assert_allclose(X.real, xm, atol=1e-10)


def test_annihilation_on_hermite_functions():
    x = np.linspace(-8, 8, 4001)
    phi = hermite_functions(10, x)
    dphi = np.gradient(phi, x, axis=1)
    a_phi = (x * phi + dphi) / np.sqrt(2)  # a = (x + d/dx)/sqrt 2
    for n in range(1, 10):
        err = np.max(np.abs(a_phi[n] - np.sqrt(n) * phi[n - 1])[500:-500])
        assert err < 1e-4


def all_orderings_oracle(m, s, levels, eps, keep):
    # Weyl ordering of x^m p^s is the average over all distinct words in X and P.
    _, _, X, P = ladder_matrices(levels, eps)
    words = set(itertools.permutations("x" * m + "p" * s))
    total = 0
    for w in words:
        prod = np.eye(levels, dtype=complex)
        for ch in w:
            prod = prod @ (X if ch == "x" else P)
        total = total + prod
    assert len(words) == factorial(m + s) // (factorial(m) * factorial(s))
    return (total / len(words))[:keep, :keep]


@pytest.mark.parametrize("m,s", [(1, 1), (2, 1), (1, 2), (2, 2), (3, 1), (0, 3), (4, 0)])
@pytest.mark.parametrize("eps", [1.0, 0.3])
def test_mccoy_matches_all_orderings(m, s, eps):
    n_max = 10
    sym = Symbol.from_terms(1, 1, {(0, (m,), (s,)): np.eye(1)})
    op = quantize_terms(sym.terms, 1, 1, BasisSpec(1, n_max, epsilon=eps))
    oracle = all_orderings_oracle(m, s, n_max + 1 + 2 * (m + s), eps, n_max + 1)
    np.testing.assert_allclose(op, oracle, atol=1e-10)


def test_xp_symmetrized():
    n_max = 15
    sym = Symbol.from_terms(1, 1, {(0, (1,), (1,)): np.eye(1)})
    got = quantize(sym, BasisSpec(1, n_max)).matrix
    _, _, X, P = ladder_matrices(40, 1.0)
    want = 0.5 * (X @ P + P @ X)
    np.testing.assert_allclose(got, want[:n_max + 1, :n_max + 1], atol=1e-12)


def test_E_quantizes_to_ladder_form(E):
    n_max, mu = 30, 0.37
    op = quantize(E.at_mu(mu), BasisSpec(1, n_max))
    a, ad, _, _ = ladder_matrices(n_max + 1)
    eye = np.eye(n_max + 1)
    want = np.block([[-mu * eye, np.sqrt(2) * a], [np.sqrt(2) * ad, mu * eye]])
    np.testing.assert_allclose(op.matrix, want, atol=1e-12)


def test_constant_symbol_is_matrix_times_identity(rng):
    m = random_hermitian(3, rng)
    op = quantize(constant(m, 2), BasisSpec(2, 4))
    np.testing.assert_allclose(op.matrix, np.kron(m, np.eye(25)), atol=1e-14)


def test_requires_mu_substitution(E):
    with pytest.raises(QuantizationError):
        quantize(E, BasisSpec(1, 5))


def test_buffer_must_cover_degree():
    sym = Symbol.from_terms(1, 1, {(0, (2,), (1,)): np.eye(1)})
    with pytest.raises(QuantizationError):
        quantize(sym, BasisSpec(1, 5, buffer=2))


def test_dof_mismatch(E):
    with pytest.raises(QuantizationError):
        quantize(E.at_mu(0.0), BasisSpec(2, 5))


def test_hermiticity(E2, rng):
    from indexlab.symbols import linear_noise
    sym = (E2 + linear_noise(2, 4, 0.3, rng)).at_mu(0.2)
    m = quantize(sym, BasisSpec(2, 8)).matrix
    assert np.linalg.norm(m - m.conj().T) <= 1e-10 * np.linalg.norm(m)


def test_single_reliable_eigenvalue_at_mu_zero(E):
    pairs = reliable_eigenpairs(quantize(E.at_mu(0.0), BasisSpec(1, 60)), (-1.0, 1.0))
    good = [w for w, ok in pairs if ok]
    assert len(good) == 1 and abs(good[0]) < 1e-12


def test_window_outside_spectrum(E):
    assert reliable_eigenpairs(quantize(E.at_mu(0.0), BasisSpec(1, 20)), (100.0, 200.0)) == []


@pytest.mark.parametrize("mu", [-1.5, -0.5, 0.0, 0.5, 1.5])
def test_exact_spectrum_oracle(E, mu):
    n_max = 200
    ep = eigenpairs(quantize(E.at_mu(mu), BasisSpec(1, n_max)))
    exact = exact_E_spectrum(mu)
    sel = ep.reliable & (np.abs(ep.values) <= np.sqrt(n_max) / 2)
    assert sel.sum() > 10
    for w in ep.values[sel]:
        assert np.min(np.abs(exact - w)) < 1e-8


@pytest.mark.parametrize("eps", [1.0, 0.5, 0.1])
def test_in_gap_eigenvalue_independent_of_epsilon(E, eps):
    mu = 0.3
    op = quantize(E.at_mu(mu), BasisSpec(1, int(round(40 / eps)), epsilon=eps))
    good = [w for w, ok in reliable_eigenpairs(op, (-0.5, 0.5)) if ok]
    assert len(good) == 1 and good[0] == pytest.approx(mu, abs=1e-10)


@pytest.mark.parametrize("mu", [-0.4, 0.1, 0.35])
def test_truncation_convergence_E(E, mu):
    def window_values(n_max):
        ep = eigenpairs(quantize(E.at_mu(mu), BasisSpec(1, n_max)), (-3.0, 3.0))
        return np.sort(ep.values[ep.reliable])
    a, b = window_values(30), window_values(60)
    np.testing.assert_allclose(a, b, atol=1e-8)


@pytest.mark.parametrize("mu", [-0.3, 0.2])
def test_truncation_convergence_E21(E2, mu):
    def window_values(n_max):
        ep = eigenpairs(quantize(E2.at_mu(mu), BasisSpec(2, n_max)), (-0.9, 0.9))
        return np.sort(ep.values[ep.reliable])
    a, b = window_values(7), window_values(14)
    assert len(a) == 1
    np.testing.assert_allclose(a, b, atol=1e-8)
    assert a[0] == pytest.approx(mu, abs=1e-10)


def test_edge_states_are_flagged(E):
    ep = eigenpairs(quantize(E.at_mu(0.4), BasisSpec(1, 20)), (-1.0, 1.0))
    assert sorted(ep.values[~ep.reliable]) == pytest.approx([-0.4])
    assert ep.values[ep.reliable] == pytest.approx([0.4])


def test_matrix_dump_round_trip(E, tmp_path):
    op = quantize(E.at_mu(0.25), BasisSpec(1, 7, epsilon=0.5))
    path = tmp_path / "m.bin"
    dump_matrix(op, path)
    raw = path.read_bytes()
    assert struct.unpack_from("<qqqd", raw) == (16, 1, 7, 0.5)
    assert len(raw) == 32 + 16 * 16 * 16
    m, meta = load_matrix(path)
    np.testing.assert_array_equal(m, op.matrix)
    assert meta == {"dim": 16, "dof": 1, "n_max": 7, "epsilon": 0.5}
