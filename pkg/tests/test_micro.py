import itertools
import warnings

import numpy as np
import pytest
from numpy.testing import assert_allclose

from dmpk.errors import ContractError, DomainError, EvanescentModeError, ResourceError
from dmpk.linalg import (
    pseudo_unitarity_defect,
    reconstruct,
    time_reversal_defect,
    transmission_spectrum,
)
from dmpk.micro import (
    Distribution,
    LayerDisorder,
    WireGeometry,
    accumulate_Z,
    accumulate_Z_batch,
    build_R,
    channel_basis,
    chaoticity,
    dispersion_energy,
    entry_labels,
    evolve_A,
    evolve_A_batch,
    exceptional_pairs,
    kinetic_operators,
    layer_count,
    layer_transfer,
    minus_perm,
    phase_exceptional,
    position_transfer,
    predicted_variance,
    sample_potential,
    scaling_ratio,
    solve_dispersion,
    z_layer,
)
from dmpk.streams import STREAM_DISORDER, trajectory_rng

GEOMETRIES = [
    WireGeometry(1, 0.0, 0.05, 0.05, 1.0),
    WireGeometry(1, 0.5, 0.1, 0.2, -0.7),
    WireGeometry(2, np.pi / 8, 0.05, 0.05, 1.0),
    WireGeometry(2, 0.0, 0.1, 0.07, 0.6),
    WireGeometry(3, 0.3, 0.08, 0.12, -1.1),
    WireGeometry(3, 0.0, 0.05, 0.1, 0.9),
    WireGeometry(4, 0.2, 0.06, 0.04, 1.3),
    WireGeometry(4, 0.0, 0.03, 0.09, -0.5),
]
ids = [f"N{g.n}-g{g.gamma:.2f}-E{g.energy}" for g in GEOMETRIES]


# -- geometry and disorder -------------------------------------------------------------

@pytest.mark.parametrize("kw", [
    dict(n=2, gamma=0.0, h1=0.3, h2=0.3, energy=1.0),          # |E| + 2h1 + 2h2 >= 2
    dict(n=2, gamma=0.0, h1=0.1, h2=0.1, energy=0.0),          # E = 0
    dict(n=2, gamma=np.pi / 2, h1=0.1, h2=0.1, energy=1.0),    # gamma >= pi/N
    dict(n=2, gamma=0.0, h1=0.0, h2=0.1, energy=1.0),          # h = 0
    dict(n=0, gamma=0.0, h1=0.1, h2=0.1, energy=1.0),
])
def test_geometry_validation(kw):
    with pytest.raises(DomainError):
        WireGeometry(**kw)


@pytest.mark.parametrize("dist", list(Distribution))
def test_potential_moments(dist):
    v = sample_potential(dist, 1_000_000, np.random.default_rng(1))
    se = v.std() / 1000
    assert abs(v.mean()) <= 4 * se
    v2 = v**2
    assert abs(v2.mean() - 1) <= 4 * v2.std() / 1000 + 1e-12
    d = LayerDisorder.sample(3, np.random.default_rng(2), dist)
    assert d.v.shape == (3,) and d.distribution is dist


# -- dispersion --------------------------------------------------------------------------

@pytest.mark.parametrize("geom", GEOMETRIES, ids=ids)
def test_dispersion_residuals_and_labels(geom):
    d = solve_dispersion(geom)
    nu = np.arange(geom.n)
    for k in (d.k_plus, d.k_minus):
        assert np.abs(dispersion_energy(geom, k, nu) - geom.energy).max() <= 1e-12
    assert np.all(d.v_plus > 0) and np.all(d.v_minus < 0)
    # velocity is the derivative of the dispersion
    eps = 1e-6
    num = (dispersion_energy(geom, d.k_plus + eps, nu)
           - dispersion_energy(geom, d.k_plus - eps, nu)) / (2 * eps)
    assert_allclose(num, d.v_plus, rtol=1e-7)
    if geom.time_reversal:
        assert np.abs(d.k_plus + d.k_minus[minus_perm(geom.n)]).max() <= 1e-12
        assert_allclose(np.abs(d.v_minus), np.abs(d.v_plus)[minus_perm(geom.n)], rtol=1e-12)


def test_dispersion_one_channel_example():
    d = solve_dispersion(WireGeometry(1, 0.0, 1e-6, 1e-6, 1.0))
    assert_allclose(d.k_plus, [-np.pi / 3], atol=1e-5)
    assert_allclose(d.k_minus, [np.pi / 3], atol=1e-5)
    assert_allclose(d.v_plus, [np.sqrt(3)], rtol=1e-5)


def test_dispersion_errors():
    geom = WireGeometry(1, 0.0, 0.1, 0.1, 1.0)
    object.__setattr__(geom, "energy", 2.5)
    with pytest.raises(EvanescentModeError):
        solve_dispersion(geom)
    object.__setattr__(geom, "energy", 0.0)
    with pytest.raises(DomainError):
        solve_dispersion(geom)


# -- chaoticity --------------------------------------------------------------------------

def brute_force_chaoticity(geom):
    """Exhaustive enumeration over (sign, branch, channel)^4 with explicit pairings."""
    d = solve_dispersion(geom)
    n = geom.n
    k = {(1, nu): d.k_plus[nu] for nu in range(n)}
    k.update({(-1, nu): d.k_minus[nu] for nu in range(n)})
    terms = [(w, s, nu) for w in (1, -1) for s in (1, -1) for nu in range(n)]

    def pair_cancels(a, b):
        (wa, sa, na), (wb, sb, nb) = a, b
        if wa == -wb and sa == sb and na == nb:
            return True
        return geom.gamma == 0 and wa == wb and sb == -sa and nb == (-na) % n

    best = np.inf
    for q in itertools.product(terms, repeat=4):
        pairings = [((0, 1), (2, 3)), ((0, 2), (1, 3)), ((0, 3), (1, 2))]
        if any(pair_cancels(q[a], q[b]) and pair_cancels(q[c], q[e])
               for (a, b), (c, e) in pairings):
            continue
        total = sum(w * k[(s, nu)] for w, s, nu in q)
        r = np.mod(total, 2 * np.pi)
        best = min(best, r, 2 * np.pi - r)
    return best


@pytest.mark.parametrize("geom", GEOMETRIES, ids=ids)
def test_chaoticity_matches_brute_force(geom):
    assert chaoticity(geom) == pytest.approx(brute_force_chaoticity(geom), abs=1e-13)
    assert chaoticity(geom) > 0


def test_chaoticity_one_channel_finite():
    # 4 k^+ does not cancel trivially, so the minimum is finite
    geom = WireGeometry(1, 0.0, 1e-3, 1e-3, 1.0)
    cha = chaoticity(geom)
    assert np.isfinite(cha)
    kp = solve_dispersion(geom).k_plus[0]
    assert cha <= abs(np.mod(4 * kp + np.pi, 2 * np.pi) - np.pi) + 1e-15


def test_chaoticity_warns_when_small():
    geom = WireGeometry(2, np.pi / 8, 0.05, 0.05, 1.0)
    cha = solve_dispersion(geom).cha
    with pytest.warns(RuntimeWarning, match="vanishes"):
        assert chaoticity(geom, warn_below=2 * cha) == cha
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        chaoticity(geom)


# -- channel basis and layers ---------------------------------------------------------------

@pytest.mark.parametrize("geom", GEOMETRIES, ids=ids)
def test_channel_basis_diagonalizes_kinetic_transfer(geom):
    k, m0 = channel_basis(geom)
    t0 = position_transfer(geom, np.zeros(geom.n), 0.0)
    assert np.abs(np.linalg.solve(k, t0 @ k) - m0).max() <= 1e-10
    assert pseudo_unitarity_defect(m0) <= 1e-14
    assert_allclose(transmission_spectrum(m0).t, 1.0, rtol=1e-14)
    if geom.time_reversal:
        assert time_reversal_defect(m0) <= 1e-12
    else:
        assert time_reversal_defect(m0) > 1e-3


def test_kinetic_operators_hermitian():
    geom = GEOMETRIES[4]
    h, p = kinetic_operators(geom)
    assert_allclose(h, h.conj().T)
    assert not np.allclose(p, p.conj().T)


@pytest.mark.parametrize("geom", GEOMETRIES, ids=ids)
def test_layer_transfer_invariants(geom):
    rng = np.random.default_rng(3)
    basis = channel_basis(geom)
    assert np.abs(layer_transfer(geom, np.zeros(geom.n), 0.3, basis) - basis[1]).max() <= 1e-10
    for lam in (0.0, 0.05, 0.5):
        dis = LayerDisorder.sample(geom.n, rng)
        t = layer_transfer(geom, dis, lam, basis)
        assert pseudo_unitarity_defect(t) <= 1e-10
        if geom.time_reversal:
            assert time_reversal_defect(t) <= 1e-10
    with pytest.raises(ContractError):
        layer_transfer(geom, np.zeros(geom.n), -0.1)


@pytest.mark.parametrize("geom", GEOMETRIES, ids=ids)
def test_build_R_against_definition(geom):
    rng = np.random.default_rng(4)
    k, m0 = channel_basis(geom)
    lam = 0.01
    v = rng.standard_normal(geom.n)
    t = np.linalg.solve(k, position_transfer(geom, v, lam) @ k)
    r_def = (t - m0) @ np.linalg.inv(m0) / lam
    assert np.abs(build_R(geom, LayerDisorder(v)) - r_def).max() <= 1e-9


@pytest.mark.parametrize("geom", GEOMETRIES, ids=ids)
def test_build_R_block_symmetries(geom):
    n = geom.n
    r = build_R(geom, LayerDisorder.sample(n, np.random.default_rng(5)))
    rpp, rpm, rmp, rmm = r[:n, :n], r[:n, n:], r[n:, :n], r[n:, n:]
    assert np.abs(rpp.conj().T + rpp).max() <= 1e-12
    assert np.abs(rmm.conj().T + rmm).max() <= 1e-12
    assert np.abs(rmp.conj().T - rpm).max() <= 1e-12
    if geom.time_reversal:
        assert np.abs(rmm - rpp.conj()).max() <= 1e-12
        assert np.abs(rmp - rpm.conj()).max() <= 1e-12
    assert np.array_equal(build_R(geom, np.zeros(n)), np.zeros((2 * n, 2 * n)))


def test_build_R_diagonal_is_mean_potential():
    geom = WireGeometry(3, 0.2, 1e-6, 1e-6, 1.0)
    v = np.array([0.3, -1.2, 2.0])
    r = build_R(geom, v)
    speed = np.abs(solve_dispersion(geom).v_plus)
    assert_allclose(1j * np.diag(r[:3, :3]) * speed, v.mean(), rtol=1e-10)


def test_z_layer_definition():
    geom = GEOMETRIES[2]
    _, m0 = channel_basis(geom)
    v = np.array([0.4, -0.9])
    x = 7
    mx = np.linalg.matrix_power(m0, x)
    ref = np.linalg.inv(mx) @ build_R(geom, v) @ mx
    assert_allclose(z_layer(geom, v, x), ref, atol=1e-13)


# -- A^lambda and Z^lambda --------------------------------------------------------------------

def test_evolve_A_matches_plain_layer_product():
    geom = GEOMETRIES[2]
    lam, s = 0.2, 0.4
    count = layer_count(lam, s)
    path = evolve_A_batch(geom, lam, [s], [3], seed=11, reorth_period=4)
    a = reconstruct(path.factored[0])[0]
    gen = trajectory_rng(11, STREAM_DISORDER, 3)
    v = gen.standard_normal((count, geom.n))
    basis = channel_basis(geom)
    m = np.eye(4, dtype=complex)
    for x in range(count):
        m = layer_transfer(geom, v[x], lam, basis) @ m
    ref = np.linalg.inv(np.linalg.matrix_power(basis[1], count)) @ m
    assert_allclose(a, ref, atol=1e-11 * np.abs(ref).max())
    assert_allclose(transmission_spectrum(path.factored[0]).t[0], transmission_spectrum(m).t,
                    rtol=1e-10)


def test_evolve_A_lambda_zero_is_identity():
    s, path = evolve_A(GEOMETRIES[3], 0.0, 2.0, seed=1, n_grid=5)
    for f in path:
        assert np.array_equal(reconstruct(f), np.eye(4))


def test_evolve_A_batch_consistency():
    geom = GEOMETRIES[4]
    full = evolve_A_batch(geom, 0.2, [0.2, 0.5], range(5), seed=2)
    one = evolve_A_batch(geom, 0.2, [0.2, 0.5], [3], seed=2)
    for j in range(2):
        assert_allclose(reconstruct(full.factored[j])[3], reconstruct(one.factored[j])[0],
                        rtol=1e-13, atol=1e-13)
    s, path = evolve_A(geom, 0.2, 0.5, seed=2, n_grid=3, index=3)
    assert_allclose(s, [0, 0.25, 0.5])
    assert_allclose(reconstruct(path[-1]), reconstruct(one.factored[1])[0], atol=1e-13)


def test_evolve_A_mean_is_identity():
    geom = GEOMETRIES[2]
    m = 10_000
    path = evolve_A_batch(geom, 0.2, [0.5], range(m), seed=3)
    a = reconstruct(path.factored[0])
    eye = np.eye(4)
    for part in (np.real, np.imag):
        x = part(a)
        se = x.std(axis=0) / np.sqrt(m)
        assert np.all(np.abs(x.mean(axis=0) - part(eye)) <= 4 * se + 1e-12)


@pytest.mark.parametrize("geom", [GEOMETRIES[2], GEOMETRIES[7]], ids=["N2", "N4-tr"])
def test_evolve_A_group_defects(geom):
    s, path = evolve_A(geom, 0.05, 2.0, seed=4, n_grid=9)
    for f in path:
        a = reconstruct(f)
        assert pseudo_unitarity_defect(a) <= 1e-6
        if geom.time_reversal:
            assert time_reversal_defect(a) <= 1e-10
        assert_allclose(transmission_spectrum(f).t, transmission_spectrum(a).t, rtol=1e-8)


def test_layer_count_and_guard():
    assert layer_count(0.1, 1.0) == 100
    assert layer_count(0.02, 1.0) == 2500
    with pytest.raises(ResourceError):
        layer_count(1e-3, 1000.0)
    with pytest.raises(ContractError):
        layer_count(0.6, 1.0)
    with pytest.raises(ResourceError):
        evolve_A(GEOMETRIES[2], 0.01, 1.0, seed=0, max_layers=100)


def test_accumulate_Z_matches_explicit_sum():
    geom = GEOMETRIES[3]
    lam, s = 0.1, 0.5
    count = layer_count(lam, s)
    gen = trajectory_rng(5, STREAM_DISORDER, 2)
    v = gen.standard_normal((count, geom.n))
    ref = lam * sum(z_layer(geom, v[x - 1], x) for x in range(1, count + 1))
    assert_allclose(accumulate_Z(geom, lam, s, seed=5, index=2), ref, atol=1e-12)
    batch = accumulate_Z_batch(geom, lam, s, [0, 2], seed=5, chunk=7)
    assert_allclose(batch[1], ref, atol=1e-12)
    assert np.array_equal(accumulate_Z(geom, 0.0, s, seed=5), np.zeros((4, 4)))


@pytest.mark.parametrize("dist", list(Distribution))
def test_disorder_stream_chunk_invariant(dist):
    geom = GEOMETRIES[2]
    a = accumulate_Z_batch(geom, 0.1, 1.0, [0, 1], seed=6, distribution=dist, chunk=7)
    b = accumulate_Z_batch(geom, 0.1, 1.0, [0, 1], seed=6, distribution=dist, chunk=100)
    assert_allclose(a, b, atol=1e-12)


def test_Z_mean_zero():
    geom = GEOMETRIES[2]
    z = accumulate_Z_batch(geom, 0.1, 1.0, range(4000), seed=7).reshape(4000, -1)
    for part in (z.real, z.imag):
        se = part.std(axis=0) / np.sqrt(4000)
        assert np.all(np.abs(part.mean(axis=0)) <= 4 * se + 1e-15)


# -- second-moment structure ------------------------------------------------------------------

def test_entry_labels():
    assert entry_labels(3) == [(1, 0), (1, 1), (1, 2), (-1, 0), (-1, 2), (-1, 1)]


@pytest.mark.parametrize("geom", GEOMETRIES, ids=ids)
def test_exceptional_pairs_structure(geom):
    exc = exceptional_pairs(geom)
    dim = 2 * geom.n
    assert exc.shape == (dim * dim, dim * dim)
    assert np.array_equal(exc, exc.T) and not exc.diagonal().any()
    # a-diagonal entries all share one phase-free component
    diag = [a * dim + a for a in range(geom.n)]
    for a in diag:
        for b in diag:
            if a != b:
                assert exc[a, b]
    zz, zc = phase_exceptional(geom.n, geom.time_reversal)
    assert np.all(zc.diagonal())


def test_predicted_variance_velocity_form():
    geom = GEOMETRIES[2]
    d = solve_dispersion(geom)
    p = predicted_variance(geom, 2.0)
    assert_allclose(p[0, 1], 2.0 / (2 * d.v_plus[0] * d.v_plus[1]))
    assert_allclose(p[0, 3], 2.0 / (2 * d.v_plus[0] * d.v_plus[1]))   # slot 1 of (-) is -1 = 1


def test_scaling_ratio():
    geom = GEOMETRIES[2]
    assert scaling_ratio(geom, 0.02) == pytest.approx(4e-4 / chaoticity(geom))
