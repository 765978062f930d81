import math

import numpy as np
import pytest
from scipy import integrate, stats

from scbandits import action_sets as geom
from scbandits import perturbations as pert
from scbandits.rng import make_rng

# ---------------------------------------------------------------------------
# hypercube marginal law
# ---------------------------------------------------------------------------

def test_marginal_density_values():
    assert pert.density_hypercube_marginal(0.0) == 0.25
    assert math.isclose(pert.density_hypercube_marginal(1.0),
                        (math.sqrt(2) - 1) / (2 * math.sqrt(2)), rel_tol=1e-15)
    # raw formula agreement away from zero
    for t in (0.3, -2.0, 17.0):
        raw = (math.sqrt(1 + t * t) - 1) / (2 * t * t * math.sqrt(1 + t * t))
        assert math.isclose(pert.density_hypercube_marginal(t), raw, rel_tol=1e-14)


def test_marginal_density_tail_power():
    # f(t) * t^2 -> 1/2 in the tails
    for t in (1e3, 1e6, -1e6):
        assert math.isclose(pert.density_hypercube_marginal(t) * t * t, 0.5, rel_tol=1e-3)


def test_marginal_density_is_even():
    ts = np.linspace(0.0, 50.0, 1001)
    assert np.array_equal(pert.density_hypercube_marginal(ts),
                          pert.density_hypercube_marginal(-ts))


def test_marginal_normalization_quadrature():
    total, err = integrate.quad(pert.density_hypercube_marginal, -np.inf, np.inf, limit=200)
    assert abs(total - 1.0) <= 1e-8
    assert err < 1e-8


def test_cdf_is_antiderivative_of_density():
    for t in (-5.0, -0.7, 0.0, 0.4, 3.0):
        num, _ = integrate.quad(pert.density_hypercube_marginal, -np.inf, t, limit=200)
        assert math.isclose(pert.cdf_hypercube_marginal(t), num, abs_tol=1e-9, rel_tol=0)


def test_inverse_cdf_examples():
    assert pert.inverse_cdf_hypercube(0.5) == 0.0
    assert math.isclose(pert.inverse_cdf_hypercube(0.25), -4.0 / 3.0, rel_tol=0, abs_tol=1e-12)
    assert math.isclose(pert.inverse_cdf_hypercube(0.75), 4.0 / 3.0, rel_tol=0, abs_tol=1e-12)


def test_inverse_cdf_roundtrip():
    grid = np.linspace(1e-6, 1.0 - 1e-6, 1000)
    back = pert.cdf_hypercube_marginal(pert.inverse_cdf_hypercube(grid))
    assert np.max(np.abs(back - grid)) <= 1e-12


def test_inverse_cdf_domain_errors():
    for bad in (0.0, 1.0, -0.1, 1.1):
        with pytest.raises(ValueError):
            pert.inverse_cdf_hypercube(bad)


def test_heavy_tail_truncated_moment_growth():
    # the truncated first moment grows like ln M: no finite first moment
    values = {}
    for m_cut in (1e2, 1e4, 1e6):
        val, _ = integrate.quad(lambda t: 2.0 * t * pert.density_hypercube_marginal(t),
                                0.0, m_cut, limit=400)
        values[m_cut] = val
        assert val >= 0.5 * math.log(m_cut)
    growth = values[1e6] - values[1e2]
    assert math.isclose(growth, math.log(1e6 / 1e2), rel_tol=0.12)


# ---------------------------------------------------------------------------
# hypercube sampling
# ---------------------------------------------------------------------------

def test_sample_hypercube_pinned_fixture():
    draw = pert.sample_hypercube(geom.hypercube(2), make_rng(2024))
    assert np.allclose(draw, [1.3689629576361675, 0.678707262094362], rtol=0, atol=1e-15)


def test_sample_hypercube_statistics():
    rng = make_rng(31)
    draws = pert.sample_hypercube(geom.hypercube(2), rng, size=10**5)
    assert draws.shape == (10**5, 2)
    # symmetric median
    med = np.median(draws, axis=0)
    assert np.all(np.abs(med) < 0.02)
    # tail probability against the quadrature of the density
    tail_oracle, _ = integrate.quad(pert.density_hypercube_marginal, 10.0, np.inf, limit=200)
    emp = np.mean(np.abs(draws) > 10.0)
    assert abs(emp - 2.0 * tail_oracle) < 0.002


def test_sample_hypercube_kind_check():
    with pytest.raises(ValueError):
        pert.sample_hypercube(geom.ball(2), make_rng(0))


# ---------------------------------------------------------------------------
# ball density
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("d", [1, 2, 3, 8])
def test_ball_density_normalizes(d):
    surface = math.exp(pert.log_sphere_surface(d - 1))

    def radial_mass(r):
        return surface * pert.radial_profile_ball(r, d) * r ** (d - 1)

    head, _ = integrate.quad(radial_mass, 0.0, 30.0, limit=300)
    tail, _ = integrate.quad(radial_mass, 30.0, np.inf, limit=300)
    assert abs(head + tail - 1.0) <= 1e-6


def test_ball_density_rotation_invariant():
    rng = make_rng(32)
    d = 3
    x = rng.standard_normal(d)
    q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    assert math.isclose(pert.density_ball(x), pert.density_ball(q @ x), rel_tol=1e-9)


def test_ball_density_d1_matches_hypercube_marginal():
    # in one dimension the ball is the segment [-1, 1]: same perturbation law
    for t in (0.2, 1.0, 7.0):
        assert math.isclose(pert.density_ball(np.array([t])),
                            pert.density_hypercube_marginal(t), rel_tol=1e-10)


@pytest.mark.parametrize("d", [1, 2, 3, 8])
def test_radial_closed_forms_match_quadrature(d):
    # the incomplete-beta radial density/CDF used by the sampler against the
    # direct quadrature route
    surface = math.exp(pert.log_sphere_surface(d - 1))
    for r in (0.05, 0.4, 1.3, 6.0, 40.0):
        by_quad = surface * pert.radial_profile_ball(r, d) * r ** (d - 1)
        assert math.isclose(pert.radial_density_ball(r, d), by_quad, rel_tol=1e-9)
    for r in (0.3, 2.0, 12.0):
        mass, _ = integrate.quad(
            lambda s: surface * pert.radial_profile_ball(s, d) * s ** (d - 1),
            0.0, r, limit=300)
        assert math.isclose(pert.radial_cdf_ball(r, d), mass, abs_tol=1e-8)


# ---------------------------------------------------------------------------
# radial table
# ---------------------------------------------------------------------------

def test_radial_table_invariants():
    table = pert.RadialTable.build(3)
    assert table.node_count == pert.RADIAL_TABLE_NODES
    assert np.all(np.diff(table.cdf) > 0.0)
    assert table.cdf[-1] >= 1.0 - 1e-6
    assert table.nodes[0] == 0.0 and table.cdf[0] == 0.0


def test_radial_table_coverage_guard():
    with pytest.raises(ValueError):
        pert.RadialTable.build(3, s_max=100.0)  # tail mass ~1e-2, far above budget


def test_radial_table_inverse_accuracy():
    table = pert.RadialTable.build(3)
    us = np.linspace(1e-6, 1.0 - 2e-6, 2001)
    ss = table.inverse(us)
    assert np.all(np.diff(ss) >= 0.0)
    back = pert.radial_cdf_ball(ss, 3)
    assert np.max(np.abs(back - us)) < 1e-9


def test_radial_table_scalar_matches_batch():
    table = pert.RadialTable.build(2)
    rng = make_rng(33)
    us = rng.random(200) * (1 - 2e-9) + 1e-9
    batch = table.inverse(us)
    for u, s in zip(us, batch):
        assert table.inverse_scalar(float(u)) == s


def test_radial_table_save_load_roundtrip(tmp_path):
    table = pert.RadialTable.build(2, s_max=4.0e6, node_count=512)
    path = tmp_path / "radial.bin"
    table.save(path)
    loaded = pert.RadialTable.load(path)
    assert loaded.d == 2 and loaded.s_max == 4.0e6 and loaded.node_count == 512
    assert np.array_equal(loaded.nodes, table.nodes)
    assert np.array_equal(loaded.cdf, table.cdf)
    with pytest.raises(ValueError):
        pert.RadialTable.load(__file__)  # not a cache file


def test_sampler_uses_table_cache(tmp_path):
    path = tmp_path / "cache.bin"
    first = pert.PerturbationSampler.for_set(geom.ball(2), cache_path=path)
    assert path.exists()
    second = pert.PerturbationSampler.for_set(geom.ball(2), cache_path=path)
    assert np.array_equal(first.radial_table.cdf, second.radial_table.cdf)
    # wrong dimension in the cache triggers a rebuild rather than misuse
    third = pert.PerturbationSampler.for_set(geom.ball(3), cache_path=path)
    assert third.radial_table.d == 3


def test_table_cache_hits_with_trimmed_grid(tmp_path):
    # at large d the stored table is shorter than the requested node count;
    # the cache key must still recognize it
    path = tmp_path / "big.bin"
    first = pert.PerturbationSampler.for_set(geom.ball(64), cache_path=path)
    assert first.radial_table.node_count < pert.RADIAL_TABLE_NODES
    mtime = path.stat().st_mtime_ns
    second = pert.PerturbationSampler.for_set(geom.ball(64), cache_path=path)
    assert path.stat().st_mtime_ns == mtime  # not rewritten: the cache hit
    assert np.array_equal(first.radial_table.nodes, second.radial_table.nodes)


# ---------------------------------------------------------------------------
# ball sampling
# ---------------------------------------------------------------------------

def test_sample_ball_pinned_fixture():
    sampler = pert.PerturbationSampler.for_set(geom.ball(3))
    draw = pert.sample_ball(sampler, make_rng(2024))
    assert np.allclose(draw, [0.8692093440869205, 0.7354293450870318, -1.5691266782732827],
                       rtol=0, atol=1e-15)


def test_sample_ball_requires_table():
    bare = pert.PerturbationSampler(action_set=geom.ball(2))
    with pytest.raises(ValueError):
        pert.sample_ball(bare, make_rng(0))
    cube_sampler = pert.PerturbationSampler.for_set(geom.hypercube(2))
    with pytest.raises(ValueError):
        pert.sample_ball(cube_sampler, make_rng(0))


def test_sample_ball_radial_ks():
    d = 3
    sampler = pert.PerturbationSampler.for_set(geom.ball(d))
    draws = sampler.draw(make_rng(34), size=10**5)
    speeds = np.linalg.norm(draws, axis=1)
    # reference CDF from quadrature of the radial profile (independent of the
    # incomplete-beta route used by the sampler)
    surface = math.exp(pert.log_sphere_surface(d - 1))
    grid = np.geomspace(1e-3, speeds.max() * 1.01, 600)
    masses = np.empty_like(grid)
    acc, lo = 0.0, 0.0
    for i, hi in enumerate(grid):
        chunk, _ = integrate.quad(
            lambda s: surface * pert.radial_profile_ball(s, d) * s ** (d - 1),
            lo, hi, limit=200)
        acc += chunk
        masses[i] = acc
        lo = hi
    ks = stats.kstest(speeds, lambda s: np.interp(s, grid, masses)).statistic
    assert ks <= 0.01


def test_sample_ball_direction_symmetry():
    sampler = pert.PerturbationSampler.for_set(geom.ball(3))
    draws = sampler.draw(make_rng(35), size=10**5)
    directions = draws / np.linalg.norm(draws, axis=1, keepdims=True)
    se = directions.std(axis=0) / math.sqrt(draws.shape[0])
    assert np.all(np.abs(directions.mean(axis=0)) <= 3.0 * se)


# ---------------------------------------------------------------------------
# replication identity
# ---------------------------------------------------------------------------

def test_replication_hypercube_symmetric():
    aset = geom.hypercube(3)
    sampler = pert.PerturbationSampler.for_set(aset)
    report = pert.verify_replication(aset, sampler, np.zeros(3), 10**5, make_rng(36))
    assert np.all(np.abs(report.mc_mean) <= 3.0 * report.stderr)
    assert np.array_equal(report.target, np.zeros(3))


def test_replication_hypercube_closed_form():
    aset = geom.hypercube(2)
    sampler = pert.PerturbationSampler.for_set(aset)
    theta = np.array([1.0, -2.0])
    report = pert.verify_replication(aset, sampler, theta, 4 * 10**5, make_rng(37))
    expected = np.array([math.sqrt(2.0) - 1.0, -(math.sqrt(5.0) - 1.0) / 2.0])
    assert np.allclose(report.target, expected, atol=1e-12)
    assert report.max_sigma <= 4.0


def test_replication_ball_closed_form():
    aset = geom.ball(3)
    sampler = pert.PerturbationSampler.for_set(aset)
    theta = np.array([1.0, 0.0, 0.0])
    report = pert.verify_replication(aset, sampler, theta, 4 * 10**5, make_rng(38))
    assert np.allclose(report.target, [math.sqrt(2.0) - 1.0, 0.0, 0.0], atol=1e-12)
    assert report.max_sigma <= 4.0


def test_replication_detects_perturbed_distribution():
    # scaling the draws by 1% is a different distribution; the check must fail
    aset = geom.hypercube(1)
    sampler = pert.PerturbationSampler.for_set(aset)
    report = pert.verify_replication(aset, sampler, np.array([1.3]), 6 * 10**6,
                                     make_rng(39), xi_scale=1.01)
    assert report.max_sigma > 4.0


def test_replication_sample_floor():
    aset = geom.hypercube(1)
    sampler = pert.PerturbationSampler.for_set(aset)
    with pytest.raises(ValueError):
        pert.verify_replication(aset, sampler, np.zeros(1), 10, make_rng(0))


# ---------------------------------------------------------------------------
# determinism
# ---------------------------------------------------------------------------

def test_draws_are_reproducible():
    aset = geom.ball(4)
    sampler = pert.PerturbationSampler.for_set(aset)
    a = sampler.draw(make_rng(77), size=50)
    b = sampler.draw(make_rng(77), size=50)
    assert np.array_equal(a, b)
    cube = geom.hypercube(4)
    a = pert.sample_hypercube(cube, make_rng(78), size=50)
    b = pert.sample_hypercube(cube, make_rng(78), size=50)
    assert np.array_equal(a, b)
