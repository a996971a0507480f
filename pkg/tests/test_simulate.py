import logging
import math

import numpy as np
import pytest
from pydantic import ValidationError

from conftest import FIXTURES, random_genotypes
from qscan.errors import PlacementError
from qscan.null_model import CovariateMatrix, Family, PhenotypeVector, fit_null
from qscan.scores import compute_scores
from qscan.simulate import (CALIBRATION_ROUNDS, LdGenotypeModel, SignalSpec, allele_correlation,
                            binomial_interval, consistency_experiment, create_consistency_config, create_fwer_config,
                            create_power_config, default_effect_c, draw_mafs, expected_scores, fwer_experiment,
                            latent_correlation, max_allele_correlation, plant_signals, power_experiment,
                            simulate_binary, simulate_continuous, simulate_genotypes, simulate_haplotype_pool)


def test_draw_mafs_in_range():
    mafs = draw_mafs(5000, 0.001, 0.05, np.random.default_rng(0))
    assert mafs.min() >= 0.001 and mafs.max() <= 0.05
    # log-uniform: median near the geometric mean
    assert abs(np.log(np.median(mafs)) - 0.5 * (np.log(0.001) + np.log(0.05))) < 0.1


def test_allele_correlation_limits():
    f = np.array([0.1, 0.02])
    np.testing.assert_allclose(max_allele_correlation(f, f), 1.0)
    assert max_allele_correlation(np.array([0.01]), np.array([0.04]))[0] < 0.5
    np.testing.assert_allclose(allele_correlation(f, f, np.zeros(2)), 0.0, atol=1e-12)

    target = np.array([0.3, 0.2])
    rho = latent_correlation(np.array([0.2, 0.05]), np.array([0.3, 0.04]), target)
    np.testing.assert_allclose(allele_correlation(np.array([0.2, 0.05]), np.array([0.3, 0.04]), rho),
                               target, atol=1e-6)
    assert np.all(rho > target)


def test_simulate_genotypes_deterministic():
    model = LdGenotypeModel(maf_max=0.05, seed=7)
    a = simulate_genotypes(300, 500, model)
    b = simulate_genotypes(300, 500, model)
    np.testing.assert_array_equal(a.dosages, b.dosages)
    np.testing.assert_array_equal(a.positions, b.positions)
    assert set(np.unique(a.dosages)) <= {0.0, 1.0, 2.0}
    assert np.all(np.diff(a.positions) > 0)

    c = simulate_genotypes(300, 500, LdGenotypeModel(maf_max=0.05, seed=8))
    assert not np.array_equal(a.dosages, c.dosages)


def test_ld_within_blocks_only():
    model = LdGenotypeModel(maf_min=0.1, maf_max=0.4, ld_rho=0.5, block_len=20, seed=3)
    geno = simulate_genotypes(2000, 40, model)
    corr = np.corrcoef(geno.dosages, rowvar=False)
    lag1 = np.array([corr[j - 1, j] for j in range(1, 40)])
    within = np.delete(lag1, 19)
    assert within.mean() > 0.25
    assert abs(lag1[19]) < 0.1


def test_haplotype_pool_defaults():
    pool = simulate_haplotype_pool(100, LdGenotypeModel(seed=1), 50)
    assert pool.size == 200
    assert pool.p == 100
    assert pool.freqs.min() >= 0.01 - 1e-12
    assert np.all(pool.latent_rho[::100] == 0.0)
    with pytest.raises(ValidationError):
        LdGenotypeModel(maf_min=0.2, maf_max=0.1)


def test_equal_maf_pool_reaches_ld_rho():
    model = LdGenotypeModel(maf_min=0.05, maf_max=0.05, ld_rho=0.5, block_len=200, n_haplotypes=20000, seed=12)
    pool = simulate_haplotype_pool(200, model, 100)
    linked = pool.target_ld > 0
    assert linked.sum() == 199
    np.testing.assert_allclose(pool.target_ld[linked], 0.5)
    assert abs(np.nanmean(pool.realized_ld()[linked]) - 0.5) < 0.05
    assert np.isnan(pool.realized_ld()[0])


def test_unlinked_pool_has_no_lag1_correlation():
    model = LdGenotypeModel(maf_min=0.05, maf_max=0.05, ld_rho=0.0, n_haplotypes=20000, seed=13)
    pool = simulate_haplotype_pool(150, model, 100)
    assert np.all(pool.target_ld == 0.0)
    assert abs(np.nanmean(pool.realized_ld())) < 0.02


def test_unreachable_ld_is_capped_and_reported(caplog):
    model = LdGenotypeModel(maf_min=0.01, maf_max=0.05, ld_rho=0.9, block_len=50, n_haplotypes=20000, seed=14)
    with caplog.at_level(logging.INFO, logger='qscan.simulate'):
        pool = simulate_haplotype_pool(100, model, 100)
    assert 'unreachable' in caplog.text
    linked = pool.target_ld > 0
    assert pool.target_ld.max() <= 0.9 and pool.target_ld[linked].min() < 0.9
    # realized correlation tracks the capped target, not ld_rho
    assert abs(np.nanmean(pool.realized_ld()[linked] - pool.target_ld[linked])) < 0.05


def test_plant_signals():
    geno = random_genotypes(100, 600, seed=4)
    spec = SignalSpec(n_regions=2, region_len_range=(50, 80), sparsity_xi=0.5, effect_c=0.3, min_gap=201)
    planted = plant_signals(geno, spec, 12)

    (s1, e1), (s2, e2) = planted.regions
    assert 50 <= e1 - s1 + 1 <= 80 and 50 <= e2 - s2 + 1 <= 80
    assert s2 - e1 - 1 >= 201
    for (start, end), idx in zip(planted.regions, planted.causal):
        assert len(idx) == spec.n_causal(end - start + 1)
        assert np.all((idx >= start) & (idx <= end))
    maf = np.clip(geno.maf, 1 / 200, 0.5)
    np.testing.assert_allclose(planted.causal_effects, np.abs(0.3 * np.log10(maf[planted.causal_indices])))
    assert np.count_nonzero(planted.beta) == len(planted.causal_indices)

    again = plant_signals(geno, spec, 12)
    assert again.regions == planted.regions
    np.testing.assert_array_equal(planted.scaled(2.0).causal_effects, 2.0 * planted.causal_effects)


def test_sign_mix_and_sparsity():
    spec = SignalSpec(sparsity_xi=0.5)
    assert spec.n_causal(64) == 8
    assert SignalSpec(sparsity_xi=2 / 3).n_causal(64) == 16
    assert SignalSpec(sparsity_xi=1.0).n_causal(60) == 60
    assert default_effect_c(0.5) == 0.30
    assert default_effect_c(2 / 3) == 0.185

    geno = random_genotypes(100, 300, seed=5)
    planted = plant_signals(geno, SignalSpec(n_regions=1, sparsity_xi=1.0, sign_mix=0.0, min_gap=0), 1)
    assert np.all(planted.causal_effects < 0)


def test_placement_error():
    geno = random_genotypes(50, 100, seed=6)
    with pytest.raises(PlacementError):
        plant_signals(geno, SignalSpec(n_regions=2, region_len_range=(50, 50), min_gap=10), 0)


def test_simulate_continuous():
    geno = random_genotypes(500, 20, seed=7)
    pheno, covar = simulate_continuous(geno, [], [], 3)
    again, _ = simulate_continuous(geno, [], [], 3)
    np.testing.assert_array_equal(pheno.values, again.values)
    assert covar.column_names == ['intercept', 'x1', 'x2']
    assert pheno.family == Family.GAUSSIAN

    shifted, _ = simulate_continuous(geno, [4], [1.5], 3)
    np.testing.assert_allclose(shifted.values - pheno.values, 1.5 * geno.dosages[:, 4])


def test_simulate_binary_case_control():
    pool = simulate_haplotype_pool(50, LdGenotypeModel(maf_max=0.2, seed=2), 200)
    geno, pheno, covar = simulate_binary(pool, [3], [0.5], 100, 150, 9)
    assert geno.n == 250 and geno.p == 50
    np.testing.assert_array_equal(pheno.values[:100], 1.0)
    np.testing.assert_array_equal(pheno.values[100:], 0.0)
    assert covar.values.shape == (250, 3)

    source = random_genotypes(400, 30, seed=3)
    geno, pheno, _ = simulate_binary(source, [], [], 20, 30, 4)
    assert geno.p == 30 and pheno.values.sum() == 20

    with pytest.raises(ValueError):
        simulate_binary(source, [], [], 0, 30, 4)


def test_binomial_interval():
    lo, hi = binomial_interval(0.05, 1000)
    assert math.isclose(lo, 0.0365, abs_tol=5e-4) and math.isclose(hi, 0.0635, abs_tol=5e-4)
    lo, hi = binomial_interval(0.01, 1000)
    assert math.isclose(lo, 0.0038, abs_tol=5e-4) and math.isclose(hi, 0.0162, abs_tol=5e-4)


def test_experiment_config_validation():
    cfg = create_fwer_config(config_path=FIXTURES / 'fwer_small.toml', n_reps=3)
    assert cfg.n_reps == 3 and cfg.p == 300 and cfg.block_len == 50
    with pytest.raises(ValidationError):
        create_fwer_config(config_path=FIXTURES / 'fwer_small.toml', mc_reps=10)
    with pytest.raises(ValidationError):
        create_fwer_config(config_path=FIXTURES / 'fwer_small.toml', l_max=400)
    with pytest.raises(ValidationError):
        create_power_config(config_path=FIXTURES / 'power_small.toml', xis=[0.0])


def test_fwer_experiment_small():
    cfg = create_fwer_config(config_path=FIXTURES / 'fwer_small.toml')
    summary, replicates = fwer_experiment(cfg, n_jobs=1)
    assert len(replicates) == 4 * 2
    assert list(summary['method']) == ['qscan', 'mscan']
    assert (summary['n_reps'] == 4).all()
    assert summary['fwer'].between(0, 1).all()
    assert (replicates['rejected'] == (replicates['qmax'] > replicates['h'])).all()

    threaded, _ = fwer_experiment(cfg, n_jobs=2)
    np.testing.assert_array_equal(threaded['fwer'], summary['fwer'])


def test_power_experiment_small():
    cfg = create_power_config(config_path=FIXTURES / 'power_small.toml')
    summary, replicates = power_experiment(cfg)
    assert len(replicates) == 2 * 2
    assert set(summary.columns) >= {'method', 'xi', 'sign_mix', 'n', 'detection_rate', 'jaccard', 'noncentrality'}
    qscan = summary[summary['method'] == 'qscan'].iloc[0]
    assert qscan['detection_rate'] >= 0.5
    assert 0 < qscan['jaccard'] <= 1
    assert (replicates['noncentrality'] > 0).all()


def test_consistency_experiment_small():
    cfg = create_consistency_config(config_path=FIXTURES / 'consistency_small.toml')
    summary, replicates = consistency_experiment(cfg)
    assert len(replicates) == 2
    assert (replicates['strength'] > 0).all()
    # 2.5 sqrt(log p) with a few hundred scanned variants
    assert replicates['strength_target'].between(2.5 * math.sqrt(math.log(100)), 2.5 * math.sqrt(math.log(600))).all()
    # planted effects are rescaled until the realized strength reaches its target
    assert (replicates['strength'] >= replicates['strength_target']).all()
    assert replicates['strength_reached'].all()
    assert replicates['calibration_rounds'].between(1, CALIBRATION_ROUNDS).all()
    assert summary.loc[0, 'strength_reached_fraction'] == 1.0
    assert 0 <= summary.loc[0, 'consistent_fraction'] <= 1
    assert summary.loc[0, 'region_len'] == 20


def test_expected_scores_match_noiseless_phenotype():
    geno = random_genotypes(80, 12, seed=4)
    rng = np.random.default_rng(4)
    effect = geno.dosages[:, :3] @ np.array([0.5, -0.3, 0.2]) + rng.standard_normal(80) * 0.1
    model = fit_null(PhenotypeVector(values=effect), CovariateMatrix.intercept_only(80))
    np.testing.assert_allclose(expected_scores(geno, model, effect), compute_scores(geno, model), atol=1e-10)
    # A shift shared by every sample is absorbed by the intercept
    np.testing.assert_allclose(expected_scores(geno, model, np.full(80, 2.0)), 0.0, atol=1e-10)


@pytest.mark.slow
def test_fwer_controlled_at_alpha():
    cfg = create_fwer_config(config_path=FIXTURES / 'fwer_calibration.toml')
    summary, _ = fwer_experiment(cfg, n_jobs=4)
    for _, row in summary.iterrows():
        low, high = binomial_interval(row['alpha'], int(row['n_reps']), level=0.999)
        assert low <= row['fwer'] <= high, row['method']


@pytest.mark.slow
def test_qscan_outperforms_mscan_with_mixed_signs():
    cfg = create_power_config(config_path=FIXTURES / 'power_signs.toml')
    summary, replicates = power_experiment(cfg, n_jobs=4)
    by_method = summary.set_index('method')
    assert by_method.loc['qscan', 'jaccard'] > by_method.loc['mscan', 'jaccard']
    assert by_method.loc['qscan', 'detection_rate'] >= by_method.loc['mscan', 'detection_rate']

    paired = replicates.pivot(index='replicate', columns='method', values='jaccard')
    assert (paired['qscan'] >= paired['mscan']).mean() > 0.5


@pytest.mark.slow
def test_strong_region_detected_accurately():
    cfg = create_consistency_config(config_path=FIXTURES / 'consistency_accuracy.toml')
    summary, replicates = consistency_experiment(cfg, n_jobs=4)
    assert replicates['strength_reached'].all()
    assert summary.loc[0, 'consistent_fraction'] >= 0.9
    assert (replicates['jaccard'] >= 0.8).mean() >= 0.9
