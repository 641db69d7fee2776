from __future__ import annotations
import json
import math
from fractions import Fraction

import numpy as np
import pytest

import harness
from harness import (BHT, FS, MOCK_INTERP, NONSUBADD, SPARSE, SPARSE_LQ, SUITES, VARC, CheckFailed, ConfigError,
                     ExperimentConfig, TrialReport, check_admissible, default_config, load_config,
                     mock_interp_growth, parallel_map, random_signal, restricted, run_stability, run_suite,
                     thread_count)
from grid import GridSpec
from sizes import SizeReport
from stopping import SparseCertificate


def test_default_config_round_trips():
    cfg = default_config()
    assert cfg.j == 5 and cfg.suite == SPARSE and cfg.r_tuples == ((4.0, 4.0, 2.0),)
    again = ExperimentConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert again == cfg
    wide = default_config(p=['inf', 4, 2])
    assert math.isinf(wide.p[0])
    assert wide.to_dict()['p'][0] == 'inf'


@pytest.mark.parametrize('changes', [
    {'j': 2},
    {'j': 13},
    {'j': 4.0},
    {'trials': True},
    {'backend': 'HAAR'},
    {'suite': 'NOPE'},
    {'theta': [0.5, 0.5, 0.5]},
    {'s': [0.5, 2, 2]},
    {'q': 0},
    {'r_tuples': [[4, 4, 3]]},
    {'r_tuples': [[4, 4, 2], [4, 4, 2], [4, 4, 2]]},
    {'threshold_c': 1},
    {'outer_q': 2},
    {'var_r': 2},
    {'policy': 'SLOW'},
    {'colour': 'blue'},
])
def test_bad_configs_raise(changes):
    with pytest.raises(ConfigError):
        default_config(**changes)


def test_missing_keys_and_malformed_files(tmp_path):
    data = dict(harness.DEFAULT_CONFIG)
    del data['seed']
    with pytest.raises(ConfigError, match='seed'):
        ExperimentConfig.from_dict(data)
    bad = tmp_path / 'bad.json'
    bad.write_text('{"j": 5,', encoding='utf-8')
    with pytest.raises(ConfigError):
        load_config(bad)
    with pytest.raises(ConfigError):
        load_config(tmp_path / 'missing.json')
    good = tmp_path / 'good.json'
    good.write_text(json.dumps(harness.DEFAULT_CONFIG), encoding='utf-8')
    assert load_config(good) == default_config()
    assert issubclass(ConfigError, ValueError)


def test_local_l2_exponents_are_admissible():
    verdict = check_admissible((2, 2, 2))
    assert verdict.feasible and verdict.m == (0.0, 0.0, 0.0)
    assert all(math.isclose(t, 1 / 3) for t in verdict.theta)
    verdict = check_admissible((4, 4, 2), [(4, 4, 2)])
    assert verdict.feasible


def test_admissibility_with_r_tuples():
    verdict = check_admissible((4, 4, 2), [(1.5, 3, 1)])
    assert verdict.feasible
    assert math.isclose(verdict.m[0], 1 / 3)
    np.testing.assert_allclose(verdict.theta, (5 / 9, 2 / 9, 2 / 9))


def test_p1_equal_one_is_infeasible():
    verdict = check_admissible((1, 2, 2))
    assert not verdict.feasible
    assert verdict.m[0] == 1.0
    assert 'slot 1' in verdict.reason
    assert not check_admissible((1.5, 1.5, 1.5)).feasible


def test_closed_form_matches_theta_grid_search():
    rng = np.random.default_rng(50)
    steps = np.arange(0, 101) / 100
    t1, t2 = np.meshgrid(steps, steps, indexing='ij')
    t3 = 1 - t1 - t2
    keep = t3 >= -1e-12
    grid = np.stack([t1[keep], t2[keep], np.clip(t3[keep], 0, None)], axis=1)
    for _ in range(200):
        a = rng.uniform(0.05, 0.95, size=3)
        verdict = check_admissible((1 / a[0], 1 / a[1], 1 / (1 - a[2])))
        lower = 2 * a - 1
        found = bool(np.any(np.all((grid > lower) & (grid < 1), axis=1)))
        if found:
            assert verdict.feasible
        if verdict.feasible:
            theta = np.array(verdict.theta)
            assert math.isclose(theta.sum(), 1.0)
            assert np.all(theta > lower) and np.all(theta < 1)
            if 1 - sum(verdict.m) > 0.05:
                assert found


def test_fs_and_varc_modes():
    assert check_admissible((2, 2, 1), mode=FS).feasible
    rejected = check_admissible((1.2, 1.2, 1), mode=FS)
    assert not rejected.feasible and 'not below' in rejected.reason
    assert not check_admissible((1, 2, 1), mode=FS).feasible
    assert check_admissible((4,), [(4, 4, 2)], VARC).feasible
    assert not check_admissible((2,), [], VARC).feasible
    assert not check_admissible((4,), [(2.4, 2.4, 1.2)], VARC).feasible
    with pytest.raises(ValueError):
        check_admissible((2, 2))
    with pytest.raises(ValueError):
        check_admissible((2, 2, 2), mode='NOPE')
    with pytest.raises(ValueError):
        check_admissible((2, 2, 2), [(4, 4, 3)], BHT)


def test_input_generators():
    g = GridSpec(5)
    rng = np.random.default_rng(51)
    for kind in harness.INPUT_KINDS:
        f = random_signal(g, rng, kind)
        assert f.shape == (32,) and np.any(f != 0)
    f, E = restricted(g, rng)
    assert set(np.unique(E)) <= {0.0, 1.0}
    np.testing.assert_allclose(np.abs(f), E)
    with pytest.raises(ValueError):
        random_signal(g, rng, 'noise')


def test_zero_trials_give_an_empty_report():
    report = run_suite(default_config(trials=0))
    assert len(report) == 0
    assert report.summary()['max_ratio'] == 0 and report.summary()['median_ratio'] == 0
    assert report.to_csv() == 'trial_id,lhs,rhs,ratio,witness_refs\n'


def test_same_seed_gives_identical_reports():
    cfg = default_config(j=4, trials=4)
    one = run_suite(cfg, threads=1)
    two = run_suite(cfg, threads=2)
    assert one.to_csv() == two.to_csv()
    assert one.to_json() == two.to_json()
    other = run_suite(cfg.with_overrides(seed=1), threads=1)
    assert other.to_csv() != one.to_csv()


@pytest.mark.parametrize('suite', SUITES)
def test_every_suite_runs_on_a_small_grid(suite):
    report = run_suite(default_config(j=4, trials=2, suite=suite))
    assert len(report) >= 2
    assert list(report.rows.columns) == harness.COLUMNS
    ratios = report.rows['ratio'].astype(float)
    assert not ratios.isna().any() and (ratios >= 0).all()
    for refs in report.rows['witness_refs']:
        assert 'check' in json.loads(refs)


@pytest.mark.parametrize('suite', [SPARSE, SPARSE_LQ, NONSUBADD, FS])
def test_dominated_suites_have_finite_ratios(suite):
    report = run_suite(default_config(j=5, trials=4, suite=suite))
    assert math.isfinite(report.max_ratio)


def test_suite_prechecks():
    with pytest.raises(ConfigError, match='NONSUBADD'):
        run_suite(default_config(suite=SPARSE_LQ, q=2.0))
    with pytest.raises(ConfigError):
        run_suite(default_config(suite=FS, s=[1.2, 1.2, 2]))
    with pytest.raises(ConfigError):
        run_suite(default_config(suite=SPARSE, p=[1, 2, 2]))
    with pytest.raises(ConfigError):
        run_suite(default_config(suite=NONSUBADD, r_tuples=[]))
    with pytest.raises(ConfigError):
        run_suite(default_config(suite=VARC, var_r=3, r_tuples=[[2.4, 2.4, 1.2]]))


def test_failed_certificate_raises(monkeypatch):
    monkeypatch.setattr(harness, 'verify_sparse', lambda S: SparseCertificate(False, Fraction(0), 0.0, 'forced'))
    with pytest.raises(CheckFailed, match='forced'):
        run_suite(default_config(j=4, trials=1))


def test_mock_interpolation_needs_epsilon():
    flat = mock_interp_growth((1, 2, 4, 8), epsilon=0.0)
    assert list(flat['layers']) == [1, 2, 4, 8]
    np.testing.assert_allclose(flat['lhs'], [1, 2, 4, 8])
    assert flat['ratio'].iloc[-1] >= 4 * flat['ratio'].iloc[0]
    assert flat['ratio'].is_monotonic_increasing
    lossy = mock_interp_growth((1, 2, 4, 8), epsilon=0.5)
    assert (lossy['ratio'] <= 2).all()
    with pytest.raises(ValueError):
        mock_interp_growth((9,))


def test_mock_interp_run_records_growth():
    report = run_suite(default_config(j=4, trials=1, suite=MOCK_INTERP))
    table = report.notes['epsilon_zero_growth']
    assert [r['layers'] for r in table] == [1, 2, 4, 8]


def test_size_energy_run_matches_exhaustive_energy():
    report = run_suite(default_config(j=4, trials=3, suite=harness.GEN_SIZE_ENERGY))
    assert len(report) == 3
    refs = [json.loads(r) for r in report.rows['witness_refs']]
    assert all(len(r['energies']) == 3 for r in refs)


def test_energy_disagreement_raises(monkeypatch):
    monkeypatch.setattr(harness, 'energy_j_exhaustive', lambda *a, **k: SizeReport(1e6, None, 'EXHAUSTIVE'))
    with pytest.raises(CheckFailed, match='differs from the exhaustive'):
        run_suite(default_config(j=4, trials=1, suite=harness.GEN_SIZE_ENERGY))


def test_local_energy_checked_on_every_interval(monkeypatch):
    report = run_suite(default_config(j=5, trials=2, suite=harness.LOCAL_P0))
    ratios = [json.loads(r)['energy_ratio'] for r in report.rows['witness_refs']]
    assert all(0 <= x <= 1 for x in ratios)
    monkeypatch.setattr(harness, 'energy_j', lambda *a, **k: SizeReport(1e6, None, 'GREEDY'))
    with pytest.raises(CheckFailed, match='localized energy'):
        run_suite(default_config(j=5, trials=1, suite=harness.LOCAL_P0))


def test_density_above_average_raises(monkeypatch):
    monkeypatch.setattr(harness, 'size_m', lambda *a, **k: 1e6)
    with pytest.raises(CheckFailed, match='density size'):
        run_suite(default_config(j=4, trials=1, suite=VARC))


def test_greedy_cover_must_equal_exact(monkeypatch):
    monkeypatch.setattr(harness, 'mu', lambda space, subset, method: 2.0 if method == harness.GREEDY else 1.0)
    with pytest.raises(CheckFailed, match='greedy cover'):
        run_suite(default_config(j=4, trials=1, suite=harness.OUTER))


def test_report_write_and_load(tmp_path):
    report = run_suite(default_config(j=4, trials=2))
    csv_path = report.write(tmp_path)
    assert csv_path.name == 'sparse.csv'
    assert csv_path.read_text(encoding='utf-8') == report.to_csv()
    loaded = TrialReport.load(tmp_path)
    assert loaded.suite == SPARSE
    assert loaded.to_csv() == report.to_csv()
    with pytest.raises(ConfigError):
        TrialReport.load(tmp_path / 'nothing')


def test_stability_table():
    out = run_stability(default_config(suite=FS, trials=2), js=(4, 5))
    assert list(out.table['j']) == [4, 5]
    assert math.isnan(out.table['growth'].iloc[0])
    assert isinstance(out.stable, bool)
    assert out.to_json()['suite'] == FS
    with pytest.raises(ValueError):
        run_stability(default_config(), js=())


def test_thread_count_and_parallel_map(monkeypatch):
    monkeypatch.setenv(harness.THREADS_ENV, '1')
    assert thread_count(8) == 1
    monkeypatch.setenv(harness.THREADS_ENV, '0')
    assert thread_count() == 1
    monkeypatch.setenv(harness.THREADS_ENV, 'many')
    assert thread_count() >= 1
    monkeypatch.setenv(harness.THREADS_ENV, '3')
    assert parallel_map(lambda x: x * x, range(10)) == [x * x for x in range(10)]
    assert parallel_map(str, [], threads=2) == []
