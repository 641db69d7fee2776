from __future__ import annotations

import pandas as pd

from harness import default_config
from scripts import stability_sweep
from scripts.suite_runner import SuiteRunner


def test_bundled_config_matches_the_default():
    runner = SuiteRunner.from_file()
    assert runner.config == default_config()
    assert runner.config_for('fs').suite == 'FS'


def test_run_and_stability():
    runner = SuiteRunner.from_file(threads=1)
    report = runner.run('FS', j=4, trials=3)
    assert list(report.rows['trial_id']) == [0, 1, 2]
    res = runner.stability('SPARSE', js=(4, 5), trials=2)
    assert list(res['table']['j']) == [4, 5]
    assert isinstance(res['stable'], bool)


def test_run_all_writes_one_csv_per_suite(tmp_path):
    runner = SuiteRunner.from_file()
    rows = runner.run_all(['SPARSE', 'FS'], tmp_path, j=4, trials=2)
    assert [r['suite'] for r in rows] == ['SPARSE', 'FS']
    assert (tmp_path / 'sparse' / 'sparse.csv').exists()
    assert (tmp_path / 'fs' / 'fs.csv').exists()


def test_stability_sweep_writes_csv(tmp_path):
    path = stability_sweep.main(save_csv=str(tmp_path / 'sweep.csv'), js=(4,), trials=1)
    table = pd.read_csv(path)
    assert list(table.columns) == ['suite', 'j', 'rows', 'max_ratio', 'median_ratio', 'growth', 'stable']
    assert list(table['suite']) == [s for s, _ in stability_sweep.SWEEPS]
