"""Config-driven runner for experiment suites across grid depths."""
from __future__ import annotations
import json
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence

from harness import STABILITY_BAR, ExperimentConfig, TrialReport, run_stability, run_suite

DEFAULT_CONFIG_PATH = Path(__file__).resolve().parent / 'data' / 'default_config.json'


class SuiteRunner:
    """Run suites from one base config.

    Usage:
        runner = SuiteRunner.from_file('scripts/data/default_config.json')
        runner.run('FS', j=6, trials=100)
        runner.stability('SPARSE', js=(5, 6, 7))

    run returns the TrialReport; stability returns a dict with the per-depth table and the
    25% verdict.
    """

    def __init__(self, config: ExperimentConfig, threads: Optional[int] = None):
        self.config = config
        self.threads = threads

    @staticmethod
    def load_config_file(path: Any = DEFAULT_CONFIG_PATH) -> Dict[str, Any]:
        with open(path, 'r', encoding='utf-8') as f:
            return json.load(f)

    @classmethod
    def from_file(cls, path: Any = DEFAULT_CONFIG_PATH, threads: Optional[int] = None) -> 'SuiteRunner':
        return cls(ExperimentConfig.from_dict(cls.load_config_file(path)), threads)

    def config_for(self, suite: str, **changes: Any) -> ExperimentConfig:
        return self.config.with_overrides(suite=suite.upper(), **changes)

    def run(self, suite: str, **changes: Any) -> TrialReport:
        return run_suite(self.config_for(suite, **changes), self.threads)

    def stability(self, suite: str, js: Sequence[int] = (5, 6, 7), bar: float = STABILITY_BAR,
                  **changes: Any) -> Dict[str, Any]:
        out = run_stability(self.config_for(suite, **changes), js, self.threads, bar)
        return {'suite': out.suite, 'stable': out.stable, 'table': out.table}

    def run_all(self, suites: Iterable[str], out_dir: Any, **changes: Any) -> List[Dict[str, Any]]:
        """Run each suite, write its CSV into ``out_dir`` and collect the summaries."""
        rows = []
        for suite in suites:
            report = self.run(suite, **changes)
            path = report.write(Path(out_dir) / suite.lower())
            rows.append({**report.summary(), 'csv': str(path)})
        return rows


if __name__ == '__main__':
    # Quick smoke run on the bundled config
    runner = SuiteRunner.from_file()
    report = runner.run('SPARSE', trials=5)
    print(report.summary())
