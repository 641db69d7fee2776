"""Stability sweep: the max ratio of several suites across grid depths, saved as CSV."""
from __future__ import annotations
import os

import pandas as pd

from scripts.suite_runner import SuiteRunner

ARTIFACTS = os.path.abspath('artifacts')

SWEEPS = [
    ('SPARSE', {}),
    ('FS', {}),
    ('VVST_PACKING', {}),
    ('VARC', {}),
]


def main(save_csv: str | None = None, js=(5, 6, 7), trials: int = 100):
    os.makedirs(ARTIFACTS, exist_ok=True)
    runner = SuiteRunner.from_file()

    frames = []
    for suite, changes in SWEEPS:
        res = runner.stability(suite, js=js, trials=trials, **changes)
        table = res['table'].assign(suite=suite, stable=res['stable'])
        frames.append(table)
        print(f"{suite}: {'stable' if res['stable'] else 'UNSTABLE'} "
              f"(max ratios {', '.join(f'{x:.4g}' for x in table['max_ratio'])})")

    results = pd.concat(frames, ignore_index=True)
    columns = ['suite', 'j', 'rows', 'max_ratio', 'median_ratio', 'growth', 'stable']
    csv_path = save_csv or os.path.join(ARTIFACTS, 'stability_sweep.csv')
    results[columns].to_csv(csv_path, index=False, float_format='%.17g')

    print('Saved results to', csv_path)
    return csv_path


if __name__ == '__main__':
    main()
