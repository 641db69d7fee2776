from __future__ import annotations
import json
from fractions import Fraction

import helicoid
from helicoid import main
from stopping import SparseCertificate


def test_run_then_report(tmp_path, capsys):
    assert main(['run', '--suite', 'SPARSE', '--trials', '3', '--j', '4', '--out', str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert 'Saved results to' in out
    assert (tmp_path / 'sparse.csv').exists()
    assert main(['report', '--out', str(tmp_path)]) == 0
    csv = capsys.readouterr().out
    assert csv.splitlines()[0] == 'trial_id,lhs,rhs,ratio,witness_refs'
    assert len(csv.splitlines()) == 4
    assert main(['report', '--format', 'json', '--out', str(tmp_path)]) == 0
    rows = json.loads(capsys.readouterr().out)
    assert [r['trial_id'] for r in rows] == [0, 1, 2]


def test_run_default_config(tmp_path):
    assert main(['run', '--suite', 'SPARSE', '--trials', '2', '--out', str(tmp_path)]) == 0


def test_report_without_a_run(tmp_path, capsys):
    assert main(['report', '--out', str(tmp_path / 'empty')]) == 2
    assert 'no prior run' in capsys.readouterr().err


def test_malformed_config(tmp_path, capsys):
    path = tmp_path / 'cfg.json'
    path.write_text('{"j": ', encoding='utf-8')
    assert main(['run', '--config', str(path), '--out', str(tmp_path)]) == 2
    assert 'config error' in capsys.readouterr().err


def test_bad_overrides_and_flags(tmp_path):
    assert main(['run', '--j', '2', '--out', str(tmp_path)]) == 2
    assert main(['run', '--bogus']) == 2
    assert main([]) == 2


def test_gen_tiles(tmp_path, capsys):
    assert main(['gen-tiles', '--j', '4']) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc['kind'] == 'rank1' and len(doc['tiles']) == 12
    out = tmp_path / 'multi.json'
    assert main(['gen-tiles', '--j', '4', '--multi', '--out', str(out)]) == 0
    assert len(json.loads(out.read_text(encoding='utf-8'))['tiles']) == 4
    assert main(['gen-tiles', '--j', '4', '--scales', '3']) == 2


def test_sparse_vvst_and_verify(capsys):
    assert main(['sparse', '--j', '4', '--trial', '1']) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc['certificate']['ok'] and doc['sparse_form'] > 0
    assert main(['vvst', '--j', '4']) == 0
    gens = json.loads(capsys.readouterr().out)
    assert gens['carleson_constant'] >= 1
    assert main(['verify', '--j', '4', '--trials', '2']) == 0
    assert capsys.readouterr().out.count('ok=True') == 2


def test_failed_verification_exits_one(monkeypatch, capsys):
    monkeypatch.setattr(helicoid, 'verify_sparse', lambda S: SparseCertificate(False, Fraction(0), 0.0, 'forced'))
    assert main(['verify', '--j', '4', '--trials', '1']) == 1
    assert 'check failed' in capsys.readouterr().err
