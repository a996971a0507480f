import math

import pytest

from conftest import FIXTURES
from qscan.console import main, process_command_line
from qscan.threshold import asymptotic_rate, theoretical_bound

CONFIG = str(FIXTURES / 'scan_config.toml')
DATA = ['--geno', str(FIXTURES / 'scan_geno.tsv'), '--pheno', str(FIXTURES / 'scan_pheno.tsv')]


def test_bound(capsys):
    assert main(['bound', '--p', '20000']) == 0
    lines = dict(line.split('\t') for line in capsys.readouterr().out.splitlines())
    assert math.isclose(float(lines['theoretical_bound']), theoretical_bound(20000, 40, 200, 0.05), rel_tol=1e-9)
    assert math.isclose(float(lines['asymptotic_rate']), asymptotic_rate(20000), rel_tol=1e-9)


def test_bound_domain_error(capsys):
    assert main(['bound', '--p', '100']) == 1
    assert capsys.readouterr().err.startswith('error: ValueError:')


def test_window_range_is_usage_error():
    with pytest.raises(SystemExit) as info:
        process_command_line(['scan', '--lmin', '50', '--lmax', '40'] + DATA)
    assert info.value.code == 2
    with pytest.raises(SystemExit):
        process_command_line(['bound', '--p', '1000', '--lmin', '300'])


def test_arguments_map_to_scenario_fields():
    args = process_command_line(['scan', '--config', CONFIG, '--lmax', '30', '--covar-cols', 'age,sex',
                                 '--mc-reps', '200', '--format', 'tsv'] + DATA)
    assert args.l_max == 30 and args.l_min is None
    assert args.mc_reps == 200
    assert args.geno_format == 'tsv'
    assert args.covar_cols == 'age,sex'
    assert args.exact is None and args.emit_windows is None


def test_scan_outputs_identical_across_threads(tmp_path, capsys):
    outputs = []
    for threads in ('1', '2'):
        prefix = tmp_path / f't{threads}'
        code = main(['scan', '--config', CONFIG, '--threads', threads, '--out-prefix', str(prefix),
                     '--emit-windows'] + DATA)
        assert code == 0
        outputs.append([(tmp_path / f't{threads}.{kind}').read_bytes()
                        for kind in ('regions.tsv', 'report.json', 'windows.tsv.gz')])
    assert outputs[0] == outputs[1]
    out = capsys.readouterr().out
    assert 'No signal region detected' in out or 'rank' in out


def test_threshold_command(tmp_path, capsys):
    prefix = tmp_path / 'thr'
    assert main(['threshold', '--config', CONFIG, '--mc-reps', '40', '--out-prefix', str(prefix)] + DATA) == 0
    h = float(capsys.readouterr().out.strip())
    qmax = [float(x) for x in (tmp_path / 'thr.qmax.txt').read_text().split()]
    assert len(qmax) == 40
    assert h == pytest.approx(qmax[37], rel=1e-9)
    assert (tmp_path / 'thr.threshold.json').exists()


def test_missing_file(tmp_path, capsys):
    code = main(['scan', '--config', CONFIG, '--geno', str(tmp_path / 'nope.tsv'),
                 '--pheno', str(FIXTURES / 'scan_pheno.tsv')])
    assert code == 1
    err = capsys.readouterr().err
    assert err.startswith('error: FileNotFoundError:')
    assert len(err.strip().splitlines()) == 1


def test_malformed_dosage(tmp_path, capsys):
    bad = tmp_path / 'bad.tsv'
    bad.write_text('S1 S2\nchr1 100 v1 0 7\n', encoding='utf-8')
    code = main(['scan', '--config', CONFIG, '--geno', str(bad), '--pheno', str(FIXTURES / 'scan_pheno.tsv')])
    assert code == 1
    err = capsys.readouterr().err
    assert err.startswith('error: ParseError:')
    assert 'bad.tsv:2' in err


def test_invalid_config_value(capsys):
    assert main(['scan', '--config', CONFIG, '--mc-reps', '5'] + DATA) == 1
    assert capsys.readouterr().err.startswith('error: ValidationError:')


def test_simulate_fwer(tmp_path, capsys):
    prefix = tmp_path / 'fwer'
    code = main(['simulate-fwer', '--config', str(FIXTURES / 'fwer_small.toml'), '--reps', '2',
                 '--out-prefix', str(prefix)])
    assert code == 0
    summary = (tmp_path / 'fwer.summary.tsv').read_text().splitlines()
    assert summary[0].split('\t')[:3] == ['method', 'alpha', 'n']
    assert len(summary) == 3
    assert len((tmp_path / 'fwer.replicates.tsv').read_text().splitlines()) == 1 + 2 * 2
    assert 'fwer' in capsys.readouterr().out
