import gzip
import json
import logging
import tempfile
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import FIXTURES, random_genotypes
from qscan.errors import (FormatError, NoVariantsError, OrderingError, ParseError, QScanError,
                          SingularDesignError)
from qscan.io import (load_dataset, parse_dosage_tsv, parse_pheno_covar, parse_vcf_subset, write_qmax,
                      write_regions_tsv, write_report_json, write_vcf_subset, write_windows_tsv)
from qscan.null_model import fit_null
from qscan.region_detect import detect_regions
from qscan.scan_engine import ScanConfig, scan_windows
from qscan.scores import GenotypeMatrix


def write_lines(path: Path, lines) -> Path:
    path.write_text('\n'.join(lines) + '\n', encoding='utf-8')
    return path


# Dosage table

def test_dosage_example(tmp_path):
    path = write_lines(tmp_path / 'g.tsv', ['S1 S2', 'chr1 100 v1 0 2'])
    geno = parse_dosage_tsv(path)
    assert geno.dosages.shape == (2, 1)
    np.testing.assert_allclose(geno.maf, [0.5])
    assert geno.sample_ids == ['S1', 'S2']
    assert geno.variant_ids == ['v1']


def test_dosage_header_with_labels(tmp_path):
    path = write_lines(tmp_path / 'g.tsv', ['chrom\tpos\tid\tA\tB\tC', '1\t5\tx\t0\t1\t2', '1\t9\ty\t1\t1\t0.5'])
    geno = parse_dosage_tsv(path)
    assert geno.sample_ids == ['A', 'B', 'C']
    np.testing.assert_array_equal(geno.positions, [5, 9])
    np.testing.assert_allclose(geno.dosages[:, 1], [1, 1, 0.5])


def test_missing_dosage_imputed(tmp_path):
    ids = [f'S{i}' for i in range(10)]
    path = write_lines(tmp_path / 'g.tsv', [' '.join(ids), '1 100 v1 ' + ' '.join(['0', '1', 'NA'] + ['1'] * 7)])
    geno = parse_dosage_tsv(path)
    assert geno.dosages[2, 0] == pytest.approx(8 / 9)

    path = write_lines(tmp_path / 'four.tsv', ['A B C D', '1 100 v1 0 1 1 NA'])
    assert parse_dosage_tsv(path).dosages[3, 0] == pytest.approx(2 / 3)

    path = write_lines(tmp_path / 'none.tsv', ['A B', '1 100 v1 NA NA', '1 200 v2 1 0'])
    assert parse_dosage_tsv(path).variant_ids == ['v2']


def test_high_missingness_dropped(tmp_path, caplog):
    ids = [f'S{i}' for i in range(10)]
    rows = ['1 100 v1 ' + ' '.join(['NA', 'NA'] + ['1'] * 8),
            '1 200 v2 ' + ' '.join(['0', '1'] * 5)]
    path = write_lines(tmp_path / 'g.tsv', [' '.join(ids)] + rows)
    with caplog.at_level(logging.WARNING):
        geno = parse_dosage_tsv(path)
    assert geno.variant_ids == ['v2']
    assert 'dropped' in caplog.text


def test_ordering_error_reports_line(tmp_path):
    path = write_lines(tmp_path / 'g.tsv', ['A B', '1 100 v1 0 1', '1 100 v2 1 1'])
    with pytest.raises(OrderingError) as info:
        parse_dosage_tsv(path)
    assert info.value.line == 3

    path = write_lines(tmp_path / 'h.tsv', ['A B', '1 100 v1 0 1', '2 50 v2 1 1', '1 300 v3 1 0'])
    with pytest.raises(OrderingError, match='more than one block'):
        parse_dosage_tsv(path)


@pytest.mark.parametrize('row', ['1 100 v1 0', '1 100 v1 0 1 2', '1 100 v1 0 2.5', '1 100 v1 0 x',
                                 '1 -5 v1 0 1', '1 1e3 v1 0 1'])
def test_malformed_rows(tmp_path, row):
    path = write_lines(tmp_path / 'g.tsv', ['A B', '1 50 v0 1 1', row])
    with pytest.raises(ParseError) as info:
        parse_dosage_tsv(path)
    assert info.value.line == 3


def test_empty_and_gzip(tmp_path):
    empty = tmp_path / 'empty.tsv'
    empty.write_text('', encoding='utf-8')
    with pytest.raises(ParseError):
        parse_dosage_tsv(empty)
    with pytest.raises(NoVariantsError):
        parse_dosage_tsv(write_lines(tmp_path / 'header.tsv', ['A B']))

    gz = tmp_path / 'g.tsv.gz'
    with gzip.open(gz, 'wt', encoding='utf-8') as f:
        f.write('A B\n1 100 v1 0 1\n1 200 v2 2 1\n')
    assert parse_dosage_tsv(gz).p == 2


def test_missing_header_is_parse_error(tmp_path):
    path = write_lines(tmp_path / 'g.tsv', ['1 100 v1 0 1 2', '1 200 v2 1 1 0'])
    with pytest.raises(ParseError, match='variant row') as info:
        parse_dosage_tsv(path)
    assert info.value.line == 1


def corrupt_body(payload: bytes, mask: int = 0xA5) -> bytes:
    # The gzip header is 10 bytes; damage only the deflate stream after it
    return payload[:10] + bytes(b ^ mask for b in payload[10:])


def test_corrupt_gzip_body(tmp_path):
    text = (FIXTURES / 'small.vcf').read_bytes()
    for name, parser in (('g.vcf.gz', parse_vcf_subset), ('g.tsv.gz', parse_dosage_tsv)):
        path = tmp_path / name
        path.write_bytes(corrupt_body(gzip.compress(text, mtime=0)))
        with pytest.raises(QScanError):
            parser(path)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 255), st.integers(0, 40))
def test_gzip_fuzz(mask, cut):
    payload = gzip.compress((FIXTURES / 'small.vcf').read_bytes(), mtime=0)
    payload = corrupt_body(payload, mask)
    payload = payload[:len(payload) - cut]
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / 'fuzz.vcf.gz'
        path.write_bytes(payload)
        try:
            parse_vcf_subset(path)
        except QScanError:
            pass


def test_fixture_dosage_table():
    geno = parse_dosage_tsv(FIXTURES / 'scan_geno.tsv')
    assert geno.n == 60 and geno.p == 120
    assert list(np.unique(geno.chrom)) == ['chr1', 'chr2']
    assert geno.positions[0] == 1150


# VCF subset

def test_vcf_fixture(caplog):
    with caplog.at_level(logging.WARNING):
        geno = parse_vcf_subset(FIXTURES / 'small.vcf')
    assert geno.p == 3
    assert geno.variant_ids == ['rs1', '1:400', 'rs5']
    assert geno.sample_ids == ['A', 'B', 'C', 'D']
    np.testing.assert_array_equal(geno.dosages[:, 0], [1, 1, 0, 2])
    # DP:GT order, one missing call imputed
    np.testing.assert_allclose(geno.dosages[:, 1], [0, 1, 1 / 3, 0])
    np.testing.assert_array_equal(geno.dosages[:, 2], [0, 1, 2, 1])
    assert list(geno.chrom) == ['1', '1', '2']
    assert 'multiallelic' in caplog.text and 'symbolic' in caplog.text


def test_vcf_without_header(tmp_path):
    path = write_lines(tmp_path / 'x.vcf', ['##fileformat=VCFv4.2', '1\t100\trs1\tA\tG\t.\tPASS\t.\tGT\t0/1'])
    with pytest.raises(FormatError):
        parse_vcf_subset(path)


def test_vcf_allele_out_of_range(tmp_path):
    header = '#' + '\t'.join(['CHROM', 'POS', 'ID', 'REF', 'ALT', 'QUAL', 'FILTER', 'INFO', 'FORMAT', 'A', 'B'])
    path = write_lines(tmp_path / 'x.vcf', [header, '3\t700\trs9\tA\tG\t.\tPASS\t.\tGT\t0/2\t0/0'])
    with pytest.raises(ParseError, match='3:700') as info:
        parse_vcf_subset(path)
    assert info.value.line == 2


dosage_columns = st.integers(1, 12).flatmap(
    lambda p: st.lists(st.lists(st.sampled_from([0.0, 1.0, 2.0]), min_size=p, max_size=p), min_size=2, max_size=8))


@settings(max_examples=100, deadline=None)
@given(dosage_columns, st.booleans())
def test_vcf_round_trip(rows, compressed):
    dosages = np.array(rows)
    p = dosages.shape[1]
    geno = GenotypeMatrix(dosages=dosages, positions=np.arange(1, p + 1) * 10, chrom=['7'] * p,
                          variant_ids=[f'rs{j}' for j in range(p)])
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / ('out.vcf.gz' if compressed else 'out.vcf')
        write_vcf_subset(path, geno)
        back = parse_vcf_subset(path)
    np.testing.assert_array_equal(back.dosages, dosages)
    np.testing.assert_array_equal(back.positions, geno.positions)
    assert back.variant_ids == geno.variant_ids


token_lines = st.lists(
    st.lists(st.sampled_from(['1', '2', 'chr1', '100', '0', '1.5', '2', 'NA', 'x', '-1', '3', '#', '']),
             min_size=0, max_size=6).map(' '.join),
    min_size=0, max_size=6)


@settings(max_examples=200, deadline=None)
@given(st.one_of(token_lines.map('\n'.join), st.text(max_size=200)))
def test_dosage_parser_fuzz(text):
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / 'fuzz.tsv'
        path.write_bytes(text.encode('utf-8', errors='replace'))
        try:
            geno = parse_dosage_tsv(path)
        except QScanError:
            return
    assert isinstance(geno, GenotypeMatrix)
    assert np.all((geno.dosages >= 0) & (geno.dosages <= 2))


@settings(max_examples=100, deadline=None)
@given(st.binary(max_size=200))
def test_vcf_parser_fuzz_bytes(data):
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / 'fuzz.vcf'
        path.write_bytes(data)
        try:
            geno = parse_vcf_subset(path)
        except QScanError:
            return
    assert isinstance(geno, GenotypeMatrix)


# Phenotype table

def test_pheno_reordered_to_genotypes():
    ids = [f'S{i}' for i in range(1, 61)]
    pheno, covar, order = parse_pheno_covar(FIXTURES / 'scan_pheno.tsv', 'y', ['age', 'sex'], sample_ids=ids)
    assert order == ids
    assert pheno.n == 60
    assert covar.column_names == ['intercept', 'age', 'sex']


def test_pheno_unknown_column_lists_available():
    with pytest.raises(ParseError, match="available columns are \\['y', 'age', 'sex'\\]"):
        parse_pheno_covar(FIXTURES / 'scan_pheno.tsv', 'bmi')


def test_pheno_missing_and_bad_values(tmp_path, caplog):
    path = write_lines(tmp_path / 'p.tsv', ['id\ty\tx', 'a\t1.0\t2', 'b\tNA\t3', 'c\t2.5\t1', 'd\t0.5\t'])
    with caplog.at_level(logging.WARNING):
        pheno, covar, order = parse_pheno_covar(path, 'y', ['x'])
    assert order == ['a', 'c']
    assert 'dropped' in caplog.text

    with pytest.raises(ParseError, match='at least 2'):
        parse_pheno_covar(path, 'y', ['x'], sample_ids=['a', 'zz'])

    bad = write_lines(tmp_path / 'q.tsv', ['id\ty', 'a\t1.0', 'b\thigh'])
    with pytest.raises(ParseError, match='non-numeric'):
        parse_pheno_covar(bad, 'y')


def test_load_dataset_fixture():
    bundle = load_dataset(FIXTURES / 'scan_geno.tsv', FIXTURES / 'scan_pheno.tsv', 'y', ['age', 'sex'])
    assert bundle.sample_ids == [f'S{i}' for i in range(1, 61)]
    assert bundle.genotype.sample_ids == bundle.sample_ids
    assert bundle.covariates.q == 3


def test_constant_covariate_is_singular(tmp_path):
    geno_path = write_lines(tmp_path / 'g.tsv', ['A B C D', '1 10 v1 0 1 2 1', '1 20 v2 1 0 0 1'])
    pheno_path = write_lines(tmp_path / 'p.tsv', ['id\ty\tsite', 'A\t0.1\t3', 'B\t1.2\t3', 'C\t-0.3\t3', 'D\t0.8\t3'])
    bundle = load_dataset(geno_path, pheno_path, 'y', ['site'])
    with pytest.raises(SingularDesignError, match='site'):
        fit_null(bundle.phenotype, bundle.covariates)


# Writers

def test_writers(tmp_path, small_scores):
    scores, _, _ = small_scores
    table = scan_windows(scores, ScanConfig(l_min=5, l_max=10))
    report = detect_regions(table, float(np.quantile(table.stat, 0.99)), scores=scores)

    write_regions_tsv(tmp_path / 'r.tsv', report)
    lines = (tmp_path / 'r.tsv').read_text().splitlines()
    assert lines[0].split('\t') == ['rank', 'chrom', 'start', 'end', 'start_bp', 'end_bp', 'stat']
    assert len(lines) == len(report.regions) + 1

    write_report_json(tmp_path / 'r.json', report, extra={'n_windows': len(table)})
    doc = json.loads((tmp_path / 'r.json').read_text())
    assert doc['n_windows'] == len(table)
    assert doc['method'] == 'qscan'
    assert len(doc['regions']) == len(report.regions)

    write_windows_tsv(tmp_path / 'a.tsv.gz', table, scores)
    write_windows_tsv(tmp_path / 'b.tsv.gz', table, scores)
    assert (tmp_path / 'a.tsv.gz').read_bytes() == (tmp_path / 'b.tsv.gz').read_bytes()

    write_qmax(tmp_path / 'q.txt', np.array([0.5, 1.25, 3.0]))
    assert [float(x) for x in (tmp_path / 'q.txt').read_text().split()] == [0.5, 1.25, 3.0]


def test_score_pipeline_from_vcf(tmp_path):
    geno = random_genotypes(40, 6, seed=2)
    path = tmp_path / 'g.vcf'
    write_vcf_subset(path, geno)
    back = parse_vcf_subset(path)
    assert back.sample_ids == geno.sample_ids
    np.testing.assert_array_equal(back.dosages, geno.dosages)
