"""
The :mod:`qscan.io` module reads genotype dosages, a minimal VCF subset and phenotype/covariate
tables, and writes scan results.

Parsers stream their input line by line and report malformed input with the 1-based line number.
Missing genotypes are mean-imputed per variant. A variant missing in more than 10% of samples is
dropped with a warning, though a single missing call is always imputed.
"""

# Copyright 2024 qscan developers

import gzip
import json
import io
import logging
import zlib
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, model_validator

from qscan.null_model import Family, PhenotypeVector, CovariateMatrix
from qscan.scores import GenotypeMatrix, ScoreSet
from qscan.scan_engine import WindowTable
from qscan.region_detect import ScanReport
from qscan.errors import ParseError, OrderingError, FormatError, NoVariantsError

MISSING = 'NA'
MAX_MISSING_FRACTION = 0.10
MAX_POSITION = 2 ** 63 - 1
VCF_FIXED_COLUMNS = ['CHROM', 'POS', 'ID', 'REF', 'ALT', 'QUAL', 'FILTER', 'INFO', 'FORMAT']

# This should inherit level from root logger
logger = logging.getLogger(__name__)


def _open_text(path: str | Path):
    path = Path(path)
    if path.suffix == '.gz':
        return gzip.open(path, 'rt', encoding='utf-8', newline='')
    return open(path, 'r', encoding='utf-8', newline='')


def _numbered_lines(path: str | Path) -> Iterator[Tuple[int, str]]:
    """(line number, line without newline); undecodable text becomes a ParseError"""
    line_no = 0
    try:
        with _open_text(path) as f:
            for line_no, line in enumerate(f, start=1):
                yield line_no, line.rstrip('\r\n')
    except UnicodeDecodeError as error:
        raise ParseError(f'not valid UTF-8 text: {error.reason}', line=line_no + 1, path=str(path))
    except (gzip.BadGzipFile, EOFError, zlib.error) as error:
        raise FormatError(f'unreadable gzip stream: {error}', path=str(path))


class _VariantCollector:
    """Accumulates variant columns, enforcing order and the missingness policy"""

    def __init__(self, path: str | Path, n: int):
        self.path = str(path)
        self.n = n
        self.columns: List[np.ndarray] = []
        self.positions: List[int] = []
        self.chrom: List[str] = []
        self.ids: List[str] = []
        self.finished_chrom = set()
        self.n_dropped = 0

    def add(self, chrom: str, pos: int, variant_id: str, values: np.ndarray, line_no: int):
        if self.chrom and chrom != self.chrom[-1]:
            self.finished_chrom.add(self.chrom[-1])
            if chrom in self.finished_chrom:
                raise OrderingError(f'chromosome {chrom} appears in more than one block', line=line_no, path=self.path)
        elif self.chrom and pos <= self.positions[-1]:
            raise OrderingError(f'position {pos} on {chrom} does not exceed previous position {self.positions[-1]}',
                                line=line_no, path=self.path)

        missing = np.isnan(values)
        n_missing = int(missing.sum())
        if n_missing > max(1, int(MAX_MISSING_FRACTION * self.n)) or n_missing == self.n:
            logger.warning(f'{self.path}:{line_no}: variant {variant_id} missing in {n_missing} of {self.n} '
                           f'samples; dropped')
            self.n_dropped += 1
            # Keep the coordinate so later rows are still checked against it
            self.chrom.append(chrom)
            self.positions.append(pos)
            self.ids.append(None)
            return
        if n_missing:
            values = np.where(missing, values[~missing].mean(), values)

        self.chrom.append(chrom)
        self.positions.append(pos)
        self.ids.append(variant_id)
        self.columns.append(values)

    def matrix(self, sample_ids: List[str]) -> GenotypeMatrix:
        kept = [i for i, v in enumerate(self.ids) if v is not None]
        if not kept:
            raise NoVariantsError(f'{self.path}: no usable variants')
        if self.n_dropped:
            logger.warning(f'{self.path}: {self.n_dropped} variants dropped for exceeding '
                           f'{MAX_MISSING_FRACTION:.0%} missingness')
        return GenotypeMatrix(dosages=np.column_stack(self.columns),
                              positions=np.array([self.positions[i] for i in kept], dtype=np.int64),
                              chrom=[self.chrom[i] for i in kept],
                              variant_ids=[self.ids[i] for i in kept],
                              sample_ids=sample_ids)


def _parse_position(text: str, line_no: int, path) -> int:
    try:
        pos = int(text)
    except ValueError:
        raise ParseError(f"position '{text}' is not an integer", line=line_no, path=str(path))
    if pos < 0:
        raise ParseError(f'position {pos} is negative', line=line_no, path=str(path))
    if pos > MAX_POSITION:
        raise ParseError(f'position {pos} exceeds {MAX_POSITION}', line=line_no, path=str(path))
    return pos


def _is_integer(text: str) -> bool:
    try:
        int(text)
    except ValueError:
        return False
    return True


def _check_sample_ids(ids: List[str], line_no: int, path):
    if len(ids) == 0:
        raise ParseError('header names no samples', line=line_no, path=str(path))
    if len(set(ids)) != len(ids):
        raise ParseError('duplicate sample ids in header', line=line_no, path=str(path))


def parse_dosage_tsv(path: str | Path) -> GenotypeMatrix:
    """
    Read a whitespace-separated dosage table.

    The header row holds the sample ids, optionally preceded by three labels for the chrom, pos
    and id columns. Each data row is chrom, pos, id and then one dosage in [0, 2] per sample, or
    'NA' when missing. Blank lines are ignored. A `.gz` suffix selects gzip decompression.

    Parameters
    ----------
    path : str or Path

    Returns
    -------
    GenotypeMatrix with `sample_ids`

    Raises
    ------
    ParseError for a wrong field count or a bad dosage, OrderingError when positions are not
    strictly increasing within a chromosome, NoVariantsError when no variant survives

    Examples
    --------
    A 2-sample file with the data row "chr1 100 v1 0 2" gives a 2 x 1 matrix with MAF 0.5.
    """
    lines = ((no, line) for no, line in _numbered_lines(path) if line.strip())
    try:
        header_no, header = next(lines)
    except StopIteration:
        raise ParseError('empty file, expected a header of sample ids', path=str(path))

    header_fields = header.lstrip('#').split()
    first_row = next(lines, None)
    if first_row is None:
        raise NoVariantsError(f'{path}: no variant rows')
    width = len(first_row[1].split())
    if len(header_fields) == width:
        if _is_integer(header_fields[1]):
            raise ParseError(f"header position label '{header_fields[1]}' is a number; the first line looks "
                             f"like a variant row, expected a header of sample ids", line=header_no, path=str(path))
        sample_ids = header_fields[3:]
    else:
        sample_ids = header_fields
    _check_sample_ids(sample_ids, header_no, path)

    n = len(sample_ids)
    collector = _VariantCollector(path, n)

    def rows():
        yield first_row
        yield from lines

    for line_no, line in rows():
        fields = line.split()
        if len(fields) != n + 3:
            raise ParseError(f'expected {n + 3} fields (chrom, pos, id and {n} dosages), got {len(fields)}',
                             line=line_no, path=str(path))
        chrom, pos_text, variant_id = fields[:3]
        pos = _parse_position(pos_text, line_no, path)
        values = np.empty(n)
        for i, text in enumerate(fields[3:]):
            if text == MISSING:
                values[i] = np.nan
                continue
            try:
                value = float(text)
            except ValueError:
                raise ParseError(f"dosage '{text}' for sample {sample_ids[i]} is not a number",
                                 line=line_no, path=str(path))
            if not 0.0 <= value <= 2.0:
                raise ParseError(f'dosage {text} for sample {sample_ids[i]} outside [0, 2]',
                                 line=line_no, path=str(path))
            values[i] = value
        collector.add(chrom, pos, variant_id, values, line_no)

    geno = collector.matrix(sample_ids)
    logger.info(f'{path}: {geno.p} variants x {geno.n} samples read')
    return geno


def _genotype_dosage(gt: str, line_no: int, path, where: str) -> float:
    if gt == '.':
        return np.nan
    alleles = gt.replace('|', '/').split('/')
    if len(alleles) != 2:
        raise ParseError(f"GT '{gt}' at {where} is not diploid", line=line_no, path=str(path))
    if '.' in alleles:
        return np.nan
    dosage = 0
    for allele in alleles:
        if allele not in ('0', '1'):
            raise ParseError(f"GT allele index '{allele}' at {where} out of range for a biallelic record",
                             line=line_no, path=str(path))
        dosage += int(allele)
    return float(dosage)


def _symbolic(alt: str) -> bool:
    return alt.startswith('<') or '[' in alt or ']' in alt or alt in ('*', '.')


def parse_vcf_subset(path: str | Path) -> GenotypeMatrix:
    """
    Read biallelic GT calls from a plain or gzip VCF.

    0/0, 0/1 and 1/1 (phased or not) become dosages 0, 1 and 2; any '.' allele is missing and
    imputed like the dosage table. Multiallelic, symbolic-ALT and GT-less records are skipped and
    counted. Other FORMAT fields are ignored.

    Raises
    ------
    FormatError without a #CHROM header line, ParseError for malformed records or an allele index
    other than 0 or 1, OrderingError for unsorted positions
    """
    collector = None
    sample_ids = None
    n_cols = 0
    skipped = {'multiallelic': 0, 'symbolic': 0, 'no_gt': 0}

    for line_no, line in _numbered_lines(path):
        if line.startswith('##') or not line.strip():
            continue
        if line.startswith('#'):
            fields = line[1:].split('\t')
            if fields[:len(VCF_FIXED_COLUMNS)] != VCF_FIXED_COLUMNS:
                raise FormatError('header must start with #CHROM POS ID REF ALT QUAL FILTER INFO FORMAT',
                                  line=line_no, path=str(path))
            sample_ids = fields[len(VCF_FIXED_COLUMNS):]
            _check_sample_ids(sample_ids, line_no, path)
            n_cols = len(fields)
            collector = _VariantCollector(path, len(sample_ids))
            continue
        if collector is None:
            raise FormatError('record before the #CHROM header line', line=line_no, path=str(path))

        fields = line.split('\t')
        if len(fields) != n_cols:
            raise ParseError(f'expected {n_cols} tab-separated fields, got {len(fields)}', line=line_no, path=str(path))
        chrom, pos_text, variant_id, _, alt = fields[:5]
        pos = _parse_position(pos_text, line_no, path)
        where = f'{chrom}:{pos}'
        if ',' in alt:
            skipped['multiallelic'] += 1
            continue
        if _symbolic(alt):
            skipped['symbolic'] += 1
            continue
        keys = fields[8].split(':')
        if 'GT' not in keys:
            skipped['no_gt'] += 1
            continue
        gt_index = keys.index('GT')

        values = np.empty(len(sample_ids))
        for i, sample_field in enumerate(fields[9:]):
            parts = sample_field.split(':')
            gt = parts[gt_index] if gt_index < len(parts) else './.'
            values[i] = _genotype_dosage(gt, line_no, path, where)
        collector.add(chrom, pos, where if variant_id == '.' else variant_id, values, line_no)

    if collector is None:
        raise FormatError('missing #CHROM header line', path=str(path))
    for reason, count in skipped.items():
        if count:
            logger.warning(f'{path}: {count} {reason} records skipped')

    geno = collector.matrix(sample_ids)
    logger.info(f'{path}: {geno.p} variants x {geno.n} samples read')
    return geno


def _gt_string(dosage: float) -> str:
    return {0.0: '0/0', 1.0: '0/1', 2.0: '1/1'}[dosage]


def write_vcf_subset(path: str | Path, geno: GenotypeMatrix, sample_ids: Optional[Sequence[str]] = None):
    """
    Write integer dosages as a minimal VCF with a GT column per sample.

    A `.gz` suffix writes gzip with a zero timestamp so output bytes depend only on content.
    """
    if not np.all(np.isin(geno.dosages, (0.0, 1.0, 2.0))):
        raise ValueError('only integer dosages 0, 1, 2 can be written as GT calls')
    if sample_ids is None:
        sample_ids = geno.sample_ids or [f'S{i + 1}' for i in range(geno.n)]
    ids = geno.ids()

    buffer = io.StringIO()
    buffer.write('##fileformat=VCFv4.2\n')
    buffer.write('##FORMAT=<ID=GT,Number=1,Type=String,Description="Genotype">\n')
    buffer.write('#' + '\t'.join(VCF_FIXED_COLUMNS + list(sample_ids)) + '\n')
    for j in range(geno.p):
        calls = '\t'.join(_gt_string(d) for d in geno.dosages[:, j])
        buffer.write(f'{geno.chrom[j]}\t{geno.positions[j]}\t{ids[j]}\tA\tT\t.\tPASS\t.\tGT\t{calls}\n')

    data = buffer.getvalue().encode('utf-8')
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    if Path(path).suffix == '.gz':
        with open(path, 'wb') as raw, gzip.GzipFile(fileobj=raw, mode='wb', mtime=0) as f:
            f.write(data)
    else:
        Path(path).write_bytes(data)


class DatasetBundle(BaseModel):
    """Genotypes, phenotype and covariates over the same samples in the same order"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    genotype: GenotypeMatrix
    phenotype: PhenotypeVector
    covariates: CovariateMatrix
    sample_ids: List[str]

    @model_validator(mode='after')
    def _aligned(self) -> 'DatasetBundle':
        n = len(self.sample_ids)
        if self.genotype.n != n or self.phenotype.n != n or self.covariates.n != n:
            raise ValueError('genotype, phenotype and covariates must cover the same samples')
        if self.genotype.sample_ids is not None and list(self.genotype.sample_ids) != list(self.sample_ids):
            raise ValueError('genotype samples are not in bundle order')
        return self


def parse_pheno_covar(path: str | Path, pheno_column: str, covar_columns: Sequence[str] = (),
                      sample_ids: Optional[Sequence[str]] = None,
                      family: Family = Family.GAUSSIAN) -> Tuple[PhenotypeVector, CovariateMatrix, List[str]]:
    """
    Read a phenotype and covariates from a tab-separated table whose first column is the sample id.

    Parameters
    ----------
    path : str or Path
    pheno_column : str
    covar_columns : sequence of str
    sample_ids : sequence of str, optional
        Genotype sample order; rows are intersected with these ids and reordered to match
    family : Family

    Returns
    -------
    (PhenotypeVector, CovariateMatrix with intercept, sample ids)

    Raises
    ------
    ParseError for unknown columns, non-numeric values or fewer than 2 usable samples
    """
    try:
        df = pd.read_csv(path, sep='\t', dtype=str, keep_default_na=False)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as error:
        raise ParseError(f'unreadable table: {error}', path=str(path))
    if df.shape[1] < 2:
        raise ParseError('table needs a sample id column and at least one value column', path=str(path))

    id_column = df.columns[0]
    available = list(df.columns[1:])
    wanted = [pheno_column] + list(covar_columns)
    unknown = [c for c in wanted if c not in available]
    if unknown:
        raise ParseError(f'unknown column(s) {unknown}; available columns are {available}', path=str(path))

    df = df.set_index(id_column)
    if df.index.duplicated().any():
        raise ParseError(f'duplicate sample ids: {sorted(set(df.index[df.index.duplicated()]))[:5]}', path=str(path))

    values = df[wanted].replace({'': MISSING, 'NaN': MISSING, 'nan': MISSING})
    try:
        numeric = values.replace(MISSING, np.nan).astype(np.float64)
    except ValueError as error:
        raise ParseError(f'non-numeric value: {error}', path=str(path))

    missing = numeric.isna().any(axis=1)
    if missing.any():
        logger.warning(f'{path}: {int(missing.sum())} samples with missing phenotype or covariates dropped')
        numeric = numeric[~missing]

    if sample_ids is not None:
        present = set(numeric.index)
        order = [s for s in sample_ids if s in present]
        if len(order) < len(sample_ids):
            logger.warning(f'{len(sample_ids) - len(order)} genotyped samples have no usable phenotype')
        numeric = numeric.loc[order]

    if len(numeric) < 2:
        raise ParseError(f'{len(numeric)} usable samples remain; at least 2 are needed', path=str(path))

    pheno = PhenotypeVector(values=numeric[pheno_column].to_numpy(), family=family)
    covar_values = numeric[list(covar_columns)].to_numpy() if covar_columns else np.zeros((len(numeric), 0))
    covar = CovariateMatrix(values=covar_values, column_names=list(covar_columns))
    return pheno, covar, list(numeric.index)


def load_dataset(geno_path: str | Path, pheno_path: str | Path, pheno_column: str,
                 covar_columns: Sequence[str] = (), geno_format: str = 'tsv',
                 family: Family = Family.GAUSSIAN) -> DatasetBundle:
    """Parse genotypes and the phenotype table and align them on the shared sample ids"""
    if geno_format == 'vcf':
        geno = parse_vcf_subset(geno_path)
    elif geno_format == 'tsv':
        geno = parse_dosage_tsv(geno_path)
    else:
        raise ValueError(f"genotype format must be 'tsv' or 'vcf', got {geno_format!r}")

    pheno, covar, ids = parse_pheno_covar(pheno_path, pheno_column, covar_columns,
                                          sample_ids=geno.sample_ids, family=family)
    position = {s: i for i, s in enumerate(geno.sample_ids)}
    geno = geno.select_samples([position[s] for s in ids])
    return DatasetBundle(genotype=geno, phenotype=pheno, covariates=covar, sample_ids=ids)


def write_regions_tsv(path: str | Path, report: ScanReport):
    """Detected regions, one row per region in rank order"""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    report.to_frame().to_csv(path, sep='\t', index=False)


def write_report_json(path: str | Path, report: ScanReport, extra: Optional[Dict] = None):
    """The full ScanReport as JSON, with optional extra header fields"""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    if extra:
        doc = report.model_dump(mode='json')
        doc.update(extra)
        text = json.dumps(doc, indent=2)
    else:
        text = report.model_dump_json(indent=2)
    Path(path).write_text(text + '\n', encoding='utf-8')


def write_windows_tsv(path: str | Path, table: WindowTable, scores: ScoreSet):
    """Every scanned window; gzip-compressed with a zero timestamp when `path` ends in .gz"""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    compression = {'method': 'gzip', 'mtime': 0} if str(path).endswith('.gz') else None
    table.to_frame(scores).to_csv(path, sep='\t', index=False, compression=compression)


def write_qmax(path: str | Path, samples: np.ndarray):
    """Monte Carlo scan maxima, one value per line"""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(path, np.asarray(samples, dtype=np.float64), fmt='%.17g')


def write_table(path: str | Path, df: pd.DataFrame):
    """Experiment summary or replicate table as tab-separated text"""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, sep='\t', index=False)
