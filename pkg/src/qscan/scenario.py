"""
The :mod:`qscan.scenario` module defines the `Scenario` class and the OO API for using qscan.
"""

# Copyright 2024 qscan developers

import logging
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from qscan.io import DatasetBundle, load_dataset, parse_pheno_covar
from qscan.null_model import CovariateMatrix, Family, NullModel, PhenotypeVector, fit_null
from qscan.pipeline import compute_scan, export_scan_results, run_scan, run_threshold
from qscan.plotting import make_scan_plot
from qscan.qslib import MAX_SEED, ScanTimer, VerbosityEnum, collect_params
from qscan.region_detect import ScanReport, detect_regions
from qscan.scan_engine import Method, ScanConfig, WindowTable, scan_windows
from qscan.scores import GenotypeMatrix, ScoreSet, build_score_set, filter_variants
from qscan.threshold import ThresholdConfig, ThresholdMode, ThresholdResult, mc_threshold

# This should inherit level from root logger
logger = logging.getLogger(__name__)

GENO_FORMATS = ('tsv', 'vcf')


class Scenario(BaseModel):
    """pydantic model for creating scan scenarios from input parameters

    Parameters
    ----------
    scenario_name : str
        Used in log messages and plot titles
    geno : str, Path, or GenotypeMatrix
        Genotype dosages. If Path-like, read with the parser chosen by `geno_format`.
    pheno : str, Path, or PhenotypeVector
        Phenotype. If Path-like, a tab-separated table whose first column is the sample id.
    pheno_col : str, optional
        Phenotype column; required when `pheno` is Path-like
    covar_cols : list of str, optional
        Covariate columns of the phenotype table. An intercept is always added.
    covariates : CovariateMatrix, optional
        In-memory covariates, used when `pheno` is a PhenotypeVector
    geno_format : str, optional
        'tsv' (dosage matrix) or 'vcf' (minimal VCF subset). Default is 'tsv'.
    family : Family, optional
        'gaussian' or 'binomial'. Default is 'gaussian'.
    l_min : int, optional
        Minimum window length in variants, default is 40
    l_max : int, optional
        Maximum window length in variants, default is 200
    method : Method, optional
        'qscan' or 'mscan', default is 'qscan'
    exact : bool, optional
        Compensated summation for every window. Default is False.
    alpha : float, optional
        Family-wise error level, default is 0.05
    mc_reps : int, optional
        Monte Carlo replicates for the threshold, default is 2000
    mc_mode : ThresholdMode, optional
        'genotype_projection' or 'banded_cholesky', default is 'genotype_projection'
    seed : int, optional
        Master seed for every random draw, default is 0
    maf_max : float, optional
        Variants with minor allele frequency above this are dropped, default is 0.05
    mac_min : int, optional
        Variants with minor allele count below this are dropped, default is 3
    bandwidth : int, optional
        Covariance band kept beyond the diagonal. Default is l_max - 1, the smallest band
        that covers every window.
    threads : int, optional
        Worker threads; never changes results. Default is 1.
    out_prefix : str or Path, optional
        Output files are written as `<out_prefix>.<kind>`. If None, nothing is exported.
    emit_windows : bool, optional
        Also write every scanned window. Default is False.
    make_plot : bool, optional
        Write a PNG scan track. Default is False.
    plot_style : str, optional
        matplotlib style, default is 'ggplot'
    figsize : tuple, optional
        Figure size in inches, default is (15, 5)
    verbosity : int, optional
        0 = WARNING, 1 = INFO, 2 = DEBUG. Default is 0.

    Attributes
    ----------
    dataset : DatasetBundle
    null_model : NullModel
    score_set : ScoreSet
    whitened : ndarray
        Whitened adjusted genotypes aligned with `score_set`
    threshold_result : ThresholdResult
    windows : WindowTable
    report : ScanReport
    """
    model_config = ConfigDict(arbitrary_types_allowed=True, extra='forbid')

    # Required parameters
    geno: str | Path | GenotypeMatrix
    pheno: str | Path | PhenotypeVector
    # Optional parameters
    scenario_name: str = 'qscan'
    pheno_col: str | None = None
    covar_cols: List[str] = []
    covariates: CovariateMatrix | None = None
    geno_format: str = 'tsv'
    family: Family = Family.GAUSSIAN

    l_min: int = 40
    l_max: int = 200
    method: Method = Method.QSCAN
    exact: bool = False

    alpha: float = Field(0.05, gt=0.0, lt=1.0)
    mc_reps: int = Field(2000, ge=1)
    mc_mode: ThresholdMode = ThresholdMode.GENOTYPE_PROJECTION
    seed: int = Field(0, ge=0, le=MAX_SEED)

    maf_max: float = Field(0.05, gt=0.0, le=0.5)
    mac_min: int = Field(3, ge=1)
    bandwidth: int | None = None
    threads: int = Field(1, ge=1)

    out_prefix: str | Path | None = None
    emit_windows: bool = False
    make_plot: bool = False
    plot_style: str = 'ggplot'
    figsize: Tuple[float, float] = (15, 5)
    verbosity: int = VerbosityEnum.WARNING

    # Attributes
    dataset: DatasetBundle | None = None
    null_model: NullModel | None = None
    score_set: ScoreSet | None = None
    whitened: np.ndarray | None = None
    threshold_result: ThresholdResult | None = None
    windows: WindowTable | None = None
    report: ScanReport | None = None

    @field_validator('geno_format')
    def _known_format(cls, v: str):
        if v not in GENO_FORMATS:
            raise ValueError(f'geno_format must be one of {GENO_FORMATS}, got {v!r}')
        return v

    @field_validator('covar_cols', mode='before')
    def _split_covar_cols(cls, v):
        """Accept a comma-separated string as well as a list"""
        if v is None:
            return []
        if isinstance(v, str):
            return [c.strip() for c in v.split(',') if c.strip()]
        return v

    @model_validator(mode='after')
    def _window_range(self) -> 'Scenario':
        if self.l_min < 2:
            raise ValueError(f'l_min must be >= 2, got {self.l_min}')
        if self.l_max < self.l_min:
            raise ValueError(f'l_max ({self.l_max}) must be >= l_min ({self.l_min})')
        if self.bandwidth is not None and self.bandwidth < self.l_max - 1:
            raise ValueError(f'bandwidth ({self.bandwidth}) must be at least l_max - 1 = {self.l_max - 1}')
        return self

    @model_validator(mode='after')
    def _enough_replicates(self) -> 'Scenario':
        needed = int(np.ceil(1.0 / self.alpha - 1e-9))
        if self.mc_reps < needed:
            raise ValueError(f'mc_reps ({self.mc_reps}) must be at least ceil(1/alpha) = {needed}')
        return self

    @model_validator(mode='after')
    def _data_sources(self) -> 'Scenario':
        if isinstance(self.pheno, (str, Path)):
            if self.pheno_col is None:
                raise ValueError('pheno_col is required when pheno is a file')
            if isinstance(self.geno, GenotypeMatrix) and self.geno.sample_ids is None:
                raise ValueError('in-memory genotypes need sample_ids to align with a phenotype file')
        else:
            if not isinstance(self.geno, GenotypeMatrix):
                raise ValueError('an in-memory phenotype needs in-memory genotypes')
            if self.covar_cols:
                raise ValueError('covar_cols only applies to a phenotype file; pass covariates instead')
        if self.covariates is not None and isinstance(self.pheno, (str, Path)):
            raise ValueError('covariates only applies to an in-memory phenotype')
        return self

    @property
    def scan_config(self) -> ScanConfig:
        return ScanConfig(l_min=self.l_min, l_max=self.l_max, method=self.method, exact=self.exact)

    @property
    def threshold_config(self) -> ThresholdConfig:
        return ThresholdConfig(alpha=self.alpha, n_reps=self.mc_reps, seed=self.seed, mode=self.mc_mode)

    @property
    def band(self) -> int:
        return self.bandwidth if self.bandwidth is not None else self.l_max - 1

    def config_echo(self) -> Dict:
        """Run parameters that determine the results, as echoed into the report"""
        echo = {'geno': self.geno if isinstance(self.geno, (str, Path)) else '<memory>',
                'pheno': self.pheno if isinstance(self.pheno, (str, Path)) else '<memory>',
                'pheno_col': self.pheno_col, 'covar_cols': list(self.covar_cols),
                'geno_format': self.geno_format, 'family': self.family.value,
                'l_min': self.l_min, 'l_max': self.l_max, 'method': self.method.value, 'exact': self.exact,
                'alpha': self.alpha, 'mc_reps': self.mc_reps, 'mc_mode': self.mc_mode.value, 'seed': self.seed,
                'maf_max': self.maf_max, 'mac_min': self.mac_min, 'bandwidth': self.band}
        return {key: str(val) if isinstance(val, Path) else val for key, val in echo.items()}

    def load_data(self):
        """
        Read and align genotypes, phenotype and covariates.

        Returns
        -------
        DatasetBundle stored in `dataset` attribute of Scenario object
        """
        if isinstance(self.geno, (str, Path)) and isinstance(self.pheno, (str, Path)):
            self.dataset = load_dataset(self.geno, self.pheno, self.pheno_col, self.covar_cols,
                                        geno_format=self.geno_format, family=self.family)
        elif isinstance(self.pheno, (str, Path)):
            pheno, covar, ids = parse_pheno_covar(self.pheno, self.pheno_col, self.covar_cols,
                                                  sample_ids=self.geno.sample_ids, family=self.family)
            position = {s: i for i, s in enumerate(self.geno.sample_ids)}
            geno = self.geno.select_samples([position[s] for s in ids])
            self.dataset = DatasetBundle(genotype=geno, phenotype=pheno, covariates=covar, sample_ids=ids)
        else:
            covar = self.covariates if self.covariates is not None else CovariateMatrix.intercept_only(self.pheno.n)
            ids = self.geno.sample_ids if self.geno.sample_ids is not None else \
                [f'sample{i + 1}' for i in range(self.geno.n)]
            geno = self.geno if self.geno.sample_ids is not None else \
                self.geno.model_copy(update={'sample_ids': ids})
            self.dataset = DatasetBundle(genotype=geno, phenotype=self.pheno, covariates=covar, sample_ids=ids)

        logger.info(f'{len(self.dataset.sample_ids)} samples and {self.dataset.genotype.p} variants loaded')
        return self.dataset

    def fit_null(self):
        """
        Fit the covariate-only null model.

        Returns
        -------
        NullModel stored in `null_model` attribute of Scenario object
        """
        if self.dataset is None:
            self.load_data()
        self.null_model = fit_null(self.dataset.phenotype, self.dataset.covariates)
        return self.null_model

    def compute_scores(self):
        """
        Filter variants by frequency and compute scores with their banded covariance.

        Returns
        -------
        ScoreSet stored in `score_set` attribute of Scenario object
        """
        if self.null_model is None:
            self.fit_null()
        geno = filter_variants(self.dataset.genotype, self.maf_max, self.mac_min)
        self.score_set, self.whitened = build_score_set(geno, self.null_model, self.band, n_jobs=self.threads,
                                                        return_whitened=True)
        return self.score_set

    def compute_threshold(self):
        """
        Monte Carlo threshold for the scanned variants.

        Returns
        -------
        ThresholdResult stored in `threshold_result` attribute of Scenario object
        """
        if self.score_set is None:
            self.compute_scores()
        self.threshold_result = mc_threshold(self.score_set, self.null_model, self.scan_config,
                                             self.threshold_config, whitened=self.whitened, n_jobs=self.threads)
        return self.threshold_result

    def scan(self):
        """
        Scan every window and detect signal regions above the threshold.

        Returns
        -------
        ScanReport stored in `report` attribute of Scenario object
        """
        if self.threshold_result is None:
            self.compute_threshold()
        with ScanTimer() as t:
            self.windows = scan_windows(self.score_set, self.scan_config, n_jobs=self.threads)
        logger.debug(f'{len(self.windows)} windows scanned ({t})')
        self.report = detect_regions(self.windows, self.threshold_result.h, scores=self.score_set,
                                     config=self.config_echo())
        return self.report

    def compute_scan(self):
        """Fit, score, threshold and scan without exporting anything"""
        return compute_scan(self)

    def run(self):
        """
        Wrapper for module level `qscan.pipeline.run_scan()` function.

        Returns
        -------
        ScanReport stored in `report` attribute of Scenario object
        """
        return run_scan(self)

    def run_threshold(self):
        """
        Wrapper for module level `qscan.pipeline.run_threshold()` function.

        Returns
        -------
        ThresholdResult stored in `threshold_result` attribute of Scenario object
        """
        return run_threshold(self)

    def export(self, out_prefix: Optional[str | Path] = None):
        """Write the scan outputs under `out_prefix` (default: the scenario's `out_prefix`)"""
        prefix = out_prefix if out_prefix is not None else self.out_prefix
        if prefix is None:
            raise ValueError('no out_prefix given')
        if self.report is None:
            raise ValueError('nothing to export; run the scan first')
        return export_scan_results(self, prefix)

    def make_scan_plot(self, plot_export_path: Optional[str | Path] = None):
        """Window statistics along the variant index with the threshold and detected regions"""
        if self.report is None:
            raise ValueError('nothing to plot; run the scan first')
        return make_scan_plot(self.windows, self.report, scenario_name=self.scenario_name,
                              plot_style=self.plot_style, figsize=self.figsize,
                              plot_export_path=plot_export_path)

    def __str__(self):
        """
        Pretty string representation of a scenario

        """

        scenario_str = f'Required inputs\n{25 * "-"}\n'
        scenario_str = f'{scenario_str}scenario_name = {self.scenario_name}\n'
        for name in ('geno', 'pheno'):
            value = getattr(self, name)
            shown = value if isinstance(value, (str, Path)) else f'<{type(value).__name__}, n = {value.n}>'
            scenario_str = f'{scenario_str}{name} = {shown}\n'
        scenario_str = f'{scenario_str}pheno_col = {self.pheno_col}\n\n'

        scenario_str = f'{scenario_str}Data options\n{25 * "-"}\n'
        scenario_str = f'{scenario_str}geno_format = {self.geno_format}\n'
        scenario_str = f'{scenario_str}covar_cols = {self.covar_cols}\n'
        scenario_str = f'{scenario_str}family = {self.family.value}\n'
        scenario_str = f'{scenario_str}maf_max = {self.maf_max}\n'
        scenario_str = f'{scenario_str}mac_min = {self.mac_min}\n\n'

        scenario_str = f'{scenario_str}Scan options\n{25 * "-"}\n'
        scenario_str = f'{scenario_str}l_min = {self.l_min}\n'
        scenario_str = f'{scenario_str}l_max = {self.l_max}\n'
        scenario_str = f'{scenario_str}method = {self.method.value}\n'
        scenario_str = f'{scenario_str}bandwidth = {self.band}\n'
        scenario_str = f'{scenario_str}exact = {self.exact}\n\n'

        scenario_str = f'{scenario_str}Threshold options\n{25 * "-"}\n'
        scenario_str = f'{scenario_str}alpha = {self.alpha}\n'
        scenario_str = f'{scenario_str}mc_reps = {self.mc_reps}\n'
        scenario_str = f'{scenario_str}mc_mode = {self.mc_mode.value}\n'
        scenario_str = f'{scenario_str}seed = {self.seed}\n\n'

        scenario_str = f'{scenario_str}Output options\n{25 * "-"}\n'
        scenario_str = f'{scenario_str}out_prefix = {self.out_prefix}\n'
        scenario_str = f'{scenario_str}emit_windows = {self.emit_windows}\n'
        scenario_str = f'{scenario_str}make_plot = {self.make_plot}\n'
        scenario_str = f'{scenario_str}threads = {self.threads}\n'
        scenario_str = f'{scenario_str}verbosity = {self.verbosity}\n'

        return scenario_str


def create_scenario(params_dict: Optional[Dict] = None,
                    config_path: Optional[str | Path] = None, **kwargs):
    """Function to create a `Scenario` from a dict, a TOML config file, and/or keyword args """

    # Create Pydantic model to parse and validate inputs
    scenario = Scenario(**collect_params(params_dict, config_path, **kwargs))
    return scenario
