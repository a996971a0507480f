from qscan.scenario import Scenario, create_scenario
from qscan.null_model import Family, PhenotypeVector, CovariateMatrix, NullModel, fit_null
from qscan.scores import GenotypeMatrix, BandedMatrix, ScoreSet, build_score_set, compute_scores, compute_banded_cov
from qscan.scan_engine import Method, ScanConfig, WindowStat, WindowTable, scan_all, scan_max, scan_windows
from qscan.threshold import ThresholdConfig, ThresholdMode, ThresholdResult, mc_threshold, theoretical_bound
from qscan.region_detect import DetectedRegion, ScanReport, detect_regions
from qscan.io import load_dataset, parse_dosage_tsv, parse_vcf_subset, parse_pheno_covar

__version__ = "0.1.0"
