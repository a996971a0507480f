# Copyright 2024 qscan developers

import logging
import time
from enum import IntEnum
from typing import Dict, Sequence, Union
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

import numpy as np

MAX_SEED = 2 ** 64 - 1


class VerbosityEnum(IntEnum):
    WARNING = 0
    INFO = 1
    DEBUG = 2

    @property
    def log_level(self) -> int:
        return {0: logging.WARNING, 1: logging.INFO, 2: logging.DEBUG}[self.value]

    @classmethod
    def clamp(cls, verbosity: int) -> 'VerbosityEnum':
        """Counts above 2 (e.g. -vvv) mean DEBUG"""
        return cls(min(max(int(verbosity), 0), cls.DEBUG))


class ScanTimer:
    """
    Timing qscan stages.

    `interval` is processor time summed over every thread of the process, so with joblib
    threads it can exceed `wall`, the elapsed time. The ratio is the effective parallelism.
    """

    def __enter__(self):
        self.start = time.process_time()
        self.wall_start = time.perf_counter()
        return self

    def __exit__(self, *args):
        self.interval = time.process_time() - self.start
        self.wall = time.perf_counter() - self.wall_start

    def __str__(self) -> str:
        return f'{self.wall:.4f} s elapsed, {self.interval:.4f} cpu s'


def replicate_rng(seed: int, index: int, stream: int = 0) -> np.random.Generator:
    """
    Counter-based random generator keyed by (seed, replicate index).

    Replicate streams are independent of each other and of the order in which they are
    consumed, so results do not depend on how replicates are spread over workers.

    Parameters
    ----------
    seed : int
        Master seed, 0 <= seed < 2**64
    index : int
        Replicate index, 0 <= index < 2**32
    stream : int, optional
        Sub-stream for a second independent draw within the same replicate. Default is 0.

    Returns
    -------
    numpy Generator backed by Philox

    Examples
    --------
    rng = replicate_rng(2024, 17)
    z = rng.standard_normal(10)
    """
    if not 0 <= seed <= MAX_SEED:
        raise ValueError(f'seed must be in [0, 2**64), got {seed}')
    if not 0 <= index < 2 ** 32 or not 0 <= stream < 2 ** 32:
        raise ValueError('replicate index and stream must be in [0, 2**32)')
    key = seed + ((index + (stream << 32)) << 64)
    return np.random.Generator(np.random.Philox(key=key))


def load_toml(toml_filepath: Union[str, Path]) -> Dict:
    """Read a TOML file into a nested dict"""
    with open(toml_filepath, mode="rb") as toml_file:
        return tomllib.load(toml_file)


def update_params_from_toml(params_dict: Dict, toml_dict: Dict) -> Dict:
    """
    Update dict of input parameters from toml_config dictionary

    Tables are flattened one level, so ``[scan] lmin = 40`` and a top level ``lmin = 40``
    both set ``lmin``.

    Parameters
    ----------
    params_dict : dict
    toml_dict : dict from loading TOML config file

    Returns
    -------
    Updated parameters dict
    """
    for outerkey, outerval in toml_dict.items():
        if isinstance(outerval, dict):
            for key, val in outerval.items():
                params_dict[key] = val
        else:
            params_dict[outerkey] = outerval

    return params_dict


def segment_ends(chrom: Sequence[str]) -> np.ndarray:
    """
    Last index of the contiguous chromosome run containing each position.

    Parameters
    ----------
    chrom : sequence of str
        Chromosome label per variant, variants of one chromosome contiguous

    Returns
    -------
    int64 array, same length as `chrom`
    """
    labels = np.asarray(chrom)
    p = len(labels)
    if p == 0:
        return np.zeros(0, dtype=np.int64)
    breaks = np.flatnonzero(labels[1:] != labels[:-1])
    run_last = np.append(breaks, p - 1)
    run_id = np.zeros(p, dtype=np.int64)
    run_id[breaks + 1] = 1
    run_id = np.cumsum(run_id)
    return run_last[run_id].astype(np.int64)


def collect_params(params_dict: Dict | None = None, config_path: Union[str, Path, None] = None, **kwargs) -> Dict:
    """Merge a params dict, a TOML config file and keyword args, later sources winning"""

    # Create empty dict for input parameters
    params = {}

    # If params_dict is not None, merge into params
    if params_dict is not None:
        params.update(params_dict)

    # If config_path is not None, merge into params
    if config_path is not None:
        params = update_params_from_toml(params, load_toml(config_path))

    # Args passed to function get ultimate say
    params.update({key: val for key, val in kwargs.items() if val is not None})
    return params
