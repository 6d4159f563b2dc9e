import os
import json
import string
import random
import logging
from typing import Any, Dict, List, Sequence

import numpy as np
import pandas as pd

from hmm_icl.utils.errors import InvalidDimensionError


# --- Random streams ---
GENERATOR_NAME = "numpy.PCG64"
SEED_LIMIT = 2 ** 64


def check_seed(seed: int) -> int:
    if not 0 <= int(seed) < SEED_LIMIT:
        raise InvalidDimensionError(f"Seed must be an unsigned 64-bit integer, got {seed}")
    return int(seed)


def make_rng(seed: int) -> np.random.Generator:
    """Generator used everywhere in the repo: PCG64 seeded from a SeedSequence."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(check_seed(seed))))


def spawn_rngs(seed: int, count: int) -> List[np.random.Generator]:
    """
    Independent child streams of one seed.

    Child i is the same for any ``count > i``, so adding streams never changes
    the draws of existing ones.
    """
    children = np.random.SeedSequence(check_seed(seed)).spawn(count)
    return [np.random.Generator(np.random.PCG64(child)) for child in children]


def derive_seed(seed: int, index: int) -> int:
    """64-bit seed of the ``index``-th child of ``seed``."""
    child = np.random.SeedSequence(check_seed(seed), spawn_key=(index,))
    return int(child.generate_state(1, dtype=np.uint64)[0])


# --- File Operations ---
def export_to_json(path: str, data: Dict[str, Any] | List[Any]) -> None:
    folder = os.path.dirname(path)
    if folder:
        os.makedirs(folder, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as file:
        json.dump(data, file, indent=2)
    logging.info(f"Wrote {path}")


def import_from_json(path: str) -> Dict[str, Any] | List[Any]:
    try:
        with open(path, 'r', encoding='utf-8') as file:
            return json.load(file)
    except (json.JSONDecodeError, FileNotFoundError) as err:
        logging.error(f"Load error: {err}")
        raise


def matrix_to_rows(matrix: np.ndarray) -> List[List[float]]:
    """Row-major nested lists; Python floats keep all 17 significant digits."""
    return [[float(x) for x in row] for row in np.atleast_2d(matrix)]


def rows_to_matrix(rows: Sequence[Sequence[float]]) -> np.ndarray:
    return np.array(rows, dtype=np.float64)


def write_matrix_csv(matrix: np.ndarray, path: str) -> None:
    """Row-major CSV with 17 significant digits and no header."""
    folder = os.path.dirname(path)
    if folder:
        os.makedirs(folder, exist_ok=True)
    pd.DataFrame(np.atleast_2d(matrix)).to_csv(path, header=False, index=False, float_format="%.17g")


def write_table_csv(table: pd.DataFrame, path: str, header: Dict[str, Any]) -> None:
    """
    Write a results table preceded by ``# key=value`` lines.

    Args:
        table (pd.DataFrame): Rows to write.
        path (str): Destination file.
        header (dict): Run metadata echoed as comment lines (seed, version, schema).
    """
    folder = os.path.dirname(path)
    if folder:
        os.makedirs(folder, exist_ok=True)
    with open(path, 'w', encoding='utf-8', newline='') as file:
        for key, value in header.items():
            file.write(f"# {key}={value}\n")
        table.to_csv(file, index=False, float_format="%.17g")
    logging.info(f"Wrote {len(table)} rows to {path}")


def read_table_csv(path: str) -> pd.DataFrame:
    return pd.read_csv(path, comment="#", float_precision="round_trip")


# --- Utility Functions ---
def random_string(length: int) -> str:
    return ''.join(random.choices(string.ascii_letters + string.digits, k=length))

