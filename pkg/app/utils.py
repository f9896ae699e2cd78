import csv
import logging
import zlib
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from app.config import CSV_SIGNIFICANT_DIGITS
from app.exceptions import EstimateFileError, ShapeMismatch

logger = logging.getLogger(__name__)


# ==================== RANDOM STREAMS ====================

def _stream_key(key: str | int) -> int:
    if isinstance(key, int):
        return key
    return zlib.crc32(key.encode("utf-8"))


def derive_rng(seed: int, *keys: str | int) -> np.random.Generator:
    """
    Named substream of a scenario seed.

    Stream derivation rule: the generator for (seed, k1, k2, ...) is seeded
    with SeedSequence([seed, h(k1), h(k2), ...]) where h is CRC32 for string
    keys and the identity for integer keys. Streams with different keys are
    independent, so adding a draw to one purpose never shifts another.
    """
    entropy = [seed] + [_stream_key(k) for k in keys]
    return np.random.default_rng(np.random.SeedSequence(entropy))


# ==================== CSV ====================

def format_value(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), f".{CSV_SIGNIFICANT_DIGITS}g")
    return str(value)


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    """Comma-separated, header first, LF line endings, reals at 17 significant digits."""
    rows = [list(row) for row in rows]
    for row in rows:
        if len(row) != len(header):
            raise ShapeMismatch(f"row has {len(row)} fields, header has {len(header)}")

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_value(v) for v in row])
    logger.debug("wrote %s (%d rows)", path, len(rows))


def write_matrix(path: str | Path, m: np.ndarray) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(path, np.atleast_2d(m), fmt=f"%.{CSV_SIGNIFICANT_DIGITS}g", delimiter=",")


def read_matrix(path: str | Path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise EstimateFileError(f"estimate file not found: {path}")
    try:
        return np.loadtxt(path, delimiter=",", ndmin=2)
    except ValueError as e:
        raise EstimateFileError(f"could not parse {path}: {e}") from e
