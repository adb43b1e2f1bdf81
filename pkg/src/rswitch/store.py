"""Persistence of chain results.

Each chain ``k`` of a run directory is stored as three files:

``chain_k.json``
    Metadata: format version, configuration hash, seed, ``G``, ``G_bi``,
    ``thin``, parameter names, acceptance rates and tuned scales.
``chain_k.csv``
    One row per stored draw: continuous parameters, then ``loglik`` and
    ``logjoint``. Floats are written with ``repr`` so they round-trip exactly.
``chain_k.states``
    State vectors, one bit-packed row per stored draw.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataFormatError, StoreMismatchError
from .sampler import ChainResult, ProposalScales

FORMAT_VERSION = 1


def _paths(directory: Path, chain: int):
    stem = directory / f"chain_{chain}"
    return stem.with_suffix(".json"), stem.with_suffix(".csv"), stem.with_suffix(".states")


def _floats(values) -> list:
    # JSON has no NaN; keep non-finite values as strings
    return [repr(float(v)) if not np.isfinite(v) else float(v) for v in values]


def _unfloats(values) -> np.ndarray:
    return np.array([float(v) for v in values], dtype=float)


def persist_chain(result: ChainResult, directory: str | Path, config_hash: str = "") -> None:
    """Write one chain into ``directory`` (created if needed)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    meta_p, csv_p, st_p = _paths(directory, result.chain)
    T = result.states.shape[1] if result.states.ndim == 2 else 0
    meta = {
        "format_version": FORMAT_VERSION,
        "config_hash": config_hash,
        "chain": int(result.chain),
        "seed": int(result.seed),
        "G": int(result.G), "G_bi": int(result.G_bi), "thin": int(result.thin),
        "n_free": int(result.n_free),
        "names": list(result.names),
        "n_draws": int(result.n_draws),
        "T_tilde": int(T),
        "accept_rates": _floats(result.accept_rates),
        "tuned_sigma": _floats(result.tuned_scales.sigma),
        "proposal": result.tuned_scales.shape.value,
        "error": result.error,
    }
    meta_p.write_text(json.dumps(meta, indent=1) + "\n", encoding="utf-8")
    with csv_p.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(result.names) + ["loglik", "logjoint"])
        for row, a, b in zip(result.draws, result.loglik, result.logjoint):
            w.writerow([repr(float(v)) for v in row] + [repr(float(a)), repr(float(b))])
    packed = np.packbits(np.asarray(result.states, dtype=np.uint8).reshape(-1, T), axis=1) \
        if T else np.zeros((0, 0), dtype=np.uint8)
    st_p.write_bytes(packed.tobytes())


def persist_run(results: Sequence[ChainResult], directory: str | Path,
                config_hash: str = "") -> None:
    for r in results:
        persist_chain(r, directory, config_hash)


def load_chain(directory: str | Path, chain: int, config_hash: str | None = None) -> ChainResult:
    """Read one chain back.

    Raises
    ------
    StoreMismatchError
        When the format version differs, or ``config_hash`` is given and
        differs from the stored one.
    """
    meta_p, csv_p, st_p = _paths(Path(directory), chain)
    meta = json.loads(meta_p.read_text(encoding="utf-8"))
    if meta.get("format_version") != FORMAT_VERSION:
        raise StoreMismatchError(
            f"{meta_p}: format version {meta.get('format_version')} != {FORMAT_VERSION}")
    if config_hash is not None and meta.get("config_hash") != config_hash:
        raise StoreMismatchError(f"{meta_p}: written under a different configuration")
    names = list(meta["names"])
    n, T = int(meta["n_draws"]), int(meta["T_tilde"])
    rows = []
    with csv_p.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != names + ["loglik", "logjoint"]:
            raise DataFormatError(f"{csv_p}: header does not match the metadata", 1)
        for row in reader:
            if len(row) != len(header):
                raise DataFormatError(f"{csv_p}: ragged row", reader.line_num)
            rows.append([float(v) for v in row])
    if len(rows) != n:
        raise DataFormatError(f"{csv_p}: expected {n} draws, found {len(rows)}")
    mat = np.array(rows, dtype=float).reshape(n, len(names) + 2)
    if T:
        width = (T + 7) // 8
        raw = np.frombuffer(st_p.read_bytes(), dtype=np.uint8)
        if raw.size != n * width:
            raise DataFormatError(f"{st_p}: unexpected size")
        states = np.unpackbits(raw.reshape(n, width), axis=1, count=T).astype(np.int8)
    else:
        states = np.zeros((n, 0), dtype=np.int8)
    sigma = _unfloats(meta["tuned_sigma"])
    return ChainResult(
        int(meta["chain"]), int(meta["seed"]), names, mat[:, :-2].copy(), states,
        mat[:, -2].copy(), mat[:, -1].copy(), _unfloats(meta["accept_rates"]),
        ProposalScales(sigma, meta["proposal"]), int(meta["G"]), int(meta["G_bi"]),
        int(meta["thin"]), int(meta["n_free"]), meta.get("error"))


def load_run(directory: str | Path, config_hash: str | None = None) -> list[ChainResult]:
    """All chains stored in ``directory``, ordered by chain index."""
    directory = Path(directory)
    idx = sorted(int(p.stem.split("_", 1)[1]) for p in directory.glob("chain_*.json"))
    if not idx:
        raise FileNotFoundError(f"no chains in {directory}")
    return [load_chain(directory, k, config_hash) for k in idx]
