"""KIBA-style dataset loading, score transform, flattening, and fold construction.

Input files:
  - drug file: ``id<TAB>SMILES`` per line, or a JSON object {id: SMILES}
    (picked by extension, ``.json`` vs anything else)
  - protein file: same shape for id -> sequence
  - affinity file: one row per drug, one column per protein, ``NaN`` for
    unmeasured cells, whitespace- or comma-delimited
  - fold files: JSON; the test file is a flat array of 0-based interaction
    indices, the CV file an array of five such arrays
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from . import vocab as vocab_mod

N_CV_FOLDS = 5
N_PARTS = N_CV_FOLDS + 1  # five CV folds plus the held-out test part


class ParseError(ValueError):
    def __init__(self, file, line: int, message: str):
        self.file = str(file)
        self.line = line
        super().__init__(f"{file}:{line}: {message}")


class DimensionMismatchError(ValueError):
    pass


class FoldIndexError(ValueError):
    """An index in a fold file is outside [0, n_interactions)."""


class OverlappingFoldsError(ValueError):
    """The same interaction index appears in more than one part."""


class IncompletePartitionError(ValueError):
    """The parts do not cover every interaction index."""


@dataclass(frozen=True)
class RawDataset:
    """Drugs, proteins, and the (drug x protein) affinity grid (NaN = missing)."""

    drugs: tuple[tuple[str, str], ...]
    proteins: tuple[tuple[str, str], ...]
    affinity: np.ndarray

    @property
    def n_drugs(self) -> int:
        return len(self.drugs)

    @property
    def n_proteins(self) -> int:
        return len(self.proteins)

    @property
    def n_interactions(self) -> int:
        return int(np.count_nonzero(~np.isnan(self.affinity)))


class InteractionRecord(NamedTuple):
    drug_index: int
    protein_index: int
    affinity: float


@dataclass(frozen=True)
class FoldSplit:
    """Held-out test indices plus five CV folds over flattened interactions."""

    test_indices: np.ndarray
    cv_folds: tuple[np.ndarray, ...]
    seed: int | None = None

    def parts(self) -> tuple[np.ndarray, ...]:
        return (self.test_indices, *self.cv_folds)

    def train_val(self, fold: int) -> tuple[np.ndarray, np.ndarray]:
        """Training indices (four folds) and validation indices (one fold)."""
        if not 0 <= fold < len(self.cv_folds):
            raise ValueError(f"fold must be in [0, {len(self.cv_folds)}), got {fold}")
        val = self.cv_folds[fold]
        train = np.concatenate([f for i, f in enumerate(self.cv_folds) if i != fold])
        return train, val


def _read_id_map(path) -> list[tuple[str, str]]:
    path = Path(path)
    if path.suffix.lower() == ".json":
        try:
            obj = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ParseError(path, exc.lineno, exc.msg) from exc
        if not isinstance(obj, dict):
            raise ParseError(path, 1, "expected a JSON object of id -> string")
        for key, value in obj.items():
            if not isinstance(value, str):
                raise ParseError(path, 1, f"value for {key!r} is not a string")
        return [(str(k), v) for k, v in obj.items()]

    entries = []
    seen = set()
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) != 2:
                raise ParseError(path, lineno, f"expected 2 tab-separated fields, got {len(fields)}")
            ident, seq = fields[0].strip(), fields[1].strip()
            if not ident or not seq:
                raise ParseError(path, lineno, "empty id or sequence")
            if ident in seen:
                raise ParseError(path, lineno, f"duplicate id {ident!r}")
            seen.add(ident)
            entries.append((ident, seq))
    return entries


def _read_affinity_matrix(path, n_rows: int, n_cols: int) -> np.ndarray:
    path = Path(path)
    rows = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            fields = line.split(",") if "," in line else line.split()
            try:
                row = [float(f) for f in fields]
            except ValueError as exc:
                raise ParseError(path, lineno, str(exc)) from exc
            if len(row) != n_cols:
                raise DimensionMismatchError(
                    f"{path}:{lineno}: expected {n_cols} columns, got {len(row)}"
                )
            rows.append(row)
    if len(rows) != n_rows:
        raise DimensionMismatchError(f"{path}: expected {n_rows} rows, got {len(rows)}")
    return np.array(rows, dtype=np.float64)


def load_kiba(drug_file, protein_file, affinity_file) -> RawDataset:
    """Load the raw dataset triple; missing affinities stay NaN."""
    drugs = _read_id_map(drug_file)
    proteins = _read_id_map(protein_file)
    affinity = _read_affinity_matrix(affinity_file, len(drugs), len(proteins))
    return RawDataset(drugs=tuple(drugs), proteins=tuple(proteins), affinity=affinity)


def kiba_transform(scores) -> np.ndarray:
    """Negate each score and add the absolute value of the smallest negative.

    Reverses the ordering, so large outputs mean strong binding; for raw KIBA
    scores (all >= 0) the output minimum is exactly 0.
    """
    arr = np.asarray(scores, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("scores are empty")
    if not np.all(np.isfinite(arr)):
        raise ValueError("scores must be finite")
    neg = -arr
    return neg + abs(neg.min())


def flatten(raw: RawDataset) -> list[InteractionRecord]:
    """One record per measured cell, row-major (drug-major) order."""
    records = []
    grid = raw.affinity
    for i in range(grid.shape[0]):
        for j in range(grid.shape[1]):
            value = grid[i, j]
            if not np.isnan(value):
                records.append(InteractionRecord(i, j, float(value)))
    return records


def interaction_arrays(raw: RawDataset) -> tuple[np.ndarray, np.ndarray]:
    """Flatten to (pairs, affinities) arrays in the same row-major order."""
    mask = ~np.isnan(raw.affinity)
    drug_idx, prot_idx = np.nonzero(mask)
    pairs = np.stack([drug_idx, prot_idx], axis=1).astype(np.int64)
    return pairs, raw.affinity[mask].astype(np.float64)


def make_folds(n_interactions: int, seed: int) -> FoldSplit:
    """Shuffle 0..n-1 under ``seed`` and cut into six near-equal parts.

    Part sizes differ by at most one (the leading parts absorb the remainder);
    part 0 is the test set, parts 1-5 the CV folds.
    """
    if n_interactions < N_PARTS:
        raise ValueError(f"need at least {N_PARTS} interactions, got {n_interactions}")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n_interactions)
    parts = np.array_split(perm, N_PARTS)
    return FoldSplit(test_indices=parts[0], cv_folds=tuple(parts[1:]), seed=seed)


def validate_fold_split(split: FoldSplit, n_interactions: int) -> None:
    """Check the six parts form an exact partition of range(n_interactions)."""
    parts = split.parts()
    total = np.concatenate(parts) if parts else np.array([], dtype=np.int64)
    if total.size and (total.min() < 0 or total.max() >= n_interactions):
        bad = total[(total < 0) | (total >= n_interactions)][0]
        raise FoldIndexError(f"index {int(bad)} outside [0, {n_interactions})")
    if np.unique(total).size != total.size:
        raise OverlappingFoldsError("an index appears in more than one part")
    if total.size != n_interactions:
        raise IncompletePartitionError(
            f"parts cover {total.size} of {n_interactions} interactions"
        )


def load_fold_files(test_file, cv_file, n_interactions: int) -> FoldSplit:
    """Read externally published fold index files and verify the partition."""
    test = np.asarray(_load_json_array(test_file), dtype=np.int64)
    cv_raw = _load_json_list(cv_file)
    if len(cv_raw) != N_CV_FOLDS:
        raise ParseError(cv_file, 1, f"expected {N_CV_FOLDS} folds, got {len(cv_raw)}")
    folds = tuple(np.asarray(f, dtype=np.int64) for f in cv_raw)
    split = FoldSplit(test_indices=test, cv_folds=folds)
    validate_fold_split(split, n_interactions)
    return split


def save_fold_files(split: FoldSplit, test_file, cv_file) -> None:
    Path(test_file).write_text(json.dumps(split.test_indices.tolist()), encoding="utf-8")
    Path(cv_file).write_text(
        json.dumps([f.tolist() for f in split.cv_folds]), encoding="utf-8"
    )


def _load_json_array(path):
    data = _load_json_list(path)
    if any(isinstance(x, list) for x in data):
        raise ParseError(path, 1, "expected a flat array of indices")
    return data


def _load_json_list(path):
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(path, exc.lineno, exc.msg) from exc
    if not isinstance(data, list):
        raise ParseError(path, 1, "expected a JSON array")
    return data


@dataclass(frozen=True)
class EncodedInteractions:
    """Token matrices plus flattened (drug, protein, affinity) interactions."""

    drug_ids: tuple[str, ...]
    protein_ids: tuple[str, ...]
    drug_tokens: np.ndarray  # (n_drugs, smiles_len) int64
    protein_tokens: np.ndarray  # (n_proteins, protein_len) int64
    pairs: np.ndarray  # (m, 2) int64 columns: drug index, protein index
    affinities: np.ndarray  # (m,) float64

    def __len__(self) -> int:
        return self.pairs.shape[0]

    def subset(self, indices) -> "EncodedInteractions":
        idx = np.asarray(indices, dtype=np.int64)
        return EncodedInteractions(
            drug_ids=self.drug_ids,
            protein_ids=self.protein_ids,
            drug_tokens=self.drug_tokens,
            protein_tokens=self.protein_tokens,
            pairs=self.pairs[idx],
            affinities=self.affinities[idx],
        )


def encode_dataset(
    raw: RawDataset,
    smiles_len: int = vocab_mod.SMILES_MAX_LEN,
    protein_len: int = vocab_mod.PROTEIN_MAX_LEN,
    apply_transform: bool = False,
    on_unknown: int | None = None,
) -> EncodedInteractions:
    """Label-encode every drug and protein and flatten the measured cells.

    ``apply_transform`` runs :func:`kiba_transform` over the affinities; leave
    it off for distributions that ship pre-transformed scores.
    """
    smiles_vocab = vocab_mod.smiles_vocabulary()
    protein_vocab = vocab_mod.protein_vocabulary()
    drug_tokens = vocab_mod.encode_many(
        [s for _, s in raw.drugs], smiles_vocab, smiles_len, on_unknown=on_unknown
    )
    protein_tokens = vocab_mod.encode_many(
        [s for _, s in raw.proteins], protein_vocab, protein_len, on_unknown=on_unknown
    )
    pairs, affinities = interaction_arrays(raw)
    if apply_transform:
        affinities = kiba_transform(affinities)
    return EncodedInteractions(
        drug_ids=tuple(d for d, _ in raw.drugs),
        protein_ids=tuple(p for p, _ in raw.proteins),
        drug_tokens=drug_tokens,
        protein_tokens=protein_tokens,
        pairs=pairs,
        affinities=affinities,
    )
