"""Database manifests and content-exclusive k-fold splits."""
from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DuplicateName, MissingColumn, MosOutOfDeclaredRange, TooManyFolds
from .rating import MosRange

COLUMNS = ("cloud_name", "ply_path", "mos", "group_id")


@dataclass(frozen=True)
class ManifestEntry:
    cloud_name: str
    ply_path: Path
    mos: float
    group_id: str


@dataclass(frozen=True)
class Manifest:
    entries: tuple
    score_range: MosRange
    database_name: str = "database"

    def __post_init__(self):
        seen = set()
        for e in self.entries:
            if e.cloud_name in seen:
                raise DuplicateName(f"duplicate cloud_name {e.cloud_name!r}")
            seen.add(e.cloud_name)
            if not e.group_id:
                raise ValueError(f"{e.cloud_name}: empty group_id")
            if not self.score_range.contains(e.mos):
                raise MosOutOfDeclaredRange(
                    f"{e.cloud_name}: mos {e.mos} outside [{self.score_range.m}, {self.score_range.M}]")

    @property
    def groups(self) -> list[str]:
        """Distinct group ids in first-appearance order."""
        return list(dict.fromkeys(e.group_id for e in self.entries))

    def entries_in(self, groups) -> list[ManifestEntry]:
        groups = set(groups)
        return [e for e in self.entries if e.group_id in groups]

    def by_name(self) -> dict[str, ManifestEntry]:
        return {e.cloud_name: e for e in self.entries}


def meta_path_for(csv_path: str | os.PathLike) -> Path:
    p = Path(csv_path)
    return p.with_name(p.stem + ".meta.json")


def load_manifest(path: str | os.PathLike) -> Manifest:
    """Read ``<name>.csv`` and its ``<name>.meta.json`` sidecar.

    Relative ``ply_path`` values are resolved against the CSV's directory.
    """
    path = Path(path)
    meta_file = meta_path_for(path)
    if not meta_file.is_file():
        meta_file = path.parent / "meta.json"
    if not meta_file.is_file():
        raise MissingColumn(f"no sidecar metadata next to {path} (expected {meta_path_for(path).name})")
    meta = json.loads(meta_file.read_text())
    for key in ("mos_min", "mos_max"):
        if key not in meta:
            raise MissingColumn(f"{meta_file}: missing {key!r}")
    score_range = MosRange(float(meta["mos_min"]), float(meta["mos_max"]))
    entries = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise MissingColumn(f"{path}: missing column(s) {', '.join(missing)}")
        for row in reader:
            ply = Path(row["ply_path"])
            if not ply.is_absolute():
                ply = path.parent / ply
            entries.append(ManifestEntry(row["cloud_name"].strip(), ply, float(row["mos"]), row["group_id"].strip()))
    return Manifest(tuple(entries), score_range, str(meta.get("database_name", path.stem)))


def write_manifest(manifest: Manifest, path: str | os.PathLike) -> None:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(COLUMNS)
        for e in manifest.entries:
            ply = Path(e.ply_path)
            try:
                ply = ply.relative_to(path.parent)
            except ValueError:
                pass
            w.writerow([e.cloud_name, str(ply), repr(float(e.mos)), e.group_id])
    meta = {"database_name": manifest.database_name,
            "mos_min": manifest.score_range.m, "mos_max": manifest.score_range.M}
    meta_path_for(path).write_text(json.dumps(meta, indent=2) + "\n")


@dataclass(frozen=True)
class FoldSplit:
    fold_index: int
    train_groups: frozenset
    test_groups: frozenset

    def __post_init__(self):
        if self.train_groups & self.test_groups:
            raise ValueError("train and test groups overlap")
        if not self.test_groups:
            raise ValueError("test split is empty")


def group_kfold(manifest: Manifest, k: int, seed: int = 0) -> list[FoldSplit]:
    """Seeded permutation of groups cut into ``k`` test blocks of near-equal size."""
    groups = manifest.groups
    if k < 2:
        raise ValueError("k must be >= 2")
    if k > len(groups):
        raise TooManyFolds(f"{k} folds requested but only {len(groups)} groups")
    perm = np.random.default_rng(seed).permutation(len(groups))
    shuffled = [groups[i] for i in perm]
    blocks = np.array_split(np.arange(len(groups)), k)
    everything = frozenset(groups)
    folds = []
    for i, block in enumerate(blocks):
        test = frozenset(shuffled[j] for j in block)
        folds.append(FoldSplit(i, everything - test, test))
    return folds
