"""Cross-validation folds and same-organ pair scheduling."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

N_FOLDS = 5


class TooFewPatients(ValueError):
    pass


@dataclass(frozen=True)
class Fold:
    train: tuple[str, ...]
    val: tuple[str, ...]
    test: tuple[str, ...]


@dataclass(frozen=True)
class FoldSpec:
    folds: tuple[Fold, ...]
    # patients that land in more than one test split when the count is not a multiple of 5
    repeated_test: tuple[str, ...] = ()

    def to_json(self) -> dict:
        return {"folds": [{k: list(v) for k, v in asdict(f).items()} for f in self.folds],
                "repeated_test": list(self.repeated_test)}

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_json(), indent=1))
        return path


def load_folds(path) -> FoldSpec:
    raw = json.loads(Path(path).read_text())
    folds = tuple(Fold(tuple(f["train"]), tuple(f["val"]), tuple(f["test"])) for f in raw["folds"])
    return FoldSpec(folds, tuple(raw.get("repeated_test", ())))


def split_sizes(n: int) -> tuple[int, int, int]:
    """(train, val, test) sizes; 34 patients give 24 / 3 / 7."""
    n_test = math.ceil(n / N_FOLDS)
    n_val = max(1, round(3 * n / 34))
    return n - n_test - n_val, n_val, n_test


def make_folds(patient_ids, seed: int = 0) -> FoldSpec:
    """Shuffle the patients and cut five consecutive (wrapping) test windows.

    The validation window follows each test window; everything else trains.
    """
    ids = list(patient_ids)
    if len(set(ids)) != len(ids):
        raise ValueError("patient ids must be unique")
    if len(ids) < 10:
        raise TooFewPatients(f"{len(ids)} patients; at least 10 are required")
    n = len(ids)
    _, n_val, n_test = split_sizes(n)
    order = [ids[i] for i in np.random.default_rng(seed).permutation(n)]
    folds = []
    test_count: dict[str, int] = {}
    for k in range(N_FOLDS):
        start = k * n_test
        test = [order[(start + i) % n] for i in range(n_test)]
        val = [order[(start + n_test + i) % n] for i in range(n_val)]
        taken = set(test) | set(val)
        train = [p for p in order if p not in taken]
        for p in test:
            test_count[p] = test_count.get(p, 0) + 1
        folds.append(Fold(tuple(train), tuple(val), tuple(test)))
    repeated = tuple(p for p in order if test_count.get(p, 0) > 1)
    return FoldSpec(tuple(folds), repeated)


def pair_scheduler(fold: Fold, organs, phase: str, seed: int = 0, epoch: int = 0,
                   split: str | None = None) -> list[tuple[str, str, str]]:
    """Ordered same-organ pairs ``(patient_a, patient_b, organ)``.

    ``train`` uses the training split, includes self-pairs and is shuffled
    with ``seed + epoch``. ``val`` lists every validation pair, self-pairs
    included, in a fixed order. ``eval`` uses the test split (or ``split``),
    excludes self-pairs and keeps a fixed order.
    """
    if phase == "train":
        patients = getattr(fold, split or "train")
        pairs = [(a, b, o) for o in organs for a in patients for b in patients]
        order = np.random.default_rng(seed + epoch).permutation(len(pairs))
        return [pairs[i] for i in order]
    if phase == "val":
        patients = getattr(fold, split or "val")
        return [(a, b, o) for o in organs for a in patients for b in patients]
    if phase == "eval":
        patients = getattr(fold, split or "test")
        return [(a, b, o) for o in organs for a in patients for b in patients if a != b]
    raise ValueError(f"unknown phase {phase!r}")


def pair_id(pair: tuple[str, str, str]) -> str:
    a, b, o = pair
    return f"{o}:{a}->{b}"
