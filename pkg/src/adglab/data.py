"""Annotated human-object pairs and the line-delimited dataset format."""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .models import BranchInputs

Box = tuple[float, float, float, float]


@dataclass
class Instance:
    instance_id: int
    image_id: int
    human_box: Box
    object_box: Box
    object_label: int
    predicate_labels: tuple[int, ...]
    human_features: np.ndarray = field(repr=False)
    union_features: np.ndarray = field(repr=False)
    spatial_features: np.ndarray = field(repr=False)
    subject_label: int = 0

    def __post_init__(self):
        if not self.predicate_labels:
            raise ValueError(f"instance {self.instance_id} has no predicate labels")
        self.predicate_labels = tuple(sorted(set(int(p) for p in self.predicate_labels)))
        for box in (self.human_box, self.object_box):
            if not (box[2] > box[0] and box[3] > box[1]):
                raise ValueError(f"instance {self.instance_id} has a degenerate box {box}")

    @property
    def categories(self) -> set[tuple[int, int]]:
        """(predicate, object) triplet categories carried by this pair."""
        return {(p, self.object_label) for p in self.predicate_labels}

    def to_record(self) -> dict:
        return {
            "instance_id": self.instance_id,
            "image_id": self.image_id,
            "subject_label": self.subject_label,
            "human_box": list(self.human_box),
            "object_box": list(self.object_box),
            "object_label": self.object_label,
            "predicate_labels": list(self.predicate_labels),
            "human_features": self.human_features.tolist(),
            "union_features": self.union_features.tolist(),
            "spatial_features": self.spatial_features.tolist(),
        }

    @classmethod
    def from_record(cls, r: dict) -> "Instance":
        return cls(
            instance_id=int(r["instance_id"]),
            image_id=int(r["image_id"]),
            subject_label=int(r.get("subject_label", 0)),
            human_box=tuple(float(v) for v in r["human_box"]),
            object_box=tuple(float(v) for v in r["object_box"]),
            object_label=int(r["object_label"]),
            predicate_labels=tuple(int(v) for v in r["predicate_labels"]),
            human_features=np.asarray(r["human_features"], dtype=np.float64),
            union_features=np.asarray(r["union_features"], dtype=np.float64),
            spatial_features=np.asarray(r["spatial_features"], dtype=np.float64),
        )


def stack_inputs(instances: Sequence[Instance]) -> BranchInputs:
    return BranchInputs(
        human=np.stack([x.human_features for x in instances]),
        union=np.stack([x.union_features for x in instances]),
        spatial=np.stack([x.spatial_features for x in instances]),
    )


def multi_hot(instances: Sequence[Instance], n_predicates: int) -> np.ndarray:
    y = np.zeros((len(instances), n_predicates))
    for r, x in enumerate(instances):
        y[r, list(x.predicate_labels)] = 1.0
    return y


def category_set(instances: Iterable[Instance]) -> set[tuple[int, int]]:
    cats: set[tuple[int, int]] = set()
    for x in instances:
        cats |= x.categories
    return cats


def atomic_write(path, data: bytes) -> None:
    """Write via a temp file in the same directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dumps_instances(instances: Iterable[Instance]) -> bytes:
    lines = [json.dumps(x.to_record(), sort_keys=True) for x in instances]
    return ("\n".join(lines) + "\n").encode() if lines else b""


def write_instances(path, instances: Iterable[Instance]) -> str:
    """Write a JSONL dataset file and return its sha256 checksum."""
    payload = dumps_instances(instances)
    atomic_write(path, payload)
    return hashlib.sha256(payload).hexdigest()


def read_instances(path) -> list[Instance]:
    out = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(Instance.from_record(json.loads(line)))
    return out


def file_checksum(path) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()
