"""Multi-seed variant comparison on the synthetic novel split.

One call generates a dataset per seed, splits it, trains every requested
variant with a matched step budget and scores trainval and novel test under
both the full triplet score and the union-free HSp score.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .datagen import GeneratorConfig, frequency_table, generate
from .metrics import frequency_scores, predcls_recall
from .splitter import build_splits
from .trainer import TrainConfig, score_instances, train

log = logging.getLogger(__name__)

VARIANTS = ("none", "deepc", "adg_kld", "cadg_kld", "cadg_jsd")
LABELS = {"frequency": "Frequency", "none": "Baseline", "deepc": "DeepC", "adg_kld": "ADG-KLD",
          "cadg_kld": "CADG-KLD", "cadg_jsd": "CADG-JSD"}


def _r1(scores, part) -> float:
    return predcls_recall(scores, [x.predicate_labels for x in part], (1,))[1]


@dataclass
class Comparison:
    """R@1 per (variant, seed); keys of ``scores`` are ``(split, scoring)``."""

    seeds: list
    results: dict = field(default_factory=dict)  # variant -> list of {(split, scoring): r1}
    seconds: float = 0.0

    def mean(self, variant: str, split: str, scoring: str = "triplet") -> float:
        return float(np.mean([r[(split, scoring)] for r in self.results[variant]]))

    def relative(self, variant: str, split: str) -> float:
        """Relative change of the seed-averaged R@1 against the baseline."""
        base = self.mean("none", split)
        return (self.mean(variant, split) - base) / base

    def union_contribution(self, variant: str, split: str = "test") -> float:
        """Seed-averaged full minus HSp R@1."""
        return self.mean(variant, split, "triplet") - self.mean(variant, split, "hsp")

    def table(self) -> str:
        cols = ("trainval", "test")
        lines = ["method    " + "".join(f"{c:>20s}" for c in cols) + "   union(test)"]
        for v in self.results:
            cells = []
            for c in cols:
                rel = "" if v in ("none", "frequency") else f" ({100 * self.relative(v, c):+5.1f}%)"
                cells.append(f"{self.mean(v, c):.4f}{rel}")
            union = "" if v == "frequency" else f"{self.union_contribution(v):+.4f}"
            lines.append(f"{LABELS.get(v, v):10s}" + "".join(f"{c:>20s}" for c in cells) + f"   {union}")
        return "\n".join(lines)


def compare_variants(variants=VARIANTS, seeds=range(5), generator: dict | None = None,
                     train_overrides: dict | None = None, lam: dict | None = None,
                     progress=None) -> Comparison:
    """Train each variant on each seed's split; every run gets the same step budget."""
    t0 = time.perf_counter()
    seeds = list(seeds)
    cmp = Comparison(seeds, {"frequency": [], **{v: [] for v in variants}})
    for seed in seeds:
        gcfg = GeneratorConfig(**{**(generator or {}), "seed": seed})
        raw, _ = generate(gcfg)
        sp = build_splits(raw, seed=seed)
        table = frequency_table(sp.train, gcfg.n_predicates, gcfg.n_objects)
        freq = {}
        for split in ("trainval", "test"):
            part = getattr(sp, split)
            s = frequency_scores(table, [x.object_label for x in part])
            freq[(split, "triplet")] = freq[(split, "hsp")] = _r1(s, part)
        cmp.results["frequency"].append(freq)
        for v in variants:
            kw = dict(train_overrides or {})
            if lam and v in lam:
                kw["lam"] = lam[v]
            cfg = TrainConfig(variant=v, seed=seed, **kw)
            params, _ = train(cfg, sp, gcfg.n_predicates, gcfg.n_objects)
            row = {}
            for split in ("trainval", "test"):
                part = getattr(sp, split)
                for scoring in ("triplet", "hsp"):
                    row[(split, scoring)] = _r1(score_instances(params, part, scoring), part)
            cmp.results[v].append(row)
            if progress is not None:
                progress(seed, v, row)
    cmp.seconds = time.perf_counter() - t0
    return cmp
