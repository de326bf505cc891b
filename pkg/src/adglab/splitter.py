"""Category-disjoint split construction for novel-interaction evaluation.

Pipeline: merge duplicate annotations of the same human-object pair, carve a
novel test split whose (predicate, object) categories never occur in the
seen pool, then carve a category-disjoint ``testval`` from the seen pool and
split the rest i.i.d. into ``train`` / ``trainval``.
"""

from __future__ import annotations

import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field

import numpy as np

from .data import Instance, category_set
from .datagen import make_rng

log = logging.getLogger(__name__)


class SplitInvariantError(RuntimeError):
    pass


def iou(a, b) -> float:
    iw = min(a[2], b[2]) - max(a[0], b[0])
    ih = min(a[3], b[3]) - max(a[1], b[1])
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    area_a = (a[2] - a[0]) * (a[3] - a[1])
    area_b = (b[2] - b[0]) * (b[3] - b[1])
    return inter / (area_a + area_b - inter)


def _area(box) -> float:
    return (box[2] - box[0]) * (box[3] - box[1])


def merge_pairs(annotations: list[Instance], iou_threshold: float = 0.7) -> list[Instance]:
    """Fold annotations of the same pair into one multi-predicate instance.

    Two annotations in one image are linked when their object labels match and
    both the human-box and object-box IoU reach ``iou_threshold``; linked
    components merge transitively. The merged instance keeps the boxes, ids
    and features of the component's first member in input order.
    """
    if not 0 < iou_threshold <= 1:
        raise ValueError("iou_threshold must lie in (0, 1]")
    for x in annotations:
        if _area(x.human_box) <= 0 or _area(x.object_box) <= 0:
            raise ValueError(f"instance {x.instance_id} has a zero-area box")

    parent = list(range(len(annotations)))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    by_image: dict[int, list[int]] = defaultdict(list)
    for n, x in enumerate(annotations):
        by_image[x.image_id].append(n)
    for members in by_image.values():
        for a_pos, a in enumerate(members):
            xa = annotations[a]
            for b in members[a_pos + 1:]:
                xb = annotations[b]
                if xa.object_label != xb.object_label:
                    continue
                if iou(xa.human_box, xb.human_box) >= iou_threshold and iou(xa.object_box, xb.object_box) >= iou_threshold:
                    ra, rb = find(a), find(b)
                    if ra != rb:
                        parent[max(ra, rb)] = min(ra, rb)

    groups: dict[int, list[int]] = defaultdict(list)
    for n in range(len(annotations)):
        groups[find(n)].append(n)
    merged = []
    for root in sorted(groups):
        members = groups[root]
        first = annotations[members[0]]
        preds = set()
        for m in members:
            preds.update(annotations[m].predicate_labels)
        merged.append(
            Instance(
                first.instance_id, first.image_id, first.human_box, first.object_box, first.object_label,
                tuple(sorted(preds)), first.human_features, first.union_features, first.spatial_features,
                first.subject_label,
            )
        )
    return merged


@dataclass
class PartitionLog:
    dropped: list = field(default_factory=list)  # (instance_id, reason)
    warnings: list = field(default_factory=list)


def _category_groups(instances) -> dict[tuple[int, int], frozenset]:
    """Categories linked by a shared multi-predicate pair, closed transitively."""
    parent: dict = {}

    def find(c):
        parent.setdefault(c, c)
        while parent[c] != c:
            parent[c] = parent[parent[c]]
            c = parent[c]
        return c

    for x in instances:
        cats = sorted(x.categories)
        for c in cats[1:]:
            ra, rb = find(cats[0]), find(c)
            if ra != rb:
                parent[max(ra, rb)] = min(ra, rb)
        find(cats[0])
    members: dict = defaultdict(set)
    for c in parent:
        members[find(c)].add(c)
    return {c: frozenset(members[find(c)]) for c in parent}


# top-up may take a predicate past its own budget by at most this factor
TOPUP_CAP = 2.0


def _choose_held_out_objects(instances, fraction, rng, plog: PartitionLog,
                             strict_objects: bool = False) -> set[tuple[int, int]]:
    counts: dict[int, Counter] = defaultdict(Counter)
    for x in instances:
        for p in x.predicate_labels:
            counts[p][x.object_label] += 1
    groups = _category_groups(instances)
    # one shared object priority keeps related categories on one side
    all_objs = sorted({x.object_label for x in instances})
    priority = {o: r for r, o in enumerate(all_objs[i] for i in rng.permutation(len(all_objs)))}

    held: set[tuple[int, int]] = set()
    target = {p: fraction * sum(c.values()) for p, c in counts.items()}
    acc = Counter()

    by_obj: dict[int, set] = defaultdict(set)
    for q in counts:
        for o in counts[q]:
            by_obj[o].add(q)

    def admissible(group, cap=1.0):
        trial = held | group
        # every predicate keeps a seen category, and so does every object
        # that has more than one (or every object, when strict)
        for q in {c[0] for c in group}:
            if all((q, o) in trial for o in counts[q]):
                return False
        for o in {c[1] for c in group}:
            if (strict_objects or len(by_obj[o]) > 1) and all((q, o) in trial for q in by_obj[o]):
                return False
        new = [c for c in group if c not in held]
        extra = Counter()
        for q, o in new:
            extra[q] += counts[q][o]
        return all(acc[q] + extra[q] <= cap * target[q] for q in extra)

    def take(group):
        for q, o in group:
            if (q, o) not in held:
                acc[q] += counts[q][o]
        held.update(group)

    starved = []
    for p in sorted(counts):
        objs = sorted(counts[p], key=priority.__getitem__)
        if len(objs) < 2:
            msg = f"predicate {p} co-occurs with a single object; kept entirely on the seen side"
            plog.warnings.append(msg)
            log.warning(msg)
            continue
        for o in objs:
            if (p, o) not in held and admissible(groups[(p, o)]):
                take(groups[(p, o)])
        if acc[p] == 0:
            starved.append(p)

    # predicates whose every category exceeds their own budget: hold out the
    # cheapest group while the overall held-out share stays within target
    total_target = sum(target.values())

    def cost(group):
        return sum(counts[q][o] for q, o in group if (q, o) not in held)

    for p in starved:
        if acc[p]:
            continue
        options = [groups[(p, o)] for o in counts[p] if admissible(groups[(p, o)], cap=float("inf"))]
        if not options:
            continue
        best = min(options, key=lambda g: (cost(g), sorted(g)))
        if sum(acc.values()) + cost(best) <= total_target:
            take(best)
        else:
            msg = f"predicate {p}: every held-out choice exceeds the budget; no novel categories"
            plog.warnings.append(msg)
            log.info(msg)

    # per-predicate budgets undershoot when categories are coarse; top up the
    # overall share with whichever group lands closest to the total target
    while True:
        gap = total_target - sum(acc.values())
        options = {groups[c] for q in counts for o in counts[q] if (c := (q, o)) not in held}
        options = [g for g in options if admissible(g, cap=TOPUP_CAP)]
        if not options:
            break
        best = min(options, key=lambda g: (abs(gap - cost(g)), sorted(g)))
        if abs(gap - cost(best)) >= abs(gap):
            break
        take(best)
    return held


def category_disjoint_partition(instances: list[Instance], fraction: float, seed: int,
                                strict_objects: bool = False):
    """Split into (kept, held_out) with disjoint categories and disjoint images.

    For each predicate, objects are held out until about ``fraction`` of that
    predicate's instances are covered; categories that share a multi-predicate
    pair are held out together. An instance is held out only when all of its
    categories are. Conflicts resolve toward the kept side: any held-out
    instance sharing a category with a kept instance moves over. Images that
    straddle both sides go to the side holding most of their instances (ties
    to kept); the minority pairs are dropped, since moving them would carry
    their categories across. With ``strict_objects`` no object loses its
    last kept category.
    """
    rng = make_rng(seed)
    plog = PartitionLog()
    held_cats = _choose_held_out_objects(instances, fraction, rng, plog, strict_objects)
    side = {x.instance_id: x.categories <= held_cats for x in instances}
    by_id = {x.instance_id: x for x in instances}
    dropped: set[int] = set()

    changed = True
    while changed:
        changed = False
        kept_cats = category_set(by_id[i] for i, h in side.items() if not h and i not in dropped)
        for i, h in side.items():
            if h and i not in dropped and by_id[i].categories & kept_cats:
                side[i] = False
                changed = True
        images: dict[int, list[int]] = defaultdict(list)
        for i in side:
            if i not in dropped:
                images[by_id[i].image_id].append(i)
        for img, ids in images.items():
            n_held = sum(side[i] for i in ids)
            if 0 < n_held < len(ids):
                changed = True
                keep_held = n_held > len(ids) - n_held
                for i in ids:
                    if side[i] != keep_held:
                        dropped.add(i)
                        where = "held-out" if keep_held else "seen"
                        plog.dropped.append((i, f"minority pair in {where}-majority image {img}"))

    kept = [x for x in instances if not side[x.instance_id] and x.instance_id not in dropped]
    held = [x for x in instances if side[x.instance_id] and x.instance_id not in dropped]
    return kept, held, plog


def novel_split(instances: list[Instance], fractions=(0.9, 0.1), seed: int = 0):
    """(seen_pool, novel_test, log) with the test share given by ``fractions[1]``."""
    seen, novel, plog = category_disjoint_partition(instances, fractions[1] / sum(fractions), seed)
    return seen, novel, plog


@dataclass
class SplitResult:
    train: list
    trainval: list
    testval: list
    test: list
    dropped: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    SPLITS = ("train", "trainval", "testval", "test")

    @property
    def category_sets(self) -> dict[str, set]:
        return {name: category_set(getattr(self, name)) for name in self.SPLITS}

    def image_sets(self) -> dict[str, set]:
        return {name: {x.image_id for x in getattr(self, name)} for name in self.SPLITS}

    def counts_table(self) -> dict:
        imgs = self.image_sets()
        return {
            name: {"images": len(imgs[name]), "instances": len(getattr(self, name))} for name in self.SPLITS
        }

    def violations(self) -> list[str]:
        c, im = self.category_sets, self.image_sets()
        out = []
        if (c["train"] | c["trainval"]) & c["testval"]:
            out.append("testval shares categories with train/trainval")
        if (c["train"] | c["trainval"] | c["testval"]) & c["test"]:
            out.append("test shares categories with the seen splits")
        if (im["train"] | im["trainval"] | im["testval"]) & im["test"]:
            out.append("test shares images with the seen splits")
        if (im["train"] | im["trainval"]) & im["testval"]:
            out.append("testval shares images with train/trainval")
        if c["train"] != c["trainval"]:
            out.append("train and trainval category sets differ")
        return out

    def check(self) -> None:
        v = self.violations()
        if v:
            raise SplitInvariantError("; ".join(v))


def _equalize_categories(train, trainval, plog: PartitionLog):
    """Make cats(train) == cats(trainval) by moving or dropping instances."""
    train, trainval = list(train), list(trainval)
    while True:
        train_cats = category_set(train)
        stray = [x for x in trainval if not x.categories <= train_cats]
        if stray:
            ids = {x.instance_id for x in stray}
            trainval = [x for x in trainval if x.instance_id not in ids]
            train.extend(stray)
            continue
        missing = train_cats - category_set(trainval)
        if not missing:
            return train, trainval
        support = Counter(c for x in train for c in x.categories)
        cat = min(missing)
        donor = next(
            (x for x in train if cat in x.categories and all(support[c] >= 2 for c in x.categories)), None
        )
        if donor is not None:
            train = [x for x in train if x.instance_id != donor.instance_id]
            trainval.append(donor)
        else:
            victim = next(x for x in train if cat in x.categories)
            train = [x for x in train if x.instance_id != victim.instance_id]
            plog.dropped.append((victim.instance_id, f"category {cat} too rare to appear in both train and trainval"))


def validation_carveout(seen_pool: list[Instance], seed: int, testval_fraction: float = 1 / 9,
                        trainval_fraction: float = 1 / 8):
    """(train, trainval, testval, log) from the seen pool."""
    plog = PartitionLog()
    if len(category_set(seen_pool)) < 2:
        msg = "seen pool has fewer than two categories; testval left empty"
        plog.warnings.append(msg)
        log.warning(msg)
        rest, testval = list(seen_pool), []
    else:
        # strict: an object whose only seen category went to testval would be
        # unseen in train, leaking novel objects into the novel test
        rest, testval, sub = category_disjoint_partition(seen_pool, testval_fraction, seed + 1,
                                                         strict_objects=True)
        plog.dropped += sub.dropped
        plog.warnings += sub.warnings
    rng = make_rng(seed + 2)
    perm = rng.permutation(len(rest))
    n_tv = int(round(trainval_fraction * len(rest)))
    tv_idx = set(perm[:n_tv].tolist())
    train = [x for n, x in enumerate(rest) if n not in tv_idx]
    trainval = [x for n, x in enumerate(rest) if n in tv_idx]
    train, trainval = _equalize_categories(train, trainval, plog)
    return train, trainval, testval, plog


def build_splits(instances: list[Instance], seed: int = 0, test_fraction: float = 0.1,
                 testval_fraction: float = 1 / 9, trainval_fraction: float = 1 / 8,
                 iou_threshold: float | None = 0.7) -> SplitResult:
    """Full pipeline: merge duplicates, novel split, validation carve-out, checks."""
    merged = merge_pairs(instances, iou_threshold) if iou_threshold is not None else list(instances)
    seen, test, plog = novel_split(merged, (1 - test_fraction, test_fraction), seed)
    train, trainval, testval, vlog = validation_carveout(seen, seed, testval_fraction, trainval_fraction)
    res = SplitResult(train, trainval, testval, test, plog.dropped + vlog.dropped, plog.warnings + vlog.warnings)
    res.check()
    return res


def unrel_filter(instances, split: int, train_objects, train_predicates):
    """Select instances per the three auxiliary-evaluation subsets.

    1: human subject, seen objects, seen predicates; 2: human subject, seen
    predicates; 3: seen predicates with any subject.
    """
    train_objects, train_predicates = set(train_objects), set(train_predicates)
    out = []
    for x in instances:
        if not set(x.predicate_labels) <= train_predicates:
            continue
        if split in (1, 2) and x.subject_label != 0:
            continue
        if split == 1 and x.object_label not in train_objects:
            continue
        out.append(x)
    return out
