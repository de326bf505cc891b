"""Deterministic synthetic human-object interaction data.

Objects act as domains and predicates as classes. Each predicate co-occurs
with a fixed subset of objects, and (predicate, object) category frequencies
follow a Zipf law, giving the long-tailed, sparse co-occurrence that lets a
classifier lean on object identity.

Union-box features are ``R_obj @ (signal_pred + noise)``. ``R_obj`` is an
orthogonal transform that leaves the first ``invariant_dim`` coordinates
alone and rotates the rest by ``expm(nuisance_strength * L_obj)`` with
``L_obj`` skew-symmetric. At strength 0 every object sees the same
distribution; at higher strengths the rotated block encodes the object,
while the untouched block still carries an object-invariant predicate
signal. A component shared by all predicates (``nuisance_common``) sits in
the rotated block, so the rotation reveals the object for every category.
Human and spatial features depend on the predicate only.

All randomness flows from a Philox counter-based generator seeded by
``GeneratorConfig.seed``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.linalg import expm

from .data import Instance


@dataclass
class GeneratorConfig:
    n_objects: int = 12
    n_predicates: int = 10
    pairs_per_predicate: int = 6
    zipf_exponent: float = 1.0
    total_instances: int = 3000
    noise_std: float = 0.5
    nuisance_strength: float = 0.8
    invariant_dim: int = 8
    nuisance_dim: int = 8
    invariant_scale: float = 2.0
    nuisance_scale: float = 1.0
    nuisance_common: float = 4.0
    human_dim: int = 8
    human_scale: float = 1.0
    human_noise: float = 2.0
    spatial_jitter: float = 1.0
    spatial_groups: int = 0
    multilabel_prob: float = 0.1
    max_pairs_per_image: int = 3
    mixed_image_prob: float = 0.1
    duplicate_jitter: float = 0.02
    archetypes: list | None = None
    seed: int = 7

    def __post_init__(self):
        if self.n_objects < 2 or self.n_predicates < 2:
            raise ValueError("need at least 2 objects and 2 predicates")
        if not 2 <= self.pairs_per_predicate <= self.n_objects:
            raise ValueError("pairs_per_predicate must lie in [2, n_objects]")
        if self.zipf_exponent < 0:
            raise ValueError("zipf_exponent must be nonnegative")
        if not 0 <= self.nuisance_strength <= 1:
            raise ValueError("nuisance_strength must lie in [0, 1]")
        if self.total_instances < 1:
            raise ValueError("total_instances must be positive")
        if self.archetypes is not None and len(self.archetypes) != self.n_predicates:
            raise ValueError("need one spatial archetype per predicate")

    @property
    def union_dim(self) -> int:
        return self.invariant_dim + self.nuisance_dim

    @property
    def spatial_dim(self) -> int:
        return 6

    def to_dict(self) -> dict:
        return asdict(self)


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(int(seed)))


@dataclass
class World:
    """Fixed ground truth shared by every instance of one generated dataset."""

    cooccurrence: np.ndarray  # (K, M) bool
    category_weights: np.ndarray  # (K, M) probabilities, zero off-support
    union_signal: np.ndarray  # (K, union_dim)
    rotations: np.ndarray  # (M, union_dim, union_dim)
    human_signal: np.ndarray  # (K, human_dim)
    archetypes: np.ndarray  # (K, 3): dx, dy, log-scale of object relative to human
    companion: np.ndarray  # (K, M) partner predicate for multi-label pairs, -1 if none


def _random_unit_rows(rng, n, d):
    v = rng.standard_normal((n, d))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _object_rotation(rng, dim_inv, dim_nui, strength):
    a = rng.standard_normal((dim_nui, dim_nui))
    skew = a - a.T
    # normalise so strength 1 rotates by about pi/2 along the dominant plane
    skew *= (np.pi / 2) / np.abs(np.linalg.eigvals(skew)).max()
    r = np.eye(dim_inv + dim_nui)
    r[dim_inv:, dim_inv:] = expm(strength * skew)
    return r


def build_world(cfg: GeneratorConfig, rng: np.random.Generator) -> World:
    K, M = cfg.n_predicates, cfg.n_objects
    co = np.zeros((K, M), dtype=bool)
    # spread objects evenly so every object gets used before any repeats
    order = rng.permutation(M)
    cursor = 0
    for k in range(K):
        chosen: list[int] = []
        while len(chosen) < cfg.pairs_per_predicate:
            o = int(order[cursor % M])
            cursor += 1
            if o not in chosen:
                chosen.append(o)
            if cursor % M == 0:
                order = rng.permutation(M)
        co[k, chosen] = True

    cats = np.argwhere(co)
    ranks = rng.permutation(len(cats)) + 1
    w = np.zeros((K, M))
    w[cats[:, 0], cats[:, 1]] = ranks.astype(float) ** (-cfg.zipf_exponent)
    w /= w.sum()

    # a component shared by every predicate turns R_obj into an object cue
    common = _random_unit_rows(rng, 1, cfg.nuisance_dim)
    union_signal = np.concatenate(
        [
            cfg.invariant_scale * _random_unit_rows(rng, K, cfg.invariant_dim),
            cfg.nuisance_scale * _random_unit_rows(rng, K, cfg.nuisance_dim) + cfg.nuisance_common * common,
        ],
        axis=1,
    )
    rotations = np.stack(
        [_object_rotation(rng, cfg.invariant_dim, cfg.nuisance_dim, cfg.nuisance_strength) for _ in range(M)]
    )
    human_signal = cfg.human_scale * _random_unit_rows(rng, K, cfg.human_dim)
    if cfg.archetypes is not None:
        arche = np.asarray(cfg.archetypes, dtype=float)
    else:
        # predicates may share a spatial layout, so spatial cues separate groups only
        n_layouts = cfg.spatial_groups if cfg.spatial_groups > 0 else K
        layouts = np.column_stack([rng.uniform(-1.2, 1.2, n_layouts), rng.uniform(-1.2, 1.2, n_layouts),
                                   rng.uniform(-0.8, 0.8, n_layouts)])
        arche = layouts[np.arange(K) % n_layouts]
    # predicates of each object are paired off into disjoint couples; only
    # couples can co-occur on one pair, which keeps linked categories small
    companion = np.full((K, M), -1)
    for o in range(M):
        preds = rng.permutation(np.flatnonzero(co[:, o]))
        for a, b in zip(preds[0::2], preds[1::2]):
            companion[a, o], companion[b, o] = b, a
    return World(co, w, union_signal, rotations, human_signal, arche, companion)


def spatial_features(human_box, object_box) -> np.ndarray:
    hx1, hy1, hx2, hy2 = human_box
    ox1, oy1, ox2, oy2 = object_box
    hw, hh = hx2 - hx1, hy2 - hy1
    ow, oh = ox2 - ox1, oy2 - oy1
    dx = ((ox1 + ox2) - (hx1 + hx2)) / (2 * hw)
    dy = ((oy1 + oy2) - (hy1 + hy2)) / (2 * hh)
    iw = max(0.0, min(hx2, ox2) - max(hx1, ox1))
    ih = max(0.0, min(hy2, oy2) - max(hy1, oy1))
    inter = iw * ih
    iou = inter / (hw * hh + ow * oh - inter)
    return np.array([dx, dy, np.log(ow / hw), np.log(oh / hh), iou, inter / (ow * oh)])


def _boxes(rng, arche, jitter):
    cx, cy = rng.uniform(200, 440), rng.uniform(150, 330)
    hw, hh = rng.uniform(60, 120), rng.uniform(120, 220)
    human = (cx - hw / 2, cy - hh / 2, cx + hw / 2, cy + hh / 2)
    dx, dy, ls = arche + jitter * rng.standard_normal(3)
    scale = np.exp(ls)
    ow, oh = hw * scale * rng.uniform(0.8, 1.25), hh * scale * rng.uniform(0.8, 1.25)
    ocx, ocy = cx + dx * hw, cy + dy * hh
    obj = (ocx - ow / 2, ocy - oh / 2, ocx + ow / 2, ocy + oh / 2)
    return human, obj


def _jitter_box(rng, box, rel):
    x1, y1, x2, y2 = box
    w, h = x2 - x1, y2 - y1
    d = rel * rng.standard_normal(4) * np.array([w, h, w, h])
    return (x1 + d[0], y1 + d[1], x2 + d[2], y2 + d[3])


def generate(cfg: GeneratorConfig) -> tuple[list[Instance], np.ndarray]:
    """Raw annotations (one predicate each) plus the true co-occurrence matrix.

    Multi-predicate pairs are emitted as near-duplicate annotations within
    one image; :func:`adglab.splitter.merge_pairs` folds them back together.
    """
    rng = make_rng(cfg.seed)
    world = build_world(cfg, rng)
    K, M = cfg.n_predicates, cfg.n_objects
    flat = world.category_weights.ravel()
    counts = rng.multinomial(cfg.total_instances, flat)
    cells = np.repeat(np.arange(K * M), counts)
    cells = cells[rng.permutation(len(cells))]

    # pack pairs into images category by category; an image occasionally
    # continues into the next category of the same object
    cells = np.sort(cells, kind="stable")
    cells = cells[np.argsort(cells % M, kind="stable")]
    out: list[Instance] = []
    image_id, in_image, image_cap = 0, 0, int(rng.integers(1, cfg.max_pairs_per_image + 1))
    next_id, prev = 0, None
    for cell in cells:
        k, o = divmod(int(cell), M)
        if prev is not None:
            new_cat = cell != prev
            if (prev % M != o or in_image >= image_cap
                    or (new_cat and rng.random() >= cfg.mixed_image_prob)):
                image_id += 1
                in_image = 0
                image_cap = int(rng.integers(1, cfg.max_pairs_per_image + 1))
        prev = cell
        preds = [k]
        if world.companion[k, o] >= 0 and rng.random() < cfg.multilabel_prob:
            preds.append(int(world.companion[k, o]))
        signal = world.union_signal[preds].mean(axis=0)
        noise = cfg.noise_std * rng.standard_normal(cfg.union_dim)
        union = world.rotations[o] @ (signal + noise)
        human = world.human_signal[preds].mean(axis=0) + cfg.human_noise * rng.standard_normal(cfg.human_dim)
        hbox, obox = _boxes(rng, world.archetypes[k], cfg.spatial_jitter)
        sp = spatial_features(hbox, obox)
        for n, p in enumerate(preds):
            hb = hbox if n == 0 else _jitter_box(rng, hbox, cfg.duplicate_jitter)
            ob = obox if n == 0 else _jitter_box(rng, obox, cfg.duplicate_jitter)
            out.append(Instance(next_id, image_id, hb, ob, o, (p,), human, union, sp))
            next_id += 1
        in_image += 1
    return out, world.cooccurrence.copy()


def frequency_table(train, n_predicates: int, n_objects: int) -> np.ndarray:
    """(K, M) counts of positive (predicate, object) pairs."""
    table = np.zeros((n_predicates, n_objects), dtype=np.int64)
    for x in train:
        for p in x.predicate_labels:
            table[p, x.object_label] += 1
    return table
