"""Three-branch predicate predictor and the adversarial discriminator heads.

The union branch is an MLP extractor ``F`` (ReLU hidden layer, ReLU or
sigmoid output) followed by a linear head; the human and spatial branches are
linear heads over features that are object-invariant by construction. Discriminators read the union
feature ``f_u`` (or the first hidden layer when tapped ``pre_tower``).
"""

from __future__ import annotations

import io
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad

CHECKPOINT_VERSION = 1

VARIANT_DISC = {
    "none": None,
    "adg_kld": "adg",
    "cadg_kld": "cadg_kld",
    "deepc": "cadg_kld",
    "cadg_jsd": "cadg_jsd",
}


@dataclass
class ModelConfig:
    n_predicates: int
    n_objects: int
    union_dim: int
    human_dim: int
    spatial_dim: int
    hidden: int = 64
    feature_dim: int = 64
    emb_dim: int = 50
    disc_hidden: int = 0
    variant: str = "none"
    tap: str = "pre_head"
    feature_act: str = "relu"

    def __post_init__(self):
        if self.feature_act not in ("relu", "sigmoid"):
            raise ValueError(f"unknown feature activation {self.feature_act!r}")
        if self.variant not in VARIANT_DISC:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.tap not in ("pre_head", "pre_tower"):
            raise ValueError(f"unknown tap point {self.tap!r}")

    @property
    def disc_kind(self):
        return VARIANT_DISC[self.variant]

    @property
    def tap_dim(self) -> int:
        return self.feature_dim if self.tap == "pre_head" else self.hidden


@dataclass
class BranchInputs:
    """Batched branch inputs, one row per human-object pair."""

    human: np.ndarray
    union: np.ndarray
    spatial: np.ndarray

    def __len__(self):
        return len(self.union)

    def subset(self, idx) -> "BranchInputs":
        return BranchInputs(self.human[idx], self.union[idx], self.spatial[idx])


@dataclass
class PredictionScores:
    s_h: np.ndarray
    s_u: np.ndarray
    s_sp: np.ndarray

    @property
    def triplet_score(self) -> np.ndarray:
        return (self.s_h + self.s_u) * self.s_sp

    @property
    def hsp_score(self) -> np.ndarray:
        return self.s_h * self.s_sp


def _dense(rng, fan_in, fan_out):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=(fan_in, fan_out)), np.zeros(fan_out)


@dataclass
class ModelParameters:
    config: ModelConfig
    arrays: dict = field(default_factory=dict)

    MAIN_PREFIXES = ("F.", "head_")

    @property
    def main_names(self) -> list[str]:
        return [k for k in self.arrays if k.startswith(self.MAIN_PREFIXES)]

    @property
    def disc_names(self) -> list[str]:
        return [k for k in self.arrays if k.startswith(("D.", "emb_"))]

    def leaves(self, names=None) -> dict[str, ad.Tensor]:
        """Fresh graph leaves; only ``names`` (default: all) track gradients."""
        track = set(self.arrays if names is None else names)
        return {k: ad.Tensor(v, requires_grad=k in track) for k, v in self.arrays.items()}

    def copy(self) -> "ModelParameters":
        return ModelParameters(self.config, {k: v.copy() for k, v in self.arrays.items()})


def init_params(cfg: ModelConfig, rng: np.random.Generator) -> ModelParameters:
    a = {}
    a["F.W1"], a["F.b1"] = _dense(rng, cfg.union_dim, cfg.hidden)
    a["F.W2"], a["F.b2"] = _dense(rng, cfg.hidden, cfg.feature_dim)
    for name, dim in (("u", cfg.feature_dim), ("h", cfg.human_dim), ("sp", cfg.spatial_dim)):
        w, b = _dense(rng, dim, cfg.n_predicates)
        a[f"head_{name}.W"], a[f"head_{name}.b"] = w * 0.1, b

    kind = cfg.disc_kind
    if kind is not None:
        d_in = cfg.tap_dim
        if kind in ("cadg_kld", "cadg_jsd"):
            a["emb_pred"] = rng.uniform(-0.1, 0.1, size=(cfg.n_predicates, cfg.emb_dim))
            d_in += cfg.emb_dim
        if kind == "cadg_jsd":
            a["emb_obj"] = rng.uniform(-0.1, 0.1, size=(cfg.n_objects, cfg.emb_dim))
            d_in += cfg.emb_dim
        d_out = 1 if kind == "cadg_jsd" else cfg.n_objects
        if cfg.disc_hidden:
            a["D.W0"], a["D.b0"] = _dense(rng, d_in, cfg.disc_hidden)
            d_in = cfg.disc_hidden
        w, b = _dense(rng, d_in, d_out)
        a["D.W"], a["D.b"] = w * 0.1, b
    return ModelParameters(cfg, a)


def _linear(x, P, prefix):
    return ad.add(ad.matmul(x, P[prefix + "W"]), P[prefix + "b"])


def forward(P: dict, x: BranchInputs, cfg: ModelConfig) -> dict:
    """Branch logits plus the tapped feature, all as graph tensors."""
    u = ad.constant(x.union)
    h1 = ad.relu(ad.add(ad.matmul(u, P["F.W1"]), P["F.b1"]))
    act = ad.relu if cfg.feature_act == "relu" else ad.sigmoid
    f_u = act(ad.add(ad.matmul(h1, P["F.W2"]), P["F.b2"]))
    return {
        "logit_u": _linear(f_u, P, "head_u."),
        "logit_h": _linear(ad.constant(x.human), P, "head_h."),
        "logit_sp": _linear(ad.constant(x.spatial), P, "head_sp."),
        "f_u": f_u,
        "tap": f_u if cfg.tap == "pre_head" else h1,
    }


def _check_inputs(x: BranchInputs, cfg: ModelConfig):
    for name, arr, dim in (("human", x.human, cfg.human_dim), ("union", x.union, cfg.union_dim),
                           ("spatial", x.spatial, cfg.spatial_dim)):
        if arr.ndim != 2 or arr.shape[1] != dim:
            raise ValueError(f"{name} features have shape {arr.shape}, expected (n, {dim})")


def predict(params: ModelParameters, x: BranchInputs) -> PredictionScores:
    _check_inputs(x, params.config)
    out = forward(params.leaves([]), x, params.config)
    return PredictionScores(
        s_h=ad._sigmoid(out["logit_h"].data),
        s_u=ad._sigmoid(out["logit_u"].data),
        s_sp=ad._sigmoid(out["logit_sp"].data),
    )


def features(params: ModelParameters, x: BranchInputs) -> np.ndarray:
    _check_inputs(x, params.config)
    return forward(params.leaves([]), x, params.config)["tap"].data


# --- discriminator heads --------------------------------------------------

def _disc_body(P, z):
    if "D.W0" in P:
        z = ad.relu(ad.add(ad.matmul(z, P["D.W0"]), P["D.b0"]))
    return ad.add(ad.matmul(z, P["D.W"]), P["D.b"])


def _check_ids(ids, n, what):
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= n):
        raise IndexError(f"{what} id out of range [0, {n})")
    return ids


def adg_logits(P, f) -> ad.Tensor:
    return _disc_body(P, f)


def cadg_kld_logits(P, f, pred_ids, cfg: ModelConfig) -> ad.Tensor:
    pred_ids = _check_ids(pred_ids, cfg.n_predicates, "predicate")
    return _disc_body(P, ad.concat([f, ad.take(P["emb_pred"], pred_ids)], axis=1))


def cadg_jsd_logit(P, f, obj_ids, pred_ids, cfg: ModelConfig) -> ad.Tensor:
    obj_ids = _check_ids(obj_ids, cfg.n_objects, "object")
    pred_ids = _check_ids(pred_ids, cfg.n_predicates, "predicate")
    z = ad.concat([f, ad.take(P["emb_obj"], obj_ids), ad.take(P["emb_pred"], pred_ids)], axis=1)
    out = _disc_body(P, z)
    return ad.sum_(out, axis=1)


def _as_batch(f):
    f = np.asarray(f, dtype=np.float64)
    return ad.constant(f[None, :] if f.ndim == 1 else f)


def discriminate_adg(params: ModelParameters, f_u) -> np.ndarray:
    P = params.leaves([])
    p = ad.softmax(adg_logits(P, _as_batch(f_u)), axis=1).data
    return p[0] if np.ndim(f_u) == 1 else p


def discriminate_cadg_kld(params: ModelParameters, f_u, predicate_id) -> np.ndarray:
    P = params.leaves([])
    f = _as_batch(f_u)
    ids = np.broadcast_to(np.asarray(predicate_id), (f.shape[0],))
    p = ad.softmax(cadg_kld_logits(P, f, ids, params.config), axis=1).data
    return p[0] if np.ndim(f_u) == 1 else p


def discriminate_cadg_jsd(params: ModelParameters, f_u, object_id, predicate_id) -> np.ndarray:
    P = params.leaves([])
    f = _as_batch(f_u)
    n = f.shape[0]
    obj = np.broadcast_to(np.asarray(object_id), (n,))
    pred = np.broadcast_to(np.asarray(predicate_id), (n,))
    p = ad._sigmoid(cadg_jsd_logit(P, f, obj, pred, params.config).data)
    return p[0] if np.ndim(f_u) == 1 else p


# --- checkpoints ----------------------------------------------------------

def save_checkpoint(params: ModelParameters, path) -> None:
    import json

    buf = io.BytesIO()
    meta = json.dumps({"version": CHECKPOINT_VERSION, "config": asdict(params.config)})
    np.savez(buf, __meta__=np.frombuffer(meta.encode(), dtype=np.uint8), **params.arrays)
    # temp file plus rename so a crash never leaves a truncated checkpoint
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp")
    tmp.write_bytes(buf.getvalue())
    os.replace(tmp, path)


def load_checkpoint(path) -> ModelParameters:
    import json

    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(bytes(z["__meta__"]).decode())
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
        arrays = {k: z[k].copy() for k in z.files if k != "__meta__"}
    return ModelParameters(ModelConfig(**meta["config"]), arrays)
