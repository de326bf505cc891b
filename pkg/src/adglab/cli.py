"""Command-line front end: gen, split, train, eval, verify-theorems, compare.

Experiment settings live in one YAML or JSON config with the sections
``generator``, ``split``, ``train`` and ``metrics``; flags carry only paths,
seeds and the thread count. Exit codes: 0 success, 1 validation error,
2 invariant violation, 3 numerical divergence.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

log = logging.getLogger("adglab")

EXIT_OK, EXIT_INVALID, EXIT_INVARIANT, EXIT_DIVERGED = 0, 1, 2, 3
SPLIT_NAMES = ("train", "trainval", "testval", "test")
COMPARE_ROWS = (("frequency", "Frequency"), ("none", "Baseline"), ("deepc", "DeepC"),
                ("adg_kld", "ADG-KLD"), ("cadg_kld", "CADG-KLD"), ("cadg_jsd", "CADG-JSD"))


class ConfigError(ValueError):
    pass


class InvariantViolation(RuntimeError):
    pass


# --- config -------------------------------------------------------------------

SPLIT_DEFAULTS = {"seed": 0, "test_fraction": 0.1, "testval_fraction": 1 / 9, "trainval_fraction": 1 / 8,
                  "iou_threshold": 0.7}
METRIC_DEFAULTS = {"any_hit": False, "scoring": "triplet"}


def _fields(cls) -> set[str]:
    return {f.name for f in dataclasses.fields(cls)}


def _check_keys(section: str, given: dict, allowed: set[str]) -> None:
    if not isinstance(given, dict):
        raise ConfigError(f"section {section!r} must be a mapping")
    unknown = sorted(set(given) - allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) in {section!r}: {', '.join(unknown)}")


def load_config(path: str | None) -> dict:
    """Parse and validate a config file; missing sections get defaults."""
    from .datagen import GeneratorConfig
    from .trainer import TrainConfig

    raw: dict = {}
    if path is not None:
        text = Path(path).read_text()
        if str(path).endswith((".yaml", ".yml")):
            import yaml

            raw = yaml.safe_load(text) or {}
        else:
            raw = json.loads(text)
    _check_keys("config", raw, {"generator", "split", "train", "metrics"})
    gen = dict(raw.get("generator") or {})
    split = dict(raw.get("split") or {})
    train = dict(raw.get("train") or {})
    metrics = dict(raw.get("metrics") or {})
    _check_keys("generator", gen, _fields(GeneratorConfig))
    _check_keys("split", split, set(SPLIT_DEFAULTS))
    _check_keys("train", train, _fields(TrainConfig))
    _check_keys("metrics", metrics, set(METRIC_DEFAULTS))
    for sub in ("main", "adversarial"):
        if sub in train:
            from .optim import SgdConfig

            _check_keys(f"train.{sub}", train[sub], _fields(SgdConfig))
    if metrics.get("scoring", "triplet") not in ("triplet", "hsp"):
        raise ConfigError("metrics.scoring must be 'triplet' or 'hsp'")
    return {"generator": gen, "split": {**SPLIT_DEFAULTS, **split}, "train": train,
            "metrics": {**METRIC_DEFAULTS, **metrics}}


def resolve_seed(flag: int | None, fallback: int) -> int:
    """--seed, then $ADGLAB_SEED, then the config value."""
    if flag is not None:
        return flag
    env = os.environ.get("ADGLAB_SEED")
    if env not in (None, ""):
        try:
            return int(env)
        except ValueError as exc:
            raise ConfigError(f"ADGLAB_SEED must be an integer, got {env!r}") from exc
    return fallback


def _dump_json(obj) -> bytes:
    return (json.dumps(obj, indent=1, sort_keys=True) + "\n").encode()


def _write(path, data: bytes) -> None:
    from .data import atomic_write

    atomic_write(path, data)


def _read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"missing file {path}") from exc


# --- commands -----------------------------------------------------------------

def cmd_gen(args) -> int:
    from .data import write_instances
    from .datagen import GeneratorConfig, generate

    cfg = load_config(args.config)
    gen = cfg["generator"]
    gen["seed"] = resolve_seed(args.seed, gen.get("seed", GeneratorConfig.seed))
    gcfg = GeneratorConfig(**gen)
    instances, co = generate(gcfg)
    out = Path(args.out)
    digest = write_instances(out, instances)
    meta = {"generator": gcfg.to_dict(), "n_predicates": gcfg.n_predicates, "n_objects": gcfg.n_objects,
            "cooccurrence": co.astype(int).tolist(), "n_annotations": len(instances), "sha256": digest}
    _write(out.with_name(out.name + ".meta.json"), _dump_json(meta))
    print(f"wrote {len(instances)} annotations to {out}")
    return EXIT_OK


def _dataset_meta(path: Path) -> dict:
    meta = _read_json(path.with_name(path.name + ".meta.json"))
    for key in ("n_predicates", "n_objects"):
        if key not in meta:
            raise ConfigError(f"dataset metadata lacks {key!r}")
    return meta


def cmd_split(args) -> int:
    from .data import read_instances, write_instances
    from .splitter import build_splits

    cfg = load_config(args.config)
    sp = cfg["split"]
    seed = resolve_seed(args.seed, sp["seed"])
    dataset = Path(args.dataset)
    meta = _dataset_meta(dataset)
    instances = read_instances(dataset)
    if not instances:
        raise ConfigError(f"{dataset} holds no instances")
    res = build_splits(instances, seed=seed, test_fraction=sp["test_fraction"],
                       testval_fraction=sp["testval_fraction"], trainval_fraction=sp["trainval_fraction"],
                       iou_threshold=sp["iou_threshold"])
    out = Path(args.out)
    checksums = {name: write_instances(out / f"{name}.jsonl", getattr(res, name)) for name in SPLIT_NAMES}
    manifest = {"seed": seed, "split": {**sp, "seed": seed}, "n_predicates": meta["n_predicates"],
                "n_objects": meta["n_objects"], "counts": res.counts_table(), "sha256": checksums,
                "dropped": [[int(i), r] for i, r in res.dropped], "warnings": res.warnings}
    _write(out / "manifest.json", _dump_json(manifest))
    for name, row in res.counts_table().items():
        print(f"{name:9s} {row['instances']:6d} instances {row['images']:6d} images")
    print(f"dropped {len(res.dropped)} instances")
    return EXIT_OK


class _Splits:
    def __init__(self, d: Path):
        from .data import read_instances

        self.manifest = _read_json(d / "manifest.json")
        for name in SPLIT_NAMES:
            setattr(self, name, read_instances(d / f"{name}.jsonl"))


def cmd_train(args) -> int:
    from .datagen import frequency_table
    from .metrics import frequency_scores, metrics_report, write_report
    from .models import save_checkpoint
    from .trainer import TrainConfig, evaluate, train

    cfg = load_config(args.config)
    tr = cfg["train"]
    tr["seed"] = resolve_seed(args.seed, tr.get("seed", TrainConfig.seed))
    tcfg = TrainConfig(**tr)
    splits = _Splits(Path(args.splits))
    K, M = splits.manifest["n_predicates"], splits.manifest["n_objects"]
    out = Path(args.out)
    params, runlog = train(tcfg, splits, K, M)

    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(params, out / "model.npz")
    runlog.save(out / "runlog.csv")
    val_rows = "step,val_r1\n" + "".join(f"{s},{v!r}\n" for s, v in runlog.validation)
    _write(out / "validation.csv", val_rows.encode())

    table = frequency_table(splits.train, K, M)
    summary = {"variant": tcfg.variant, "config": tcfg.to_dict(), "best_step": runlog.best_step,
               "predcls_r1": {}, "frequency_r1": {}, "scoring": cfg["metrics"]["scoring"]}
    for name in ("trainval", "testval", "test"):
        part = getattr(splits, name)
        if not part:
            continue
        rep = evaluate(params, part, cfg["metrics"]["scoring"], cfg["metrics"]["any_hit"])
        write_report(out / f"metrics_{name}", rep)
        freq = metrics_report(part, frequency_scores(table, [x.object_label for x in part]), K,
                              cfg["metrics"]["any_hit"])
        summary["predcls_r1"][name] = rep.predcls_r1
        summary["frequency_r1"][name] = freq.predcls_r1
    _write(out / "summary.json", _dump_json(summary))
    print(f"{tcfg.variant}: best step {runlog.best_step}; " +
          " ".join(f"{k} R@1 {v:.4f}" for k, v in summary["predcls_r1"].items()))
    return EXIT_OK


def cmd_eval(args) -> int:
    from .data import read_instances
    from .metrics import write_report
    from .models import load_checkpoint
    from .trainer import evaluate

    cfg = load_config(args.config)
    params = load_checkpoint(args.checkpoint)
    instances = read_instances(args.split)
    scoring = args.scoring or cfg["metrics"]["scoring"]
    rep = evaluate(params, instances, scoring, cfg["metrics"]["any_hit"])
    stem = str(args.out)
    for suffix in (".json", ".csv"):
        if stem.endswith(suffix):
            stem = stem[: -len(suffix)]
    write_report(stem, rep)
    print(f"PredCls R@1 {rep.predcls_r1:.4f} R@5 {rep.predcls_r5:.4f} "
          f"PredDet R@5 {rep.preddet_r5:.4f} R@10 {rep.preddet_r10:.4f}")
    return EXIT_OK


def verify_theorems(fixtures_dir=None, trained: bool = True, seed: int = 0) -> list[tuple[str, float, float]]:
    """(check name, abs error, tolerance) for every closed-form and trained check."""
    import numpy as np

    from . import divergence as dv
    from .trainer import fit_tabular_discriminator

    fams, cfams = [], []
    if fixtures_dir is not None:
        paths = sorted(Path(fixtures_dir).glob("*.json"))
        if not paths:
            raise ConfigError(f"no fixture files in {fixtures_dir}")
        for p in paths:
            obj = dv.load_fixture(p)
            (cfams if isinstance(obj, dv.ConditionalFamily) else fams).append((p.stem, obj))
    else:
        rng = np.random.default_rng(seed)
        fams = [(f"random{i}", dv.random_family(rng, int(rng.integers(2, 9)), int(rng.integers(2, 17)), 0.3))
                for i in range(20)]
        cfams = [(f"random{i}", dv.random_conditional_family(rng, 3, int(rng.integers(2, 6)),
                                                              int(rng.integers(2, 9)), 0.3)) for i in range(20)]
    rows = []
    for name, f in fams:
        val = dv.adg_objective(f, dv.optimal_discriminator_kld(f))
        rows.append((f"adg optimum {name}", abs(val - dv.adg_optimum(f)), 1e-10))
    for name, c in cfams:
        ds = [dv.optimal_discriminator_kld(f) for f in c.classes]
        rows.append((f"cadg-kld optimum {name}", abs(dv.cadg_kld_objective(c, ds) - dv.cadg_kld_optimum(c)), 1e-10))
        dj = [dv.optimal_discriminator_jsd(f) for f in c.classes]
        rows.append((f"cadg-jsd optimum {name}", abs(dv.cadg_jsd_objective(c, dj) - dv.cadg_jsd_optimum(c)), 1e-10))
    if trained and fams:
        name, f = fams[0]
        _, hist = fit_tabular_discriminator(f, "adg_kld", steps=1500)
        rows.append((f"trained softmax {name}", abs(hist[-1] - dv.adg_optimum(f)), 1e-2))
    if trained and cfams:
        name, c = cfams[0]
        _, hist = fit_tabular_discriminator(c, "cadg_jsd", steps=3000, disc_hidden=64)
        rows.append((f"trained binary {name}", abs(hist[-1] - dv.cadg_jsd_optimum(c)), 1e-2))
    return rows


def cmd_verify_theorems(args) -> int:
    rows = verify_theorems(args.fixtures, trained=not args.closed_form_only,
                           seed=resolve_seed(args.seed, 0))
    lines = [f"{'PASS' if err <= tol else 'FAIL'} {name}: |gap| = {err:.3e} (tol {tol:g})" for name, err, tol in rows]
    print("\n".join(lines))
    if args.out:
        _write(args.out, ("\n".join(lines) + "\n").encode())
    failed = sum(err > tol for _, err, tol in rows)
    if failed:
        raise InvariantViolation(f"{failed} of {len(rows)} theorem checks failed")
    return EXIT_OK


def compare_table(summaries: list[dict]) -> str:
    """Comparison table with R@1 per split and the relative change against the baseline."""
    by_variant = {}
    for s in summaries:
        if s["variant"] in by_variant:
            raise ConfigError(f"two runs for variant {s['variant']!r}")
        by_variant[s["variant"]] = s["predcls_r1"]
    if "none" not in by_variant:
        raise ConfigError("compare needs a baseline run (variant 'none')")
    by_variant["frequency"] = summaries[[s["variant"] for s in summaries].index("none")]["frequency_r1"]
    base = by_variant["none"]
    cols = [c for c in ("trainval", "testval", "test") if c in base]
    header = "method    " + "".join(f"{c:>20s}" for c in cols)
    lines = [header]
    for key, label in COMPARE_ROWS:
        if key not in by_variant:
            continue
        cells = []
        for c in cols:
            v, b = by_variant[key].get(c), base[c]
            rel = 0.0 if b == 0 and v == 0 else (float("inf") if b == 0 else 100.0 * (v - b) / b)
            cells.append(f"{v:8.4f} ({rel:+7.1f}%)")
        lines.append(f"{label:10s}" + "".join(f"{c:>20s}" for c in cells))
    return "\n".join(lines) + "\n"


def cmd_compare(args) -> int:
    summaries = [_read_json(Path(d) / "summary.json") for d in args.runs]
    text = compare_table(summaries)
    print(text, end="")
    if args.out:
        _write(args.out, text.encode())
    return EXIT_OK


# --- entry point --------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="adglab", description=__doc__.splitlines()[0])
    p.add_argument("--threads", type=int, default=None, help="BLAS thread count (default: library choice)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_help, out_required=True):
        sp.add_argument("--config", default=None, help="YAML or JSON experiment config")
        sp.add_argument("--out", required=out_required, help=out_help)
        sp.add_argument("--seed", type=int, default=None, help="overrides $ADGLAB_SEED and the config seed")

    g = sub.add_parser("gen", help="generate a synthetic dataset")
    common(g, "dataset JSONL path (metadata goes next to it)")
    g.set_defaults(func=cmd_gen)

    s = sub.add_parser("split", help="novel split plus validation carve-out")
    s.add_argument("dataset")
    common(s, "output directory for the four split files and manifest")
    s.set_defaults(func=cmd_split)

    t = sub.add_parser("train", help="train one variant on a split directory")
    t.add_argument("--splits", required=True, help="directory written by 'split'")
    common(t, "run directory")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on one split file")
    e.add_argument("checkpoint")
    e.add_argument("--split", required=True, help="split JSONL file")
    e.add_argument("--scoring", choices=("triplet", "hsp"), default=None)
    common(e, "report path stem; writes .csv and .json")
    e.set_defaults(func=cmd_eval)

    v = sub.add_parser("verify-theorems", help="check the divergence identities and trained discriminators")
    v.add_argument("--fixtures", default=None, help="directory of fixture JSON files (default: random families)")
    v.add_argument("--closed-form-only", action="store_true")
    common(v, "optional report path", out_required=False)
    v.set_defaults(func=cmd_verify_theorems)

    c = sub.add_parser("compare", help="tabulate several run directories against the baseline")
    c.add_argument("runs", nargs="+")
    c.add_argument("--out", default=None, help="optional table path")
    c.set_defaults(func=cmd_compare)
    return p


def _set_threads(n: int | None) -> None:
    if n is None:
        return
    if n < 1:
        raise ConfigError("--threads must be positive")
    # only effective before numpy loads its BLAS, which the commands import lazily
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(n)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _set_threads(args.threads)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    from .autodiff import NonFiniteError
    from .splitter import SplitInvariantError
    from .trainer import TrainingDivergedError

    try:
        return args.func(args)
    except (TrainingDivergedError, NonFiniteError) as exc:
        print(f"error: numerical divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (SplitInvariantError, InvariantViolation) as exc:
        print(f"error: invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (ConfigError, ValueError, TypeError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID

if __name__ == "__main__":
    sys.exit(main())
