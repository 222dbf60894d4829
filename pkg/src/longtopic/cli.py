"""Config-driven experiment runner.

Subcommands
    simulate   write a synthetic corpus directory plus truth.json
    fit        train on a corpus directory, write model.json + train_log.json
    eval       score a fitted model, write metrics.json + topics_top_words.json
    infer      write per-cell proportion estimates for a corpus
    pipeline   simulate -> fit -> eval for `repeats` seeds, write summary.json

Configuration is a JSON file with optional blocks "sim" (SimConfig fields),
"train" (TrainConfig fields), "paths" {corpus, model, truth, out}, and scalars
"repeats", "allow_missing". Precedence: config file, then repeatable
`--set section.key=value` pairs (applied in order, values parsed as JSON when
possible), then the dedicated flags (--seed, --out, --repeats, --dist,
--dist-weight, --dynamic-topics, --allow-missing) last. --seed sets both the
simulation and training seeds; pipeline repeat i runs at base_seed + i and
writes into out/seed_<s>/. Exit status is 0 on success, 1 on any named error
(message on stderr). Identical config + seed give byte-identical JSON
artifacts.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys

import numpy as np

from .corpus import load_corpus, save_corpus
from .errors import ConfigError, LongtopicError
from .evaluate import full_report, save_metrics, save_top_words
from .inference import (
    TrainConfig,
    default_init,
    fit_dynamic_topics,
    infer_proportions,
    load_model,
    save_model,
    train,
)
from .simulate import SimConfig, load_truth, save_truth, simulate

METRIC_FIELDS = ("kl_topics", "coherence", "perplexity", "dominant_acc",
                 "group_acc")


def _parse_set(pairs, cfg):
    for item in pairs or []:
        if "=" not in item:
            raise ConfigError(f"--set expects section.key=value; got {item!r}")
        key, raw = item.split("=", 1)
        try:
            val = json.loads(raw)
        except json.JSONDecodeError:
            val = raw
        if "." in key:
            section, field_name = key.split(".", 1)
            if section not in ("sim", "train", "paths"):
                raise ConfigError(f"unknown config section {section!r}")
            cfg.setdefault(section, {})[field_name] = val
        elif key in ("repeats", "allow_missing"):
            cfg[key] = val
        else:
            raise ConfigError(f"unknown top-level config key {key!r}")
    return cfg


def _load_config(args):
    cfg = {}
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as f:
                cfg = json.load(f)
        except OSError as e:
            raise ConfigError(f"cannot read config {args.config}: {e}") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"{args.config}: invalid JSON: {e}") from e
        if not isinstance(cfg, dict):
            raise ConfigError("config root must be a JSON object")
    _parse_set(args.set, cfg)
    if args.seed is not None:
        cfg.setdefault("sim", {})["seed"] = args.seed
        cfg.setdefault("train", {})["seed"] = args.seed
    if args.out is not None:
        cfg.setdefault("paths", {})["out"] = args.out
    if getattr(args, "repeats", None) is not None:
        cfg["repeats"] = args.repeats
    if getattr(args, "dist", None) is not None:
        cfg.setdefault("train", {})["dist_kind"] = args.dist
    if getattr(args, "dist_weight", None) is not None:
        cfg.setdefault("train", {})["dist_weight"] = args.dist_weight
    if getattr(args, "dynamic_topics", None) is not None:
        cfg.setdefault("train", {})["dynamic_topics_var"] = args.dynamic_topics
    if getattr(args, "allow_missing", False):
        cfg["allow_missing"] = True
    return cfg


def _sim_config(cfg):
    if "sim" not in cfg:
        raise ConfigError("this mode needs a 'sim' config block")
    try:
        return SimConfig(**cfg["sim"])
    except TypeError as e:
        raise ConfigError(f"bad sim config: {e}") from e


def _train_config(cfg):
    if "train" not in cfg:
        raise ConfigError("this mode needs a 'train' config block")
    try:
        return TrainConfig(**cfg["train"])
    except TypeError as e:
        raise ConfigError(f"bad train config: {e}") from e


def _out_dir(cfg, default="out"):
    out = cfg.get("paths", {}).get("out", default)
    os.makedirs(out, exist_ok=True)
    return out


def _need_path(cfg, key):
    val = cfg.get("paths", {}).get(key)
    if not val:
        raise ConfigError(f"this mode needs paths.{key}")
    return val


def _fit(corpus, tcfg):
    if tcfg.dynamic_topics_var is not None:
        return fit_dynamic_topics(corpus, tcfg)
    gen, enc = default_init(corpus, tcfg)
    return train(corpus, gen, enc, tcfg)


def cmd_simulate(cfg):
    out = _out_dir(cfg)
    scfg = _sim_config(cfg)
    corpus, truth = simulate(scfg)
    corpus_dir = os.path.join(out, "corpus")
    os.makedirs(corpus_dir, exist_ok=True)
    save_corpus(corpus, corpus_dir)
    save_truth(truth, os.path.join(out, "truth.json"))
    print(f"wrote {corpus_dir} ({corpus.n_subjects} subjects,"
          f" {corpus.n_stages} stages, {corpus.vocab_size} words)"
          f" and {out}/truth.json")
    return 0


def cmd_fit(cfg):
    out = _out_dir(cfg)
    corpus = load_corpus(_need_path(cfg, "corpus"),
                         allow_missing=bool(cfg.get("allow_missing", False)))
    tcfg = _train_config(cfg)
    fitted = _fit(corpus, tcfg)
    model_path = os.path.join(out, "model.json")
    save_model(fitted, model_path)
    with open(os.path.join(out, "train_log.json"), "w",
              encoding="utf-8") as f:
        json.dump({"log": fitted.log, "converged": fitted.converged},
                  f, sort_keys=True, indent=2)
        f.write("\n")
    print(f"wrote {model_path}; final loss {fitted.log[-1]['loss']:.6f}"
          f" after {fitted.log[-1]['epoch']} epochs"
          f" (converged={fitted.converged})")
    return 0


def _echo(cfg):
    return {k: cfg[k] for k in ("sim", "train", "repeats", "allow_missing")
            if k in cfg}


def cmd_eval(cfg):
    out = _out_dir(cfg)
    corpus = load_corpus(_need_path(cfg, "corpus"),
                         allow_missing=bool(cfg.get("allow_missing", False)))
    fitted = load_model(_need_path(cfg, "model"))
    truth_path = cfg.get("paths", {}).get("truth")
    truth = load_truth(truth_path) if truth_path else None
    report = full_report(fitted, corpus, truth)
    save_metrics(report, os.path.join(out, "metrics.json"),
                 config_echo=_echo(cfg))
    save_top_words(fitted.stage_topics(), fitted.vocab,
                   os.path.join(out, "topics_top_words.json"))
    print(json.dumps(report.to_dict(), sort_keys=True))
    return 0


def cmd_infer(cfg):
    out = _out_dir(cfg)
    corpus = load_corpus(_need_path(cfg, "corpus"),
                         allow_missing=bool(cfg.get("allow_missing", False)))
    fitted = load_model(_need_path(cfg, "model"))
    theta = infer_proportions(fitted, corpus)
    path = os.path.join(out, "proportions.json")
    with open(path, "w", encoding="utf-8") as f:
        json.dump({"theta": theta.tolist(),
                   "order": "stage, subject, topic"},
                  f, sort_keys=True)
        f.write("\n")
    print(f"wrote {path}")
    return 0


def _aggregate(per_seed):
    mean, se = {}, {}
    for k in METRIC_FIELDS:
        vals = [r[k] for r in per_seed if r[k] is not None]
        if not vals:
            mean[k] = se[k] = None
            continue
        mean[k] = float(np.mean(vals))
        se[k] = (0.0 if len(vals) < 2
                 else float(np.std(vals, ddof=1) / math.sqrt(len(vals))))
    return mean, se


def cmd_pipeline(cfg):
    out = _out_dir(cfg)
    repeats = int(cfg.get("repeats", 1))
    if repeats < 1:
        raise ConfigError("repeats must be >= 1")
    base_sim = dict(cfg.get("sim", {}))
    base_train = dict(cfg.get("train", {}))
    base_seed = int(base_sim.get("seed", base_train.get("seed", 0)))
    per_seed = []
    for i in range(repeats):
        seed = base_seed + i
        sub = dict(cfg)
        sub["sim"] = dict(base_sim, seed=seed)
        sub["train"] = dict(base_train, seed=seed)
        seed_dir = os.path.join(out, f"seed_{seed}")
        os.makedirs(seed_dir, exist_ok=True)
        scfg = _sim_config(sub)
        tcfg = _train_config(sub)
        corpus, truth = simulate(scfg)
        corpus_dir = os.path.join(seed_dir, "corpus")
        os.makedirs(corpus_dir, exist_ok=True)
        save_corpus(corpus, corpus_dir)
        save_truth(truth, os.path.join(seed_dir, "truth.json"))
        fitted = _fit(corpus, tcfg)
        save_model(fitted, os.path.join(seed_dir, "model.json"))
        report = full_report(fitted, corpus, truth)
        save_metrics(report, os.path.join(seed_dir, "metrics.json"),
                     config_echo=_echo(sub))
        save_top_words(fitted.stage_topics(), fitted.vocab,
                       os.path.join(seed_dir, "topics_top_words.json"))
        row = dict(report.to_dict(), seed=seed)
        del row["permutations"]
        per_seed.append(row)
        print(f"seed {seed}: " + json.dumps(
            {k: row[k] for k in METRIC_FIELDS}, sort_keys=True))
    mean, se = _aggregate(per_seed)
    summary = {"per_seed": per_seed, "mean": mean, "se": se,
               "config": _echo(cfg)}
    path = os.path.join(out, "summary.json")
    with open(path, "w", encoding="utf-8") as f:
        json.dump(summary, f, sort_keys=True, indent=2)
        f.write("\n")
    print(f"wrote {path}")
    return 0


_COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "eval": cmd_eval,
    "infer": cmd_infer,
    "pipeline": cmd_pipeline,
}


def _add_common(sp):
    sp.add_argument("--config", help="JSON config file")
    sp.add_argument("--seed", type=int, help="override sim + train seeds")
    sp.add_argument("--out", help="output directory (default ./out)")
    sp.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                    help="override any config field; repeatable")
    sp.add_argument("--allow-missing", action="store_true",
                    help="accept corpora with absent (subject, stage) cells")


def build_parser():
    p = argparse.ArgumentParser(
        prog="longtopic",
        description="Longitudinal topic-model experiments")
    sub = p.add_subparsers(dest="mode", required=True)
    for mode in _COMMANDS:
        sp = sub.add_parser(mode)
        _add_common(sp)
        if mode in ("fit", "pipeline"):
            sp.add_argument("--dist", help="distance kind for the group term")
            sp.add_argument("--dist-weight", type=float,
                            dest="dist_weight")
            sp.add_argument("--dynamic-topics", type=float,
                            dest="dynamic_topics", metavar="VAR",
                            help="per-stage topic chain variance")
        if mode == "pipeline":
            sp.add_argument("--repeats", type=int)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = _load_config(args)
        return _COMMANDS[args.mode](cfg)
    except LongtopicError as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
