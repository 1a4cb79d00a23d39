"""Command-line pipeline driver.

Subcommands cover the full flow: ``synth`` generates a corpus, ``ingest``
turns raw events into labeled weekly instances, ``pretrain-ngrams`` and
``pretrain-videos`` build the embedding artifacts, ``train`` fits one
predictor variant, ``evaluate`` and ``compare`` score prediction files, and
``experiment`` runs the four-variant comparison end to end across several
training seeds and writes a single JSON report.

Configuration values resolve in three layers: built-in defaults, then a JSON
config file (``--config``), then explicit command-line flags.  Every numeric
value is validated before any work starts; a bad value exits with status 2
and the offending field name, while runtime failures exit with status 1.
Reports contain no timestamps or timings, so a fixed seed reproduces them
byte for byte.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from . import clickstream, dropout_net, metrics, ngram_embed, serialize, synth, video_embed
from .errors import InputError, MoocDropError

DEFAULTS: dict = {
    # shared
    "seed": 0,
    "n": 4,
    "horizon_weeks": 12,
    "course_start": 0,
    "events_format": "jsonl",
    # synthetic corpus
    "users": 5000,
    "videos": 24,
    "weeks": 8,
    "click_rate": 40.0,
    "engagement_alpha": 2.0,
    "engagement_beta": 2.0,
    "difficulty_alpha": 2.0,
    "difficulty_beta": 2.0,
    "fluctuation_alpha": 2.0,
    "fluctuation_beta": 2.0,
    "hazard_difficulty": 6.0,
    "hazard_engagement": 5.0,
    "hazard_bias": -2.25,
    "mix_difficulty_gain": 4.0,
    "mix_engagement_gain": 2.0,
    "syllabus_spread": 1.5,
    # click n-gram pretraining
    "ngram_dim": 32,
    "window": 2,
    "ngram_epochs": 2,
    "ngram_lr": 2e-3,
    "ngram_batch": 256,
    "ngram_objective": "two_sided",
    "ngram_max_positions": 60000,
    "ngram_eval_positions": 20000,
    # video pretraining
    "video_dim": 16,
    "video_epochs": 3,
    "video_lr": 2e-3,
    "video_batch": 256,
    "video_max_sequences": 30000,
    "rho": 3.0,
    "extract_steps": 200,
    "extract_lr": 1.0,
    # dropout predictor
    "variant": dropout_net.VARIANT_CLICK,
    "hidden_dim": 32,
    "dropout_epochs": 8,
    "dropout_lr": 2e-3,
    "margin": 0.5,
    "batch_pairs": 64,
    "optimizer": "adam",
    "freeze_embeddings": False,
    # evaluation
    "n_boot": 1000,
    # experiment harness
    "train_seeds": [1, 2, 3, 4, 5],
    "train_frac": 0.8,
    "val_frac": 0.1,
    "pretrain_per_seed": False,
}


class ConfigError(Exception):
    pass


def _resolve_config(args: argparse.Namespace) -> dict:
    """defaults <- config file <- explicit flags, with unknown-key rejection."""
    config = dict(DEFAULTS)
    path = getattr(args, "config", None)
    if path:
        try:
            with open(path) as f:
                loaded = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"config file {path!r}: {e}")
        if not isinstance(loaded, dict):
            raise ConfigError(f"config file {path!r} must hold a JSON object")
        for key, value in loaded.items():
            if key not in DEFAULTS:
                raise ConfigError(f"config field {key!r}: unknown key")
            config[key] = value
    for key in DEFAULTS:
        value = getattr(args, key, None)
        if value is not None:
            config[key] = value
    return config


def _module_configs(config: dict):
    """Build and validate every module config up front (field-level errors)."""
    try:
        synth_config = synth.SynthConfig(
            users=int(config["users"]), videos=int(config["videos"]),
            weeks=int(config["weeks"]), seed=int(config["seed"]),
            click_rate=float(config["click_rate"]),
            engagement_alpha=float(config["engagement_alpha"]),
            engagement_beta=float(config["engagement_beta"]),
            difficulty_alpha=float(config["difficulty_alpha"]),
            difficulty_beta=float(config["difficulty_beta"]),
            fluctuation_alpha=float(config["fluctuation_alpha"]),
            fluctuation_beta=float(config["fluctuation_beta"]),
            hazard_difficulty=float(config["hazard_difficulty"]),
            hazard_engagement=float(config["hazard_engagement"]),
            hazard_bias=float(config["hazard_bias"]),
            mix_difficulty_gain=float(config["mix_difficulty_gain"]),
            mix_engagement_gain=float(config["mix_engagement_gain"]),
            syllabus_spread=float(config["syllabus_spread"]),
            course_start=int(config["course_start"]),
        )
        synth_config.validate()
        ngram_config = ngram_embed.NGramPretrainConfig(
            n=int(config["n"]), embed_dim=int(config["ngram_dim"]),
            window=int(config["window"]), epochs=int(config["ngram_epochs"]),
            lr=float(config["ngram_lr"]), seed=int(config["seed"]),
            optimizer=str(config["optimizer"]), batch_size=int(config["ngram_batch"]),
            objective=str(config["ngram_objective"]),
            max_positions_per_epoch=_opt_int(config["ngram_max_positions"]),
            loss_eval_positions=_opt_int(config["ngram_eval_positions"]),
        )
        ngram_config.validate()
        video_config = video_embed.VideoClassifierConfig(
            hidden_dim=int(config["video_dim"]), epochs=int(config["video_epochs"]),
            lr=float(config["video_lr"]), seed=int(config["seed"]),
            optimizer=str(config["optimizer"]), batch_size=int(config["video_batch"]),
            max_sequences_per_epoch=_opt_int(config["video_max_sequences"]),
        )
        video_config.validate()
        extract_config = video_embed.ExtractConfig(
            steps=int(config["extract_steps"]), lr=float(config["extract_lr"]),
            rho=float(config["rho"]), seed=int(config["seed"]),
        )
        extract_config.validate()
        dropout_config = dropout_net.DropoutTrainConfig(
            variant=str(config["variant"]), n=int(config["n"]),
            embed_dim=int(config["ngram_dim"]), video_dim=int(config["video_dim"]),
            hidden_dim=int(config["hidden_dim"]), num_videos=max(1, int(config["videos"])),
            epochs=int(config["dropout_epochs"]), lr=float(config["dropout_lr"]),
            margin=float(config["margin"]), seed=int(config["seed"]),
            optimizer=str(config["optimizer"]), batch_pairs=int(config["batch_pairs"]),
            freeze_embeddings=bool(config["freeze_embeddings"]),
        )
        dropout_config.validate()
        if int(config["n_boot"]) < 100:
            raise InputError("n_boot must be >= 100")
        if not 0 < float(config["train_frac"]) < 1 or not 0 < float(config["val_frac"]) < 1:
            raise InputError("train_frac and val_frac must lie in (0, 1)")
        if float(config["train_frac"]) + float(config["val_frac"]) >= 1:
            raise InputError("train_frac + val_frac must leave room for a test split")
        seeds = config["train_seeds"]
        if isinstance(seeds, str):
            seeds = [int(s) for s in seeds.split(",") if s.strip()]
            config["train_seeds"] = seeds
        if not seeds:
            raise InputError("train_seeds must not be empty")
    except InputError as e:
        raise ConfigError(str(e))
    return synth_config, ngram_config, video_config, extract_config, dropout_config


def _opt_int(value):
    if value is None or value == 0 or value == "none":
        return None
    return int(value)


def _write_json(path: str, obj: dict):
    serialize.atomic_write_text(path, json.dumps(obj, sort_keys=True, indent=2) + "\n")


def _echo_config(config: dict) -> dict:
    return {k: config[k] for k in sorted(config)}


def _read_instances(path: str):
    with open(path) as f:
        return clickstream.instances_from_jsonl(f)


def _log(msg: str):
    print(msg, file=sys.stderr)


# ---------------------------------------------------------------- subcommands


def cmd_synth(args) -> int:
    config = _resolve_config(args)
    synth_config, *_ = _module_configs(config)
    os.makedirs(args.out_dir, exist_ok=True)
    records, truth = synth.generate(synth_config)
    events_path = os.path.join(args.out_dir, "events.jsonl")
    truth_path = os.path.join(args.out_dir, "truth.json")
    synth.write_events_jsonl(records, events_path)
    serialize.atomic_write_text(truth_path, truth.to_json() + "\n")
    _log(f"wrote {len(records)} events to {events_path}")
    if args.check:
        report = synth.signal_check(records, truth)
        _write_json(os.path.join(args.out_dir, "signal_report.json"), report.to_dict())
        if not report.passed:
            _log(f"signal check FAILED: {report.to_dict()}")
            return 1
        _log("signal check passed")
    return 0


def cmd_ingest(args) -> int:
    config = _resolve_config(args)
    _module_configs(config)
    os.makedirs(args.out_dir, exist_ok=True)
    with open(args.events) as f:
        report = clickstream.parse_events(
            f, fmt=config["events_format"], n=int(config["n"]),
            horizon_weeks=int(config["horizon_weeks"]),
            course_start=int(config["course_start"]),
        )
    instances, dropped = clickstream.build_instances(report.events, report.vocab)
    serialize.atomic_write_text(os.path.join(args.out_dir, "instances.jsonl"),
                                clickstream.instances_to_jsonl(instances))
    serialize.atomic_write_text(os.path.join(args.out_dir, "vocab.json"),
                                report.vocab.to_json() + "\n")
    _write_json(os.path.join(args.out_dir, "ingest_report.json"), {
        "events_accepted": len(report.events),
        "events_rejected": report.num_rejected,
        "rejected": [[line, reason] for line, reason in report.rejected[:100]],
        "events_outside_horizon": dropped,
        "instances": len(instances),
        "positives": sum(i.label for i in instances),
        "videos": report.vocab.num_videos,
        "config": _echo_config(config),
    })
    _log(f"{len(instances)} instances ({report.num_rejected} rejected records)")
    return 0


def _ngram_corpus(instances) -> list[list[int]]:
    return [[g for g, _ in inst.steps] for inst in instances if inst.steps]


def cmd_pretrain_ngrams(args) -> int:
    config = _resolve_config(args)
    _, ngram_config, *_ = _module_configs(config)
    instances = _read_instances(args.instances)
    model = ngram_embed.train_ngram_embeddings(_ngram_corpus(instances), ngram_config)
    os.makedirs(os.path.dirname(os.path.abspath(args.out)) or ".", exist_ok=True)
    ngram_embed.save_ngram_model(model, args.out)
    _log(f"pretrained ngram model -> {args.out}; epoch losses {model.epoch_losses}")
    if args.tsv:
        ngram_embed.export_embeddings_tsv(model, args.tsv)
    return 0


def cmd_pretrain_videos(args) -> int:
    config = _resolve_config(args)
    _, _, video_config, extract_config, _ = _module_configs(config)
    instances = _read_instances(args.instances)
    with open(args.vocab) as f:
        video_index = json.load(f)
    num_videos = len(video_index)
    ngram_model = ngram_embed.load_ngram_model(args.ngram_model)
    sequences = video_embed.video_label_sequences(instances, no_video_index=num_videos)
    classifier = video_embed.train_video_classifier(
        sequences, vocab_size=ngram_model.vocab_size, num_videos=num_videos,
        config=video_config, init_embed=ngram_embed.export_embeddings(ngram_model),
    )
    embset = video_embed.build_embedding_set(classifier, extract_config)
    video_embed.save_video_embeddings(embset, args.out)
    _log(f"video classifier accuracy {classifier.train_accuracy:.3f}; "
         f"embeddings -> {args.out}")
    if args.tsv:
        video_embed.export_video_embeddings_tsv(embset, video_index, args.tsv)
    return 0


def cmd_train(args) -> int:
    config = _resolve_config(args)
    *_, dropout_config = _module_configs(config)
    instances = _read_instances(args.instances)
    ngram_table = None
    video_table = None
    if dropout_net.variant_uses_pretrained_clicks(dropout_config.variant):
        if not args.ngram_model:
            raise ConfigError(f"variant {dropout_config.variant!r} needs --ngram-model")
        model = ngram_embed.load_ngram_model(args.ngram_model)
        ngram_table = ngram_embed.export_embeddings(model)
        dropout_config.embed_dim = model.embed_dim
    if dropout_config.variant == dropout_net.VARIANT_CLICK_VIDEO_PRETRAINED:
        if not args.video_emb:
            raise ConfigError(f"variant {dropout_config.variant!r} needs --video-emb")
        embset = video_embed.load_video_embeddings(args.video_emb)
        video_table = embset.table
        dropout_config.video_dim = embset.dim
        dropout_config.num_videos = embset.num_videos
    elif dropout_net.variant_uses_video(dropout_config.variant):
        video_indices = [v for inst in instances for _, v in inst.steps]
        dropout_config.num_videos = max(video_indices) if video_indices else 1
    val_instances = _read_instances(args.val_instances) if args.val_instances else None
    predictor = dropout_net.train_dropout(instances, dropout_config,
                                          ngram_table=ngram_table,
                                          video_table=video_table,
                                          val_instances=val_instances)
    dropout_net.save_predictor(predictor, args.out)
    _log(f"trained {dropout_config.variant} -> {args.out}; "
         f"epoch losses {['%.4f' % x for x in predictor.epoch_losses]}")
    return 0


def _scored_from(instances, scores) -> list[metrics.ScoredInstance]:
    return [metrics.ScoredInstance(i.user_id, i.week, float(s), i.label)
            for i, s in zip(instances, scores)]


def _scored_from_tsv(tsv_path: str, instances) -> list[metrics.ScoredInstance]:
    labels = {(i.user_id, i.week): i.label for i in instances}
    scored = []
    for user, week, score in dropout_net.read_predictions_tsv(tsv_path):
        if (user, week) not in labels:
            raise InputError(f"prediction for unknown instance ({user}, {week})")
        scored.append(metrics.ScoredInstance(user, week, score, labels[(user, week)]))
    if len(scored) != len(labels):
        raise InputError(f"{tsv_path} scores {len(scored)} of {len(labels)} instances")
    return scored


def cmd_evaluate(args) -> int:
    config = _resolve_config(args)
    instances = _read_instances(args.instances)
    if args.model:
        model = dropout_net.load_predictor(args.model)
        scores = dropout_net.score_instances(model, instances)
        if args.predictions_out:
            dropout_net.write_predictions_tsv(instances, scores, args.predictions_out)
        scored = _scored_from(instances, scores)
    elif args.predictions:
        scored = _scored_from_tsv(args.predictions, instances)
    else:
        raise ConfigError("evaluate needs --model or --predictions")
    value = metrics.auc(scored)
    report = {
        "auc": value,
        "instances": len(scored),
        "positives": sum(s.label for s in scored),
        "config": _echo_config(config),
    }
    _write_json(args.report, report)
    print(json.dumps({"auc": value}))
    return 0


def cmd_compare(args) -> int:
    config = _resolve_config(args)
    instances = _read_instances(args.instances)
    scored_a = _scored_from_tsv(args.a, instances)
    scored_b = _scored_from_tsv(args.b, instances)
    report = metrics.paired_bootstrap(scored_a, scored_b,
                                      n_boot=int(config["n_boot"]),
                                      seed=int(config["seed"]))
    payload = dict(report.to_dict(), config=_echo_config(config))
    _write_json(args.report, payload)
    print(json.dumps(report.to_dict()))
    return 0


# ---------------------------------------------------------------- experiment


def split_users(instances, train_frac: float, val_frac: float, seed: int):
    """Deterministic user-level shuffle split into train/val/test instance lists."""
    users = sorted({i.user_id for i in instances})
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(users))
    n_train = int(round(train_frac * len(users)))
    n_val = int(round(val_frac * len(users)))
    train_users = {users[i] for i in order[:n_train]}
    val_users = {users[i] for i in order[n_train:n_train + n_val]}
    test_users = {users[i] for i in order[n_train + n_val:]}
    by = lambda keep: [i for i in instances if i.user_id in keep]
    return by(train_users), by(val_users), by(test_users)


def run_experiment(config: dict, out_dir: str,
                   events_path: str | None = None) -> dict:
    """Train all four variants across the training seeds and build the report."""
    synth_config, ngram_config, video_config, extract_config, dropout_config = (
        _module_configs(config)
    )
    os.makedirs(out_dir, exist_ok=True)

    if events_path is None:
        _log("generating synthetic corpus ...")
        records, truth = synth.generate(synth_config)
        events_path = os.path.join(out_dir, "events.jsonl")
        synth.write_events_jsonl(records, events_path)
        serialize.atomic_write_text(os.path.join(out_dir, "truth.json"),
                                    truth.to_json() + "\n")
        signal = synth.signal_check(records, truth).to_dict()
        horizon = synth_config.weeks
        course_start = synth_config.course_start
    else:
        signal = None
        horizon = int(config["horizon_weeks"])
        course_start = int(config["course_start"])

    _log("ingesting events ...")
    with open(events_path) as f:
        parse_report = clickstream.parse_events(
            f, fmt=config["events_format"], n=ngram_config.n,
            horizon_weeks=horizon, course_start=course_start,
        )
    if parse_report.num_rejected:
        raise InputError(f"{parse_report.num_rejected} events failed to parse")
    instances, _ = clickstream.build_instances(parse_report.events, parse_report.vocab)
    vocab = parse_report.vocab
    serialize.atomic_write_text(os.path.join(out_dir, "vocab.json"),
                                vocab.to_json() + "\n")

    train_inst, val_inst, test_inst = split_users(
        instances, float(config["train_frac"]), float(config["val_frac"]),
        int(config["seed"]),
    )
    if not test_inst or not val_inst:
        raise InputError("split produced an empty validation or test set")

    seeds = [int(s) for s in config["train_seeds"]]
    pretrain_seeds = seeds if bool(config["pretrain_per_seed"]) else [int(config["seed"])]

    pretrained: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    for ps in pretrain_seeds:
        _log(f"pretraining embeddings (seed {ps}) ...")
        ncfg = ngram_embed.NGramPretrainConfig(**{**ngram_config.__dict__, "seed": ps})
        ngram_model = ngram_embed.train_ngram_embeddings(_ngram_corpus(train_inst), ncfg)
        ngram_table = ngram_embed.export_embeddings(ngram_model)
        vcfg = video_embed.VideoClassifierConfig(**{**video_config.__dict__, "seed": ps})
        sequences = video_embed.video_label_sequences(train_inst, vocab.no_video)
        classifier = video_embed.train_video_classifier(
            sequences, vocab_size=ngram_model.vocab_size,
            num_videos=vocab.num_videos, config=vcfg, init_embed=ngram_table,
        )
        embset = video_embed.build_embedding_set(classifier, extract_config)
        pretrained[ps] = (ngram_table, embset.table)
        if ps == pretrain_seeds[0]:
            ngram_embed.save_ngram_model(ngram_model,
                                         os.path.join(out_dir, "ngram_model.bin"))
            video_embed.save_video_embeddings(embset,
                                              os.path.join(out_dir, "video_emb.bin"))

    needs = {
        dropout_net.VARIANT_CLICK: (False, False),
        dropout_net.VARIANT_CLICK_PRETRAINED: (True, False),
        dropout_net.VARIANT_CLICK_VIDEO: (True, False),
        dropout_net.VARIANT_CLICK_VIDEO_PRETRAINED: (True, True),
    }
    per_variant_scores: dict[str, list[np.ndarray]] = {v: [] for v in dropout_net.VARIANTS}
    per_variant_auc: dict[str, list[float]] = {v: [] for v in dropout_net.VARIANTS}

    for seed in seeds:
        ngram_table, video_table = pretrained[seed if config["pretrain_per_seed"] else int(config["seed"])]
        for variant in dropout_net.VARIANTS:
            _log(f"training {variant} (seed {seed}) ...")
            use_ngram, use_video_table = needs[variant]
            dcfg = dropout_net.DropoutTrainConfig(
                **{**dropout_config.__dict__,
                   "variant": variant, "seed": seed,
                   "embed_dim": ngram_config.embed_dim,
                   "video_dim": video_config.hidden_dim,
                   "num_videos": vocab.num_videos},
            )
            predictor = dropout_net.train_dropout(
                train_inst, dcfg,
                ngram_table=ngram_table if use_ngram else None,
                video_table=video_table if use_video_table else None,
                val_instances=val_inst,
            )
            scores = dropout_net.score_instances(predictor, test_inst)
            per_variant_scores[variant].append(scores)
            per_variant_auc[variant].append(metrics.auc(_scored_from(test_inst, scores)))
            dropout_net.write_predictions_tsv(
                test_inst, scores,
                os.path.join(out_dir, f"predictions_{variant}_seed{seed}.tsv"))
            if seed == seeds[0]:
                dropout_net.save_predictor(
                    predictor, os.path.join(out_dir, f"predictor_{variant}.bin"))

    # seed-mean scores per variant drive the pairwise significance tests
    mean_scored = {}
    for variant in dropout_net.VARIANTS:
        mean_scores = np.mean(np.stack(per_variant_scores[variant]), axis=0)
        mean_scored[variant] = _scored_from(test_inst, mean_scores)
        dropout_net.write_predictions_tsv(
            test_inst, mean_scores, os.path.join(out_dir, f"predictions_{variant}.tsv"))

    comparisons = {}
    pairs = [
        ("click_pretrained_vs_click",
         dropout_net.VARIANT_CLICK, dropout_net.VARIANT_CLICK_PRETRAINED),
        ("video_vs_click_pretrained",
         dropout_net.VARIANT_CLICK_PRETRAINED, dropout_net.VARIANT_CLICK_VIDEO),
        ("video_vs_click",
         dropout_net.VARIANT_CLICK, dropout_net.VARIANT_CLICK_VIDEO),
        ("video_pretrained_vs_video",
         dropout_net.VARIANT_CLICK_VIDEO, dropout_net.VARIANT_CLICK_VIDEO_PRETRAINED),
    ]
    for name, a, b in pairs:
        rep = metrics.paired_bootstrap(mean_scored[a], mean_scored[b],
                                       n_boot=int(config["n_boot"]),
                                       seed=int(config["seed"]))
        comparisons[name] = rep.to_dict()

    report = {
        "config": _echo_config(config),
        "split": {"train_instances": len(train_inst), "val_instances": len(val_inst),
                  "test_instances": len(test_inst),
                  "test_positives": sum(i.label for i in test_inst)},
        "signal_check": signal,
        "variants": {
            v: {"auc_per_seed": per_variant_auc[v],
                "mean_auc": float(np.mean(per_variant_auc[v]))}
            for v in dropout_net.VARIANTS
        },
        "comparisons": comparisons,
    }
    _write_json(os.path.join(out_dir, "report.json"), report)
    return report


def cmd_experiment(args) -> int:
    config = _resolve_config(args)
    started = time.monotonic()
    report = run_experiment(config, args.out_dir, events_path=args.events)
    elapsed = time.monotonic() - started
    means = {v: round(d["mean_auc"], 4) for v, d in report["variants"].items()}
    _log(f"experiment finished in {elapsed:.1f}s; mean AUC per variant: {means}")
    print(json.dumps(means))
    return 0


# -------------------------------------------------------------------- parser


def _add_config_flags(p: argparse.ArgumentParser, keys):
    p.add_argument("--config", help="JSON config file (flag values override it)")
    for key in keys:
        flag = "--" + key.replace("_", "-")
        default = DEFAULTS[key]
        if isinstance(default, bool):
            p.add_argument(flag, type=lambda s: s.lower() in ("1", "true", "yes"),
                           default=None, metavar="BOOL")
        elif isinstance(default, int):
            p.add_argument(flag, type=int, default=None)
        elif isinstance(default, float):
            p.add_argument(flag, type=float, default=None)
        elif isinstance(default, list):
            p.add_argument(flag, type=str, default=None,
                           help="comma-separated list")
        else:
            p.add_argument(flag, type=str, default=None)


_SYNTH_KEYS = ["seed", "users", "videos", "weeks", "click_rate",
               "engagement_alpha", "engagement_beta", "difficulty_alpha",
               "difficulty_beta", "fluctuation_alpha", "fluctuation_beta",
               "hazard_difficulty", "hazard_engagement", "hazard_bias",
               "mix_difficulty_gain", "mix_engagement_gain", "syllabus_spread",
               "course_start"]
_INGEST_KEYS = ["n", "horizon_weeks", "course_start", "events_format"]
_NGRAM_KEYS = ["seed", "n", "ngram_dim", "window", "ngram_epochs", "ngram_lr",
               "ngram_batch", "ngram_objective", "ngram_max_positions",
               "ngram_eval_positions", "optimizer"]
_VIDEO_KEYS = ["seed", "video_dim", "video_epochs", "video_lr", "video_batch",
               "video_max_sequences", "rho", "extract_steps", "extract_lr",
               "optimizer"]
_TRAIN_KEYS = ["seed", "n", "variant", "ngram_dim", "video_dim", "hidden_dim",
               "dropout_epochs", "dropout_lr", "margin", "batch_pairs",
               "optimizer", "freeze_embeddings"]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="moocdrop",
        description="Weekly dropout-risk prediction from course clickstreams.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic clickstream corpus")
    _add_config_flags(p, _SYNTH_KEYS)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--check", action="store_true",
                   help="verify the planted signal and fail if it is absent")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", help="parse events into labeled weekly instances")
    _add_config_flags(p, _INGEST_KEYS)
    p.add_argument("--events", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("pretrain-ngrams", help="train click n-gram embeddings")
    _add_config_flags(p, _NGRAM_KEYS)
    p.add_argument("--instances", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--tsv", help="also export the embedding table as TSV")
    p.set_defaults(func=cmd_pretrain_ngrams)

    p = sub.add_parser("pretrain-videos", help="train the video classifier and extract embeddings")
    _add_config_flags(p, _VIDEO_KEYS)
    p.add_argument("--instances", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--ngram-model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--tsv", help="also export the embeddings as TSV")
    p.set_defaults(func=cmd_pretrain_videos)

    p = sub.add_parser("train", help="train one dropout predictor variant")
    _add_config_flags(p, _TRAIN_KEYS)
    p.add_argument("--instances", required=True)
    p.add_argument("--val-instances")
    p.add_argument("--ngram-model")
    p.add_argument("--video-emb")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score instances and report AUC")
    _add_config_flags(p, ["seed"])
    p.add_argument("--instances", required=True)
    p.add_argument("--model")
    p.add_argument("--predictions")
    p.add_argument("--predictions-out")
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("compare", help="paired bootstrap test between two prediction files")
    _add_config_flags(p, ["seed", "n_boot"])
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--instances", required=True)
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("experiment", help="run the four-variant comparison end to end")
    _add_config_flags(p, sorted(DEFAULTS))
    p.add_argument("--events", help="reuse an existing corpus instead of generating")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_experiment)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        _log(f"config error: {e}")
        return 2
    except MoocDropError as e:
        _log(f"error: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
