"""Command-line pipeline: synth, train, train-ensemble, decode, score,
gradcheck, experiment.

Configuration precedence is defaults < --config file < command-line flags.
Exit codes: 0 success, 1 runtime error, 2 usage error. All file outputs are
written atomically; repeated runs with the same seed are byte-identical.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import gradcheck as gc
from .cells import ZoneoutConfig
from .config import atomic_write_text, build_config, parse_config_file
from .corpus import Corpus, SynthSpec, generate_synthetic, load_corpus, load_sidecars
from .decoder import (estimate_priors, map_phones, per, PerCounts,
                      posteriors_to_scores, viterbi_decode)
from .ensemble import (SCENARIOS, EnsembleManifest, evaluate_scenarios,
                       jensen_check, load_ensemble, save_manifest, save_rpl,
                       split_folds, train_crogging, train_rpl)
from .errors import ConfigError, NnamError
from .network import init_network, load_model, save_model
from .numeric import Rng
from .regularization import DropoutSchedule
from .training import (StagePlan, fit_normalizer, prepare, train_feedforward,
                       train_recurrent)

SCENARIO_CHOICES = ("master", "folds", "master+folds")


# ---------------------------------------------------------------------------
# Argument plumbing
# ---------------------------------------------------------------------------


def _common_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="config file (key = value lines)")
    sub.add_argument("--seed", type=int, help="random seed (train.seed)")
    sub.add_argument("--out", help="output directory or file")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nnam",
        description="Recurrent NN acoustic models with ensembles and a bigram "
                    "phone decoder.")
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("synth", help="generate a synthetic corpus")
    _common_flags(p)
    p.add_argument("--phones", type=int)
    p.add_argument("--states", type=int)
    p.add_argument("--dim", type=int)
    p.add_argument("--train", type=int, dest="n_train")
    p.add_argument("--dev", type=int, dest="n_dev")
    p.add_argument("--test", type=int, dest="n_test")
    p.add_argument("--len-min", type=int)
    p.add_argument("--len-max", type=int)
    p.add_argument("--noise", type=float)
    p.set_defaults(func=cmd_synth)

    for name, func in (("train", cmd_train), ("train-ensemble", cmd_train_ensemble),
                       ("experiment", cmd_experiment)):
        p = subs.add_parser(name, help=f"{name} on a corpus directory")
        _common_flags(p)
        p.add_argument("--data", required=True, help="corpus directory")
        p.add_argument("--cell", choices=("lstm", "gru", "zoneout", "ff"))
        p.add_argument("--layers", type=int)
        p.add_argument("--hidden", type=int)
        p.add_argument("--context", type=int)
        p.add_argument("--delay", type=int)
        p.add_argument("--dropout", type=float)
        p.add_argument("--dropout-kind", choices=("constant", "dynamic"))
        p.add_argument("--stages", help="optimizer:batch:lr triples, comma separated")
        p.add_argument("--batch", type=int, help="initial feed-forward batch size")
        p.add_argument("--lr", type=float)
        p.add_argument("--momentum", type=float)
        p.add_argument("--max-epochs", type=int)
        p.add_argument("--scale-batches", type=float)
        p.add_argument("--clip", type=float)
        p.add_argument("--zoneout-c", type=float)
        p.add_argument("--zoneout-h", type=float)
        if name in ("train-ensemble", "experiment"):
            p.add_argument("--folds", type=int)
            p.add_argument("--master-weight", type=float)
        if name == "train-ensemble":
            p.add_argument("--master", action="store_true", default=None)
            p.add_argument("--rpl", action="store_true", default=None)
        if name == "experiment":
            p.add_argument("--repeats", type=int)
            p.add_argument("--lm-weight", type=float)
            p.add_argument("--acoustic-scale", type=float)
            p.add_argument("--no-priors", action="store_true", default=None)
        p.set_defaults(func=func)

    p = subs.add_parser("decode", help="decode a split into phone transcripts")
    _common_flags(p)
    p.add_argument("--data", required=True)
    p.add_argument("--model", help="single model file")
    p.add_argument("--ensemble", help="ensemble manifest file")
    p.add_argument("--scenario", choices=SCENARIO_CHOICES, default="master")
    p.add_argument("--rpl", action="store_true", default=None,
                   help="apply the ensemble's post-layer")
    p.add_argument("--split", choices=("train", "dev", "test"), default="test")
    p.add_argument("--lm-weight", type=float)
    p.add_argument("--acoustic-scale", type=float)
    p.add_argument("--no-priors", action="store_true", default=None)
    p.set_defaults(func=cmd_decode)

    p = subs.add_parser("score", help="score hypotheses against a split")
    _common_flags(p)
    p.add_argument("--data", required=True)
    p.add_argument("--hyp", required=True, help="hypothesis transcript file")
    p.add_argument("--split", choices=("train", "dev", "test"), default="test")
    p.add_argument("--no-map", action="store_true", default=None,
                   help="skip the corpus phone mapping")
    p.set_defaults(func=cmd_score)

    p = subs.add_parser("gradcheck", help="finite-difference gradient verification")
    _common_flags(p)
    p.add_argument("--kinds", default="lstm,gru,zoneout,ff")
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--tolerance", type=float, default=gc.DEFAULT_TOLERANCE)
    p.add_argument("--corrupt", help="test hook: corrupt one gradient block by name")
    p.set_defaults(func=cmd_gradcheck)

    return parser


def _merge_config(args: argparse.Namespace) -> dict:
    file_values = parse_config_file(args.config) if args.config else {}
    mapping = {
        "seed": "train.seed",
        "phones": "synth.phones", "states": "synth.states", "dim": "synth.dim",
        "n_train": "synth.train", "n_dev": "synth.dev", "n_test": "synth.test",
        "len_min": "synth.len_min", "len_max": "synth.len_max", "noise": "synth.noise",
        "cell": "net.cell", "layers": "net.layers", "hidden": "net.hidden",
        "zoneout_c": "net.zoneout_c", "zoneout_h": "net.zoneout_h",
        "context": "train.context", "delay": "train.delay",
        "dropout": "dropout.p", "dropout_kind": "dropout.kind",
        "stages": "train.stages", "lr": "train.lr", "momentum": "train.momentum",
        "batch": "train.batch",
        "max_epochs": "train.max_epochs", "scale_batches": "train.scale_batches",
        "clip": "train.clip",
        "folds": "ensemble.folds", "master_weight": "ensemble.master_weight",
        "repeats": "experiment.repeats",
        "lm_weight": "decode.lm_weight", "acoustic_scale": "decode.acoustic_scale",
    }
    overrides = {}
    for attr, key in mapping.items():
        value = getattr(args, attr, None)
        if value is not None:
            overrides[key] = value
    if getattr(args, "no_priors", None):
        overrides["decode.use_priors"] = False
    return build_config(file_values, overrides)


# ---------------------------------------------------------------------------
# Shared pipeline pieces
# ---------------------------------------------------------------------------


class UsageError(NnamError):
    """Command-line misuse; maps to exit code 2."""


def _require_out(args, kind="directory") -> Path:
    if not args.out:
        raise UsageError(f"--out {kind} is required")
    return Path(args.out)


def _schedule(cfg) -> DropoutSchedule:
    return DropoutSchedule(kind=cfg["dropout.kind"], p_const=cfg["dropout.p"],
                           peak_p=cfg["dropout.peak"],
                           total_epochs=cfg["dropout.total_epochs"])


def _build_net(cfg, corpus: Corpus, rng: Rng):
    cell = cfg["net.cell"]
    context = cfg["train.context"]
    zoneout = ZoneoutConfig(cfg["net.zoneout_c"], cfg["net.zoneout_h"]) \
        if cell == "zoneout" else None
    net = init_network(cell, corpus.feature_dim * context,
                       [cfg["net.hidden"]] * cfg["net.layers"],
                       corpus.num_classes, rng,
                       context=context,
                       output_delay=0 if cell == "ff" else cfg["train.delay"],
                       dropout_p=cfg["dropout.p"], zoneout=zoneout)
    return net


def _fit_net(cfg, corpus_train, corpus_dev, corpus: Corpus, rng: Rng):
    """Train one network on utterance lists; returns (net, TrainLog)."""
    context = cfg["train.context"]
    train_pairs = prepare(corpus_train, context)
    dev_pairs = prepare(corpus_dev, context)
    net = _build_net(cfg, corpus, rng.child())
    net.normalizer = fit_normalizer([x for x, _ in train_pairs])
    common = dict(momentum=cfg["train.momentum"], schedule=_schedule(cfg),
                  max_epochs=cfg["train.max_epochs"],
                  scale_batches=cfg["train.scale_batches"], clip=cfg["train.clip"])
    if cfg["net.cell"] == "ff":
        log = train_feedforward(net, train_pairs, dev_pairs, rng.child(),
                                lr0=cfg["train.lr"], base_batch=cfg["train.batch"],
                                **common)
    else:
        log = train_recurrent(net, train_pairs, dev_pairs, rng.child(),
                              plan=StagePlan.parse(cfg["train.stages"]), **common)
    return net, log


def _train_ensemble_members(cfg, corpus: Corpus, rng: Rng, want_master: bool,
                            want_rpl: bool):
    """Folds (+ master, + RPL) for train-ensemble and experiment."""
    split = split_folds([u.utt_id for u in corpus.train], cfg["ensemble.folds"],
                        rng.child())

    def fit_fold(train_utts, dev_utts, child: Rng):
        net, _ = _fit_net(cfg, train_utts, dev_utts, corpus, child)
        return net

    fold_nets, held_out = train_crogging(corpus.train, split, fit_fold, rng.child())
    master_net = None
    master_log = None
    if want_master:
        master_net, master_log = _fit_net(cfg, corpus.train, corpus.dev, corpus,
                                          rng.child())
    rpl = None
    if want_rpl:
        lp = np.vstack([held_out[u.utt_id] for u in corpus.train])
        labels = np.concatenate([u.frame_labels for u in corpus.train])
        rpl = train_rpl(lp, labels, rng.child(), lr=cfg["rpl.lr"],
                        max_iter=cfg["rpl.max_iter"], holdout=cfg["rpl.holdout"])
    return fold_nets, master_net, master_log, rpl


def _decode_split(cfg, corpus: Corpus, utts, master_net, fold_nets, rpl, scenario,
                  data_dir) -> tuple[list[tuple[str, tuple[str, ...]]], dict]:
    """Viterbi transcripts for one posterior scenario over a list of utterances.

    Also returns per-utterance fold log-posterior streams for invariant checks.
    """
    hmms, lm, _ = load_sidecars(data_dir, corpus.phones)
    priors = estimate_priors([u.frame_labels for u in corpus.train],
                             corpus.num_classes) if cfg["decode.use_priors"] else None
    hyps = []
    fold_streams: dict[str, list[np.ndarray]] = {}
    for utt in utts:
        master_lp = None if master_net is None else master_net.log_posteriors(utt.features)
        fold_lps = [n.log_posteriors(utt.features) for n in fold_nets] \
            if fold_nets else None
        if fold_lps:
            fold_streams[utt.utt_id] = fold_lps
        streams = evaluate_scenarios(master_lp, fold_lps, rpl,
                                     cfg["ensemble.master_weight"],
                                     scenarios=(scenario,))
        combined_lp = np.log(np.maximum(streams[scenario], 1e-30))
        scores = posteriors_to_scores(combined_lp, priors,
                                      cfg["decode.acoustic_scale"])
        seq, _ = viterbi_decode(scores, hmms, lm, cfg["decode.lm_weight"])
        hyps.append((utt.utt_id, seq))
    return hyps, fold_streams


def _write_hyps(path, hyps) -> None:
    atomic_write_text(path, "".join(f"{utt_id} {' '.join(seq)}\n"
                                    for utt_id, seq in hyps))


def _read_hyps(path) -> dict[str, tuple[str, ...]]:
    out = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        fields = line.split()
        if fields:
            out[fields[0]] = tuple(fields[1:])
    return out


def _score_hyps(corpus: Corpus, utts, hyps: dict, phone_map, apply_map: bool
                ) -> PerCounts:
    total = PerCounts(0, 0, 0, 0)
    for utt in utts:
        if utt.utt_id not in hyps:
            raise ConfigError(f"hypothesis file is missing utterance {utt.utt_id}")
        ref, hyp = utt.transcript, hyps[utt.utt_id]
        if apply_map:
            ref = map_phones(ref, phone_map)
            hyp = map_phones(hyp, phone_map)
        total = total + per(ref, hyp)
    return total


def _report_line(counts: PerCounts) -> str:
    return (f"PER {counts.percent:.2f} S {counts.substitutions} "
            f"D {counts.deletions} I {counts.insertions} N {counts.ref_len}")


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_synth(args, cfg) -> int:
    out = _require_out(args)
    spec = SynthSpec(phones=cfg["synth.phones"], states=cfg["synth.states"],
                     dim=cfg["synth.dim"], n_train=cfg["synth.train"],
                     n_dev=cfg["synth.dev"], n_test=cfg["synth.test"],
                     len_min=cfg["synth.len_min"], len_max=cfg["synth.len_max"],
                     noise=cfg["synth.noise"])
    synth = generate_synthetic(spec, Rng(cfg["train.seed"]))
    synth.save(out)
    print(f"wrote corpus ({spec.n_train}/{spec.n_dev}/{spec.n_test} utterances, "
          f"{synth.corpus.num_classes} classes) to {out}")
    return 0


def cmd_train(args, cfg) -> int:
    out = _require_out(args)
    corpus = load_corpus(args.data)
    rng = Rng(cfg["train.seed"])
    net, log = _fit_net(cfg, corpus.train, corpus.dev, corpus, rng)
    save_model(net, out / "model.txt")
    atomic_write_text(out / "train.log", "".join(ln + "\n" for ln in log.lines()))
    print(f"trained {cfg['net.cell']} model: best dev CE "
          f"{min(log.stage_best_dev):.6f} over {len(log.records)} epochs")
    return 0


def cmd_train_ensemble(args, cfg) -> int:
    out = _require_out(args)
    corpus = load_corpus(args.data)
    rng = Rng(cfg["train.seed"])
    want_master = bool(args.master)
    want_rpl = bool(args.rpl)
    fold_nets, master_net, master_log, rpl = _train_ensemble_members(
        cfg, corpus, rng, want_master, want_rpl)
    fold_files = []
    for j, net in enumerate(fold_nets):
        name = f"fold{j}.txt"
        save_model(net, out / name)
        fold_files.append(name)
    manifest = EnsembleManifest(fold_files=fold_files,
                                master_weight=cfg["ensemble.master_weight"])
    if master_net is not None:
        save_model(master_net, out / "master.txt")
        manifest.master_file = "master.txt"
    if rpl is not None:
        save_rpl(out / "rpl.txt", rpl)
        manifest.rpl_file = "rpl.txt"
    save_manifest(out / "ensemble.txt", manifest)
    print(f"trained {len(fold_nets)} fold nets"
          + (" + master" if master_net else "")
          + (" + rpl" if rpl else "") + f" into {out}")
    return 0


def cmd_decode(args, cfg) -> int:
    out = _require_out(args, kind="file")
    corpus = load_corpus(args.data)
    utts = corpus.split(args.split)
    if bool(args.model) == bool(args.ensemble):
        raise UsageError("decode needs exactly one of --model or --ensemble")
    if args.model:
        master_net = load_model(args.model)
        fold_nets = []
        rpl = None
        scenario = "master"
        if args.rpl:
            raise ConfigError("--rpl needs an ensemble manifest with a post-layer")
    else:
        ensemble = load_ensemble(args.ensemble)
        master_net = ensemble.master
        fold_nets = ensemble.folds
        rpl = ensemble.rpl
        cfg["ensemble.master_weight"] = ensemble.master_weight
        scenario = args.scenario
        if args.rpl:
            if rpl is None:
                raise ConfigError("manifest has no post-layer parameters")
            scenario = scenario + "+rpl"
        else:
            rpl = None
    hyps, _ = _decode_split(cfg, corpus, utts, master_net, fold_nets, rpl,
                            scenario, args.data)
    _write_hyps(out, hyps)
    print(f"decoded {len(hyps)} utterances ({scenario}) to {out}")
    return 0


def cmd_score(args, cfg) -> int:
    corpus = load_corpus(args.data)
    utts = corpus.split(args.split)
    _, _, phone_map = load_sidecars(args.data, corpus.phones)
    hyps = _read_hyps(args.hyp)
    counts = _score_hyps(corpus, utts, hyps, phone_map,
                         apply_map=not args.no_map)
    line = _report_line(counts)
    print(line)
    if args.out:
        atomic_write_text(args.out, line + "\n")
    return 0


def cmd_gradcheck(args, cfg) -> int:
    kinds = tuple(k.strip() for k in args.kinds.split(",") if k.strip())
    unknown = [k for k in kinds if k not in gc.GRADCHECK_KINDS]
    if unknown:
        raise ConfigError(f"unknown cell kinds {unknown}")
    results = gc.run_battery(kinds, n_seeds=args.trials,
                             corrupt_block=args.corrupt)
    failed = False
    for kind in kinds:
        res = results[kind]
        ok = res.passed(args.tolerance)
        failed |= not ok
        print(f"gradcheck {kind}: max_rel_err {res.max_rel_error:.3e} "
              f"worst {res.worst_block} {'PASS' if ok else 'FAIL'}")
    return 1 if failed else 0


def cmd_experiment(args, cfg) -> int:
    out = _require_out(args)
    corpus = load_corpus(args.data)
    repeats = cfg["experiment.repeats"]
    base_rng = Rng(cfg["train.seed"])
    per_scenario: dict[str, list[float]] = {s: [] for s in SCENARIOS}
    for rep in range(repeats):
        rng = base_rng.child()
        fold_nets, master_net, _, rpl = _train_ensemble_members(
            cfg, corpus, rng, want_master=True, want_rpl=True)
        test_utts = corpus.test
        _, _, phone_map = load_sidecars(args.data, corpus.phones)
        all_fold_lp = []
        all_labels = []
        for scenario in SCENARIOS:
            hyps, fold_streams = _decode_split(cfg, corpus, test_utts, master_net,
                                               fold_nets, rpl, scenario, args.data)
            if scenario == "folds":
                for utt in test_utts:
                    all_fold_lp.append(fold_streams[utt.utt_id])
                    all_labels.append(utt.frame_labels)
            counts = _score_hyps(corpus, test_utts, dict(hyps), phone_map, True)
            per_scenario[scenario].append(counts.percent)
        # Jensen bound, asserted on every run over all test frames.
        stacked = [np.vstack([lp[j] for lp in all_fold_lp])
                   for j in range(len(fold_nets))]
        jensen_check(stacked, np.concatenate(all_labels))

    lines = []
    for scenario in SCENARIOS:
        vals = np.array(per_scenario[scenario])
        std = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
        lines.append(f"{scenario:18s} {vals.mean():6.2f} ± {std:.2f}")
    report = "\n".join(lines) + "\n"
    atomic_write_text(out / "report.txt", report)
    print(report, end="")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _merge_config(args)
        return args.func(args, cfg)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except NnamError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
