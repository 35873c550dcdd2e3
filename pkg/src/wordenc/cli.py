"""Command-line surface.

Commands: build-vocab, analyze-tokenization, pretrain, finetune, ensemble,
perturb, robustness, gradcheck, count-params, bench.  Every run resolves its
configuration (JSON config file values overridden by explicit flags), logs
the resolved document to its own output directory (command + timestamp +
seed so concurrent runs never collide), and writes all artifacts there
atomically.  Exit codes: 0 success, 1 failed check or runtime error, 2 usage.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import finetune as ft
from . import model as md
from . import pretrain as pt
from . import wordpiece as wp
from .bench import bench as run_bench
from .charcnn import CharCnnSpec
from .checkpoint import load_checkpoint, save_checkpoint
from .fileio import atomic_write_text
from .ensemble import ensemble_predict, leave_one_out_ensembles
from .gradcheck import grad_check
from .noise import perturb_tokens
from .robustness import ALL_SPLITS, TEST_ONLY, robustness_curve, write_curve


def _run_dir(args, command: str) -> Path:
    parent = Path(args.out)
    name = args.run_name or f"{command}-{time.strftime('%Y%m%d-%H%M%S')}-seed{args.seed}"
    path = parent / name
    path.mkdir(parents=True, exist_ok=True)
    return path


def _log_run_config(run_dir: Path, args, command: str) -> None:
    resolved = {k: v for k, v in vars(args).items() if k != "func"}
    resolved["command"] = command
    atomic_write_text(run_dir / "run_config.json",
                      json.dumps(resolved, indent=2, sort_keys=True, default=str))


def _load_config_file(args) -> dict:
    if not getattr(args, "config", None):
        return {}
    with open(args.config, encoding="utf-8") as f:
        return json.load(f)


def _apply_config_defaults(args, parser: argparse.ArgumentParser) -> None:
    """Config-file values fill in flags the user left at their defaults."""
    file_values = _load_config_file(args)
    if not file_values:
        return
    subparser = parser._wordenc_subparsers.get(args.command, parser)
    for key, value in file_values.items():
        dest = key.replace("-", "_")
        if not hasattr(args, dest):
            continue
        if subparser.get_default(dest) == getattr(args, dest):
            setattr(args, dest, value)


def _model_config(args, mode: str, vocab_size: int | None = None,
                  mlm_vocab_size: int | None = None) -> md.ModelConfig:
    if args.preset == "base":
        base = md.base_config(mode)
        if mode == md.WORDPIECE and vocab_size:
            base = md.ModelConfig.from_dict({**base.to_dict(), "vocab_size": vocab_size})
        return base
    kw = {}
    if mode == md.WORDPIECE:
        kw["vocab_size"] = vocab_size or 128
    else:
        kw["mlm_vocab_size"] = mlm_vocab_size
    return md.tiny_config(
        mode, layers=args.layers, heads=args.attention_heads, hidden=args.hidden,
        ffn=args.ffn, max_positions=args.max_positions, dropout=args.dropout, **kw,
    )


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_build_vocab(args, parser) -> int:
    run_dir = _run_dir(args, "build-vocab")
    _log_run_config(run_dir, args, "build-vocab")
    tokens = []
    for doc in pt.read_corpus(args.corpus):
        for sentence in doc:
            tokens.extend(sentence)
    vocab = wp.learn_vocab(tokens, target_size=args.target_size,
                           min_pair_freq=args.min_pair_freq)
    vocab.save(run_dir / "vocab.txt")
    print(f"learned {vocab.size} pieces -> {run_dir / 'vocab.txt'}")
    return 0


def cmd_analyze_tokenization(args, parser) -> int:
    run_dir = _run_dir(args, "analyze-tokenization")
    _log_run_config(run_dir, args, "analyze-tokenization")
    vocab = wp.WordpieceVocab.load(args.vocab)
    tokens = []
    for doc in pt.read_corpus(args.corpus):
        for sentence in doc:
            tokens.extend(sentence)
    report = wp.analyze_fragmentation(vocab, tokens)
    atomic_write_text(run_dir / "report.json", report.to_json())
    atomic_write_text(run_dir / "report.tsv", report.to_tsv())
    print(f"occurrences={report.total_occurrences} "
          f"unsplit_fraction={report.unsplit_fraction:.4f} "
          f"mean_pieces={report.mean_pieces_per_occurrence:.4f}")
    print(f"report -> {run_dir}")
    return 0


def cmd_pretrain(args, parser) -> int:
    run_dir = _run_dir(args, "pretrain")
    _log_run_config(run_dir, args, "pretrain")
    documents = pt.read_corpus(args.corpus)

    updates = [int(x) for x in args.updates.split(",")]
    batches = [int(x) for x in args.batch_sizes.split(",")]
    seq_lens = [int(x) for x in args.seq_lens.split(",")]
    peak_lrs = [float(x) for x in args.peak_lrs.split(",")]
    if not (len(updates) == len(batches) == len(seq_lens) == len(peak_lrs)):
        print("schedule lists must have equal lengths", file=sys.stderr)
        return 2
    schedule = [pt.StageConfig(*row) for row in zip(updates, batches, seq_lens, peak_lrs)]

    vocab = None
    if args.mode == md.WORDPIECE:
        if not args.vocab:
            print("--vocab is required in wordpiece mode", file=sys.stderr)
            return 2
        vocab = wp.WordpieceVocab.load(args.vocab)
        config = _model_config(args, md.WORDPIECE, vocab_size=vocab.size)
    else:
        config = _model_config(args, md.CHARACTER, mlm_vocab_size=args.mlm_vocab_size)
    config = config.with_heads((md.HEAD_MLM, md.HEAD_NSP),
                               mlm_vocab_size=config.mlm_vocab_size)

    result = pt.pretrain(
        documents, config, schedule, seed=args.seed, piece_vocab=vocab,
        optimizer=args.optimizer, weight_decay=args.weight_decay,
        warmup_fraction=args.warmup_fraction, micro_batch=args.micro_batch,
        checkpoint_dir=run_dir / "checkpoints" if args.checkpoint_every else None,
        checkpoint_every=args.checkpoint_every,
    )
    final_config = config
    if config.mode == md.CHARACTER and result.targets is not None:
        final_config = config.with_heads(config.attach_heads,
                                         mlm_vocab_size=result.targets.size)
        result.targets.save(run_dir / "mlm_targets.txt")
    save_checkpoint(result.params, final_config, run_dir / "checkpoint")
    pt.write_loss_log(result.log, run_dir / "loss_log.tsv")
    last = result.log[-1]
    print(f"final mlm_loss={last.mlm_loss:.4f} nsp_loss={last.nsp_loss:.4f}")
    print(f"checkpoint -> {run_dir / 'checkpoint'}")
    return 0


def _task_from_args(args) -> ft.TaskSpec:
    labels = tuple(args.labels.split(",")) if args.labels else ()
    return ft.TaskSpec(name=args.task_name, kind=args.task_kind, labels=labels,
                       metric=args.metric or "", negative_label=args.negative_label)


def cmd_finetune(args, parser) -> int:
    run_dir = _run_dir(args, "finetune")
    _log_run_config(run_dir, args, "finetune")
    task = _task_from_args(args)
    train = ft.load_task_file(task, args.train)
    test = ft.load_task_file(task, args.test)
    val = ft.load_task_file(task, args.val) if args.val else None

    vocab = wp.WordpieceVocab.load(args.vocab) if args.vocab else None
    if args.checkpoint:
        pretrained, config = load_checkpoint(args.checkpoint, expected_mode=args.mode)
    else:
        pretrained = None
        mode = args.mode or md.CHARACTER
        config = _model_config(args, mode, vocab_size=vocab.size if vocab else None)
    result, best_params = ft.finetune_run(
        task, train, test, config, seed=args.seed, pretrained=pretrained, val=val,
        vocab=vocab, epochs=args.epochs, batch_size=args.batch_size, lr=args.lr,
        warmup_fraction=args.warmup_fraction, weight_decay=args.weight_decay,
    )
    result.save(run_dir / "result.json")
    task_config = config.with_heads((task.head,), num_labels=max(len(task.labels), 1))
    save_checkpoint(best_params, task_config, run_dir / "best_checkpoint")
    print(f"seed={result.seed} best_epoch={result.best_epoch} "
          f"test_{task.metric}={result.test_score:.4f}")
    print(f"result -> {run_dir / 'result.json'}")
    return 0


def cmd_ensemble(args, parser) -> int:
    run_dir = _run_dir(args, "ensemble")
    _log_run_config(run_dir, args, "ensemble")
    task = _task_from_args(args)
    runs = [ft.RunResult.load(p) for p in args.runs]
    members = [r.predictions for r in runs]
    combined = ensemble_predict(members, task)
    payload = {"members": [r.seed for r in runs], "predictions": combined}
    if args.leave_one_out:
        payload["leave_one_out"] = [
            {"excluded": runs[i].seed, "predictions": preds}
            for i, preds in enumerate(leave_one_out_ensembles(members, task))
        ]
    atomic_write_text(run_dir / "ensemble.json", json.dumps(payload, indent=2, sort_keys=True))
    ft.write_aggregate(task.name, runs, run_dir / "aggregate.tsv")
    print(f"ensemble of {len(members)} runs -> {run_dir / 'ensemble.json'}")
    return 0


def cmd_perturb(args, parser) -> int:
    run_dir = _run_dir(args, "perturb")
    _log_run_config(run_dir, args, "perturb")
    rng = np.random.default_rng(args.seed)
    out_lines = []
    with open(args.input, encoding="utf-8") as f:
        for line in f:
            line = line.rstrip("\n")
            if not line.strip():
                out_lines.append("")
                continue
            out_lines.append(" ".join(perturb_tokens(line.split(), args.level, rng)))
    atomic_write_text(run_dir / "perturbed.txt", "\n".join(out_lines) + "\n")
    print(f"perturbed corpus -> {run_dir / 'perturbed.txt'}")
    return 0


def cmd_robustness(args, parser) -> int:
    run_dir = _run_dir(args, "robustness")
    _log_run_config(run_dir, args, "robustness")
    task = _task_from_args(args)
    test = ft.load_task_file(task, args.test)
    levels = [float(x) for x in args.levels.split(",")]
    models = {}
    for spec in args.checkpoints:
        if "=" not in spec:
            print(f"bad --checkpoints entry {spec!r}, want name=path", file=sys.stderr)
            return 2
        name, path = spec.split("=", 1)
        params, config = load_checkpoint(path)
        vocab = wp.WordpieceVocab.load(args.vocab) if (
            args.vocab and config.mode == md.WORDPIECE) else None
        models[name] = (params, config, vocab)

    train = val = retrain = None
    if args.scope == ALL_SPLITS:
        if not args.train:
            print("--train is required with --scope ALL_SPLITS", file=sys.stderr)
            return 2
        train = ft.load_task_file(task, args.train)
        val = ft.load_task_file(task, args.val) if args.val else None

        def retrain(name, noisy_train, noisy_val):
            params, config, vocab = models[name]
            best, task_config, _, _ = ft.train_task_model(
                task, noisy_train, config, seed=args.seed, pretrained=params,
                val=noisy_val, vocab=vocab, epochs=args.epochs,
                batch_size=args.batch_size, lr=args.lr,
            )
            return best, task_config, vocab

    rows = robustness_curve(models, task, test, levels, scope=args.scope,
                            noise_seed=args.seed, train=train, val=val, retrain=retrain)
    write_curve(rows, run_dir / "curve.tsv")
    for row in rows:
        print(row.tsv())
    print(f"curve -> {run_dir / 'curve.tsv'}")
    return 0


def cmd_gradcheck(args, parser) -> int:
    from .pretrain import PretrainInstance, instance_batch_loss

    run_dir = _run_dir(args, "gradcheck")
    _log_run_config(run_dir, args, "gradcheck")
    spec = CharCnnSpec(embed_dim=4, filters=((1, 4), (2, 4), (3, 8)), highway_layers=2)
    config = md.ModelConfig(
        mode=md.CHARACTER, layers=1, heads=2, hidden=16, ffn=32, max_positions=16,
        dropout=0.0, charcnn=spec, mlm_vocab_size=11, init_std=0.25,
        attach_heads=(md.HEAD_MLM, md.HEAD_NSP),
    )
    params = md.init_params(config, seed=args.seed).astype(np.float64)
    inst = PretrainInstance(
        tokens=["[CLS]", "the", "[MASK]", "[SEP]", "cat", "sat", "[SEP]"],
        segment_ids=[0, 0, 0, 0, 1, 1, 1], is_next=True,
        masked_positions=[2], masked_labels=[3],
    )

    def fn(p):
        return instance_batch_loss([inst], config, p).loss

    report = grad_check(fn, params, eps=args.eps, tol=args.tol,
                        max_entries_per_tensor=args.max_entries,
                        rng=np.random.default_rng(args.seed))
    print(report.summary())
    atomic_write_text(run_dir / "gradcheck.txt", report.summary() + "\n")
    return 0 if report.passed else 1


def cmd_count_params(args, parser) -> int:
    if args.preset == "base":
        config = md.base_config(args.mode)
    else:
        vocab_size = None
        if args.mode == md.WORDPIECE:
            vocab_size = args.vocab_size
        config = _model_config(args, args.mode, vocab_size=vocab_size,
                               mlm_vocab_size=args.mlm_vocab_size)
    total = md.count_parameters(config)
    print(f"mode={args.mode} preset={args.preset} parameters={total:,}")
    if args.preset == "base":
        reference = 104.6e6 if args.mode == md.CHARACTER else 109.5e6
        print(f"reference total {reference / 1e6:.1f}M, deviation "
              f"{abs(total - reference) / reference * 100:.2f}%")
    return 0


def cmd_bench(args, parser) -> int:
    run_dir = _run_dir(args, "bench")
    _log_run_config(run_dir, args, "bench")
    sentences = []
    for doc in pt.read_corpus(args.corpus):
        sentences.extend(doc)
    vocab = wp.WordpieceVocab.load(args.vocab)
    configs = {
        md.CHARACTER: _model_config(args, md.CHARACTER),
        md.WORDPIECE: _model_config(args, md.WORDPIECE, vocab_size=vocab.size),
    }
    report = run_bench(sentences, configs, vocab, batch_size=args.batch_size,
                       seed=args.seed, repeats=args.repeats)
    atomic_write_text(run_dir / "bench.tsv", report.to_tsv())
    print(report.to_tsv(), end="")
    print(f"report -> {run_dir / 'bench.tsv'}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with default values for flags")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="runs", help="parent directory for run outputs")
    p.add_argument("--run-name", default=None, help="override the generated run directory name")


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--preset", choices=["tiny", "base"], default="tiny")
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--attention-heads", type=int, default=2)
    p.add_argument("--hidden", type=int, default=32)
    p.add_argument("--ffn", type=int, default=64)
    p.add_argument("--max-positions", type=int, default=64)
    p.add_argument("--dropout", type=float, default=0.0)


def _add_task_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--task-name", default="task")
    p.add_argument("--task-kind", required=True,
                   choices=[ft.KIND_TOKEN_TAG, ft.KIND_PAIR_CLASS, ft.KIND_PAIR_SCORE])
    p.add_argument("--labels", default="", help="comma-separated label set")
    p.add_argument("--metric", default=None)
    p.add_argument("--negative-label", default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wordenc",
                                     description="dual-frontend word encoder lab")
    parser._wordenc_subparsers = {}
    sub = parser.add_subparsers(dest="command", required=True)
    original_add_parser = sub.add_parser

    def add_parser(name, **kwargs):
        p = original_add_parser(name, **kwargs)
        parser._wordenc_subparsers[name] = p
        return p

    sub.add_parser = add_parser

    p = sub.add_parser("build-vocab", help="learn a wordpiece vocabulary from a corpus")
    _add_common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--target-size", type=int, required=True)
    p.add_argument("--min-pair-freq", type=int, default=1)
    p.set_defaults(func=cmd_build_vocab)

    p = sub.add_parser("analyze-tokenization", help="fragmentation audit of a corpus")
    _add_common(p)
    p.add_argument("--vocab", required=True)
    p.add_argument("--corpus", required=True)
    p.set_defaults(func=cmd_analyze_tokenization)

    p = sub.add_parser("pretrain", help="masked-word + next-sentence pretraining")
    _add_common(p)
    _add_model_flags(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--mode", choices=[md.CHARACTER, md.WORDPIECE], default=md.CHARACTER)
    p.add_argument("--vocab", help="wordpiece vocabulary file (wordpiece mode)")
    p.add_argument("--mlm-vocab-size", type=int, default=100, help="top-K MLM target words")
    p.add_argument("--updates", default="40,10")
    p.add_argument("--batch-sizes", default="8,8")
    p.add_argument("--seq-lens", default="32,64")
    p.add_argument("--peak-lrs", default="6e-3,4e-3")
    p.add_argument("--optimizer", choices=["lamb", "adam"], default="lamb")
    p.add_argument("--weight-decay", type=float, default=0.01)
    p.add_argument("--warmup-fraction", type=float, default=0.01)
    p.add_argument("--micro-batch", type=int, default=None)
    p.add_argument("--checkpoint-every", type=int, default=0,
                   help="write a periodic checkpoint every N updates")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("finetune", help="fine-tune on a labeled task")
    _add_common(p)
    _add_model_flags(p)
    _add_task_flags(p)
    p.add_argument("--train", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--val", default=None)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--vocab", default=None)
    p.add_argument("--mode", choices=[md.CHARACTER, md.WORDPIECE], default=None)
    p.add_argument("--epochs", type=int, default=15)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=3e-5)
    p.add_argument("--warmup-fraction", type=float, default=0.1)
    p.add_argument("--weight-decay", type=float, default=0.1)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("ensemble", help="majority-vote over run result files")
    _add_common(p)
    _add_task_flags(p)
    p.add_argument("--runs", nargs="+", required=True, help="result.json files")
    p.add_argument("--leave-one-out", action="store_true")
    p.set_defaults(func=cmd_ensemble)

    p = sub.add_parser("perturb", help="write a misspelled copy of a text file")
    _add_common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--level", type=float, required=True)
    p.set_defaults(func=cmd_perturb)

    p = sub.add_parser("robustness", help="score checkpoints across noise levels")
    _add_common(p)
    _add_task_flags(p)
    p.add_argument("--checkpoints", nargs="+", required=True, help="name=checkpoint_dir")
    p.add_argument("--test", required=True)
    p.add_argument("--levels", default="0,0.1,0.2,0.3,0.4")
    p.add_argument("--scope", choices=[TEST_ONLY, ALL_SPLITS], default=TEST_ONLY)
    p.add_argument("--vocab", default=None)
    p.add_argument("--train", default=None, help="training split (ALL_SPLITS retraining)")
    p.add_argument("--val", default=None)
    p.add_argument("--epochs", type=int, default=15)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=3e-5)
    p.set_defaults(func=cmd_robustness)

    p = sub.add_parser("gradcheck", help="finite-difference check of a tiny model")
    _add_common(p)
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--max-entries", type=int, default=24)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("count-params", help="exact parameter total for a config")
    _add_common(p)
    _add_model_flags(p)
    p.add_argument("--mode", choices=[md.CHARACTER, md.WORDPIECE], required=True)
    p.add_argument("--vocab-size", type=int, default=md.BASE_WORDPIECE_VOCAB)
    p.add_argument("--mlm-vocab-size", type=int, default=None)
    p.set_defaults(func=cmd_count_params)

    p = sub.add_parser("bench", help="frontend throughput comparison")
    _add_common(p)
    _add_model_flags(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--repeats", type=int, default=1)
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _apply_config_defaults(args, parser)
    try:
        return args.func(args, parser)
    except (ValueError, ArithmeticError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
