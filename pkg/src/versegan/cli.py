"""Command-line pipeline driver.

Subcommands cover each phase: `split` a raw corpus, `pretrain` a language
model, `finetune` it on a target corpus, `gan-train` it adversarially,
`generate` samples from a checkpoint, and `eval` checkpoints against a test
stream. Every training run owns an output directory (default under
$VERSEGAN_RUNS or ./runs) holding the resolved config echo, the metrics
log, checkpoints, and samples. Exit codes: 0 success, 1 runtime failure,
2 usage/config error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import config as config_mod
from . import evaluation, training
from .checkpoint import load_checkpoint
from .corpus import (Vocabulary, build_vocab, load_documents, render_tokens,
                     split_corpus, stream_ids, write_documents, SplitCorpus)
from .discriminator import DiscriminatorModel
from .errors import VerseganError
from .generator import GeneratorModel
from .runs import RunContext, output_root


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="versegan",
        description="creative-text GAN pipeline (pretrain / finetune / "
                    "gan-train / generate / eval / split)")
    sub = parser.add_subparsers(dest="command", required=True)

    p_split = sub.add_parser("split", help="shuffle and split a corpus 80/10/10")
    p_split.add_argument("--input", nargs="+", required=True,
                         help="plain-text files; blank line separates documents")
    p_split.add_argument("--output-dir", required=True)
    p_split.add_argument("--seed", type=int, default=0)

    for name, needs_ckpt in (("pretrain", False), ("finetune", True),
                             ("gan-train", True)):
        p = sub.add_parser(name)
        p.add_argument("--data", required=True,
                       help="directory holding train.txt/valid.txt/test.txt")
        if needs_ckpt:
            p.add_argument("--checkpoint", required=True)
        p.add_argument("--out", help="run directory (default: run root / command)")
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--preset", action="append", default=[],
                       help="named preset; may repeat")
        p.add_argument("--seed", type=int)
        p.add_argument("--epochs", type=int)
        p.add_argument("--lr", type=float)
        p.add_argument("--batch-size", type=int)
        if name == "gan-train":
            p.add_argument("--regime", choices=training.GAN_REGIMES)
            p.add_argument("--disc-steps", type=int,
                           help="discriminator steps per generator step")
            p.add_argument("--rollouts", type=int,
                           help="Monte-Carlo rollouts per step (0 = terminal reward)")
            p.add_argument("--freeze-encoder", action="store_true")

    p_gen = sub.add_parser("generate", help="sample from a checkpoint")
    p_gen.add_argument("--checkpoint", required=True)
    p_gen.add_argument("--num", type=int, default=5)
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument("--max-len", type=int, default=50)
    p_gen.add_argument("--temperature", type=float, default=1.0)
    p_gen.add_argument("--out", help="write samples to this file as well")

    p_eval = sub.add_parser("eval", help="compare checkpoints on a test stream")
    p_eval.add_argument("--checkpoints", required=True,
                        help="comma-separated checkpoint paths")
    p_eval.add_argument("--test", required=True, help="test corpus file")
    p_eval.add_argument("--samples", type=int, default=20)
    p_eval.add_argument("--sample-len", type=int, default=30)
    p_eval.add_argument("--seed", type=int, default=0)
    p_eval.add_argument("--out", help="write the JSONL report here")
    return parser


# ---------------------------------------------------------------------------
# subcommand bodies


def _cmd_split(args) -> int:
    docs = []
    for path in args.input:
        docs.extend(load_documents(path))
    split = split_corpus(docs, args.seed)
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, part in (("train", split.train), ("valid", split.valid),
                       ("test", split.test)):
        write_documents(part, out / f"{name}.txt")
    print(f"split {len(docs)} documents -> train {len(split.train)} / "
          f"valid {len(split.valid)} / test {len(split.test)} (seed {args.seed})")
    return 0


def _load_split_dir(data_dir, vocab: Vocabulary | None, settings: dict
                    ) -> tuple[SplitCorpus, Vocabulary]:
    data_dir = Path(data_dir)
    parts = {}
    for name in ("train", "valid", "test"):
        path = data_dir / f"{name}.txt"
        if not path.exists():
            raise VerseganError(f"{path} is missing; run `versegan split` first")
        parts[name] = load_documents(path)
    if vocab is None:
        train_tokens = (tok for doc in parts["train"] for tok in doc)
        vocab = build_vocab(train_tokens, min_freq=settings["min_freq"],
                            max_size=settings["max_size"])
    encoded = {name: [vocab.encode(doc) for doc in docs]
               for name, docs in parts.items()}
    split = SplitCorpus(train=encoded["train"], valid=encoded["valid"],
                        test=encoded["test"], split_seed=0)
    return split, vocab


def _resolve_settings(args) -> dict:
    settings = (config_mod.load_config(args.config) if args.config
                else config_mod.default_settings())
    for preset in args.preset:
        settings.update(config_mod.resolve_preset(preset))
    for flag, key in (("seed", "seed"), ("epochs", "epochs"),
                      ("lr", "learning_rate"), ("batch_size", "batch_size")):
        value = getattr(args, flag, None)
        if value is not None:
            settings[key] = value
    if getattr(args, "regime", None):
        settings["regime"] = args.regime
    if getattr(args, "disc_steps", None) is not None:
        settings["disc_steps_per_gen_step"] = args.disc_steps
    if getattr(args, "rollouts", None) is not None:
        settings["rollout_count"] = args.rollouts
    return settings


def _open_run(args, command: str) -> RunContext:
    run_dir = Path(args.out) if args.out else output_root() / command
    return RunContext(run_dir)


def _cmd_pretrain(args) -> int:
    settings = _resolve_settings(args)
    split, vocab = _load_split_dir(args.data, None, settings)
    gen_config, train_config = config_mod.build_configs(settings, len(vocab))
    if train_config.regime != "mle":
        train_config.regime = "mle"
    gen = GeneratorModel(gen_config, np.random.default_rng(train_config.seed))
    with _open_run(args, "pretrain") as run:
        run.echo_config(settings)
        vocab.save(run.dir / "vocab.txt")
        history = training.pretrain_mle(gen, split, vocab, train_config, run)
    final = history[-1]
    print(f"pretrained {train_config.epochs} epochs; "
          f"valid perplexity {final.get('perplexity', float('nan')):.3f}")
    return 0


def _cmd_finetune(args) -> int:
    settings = _resolve_settings(args)
    loaded = load_checkpoint(args.checkpoint)
    if loaded.phase not in ("pretrained", "finetuned"):
        raise VerseganError(
            f"finetune expects a pretrained/finetuned checkpoint, got "
            f"phase {loaded.phase!r}")
    split, vocab = _load_split_dir(args.data, loaded.vocab, settings)
    gen = loaded.generator
    _, train_config = config_mod.build_configs(settings, len(vocab))
    train_config.regime = "mle"
    with _open_run(args, "finetune") as run:
        run.echo_config(settings)
        vocab.save(run.dir / "vocab.txt")
        history = training.finetune_lm(gen, split, vocab, train_config, run)
    final = history[-1]
    print(f"finetuned {train_config.epochs} epochs; "
          f"valid perplexity {final.get('perplexity', float('nan')):.3f}")
    return 0


def _cmd_gan_train(args) -> int:
    settings = _resolve_settings(args)
    if settings.get("regime") not in training.GAN_REGIMES:
        settings["regime"] = "creative_gan"
    loaded = load_checkpoint(args.checkpoint)
    if loaded.phase not in ("pretrained", "finetuned"):
        raise VerseganError(
            f"gan-train expects a pretrained/finetuned checkpoint, got "
            f"phase {loaded.phase!r}")
    split, vocab = _load_split_dir(args.data, loaded.vocab, settings)
    gen = loaded.generator
    _, train_config = config_mod.build_configs(settings, len(vocab))
    disc = DiscriminatorModel.from_generator(
        gen, np.random.default_rng(train_config.seed + 1),
        freeze_encoder=bool(getattr(args, "freeze_encoder", False)))
    with _open_run(args, "gan-train") as run:
        run.echo_config(settings)
        vocab.save(run.dir / "vocab.txt")
        history = training.adversarial_train(gen, disc, split, vocab,
                                             train_config, run)
    final = history[-1]
    print(f"adversarial training ({train_config.regime}) done; "
          f"valid perplexity {final['perplexity']:.3f}, "
          f"disc accuracy {final['disc_accuracy']:.3f}")
    return 0


def _cmd_generate(args) -> int:
    loaded = load_checkpoint(args.checkpoint)
    gen, vocab = loaded.generator, loaded.vocab
    rng = np.random.default_rng(args.seed)
    texts = []
    for _ in range(args.num):
        traj = gen.sample([vocab.bos_id], args.max_len, args.temperature,
                          rng, eos_id=vocab.eos_id)
        tokens = [t for t in traj.tokens if t != vocab.eos_id]
        texts.append(render_tokens(vocab.decode(tokens)).strip("\n"))
    body = "\n\n".join(texts) + "\n"
    sys.stdout.write(body)
    if args.out:
        Path(args.out).write_text(body, encoding="utf-8")
    return 0


def _cmd_eval(args) -> int:
    paths = [p for p in args.checkpoints.split(",") if p]
    if not paths:
        raise VerseganError("no checkpoints given")
    loaded = [load_checkpoint(p) for p in paths]
    vocab_bytes = loaded[0].vocab.to_bytes()
    for path, l in zip(paths, loaded):
        if l.vocab.to_bytes() != vocab_bytes:
            raise VerseganError(
                f"vocabulary mismatch: {path} was trained with a different "
                f"vocabulary than {paths[0]}")
    vocab = loaded[0].vocab
    test_docs = [vocab.encode(doc) for doc in load_documents(args.test)]
    if not test_docs:
        raise VerseganError(f"{args.test} holds no documents")
    test_ids = stream_ids(test_docs, vocab)
    models = [(Path(p).stem, l.generator) for p, l in zip(paths, loaded)]
    reports = evaluation.compare_models(
        models, test_ids, dataset_id=Path(args.test).stem,
        bos_id=vocab.bos_id, eos_id=vocab.eos_id, sample_count=args.samples,
        sample_len=args.sample_len, seed=args.seed)
    print(evaluation.render_table(reports))
    if args.out:
        Path(args.out).write_text(evaluation.reports_to_jsonl(reports),
                                  encoding="utf-8")
    return 0


_COMMANDS = {
    "split": _cmd_split,
    "pretrain": _cmd_pretrain,
    "finetune": _cmd_finetune,
    "gan-train": _cmd_gan_train,
    "generate": _cmd_generate,
    "eval": _cmd_eval,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except VerseganError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def console_main() -> None:
    sys.exit(main())
