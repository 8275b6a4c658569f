"""Command-line interface: ``rnnt-toolkit <verb> ...``.

Outputs that are not explicitly named go to the run directory, taken from
``--run-dir``, else ``$RNNT_RUN_DIR``, else ``./runs``. Every invocation
records its arguments and the hashes of the files it wrote in
``manifest.json`` there.
"""

from __future__ import annotations

import argparse
import hashlib
import logging
import sys
from dataclasses import asdict, fields, replace
from pathlib import Path

import yaml

from .decode import BoundTransducer, DecodeConfig, beam_search, stream_greedy
from .lm import read_corpus, word_perplexity
from .nnet import Checkpoint
from .pipeline.config import TrainingConfig
from .pipeline.data import Utterance, read_features, read_features_csv, write_features_csv
from .pipeline.evaluate import evaluate
from .pipeline.synthetic import SPLITS, SyntheticTask, generate_task, load_split, load_task, save_task
from .pipeline.train import TextCorpus, default_run_dir, features, load_model, run_stage, update_manifest
from .units import load_vocab
from .wordpiece import WordpieceVocab, read_counts, render, segment_sentence, train_vocab

log = logging.getLogger("rnnt_toolkit")


def file_sha256(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _run_dir(args) -> Path:
    d = Path(args.run_dir) if args.run_dir else default_run_dir()
    d.mkdir(parents=True, exist_ok=True)
    return d


def _record(args, key: str, outputs=(), seed=None, **extra) -> None:
    entry = {
        "argv": list(sys.argv[1:]) if args.argv is None else list(args.argv),
        "seed": seed,
        "outputs": {str(p): file_sha256(p) for p in outputs},
        **extra,
    }
    update_manifest(_run_dir(args), key, entry)


# -- gen-task ---------------------------------------------------------------------


def cmd_gen_task(args) -> int:
    spec_data = yaml.safe_load(Path(args.config).read_text(encoding="utf-8")) if args.config else {}
    for f in fields(SyntheticTask):
        value = getattr(args, f.name, None)
        if value is not None:
            spec_data[f.name] = value
    spec = SyntheticTask(**spec_data)
    dataset = generate_task(spec, args.num_utts)
    out = Path(args.out)
    save_task(dataset, out)
    written = sorted(p for p in out.iterdir() if p.is_file())
    if args.csv:
        for name in SPLITS:
            write_features_csv(out / f"{name}.csv", dataset.split(name))
    print(f"wrote {len(dataset.train)}/{len(dataset.dev)}/{len(dataset.test)} train/dev/test utterances to {out}")
    _record(args, "gen-task", written, seed=spec.seed, task=asdict(spec))
    return 0


# -- train --------------------------------------------------------------------------


def _training_config(path: str, stage: str) -> TrainingConfig:
    data = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
    if data.setdefault("stage", stage) != stage:
        raise SystemExit(f"config stage {data['stage']!r} conflicts with --stage {stage}")
    return TrainingConfig.from_dict(data).resolve_paths(Path(path).parent)


def cmd_train(args) -> int:
    config = _training_config(args.config, args.stage)
    dataset = load_task(args.task)
    result = run_stage(config, dataset, _run_dir(args))
    print(f"{config.stage}: {config.optimizer.steps} steps, checkpoint {result.checkpoint_path} sha256 {result.checkpoint_sha256}")
    if result.transfer:
        moved = sorted(n for n, s in result.transfer.items() if s == "transferred")
        print(f"transferred {len(moved)} tensors: {' '.join(moved)}")
    return 0


# -- decode / eval ----------------------------------------------------------------


def _load_features(path: str):
    if str(path).endswith(".csv"):
        return read_features_csv(path)
    return read_features(path)


def _checked_model(args):
    ck = Checkpoint.load(args.checkpoint)
    if ck.metadata.get("stage") != "rnnt":
        raise SystemExit(f"{args.checkpoint}: not an rnnt checkpoint")
    model, params, vocab, stack = load_model(ck)
    if getattr(args, "vocab", None):
        given = load_vocab(args.vocab)
        if given.hash != vocab.hash:
            raise SystemExit(f"{args.vocab}: vocab hash {given.hash} does not match the checkpoint's {vocab.hash}")
    return ck, model, params, vocab, stack


def _decode_config(args, family: str) -> DecodeConfig:
    overrides = {k: v for k, v in (("beam", args.beam), ("temperature", args.temperature)) if v is not None}
    return DecodeConfig.for_units(family, nbest=args.nbest, **overrides)


def cmd_decode(args) -> int:
    _, model, params, vocab, stack = _checked_model(args)
    bound = BoundTransducer(model, params)
    config = _decode_config(args, vocab.family)
    out = open(args.out, "w", encoding="utf-8") if args.out else sys.stdout
    try:
        for uid, feats in _load_features(args.features):
            xs = features(Utterance(uid, feats, ""), stack)
            if args.stream:
                labels = []
                for event in stream_greedy(bound, xs, config.max_symbols_per_frame):
                    if event.label is None:
                        out.write(f"{uid}\t{event.frame}\t{vocab.decode(labels)}\n")
                    else:
                        labels.append(event.label)
                continue
            for hyp in beam_search(bound, xs, config)[: config.nbest]:
                out.write(f"{uid}\t{hyp.score!r}\t{vocab.decode(hyp.labels)}\n")
    finally:
        if out is not sys.stdout:
            out.close()
    _record(args, "decode", [args.out] if args.out else [], checkpoint=file_sha256(args.checkpoint))
    return 0


def cmd_eval(args) -> int:
    ck, *_ = _checked_model(args)
    utts = load_split(args.task, args.split)
    config = None
    if args.beam is not None or args.temperature is not None:
        config = _decode_config(args, ck.metadata["vocab"]["family"])
    out = Path(args.out) if args.out else _run_dir(args) / f"eval-{args.split}.json"
    report = evaluate(ck, utts, config, greedy=args.greedy, out=out)
    print(report.summary())
    _record(args, f"eval-{args.split}", [out], seed=ck.metadata.get("seed"), checkpoint=file_sha256(args.checkpoint))
    return 0


# -- wordpiece / lm ---------------------------------------------------------------


def cmd_wordpiece_train(args) -> int:
    counts = read_counts(args.counts)
    kwargs = {"graphemes": args.graphemes} if args.graphemes else {}
    vocab = train_vocab(counts, args.size, **kwargs)
    vocab.save(args.out)
    print(f"{len(vocab)} wordpieces written to {args.out}")
    _record(args, "wordpiece-train", [args.out])
    return 0


def cmd_wordpiece_segment(args) -> int:
    vocab = WordpieceVocab.load(args.vocab)
    for line in sys.stdin:
        sys.stdout.write(render(segment_sentence(line.rstrip("\n"), vocab)) + "\n")
    _record(args, "wordpiece-segment", [], vocab=file_sha256(args.vocab))
    return 0


def cmd_lm_train(args) -> int:
    config = _training_config(args.config, "lm")
    vocab = load_vocab(args.vocab)
    config = replace(config, units=replace(config.units, family=vocab.family, vocab=str(args.vocab)))
    corpus = TextCorpus(read_corpus(args.corpus), vocab)
    result = run_stage(config, corpus, _run_dir(args), checkpoint_path=args.out)
    print(f"lm: final loss {result.losses[-1] if result.losses else float('nan'):.4f}, checkpoint {args.out}")
    return 0


def cmd_lm_ppl(args) -> int:
    ck = Checkpoint.load(args.checkpoint)
    if ck.metadata.get("stage") != "lm":
        raise SystemExit(f"{args.checkpoint}: not an lm checkpoint")
    model, params, vocab, _ = load_model(ck)
    ppl = word_perplexity(model, params, read_corpus(args.corpus), vocab)
    print(f"word perplexity {ppl:.4f}")
    _record(args, "lm-ppl", [], checkpoint=file_sha256(args.checkpoint), perplexity=ppl)
    return 0


# -- parser -----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rnnt-toolkit", description="RNN-T training and decoding on synthetic tasks")
    p.add_argument("--run-dir", help="run directory (default: $RNNT_RUN_DIR or ./runs)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="verb", required=True)

    g = sub.add_parser("gen-task", help="generate a synthetic task directory")
    g.add_argument("--out", required=True)
    g.add_argument("--config", help="YAML file with SyntheticTask fields")
    g.add_argument("--num-utts", type=int, default=600)
    g.add_argument("--mode", choices=["labels", "text"])
    g.add_argument("--seed", type=int)
    g.add_argument("--noise", type=float)
    g.add_argument("--frames-per-label", dest="frames_per_label", type=int)
    g.add_argument("--jitter", type=int)
    g.add_argument("--num-labels", dest="num_labels", type=int)
    g.add_argument("--sound-classes", dest="sound_classes", type=int)
    g.add_argument("--lm-sentences", dest="lm_sentences", type=int)
    g.add_argument("--dev-size", dest="dev_size", type=int)
    g.add_argument("--test-size", dest="test_size", type=int)
    g.add_argument("--csv", action="store_true", help="also write CSV copies of the features")
    g.set_defaults(func=cmd_gen_task)

    t = sub.add_parser("train", help="run one training stage")
    t.add_argument("--stage", required=True, choices=["ctc", "lm", "rnnt"])
    t.add_argument("--config", required=True)
    t.add_argument("--task", required=True, help="task directory from gen-task")
    t.set_defaults(func=cmd_train)

    def decode_opts(q):
        q.add_argument("--checkpoint", required=True)
        q.add_argument("--vocab", help="vocab file; must match the checkpoint")
        q.add_argument("--beam", type=int)
        q.add_argument("--temperature", type=float)

    d = sub.add_parser("decode", help="decode a feature file to TSV (utt id, score, transcript)")
    decode_opts(d)
    d.add_argument("--features", required=True, help=".feats binary or .csv")
    d.add_argument("--nbest", type=int, default=1)
    d.add_argument("--stream", action="store_true", help="greedy streaming; one partial transcript per frame")
    d.add_argument("--out", help="output TSV (default: stdout)")
    d.set_defaults(func=cmd_decode)

    e = sub.add_parser("eval", help="decode a task split and report WER")
    decode_opts(e)
    e.add_argument("--task", required=True)
    e.add_argument("--split", default="dev", choices=list(SPLITS))
    e.add_argument("--greedy", action="store_true")
    e.add_argument("--nbest", type=int, default=1)
    e.add_argument("--out", help="report JSON (default: <run dir>/eval-<split>.json)")
    e.set_defaults(func=cmd_eval)

    w = sub.add_parser("wordpiece", help="wordpiece inventories")
    wsub = w.add_subparsers(dest="action", required=True)
    wt = wsub.add_parser("train")
    wt.add_argument("--counts", required=True)
    wt.add_argument("--size", type=int, required=True)
    wt.add_argument("--out", required=True)
    wt.add_argument("--graphemes", help="grapheme inventory (default: the full set)")
    wt.set_defaults(func=cmd_wordpiece_train)
    ws = wsub.add_parser("segment")
    ws.add_argument("--vocab", required=True)
    ws.set_defaults(func=cmd_wordpiece_segment)

    lm = sub.add_parser("lm", help="language-model pre-training")
    lsub = lm.add_subparsers(dest="action", required=True)
    lt = lsub.add_parser("train")
    lt.add_argument("--corpus", required=True)
    lt.add_argument("--vocab", required=True)
    lt.add_argument("--config", required=True)
    lt.add_argument("--out", required=True)
    lt.set_defaults(func=cmd_lm_train)
    lp = lsub.add_parser("ppl")
    lp.add_argument("--checkpoint", required=True)
    lp.add_argument("--corpus", required=True)
    lp.set_defaults(func=cmd_lm_ppl)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    args.argv = argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
