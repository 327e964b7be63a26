"""Command-line entry point: corpus generation, training, decoding,
evaluation, latency simulation, gradient checking, and a streaming demo.

Every command accepts --config pointing at a JSON file whose keys mirror the
command's flags (unknown keys are rejected); explicit flags win over config
values. All randomness flows from --seed. Outputs are CSV or line-delimited
JSON so external tools can plot them.
"""

import argparse
import json
import logging
import sys

import numpy as np

from . import corpus as corpus_mod
from . import decoding, latency, metrics, model as model_mod, training, vocoder
from .errors import CheckpointError, TrainingDivergedError
from .streams import build_com_example, build_pslm_example
from .vocab import default_vocab

log = logging.getLogger("pslm")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_MISSING_INPUT = 3
EXIT_DIVERGED = 4

ABLATIONS = ("none", "no-tq", "no-sq", "no-wl")


class CommandError(Exception):
    def __init__(self, message: str, code: int = EXIT_ERROR):
        super().__init__(message)
        self.code = code


def _resolve_config(args: argparse.Namespace, parser_defaults: dict) -> dict:
    """Merge defaults < config file < explicit flags; reject unknown keys."""
    resolved = dict(parser_defaults)
    if getattr(args, "config", None):
        try:
            with open(args.config) as f:
                file_cfg = json.load(f)
        except FileNotFoundError:
            raise CommandError(f"config file not found: {args.config}", EXIT_MISSING_INPUT)
        except json.JSONDecodeError as exc:
            raise CommandError(f"invalid config file: {exc}", EXIT_CONFIG)
        unknown = set(file_cfg) - set(parser_defaults)
        if unknown:
            raise CommandError(
                f"unknown config keys: {', '.join(sorted(unknown))}", EXIT_CONFIG
            )
        resolved.update(file_cfg)
    for key in parser_defaults:
        value = getattr(args, key, None)
        if value is not None:
            resolved[key] = value
    return resolved


def _log_config(command: str, cfg: dict) -> None:
    log.info("%s config: %s", command, json.dumps(cfg, sort_keys=True, default=str))


def _load_corpus(path) -> corpus_mod.Corpus:
    try:
        return corpus_mod.load_corpus(path)
    except FileNotFoundError:
        raise CommandError(f"corpus file not found: {path}", EXIT_MISSING_INPUT)


def _load_checkpoint(path) -> model_mod.StreamLM:
    try:
        return model_mod.load_checkpoint(path)
    except FileNotFoundError:
        raise CommandError(f"checkpoint not found: {path}", EXIT_MISSING_INPUT)
    except CheckpointError as exc:
        raise CommandError(str(exc), EXIT_CONFIG)


def _build_examples(corp: corpus_mod.Corpus, mode: str, streams: int, ablation: str):
    pairs = corp.train
    examples = []
    for p in pairs:
        tq = () if ablation == "no-tq" else p.tq
        sq = () if ablation == "no-sq" else p.sq
        if mode == "pslm":
            examples.append(
                build_pslm_example(tq, p.ta, sq, p.sa, streams, corp.vocab)
            )
        else:
            examples.append(build_com_example(tq, p.ta, sq, p.sa, corp.vocab))
    return examples


def _sampling_from(cfg: dict) -> decoding.SamplingParams:
    return decoding.SamplingParams(
        temperature=cfg["temperature"],
        top_k=cfg["top_k"],
        top_p=cfg["top_p"],
        seed=cfg["seed"],
        max_total_len=cfg["max_total_len"],
    )


def _latency_params_from(cfg: dict) -> latency.LatencyParams:
    return latency.LatencyParams(
        d_s2t=cfg["d_s2t"],
        d_sq=cfg["d_sq"],
        d_asr=cfg["d_asr"],
        d_t2s=cfg["d_t2s"],
        tps=cfg["tps"],
        receptive_field=cfg["receptive_field"],
    )


def _parse_streams_list(text: str) -> list[int]:
    try:
        values = [int(v) for v in text.split(",") if v]
    except ValueError:
        raise CommandError(f"bad streams list {text!r}", EXIT_CONFIG)
    if not values or min(values) < 1:
        raise CommandError(f"bad streams list {text!r}", EXIT_CONFIG)
    return values


# --- commands ---


def cmd_gen_corpus(cfg: dict) -> int:
    corpus_cfg = corpus_mod.CorpusConfig(
        n_pairs=cfg["n_pairs"],
        expansion_mean=cfg["expansion_mean"],
        max_text_len=cfg["max_text_len"],
        seed=cfg["seed"],
        holdout_pairs=cfg["holdout_pairs"],
        tts_seed=cfg["tts_seed"],
    )
    corp = corpus_mod.generate_corpus(corpus_cfg)
    corpus_mod.save_corpus(corp, cfg["out"])
    speech = sum(len(p.sq) + len(p.sa) for p in corp.pairs)
    text = sum(len(p.tq) + len(p.ta) for p in corp.pairs)
    log.info(
        "wrote %d train + %d holdout pairs to %s (speech/text ratio %.2f)",
        len(corp.train), len(corp.holdout), cfg["out"], speech / max(text, 1),
    )
    return EXIT_OK


def cmd_train(cfg: dict) -> int:
    corp = _load_corpus(cfg["corpus"])
    streams = cfg["streams"] if cfg["mode"] == "pslm" else 0
    examples = _build_examples(corp, cfg["mode"], cfg["streams"], cfg["ablation"])
    config = model_mod.ModelConfig(
        num_layers=cfg["layers"],
        hidden_size=cfg["hidden"],
        num_heads=cfg["heads"],
        max_context=cfg["max_context"],
        num_speech_streams=streams,
        vocab=corp.vocab,
        seed=cfg["seed"],
    )
    net = model_mod.StreamLM(config)
    train_cfg = training.TrainConfig(
        steps=cfg["steps"],
        batch_size=cfg["batch_size"],
        learning_rate=cfg["lr"],
        weighted_loss=cfg["ablation"] != "no-wl",
        seed=cfg["seed"],
    )
    result = training.train(net, examples, train_cfg)
    model_mod.save_checkpoint(net, cfg["out"])
    if cfg["loss_csv"]:
        training.write_loss_history_csv(cfg["loss_csv"], result.history)
    final = result.final if result.history else None
    log.info(
        "trained %d steps; final total loss %s; checkpoint %s",
        cfg["steps"], f"{final.total:.4f}" if final else "n/a", cfg["out"],
    )
    return EXIT_OK


def _decode_all(net, corp, cfg):
    params = _sampling_from(cfg)
    pairs = corp.holdout if cfg["split"] == "holdout" else corp.train
    if not pairs:
        raise CommandError(f"corpus has no {cfg['split']} pairs", EXIT_CONFIG)
    report, outcomes = metrics.evaluate(
        net, pairs, corp.tts(), params, mode=cfg["mode"], input_mode=cfg["input"]
    )
    return report, outcomes


def cmd_decode(cfg: dict) -> int:
    net = _load_checkpoint(cfg["checkpoint"])
    corp = _load_corpus(cfg["corpus"])
    _, outcomes = _decode_all(net, corp, cfg)
    decoding.write_outcomes_jsonl(cfg["out"], outcomes)
    n_failed = sum(o.failed for o in outcomes)
    log.info("decoded %d prompts (%d failed) -> %s", len(outcomes), n_failed, cfg["out"])
    return EXIT_OK


def cmd_eval(cfg: dict) -> int:
    net = _load_checkpoint(cfg["checkpoint"])
    corp = _load_corpus(cfg["corpus"])
    report, _ = _decode_all(net, corp, cfg)
    if cfg["out"]:
        with open(cfg["out"], "w") as f:
            f.write(report.to_json() + "\n")
    print(metrics.EvalReport.CSV_HEADER)
    print(report.csv_row())
    log.info("eval: %s", report.to_json())
    return EXIT_OK


def cmd_latency(cfg: dict) -> int:
    params = _latency_params_from(cfg)
    if cfg["corpus"]:
        corp = _load_corpus(cfg["corpus"])
        records = [
            latency.LengthRecord(
                n_tq=len(p.tq), n_ta=len(p.ta), n_sq=len(p.sq), n_sa=len(p.sa)
            )
            for p in corp.pairs
        ]
    else:
        sim = corpus_mod.generate_corpus(
            corpus_mod.CorpusConfig(
                n_pairs=cfg["n_records"],
                max_text_len=cfg["record_text_cap"],
                seed=cfg["seed"],
                holdout_pairs=0,
            )
        )
        records = [
            latency.LengthRecord(
                n_tq=len(p.tq), n_ta=len(p.ta), n_sq=len(p.sq), n_sa=len(p.sa)
            )
            for p in sim.train
        ]
    rows = []
    for input_mode in ("sq", "asr", "gold"):
        method = latency.MethodSpec("com", input_mode)
        rows.append(
            (method.label, latency.simulate_dataset(records, params, method)["median"])
        )
    for streams in _parse_streams_list(cfg["streams_list"]):
        for input_mode in ("gold", "asr"):
            method = latency.MethodSpec("pslm", input_mode, streams)
            rows.append(
                (method.label, latency.simulate_dataset(records, params, method)["median"])
            )
    latency.write_latency_table_csv(cfg["out"], rows)
    for label, seconds in rows:
        print(f"{label},{latency.round_report(seconds):.2f}")
    log.info("latency table -> %s", cfg["out"])
    return EXIT_OK


def cmd_latency_curve(cfg: dict) -> int:
    params = _latency_params_from(cfg)
    methods = [latency.MethodSpec("com", "sq"), latency.MethodSpec("com", "asr")]
    for streams in _parse_streams_list(cfg["streams_list"]):
        methods.append(latency.MethodSpec("pslm", "asr", streams))
    rows = latency.latency_curve(
        range(0, cfg["n_ta_max"] + 1), params, methods, n_tq=cfg["n_tq"]
    )
    latency.write_latency_curve_csv(cfg["out"], rows)
    log.info("latency curve (%d rows) -> %s", len(rows), cfg["out"])
    return EXIT_OK


def cmd_gradcheck(cfg: dict) -> int:
    vocab = default_vocab()
    config = model_mod.ModelConfig(
        num_layers=1,
        hidden_size=16,
        num_heads=2,
        max_context=64,
        num_speech_streams=cfg["streams"],
        vocab=vocab,
        seed=cfg["seed"],
    )
    net = model_mod.StreamLM(config)
    corp = corpus_mod.generate_corpus(
        corpus_mod.CorpusConfig(n_pairs=1, max_text_len=3, seed=cfg["seed"], holdout_pairs=0)
    )
    pair = corp.train[0]
    example = build_pslm_example(
        pair.tq, pair.ta, pair.sq, pair.sa, cfg["streams"], vocab
    )
    result = training.gradcheck(
        net, example, epsilon=cfg["epsilon"], num_coords=cfg["coords"], seed=cfg["seed"]
    )
    status = "PASS" if result.passed(cfg["threshold"]) else "FAIL"
    print(
        f"{status} max_rel_err={result.max_rel_error:.3e} "
        f"coords={result.coords_checked} threshold={cfg['threshold']:.1e}"
    )
    return EXIT_OK if status == "PASS" else EXIT_ERROR


def cmd_stream_demo(cfg: dict) -> int:
    spec = vocoder.VocoderSpec(
        receptive_field=cfg["receptive_field"], upsample=cfg["upsample"]
    )
    rng = np.random.default_rng(cfg["seed"])
    vocab = default_vocab()
    tokens = [int(t) for t in rng.choice(vocab.speech_content_ids, size=cfg["n_tokens"])]
    synth = vocoder.StreamingSynthesizer(spec)
    pieces = []
    for i, token in enumerate(tokens, start=1):
        for fragment in synth.feed(token):
            pieces.append(fragment.samples)
            print(f"token {i}: emitted fragment {fragment.index} "
                  f"(after {fragment.emitted_after} tokens)")
    for fragment in synth.finish():
        pieces.append(fragment.samples)
        print(f"flush: emitted fragment {fragment.index} "
              f"(after {fragment.emitted_after} tokens)")
    if cfg["out_audio"]:
        vocoder.write_wav(cfg["out_audio"], np.concatenate(pieces))
        log.info("wrote %d samples to %s", cfg["n_tokens"] * spec.upsample, cfg["out_audio"])
    return EXIT_OK


# --- parser wiring ---


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file; flags override its keys")
    p.add_argument("--seed", type=int)


def _add_sampling(p: argparse.ArgumentParser) -> None:
    p.add_argument("--temperature", type=float)
    p.add_argument("--top-k", type=int, dest="top_k")
    p.add_argument("--top-p", type=float, dest="top_p")
    p.add_argument("--max-total-len", type=int, dest="max_total_len")


def _add_latency_params(p: argparse.ArgumentParser) -> None:
    p.add_argument("--tps", type=float)
    p.add_argument("--receptive-field", type=int, dest="receptive_field")
    p.add_argument("--d-s2t", type=float, dest="d_s2t")
    p.add_argument("--d-sq", type=float, dest="d_sq")
    p.add_argument("--d-asr", type=float, dest="d_asr")
    p.add_argument("--d-t2s", type=float, dest="d_t2s")
    p.add_argument("--streams-list", dest="streams_list")


DEFAULTS = {
    "gen-corpus": {
        "seed": 0, "n_pairs": 32, "expansion_mean": 11.1, "max_text_len": 12,
        "holdout_pairs": 4, "tts_seed": 0, "out": "corpus.jsonl",
    },
    "train": {
        "seed": 0, "corpus": None, "mode": "pslm", "streams": 1, "ablation": "none",
        "steps": 400, "batch_size": 8, "lr": 1e-3, "layers": 2, "hidden": 64,
        "heads": 2, "max_context": 2048, "out": "model.pt", "loss_csv": None,
    },
    "decode": {
        "seed": 0, "checkpoint": None, "corpus": None, "mode": "pslm",
        "input": "gold", "split": "train", "temperature": 0.8, "top_k": 60,
        "top_p": 0.8, "max_total_len": 2048, "out": "outcomes.jsonl",
    },
    "eval": {
        "seed": 0, "checkpoint": None, "corpus": None, "mode": "pslm",
        "input": "gold", "split": "train", "temperature": 0.8, "top_k": 60,
        "top_p": 0.8, "max_total_len": 2048, "out": None,
    },
    "latency": {
        "seed": 0, "corpus": None, "tps": 50.0, "receptive_field": 26,
        "d_s2t": 0.05, "d_sq": 0.05, "d_asr": 0.2, "d_t2s": 0.01,
        "streams_list": "1,2,3", "n_records": 200, "record_text_cap": 70,
        "out": "latency.csv",
    },
    "latency-curve": {
        "seed": 0, "tps": 50.0, "receptive_field": 26, "d_s2t": 0.05,
        "d_sq": 0.05, "d_asr": 0.2, "d_t2s": 0.01, "streams_list": "1,2",
        "n_ta_max": 140, "n_tq": 32, "out": "latency_curve.csv",
    },
    "gradcheck": {
        "seed": 0, "streams": 1, "epsilon": 1e-4, "coords": 200, "threshold": 1e-4,
    },
    "stream-demo": {
        "seed": 0, "n_tokens": 20, "receptive_field": 26, "upsample": 480,
        "out_audio": None,
    },
}

HANDLERS = {
    "gen-corpus": cmd_gen_corpus,
    "train": cmd_train,
    "decode": cmd_decode,
    "eval": cmd_eval,
    "latency": cmd_latency,
    "latency-curve": cmd_latency_curve,
    "gradcheck": cmd_gradcheck,
    "stream-demo": cmd_stream_demo,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pslm",
        description="Parallel text+speech token LM testbed",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-corpus", help="generate a synthetic QA corpus")
    _add_common(p)
    p.add_argument("--n-pairs", type=int, dest="n_pairs")
    p.add_argument("--expansion-mean", type=float, dest="expansion_mean")
    p.add_argument("--max-text-len", type=int, dest="max_text_len")
    p.add_argument("--holdout-pairs", type=int, dest="holdout_pairs")
    p.add_argument("--tts-seed", type=int, dest="tts_seed")
    p.add_argument("--out")

    p = sub.add_parser("train", help="train a model on a corpus")
    _add_common(p)
    p.add_argument("--corpus")
    p.add_argument("--mode", choices=("pslm", "com"))
    p.add_argument("--streams", type=int)
    p.add_argument("--ablation", choices=ABLATIONS)
    p.add_argument("--steps", type=int)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--lr", type=float)
    p.add_argument("--layers", type=int)
    p.add_argument("--hidden", type=int)
    p.add_argument("--heads", type=int)
    p.add_argument("--max-context", type=int, dest="max_context")
    p.add_argument("--out")
    p.add_argument("--loss-csv", dest="loss_csv")

    for name in ("decode", "eval"):
        p = sub.add_parser(name, help=f"{name} prompts from a corpus")
        _add_common(p)
        p.add_argument("--checkpoint")
        p.add_argument("--corpus")
        p.add_argument("--mode", choices=("pslm", "com"))
        p.add_argument("--input", choices=("gold", "asr", "sq"))
        p.add_argument("--split", choices=("train", "holdout"))
        _add_sampling(p)
        p.add_argument("--out")

    p = sub.add_parser("latency", help="median latency table")
    _add_common(p)
    _add_latency_params(p)
    p.add_argument("--corpus")
    p.add_argument("--n-records", type=int, dest="n_records")
    p.add_argument("--record-text-cap", type=int, dest="record_text_cap")
    p.add_argument("--out")

    p = sub.add_parser("latency-curve", help="latency vs. text answer length")
    _add_common(p)
    _add_latency_params(p)
    p.add_argument("--n-ta-max", type=int, dest="n_ta_max")
    p.add_argument("--n-tq", type=int, dest="n_tq")
    p.add_argument("--out")

    p = sub.add_parser("gradcheck", help="finite-difference gradient check")
    _add_common(p)
    p.add_argument("--streams", type=int)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--coords", type=int)
    p.add_argument("--threshold", type=float)

    p = sub.add_parser("stream-demo", help="streaming synthesis timeline")
    _add_common(p)
    p.add_argument("--n-tokens", type=int, dest="n_tokens")
    p.add_argument("--receptive-field", type=int, dest="receptive_field")
    p.add_argument("--upsample", type=int)
    p.add_argument("--out-audio", dest="out_audio")

    return parser


def main(argv=None) -> int:
    logging.basicConfig(
        level=logging.INFO, stream=sys.stderr, format="%(levelname)s %(message)s"
    )
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _resolve_config(args, DEFAULTS[args.command])
        _log_config(args.command, cfg)
        _validate_required(args.command, cfg)
        return HANDLERS[args.command](cfg)
    except CommandError as exc:
        log.error("%s", exc)
        return exc.code
    except TrainingDivergedError as exc:
        log.error("%s", exc)
        return EXIT_DIVERGED
    except (ValueError, CheckpointError) as exc:
        log.error("%s", exc)
        return EXIT_CONFIG


def _validate_required(command: str, cfg: dict) -> None:
    required = {
        "train": ("corpus", "out"),
        "decode": ("checkpoint", "corpus", "out"),
        "eval": ("checkpoint", "corpus"),
        "gen-corpus": ("out",),
        "latency": ("out",),
        "latency-curve": ("out",),
    }.get(command, ())
    missing = [k for k in required if not cfg.get(k)]
    if missing:
        raise CommandError(
            f"missing required option(s): {', '.join('--' + m.replace('_', '-') for m in missing)}",
            EXIT_CONFIG,
        )


if __name__ == "__main__":
    sys.exit(main())
