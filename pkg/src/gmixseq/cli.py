"""``gmixseq`` command line: gen-data, train, sample, interpolate, eval,
inspect-checkpoint.

Every verb is deterministic given ``--seed`` (falling back to the
GMIXSEQ_SEED environment variable, then 0) and its input files. Failures
print one ``error: <kind>: <message>`` line to stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import checkpoint, config, corpus, gmeg, metrics, nfmg, synthdata
from .corpus import Sequence, SyntheticCorpus
from .training import TrainConfig

log = logging.getLogger("gmixseq")

METRICS = ("div", "ba", "pcm", "e-ppl", "e-pdv")


class UsageError(ValueError):
    pass


def _seed(args) -> int:
    return args.seed if args.seed is not None else config.default_seed(0)


def _load_corpus(path) -> SyntheticCorpus:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"dataset not found: {path}")
    return corpus.load(path)


def _load_model(path):
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    return checkpoint.load(path)


def _writable(path) -> Path:
    path = Path(path)
    if not path.parent.exists():
        raise FileNotFoundError(f"output directory does not exist: {path.parent}")
    return path


# -- gen-data ---------------------------------------------------------------

def cmd_gen_data(args) -> int:
    seed = _seed(args)
    out = _writable(args.out)
    if args.n < 1 or args.t < 3:
        raise UsageError("--n must be >= 1 and --t >= 3")
    if args.kind == "emotion":
        if args.k < 2:
            raise UsageError("--k must be >= 2 for an emotion corpus")
        data = synthdata.gen_emotion_corpus(args.k, args.n, args.t, coeff_dim=args.coeff_dim, seed=seed,
                                            audio_dim=args.audio_dim, n_speakers=args.speakers)
        sep = synthdata.check_separation(data.params)
        extra = f" min_offset_gap={sep:.4f}"
    else:
        data = synthdata.gen_motion_corpus(args.speakers, args.n, args.t, seed=seed, modality=args.modality,
                                           audio_dim=args.audio_dim)
        extra = f" regimes={np.bincount(data.labels(), minlength=2).tolist()}"
    corpus.save(data, out)
    counts = np.bincount(data.labels(), minlength=data.k).tolist()
    print(f"wrote {out}: kind={data.kind} sequences={len(data)} K={data.k} T={data.length} "
          f"D={data.coeff_dim} per_label={counts}{extra}")
    return 0


# -- train ------------------------------------------------------------------

_TRAIN_DEFAULTS = {"epochs": 100, "lr": 1e-4, "batch_size": 16, "prev_dropout": 0.5, "save_every": 10}


def _split_settings(model_kind: str, settings: dict):
    cfg_cls = gmeg.GmegConfig if model_kind == "gmeg" else nfmg.NfmgConfig
    model_fields = {f.name for f in dataclasses.fields(cfg_cls)}
    train_fields = {f.name for f in dataclasses.fields(TrainConfig)} | {"save_every"}
    model_kw, train_kw = {}, {}
    for key, value in settings.items():
        if key in train_fields:
            train_kw[key] = value
        elif key in model_fields:
            model_kw[key] = value
        else:
            raise UsageError(f"unknown setting {key!r} for a {model_kind} run")
    return cfg_cls, model_kw, train_kw


def cmd_train(args) -> int:
    data = _load_corpus(args.data)
    out = _writable(args.out)
    log_path = _writable(args.log) if args.log else out.with_suffix(".csv")
    file_values = config.load_config(args.config) if args.config else {}
    flags = {"epochs": args.epochs, "lr": args.lr, "batch_size": args.batch_size,
             "save_every": args.save_every, "seed": args.seed}
    if args.model == "gmeg":
        flags["k"] = args.k
    settings = config.merge(_TRAIN_DEFAULTS, file_values, flags)
    if settings.get("seed") is None:
        settings["seed"] = config.default_seed(0)

    cfg_cls, model_kw, train_kw = _split_settings(args.model, settings)
    model_kw["seed"] = settings["seed"]
    model_kw.setdefault("audio_dim", data.audio_dim)
    model_kw.setdefault("n_speakers", int(data.speakers().max()) + 1)
    if args.model == "gmeg":
        model_kw.setdefault("coeff_dim", data.coeff_dim)
        model_kw.setdefault("k", data.k)
        if model_kw["k"] < 1:
            raise UsageError("K must be >= 1")
        if model_kw["k"] > 1 and model_kw["k"] != data.k:
            raise UsageError(f"--k {model_kw['k']} does not match the dataset's K={data.k}")
        model = gmeg.GmegModel(cfg_cls(**model_kw))
        trainer = gmeg.train
    else:
        if data.coeff_dim != synthdata.MOTION_DIM:
            raise UsageError(f"nfmg trains on {synthdata.MOTION_DIM}-d motion data, got D={data.coeff_dim}")
        model = nfmg.NfmgModel(cfg_cls(**model_kw))
        trainer = nfmg.train
    save_every = int(train_kw.pop("save_every"))
    train_kw["seed"] = settings["seed"]
    tcfg = TrainConfig(**train_kw)

    def on_epoch(epoch, row):
        # optimizer is attached only after fit returns; save params mid-run
        if save_every > 0 and (epoch + 1) % save_every == 0 and epoch + 1 < tcfg.epochs:
            checkpoint.save(model, out, step=epoch + 1)

    history = trainer(model, data, tcfg, on_epoch=on_epoch)
    checkpoint.save(model, out)
    log_path.write_text(history.to_csv())
    final = dict(zip(history.columns, history.rows[-1]))
    print(f"trained {args.model} for {tcfg.epochs} epochs: "
          + " ".join(f"{k}={v:.6g}" for k, v in final.items()) + f"; checkpoint {out}; log {log_path}")
    return 0


# -- sample / interpolate ---------------------------------------------------

def _audio_from(data: SyntheticCorpus, index: int) -> np.ndarray:
    if not 0 <= index < len(data):
        raise UsageError(f"--index {index} out of range for {len(data)} sequences")
    return data.sequences[index].audio


def _draw(model, rng):
    if model.kind == "gmeg":
        return rng.standard_normal(model.cfg.d_w), rng.standard_normal(model.cfg.d_z)
    return (rng.standard_normal(model.cfg.d_latent),)


def _sequence_file(model, audio, outputs, labels, speaker) -> SyntheticCorpus:
    coeff_dim = outputs[0].shape[-1]
    k = model.cfg.k if model.kind == "gmeg" else 1
    seqs = [Sequence(int(lab), int(speaker), audio, out) for out, lab in zip(outputs, labels)]
    return SyntheticCorpus(f"generated-{model.kind}", k, audio.shape[0], coeff_dim, audio.shape[1],
                           int(model.cfg.seed), {}, seqs)


def cmd_sample(args) -> int:
    model = _load_model(args.checkpoint)
    audio = _audio_from(_load_corpus(args.data), args.index)
    out = _writable(args.out)
    rng = np.random.default_rng(_seed(args))
    if args.n < 1:
        raise UsageError("--n must be >= 1")
    outputs = []
    for _ in range(args.n):
        noise = _draw(model, rng)
        if model.kind == "gmeg":
            if args.emotion is None:
                raise UsageError("--emotion is required for a gmeg checkpoint")
            outputs.append(gmeg.generate(model, audio, e=args.emotion, speaker=args.speaker,
                                         noise_w=noise[0], noise_z=noise[1]))
        else:
            outputs.append(nfmg.sample_motion(model, audio, noise[0], speaker=args.speaker))
    label = args.emotion if args.emotion is not None else -1
    corpus.save(_sequence_file(model, audio, outputs, [label] * args.n, args.speaker), out)
    print(f"wrote {args.n} sequence(s) of {audio.shape[0]} frames to {out}")
    return 0


def _alpha_grid(spec: str | None) -> np.ndarray:
    if spec is None:
        return np.round(np.linspace(0.0, 1.0, 11), 12)
    try:
        grid = np.array([float(x) for x in spec.split(",") if x.strip()])
    except ValueError:
        raise UsageError(f"invalid alpha grid {spec!r}") from None
    if len(grid) < 2 or np.any(~np.isfinite(grid)) or np.any(grid < 0) or np.any(grid > 1):
        raise UsageError("alpha grid needs >= 2 values in [0, 1]")
    if np.any(np.diff(grid) <= 0):
        raise UsageError("alpha grid must be strictly increasing")
    return grid


def cmd_interpolate(args) -> int:
    model = _load_model(args.checkpoint)
    if model.kind != "gmeg":
        raise UsageError("interpolate needs a gmeg checkpoint")
    data = _load_corpus(args.data)
    audio = _audio_from(data, args.index)
    alphas = _alpha_grid(args.alphas)
    out = _writable(args.out)
    table = _writable(args.table) if args.table else out.with_suffix(".csv")
    noise_w, noise_z = _draw(model, np.random.default_rng(_seed(args)))
    outputs = [gmeg.generate(model, audio, speaker=args.speaker, blend=(args.e1, args.e2, float(a)),
                             noise_w=noise_w, noise_z=noise_z) for a in alphas]
    clf = synthdata.oracle_classifier(data)
    probs = clf.sequence_proba(np.stack(outputs))
    path = [clf.embed_sequence(s) for s in outputs]

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["alpha", "p_e1", "p_e2", "e_ppl"])
    for i, a in enumerate(alphas):
        # one point has no steps yet
        ppl = metrics.e_ppl(path[:i + 1]) if i > 0 else float("nan")
        writer.writerow([repr(float(a)), repr(float(probs[i, args.e1])), repr(float(probs[i, args.e2])),
                         repr(ppl)])
    table.write_text(buf.getvalue())
    labels = [args.e1 if a == 1.0 else args.e2 if a == 0.0 else -1 for a in alphas]
    corpus.save(_sequence_file(model, audio, outputs, labels, args.speaker), out)
    print(f"wrote {len(alphas)} interpolated sequences to {out}; table {table}; "
          f"E-PPL={metrics.e_ppl(path):.6g}")
    return 0


# -- eval -------------------------------------------------------------------

def evaluate(names, pred: SyntheticCorpus, gt: SyntheticCorpus | None = None,
             provenance: str = "") -> metrics.MetricReport:
    report = metrics.MetricReport()
    seqs = pred.coeffs()
    for name in names:
        if name == "div":
            if len(pred) < 2:
                raise UsageError("div needs a file with at least 2 sequences")
            report.add("div", metrics.div(metrics.sequence_embeddings(seqs)), provenance,
                       embedding="mean head rotation", n=len(pred))
        elif name == "ba":
            if pred.coeff_dim != synthdata.MOTION_DIM:
                raise UsageError(f"ba needs {synthdata.MOTION_DIM}-d motion sequences")
            scores = [metrics.beat_align(metrics.extract_motion_beats(s.coeffs),
                                         synthdata.audio_beats(s.audio)) for s in pred.sequences]
            report.add("ba", float(np.mean(scores)), provenance, sigma=metrics.BA_SIGMA, n=len(pred))
        elif name == "pcm":
            if gt is None:
                raise UsageError("pcm needs --gt")
            report.add("pcm", metrics.pcm(seqs, gt.coeffs()), provenance, tau=metrics.PCM_TAU)
        elif name in ("e-ppl", "e-pdv"):
            fn = metrics.e_ppl if name == "e-ppl" else metrics.e_pdv
            path = list(seqs.mean(axis=1))
            report.add(name, fn(path), provenance, embedding="sequence mean", n=len(path))
        else:
            raise UsageError(f"unknown metric {name!r}")
    return report


def cmd_eval(args) -> int:
    pred_path = Path(args.pred)
    pred = _load_corpus(pred_path)
    blobs = [pred_path.read_bytes()]
    gt = None
    if args.gt:
        gt = _load_corpus(args.gt)
        blobs.append(Path(args.gt).read_bytes())
    report = evaluate(args.metric, pred, gt, metrics.provenance(*blobs))
    text = report.to_text()
    if args.out:
        _writable(args.out).write_text(text)
    sys.stdout.write(text)
    return 0


def cmd_inspect(args) -> int:
    path = Path(args.checkpoint)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    print(json.dumps(checkpoint.inspect(path), indent=2, sort_keys=True))
    return 0


# -- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gmixseq", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="verb", required=True)

    g = sub.add_parser("gen-data", help="write a synthetic corpus")
    g.add_argument("--kind", choices=("emotion", "motion"), required=True)
    g.add_argument("--k", type=int, default=3, help="emotion classes")
    g.add_argument("--n", type=int, required=True, help="sequences per class (emotion) or per speaker (motion)")
    g.add_argument("--t", type=int, default=32)
    g.add_argument("--coeff-dim", type=int, default=16)
    g.add_argument("--audio-dim", type=int, default=8)
    g.add_argument("--speakers", type=int, default=1)
    g.add_argument("--modality", choices=("bimodal", "unimodal"), default="bimodal")
    g.add_argument("--seed", type=int)
    g.add_argument("--out", required=True)
    g.set_defaults(fn=cmd_gen_data)

    t = sub.add_parser("train", help="train a model and write a checkpoint and CSV log")
    t.add_argument("--data", required=True)
    t.add_argument("--model", choices=("gmeg", "nfmg"), default="gmeg")
    t.add_argument("--config", help="key = value file; flags override it")
    t.add_argument("--epochs", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--k", type=int, help="mixture components (1 = unimodal prior)")
    t.add_argument("--save-every", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--out", required=True, help="checkpoint path")
    t.add_argument("--log", help="CSV log path (default: checkpoint path with .csv)")
    t.set_defaults(fn=cmd_train)

    s = sub.add_parser("sample", help="generate sequences for one audio track")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", required=True, help="corpus supplying the audio")
    s.add_argument("--index", type=int, default=0)
    s.add_argument("--emotion", type=int)
    s.add_argument("--speaker", type=int, default=0)
    s.add_argument("--n", type=int, default=1)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_sample)

    i = sub.add_parser("interpolate", help="sweep the blend between two emotions")
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--data", required=True, help="labelled corpus: audio source and classifier fit")
    i.add_argument("--index", type=int, default=0)
    i.add_argument("--e1", type=int, required=True)
    i.add_argument("--e2", type=int, required=True)
    i.add_argument("--alphas", help="comma-separated grid (default 0,0.1,...,1)")
    i.add_argument("--speaker", type=int, default=0)
    i.add_argument("--seed", type=int)
    i.add_argument("--out", required=True)
    i.add_argument("--table", help="CSV path (default: output path with .csv)")
    i.set_defaults(fn=cmd_interpolate)

    e = sub.add_parser("eval", help="compute metrics on a sequence file")
    e.add_argument("--pred", required=True)
    e.add_argument("--gt")
    e.add_argument("--metric", action="append", choices=METRICS, required=True)
    e.add_argument("--out")
    e.set_defaults(fn=cmd_eval)

    c = sub.add_parser("inspect-checkpoint", help="print a checkpoint's header summary")
    c.add_argument("checkpoint")
    c.set_defaults(fn=cmd_inspect)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except UsageError as exc:
        print(f"error: usage: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - the CLI contract is one error line, no traceback
        msg = " ".join(str(exc).split())
        print(f"error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
