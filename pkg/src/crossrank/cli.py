"""Command-line front end.

Subcommands: augment, softrank, loss, gradcheck, eval, train-toy. All
randomness is controlled by explicit --seed flags, reports come in a
machine-parseable key=value form (--format records, the default) or an
aligned table (--format table), and exit codes are.

    0  success
    1  usage or file-format error
    2  numerical failure (training divergence, gradient check failure)
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .fileio import (
    FileFormatError,
    load_image_rgb,
    read_embeddings,
    read_manifest,
    save_image_rgb,
    write_embeddings,
    write_manifest,
)
from .imgproc import (
    CHANNEL_NAMES,
    MaaConfig,
    MaaSample,
    PatchRect,
    Simplex3Weights,
    apply_maa_sample,
    sample_cutmix_patch,
    sample_maa_params,
    sample_simplex3,
)
from .losses import EmbeddingBatch, cmr_loss, total_loss
from .metrics import EvalConfig, rank_gallery, evaluate, evaluate_repeated
from .softrank import SoftRankParams, hard_rank, soft_rank, soft_rank_jacobian
from .toytrain import (
    DivergenceError,
    SyntheticSpec,
    TrainConfig,
    embed_dataset,
    evaluate_heldout,
    generate_synthetic,
    generate_synthetic_images,
    gradcheck_suite,
    mean_heldout_footrule,
    new_model,
    split_identities,
    train,
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on bad arguments; the contract here is exit 1 for
    # usage errors, so surface them as exceptions instead
    def error(self, message):
        raise UsageError(message)


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _emit(pairs, fmt: str) -> None:
    if fmt == "table":
        width = max(len(str(k)) for k, _ in pairs)
        for k, v in pairs:
            print(f"{k:<{width}}  {_fmt(v)}")
    else:
        for k, v in pairs:
            print(f"{k}={_fmt(v)}")


def _add_format_flag(p) -> None:
    p.add_argument("--format", choices=("records", "table"), default="records",
                   help="report style: key=value lines or an aligned table")


def _parse_channel(name: str) -> int:
    if name not in CHANNEL_NAMES:
        raise UsageError(f"channel must be one of {'/'.join(CHANNEL_NAMES)}, got {name!r}")
    return CHANNEL_NAMES.index(name)


def _parse_floats(text: str, n: int, what: str) -> list[float]:
    parts = text.split(",")
    if len(parts) != n:
        raise UsageError(f"{what} needs {n} comma-separated values, got {text!r}")
    try:
        return [float(p) for p in parts]
    except ValueError as exc:
        raise UsageError(f"{what}: {exc}") from exc


def _pinned_or_sampled(args, rng, h: int, w: int) -> MaaSample:
    """One augmentation decision; unpinned parameters are drawn in the
    same order the dispatcher uses, so pinning a flag never shifts the
    randomness of the others before it."""
    strategy = args.strategy
    if strategy == "maa":
        return sample_maa_params(rng, MaaConfig(apply_probability=args.apply_prob), h, w)
    if strategy == "wg":
        if args.weights is not None:
            a1, a2, a3 = _parse_floats(args.weights, 3, "--weights")
            weights = Simplex3Weights(a1, a2, a3)
        else:
            weights = sample_simplex3(rng)
        return MaaSample(strategy="wg", weights=weights)
    if strategy == "cc":
        if args.channels is not None:
            names = args.channels.split(",")
            if len(names) != 2:
                raise UsageError(f"--channels needs bg,fg, got {args.channels!r}")
            bg, fg = (_parse_channel(n) for n in names)
        else:
            bg, fg = (int(c) for c in rng.choice(3, size=2, replace=False))
        if args.rect is not None:
            top, left, ph, pw = (int(v) for v in _parse_floats(args.rect, 4, "--rect"))
            rect = PatchRect(top, left, ph, pw)
        else:
            rect = sample_cutmix_patch(rng, h, w)
        return MaaSample(strategy="cc", bg=bg, fg=fg, rect=rect)
    # sj
    channel = _parse_channel(args.channel) if args.channel is not None else int(rng.integers(3))
    beta1 = args.beta1 if args.beta1 is not None else float(rng.random())
    if not 0.0 <= beta1 <= 1.0:
        raise UsageError(f"--beta1 must be in [0, 1], got {beta1}")
    return MaaSample(strategy="sj", channel=channel, beta1=beta1)


def cmd_augment(args) -> int:
    rng = np.random.default_rng(args.seed)
    src = Path(args.input)
    out = Path(args.out)
    if src.is_dir():
        files = sorted(src.glob("*.png"))
        if not files:
            raise UsageError(f"{src}: no .png files found")
        out.mkdir(parents=True, exist_ok=True)
        targets = [(f, out / f.name) for f in files]
    else:
        targets = [(src, out)]
    for in_path, out_path in targets:
        img = load_image_rgb(in_path)
        sample = _pinned_or_sampled(args, rng, img.shape[1], img.shape[2])
        save_image_rgb(out_path, apply_maa_sample(img, sample))
        print(f"{in_path.name} {sample.describe()}")
    return 0


def cmd_softrank(args) -> int:
    if args.values and args.file is not None:
        raise UsageError("give values either on the command line or with --file, not both")
    if args.file is not None:
        text = sys.stdin.read() if args.file == "-" else Path(args.file).read_text()
        try:
            theta = np.array([float(t) for t in text.split()], dtype=np.float64)
        except ValueError as exc:
            raise UsageError(f"--file {args.file}: {exc}") from exc
    else:
        theta = np.array(args.values, dtype=np.float64)
    if theta.size == 0:
        raise UsageError("no values given")
    params = SoftRankParams(epsilon=args.epsilon, input_scale=args.input_scale)
    ranks = soft_rank(theta, params)
    hard = hard_rank(theta)
    if args.format == "table":
        print(f"{'value':>12} {'rank':>12} {'hard':>6}")
        for v, r, h in zip(theta, ranks, hard):
            print(f"{v:>12.6g} {r:>12.6g} {h:>6.0f}")
    else:
        print("ranks=" + " ".join(f"{r:.10g}" for r in ranks))
        print("hard_ranks=" + " ".join(f"{h:.0f}" for h in hard))
    if args.jacobian:
        jac = soft_rank_jacobian(theta, params)
        for i, row in enumerate(jac):
            print(f"jacobian[{i}]=" + " ".join(f"{v:.10g}" for v in row))
    return 0


def cmd_loss(args) -> int:
    emb = np.asarray(read_embeddings(args.embeddings), dtype=np.float64)
    manifest = read_manifest(args.manifest)
    if len(manifest) != emb.shape[0]:
        raise UsageError(
            f"manifest has {len(manifest)} records but embedding file has {emb.shape[0]} rows"
        )
    params = SoftRankParams(epsilon=args.epsilon, input_scale=args.input_scale)
    batch = EmbeddingBatch(emb, manifest.person_ids, manifest.modalities)
    if args.classifier is not None:
        weights = np.asarray(read_embeddings(args.classifier), dtype=np.float64)
        report = total_loss(batch, weights, params)
    else:
        report = cmr_loss(batch, params)
    _emit(
        [("id", report.id_component), ("cmr", report.cmr_component), ("total", report.total)],
        args.format,
    )
    if args.grad_out is not None:
        write_embeddings(args.grad_out, report.grad)
    return 0


def cmd_gradcheck(args) -> int:
    results = gradcheck_suite(seed=args.seed, n_cases=args.cases)
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        if args.format == "table":
            print(f"{r.name:<16} cases={r.n_cases:<5} max_error={r.max_error:.3e} "
                  f"tolerance={r.tolerance:.0e} {status}")
        else:
            print(f"suite={r.name} cases={r.n_cases} max_error={r.max_error:.6e} "
                  f"tolerance={r.tolerance:.0e} status={status}")
    return 0 if all(r.passed for r in results) else 2


def cmd_eval(args) -> int:
    qe = read_embeddings(args.query_embeddings)
    qm = read_manifest(args.query_manifest)
    ge = read_embeddings(args.gallery_embeddings)
    gm = read_manifest(args.gallery_manifest)
    cfg = EvalConfig(camera_filter=not args.no_cam_filter)
    pairs = [("shot", args.shot)]
    if args.shot == 0:
        report = evaluate(qe, qm, ge, gm, cfg)
    else:
        rng = np.random.default_rng(args.seed)
        report, _ = evaluate_repeated(qe, qm, ge, gm, args.shot, args.repeats, rng, cfg)
        pairs.append(("repeats", args.repeats))
    pairs.extend(report.as_flat_dict().items())
    _emit(pairs, args.format)
    if args.dump_rankings is not None:
        ge64 = np.asarray(ge, dtype=np.float64)
        lines = []
        for i in range(qe.shape[0]):
            order = rank_gallery(np.asarray(qe[i], dtype=np.float64), ge64)[: args.dump_topk]
            lines.append(qm.records[i].key + ": " + " ".join(gm.records[j].key for j in order))
        Path(args.dump_rankings).write_text("\n".join(lines) + "\n")
    return 0


def cmd_train_toy(args) -> int:
    spec = SyntheticSpec(
        n_identities=args.ids,
        samples_per_identity_per_modality=args.per_modality,
        input_dim=args.dim,
        cluster_spread=args.spread,
        modality_offset_scale=args.offset,
        seed=args.data_seed,
    )
    dataset = generate_synthetic_images(spec) if args.image_mode else generate_synthetic(spec)
    model = new_model(dataset, seed=args.model_seed)
    _, heldout_ids = split_identities(dataset)

    before = embed_dataset(model, dataset)
    report0 = evaluate_heldout(dataset, before, heldout_ids)
    foot0 = mean_heldout_footrule(dataset, before, heldout_ids)

    cfg = TrainConfig(
        p=args.p,
        k=args.k,
        epochs=args.epochs,
        steps_per_epoch=args.steps_per_epoch,
        learning_rate=args.lr,
        weight_decay=args.weight_decay,
        softrank=SoftRankParams(epsilon=args.epsilon, input_scale=args.input_scale),
        loss_mode=args.loss,
        augment=args.maa,
        seed=args.seed,
    )
    log = train(dataset, model, cfg)
    after = embed_dataset(model, dataset)
    report1 = evaluate_heldout(dataset, after, heldout_ids)
    foot1 = mean_heldout_footrule(dataset, after, heldout_ids)

    pairs = [("loss_mode", cfg.loss_mode)]
    pairs += [(f"untrained_{k}", v) for k, v in report0.as_flat_dict().items()]
    pairs.append(("untrained_footrule", foot0))
    pairs += [(f"trained_{k}", v) for k, v in report1.as_flat_dict().items()]
    pairs.append(("trained_footrule", foot1))
    pairs.append(("first_epoch_mean_total", log.epoch_mean_total(0)))
    pairs.append(("last_epoch_mean_total", log.epoch_mean_total(cfg.epochs - 1)))
    _emit(pairs, args.format)

    if args.log_out is not None:
        lines = [
            json.dumps(
                {"epoch": s.epoch, "step": s.step, "total": s.total,
                 "id": s.id_component, "cmr": s.cmr_component},
                sort_keys=True,
            )
            for s in log.steps
        ]
        Path(args.log_out).write_text("\n".join(lines) + "\n")
    if args.emb_out is not None:
        write_embeddings(args.emb_out, after)
    if args.manifest_out is not None:
        write_manifest(args.manifest_out, dataset.manifest)
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="crossrank", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("augment", help="apply a channel-alignment augmentation to an image or directory")
    p.add_argument("input", help="PNG file, or a directory of .png files")
    p.add_argument("--strategy", choices=("wg", "cc", "sj", "maa"), required=True)
    p.add_argument("--out", required=True, help="output file (or directory for directory input)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--weights", help="wg: pin the channel weights, e.g. 0.299,0.587,0.114")
    p.add_argument("--channels", help="cc: pin the bg,fg channel pair, e.g. r,g")
    p.add_argument("--rect", help="cc: pin the patch as top,left,height,width")
    p.add_argument("--channel", help="sj: pin the replicated channel (r/g/b)")
    p.add_argument("--beta1", type=float, help="sj: pin the blend weight of the original image")
    p.add_argument("--apply-prob", type=float, default=1.0,
                   help="maa: probability the augmentation fires at all")
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("softrank", help="print soft and hard ranks of a list of values")
    p.add_argument("values", nargs="*", type=float)
    p.add_argument("--file", help="read whitespace-separated values from this file ('-' = stdin)")
    p.add_argument("--epsilon", type=float, default=1.0)
    p.add_argument("--input-scale", type=float, default=None)
    p.add_argument("--jacobian", action="store_true", help="also print the dense Jacobian")
    _add_format_flag(p)
    p.set_defaults(func=cmd_softrank)

    p = sub.add_parser("loss", help="retrieval (and optionally identity) loss of an embedding file")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--classifier", help="classifier weight matrix as an embedding file; enables the identity loss")
    p.add_argument("--epsilon", type=float, default=1.0)
    p.add_argument("--input-scale", type=float, default=None)
    p.add_argument("--grad-out", help="write the total-loss gradient as an embedding file")
    _add_format_flag(p)
    p.set_defaults(func=cmd_loss)

    p = sub.add_parser("gradcheck", help="finite-difference check of every analytic gradient")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--cases", type=int, default=100)
    _add_format_flag(p)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("eval", help="cross-modality retrieval metrics for query/gallery embedding files")
    p.add_argument("--query-embeddings", required=True)
    p.add_argument("--query-manifest", required=True)
    p.add_argument("--gallery-embeddings", required=True)
    p.add_argument("--gallery-manifest", required=True)
    p.add_argument("--shot", type=int, choices=(0, 1, 10), default=0,
                   help="images kept per (identity, camera): 0 = whole gallery, 1/10 = sampled protocol")
    p.add_argument("--repeats", type=int, default=10, help="gallery samplings to average when --shot > 0")
    p.add_argument("--no-cam-filter", action="store_true",
                   help="keep gallery entries sharing identity and camera with the query")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dump-rankings", help="write per-query ranked gallery keys to this file")
    p.add_argument("--dump-topk", type=int, default=10)
    _add_format_flag(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("train-toy", help="train the tiny embedder on synthetic two-modality data")
    p.add_argument("--ids", type=int, default=32)
    p.add_argument("--per-modality", type=int, default=8)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--offset", type=float, default=2.0)
    p.add_argument("--spread", type=float, default=0.5)
    p.add_argument("--data-seed", type=int, default=0)
    p.add_argument("--image-mode", action="store_true",
                   help="use the tiny image dataset (enables --maa)")
    p.add_argument("--maa", action="store_true", help="augment visible images during training")
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--steps-per-epoch", type=int, default=20)
    p.add_argument("--p", type=int, default=8)
    p.add_argument("--k", type=int, default=8)
    p.add_argument("--lr", type=float, default=3.5e-4)
    p.add_argument("--weight-decay", type=float, default=5e-4)
    p.add_argument("--epsilon", type=float, default=1.0)
    p.add_argument("--input-scale", type=float, default=None)
    p.add_argument("--loss", choices=("id", "cmr", "id+cmr"), default="id+cmr")
    p.add_argument("--seed", type=int, default=0, help="training seed (batch sampling)")
    p.add_argument("--model-seed", type=int, default=0)
    p.add_argument("--log-out", help="write per-step loss records as JSON lines")
    p.add_argument("--emb-out", help="write final eval-mode embeddings of the whole dataset")
    p.add_argument("--manifest-out", help="write the dataset manifest as JSON")
    _add_format_flag(p)
    p.set_defaults(func=cmd_train_toy)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (FileFormatError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except DivergenceError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
