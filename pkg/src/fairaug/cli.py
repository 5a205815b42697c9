"""Command-line entry point: one subcommand per pipeline stage.

Every command reads and writes plain files. JSON reports embed a settings
fingerprint; CSV outputs get a ``<name>.meta.json`` sidecar with the same.
Exit codes: 0 success, 1 validation error, 2 I/O error, 3 internal invariant
violation.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

from . import __version__
from ._common import canonical_json, fingerprint, parallel_map, write_json
from .errors import FairAugError, InvariantViolation, JoinFailure, ManifestError, ValidationError
from .fairmetrics import fairness_report, read_predictions, youden_threshold
from .frd import frd_matrix
from .genbridge import emit_generation_jobs, ingest_synthetic, mix_datasets, mock_generate, read_jobs
from .manifest import (
    DatasetManifest,
    Split,
    SyntheticRecord,
    apply_split,
    assign_group,
    load_manifest,
    split_dataset,
    write_manifest,
)
from .preprocess import (
    ChannelPolicy,
    central_slice,
    check_mask,
    export_view,
    mask_for_view,
    open_volume,
    read_png,
    read_stacked,
    stack_frames,
    views_for_record,
)
from .radiomics import ExtractionSettings, FeatureTable, extract_features, read_feature_table, table_from_vectors
from .stratify import (
    DebiasPlan,
    EqualizeToMax,
    SyntheticFraction,
    WeightMode,
    build_debias_plan,
    compute_weights,
    stratification_report,
)

log = logging.getLogger("fairaug")

GROUP_BY = ("sex", "age", "bmi", "diagnosis")


# -- helpers ----------------------------------------------------------------

def _settings(args: argparse.Namespace, **extra) -> dict:
    flags = {k: (str(v) if isinstance(v, Path) else v) for k, v in sorted(vars(args).items())
             if k not in ("func", "verbose")}
    return fingerprint(command=args.command, flags=flags, **extra)


def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _write_report(path: Path, settings: dict, body: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    write_json(path, {"settings": settings, **body})


def _sidecar(path: Path, settings: dict, **extra) -> None:
    write_json(Path(str(path) + ".meta.json"), {"settings": settings, **extra})


def _training_pool(manifest: DatasetManifest) -> DatasetManifest:
    """The train split when the manifest carries one, else every record."""
    if any(r.split is not None for r in manifest):
        return manifest.subset(Split.TRAIN)
    return manifest


def _parse_fractions(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ValidationError(f"cannot parse fractions {text!r}") from None


def _fraction_tag(f: float) -> str:
    return f"{f:g}"


# -- commands -----------------------------------------------------------------

def cmd_audit(args) -> None:
    manifest = load_manifest(args.manifest)
    report = stratification_report(manifest)
    _write_report(args.out, _settings(args), report.to_dict(include_empty=args.include_empty))
    log.info("audited %d records in %d groups", report.total, len(report.counts))


def cmd_split(args) -> None:
    manifest = load_manifest(args.manifest)
    assignment = split_dataset(manifest, args.seed, args.test_frac, args.val_frac)
    _write_text(args.out, assignment.to_csv())
    counts = {s.value: n for s, n in assignment.counts().items()}
    _sidecar(args.out, _settings(args), counts=counts)
    if args.out_manifest:
        args.out_manifest.parent.mkdir(parents=True, exist_ok=True)
        write_manifest(apply_split(manifest, assignment), args.out_manifest)
    log.info("split counts %s", counts)


def cmd_weights(args) -> None:
    manifest = load_manifest(args.manifest)
    pool = manifest.subset(Split(args.split)) if args.split else manifest
    table = compute_weights(pool, args.mode)
    _write_text(args.out, table.to_csv())
    _sidecar(args.out, _settings(args), n=len(pool))


def _strategy(args):
    if args.strategy == "equalize":
        return EqualizeToMax()
    if args.fraction is None:
        raise ValidationError("--fraction is required with --strategy fraction")
    return SyntheticFraction(args.fraction, args.basis)


def cmd_plan(args) -> None:
    manifest = load_manifest(args.manifest)
    pool = _training_pool(manifest)
    plan = build_debias_plan(stratification_report(pool), pool, _strategy(args), args.seed,
                             healthy_clause=args.healthy_clause)
    _write_report(args.out, _settings(args), plan.to_dict())
    log.info("plan needs %d synthetic records", len(plan.jobs))


def cmd_gen_jobs(args) -> None:
    manifest = load_manifest(args.manifest)
    plan = DebiasPlan.from_dict(json.loads(args.plan.read_text(encoding="utf-8")))
    args.out.parent.mkdir(parents=True, exist_ok=True)
    emit_generation_jobs(plan, manifest, args.out)
    _sidecar(args.out, _settings(args), n_jobs=len(plan.jobs))


def cmd_mock_gen(args) -> None:
    jobs = read_jobs(args.jobs)
    args.out.mkdir(parents=True, exist_ok=True)
    parallel_map(lambda j: mock_generate(j, args.out, args.size), jobs)
    log.info("rendered %d images into %s", len(jobs), args.out)


def cmd_ingest(args) -> None:
    manifest = load_manifest(args.manifest)
    records, report = ingest_synthetic(args.jobs, args.images, manifest, args.size)
    out = DatasetManifest(tuple(records), str(args.out))
    args.out.parent.mkdir(parents=True, exist_ok=True)
    write_manifest(out, args.out)
    settings = _settings(args)
    _sidecar(args.out, settings, report=report.to_dict())
    if args.report:
        _write_report(args.report, settings, report.to_dict())
    for name, ids in (("missing", report.missing), ("corrupt", report.corrupt),
                      ("dimension_mismatch", report.dimension_mismatch),
                      ("group_mismatch", report.group_mismatch)):
        if ids:
            print(f"fairaug ingest: {len(ids)} job(s) {name}: {', '.join(ids[:5])}", file=sys.stderr)


def _synthetic_records(path: Path) -> list[SyntheticRecord]:
    synth = load_manifest(path).with_absolute_paths()
    bad = [r.subject_id for r in synth if not r.is_synthetic]
    if bad:
        raise ValidationError(f"{path}: records are not synthetic: {', '.join(bad[:5])}")
    return list(synth.records)


def _write_mixed(path: Path, real: DatasetManifest, synth, fraction, args) -> None:
    combined = mix_datasets(real, synth, fraction, args.seed)
    path.parent.mkdir(parents=True, exist_ok=True)
    write_manifest(combined, path)
    n_syn = sum(r.is_synthetic for r in combined)
    realized = n_syn / len(combined) if len(combined) else 0.0
    _sidecar(path, _settings(args), fraction=fraction, n_real=len(real), n_synthetic=n_syn,
             realized_fraction=realized)
    log.info("%s: %d real + %d synthetic (%.4f)", path, len(real), n_syn, realized)


def cmd_mix(args) -> None:
    real = _training_pool(load_manifest(args.manifest))
    synth = _synthetic_records(args.synth)
    if args.fractions is not None:
        if args.out_dir is None:
            raise ValidationError("--fractions needs --out-dir")
        for f in _parse_fractions(args.fractions):
            _write_mixed(args.out_dir / f"combined_f{_fraction_tag(f)}.csv", real, synth, f, args)
        return
    if args.out is None:
        raise ValidationError("--out is required")
    if args.all:
        fraction = None
    elif args.fraction is not None:
        fraction = args.fraction
    else:
        raise ValidationError("give one of --fraction, --all or --fractions")
    _write_mixed(args.out, real, synth, fraction, args)


def cmd_preprocess(args) -> None:
    manifest = load_manifest(args.manifest)
    policy = ChannelPolicy(args.channel_policy)
    out = args.out

    def one(record):
        volume = open_volume(manifest.resolve(record.image_path), record.n_slices, record.n_frames)
        mask_dir = manifest.resolve(record.mask_path)
        rows = []
        for view in views_for_record(record, volume, policy, args.train_views):
            mask = mask_for_view(mask_dir, view, record.ed_frame) if mask_dir.is_dir() else None
            img, msk = export_view(view, mask, out, args.size)
            rows.append((record.subject_id, view.slice_index, view.temporal_offset,
                         Path(img).relative_to(out).as_posix(),
                         Path(msk).relative_to(out).as_posix() if msk else ""))
        return rows

    out.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("subject_id", "slice", "offset", "image", "mask"))
    n = 0
    for rows in parallel_map(one, manifest.records):
        for row in rows:
            w.writerow(row)
            n += 1
    index = out / "views.csv"
    _write_text(index, buf.getvalue())
    _sidecar(index, _settings(args), n_views=n, n_subjects=len(manifest))
    log.info("wrote %d views for %d subjects", n, len(manifest))


def _feature_inputs(manifest: DatasetManifest, record):
    """(stacked image, mask) used for one subject's feature row.

    Single images (synthetic outputs) are used as they are with the donor
    mask; volumes contribute the central slice at offset 0.
    """
    image_path = manifest.resolve(record.image_path)
    mask_path = manifest.resolve(record.mask_path)
    if image_path.suffix.lower() == ".png":
        stacked = read_stacked(image_path, record.subject_id)
        if mask_path.is_dir():
            mask_path = mask_path / f"s{central_slice(record.n_slices):02d}_t{record.ed_frame:03d}.png"
        return stacked, check_mask(read_png(mask_path))
    volume = open_volume(image_path, record.n_slices, record.n_frames)
    view = stack_frames(volume, central_slice(record.n_slices), record.ed_frame, record.es_frame,
                        subject_id=record.subject_id)
    if mask_path.is_dir():
        return view, mask_for_view(mask_path, view, record.ed_frame)
    return view, check_mask(read_png(mask_path))


def cmd_features(args) -> None:
    manifest = load_manifest(args.manifest)
    settings = ExtractionSettings(channels=("ed", "es") if args.include_es else ("ed",))

    def one(record):
        stacked, mask = _feature_inputs(manifest, record)
        return extract_features(stacked, mask, settings)

    vectors = parallel_map(one, manifest.records)
    table = table_from_vectors([r.subject_id for r in manifest], vectors)
    _write_text(args.out, table.to_csv())
    _sidecar(args.out, _settings(args), extraction=settings.to_dict())


def _group_label(record, attribute: str) -> str:
    key = assign_group(record)
    return {
        "sex": key.sex.value,
        "age": key.age_bin.value,
        "bmi": key.bmi_bin.value,
        "diagnosis": key.diagnosis.value,
    }[attribute]


def _grouped(table: FeatureTable, manifest: DatasetManifest, attribute: str, prefix: str) -> dict:
    recs = manifest.by_id()
    by_label: dict[str, list[str]] = {}
    for sid in table.ids:
        if sid not in recs:
            raise JoinFailure(sid)
        by_label.setdefault(_group_label(recs[sid], attribute), []).append(sid)
    return {f"{prefix}:{g}": table.select_rows(ids) for g, ids in sorted(by_label.items())}


def cmd_frd(args) -> None:
    tables = _grouped(read_feature_table(args.features), load_manifest(args.manifest), args.group_by, "real")
    if args.features_synth:
        if args.synth_manifest is None:
            raise ValidationError("--features-synth needs --synth-manifest")
        tables.update(_grouped(read_feature_table(args.features_synth), load_manifest(args.synth_manifest),
                               args.group_by, "synth"))
    result = frd_matrix(tables, seed=args.seed, n_splits=args.n_splits)
    body = result.to_dict()
    body["settings"] = {**result.settings, "cli": _settings(args)}
    _write_text(args.out, canonical_json(body))


def cmd_evaluate(args) -> None:
    manifest = load_manifest(args.manifest)
    predictions = read_predictions(args.predictions)
    threshold, mode = args.threshold, "fixed"
    if args.threshold_from_val:
        val = read_predictions(args.threshold_from_val)
        threshold, mode = youden_threshold(val.scores, val.labels), "youden_val"
    report = fairness_report(predictions, manifest, threshold=threshold, seed=args.seed,
                             n_resamples=args.n_resamples, level=args.level, threshold_mode=mode)
    report["settings"] = {**report["settings"], "cli": _settings(args)}
    _write_text(args.out, canonical_json(report))
    for line in report["diagnostics"]:
        print(f"fairaug evaluate: {line}", file=sys.stderr)


# -- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=42, help="random seed, echoed in every output (default 42)")
    common.add_argument("-v", "--verbose", action="count", default=0, help="more log output on stderr")

    p = argparse.ArgumentParser(prog="fairaug", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"fairaug {__version__}")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name, func, help_text):
        sp = sub.add_parser(name, parents=[common], help=help_text, description=help_text)
        sp.set_defaults(func=func)
        return sp

    sp = add("audit", cmd_audit, "count subjects per subgroup and attribute")
    sp.add_argument("--manifest", type=Path, required=True)
    sp.add_argument("--out", type=Path, required=True, help="report JSON")
    sp.add_argument("--include-empty", action="store_true", help="list all 36 groups, zeros included")

    sp = add("split", cmd_split, "stratified train/val/test split")
    sp.add_argument("--manifest", type=Path, required=True)
    sp.add_argument("--out", type=Path, required=True, help="split CSV (subject_id,split)")
    sp.add_argument("--test-frac", type=float, default=0.2)
    sp.add_argument("--val-frac", type=float, default=0.2, help="validation share of the non-test records")
    sp.add_argument("--out-manifest", type=Path, help="also write the manifest with a split column")

    sp = add("weights", cmd_weights, "SW or SSW sampling weights")
    sp.add_argument("--manifest", type=Path, required=True)
    sp.add_argument("--mode", choices=[m.value for m in WeightMode], default="SSW")
    sp.add_argument("--split", choices=[s.value for s in Split], help="restrict to one split")
    sp.add_argument("--out", type=Path, required=True, help="weights CSV (subject_id,weight)")

    sp = add("plan", cmd_plan, "debiasing plan with one generation job per missing record")
    sp.add_argument("--manifest", type=Path, required=True)
    sp.add_argument("--strategy", choices=["equalize", "fraction"], default="equalize")
    sp.add_argument("--fraction", type=float, help="synthetic share for --strategy fraction")
    sp.add_argument("--basis", choices=["combined", "additive"], default="combined",
                    help="fraction of the combined set, or of the real set")
    sp.add_argument("--healthy-clause", action="store_true", help='append "no heart failure" for healthy donors')
    sp.add_argument("--out", type=Path, required=True, help="plan JSON")

    sp = add("gen-jobs", cmd_gen_jobs, "write the generation job manifest (JSONL) for a plan")
    sp.add_argument("--plan", type=Path, required=True)
    sp.add_argument("--manifest", type=Path, required=True)
    sp.add_argument("--out", type=Path, required=True, help="jobs JSONL")

    sp = add("mock-gen", cmd_mock_gen, "render jobs with the deterministic mock generator")
    sp.add_argument("--jobs", type=Path, required=True)
    sp.add_argument("--out", type=Path, required=True, help="output image directory")
    sp.add_argument("--size", type=int, help="upscale outputs to SIZE x SIZE (e.g. 512)")

    sp = add("ingest", cmd_ingest, "turn generator outputs into a synthetic manifest")
    sp.add_argument("--jobs", type=Path, required=True)
    sp.add_argument("--images", type=Path, required=True, help="directory holding the generated images")
    sp.add_argument("--manifest", type=Path, required=True, help="real manifest with the donor records")
    sp.add_argument("--size", type=int, help="expected output side when the generator upscaled")
    sp.add_argument("--out", type=Path, required=True, help="synthetic manifest CSV")
    sp.add_argument("--report", type=Path, help="reconciliation report JSON")

    sp = add("mix", cmd_mix, "combine real training records with synthetic ones")
    sp.add_argument("--manifest", type=Path, required=True, help="real manifest (train split is used when present)")
    sp.add_argument("--synth", type=Path, required=True, help="synthetic manifest from ingest")
    how = sp.add_mutually_exclusive_group()
    how.add_argument("--fraction", type=float, help="target synthetic share f in [0, 1)")
    how.add_argument("--all", action="store_true", help="keep every synthetic record")
    how.add_argument("--fractions", help="comma-separated sweep, e.g. 0,0.2,0.33,0.5")
    sp.add_argument("--out", type=Path, help="combined manifest CSV")
    sp.add_argument("--out-dir", type=Path, help="directory for sweep outputs")

    sp = add("preprocess", cmd_preprocess, "export stacked ED/ES views as PNG")
    sp.add_argument("--manifest", type=Path, required=True)
    sp.add_argument("--out", type=Path, required=True, help="output directory")
    sp.add_argument("--size", type=int, default=512)
    sp.add_argument("--train-views", type=int, choices=[1, 9], default=9)
    sp.add_argument("--channel-policy", choices=[c.value for c in ChannelPolicy], default="duplicate-ed")

    sp = add("features", cmd_features, "radiomics feature table, one row per subject")
    sp.add_argument("--manifest", type=Path, required=True)
    sp.add_argument("--out", type=Path, required=True, help="feature CSV")
    sp.add_argument("--include-es", action="store_true", help="append ES intensity and texture features")

    sp = add("frd", cmd_frd, "Frechet radiomics distance matrix between groups")
    sp.add_argument("--features", type=Path, required=True, help="real feature CSV")
    sp.add_argument("--manifest", type=Path, required=True, help="manifest the real features came from")
    sp.add_argument("--features-synth", type=Path, help="synthetic feature CSV")
    sp.add_argument("--synth-manifest", type=Path, help="manifest the synthetic features came from")
    sp.add_argument("--group-by", choices=GROUP_BY, default="sex")
    sp.add_argument("--n-splits", type=int, default=5, help="half-splits averaged for intra-group entries")
    sp.add_argument("--out", type=Path, required=True, help="report JSON")

    sp = add("evaluate", cmd_evaluate, "fairness report from a predictions file")
    sp.add_argument("--predictions", type=Path, required=True, help="CSV subject_id,score,label")
    sp.add_argument("--manifest", type=Path, required=True)
    sp.add_argument("--out", type=Path, required=True, help="report JSON")
    thr = sp.add_mutually_exclusive_group()
    thr.add_argument("--threshold", type=float, default=0.5)
    thr.add_argument("--threshold-from-val", type=Path, help="pick the Youden-J threshold on these predictions")
    sp.add_argument("--n-resamples", type=int, default=1000)
    sp.add_argument("--level", type=float, default=0.95, help="confidence level")
    return p


def _fail(code: int, exc: BaseException) -> int:
    kind = type(exc).__name__
    print(f"fairaug: error: {kind}: {exc}", file=sys.stderr)
    diag = {"error": kind, "message": str(exc), "exit_code": code}
    if isinstance(exc, ManifestError) and exc.row is not None:
        diag["row"] = exc.row
        diag["issues"] = [str(i) for i in exc.issues]
    if isinstance(exc, JoinFailure):
        diag["subject_id"] = exc.subject_id
    if isinstance(exc, OSError) and exc.filename:
        diag["path"] = str(exc.filename)
    print(json.dumps(diag, sort_keys=True), file=sys.stderr)
    return code


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), stream=sys.stderr,
                        format="fairaug %(levelname)s: %(message)s")
    logging.captureWarnings(True)
    try:
        args.func(args)
    except InvariantViolation as exc:
        return _fail(3, exc)
    except (ValidationError, ValueError) as exc:
        return _fail(1, exc)
    except OSError as exc:
        return _fail(2, exc)
    except FairAugError as exc:
        return _fail(1, exc)
    finally:
        logging.captureWarnings(False)
    return 0


if __name__ == "__main__":
    sys.exit(main())
