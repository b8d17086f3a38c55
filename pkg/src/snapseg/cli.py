"""Command-line pipeline: scene to snapshots to features to segmentation.

Every command reads one flat config (defaults, then -c file, then the
SNAPSEG_SEED environment variable, then -o key=value overrides), writes its
artifacts into the work directory next to a resolved copy of the config it
actually ran with, and logs parameters to stderr. Exit codes: 0 success,
2 missing input artifact (the path is printed), 3 invalid config (every
violation is listed).
"""

import argparse
import logging
import os
import sys

import numpy as np

from . import clustering, evaluation, pairs, sampler, segmenter, spatial_index
from .config import load_config, save_config
from .encoder import PointSetEncoder, TrainConfig, load_encoder, save_encoder
from .scene_io import export_colored_ply, load_scene, save_scene
from .svm import LinearSvm, build_weak_training_set, load_svm, save_manifest, save_svm
from .synth import CLASS_NAMES, PALETTE, SceneSpec, generate, load_spec, save_spec

log = logging.getLogger("snapseg")

_STAGE_CODES = {
    "sample": 10, "pretrain": 20, "cluster": 30, "cluster_train": 40,
    "extract": 50, "fit": 60, "segment": 70, "finetune": 80,
}


class ArtifactMissing(Exception):
    def __init__(self, path):
        super().__init__(path)
        self.path = path


def _stage_seed(cfg, stage):
    ss = np.random.SeedSequence([int(cfg.seed), _STAGE_CODES[stage]])
    return int(ss.generate_state(1)[0])


def _need(path):
    if not os.path.exists(path):
        raise ArtifactMissing(path)
    return path


def _paths(cfg):
    w = cfg.workdir
    return {
        "scene": os.path.join(w, "scene.xyzl"),
        "scene_spec": os.path.join(w, "scene_spec.txt"),
        "snapshots": os.path.join(w, "snapshots.txt"),
        "purity": os.path.join(w, "purity.csv"),
        "contrastnet": os.path.join(w, "contrastnet.model"),
        "kmeans": os.path.join(w, "kmeans.model"),
        "assignments": os.path.join(w, "cluster_assignments.csv"),
        "clusternet": os.path.join(w, "clusternet.model"),
        "features": os.path.join(w, "features.csv"),
        "svm": os.path.join(w, "svm.model"),
        "manifest": os.path.join(w, "training_manifest.csv"),
        "pseudo": os.path.join(w, "pseudo_labels.csv"),
        "labels": os.path.join(w, "final_labels.txt"),
        "seg_ply": os.path.join(w, "segmentation.ply"),
        "seg_summary": os.path.join(w, "segmentation_summary.txt"),
        "capture_log": os.path.join(w, "capture_log.csv"),
        "metrics": os.path.join(w, "metrics.csv"),
        "report": os.path.join(w, "report.txt"),
        "sweep": os.path.join(w, "sweep.csv"),
        "finetuned": os.path.join(w, "finetuned.model"),
    }


def _load_workdir_scene(cfg, p, need_labels=False):
    if cfg.scene_points:
        path = _need(cfg.scene_points)
        labels_path = cfg.scene_labels or None
        if labels_path:
            _need(labels_path)
        cloud = load_scene(path, labels_path, format=cfg.scene_format)
    else:
        cloud = load_scene(_need(p["scene"]), format="xyzl")
    if need_labels and cloud.labels is None:
        raise ArtifactMissing("scene labels (required by this command)")
    return cloud


def _train_config(cfg, epochs):
    return TrainConfig(
        learning_rate=cfg.learning_rate, beta1=cfg.beta1, beta2=cfg.beta2,
        eps=cfg.eps_adam, batch_size=cfg.batch_size, epochs=epochs,
        weight_decay=cfg.weight_decay,
    )


def _normalized_view_sets(cloud, records):
    raw = sampler.record_point_sets(cloud, records)
    normalized, scales = pairs.normalize_sets(raw)
    return normalized, scales


def _load_features(path):
    ids, anchors, fovs, rows = [], [], [], []
    with open(_need(path)) as fh:
        for line in fh:
            if line.startswith("#") or not line.strip():
                continue
            parts = line.rstrip("\n").split(",")
            ids.append(int(parts[0]))
            anchors.append(int(parts[1]))
            fovs.append(float(parts[2]))
            rows.append([float(v) for v in parts[3:]])
    return (np.array(ids), np.array(anchors), np.array(fovs),
            np.array(rows, dtype=np.float64))


def _snapshot_true_labels(cloud, records):
    return np.array(
        [sampler.vote_label(cloud.labels[r.downsampled]).class_id
         for r in records],
        dtype=np.int64,
    )


# -- commands ------------------------------------------------------------------


def cmd_synth(cfg):
    p = _paths(cfg)
    spec = load_spec(_need(cfg.scene_spec)) if cfg.scene_spec else SceneSpec(seed=cfg.seed)
    cloud = generate(spec)
    counts = np.bincount(cloud.labels, minlength=cloud.n_classes)
    log.info("synth: %d points, per class %s", cloud.n_points, counts.tolist())
    save_scene(cloud, p["scene"], format="xyzl")
    save_spec(spec, p["scene_spec"])


def cmd_sample(cfg):
    p = _paths(cfg)
    cloud = _load_workdir_scene(cfg, p)
    tree = spatial_index.build(cloud)
    rng = np.random.default_rng(_stage_seed(cfg, "sample"))
    multi = len(cfg.fov_scales) > 1
    log.info(
        "sample: %d snapshots, K=%d, scales=%s, multi=%s",
        cfg.n_snapshots, cfg.K, list(cfg.fov_scales), multi,
    )
    snaps = []
    for _ in range(cfg.n_snapshots):
        anchor = spatial_index.random_anchor(rng, cloud.n_points)
        if multi:
            snaps.append(sampler.sample_multi_fov(
                tree, cloud, anchor, cfg.K, cfg.fov_scales, rng
            ))
        else:
            snaps.append(sampler.sample_single_fov(
                tree, cloud, anchor, cfg.K, cfg.presample_factor, rng
            ))
    sampler.save_snapshots(p["snapshots"], snaps, cfg.K, cfg.fov_scales,
                           _stage_seed(cfg, "sample"))
    if cloud.labels is not None:
        views = []
        for s in snaps:
            views.extend(s.views if hasattr(s, "views") else [s])
        labeled = [sampler.label_snapshot(cloud, v) for v in views]
        report = sampler.purity_report(labeled, cloud.n_classes)
        evaluation.purity_to_csv(report, p["purity"], cloud.class_names)
        log.info("sample: mean purity %.4f (std %.4f)",
                 report.overall_mean, report.overall_std)


def cmd_pretrain(cfg):
    p = _paths(cfg)
    cloud = _load_workdir_scene(cfg, p)
    snapfile = sampler.load_snapshots(_need(p["snapshots"]))
    rng = np.random.default_rng(_stage_seed(cfg, "pretrain"))
    n_views = len(snapfile.fov_scales)
    if cfg.pretext_mode == "part":
        sets = sampler.record_point_sets(cloud, snapfile.records)
        pair_list = pairs.make_part_pairs(
            sets, rng, pairs_per_snapshot=cfg.pairs_per_snapshot
        )
    else:
        groups = sampler.group_records_by_anchor(snapfile.records, n_views)
        grouped_sets = [
            [cloud.positions[r.downsampled] for r in g] for g in groups
        ]
        maker = (pairs.make_scale_pairs if cfg.pretext_mode == "scale"
                 else pairs.make_multifov_pairs)
        pair_list = maker(grouped_sets, rng,
                          pairs_per_anchor=cfg.pairs_per_snapshot)
    log.info("pretrain: %s, %d pairs, %d epochs",
             cfg.pretext_mode, len(pair_list), cfg.epochs)
    enc = PointSetEncoder(
        hidden_sizes=cfg.hidden_sizes, feature_dim=cfg.feature_dim,
        head_mode="pair", n_outputs=2,
        train_config=_train_config(cfg, cfg.epochs),
        seed=_stage_seed(cfg, "pretrain"),
    )
    enc.fit(pair_list)
    if enc.history_:
        log.info("pretrain: final loss %.4f acc %.4f",
                 enc.history_[-1]["loss"], enc.history_[-1]["accuracy"])
    save_encoder(enc, p["contrastnet"])


def cmd_cluster(cfg):
    p = _paths(cfg)
    cloud = _load_workdir_scene(cfg, p)
    snapfile = sampler.load_snapshots(_need(p["snapshots"]))
    enc = load_encoder(_need(p["contrastnet"]))
    sets, _ = _normalized_view_sets(cloud, snapfile.records)
    feats = enc.transform(sets)
    model = clustering.KMeans(
        n_clusters=cfg.n_clusters, seed=_stage_seed(cfg, "cluster")
    ).fit(feats)
    log.info("cluster: k=%d, inertia %.4f after %d assignment steps",
             cfg.n_clusters, model.inertia_, model.n_iters_run_)
    clustering.save_kmeans(model, p["kmeans"])
    with open(p["assignments"], "w") as fh:
        fh.write("# snapseg-assignments v1: sample_id,anchor,fov_scale,cluster_id\n")
        for i, r in enumerate(snapfile.records):
            fh.write(f"{i},{r.anchor},{r.fov_scale:g},{int(model.labels_[i])}\n")


def cmd_cluster_train(cfg):
    p = _paths(cfg)
    cloud = _load_workdir_scene(cfg, p)
    snapfile = sampler.load_snapshots(_need(p["snapshots"]))
    contrast = load_encoder(_need(p["contrastnet"]))
    kmeans = clustering.load_kmeans(_need(p["kmeans"]))
    sets, _ = _normalized_view_sets(cloud, snapfile.records)
    ids = kmeans.predict(contrast.transform(sets))
    model = PointSetEncoder.from_trunk(
        contrast, n_outputs=cfg.n_clusters, head_mode="direct",
        train_config=_train_config(cfg, cfg.cluster_epochs),
        seed=_stage_seed(cfg, "cluster_train"),
    )
    log.info("cluster_train: %d samples, %d epochs", sets.shape[0],
             cfg.cluster_epochs)
    model.fit(sets, ids)
    if model.history_:
        log.info("cluster_train: final loss %.4f acc %.4f",
                 model.history_[-1]["loss"], model.history_[-1]["accuracy"])
    save_encoder(model, p["clusternet"])


def cmd_extract(cfg):
    p = _paths(cfg)
    cloud = _load_workdir_scene(cfg, p)
    snapfile = sampler.load_snapshots(_need(p["snapshots"]))
    enc = load_encoder(_need(p["clusternet"]))
    sets, scales = _normalized_view_sets(cloud, snapfile.records)
    feats = enc.transform(sets)
    if cfg.with_scale:
        feats = np.concatenate([feats, scales[:, None]], axis=1)
    log.info("extract: %d views, %d feature dims", *feats.shape)
    with open(p["features"], "w") as fh:
        fh.write("# snapseg-features v1: sample_id,anchor,fov_scale,f0..\n")
        for i, r in enumerate(snapfile.records):
            row = ",".join(repr(float(v)) for v in feats[i])
            fh.write(f"{i},{r.anchor},{r.fov_scale:g},{row}\n")


def cmd_fit(cfg):
    p = _paths(cfg)
    cloud = _load_workdir_scene(cfg, p, need_labels=True)
    snapfile = sampler.load_snapshots(_need(p["snapshots"]))
    _, _, _, feats = _load_features(p["features"])
    true_labels = _snapshot_true_labels(cloud, snapfile.records)
    seed = _stage_seed(cfg, "fit")
    pseudo = None
    if cfg.use_pseudo:
        # cluster membership and distances live in the feature space the
        # kmeans model was fit in, not the space the classifier trains on
        kmeans = clustering.load_kmeans(_need(p["kmeans"]))
        contrast = load_encoder(_need(p["contrastnet"]))
        sets, _ = _normalized_view_sets(cloud, snapfile.records)
        cluster_feats = contrast.transform(sets)
        m = cfg.n_label_clusters or cfg.n_clusters
        subset = clustering.select_random_clusters(cfg.n_clusters, m, seed)
        centers = clustering.label_cluster_centers(
            kmeans, cluster_feats, true_labels, subset
        )
        pseudo = clustering.cluster_pseudo_label(
            kmeans, cluster_feats, subset, centers, cfg.pseudo_threshold
        )
        clustering.save_pseudo_labels(p["pseudo"], pseudo)
        log.info("fit: %d pseudo labels at threshold %.2f",
                 len(pseudo), cfg.pseudo_threshold)
    weak = build_weak_training_set(
        feats, true_labels,
        label_fraction=None if cfg.labels_per_class else cfg.label_fraction,
        labels_per_class=cfg.labels_per_class or None,
        pseudo=pseudo, seed=seed, n_classes=cloud.n_classes,
    )
    log.info("fit: %d training samples (%d true)", weak.labels.shape[0],
             sum(1 for s in weak.sources if s == "true"))
    clf = LinearSvm(C=cfg.svm_c, epochs=cfg.svm_epochs, seed=seed,
                    n_classes=cloud.n_classes)
    clf.fit(weak.features, weak.labels)
    train_oa = float((clf.predict(feats) == true_labels).mean())
    log.info("fit: snapshot accuracy over all views %.4f", train_oa)
    save_svm(clf, p["svm"])
    save_manifest(p["manifest"], weak)


def cmd_segment(cfg):
    p = _paths(cfg)
    cloud = _load_workdir_scene(cfg, p)
    enc = load_encoder(_need(p["clusternet"]))
    clf = segmenter.EncoderSvmClassifier(
        enc, load_svm(_need(p["svm"])), with_scale=cfg.with_scale
    )
    tree = spatial_index.build(cloud)
    seg_cfg = segmenter.SegmentConfig(
        K=cfg.K, fov_scales=cfg.fov_scales, coverage_stop=cfg.coverage_stop,
        max_iters=cfg.seg_max_iters or None, warmup_min=cfg.warmup_min,
        refit_interval=cfg.refit_interval, knn_k=cfg.knn_k,
        seed=_stage_seed(cfg, "segment"),
    )
    callback = None
    if cfg.progress_ply:
        def callback(fraction, table):
            outcome = segmenter.resolve_votes(table, tree, knn_k=cfg.knn_k)
            path = os.path.join(cfg.workdir, f"progress_{int(fraction * 100)}.ply")
            export_colored_ply(cloud, outcome.labels, PALETTE, path)
    result, table = segmenter.segment(cloud, tree, clf, seg_cfg,
                                      milestone_callback=callback)
    log.info(
        "segment: %d iterations, coverage %.5f, %d tie resolutions, "
        "%d uncovered filled", result.iterations, result.coverage,
        result.tie_resolutions, result.uncovered_filled,
    )
    segmenter.save_labels(p["labels"], result.labels)
    export_colored_ply(cloud, result.labels, PALETTE, p["seg_ply"])
    if cfg.capture_log:
        segmenter.save_capture_log(p["capture_log"], result.capture_log)
    with open(p["seg_summary"], "w") as fh:
        fh.write(f"iterations {result.iterations}\n")
        fh.write(f"coverage {result.coverage:.6f}\n")
        fh.write(f"tie_resolutions {result.tie_resolutions}\n")
        fh.write(f"uncovered_filled {result.uncovered_filled}\n")
        fh.write(f"total_votes {table.total_votes}\n")


def cmd_eval(cfg):
    p = _paths(cfg)
    cloud = _load_workdir_scene(cfg, p, need_labels=True)
    pred = segmenter.load_labels(_need(p["labels"]))
    if pred.shape[0] != cloud.n_points:
        raise ValueError(
            f"{p['labels']}: {pred.shape[0]} labels for {cloud.n_points} points"
        )
    cm = evaluation.confusion(cloud.labels, pred, cloud.n_classes)
    report = evaluation.metrics(cm)
    evaluation.metrics_to_csv(report, p["metrics"], cloud.class_names)
    text = evaluation.metrics_to_text(report, cloud.class_names)
    with open(p["report"], "w") as fh:
        fh.write(text)
    sys.stdout.write(text)
    if cfg.sweep_fractions:
        snapfile = sampler.load_snapshots(_need(p["snapshots"]))
        _, _, _, feats = _load_features(p["features"])
        true_labels = _snapshot_true_labels(cloud, snapfile.records)
        rows = evaluation.label_fraction_sweep(
            feats, true_labels, cfg.sweep_fractions, cfg.sweep_seeds,
            cloud.n_classes, C=cfg.svm_c, epochs=cfg.svm_epochs,
        )
        evaluation.sweep_to_csv(rows, p["sweep"])
        for r in rows:
            log.info("sweep: fraction %.3f mean OA %.4f (std %.4f)",
                     r.fraction, r.mean_oa, r.std_oa)


def cmd_finetune(cfg):
    p = _paths(cfg)
    cloud = _load_workdir_scene(cfg, p)
    snapfile = sampler.load_snapshots(_need(p["snapshots"]))
    model = load_encoder(_need(p["clusternet"]))
    contrast = load_encoder(_need(p["contrastnet"]))
    kmeans = clustering.load_kmeans(_need(p["kmeans"]))
    model.train_config = _train_config(cfg, cfg.cluster_epochs)
    sets, _ = _normalized_view_sets(cloud, snapfile.records)
    log.info("finetune: %d of %d snapshots", cfg.n_finetune, sets.shape[0])
    segmenter.fine_tune_for_scene(
        model, kmeans, sets, cfg.n_finetune,
        seed=_stage_seed(cfg, "finetune"), feature_model=contrast,
    )
    save_encoder(model, p["finetuned"])


_RUN_ALL = ("synth", "sample", "pretrain", "cluster", "cluster_train",
            "extract", "fit", "segment", "eval")


def cmd_run_all(cfg):
    for name in _RUN_ALL:
        if name == "synth" and cfg.scene_points:
            continue  # an explicit scene skips generation
        log.info("run_all: %s", name)
        _COMMANDS[name](cfg)
        save_config(cfg, os.path.join(cfg.workdir, f"resolved_{name}.cfg"))


_COMMANDS = {
    "synth": cmd_synth,
    "sample": cmd_sample,
    "pretrain": cmd_pretrain,
    "cluster": cmd_cluster,
    "cluster_train": cmd_cluster_train,
    "extract": cmd_extract,
    "fit": cmd_fit,
    "segment": cmd_segment,
    "eval": cmd_eval,
    "finetune": cmd_finetune,
    "run_all": cmd_run_all,
}


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="snapseg",
        description="snapshot-based point cloud segmentation pipeline",
    )
    parser.add_argument("command", choices=sorted(_COMMANDS))
    parser.add_argument("-c", "--config", default=None,
                        help="key=value config file")
    parser.add_argument("-o", "--override", action="append", default=[],
                        metavar="KEY=VALUE", help="override one config key")
    parser.add_argument("-w", "--workdir", default=None,
                        help="artifact directory (overrides config)")
    parser.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args(argv)

    logging.basicConfig(
        stream=sys.stderr,
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    cfg, violations = load_config(args.config, args.override)
    if args.workdir:
        cfg.workdir = args.workdir
    if violations:
        for v in violations:
            print(f"config error: {v}", file=sys.stderr)
        return 3
    os.makedirs(cfg.workdir, exist_ok=True)
    log.info("%s: seed %d, workdir %s", args.command, cfg.seed, cfg.workdir)
    try:
        _COMMANDS[args.command](cfg)
        save_config(cfg, os.path.join(cfg.workdir, f"resolved_{args.command}.cfg"))
    except ArtifactMissing as exc:
        print(f"missing artifact: {exc.path}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
