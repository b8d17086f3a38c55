"""End-to-end acceptance checks for the shipped pipeline.

Ten release-gating tests, ordered cheap to expensive. The heavy fixture
(three seeded runs of the full weakly supervised experiment plus
untrained controls) is shared by the segmentation, pretext-comparison
and label-budget checks, so the whole file costs roughly half an hour on
one core. Each test prints its measured numbers on one line.
"""

import collections
import shutil
import time

import numpy as np
import pytest

from snapseg import cli, evaluation, pairs, sampler, segmenter, spatial_index
from snapseg.clustering import KMeans, cluster_pseudo_label
from snapseg.config import load_config
from snapseg.encoder import (PointSetEncoder, TrainConfig, gradient_check,
                             load_encoder, save_encoder)
from snapseg.scene_io import load_scene
from snapseg.segmenter import EncoderSvmClassifier, SegmentConfig, segment
from snapseg.svm import LinearSvm, build_weak_training_set, load_svm
from snapseg.synth import SceneSpec, generate, save_spec

# the desk-scale experiment: 2000 multi-FOV snapshots on the default
# benchmark scene, contrastive pretraining, cluster-id refinement with a
# 50-cluster pseudo-labeling stage, and an SVM on 5% of snapshot labels
BENCH_OVERRIDES = [
    "n_snapshots=2000",
    "K=512",
    "fov_scales=1,2,10",
    "pretext_mode=multi_fov",
    "pairs_per_snapshot=1",
    "hidden_sizes=24,48",
    "feature_dim=48",
    "epochs=32",
    "cluster_epochs=16",
    "batch_size=32",
    "n_clusters=100",
    "n_label_clusters=50",
    "use_pseudo=true",
    "pseudo_threshold=0.75",
    "label_fraction=0.05",
    "svm_epochs=200",
    "coverage_stop=0.9995",
    "with_scale=true",
]

BenchRun = collections.namedtuple(
    "BenchRun", ["trained_oa", "control_oa", "elapsed", "workdirs"]
)


def bench_config(workdir, seed):
    cfg, violations = load_config(
        overrides=BENCH_OVERRIDES + [f"workdir={workdir}", f"seed={seed}"],
        env={},
    )
    assert violations == [], violations
    return cfg


@pytest.fixture(scope="module")
def bench(tmp_path_factory):
    """Three seeded end-to-end runs plus untrained-encoder controls."""
    root = tmp_path_factory.mktemp("bench")
    trained, control, workdirs = [], [], []
    t0 = time.perf_counter()
    for seed in (0, 1, 2):
        wt = root / f"trained_{seed}"
        wt.mkdir()
        cfg = bench_config(wt, seed)
        for step in (cli.cmd_synth, cli.cmd_sample, cli.cmd_pretrain,
                     cli.cmd_cluster, cli.cmd_cluster_train, cli.cmd_extract,
                     cli.cmd_fit, cli.cmd_segment):
            step(cfg)
        cloud = load_scene(str(wt / "scene.xyzl"), format="xyzl")
        pred = segmenter.load_labels(str(wt / "final_labels.txt"))
        trained.append(
            evaluation.overall_accuracy(cloud.labels, pred, cloud.n_classes)
        )
        # control: identical downstream stages, but the encoder is never
        # trained, so its features are a random projection of each view
        wc = root / f"control_{seed}"
        wc.mkdir()
        for name in ("scene.xyzl", "snapshots.txt"):
            shutil.copy(wt / name, wc / name)
        ctl = bench_config(wc, seed)
        enc = PointSetEncoder(
            hidden_sizes=(24, 48), feature_dim=48, head_mode="pair",
            n_outputs=2,
            seed=int(np.random.SeedSequence([seed, 99]).generate_state(1)[0]),
        )
        enc.initialize()
        save_encoder(enc, str(wc / "contrastnet.model"))
        save_encoder(enc, str(wc / "clusternet.model"))
        for step in (cli.cmd_cluster, cli.cmd_extract, cli.cmd_fit,
                     cli.cmd_segment):
            step(ctl)
        pred = segmenter.load_labels(str(wc / "final_labels.txt"))
        control.append(
            evaluation.overall_accuracy(cloud.labels, pred, cloud.n_classes)
        )
        workdirs.append(str(wt))
    elapsed = time.perf_counter() - t0
    return BenchRun(tuple(trained), tuple(control), elapsed, tuple(workdirs))


def test_01_exact_knn_matches_brute_force():
    rng = np.random.default_rng(11)
    pts = rng.random((10_000, 3)) * 100.0
    t0 = time.perf_counter()
    tree = spatial_index.build(pts)
    queries = rng.integers(0, pts.shape[0], 500)
    row_ids = np.arange(pts.shape[0])
    for qi in queries:
        q = pts[qi]
        d = np.sqrt(((pts - q) ** 2).sum(axis=1))
        order = np.lexsort((row_ids, d))
        for k in (1, 5, 64):
            got_i, got_d = spatial_index.knn(tree, q, k)
            want = order[:k]
            assert np.array_equal(got_i, want)
            assert np.array_equal(got_d, d[want])
    elapsed = time.perf_counter() - t0
    print(f"500 queries x k in (1, 5, 64) exact in {elapsed:.1f}s (cap 10)")
    assert elapsed < 10.0


def test_02_vote_label_matches_recount():
    cloud = generate(SceneSpec())
    tree = spatial_index.build(cloud)
    rng = np.random.default_rng(23)
    checked = 0
    for _ in range(1000):
        anchor = spatial_index.random_anchor(rng, cloud.n_points)
        snap = sampler.sample_single_fov(tree, cloud, anchor, K=512, rng=rng)
        got = sampler.vote_label(cloud.labels[snap.downsampled])
        # independent recount: dict tally, smallest id wins ties
        tally = {}
        for lab in cloud.labels[snap.downsampled].tolist():
            tally[lab] = tally.get(lab, 0) + 1
        top = max(tally.values())
        want = min(c for c, n in tally.items() if n == top)
        assert got.class_id == want
        assert got.purity == top / snap.downsampled.shape[0]
        checked += 1
    print(f"{checked} snapshots, vote label equals histogram recount")


def test_03_encoder_gradients_match_finite_differences():
    rng = np.random.default_rng(7)
    t0 = time.perf_counter()
    worst = 0.0
    for trial in range(10):
        direct = trial % 2 == 0
        enc = PointSetEncoder(
            hidden_sizes=(5,), feature_dim=6,
            head_mode="direct" if direct else "pair",
            n_outputs=3 if direct else 2, seed=trial,
        )
        enc.initialize()
        # jitter every parameter off its init point: zero biases put dead
        # points exactly on the ReLU kink where derivatives do not exist
        theta = enc.get_flat_params()
        enc.set_flat_params(theta + 0.01 * rng.standard_normal(theta.shape))
        if direct:
            batch = (rng.standard_normal((6, 9, 3)), rng.integers(0, 3, 6))
        else:
            batch = (rng.standard_normal((6, 9, 3)),
                     rng.standard_normal((6, 9, 3)), rng.integers(0, 2, 6))
        max_err, _ = gradient_check(enc, batch)
        worst = max(worst, max_err)
        assert max_err < 1e-5
    elapsed = time.perf_counter() - t0
    print(f"10 encoders, worst relative error {worst:.2e} in {elapsed:.1f}s")
    assert elapsed < 60.0


def test_04_kmeans_inertia_and_recovery():
    rng = np.random.default_rng(5)
    # inertia never increases across assignment steps
    x = rng.standard_normal((300, 8))
    model = KMeans(n_clusters=7, seed=1, tol=0.0, max_iters=50).fit(x)
    trace = np.asarray(model.inertia_trace_)
    slack = 1e-9 * np.maximum(1.0, trace[:-1])
    assert np.all(trace[1:] <= trace[:-1] + slack)
    # one cluster per point drives inertia to zero
    y = rng.standard_normal((40, 4))
    exact = KMeans(n_clusters=40, seed=2).fit(y)
    assert exact.inertia_ == pytest.approx(0.0, abs=1e-12)
    # two well-separated gaussian blobs are recovered
    n_per, sigma = 200, 1.0
    blob_a = rng.normal(0.0, sigma, (n_per, 3))
    blob_b = rng.normal(10.0, sigma, (n_per, 3))
    two = KMeans(n_clusters=2, seed=3).fit(np.vstack([blob_a, blob_b]))
    labels = two.labels_
    assert len(set(labels[:n_per].tolist())) == 1
    assert len(set(labels[n_per:].tolist())) == 1
    assert labels[0] != labels[-1]
    tol = 3.0 * sigma / np.sqrt(n_per)
    means = (blob_a.mean(axis=0), blob_b.mean(axis=0))
    got = two.centers_[labels[0]], two.centers_[labels[-1]]
    for center, mean in zip(got, means):
        assert np.linalg.norm(center - mean) < tol
    print(f"trace len {trace.shape[0]} nonincreasing, inertia(k=n) 0, "
          f"blob centers within {tol:.3f}")


def test_05_pseudo_label_count_monotone_in_threshold():
    rng = np.random.default_rng(31)
    for trial in range(20):
        x = rng.standard_normal((180, 10)) * rng.uniform(0.5, 2.0)
        model = KMeans(n_clusters=6, seed=trial).fit(x)
        subset = np.arange(6)
        centers = {i: i % 4 for i in range(6)}
        counts = [
            len(cluster_pseudo_label(model, x, subset, centers, t))
            for t in (0.9, 0.8, 0.75)
        ]
        assert counts[0] <= counts[1] <= counts[2], (trial, counts)
    print("20 feature sets, admitted counts ordered 0.9 <= 0.8 <= 0.75")


def test_06_segmentation_covers_and_conserves(bench):
    wd = bench.workdirs[0]
    cfg = bench_config(wd, 0)
    cloud = load_scene(f"{wd}/scene.xyzl", format="xyzl")
    tree = spatial_index.build(cloud)
    clf = EncoderSvmClassifier(
        load_encoder(f"{wd}/clusternet.model"), load_svm(f"{wd}/svm.model"),
        with_scale=True,
    )
    seg_cfg = SegmentConfig(
        K=cfg.K, fov_scales=cfg.fov_scales, coverage_stop=cfg.coverage_stop,
        seed=cli._stage_seed(cfg, "segment"),
    )
    result, table = segment(cloud, tree, clf, seg_cfg)
    # every point ends up labeled
    assert result.labels.shape == (cloud.n_points,)
    assert result.labels.min() >= 0
    assert result.labels.max() < cloud.n_classes
    # the capture loop stopped at its coverage target
    assert result.coverage >= 0.9995
    # votes cast equal the summed presample sizes of every capture
    sizes = [int(round(cfg.K * s)) for s in cfg.fov_scales]
    cast = sum(sizes[list(cfg.fov_scales).index(scale)]
               for _, _, scale, _ in result.capture_log)
    assert table.total_votes == cast
    print(f"coverage {result.coverage:.5f} (floor 0.9995), "
          f"{table.total_votes} votes == {cast} cast, all points labeled")


def test_07_weak_labels_beat_untrained_control(bench):
    mean_t = float(np.mean(bench.trained_oa))
    mean_c = float(np.mean(bench.control_oa))
    gap = (mean_t - mean_c) * 100.0
    print(f"point OA {mean_t:.4f} (floor 0.85) over seeds "
          f"{[round(v, 4) for v in bench.trained_oa]}, untrained control "
          f"{mean_c:.4f}, gap {gap:.1f} points (floor 10), "
          f"{bench.elapsed:.0f}s (cap 900)")
    assert mean_t >= 0.85
    assert gap >= 10.0
    assert bench.elapsed <= 900.0


def pretext_arm(workdir, seed, mode):
    """Train one pretext variant and score a 20%-label classifier.

    Every arm sees the same 6000 pairs per epoch for 12 epochs: part
    contrasting makes two pairs per view while the anchor-grouped modes
    make two per anchor, so the per-anchor modes use three pairs per
    anchor to level the budgets.
    """
    cloud = load_scene(f"{workdir}/scene.xyzl", format="xyzl")
    snapfile = sampler.load_snapshots(f"{workdir}/snapshots.txt")
    n_views = len(snapfile.fov_scales)
    groups = sampler.group_records_by_anchor(snapfile.records, n_views)[:1000]
    records = [r for g in groups for r in g]
    true = cli._snapshot_true_labels(cloud, records)
    sets, scales = cli._normalized_view_sets(cloud, records)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 7]))
    if mode == "part":
        raw = sampler.record_point_sets(cloud, records)
        pair_list = pairs.make_part_pairs(raw, rng, pairs_per_snapshot=1)
    else:
        grouped = [[cloud.positions[r.downsampled] for r in g] for g in groups]
        maker = (pairs.make_scale_pairs if mode == "scale"
                 else pairs.make_multifov_pairs)
        pair_list = maker(grouped, rng, pairs_per_anchor=3)
    enc = PointSetEncoder(
        hidden_sizes=(24, 48), feature_dim=48, head_mode="pair", n_outputs=2,
        train_config=TrainConfig(epochs=12, batch_size=32), seed=seed,
    )
    enc.fit(pair_list)
    feats = enc.transform(sets)
    feats = np.concatenate([feats, scales[:, None]], axis=1)
    weak = build_weak_training_set(feats, true, label_fraction=0.2,
                                   seed=seed, n_classes=6)
    clf = LinearSvm(C=1.0, epochs=200, seed=seed, n_classes=6)
    clf.fit(weak.features, weak.labels)
    return float((clf.predict(feats) == true).mean())


def test_08_multi_fov_pretext_leads_alternatives(bench):
    scores = {"part": [], "scale": [], "multi_fov": []}
    for seed, wd in zip((0, 1, 2), bench.workdirs):
        for mode in scores:
            scores[mode].append(pretext_arm(wd, seed, mode))
    means = {mode: float(np.mean(v)) for mode, v in scores.items()}
    print(f"snapshot OA multi {means['multi_fov']:.4f}, "
          f"part {means['part']:.4f} (slack 0.01), scale {means['scale']:.4f}")
    assert means["multi_fov"] >= means["part"] - 0.01
    assert means["multi_fov"] >= means["scale"]


def test_09_full_labels_no_worse_than_five_percent(bench):
    wd = bench.workdirs[0]
    cloud = load_scene(f"{wd}/scene.xyzl", format="xyzl")
    snapfile = sampler.load_snapshots(f"{wd}/snapshots.txt")
    _, _, _, feats = cli._load_features(f"{wd}/features.csv")
    true = cli._snapshot_true_labels(cloud, snapfile.records)
    rows = evaluation.label_fraction_sweep(
        feats, true, fractions=(0.05, 1.0), seeds=(0, 1, 2, 3, 4),
        n_classes=cloud.n_classes, epochs=50,
    )
    oa_few, oa_all = rows[0].mean_oa, rows[1].mean_oa
    print(f"snapshot OA at 100% labels {oa_all:.4f} vs 5% {oa_few:.4f} "
          f"(slack 0.02), 5 seeds")
    assert rows[0].fraction == 0.05 and rows[1].fraction == 1.0
    assert oa_all >= oa_few - 0.02


def test_10_run_all_twice_is_byte_identical(tmp_path):
    spec_path = tmp_path / "spec.txt"
    save_spec(SceneSpec(
        seed=3, extent=20.0, terrain_density=6.0,
        building_count=1, building_min_size=5.0, building_max_size=6.0,
        building_min_height=4.0, building_max_height=5.0,
        building_density=6.0,
        vegetation_count=2, vegetation_density=12.0,
        wall_count=2, wall_density=8.0,
        car_count=2, car_density=10.0,
        scatter_points=150,
    ), spec_path)
    overrides = [
        f"scene_spec={spec_path}", "seed=5", "workers=1",
        "n_snapshots=80", "K=32", "fov_scales=1,2",
        "hidden_sizes=8", "feature_dim=8", "epochs=3", "cluster_epochs=3",
        "batch_size=16", "n_clusters=6", "label_fraction=0.3",
        "svm_epochs=30", "coverage_stop=0.5", "warmup_min=8",
        "refit_interval=64",
    ]
    labels = []
    for name in ("first", "second"):
        work = tmp_path / name
        work.mkdir()
        cfg, violations = load_config(
            overrides=overrides + [f"workdir={work}"], env={}
        )
        assert violations == [], violations
        cli.cmd_run_all(cfg)
        labels.append((work / "final_labels.txt").read_bytes())
    assert labels[0] == labels[1]
    print(f"two runs, final label files byte-identical "
          f"({len(labels[0])} bytes)")
