"""Pipeline configuration: flat key=value files, env and CLI overrides.

Precedence, lowest to highest: built-in defaults, config file, the
SNAPSEG_SEED environment variable (seed only), explicit -o key=value
overrides. Loading never raises on bad content; it returns the config
plus a list of violations so the CLI can report all of them at once.
"""

import dataclasses
import os

_LIST_FIELDS = {
    "fov_scales": float,
    "hidden_sizes": int,
    "sweep_fractions": float,
    "sweep_seeds": int,
}

_PRETEXT_MODES = ("part", "scale", "multi_fov")


@dataclasses.dataclass
class PipelineConfig:
    seed: int = 0
    workers: int = 1
    workdir: str = "runs"

    scene_points: str = ""
    scene_labels: str = ""
    scene_format: str = "xyzl"
    scene_spec: str = ""

    n_snapshots: int = 2000
    K: int = 512
    fov_scales: tuple = (1.0, 2.0, 10.0)
    presample_factor: float = 10.0

    pretext_mode: str = "multi_fov"
    pairs_per_snapshot: int = 1

    hidden_sizes: tuple = (64, 128)
    feature_dim: int = 128
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    batch_size: int = 32
    epochs: int = 100
    weight_decay: float = 0.0
    with_scale: bool = False

    n_clusters: int = 300
    cluster_epochs: int = 100

    pseudo_threshold: float = 0.75
    n_label_clusters: int = 0  # 0 = label every cluster
    use_pseudo: bool = False
    label_fraction: float = 0.05
    labels_per_class: int = 0  # 0 = use label_fraction instead

    svm_c: float = 1.0
    svm_epochs: int = 200

    coverage_stop: float = 0.9995
    seg_max_iters: int = 0  # 0 = 200 * N / K
    warmup_min: int = 256
    refit_interval: int = 512
    knn_k: int = 5
    capture_log: bool = False
    progress_ply: bool = False

    sweep_fractions: tuple = ()
    sweep_seeds: tuple = (0, 1, 2, 3, 4)

    n_finetune: int = 0


def _parse_value(name, raw, kind):
    raw = raw.strip()
    if name in _LIST_FIELDS:
        if not raw:
            return ()
        elem = _LIST_FIELDS[name]
        return tuple(elem(tok) for tok in raw.split(","))
    if kind == "bool" or kind is bool:
        low = raw.lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if kind == "int" or kind is int:
        return int(raw)
    if kind == "float" or kind is float:
        return float(raw)
    return raw


def apply_assignments(cfg, pairs, violations, where):
    kinds = {f.name: f.type for f in dataclasses.fields(PipelineConfig)}
    for key, raw in pairs:
        if key not in kinds:
            violations.append(f"{where}: unknown key {key!r}")
            continue
        try:
            setattr(cfg, key, _parse_value(key, raw, kinds[key]))
        except ValueError as exc:
            violations.append(f"{where}: bad value for {key}: {exc}")


def load_config(path=None, overrides=(), env=None):
    """Build a config from an optional file plus override assignments.

    Returns (config, violations). overrides are "key=value" strings; env
    defaults to os.environ and only SNAPSEG_SEED is consulted.
    """
    cfg = PipelineConfig()
    violations = []
    if path:
        if not os.path.exists(path):
            violations.append(f"config file {path} does not exist")
        else:
            pairs = []
            with open(path) as fh:
                for lineno, line in enumerate(fh, start=1):
                    line = line.strip()
                    if not line or line.startswith("#"):
                        continue
                    if "=" not in line:
                        violations.append(
                            f"{path}:{lineno}: expected key=value"
                        )
                        continue
                    key, _, raw = line.partition("=")
                    pairs.append((key.strip(), raw))
            apply_assignments(cfg, pairs, violations, path)
    env = os.environ if env is None else env
    if "SNAPSEG_SEED" in env:
        try:
            cfg.seed = int(env["SNAPSEG_SEED"])
        except ValueError:
            violations.append(
                f"SNAPSEG_SEED={env['SNAPSEG_SEED']!r} is not an integer"
            )
    pairs = []
    for ov in overrides:
        if "=" not in ov:
            violations.append(f"override {ov!r}: expected key=value")
            continue
        key, _, raw = ov.partition("=")
        pairs.append((key.strip(), raw))
    apply_assignments(cfg, pairs, violations, "override")
    violations.extend(validate(cfg))
    return cfg, violations


def validate(cfg):
    """All constraint violations in one list, empty when the config is sound."""
    v = []
    if cfg.workers != 1:
        v.append("workers=1 is the only supported value")
    if cfg.K < 1:
        v.append("K must be >= 1")
    if cfg.n_snapshots < 1:
        v.append("n_snapshots must be >= 1")
    if cfg.presample_factor < 1:
        v.append("presample_factor must be >= 1")
    if not cfg.fov_scales:
        v.append("fov_scales must be non-empty")
    else:
        scales = cfg.fov_scales
        if scales[0] < 1 or any(b <= a for a, b in zip(scales, scales[1:])):
            v.append("fov_scales must be >= 1 and strictly increasing")
    if cfg.pretext_mode not in _PRETEXT_MODES:
        v.append(f"pretext_mode must be one of {_PRETEXT_MODES}")
    if cfg.pairs_per_snapshot < 1:
        v.append("pairs_per_snapshot must be >= 1")
    if not cfg.hidden_sizes or any(h < 1 for h in cfg.hidden_sizes):
        v.append("hidden_sizes must be positive")
    if cfg.feature_dim < 1:
        v.append("feature_dim must be >= 1")
    if cfg.learning_rate < 0:
        v.append("learning_rate must be >= 0")
    if not (0 <= cfg.beta1 < 1 and 0 <= cfg.beta2 < 1):
        v.append("beta1 and beta2 must lie in [0, 1)")
    if cfg.batch_size < 1:
        v.append("batch_size must be >= 1")
    if cfg.epochs < 0 or cfg.cluster_epochs < 0:
        v.append("epochs must be >= 0")
    if cfg.n_clusters < 1:
        v.append("n_clusters must be >= 1")
    if not (0.0 <= cfg.pseudo_threshold <= 1.0):
        v.append("pseudo_threshold must lie in [0, 1]")
    if cfg.n_label_clusters < 0:
        v.append("n_label_clusters must be >= 0")
    if cfg.labels_per_class == 0 and not (0.0 < cfg.label_fraction <= 1.0):
        v.append("label_fraction must lie in (0, 1]")
    if cfg.labels_per_class < 0:
        v.append("labels_per_class must be >= 0")
    if cfg.svm_c <= 0:
        v.append("svm_c must be > 0")
    if cfg.svm_epochs < 1:
        v.append("svm_epochs must be >= 1")
    if not (0.0 < cfg.coverage_stop <= 1.0):
        v.append("coverage_stop must lie in (0, 1]")
    if cfg.seg_max_iters < 0:
        v.append("seg_max_iters must be >= 0")
    if cfg.warmup_min < len(cfg.fov_scales):
        v.append("warmup_min must be at least the number of fov_scales")
    if cfg.refit_interval < 1:
        v.append("refit_interval must be >= 1")
    if cfg.knn_k < 1:
        v.append("knn_k must be >= 1")
    if cfg.scene_format not in ("xyzl", "xyz_irgb_labels"):
        v.append("scene_format must be xyzl or xyz_irgb_labels")
    if any(not (0.0 < f <= 1.0) for f in cfg.sweep_fractions):
        v.append("sweep_fractions must lie in (0, 1]")
    return v


def save_config(cfg, path):
    """Write every field as key=value; the resolved-run record."""
    with open(path, "w") as fh:
        for f in dataclasses.fields(cfg):
            val = getattr(cfg, f.name)
            if f.name in _LIST_FIELDS:
                val = ",".join(f"{x:g}" if isinstance(x, float) else str(x)
                               for x in val)
            fh.write(f"{f.name}={val}\n")
