"""Point-set encoder: shared per-point MLP, max pooling, and a small head.

The trunk applies the same MLP (ReLU after every layer) to each point and
max-pools coordinate-wise over the set, so the pooled feature is invariant
to point order. Two head modes:

  pair    scores two point sets for same-origin: the head sees
          [f(a), f(b), |f(a) - f(b)|] and emits 2 logits
  direct  a linear classifier over a single pooled feature (n_outputs logits)

Everything runs in float64 and all gradients are written out by hand, which
keeps them checkable against central finite differences to tight tolerance.
Head weights start at zero, so an untrained pair head scores every balanced
batch at exactly ln 2 cross-entropy.
"""

import dataclasses

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .pairs import stack_pairs
from .validation import as_rng, check_labels, check_point_set


@dataclasses.dataclass
class TrainConfig:
    """Adam training hyperparameters."""

    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 32
    epochs: int = 100
    weight_decay: float = 0.0

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must lie in [0, 1)")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")


class TrainingDiverged(RuntimeError):
    """Raised when a training loss goes non-finite; names epoch and batch."""


def _softmax_ce(logits, y):
    """Stable mean cross-entropy and its gradient w.r.t. the logits."""
    n = logits.shape[0]
    z = logits - logits.max(axis=1, keepdims=True)
    ez = np.exp(z)
    lse = np.log(ez.sum(axis=1))
    loss = float((lse - z[np.arange(n), y]).mean())
    p = ez / ez.sum(axis=1, keepdims=True)
    p[np.arange(n), y] -= 1.0
    return loss, p / n


class PointSetEncoder(BaseEstimator):
    """Trainable point-set feature extractor and pair/direct classifier.

    hidden_sizes  per-point MLP widths between input (3) and feature_dim
    feature_dim   pooled feature width F
    head_mode     "pair" or "direct"
    n_outputs     head logits (2 for pair mode, class count for direct)
    train_config  TrainConfig, defaults used when None
    seed          controls weight init and epoch shuffling
    """

    def __init__(self, hidden_sizes=(64, 128), feature_dim=128,
                 head_mode="pair", n_outputs=2, train_config=None, seed=0):
        self.hidden_sizes = hidden_sizes
        self.feature_dim = feature_dim
        self.head_mode = head_mode
        self.n_outputs = n_outputs
        self.train_config = train_config
        self.seed = seed

    # -- parameter management -------------------------------------------------

    @property
    def layer_dims(self):
        return (3, *tuple(int(h) for h in self.hidden_sizes), int(self.feature_dim))

    @property
    def head_in_dim(self):
        if self.head_mode == "pair":
            return 3 * int(self.feature_dim)
        if self.head_mode == "direct":
            return int(self.feature_dim)
        raise ValueError(f"unknown head_mode {self.head_mode!r}")

    def initialize(self):
        """Draw fresh trunk weights from the seed; zero the head."""
        rng = np.random.default_rng(self.seed)
        dims = self.layer_dims
        self.weights_ = []
        for din, dout in zip(dims, dims[1:]):
            w = rng.standard_normal((din, dout)) * np.sqrt(2.0 / din)
            self.weights_.append((w, np.zeros(dout)))
        self.head_W_ = np.zeros((int(self.n_outputs), self.head_in_dim))
        self.head_b_ = np.zeros(int(self.n_outputs))
        self.history_ = []
        self.n_fits_ = 0
        return self

    def _require_params(self):
        if not hasattr(self, "weights_"):
            raise NotFittedError(
                "encoder has no parameters; call fit() or initialize()"
            )

    def copy_trunk_from(self, source):
        """Take the per-point MLP weights of another encoder; keep own head."""
        source._require_params()
        if source.layer_dims != self.layer_dims:
            raise ValueError(
                f"trunk shape mismatch: {source.layer_dims} vs {self.layer_dims}"
            )
        self._require_params()
        self.weights_ = [(w.copy(), b.copy()) for w, b in source.weights_]
        return self

    @classmethod
    def from_trunk(cls, source, n_outputs, head_mode="direct",
                   train_config=None, seed=0):
        """New encoder sharing the source trunk weights and a zeroed head."""
        enc = cls(
            hidden_sizes=tuple(source.hidden_sizes),
            feature_dim=source.feature_dim,
            head_mode=head_mode,
            n_outputs=n_outputs,
            train_config=train_config,
            seed=seed,
        )
        enc.initialize()
        enc.copy_trunk_from(source)
        return enc

    def _param_list(self):
        params = []
        for w, b in self.weights_:
            params.extend((w, b))
        params.extend((self.head_W_, self.head_b_))
        return params

    @property
    def n_parameters(self):
        self._require_params()
        return int(sum(p.size for p in self._param_list()))

    def get_flat_params(self):
        self._require_params()
        return np.concatenate([p.reshape(-1) for p in self._param_list()])

    def set_flat_params(self, vec):
        self._require_params()
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (self.n_parameters,):
            raise ValueError(f"expected {self.n_parameters} parameters")
        at = 0
        for p in self._param_list():
            p[...] = vec[at : at + p.size].reshape(p.shape)
            at += p.size

    # -- forward / backward ---------------------------------------------------

    def _trunk_forward(self, x):
        """x: (B, n, 3) -> pooled (B, F) plus the cache for backward."""
        bsz, npts, _ = x.shape
        h = x.reshape(-1, 3)
        cache = []
        for w, b in self.weights_:
            z = h @ w + b
            cache.append((h, z))
            h = np.maximum(z, 0.0)
        per_point = h.reshape(bsz, npts, -1)
        arg = per_point.argmax(axis=1)
        pooled = np.take_along_axis(per_point, arg[:, None, :], axis=1)[:, 0, :]
        return pooled, (cache, arg, bsz, npts)

    def _trunk_backward(self, dpooled, extra):
        cache, arg, bsz, npts = extra
        feat_dim = dpooled.shape[1]
        dper = np.zeros((bsz, npts, feat_dim))
        np.put_along_axis(dper, arg[:, None, :], dpooled[:, None, :], axis=1)
        dh = dper.reshape(bsz * npts, feat_dim)
        grads = [None] * len(self.weights_)
        for li in range(len(self.weights_) - 1, -1, -1):
            h_in, z = cache[li]
            dz = dh * (z > 0.0)
            grads[li] = (h_in.T @ dz, dz.sum(axis=0))
            if li > 0:
                dh = dz @ self.weights_[li][0].T
        return grads

    def forward_features(self, points):
        """Pooled features: (n, 3) -> (F,), or (B, n, 3) -> (B, F)."""
        self._require_params()
        x = check_point_set(points)
        single = x.ndim == 2
        if single:
            x = x[None]
        pooled, _ = self._trunk_forward(x)
        return pooled[0] if single else pooled

    def transform(self, X):
        """Batch feature extraction, chunked so memory stays bounded."""
        self._require_params()
        x = check_point_set(X)
        if x.ndim == 2:
            x = x[None]
        out = np.empty((x.shape[0], int(self.feature_dim)))
        step = max(1, 2_000_000 // max(1, x.shape[1] * int(self.feature_dim)))
        for at in range(0, x.shape[0], step):
            out[at : at + step] = self._trunk_forward(x[at : at + step])[0]
        return out

    def pair_logits(self, a, b):
        self._require_params()
        if self.head_mode != "pair":
            raise ValueError("pair_logits requires head_mode='pair'")
        fa = self.forward_features(a)
        fb = self.forward_features(b)
        if fa.ndim == 1:
            fa, fb = fa[None], fb[None]
        z = np.concatenate([fa, fb, np.abs(fa - fb)], axis=1)
        return z @ self.head_W_.T + self.head_b_

    def _pair_loss_grads(self, a, b, y):
        fa, cache_a = self._trunk_forward(a)
        fb, cache_b = self._trunk_forward(b)
        diff = fa - fb
        z = np.concatenate([fa, fb, np.abs(diff)], axis=1)
        logits = z @ self.head_W_.T + self.head_b_
        loss, dlogits = _softmax_ce(logits, y)
        dhead_w = dlogits.T @ z
        dhead_b = dlogits.sum(axis=0)
        dz = dlogits @ self.head_W_
        f = fa.shape[1]
        sign = np.sign(diff)
        dfa = dz[:, :f] + dz[:, 2 * f :] * sign
        dfb = dz[:, f : 2 * f] - dz[:, 2 * f :] * sign
        ga = self._trunk_backward(dfa, cache_a)
        gb = self._trunk_backward(dfb, cache_b)
        trunk = [(wa + wb, ba + bb) for (wa, ba), (wb, bb) in zip(ga, gb)]
        acc = float((logits.argmax(axis=1) == y).mean())
        return loss, trunk, dhead_w, dhead_b, acc

    def _direct_loss_grads(self, x, y):
        feat, cache = self._trunk_forward(x)
        logits = feat @ self.head_W_.T + self.head_b_
        loss, dlogits = _softmax_ce(logits, y)
        dhead_w = dlogits.T @ feat
        dhead_b = dlogits.sum(axis=0)
        dfeat = dlogits @ self.head_W_
        trunk = self._trunk_backward(dfeat, cache)
        acc = float((logits.argmax(axis=1) == y).mean())
        return loss, trunk, dhead_w, dhead_b, acc

    def batch_loss_grads(self, batch):
        """Full loss and flat gradient for one batch; used by gradient_check.

        Pair mode takes (a, b, y); direct mode takes (x, y).
        """
        self._require_params()
        if self.head_mode == "pair":
            a, b, y = batch
            loss, trunk, dhw, dhb, _ = self._pair_loss_grads(
                check_point_set(a), check_point_set(b),
                check_labels(y, n_classes=int(self.n_outputs)),
            )
        else:
            x, y = batch
            loss, trunk, dhw, dhb, _ = self._direct_loss_grads(
                check_point_set(x),
                check_labels(y, n_classes=int(self.n_outputs)),
            )
        flat = []
        for w, b in trunk:
            flat.extend((w.reshape(-1), b.reshape(-1)))
        flat.extend((dhw.reshape(-1), dhb.reshape(-1)))
        return loss, np.concatenate(flat)

    def batch_loss(self, batch):
        """Loss only, at the current parameters."""
        self._require_params()
        if self.head_mode == "pair":
            a, b, y = batch
            logits = self.pair_logits(a, b)
            return _softmax_ce(logits, check_labels(y, n_classes=2))[0]
        x, y = batch
        feat = self.transform(x)
        logits = feat @ self.head_W_.T + self.head_b_
        return _softmax_ce(
            logits, check_labels(y, n_classes=int(self.n_outputs))
        )[0]

    # -- training -------------------------------------------------------------

    def _resolve_batch(self, X, y):
        if self.head_mode == "pair":
            if isinstance(X, (list, tuple)) and X and hasattr(X[0], "label"):
                a, b, labels = stack_pairs(X)
            elif isinstance(X, tuple) and len(X) == 3:
                a, b, labels = X
            else:
                raise ValueError(
                    "pair mode expects a list of ContrastPair or an (a, b, y) tuple"
                )
            return (
                check_point_set(a), check_point_set(b),
                check_labels(labels, n=len(a), n_classes=int(self.n_outputs)),
            )
        x = check_point_set(X)
        labels = check_labels(y, n=x.shape[0], n_classes=int(self.n_outputs))
        return (x, labels)

    def fit(self, X, y=None):
        """Train with Adam on shuffled minibatches.

        A first fit initializes parameters from the seed; fitting again
        continues from the current parameters (used for head retraining on
        a copied trunk and for fine-tuning). Adam moments start fresh each
        call. Raises TrainingDiverged if a batch loss goes non-finite.
        """
        cfg = self.train_config or TrainConfig()
        if not hasattr(self, "weights_"):
            self.initialize()
        data = self._resolve_batch(X, y)
        n = data[-1].shape[0]
        rng = np.random.default_rng(
            np.random.SeedSequence([int(self.seed) + 1, int(self.n_fits_)])
        )
        params = self._param_list()
        m = [np.zeros_like(p) for p in params]
        v = [np.zeros_like(p) for p in params]
        t = 0
        self.history_ = []
        for epoch in range(cfg.epochs):
            order = rng.permutation(n)
            losses, accs = [], []
            for bi, at in enumerate(range(0, n, cfg.batch_size)):
                sel = order[at : at + cfg.batch_size]
                if self.head_mode == "pair":
                    a, b, labels = data
                    loss, trunk, dhw, dhb, acc = self._pair_loss_grads(
                        a[sel], b[sel], labels[sel]
                    )
                else:
                    x, labels = data
                    loss, trunk, dhw, dhb, acc = self._direct_loss_grads(
                        x[sel], labels[sel]
                    )
                if not np.isfinite(loss):
                    raise TrainingDiverged(
                        f"non-finite loss at epoch {epoch} batch {bi}"
                    )
                grads = []
                for gw, gb in trunk:
                    grads.extend((gw, gb))
                grads.extend((dhw, dhb))
                t += 1
                for p, g, mi, vi in zip(params, grads, m, v):
                    if cfg.weight_decay:
                        g = g + cfg.weight_decay * p
                    mi *= cfg.beta1
                    mi += (1 - cfg.beta1) * g
                    vi *= cfg.beta2
                    vi += (1 - cfg.beta2) * g * g
                    mhat = mi / (1 - cfg.beta1 ** t)
                    vhat = vi / (1 - cfg.beta2 ** t)
                    p -= cfg.learning_rate * mhat / (np.sqrt(vhat) + cfg.eps)
                losses.append(loss)
                accs.append(acc)
            self.history_.append({
                "epoch": epoch,
                "loss": float(np.mean(losses)),
                "accuracy": float(np.mean(accs)),
            })
        self.n_fits_ += 1
        return self

    def predict(self, X):
        """Direct mode: class ids for a (B, n, 3) stack of point sets."""
        self._require_params()
        if self.head_mode != "direct":
            raise ValueError("predict requires head_mode='direct'")
        feat = self.transform(X)
        logits = feat @ self.head_W_.T + self.head_b_
        return logits.argmax(axis=1)


def gradient_check(model, batch, epsilon=1e-6):
    """Compare analytic gradients against central finite differences.

    For every parameter i the relative error is
    |a_i - n_i| / max(1, |a_i|, |n_i|). Returns (max_error, errors).
    epsilon must lie in [1e-7, 1e-3].
    """
    if not (1e-7 <= epsilon <= 1e-3):
        raise ValueError("epsilon must lie in [1e-7, 1e-3]")
    model._require_params()
    _, analytic = model.batch_loss_grads(batch)
    theta = model.get_flat_params()
    numeric = np.empty_like(analytic)
    probe = theta.copy()
    for i in range(theta.shape[0]):
        probe[i] = theta[i] + epsilon
        model.set_flat_params(probe)
        up = model.batch_loss(batch)
        probe[i] = theta[i] - epsilon
        model.set_flat_params(probe)
        down = model.batch_loss(batch)
        probe[i] = theta[i]
        numeric[i] = (up - down) / (2.0 * epsilon)
    model.set_flat_params(theta)
    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    errors = np.abs(analytic - numeric) / denom
    return float(errors.max()), errors


def save_encoder(model, path):
    """Write an encoder to ASCII text with full float64 round-trip."""
    model._require_params()
    with open(path, "w") as fh:
        fh.write("layer_sizes " + " ".join(str(d) for d in model.layer_dims) + "\n")
        fh.write(f"head_mode {model.head_mode}\n")
        fh.write(f"n_outputs {int(model.n_outputs)}\n")
        fh.write(f"seed {int(model.seed)}\n")
        for li, (w, b) in enumerate(model.weights_):
            fh.write(f"W{li} " + " ".join(repr(float(x)) for x in w.reshape(-1)) + "\n")
            fh.write(f"b{li} " + " ".join(repr(float(x)) for x in b) + "\n")
        fh.write("head_W " + " ".join(repr(float(x)) for x in model.head_W_.reshape(-1)) + "\n")
        fh.write("head_b " + " ".join(repr(float(x)) for x in model.head_b_) + "\n")


def load_encoder(path):
    """Inverse of save_encoder; parameters are bit-identical after a cycle."""
    with open(path) as fh:
        lines = [ln.split() for ln in fh.read().splitlines() if ln.strip()]
    fields = {parts[0]: parts[1:] for parts in lines}
    try:
        dims = tuple(int(d) for d in fields["layer_sizes"])
        head_mode = fields["head_mode"][0]
        n_outputs = int(fields["n_outputs"][0])
        seed = int(fields["seed"][0])
    except (KeyError, IndexError, ValueError) as exc:
        raise ValueError(f"{path}: malformed encoder file: {exc}") from exc
    enc = PointSetEncoder(
        hidden_sizes=dims[1:-1], feature_dim=dims[-1],
        head_mode=head_mode, n_outputs=n_outputs, seed=seed,
    )
    enc.initialize()
    try:
        for li, (din, dout) in enumerate(zip(dims, dims[1:])):
            w = np.array([float(x) for x in fields[f"W{li}"]]).reshape(din, dout)
            b = np.array([float(x) for x in fields[f"b{li}"]])
            enc.weights_[li] = (w, b)
        enc.head_W_ = np.array(
            [float(x) for x in fields["head_W"]]
        ).reshape(n_outputs, enc.head_in_dim)
        enc.head_b_ = np.array([float(x) for x in fields["head_b"]])
    except (KeyError, ValueError) as exc:
        raise ValueError(f"{path}: malformed encoder file: {exc}") from exc
    return enc
