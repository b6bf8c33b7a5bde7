"""Deep triplet network on top of the shared CCA space.

Two fully connected branches: the anchor branch embeds the anchor modality,
the pair branch embeds both positives and negatives (shared weights). Hidden
layers use tanh, the output layer a sigmoid. Gradients are derived by hand and
the parameters updated with Adam.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError
from .mining import (
    DEFAULT_RANDOM_PER_ANCHOR,
    STRATEGIES,
    TripletBatch,
    make_balanced_batches,
    select_batch_all,
    select_batch_hard,
    select_batch_semi_hard,
    select_random,
)

log = logging.getLogger(__name__)

AUDIO_WIDTHS = (100, 100, 100, 10)
VISUAL_WIDTHS = (200, 200, 200, 10)
DIRECTIONS = ("audio2visual", "visual2audio")
DISTANCES = ("cosine", "euclidean")
# ~55 samples per batch was the best batch size in the reference experiments
TARGET_BATCH_SIZE = 55


# ---------------------------------------------------------------------------
# distances


def _as_rows(v):
    v = np.asarray(v, dtype=np.float64)
    return v[None, :] if v.ndim == 1 else v


def cosine_distance(x, y):
    """``1 - cos(x, y)``, clamped to [0, 2]. Works row-wise on 2-D input."""
    x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise DataError(f"dimension mismatch: {x.shape} vs {y.shape}")
    sx = np.sum(x * x, axis=-1)
    sy = np.sum(y * y, axis=-1)
    if np.any(sx == 0) or np.any(sy == 0):
        raise DataError("cosine distance is undefined for a zero vector")
    # sqrt of the product (not product of sqrts) so that d(x, x) == 0 exactly
    d = 1.0 - np.sum(x * y, axis=-1) / np.sqrt(sx * sy)
    return np.clip(d, 0.0, 2.0)


def euclidean_distance(x, y):
    x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise DataError(f"dimension mismatch: {x.shape} vs {y.shape}")
    return np.sqrt(np.sum((x - y) ** 2, axis=-1))


def pairwise_distances(a, b, distance="cosine"):
    """Distance matrix between rows of ``a`` and rows of ``b``."""
    a, b = _as_rows(a), _as_rows(b)
    if distance == "cosine":
        an = a / np.linalg.norm(a, axis=1, keepdims=True)
        bn = b / np.linalg.norm(b, axis=1, keepdims=True)
        return np.clip(1.0 - an @ bn.T, 0.0, 2.0)
    sq = np.sum(a**2, 1)[:, None] + np.sum(b**2, 1)[None, :] - 2 * a @ b.T
    return np.sqrt(np.maximum(sq, 0.0))


def _distance_grad(a, b, distance):
    """Row-wise distance and its gradients with respect to ``a`` and ``b``."""
    if distance == "cosine":
        na = np.linalg.norm(a, axis=1, keepdims=True)
        nb = np.linalg.norm(b, axis=1, keepdims=True)
        cos = np.sum(a * b, axis=1, keepdims=True) / (na * nb)
        ga = -(b / (na * nb) - cos * a / na**2)
        gb = -(a / (na * nb) - cos * b / nb**2)
        return np.clip(1.0 - cos[:, 0], 0.0, 2.0), ga, gb
    diff = a - b
    d = np.linalg.norm(diff, axis=1, keepdims=True)
    ga = np.divide(diff, d, out=np.zeros_like(diff), where=d > 0)
    return d[:, 0], ga, -ga


def triplet_loss(emb_a, emb_p, emb_n, margin, distance="cosine"):
    """Hinge ``max(d(a, p) - d(a, n) + margin, 0)``; vectorized over rows."""
    dist = cosine_distance if distance == "cosine" else euclidean_distance
    loss = np.maximum(dist(emb_a, emb_p) - dist(emb_a, emb_n) + margin, 0.0)
    return float(loss) if np.ndim(loss) == 0 else loss


def triplet_grads(emb_a, emb_p, emb_n, margin, distance="cosine"):
    """Per-triplet losses plus gradients of the mean loss over active triplets.

    Returns ``(losses, active, g_a, g_p, g_n)``. Zero-loss triplets are inactive
    and contribute nothing; with no active triplet every gradient is zero.
    """
    d_ap, ga_p, gp = _distance_grad(emb_a, emb_p, distance)
    d_an, ga_n, gn = _distance_grad(emb_a, emb_n, distance)
    losses = np.maximum(d_ap - d_an + margin, 0.0)
    active = losses > 0
    n_active = int(active.sum())
    if n_active == 0:
        z = np.zeros_like(emb_a)
        return losses, active, z, z.copy(), z.copy()
    w = (active / n_active)[:, None]
    return losses, active, w * (ga_p - ga_n), w * gp, -w * gn


def matrix_triplet_grads(anchors, items, a_rows, p_rows, n_rows, margin, distance="cosine"):
    """Same gradients as ``triplet_grads`` for triplets given as row indices.

    ``anchors`` and ``items`` hold each distinct embedding once; triplet ``t`` is
    ``(anchors[a_rows[t]], items[p_rows[t]], items[n_rows[t]])``. The hinge weights
    are accumulated per (anchor, item) cell so the cost is set by the size of
    the distance matrix rather than the triplet count.

    Returns ``(mean_active_loss, n_active, d_anchors, d_items)``.
    """
    d = pairwise_distances(anchors, items, distance)
    losses = d[a_rows, p_rows] - d[a_rows, n_rows] + margin
    active = losses > 0
    n_active = int(active.sum())
    if n_active == 0:
        return 0.0, 0, np.zeros_like(anchors), np.zeros_like(items)
    na, ni = d.shape
    w = active / n_active
    coef = np.bincount(a_rows * ni + p_rows, weights=w, minlength=na * ni)
    coef -= np.bincount(a_rows * ni + n_rows, weights=w, minlength=na * ni)
    coef = coef.reshape(na, ni)

    if distance == "cosine":
        norm_a = np.linalg.norm(anchors, axis=1)
        norm_i = np.linalg.norm(items, axis=1)
        cos = (anchors @ items.T) / np.outer(norm_a, norm_i)
        scaled = coef / np.outer(norm_a, norm_i)
        d_anchors = -(scaled @ items) + (np.sum(coef * cos, axis=1) / norm_a**2)[:, None] * anchors
        d_items = -(scaled.T @ anchors) + (np.sum(coef * cos, axis=0) / norm_i**2)[:, None] * items
    else:
        inv = np.divide(coef, d, out=np.zeros_like(coef), where=d > 0)
        d_anchors = inv.sum(axis=1)[:, None] * anchors - inv @ items
        d_items = inv.sum(axis=0)[:, None] * items - inv.T @ anchors
    return float(losses[active].mean()), n_active, d_anchors, d_items


# ---------------------------------------------------------------------------
# network


@dataclass(frozen=True)
class MlpSpec:
    """Layer widths including the input width. Hidden: tanh, output: sigmoid."""

    layer_widths: tuple
    dropout_rate: float = 0.2

    def __post_init__(self):
        widths = tuple(int(w) for w in self.layer_widths)
        if len(widths) < 2 or min(widths) < 1:
            raise DataError(f"invalid layer widths {self.layer_widths}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise DataError("dropout rate must be in [0, 1)")
        object.__setattr__(self, "layer_widths", widths)


@dataclass
class Branch:
    spec: MlpSpec
    weights: list
    biases: list

    @classmethod
    def init(cls, spec, rng):
        weights, biases = [], []
        for fan_in, fan_out in zip(spec.layer_widths[:-1], spec.layer_widths[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(spec, weights, biases)

    @property
    def in_width(self):
        return self.spec.layer_widths[0]

    def copy(self):
        return Branch(self.spec, [w.copy() for w in self.weights], [b.copy() for b in self.biases])


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def branch_forward(branch, inputs, train_mode=False, rng=None):
    """Returns ``(output, cache)``; inverted dropout on hidden activations in train mode."""
    a = _as_rows(inputs)
    if a.shape[1] != branch.in_width:
        raise DataError(f"input width {a.shape[1]} does not match branch width {branch.in_width}")
    p = branch.spec.dropout_rate
    layer_inputs, hidden, masks = [], [], []
    last = len(branch.weights) - 1
    for i, (w, b) in enumerate(zip(branch.weights, branch.biases)):
        layer_inputs.append(a)
        z = a @ w + b
        if i == last:
            out = _sigmoid(z)
            break
        h = np.tanh(z)
        hidden.append(h)
        if train_mode and p > 0:
            if rng is None:
                raise ValueError("train_mode with dropout needs an rng")
            mask = (rng.random(h.shape) >= p) / (1.0 - p)
            masks.append(mask)
            a = h * mask
        else:
            masks.append(None)
            a = h
    return out, (layer_inputs, hidden, masks, out)


def branch_backward(branch, cache, d_out):
    """Gradients ``(dW list, db list)`` given dLoss/dOutput."""
    layer_inputs, hidden, masks, out = cache
    dz = d_out * out * (1.0 - out)
    d_w = [None] * len(branch.weights)
    d_b = [None] * len(branch.weights)
    for i in range(len(branch.weights) - 1, -1, -1):
        d_w[i] = layer_inputs[i].T @ dz
        d_b[i] = dz.sum(axis=0)
        if i == 0:
            break
        da = dz @ branch.weights[i].T
        if masks[i - 1] is not None:
            da = da * masks[i - 1]
        dz = da * (1.0 - hidden[i - 1] ** 2)
    return d_w, d_b


@dataclass
class TnnModel:
    anchor: Branch
    pair: Branch
    direction: str = "audio2visual"
    train_config: dict | None = None

    def parameters(self):
        """Flat list: anchor W/b per layer, then pair W/b per layer."""
        out = []
        for br in (self.anchor, self.pair):
            for w, b in zip(br.weights, br.biases):
                out.extend([w, b])
        return out

    def with_parameters(self, params):
        params = list(params)
        branches = []
        for br in (self.anchor, self.pair):
            n = len(br.weights)
            chunk, params = params[: 2 * n], params[2 * n :]
            branches.append(Branch(br.spec, chunk[0::2], chunk[1::2]))
        return TnnModel(branches[0], branches[1], self.direction, self.train_config)

    def copy(self):
        return self.with_parameters([p.copy() for p in self.parameters()])

    def to_dict(self):
        def branch_dict(br):
            return {
                "spec": {"layer_widths": list(br.spec.layer_widths), "dropout_rate": br.spec.dropout_rate},
                "layers": [
                    {"rows": w.shape[0], "cols": w.shape[1], "weights": w.ravel().tolist(), "bias": b.tolist()}
                    for w, b in zip(br.weights, br.biases)
                ],
            }

        return {
            "direction": self.direction,
            "anchor_branch": branch_dict(self.anchor),
            "pair_branch": branch_dict(self.pair),
            "train_config": self.train_config,
        }

    @classmethod
    def from_dict(cls, d):
        def branch(bd):
            spec = MlpSpec(tuple(bd["spec"]["layer_widths"]), bd["spec"]["dropout_rate"])
            ws = [np.asarray(l["weights"], dtype=np.float64).reshape(l["rows"], l["cols"]) for l in bd["layers"]]
            bs = [np.asarray(l["bias"], dtype=np.float64) for l in bd["layers"]]
            expected = list(zip(spec.layer_widths[:-1], spec.layer_widths[1:]))
            if [w.shape for w in ws] != expected:
                raise DataError("TNN model: layer shapes do not match spec")
            return Branch(spec, ws, bs)

        return cls(branch(d["anchor_branch"]), branch(d["pair_branch"]), d["direction"], d.get("train_config"))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict()) + "\n")

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


def branch_widths(direction):
    """(anchor widths, pair widths) excluding the input layer."""
    if direction == "audio2visual":
        return AUDIO_WIDTHS, VISUAL_WIDTHS
    if direction == "visual2audio":
        return VISUAL_WIDTHS, AUDIO_WIDTHS
    raise DataError(f"unknown direction {direction!r}; expected one of {DIRECTIONS}")


def init_model(anchor_in, pair_in, direction="audio2visual", dropout_rate=0.2, seed=0,
               anchor_widths=None, pair_widths=None):
    default_a, default_p = branch_widths(direction)
    rng = np.random.default_rng(seed)
    anchor = Branch.init(MlpSpec((anchor_in, *(anchor_widths or default_a)), dropout_rate), rng)
    pair = Branch.init(MlpSpec((pair_in, *(pair_widths or default_p)), dropout_rate), rng)
    return TnnModel(anchor, pair, direction)


def forward(model, anchor, pos, neg, train_mode=False, rng=None):
    """Embed row-aligned (anchor, positive, negative) inputs.

    Positives and negatives both go through the pair branch. Returns
    ``(emb_a, emb_p, emb_n, cache)``.
    """
    ea, ca = branch_forward(model.anchor, anchor, train_mode, rng)
    ep, cp = branch_forward(model.pair, pos, train_mode, rng)
    en, cn = branch_forward(model.pair, neg, train_mode, rng)
    return ea, ep, en, {"anchor": ca, "pos": cp, "neg": cn}


def backward(model, cache, margin, distance="cosine"):
    """Gradients of the mean active-triplet loss for the batch cached by ``forward``.

    Returns ``(loss, grads)`` where ``grads`` is aligned with ``model.parameters()``
    and ``loss`` is the mean over active triplets (0 when none are active).
    """
    ea, ep, en = cache["anchor"][3], cache["pos"][3], cache["neg"][3]
    losses, active, ga, gp, gn = triplet_grads(ea, ep, en, margin, distance)
    aw, ab = branch_backward(model.anchor, cache["anchor"], ga)
    pw, pb = branch_backward(model.pair, cache["pos"], gp)
    nw, nb = branch_backward(model.pair, cache["neg"], gn)
    grads = []
    for w, b in zip(aw, ab):
        grads.extend([w, b])
    for w1, b1, w2, b2 in zip(pw, pb, nw, nb):
        grads.extend([w1 + w2, b1 + b2])
    loss = float(losses[active].mean()) if active.any() else 0.0
    return loss, grads


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0

    @classmethod
    def zeros_like(cls, params):
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], 0)


def adam_step(params, grads, state, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update. Returns ``(new_params, new_state)``."""
    t = state.t + 1
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise DataError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        m_hat = m / (1 - beta1**t)
        v_hat = v / (1 - beta2**t)
        new_p.append(p - lr * m_hat / (np.sqrt(v_hat) + eps))
        new_m.append(m)
        new_v.append(v)
    return new_p, AdamState(new_m, new_v, t)


# ---------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class TrainConfig:
    margin: float = 0.5
    epochs: int = 20
    batch_count: int | None = None
    learning_rate: float = 0.001
    mining_strategy: str = "batch-all"
    distance: str = "cosine"
    seed: int = 0
    dropout_rate: float = 0.2
    random_per_anchor: int = DEFAULT_RANDOM_PER_ANCHOR

    def __post_init__(self):
        if self.mining_strategy not in STRATEGIES:
            raise DataError(f"unknown mining strategy {self.mining_strategy!r}; expected one of {STRATEGIES}")
        if self.distance not in DISTANCES:
            raise DataError(f"unknown distance {self.distance!r}; expected one of {DISTANCES}")
        if self.distance == "cosine" and not 0.0 < self.margin < 2.0:
            raise DataError("cosine margin must be in (0, 2)")
        if self.margin <= 0:
            raise DataError("margin must be positive")
        if self.epochs < 0:
            raise DataError("epochs must be >= 0")
        if self.batch_count is not None and self.batch_count < 1:
            raise DataError("batch count must be >= 1")
        if self.learning_rate <= 0:
            raise DataError("learning rate must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise DataError("dropout rate must be in [0, 1)")

    def resolved_batch_count(self, n):
        if self.batch_count is not None:
            return self.batch_count
        return max(1, n // TARGET_BATCH_SIZE)

    def to_dict(self):
        return asdict(self)


@dataclass
class EpochRecord:
    epoch: int
    mean_loss: float
    active_triplets: int
    total_triplets: int
    skipped_batches: int


def _mine(config, batch, labels, ea, ep_batch):
    if config.mining_strategy == "batch-all":
        return select_batch_all(batch, labels)
    d = pairwise_distances(ea, ep_batch, config.distance)
    if config.mining_strategy == "batch-hard":
        return select_batch_hard(batch, labels, d)
    return select_batch_semi_hard(batch, labels, d, config.margin)


def _train_batch(model, state, anchor_x, pair_x, labels, batch, config, rng, random_triplets):
    """One forward/mine/backward/Adam step. Returns (model, state, loss, n_active, n_total)."""
    if config.mining_strategy == "random":
        pair_ids = np.unique(np.concatenate([batch, random_triplets.positive_ids, random_triplets.negative_ids]))
    else:
        pair_ids = batch
    ea, cache_a = branch_forward(model.anchor, anchor_x[batch], True, rng)
    ep, cache_p = branch_forward(model.pair, pair_x[pair_ids], True, rng)

    if config.mining_strategy == "random":
        triplets = random_triplets
    else:
        triplets = _mine(config, batch, labels, ea, ep)
    if len(triplets) == 0:
        return model, state, None, 0, 0

    a_rows = np.searchsorted(batch, triplets.anchor_ids)
    p_rows = np.searchsorted(pair_ids, triplets.positive_ids)
    n_rows = np.searchsorted(pair_ids, triplets.negative_ids)
    loss, n_active, d_anchor, d_pair = matrix_triplet_grads(
        ea, ep, a_rows, p_rows, n_rows, config.margin, config.distance
    )
    if n_active == 0:
        return model, state, 0.0, 0, len(triplets)

    aw, ab = branch_backward(model.anchor, cache_a, d_anchor)
    pw, pb = branch_backward(model.pair, cache_p, d_pair)
    grads = []
    for w, b in zip(aw + pw, ab + pb):
        grads.extend([w, b])
    params, state = adam_step(model.parameters(), grads, state, config.learning_rate)
    return model.with_parameters(params), state, loss, n_active, len(triplets)


def train(embeddings_x, embeddings_y, labels, config=None, direction="audio2visual", history=None):
    """Train a triplet network on paired projections.

    For ``audio2visual`` the anchors come from ``embeddings_x`` and positives and
    negatives from ``embeddings_y``; ``visual2audio`` swaps the roles. Each epoch
    deals the samples into class-balanced batches, mines triplets inside every
    batch from the current embeddings and takes one Adam step per batch. Batches
    with no valid triplet are skipped and counted.

    If ``history`` is a list, one ``EpochRecord`` per epoch is appended to it.
    """
    config = config or TrainConfig()
    x = np.asarray(embeddings_x, dtype=np.float64)
    y = np.asarray(embeddings_y, dtype=np.float64)
    labels = np.asarray(labels)
    if not (x.shape[0] == y.shape[0] == labels.size):
        raise DataError("embeddings and labels must have the same number of rows")
    anchor_x, pair_x = (x, y) if direction == "audio2visual" else (y, x)
    branch_widths(direction)

    model = init_model(anchor_x.shape[1], pair_x.shape[1], direction, config.dropout_rate, config.seed)
    model.train_config = config.to_dict()
    state = AdamState.zeros_like(model.parameters())
    dropout_rng = np.random.default_rng([config.seed, 1])
    n_batches = config.resolved_batch_count(labels.size)

    for epoch in range(config.epochs):
        batches = make_balanced_batches(labels, n_batches, [config.seed, 2, epoch])
        pool = None
        if config.mining_strategy == "random":
            pool = select_random(labels, config.random_per_anchor, [config.seed, 3, epoch])
        losses, active_total, triplet_total, skipped = [], 0, 0, 0
        for batch in batches:
            random_triplets = None
            if pool is not None:
                keep = np.isin(pool.anchor_ids, batch)
                random_triplets = TripletBatch(pool.anchor_ids[keep], pool.positive_ids[keep], pool.negative_ids[keep])
            model, state, loss, n_active, n_total = _train_batch(
                model, state, anchor_x, pair_x, labels, batch, config, dropout_rng, random_triplets
            )
            if loss is None:
                skipped += 1
                continue
            losses.append(loss)
            active_total += n_active
            triplet_total += n_total
        if skipped:
            log.warning("epoch %d: %d batch(es) had no valid triplet and were skipped", epoch, skipped)
        record = EpochRecord(epoch, float(np.mean(losses)) if losses else 0.0, active_total, triplet_total, skipped)
        log.debug("epoch %d: mean loss %.6f, %d/%d active", epoch, record.mean_loss, active_total, triplet_total)
        if history is not None:
            history.append(record)
    return model


def embed(model, view, branch="anchor"):
    """Inference-mode embeddings of every row through one branch."""
    if branch not in ("anchor", "pair"):
        raise ValueError(f"branch must be 'anchor' or 'pair', got {branch!r}")
    out, _ = branch_forward(model.anchor if branch == "anchor" else model.pair, view, train_mode=False)
    return out
