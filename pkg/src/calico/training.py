"""Joint training of the classifier and density heads.

Each update step minimizes cross-entropy on a labeled batch plus, weighted
by loss_weight, the contrastive maximum-likelihood surrogate: mean energy of
a data batch (drawn from labeled and unlabeled samples alike) minus mean
energy of Langevin negatives. With loss_weight zero the step reduces exactly
to the softmax baseline update; the baselines run through the same loop.

The true generative NLL is intractable, so the reported scalar is the
surrogate (CE plus energy gap), whose parameter gradient is the quantity the
objective prescribes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .data import Dataset, PoolPartition
from .errors import NumericError, TrainingDiverged, ValidationError
from .models import ModelState, _he_init, energy_torch, params_vector, set_params_vector
from .sgld import SGLDConfig, fit_informative_init, run_chain

GRAD_CLIP = 10.0

# below this multiple of the class count, labeled batches are class-stratified
STRATIFY_THRESHOLD = 10


@dataclass(frozen=True)
class TrainConfig:
    optimizer: str = "sgd"
    learning_rate: float = 0.1
    batch_labeled: int = 64
    batch_all: int = 64
    epochs_per_round: int = 10
    warm_start: bool = True
    loss_weight: float = 1.0
    augmentation: bool = False

    def __post_init__(self):
        if self.optimizer not in ("sgd", "adam"):
            raise ValidationError(f"unknown optimizer '{self.optimizer}'")
        if self.learning_rate <= 0:
            raise ValidationError("learning_rate must be positive")
        if self.batch_labeled < 1 or self.batch_all < 1:
            raise ValidationError("batch sizes must be >= 1")
        if self.epochs_per_round < 0:
            raise ValidationError("epochs_per_round must be >= 0")
        if self.loss_weight < 0:
            raise ValidationError("loss_weight must be nonnegative")


class Augmenter:
    """Reflect-pad random crop plus horizontal flip for image rows.

    Counts invocations per pipeline path so a run can prove the density
    batches were never augmented.
    """

    def __init__(self, feature_shape: tuple, pad: int = 4):
        self.shape = tuple(feature_shape)
        self.pad = pad
        self.counts = {"labeled": 0, "mle": 0}

    def __call__(self, x: np.ndarray, rng: np.random.Generator,
                 path: str = "labeled") -> np.ndarray:
        self.counts[path] = self.counts.get(path, 0) + 1
        h, w, c = self.shape
        n = x.shape[0]
        imgs = x.reshape(n, h, w, c)
        p = self.pad
        padded = np.pad(imgs, ((0, 0), (p, p), (p, p), (0, 0)), mode="reflect")
        offs = rng.integers(0, 2 * p + 1, size=(n, 2))
        flips = rng.random(n) < 0.5
        out = np.empty_like(imgs)
        for i in range(n):
            dy, dx = offs[i]
            crop = padded[i, dy:dy + h, dx:dx + w]
            out[i] = crop[:, ::-1] if flips[i] else crop
        return out.reshape(n, h * w * c)


class _Optimizer:
    """Flat-vector SGD or Adam; state lives for one training round."""

    def __init__(self, kind: str, lr: float, size: int):
        self.kind = kind
        self.lr = lr
        self.t = 0
        if kind == "adam":
            self.m = np.zeros(size)
            self.v = np.zeros(size)

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        self.t += 1
        if self.kind == "sgd":
            return params - self.lr * grad
        b1, b2, eps = 0.9, 0.999, 1e-8
        self.m = b1 * self.m + (1 - b1) * grad
        self.v = b2 * self.v + (1 - b2) * grad * grad
        mhat = self.m / (1 - b1 ** self.t)
        vhat = self.v / (1 - b2 ** self.t)
        return params - self.lr * mhat / (np.sqrt(vhat) + eps)


def joint_loss_and_grads(state: ModelState, labeled_x: np.ndarray | None,
                         labeled_y: np.ndarray | None,
                         all_x: np.ndarray | None, negatives: np.ndarray | None,
                         loss_weight: float):
    """Surrogate loss and its flat parameter gradient.

    gradient = grad CE(labeled) + loss_weight * (mean grad E(data batch)
    - mean grad E(negatives)); the negatives are treated as constants, their
    energies still depend on the parameters.
    """
    dtype = state.arch.torch_dtype
    terms = []
    ce_val = 0.0
    gap_val = 0.0
    if labeled_x is not None and len(labeled_x) > 0:
        lx = torch.as_tensor(np.asarray(labeled_x), dtype=dtype)
        ly = torch.as_tensor(np.asarray(labeled_y), dtype=torch.long)
        ce = F.cross_entropy(state.net(lx), ly)
        terms.append(ce)
        ce_val = float(ce.detach())
    if loss_weight > 0:
        if all_x is None or len(all_x) == 0:
            raise ValidationError("density term requires a nonempty data batch")
        if negatives is None or len(negatives) == 0:
            raise ValidationError("density term requires negatives")
        pos = torch.as_tensor(np.asarray(all_x), dtype=dtype)
        neg = torch.as_tensor(np.asarray(negatives), dtype=dtype)
        gap = energy_torch(state.net, pos).mean() - energy_torch(state.net, neg).mean()
        terms.append(loss_weight * gap)
        gap_val = float(gap.detach())
    if not terms:
        raise ValidationError("loss has no terms: no labels and loss_weight=0")

    loss = terms[0]
    for t in terms[1:]:
        loss = loss + t
    if not torch.isfinite(loss):
        raise NumericError("non-finite training loss")
    params = [p for p in state.net.parameters()]
    for p in params:
        if p.grad is not None:
            p.grad = None
    loss.backward()
    grad = np.concatenate([
        (p.grad if p.grad is not None else torch.zeros_like(p)).numpy().ravel()
        for p in params
    ]).astype(np.float64)
    return float(loss.detach()), grad, ce_val, gap_val


def _stratified_order(targets: np.ndarray, ids: np.ndarray,
                      rng: np.random.Generator) -> np.ndarray:
    """Round-robin over shuffled per-class queues, so every batch sees all
    classes while the pool is tiny."""
    queues = []
    for k in np.unique(targets):
        members = ids[targets == k]
        rng.shuffle(members)
        queues.append(list(members))
    order = []
    while any(queues):
        for q in queues:
            if q:
                order.append(q.pop())
    return np.asarray(order, dtype=np.int64)


def _labeled_order(pools: PoolPartition, n_classes: int,
                   rng: np.random.Generator) -> np.ndarray:
    ids = pools.labeled_ids.copy()
    if ids.size == 0:
        return ids
    targets = pools.labeled_targets()
    if ids.size < STRATIFY_THRESHOLD * n_classes:
        return _stratified_order(targets, ids, rng)
    rng.shuffle(ids)
    return ids


def train_round(state: ModelState, pools: PoolPartition, dataset: Dataset,
                train_cfg: TrainConfig, sgld_cfg: SGLDConfig | None,
                rng: np.random.Generator):
    """One round of joint training over the labeled and unlabeled pools.

    Returns the updated state and per-round metrics. On a non-finite loss
    the round aborts: parameters roll back to the last finished epoch and
    TrainingDiverged carries that checkpoint.
    """
    n_classes = state.arch.n_classes
    use_density = train_cfg.loss_weight > 0
    if use_density and sgld_cfg is None:
        raise ValidationError("joint training requires an SGLD config")

    if not train_cfg.warm_start:
        _he_init(state.net, rng, state.arch.torch_dtype)

    label_map = dict(pools.labels)
    all_ids = np.concatenate([pools.labeled_ids, pools.unlabeled_ids])
    all_ids.sort()

    augmenter = Augmenter(dataset.feature_shape) if (
        train_cfg.augmentation and dataset.is_image) else None

    mixture = None
    if use_density:
        if pools.n_labeled > 0:
            feats = dataset.features[pools.labeled_ids]
            mixture = fit_informative_init(feats, pools.labeled_targets())
        elif all_ids.size > 0:
            mixture = fit_informative_init(dataset.features[all_ids])

    opt = _Optimizer(train_cfg.optimizer, train_cfg.learning_rate, state.n_params)
    epoch_rows = []
    ces, gaps, gnorms, epos, eneg = [], [], [], [], []
    last_good = params_vector(state)
    last_metrics = {"ce": 0.0, "energy_gap": 0.0, "grad_norm": 0.0}

    labeled_order = np.empty(0, dtype=np.int64)
    labeled_ptr = 0

    for epoch in range(train_cfg.epochs_per_round):
        if use_density:
            perm_all = all_ids.copy()
            rng.shuffle(perm_all)
            steps = max(1, int(np.ceil(perm_all.size / train_cfg.batch_all)))
        else:
            steps = max(1, int(np.ceil(pools.n_labeled / train_cfg.batch_labeled)))
            labeled_order = _labeled_order(pools, n_classes, rng)
            labeled_ptr = 0

        e_ce, e_gap, e_gn, e_pos, e_neg = [], [], [], [], []
        for step in range(steps):
            if use_density:
                if labeled_ptr + train_cfg.batch_labeled > labeled_order.size:
                    labeled_order = _labeled_order(pools, n_classes, rng)
                    labeled_ptr = 0
                take = min(train_cfg.batch_labeled, labeled_order.size)
                lab_ids = labeled_order[labeled_ptr:labeled_ptr + take]
                labeled_ptr += take
            else:
                lo = step * train_cfg.batch_labeled
                lab_ids = labeled_order[lo:lo + train_cfg.batch_labeled]

            lab_x = lab_y = None
            if lab_ids.size:
                lab_x = dataset.features[lab_ids]
                if augmenter is not None:
                    lab_x = augmenter(lab_x, rng, path="labeled")
                lab_y = np.array([label_map[int(i)] for i in lab_ids])

            pos_x = negatives = None
            if use_density:
                chunk = perm_all[step * train_cfg.batch_all:
                                 (step + 1) * train_cfg.batch_all]
                if chunk.size == 0:
                    chunk = perm_all[-train_cfg.batch_all:]
                # density batches bypass the augmenter entirely
                pos_x = dataset.features[chunk]

            if lab_ids.size == 0 and not use_density:
                continue

            try:
                if use_density:
                    negatives = run_chain(state, sgld_cfg, len(chunk), rng,
                                          init=mixture)
                loss, grad, ce, gap = joint_loss_and_grads(
                    state, lab_x, lab_y, pos_x, negatives,
                    train_cfg.loss_weight)
            except NumericError as exc:
                set_params_vector(state, last_good)
                raise TrainingDiverged(
                    f"round aborted at epoch {epoch}: {exc}",
                    params=last_good, metrics=dict(last_metrics)) from exc

            gnorm = float(np.linalg.norm(grad))
            if gnorm > GRAD_CLIP:
                grad = grad * (GRAD_CLIP / gnorm)
            new_params = opt.step(
                params_vector(state).astype(np.float64), grad)
            if not np.all(np.isfinite(new_params)):
                set_params_vector(state, last_good)
                raise TrainingDiverged(
                    f"round aborted at epoch {epoch}: non-finite parameters",
                    params=last_good, metrics=dict(last_metrics))
            set_params_vector(state, new_params)

            e_ce.append(ce)
            e_gap.append(gap)
            e_gn.append(gnorm)
            if use_density:
                with torch.no_grad():
                    dtype = state.arch.torch_dtype
                    e_pos.append(float(energy_torch(
                        state.net, torch.as_tensor(pos_x, dtype=dtype)).mean()))
                    e_neg.append(float(energy_torch(
                        state.net, torch.as_tensor(negatives, dtype=dtype)).mean()))

        if e_ce:
            row = {"epoch": epoch, "ce": float(np.mean(e_ce)),
                   "energy_gap": float(np.mean(e_gap)),
                   "grad_norm": float(np.mean(e_gn))}
            epoch_rows.append(row)
            ces += e_ce
            gaps += e_gap
            gnorms += e_gn
            epos += e_pos
            eneg += e_neg
            last_metrics = {k: row[k] for k in ("ce", "energy_gap", "grad_norm")}
        last_good = params_vector(state)

    metrics = {
        "ce": float(np.mean(ces)) if ces else 0.0,
        "energy_gap": float(np.mean(gaps)) if gaps else 0.0,
        "grad_norm": float(np.mean(gnorms)) if gnorms else 0.0,
        "energy_pos": float(np.mean(epos)) if epos else 0.0,
        "energy_neg": float(np.mean(eneg)) if eneg else 0.0,
        "epoch_rows": epoch_rows,
        "augment_counts": dict(augmenter.counts) if augmenter else
                          {"labeled": 0, "mle": 0},
    }
    return state, metrics


def train_baseline(state: ModelState, labeled_ids: np.ndarray,
                   labels: dict, dataset: Dataset, train_cfg: TrainConfig,
                   rng: np.random.Generator):
    """Softmax-only training on a labeled pool; same loop, zero density term."""
    labeled_ids = np.asarray(labeled_ids, dtype=np.int64)
    pools = PoolPartition(
        labeled_ids=np.sort(labeled_ids),
        unlabeled_ids=np.empty(0, dtype=np.int64),
        eval_ids=np.empty(0, dtype=np.int64),
        seed=0,
        labels={int(i): int(labels[int(i)]) for i in labeled_ids},
    )
    cfg = TrainConfig(
        optimizer=train_cfg.optimizer,
        learning_rate=train_cfg.learning_rate,
        batch_labeled=train_cfg.batch_labeled,
        batch_all=train_cfg.batch_all,
        epochs_per_round=train_cfg.epochs_per_round,
        warm_start=train_cfg.warm_start,
        loss_weight=0.0,
        augmentation=train_cfg.augmentation,
    )
    return train_round(state, pools, dataset, cfg, None, rng)
