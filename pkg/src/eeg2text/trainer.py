"""Two-stage training, LM pretraining, cyclical-LR SGD, gradient checking.

Stage 1 regresses the brain encoder's latent rows onto the frozen LM's
token embedding rows (MSE, batch size 1 in the paper preset). Stage 2
freezes the brain encoder and fine-tunes the LM with teacher-forced
cross entropy on the latent sequences. Plain SGD with a triangular
cyclical learning rate drives both, and a central finite-difference
checker serves as the independent oracle for every analytic gradient.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import Tensor
from .brain import BrainEncoder
from .errors import AlignError, DataError, NumericsError
from .lm import EOS, UNK, MiniLM, Vocabulary
from .metrics import bleu_n
from .tokenizer import is_punct_token, tokenize_text

STAGES = ("pretrain", "stage1", "stage2")


@dataclass
class TrainPlan:
    stage: str
    lr_min: float = 5e-7
    lr_max: float = 5e-5
    cycle_steps: int = 0  # 0 -> two epochs per triangle
    batch_size: int = 1
    epochs: int = 25
    freeze: frozenset = frozenset()
    seed: int = 0
    checkpoint_dir: str = ""
    val_metric: str = ""  # "" -> stage default (mse / ce)
    target_loss: float = 0.0  # >0 -> stop once epoch-mean train loss dips below
    clip_norm: float = 0.0  # >0 -> global-norm gradient clipping

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ValueError(f"unknown stage {self.stage!r}")
        if self.lr_min > self.lr_max:
            raise ValueError(f"lr_min {self.lr_min} > lr_max {self.lr_max}")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        freeze = set(self.freeze)
        if self.stage == "stage1":
            freeze.add("lm")
        elif self.stage == "stage2":
            freeze.add("brain")
        self.freeze = frozenset(freeze)
        if not self.val_metric:
            self.val_metric = {"pretrain": "ce", "stage1": "mse", "stage2": "ce"}[self.stage]


@dataclass
class TrainLog:
    steps: list = field(default_factory=list)
    val: list = field(default_factory=list)
    best_epoch: int = -1
    best_value: float = math.inf
    best_path: str = ""

    def add_step(self, step, epoch, lr, loss):
        self.steps.append({"step": step, "epoch": epoch, "lr": lr, "loss": loss})

    def add_val(self, epoch, metric, value):
        self.val.append({"epoch": epoch, "metric": metric, "value": value})

    def summary(self) -> dict:
        return {
            "num_steps": len(self.steps),
            "final_loss": self.steps[-1]["loss"] if self.steps else None,
            "best_epoch": self.best_epoch,
            "best_value": None if math.isinf(self.best_value) else self.best_value,
            "best_path": self.best_path,
            "val": self.val,
        }

    def write(self, jsonl_path, summary_path=None):
        jsonl_path = Path(jsonl_path)
        jsonl_path.parent.mkdir(parents=True, exist_ok=True)
        with open(jsonl_path, "w", encoding="utf-8") as f:
            for row in self.steps:
                f.write(json.dumps(row) + "\n")
        if summary_path is not None:
            Path(summary_path).write_text(json.dumps(self.summary(), indent=2), encoding="utf-8")


def cyclical_lr(step: int, lr_min: float, lr_max: float, cycle_steps: int) -> float:
    """Triangular schedule: lr_min -> lr_max over the first half cycle, back down over the second."""
    if cycle_steps < 2:
        raise ValueError("cycle_steps must be >= 2")
    pos = step % cycle_steps
    half = cycle_steps / 2.0
    frac = pos / half if pos <= half else (cycle_steps - pos) / half
    return lr_min + (lr_max - lr_min) * frac


def _sgd_step(trainable: dict, lr: float, clip_norm: float) -> None:
    if clip_norm > 0.0:
        total = 0.0
        for t in trainable.values():
            if t.grad is not None:
                total += float((t.grad * t.grad).sum())
        norm = math.sqrt(total)
        if norm > clip_norm:
            scale = clip_norm / norm
            for t in trainable.values():
                if t.grad is not None:
                    t.grad *= scale
    for t in trainable.values():
        if t.grad is not None:
            t.data -= lr * t.grad


def _snapshot(params: dict) -> dict:
    return {name: t.data.copy() for name, t in params.items()}


def restore_params(params: dict, snapshot: dict) -> None:
    for name, arr in snapshot.items():
        params[name].data = arr.copy()


def _run_loop(items, loss_fn, models, trainable, plan: TrainPlan, val_fn=None, maximize=False, save_fn=None):
    """Shared SGD loop. loss_fn(item, rng, train_mode) -> Tensor scalar.

    Per-record losses within a batch are averaged, so the applied gradient
    equals the mean of per-record gradients. Returns (TrainLog, best
    parameter snapshot or None).
    """
    log = TrainLog()
    if plan.epochs == 0 or not items:
        return log, None
    steps_per_epoch = math.ceil(len(items) / plan.batch_size)
    cycle = plan.cycle_steps if plan.cycle_steps >= 2 else max(2, 2 * steps_per_epoch)
    order_rng = np.random.default_rng([plan.seed, 17])
    best_snapshot = None
    step = 0
    for epoch in range(plan.epochs):
        order = order_rng.permutation(len(items))
        epoch_losses = []
        for start in range(0, len(order), plan.batch_size):
            batch = order[start : start + plan.batch_size]
            lr = cyclical_lr(step, plan.lr_min, plan.lr_max, cycle)
            step_rng = np.random.default_rng([plan.seed, 997, step])
            for model in models:
                model.zero_grads()
            total = None
            for idx in batch:
                loss = loss_fn(items[idx], step_rng, True)
                total = loss if total is None else total + loss
            total = total * (1.0 / len(batch))
            total.backward()
            if trainable:
                _sgd_step(trainable, lr, plan.clip_norm)
            log.add_step(step, epoch, lr, float(total.data))
            epoch_losses.append(float(total.data))
            step += 1
        if val_fn is not None:
            value = val_fn()
            log.add_val(epoch, plan.val_metric, value)
            better = value > log.best_value if maximize else value < log.best_value
            if log.best_epoch < 0 or better:
                log.best_epoch, log.best_value = epoch, value
                best_snapshot = _snapshot(trainable) if trainable else None
                if save_fn is not None and plan.checkpoint_dir:
                    log.best_path = str(save_fn())
        if plan.target_loss > 0.0 and float(np.mean(epoch_losses)) < plan.target_loss:
            break
    return log, best_snapshot


# -- stage 1: language alignment -------------------------------------------


def stage1_target_rows(record, vocab: Vocabulary):
    """Token ids of the sentence plus the Z-row index feeding each token.

    Punctuation tokens inherit the latent row of the preceding word, since
    fixations exist only on words; the non-punctuation token count must
    equal the record's word count.
    """
    tokens = tokenize_text(record.text)
    row_map = []
    word_idx = -1
    for tok in tokens:
        if is_punct_token(tok):
            row_map.append(max(word_idx, 0))
        else:
            word_idx += 1
            row_map.append(word_idx)
    if word_idx + 1 != record.num_words:
        raise AlignError(
            f"record {record.sentence_id} (subject {record.subject}): "
            f"{word_idx + 1} word tokens vs {record.num_words} EEG words"
        )
    ids = [vocab.index.get(tok, UNK) for tok in tokens]
    return np.asarray(ids, dtype=np.int64), np.asarray(row_map, dtype=np.int64)


def mse_alignment_loss(brain: BrainEncoder, record, target: np.ndarray, row_map: np.ndarray,
                       rng=None, train_mode=False, **encode_kwargs) -> Tensor:
    z = brain.encode_tensor(record, train_mode=train_mode, rng=rng, **encode_kwargs)
    aligned = z[row_map]
    diff = aligned - Tensor(target)
    return (diff * diff).mean()


def stage1_align(train_records, val_records, brain: BrainEncoder, lm: MiniLM,
                 vocab: Vocabulary, plan: TrainPlan, **encode_kwargs):
    """Fit the brain encoder to the frozen LM's token embeddings (MSE)."""
    emb = lm.params["emb.table"].data
    items = []
    for record in train_records:
        ids, row_map = stage1_target_rows(record, vocab)
        items.append((record, emb[ids].copy(), row_map))
    val_items = []
    for record in val_records:
        ids, row_map = stage1_target_rows(record, vocab)
        val_items.append((record, emb[ids].copy(), row_map))

    def loss_fn(item, rng, train_mode):
        record, target, row_map = item
        return mse_alignment_loss(brain, record, target, row_map, rng, train_mode, **encode_kwargs)

    def val_fn():
        if not val_items:
            return math.inf
        return float(np.mean([loss_fn(it, None, False).data for it in val_items]))

    def save_fn():
        path = Path(plan.checkpoint_dir) / "brain_stage1_best.e2tp"
        brain.save(path)
        return path

    trainable = brain.trainable(plan.freeze)
    log, best = _run_loop(items, loss_fn, [brain], trainable, plan, val_fn, save_fn=save_fn)
    return brain, log, best


# -- stage 2: LM fine-tuning -------------------------------------------------


def stage2_targets(record, vocab: Vocabulary) -> np.ndarray:
    return np.asarray(vocab.tokenize(record.text) + [EOS], dtype=np.int64)


def stage2_finetune(train_records, val_records, brain: BrainEncoder, lm: MiniLM,
                    vocab: Vocabulary, plan: TrainPlan, encoder_input_fn=None, **encode_kwargs):
    """Fine-tune the LM on latent brain sequences with cross entropy.

    The brain encoder is frozen, so its latent outputs are computed once
    per record and reused across epochs. `encoder_input_fn(record)` may
    override the encoder input (oracle-words ablation feeds token
    embeddings instead; returning a tape Tensor keeps those trainable).
    """
    cache = {}

    def default_input(record):
        key = record.key
        if key not in cache:
            cache[key] = brain.encode(record, **encode_kwargs).Z
        return cache[key]

    input_fn = encoder_input_fn if encoder_input_fn is not None else default_input

    def loss_fn(record, rng, train_mode):
        targets = stage2_targets(record, vocab)
        logits = lm.forward_teacher_forced(input_fn(record), targets, train_mode=train_mode, rng=rng)
        return lm.cross_entropy_loss(logits, targets)

    maximize = plan.val_metric == "bleu1"

    def val_fn():
        if not val_records:
            return 0.0 if maximize else math.inf
        if maximize:
            max_len = max(len(stage2_targets(r, vocab)) for r in val_records) + 4
            candidates = [lm.greedy_decode(input_fn(r), max_len, vocab).text for r in val_records]
            return bleu_n(candidates, [r.text for r in val_records], 1)
        return float(np.mean([loss_fn(r, None, False).data for r in val_records]))

    def save_fn():
        path = Path(plan.checkpoint_dir) / "lm_stage2_best.e2tp"
        lm.save(path)
        return path

    trainable = lm.trainable(plan.freeze)
    log, best = _run_loop(list(train_records), loss_fn, [lm, brain], trainable, plan, val_fn,
                          maximize=maximize, save_fn=save_fn)
    return lm, log, best


# -- LM pretraining -----------------------------------------------------------


def pretrain_lm(texts, lm: MiniLM, vocab: Vocabulary, plan: TrainPlan, corruption_rate: float = 0.15):
    """Denoising pretraining: 15% of input tokens swapped for UNK, full text as target."""
    if not texts:
        raise DataError("cannot pretrain on an empty corpus")
    items = [np.asarray(vocab.tokenize(t), dtype=np.int64) for t in texts]
    items = [ids for ids in items if ids.size > 0]
    if not items:
        raise DataError("pretraining corpus contains no tokens")

    def corrupt(ids, rng):
        noisy = ids.copy()
        if rng is not None:
            noisy[rng.random(len(noisy)) < corruption_rate] = UNK
        return noisy

    def loss_fn(ids, rng, train_mode):
        targets = np.concatenate((ids, [EOS]))
        enc_input = lm.embed_tokens(corrupt(ids, rng if train_mode else None))
        logits = lm.forward_teacher_forced(enc_input, targets, train_mode=train_mode, rng=rng)
        return lm.cross_entropy_loss(logits, targets)

    def val_fn():
        return float(np.mean([loss_fn(ids, None, False).data for ids in items]))

    def save_fn():
        path = Path(plan.checkpoint_dir) / "lm_pretrain_best.e2tp"
        lm.save(path)
        return path

    trainable = lm.trainable(plan.freeze)
    log, best = _run_loop(items, loss_fn, [lm], trainable, plan, val_fn, save_fn=save_fn)
    return lm, log, best


# -- finite-difference gradient oracle ----------------------------------------


@dataclass
class FiniteDiffReport:
    max_error: float
    n_checked: int
    failures: list
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_error <= self.tolerance


def finite_diff_check(loss_fn, params: dict, epsilon: float = 1e-5, tolerance: float = 1e-4,
                      max_failures: int = 10) -> FiniteDiffReport:
    """Compare analytic gradients of loss_fn() against central differences.

    For every component the error is min(absolute, relative) between the
    analytic derivative and (loss(x+eps) - loss(x-eps)) / 2 eps; the check
    passes when the worst component stays within `tolerance`.
    """
    for t in params.values():
        t.zero_grad()
    base = loss_fn()
    if not np.isfinite(base.data).all():
        raise NumericsError(f"loss is not finite: {base.data}")
    base.backward()
    analytic = {name: (np.zeros_like(t.data) if t.grad is None else t.grad.copy()) for name, t in params.items()}

    max_error = 0.0
    n = 0
    failures = []
    for name in sorted(params):
        t = params[name]
        flat = t.data.reshape(-1)
        a_flat = analytic[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            up = loss_fn().data.item()
            flat[i] = orig - epsilon
            down = loss_fn().data.item()
            flat[i] = orig
            fd = (up - down) / (2.0 * epsilon)
            if not np.isfinite(fd):
                raise NumericsError(f"finite difference not finite at {name}[{i}]")
            abs_err = abs(a_flat[i] - fd)
            rel_err = abs_err / max(abs(a_flat[i]), abs(fd), 1e-12)
            err = min(abs_err, rel_err)
            n += 1
            if err > max_error:
                max_error = err
            if err > tolerance and len(failures) < max_failures:
                failures.append({"param": name, "index": i, "analytic": float(a_flat[i]), "fd": fd, "error": err})
    return FiniteDiffReport(max_error, n, failures, tolerance)
