"""Decoder training against a frozen encoder.

Four strategies share one scaffold (teacher activations are precomputed per
batch, Adam drives whichever decoder weights a stage marks trainable):

  blockwise_inward   blocks 1..D in turn; block N learns to invert encoder
                     block N under a feature inversion term, an image term
                     through the already-trained shallower blocks, and a
                     re-encoding (perceptual) term.
  blockwise_outward  blocks D..1 in turn; block N only matches the next
                     shallower encoder activation from a full partial decode.
  end_to_end         the sum of all blockwise-inward objectives, every
                     decoder block updated jointly.
  vanilla            image reconstruction alone, whole decoder jointly.

Batches are a fixed partition of the corpus; only their order reshuffles
each epoch, so teacher encodings are computed exactly once per run and the
loss trajectory is a pure function of (data, seed, plan).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import model, ops
from .autodiff import Tape, backward
from .optim import adam_init, adam_step

STRATEGIES = ("blockwise_inward", "blockwise_outward", "end_to_end", "vanilla")


@dataclass
class TrainPlan:
    strategy: str = "blockwise_inward"
    epochs: int = 20
    batch_size: int = 1
    lr: float = 2e-3
    lr_per_level: tuple = (2e-3, 2e-3, 2e-3, 1e-3)  # per-stage rates, override lr
    beta1: float = 0.9
    beta2: float = 0.9
    adam_eps: float = 1e-8
    lambda_perceptual: float = 1.0
    tail_average: float = 0.25  # Polyak-average the last fraction of steps
    seed: int = 0

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError("unknown strategy %r (choices: %s)"
                             % (self.strategy, ", ".join(STRATEGIES)))
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive, got %r" % (self.lr,))
        if self.lr_per_level is not None:
            self.lr_per_level = tuple(float(v) for v in self.lr_per_level)
            if any(v <= 0 for v in self.lr_per_level):
                raise ValueError("lr_per_level entries must be positive")
        if not 0.0 <= self.tail_average <= 1.0:
            raise ValueError("tail_average must be in [0, 1], got %r"
                             % (self.tail_average,))


@dataclass
class LossTerms:
    """One objective evaluation. inversion/perceptual are zero by
    construction for level 1, where only the image term exists."""
    level: int
    inversion: float
    image: float
    perceptual: float
    lam: float = 1.0

    @property
    def total(self):
        return self.inversion + self.image + self.lam * self.perceptual


def _scalar(x):
    return float(ops._data(x))


@dataclass
class Teacher:
    """Frozen-encoder activations for one fixed batch."""
    images: np.ndarray
    taps: dict
    skips: dict


def make_teachers(dataset, config, weights, batch_size):
    teachers = []
    for start in range(0, len(dataset), batch_size):
        batch = np.ascontiguousarray(dataset[start:start + batch_size],
                                     dtype=config.dtype)
        _, taps, skips = model.encode(batch, config, weights)
        teachers.append(Teacher(images=batch, taps=taps, skips=skips))
    return teachers


def _inv_energy(t):
    """1 / mean square of a teacher activation, for scale-free feature terms."""
    e = float(np.mean(np.square(t)))
    return 1.0 / max(e, 1e-30)


def inward_terms(level, teacher, config, weights, lam=1.0, img_scale=None):
    """Blockwise-inward objective for one block; returns (loss, LossTerms).

    The loss is a tape Var when `weights` holds tape leaves, else a plain
    scalar. Levels above 1 add the feature inversion term, decode on through
    the frozen shallower blocks for the image term, and re-encode the
    reconstruction for the perceptual term. Every optimized term is divided
    by its target's mean square, so each is a relative error and the three
    stay commensurate no matter how activation energy grows with depth; the
    reported image term stays the plain MSE. `img_scale` fixes the image
    term's divisor for a whole run (train() passes the corpus mean square;
    the per-batch value would wobble at small batch sizes).
    """
    y = model.decode_block(level, teacher.taps[level], teacher.skips, config, weights)
    if level > 1:
        inversion = ops.scale(ops.mean_sq(ops.sub(y, teacher.taps[level - 1])),
                              _inv_energy(teacher.taps[level - 1]))
        img = model.decode(y, teacher.skips, config, weights, start_level=level - 1)
        _, re_taps, _ = model.encode(img, config, weights, upto=level,
                                     capture_skips=False)
        perceptual = ops.scale(ops.mean_sq(ops.sub(re_taps[level], teacher.taps[level])),
                               _inv_energy(teacher.taps[level]))
    else:
        inversion = perceptual = None
        img = y
    image_term = ops.mean_sq(ops.sub(img, teacher.images))
    total = ops.scale(image_term,
                      img_scale if img_scale is not None else _inv_energy(teacher.images))
    if level > 1:
        total = ops.add(total, inversion)
        total = ops.add(total, perceptual if lam == 1.0 else ops.scale(perceptual, lam))
    terms = LossTerms(level=level,
                      inversion=_scalar(inversion) if level > 1 else 0.0,
                      image=_scalar(image_term),
                      perceptual=_scalar(perceptual) if level > 1 else 0.0,
                      lam=lam)
    return total, terms


def outward_terms(level, teacher, config, weights):
    """Blockwise-outward objective: partial decode from the bottleneck down
    through block `level`, matched to the next shallower target. Feature
    targets are scale-normalized like the inward terms."""
    out = model.decode(teacher.taps[config.depth], teacher.skips, config, weights,
                       start_level=config.depth, stop_level=level)
    target = teacher.taps[level - 1] if level > 1 else teacher.images
    total = ops.mean_sq(ops.sub(out, target))
    if level > 1:
        total = ops.scale(total, _inv_energy(target))
    value = _scalar(total)
    terms = LossTerms(level=level,
                      inversion=value if level > 1 else 0.0,
                      image=value if level == 1 else 0.0,
                      perceptual=0.0, lam=0.0)
    return total, terms


def end_to_end_terms(teacher, config, weights, lam=1.0, img_scale=None):
    total = None
    agg = LossTerms(level=0, inversion=0.0, image=0.0, perceptual=0.0, lam=lam)
    for level in range(1, config.depth + 1):
        t, terms = inward_terms(level, teacher, config, weights, lam, img_scale)
        total = t if total is None else ops.add(total, t)
        agg.inversion += terms.inversion
        agg.image += terms.image
        agg.perceptual += terms.perceptual
    return total, agg


def vanilla_terms(teacher, config, weights):
    img = model.decode(teacher.taps[config.depth], teacher.skips, config, weights)
    total = ops.mean_sq(ops.sub(img, teacher.images))
    terms = LossTerms(level=0, inversion=0.0, image=_scalar(total),
                      perceptual=0.0, lam=0.0)
    return total, terms


def loss_block_inward(level, images, config, weights, lam=1.0):
    """Evaluate the inward objective on plain weights (no training)."""
    teachers = make_teachers(np.asarray(images), config, weights, len(images))
    _, terms = inward_terms(level, teachers[0], config, weights, lam)
    return terms


def _run_stage(stage, level, names, loss_fn, teachers, weights, plan, history, log_fn):
    params = {n: weights[n] for n in names}
    if plan.lr_per_level is not None and level >= 1:
        idx = min(level, len(plan.lr_per_level)) - 1
        stage_lr = plan.lr_per_level[idx]
    else:
        stage_lr = plan.lr
    opt = adam_init(params, lr=stage_lr, beta1=plan.beta1, beta2=plan.beta2,
                    eps=plan.adam_eps)
    rng = np.random.default_rng(np.random.SeedSequence((plan.seed, level)))
    total_steps = plan.epochs * len(teachers)
    tail_from = int(np.ceil(total_steps * (1.0 - plan.tail_average)))
    avg = {n: np.zeros_like(weights[n]) for n in names} if tail_from < total_steps else None
    tail_count = 0
    for epoch in range(1, plan.epochs + 1):
        order = rng.permutation(len(teachers))
        sums = np.zeros(4)
        for bi in order:
            tape = Tape()
            wvars = dict(weights)
            leaves = {}
            for n in names:
                leaves[n] = tape.leaf(weights[n], trainable=True)
                wvars[n] = leaves[n]
            total, terms = loss_fn(teachers[bi], wvars)
            grads = backward(tape, total)
            adam_step(params, {n: grads[leaves[n].id] for n in names}, opt)
            if avg is not None and opt.step > tail_from:
                for n in names:
                    avg[n] += params[n]
                tail_count += 1
            sums += (terms.inversion, terms.image, terms.perceptual, terms.total)
        means = sums / len(teachers)
        record = {"stage": stage, "level": level, "epoch": epoch,
                  "inversion": means[0], "image": means[1],
                  "perceptual": means[2], "total": means[3]}
        history.append(record)
        if log_fn is not None:
            log_fn("%s epoch %02d  total %.6f  inversion %.6f  image %.6f  "
                   "perceptual %.6f" % (stage, epoch, means[3], means[0],
                                        means[1], means[2]))
    if avg is not None and tail_count > 0:
        # settle on the tail mean: constant-rate Adam orbits its optimum, and
        # the orbit's average is a materially better point than its endpoint
        for n in names:
            params[n][...] = avg[n] / tail_count


def train(dataset, config, plan, log_fn=None):
    """Train a decoder per plan.strategy; returns (weights, history).

    weights holds the full model (frozen encoder included); history is one
    dict per (stage, epoch) with the averaged loss terms.
    """
    dataset = np.asarray(dataset)
    if dataset.ndim != 4 or dataset.shape[1] != 3:
        raise ValueError("dataset must be (count, 3, h, w), got %s" % (dataset.shape,))
    weights = model.init_weights(config, seed=plan.seed)
    teachers = make_teachers(dataset, config, weights, plan.batch_size)
    history = []
    lam = plan.lambda_perceptual
    img_scale = 1.0 / max(float(np.mean(np.square(dataset))), 1e-30)
    if plan.strategy == "blockwise_inward":
        for level in range(1, config.depth + 1):
            names = model.decoder_param_names(config, level)
            _run_stage("inward block %d" % level, level, names,
                       lambda t, w, lv=level: inward_terms(lv, t, config, w, lam,
                                                           img_scale),
                       teachers, weights, plan, history, log_fn)
    elif plan.strategy == "blockwise_outward":
        for level in range(config.depth, 0, -1):
            names = model.decoder_param_names(config, level)
            _run_stage("outward block %d" % level, level, names,
                       lambda t, w, lv=level: outward_terms(lv, t, config, w),
                       teachers, weights, plan, history, log_fn)
    elif plan.strategy == "end_to_end":
        names = model.decoder_param_names(config)
        _run_stage("end_to_end", 0, names,
                   lambda t, w: end_to_end_terms(t, config, w, lam, img_scale),
                   teachers, weights, plan, history, log_fn)
    else:
        names = model.decoder_param_names(config)
        _run_stage("vanilla", 0, names,
                   lambda t, w: vanilla_terms(t, config, w),
                   teachers, weights, plan, history, log_fn)
    return weights, history
