"""Joint objective, optimisation loop and evaluation."""

from __future__ import annotations

import logging
import math
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence

import numpy as np
import torch

from .config import TrainConfig
from .encoding import Interaction, SequenceFeatures, featurize_sequence
from .generation import GeneratedOutput, reconstruction_error
from .model import CandidateItem, Examples, HeadOutput, TIMGen, build_examples
from .numerics import DTYPE, NumericalError, Rng, derive_seed, kl_diag_gaussian
from .providers import MODALITIES
from .synthetic import drift_recovery_score

logger = logging.getLogger(__name__)

LOG_CLAMP = 1e-12


class NonFiniteLossError(NumericalError):
    def __init__(self, user_id: str, message: str = ""):
        super().__init__(message or f"non-finite loss on sequence of user {user_id}")
        self.user_id = user_id


def _targets(target):
    if isinstance(target, CandidateItem):
        return (torch.as_tensor(np.asarray(target.features, dtype=np.float64)),
                torch.tensor(float(target.score_label), dtype=DTYPE),
                torch.tensor(int(target.class_label)))
    return target.candidate, target.score, target.label


def joint_loss(output: GeneratedOutput, target, mu: torch.Tensor, sigma: torch.Tensor,
               cfg: TrainConfig) -> tuple[torch.Tensor, dict[str, torch.Tensor]]:
    """L_VAE + lambda_score * L_score + lambda_class * L_class, per example.

    ``target`` is a :class:`CandidateItem` or anything with ``candidate``,
    ``score`` and ``label`` tensors (e.g. :class:`Examples`).
    """
    content, score, label = _targets(target)
    recon = reconstruction_error(output.content, content)
    kl = kl_diag_gaussian(mu, sigma)
    vae = recon + kl
    l_score = (output.score - score) ** 2
    k = output.class_probs.shape[-1]
    one_hot = torch.nn.functional.one_hot(label, k).to(DTYPE)
    l_class = -(one_hot * torch.log(torch.clamp(output.class_probs, min=LOG_CLAMP))).sum(dim=-1)
    total = vae + cfg.lambda_score * l_score + cfg.lambda_class * l_class
    return total, {"vae": vae, "reconstruction": recon, "kl": kl, "score": l_score, "class": l_class}


def make_optimizer(model: TIMGen, cfg: TrainConfig) -> torch.optim.Optimizer:
    if cfg.optimizer == "adam" and cfg.weight_decay > 0:
        return torch.optim.AdamW(model.parameters(), lr=cfg.learning_rate, betas=(cfg.adam_beta1, cfg.adam_beta2),
                                 eps=cfg.adam_eps, weight_decay=cfg.weight_decay)
    if cfg.optimizer == "adam":
        return torch.optim.Adam(model.parameters(), lr=cfg.learning_rate,
                                betas=(cfg.adam_beta1, cfg.adam_beta2), eps=cfg.adam_eps)
    return torch.optim.SGD(model.parameters(), lr=cfg.learning_rate, weight_decay=cfg.weight_decay)


def sample_eps(rng: Rng, n: int, d: int) -> torch.Tensor:
    return torch.from_numpy(rng.normal(n * d)).view(n, d)


def batch_loss(model: TIMGen, features: Sequence[SequenceFeatures], rng: Optional[Rng],
               examples: Optional[Examples] = None):
    """Mean joint loss over every example of a batch, plus per-component means.

    ``rng=None`` uses eps = 0. With ``latent_samples > 1`` the loss is the
    average over independent reparameterised draws.
    """
    cfg = model.cfg
    ex = examples if examples is not None else build_examples(features)
    pipe = model.pipeline(model.collate(features))
    totals, comps = [], []
    samples = cfg.latent_samples if rng is not None else 1
    for _ in range(samples):
        eps = sample_eps(rng, len(ex), cfg.d_latent) if rng is not None else None
        head = model.generate(pipe, ex, eps)
        total, comp = joint_loss(head.output, ex, head.mu, head.sigma, cfg)
        totals.append(total)
        comps.append(comp)
    per_example = torch.stack(totals).mean(dim=0)
    finite = torch.isfinite(per_example)
    if not bool(finite.all()):
        bad = int(torch.nonzero(~finite)[0, 0])
        raise NonFiniteLossError(ex.user_ids[bad])
    components = {k: float(torch.stack([c[k].detach() for c in comps]).mean()) for k in comps[0]}
    return per_example.mean(), components, len(ex)


def train_step(model: TIMGen, optimizer: torch.optim.Optimizer, features: Sequence[SequenceFeatures],
               rng: Rng) -> tuple[float, dict[str, float]]:
    """One forward/backward/update on a batch of user sequences."""
    loss, components, _ = batch_loss(model, features, rng)
    optimizer.zero_grad(set_to_none=False)
    loss.backward()
    if model.cfg.grad_clip > 0:
        torch.nn.utils.clip_grad_norm_(model.parameters(), model.cfg.grad_clip)
    optimizer.step()
    return float(loss.detach()), components


@dataclass
class EpochLog:
    epoch: int
    total: float
    vae: float
    score: float
    cls: float

    def line(self) -> str:
        return f"epoch\t{self.epoch}\ttotal\t{self.total!r}\tvae\t{self.vae!r}\tscore\t{self.score!r}\tclass\t{self.cls!r}"


def fit(model: TIMGen, train: Sequence[SequenceFeatures], on_epoch: Optional[Callable[[EpochLog], None]] = None,
        optimizer: Optional[torch.optim.Optimizer] = None) -> list[EpochLog]:
    cfg = model.cfg
    optimizer = optimizer or make_optimizer(model, cfg)
    shuffle_rng = Rng(derive_seed(cfg.seed, "shuffle"))
    eps_rng = Rng(derive_seed(cfg.seed, "eps"))
    history = []
    model.train()
    for epoch in range(1, cfg.epochs + 1):
        order = shuffle_rng.permutation(len(train))
        sums = {"total": 0.0, "vae": 0.0, "score": 0.0, "class": 0.0}
        n_seen = 0
        for start in range(0, len(train), cfg.batch_size):
            chunk = [train[i] for i in order[start:start + cfg.batch_size]]
            n = sum(max(1, len(f) - 1) for f in chunk)
            total, comp = train_step(model, optimizer, chunk, eps_rng)
            sums["total"] += total * n
            for k in ("vae", "score", "class"):
                sums[k] += comp[k] * n
            n_seen += n
        log = EpochLog(epoch, sums["total"] / n_seen, sums["vae"] / n_seen, sums["score"] / n_seen,
                       sums["class"] / n_seen)
        history.append(log)
        if on_epoch is not None:
            on_epoch(log)
    return history


def split_users(user_ids: Sequence[str], cfg: TrainConfig) -> tuple[list[str], list[str], list[str]]:
    """Seeded train/validation/test partition by user."""
    ids = sorted(user_ids)
    perm = Rng(derive_seed(cfg.seed, "split")).permutation(len(ids))
    n_train = max(1, int(round(cfg.train_frac * len(ids))))
    n_val = int(round(cfg.val_frac * len(ids)))
    shuffled = [ids[i] for i in perm]
    return shuffled[:n_train], shuffled[n_train:n_train + n_val], shuffled[n_train + n_val:]


def featurize_users(users: Mapping[str, Sequence[Interaction]], cfg: TrainConfig,
                    ids: Optional[Sequence[str]] = None) -> list[SequenceFeatures]:
    enc = cfg.encoder_config()
    ids = list(users) if ids is None else ids
    return [featurize_sequence(users[u], enc) for u in ids]


@dataclass
class StepRecord:
    user_id: str
    cutoff: int
    target: int
    predicted_class: int
    label: int
    predicted_score: float
    score: float
    alpha: tuple[float, ...]


@dataclass
class EvalReport:
    metrics: "OrderedDict[str, float]"
    records: list[StepRecord] = field(default_factory=list)
    alpha_by_cutoff: list[tuple[str, int, tuple[float, ...]]] = field(default_factory=list)

    def format(self) -> str:
        return format_metrics(self.metrics)


def format_metrics(metrics: Mapping[str, float]) -> str:
    lines = []
    for name, value in metrics.items():
        lines.append(f"{name}\t{value if isinstance(value, int) else repr(float(value))}")
    return "\n".join(lines) + "\n"


@torch.no_grad()
def evaluate(model: TIMGen, features: Sequence[SequenceFeatures],
             truth: Optional[Mapping[tuple[str, int], tuple[int, float]]] = None,
             chunk: int = 64) -> EvalReport:
    """eps = 0 inference over every (cutoff, target) pair of ``features``."""
    if not features:
        raise ValueError("empty evaluation set")
    model.eval()
    cfg = model.cfg
    sq_err, correct, ce, kl, recon, total = [], [], [], [], [], []
    alphas, records, per_cutoff = [], [], []
    for start in range(0, len(features), chunk):
        part = list(features[start:start + chunk])
        ex = build_examples(part)
        pipe = model.pipeline(model.collate(part))
        head: HeadOutput = model.generate(pipe, ex, None)
        loss, comp = joint_loss(head.output, ex, head.mu, head.sigma, cfg)
        pred = head.output.class_probs.argmax(dim=-1)
        sq_err.append(comp["score"])
        correct.append((pred == ex.label).to(DTYPE))
        ce.append(comp["class"])
        kl.append(comp["kl"])
        recon.append(comp["reconstruction"])
        total.append(loss)
        alphas.append(head.alpha)
        for i in range(len(ex)):
            records.append(StepRecord(
                ex.user_ids[i], int(ex.cutoff[i]), int(ex.target[i]), int(pred[i]), int(ex.label[i]),
                float(head.output.score[i]), float(ex.score[i]), tuple(float(a) for a in head.alpha[i]),
            ))
        for b, f in enumerate(part):
            for t in range(len(f)):
                per_cutoff.append((f.user_id, t, tuple(float(a) for a in pipe.alpha[b, t])))
    alpha = torch.cat(alphas)
    metrics: OrderedDict[str, float] = OrderedDict()
    metrics["n_examples"] = int(alpha.shape[0])
    metrics["score_mse"] = float(torch.cat(sq_err).mean())
    metrics["class_accuracy"] = float(torch.cat(correct).mean())
    metrics["class_cross_entropy"] = float(torch.cat(ce).mean())
    metrics["mean_kl"] = float(torch.cat(kl).mean())
    metrics["mean_reconstruction"] = float(torch.cat(recon).mean())
    metrics["mean_total_loss"] = float(torch.cat(total).mean())
    for j, m in enumerate(MODALITIES):
        metrics[f"alpha_{m}"] = float(alpha[:, j].mean())
    if truth is not None:
        preds, trues = [], []
        for r in records:
            key = (r.user_id, r.target)
            if key not in truth:
                raise ValueError(f"ground truth has no entry for user {r.user_id} step {r.target}")
            preds.append(r.predicted_class)
            trues.append(truth[key][0])
        metrics["drift_recovery"] = drift_recovery_score(preds, trues)
        by_class = alpha_by_true_class(records, truth)
        for c in sorted(by_class):
            for j, m in enumerate(MODALITIES):
                metrics[f"alpha_class{c}_{m}"] = by_class[c][j]
    return EvalReport(metrics, records, per_cutoff)


def alpha_by_true_class(records: Sequence[StepRecord], truth) -> dict[int, tuple[float, ...]]:
    groups: dict[int, list[tuple[float, ...]]] = {}
    for r in records:
        groups.setdefault(truth[(r.user_id, r.target)][0], []).append(r.alpha)
    return {c: tuple(float(x) for x in np.mean(np.array(v), axis=0)) for c, v in groups.items()}


@torch.no_grad()
def generate_for_history(model: TIMGen, history: Sequence[Interaction], candidate: CandidateItem,
                         rng: Optional[Rng] = None) -> tuple[GeneratedOutput, torch.Tensor, torch.Tensor]:
    """Decode for the latest cutoff of ``history`` against ``candidate``.

    Returns the output, the modality weights used and the interest vector z.
    """
    model.eval()
    feats = featurize_sequence(history, model.cfg.encoder_config())
    pipe = model.pipeline(model.collate([feats]))
    T = len(feats)
    ex = Examples(
        batch_index=torch.tensor([0]), cutoff=torch.tensor([T - 1]), target=torch.tensor([T - 1]),
        candidate=torch.as_tensor(np.asarray(candidate.features, dtype=np.float64)).view(1, -1),
        score=torch.tensor([float(candidate.score_label)]), label=torch.tensor([int(candidate.class_label)]),
        user_ids=[feats.user_id],
    )
    eps = sample_eps(rng, 1, model.cfg.d_latent) if rng is not None else None
    head = model.generate(pipe, ex, eps)
    out = GeneratedOutput(head.output.content[0], head.output.score[0], head.output.class_logits[0],
                          head.output.class_probs[0])
    return out, head.alpha[0], pipe.z[0, T - 1]


def static_baseline(history: Sequence[Interaction], candidate: CandidateItem, model: TIMGen) -> GeneratedOutput:
    """Ablation contrast: same fusion and head, mean-pooled interest instead of the Transformer."""
    if model.cfg.variant != "static":
        raise ValueError("static_baseline needs a model built with variant = static")
    return generate_for_history(model, history, candidate)[0]


def epoch_loss_ratio(history: Sequence[EpochLog]) -> float:
    return history[-1].total / history[0].total if history and history[0].total else math.nan
