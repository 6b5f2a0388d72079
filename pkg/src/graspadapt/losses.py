"""Loss functions for task training, domain-adversarial training and the
pixel-level adapter."""

from __future__ import annotations

import torch
import torch.nn.functional as F

PROB_EPS = 1e-7  # probabilities are clamped away from 0/1 before any log


def _clamped_bce(labels: torch.Tensor, probs: torch.Tensor) -> torch.Tensor:
    p = probs.clamp(PROB_EPS, 1.0 - PROB_EPS)
    return -(labels * torch.log(p) + (1.0 - labels) * torch.log(1.0 - p)).mean()


def task_loss(y: torch.Tensor, p: torch.Tensor) -> torch.Tensor:
    """Mean binomial cross-entropy of grasp success labels."""
    return _clamped_bce(y, p)


def dann_loss(d: torch.Tensor, d_hat: torch.Tensor) -> torch.Tensor:
    """Mean cross-entropy of the domain prediction task.

    The domain classifier minimizes this; the feature extractor receives the
    adversarial (negated) signal exclusively through the gradient reversal
    layer placed at the classifier's input.
    """
    return _clamped_bce(d, d_hat)


def lsgan_losses(scores_real: list[torch.Tensor],
                 scores_fake: list[torch.Tensor]) -> tuple[torch.Tensor, torch.Tensor]:
    """Least-squares adversarial losses over per-scale patch score maps.

    Per-scale means are averaged with equal weight; labels are 1 for real
    and 0 for fake, flipped for the generator term.
    """
    l_discr = sum(((r - 1.0) ** 2).mean() + (f ** 2).mean()
                  for r, f in zip(scores_real, scores_fake)) / len(scores_real)
    l_gen = sum(((f - 1.0) ** 2).mean() for f in scores_fake) / len(scores_fake)
    return l_discr, l_gen


def pmse_loss(x_f: torch.Tensor, x_s: torch.Tensor) -> torch.Tensor:
    """Pairwise MSE: per-sample MSE minus the squared mean difference.

    Invariant to constant intensity shifts between the two images.
    """
    d = (x_f - x_s).flatten(1)
    k = d.shape[1]
    return ((d ** 2).sum(dim=1) / k - (d.sum(dim=1) / k) ** 2).mean()


def mask_loss(m_logits: torch.Tensor, m_true: torch.Tensor) -> torch.Tensor:
    """MSE between the softmaxed mask head and the one-hot true mask."""
    probs = F.softmax(m_logits, dim=1)
    one_hot = F.one_hot(m_true.long(), num_classes=m_logits.shape[1])
    one_hot = one_hot.permute(0, 3, 1, 2).to(probs.dtype)
    return F.mse_loss(probs, one_hot)


def feature_anchor_loss(feat_f: torch.Tensor, feat_s: torch.Tensor) -> torch.Tensor:
    """Mean squared difference of task-trunk activations, anchored on the
    simulated-image branch (no gradient flows into it)."""
    if feat_f.shape != feat_s.shape:
        raise ValueError(f"feature shapes differ: {tuple(feat_f.shape)} vs "
                         f"{tuple(feat_s.shape)}")
    return F.mse_loss(feat_f, feat_s.detach())


def content_loss(x_f, x_s, m_logits, m_true, feat_f, feat_s,
                 w_pmse: float, w_mask: float, w_feat: float) -> torch.Tensor:
    """Weighted sum of the semantic-anchoring terms."""
    total = x_f.new_zeros(())
    if w_pmse:
        total = total + w_pmse * pmse_loss(x_f, x_s)
    if w_mask:
        total = total + w_mask * mask_loss(m_logits, m_true)
    if w_feat:
        total = total + w_feat * feature_anchor_loss(feat_f, feat_s)
    return total
