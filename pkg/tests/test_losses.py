import math

import numpy as np
import pytest
import torch

from graspadapt import losses
from graspadapt.losses import (
    PROB_EPS, content_loss, dann_loss, feature_anchor_loss, lsgan_losses,
    mask_loss, pmse_loss, task_loss,
)
from graspadapt.rng import make_rng


def t(*vals):
    return torch.tensor(vals, dtype=torch.float64)


def fd_check(fn, *tensors, rel=1e-6, h=1e-6):
    """Central finite differences against autograd, double precision."""
    args = [x.clone().double().requires_grad_(x.is_floating_point())
            for x in tensors]
    out = fn(*args)
    out.backward()
    for x in args:
        if x.grad is None:
            continue
        flat = x.detach().flatten()
        gflat = x.grad.flatten()
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + h
            hi = fn(*[a.detach() for a in args]).item()
            flat[i] = orig - h
            lo = fn(*[a.detach() for a in args]).item()
            flat[i] = orig
            num = (hi - lo) / (2 * h)
            got = gflat[i].item()
            assert got == pytest.approx(num, rel=rel, abs=1e-8)


# ------------------------------------------------------------ point examples

def test_task_loss_example():
    # y=0, p=0.9 -> -ln(0.1)
    assert task_loss(t(0.0), t(0.9)).item() == pytest.approx(-math.log(0.1))


def test_task_loss_clamps_probabilities():
    val = task_loss(t(1.0), t(0.0)).item()
    assert val == pytest.approx(-math.log(PROB_EPS), rel=1e-6)
    assert math.isfinite(val)


def test_dann_loss_example():
    # d=1, d_hat=0.5 -> ln 2
    assert dann_loss(t(1.0), t(0.5)).item() == pytest.approx(math.log(2.0))


def test_lsgan_half_scores_example():
    real = [torch.full((2, 3, 3), 0.5, dtype=torch.float64)]
    fake = [torch.full((2, 3, 3), 0.5, dtype=torch.float64)]
    d, g = lsgan_losses(real, fake)
    assert d.item() == pytest.approx(0.5)
    assert g.item() == pytest.approx(0.25)


def test_lsgan_optima_are_exactly_zero():
    ones = [torch.ones(4, 2, 2), torch.ones(4, 1, 1)]
    zeros = [torch.zeros(4, 2, 2), torch.zeros(4, 1, 1)]
    d, g = lsgan_losses(ones, zeros)
    assert d.item() == 0.0
    _, g_opt = lsgan_losses(ones, ones)
    assert g_opt.item() == 0.0


def test_mask_loss_uniform_vs_onehot_example():
    logits = torch.zeros(1, 4, 5, 5)  # softmax -> uniform 0.25
    target = torch.randint(0, 4, (1, 5, 5))
    assert mask_loss(logits, target).item() == pytest.approx(0.1875)


def test_mask_loss_perfect_prediction_is_zero():
    target = torch.randint(0, 4, (2, 6, 6))
    logits = F_one_hot_logits(target)
    assert mask_loss(logits, target).item() < 1e-8


def F_one_hot_logits(target, scale=50.0):
    oh = torch.nn.functional.one_hot(target, 4).permute(0, 3, 1, 2).float()
    return oh * scale


def test_pmse_shift_invariance():
    rng = make_rng(50)
    x_s = torch.tensor(rng.uniform(size=(3, 3, 8, 8)))
    x_f = torch.tensor(rng.uniform(size=(3, 3, 8, 8)))
    base = pmse_loss(x_f, x_s).item()
    shifted = pmse_loss(x_f + 0.37, x_s).item()
    assert abs(base - shifted) <= 1e-12
    assert pmse_loss(x_s + 1.23, x_s).item() <= 1e-12


def test_feature_anchor_blocks_gradient_to_anchor():
    a = torch.randn(2, 4, 3, 3, requires_grad=True)
    b = torch.randn(2, 4, 3, 3, requires_grad=True)
    feature_anchor_loss(a, b).backward()
    assert a.grad is not None and b.grad is None
    with pytest.raises(ValueError):
        feature_anchor_loss(torch.zeros(1, 2, 3, 3), torch.zeros(1, 2, 3, 4))


def test_content_loss_composition():
    rng = make_rng(51)
    x_f = torch.tensor(rng.uniform(size=(2, 3, 8, 8)))
    x_s = torch.tensor(rng.uniform(size=(2, 3, 8, 8)))
    logits = torch.tensor(rng.normal(size=(2, 4, 8, 8)))
    target = torch.randint(0, 4, (2, 8, 8))
    feat_f = torch.tensor(rng.normal(size=(2, 4, 2, 2)))
    feat_s = torch.tensor(rng.normal(size=(2, 4, 2, 2)))
    total = content_loss(x_f, x_s, logits, target, feat_f, feat_s,
                         w_pmse=1.0, w_mask=1.0, w_feat=0.01).item()
    want = (pmse_loss(x_f, x_s) + mask_loss(logits, target)
            + 0.01 * feature_anchor_loss(feat_f, feat_s)).item()
    assert total == pytest.approx(want, rel=1e-12)
    assert content_loss(x_f, x_s, logits, target, feat_f, feat_s,
                        0.0, 0.0, 0.0).item() == 0.0


# ------------------------------------------------------------- loop oracles

def test_task_loss_against_loop_oracle():
    rng = make_rng(52)
    y = torch.tensor((rng.uniform(size=12) > 0.5).astype(np.float64))
    p = torch.tensor(rng.uniform(0.01, 0.99, size=12))
    acc = 0.0
    for yi, pi in zip(y.tolist(), p.tolist()):
        acc += -(yi * math.log(pi) + (1 - yi) * math.log(1 - pi))
    assert task_loss(y, p).item() == pytest.approx(acc / 12, abs=1e-10)


def test_pmse_against_loop_oracle():
    rng = make_rng(53)
    x_f = torch.tensor(rng.uniform(size=(2, 3, 4, 4)))
    x_s = torch.tensor(rng.uniform(size=(2, 3, 4, 4)))
    total = 0.0
    for b in range(2):
        diffs = (x_f[b] - x_s[b]).flatten().tolist()
        k = len(diffs)
        mean = sum(diffs) / k
        total += sum(d * d for d in diffs) / k - mean * mean
    assert pmse_loss(x_f, x_s).item() == pytest.approx(total / 2, abs=1e-10)


def test_lsgan_against_loop_oracle():
    rng = make_rng(54)
    real = [torch.tensor(rng.normal(size=(2, 3, 3))),
            torch.tensor(rng.normal(size=(2, 2, 2)))]
    fake = [torch.tensor(rng.normal(size=(2, 3, 3))),
            torch.tensor(rng.normal(size=(2, 2, 2)))]
    d_ref, g_ref = 0.0, 0.0
    for r, f in zip(real, fake):
        d_ref += (np.mean((r.numpy() - 1) ** 2) + np.mean(f.numpy() ** 2))
        g_ref += np.mean((f.numpy() - 1) ** 2)
    d, g = lsgan_losses(real, fake)
    assert d.item() == pytest.approx(d_ref / 2, abs=1e-10)
    assert g.item() == pytest.approx(g_ref / 2, abs=1e-10)


def test_mask_loss_against_loop_oracle():
    rng = make_rng(55)
    logits = torch.tensor(rng.normal(size=(1, 4, 3, 3)))
    target = torch.randint(0, 4, (1, 3, 3))
    probs = torch.softmax(logits, dim=1).numpy()[0]
    acc, n = 0.0, 0
    for c in range(4):
        for i in range(3):
            for j in range(3):
                want = 1.0 if target[0, i, j].item() == c else 0.0
                acc += (probs[c, i, j] - want) ** 2
                n += 1
    assert mask_loss(logits, target).item() == pytest.approx(acc / n, abs=1e-10)


# ----------------------------------------------------- gradient correctness

def test_task_loss_gradient_fd():
    rng = make_rng(56)
    y = torch.tensor((rng.uniform(size=6) > 0.5).astype(np.float64))
    p = torch.tensor(rng.uniform(0.05, 0.95, size=6))
    fd_check(lambda yy, pp: task_loss(yy.detach(), pp), y, p)


def test_pmse_gradient_fd():
    rng = make_rng(57)
    x_f = torch.tensor(rng.uniform(size=(2, 3, 4, 4)))
    x_s = torch.tensor(rng.uniform(size=(2, 3, 4, 4)))
    fd_check(lambda a, b: pmse_loss(a, b.detach()), x_f, x_s)


def test_lsgan_gen_gradient_fd():
    rng = make_rng(58)
    f = torch.tensor(rng.normal(size=(2, 3, 3)))
    fd_check(lambda ff: lsgan_losses([torch.ones(2, 3, 3).double()], [ff])[1], f)


def test_mask_loss_gradient_fd():
    rng = make_rng(59)
    logits = torch.tensor(rng.normal(size=(1, 4, 3, 3)))
    target = torch.randint(0, 4, (1, 3, 3))
    fd_check(lambda lg: mask_loss(lg, target), logits)
