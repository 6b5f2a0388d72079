"""Training regimes: real-only, sim-only, mixing baselines, DANN variants and
the staged pixel-adaptation pipeline (train adapter -> refine dataset ->
train a DANN on the refined data)."""

from __future__ import annotations

import copy
import csv
import hashlib
import json
import math
from dataclasses import dataclass, field, asdict
from enum import Enum
from pathlib import Path

import numpy as np
import torch

from . import datastore, losses
from .datastore import Batch, Dataset, MixStrategy, make_batches
from .nets import DomainClassifier, Generator, GraspNet, PatchDiscriminator
from .rng import make_rng
from .simworld import Episode, EpisodeStep, RandomizationRegime


class Regime(Enum):
    REAL_ONLY = "real_only"
    SIM_ONLY = "sim_only"
    NAIVE_MIX = "naive_mix"
    RAND = "rand"
    DANN = "dann"
    DANN_R = "dann_r"
    GRASPGAN = "graspgan"


# Regimes that keep per-domain normalization statistics.
_DBN_REGIMES = {Regime.RAND, Regime.DANN, Regime.DANN_R, Regime.GRASPGAN}
# Regimes that add the adversarial domain loss.
_DANN_REGIMES = {Regime.DANN, Regime.DANN_R, Regime.GRASPGAN}


class TrainingDiverged(RuntimeError):
    def __init__(self, msg: str, checkpoint: "Checkpoint | None" = None):
        super().__init__(msg)
        self.checkpoint = checkpoint


@dataclass(frozen=True)
class LossWeights:
    lam_g: float = 1.0
    lam_d: float = 1.0
    lam_tg: float = 1.0
    lam_td: float = 1.0
    lam_c: float = 1.0
    w_pmse: float = 1.0
    w_mask: float = 1.0
    w_feat: float = 0.01


@dataclass(frozen=True)
class TrainConfig:
    regime: Regime = Regime.SIM_ONLY
    real_fraction: float = 1.0
    sim_regime: RandomizationRegime = RandomizationRegime.NONE
    real_labels: bool = True
    batch_size: int = 16
    steps: int = 3000
    gan_steps: int = 2000
    lr_c: float = 3e-4
    lr_g: float = 1e-4
    lr_d: float = 1e-4
    adam_betas: tuple[float, float] = (0.9, 0.999)
    weights: LossWeights = LossWeights()
    dann_weight: float = 1.0
    dann_ramp: bool = True
    dann_ramp_frac: float = 0.1  # linear 0 -> 1 over this share of steps
    crop: int = 64
    max_step: float = 120.0
    seed: int = 0
    val_every: int = 500
    torch_threads: int = 1

    def config_hash(self) -> str:
        doc = asdict(self)
        doc["regime"] = self.regime.value
        doc["sim_regime"] = self.sim_regime.value
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class Checkpoint:
    model_state: dict
    classifier_state: dict | None
    step: int
    regime: str
    bank_mode: str  # "shared" | "dbn"
    config_hash: str
    max_step: float
    val_history: list = field(default_factory=list)  # (step, accuracy)
    extra: dict = field(default_factory=dict)  # loss weights, seeds, ...

    def build_net(self) -> GraspNet:
        net = GraspNet(max_step=self.max_step)
        net.load_state_dict(self.model_state)
        net.eval()
        return net

    def eval_bank(self, domain: str) -> str:
        if self.bank_mode == "shared":
            return "shared"
        return "sim" if domain == "sim" else "pseudoreal"

    def save(self, path: str | Path) -> None:
        path = Path(path)
        torch.save({"model": self.model_state, "classifier": self.classifier_state},
                   path)
        sidecar = {"step": self.step, "regime": self.regime,
                   "bank_mode": self.bank_mode, "config_hash": self.config_hash,
                   "max_step": self.max_step, "val_history": self.val_history,
                   "extra": self.extra}
        path.with_suffix(".json").write_text(json.dumps(sidecar))

    @classmethod
    def load(cls, path: str | Path) -> "Checkpoint":
        path = Path(path)
        blob = torch.load(path, weights_only=True)
        meta = json.loads(path.with_suffix(".json").read_text())
        return cls(model_state=blob["model"], classifier_state=blob["classifier"],
                   step=meta["step"], regime=meta["regime"],
                   bank_mode=meta["bank_mode"], config_hash=meta["config_hash"],
                   max_step=meta["max_step"],
                   val_history=[tuple(v) for v in meta["val_history"]],
                   extra=meta.get("extra", {}))


@dataclass
class GeneratorCheckpoint:
    state: dict
    step: int
    config_hash: str
    collapse_warning: bool = False

    def build(self) -> Generator:
        g = Generator()
        g.load_state_dict(self.state)
        g.eval()
        return g

    def save(self, path: str | Path) -> None:
        path = Path(path)
        torch.save(self.state, path)
        path.with_suffix(".json").write_text(json.dumps(
            {"step": self.step, "config_hash": self.config_hash,
             "collapse_warning": self.collapse_warning}))

    @classmethod
    def load(cls, path: str | Path) -> "GeneratorCheckpoint":
        path = Path(path)
        meta = json.loads(path.with_suffix(".json").read_text())
        return cls(state=torch.load(path, weights_only=True), step=meta["step"],
                   config_hash=meta["config_hash"],
                   collapse_warning=meta["collapse_warning"])


def _crop_batch(batch: Batch, crop: int, rng: np.random.Generator,
                need_masks: bool = False):
    """Pair-consistent random crop, one offset per sample, tensors out."""
    b, h, w = batch.x0.shape[:3]
    di = rng.integers(h - crop + 1, size=b)
    dj = rng.integers(w - crop + 1, size=b)
    x0 = np.empty((b, crop, crop, 3), dtype=np.uint8)
    xc = np.empty_like(x0)
    m0 = mc = None
    if need_masks and batch.mask0 is not None:
        m0 = np.empty((b, crop, crop), dtype=np.uint8)
        mc = np.empty_like(m0)
    for i in range(b):
        sl = (slice(di[i], di[i] + crop), slice(dj[i], dj[i] + crop))
        x0[i] = batch.x0[i][sl]
        xc[i] = batch.xc[i][sl]
        if m0 is not None:
            m0[i] = batch.mask0[i][sl]
            mc[i] = batch.maskc[i][sl]
    out = [_img_t(x0), _img_t(xc), torch.from_numpy(batch.v)]
    out.append(torch.from_numpy(batch.y) if batch.y is not None else None)
    out.append(torch.from_numpy(batch.d.astype(np.float32)))
    out.append(torch.from_numpy(m0) if m0 is not None else None)
    out.append(torch.from_numpy(mc) if mc is not None else None)
    return out


def _img_t(arr: np.ndarray) -> torch.Tensor:
    """uint8 HWC -> float CHW in [0,1]."""
    return torch.from_numpy(arr).permute(0, 3, 1, 2).float() / 255.0


def _center_crop_t(arr: np.ndarray, crop: int) -> torch.Tensor:
    h, w = arr.shape[1:3]
    i, j = (h - crop) // 2, (w - crop) // 2
    return _img_t(arr[:, i:i + crop, j:j + crop])


def validation_accuracy(ckpt_or_net, val_ds: Dataset, crop: int = 64,
                        domain: str = "pseudoreal", batch: int = 64,
                        bank: str | None = None) -> float:
    """Classification accuracy of grasp-success prediction at threshold 0.5."""
    if isinstance(ckpt_or_net, Checkpoint):
        net = ckpt_or_net.build_net()
        bank = bank or ckpt_or_net.eval_bank(domain)
    else:
        net = ckpt_or_net
        bank = bank or "shared"
    samples = val_ds.samples()
    if not samples:
        raise ValueError("empty validation set")
    y = val_ds.labels()
    correct = 0
    net.eval()
    with torch.no_grad():
        for i in range(0, len(samples), batch):
            chunk = samples[i:i + batch]
            x0 = _center_crop_t(np.stack([s.x0 for s in chunk]), crop)
            xc = _center_crop_t(np.stack([s.xc for s in chunk]), crop)
            v = torch.from_numpy(
                np.stack([s.v.as_array() for s in chunk]).astype(np.float32))
            p, _ = net(x0, xc, v, bank)
            correct += int(((p > 0.5).numpy() == y[i:i + batch].astype(bool)).sum())
    return correct / len(samples)


def _dann_lambda(cfg: TrainConfig, step: int) -> float:
    if not cfg.dann_ramp:
        return cfg.dann_weight
    ramp_steps = max(1, int(cfg.dann_ramp_frac * cfg.steps))
    return cfg.dann_weight * min(1.0, step / ramp_steps)


def train_grasp(cfg: TrainConfig, sim_ds: Dataset | None, real_ds: Dataset | None,
                val_ds: Dataset | None = None, log_path: str | Path | None = None,
                ) -> Checkpoint:
    """Train the grasp predictor under the configured regime.

    Returns the final checkpoint; intermediate validation snapshots are
    attached as `.snapshots` for model selection.
    """
    torch.set_num_threads(cfg.torch_threads)
    torch.manual_seed(cfg.seed)
    net = GraspNet(max_step=cfg.max_step)
    dbn = cfg.regime in _DBN_REGIMES
    use_dann = cfg.regime in _DANN_REGIMES
    classifier = DomainClassifier(net.feat_channels) if use_dann else None
    params = list(net.parameters())
    if classifier is not None:
        params += list(classifier.parameters())
    opt = torch.optim.Adam(params, lr=cfg.lr_c, betas=cfg.adam_betas)

    if cfg.regime is Regime.REAL_ONLY:
        if real_ds is None:
            raise ValueError("real_only regime needs a real dataset")
        strategy, single = MixStrategy.SINGLE_DOMAIN, real_ds
    elif cfg.regime is Regime.SIM_ONLY:
        if sim_ds is None:
            raise ValueError("sim_only regime needs a sim dataset")
        strategy, single = MixStrategy.SINGLE_DOMAIN, sim_ds
    else:
        if sim_ds is None or real_ds is None:
            raise ValueError(f"{cfg.regime.value} needs both datasets")
        strategy = MixStrategy.NAIVE_MIX if cfg.regime is Regime.NAIVE_MIX \
            else MixStrategy.DBN_MIX
        single = None

    log_rows = []
    snapshots: list[Checkpoint] = []
    chash = cfg.config_hash()

    def snapshot(step: int) -> Checkpoint:
        ck = Checkpoint(
            model_state=copy.deepcopy(net.state_dict()),
            classifier_state=(copy.deepcopy(classifier.state_dict())
                              if classifier is not None else None),
            step=step, regime=cfg.regime.value,
            bank_mode="dbn" if dbn else "shared",
            config_hash=chash, max_step=cfg.max_step,
            val_history=list(history),
            extra={"seed": cfg.seed, "weights": asdict(cfg.weights)})
        return ck

    history: list[tuple[int, float]] = []
    step = 0
    epoch = 0
    last_good = None
    while step < cfg.steps:
        rng = make_rng(cfg.seed, 0x7121, epoch)
        if single is not None:
            sim_arg = single if single is not real_ds else None
            real_arg = single if single is real_ds else None
            batches = make_batches(sim_arg, real_arg, strategy, cfg.batch_size, rng,
                                   real_labels=cfg.real_labels)
        else:
            batches = make_batches(sim_ds, real_ds, strategy, cfg.batch_size, rng,
                                   real_labels=cfg.real_labels)
        if not batches:
            raise ValueError(
                f"dataset too small for batch size {cfg.batch_size} "
                f"under {cfg.regime.value}")
        epoch += 1
        for batch in batches:
            if step >= cfg.steps:
                break
            x0, xc, v, y, d, _, _ = _crop_batch(batch, cfg.crop, rng)
            net.train()
            if dbn:
                ns = batch.sim_count
                p_s, feat_s = net(x0[:ns], xc[:ns], v[:ns], "sim")
                p_r, feat_r = net(x0[ns:], xc[ns:], v[ns:], "pseudoreal")
                l_task = losses.task_loss(y[:ns], p_s)
                if cfg.real_labels and ns < len(x0):
                    l_task = (l_task + losses.task_loss(y[ns:], p_r)) / 2
                feat = torch.cat([feat_s, feat_r])
            else:
                p, feat = net(x0, xc, v, "shared")
                if cfg.real_labels or strategy is MixStrategy.SINGLE_DOMAIN:
                    l_task = losses.task_loss(y, p)
                else:
                    ns = batch.sim_count
                    l_task = losses.task_loss(y[:ns], p[:ns])
            loss = l_task
            l_dann_val = 0.0
            lam = 0.0
            if use_dann:
                lam = _dann_lambda(cfg, step)
                d_hat = classifier(feat, lam=lam)
                l_dann = losses.dann_loss(d, d_hat)
                loss = loss + l_dann
                l_dann_val = float(l_dann.detach())
            if not math.isfinite(float(loss.detach())):
                raise TrainingDiverged(
                    f"non-finite loss at step {step}", checkpoint=last_good)
            opt.zero_grad()
            loss.backward()
            opt.step()
            row = {"step": step, "task_loss": float(l_task.detach()),
                   "dann_loss": l_dann_val, "dann_lambda": lam, "val_acc": ""}
            step += 1
            if val_ds is not None and (step % cfg.val_every == 0 or step == cfg.steps):
                ck = snapshot(step)
                acc = validation_accuracy(ck, val_ds, crop=cfg.crop)
                history.append((step, acc))
                ck.val_history = list(history)
                snapshots.append(ck)
                row["val_acc"] = acc
            log_rows.append(row)
            if step % cfg.val_every == 0:
                last_good = snapshot(step)

    final = snapshot(step)
    final.snapshots = snapshots  # type: ignore[attr-defined]
    if log_path is not None:
        _write_log(log_path, log_rows)
    return final


def _write_log(path: str | Path, rows: list[dict]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)


def select_model(checkpoints: list[Checkpoint], val_ds: Dataset,
                 domain: str = "pseudoreal", crop: int = 64) -> Checkpoint:
    """Pick the checkpoint with the best validation accuracy (ties: earliest)."""
    if not checkpoints:
        raise ValueError("need at least one checkpoint")
    if len(val_ds) == 0:
        raise ValueError("empty validation set")
    best, best_acc = None, -1.0
    for ck in sorted(checkpoints, key=lambda c: c.step):
        acc = validation_accuracy(ck, val_ds, crop=crop, domain=domain)
        if acc > best_acc:
            best, best_acc = ck, acc
    return best


def train_graspgan(sim_ds: Dataset, real_ds: Dataset, cfg: TrainConfig,
                   log_path: str | Path | None = None,
                   ) -> tuple[GeneratorCheckpoint, Checkpoint]:
    """Alternating pixel-adapter training.

    Step (i) updates the generator with the LSGAN generator loss, the task
    loss through C on adapted images, and the content losses; step (ii)
    updates the discriminator and C.  Real labels are only read when the
    config says they exist.
    """
    torch.set_num_threads(cfg.torch_threads)
    torch.manual_seed(cfg.seed)
    if not cfg.real_labels:
        real_ds = real_ds.unlabeled()
    gen = Generator()
    disc = PatchDiscriminator()
    net = GraspNet(max_step=cfg.max_step)
    opt_g = torch.optim.Adam(gen.parameters(), lr=cfg.lr_g, betas=(0.5, 0.999))
    opt_dc = torch.optim.Adam(list(disc.parameters()) + list(net.parameters()),
                              lr=cfg.lr_d, betas=(0.5, 0.999))
    w = cfg.weights
    step = 0
    epoch = 0
    collapse_run = 0
    collapse_warning = False
    log_rows = []
    while step < cfg.gan_steps:
        rng = make_rng(cfg.seed, 0x6A9, epoch)
        batches = make_batches(sim_ds, real_ds, MixStrategy.DBN_MIX, cfg.batch_size,
                               rng, real_labels=cfg.real_labels)
        if not batches:
            raise ValueError(f"datasets too small for batch size {cfg.batch_size}")
        epoch += 1
        for batch in batches:
            if step >= cfg.gan_steps:
                break
            x0, xc, v, y, d, m0, mc = _crop_batch(batch, cfg.crop, rng,
                                                  need_masks=True)
            ns = batch.sim_count
            xs0, xsc, vs = x0[:ns], xc[:ns], v[:ns]
            ys = y[:ns]
            xr0, xrc = x0[ns:], xc[ns:]
            net.train()
            gen.train()

            # --- step (i): generator only ---
            xf0, mlog0 = gen(xs0)
            xfc, mlogc = gen(xsc)
            fake_scores = disc(xf0, xfc)
            l_gen = sum(((f - 1.0) ** 2).mean() for f in fake_scores) \
                / len(fake_scores)
            p_f, feat_f = net(xf0, xfc, vs, "sim")
            l_task_g = losses.task_loss(ys, p_f)
            with torch.no_grad():
                _, feat_s = net(xs0, xsc, vs, "sim")
            l_content = (
                w.w_pmse * (losses.pmse_loss(xf0, xs0) + losses.pmse_loss(xfc, xsc)) / 2
                + w.w_mask * (losses.mask_loss(mlog0, m0[:ns])
                              + losses.mask_loss(mlogc, mc[:ns])) / 2
                + w.w_feat * losses.feature_anchor_loss(feat_f, feat_s))
            loss_g = w.lam_g * l_gen + w.lam_tg * l_task_g + w.lam_c * l_content
            opt_g.zero_grad()
            opt_dc.zero_grad()
            loss_g.backward()
            opt_g.step()

            # --- step (ii): discriminator + task network ---
            xf0d, xfcd = xf0.detach(), xfc.detach()
            l_discr = losses.lsgan_losses(disc(xr0, xrc), disc(xf0d, xfcd))[0]
            p_f2, _ = net(xf0d, xfcd, vs, "sim")
            l_task_d = losses.task_loss(ys, p_f2)
            if cfg.real_labels:
                p_r, _ = net(xr0, xrc, v[ns:], "pseudoreal")
                l_task_d = (l_task_d + losses.task_loss(y[ns:], p_r)) / 2
            else:
                # Populate the pseudoreal normalization bank without labels.
                with torch.no_grad():
                    net(xr0, xrc, v[ns:], "pseudoreal")
            loss_dc = w.lam_d * l_discr + w.lam_td * l_task_d
            opt_g.zero_grad()
            opt_dc.zero_grad()
            loss_dc.backward()
            opt_dc.step()

            if not (math.isfinite(float(loss_g.detach())) and math.isfinite(float(loss_dc.detach()))):
                raise TrainingDiverged(f"non-finite GAN loss at step {step}")
            collapse_run = collapse_run + 1 if float(l_discr.detach()) < 1e-4 else 0
            if collapse_run >= 500 and not collapse_warning:
                collapse_warning = True
                log_rows.append({"step": step, "l_gen": "", "l_discr": "",
                                 "l_task": "", "l_content": "",
                                 "warning": "discriminator collapse"})
            log_rows.append({"step": step, "l_gen": float(l_gen.detach()),
                             "l_discr": float(l_discr.detach()), "l_task": float(l_task_d.detach()),
                             "l_content": float(l_content.detach()), "warning": ""})
            step += 1

    chash = cfg.config_hash()
    gen_ck = GeneratorCheckpoint(state=copy.deepcopy(gen.state_dict()), step=step,
                                 config_hash=chash, collapse_warning=collapse_warning)
    task_ck = Checkpoint(model_state=copy.deepcopy(net.state_dict()),
                         classifier_state=None, step=step, regime="graspgan_gan",
                         bank_mode="dbn", config_hash=chash, max_step=cfg.max_step,
                         extra={"seed": cfg.seed, "weights": asdict(cfg.weights)})
    if log_path is not None:
        _write_log(log_path, log_rows)
    return gen_ck, task_ck


def refine_dataset(gen_ckpt: GeneratorCheckpoint, sim_ds: Dataset,
                   out_root: str | Path) -> Dataset:
    """Replace every sim image by its adapted version; labels, commands and
    masks are carried over bit-exactly."""
    gen = gen_ckpt.build()
    out_root = Path(out_root)
    h, w = sim_ds.samples()[0].x0.shape[:2]
    if h % 8 or w % 8:
        raise ValueError(f"generator needs dims divisible by 8, got {h}x{w}")

    def adapt(img_u8: np.ndarray) -> np.ndarray:
        x = torch.from_numpy(img_u8).permute(2, 0, 1).float()[None] / 255.0
        with torch.no_grad():
            out, _ = gen(x)
        return np.round(out[0].permute(1, 2, 0).numpy() * 255.0).astype(np.uint8)

    for eid in sim_ds.episode_ids:
        ep = sim_ds.episode(eid)
        steps = [EpisodeStep(image=adapt(s.image), mask=s.mask, command=s.command,
                             gripper_pose=s.gripper_pose,
                             train_command=s.train_command) for s in ep.steps]
        adapted = Episode(x0=adapt(ep.x0), mask0=ep.mask0, steps=steps,
                          outcome=ep.outcome, seed=ep.seed, regime=ep.regime,
                          domain="sim", appearance=ep.appearance,
                          dynamics=ep.dynamics)
        datastore.write_episode(adapted, out_root)
    datastore.set_manifest_field(out_root, "generator_hash", gen_ckpt.config_hash)
    datastore.set_manifest_field(out_root, "adapted_from", str(sim_ds.root))
    return Dataset(out_root)
