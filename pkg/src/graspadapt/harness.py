"""Evaluation, regime-comparison experiments and report generation.

Workdir layout:
    objects/train.json, objects/eval.json
    data/<name>/            episode datasets
    gan/seed<k>/            generator checkpoints
    refined/seed<k>/        adapted sim datasets
    runs/<cell>/            per-cell checkpoints, logs, cached results
"""

from __future__ import annotations

import hashlib
import io
import json
import warnings
import csv as csv_mod
from dataclasses import dataclass, field, asdict
from pathlib import Path
from statistics import median

import numpy as np

from . import datastore, procgen, trainer
from .config import WorldConfig
from .datastore import Dataset
from .policies import CEMConfig, ScriptedPolicy, ServoPolicy
from .procgen import ObjectModel, ProcGenConfig
from .render import DomainStyle
from .rng import derive_seed, make_rng
from .simworld import RandomizationRegime, run_episode
from .trainer import Checkpoint, GeneratorCheckpoint, Regime, TrainConfig

EVAL_ID_BASE = 1_000_000  # eval object ids live above this; training below

# Paper reference numbers, shown alongside desk-scale results for
# orientation only; physical-robot results are not reproducible here.
PAPER_TABLE3_REALONLY = (67.65, 64.93, 62.75, 35.46, 31.13)
PAPER_TABLE2 = (23.53, 35.95, 63.40)  # Sim-Only | Rand. | GraspGAN
REAL_FRACTIONS = (1.0, 0.2, 0.1, 0.02, 0.01)


class ValidationError(ValueError):
    """Bad experiment arguments (CLI exit code 2)."""


@dataclass
class EvalResult:
    regime: str
    real_fraction: float
    n_episodes: int
    successes: int
    success_rate: float
    seeds: list[int]
    checkpoint_hash: str
    domain: str = "pseudoreal"

    def to_json_obj(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json_obj(cls, obj: dict) -> "EvalResult":
        return cls(**obj)


@dataclass(frozen=True)
class HarnessConfig:
    world: WorldConfig = WorldConfig()
    n_train_objects: int = 36
    n_eval_objects: int = 36
    objects_per_scene: int = 4
    n_sim_episodes: int = 3000
    n_real_episodes: int = 2500
    eval_episodes: int = 612
    compare_eval_episodes: int = 204
    val_fraction: float = 0.1
    train_steps: int = 2500
    gan_steps: int = 1500
    cem: CEMConfig = CEMConfig()
    object_seed: int = 90


def ensure_objects(workdir: str | Path, cfg: HarnessConfig = HarnessConfig(),
                   ) -> tuple[list[ObjectModel], list[ObjectModel]]:
    """Create (or load) the train and held-out eval object libraries."""
    odir = Path(workdir) / "objects"
    odir.mkdir(parents=True, exist_ok=True)
    train_p, eval_p = odir / "train.json", odir / "eval.json"
    if train_p.exists() and eval_p.exists():
        return (procgen.load_object_library(train_p)[0],
                procgen.load_object_library(eval_p)[0])
    pcfg = ProcGenConfig()
    train = procgen.sample_object_set(cfg.n_train_objects, pcfg,
                                      seed=cfg.object_seed, id_base=0)
    ev = procgen.sample_object_set(cfg.n_eval_objects, pcfg,
                                   seed=cfg.object_seed + 1,
                                   id_base=EVAL_ID_BASE)
    procgen.save_object_library(train, pcfg, cfg.object_seed, train_p)
    procgen.save_object_library(ev, pcfg, cfg.object_seed + 1, eval_p)
    return train, ev


_DATA_SPECS = {
    # name -> (domain, randomization regime)
    "sim_none": ("sim", RandomizationRegime.NONE),
    "sim_visual": ("sim", RandomizationRegime.VISUAL),
    "pseudoreal": ("pseudoreal", RandomizationRegime.NONE),
}


def collect_dataset(workdir: str | Path, name: str, n_episodes: int,
                    objects: list[ObjectModel], seed: int,
                    cfg: HarnessConfig = HarnessConfig()) -> Dataset:
    """Collect (or load) a named episode dataset with the scripted policy."""
    if name not in _DATA_SPECS:
        raise ValidationError(f"unknown dataset name {name!r}")
    domain, regime = _DATA_SPECS[name]
    root = Path(workdir) / "data" / name
    mpath = root / "manifest.json"
    if mpath.exists():
        ds = Dataset(root)
        if ds.n_episodes >= n_episodes:
            return ds
    style = DomainStyle.for_domain(domain)
    w = cfg.world
    existing = set()
    if mpath.exists():
        existing = set(json.loads(mpath.read_text())["episodes"])
    for i in range(n_episodes):
        ep_seed = derive_seed(seed, 0xDA7A, i)
        if f"{domain}-{ep_seed:016x}" in existing:
            continue
        rng = make_rng(ep_seed, 0x0B75)
        k = int(rng.integers(2, cfg.objects_per_scene + 1))
        idx = rng.choice(len(objects), size=k, replace=False)
        scene_objs = [objects[int(j)] for j in idx]
        policy = ScriptedPolicy(ep_seed, w)
        ep = run_episode(scene_objs, w, policy, w.episode_steps, regime,
                         domain, ep_seed, style=style)
        datastore.write_episode(ep, root)
    return Dataset(root)


def evaluate(ckpt: Checkpoint, domain: str, n_episodes: int, seed: int,
             eval_objects: list[ObjectModel],
             train_object_ids: set[int] | None = None,
             cem: CEMConfig = CEMConfig(),
             cfg: HarnessConfig = HarnessConfig()) -> EvalResult:
    """Servoing evaluation over fresh scenes from the held-out library.

    The drop side of the bin alternates every 3 grasps, the desk-scale
    analog of the paper's re-drop rule.
    """
    if n_episodes <= 0:
        raise ValidationError("n_episodes must be positive")
    if domain not in ("sim", "pseudoreal"):
        raise ValidationError(f"unknown domain {domain!r}")
    eval_ids = {o.id for o in eval_objects}
    if min(eval_ids) < EVAL_ID_BASE:
        raise ValidationError("eval objects must use the reserved id range")
    if train_object_ids is not None and eval_ids & set(train_object_ids):
        raise ValidationError("eval object library overlaps training ids")
    net = ckpt.build_net()
    bank = ckpt.eval_bank(domain)
    style = DomainStyle.for_domain(domain)
    w = cfg.world
    successes = 0
    for i in range(n_episodes):
        ep_seed = derive_seed(seed, 0xE7A1, i)
        rng = make_rng(ep_seed, 0x0B75)
        k = int(rng.integers(2, cfg.objects_per_scene + 1))
        idx = rng.choice(len(eval_objects), size=k, replace=False)
        scene_objs = [eval_objects[int(j)] for j in idx]
        policy = ServoPolicy(net, bank, ep_seed, w, cem)
        bin_half = "left" if (i // 3) % 2 == 0 else "right"
        ep = run_episode(scene_objs, w, policy, w.episode_steps,
                         RandomizationRegime.NONE, domain, ep_seed,
                         style=style, bin_half=bin_half)
        successes += int(ep.outcome)
    return EvalResult(regime=ckpt.regime, real_fraction=float("nan"),
                      n_episodes=n_episodes, successes=successes,
                      success_rate=successes / n_episodes, seeds=[seed],
                      checkpoint_hash=ckpt.config_hash, domain=domain)


def _cell_key(regime: Regime, real_fraction: float, seed: int,
              cfg: HarnessConfig) -> str:
    doc = {"regime": regime.value, "fraction": real_fraction, "seed": seed,
           "steps": cfg.train_steps, "gan_steps": cfg.gan_steps,
           "n_sim": cfg.n_sim_episodes, "n_real": cfg.n_real_episodes}
    h = hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:12]
    return f"{regime.value}_f{real_fraction:g}_s{seed}_{h}"


def _train_config(regime: Regime, real_fraction: float, seed: int,
                  cfg: HarnessConfig) -> TrainConfig:
    sim_regime = (RandomizationRegime.VISUAL
                  if regime in (Regime.RAND, Regime.DANN_R)
                  else RandomizationRegime.NONE)
    return TrainConfig(regime=regime, real_fraction=real_fraction,
                       sim_regime=sim_regime, real_labels=real_fraction > 0,
                       steps=cfg.train_steps, gan_steps=cfg.gan_steps,
                       max_step=cfg.world.max_step, seed=seed,
                       val_every=max(1, cfg.train_steps // 10))


class Experiment:
    """Caches datasets, GAN generators, refined data and per-cell runs."""

    def __init__(self, workdir: str | Path, cfg: HarnessConfig = HarnessConfig()):
        self.workdir = Path(workdir)
        self.cfg = cfg
        self.train_objects, self.eval_objects = ensure_objects(workdir, cfg)
        self._datasets: dict[str, Dataset] = {}
        self._splits: dict[str, tuple[Dataset, Dataset]] = {}

    # ---- data ----
    def dataset(self, name: str) -> Dataset:
        if name not in self._datasets:
            n = (self.cfg.n_real_episodes if name == "pseudoreal"
                 else self.cfg.n_sim_episodes)
            self._datasets[name] = collect_dataset(
                self.workdir, name, n, self.train_objects, seed=17, cfg=self.cfg)
        return self._datasets[name]

    def real_split(self) -> tuple[Dataset, Dataset]:
        """(train, val) split of the pseudoreal dataset; val keeps labels
        for model selection, mirroring a small labeled holdout."""
        if "real" not in self._splits:
            self._splits["real"] = datastore.split_validation(
                self.dataset("pseudoreal"), self.cfg.val_fraction, seed=23)
        return self._splits["real"]

    def sim_split(self) -> tuple[Dataset, Dataset]:
        if "sim" not in self._splits:
            self._splits["sim"] = datastore.split_validation(
                self.dataset("sim_none"), self.cfg.val_fraction, seed=23)
        return self._splits["sim"]

    # ---- GraspGAN stages ----
    def generator(self, seed: int) -> GeneratorCheckpoint:
        gdir = self.workdir / "gan" / f"seed{seed}"
        gpath = gdir / "generator.pt"
        if gpath.exists():
            return GeneratorCheckpoint.load(gpath)
        gdir.mkdir(parents=True, exist_ok=True)
        cfg = _train_config(Regime.GRASPGAN, 0.0, seed, self.cfg)
        sim_train, _ = self.sim_split()
        real_train, _ = self.real_split()
        gen_ck, _ = trainer.train_graspgan(sim_train, real_train, cfg,
                                           log_path=gdir / "metrics.csv")
        gen_ck.save(gpath)
        return gen_ck

    def refined(self, seed: int) -> Dataset:
        root = self.workdir / "refined" / f"seed{seed}"
        if (root / "manifest.json").exists():
            return Dataset(root)
        gen_ck = self.generator(seed)
        return trainer.refine_dataset(gen_ck, self.dataset("sim_none"), root)

    # ---- cells ----
    def _cell_datasets(self, regime: Regime, real_fraction: float, seed: int,
                       ) -> tuple[Dataset | None, Dataset | None, Dataset]:
        real_train, real_val = self.real_split()
        if real_fraction > 0:
            real = datastore.subset_fraction(real_train, real_fraction, seed=29)
        else:
            real = real_train.unlabeled()
        if regime is Regime.REAL_ONLY:
            return None, real, real_val
        if regime in (Regime.RAND, Regime.DANN_R):
            sim = self.dataset("sim_visual")
        elif regime is Regime.GRASPGAN:
            sim = self.refined(seed)
        else:
            sim = self.dataset("sim_none")
        if regime is Regime.SIM_ONLY:
            # SimOnly never touches the real domain, selection included.
            sim_train, sim_val = self.sim_split()
            return sim_train, None, sim_val
        return sim, real, real_val

    def train_cell(self, regime: Regime, real_fraction: float, seed: int,
                   ) -> Checkpoint:
        key = _cell_key(regime, real_fraction, seed, self.cfg)
        rdir = self.workdir / "runs" / key
        cpath = rdir / "checkpoint.pt"
        cfg = _train_config(regime, real_fraction, seed, self.cfg)
        if cpath.exists():
            ck = Checkpoint.load(cpath)
            if ck.config_hash == cfg.config_hash():
                return ck
            warnings.warn(f"cache hash mismatch for {key}; retraining")
        rdir.mkdir(parents=True, exist_ok=True)
        sim, real, val = self._cell_datasets(regime, real_fraction, seed)
        ck = trainer.train_grasp(cfg, sim, real, val_ds=val,
                                 log_path=rdir / "metrics.csv")
        snaps = getattr(ck, "snapshots", [])
        best = trainer.select_model(snaps, val) if snaps else ck
        best.save(cpath)
        return best

    def eval_cell(self, regime: Regime, real_fraction: float, seed: int,
                  domain: str = "pseudoreal",
                  n_episodes: int | None = None) -> EvalResult:
        key = _cell_key(regime, real_fraction, seed, self.cfg)
        n = n_episodes if n_episodes is not None else self.cfg.compare_eval_episodes
        rpath = self.workdir / "runs" / key / f"eval_{domain}_{n}.json"
        ck = self.train_cell(regime, real_fraction, seed)
        if rpath.exists():
            res = EvalResult.from_json_obj(json.loads(rpath.read_text()))
            if res.checkpoint_hash == ck.config_hash:
                res.real_fraction = real_fraction
                return res
            warnings.warn(f"cached eval hash mismatch for {key}; re-evaluating")
        res = evaluate(ck, domain, n, seed,
                       self.eval_objects,
                       train_object_ids={o.id for o in self.train_objects},
                       cem=self.cfg.cem, cfg=self.cfg)
        res.regime = regime.value
        res.real_fraction = real_fraction
        rpath.write_text(json.dumps(res.to_json_obj()))
        return res


def run_comparison(matrix: list[tuple[Regime, float]], workdir: str | Path,
                   seeds: tuple[int, ...] = (0, 1, 2),
                   cfg: HarnessConfig = HarnessConfig(),
                   domain: str = "pseudoreal",
                   n_episodes: int | None = None) -> list[EvalResult]:
    """Train (or load) and evaluate every (regime, fraction, seed) cell."""
    if not matrix:
        raise ValidationError("empty comparison matrix")
    exp = Experiment(workdir, cfg)
    out = []
    for regime, fraction in matrix:
        for seed in seeds:
            out.append(exp.eval_cell(regime, fraction, seed, domain=domain,
                                     n_episodes=n_episodes))
    return out


def median_rates(results: list[EvalResult]) -> dict[tuple[str, float], float]:
    """Median success rate per (regime, fraction) cell across seeds."""
    cells: dict[tuple[str, float], list[float]] = {}
    for r in results:
        cells.setdefault((r.regime, r.real_fraction), []).append(r.success_rate)
    return {k: median(v) for k, v in cells.items()}


def report(results: list[EvalResult], fmt: str = "text") -> str:
    """Comparison table: method rows, fraction columns, percent cells."""
    if not results:
        raise ValidationError("no results to report")
    if fmt not in ("text", "csv"):
        raise ValidationError(f"unknown report format {fmt!r}")
    cells = median_rates(results)
    regimes = []
    for r in results:
        if r.regime not in regimes:
            regimes.append(r.regime)
    fractions = sorted({r.real_fraction for r in results}, reverse=True)

    def cell(regime: str, frac: float) -> str:
        v = cells.get((regime, frac))
        return "—" if v is None else f"{100 * v:.2f}"

    rows = [[reg] + [cell(reg, f) for f in fractions] for reg in regimes]
    header = ["method"] + [f"{f:g}" for f in fractions]
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv_mod.writer(buf, quoting=csv_mod.QUOTE_MINIMAL)
        writer.writerow(header)
        writer.writerows(rows)
        return buf.getvalue()
    widths = [max(len(str(r[i])) for r in [header] + rows)
              for i in range(len(header))]
    lines = ["  ".join(str(c).ljust(w) for c, w in zip(r, widths))
             for r in [header] + rows]
    lines.append("")
    lines.append("paper (not reproducible at desk scale):")
    lines.append("  Real-Only at fractions 1.0/0.2/0.1/0.02/0.01: "
                 + " ".join(f"{v:.2f}" for v in PAPER_TABLE3_REALONLY))
    lines.append("  no-label Sim-Only | Rand. | GraspGAN: "
                 + " / ".join(f"{v:.2f}" for v in PAPER_TABLE2))
    return "\n".join(lines) + "\n"


def results_to_csv(results: list[EvalResult]) -> str:
    """Raw per-seed results as RFC-4180 CSV (round-trips exactly)."""
    buf = io.StringIO()
    writer = csv_mod.writer(buf, quoting=csv_mod.QUOTE_MINIMAL)
    writer.writerow(["regime", "real_fraction", "n_episodes", "successes",
                     "success_rate", "seeds", "checkpoint_hash", "domain"])
    for r in results:
        writer.writerow([r.regime, repr(r.real_fraction), r.n_episodes,
                         r.successes, repr(r.success_rate),
                         " ".join(map(str, r.seeds)), r.checkpoint_hash,
                         r.domain])
    return buf.getvalue()


def results_from_csv(text: str) -> list[EvalResult]:
    rows = list(csv_mod.reader(io.StringIO(text)))
    out = []
    for row in rows[1:]:
        out.append(EvalResult(
            regime=row[0], real_fraction=float(row[1]), n_episodes=int(row[2]),
            successes=int(row[3]), success_rate=float(row[4]),
            seeds=[int(s) for s in row[5].split()], checkpoint_hash=row[6],
            domain=row[7]))
    return out
