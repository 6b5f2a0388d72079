"""Episode persistence, train/validation splits and batch assembly.

Dataset root layout:
    manifest.json
    episodes/<id>/meta.json
    episodes/<id>/step<k>_{x0,xc,mask0,maskc}.png

Splits and subsets are episode-granular (all T samples of an episode land on
one side) and subsets use shared-prefix sampling so smaller fractions nest
inside larger ones.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np
from PIL import Image

from .config import StyleConstants
from .rng import GENERATOR_SCHEME, make_rng
from .simworld import Episode, MotionCommand

DOMAIN_SIM = 0
DOMAIN_PSEUDOREAL = 1


class IntegrityError(RuntimeError):
    """On-disk record does not match its recorded hash."""


class LabelAccessError(RuntimeError):
    """Labels were requested from a dataset marked unlabeled."""


@dataclass
class GraspSample:
    x0: np.ndarray  # uint8 HxWx3
    xc: np.ndarray
    v: MotionCommand
    y: bool
    d: int  # DOMAIN_SIM | DOMAIN_PSEUDOREAL
    mask0: np.ndarray | None
    maskc: np.ndarray | None
    episode_id: str
    step_index: int


class MixStrategy(Enum):
    SINGLE_DOMAIN = "single"
    NAIVE_MIX = "naive"
    DBN_MIX = "dbn"


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _write_png(path: Path, arr: np.ndarray) -> str:
    img = Image.fromarray(arr, mode="RGB" if arr.ndim == 3 else "L")
    img.save(path, format="PNG")
    return _sha256(path.read_bytes())


def _read_png(path: Path, want_hash: str) -> np.ndarray:
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise IntegrityError(f"{path}: unreadable ({exc})") from exc
    if _sha256(data) != want_hash:
        raise IntegrityError(f"{path}: content hash mismatch")
    return np.asarray(Image.open(path))


def episode_id_for(ep: Episode) -> str:
    return f"{ep.domain}-{ep.seed:016x}"


def write_episode(ep: Episode, root: str | Path) -> str:
    """Persist one episode; returns its record id and updates the manifest."""
    root = Path(root)
    eid = episode_id_for(ep)
    edir = root / "episodes" / eid
    edir.mkdir(parents=True, exist_ok=True)
    hashes: dict[str, str] = {}
    for k, step in enumerate(ep.steps):
        hashes[f"step{k}_x0.png"] = _write_png(edir / f"step{k}_x0.png", ep.x0)
        hashes[f"step{k}_xc.png"] = _write_png(edir / f"step{k}_xc.png", step.image)
        hashes[f"step{k}_mask0.png"] = _write_png(edir / f"step{k}_mask0.png", ep.mask0)
        hashes[f"step{k}_maskc.png"] = _write_png(edir / f"step{k}_maskc.png", step.mask)
    meta_bytes = ep.to_bytes()
    meta = {
        "id": eid,
        "T": ep.T,
        "outcome": bool(ep.outcome),
        "domain": ep.domain,
        "regime": ep.regime.value,
        "seed": ep.seed,
        "file_hashes": hashes,
        "blob_hash": _sha256(meta_bytes),
    }
    (edir / "record.npz").write_bytes(meta_bytes)
    (edir / "meta.json").write_text(json.dumps(meta))
    _update_manifest(root, eid, ep)
    return eid


def read_episode(eid: str, root: str | Path) -> Episode:
    """Load and integrity-check one episode record."""
    edir = Path(root) / "episodes" / eid
    meta = json.loads((edir / "meta.json").read_text())
    for fname, want in meta["file_hashes"].items():
        _read_png(edir / fname, want)
    blob = (edir / "record.npz").read_bytes()
    if _sha256(blob) != meta["blob_hash"]:
        raise IntegrityError(f"{edir / 'record.npz'}: content hash mismatch")
    return Episode.from_bytes(blob)


def _update_manifest(root: Path, eid: str, ep: Episode) -> None:
    mpath = root / "manifest.json"
    if mpath.exists():
        manifest = json.loads(mpath.read_text())
    else:
        manifest = {
            "domain": ep.domain,
            "regime": ep.regime.value,
            "prng_scheme": GENERATOR_SCHEME,
            "style_constants": _style_json(),
            "object_library": None,
            "episodes": {},
            "sample_count": 0,
        }
    meta = json.loads((root / "episodes" / eid / "meta.json").read_text())
    if eid not in manifest["episodes"]:
        manifest["sample_count"] += meta["T"]
    manifest["episodes"][eid] = meta["blob_hash"]
    manifest["content_hash"] = _sha256(
        json.dumps(sorted(manifest["episodes"].items())).encode())
    tmp = mpath.with_suffix(".json.tmp")
    tmp.write_text(json.dumps(manifest))
    os.replace(tmp, mpath)


def _style_json() -> dict:
    sc = StyleConstants()
    return {k: getattr(sc, k) for k in sc.__dataclass_fields__}


def set_manifest_field(root: str | Path, key: str, value) -> None:
    mpath = Path(root) / "manifest.json"
    manifest = json.loads(mpath.read_text())
    manifest[key] = value
    tmp = mpath.with_suffix(".json.tmp")
    tmp.write_text(json.dumps(manifest))
    os.replace(tmp, mpath)


class Dataset:
    """Read view over a dataset root with in-memory sample caching."""

    def __init__(self, root: str | Path, episode_ids: list[str] | None = None,
                 labels_allowed: bool = True):
        self.root = Path(root)
        manifest = json.loads((self.root / "manifest.json").read_text())
        self.manifest = manifest
        all_ids = sorted(manifest["episodes"])
        self.episode_ids = list(episode_ids) if episode_ids is not None else all_ids
        unknown = set(self.episode_ids) - set(all_ids)
        if unknown:
            raise ValueError(f"episode ids not in manifest: {sorted(unknown)[:3]}")
        self.labels_allowed = labels_allowed
        self.label_reads = 0
        self._episodes: dict[str, Episode] = {}
        self._samples: list[GraspSample] | None = None

    def __len__(self) -> int:
        return len(self.samples())

    @property
    def n_episodes(self) -> int:
        return len(self.episode_ids)

    def episode(self, eid: str) -> Episode:
        if eid not in self._episodes:
            self._episodes[eid] = read_episode(eid, self.root)
        return self._episodes[eid]

    def samples(self) -> list[GraspSample]:
        if self._samples is None:
            out = []
            for eid in self.episode_ids:
                ep = self.episode(eid)
                d = DOMAIN_SIM if ep.domain == "sim" else DOMAIN_PSEUDOREAL
                for k, step in enumerate(ep.steps):
                    out.append(GraspSample(
                        x0=ep.x0, xc=step.image, v=step.train_command,
                        y=ep.outcome,
                        d=d, mask0=ep.mask0, maskc=step.mask,
                        episode_id=eid, step_index=k))
            self._samples = out
        return self._samples

    def labels(self) -> np.ndarray:
        """Per-sample outcome labels; guarded for unlabeled datasets."""
        if not self.labels_allowed:
            raise LabelAccessError(f"dataset {self.root} is marked unlabeled")
        self.label_reads += 1
        return np.array([s.y for s in self.samples()], dtype=np.float32)

    def view(self, episode_ids: list[str], labels_allowed: bool | None = None) -> "Dataset":
        ds = Dataset(self.root, episode_ids,
                     self.labels_allowed if labels_allowed is None else labels_allowed)
        ds._episodes = self._episodes  # share the episode cache
        return ds

    def unlabeled(self) -> "Dataset":
        return self.view(self.episode_ids, labels_allowed=False)


def split_validation(ds: Dataset, fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Episode-granular (train, val) split; `fraction` is the validation share."""
    if not 0 < fraction < 1:
        raise ValueError("fraction must be in (0, 1)")
    ids = list(ds.episode_ids)
    perm = make_rng(seed, 0x5D11).permutation(len(ids))
    n_val = round(fraction * len(ids))
    if n_val == 0 or n_val == len(ids):
        raise ValueError(f"fraction {fraction} yields an empty split side")
    val_ids = [ids[i] for i in perm[:n_val]]
    train_ids = [ids[i] for i in perm[n_val:]]
    return ds.view(train_ids), ds.view(val_ids)


def subset_fraction(ds: Dataset, fraction: float, seed: int) -> Dataset:
    """Episode-granular subset via shared-prefix sampling (nested in fraction)."""
    if not 0 < fraction <= 1:
        raise ValueError("fraction must be in (0, 1]")
    if fraction == 1.0:
        return ds.view(list(ds.episode_ids))
    ids = list(ds.episode_ids)
    perm = make_rng(seed, 0x50B5E7).permutation(len(ids))
    n = round(fraction * len(ids))
    if n == 0:
        raise ValueError(f"fraction {fraction} selects zero episodes")
    return ds.view([ids[i] for i in perm[:n]])


@dataclass
class Batch:
    x0: np.ndarray  # uint8 (B, H, W, 3)
    xc: np.ndarray
    v: np.ndarray  # float32 (B, 5)
    y: np.ndarray | None  # float32 (B,) or None when labels are withheld
    d: np.ndarray  # int8 (B,)
    mask0: np.ndarray | None
    maskc: np.ndarray | None
    sim_count: int  # sim samples occupy indices [0, sim_count)


def _stack(samples: list[GraspSample], with_labels: bool, sim_count: int) -> Batch:
    masks_ok = all(s.mask0 is not None for s in samples)
    return Batch(
        x0=np.stack([s.x0 for s in samples]),
        xc=np.stack([s.xc for s in samples]),
        v=np.stack([s.v.as_array() for s in samples]).astype(np.float32),
        y=np.array([s.y for s in samples], dtype=np.float32) if with_labels else None,
        d=np.array([s.d for s in samples], dtype=np.int8),
        mask0=np.stack([s.mask0 for s in samples]) if masks_ok else None,
        maskc=np.stack([s.maskc for s in samples]) if masks_ok else None,
        sim_count=sim_count,
    )


def make_batches(sim_ds: Dataset | None, real_ds: Dataset | None,
                 strategy: MixStrategy, batch_size: int, rng: np.random.Generator,
                 real_labels: bool = True) -> list[Batch]:
    """One epoch of deterministic batches under the given mixing strategy.

    Mixed strategies emit batch_size/2 sim + batch_size/2 pseudoreal per
    batch, each domain sampled without replacement, sim samples first.  The
    epoch ends when either domain is exhausted (equal-size datasets are
    covered exactly once).
    """
    if strategy is MixStrategy.SINGLE_DOMAIN:
        ds = sim_ds if sim_ds is not None else real_ds
        if ds is None or len(ds) == 0:
            raise ValueError("SingleDomain requires one nonempty dataset")
        with_labels = ds is not real_ds or real_labels
        if with_labels and not ds.labels_allowed:
            raise LabelAccessError(f"dataset {ds.root} is marked unlabeled")
        if with_labels and ds is real_ds:
            ds.label_reads += 1
        order = rng.permutation(len(ds))
        samples = ds.samples()
        out = []
        for i in range(len(ds) // batch_size):
            chunk = [samples[j] for j in order[i * batch_size:(i + 1) * batch_size]]
            sim_count = sum(1 for s in chunk if s.d == DOMAIN_SIM)
            out.append(_stack(chunk, with_labels, sim_count))
        return out
    if batch_size % 2:
        raise ValueError("mixed strategies need an even batch size")
    if sim_ds is None or real_ds is None or len(sim_ds) == 0 or len(real_ds) == 0:
        raise ValueError("mixed strategies require both datasets nonempty")
    if real_labels and not real_ds.labels_allowed:
        raise LabelAccessError(f"dataset {real_ds.root} is marked unlabeled")
    if real_labels:
        real_ds.label_reads += 1
    half = batch_size // 2
    sim_samples, real_samples = sim_ds.samples(), real_ds.samples()
    sim_order = rng.permutation(len(sim_samples))
    real_order = rng.permutation(len(real_samples))
    n_batches = min(len(sim_samples) // half, len(real_samples) // half)
    out = []
    for i in range(n_batches):
        sim_chunk = [sim_samples[j] for j in sim_order[i * half:(i + 1) * half]]
        real_chunk = [real_samples[j] for j in real_order[i * half:(i + 1) * half]]
        chunk = sim_chunk + real_chunk
        batch = _stack(chunk, with_labels=True, sim_count=half)
        if not real_labels:
            y = batch.y.copy()
            y[half:] = np.nan  # real labels withheld; consumers must not read them
            batch = Batch(batch.x0, batch.xc, batch.v, y, batch.d,
                          batch.mask0, batch.maskc, half)
        out.append(batch)
    return out


def verify_manifest(root: str | Path) -> int:
    """Check every episode against the manifest; returns the sample count."""
    root = Path(root)
    manifest = json.loads((root / "manifest.json").read_text())
    count = 0
    for eid, blob_hash in manifest["episodes"].items():
        ep = read_episode(eid, root)
        count += ep.T
    if count != manifest["sample_count"]:
        raise IntegrityError(f"manifest sample_count {manifest['sample_count']} != {count}")
    return count
