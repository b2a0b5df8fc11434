"""Expert demonstration dataset: collection and the on-disk container."""

from dataclasses import dataclass

import numpy as np

from .. import binio
from ..sim import episode as ep
from ..sim.expert import ExpertConfig
from ..sim.render import GridSpec

DATASET_MAGIC = b"DDDS"
SCHEMA_VERSION = 1
FIELDS = ("obs", "meas", "action", "waypoints", "speed", "value", "features", "future", "episode", "step")


class DatasetMismatch(ValueError):
    pass


@dataclass
class Dataset:
    header: dict
    obs: np.ndarray        # uint8 (N, C, H, W), value * 4
    meas: np.ndarray       # (N, 7)
    action: np.ndarray     # (N, 2) expert steer, accel
    waypoints: np.ndarray  # (N, T, 2)
    speed: np.ndarray      # (N,)
    value: np.ndarray      # (N,)
    features: np.ndarray   # (N, F)
    future: np.ndarray     # (N, T, 2)
    episode: np.ndarray    # (N,) episode index into header["episodes"]
    step: np.ndarray       # (N,)

    def __len__(self):
        return len(self.speed)

    def observations(self, idx):
        return ep.dequantize_obs(self.obs[idx])

    @classmethod
    def from_records(cls, records, data_hash):
        frames = [(i, f) for i, r in enumerate(records) for f in r.frames]
        if not frames:
            raise ValueError("no frames collected")

        def stack(get, dtype=np.float64):
            return np.stack([np.asarray(get(f), dtype=dtype) for _, f in frames])

        header = {"data_hash": data_hash, "schema_version": SCHEMA_VERSION, "frames": len(frames),
                  "episodes": [{"route": r.route, "seed": r.seed, "events": len(r.events), "frames": len(r.frames),
                                "steps": r.steps, "completion": r.completion} for r in records]}
        return cls(header, stack(lambda f: f.obs, np.uint8), stack(lambda f: f.meas),
                   stack(lambda f: f.expert_action), stack(lambda f: f.waypoints),
                   stack(lambda f: f.target_speed), stack(lambda f: f.value), stack(lambda f: f.features),
                   stack(lambda f: f.future_actions), np.array([i for i, _ in frames], dtype=np.int64),
                   np.array([f.step for _, f in frames], dtype=np.int64))

    def save(self, path):
        return binio.write(path, DATASET_MAGIC, SCHEMA_VERSION, self.header,
                           {k: getattr(self, k) for k in FIELDS})

    @classmethod
    def load(cls, path, expected_data_hash=None):
        _, header, arrays = binio.read(path, DATASET_MAGIC, (SCHEMA_VERSION,))
        missing = set(FIELDS) - set(arrays)
        if missing:
            raise binio.FormatError(f"dataset lacks fields {sorted(missing)}")
        ds = cls(header, **{k: arrays[k] for k in FIELDS})
        if len(ds) != header["frames"] or any(len(arrays[k]) != len(ds) for k in FIELDS):
            raise binio.FormatError("dataset frame count does not match its header")
        if expected_data_hash is not None and header["data_hash"] != expected_data_hash:
            raise DatasetMismatch(
                f"dataset was collected under config {header['data_hash'][:12]}, expected {expected_data_hash[:12]}")
        return ds


def collect_records(cfg, policy=None, seeds=None, record=True, with_masks=False, noisy=False):
    """Run ``policy`` (the expert if None) over every route x seed, in a fixed order.

    With ``noisy`` the executed steering gets seeded pulses (see SteerNoise).
    """
    grid = GridSpec(size=cfg.model.grid)
    ecfg = ExpertConfig(horizon=cfg.model.horizon)
    seeds = cfg.collect.seeds if seeds is None else seeds
    records = []
    for world in cfg.world_configs():
        for s in seeds:
            records.append(ep.run_episode(world, policy, seed=s, record=record,
                                          frame_stride=cfg.collect.frame_stride,
                                          future_interval=cfg.collect.future_interval,
                                          with_masks=with_masks, ecfg=ecfg, grid=grid,
                                          noise=ep.SteerNoise(s) if noisy else None))
    return records


def collect(cfg):
    """Clean expert episodes (also the expert's benchmark score) plus perturbed ones for recovery data."""
    clean = collect_records(cfg)
    noisy = collect_records(cfg, seeds=cfg.collect.noise_seeds, noisy=True) if cfg.collect.noise_seeds else []
    return Dataset.from_records(clean + noisy, cfg.data_hash), clean, noisy
