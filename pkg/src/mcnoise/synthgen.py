"""Synthetic trial ensembles with a recorded ground truth.

Each trial draws its coefficients from Gaussian jitter around a base
coefficient set (non-positive draws are redrawn), evaluates the corrected
model and adds iid Gaussian sample noise. Two-transmitter trials add a fresh
draw from each single-transmitter law plus an amplitude-noise term
``N * g(t)``, which is the injected nonlinearity.

Random streams are keyed by ``(seed, group, index)``; coefficient draws and
sample noise use separate streams so a ground-truth record replays every
trace bit for bit.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import rng
from .errors import UsageError
from .models import CoefficientSet, ModelKind, unit_waveform
from .nonlinearity import NoiseStats
from .traces import Group, SensorTrace, Source, TimeGrid, TrialSet, save_manifest, save_trace

log = logging.getLogger(__name__)

GROUP_CODES = {Group.TX1: 1, Group.TX2: 2, Group.TX12: 12, Group.OTHER: 0}
DEFAULT_GRID = TimeGrid(0.05, 0.05, 200)
DEFAULT_SAMPLE_NOISE = 0.02
MAX_REDRAWS = 1000


@dataclass(frozen=True)
class SynthConfig:
    model: ModelKind = ModelKind.M1
    base_coeffs: CoefficientSet = CoefficientSet(2.9050, 1.3839e-4, 54.3405, 225.0)
    a_variance: float = 0.0
    b_variance: float = 0.0
    c_variance: float = 0.0
    sample_noise_std: float = DEFAULT_SAMPLE_NOISE
    grid: TimeGrid = DEFAULT_GRID
    trials: int = 12
    seed: int = 0
    nonlinearity: NoiseStats | None = None

    def __post_init__(self):
        object.__setattr__(self, "model", ModelKind(self.model))
        if self.model.is_physical:
            raise UsageError("synthetic trials use the m1 or m2 model")
        if min(self.a_variance, self.b_variance, self.c_variance, self.sample_noise_std) < 0:
            raise UsageError("variances and noise level must be >= 0")
        if int(self.trials) != self.trials or self.trials < 1:
            raise UsageError(f"trials must be a positive integer, got {self.trials}")
        if int(self.seed) != self.seed or self.seed < 0:
            raise UsageError(f"seed must be a non-negative integer, got {self.seed}")

    def to_dict(self):
        return {
            "model": self.model.value,
            "base_coeffs": self.base_coeffs.to_dict(),
            "a_variance": self.a_variance, "b_variance": self.b_variance,
            "c_variance": self.c_variance,
            "sample_noise_std": self.sample_noise_std,
            "grid": self.grid.to_dict(),
            "trials": self.trials, "seed": self.seed,
            "nonlinearity": self.nonlinearity.to_dict() if self.nonlinearity else None,
        }


def _positive_normal(gen, mean, variance, name, counter):
    if variance == 0:
        return float(mean)
    sd = math.sqrt(variance)
    for _ in range(MAX_REDRAWS):
        x = float(mean + sd * gen.standard_normal())
        if x > 0:
            return x
        counter[name] = counter.get(name, 0) + 1
        log.info("redrawing non-positive %s draw %.6g", name, x)
    raise UsageError(f"could not draw a positive {name} in {MAX_REDRAWS} tries; "
                     f"mean {mean} and variance {variance} are incompatible")


def draw_coefficients(cfg: SynthConfig, gen) -> tuple:
    """Jittered ``(a, b, c)`` and the number of redraws per coefficient."""
    redraws = {}
    base = cfg.base_coeffs
    a = _positive_normal(gen, base.amplitude, cfg.a_variance, "a", redraws)
    b = _positive_normal(gen, base.shape, cfg.b_variance, "b", redraws)
    c = _positive_normal(gen, base.effective_speed, cfg.c_variance, "c", redraws)
    return (a, b, c), redraws


def _curve(model, coeffs, d, t):
    a, b, c = coeffs
    return a * unit_waveform(model, b, c, d, t)


def _sample_noise(cfg, group_code, index):
    if cfg.sample_noise_std == 0:
        return np.zeros(cfg.grid.count)
    gen = rng.stream(cfg.seed, group_code, index, rng.SAMPLE_NOISE)
    return cfg.sample_noise_std * gen.standard_normal(cfg.grid.count)


def generate_trial(cfg: SynthConfig, index: int, group=Group.OTHER):
    """One synthetic single-transmitter trial and its ground-truth record."""
    group = Group(group)
    code = GROUP_CODES[group]
    gen = rng.stream(cfg.seed, code, index, rng.COEFFS)
    coeffs, redraws = draw_coefficients(cfg, gen)
    t = cfg.grid.times
    values = _curve(cfg.model, coeffs, cfg.base_coeffs.distance, t) + _sample_noise(cfg, code, index)
    trace = SensorTrace(cfg.grid, values, f"{group.value}_{index:02d}", Source.SYNTHETIC)
    truth = {"index": index, "a": coeffs[0], "b": coeffs[1], "c": coeffs[2],
             "redraws": redraws}
    return trace, truth


def _generate_tx12_trial(tx1: SynthConfig, tx2: SynthConfig, noise: NoiseStats | None, index):
    code = GROUP_CODES[Group.TX12]
    gen = rng.stream(tx1.seed, code, index, rng.COEFFS)
    c1, r1 = draw_coefficients(tx1, gen)
    c2, r2 = draw_coefficients(tx2, gen)
    amp = 0.0
    if noise is not None:
        amp = float(noise.mu + math.sqrt(noise.sigma2) * gen.standard_normal())
    t = tx1.grid.times
    values = (_curve(tx1.model, c1, tx1.base_coeffs.distance, t)
              + _curve(tx2.model, c2, tx2.base_coeffs.distance, t)
              + _sample_noise(tx1, code, index))
    if noise is not None:
        values = values + amp * noise.waveform(t)
    trace = SensorTrace(tx1.grid, values, f"Tx12_{index:02d}", Source.SYNTHETIC)
    truth = {"index": index,
             "tx1": {"a": c1[0], "b": c1[1], "c": c1[2], "redraws": r1},
             "tx2": {"a": c2[0], "b": c2[1], "c": c2[2], "redraws": r2},
             "noise_amplitude": amp}
    return trace, truth


@dataclass
class Scenario:
    tx1: TrialSet
    tx2: TrialSet
    tx12: TrialSet
    truth: dict = field(default_factory=dict)

    def groups(self):
        return {"Tx1": self.tx1, "Tx2": self.tx2, "Tx12": self.tx12}


def generate_scenario(tx1: SynthConfig, tx2: SynthConfig, nonlinearity: NoiseStats | None = None
                      ) -> Scenario:
    """Three trial sets (Tx1, Tx2, Tx12) on a common grid plus the ground truth.

    The seed, grid, trial count, model and sample-noise level come from
    ``tx1`` and must match ``tx2``. ``nonlinearity`` defaults to
    ``tx1.nonlinearity``.
    """
    for name in ("model", "grid", "trials", "seed", "sample_noise_std"):
        if getattr(tx1, name) != getattr(tx2, name):
            raise UsageError(f"Tx1 and Tx2 configs disagree on {name}")
    if nonlinearity is None:
        nonlinearity = tx1.nonlinearity
    sets, truth_groups = {}, {}
    for group, cfg in ((Group.TX1, tx1), (Group.TX2, tx2)):
        pairs = [generate_trial(cfg, i, group) for i in range(cfg.trials)]
        sets[group] = TrialSet([p[0] for p in pairs], group)
        truth_groups[group.value] = [p[1] for p in pairs]
    pairs = [_generate_tx12_trial(tx1, tx2, nonlinearity, k) for k in range(tx1.trials)]
    sets[Group.TX12] = TrialSet([p[0] for p in pairs], Group.TX12)
    truth_groups[Group.TX12.value] = [p[1] for p in pairs]
    truth = {
        "seed": tx1.seed,
        "tx1_config": tx1.to_dict(),
        "tx2_config": tx2.to_dict(),
        "nonlinearity": nonlinearity.to_dict() if nonlinearity else None,
        "groups": truth_groups,
    }
    return Scenario(sets[Group.TX1], sets[Group.TX2], sets[Group.TX12], truth)


def replay_trial(truth: dict, group, index) -> np.ndarray:
    """Rebuild a generated trace from the ground-truth record alone."""
    group = Group(group)
    tx1, tx2 = config_from_dict(truth["tx1_config"]), config_from_dict(truth["tx2_config"])
    entry = truth["groups"][group.value][index]
    code = GROUP_CODES[group]
    t = tx1.grid.times
    if group is Group.TX12:
        values = (_curve(tx1.model, (entry["tx1"]["a"], entry["tx1"]["b"], entry["tx1"]["c"]),
                         tx1.base_coeffs.distance, t)
                  + _curve(tx2.model, (entry["tx2"]["a"], entry["tx2"]["b"], entry["tx2"]["c"]),
                           tx2.base_coeffs.distance, t)
                  + _sample_noise(tx1, code, index))
        if truth["nonlinearity"] is not None:
            noise = NoiseStats.from_dict(truth["nonlinearity"])
            values = values + entry["noise_amplitude"] * noise.waveform(t)
        return values
    cfg = tx1 if group is Group.TX1 else tx2
    return (_curve(cfg.model, (entry["a"], entry["b"], entry["c"]), cfg.base_coeffs.distance, t)
            + _sample_noise(cfg, code, index))


# --------------------------------------------------------------------------
# Config files and on-disk datasets

def config_from_dict(doc: dict) -> SynthConfig:
    """Build a :class:`SynthConfig` from its JSON form; missing keys take defaults."""
    doc = dict(doc)
    kw = {}
    if "model" in doc:
        kw["model"] = ModelKind(doc["model"])
    if "base_coeffs" in doc:
        bc = doc["base_coeffs"]
        kw["base_coeffs"] = CoefficientSet(float(bc["a"]), float(bc["b"]), float(bc["c"]),
                                           float(bc.get("d", 225.0)))
    for key in ("a_variance", "b_variance", "c_variance", "sample_noise_std"):
        if key in doc:
            kw[key] = float(doc[key])
    if "grid" in doc:
        g = doc["grid"]
        kw["grid"] = TimeGrid(float(g["t0"]), float(g["dt"]), int(g["count"]))
    for key in ("trials", "seed"):
        if key in doc:
            kw[key] = doc[key]
    if doc.get("nonlinearity"):
        nl = dict(doc["nonlinearity"])
        nl.setdefault("model", kw.get("model", ModelKind.M1).value)
        nl.setdefault("d", kw["base_coeffs"].distance if "base_coeffs" in kw else 225.0)
        kw["nonlinearity"] = NoiseStats.from_dict(nl)
    return SynthConfig(**kw)


def default_scenario_configs(seed=0, trials=12, sample_noise_std=DEFAULT_SAMPLE_NOISE):
    """Tx1/Tx2 laws built from the reported mean coefficients, with Tx1's amplitude
    jitter, plus the reported M1 Gaussian nonlinearity."""
    tx1 = SynthConfig(ModelKind.M1, CoefficientSet(2.9050, 1.3839e-4, 54.3405, 225.0),
                      a_variance=0.0672, sample_noise_std=sample_noise_std, trials=trials,
                      seed=seed, nonlinearity=NoiseStats(-0.7356, 0.5214, ModelKind.M1,
                                                         1.4306e-4, 57.5018, 225.0))
    tx2 = replace(tx1, base_coeffs=CoefficientSet(1.9815, 1.5605e-4, 59.4961, 225.0))
    return tx1, tx2


def scenario_from_config(doc: dict, seed=None, trials=None):
    """Parse a scenario config ``{"tx1": {...}, "tx2": {...}, shared keys...}``.

    Keys at the top level (``model``, ``grid``, ``trials``, ``seed``,
    ``sample_noise_std``, ``nonlinearity``) apply to both groups.
    """
    if not isinstance(doc, dict):
        raise UsageError("scenario config must be a JSON object")
    shared = {k: v for k, v in doc.items() if k not in ("tx1", "tx2")}
    if seed is not None:
        shared["seed"] = seed
    if trials is not None:
        shared["trials"] = trials
    d1, d2 = default_scenario_configs()
    try:
        base1 = {**d1.to_dict(), **shared, **doc.get("tx1", {})}
        base2 = {**d2.to_dict(), **shared, **doc.get("tx2", {})}
        return config_from_dict(base1), config_from_dict(base2)
    except (KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"invalid scenario config: {exc}") from None


def write_scenario(scenario: Scenario, out_dir) -> dict:
    """Write trace CSVs, one manifest per group and ``ground_truth.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}
    for name, trials in scenario.groups().items():
        files = []
        for tr in trials:
            fname = f"{tr.label}.csv"
            save_trace(tr, out / fname)
            files.append(fname)
        manifest = out / f"{name.lower()}.json"
        save_manifest(manifest, trials.group, files)
        paths[name] = manifest
    sidecar = out / "ground_truth.json"
    sidecar.write_text(json.dumps(scenario.truth, indent=2, sort_keys=True) + "\n",
                       encoding="utf-8")
    paths["ground_truth"] = sidecar
    return paths
