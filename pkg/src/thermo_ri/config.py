"""Experiment configuration files (JSON or TOML, same schema).

Example (JSON)::

    {
      "region": {"kind": "box", "sigma": [2.0]},
      "energy": {"A": [[8.0]], "load": {"kind": "sin", "amp": [3.0], "freq": 1.0}, "T": 1.0},
      "x0": [0.15],
      "theta": 1.0,
      "partition": {"h": 0.01},
      "replicates": 200,
      "seed": 0
    }
"""

from __future__ import annotations

import json
import os

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

import numpy as np

from .dissipation import ElasticRegion
from .effective import EffectiveDualPotential
from .energy import QuadraticEnergy, nonconvex_eddp_example
from .harness import ExperimentSpec
from .solvers import Partition


def load_config(path):
    """Read a config file; the format is chosen by extension (``.toml`` or anything else as JSON)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if os.path.splitext(path)[1].lower() == ".toml":
        return tomllib.loads(raw.decode())
    return json.loads(raw.decode())


def build_region(cfg):
    return ElasticRegion.from_config(cfg["region"])


def build_energy(cfg):
    e = cfg["energy"]
    if e.get("kind") == "nonconvex-example":
        return nonconvex_eddp_example(horizon=e.get("T", 1.0))
    return QuadraticEnergy.from_config(e, horizon=e.get("T", 1.0))


def build_dual(cfg, region=None):
    region = build_region(cfg) if region is None else region
    return EffectiveDualPotential(region, normalization=cfg.get("normalization", "exact"))


def build_partition(cfg, T):
    p = cfg.get("partition", {"n_steps": 100})
    if "knots" in p:
        return Partition(p["knots"])
    if "h" in p:
        return Partition.uniform(T, h=float(p["h"]))
    return Partition.uniform(T, n_steps=int(p["n_steps"]))


def build_spec(cfg, kind, seed=None):
    energy = build_energy(cfg)
    region = build_region(cfg)
    kw = {}
    for key in ("theta", "replicates", "eta"):
        if key in cfg:
            kw[key] = cfg[key]
    if "meshes" in cfg:
        kw["meshes"] = tuple(cfg["meshes"])
    params = {k: cfg[k] for k in ("K", "eps", "n_grid") if k in cfg}
    return ExperimentSpec(name=cfg.get("name", kind), kind=kind, energy=energy, region=region,
                          x0=np.atleast_1d(cfg["x0"]), seed=int(cfg.get("seed", 0) if seed is None else seed),
                          params=params, **kw)
