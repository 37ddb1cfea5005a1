"""CSV metrics, JSON run manifests, raster and weight dumps."""

from __future__ import annotations

import csv
import json
import platform
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .engine import MetricsRow, NetworkConfig, ProjectionSpec
from .neurons import LifParams, SurrogateSpec
from .optim import OptimizerConfig
from .plasticity import RegularizationParams
from .synapses import DelayConfig

METRICS_HEADER = ["iteration", "phase", "loss", "prediction_error", "spikes_recurrent", "runtime_s"]


def write_metrics_csv(path: str | Path, rows: list[MetricsRow]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(METRICS_HEADER)
        for r in rows:
            w.writerow(
                [
                    r.iteration,
                    r.phase,
                    repr(r.loss),
                    "" if r.prediction_error is None else repr(r.prediction_error),
                    r.spikes_recurrent,
                    repr(r.runtime_s),
                ]
            )


def read_metrics_csv(path: str | Path) -> list[MetricsRow]:
    rows = []
    with open(path, newline="") as f:
        for rec in csv.DictReader(f):
            rows.append(
                MetricsRow(
                    iteration=int(rec["iteration"]),
                    phase=rec["phase"],
                    loss=float(rec["loss"]),
                    prediction_error=float(rec["prediction_error"]) if rec["prediction_error"] else None,
                    spikes_recurrent=int(rec["spikes_recurrent"]),
                    runtime_s=float(rec["runtime_s"]),
                )
            )
    return rows


def write_raster_csv(path: str | Path, spikes: list[tuple[int, int]]) -> None:
    """Spike raster as (neuron_id, time_step) rows."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["neuron_id", "time_step"])
        for t, neuron in spikes:
            w.writerow([neuron, t])


def write_weights_csv(path: str | Path, weights: dict[str, np.ndarray]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["projection", "target", "source", "weight"])
        for name, mat in weights.items():
            for (tgt, src), val in np.ndenumerate(mat):
                w.writerow([name, tgt, src, repr(float(val))])


def config_to_dict(cfg: NetworkConfig) -> dict:
    return asdict(cfg)


def config_from_dict(d: dict) -> NetworkConfig:
    d = dict(d)
    lif = dict(d.pop("lif"))
    lif["surrogate"] = SurrogateSpec(**lif.pop("surrogate"))
    d["lif"] = LifParams(**lif)
    d["proj_in"] = ProjectionSpec(**d.pop("proj_in"))
    d["proj_rec"] = ProjectionSpec(**d.pop("proj_rec"))
    d["proj_out"] = ProjectionSpec(**d.pop("proj_out"))
    d["reg"] = RegularizationParams(**d.pop("reg"))
    d["opt"] = OptimizerConfig(**d.pop("opt"))
    d["delays"] = DelayConfig(**d.pop("delays"))
    return NetworkConfig(**d)


def write_manifest(path: str | Path, spec_dict: dict) -> None:
    """Full run manifest: spec plus versions; sufficient for bit-identical reruns."""
    manifest = {
        "spec": spec_dict,
        "versions": {
            "epropsim": __version__,
            "python": sys.version.split()[0],
            "numpy": np.__version__,
            "platform": platform.platform(),
        },
    }
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def read_manifest(path: str | Path) -> dict:
    data = json.loads(Path(path).read_text())
    return data["spec"] if "spec" in data else data
