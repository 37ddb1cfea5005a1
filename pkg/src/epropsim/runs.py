"""Task-level run orchestration: specs, builders, and output writing.

A RunSpec fully describes one experiment (task, mode, variant, seed, network
parameters); executing it writes a metrics CSV and a JSON manifest from which
the run can be reproduced bit-identically.  Default parameters per task ship
as YAML files under ``configs/``.
"""

from __future__ import annotations

import importlib.resources
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .engine import (
    MODE_EVENT,
    MODE_TIME,
    VARIANT_BSSHSLM,
    VARIANT_EPROP_PLUS,
    MetricsRow,
    Network,
    build_network,
    run_training,
)
from .io import (
    config_from_dict,
    config_to_dict,
    write_manifest,
    write_metrics_csv,
    write_raster_csv,
    write_weights_csv,
)
from .tasks import (
    EvidenceTaskConfig,
    build_pixel_map,
    gen_evidence_task,
    gen_pattern_task,
    gen_scaling_network,
    load_nmnist,
)

TASK_PATTERN = "pattern-generation"
TASK_EVIDENCE = "evidence-accumulation"
TASK_NMNIST = "nmnist"
TASK_SCALING = "scaling"
TASKS = (TASK_PATTERN, TASK_EVIDENCE, TASK_NMNIST, TASK_SCALING)

_CONFIG_FILES = {
    TASK_PATTERN: "pattern.yaml",
    TASK_EVIDENCE: "evidence.yaml",
    TASK_NMNIST: "nmnist.yaml",
    TASK_SCALING: "scaling.yaml",
}


@dataclass
class RunSpec:
    task: str
    mode: str = MODE_EVENT
    variant: str = VARIANT_BSSHSLM
    seed: int = 1
    iterations: int = 100
    eval_every: int = 0
    eval_samples: int = 0
    workers: int = 1
    dataset_path: str | None = None
    record_raster: bool = False
    dump_weights: bool = False
    task_params: dict = field(default_factory=dict)
    network: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunSpec":
        return cls(**d)


def load_task_defaults(task: str, variant: str = VARIANT_BSSHSLM) -> dict:
    """Packaged YAML defaults for a task; eprop-plus overrides merged on top."""
    fname = _CONFIG_FILES[task]
    text = importlib.resources.files("epropsim.configs").joinpath(fname).read_text()
    data = yaml.safe_load(text)
    base = {"task_params": data.get("task_params", {}), "network": data.get("network", {})}
    if variant == VARIANT_EPROP_PLUS and "eprop_plus_overrides" in data:
        _deep_update(base, data["eprop_plus_overrides"])
    return base


def _deep_update(dst: dict, src: dict) -> dict:
    for key, val in src.items():
        if isinstance(val, dict) and isinstance(dst.get(key), dict):
            _deep_update(dst[key], val)
        else:
            dst[key] = val
    return dst


def default_spec(task: str, variant: str = VARIANT_BSSHSLM, **overrides) -> RunSpec:
    defaults = load_task_defaults(task, variant)
    task_params = defaults["task_params"]
    network = defaults["network"]
    network["variant"] = variant
    task_params.update(overrides.pop("task_params", {}))
    _deep_update(network, overrides.pop("network", {}))
    return RunSpec(task=task, variant=variant, task_params=task_params, network=network, **overrides)


def _network_from_spec(spec: RunSpec) -> Network:
    net_dict = dict(spec.network)
    net_dict.setdefault("seed", spec.seed)
    net_dict["seed"] = spec.seed
    cfg = config_from_dict(net_dict)
    return build_network(cfg)


def build_pattern_run(spec: RunSpec):
    tp = spec.task_params
    net = _network_from_spec(spec)
    sample = gen_pattern_task(
        seed=spec.seed,
        n_steps=tp.get("n_steps", 1000),
        n_in=spec.network["n_in"],
        n_readouts=spec.network["n_out"],
        rate_hz=tp.get("rate_hz", 50.0),
    )

    def stream(iteration, index, training):
        return sample  # frozen input pattern, identical across iterations

    return net, stream


def build_evidence_run(spec: RunSpec):
    tp = spec.task_params
    net = _network_from_spec(spec)
    cfg = EvidenceTaskConfig(
        n_cues=tp.get("n_cues", 5),
        cue_steps=tp.get("cue_steps", 60),
        gap_steps=tp.get("gap_steps", 20),
        delay_steps=tp.get("delay_steps", 400),
        recall_steps=tp.get("recall_steps", 120),
        n_left=tp.get("population_size", 10),
        n_right=tp.get("population_size", 10),
        n_background=tp.get("population_size", 10),
        n_recall=tp.get("population_size", 10),
        cue_rate_hz=tp.get("cue_rate_hz", 100.0),
        background_rate_hz=tp.get("background_rate_hz", 10.0),
        recall_rate_hz=tp.get("recall_rate_hz", 100.0),
    )
    if cfg.n_steps != spec.network["update_interval"]:
        raise ValueError(
            f"evidence timing gives {cfg.n_steps} steps but update_interval is "
            f"{spec.network['update_interval']}"
        )
    rng_train = np.random.default_rng(np.random.SeedSequence([spec.seed, 1]))
    rng_eval = np.random.default_rng(np.random.SeedSequence([spec.seed, 2]))

    def stream(iteration, index, training):
        return gen_evidence_task(rng_train if training else rng_eval, cfg)

    return net, stream


def build_nmnist_run(spec: RunSpec):
    tp = spec.task_params
    if not spec.dataset_path:
        raise ValueError("nmnist runs need --dataset-path (or EPROPSIM_NMNIST_PATH)")
    digits = tuple(tp.get("digits", list(range(10))))
    limit = tp.get("limit_per_digit")
    pixel_map = build_pixel_map(
        spec.dataset_path,
        digits=digits,
        min_events=tp.get("min_pixel_events", 2),
        limit_per_digit=limit,
    )
    n_channels = int(pixel_map.max()) + 1
    n_steps = tp.get("n_steps", 310)
    samples = list(
        load_nmnist(
            spec.dataset_path,
            pixel_map,
            digits=digits,
            n_steps=n_steps,
            limit_per_digit=limit,
        )
    )
    if not samples:
        raise ValueError("no N-MNIST samples found under the dataset path")
    spec.network["n_in"] = n_channels
    spec.network["n_out"] = len(digits)
    net = _network_from_spec(spec)
    order = np.random.default_rng(np.random.SeedSequence([spec.seed, 3])).permutation(len(samples))

    def stream(iteration, index, training):
        batch = spec.network["opt"]["batch_size"]
        pos = (iteration * batch + index) % len(samples)
        return samples[order[pos]][1]

    return net, stream


_BUILDERS = {
    TASK_PATTERN: build_pattern_run,
    TASK_EVIDENCE: build_evidence_run,
    TASK_NMNIST: build_nmnist_run,
}


def execute(spec: RunSpec, output_dir: str | Path) -> list[MetricsRow]:
    """Run one experiment and write metrics.csv + manifest.json (+ dumps)."""
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    if spec.task == TASK_SCALING:
        return _execute_scaling(spec, out)
    net, stream = _BUILDERS[spec.task](spec)
    if spec.dump_weights:
        write_weights_csv(out / "weights_before.csv", net.weights_copy())
    rows = run_training(
        net,
        stream,
        spec.iterations,
        mode=spec.mode,
        eval_every=spec.eval_every,
        eval_samples=spec.eval_samples,
    )
    write_metrics_csv(out / "metrics.csv", rows)
    write_manifest(out / "manifest.json", spec.to_dict())
    if spec.dump_weights:
        net.flush_per_spike()
        write_weights_csv(out / "weights_after.csv", net.weights_copy())
    if spec.record_raster:
        net.reset_dynamics() if net.cfg.reset_between_iterations else None
        res = net.run_sample(stream(spec.iterations, 0, False), mode=spec.mode, learn=False,
                             record_spikes=True)
        write_raster_csv(out / "raster.csv", res.spikes or [])
    return rows


def _execute_scaling(spec: RunSpec, out: Path) -> list[MetricsRow]:
    from .scaling import run_scaling_benchmark

    tp = spec.task_params
    net = gen_scaling_network(
        scale=tp.get("scale", 1.0),
        seed=spec.seed,
        n_rec_base=tp.get("n_rec", 10_000),
        n_in_base=tp.get("n_in", 1000),
        n_out_base=tp.get("n_out", 10),
        indeg_in=tp.get("indeg_in", 100),
        indeg_rec=tp.get("indeg_rec", 100),
        indeg_out=tp.get("indeg_out", 1000),
        fb_outdeg=tp.get("fb_outdeg", 100),
        rate_hz=tp.get("rate_hz", 5.0),
    )
    workers_list = tp.get("workers_list") or [spec.workers]
    duration = tp.get("duration_s", 20.0)
    results = []
    for plastic in (False, True):
        for w in workers_list:
            if plastic and not tp.get("plastic_all_workers", False) and w != workers_list[0]:
                continue
            results.append(
                run_scaling_benchmark(
                    net,
                    duration_s=duration,
                    workers=w,
                    plastic=plastic,
                    seed=spec.seed,
                    cutoff=tp.get("cutoff", 64),
                )
            )
    import csv

    with open(out / "scaling.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["workers", "plastic", "duration_s", "runtime_s", "real_time_factor",
                    "rate_hz", "n_spikes", "spike_hash"])
        for r in results:
            w.writerow([r.workers, int(r.plastic), r.duration_s, repr(r.runtime_s),
                        repr(r.real_time_factor), repr(r.rate_hz), r.n_spikes, r.spike_hash])
    write_manifest(out / "manifest.json", spec.to_dict())
    rows = [
        MetricsRow(iteration=i, phase="scaling", loss=0.0, prediction_error=None,
                   spikes_recurrent=r.n_spikes, runtime_s=r.runtime_s)
        for i, r in enumerate(results)
    ]
    write_metrics_csv(out / "metrics.csv", rows)
    return rows
