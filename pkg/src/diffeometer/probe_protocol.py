"""File-exchange protocol for probing external predictors.

``emit`` writes everything a model process needs as NPY tensors:

    x.npy        (N, C, n, n)    baseline images (smoothed under Gaussian)
    tau_x.npy    (N*t, C, n, n)  warped images, index = image*t + transform
    x_noise.npy  (N*t, C, n, n)  baselines plus matched-norm sphere noise

plus probe_manifest.json pinning the full configuration, the calibrated
noise norm, input hashes, and an integrity digest. The external process
evaluates its model and writes float64 outputs of shape (batch, k):

    f_x.npy, f_tau_x.npy, f_noise.npy

``collect`` then computes the StabilityReport from the outputs alone, with
exactly the same arithmetic as the in-process path.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import __version__
from ._fsio import atomic_write_npy, atomic_write_text, canonical_json, sha256_file, sha256_text
from .errors import ParameterError, ProtocolError
from .stability import (
    ProbeConfig,
    StabilityReport,
    assemble_probe,
    kind_from_dict,
    kind_to_dict,
    score_probe_outputs,
)

__all__ = [
    "MANIFEST_NAME",
    "emit_probe",
    "collect_probe",
    "load_probe_inputs",
    "write_probe_outputs",
    "run_predictor_on_probe",
]

MANIFEST_NAME = "probe_manifest.json"
PROBE_FORMAT = "diffeometer/probe-v1"

_INPUT_FILES = {"x": "x.npy", "tau_x": "tau_x.npy", "x_noise": "x_noise.npy"}
_OUTPUT_FILES = {"f_x": "f_x.npy", "f_tau_x": "f_tau_x.npy", "f_noise": "f_noise.npy"}


def _manifest_digest(manifest: dict) -> str:
    body = {k: v for k, v in manifest.items() if k != "integrity"}
    return sha256_text(canonical_json(body))


def emit_probe(probe: ProbeConfig, images, out_dir) -> Path:
    """Assemble the probe and write the exchange directory; returns manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    arrays = assemble_probe(probe, images)
    for key, arr in (("x", arrays.x), ("tau_x", arrays.tau_x), ("x_noise", arrays.x_noise)):
        atomic_write_npy(out_dir / _INPUT_FILES[key], arr.astype("<f8"))
    manifest = {
        "format": PROBE_FORMAT,
        "tool_version": __version__,
        "config": {
            "n": probe.n,
            "channels": int(arrays.x.shape[1]),
            "c": probe.c,
            "delta": probe.delta,
            "T": arrays.T,
            "interpolation": kind_to_dict(probe.kind),
            "n_images": int(arrays.x.shape[0]),
            "n_transforms_per_image": probe.n_transforms_per_image,
            "aggregation": probe.aggregation,
            "seed": probe.seed,
        },
        "noise_norm": arrays.noise_norm,
        "files": dict(_INPUT_FILES),
        "outputs": dict(_OUTPUT_FILES),
        "sha256": {name: sha256_file(out_dir / name) for name in _INPUT_FILES.values()},
    }
    manifest["integrity"] = _manifest_digest(manifest)
    path = out_dir / MANIFEST_NAME
    atomic_write_text(path, json.dumps(manifest, indent=2) + "\n")
    return path


def _read_manifest(probe_dir: Path) -> dict:
    path = probe_dir / MANIFEST_NAME
    if not path.exists():
        raise ProtocolError(f"missing manifest: {path}")
    manifest = json.loads(path.read_text())
    if manifest.get("format") != PROBE_FORMAT:
        raise ProtocolError(f"unrecognized probe format in {path}")
    if manifest.get("integrity") != _manifest_digest(manifest):
        raise ProtocolError(
            "manifest integrity check failed: probe_manifest.json was modified after emit"
        )
    return manifest


def _probe_config(manifest: dict) -> ProbeConfig:
    cfg = manifest["config"]
    return ProbeConfig(
        n=cfg["n"],
        c=cfg["c"],
        delta=cfg["delta"],
        kind=kind_from_dict(cfg["interpolation"]),
        n_images=cfg["n_images"],
        n_transforms_per_image=cfg["n_transforms_per_image"],
        aggregation=cfg["aggregation"],
        seed=cfg["seed"],
    )


def _load_output(probe_dir: Path, name: str, expected_rows: int) -> np.ndarray:
    path = probe_dir / name
    if not path.exists():
        raise ProtocolError(f"missing predictor output file: {name}")
    arr = np.load(path, allow_pickle=False)
    if arr.dtype != np.float64:
        raise ProtocolError(f"{name} must be float64, got {arr.dtype}")
    if arr.ndim != 2 or arr.shape[0] != expected_rows:
        raise ProtocolError(f"{name} must have shape ({expected_rows}, k), got {arr.shape}")
    return arr


def collect_probe(probe_dir) -> StabilityReport:
    """Score the predictor outputs found in an emitted probe directory."""
    probe_dir = Path(probe_dir)
    manifest = _read_manifest(probe_dir)
    probe = _probe_config(manifest)
    n_pairs = probe.n_images * probe.n_transforms_per_image
    f_x = _load_output(probe_dir, manifest["outputs"]["f_x"], probe.n_images)
    f_tau = _load_output(probe_dir, manifest["outputs"]["f_tau_x"], n_pairs)
    f_noise = _load_output(probe_dir, manifest["outputs"]["f_noise"], n_pairs)
    if f_tau.shape[1] != f_x.shape[1] or f_noise.shape[1] != f_x.shape[1]:
        raise ProtocolError(
            f"output dimensions disagree: k={f_x.shape[1]}, {f_tau.shape[1]}, {f_noise.shape[1]}"
        )
    return score_probe_outputs(
        probe, manifest["config"]["T"], manifest["noise_norm"], f_x, f_tau, f_noise
    )


def load_probe_inputs(probe_dir) -> tuple[dict, dict[str, np.ndarray]]:
    """Manifest plus the three input tensors, verified against their hashes."""
    probe_dir = Path(probe_dir)
    manifest = _read_manifest(probe_dir)
    arrays = {}
    for key, name in manifest["files"].items():
        path = probe_dir / name
        if not path.exists():
            raise ProtocolError(f"missing probe input file: {name}")
        if sha256_file(path) != manifest["sha256"][name]:
            raise ProtocolError(f"probe input {name} does not match its manifest hash")
        arrays[key] = np.load(path, allow_pickle=False)
    return manifest, arrays


def write_probe_outputs(probe_dir, f_x: np.ndarray, f_tau_x: np.ndarray, f_noise: np.ndarray) -> None:
    """Validate output shapes against the manifest and write f_*.npy."""
    probe_dir = Path(probe_dir)
    manifest = _read_manifest(probe_dir)
    cfg = manifest["config"]
    rows = {
        "f_x": cfg["n_images"],
        "f_tau_x": cfg["n_images"] * cfg["n_transforms_per_image"],
        "f_noise": cfg["n_images"] * cfg["n_transforms_per_image"],
    }
    outs = {"f_x": f_x, "f_tau_x": f_tau_x, "f_noise": f_noise}
    k = None
    for key, arr in outs.items():
        arr = np.asarray(arr)
        if arr.ndim != 2 or arr.shape[0] != rows[key]:
            raise ProtocolError(f"{key} must have shape ({rows[key]}, k), got {arr.shape}")
        if k is None:
            k = arr.shape[1]
        elif arr.shape[1] != k:
            raise ProtocolError(f"output dimension mismatch: {key} has k={arr.shape[1]}, expected {k}")
    for key, arr in outs.items():
        atomic_write_npy(probe_dir / manifest["outputs"][key], np.asarray(arr, dtype="<f8"))


def run_predictor_on_probe(probe_dir, predictor, batch_size: int = 256) -> None:
    """Convenience driver: evaluate an in-process predictor over an emitted probe."""
    _, arrays = load_probe_inputs(probe_dir)

    def in_batches(tensor):
        outs = [predictor(tensor[i : i + batch_size]) for i in range(0, tensor.shape[0], batch_size)]
        return np.concatenate(outs, axis=0)

    write_probe_outputs(
        probe_dir,
        in_batches(arrays["x"]),
        in_batches(arrays["tau_x"]),
        in_batches(arrays["x_noise"]),
    )
