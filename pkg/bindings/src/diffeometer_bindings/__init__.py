"""Thin array-in/array-out bindings over the diffeometer core.

These helpers contain no numerics of their own: every operation delegates to
the core package and matches its results bit for bit. Arrays are exchanged
as contiguous float64 buffers; contiguous float64 inputs pass through
zero-copy, anything else incurs exactly one conversion copy.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from diffeometer import (
    BILINEAR,
    DiffeoSpec,
    DisplacementGrid,
    Gaussian,
    Image,
    apply_diffeo,
    evaluate_displacement,
    gaussian_smooth,
    load_probe_inputs,
    sample_fields,
    write_probe_outputs,
)

__version__ = "0.1.0"

__all__ = ["as_bound_array", "py_sample", "py_deform", "ProbeSession", "py_probe_helpers"]


def as_bound_array(arr) -> np.ndarray:
    """Contiguous float64 view of ``arr``; copies only when required."""
    return np.ascontiguousarray(arr, dtype=np.float64)


def py_sample(n: int, T: float, c: int, seed: int, index: int = 0) -> np.ndarray:
    """Displacement grid (2, n, n) for sample ``index`` of the given ensemble.

    Identical numerics to the core: the same per-sample stream derivation
    the CLI uses, so the result is bitwise-equal to the corresponding
    displacement_*.npy payload.
    """
    spec = DiffeoSpec(n=n, T=T, c=c, seed=seed)
    field = sample_fields(spec, 1, start_index=index)[0]
    grid = evaluate_displacement(field)
    return np.stack([grid.tau_u, grid.tau_v])


def _kind(kind: str, sigma: float | None):
    if kind == "bilinear":
        return BILINEAR
    if kind == "gaussian":
        return Gaussian() if sigma is None else Gaussian(sigma=sigma)
    raise ValueError(f"kind must be 'bilinear' or 'gaussian', got {kind!r}")


def py_deform(image, displacement, kind: str = "bilinear", sigma: float | None = None):
    """Warp ``image`` by a (2, n, n) displacement array.

    Accepts (n, n), (C, n, n) or batched (B, C, n, n) images and returns the
    same layout. For ``kind='gaussian'`` returns (deformed, baseline) where
    the baseline is the smoothed zero-displacement image the core compares
    against.
    """
    disp = as_bound_array(displacement)
    if disp.ndim != 3 or disp.shape[0] != 2:
        raise ValueError(f"displacement must have shape (2, n, n), got {disp.shape}")
    grid = DisplacementGrid(n=disp.shape[1], tau_u=disp[0], tau_v=disp[1])
    k = _kind(kind, sigma)

    arr = as_bound_array(image)
    squeeze = None
    if arr.ndim == 2:
        batch, squeeze = arr[None, None], "image"
    elif arr.ndim == 3:
        batch, squeeze = arr[None], "batch"
    elif arr.ndim == 4:
        batch = arr
    else:
        raise ValueError(f"image must have 2-4 dimensions, got shape {arr.shape}")

    warped = np.stack([apply_diffeo(Image(data=item), grid, k).data for item in batch])
    if isinstance(k, Gaussian):
        base = np.stack([gaussian_smooth(Image(data=item), k.sigma).data for item in batch])
        return _unsqueeze(warped, squeeze), _unsqueeze(base, squeeze)
    return _unsqueeze(warped, squeeze)


def _unsqueeze(batch: np.ndarray, squeeze: str | None) -> np.ndarray:
    if squeeze == "image":
        return batch[0, 0]
    if squeeze == "batch":
        return batch[0]
    return batch


class ProbeSession:
    """Client for an emitted probe directory: read batches, write outputs.

    Iteration follows manifest index order (x, then tau_x, then x_noise).
    The writer validates shapes and the output dimension before anything is
    written; a wrong k is rejected up front.
    """

    def __init__(self, manifest_path):
        path = Path(manifest_path)
        self.probe_dir = path.parent if path.is_file() else path
        self.manifest, self._arrays = load_probe_inputs(self.probe_dir)
        cfg = self.manifest["config"]
        self.n_images = cfg["n_images"]
        self.n_transforms = cfg["n_transforms_per_image"]

    def batches(self, batch_size: int = 256):
        """Yield (tensor_name, start_row, array_chunk) over all three inputs."""
        for name in ("x", "tau_x", "x_noise"):
            tensor = self._arrays[name]
            for i in range(0, tensor.shape[0], batch_size):
                yield name, i, tensor[i : i + batch_size]

    def write_outputs(self, f_x, f_tau_x, f_noise) -> None:
        write_probe_outputs(
            self.probe_dir,
            as_bound_array(f_x),
            as_bound_array(f_tau_x),
            as_bound_array(f_noise),
        )


def py_probe_helpers(manifest_path) -> ProbeSession:
    """Open an emitted probe directory for an external evaluation loop."""
    return ProbeSession(manifest_path)
