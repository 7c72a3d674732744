"""Stability of black-box predictors under smooth warps vs. generic noise.

For a predictor f probed on a set of images, three ratios are measured:

    D_f = agg ||f(warped x) - f(x)||^2 / agg ||f(x) - f(z)||^2
    G_f = agg ||f(x + eta)  - f(x)||^2 / agg ||f(x) - f(z)||^2
    R_f = D_f / G_f

where the warps are drawn from the max-entropy ensemble at a target RMS
pixel displacement (default 1), and eta is sampled uniformly on the sphere
whose radius is the mean warp-induced change ||warped x - x|| (so the two
perturbations have matched norms). The denominator runs over distinct pairs
of probe images. Under Gaussian interpolation every comparison uses the
smoothed baseline image, never the raw input.

agg is the median (default) or mean, taken jointly over all pairs.
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, replace

import numpy as np

from .diffeo import DiffeoSpec, evaluate_displacement, sample_field, temperature_for_delta
from .errors import DegeneratePredictorError, ParameterError
from .interpolation import BILINEAR, Bilinear, Gaussian, Image, InterpolationKind, apply_diffeo, gaussian_smooth
from .rng import derive_stream

__all__ = [
    "Predictor",
    "LinearPredictor",
    "IdentityPredictor",
    "RandomFeaturePredictor",
    "ProbeConfig",
    "StabilityReport",
    "kind_to_dict",
    "kind_from_dict",
    "calibrate_noise_norm",
    "sample_sphere_noise",
    "compute_stability",
    "log_average",
    "stability_vs_delta_sweep",
]

# spawn-key tags for the independent sub-streams of a probe seed
_FIELD_STREAM, _NOISE_STREAM, _PAIR_STREAM = 0, 1, 2

_MAX_EXACT_PAIR_IMAGES = 512


class Predictor(ABC):
    """Deterministic map from an image batch (B, C, n, n) to outputs (B, k)."""

    name: str = "predictor"
    output_dim: int

    @abstractmethod
    def __call__(self, batch: np.ndarray) -> np.ndarray: ...


class LinearPredictor(Predictor):
    """Fixed random Gaussian linear map on flattened images."""

    def __init__(self, input_dim: int, output_dim: int, seed: int = 0):
        self.output_dim = output_dim
        self.name = f"linear(k={output_dim},seed={seed})"
        self.matrix = derive_stream(seed).standard_normal((output_dim, input_dim))

    def __call__(self, batch: np.ndarray) -> np.ndarray:
        return batch.reshape(batch.shape[0], -1) @ self.matrix.T


class IdentityPredictor(Predictor):
    """f(x) = flattened x; useful as an exactly known reference."""

    def __init__(self, input_dim: int):
        self.output_dim = input_dim
        self.name = "identity"

    def __call__(self, batch: np.ndarray) -> np.ndarray:
        return batch.reshape(batch.shape[0], -1).astype(np.float64, copy=True)


class RandomFeaturePredictor(Predictor):
    """Frozen random features with a pointwise nonlinearity and random readout."""

    def __init__(self, input_dim: int, output_dim: int, n_features: int = 512,
                 seed: int = 0, activation: str = "relu"):
        if activation not in ("relu", "tanh"):
            raise ParameterError(f"unknown activation {activation!r}")
        rng = derive_stream(seed)
        self.W = rng.standard_normal((n_features, input_dim)) / math.sqrt(input_dim)
        self.V = rng.standard_normal((output_dim, n_features)) / math.sqrt(n_features)
        self.activation = activation
        self.output_dim = output_dim
        self.name = f"random-features({activation},m={n_features},seed={seed})"

    def __call__(self, batch: np.ndarray) -> np.ndarray:
        z = batch.reshape(batch.shape[0], -1) @ self.W.T
        phi = np.maximum(z, 0.0) if self.activation == "relu" else np.tanh(z)
        return phi @ self.V.T


def kind_to_dict(kind: InterpolationKind) -> dict:
    if isinstance(kind, Bilinear):
        return {"kind": "bilinear"}
    return {"kind": "gaussian", "sigma": kind.sigma}


def kind_from_dict(d: dict) -> InterpolationKind:
    if d["kind"] == "bilinear":
        return BILINEAR
    if d["kind"] == "gaussian":
        return Gaussian(sigma=d.get("sigma", Gaussian().sigma))
    raise ParameterError(f"unknown interpolation kind {d!r}")


@dataclass(frozen=True)
class ProbeConfig:
    """Parameters of one stability measurement."""

    n: int
    c: int
    delta: float = 1.0
    kind: InterpolationKind = BILINEAR
    n_images: int | None = None          # None: use all provided images
    n_transforms_per_image: int = 4
    aggregation: str = "median"
    seed: int = 0

    def __post_init__(self):
        if self.aggregation not in ("median", "mean"):
            raise ParameterError(f"aggregation must be 'median' or 'mean', got {self.aggregation!r}")
        if self.n_transforms_per_image < 1:
            raise ParameterError("n_transforms_per_image must be >= 1")
        if self.n_images is not None and self.n_images < 2:
            raise ParameterError("n_images must be >= 2 (the denominator needs pairs)")
        if not self.delta > 0:
            raise ParameterError(f"target delta must be > 0, got {self.delta}")


@dataclass(frozen=True)
class StabilityReport:
    """D_f, G_f, R_f plus the configuration that produced them."""

    d_f: float
    g_f: float
    r_f: float
    noise_norm: float
    n_images: int
    n_transforms_per_image: int
    aggregation: str
    delta: float
    c: int
    T: float
    interpolation: dict
    seed: int
    num_diffeo: float
    num_noise: float
    denom: float
    realizations: int = 1
    excluded: int = 0
    # the median/mean is taken jointly over all (image, perturbation) pairs,
    # not per image first
    aggregation_scope: str = "joint-over-pairs"

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def _agg(values: np.ndarray, mode: str) -> float:
    return float(np.median(values) if mode == "median" else np.mean(values))


def sample_sphere_noise(dim: int, radius: float, rng: np.random.Generator) -> np.ndarray:
    """Uniform draw on the sphere of the given radius in R^dim."""
    if dim < 1:
        raise ParameterError(f"dim must be >= 1, got {dim}")
    if radius < 0:
        raise ParameterError(f"radius must be >= 0, got {radius}")
    if radius == 0:
        return np.zeros(dim)
    while True:
        g = rng.standard_normal(dim)
        norm = np.linalg.norm(g)
        if norm > 0:
            return g * (radius / norm)


def _as_image_array(images) -> np.ndarray:
    """Stack Image objects or pass through an (N, C, n, n) / (N, n, n) array."""
    if isinstance(images, np.ndarray):
        arr = images.astype(np.float64, copy=False)
        if arr.ndim == 3:
            arr = arr[:, None]
        if arr.ndim != 4 or arr.shape[2] != arr.shape[3]:
            raise ParameterError(f"image batch must be (N, C, n, n), got {arr.shape}")
        return arr
    return np.stack([im.data for im in images])


def calibrate_noise_norm(images, fields, kind: InterpolationKind = BILINEAR) -> float:
    """Mean ||warped x - baseline x|| over all (image, field) pairs.

    The mean (not median) is used regardless of the aggregation mode; this
    is the radius at which sphere noise is norm-matched to the warps.
    """
    arr = _as_image_array(images)
    fields = list(fields)
    if arr.shape[0] == 0 or not fields:
        raise ParameterError("calibration needs at least one image and one field")
    base, warped = _warp_batch(arr, fields, kind)
    t = len(fields)
    norms = [
        np.linalg.norm(warped[i * t + j] - base[i])
        for i in range(arr.shape[0])
        for j in range(t)
    ]
    return float(np.mean(norms))


def _warp_batch(arr: np.ndarray, fields, kind: InterpolationKind):
    """Baselines (N,C,n,n) and warped images (N*t,C,n,n), image-major order."""
    grids = [evaluate_displacement(f) for f in fields]
    imgs = [Image(data=a) for a in arr]
    if isinstance(kind, Gaussian):
        base = np.stack([gaussian_smooth(im, kind.sigma).data for im in imgs])
    else:
        base = arr.copy()
    warped = np.stack([apply_diffeo(im, g, kind).data for im in imgs for g in grids])
    return base, warped


@dataclass(frozen=True)
class ProbeArrays:
    """Everything an external predictor needs, plus the metadata to score it."""

    config: ProbeConfig
    T: float
    noise_norm: float
    x: np.ndarray         # (N, C, n, n) baseline images
    tau_x: np.ndarray     # (N*t, C, n, n), index = image*t + transform
    x_noise: np.ndarray   # (N*t, C, n, n), same ordering


def assemble_probe(probe: ProbeConfig, images) -> ProbeArrays:
    """Build the probe tensors for a configuration and image set.

    Shared by the in-process path and the file-exchange protocol, so the two
    produce identical numbers by construction.
    """
    arr = _as_image_array(images)
    if probe.n_images is not None:
        if arr.shape[0] < probe.n_images:
            raise ParameterError(f"need {probe.n_images} images, got {arr.shape[0]}")
        arr = arr[: probe.n_images]
    n_img = arr.shape[0]
    if n_img < 2:
        raise ParameterError("probe needs at least 2 images for the denominator pairs")
    if arr.shape[2] != probe.n:
        raise ParameterError(f"images have side {arr.shape[2]}, probe expects {probe.n}")

    T = temperature_for_delta(probe.n, probe.c, probe.delta)
    spec = DiffeoSpec(n=probe.n, T=T, c=probe.c, seed=probe.seed)
    fields = [
        sample_field(spec, derive_stream(probe.seed, _FIELD_STREAM, k))
        for k in range(probe.n_transforms_per_image)
    ]
    base, warped = _warp_batch(arr, fields, probe.kind)

    t = probe.n_transforms_per_image
    norms = np.array([
        np.linalg.norm(warped[i * t + j] - base[i])
        for i in range(n_img)
        for j in range(t)
    ])
    noise_norm = float(np.mean(norms))

    dim = base[0].size
    noisy = np.empty_like(warped)
    for i in range(n_img):
        for j in range(t):
            eta = sample_sphere_noise(dim, noise_norm, derive_stream(probe.seed, _NOISE_STREAM, i, j))
            noisy[i * t + j] = base[i] + eta.reshape(base[i].shape)
    return ProbeArrays(config=probe, T=T, noise_norm=noise_norm, x=base, tau_x=warped, x_noise=noisy)


def _denominator_pairs(n_img: int, seed: int) -> np.ndarray:
    """Index pairs for the output-variability denominator.

    All distinct unordered pairs up to 512 images; beyond that, 512*N random
    pairs from a dedicated stream.
    """
    if n_img <= _MAX_EXACT_PAIR_IMAGES:
        a, b = np.triu_indices(n_img, k=1)
        return np.stack([a, b], axis=1)
    rng = derive_stream(seed, _PAIR_STREAM)
    count = _MAX_EXACT_PAIR_IMAGES * n_img
    a = rng.integers(0, n_img, size=count)
    shift = rng.integers(1, n_img, size=count)
    return np.stack([a, (a + shift) % n_img], axis=1)


def score_probe_outputs(probe: ProbeConfig, T: float, noise_norm: float,
                        f_x: np.ndarray, f_tau_x: np.ndarray, f_noise: np.ndarray) -> StabilityReport:
    """Turn predictor outputs on the probe tensors into a StabilityReport."""
    n_img = f_x.shape[0]
    t = probe.n_transforms_per_image
    if f_tau_x.shape != (n_img * t, f_x.shape[1]) or f_noise.shape != f_tau_x.shape:
        raise ParameterError(
            f"output shapes inconsistent: f_x {f_x.shape}, f_tau_x {f_tau_x.shape}, f_noise {f_noise.shape}"
        )
    f_x_rep = np.repeat(f_x, t, axis=0)
    num_d = _agg(np.sum((f_tau_x - f_x_rep) ** 2, axis=1), probe.aggregation)
    num_g = _agg(np.sum((f_noise - f_x_rep) ** 2, axis=1), probe.aggregation)
    pairs = _denominator_pairs(n_img, probe.seed)
    den = _agg(np.sum((f_x[pairs[:, 0]] - f_x[pairs[:, 1]]) ** 2, axis=1), probe.aggregation)
    if den == 0.0:
        raise DegeneratePredictorError(
            "predictor is constant over the probe set; stability ratios are undefined"
        )
    if num_g == 0.0:
        raise DegeneratePredictorError(
            "predictor does not respond to noise probes; R_f is undefined"
        )
    d_f = num_d / den
    g_f = num_g / den
    return StabilityReport(
        d_f=d_f,
        g_f=g_f,
        r_f=d_f / g_f,
        noise_norm=noise_norm,
        n_images=n_img,
        n_transforms_per_image=t,
        aggregation=probe.aggregation,
        delta=probe.delta,
        c=probe.c,
        T=T,
        interpolation=kind_to_dict(probe.kind),
        seed=probe.seed,
        num_diffeo=num_d,
        num_noise=num_g,
        denom=den,
    )


def compute_stability(f: Predictor, probe: ProbeConfig, images) -> StabilityReport:
    """Measure D_f, G_f, R_f for a predictor over a probe image set."""
    arrays = assemble_probe(probe, images)
    return score_probe_outputs(
        probe, arrays.T, arrays.noise_norm,
        np.asarray(f(arrays.x), dtype=np.float64),
        np.asarray(f(arrays.tau_x), dtype=np.float64),
        np.asarray(f(arrays.x_noise), dtype=np.float64),
    )


def log_average(reports) -> StabilityReport:
    """Geometric mean of D_f, G_f, R_f across realizations.

    Non-positive values are excluded (counted in ``excluded``). The output's
    R_f is both the geometric mean of the inputs' R_f and the ratio of the
    averaged D_f and G_f; geometric means commute with ratios.
    """
    reports = list(reports)
    if not reports:
        raise ParameterError("log_average needs at least one report")
    ref = reports[0]
    for r in reports[1:]:
        if (r.delta, r.c, r.aggregation, r.interpolation, r.n_transforms_per_image) != (
            ref.delta, ref.c, ref.aggregation, ref.interpolation, ref.n_transforms_per_image,
        ):
            raise ParameterError("log_average requires reports from a shared configuration")
    kept = [r for r in reports if r.d_f > 0 and r.g_f > 0 and r.r_f > 0]
    excluded = len(reports) - len(kept)
    if not kept:
        raise ParameterError("no strictly positive reports to average")

    def gmean(vals):
        return float(np.exp(np.mean(np.log(vals))))

    d = gmean([r.d_f for r in kept])
    g = gmean([r.g_f for r in kept])
    return StabilityReport(
        d_f=d,
        g_f=g,
        r_f=d / g,
        noise_norm=gmean([r.noise_norm for r in kept]),
        n_images=ref.n_images,
        n_transforms_per_image=ref.n_transforms_per_image,
        aggregation=ref.aggregation,
        delta=ref.delta,
        c=ref.c,
        T=ref.T,
        interpolation=ref.interpolation,
        seed=ref.seed,
        num_diffeo=gmean([r.num_diffeo for r in kept]),
        num_noise=gmean([r.num_noise for r in kept]),
        denom=gmean([r.denom for r in kept]),
        realizations=len(kept),
        excluded=excluded,
    )


def stability_vs_delta_sweep(f: Predictor, deltas, probe: ProbeConfig, images) -> list[StabilityReport]:
    """One report per target delta, sharing the image set and seeds.

    The underlying normal draws are identical across deltas (only the
    temperature scale changes), so rows are directly comparable.
    """
    deltas = list(deltas)
    if any(d <= 0 for d in deltas) or sorted(deltas) != deltas:
        raise ParameterError("deltas must be positive and ascending")
    return [compute_stability(f, replace(probe, delta=d), images) for d in deltas]


def sweep_rows(reports) -> list[dict]:
    """Flatten sweep reports into rows ready for csv.DictWriter / json.dump."""
    rows = []
    for rep in reports:
        row = rep.to_dict()
        row["interpolation"] = row["interpolation"]["kind"]
        rows.append(row)
    return rows


def write_sweep_csv(reports, path) -> None:
    """Write a delta-sweep (or any report list) as a CSV table."""
    import csv
    import io

    from ._fsio import atomic_write_bytes

    rows = sweep_rows(reports)
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(rows[0].keys()))
    writer.writeheader()
    writer.writerows(rows)
    atomic_write_bytes(path, buf.getvalue().encode())
