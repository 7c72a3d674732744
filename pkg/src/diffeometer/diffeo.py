"""Maximum-entropy displacement fields on the unit square.

A field is a pair of independent random sine series

    tau_u(u, v) = sum_ij C_ij sin(i pi u) sin(j pi v)      (same for tau_v with D)

with coefficients drawn as centered Gaussians of variance T / (i^2 + j^2),
restricted to the frequency disk i^2 + j^2 <= c^2. The temperature T sets the
deformation amplitude, the cutoff c the smallest feature size. Fixed (zero)
boundary conditions hold by construction: every basis function vanishes on
the frame of the square.

Coordinates: the unit square [0,1]^2 with u along array axis 0 and v along
array axis 1. Pixel p of an n-pixel side sits at the cell center
(p + 1/2) / n, so no sample point lies exactly on the zero-displacement
frame. Displacements are stored in unit-square units; multiply by n for
pixel units.
"""

from __future__ import annotations

import dataclasses
import json
import threading
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ParameterError
from .rng import derive_stream

__all__ = [
    "DiffeoSpec",
    "DiffeoField",
    "DisplacementGrid",
    "ValidityReport",
    "mode_indices",
    "inverse_mode_sum",
    "sample_field",
    "sample_fields",
    "evaluate_displacement",
    "displacement_at",
    "grad_norm_sq",
    "field_delta",
    "expected_delta",
    "expected_delta_asymptotic",
    "temperature_for_delta",
    "xi_field",
    "xi_from_jacobian",
    "xi_clamp_count",
    "validity",
    "validity_bounds",
    "save_field",
    "load_field",
    "save_grid",
    "load_grid",
]


@dataclass(frozen=True)
class DiffeoSpec:
    """Ensemble parameters: grid side n, temperature T, frequency cutoff c."""

    n: int
    T: float
    c: int
    seed: int = 0

    def __post_init__(self):
        if self.n < 2:
            raise ParameterError(f"n must be >= 2, got {self.n}")
        if self.c < 1:
            raise ParameterError(f"c must be >= 1, got {self.c}")
        if self.c > self.n:
            raise ParameterError(
                f"cutoff c={self.c} exceeds grid side n={self.n}; "
                "frequencies above the pixel grid are meaningless"
            )
        if not np.isfinite(self.T) or self.T < 0:
            raise ParameterError(f"temperature must be finite and >= 0, got {self.T}")


def mode_indices(c: int):
    """Index vectors i, j (1-based) and the in-disk mask for cutoff c.

    Coefficient matrices are (m, m) with m = c - 1; entry (i-1, j-1) carries
    mode (i, j) and the mask is True where i^2 + j^2 <= c^2. The equality
    case is included. c = 1 gives an empty (0, 0) set.
    """
    m = c - 1
    idx = np.arange(1, m + 1)
    ii, jj = np.meshgrid(idx, idx, indexing="ij")
    mask = ii**2 + jj**2 <= c**2
    return ii, jj, mask


def inverse_mode_sum(c: int) -> float:
    """Finite sum of 1/(i^2+j^2) over the cutoff disk; 0 for c = 1."""
    ii, jj, mask = mode_indices(c)
    if not mask.any():
        return 0.0
    r2 = (ii**2 + jj**2).astype(np.float64)
    return float(np.sum(np.where(mask, 1.0 / r2, 0.0)))


@dataclass(frozen=True)
class DiffeoField:
    """Sampled coefficient matrices for the two displacement components.

    ``C`` drives tau_u, ``D`` drives tau_v; both are (c-1, c-1) float64 with
    exact zeros outside the cutoff disk. Immutable after construction.
    """

    spec: DiffeoSpec
    C: np.ndarray
    D: np.ndarray
    stream_index: int | None = None

    def __post_init__(self):
        m = self.spec.c - 1
        for name in ("C", "D"):
            arr = np.array(getattr(self, name), dtype=np.float64)
            if arr.shape != (m, m):
                raise ParameterError(
                    f"{name} must have shape ({m}, {m}) for c={self.spec.c}, got {arr.shape}"
                )
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        _, _, mask = mode_indices(self.spec.c)
        if mask.size and (self.C[~mask].any() or self.D[~mask].any()):
            raise ParameterError("coefficients outside the cutoff disk must be zero")


@dataclass(frozen=True)
class DisplacementGrid:
    """Per-pixel displacement vectors on the n x n cell-center grid.

    tau_u displaces along array axis 0, tau_v along axis 1, both in
    unit-square units. Immutable after construction.
    """

    n: int
    tau_u: np.ndarray
    tau_v: np.ndarray

    def __post_init__(self):
        for name in ("tau_u", "tau_v"):
            arr = np.array(getattr(self, name), dtype=np.float64)
            if arr.shape != (self.n, self.n):
                raise ParameterError(
                    f"{name} must have shape ({self.n}, {self.n}), got {arr.shape}"
                )
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @classmethod
    def zero(cls, n: int) -> "DisplacementGrid":
        z = np.zeros((n, n))
        return cls(n=n, tau_u=z, tau_v=z.copy())


@dataclass(frozen=True)
class ValidityReport:
    """Phase-diagram quantities for one sampled field.

    delta and grad_norm_sq are the realized (per-sample) values; T_lower and
    T_upper are the ensemble bounds delta >= 1/2 and bijectivity in T, both
    undefined (None) at c = 1 where ln c = 0.
    """

    delta: float
    grad_norm_sq: float
    xi_max: float
    is_bijective: bool
    T_lower: float | None
    T_upper: float | None

    def to_dict(self) -> dict:
        return {
            "delta": self.delta,
            "grad_norm_sq": self.grad_norm_sq,
            "xi_max": self.xi_max,
            "is_bijective": self.is_bijective,
            "T_lower": self.T_lower,
            "T_upper": self.T_upper,
        }


def sample_field(spec: DiffeoSpec, rng: np.random.Generator) -> DiffeoField:
    """Draw one field from the ensemble: C_ij, D_ij ~ N(0, T/(i^2+j^2)).

    Deterministic given (spec, rng state). Both components are drawn from a
    single (2, m, m) normal block, C first.
    """
    ii, jj, mask = mode_indices(spec.c)
    m = spec.c - 1
    if m == 0 or spec.T == 0.0:
        z = np.zeros((m, m))
        return DiffeoField(spec=spec, C=z, D=z.copy())
    std = np.where(mask, np.sqrt(spec.T / (ii**2 + jj**2)), 0.0)
    raw = rng.standard_normal((2, m, m))
    return DiffeoField(spec=spec, C=raw[0] * std, D=raw[1] * std)


def sample_fields(spec: DiffeoSpec, count: int, start_index: int = 0) -> list[DiffeoField]:
    """Draw ``count`` independent fields from per-sample streams of spec.seed.

    Sample k always uses stream (seed, start_index + k), so results do not
    depend on batching or evaluation order.
    """
    out = []
    for k in range(count):
        idx = start_index + k
        f = sample_field(spec, derive_stream(spec.seed, idx))
        out.append(dataclasses.replace(f, stream_index=idx))
    return out


def _sine_basis(n: int, m: int):
    """Sine and derivative bases at the n cell centers, modes 1..m."""
    u = (np.arange(n) + 0.5) / n
    k = np.arange(1, m + 1)
    phase = np.pi * np.outer(u, k)          # (n, m)
    return np.sin(phase), np.pi * k * np.cos(phase)


def evaluate_displacement(field: DiffeoField) -> DisplacementGrid:
    """Evaluate the sine series on the pixel-center grid."""
    n = field.spec.n
    m = field.spec.c - 1
    if m == 0:
        return DisplacementGrid.zero(n)
    S, _ = _sine_basis(n, m)
    return DisplacementGrid(n=n, tau_u=S @ field.C @ S.T, tau_v=S @ field.D @ S.T)


def displacement_at(field: DiffeoField, u, v):
    """(tau_u, tau_v) at arbitrary unit-square coordinate arrays u, v.

    u and v must broadcast against each other; used for boundary checks and
    off-grid probes. Returns float64 arrays of the broadcast shape.
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    u, v = np.broadcast_arrays(u, v)
    m = field.spec.c - 1
    if m == 0:
        return np.zeros(u.shape), np.zeros(v.shape)
    k = np.arange(1, m + 1)
    su = np.sin(np.pi * u[..., None] * k)   # (..., m)
    sv = np.sin(np.pi * v[..., None] * k)
    tu = np.einsum("...i,ij,...j->...", su, field.C, sv)
    tv = np.einsum("...i,ij,...j->...", su, field.D, sv)
    return tu, tv


def grad_norm_sq(field: DiffeoField) -> float:
    """Analytic ||grad tau||^2 = (pi^2/4) sum (C^2 + D^2)(i^2 + j^2)."""
    ii, jj, _ = mode_indices(field.spec.c)
    if ii.size == 0:
        return 0.0
    w = (ii**2 + jj**2).astype(np.float64)
    return float(np.pi**2 / 4.0 * np.sum((field.C**2 + field.D**2) * w))


def field_delta(field: DiffeoField) -> float:
    """Realized RMS pixel displacement of one sample.

    Parseval on the sine basis gives n^2 * mean_grid(tau_u^2 + tau_v^2)
    = (n^2/4) sum (C^2 + D^2) exactly (cell-center quadrature of sin^2 is
    exact for all in-disk modes), so this equals the grid measurement.
    """
    n = field.spec.n
    return float(n * np.sqrt(np.sum(field.C**2 + field.D**2) / 4.0))


def expected_delta(spec: DiffeoSpec) -> float:
    """Ensemble RMS pixel displacement, exact finite sum.

    delta^2 = (T n^2 / 2) sum_{i^2+j^2<=c^2} 1/(i^2+j^2). The asymptotic
    large-c form is exposed separately as expected_delta_asymptotic.
    """
    return float(spec.n * np.sqrt(spec.T * inverse_mode_sum(spec.c) / 2.0))


def expected_delta_asymptotic(spec: DiffeoSpec) -> float:
    """Large-c approximation delta^2 = (pi/4) n^2 T ln c (0 at c = 1)."""
    return float(spec.n * np.sqrt(np.pi / 4.0 * spec.T * np.log(spec.c)))


def temperature_for_delta(n: int, c: int, delta_target: float) -> float:
    """Invert expected_delta: the T giving the requested RMS displacement."""
    if delta_target < 0:
        raise ParameterError(f"delta_target must be >= 0, got {delta_target}")
    if delta_target == 0:
        return 0.0
    s = inverse_mode_sum(c)
    if s == 0.0:
        raise ParameterError(f"cutoff disk is empty at c={c}; no admissible frequency")
    return float(2.0 * delta_target**2 / (n**2 * s))


_xi_clamp_lock = threading.Lock()
_xi_clamp_total = 0


def xi_clamp_count() -> int:
    """Process-wide count of radicand clamps in xi_field (diagnostic only)."""
    return _xi_clamp_total


def xi_from_jacobian(duu, dvu, duv, dvv) -> np.ndarray:
    """Xi = (1/2)(sqrt(||J||_F^2 - 2 det J) - tr J) for Jacobian entries.

    Arguments are d tau_u/du, d tau_u/dv, d tau_v/du, d tau_v/dv (arrays of
    a common shape). The radicand equals (duu-dvv)^2 + (dvu+duv)^2 exactly,
    so negatives can only come from float cancellation; they are clamped to
    0 and counted (see xi_clamp_count).
    """
    global _xi_clamp_total
    frob2 = duu * duu + dvu * dvu + duv * duv + dvv * dvv
    det = duu * dvv - dvu * duv
    radicand = frob2 - 2.0 * det
    neg = radicand < 0.0
    if neg.any():
        with _xi_clamp_lock:
            _xi_clamp_total += int(neg.sum())
        radicand = np.where(neg, 0.0, radicand)
    return 0.5 * (np.sqrt(radicand) - (duu + dvv))


def xi_field(field: DiffeoField) -> np.ndarray:
    """Bijectivity margin Xi on the pixel grid, from analytic derivatives.

    sup Xi < 1 is a sufficient condition for the warp to be bijective. The
    field is band-limited, so analytic derivatives of the sine series are
    used rather than finite differences (which would alias at high cutoff).
    """
    n = field.spec.n
    m = field.spec.c - 1
    if m == 0:
        return np.zeros((n, n))
    S, dS = _sine_basis(n, m)
    return xi_from_jacobian(
        dS @ field.C @ S.T,   # d tau_u / du
        S @ field.C @ dS.T,   # d tau_u / dv
        dS @ field.D @ S.T,   # d tau_v / du
        S @ field.D @ dS.T,   # d tau_v / dv
    )


def validity_bounds(n: int, c: int):
    """(T_lower, T_upper): delta >= 1/2 and bijectivity bounds in T.

    T_lower = 1/(pi n^2 ln c), T_upper = 4/(pi^3 c^2 ln c); both use the
    natural log and are undefined at c = 1.
    """
    if c < 2:
        return None, None
    lnc = np.log(c)
    return float(1.0 / (np.pi * n**2 * lnc)), float(4.0 / (np.pi**3 * c**2 * lnc))


def validity(spec: DiffeoSpec, field: DiffeoField) -> ValidityReport:
    """Full per-sample validity analysis."""
    if field.spec.n != spec.n or field.spec.c != spec.c:
        raise ParameterError("field was not sampled from the given spec")
    xi_max = float(xi_field(field).max()) if spec.c > 1 else 0.0
    t_lo, t_hi = validity_bounds(spec.n, spec.c)
    return ValidityReport(
        delta=field_delta(field),
        grad_norm_sq=grad_norm_sq(field),
        xi_max=xi_max,
        is_bijective=bool(xi_max < 1.0),
        T_lower=t_lo,
        T_upper=t_hi,
    )


# ---------------------------------------------------------------------------
# serialization: JSON header + NPY coefficient payloads

FIELD_FORMAT = "diffeometer/field-v1"


def save_field(field: DiffeoField, json_path) -> list[Path]:
    """Write a field as <stem>.json + <stem>.tau_u.npy + <stem>.tau_v.npy.

    Payloads are little-endian float64, C-order, shape (c-1, c-1). Returns
    the written paths.
    """
    from ._fsio import atomic_write_npy, atomic_write_text

    json_path = Path(json_path)
    stem = json_path.with_suffix("")
    paths = [json_path, stem.with_suffix(".tau_u.npy"), stem.with_suffix(".tau_v.npy")]
    atomic_write_npy(paths[1], np.ascontiguousarray(field.C, dtype="<f8"))
    atomic_write_npy(paths[2], np.ascontiguousarray(field.D, dtype="<f8"))
    header = {
        "format": FIELD_FORMAT,
        "spec": {"n": field.spec.n, "T": field.spec.T, "c": field.spec.c, "seed": field.spec.seed},
        "stream_index": field.stream_index,
        "coefficients": {"tau_u": paths[1].name, "tau_v": paths[2].name},
    }
    atomic_write_text(json_path, json.dumps(header, indent=2) + "\n")
    return paths


def load_field(json_path) -> DiffeoField:
    json_path = Path(json_path)
    header = json.loads(json_path.read_text())
    if header.get("format") != FIELD_FORMAT:
        raise ParameterError(f"not a field header: {json_path}")
    spec = DiffeoSpec(**header["spec"])
    C = np.load(json_path.parent / header["coefficients"]["tau_u"], allow_pickle=False)
    D = np.load(json_path.parent / header["coefficients"]["tau_v"], allow_pickle=False)
    return DiffeoField(spec=spec, C=C, D=D, stream_index=header.get("stream_index"))


def save_grid(grid: DisplacementGrid, path) -> Path:
    """Write the two-channel (2, n, n) float64 NPY export."""
    from ._fsio import atomic_write_npy

    return atomic_write_npy(Path(path), np.stack([grid.tau_u, grid.tau_v]).astype("<f8"))


def load_grid(path) -> DisplacementGrid:
    arr = np.load(path, allow_pickle=False)
    if arr.ndim != 3 or arr.shape[0] != 2 or arr.shape[1] != arr.shape[2]:
        raise ParameterError(f"displacement payload must have shape (2, n, n), got {arr.shape}")
    return DisplacementGrid(n=arr.shape[1], tau_u=arr[0], tau_v=arr[1])
