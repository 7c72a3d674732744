"""Minimal invariant-learning experiment: the stripe task.

Data are standard Gaussians in d dimensions whose label depends only on
coordinate 0 (alternating +/-1 bands between sorted boundary values); the
remaining d-1 directions are exact invariances. A one-hidden-layer net
trained by full-batch gradient descent on the hinge loss aligns its first
layer with the informative direction, and the relative stability

    R_f = mean ||f(x + nu) - f(x)||^2 / mean ||f(x + eta) - f(x)||^2

(nu isotropic in the invariant subspace, eta isotropic in the full space,
equal norms) decays roughly as 1/P with the training-set size P.

The net uses mean-field output scaling f(x) = a . act(Wx + b) / h and a
small initialization, which puts gradient descent in the feature-learning
regime the decay law relies on; gradient steps are scaled by the width so
the dynamics are width-independent.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .errors import DegeneratePredictorError, ParameterError
from .rng import derive_stream

__all__ = [
    "StripeTask",
    "StripeNet",
    "NetConfig",
    "OptimizerConfig",
    "TrainingLog",
    "generate_stripe_data",
    "stripe_labels",
    "init_stripe_net",
    "hinge_loss_and_grads",
    "train_stripe_net",
    "alignment_ratio",
    "stripe_test_error",
    "stripe_relative_stability",
    "stripe_experiment",
    "fit_loglog_slope",
]

DEFAULT_BOUNDARIES = (-0.3, 1.18548)

# sub-stream tags under a task seed
_TRAIN_STREAM, _INIT_STREAM, _PROBE_STREAM, _TEST_STREAM = 0, 1, 2, 3


@dataclass(frozen=True)
class StripeTask:
    """Label bands along coordinate 0; everything orthogonal is invariant."""

    d: int = 30
    boundaries: tuple[float, ...] = DEFAULT_BOUNDARIES
    P: int = 128
    seed: int = 0

    def __post_init__(self):
        if self.d < 2:
            raise ParameterError(f"d must be >= 2, got {self.d}")
        if self.P < 2:
            raise ParameterError(f"P must be >= 2, got {self.P}")
        b = tuple(float(x) for x in self.boundaries)
        if len(b) < 1 or any(b[i] >= b[i + 1] for i in range(len(b) - 1)):
            raise ParameterError("boundaries must be a non-empty strictly increasing sequence")
        object.__setattr__(self, "boundaries", b)


def stripe_labels(task: StripeTask, x_par: np.ndarray) -> np.ndarray:
    """+/-1 labels: region index parity, leftmost region labelled -1."""
    region = np.searchsorted(np.asarray(task.boundaries), x_par, side="right")
    return np.where(region % 2 == 1, 1.0, -1.0)


def generate_stripe_data(task: StripeTask, count: int, rng: np.random.Generator | None = None):
    """i.i.d. standard-normal inputs with stripe labels.

    Without an explicit rng this draws from the task's primary training
    stream, i.e. the same data train_stripe_net sees (absent label
    resampling).
    """
    if count < 1:
        raise ParameterError(f"count must be >= 1, got {count}")
    if rng is None:
        rng = derive_stream(task.seed, _TRAIN_STREAM, 0)
    X = rng.standard_normal((count, task.d))
    return X, stripe_labels(task, X[:, 0])


@dataclass
class StripeNet:
    """One hidden layer, mean-field normalization f(x) = a . act(Wx + b) / h."""

    W: np.ndarray          # (h, d)
    b: np.ndarray          # (h,)
    a: np.ndarray          # (h,)
    activation: str = "relu"

    @property
    def width(self) -> int:
        return self.a.shape[0]

    @property
    def d(self) -> int:
        return self.W.shape[1]

    def _hidden(self, X: np.ndarray) -> np.ndarray:
        z = X @ self.W.T + self.b
        if self.activation == "relu":
            return np.maximum(z, 0.0)
        return z

    def __call__(self, X: np.ndarray) -> np.ndarray:
        return self._hidden(np.atleast_2d(X)) @ self.a / self.width


@dataclass(frozen=True)
class NetConfig:
    width: int = 128
    activation: str = "relu"
    init_scale: float = 1e-3

    def __post_init__(self):
        if self.activation not in ("relu", "linear"):
            raise ParameterError(f"activation must be 'relu' or 'linear', got {self.activation!r}")
        if self.width < 1:
            raise ParameterError("width must be >= 1")


@dataclass(frozen=True)
class OptimizerConfig:
    """Full-batch gradient descent settings.

    ``step_scale='active-sqrt'`` lengthens the step by sqrt(P / #active
    margins): the descent direction is untouched, so this is the same
    gradient path traversed faster where few hinge terms remain active
    (late training would otherwise crawl at a rate proportional to the
    active fraction). 'fixed' keeps the plain constant step.
    """

    learning_rate: float = 1.0
    max_steps: int = 6000
    width_scaled: bool = True    # multiply steps by h so dynamics are width-free
    step_scale: str = "active-sqrt"
    boost_smoothing: float = 0.0  # optional EMA weight on the active count
    dtype: str = "float32"       # training arithmetic; parameters return as float64
    log_every: int = 50

    def __post_init__(self):
        if self.dtype not in ("float32", "float64"):
            raise ParameterError(f"dtype must be float32 or float64, got {self.dtype!r}")
        if self.step_scale not in ("fixed", "active-sqrt"):
            raise ParameterError(f"step_scale must be 'fixed' or 'active-sqrt', got {self.step_scale!r}")


@dataclass
class TrainingLog:
    losses: list = field(default_factory=list)   # (step, loss) pairs
    steps: int = 0
    final_loss: float = 0.0
    converged: bool = False
    alignment: float = 0.0
    resampled_seeds: int = 0
    wall_time_s: float = 0.0


def init_stripe_net(task: StripeTask, cfg: NetConfig, rng: np.random.Generator) -> StripeNet:
    """Small random init (scale cfg.init_scale) in the feature-learning regime."""
    h, d = cfg.width, task.d
    W = rng.standard_normal((h, d)) * cfg.init_scale / np.sqrt(d)
    b = rng.standard_normal(h) * cfg.init_scale
    a = rng.standard_normal(h) * cfg.init_scale
    return StripeNet(W=W, b=b, a=a, activation=cfg.activation)


def _hinge_stats(net: StripeNet, X: np.ndarray, y: np.ndarray):
    P = X.shape[0]
    h = net.width
    z = X @ net.W.T + net.b
    act = np.maximum(z, 0.0) if net.activation == "relu" else z
    f = act @ net.a / h
    margin = 1.0 - y * f
    active = margin > 0.0
    loss = float(np.mean(np.maximum(margin, 0.0)))

    e = np.where(active, -y, 0.0) / P                       # dL/df per sample
    grad_a = act.T @ e / h
    dz = np.where(z > 0.0, 1.0, 0.0) if net.activation == "relu" else np.ones_like(z)
    back = (e[:, None] * dz) * net.a[None, :] / h            # (P, h)
    grads = {"W": back.T @ X, "b": back.sum(axis=0), "a": grad_a}
    return loss, grads, int(active.sum())


def hinge_loss_and_grads(net: StripeNet, X: np.ndarray, y: np.ndarray):
    """Mean hinge loss max(0, 1 - y f) and its analytic parameter gradients."""
    loss, grads, _ = _hinge_stats(net, X, y)
    return loss, grads


def train_stripe_net(task: StripeTask, net_cfg: NetConfig | None = None,
                     opt_cfg: OptimizerConfig | None = None):
    """Full-batch gradient descent on the hinge loss until zero loss or the step cap.

    The training set is drawn from the task seed; if a draw misses one of
    the two classes, follow-up streams are tried (counted in the log).
    Non-convergence at the cap is reported via log.converged, not an error.
    """
    net_cfg = net_cfg or NetConfig()
    opt_cfg = opt_cfg or OptimizerConfig()
    start = time.perf_counter()

    X = y = None
    resampled = 0
    for attempt in range(64):
        X, y = generate_stripe_data(task, task.P, derive_stream(task.seed, _TRAIN_STREAM, attempt))
        if (y > 0).any() and (y < 0).any():
            break
        resampled += 1
    else:
        raise ParameterError("could not draw a training set containing both labels")

    net = init_stripe_net(task, net_cfg, derive_stream(task.seed, _INIT_STREAM))
    step_size = opt_cfg.learning_rate * (net.width if opt_cfg.width_scaled else 1.0)

    dtype = np.dtype(opt_cfg.dtype)
    X = X.astype(dtype)
    y = y.astype(dtype)
    net.W = net.W.astype(dtype)
    net.b = net.b.astype(dtype)
    net.a = net.a.astype(dtype)

    log = TrainingLog(resampled_seeds=resampled)
    loss = np.inf
    ema_active = float(task.P)
    for step in range(opt_cfg.max_steps):
        loss, grads, n_active = _hinge_stats(net, X, y)
        if step % opt_cfg.log_every == 0:
            log.losses.append((step, loss))
        if loss == 0.0:
            log.converged = True
            break
        scale = step_size
        if opt_cfg.step_scale == "active-sqrt":
            ema_active = (opt_cfg.boost_smoothing * ema_active
                          + (1.0 - opt_cfg.boost_smoothing) * max(n_active, 1))
            scale = step_size * np.sqrt(task.P / ema_active)
        net.W -= scale * grads["W"]
        net.b -= scale * grads["b"]
        net.a -= scale * grads["a"]
        log.steps = step + 1
    else:
        loss, _ = hinge_loss_and_grads(net, X, y)
        log.converged = loss == 0.0

    net.W = net.W.astype(np.float64)
    net.b = net.b.astype(np.float64)
    net.a = net.a.astype(np.float64)
    log.final_loss = loss
    log.alignment = alignment_ratio(net)
    log.wall_time_s = time.perf_counter() - start
    return net, log


def alignment_ratio(net: StripeNet) -> float:
    """First-layer weight mass on the informative coordinate vs. the rest."""
    informative = float(np.sum(net.W[:, 0] ** 2))
    orthogonal = float(np.sum(net.W[:, 1:] ** 2))
    return informative / orthogonal if orthogonal > 0 else np.inf


def stripe_test_error(net: StripeNet, task: StripeTask, count: int = 10000,
                      rng: np.random.Generator | None = None) -> float:
    if rng is None:
        rng = derive_stream(task.seed, _TEST_STREAM)
    X, y = generate_stripe_data(task, count, rng)
    return float(np.mean(np.sign(net(X)) != y))


def _sphere_rows(rng: np.random.Generator, count: int, dim: int, radius: float) -> np.ndarray:
    g = rng.standard_normal((count, dim))
    norms = np.linalg.norm(g, axis=1, keepdims=True)
    while (norms == 0).any():            # probability-zero guard
        redo = norms[:, 0] == 0
        g[redo] = rng.standard_normal((int(redo.sum()), dim))
        norms = np.linalg.norm(g, axis=1, keepdims=True)
    return g * (radius / norms)


def stripe_relative_stability(net: StripeNet, task: StripeTask, n_probe: int = 2000,
                              noise_norm: float = 1.0,
                              rng: np.random.Generator | None = None) -> float:
    """Orthogonal-noise relative stability at matched norms, mean aggregation.

    nu is uniform on the radius-``noise_norm`` sphere of the invariant
    subspace (coordinates 1..d-1), eta on the full d-dimensional sphere of
    the same radius.
    """
    if rng is None:
        rng = derive_stream(task.seed, _PROBE_STREAM)
    X, _ = generate_stripe_data(task, n_probe, rng)
    f0 = net(X)

    nu = np.zeros_like(X)
    nu[:, 1:] = _sphere_rows(rng, n_probe, task.d - 1, noise_norm)
    eta = _sphere_rows(rng, n_probe, task.d, noise_norm)

    num = float(np.mean((net(X + nu) - f0) ** 2))
    den = float(np.mean((net(X + eta) - f0) ** 2))
    if den == 0.0:
        raise DegeneratePredictorError("net does not respond to full-space noise probes")
    return num / den


def fit_loglog_slope(P_values, r_values):
    """Least-squares slope of log r against log P, with a 95% interval.

    Returns (slope, (lo, hi)); needs at least 3 points, else (None, None).
    """
    P_values = np.asarray(P_values, dtype=float)
    r_values = np.asarray(r_values, dtype=float)
    if P_values.size < 3:
        return None, None
    lx, ly = np.log(P_values), np.log(r_values)
    A = np.stack([lx, np.ones_like(lx)], axis=1)
    coef, _, _, _ = np.linalg.lstsq(A, ly, rcond=None)
    resid = ly - A @ coef
    dof = max(lx.size - 2, 1)
    se = float(np.sqrt(np.sum(resid**2) / dof / np.sum((lx - lx.mean()) ** 2)))
    slope = float(coef[0])
    return slope, (slope - 1.96 * se, slope + 1.96 * se)


def stripe_experiment(d: int = 30, P_values=(128, 256, 512, 1024, 2048, 4096, 8192),
                      n_seeds: int = 8, boundaries=DEFAULT_BOUNDARIES, base_seed: int = 0,
                      net_cfg: NetConfig | None = None, opt_cfg: OptimizerConfig | None = None,
                      n_probe: int = 2000, noise_norm: float = 1.0,
                      test_count: int = 10000, progress=None):
    """Train across (P, seed) grid and measure R_f; rows plus slope summary.

    Each (P, seed) cell trains an independent net; its R_f, alignment and
    test error land in one row. The summary holds per-P geometric means of
    R_f and the fitted log-log slope with a 95% confidence interval.
    """
    P_values = list(P_values)
    rows = []
    for ip, P in enumerate(P_values):
        for s in range(n_seeds):
            seed = int(np.random.SeedSequence(entropy=base_seed, spawn_key=(ip, s)).generate_state(1)[0])
            task = StripeTask(d=d, boundaries=tuple(boundaries), P=P, seed=seed)
            net, log = train_stripe_net(task, net_cfg, opt_cfg)
            r_f = stripe_relative_stability(net, task, n_probe=n_probe, noise_norm=noise_norm)
            rows.append({
                "P": P,
                "seed": s,
                "R_f": r_f,
                "alignment": log.alignment,
                "test_error": stripe_test_error(net, task, test_count),
                "converged": log.converged,
                "steps": log.steps,
            })
            if progress is not None:
                progress(rows[-1])

    log_means = [
        float(np.exp(np.mean(np.log([r["R_f"] for r in rows if r["P"] == P]))))
        for P in P_values
    ]
    slope, ci = fit_loglog_slope(P_values, log_means)
    summary = {
        "d": d,
        "P_values": P_values,
        "n_seeds": n_seeds,
        "log_mean_R_f": log_means,
        "slope": slope,
        "slope_ci95": list(ci) if ci else None,
    }
    return rows, summary
