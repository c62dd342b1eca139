"""Time-delay reservoir machinery: encoding, virtual nodes, ridge readout, memory capacity."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DivergenceError, SolvabilityError
from .signal import SampledSignal

DEFAULT_LAMBDAS = tuple(10.0 ** np.arange(-8, 3))


@dataclass(frozen=True)
class EncodingConfig:
    """Affine input encoding ``alpha * (w_in @ x + u0)`` held per virtual node."""

    w_in: np.ndarray
    alpha: float = 1.0
    u0: float = 0.0
    node_spacing: float = 1.0

    def __post_init__(self):
        w = np.atleast_2d(np.asarray(self.w_in, dtype=float))
        if w.shape[0] < 1:
            raise ValueError("need at least one virtual node")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if not self.node_spacing > 0:
            raise ValueError("node_spacing must be positive")
        object.__setattr__(self, "w_in", w)

    @property
    def n_virtual(self) -> int:
        return self.w_in.shape[0]

    @property
    def bit_duration(self) -> float:
        return self.n_virtual * self.node_spacing


@dataclass(frozen=True)
class Mask:
    values: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).ravel()
        if v.size < 1 or np.any(v < 0) or np.any(v > 1):
            raise ValueError("mask values must lie in [0, 1]")
        object.__setattr__(self, "values", v)

    @classmethod
    def random(cls, n_virtual: int, seed: int) -> "Mask":
        return cls(np.random.default_rng(seed).uniform(0.0, 1.0, n_virtual), seed)

    def __len__(self):
        return self.values.size


@dataclass
class StateMatrix:
    """Readout features, one row per feature and one column per evaluated sample."""

    features: np.ndarray
    labels: list = field(default_factory=list)

    def __post_init__(self):
        f = np.atleast_2d(np.asarray(self.features, dtype=float))
        if not np.all(np.isfinite(f)):
            raise ValueError("state matrix entries must be finite")
        self.features = f
        if not self.labels:
            self.labels = [f"f{i}" for i in range(f.shape[0])]
        if len(self.labels) != f.shape[0]:
            raise ValueError("one provenance label per feature row is required")

    @property
    def n_features(self) -> int:
        return self.features.shape[0]

    @property
    def n_samples(self) -> int:
        return self.features.shape[1]

    def columns(self, idx) -> "StateMatrix":
        return StateMatrix(self.features[:, idx], list(self.labels))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.labels)
            for col in self.features.T:
                w.writerow([repr(float(v)) for v in col])

    @classmethod
    def from_csv(cls, path) -> "StateMatrix":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            labels = next(reader)
            rows = [[float(v) for v in r] for r in reader]
        return cls(np.array(rows, dtype=float).reshape(-1, len(labels)).T, labels)


@dataclass
class RidgeReadout:
    """Linear readout; the last column of ``weights`` multiplies the intercept row."""

    weights: np.ndarray
    lam: float
    intercept: bool = True
    cv_report: dict = field(default_factory=dict)

    def predict(self, x) -> np.ndarray:
        f = x.features if isinstance(x, StateMatrix) else np.atleast_2d(x)
        if self.intercept:
            f = np.vstack([f, np.ones((1, f.shape[1]))])
        return self.weights @ f

    def classify(self, x) -> np.ndarray:
        """Winner-takes-all decision over the per-class outputs."""
        return np.argmax(self.predict(x), axis=0)

    def to_json(self) -> str:
        return json.dumps({
            "weights": self.weights.tolist(),
            "lambda": self.lam,
            "intercept": self.intercept,
            "cv_report": self.cv_report,
        }, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "RidgeReadout":
        d = json.loads(text)
        return cls(np.array(d["weights"], dtype=float), d["lambda"], d["intercept"], d.get("cv_report", {}))


@dataclass(frozen=True)
class PumpProbeCoeffs:
    """Coefficients of the small-signal pump-to-probe response.

    ``c1`` and ``c2`` carry units of 1/s per squared pump unit, so
    ``c2 * u**2 * tau_fc`` is dimensionless.
    """

    c0: float
    c1: float
    c2: float
    tau_fc: float

    def __post_init__(self):
        if not self.tau_fc > 0:
            raise ValueError("tau_fc must be positive")

    @classmethod
    def default(cls, tau_fc: float) -> "PumpProbeCoeffs":
        # unit pump step drives the probe from 1 down to 0
        return cls(1.0, -1.0 / tau_fc, -1.0 / tau_fc, tau_fc)


def encode(x_in, cfg: EncodingConfig, samples_per_node: int = 1) -> np.ndarray:
    """Pump power samples for the input matrix ``x_in`` (N x M).

    Column ``n`` occupies ``[n T, (n+1) T)``; each of its N_v values is held
    for one node spacing, i.e. ``samples_per_node`` samples.
    """
    x = np.asarray(x_in, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[0] != cfg.w_in.shape[1]:
        raise ValueError(f"input has {x.shape[0]} rows but w_in expects {cfg.w_in.shape[1]}")
    u = cfg.alpha * (cfg.w_in @ x + cfg.u0)
    bad = np.argwhere(u < 0)
    if bad.size:
        j, n = bad[0]
        raise ValueError(f"negative encoded power {u[j, n]:.3g} at virtual node {j}, sample {n}")
    return np.repeat(u.T.ravel(), samples_per_node)


def mask_encode(x, mask: Mask, b_w: float, p_max: float, samples_per_node: int = 1,
                t_start: float = 0.0) -> SampledSignal:
    """Field amplitude ``sqrt(p_max * x_i * m_j)`` on node slot ``j`` of bit ``i``."""
    xv = np.asarray(getattr(x, "bits", x), dtype=float).ravel()
    if np.any(xv < 0):
        raise ValueError("input values must be non-negative")
    amp = np.sqrt(p_max * np.outer(xv, mask.values)).ravel()
    theta = b_w / len(mask)
    return SampledSignal(np.repeat(amp, samples_per_node).astype(np.complex128),
                         samples_per_node / theta, t_start)


def node_spacing(b_w: float, n_virtual: int) -> float:
    return b_w / n_virtual


def _samples_per_bit(sample_rate: float, bitrate: float) -> int:
    ns = sample_rate / bitrate
    n = int(round(ns))
    if n < 1 or abs(ns - n) > 1e-6 * ns:
        raise ValueError(f"sample_rate/bitrate = {ns} is not an integer number of samples per bit")
    return n


def sample_virtual_nodes(power_trace, bitrate: float, n_virtual: int, sample_rate: float,
                         mode: str = "bin") -> StateMatrix:
    """Group a detected trace into ``n_virtual`` nodes per bit.

    ``mode="bin"`` follows the acquisition rules: bin-average when there are
    more samples than nodes, identity when equal, zero-fill when fewer.
    ``mode="point"`` takes the last sample of each node slot (requires an
    integer number of samples per node).
    """
    p = np.asarray(power_trace, dtype=float).ravel()
    if p.size == 0:
        raise ValueError("empty trace")
    ns = _samples_per_bit(sample_rate, bitrate)
    if p.size % ns:
        raise ValueError(f"trace length {p.size} is not a whole number of {ns}-sample bits")
    bits = p.reshape(-1, ns)
    m = bits.shape[0]
    if mode == "point":
        if ns % n_virtual:
            raise ValueError("point sampling needs an integer number of samples per node")
        spn = ns // n_virtual
        nodes = bits[:, spn - 1::spn]
    elif ns > n_virtual:
        edges = np.linspace(0, ns, n_virtual + 1)
        idx = np.floor(edges).astype(int)
        if ns % n_virtual == 0:
            nodes = bits.reshape(m, n_virtual, ns // n_virtual).mean(axis=2)
        else:
            nodes = np.stack([bits[:, idx[j]:max(idx[j + 1], idx[j] + 1)].mean(axis=1)
                              for j in range(n_virtual)], axis=1)
    elif ns == n_virtual:
        nodes = bits.copy()
    else:
        nodes = np.zeros((m, n_virtual))
        nodes[:, :ns] = bits
    labels = [f"b0_n{j + 1}" for j in range(n_virtual)]
    return StateMatrix(nodes.T, labels)


def augment_rbits(state: StateMatrix, n2: int) -> StateMatrix:
    """Concatenate the nodes of the current and ``n2 - 1`` previous bits (periodic wrap)."""
    if n2 < 1:
        raise ValueError("n2 must be >= 1")
    if n2 > state.n_samples:
        raise ValueError(f"n2={n2} exceeds the sequence length {state.n_samples}")
    blocks, labels = [], []
    for k in range(n2):
        blocks.append(np.roll(state.features, k, axis=1))
        labels += [lab.replace("b0_", f"b-{k}_") if k else lab for lab in state.labels]
    return StateMatrix(np.vstack(blocks), labels)


def _design(x, intercept: bool) -> np.ndarray:
    f = x.features if isinstance(x, StateMatrix) else np.atleast_2d(np.asarray(x, dtype=float))
    if intercept:
        f = np.vstack([f, np.ones((1, f.shape[1]))])
    return f


def ridge_fit(x, y, lam: float, intercept: bool = True) -> RidgeReadout:
    """Closed-form minimiser of ``||Y - W X||^2 + lam**2 ||W||^2`` (intercept unpenalised)."""
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    f = _design(x, intercept)
    yy = np.atleast_2d(np.asarray(y, dtype=float))
    if yy.shape[1] != f.shape[1]:
        raise ValueError(f"targets have {yy.shape[1]} samples, features {f.shape[1]}")
    if not (np.all(np.isfinite(f)) and np.all(np.isfinite(yy))):
        raise ValueError("non-finite inputs")
    gram = f @ f.T
    pen = np.full(f.shape[0], lam ** 2)
    if intercept:
        pen[-1] = 0.0
    a = gram + np.diag(pen)
    if np.linalg.cond(a) > 1e14:
        hint = "; use lambda > 0" if lam == 0 else ""
        raise SolvabilityError(f"normal matrix is singular (lambda={lam}){hint}")
    w = np.linalg.solve(a, f @ yy.T).T
    return RidgeReadout(w, float(lam), intercept)


def _fold_slices(n: int, folds: int):
    edges = np.linspace(0, n, folds + 1).astype(int)
    return [slice(edges[i], edges[i + 1]) for i in range(folds)]


def ridge_cv(x, y, lambda_grid: Sequence[float] = DEFAULT_LAMBDAS, folds: int = 5,
             seed: int | None = None, intercept: bool = True) -> RidgeReadout:
    """Pick lambda by contiguous-block k-fold validation MSE, then refit on everything.

    Folds are not shuffled, so ``seed`` has no effect; it is accepted for
    call-site symmetry with the other seeded routines.
    """
    grid = sorted(float(v) for v in lambda_grid)
    if not grid:
        raise ValueError("empty lambda grid")
    f = x.features if isinstance(x, StateMatrix) else np.atleast_2d(np.asarray(x, dtype=float))
    yy = np.atleast_2d(np.asarray(y, dtype=float))
    n = f.shape[1]
    if n < folds:
        raise ValueError(f"need at least {folds} samples for {folds}-fold validation")
    if len(grid) == 1:
        r = ridge_fit(f, yy, grid[0], intercept)
        r.cv_report = {"lambdas": grid, "mean_error": [float("nan")], "fold_errors": []}
        return r
    errors = np.full((len(grid), folds), np.inf)
    for k, sl in enumerate(_fold_slices(n, folds)):
        train = np.ones(n, dtype=bool)
        train[sl] = False
        for i, lam in enumerate(grid):
            try:
                r = ridge_fit(f[:, train], yy[:, train], lam, intercept)
            except SolvabilityError:
                continue
            errors[i, k] = np.mean((r.predict(f[:, sl]) - yy[:, sl]) ** 2)
    mean = errors.mean(axis=1)
    best = int(np.argmin(mean))  # first minimum -> smallest lambda on ties
    r = ridge_fit(f, yy, grid[best], intercept)
    r.cv_report = {"lambdas": grid, "mean_error": mean.tolist(), "fold_errors": errors.tolist()}
    return r


def pump_probe_response(u, coeffs: PumpProbeCoeffs, dt: float) -> np.ndarray:
    """Probe trace driven by the pump power samples ``u`` (held over each ``dt``).

    Both memory integrals are advanced with the exact exponential-kernel
    recursion; inside a step the running probe is taken as linear, which
    makes the update implicit in the new probe value but still closed-form.
    """
    tau = coeffs.tau_fc
    if dt > tau / 20:
        raise ValueError(f"dt={dt} must not exceed tau_fc/20={tau / 20}")
    u2 = np.asarray(u, dtype=float) ** 2
    a = np.exp(-dt / tau)
    w_const = tau * (1 - a)
    # weights of the start/end values for a linearly varying integrand
    w1 = tau - tau * tau / dt * (1 - a)
    w0 = w_const - w1
    c0, c1, c2 = coeffs.c0, coeffs.c1, coeffs.c2
    out = np.empty(u2.size + 1)
    out[0] = c0
    i1 = i2 = 0.0
    bound = 1e6 * (abs(c0) + 1.0)
    for k in range(u2.size):
        i1 = a * i1 + w_const * u2[k]
        base = a * i2 + u2[k] * w0 * out[k]
        denom = 1.0 - c2 * u2[k] * w1
        if denom <= 0:
            raise DivergenceError(f"probe recursion unstable at step {k}", k * dt)
        nxt = (c0 + c1 * i1 + c2 * base) / denom
        if not np.isfinite(nxt) or abs(nxt) > bound:
            raise DivergenceError(f"probe response diverged at t={k * dt:g}", k * dt)
        i2 = base + u2[k] * w1 * nxt
        out[k + 1] = nxt
    return out[:-1]


def memory_capacity(reservoir_eval: Callable[[np.ndarray], StateMatrix], l_max: int = 19,
                    seed: int = 0, n_samples: int = 2000, washout: int = 50,
                    train_fraction: float = 0.7,
                    lambda_grid: Sequence[float] = DEFAULT_LAMBDAS):
    """Sum over delays of the squared correlation between readout and delayed input.

    The input is i.i.d. uniform on [0, 1]. One ridge readout is trained per
    delay on the first part of the sequence and scored on the remainder.
    Returns ``(mc, m)`` with ``m[l - 1]`` the capacity at delay ``l``.
    """
    if l_max < 1:
        raise ValueError("l_max must be >= 1")
    rng = np.random.default_rng(seed)
    inputs = rng.uniform(0.0, 1.0, n_samples)
    state = reservoir_eval(inputs)
    feats = state.features
    start = max(washout, l_max)
    idx = np.arange(start, n_samples)
    n_train = int(train_fraction * idx.size)
    tr, te = idx[:n_train], idx[n_train:]
    m = np.zeros(l_max)
    for lag in range(1, l_max + 1):
        target = inputs[idx - lag]
        readout = ridge_cv(feats[:, tr], target[:n_train], lambda_grid)
        o = readout.predict(feats[:, te])[0]
        m[lag - 1] = squared_correlation(o, target[n_train:])
    return float(m.sum()), m


def squared_correlation(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    va, vb = np.var(a), np.var(b)
    if va <= 1e-300 or vb <= 1e-300:
        return 0.0
    cov = np.mean((a - a.mean()) * (b - b.mean()))
    return float(min(cov * cov / (va * vb), 1.0))
