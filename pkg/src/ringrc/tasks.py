"""Benchmark targets: delayed logic, NARMA-10, Mackey-Glass and Iris."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DivergenceError
from .signal import BitSequence

LOGIC_OPS = {
    "AND": np.bitwise_and,
    "OR": np.bitwise_or,
    "XOR": np.bitwise_xor,
}


@dataclass(frozen=True)
class LogicTaskSpec:
    """Logic operation between the present bit and the ``n1``-th past bit.

    ``n2`` is the number of bits (current plus past) whose virtual nodes
    feed the readout.
    """

    op: str
    n1: int = 1
    n2: int = 1

    def __post_init__(self):
        if self.op.upper() not in LOGIC_OPS:
            raise ValueError(f"unknown logic op {self.op!r}")
        object.__setattr__(self, "op", self.op.upper())
        if self.n1 < 0:
            raise ValueError("n1 must be >= 0")
        if self.n2 < 1:
            raise ValueError("n2 must be >= 1")

    @property
    def label(self) -> str:
        return f"{self.op} {self.n1} with {self.n2} R-bit{'s' if self.n2 > 1 else ''}"


@dataclass(frozen=True)
class SeriesTaskSpec:
    kind: str
    length: int
    seed: int = 0
    warmup: int = 0
    train: int = 0
    test: int = 0
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("narma10", "mackey_glass"):
            raise ValueError(f"unknown series task {self.kind!r}")
        if self.length < self.warmup + self.train + self.test:
            raise ValueError("length must cover warmup + train + test")


def delayed_logic_target(bits: BitSequence, spec: LogicTaskSpec, wrap: bool = True) -> BitSequence:
    x = bits.bits
    if wrap:
        past = np.roll(x, spec.n1)
    else:
        past = np.concatenate([np.zeros(min(spec.n1, x.size), np.uint8), x[: max(x.size - spec.n1, 0)]])
    return BitSequence(LOGIC_OPS[spec.op](x, past), bits.bitrate)


def one_bit_delayed_xor_target(bits: BitSequence, wrap: bool = True) -> BitSequence:
    return delayed_logic_target(bits, LogicTaskSpec("XOR", 1, 1), wrap)


def narma10(u) -> np.ndarray:
    """Tenth-order NARMA response; element ``n`` is y(n+1) driven by u(0..n).

    Raises DivergenceError once |y| exceeds 10.
    """
    u = np.asarray(u, dtype=float)
    y = np.zeros(u.size + 1)
    for n in range(u.size):
        window = y[max(n - 9, 0): n + 1].sum()
        u_old = u[n - 9] if n >= 9 else 0.0
        y[n + 1] = 0.3 * y[n] + 0.05 * y[n] * window + 1.5 * u_old * u[n] + 0.1
        if abs(y[n + 1]) > 10:
            raise DivergenceError(f"NARMA-10 diverged at step {n}", n)
    return y[1:]


def narma10_inputs(length: int, seed: int) -> np.ndarray:
    return np.random.default_rng(seed).uniform(0.0, 0.5, length)


def mackey_glass(beta: float = 0.2, gamma: float = 0.1, n_exp: float = 10.0,
                 tau_delay: float = 17.0, dt: float = 0.1, length: int = 1000,
                 x0: float = 1.2, subsample: int = 1) -> np.ndarray:
    """RK4 solution of the Mackey-Glass delay equation with constant history ``x0``.

    Returns ``length`` samples spaced ``dt * subsample`` apart, starting at t=0.
    """
    if x0 <= 0:
        raise ValueError("x0 must be positive")
    d = tau_delay / dt
    delay = int(round(d))
    if abs(d - delay) > 1e-9 * max(1.0, d):
        raise ValueError("tau_delay must be a multiple of dt")

    def f(x, xd):
        return beta * xd / (1.0 + xd ** n_exp) - gamma * x

    n_steps = (length - 1) * subsample
    hist = np.empty(n_steps + 1)
    hist[0] = x0

    def lagged(k):
        return hist[k - delay] if k - delay >= 0 else x0

    x = x0
    for k in range(n_steps):
        if delay == 0:
            k1 = f(x, x)
            xa = x + 0.5 * dt * k1
            k2 = f(xa, xa)
            xb = x + 0.5 * dt * k2
            k3 = f(xb, xb)
            xc = x + dt * k3
            k4 = f(xc, xc)
        else:
            d0, d1 = lagged(k), lagged(k + 1)
            dm = 0.5 * (d0 + d1)
            k1 = f(x, d0)
            k2 = f(x + 0.5 * dt * k1, dm)
            k3 = f(x + 0.5 * dt * k2, dm)
            k4 = f(x + dt * k3, d1)
        x = x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.isfinite(x):
            raise DivergenceError(f"Mackey-Glass diverged at t={k * dt}", k * dt)
        hist[k + 1] = x
    return hist[::subsample][:length].copy()


def rescale(x, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    span = x.max() - x.min()
    if span == 0:
        return np.full_like(x, lo)
    return lo + (hi - lo) * (x - x.min()) / span


def iris_load(path):
    """Read a 5-column Iris CSV (4 measurements, species name).

    Returns ``(features, labels, classes)``: features is 4 x n scaled to
    [0, 1] per row, labels a one-hot 3 x n matrix, classes the sorted names.
    """
    rows, names = [], []
    with open(path, newline="") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            parts = [p.strip() for p in line.strip().split(",")]
            if len(parts) != 5:
                raise ValueError(f"{path}:{lineno}: expected 5 columns, got {len(parts)}")
            try:
                rows.append([float(p) for p in parts[:4]])
            except ValueError:
                if lineno == 1 and not rows:
                    continue  # header line
                raise ValueError(f"{path}:{lineno}: non-numeric measurement") from None
            names.append(parts[4])
    if not rows:
        raise ValueError(f"{path}: no samples")
    x = np.array(rows).T
    lo, hi = x.min(axis=1, keepdims=True), x.max(axis=1, keepdims=True)
    x = (x - lo) / np.where(hi > lo, hi - lo, 1.0)
    classes = sorted(set(names))
    idx = np.array([classes.index(n) for n in names])
    labels = np.zeros((len(classes), idx.size))
    labels[idx, np.arange(idx.size)] = 1.0
    return x, labels, classes


def default_iris_path() -> Path:
    return Path(__file__).parent / "data" / "iris.csv"


def stratified_split(labels: np.ndarray, fraction: float, seed: int):
    """Per-class random split of sample indices into (train, test)."""
    rng = np.random.default_rng(seed)
    cls = labels.argmax(axis=0)
    train, test = [], []
    for c in np.unique(cls):
        members = rng.permutation(np.flatnonzero(cls == c))
        k = int(round(fraction * members.size))
        train.extend(members[:k])
        test.extend(members[k:])
    return np.sort(train), np.sort(test)


def write_dataset_csv(path, columns: dict) -> None:
    names = list(columns)
    cols = [np.asarray(columns[n]) for n in names]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for row in zip(*cols):
            w.writerow([repr(float(v)) for v in row])


def read_dataset_csv(path) -> dict:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        names = next(reader)
        data = np.array([[float(v) for v in row] for row in reader])
    return {n: data[:, i] for i, n in enumerate(names)}
