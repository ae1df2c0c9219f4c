"""Boundary search: perturbed sign-gradient ascent on the input.

For a forget sample ``(x, y)`` the perturbation ``delta`` starts at zero and
follows

    delta <- delta + eps_t * sign(g + lam * delta + gamma * z)

where ``g`` is the input gradient of the loss against ``y`` at ``x + delta``,
``eps_t = c / t`` and ``z`` is fresh noise. After the loop the sample is
relabeled with the original model's argmax at ``x + delta``.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import nn_core
from .errors import InvalidInputError, NumericError

NOISE_KINDS = ("gaussian", "laplacian", "cauchy")
SCHEDULES = ("harmonic", "constant")
# fixed chunking keeps batched arithmetic identical for any worker count
CHUNK = 256


@dataclass(frozen=True)
class InnerConfig:
    c: float = 1.0
    steps: int = 20
    gamma: float = 1e-4
    lam: float = 0.0
    kappa: float | None = None  # None -> 1/K
    early_stop: bool = False
    noise: str = "gaussian"
    schedule: str = "harmonic"
    seed: int = 0
    target_class: int | None = None

    def __post_init__(self):
        if not self.c > 0:
            raise InvalidInputError("inner.c must be positive")
        if self.steps < 1:
            raise InvalidInputError("inner.steps must be >= 1")
        if self.gamma < 0 or self.lam < 0:
            raise InvalidInputError("inner.gamma and inner.lam must be >= 0")
        if self.noise not in NOISE_KINDS:
            raise InvalidInputError(f"noise kind must be one of {NOISE_KINDS}")
        if self.schedule not in SCHEDULES:
            raise InvalidInputError(f"schedule must be one of {SCHEDULES}")
        if self.kappa is not None and not self.kappa > 0:
            raise InvalidInputError("kappa must be positive")

    def resolved_kappa(self, n_classes: int) -> float:
        kappa = 1.0 / n_classes if self.kappa is None else self.kappa
        if kappa > 1.0 / n_classes + 1e-15:
            raise InvalidInputError(f"kappa={kappa} exceeds 1/K={1.0 / n_classes}")
        return kappa

    def step_size(self, t: int) -> float:
        return self.c / t if self.schedule == "harmonic" else self.c


@dataclass
class BoundaryResult:
    delta: np.ndarray
    x_boundary: np.ndarray
    y_boundary: int
    y_true: int
    crossed: bool
    steps_used: int
    path: np.ndarray | None = None  # (steps_used + 1, d) iterates x + delta

    def audit(self) -> dict:
        return {
            "delta_norm": float(np.linalg.norm(self.delta)),
            "steps_used": int(self.steps_used),
            "crossed": bool(self.crossed),
            "y": int(self.y_true),
            "y_boundary": int(self.y_boundary),
        }


@dataclass
class RelabeledForgetSet:
    x: np.ndarray  # original forget inputs
    x_boundary: np.ndarray
    y_boundary: np.ndarray  # class indices
    results: list[BoundaryResult] = field(default_factory=list)
    indices: np.ndarray | None = None  # dataset row ids, kept for auditing

    def __len__(self):
        return len(self.y_boundary)

    @property
    def fraction_crossed(self) -> float:
        return float(np.mean([r.crossed for r in self.results])) if self.results else 0.0

    def audit(self) -> dict:
        rows = [r.audit() for r in self.results]
        if self.indices is not None:
            for row, idx in zip(rows, self.indices):
                row["index"] = int(idx)
        return {"fraction_crossed": self.fraction_crossed, "samples": rows}

    def write_audit(self, path) -> None:
        Path(path).write_text(json.dumps(self.audit(), indent=2, sort_keys=True))


def sample_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, 0x1AAE, index])


def draw_noise(rng: np.random.Generator, kind: str, size) -> np.ndarray:
    if kind == "gaussian":
        return rng.standard_normal(size)
    if kind == "laplacian":
        return rng.laplace(0.0, 1.0, size)
    if kind == "cauchy":
        return rng.standard_cauchy(size)
    raise InvalidInputError(f"unknown noise kind {kind!r}")


def perturbed_sign(g, delta, z, t: int, cfg: InnerConfig) -> np.ndarray:
    """Step for given noise draws; ``z`` may be ``None`` when gamma is 0."""
    direction = g + cfg.lam * delta
    if cfg.gamma > 0:
        direction = direction + cfg.gamma * z
    return cfg.step_size(t) * np.sign(direction)


def sign_step(g, delta, cfg: InnerConfig, t: int, rng: np.random.Generator) -> np.ndarray:
    if t < 1:
        raise InvalidInputError("iteration index starts at 1")
    g = np.asarray(g, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    if g.shape != delta.shape:
        raise InvalidInputError("gradient and perturbation must have the same shape")
    z = draw_noise(rng, cfg.noise, g.shape) if cfg.gamma > 0 else None
    return perturbed_sign(g, delta, z, t, cfg)


def _search_batch(model, X, Y, cfg: InnerConfig, indices, keep_path=False):
    if cfg.target_class is not None:
        raise NotImplementedError("steering relabels toward a fixed target class is not supported")
    n, d = X.shape
    kappa = cfg.resolved_kappa(model.n_classes)
    y_idx = Y.argmax(axis=1)
    rows = np.arange(n)
    noise = None
    if cfg.gamma > 0:
        # each sample's whole noise block comes from its own stream
        noise = np.stack([draw_noise(sample_rng(cfg.seed, int(i)), cfg.noise, (cfg.steps, d))
                          for i in indices])
    delta = np.zeros_like(X)
    steps = np.zeros(n, dtype=np.int64)
    active = np.ones(n, dtype=bool)
    paths = [[X[i].copy()] for i in range(n)] if keep_path else None
    for t in range(1, cfg.steps + 1):
        if cfg.early_stop:
            p = nn_core.softmax(nn_core.logits(model, X + delta))
            active &= p[rows, y_idx] > kappa
        live = np.flatnonzero(active)
        if live.size == 0:
            break
        try:
            _, g = nn_core.loss_grad_input(model, X[live] + delta[live], Y[live])
        except NumericError as exc:
            raise NumericError(f"boundary search: {exc}", iteration=t,
                               layer=exc.layer) from exc
        bad = ~np.all(np.isfinite(g), axis=1)
        if bad.any():
            sample = int(indices[live[np.argmax(bad)]])
            raise NumericError(f"non-finite input gradient at iteration {t} (sample {sample})",
                               iteration=t, sample=sample)
        z = None if noise is None else noise[live, steps[live]]
        delta[live] += perturbed_sign(g, delta[live], z, t, cfg)
        steps[live] += 1
        if keep_path:
            for i in live:
                paths[i].append(X[i] + delta[i])
    xb = X + delta
    p = nn_core.softmax(nn_core.logits(model, xb))
    yb = p.argmax(axis=1)
    out = []
    for i in range(n):
        out.append(BoundaryResult(
            delta=delta[i].copy(), x_boundary=xb[i].copy(), y_boundary=int(yb[i]),
            y_true=int(y_idx[i]), crossed=bool(p[i, y_idx[i]] <= kappa),
            steps_used=int(steps[i]),
            path=np.array(paths[i]) if keep_path else None,
        ))
    return out


def search_boundary(model_w0: nn_core.Model, x, y, cfg: InnerConfig, *,
                    sample_index: int = 0, keep_path: bool = False) -> BoundaryResult:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 1 or y.ndim != 1:
        raise InvalidInputError("search_boundary takes a single sample")
    return _search_batch(model_w0, x[None], y[None], cfg, [sample_index], keep_path)[0]


def search_many(model_w0, X, Y, cfg: InnerConfig, indices=None, *, jobs: int = 1,
                keep_path: bool = False) -> list[BoundaryResult]:
    """Boundary search for every row; ``indices`` seed the per-sample noise streams."""
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    indices = np.arange(len(X)) if indices is None else np.asarray(indices)
    chunks = [slice(s, s + CHUNK) for s in range(0, len(X), CHUNK)]

    def run(sl):
        try:
            return _search_batch(model_w0, X[sl], Y[sl], cfg, indices[sl], keep_path)
        except NumericError as exc:
            if exc.sample is None:
                exc.sample = int(indices[sl][0])
            raise

    if jobs > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(run, chunks))
    else:
        parts = [run(sl) for sl in chunks]
    return [r for part in parts for r in part]


def relabel_forget_set(model_w0, X_forget, Y_forget, cfg: InnerConfig, indices=None, *,
                       jobs: int = 1) -> RelabeledForgetSet:
    X_forget = np.asarray(X_forget, dtype=np.float64)
    if len(X_forget) == 0:
        raise InvalidInputError("forget set is empty")
    results = search_many(model_w0, X_forget, Y_forget, cfg, indices, jobs=jobs)
    return RelabeledForgetSet(
        x=X_forget.copy(),
        x_boundary=np.stack([r.x_boundary for r in results]),
        y_boundary=np.array([r.y_boundary for r in results], dtype=np.int64),
        results=results,
        indices=None if indices is None else np.asarray(indices),
    )
