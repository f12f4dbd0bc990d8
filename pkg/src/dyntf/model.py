"""Latent factor model with biases and temporal-dependence weights.

The model represents an N x N x K nonnegative tensor through sender
features S (N x D), receiver features U (N x D), temporal features
Z (K x D), bias vectors a, c (length N) and e (length K), and a
lower-triangular temporal weight matrix W (K x K) with unit diagonal.
Slot k sees a mixed temporal feature

    z_hat[k, d] = sum_{l <= k} w[k, l] * Z[l, d]

and a mixed temporal bias e_hat[k] defined the same way, so the predicted
entry is

    x_hat[i, j, k] = sum_d S[i, d] * U[j, d] * z_hat[k, d] + a[i] + c[j] + e_hat[k]

A window parameter bounds how far back W may reach: w[k, l] = 0 whenever
k - l > window. window = K - 1 allows the full lower triangle; window = 0
pins W to the identity and reduces the model to a plain biased
factorization.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np


@dataclass
class TemporalWeights:
    """Lower-triangular mixing weights over temporal slots.

    Invariants: unit diagonal, zero above the diagonal, zero below the
    band of width `window`, all elements nonnegative and finite.
    """

    w: np.ndarray
    window: int

    def validate(self) -> None:
        k = self.w.shape[0]
        if self.w.shape != (k, k):
            raise ValueError("temporal weight matrix must be square")
        if not (0 <= self.window <= max(k - 1, 0)):
            raise ValueError("window must lie in [0, K-1]")
        if not np.isfinite(self.w).all() or (self.w < 0).any():
            raise ValueError("temporal weights must be nonnegative and finite")
        if not (np.diag(self.w) == 1.0).all():
            raise ValueError("temporal weight diagonal must be exactly 1")
        rows, cols = np.indices(self.w.shape)
        inadmissible = (cols > rows) | (rows - cols > self.window)
        if self.w[inadmissible].any():
            raise ValueError("temporal weights outside the lower band must be exactly 0")


@dataclass
class TemporalCache:
    """Materialized temporal contractions z_hat (K x D) and e_hat (K,).

    The trainer refreshes the cache once per epoch; `stale` marks a cache
    whose source parameters have changed since it was computed.
    """

    z_hat: np.ndarray
    e_hat: np.ndarray
    stale: bool = False

    def mark_stale(self) -> None:
        self.stale = True


@dataclass
class HyperParams:
    """Regularization strengths: lam for features, lam_b for biases."""

    lam: float = 0.0
    lam_b: float = 0.0

    def __post_init__(self):
        if not (np.isfinite(self.lam) and np.isfinite(self.lam_b)):
            raise ValueError("hyperparameters must be finite")
        if self.lam < 0 or self.lam_b < 0:
            raise ValueError("hyperparameters must be nonnegative")


@dataclass
class FactorModel:
    """All learnable parameters. A plain value object: copy to branch."""

    S: np.ndarray
    U: np.ndarray
    Z: np.ndarray
    a: np.ndarray
    c: np.ndarray
    e: np.ndarray
    weights: TemporalWeights

    @property
    def n_nodes(self) -> int:
        return self.S.shape[0]

    @property
    def n_slots(self) -> int:
        return self.Z.shape[0]

    @property
    def rank(self) -> int:
        return self.S.shape[1]

    @property
    def window(self) -> int:
        return self.weights.window

    def copy(self) -> "FactorModel":
        return FactorModel(
            S=self.S.copy(),
            U=self.U.copy(),
            Z=self.Z.copy(),
            a=self.a.copy(),
            c=self.c.copy(),
            e=self.e.copy(),
            weights=TemporalWeights(self.weights.w.copy(), self.weights.window),
        )

    def validate(self) -> None:
        n, d = self.S.shape
        k = self.Z.shape[0]
        if self.U.shape != (n, d) or self.Z.shape != (k, d):
            raise ValueError("factor matrix dimensions disagree")
        if self.a.shape != (n,) or self.c.shape != (n,) or self.e.shape != (k,):
            raise ValueError("bias vector dimensions disagree")
        if self.weights.w.shape != (k, k):
            raise ValueError("temporal weight matrix must be K x K")
        for name, arr in (("S", self.S), ("U", self.U), ("Z", self.Z),
                          ("a", self.a), ("c", self.c), ("e", self.e)):
            if not np.isfinite(arr).all():
                raise ValueError(f"{name} contains non-finite values")
            if (arr < 0).any():
                raise ValueError(f"{name} contains negative values")
        self.weights.validate()


def band_indices(n_slots: int, window: int):
    """(k, l) index arrays of the admissible strictly-lower band, row-major
    by k then l. This is the canonical serialization order of W."""
    ks, ls = [], []
    for k in range(n_slots):
        for l in range(max(0, k - window), k):
            ks.append(k)
            ls.append(l)
    return np.asarray(ks, dtype=np.intp), np.asarray(ls, dtype=np.intp)


def init_positive(n_nodes: int, n_slots: int, rank: int, window: int,
                  seed, scale: float = 0.1) -> FactorModel:
    """Draw a strictly positive model, deterministic given the seed.

    Every element of S, U, Z, a, c, e is uniform on (0, scale]. W gets a
    unit diagonal; the admissible strictly-lower band is uniform on
    (0, scale]; everything else is 0, so window = 0 yields the identity.

    Args:
        n_nodes: node count N.
        n_slots: temporal slot count K.
        rank: latent dimension D (>= 1).
        window: temporal dependence depth (0 .. K-1).
        seed: int or numpy SeedSequence.
        scale: upper end of the draw range (> 0).
    """
    if rank < 1:
        raise ValueError("rank must be >= 1")
    if scale <= 0:
        raise ValueError("scale must be positive")
    if not (0 <= window <= max(n_slots - 1, 0)):
        raise ValueError("window must lie in [0, K-1]")
    rng = np.random.default_rng(seed)

    def positive(*shape):
        # 1 - random() maps [0, 1) onto (0, 1], keeping the draw strictly positive
        return scale * (1.0 - rng.random(shape))

    s = positive(n_nodes, rank)
    u = positive(n_nodes, rank)
    z = positive(n_slots, rank)
    a = positive(n_nodes)
    c = positive(n_nodes)
    e = positive(n_slots)
    w = np.zeros((n_slots, n_slots))
    np.fill_diagonal(w, 1.0)
    ks, ls = band_indices(n_slots, window)
    if ks.size:
        w[ks, ls] = positive(ks.size)
    return FactorModel(S=s, U=u, Z=z, a=a, c=c, e=e,
                       weights=TemporalWeights(w=w, window=window))


def compute_temporal(model: FactorModel) -> TemporalCache:
    """Contract W against Z and e: z_hat[k] = sum_{l<=k} w[k,l] Z[l],
    e_hat[k] = sum_{l<=k} w[k,l] e[l]."""
    w = model.weights.w
    return TemporalCache(z_hat=w @ model.Z, e_hat=w @ model.e, stale=False)


def predict_entries(model: FactorModel, cache: TemporalCache,
                    ii: np.ndarray, jj: np.ndarray, kk: np.ndarray) -> np.ndarray:
    """Vectorized predictions for parallel index arrays (ii, jj, kk)."""
    if cache.stale:
        raise ValueError("stale temporal cache: recompute before predicting")
    su = model.S[ii] * model.U[jj]
    return (np.einsum("nd,nd->n", su, cache.z_hat[kk])
            + model.a[ii] + model.c[jj] + cache.e_hat[kk])


def predict(model: FactorModel, cache: TemporalCache, i: int, j: int, k: int) -> float:
    """Predicted interaction weight for a single (i, j, k) position."""
    n, ks = model.n_nodes, model.n_slots
    if not (0 <= i < n and 0 <= j < n):
        raise IndexError(f"node index out of range: ({i}, {j}) with N={n}")
    if not (0 <= k < ks):
        raise IndexError(f"slot index out of range: {k} with K={ks}")
    ii = np.asarray([i], dtype=np.intp)
    jj = np.asarray([j], dtype=np.intp)
    kk = np.asarray([k], dtype=np.intp)
    return float(predict_entries(model, cache, ii, jj, kk)[0])


def objective(model: FactorModel, entries, hp: HyperParams) -> float:
    """Regularized half squared error over the observed entries.

    eps = 1/2 sum_obs (x - x_hat)^2
        + 1/2 sum_obs (lam * sum_d (S[i,d]^2 + U[j,d]^2 + z_hat[k,d]^2)
                       + lam_b * (a[i]^2 + c[j]^2 + e_hat[k]^2))

    The regularization sum runs over observed entries, so a parameter is
    penalized once per entry that touches it. The temporal cache is
    recomputed here, never trusted from the caller.
    """
    cache = compute_temporal(model)
    preds = predict_entries(model, cache, entries.i, entries.j, entries.k)
    resid = entries.values - preds
    row_s = np.einsum("nd,nd->n", model.S, model.S)
    row_u = np.einsum("nd,nd->n", model.U, model.U)
    row_z = np.einsum("nd,nd->n", cache.z_hat, cache.z_hat)
    reg = (hp.lam * (row_s[entries.i] + row_u[entries.j] + row_z[entries.k])
           + hp.lam_b * (model.a[entries.i] ** 2 + model.c[entries.j] ** 2
                         + cache.e_hat[entries.k] ** 2))
    return 0.5 * float(np.sum(resid * resid) + np.sum(reg))


def model_to_dict(model: FactorModel, hp: HyperParams) -> dict:
    """JSON-ready document. Matrices are flattened row-major; W is stored
    as its admissible strictly-lower band in row-major (k, then l) order."""
    ks, ls = band_indices(model.n_slots, model.window)
    return {
        "n_nodes": model.n_nodes,
        "n_slots": model.n_slots,
        "rank": model.rank,
        "window": model.window,
        "S": model.S.ravel().tolist(),
        "U": model.U.ravel().tolist(),
        "Z": model.Z.ravel().tolist(),
        "a": model.a.tolist(),
        "c": model.c.tolist(),
        "e": model.e.tolist(),
        "W_band": model.weights.w[ks, ls].tolist() if ks.size else [],
        "lambda": float(hp.lam),
        "lambda_b": float(hp.lam_b),
    }


def model_from_dict(doc: dict) -> tuple[FactorModel, HyperParams]:
    n = int(doc["n_nodes"])
    k = int(doc["n_slots"])
    d = int(doc["rank"])
    window = int(doc["window"])
    w = np.zeros((k, k))
    np.fill_diagonal(w, 1.0)
    ks, ls = band_indices(k, window)
    band = np.asarray(doc["W_band"], dtype=float)
    if band.size != ks.size:
        raise ValueError(f"W_band has {band.size} values, expected {ks.size}")
    if ks.size:
        w[ks, ls] = band
    model = FactorModel(
        S=np.asarray(doc["S"], dtype=float).reshape(n, d),
        U=np.asarray(doc["U"], dtype=float).reshape(n, d),
        Z=np.asarray(doc["Z"], dtype=float).reshape(k, d),
        a=np.asarray(doc["a"], dtype=float),
        c=np.asarray(doc["c"], dtype=float),
        e=np.asarray(doc["e"], dtype=float),
        weights=TemporalWeights(w=w, window=window),
    )
    model.validate()
    return model, HyperParams(lam=float(doc["lambda"]), lam_b=float(doc["lambda_b"]))


def save_model(model: FactorModel, hp: HyperParams, path, extra: dict | None = None) -> None:
    """Write the model as JSON. Floats round-trip exactly (repr encoding)."""
    doc = model_to_dict(model, hp)
    if extra:
        doc.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def load_model(path) -> tuple[FactorModel, HyperParams]:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    return model_from_dict(doc)
