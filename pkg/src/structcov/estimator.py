"""Amortized estimation of structured residual covariances.

A small fully connected network (relu hidden layers, identity output) maps a
conditioning vector, typically the reconstruction mean, to the parameters of
one of three covariance heads:

* ``SparseHead``: values of a banded lower-Cholesky precision factor;
* ``DiagonalHead``: log standard deviations of a diagonal precision factor;
* ``LowRankHead``: a low-rank-plus-ridge precision (columns, log
  eigenvalues, log ridge).

Diagonal entries are emitted in log space and only exponentiated inside the
likelihood, so every intermediate iterate stays positive definite by
construction. NLL gradients with respect to head parameters are analytic;
the network part is ordinary backpropagation, optimized with Adam.
"""
from __future__ import annotations

import io
import struct
import time
from dataclasses import dataclass, field
from typing import BinaryIO, Sequence

import numpy as np

from .gaussian import (
    DenseGaussian,
    chol_factor,
    covariance_from_factor,
    frobenius_dist,
    gaussian_kl,
)
from .lowrank import (
    PRECISION_SIDE,
    LowRankFactor,
    implied_dense,
    lr_nll,
    lr_sample,
    ortho_penalty,
    woodbury_inverse,
)
from .sparse import (
    NeighborhoodPattern,
    SparseCholesky,
    build_pattern,
    nll_sparse,
    sample_sparse,
    to_dense,
    whiten_batch,
)

CHECKPOINT_MAGIC = b"SCNR"


@dataclass(frozen=True)
class SparseHead:
    """Head emitting a banded factor: off-diagonals first, then log diagonal."""

    pattern: NeighborhoodPattern

    @property
    def param_count(self) -> int:
        return self.pattern.offdiag_count + self.pattern.n

    @property
    def dim(self) -> int:
        return self.pattern.n


@dataclass(frozen=True)
class DiagonalHead:
    """Head emitting per-coordinate log precision-diagonals."""

    n: int

    @property
    def param_count(self) -> int:
        return self.n

    @property
    def dim(self) -> int:
        return self.n


@dataclass(frozen=True)
class LowRankHead:
    """Head emitting (columns, log eigenvalues, log ridge), precision side."""

    n: int
    rank: int

    @property
    def param_count(self) -> int:
        return self.n * self.rank + self.rank + 1

    @property
    def dim(self) -> int:
        return self.n


Head = SparseHead | DiagonalHead | LowRankHead


@dataclass
class CondRegressor:
    """Fully connected regressor from conditioning vector to head parameters."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    head: Head

    @property
    def layer_sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]


def init_regressor(layer_sizes: Sequence[int], head: Head, seed: int) -> CondRegressor:
    """Glorot-uniform weights, zero biases.

    Zero output biases start the model at the identity precision factor
    (all log diagonals zero, all interactions zero).
    """
    sizes = [int(s) for s in layer_sizes]
    if len(sizes) < 2:
        raise ValueError("need at least an input and an output layer")
    if sizes[-1] != head.param_count:
        raise ValueError(
            f"output layer has {sizes[-1]} units, head needs {head.param_count}"
        )
    rng = np.random.default_rng(seed)
    weights = []
    biases = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return CondRegressor(weights=weights, biases=biases, head=head)


def _forward_cached(reg: CondRegressor, cond: np.ndarray):
    """Returns (params, post-activation list); cond must be (B, in)."""
    acts = [cond]
    h = cond
    last = len(reg.weights) - 1
    for idx, (w, b) in enumerate(zip(reg.weights, reg.biases)):
        z = h @ w + b
        h = z if idx == last else np.maximum(z, 0.0)
        acts.append(h)
    return h, acts


def forward(reg: CondRegressor, cond: np.ndarray) -> np.ndarray:
    """Head parameters for one conditioning vector ``(in,)`` or a batch ``(..., in)``."""
    cond = np.asarray(cond, dtype=np.float64)
    squeeze = cond.ndim == 1
    flat = cond.reshape(-1, cond.shape[-1])
    if flat.shape[1] != reg.weights[0].shape[0]:
        raise ValueError(
            f"conditioning dimension {flat.shape[1]} does not match input layer "
            f"{reg.weights[0].shape[0]}"
        )
    params, _ = _forward_cached(reg, flat)
    return params[0] if squeeze else params.reshape(cond.shape[:-1] + (params.shape[-1],))


def backward(
    reg: CondRegressor, acts: list[np.ndarray], grad_out: np.ndarray
):
    """Backpropagate output-parameter gradients to weight/bias gradients.

    ``acts`` is the cache from ``_forward_cached``; relu uses the z > 0
    subgradient, zero exactly at the kink.
    """
    grad_w = [np.empty_like(w) for w in reg.weights]
    grad_b = [np.empty_like(b) for b in reg.biases]
    delta = grad_out
    for idx in range(len(reg.weights) - 1, -1, -1):
        grad_w[idx] = acts[idx].T @ delta
        grad_b[idx] = delta.sum(axis=0)
        if idx:
            delta = (delta @ reg.weights[idx].T) * (acts[idx] > 0.0)
    return grad_w, grad_b


# ---------------------------------------------------------------------------
# Head likelihoods and analytic parameter gradients


def _sparse_nll_grad_batch(head: SparseHead, params, mean, x):
    pattern = head.pattern
    n, m = pattern.n, pattern.offdiag_count
    off = params[:, :m]
    log_diag = params[:, m:]
    resid = x - mean
    y = whiten_batch(pattern, off, log_diag, resid)
    nll = np.sum(y * y, axis=1) - 2.0 * np.sum(log_diag, axis=1)
    grad = np.empty_like(params)
    # d nll / d L_ij = 2 r_i y_j for stored strictly-lower entries,
    # d nll / d log_diag_i = 2 r_i y_i L_ii - 2.
    grad[:, :m] = 2.0 * resid[:, pattern.ent_i] * y[:, pattern.ent_j]
    grad[:, m:] = 2.0 * resid * y * np.exp(log_diag) - 2.0
    return nll, grad


def _diagonal_nll_grad_batch(params, mean, x):
    resid = x - mean
    prec_diag = np.exp(2.0 * params)
    nll = np.sum(resid * resid * prec_diag, axis=1) - 2.0 * np.sum(params, axis=1)
    grad = 2.0 * resid * resid * prec_diag - 2.0
    return nll, grad


def _unpack_lowrank(head: LowRankHead, p):
    n, k = head.n, head.rank
    q = p[: n * k].reshape(n, k)
    log_v = p[n * k : n * k + k]
    log_a = p[-1]
    return q, log_v, log_a


def _lowrank_nll_grad_single(head: LowRankHead, p, resid):
    """NLL and gradient for one record, precision side.

    With t = Q^T r, V = diag(exp(log_v)), a = exp(log_a) and capacitance
    C = V^-1 + Q^T Q / a:

        nll  = -(n log a + sum(log_v) + log|C|) + a r^T r + sum(v t^2)
        d/dQ = -(2/a) Q C^-1 + 2 r (v t)^T
        d/d log_v_k = -(1 - (C^-1)_kk / v_k) + v_k t_k^2
        d/d log_a   = a * (-(n/a - tr(C^-1 Q^T Q)/a^2) + r^T r)
    """
    n, k = head.n, head.rank
    q, log_v, log_a = _unpack_lowrank(head, p)
    a = np.exp(log_a)
    v = np.exp(log_v)
    t = q.T @ resid
    rr = float(resid @ resid)
    gram = q.T @ q
    cap = np.diag(1.0 / v) + gram / a
    cap_inv = np.linalg.inv(cap)
    sign, logdet_cap = np.linalg.slogdet(cap)
    if sign <= 0:
        raise FloatingPointError("capacitance lost positive definiteness")
    logdet_s = n * np.log(a) + float(np.sum(log_v)) + logdet_cap
    nll = -logdet_s + a * rr + float(v * t @ t)
    grad = np.empty_like(p)
    grad_q = -(2.0 / a) * (q @ cap_inv) + 2.0 * np.outer(resid, v * t)
    grad[: n * k] = grad_q.ravel()
    grad[n * k : n * k + k] = -(1.0 - np.diag(cap_inv) / v) + v * t * t
    grad[-1] = a * (rr - n / a + float(np.sum(cap_inv * gram)) / a**2)
    return nll, grad


def _head_nll_grad_batch(head: Head, params, mean, x):
    if isinstance(head, SparseHead):
        return _sparse_nll_grad_batch(head, params, mean, x)
    if isinstance(head, DiagonalHead):
        return _diagonal_nll_grad_batch(params, mean, x)
    nll = np.empty(params.shape[0])
    grad = np.empty_like(params)
    resid = x - mean
    for b in range(params.shape[0]):
        nll[b], grad[b] = _lowrank_nll_grad_single(head, params[b], resid[b])
    return nll, grad


def nll_grad_wrt_params(head: Head, params: np.ndarray, mean: np.ndarray, x: np.ndarray):
    """Exact NLL and its analytic gradient for one record.

    The gradient is aligned with the head's parameter layout (for the sparse
    head: off-diagonals in pattern order, then log diagonals).
    """
    params = np.asarray(params, dtype=np.float64)
    mean = np.asarray(mean, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if params.shape != (head.param_count,):
        raise ValueError(f"params has shape {params.shape}, expected ({head.param_count},)")
    nll, grad = _head_nll_grad_batch(
        head, params[None, :], mean[None, :], x[None, :]
    )
    return float(nll[0]), grad[0]


# ---------------------------------------------------------------------------
# Prediction handle


@dataclass(frozen=True)
class PredictedGaussian:
    """One record's predicted residual distribution."""

    head: Head
    params: np.ndarray
    mean: np.ndarray

    def _sparse(self) -> SparseCholesky:
        pattern = self.head.pattern
        m = pattern.offdiag_count
        return SparseCholesky(
            pattern=pattern,
            log_diag=self.params[m:],
            off_diag=self.params[:m],
        )

    def _lowrank(self) -> LowRankFactor:
        q, log_v, log_a = _unpack_lowrank(self.head, self.params)
        return LowRankFactor(q=q, log_v=log_v, diag_a=float(np.exp(log_a)), mode=PRECISION_SIDE)

    def nll(self, x: np.ndarray) -> float:
        if isinstance(self.head, SparseHead):
            return nll_sparse(self._sparse(), self.mean, x)
        if isinstance(self.head, DiagonalHead):
            nll, _ = _diagonal_nll_grad_batch(
                self.params[None, :], self.mean[None, :], np.asarray(x, dtype=np.float64)[None, :]
            )
            return float(nll[0])
        return lr_nll(self._lowrank(), self.mean, x)

    def sample(self, u: np.ndarray) -> np.ndarray:
        if isinstance(self.head, SparseHead):
            return sample_sparse(self._sparse(), self.mean, u)
        if isinstance(self.head, DiagonalHead):
            return self.mean + np.asarray(u, dtype=np.float64) * np.exp(-self.params)
        return lr_sample(self._lowrank(), self.mean, u)

    def densify(self) -> DenseGaussian:
        """Equivalent dense-precision-factor Gaussian."""
        if isinstance(self.head, SparseHead):
            factor = to_dense(self._sparse())
        elif isinstance(self.head, DiagonalHead):
            factor = np.diag(np.exp(self.params))
        else:
            factor = chol_factor(implied_dense(self._lowrank()))
        return DenseGaussian(mean=self.mean, chol_precision=factor)

    def covariance(self) -> np.ndarray:
        """Dense predicted covariance (for comparison metrics)."""
        if isinstance(self.head, SparseHead):
            return covariance_from_factor(to_dense(self._sparse()))
        if isinstance(self.head, DiagonalHead):
            return np.diag(np.exp(-2.0 * self.params))
        return woodbury_inverse(self._lowrank())


def predict_gaussian(reg: CondRegressor, cond: np.ndarray, mean: np.ndarray) -> PredictedGaussian:
    """Run the regressor on one conditioning vector and wrap the result."""
    mean = np.asarray(mean, dtype=np.float64)
    if mean.shape != (reg.head.dim,):
        raise ValueError(f"mean has shape {mean.shape}, expected ({reg.head.dim},)")
    params = forward(reg, np.asarray(cond, dtype=np.float64))
    if params.ndim != 1:
        raise ValueError("predict_gaussian takes a single conditioning vector")
    return PredictedGaussian(head=reg.head, params=params, mean=mean)


# ---------------------------------------------------------------------------
# Training


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 50
    batch_size: int = 64
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    seed: int = 0
    ortho_weight: float = 10.0  # weight of the column-orthonormality penalty (low-rank head)


@dataclass(frozen=True)
class FitReport:
    """Training trace plus final held-out metrics.

    ``test_kl`` / ``test_frob`` are NaN when no ground-truth covariances were
    supplied. All NLL values omit the n log 2 pi constant.
    """

    train_nll: list[float] = field(default_factory=list)
    test_nll: float = float("nan")
    test_kl: float = float("nan")
    test_frob: float = float("nan")
    wall_seconds: float = 0.0


def _ortho_grad_batch(head: LowRankHead, params, weight):
    """Penalty value and gradient, vectorized over the batch."""
    n, k = head.n, head.rank
    q = params[:, : n * k].reshape(-1, n, k)
    gram = np.einsum("bnk,bnl->bkl", q, q)
    delta = gram - np.eye(k)
    value = weight * np.sum(delta * delta, axis=(1, 2))
    grad = np.zeros_like(params)
    grad[:, : n * k] = (4.0 * weight) * np.einsum("bnk,bkl->bnl", q, delta).reshape(
        -1, n * k
    )
    return value, grad


def fit(
    reg: CondRegressor,
    cond: np.ndarray,
    mean: np.ndarray,
    x: np.ndarray,
    config: TrainConfig,
    test_cond: np.ndarray | None = None,
    test_mean: np.ndarray | None = None,
    test_x: np.ndarray | None = None,
    test_gt_cov: np.ndarray | None = None,
) -> FitReport:
    """Adam minimization of the mean exact NLL over minibatches.

    Trains ``reg`` in place. Shuffling and every update are driven by
    ``config.seed`` alone, so two fits from identical initial regressors
    produce bitwise-identical reports. A non-finite batch loss aborts with
    the epoch and batch index.
    """
    start = time.perf_counter()
    cond = np.ascontiguousarray(cond, dtype=np.float64)
    mean = np.ascontiguousarray(mean, dtype=np.float64)
    x = np.ascontiguousarray(x, dtype=np.float64)
    records = cond.shape[0]
    if mean.shape[0] != records or x.shape[0] != records:
        raise ValueError("cond, mean, and x must agree on the number of records")
    if records == 0:
        raise ValueError("cannot fit on an empty dataset")
    if config.epochs < 1 or config.batch_size < 1:
        raise ValueError("epochs and batch_size must be positive")
    rng = np.random.default_rng(config.seed)
    adam_m = [np.zeros_like(w) for w in reg.weights] + [np.zeros_like(b) for b in reg.biases]
    adam_v = [np.zeros_like(w) for w in reg.weights] + [np.zeros_like(b) for b in reg.biases]
    beta1, beta2, eps = config.adam_beta1, config.adam_beta2, config.adam_epsilon
    step = 0
    lowrank = isinstance(reg.head, LowRankHead)
    train_nll = []
    for epoch in range(config.epochs):
        order = rng.permutation(records)
        nll_sum = 0.0
        for batch_idx, lo in enumerate(range(0, records, config.batch_size)):
            batch = order[lo : lo + config.batch_size]
            params, acts = _forward_cached(reg, cond[batch])
            nll, grad_params = _head_nll_grad_batch(reg.head, params, mean[batch], x[batch])
            batch_loss = float(np.sum(nll))
            if not np.isfinite(batch_loss):
                raise FloatingPointError(
                    f"non-finite loss at epoch {epoch}, batch {batch_idx}"
                )
            nll_sum += batch_loss
            if lowrank and config.ortho_weight > 0.0:
                _, pen_grad = _ortho_grad_batch(reg.head, params, config.ortho_weight)
                grad_params = grad_params + pen_grad
            grad_w, grad_b = backward(reg, acts, grad_params / batch.size)
            tensors = reg.weights + reg.biases
            grads = grad_w + grad_b
            step += 1
            corr1 = 1.0 - beta1**step
            corr2 = 1.0 - beta2**step
            for t, g, m_t, v_t in zip(tensors, grads, adam_m, adam_v):
                m_t += (1.0 - beta1) * (g - m_t)
                v_t += (1.0 - beta2) * (g * g - v_t)
                t -= config.learning_rate * (m_t / corr1) / (np.sqrt(v_t / corr2) + eps)
        train_nll.append(nll_sum / records)
    test_nll = test_kl = test_frob = float("nan")
    if test_cond is not None:
        nlls, kls, frobs = evaluate(reg, test_cond, test_mean, test_x, test_gt_cov)
        test_nll = float(np.mean(nlls))
        if test_gt_cov is not None:
            test_kl = float(np.mean(kls))
            test_frob = float(np.mean(frobs))
    return FitReport(
        train_nll=train_nll,
        test_nll=test_nll,
        test_kl=test_kl,
        test_frob=test_frob,
        wall_seconds=time.perf_counter() - start,
    )


def evaluate(
    reg: CondRegressor,
    cond: np.ndarray,
    mean: np.ndarray,
    x: np.ndarray,
    gt_cov: np.ndarray | None = None,
):
    """Per-record NLL, and KL/Frobenius against ground truth when given.

    KL is divergence from the predicted distribution to the ground truth,
    ``KL(N(0, predicted) || N(0, gt))``.
    """
    cond = np.asarray(cond, dtype=np.float64)
    mean = np.asarray(mean, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    records = cond.shape[0]
    params = forward(reg, cond)
    nll, _ = _head_nll_grad_batch(reg.head, params, mean, x)
    kls = np.full(records, np.nan)
    frobs = np.full(records, np.nan)
    if gt_cov is not None:
        for idx in range(records):
            predicted = PredictedGaussian(
                head=reg.head, params=params[idx], mean=mean[idx]
            ).covariance()
            kls[idx] = gaussian_kl(predicted, gt_cov[idx])
            frobs[idx] = frobenius_dist(predicted, gt_cov[idx])
    return nll, kls, frobs


# ---------------------------------------------------------------------------
# Checkpointing

_HEAD_KINDS = {SparseHead: 0, DiagonalHead: 1, LowRankHead: 2}


def save_regressor(dest: str | BinaryIO, reg: CondRegressor) -> None:
    """Checkpoint layout: magic, u32 layer sizes, head descriptor, f64 weights."""
    out = io.BytesIO()
    out.write(CHECKPOINT_MAGIC)
    sizes = reg.layer_sizes
    out.write(struct.pack("<I", len(sizes)))
    out.write(struct.pack(f"<{len(sizes)}I", *sizes))
    head = reg.head
    out.write(struct.pack("<I", _HEAD_KINDS[type(head)]))
    if isinstance(head, SparseHead):
        shape = head.pattern.shape
        out.write(struct.pack("<III", shape.height, shape.width, head.pattern.patch))
    elif isinstance(head, DiagonalHead):
        out.write(struct.pack("<I", head.n))
    else:
        out.write(struct.pack("<II", head.n, head.rank))
    for w, b in zip(reg.weights, reg.biases):
        out.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
        out.write(np.ascontiguousarray(b, dtype="<f8").tobytes())
    data = out.getvalue()
    if isinstance(dest, str):
        with open(dest, "wb") as fh:
            fh.write(data)
    else:
        dest.write(data)


def load_regressor(src: str | BinaryIO) -> CondRegressor:
    """Inverse of :func:`save_regressor`, with layout validation."""
    if isinstance(src, str):
        with open(src, "rb") as fh:
            data = fh.read()
    else:
        data = src.read()
    if data[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"bad magic {data[:4]!r}, expected {CHECKPOINT_MAGIC!r}")
    offset = 4
    (n_layers,) = struct.unpack_from("<I", data, offset)
    offset += 4
    if n_layers < 2:
        raise ValueError("checkpoint must describe at least two layers")
    sizes = list(struct.unpack_from(f"<{n_layers}I", data, offset))
    offset += 4 * n_layers
    (kind,) = struct.unpack_from("<I", data, offset)
    offset += 4
    if kind == 0:
        height, width, patch = struct.unpack_from("<III", data, offset)
        offset += 12
        head: Head = SparseHead(pattern=build_pattern((height, width), patch))
    elif kind == 1:
        (n,) = struct.unpack_from("<I", data, offset)
        offset += 4
        head = DiagonalHead(n=n)
    elif kind == 2:
        n, rank = struct.unpack_from("<II", data, offset)
        offset += 8
        head = LowRankHead(n=n, rank=rank)
    else:
        raise ValueError(f"unknown head kind {kind}")
    if sizes[-1] != head.param_count:
        raise ValueError("output layer does not match the head parameter count")
    weights = []
    biases = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        w = np.frombuffer(data, dtype="<f8", count=fan_in * fan_out, offset=offset)
        offset += 8 * fan_in * fan_out
        b = np.frombuffer(data, dtype="<f8", count=fan_out, offset=offset)
        offset += 8 * fan_out
        weights.append(w.reshape(fan_in, fan_out).copy())
        biases.append(b.copy())
    if offset != len(data):
        raise ValueError(f"checkpoint length {len(data)} does not match header ({offset})")
    return CondRegressor(weights=weights, biases=biases, head=head)
