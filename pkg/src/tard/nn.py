"""Dense numeric kernel: GCN layer with hand-derived gradients, mean readout,
contrastive discriminator, losses, Adam, and a finite-difference checker.

Everything runs in float64. Each ``*_backward`` is the exact gradient of the
matching forward map, which the finite-difference checker verifies.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Literal, Mapping, Sequence

import numpy as np

Activation = Literal["relu", "identity"]

#: Lower clamp for log arguments in the contrastive loss, so a saturated
#: discriminator yields a large finite loss instead of -inf. Gradients are
#: zero inside the clamped region.
LOG_EPS = 1e-12


def assert_all_finite(name: str, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"non-finite values in {name}")


@dataclass
class Parameter:
    """A trainable matrix and its gradient accumulator (same shape)."""

    value: np.ndarray
    grad: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        self.value = np.asarray(self.value, dtype=np.float64)
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        else:
            self.grad = np.asarray(self.grad, dtype=np.float64)
        if self.grad.shape != self.value.shape:
            raise ValueError(
                f"grad shape {self.grad.shape} != value shape {self.value.shape}"
            )

    def zero_grad(self) -> None:
        self.grad.fill(0.0)


def glorot(rng: np.random.Generator, rows: int, cols: int) -> Parameter:
    """Glorot-uniform initialized parameter."""
    limit = np.sqrt(6.0 / (rows + cols))
    return Parameter(rng.uniform(-limit, limit, size=(rows, cols)))


def sigmoid(x: np.ndarray | float) -> np.ndarray | float:
    arr = np.asarray(x, dtype=np.float64)
    flat = np.atleast_1d(arr)
    out = np.empty_like(flat)
    pos = flat >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-flat[pos]))
    ex = np.exp(flat[~pos])
    out[~pos] = ex / (1.0 + ex)
    if arr.ndim == 0:
        return float(out[0])
    return out.reshape(arr.shape)


@dataclass
class GcnCache:
    """Intermediates of one gcn_forward call, enough for the exact backward."""

    adj_norm: np.ndarray
    w: np.ndarray
    ah: np.ndarray  # adj_norm @ h
    z: np.ndarray  # pre-activation ah @ w
    activation: Activation


def gcn_forward(
    adj_norm: np.ndarray,
    h: np.ndarray,
    w: np.ndarray,
    activation: Activation = "relu",
) -> tuple[np.ndarray, GcnCache]:
    """One graph convolution: act(adj_norm @ h @ w)."""
    if adj_norm.shape[0] != adj_norm.shape[1] or adj_norm.shape[1] != h.shape[0]:
        raise ValueError(f"adjacency {adj_norm.shape} does not match h {h.shape}")
    if h.shape[1] != w.shape[0]:
        raise ValueError(f"h {h.shape} does not match w {w.shape}")
    ah = adj_norm @ h
    z = ah @ w
    if activation == "relu":
        out = np.maximum(z, 0.0)
    elif activation == "identity":
        out = z
    else:
        raise ValueError(f"unknown activation {activation!r}")
    return out, GcnCache(adj_norm=adj_norm, w=w, ah=ah, z=z, activation=activation)


def gcn_backward(cache: GcnCache, upstream: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of gcn_forward w.r.t. its inputs h and w.

    The adjacency is treated as a constant. Returns (grad_h, grad_w).
    """
    if upstream.shape != cache.z.shape:
        raise ValueError(f"upstream {upstream.shape} does not match output {cache.z.shape}")
    if cache.activation == "relu":
        dz = upstream * (cache.z > 0.0)
    else:
        dz = upstream
    grad_w = cache.ah.T @ dz
    grad_h = cache.adj_norm.T @ (dz @ cache.w.T)
    return grad_h, grad_w


def mean_readout(h: np.ndarray) -> np.ndarray:
    """Column-wise mean of node embeddings: the global graph representation."""
    return h.mean(axis=0)


def mean_readout_backward(grad_out: np.ndarray, num_nodes: int) -> np.ndarray:
    """Gradient of mean_readout: 1/N of the upstream vector to every row."""
    return np.tile(grad_out / num_nodes, (num_nodes, 1))


def discriminator(h_i: np.ndarray, g: np.ndarray) -> float:
    """Sigmoid of the inner product between a node embedding and a readout."""
    if h_i.shape != g.shape:
        raise ValueError(f"shape mismatch {h_i.shape} vs {g.shape}")
    return float(sigmoid(float(h_i @ g)))


def contrastive_loss(
    h0: np.ndarray, h1: np.ndarray, g0: np.ndarray
) -> tuple[float, np.ndarray, np.ndarray, np.ndarray]:
    """Node-vs-readout contrastive loss over an original and a corrupted view.

    loss = -(1/2N) sum_i [log D(h0_i, g0) + log(1 - D(h1_i, g0))]
    with D the sigmoid inner-product discriminator and log arguments clamped
    below at LOG_EPS. Returns (loss, grad_h0, grad_h1, grad_g0); g0 is
    treated as an independent input here (callers chain it to h0 themselves).
    """
    if h0.shape != h1.shape:
        raise ValueError(f"view shapes differ: {h0.shape} vs {h1.shape}")
    if h0.shape[1] != g0.shape[0]:
        raise ValueError(f"g0 length {g0.shape} does not match {h0.shape}")
    n = h0.shape[0]
    p = np.asarray(sigmoid(h0 @ g0))  # positive-pair scores
    q = np.asarray(sigmoid(h1 @ g0))  # negative-pair scores
    pos_arg = np.maximum(p, LOG_EPS)
    neg_arg = np.maximum(1.0 - q, LOG_EPS)
    loss = -(np.log(pos_arg).sum() + np.log(neg_arg).sum()) / (2.0 * n)
    # d/ds log(sigmoid(s)) = 1 - p ; d/dt log(1 - sigmoid(t)) = -q,
    # zeroed where the clamp is active.
    ds = np.where(p > LOG_EPS, -(1.0 - p) / (2.0 * n), 0.0)
    dt = np.where(1.0 - q > LOG_EPS, q / (2.0 * n), 0.0)
    grad_h0 = ds[:, None] * g0[None, :]
    grad_h1 = dt[:, None] * g0[None, :]
    grad_g0 = ds @ h0 + dt @ h1
    return float(loss), grad_h0, grad_h1, grad_g0


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax, stabilized by max subtraction."""
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(
    logits: np.ndarray, labels_one_hot: np.ndarray
) -> tuple[float, np.ndarray]:
    """Mean cross-entropy of row-softmax(logits) against one-hot labels.

    Log-probabilities come from the max-subtracted log-sum-exp form, so the
    loss stays finite for any finite logits. Returns (loss, grad_logits).
    """
    if logits.shape != labels_one_hot.shape:
        raise ValueError(f"logits {logits.shape} vs labels {labels_one_hot.shape}")
    row_sums = labels_one_hot.sum(axis=1)
    if not (
        np.all(np.isin(labels_one_hot, (0.0, 1.0))) and np.allclose(row_sums, 1.0)
    ):
        raise ValueError("labels must be one-hot rows")
    b = logits.shape[0]
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    loss = -(labels_one_hot * log_probs).sum() / b
    grad = (softmax(logits) - labels_one_hot) / b
    return float(loss), grad


@dataclass
class AdamState:
    """Adam moments keyed by parameter name; touches only the names it is fed."""

    lr: float = 5e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(named_params: Sequence[tuple[str, Parameter]], state: AdamState) -> None:
    """One Adam update with bias correction over the given parameters.

    Parameters not present in ``named_params`` are left untouched, including
    their moment buffers.
    """
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for name, p in named_params:
        m = state.m.setdefault(name, np.zeros_like(p.value))
        v = state.v.setdefault(name, np.zeros_like(p.value))
        g = p.grad
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p.value -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


@dataclass
class GradCheckEntry:
    name: str
    max_rel_error: float
    ok: bool


@dataclass
class GradCheckReport:
    entries: list[GradCheckEntry]
    tolerance: float

    @property
    def max_rel_error(self) -> float:
        return max((e.max_rel_error for e in self.entries), default=0.0)

    @property
    def ok(self) -> bool:
        return all(e.ok for e in self.entries)


def finite_difference_check(
    loss_fn: Callable[[], tuple[float, Mapping[str, np.ndarray]]],
    named_params: Sequence[tuple[str, Parameter]],
    step: float = 1e-5,
    tolerance: float = 1e-5,
    scale_floor: float = 1e-3,
) -> GradCheckReport:
    """Central-difference check of analytic gradients.

    ``loss_fn`` must be deterministic and pure given the current parameter
    values; it returns the loss and analytic gradients keyed like
    ``named_params``. Each entry's error is |analytic - numeric| divided by
    max(|analytic|, |numeric|, scale_floor); below ``scale_floor`` the
    comparison degrades to an absolute check, which keeps finite-difference
    round-off from dominating near-zero gradients.
    """
    _, analytic = loss_fn()
    analytic = {name: np.array(g, dtype=np.float64) for name, g in analytic.items()}
    entries = []
    for name, p in named_params:
        grad_a = analytic[name]
        if grad_a.shape != p.value.shape:
            raise ValueError(f"{name}: gradient shape {grad_a.shape} != {p.value.shape}")
        worst = 0.0
        flat = p.value.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up, _ = loss_fn()
            flat[i] = orig - step
            down, _ = loss_fn()
            flat[i] = orig
            numeric = (up - down) / (2.0 * step)
            a = grad_a.reshape(-1)[i]
            denom = max(abs(a), abs(numeric), scale_floor)
            worst = max(worst, abs(a - numeric) / denom)
        entries.append(GradCheckEntry(name=name, max_rel_error=worst, ok=worst < tolerance))
    return GradCheckReport(entries=entries, tolerance=tolerance)
