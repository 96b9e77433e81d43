"""Y-structure model: a shared GCN extractor feeding a classification head
and a contrastive SSL head, plus embedding statistics for the adaptation
constraint.

Parameter groups:
  theta_e  shared extractor, ``shared_layers`` GCN layers (relu)
  theta_m  classification head: GCN layers (relu), mean readout, affine map
           to class logits, softmax
  theta_s  SSL head: GCN layers, relu on hidden layers and identity on the
           last so discriminator scores can take either sign

Losses accumulate gradients into ``Parameter.grad`` buffers; callers zero
them per step and hand the relevant groups to the optimizer.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .graphs import PropGraph
from .nn import (
    Parameter,
    GcnCache,
    contrastive_loss,
    gcn_backward,
    gcn_forward,
    glorot,
    mean_readout,
    mean_readout_backward,
    softmax,
    softmax_cross_entropy,
)

GROUP_SHARED = "e"
GROUP_MAIN = "m"
GROUP_SSL = "s"
ALL_GROUPS = (GROUP_SHARED, GROUP_MAIN, GROUP_SSL)


@dataclass(frozen=True)
class ModelDims:
    """Architecture record: feature dim, hidden width, classes, layer counts."""

    d_in: int
    d_hidden: int
    num_classes: int = 2
    shared_layers: int = 1
    main_layers: int = 1
    ssl_layers: int = 1

    def __post_init__(self) -> None:
        for name in ("d_in", "d_hidden", "num_classes", "shared_layers", "main_layers", "ssl_layers"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")


@dataclass
class TardParams:
    """The three parameter groups of the Y-structure model."""

    dims: ModelDims
    theta_e: list[Parameter]
    theta_m_gcn: list[Parameter]
    theta_m_out_w: Parameter
    theta_m_out_b: Parameter
    theta_s: list[Parameter]

    def named_parameters(
        self, groups: Iterable[str] = ALL_GROUPS
    ) -> list[tuple[str, Parameter]]:
        named: list[tuple[str, Parameter]] = []
        for g in groups:
            if g == GROUP_SHARED:
                named += [(f"theta_e.{i}", p) for i, p in enumerate(self.theta_e)]
            elif g == GROUP_MAIN:
                named += [(f"theta_m.{i}", p) for i, p in enumerate(self.theta_m_gcn)]
                named += [
                    ("theta_m.out_w", self.theta_m_out_w),
                    ("theta_m.out_b", self.theta_m_out_b),
                ]
            elif g == GROUP_SSL:
                named += [(f"theta_s.{i}", p) for i, p in enumerate(self.theta_s)]
            else:
                raise ValueError(f"unknown parameter group {g!r}")
        return named

    def zero_grads(self, groups: Iterable[str] = ALL_GROUPS) -> None:
        for _, p in self.named_parameters(groups):
            p.zero_grad()


def init_params(dims: ModelDims, seed: int | np.random.SeedSequence) -> TardParams:
    """Glorot-initialized parameters; each group draws from its own stream."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    ss_e, ss_m, ss_s = ss.spawn(3)
    rng_e = np.random.default_rng(ss_e)
    rng_m = np.random.default_rng(ss_m)
    rng_s = np.random.default_rng(ss_s)

    def stack(rng: np.random.Generator, first_in: int, count: int) -> list[Parameter]:
        layers = []
        d = first_in
        for _ in range(count):
            layers.append(glorot(rng, d, dims.d_hidden))
            d = dims.d_hidden
        return layers

    theta_e = stack(rng_e, dims.d_in, dims.shared_layers)
    theta_m_gcn = stack(rng_m, dims.d_hidden, dims.main_layers)
    theta_m_out_w = glorot(rng_m, dims.d_hidden, dims.num_classes)
    theta_m_out_b = Parameter(np.zeros((1, dims.num_classes)))
    theta_s = stack(rng_s, dims.d_hidden, dims.ssl_layers)
    return TardParams(
        dims=dims,
        theta_e=theta_e,
        theta_m_gcn=theta_m_gcn,
        theta_m_out_w=theta_m_out_w,
        theta_m_out_b=theta_m_out_b,
        theta_s=theta_s,
    )


def _run_stack(
    adj: np.ndarray,
    x: np.ndarray,
    layers: Sequence[Parameter],
    activations: Sequence[str],
) -> tuple[np.ndarray, list[GcnCache]]:
    h = x
    caches = []
    for p, act in zip(layers, activations):
        h, cache = gcn_forward(adj, h, p.value, act)  # type: ignore[arg-type]
        caches.append(cache)
    return h, caches


def _backward_stack(
    caches: Sequence[GcnCache],
    layers: Sequence[Parameter],
    grad_out: np.ndarray,
    grad_scale: float,
) -> np.ndarray:
    for cache, p in zip(reversed(caches), reversed(list(layers))):
        grad_out, grad_w = gcn_backward(cache, grad_out)
        p.grad += grad_scale * grad_w
    return grad_out


def forward_shared(
    graph: PropGraph, params: TardParams
) -> tuple[np.ndarray, list[GcnCache]]:
    """Node embeddings from the shared extractor (relu GCN layers)."""
    if graph.features.shape[1] != params.dims.d_in:
        raise ValueError(
            f"feature dim {graph.features.shape[1]} does not match model d_in {params.dims.d_in}"
        )
    acts = ["relu"] * len(params.theta_e)
    return _run_stack(graph.adj_norm, graph.features, params.theta_e, acts)


def backward_shared(
    caches: Sequence[GcnCache],
    grad_out: np.ndarray,
    params: TardParams,
    grad_scale: float = 1.0,
) -> np.ndarray:
    """Push a gradient at the shared output back into theta_e.

    Returns the gradient w.r.t. the input features, mostly for testing.
    """
    return _backward_stack(caches, params.theta_e, grad_out, grad_scale)


@dataclass
class MainCache:
    gcn_caches: list[GcnCache]
    g: np.ndarray  # readout vector
    logits: np.ndarray  # shape (num_classes,)
    num_nodes: int


def forward_main(
    shared_h: np.ndarray, graph: PropGraph, params: TardParams
) -> tuple[np.ndarray, MainCache]:
    """Class probabilities from the classification head."""
    acts = ["relu"] * len(params.theta_m_gcn)
    h, caches = _run_stack(graph.adj_norm, shared_h, params.theta_m_gcn, acts)
    g = mean_readout(h)
    logits = g @ params.theta_m_out_w.value + params.theta_m_out_b.value[0]
    probs = softmax(logits[None, :])[0]
    return probs, MainCache(gcn_caches=caches, g=g, logits=logits, num_nodes=h.shape[0])


def backward_main(
    cache: MainCache,
    grad_logits: np.ndarray,
    params: TardParams,
    grad_scale: float = 1.0,
) -> np.ndarray:
    """Backward through the classification head; returns grad at shared output."""
    params.theta_m_out_w.grad += grad_scale * np.outer(cache.g, grad_logits)
    params.theta_m_out_b.grad += grad_scale * grad_logits[None, :]
    grad_g = params.theta_m_out_w.value @ grad_logits
    grad_h = mean_readout_backward(grad_g, cache.num_nodes)
    return _backward_stack(cache.gcn_caches, params.theta_m_gcn, grad_h, grad_scale)


def main_loss(
    graph: PropGraph,
    label: int,
    params: TardParams,
    grad_scale: float = 1.0,
) -> tuple[float, np.ndarray]:
    """Supervised cross-entropy for one graph; accumulates theta_e and theta_m
    gradients (scaled). theta_s is untouched. Returns (loss, probabilities)."""
    c = params.dims.num_classes
    if not 0 <= label < c:
        raise ValueError(f"label {label} outside [0, {c})")
    shared_h, sh_caches = forward_shared(graph, params)
    probs, cache = forward_main(shared_h, graph, params)
    y = np.zeros((1, c))
    y[0, label] = 1.0
    loss, grad_logits = softmax_cross_entropy(cache.logits[None, :], y)
    grad_shared = backward_main(cache, grad_logits[0], params, grad_scale)
    backward_shared(sh_caches, grad_shared, params, grad_scale)
    return loss, probs


def _ssl_activations(params: TardParams) -> list[str]:
    t = len(params.theta_s)
    return ["relu"] * (t - 1) + ["identity"]


@dataclass
class SslCache:
    shared0: list[GcnCache]
    shared1: list[GcnCache]
    head0: list[GcnCache]
    head1: list[GcnCache]
    perm: np.ndarray
    h_shared0: np.ndarray  # extractor output on the original view


def forward_ssl(
    graph: PropGraph,
    params: TardParams,
    rng: np.random.Generator | None = None,
    perm: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, SslCache]:
    """Embeddings of the original view and a feature-shuffled view.

    The corrupted view keeps the adjacency and permutes feature rows by
    ``perm`` (drawn from ``rng`` when not given). Returns (h0, h1, g0, cache)
    where g0 is the mean readout of h0.
    """
    if perm is None:
        if rng is None:
            raise ValueError("forward_ssl needs either rng or perm")
        perm = rng.permutation(graph.num_nodes)
    perm = np.asarray(perm, dtype=np.intp)
    acts = _ssl_activations(params)
    h_sh0, shared0 = forward_shared(graph, params)
    x1 = graph.features[perm]
    h_sh1, shared1 = _run_stack(
        graph.adj_norm, x1, params.theta_e, ["relu"] * len(params.theta_e)
    )
    h0, head0 = _run_stack(graph.adj_norm, h_sh0, params.theta_s, acts)
    h1, head1 = _run_stack(graph.adj_norm, h_sh1, params.theta_s, acts)
    g0 = mean_readout(h0)
    cache = SslCache(
        shared0=shared0,
        shared1=shared1,
        head0=head0,
        head1=head1,
        perm=perm,
        h_shared0=h_sh0,
    )
    return h0, h1, g0, cache


def ssl_loss(
    graph: PropGraph,
    params: TardParams,
    rng: np.random.Generator | None = None,
    perm: np.ndarray | None = None,
    grad_scale: float = 1.0,
) -> float:
    """Contrastive loss over both views; accumulates theta_e and theta_s
    gradients (scaled). theta_m is untouched."""
    h0, h1, g0, cache = forward_ssl(graph, params, rng=rng, perm=perm)
    loss, grad_h0, grad_h1, grad_g0 = contrastive_loss(h0, h1, g0)
    # g0 = mean(h0), so the readout gradient folds back into h0.
    grad_h0 = grad_h0 + mean_readout_backward(grad_g0, h0.shape[0])
    grad_sh0 = _backward_stack(cache.head0, params.theta_s, grad_h0, grad_scale)
    grad_sh1 = _backward_stack(cache.head1, params.theta_s, grad_h1, grad_scale)
    _backward_stack(cache.shared0, params.theta_e, grad_sh0, grad_scale)
    _backward_stack(cache.shared1, params.theta_e, grad_sh1, grad_scale)
    return loss


def ssl_loss_value(
    graph: PropGraph, params: TardParams, perm: np.ndarray
) -> float:
    """Contrastive loss only, no gradient accumulation."""
    h0, h1, g0, _ = forward_ssl(graph, params, perm=perm)
    loss, _, _, _ = contrastive_loss(h0, h1, g0)
    return loss


def main_loss_value(
    graph: PropGraph, label: int, params: TardParams
) -> tuple[float, np.ndarray]:
    """Supervised cross-entropy without gradient accumulation."""
    c = params.dims.num_classes
    if not 0 <= label < c:
        raise ValueError(f"label {label} outside [0, {c})")
    shared_h, _ = forward_shared(graph, params)
    probs, cache = forward_main(shared_h, graph, params)
    y = np.zeros((1, c))
    y[0, label] = 1.0
    loss, _ = softmax_cross_entropy(cache.logits[None, :], y)
    return loss, probs


@dataclass
class EmbeddingStats:
    """Mean vector and population covariance of pooled node embeddings."""

    mu: np.ndarray
    eta: np.ndarray
    count: int


def embedding_stats(h: np.ndarray) -> EmbeddingStats:
    """Stats of one embedding matrix (rows = nodes). Population covariance."""
    n = h.shape[0]
    if n < 1:
        raise ValueError("need at least one node")
    mu = h.mean(axis=0)
    centered = h - mu
    eta = centered.T @ centered / n
    eta = (eta + eta.T) / 2.0  # exact symmetry despite float round-off
    return EmbeddingStats(mu=mu, eta=eta, count=n)


def compute_embedding_stats(
    graphs: Sequence[PropGraph], params: TardParams
) -> EmbeddingStats:
    """Stats over ALL node embeddings of a graph collection (shared extractor)."""
    if not graphs:
        raise ValueError("empty graph collection")
    rows = [forward_shared(g, params)[0] for g in graphs]
    return embedding_stats(np.vstack(rows))


def constraint_value(train_stats: EmbeddingStats, test_stats: EmbeddingStats) -> float:
    """Alignment penalty: squared mean distance plus squared Frobenius
    covariance distance. The covariance term is skipped for a single-node
    test side, where covariance carries no information."""
    if train_stats.mu.shape != test_stats.mu.shape:
        raise ValueError(
            f"stats dims differ: {train_stats.mu.shape} vs {test_stats.mu.shape}"
        )
    diff_mu = train_stats.mu - test_stats.mu
    value = float(diff_mu @ diff_mu)
    if test_stats.count > 1:
        diff_eta = train_stats.eta - test_stats.eta
        value += float((diff_eta * diff_eta).sum())
    return value


def constraint_loss(
    train_stats: EmbeddingStats, test_h: np.ndarray
) -> tuple[float, np.ndarray, EmbeddingStats]:
    """Alignment penalty of test-side embeddings against training stats.

    Train-side stats are constants. Returns (value, grad w.r.t. test_h,
    test-side stats). For node embeddings h_i with mean mu_t and population
    covariance eta_t:

      d/dh_i = (2/N)(mu_t - mu) + (4/N)(eta_t - eta)(h_i - mu_t)

    with the covariance part dropped when N = 1.
    """
    stats = embedding_stats(test_h)
    if train_stats.mu.shape != stats.mu.shape:
        raise ValueError(
            f"stats dims differ: {train_stats.mu.shape} vs {stats.mu.shape}"
        )
    n = stats.count
    value = constraint_value(train_stats, stats)
    grad = np.tile(2.0 / n * (stats.mu - train_stats.mu), (n, 1))
    if n > 1:
        centered = test_h - stats.mu
        grad += 4.0 / n * centered @ (stats.eta - train_stats.eta)
    return value, grad, stats


def adapt_losses(
    graph: PropGraph,
    params: TardParams,
    train_stats: EmbeddingStats,
    alpha2: float,
    perm: np.ndarray,
    grad_scale: float = 1.0,
) -> tuple[float, float, EmbeddingStats]:
    """One adaptation objective evaluation: L_s plus the alignment penalty.

    Accumulates d(L_s + alpha2 * L_c)/dtheta into theta_e and theta_s (scaled
    by grad_scale). The penalty acts on the extractor output of the original
    view, so its gradient enters through theta_e only. Returns
    (ssl loss, penalty value, test-side stats). The penalty value is reported
    even when alpha2 = 0, where it does not contribute gradients.
    """
    h0, h1, g0, cache = forward_ssl(graph, params, perm=perm)
    ls, grad_h0, grad_h1, grad_g0 = contrastive_loss(h0, h1, g0)
    grad_h0 = grad_h0 + mean_readout_backward(grad_g0, h0.shape[0])
    grad_sh0 = _backward_stack(cache.head0, params.theta_s, grad_h0, grad_scale)
    grad_sh1 = _backward_stack(cache.head1, params.theta_s, grad_h1, grad_scale)
    lc, grad_constraint, stats_t = constraint_loss(train_stats, cache.h_shared0)
    if alpha2 != 0.0:
        grad_sh0 = grad_sh0 + alpha2 * grad_constraint
    _backward_stack(cache.shared0, params.theta_e, grad_sh0, grad_scale)
    _backward_stack(cache.shared1, params.theta_e, grad_sh1, grad_scale)
    return ls, lc, stats_t


def snapshot(params: TardParams) -> TardParams:
    """Deep value copy with zeroed gradients; safe to stash and share."""
    return TardParams(
        dims=params.dims,
        theta_e=[Parameter(p.value.copy()) for p in params.theta_e],
        theta_m_gcn=[Parameter(p.value.copy()) for p in params.theta_m_gcn],
        theta_m_out_w=Parameter(params.theta_m_out_w.value.copy()),
        theta_m_out_b=Parameter(params.theta_m_out_b.value.copy()),
        theta_s=[Parameter(p.value.copy()) for p in params.theta_s],
    )


def restore(snap: TardParams) -> TardParams:
    """Fresh working copy of a snapshot (bit-identical values)."""
    return snapshot(snap)


# --- serialization ----------------------------------------------------------

def _matrix_record(p: Parameter) -> dict:
    return {"shape": list(p.value.shape), "data": p.value.reshape(-1).tolist()}


def _matrix_from_record(rec: dict) -> Parameter:
    value = np.array(rec["data"], dtype=np.float64).reshape(rec["shape"])
    return Parameter(value)


def params_to_record(params: TardParams) -> dict:
    """JSON-safe record of dims plus all named matrices (row-major values)."""
    from dataclasses import asdict

    return {
        "dims": asdict(params.dims),
        "matrices": {name: _matrix_record(p) for name, p in params.named_parameters()},
    }


def params_from_record(rec: dict) -> TardParams:
    dims = ModelDims(**rec["dims"])
    mats = rec["matrices"]

    def take(name: str) -> Parameter:
        if name not in mats:
            raise ValueError(f"checkpoint is missing matrix {name!r}")
        return _matrix_from_record(mats[name])

    return TardParams(
        dims=dims,
        theta_e=[take(f"theta_e.{i}") for i in range(dims.shared_layers)],
        theta_m_gcn=[take(f"theta_m.{i}") for i in range(dims.main_layers)],
        theta_m_out_w=take("theta_m.out_w"),
        theta_m_out_b=take("theta_m.out_b"),
        theta_s=[take(f"theta_s.{i}") for i in range(dims.ssl_layers)],
    )


def group_bytes(params: TardParams, group: str) -> bytes:
    """Canonical byte serialization of one parameter group.

    Used for frozen-head assertions: byte equality here means bit-identical
    parameter values.
    """
    record = {
        name: _matrix_record(p) for name, p in params.named_parameters(groups=(group,))
    }
    return json.dumps(record, sort_keys=True, separators=(",", ":")).encode()


def stats_to_record(stats: EmbeddingStats) -> dict:
    return {"mu": stats.mu.tolist(), "eta": stats.eta.tolist(), "count": stats.count}


def stats_from_record(rec: dict) -> EmbeddingStats:
    return EmbeddingStats(
        mu=np.array(rec["mu"], dtype=np.float64),
        eta=np.array(rec["eta"], dtype=np.float64),
        count=int(rec["count"]),
    )
