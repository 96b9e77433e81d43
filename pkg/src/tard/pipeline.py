"""The three-phase protocol: joint training, per-sample test-time training
with a frozen classification head, and prediction.

Training minimizes L_m + alpha1 * L_s over all parameter groups, one graph
per optimizer step. Adaptation minimizes L_s + alpha2 * L_c on a single test
graph, updating only the extractor and the SSL head; the classification head
stays bit-identical. Evaluation runs either episodically (parameters restored
from the trained snapshot before every event; order-invariant and
parallelizable) or online (adapted parameters carry over; order-sensitive by
design).

Determinism: a training run is a pure function of (dataset, config). The
config seed feeds three separate streams (init / epoch order / augmentation),
and each evaluated event gets its own generator derived from (seed, event
id), so episodic results do not depend on event order or thread count.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .graphs import PropGraph, PropagationEvent, to_prop_graph
from .model import (
    ALL_GROUPS,
    GROUP_MAIN,
    GROUP_SHARED,
    GROUP_SSL,
    EmbeddingStats,
    ModelDims,
    TardParams,
    adapt_losses,
    compute_embedding_stats,
    constraint_value,
    embedding_stats,
    forward_main,
    forward_shared,
    init_params,
    main_loss,
    params_from_record,
    params_to_record,
    restore,
    ssl_loss,
    ssl_loss_value,
    stats_from_record,
    stats_to_record,
)
from .nn import AdamState, adam_step, assert_all_finite

EPISODIC = "episodic"
ONLINE = "online"
ADAPTATION_MODES = (EPISODIC, ONLINE)

CHECKPOINT_FORMAT = "tard-checkpoint-v1"

THREADS_ENV_VAR = "TARD_THREADS"


@dataclass(frozen=True)
class TrainConfig:
    """Knobs for training and test-time adaptation.

    alpha1 weights the self-supervised loss during training; alpha2 weights
    the statistics-alignment penalty during adaptation. ttt_steps = 0 turns
    adaptation off entirely.
    """

    alpha1: float = 1.0
    alpha2: float = 0.1
    epochs: int = 200
    train_lr: float = 5e-3
    ttt_lr: float = 1e-3
    ttt_steps: int = 10
    adaptation_mode: str = EPISODIC
    seed: int = 0
    d_hidden: int = 16
    shared_layers: int = 1
    main_layers: int = 1
    ssl_layers: int = 1
    adjacency: str = "undirected"
    patience: int = 20
    min_delta: float = 1e-4

    def __post_init__(self) -> None:
        if not np.isfinite(self.alpha1) or self.alpha1 < 0:
            raise ValueError("alpha1 must be finite and >= 0")
        if not np.isfinite(self.alpha2) or self.alpha2 < 0:
            raise ValueError("alpha2 must be finite and >= 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not 0 < self.train_lr < np.inf or not 0 < self.ttt_lr < np.inf:
            raise ValueError("learning rates must be finite and positive")
        if self.ttt_steps < 0:
            raise ValueError("ttt_steps must be >= 0")
        if self.adaptation_mode not in ADAPTATION_MODES:
            raise ValueError(
                f"adaptation_mode must be one of {ADAPTATION_MODES}, got {self.adaptation_mode!r}"
            )
        if self.seed < 0:
            raise ValueError("seed must be >= 0")
        for name in ("d_hidden", "shared_layers", "main_layers", "ssl_layers"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.adjacency not in ("undirected", "directed"):
            raise ValueError("adjacency must be 'undirected' or 'directed'")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if not 0 <= self.min_delta < np.inf:
            raise ValueError("min_delta must be finite and >= 0")


@dataclass
class TrainedModel:
    """Training output: parameters, training-set embedding stats, provenance."""

    params: TardParams
    train_stats: EmbeddingStats
    config: TrainConfig
    training_log: list[dict] = field(default_factory=list)


@dataclass(frozen=True)
class AdaptTrace:
    """Loss bookkeeping around one adaptation call.

    ls_pre/ls_post are evaluated with the same probe permutation so they are
    comparable; lc_* is the alignment penalty, which needs no randomness.
    """

    ls_pre: float
    ls_post: float
    lc_pre: float
    lc_post: float
    steps: int


@dataclass(frozen=True)
class EventRecord:
    """Per-event evaluation result, one JSONL line in reports."""

    event_id: str
    label: int
    pred: int
    probs: tuple[float, ...]
    ls_pre: float
    ls_post: float
    lc_pre: float
    lc_post: float
    steps: int
    wall_time_s: float

    def to_json_dict(self) -> dict:
        return {
            "id": self.event_id,
            "label": self.label,
            "pred": self.pred,
            "probs": list(self.probs),
            "ls_pre": self.ls_pre,
            "ls_post": self.ls_post,
            "lc_pre": self.lc_pre,
            "lc_post": self.lc_post,
            "steps": self.steps,
            "wall_time_s": self.wall_time_s,
        }

    @staticmethod
    def from_json_dict(rec: dict) -> "EventRecord":
        return EventRecord(
            event_id=rec["id"],
            label=int(rec["label"]),
            pred=int(rec["pred"]),
            probs=tuple(float(p) for p in rec["probs"]),
            ls_pre=float(rec["ls_pre"]),
            ls_post=float(rec["ls_post"]),
            lc_pre=float(rec["lc_pre"]),
            lc_post=float(rec["lc_post"]),
            steps=int(rec["steps"]),
            wall_time_s=float(rec["wall_time_s"]),
        )


def training_streams(
    seed: int,
) -> tuple[np.random.SeedSequence, np.random.Generator, np.random.Generator]:
    """Split one seed into (init seed, epoch-order rng, augmentation rng).

    Separate streams keep degeneracies exact: with alpha1 = 0 the
    augmentation stream is never drawn from, so parameter updates match a
    run that never had an SSL head.
    """
    ss_init, ss_order, ss_aug = np.random.SeedSequence(seed).spawn(3)
    return ss_init, np.random.default_rng(ss_order), np.random.default_rng(ss_aug)


def _check_feature_dims(events: Sequence[PropagationEvent]) -> int:
    d = events[0].feature_dim
    for e in events[1:]:
        if e.feature_dim != d:
            raise ValueError(
                f"inconsistent feature dims: event {e.id!r} has {e.feature_dim}, expected {d}"
            )
    return d


def train_phase(
    train_set: Sequence[PropagationEvent],
    config: TrainConfig,
    num_classes: int | None = None,
) -> TrainedModel:
    """Joint training of extractor, classification head and SSL head.

    One graph per optimizer step; epoch order reshuffled from the order
    stream. Early-stops when the epoch objective stops improving by at least
    min_delta for `patience` consecutive epochs. Embedding stats are computed
    from the final parameters over the whole training set.
    """
    if not train_set:
        raise ValueError("empty training set")
    d_in = _check_feature_dims(train_set)
    labels = [e.label for e in train_set]
    if num_classes is None:
        num_classes = max(max(labels) + 1, 2)
    bad = [e.id for e in train_set if not 0 <= e.label < num_classes]
    if bad:
        raise ValueError(f"labels outside [0, {num_classes}) for events {bad[:5]}")

    dims = ModelDims(
        d_in=d_in,
        d_hidden=config.d_hidden,
        num_classes=num_classes,
        shared_layers=config.shared_layers,
        main_layers=config.main_layers,
        ssl_layers=config.ssl_layers,
    )
    ss_init, order_rng, aug_rng = training_streams(config.seed)
    params = init_params(dims, ss_init)
    graphs = [to_prop_graph(e, mode=config.adjacency) for e in train_set]

    # With alpha1 = 0 the SSL head receives no gradient; leaving it out of the
    # optimizer makes the pure-supervised degeneracy exact by construction.
    opt_groups = ALL_GROUPS if config.alpha1 != 0.0 else (GROUP_SHARED, GROUP_MAIN)
    named = params.named_parameters(opt_groups)
    opt = AdamState(lr=config.train_lr)

    log: list[dict] = []
    best = np.inf
    stale = 0
    for epoch in range(config.epochs):
        order = order_rng.permutation(len(graphs))
        sum_lm = 0.0
        sum_ls = 0.0
        for idx in order:
            params.zero_grads(opt_groups)
            lm, _ = main_loss(graphs[idx], labels[idx], params)
            sum_lm += lm
            if config.alpha1 != 0.0:
                sum_ls += ssl_loss(
                    graphs[idx], params, rng=aug_rng, grad_scale=config.alpha1
                )
            adam_step(named, opt)
        mean_lm = sum_lm / len(graphs)
        mean_ls = sum_ls / len(graphs)
        objective = mean_lm + config.alpha1 * mean_ls
        log.append({"epoch": epoch, "l_m": mean_lm, "l_s": mean_ls, "objective": objective})
        if objective < best - config.min_delta:
            best = objective
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break

    train_stats = compute_embedding_stats(graphs, params)
    return TrainedModel(
        params=params, train_stats=train_stats, config=config, training_log=log
    )


def with_config(model: TrainedModel, **overrides) -> TrainedModel:
    """Same trained parameters under different adaptation knobs.

    Ablation variants come from here, so their checkpoints are identical by
    construction.
    """
    return TrainedModel(
        params=model.params,
        train_stats=model.train_stats,
        config=replace(model.config, **overrides),
        training_log=model.training_log,
    )


def ttt_adapt(
    graph: PropGraph,
    model: TrainedModel,
    rng: np.random.Generator,
    params: TardParams | None = None,
) -> tuple[TardParams, AdaptTrace]:
    """Per-sample test-time training: ttt_steps Adam steps on L_s + alpha2*L_c.

    Starts from `params` when given (online mode) or from the trained
    snapshot. Only the extractor and SSL head move; the classification head
    is not even handed to the optimizer. The input parameters are never
    mutated. The first rng draw is a probe permutation used to score L_s
    before and after; each step then draws its own corruption.
    """
    cfg = model.config
    work = restore(params if params is not None else model.params)
    probe_perm = rng.permutation(graph.num_nodes)

    ls_pre = ssl_loss_value(graph, work, probe_perm)
    lc_pre = constraint_value(
        model.train_stats, embedding_stats(forward_shared(graph, work)[0])
    )

    named = work.named_parameters((GROUP_SHARED, GROUP_SSL))
    opt = AdamState(lr=cfg.ttt_lr)
    for _ in range(cfg.ttt_steps):
        perm = rng.permutation(graph.num_nodes)
        work.zero_grads((GROUP_SHARED, GROUP_SSL))
        adapt_losses(graph, work, model.train_stats, cfg.alpha2, perm)
        adam_step(named, opt)
        for name, p in named:
            assert_all_finite(name, p.value)

    ls_post = ssl_loss_value(graph, work, probe_perm)
    lc_post = constraint_value(
        model.train_stats, embedding_stats(forward_shared(graph, work)[0])
    )
    trace = AdaptTrace(
        ls_pre=ls_pre, ls_post=ls_post, lc_pre=lc_pre, lc_post=lc_post, steps=cfg.ttt_steps
    )
    return work, trace


def predict(graph: PropGraph, params: TardParams) -> tuple[int, np.ndarray]:
    """Class index (ties break toward the lower index) and probability vector."""
    shared_h, _ = forward_shared(graph, params)
    probs, _ = forward_main(shared_h, graph, params)
    return int(np.argmax(probs)), probs


def event_rng(seed: int, event_id: str) -> np.random.Generator:
    """Generator keyed by (seed, event id): stable under test-set reordering."""
    digest = hashlib.sha256(event_id.encode("utf-8")).digest()
    key = int.from_bytes(digest[:8], "big")
    return np.random.default_rng(np.random.SeedSequence([seed, key]))


def _check_model_compat(events: Sequence[PropagationEvent], model: TrainedModel) -> None:
    d = _check_feature_dims(events)
    if d != model.params.dims.d_in:
        raise ValueError(
            f"feature dim mismatch: data has {d}, checkpoint expects {model.params.dims.d_in}"
        )


def _eval_one(
    event: PropagationEvent,
    model: TrainedModel,
    seed: int,
    params: TardParams | None = None,
) -> tuple[EventRecord, TardParams]:
    start = time.perf_counter()
    graph = to_prop_graph(event, mode=model.config.adjacency)
    rng = event_rng(seed, event.id)
    adapted, trace = ttt_adapt(graph, model, rng, params=params)
    pred, probs = predict(graph, adapted)
    wall = time.perf_counter() - start
    record = EventRecord(
        event_id=event.id,
        label=event.label,
        pred=pred,
        probs=tuple(float(p) for p in probs),
        ls_pre=trace.ls_pre,
        ls_post=trace.ls_post,
        lc_pre=trace.lc_pre,
        lc_post=trace.lc_post,
        steps=trace.steps,
        wall_time_s=wall,
    )
    return record, adapted


def resolve_workers(workers: int | None = None) -> int:
    """Worker count for episodic evaluation; TARD_THREADS caps/default it."""
    if workers is None:
        raw = os.environ.get(THREADS_ENV_VAR, "1")
        try:
            workers = int(raw)
        except ValueError as exc:
            raise ValueError(f"{THREADS_ENV_VAR} must be an integer, got {raw!r}") from exc
    return max(1, workers)


def evaluate_episodic(
    test_set: Sequence[PropagationEvent],
    model: TrainedModel,
    seed: int | None = None,
    workers: int | None = None,
) -> list[EventRecord]:
    """Adapt-and-predict each event independently from the trained snapshot.

    Every event's randomness comes from (seed, event id), so records are a
    pure function of (model, event, seed): reordering the test set or
    changing the worker count cannot change any record.
    """
    if not test_set:
        raise ValueError("empty test set")
    _check_model_compat(test_set, model)
    if seed is None:
        seed = model.config.seed
    n_workers = min(resolve_workers(workers), len(test_set))
    if n_workers <= 1:
        return [_eval_one(e, model, seed)[0] for e in test_set]
    with ThreadPoolExecutor(max_workers=n_workers) as pool:
        return [
            rec
            for rec, _ in pool.map(lambda e: _eval_one(e, model, seed), test_set)
        ]


def evaluate_online(
    test_set: Sequence[PropagationEvent],
    model: TrainedModel,
    seed: int | None = None,
) -> list[EventRecord]:
    """Sequential evaluation where adapted parameters carry over between
    events. Order-sensitive by design; a single-event stream matches
    episodic mode exactly."""
    if not test_set:
        raise ValueError("empty test set")
    _check_model_compat(test_set, model)
    if seed is None:
        seed = model.config.seed
    records: list[EventRecord] = []
    running = model.params
    for event in test_set:
        record, running = _eval_one(event, model, seed, params=running)
        records.append(record)
    return records


def evaluate(
    test_set: Sequence[PropagationEvent],
    model: TrainedModel,
    seed: int | None = None,
    workers: int | None = None,
) -> list[EventRecord]:
    """Dispatch on the configured adaptation mode."""
    if model.config.adaptation_mode == ONLINE:
        return evaluate_online(test_set, model, seed=seed)
    return evaluate_episodic(test_set, model, seed=seed, workers=workers)


# --- checkpoint I/O ---------------------------------------------------------

def checkpoint_record(model: TrainedModel) -> dict:
    return {
        "format": CHECKPOINT_FORMAT,
        "config": asdict(model.config),
        "params": params_to_record(model.params),
        "train_stats": stats_to_record(model.train_stats),
        "training_log": model.training_log,
    }


def save_checkpoint(model: TrainedModel, path: str | Path) -> None:
    """JSON checkpoint; float values round-trip bit-exactly."""
    payload = json.dumps(checkpoint_record(model), sort_keys=True, separators=(",", ":"))
    Path(path).write_text(payload + "\n", encoding="utf-8")


def load_checkpoint(path: str | Path) -> TrainedModel:
    try:
        rec = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValueError(f"unreadable checkpoint {path}: {exc}") from exc
    if rec.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(
            f"unsupported checkpoint format {rec.get('format')!r} in {path}"
        )
    return TrainedModel(
        params=params_from_record(rec["params"]),
        train_stats=stats_from_record(rec["train_stats"]),
        config=TrainConfig(**rec["config"]),
        training_log=list(rec["training_log"]),
    )
