"""Synthetic propagation-cascade generator with a controllable
source-to-target distribution shift.

Events are random trees rooted at node 0. The class signal lives in two
channels: node features are drawn around one of two antipodal class means,
and tree shape (chain-like vs star-like) is tilted per class by
``structure_signal_strength``. A shift rotates and translates the class
means, rescales feature noise and cascade sizes, and nudges the branching
behavior — so a model trained on the source domain faces a genuinely moved
test distribution.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .graphs import InvalidEventError, PropagationEvent

ROOT_FEATURE_MARK = 1.0  # added to the last coordinate of the root's features


@dataclass(frozen=True)
class DomainSpec:
    """Everything needed to sample one domain's events, seed included.

    ``mean_rotation`` (radians, applied in the plane of the first two feature
    coordinates) and ``mean_translation`` position the class-mean axis; they
    start neutral for a source domain and are populated by ``apply_shift``.
    """

    num_events: int
    feature_dim: int
    class_mean_separation: float
    feature_noise_std: float
    size_dist: tuple[int, int]
    branching_bias: float
    structure_signal_strength: float
    seed: int
    class_balance: float = 0.5
    mean_rotation: float = 0.0
    mean_translation: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        if self.num_events < 1:
            raise ValueError("num_events must be >= 1")
        if self.feature_dim < 1:
            raise ValueError("feature_dim must be >= 1")
        if not 0.0 <= self.class_balance <= 1.0:
            raise ValueError("class_balance must lie in [0, 1]")
        if not 0.0 <= self.class_mean_separation < math.inf:
            raise ValueError("class_mean_separation must be finite and >= 0")
        if not 0.0 < self.feature_noise_std < math.inf:
            raise ValueError("feature_noise_std must be finite and > 0")
        lo, hi = self.size_dist
        if lo < 1 or hi < lo:
            raise ValueError("size_dist must satisfy 1 <= min <= max")
        if not 0.0 <= self.branching_bias <= 1.0:
            raise ValueError("branching_bias must lie in [0, 1]")
        if not 0.0 <= self.structure_signal_strength < math.inf:
            raise ValueError("structure_signal_strength must be finite and >= 0")
        if self.seed < 0:
            raise ValueError("seed must be >= 0")
        if not math.isfinite(self.mean_rotation):
            raise ValueError("mean_rotation must be finite")
        if self.mean_rotation != 0.0 and self.feature_dim < 2:
            raise ValueError("mean_rotation needs feature_dim >= 2")
        translation = self.mean_translation
        if translation is None:
            translation = (0.0,) * self.feature_dim
        translation = tuple(float(v) for v in translation)
        if len(translation) != self.feature_dim:
            raise ValueError(
                f"mean_translation has length {len(translation)}, expected {self.feature_dim}"
            )
        if not all(math.isfinite(v) for v in translation):
            raise ValueError("mean_translation must be finite")
        object.__setattr__(self, "mean_translation", translation)

    def class_means(self) -> tuple[np.ndarray, np.ndarray]:
        """Antipodal means for class 0 / class 1, rotated then translated."""
        axis = np.zeros(self.feature_dim)
        axis[0] = math.cos(self.mean_rotation)
        if self.feature_dim > 1:
            axis[1] = math.sin(self.mean_rotation)
        offset = np.asarray(self.mean_translation, dtype=np.float64)
        half = 0.5 * self.class_mean_separation * axis
        return offset - half, offset + half


@dataclass(frozen=True)
class ShiftSpec:
    """Source-to-target transformation applied to a DomainSpec."""

    rotation_angle: float = 0.0
    mean_translation: tuple[float, ...] = ()
    noise_scale_factor: float = 1.0
    size_scale_factor: float = 1.0
    branching_shift: float = 0.0

    def __post_init__(self) -> None:
        for name in ("rotation_angle", "noise_scale_factor", "size_scale_factor", "branching_shift"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if self.noise_scale_factor <= 0:
            raise ValueError("noise_scale_factor must be > 0")
        if self.size_scale_factor <= 0:
            raise ValueError("size_scale_factor must be > 0")
        if not all(math.isfinite(v) for v in self.mean_translation):
            raise ValueError("mean_translation must be finite")
        object.__setattr__(
            self, "mean_translation", tuple(float(v) for v in self.mean_translation)
        )


def _domain_tag(seed: int) -> str:
    return hashlib.sha256(f"domain:{seed}".encode()).hexdigest()[:8]


def derive_split_seed(seed: int, name: str) -> int:
    """Deterministic child seed for a named split or transformation."""
    digest = hashlib.sha256(f"{name}:{seed}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


def derive_target_seed(seed: int) -> int:
    return derive_split_seed(seed, "shift")


def _generate_event(spec: DomainSpec, event_id: str, ss: np.random.SeedSequence) -> PropagationEvent:
    rng = np.random.default_rng(ss)
    label = int(rng.random() < spec.class_balance)
    lo, hi = spec.size_dist
    n = int(rng.integers(lo, hi + 1))

    # Attachment rule: with probability b_eff the new node replies to the
    # root (star-like), otherwise to the latest node (chain-like). The class
    # tilts b_eff so tree shape carries label information.
    b_eff = spec.branching_bias + (label - 0.5) * spec.structure_signal_strength
    b_eff = min(1.0, max(0.0, b_eff))
    edges = []
    for k in range(1, n):
        parent = 0 if rng.random() < b_eff else k - 1
        edges.append((parent, k))

    mean0, mean1 = spec.class_means()
    mean = mean1 if label == 1 else mean0
    features = mean + spec.feature_noise_std * rng.standard_normal((n, spec.feature_dim))
    features[0, -1] += ROOT_FEATURE_MARK
    return PropagationEvent(
        id=event_id, label=label, num_nodes=n, edges=edges, features=features
    )


def generate_domain(spec: DomainSpec) -> list[PropagationEvent]:
    """Sample all events of one domain, fully determined by the DomainSpec.

    Each event draws from its own child seed, so generation order is
    irrelevant and events could be produced in parallel.
    """
    tag = _domain_tag(spec.seed)
    children = np.random.SeedSequence(spec.seed).spawn(spec.num_events)
    return [
        _generate_event(spec, f"ev-{tag}-{i:05d}", child)
        for i, child in enumerate(children)
    ]


def apply_shift(spec: DomainSpec, shift: ShiftSpec) -> DomainSpec:
    """Target-domain spec: rotated/translated means, scaled noise and sizes,
    shifted branching, and a freshly derived seed."""
    if shift.rotation_angle != 0.0 and spec.feature_dim < 2:
        raise ValueError("rotation shift needs feature_dim >= 2")
    translation = shift.mean_translation or (0.0,) * spec.feature_dim
    if len(translation) != spec.feature_dim:
        raise ValueError(
            f"shift translation has length {len(translation)}, expected {spec.feature_dim}"
        )
    base_translation = spec.mean_translation or (0.0,) * spec.feature_dim
    lo, hi = spec.size_dist
    new_lo = max(1, round(lo * shift.size_scale_factor))
    new_hi = max(new_lo, round(hi * shift.size_scale_factor))
    return replace(
        spec,
        mean_rotation=spec.mean_rotation + shift.rotation_angle,
        mean_translation=tuple(b + t for b, t in zip(base_translation, translation)),
        feature_noise_std=spec.feature_noise_std * shift.noise_scale_factor,
        size_dist=(new_lo, new_hi),
        branching_bias=min(1.0, max(0.0, spec.branching_bias + shift.branching_shift)),
        seed=derive_target_seed(spec.seed),
    )


# --- dataset files ----------------------------------------------------------

def event_to_json_dict(event: PropagationEvent) -> dict:
    return {
        "id": event.id,
        "label": event.label,
        "edges": [[s, t] for s, t in event.edges],
        "features": event.features.tolist(),
    }


def event_from_json_dict(rec: dict) -> PropagationEvent:
    missing = {"id", "label", "edges", "features"} - set(rec)
    if missing:
        raise InvalidEventError(f"missing fields {sorted(missing)}")
    try:
        features = np.asarray(rec["features"], dtype=np.float64)
    except ValueError as exc:
        raise InvalidEventError(f"bad feature matrix: {exc}") from exc
    if features.ndim != 2:
        raise InvalidEventError("features must be a list of equal-length rows")
    return PropagationEvent(
        id=str(rec["id"]),
        label=int(rec["label"]),
        num_nodes=features.shape[0],
        edges=[(int(s), int(t)) for s, t in rec["edges"]],
        features=features,
    )


def write_dataset(
    events: Sequence[PropagationEvent], path: str | Path, meta: dict | None = None
) -> None:
    """JSON Lines, one event per line; floats keep full precision.

    When ``meta`` is given it lands in a ``<stem>.meta.json`` sidecar next to
    the dataset.
    """
    path = Path(path)
    lines = [
        json.dumps(event_to_json_dict(e), separators=(",", ":")) for e in events
    ]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    if meta is not None:
        sidecar = path.with_suffix(".meta.json")
        sidecar.write_text(
            json.dumps(meta, sort_keys=True, indent=2) + "\n", encoding="utf-8"
        )


def read_dataset(path: str | Path) -> list[PropagationEvent]:
    """Parse a JSONL dataset; errors name the offending line."""
    path = Path(path)
    events: list[PropagationEvent] = []
    expected_dim: int | None = None
    with path.open(encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped:
                raise InvalidEventError(f"{path}: line {line_no}: blank line in dataset")
            try:
                rec = json.loads(stripped)
            except json.JSONDecodeError as exc:
                raise InvalidEventError(f"{path}: line {line_no}: invalid JSON ({exc})") from exc
            try:
                event = event_from_json_dict(rec)
            except (InvalidEventError, ValueError, TypeError) as exc:
                raise InvalidEventError(f"{path}: line {line_no}: {exc}") from exc
            if expected_dim is None:
                expected_dim = event.feature_dim
            elif event.feature_dim != expected_dim:
                raise InvalidEventError(
                    f"{path}: line {line_no}: feature dim {event.feature_dim} != {expected_dim}"
                )
            events.append(event)
    return events
