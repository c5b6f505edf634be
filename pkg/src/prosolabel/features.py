"""Feature tensors: interchange-format I/O, layer fusion, pooling, assembly.

Frozen extractors (speech encoders, phoneme-input language models, or the
native melspec/F0 front ends) hand their hidden states to this toolkit as
``PFE1`` files: a fixed header followed by an L x T x D float32 payload,
where L is the layer count, T the frame or phoneme count, and D the
feature width.  Everything downstream of that boundary is this module's
job: reading and writing the files, softmax-weighted fusion across the L
layers, duration-driven averaging from frames to phonemes, the one-hot
phoneme stream, and the concatenation of the acoustic and linguistic
streams into the classifier input.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .corpus import PhonemeInventory, DEFAULT_INVENTORY, Utterance
from .errors import (
    BadMagic,
    DurationSumMismatch,
    HeaderShapeMismatch,
    InvalidConfig,
    LayerCountMismatch,
    MissingStream,
    NonFiniteValue,
    PhonemeCountMismatch,
    ProsolabelError,
)

MAGIC = b"PFE1"
FORMAT_VERSION = 1

# Durations and extractor frame counts may disagree by edge effects;
# within this window the final span is clamped, beyond it we refuse.
DURATION_TOLERANCE_FRAMES = 2


class AxisKind(IntEnum):
    FRAME = 0
    PHONEME = 1


@dataclass
class FeatureTensor:
    """L x T x D stack of hidden states from one extractor stream."""

    data: np.ndarray
    axis_kind: AxisKind

    def __post_init__(self):
        arr = np.ascontiguousarray(self.data, dtype=np.float32)
        if arr.ndim != 3:
            raise ValueError(f"feature tensor must be 3-d, got shape {arr.shape}")
        if min(arr.shape) < 1:
            raise ValueError(f"feature tensor axes must be >= 1, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise NonFiniteValue("feature tensor contains non-finite values")
        self.data = arr
        self.axis_kind = AxisKind(self.axis_kind)

    @property
    def layers(self) -> int:
        return self.data.shape[0]

    @property
    def length(self) -> int:
        """Frame count (frame axis) or phoneme count (phoneme axis)."""
        return self.data.shape[1]

    @property
    def dim(self) -> int:
        return self.data.shape[2]


def write_features(tensor: FeatureTensor, path):
    """Serialize a FeatureTensor to a PFE1 file.

    Layout: magic ``PFE1``, then five little-endian u32 fields (version,
    L, T, D, axis kind: 0=frame, 1=phoneme), then L*T*D float32 values
    in layer-major order.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    L, T, D = tensor.data.shape
    header = struct.pack("<4s5I", MAGIC, FORMAT_VERSION, L, T, D, int(tensor.axis_kind))
    payload = np.ascontiguousarray(tensor.data, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


def read_features(path) -> FeatureTensor:
    """Read a PFE1 file, validating magic, header, and payload size."""
    with open(path, "rb") as fh:
        header = fh.read(24)
        if len(header) < 24 or header[:4] != MAGIC:
            raise BadMagic(f"{path}: not a PFE1 feature file")
        version, L, T, D, axis = struct.unpack("<5I", header[4:])
        if version != FORMAT_VERSION:
            raise BadMagic(f"{path}: unsupported format version {version}")
        if axis not in (int(AxisKind.FRAME), int(AxisKind.PHONEME)):
            raise HeaderShapeMismatch(f"{path}: bad axis kind {axis}")
        payload = fh.read()
    expected = 4 * L * T * D
    if len(payload) != expected:
        raise HeaderShapeMismatch(
            f"{path}: payload is {len(payload)} bytes, header implies {expected}"
        )
    if min(L, T, D) < 1:
        raise HeaderShapeMismatch(f"{path}: zero-sized axis in header ({L},{T},{D})")
    data = np.frombuffer(payload, dtype="<f4").reshape(L, T, D)
    if not np.all(np.isfinite(data)):
        raise NonFiniteValue(f"{path}: payload contains non-finite values")
    return FeatureTensor(data=data.copy(), axis_kind=AxisKind(axis))


def softmax_np(logits: np.ndarray) -> np.ndarray:
    """Numerically stable softmax of a 1-d logit vector, float64."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


@dataclass
class FusionWeights:
    """Learnable per-stream logits for the softmax-weighted layer sum."""

    logits: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.logits, dtype=np.float64).reshape(-1)
        if arr.size < 1:
            raise ValueError("fusion logits must have at least one entry")
        self.logits = arr

    @classmethod
    def uniform(cls, n_layers: int) -> "FusionWeights":
        return cls(np.zeros(n_layers))

    def weights(self) -> np.ndarray:
        return softmax_np(self.logits)


def fuse_np(stack: np.ndarray, logits: np.ndarray) -> np.ndarray:
    """Softmax-weighted sum over the layer axis: (L,T,D) -> (T,D) float64."""
    w = softmax_np(logits)
    return np.einsum("l,ltd->td", w, np.asarray(stack, dtype=np.float64))


def fuse_layers(tensor: FeatureTensor, weights: FusionWeights) -> FeatureTensor:
    """Collapse the layer axis by the softmax-weighted sum."""
    if weights.logits.shape[0] != tensor.layers:
        raise LayerCountMismatch(
            f"{weights.logits.shape[0]} logits for {tensor.layers} layers"
        )
    fused = fuse_np(tensor.data, weights.logits)
    return FeatureTensor(data=fused[np.newaxis], axis_kind=tensor.axis_kind)


def spans_from_durations(durations: Sequence[int], total_frames: int):
    """Frame spans per phoneme, reconciling small duration/frame-count drift.

    Returns a list of (start, end, source) triples.  ``start:end`` is the
    half-open frame range averaged for that phoneme; when the range is
    empty the phoneme copies the single frame at ``source`` (the nearest
    preceding frame, or frame 0 at the very start).  If the durations
    disagree with ``total_frames`` by more than the tolerance window the
    mismatch is an error; within it, the trailing span is clamped or
    extended to cover exactly ``total_frames``.
    """
    durations = list(durations)
    if any(d < 0 for d in durations):
        raise ValueError("durations must be non-negative")
    if not durations:
        raise ValueError("need at least one phoneme")
    total = sum(durations)
    if abs(total - total_frames) > DURATION_TOLERANCE_FRAMES:
        raise DurationSumMismatch(
            f"durations sum to {total} but tensor has {total_frames} frames"
        )
    spans = []
    cursor = 0
    for dur in durations:
        start = min(cursor, total_frames)
        end = min(cursor + dur, total_frames)
        spans.append([start, end])
        cursor += dur
    # absorb trailing frames into the last span
    if spans[-1][1] < total_frames:
        spans[-1][1] = total_frames
        if spans[-1][0] > spans[-1][1]:
            spans[-1][0] = spans[-1][1]
    out = []
    for start, end in spans:
        if end > start:
            out.append((start, end, start))
        else:
            source = start - 1 if start > 0 else 0
            source = min(source, total_frames - 1)
            out.append((start, start, source))
    return out


def pool_rows(matrix: np.ndarray, spans) -> np.ndarray:
    """Mean over each span of rows; empty spans copy their source row."""
    out = np.empty((len(spans), matrix.shape[1]), dtype=matrix.dtype)
    for p, (start, end, source) in enumerate(spans):
        if end > start:
            out[p] = matrix[start:end].mean(axis=0)
        else:
            out[p] = matrix[source]
    return out


def pool_to_phonemes(tensor: FeatureTensor, durations: Sequence[int]) -> FeatureTensor:
    """Average frame-level features over each phoneme's frame span."""
    if tensor.axis_kind != AxisKind.FRAME:
        raise ProsolabelError("pooling expects a frame-axis tensor")
    spans = spans_from_durations(durations, tensor.length)
    pooled = np.stack(
        [pool_rows(layer.astype(np.float64), spans) for layer in tensor.data]
    )
    return FeatureTensor(data=pooled, axis_kind=AxisKind.PHONEME)


def one_hot_stream(
    phonemes, inventory: PhonemeInventory = DEFAULT_INVENTORY
) -> FeatureTensor:
    """One-hot phoneme identity matrix as a 1 x P x |inventory| tensor."""
    indices = [inventory.index(tok.symbol) for tok in phonemes]
    out = np.zeros((1, len(indices), len(inventory)), dtype=np.float32)
    for p, idx in enumerate(indices):
        out[0, p, idx] = 1.0
    return FeatureTensor(data=out, axis_kind=AxisKind.PHONEME)


@dataclass(frozen=True)
class StreamConfig:
    """Which stream feeds each side of the classifier input.

    ``acoustic`` names a frame-axis feature stream from the manifest
    (``melspec``, ``f0``, or any extractor dump) or ``none``.
    ``linguistic`` names a phoneme-axis stream, the built-in ``onehot``
    phoneme identity stream, or ``none``.  At least one side must be
    active.
    """

    acoustic: str = "none"
    linguistic: str = "none"

    def __post_init__(self):
        if self.acoustic == "none" and self.linguistic == "none":
            raise InvalidConfig("acoustic and linguistic streams cannot both be none")

    def active_streams(self):
        out = []
        if self.acoustic != "none":
            out.append(("acoustic", self.acoustic))
        if self.linguistic != "none":
            out.append(("linguistic", self.linguistic))
        return out


ONE_HOT_STREAM = "onehot"


def _resolve_path(ref: str, root) -> Path:
    path = Path(ref)
    if not path.is_absolute() and root is not None:
        path = Path(root) / path
    return path


def load_stream_stack(
    utt: Utterance,
    role: str,
    stream: str,
    *,
    inventory: PhonemeInventory = DEFAULT_INVENTORY,
    root=None,
) -> np.ndarray:
    """Load one stream for an utterance as a float64 (L, T, D) stack.

    The linguistic ``onehot`` stream is synthesized from the phoneme
    sequence; everything else is read from the utterance's feature refs.
    Phoneme-axis tensors are checked against the utterance's length.
    """
    if role == "linguistic" and stream == ONE_HOT_STREAM:
        tensor = one_hot_stream(utt.phonemes, inventory)
    else:
        ref = utt.features.get(stream)
        if ref is None:
            raise MissingStream(stream, utt.id, "no manifest feature entry")
        path = _resolve_path(ref, root)
        if not path.exists():
            raise MissingStream(stream, utt.id, f"file not found: {path}")
        tensor = read_features(path)
    if role == "acoustic" and tensor.axis_kind != AxisKind.FRAME:
        raise ProsolabelError(
            f"acoustic stream {stream!r} for {utt.id!r} is not frame-axis"
        )
    if role == "linguistic":
        if tensor.axis_kind != AxisKind.PHONEME:
            raise ProsolabelError(
                f"linguistic stream {stream!r} for {utt.id!r} is not phoneme-axis"
            )
        if tensor.length != len(utt.phonemes):
            raise PhonemeCountMismatch(
                f"utterance {utt.id!r}: linguistic tensor has {tensor.length} "
                f"positions for {len(utt.phonemes)} phonemes"
            )
    return tensor.data.astype(np.float64)


def assemble_input(
    utt: Utterance,
    config: StreamConfig,
    weights: Mapping[str, FusionWeights],
    *,
    inventory: PhonemeInventory = DEFAULT_INVENTORY,
    root=None,
) -> np.ndarray:
    """Build the P x (D_aco + D_ling) classifier input for one utterance.

    The acoustic stream is fused across layers and pooled to phonemes by
    the token durations; the linguistic stream is fused only (it is
    already phoneme-aligned).  A stream configured as ``none``
    contributes zero columns.
    """
    parts = []
    for role, stream in config.active_streams():
        stack = load_stream_stack(utt, role, stream, inventory=inventory, root=root)
        fw = weights.get(role)
        if fw is None:
            raise ProsolabelError(f"no fusion weights supplied for {role} stream")
        if fw.logits.shape[0] != stack.shape[0]:
            raise LayerCountMismatch(
                f"{role} stream {stream!r}: {fw.logits.shape[0]} logits "
                f"for {stack.shape[0]} layers"
            )
        fused = fuse_np(stack, fw.logits)
        if role == "acoustic":
            spans = spans_from_durations(utt.durations(), fused.shape[0])
            parts.append(pool_rows(fused, spans))
        else:
            parts.append(fused)
    if len(parts) == 1:
        return parts[0]
    return np.concatenate(parts, axis=1)


# --- synthetic corpus -------------------------------------------------
#
# Desk-scale test data with a known answer: every mora-core phoneme's
# four labels are planted as one-hot directions into disjoint dimension
# blocks of one layer of an otherwise-noise feature stack, making each
# label linearly decodable from that layer alone.

_PLANT_OFFSETS = {"acc": 0, "hl": 6, "bi": 8, "pau": 14}
PLANT_MIN_DIM = 16

_SYNTH_VOWELS = ("a", "i", "u", "e", "o")
_SYNTH_CONSONANTS = ("k", "s", "t", "n", "h", "m", "r", "g", "d", "b")


@dataclass(frozen=True)
class SynthPlan:
    """Geometry and noise level of the planted feature stack."""

    layers: int = 4
    dim: int = 16
    signal_layer: int = 2
    amplitude: float = 3.0
    noise: float = 0.5
    stream: str = "aco"
    min_moras: int = 3
    max_moras: int = 6
    min_duration: int = 2
    max_duration: int = 6

    def __post_init__(self):
        if self.dim < PLANT_MIN_DIM:
            raise ValueError(f"dim must be >= {PLANT_MIN_DIM} to hold all class blocks")
        if not (0 <= self.signal_layer < self.layers):
            raise ValueError(f"signal_layer {self.signal_layer} outside {self.layers} layers")
        if self.noise < 0.0 or self.amplitude <= 0.0:
            raise ValueError("need noise >= 0 and amplitude > 0")
        if not (1 <= self.min_moras <= self.max_moras):
            raise ValueError("bad mora-count range")
        if not (1 <= self.min_duration <= self.max_duration):
            raise ValueError("bad duration range")

    def direction(self, task: str, class_index: int) -> np.ndarray:
        """Planted direction for one class: amplitude at its block dim."""
        vec = np.zeros(self.dim)
        vec[_PLANT_OFFSETS[task] + class_index] = self.amplitude
        return vec


def _random_utterance(rng, utt_id: str, plan: SynthPlan, inventory: PhonemeInventory):
    from .corpus import TASK_ENUMS, LabelBundle, PhonemeToken

    tokens = []
    label_picks = []
    n_moras = int(rng.integers(plan.min_moras, plan.max_moras + 1))
    for m in range(n_moras):
        shape = rng.random()
        if shape < 0.6:
            symbols = [str(rng.choice(_SYNTH_CONSONANTS)), str(rng.choice(_SYNTH_VOWELS))]
        elif shape < 0.9 or m == 0:
            symbols = [str(rng.choice(_SYNTH_VOWELS))]
        else:
            symbols = ["N"]
        for sym in symbols:
            dur = int(rng.integers(plan.min_duration, plan.max_duration + 1))
            tokens.append(PhonemeToken(sym, dur, inventory.is_mora_core(sym)))
    bundles = []
    for tok in tokens:
        if not tok.mora_core:
            bundles.append(LabelBundle())
            label_picks.append(None)
            continue
        picks = {
            task: int(rng.integers(len(enum_cls))) for task, enum_cls in TASK_ENUMS.items()
        }
        label_picks.append(picks)
        bundles.append(
            LabelBundle(**{task: list(TASK_ENUMS[task])[idx] for task, idx in picks.items()})
        )
    return Utterance(id=utt_id, phonemes=tuple(tokens), labels=tuple(bundles)), label_picks


def _planted_stack(rng, utt: Utterance, picks, plan: SynthPlan) -> np.ndarray:
    T = utt.total_frames()
    stack = plan.noise * rng.standard_normal((plan.layers, T, plan.dim))
    cursor = 0
    for tok, pick in zip(utt.phonemes, picks):
        span = slice(cursor, cursor + tok.duration)
        cursor += tok.duration
        if pick is None:
            continue
        for task, idx in pick.items():
            stack[plan.signal_layer, span, :] += plan.direction(task, idx)
    return stack


def synth_corpus(
    out_dir,
    seed: int,
    n_utts: int,
    plan: SynthPlan = SynthPlan(),
    *,
    prefix: str = "utt",
    manifest_name: str = "manifest.jsonl",
    inventory: PhonemeInventory = DEFAULT_INVENTORY,
):
    """Generate a labeled corpus with planted features; returns
    (utterances, manifest path).

    Each utterance draws from an independent child seed, so the whole
    corpus (manifest and feature files) is byte-identical for identical
    arguments, and utterances differ from each other.
    """
    from .corpus import write_manifest

    if n_utts < 1:
        raise ValueError("n_utts must be >= 1")
    out_dir = Path(out_dir)
    utterances = []
    for i in range(n_utts):
        rng = np.random.default_rng(np.random.SeedSequence([seed, i]))
        utt_id = f"{prefix}{i:04d}"
        utt, picks = _random_utterance(rng, utt_id, plan, inventory)
        stack = _planted_stack(rng, utt, picks, plan)
        rel = f"features/{utt_id}.{plan.stream}.pfe"
        write_features(
            FeatureTensor(data=stack.astype(np.float32), axis_kind=AxisKind.FRAME),
            out_dir / rel,
        )
        utterances.append(
            Utterance(
                id=utt.id,
                phonemes=utt.phonemes,
                labels=utt.labels,
                features={plan.stream: rel},
            )
        )
    manifest_path = out_dir / manifest_name
    write_manifest(utterances, manifest_path)
    return utterances, manifest_path


def nearest_centroid_oracle(
    utterances,
    plan: SynthPlan,
    *,
    root=None,
    inventory: PhonemeInventory = DEFAULT_INVENTORY,
):
    """Classify each mora core by the nearest planted centroid in the
    signal layer, per task; returns task -> accuracy.

    This is the decodability reference the trained model is measured
    against: with zero noise it is exact by construction.
    """
    from .corpus import TASK_ENUMS

    correct = {task: 0 for task in TASK_ENUMS}
    total = 0
    for utt in utterances:
        stack = load_stream_stack(utt, "acoustic", plan.stream, inventory=inventory, root=root)
        spans = spans_from_durations(utt.durations(), stack.shape[1])
        pooled = pool_rows(stack[plan.signal_layer], spans)
        for p, tok in enumerate(utt.phonemes):
            if not tok.mora_core:
                continue
            total += 1
            for task, enum_cls in TASK_ENUMS.items():
                k = len(enum_cls)
                offset = _PLANT_OFFSETS[task]
                block = pooled[p, offset : offset + k]
                centroids = plan.amplitude * np.eye(k)
                pred = int(np.argmin(((block - centroids) ** 2).sum(axis=1)))
                gold = list(enum_cls).index(utt.labels[p].get(task))
                if pred == gold:
                    correct[task] += 1
    if total == 0:
        raise ValueError("no mora-core positions to classify")
    return {task: correct[task] / total for task in correct}


def estimate_oracle_accuracy(plan: SynthPlan, seed: int, n_samples: int = 20000):
    """Monte-Carlo estimate of the nearest-centroid accuracy implied by
    the generative construction, independent of any generated corpus.

    Pooling d noise frames leaves per-dim noise sigma/sqrt(d); sample
    that directly and tally argmin-distance hits per task.
    """
    from .corpus import TASK_ENUMS

    rng = np.random.default_rng(np.random.SeedSequence([seed, 2**31]))
    out = {}
    for task, enum_cls in TASK_ENUMS.items():
        k = len(enum_cls)
        centroids = plan.amplitude * np.eye(k)
        hits = 0
        for _ in range(n_samples):
            d = int(rng.integers(plan.min_duration, plan.max_duration + 1))
            cls = int(rng.integers(k))
            x = centroids[cls] + (plan.noise / math.sqrt(d)) * rng.standard_normal(k)
            if int(np.argmin(((x - centroids) ** 2).sum(axis=1))) == cls:
                hits += 1
        out[task] = hits / n_samples
    return out
