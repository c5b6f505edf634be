"""The annotator network and its trainer.

The model is a stack of same-padded 1-d convolutions over phoneme
positions (6 layers, hidden 256, kernel 5 by default) with one affine
head per label task, plus the per-stream layer-fusion logits, all
trained jointly.  Losses are per-task mean cross-entropies over
mora-core positions, summed.

Everything runs in float64 numpy.  Batching is per-utterance gradient
accumulation: each utterance builds its own graph, backward(1/B) sums
into the shared parameter grads, then one Adam step is applied.  That
keeps variable-length inputs exact at the cost of throughput, which is
fine at desk scale.

Checkpoints are a single versioned binary file (JSON metadata plus raw
float64 blobs), written byte-for-byte deterministically so identical
runs produce identical files.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .corpus import (
    DEFAULT_INVENTORY,
    EMPTY_BUNDLE,
    LabelBundle,
    PhonemeInventory,
    TASK_ENUMS,
    TASKS,
    Utterance,
)
from .errors import (
    BadMagic,
    DimMismatch,
    EmptyMask,
    HeaderShapeMismatch,
    LayerCountMismatch,
    NonFiniteGradient,
    UnlabeledUtterance,
)
from .features import (
    FusionWeights,
    StreamConfig,
    assemble_input,
    fuse_np,
    load_stream_stack,
    pool_rows,
    spans_from_durations,
)

HEAD_SIZES = {task: len(enum_cls) for task, enum_cls in TASK_ENUMS.items()}

_ENUM_MEMBERS = {task: tuple(enum_cls) for task, enum_cls in TASK_ENUMS.items()}
_ENUM_INDEX = {
    task: {member: i for i, member in enumerate(members)}
    for task, members in _ENUM_MEMBERS.items()
}

CHECKPOINT_MAGIC = b"PCK1"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    """Trunk geometry; head widths are fixed by the label enumerations."""

    in_dim: int
    hidden: int = 256
    n_layers: int = 6
    kernel: int = 5

    def __post_init__(self):
        if self.in_dim < 1 or self.hidden < 1 or self.n_layers < 1:
            raise ValueError("in_dim, hidden, n_layers must all be >= 1")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ValueError(f"kernel must be odd and positive, got {self.kernel}")


@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings.

    The defaults are the full-scale ones (lr 1e-5, 100k steps); small
    synthetic runs want lr around 1e-3 and a few thousand steps.
    """

    lr: float = 1e-5
    batch_size: int = 4
    max_steps: int = 100000
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    eval_every: int = 500

    def __post_init__(self):
        if self.lr <= 0.0:
            raise ValueError("lr must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.max_steps < 0:
            raise ValueError("max_steps must be >= 0")
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")


@dataclass
class AnnotatorModel:
    """Parameter container: fusion logits, conv trunk, four heads."""

    config: ModelConfig
    stream_config: StreamConfig
    layer_counts: Mapping[str, int]
    params: "dict[str, ad.Tensor]"

    def fusion_weights(self) -> "dict[str, FusionWeights]":
        return {
            role: FusionWeights(self.params[f"fusion.{role}"].value.copy())
            for role, _ in self.stream_config.active_streams()
        }


def build_model(
    config: ModelConfig,
    stream_config: StreamConfig,
    layer_counts: Mapping[str, int],
    seed: int,
) -> AnnotatorModel:
    """Seeded initialization: zero fusion logits and biases, uniform
    He-style fan-in scaling for weights."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0]))
    params: "dict[str, ad.Tensor]" = {}
    for role, _ in stream_config.active_streams():
        params[f"fusion.{role}"] = ad.Tensor(np.zeros(layer_counts[role]), name=f"fusion.{role}")
    for i in range(config.n_layers):
        cin = config.in_dim if i == 0 else config.hidden
        limit = math.sqrt(6.0 / (config.kernel * cin))
        params[f"conv{i}.w"] = ad.Tensor(
            rng.uniform(-limit, limit, (config.kernel, cin, config.hidden)),
            name=f"conv{i}.w",
        )
        params[f"conv{i}.b"] = ad.Tensor(np.zeros(config.hidden), name=f"conv{i}.b")
    for task in TASKS:
        limit = math.sqrt(6.0 / config.hidden)
        params[f"head.{task}.w"] = ad.Tensor(
            rng.uniform(-limit, limit, (config.hidden, HEAD_SIZES[task])),
            name=f"head.{task}.w",
        )
        params[f"head.{task}.b"] = ad.Tensor(np.zeros(HEAD_SIZES[task]), name=f"head.{task}.b")
    return AnnotatorModel(config, stream_config, dict(layer_counts), params)


def conv_same_np(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Plain-numpy twin of the autodiff convolution; same op order, so
    inference activations match training activations bitwise."""
    P = x.shape[0]
    K = w.shape[0]
    pad = K // 2
    xpad = np.zeros((P + K - 1, x.shape[1]))
    xpad[pad : pad + P] = x
    out = np.zeros((P, w.shape[2]))
    for k in range(K):
        out += xpad[k : k + P] @ w[k]
    return out + b


def forward(model: AnnotatorModel, x: np.ndarray) -> "dict[str, np.ndarray]":
    """Run the trunk and heads on a P x in_dim input; returns per-task
    logit matrices of shape P x K."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise DimMismatch(f"input must be 2-d, got shape {x.shape}")
    if x.shape[0] < 1:
        raise DimMismatch("input must have at least one row")
    if x.shape[1] != model.config.in_dim:
        raise DimMismatch(
            f"input width {x.shape[1]} does not match model in_dim {model.config.in_dim}"
        )
    h = x
    for i in range(model.config.n_layers):
        h = conv_same_np(h, model.params[f"conv{i}.w"].value, model.params[f"conv{i}.b"].value)
        h = np.maximum(h, 0.0)
    out = {}
    for task in TASKS:
        out[task] = h @ model.params[f"head.{task}.w"].value + model.params[f"head.{task}.b"].value
    return out


def _masked_ce_np(logits: np.ndarray, targets: np.ndarray, rows: np.ndarray) -> float:
    sub = logits[rows]
    m = sub.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(sub - m).sum(axis=1))
    picked = sub[np.arange(rows.size), targets[rows]]
    return float((lse - picked).mean())


def multitask_loss(
    logits: Mapping[str, np.ndarray],
    labels: Sequence[LabelBundle],
    mask: Sequence[bool],
) -> "dict[str, float]":
    """Per-task mean cross-entropy over masked-in rows, plus their sum.

    Rows with mask False never enter the computation, so their logits
    cannot change the result even in the last bit.
    """
    n = len(labels)
    if len(mask) != n:
        raise DimMismatch(f"{len(mask)} mask entries for {n} label bundles")
    rows = np.flatnonzero(np.asarray(mask, dtype=bool))
    if rows.size == 0:
        raise EmptyMask("no mora-core rows to score")
    out = {}
    for task in TASKS:
        mat = np.asarray(logits[task], dtype=np.float64)
        if mat.shape != (n, HEAD_SIZES[task]):
            raise DimMismatch(
                f"{task} logits have shape {mat.shape}, expected {(n, HEAD_SIZES[task])}"
            )
        targets = np.full(n, -1, dtype=np.intp)
        for p in rows:
            label = labels[p].get(task)
            if label is None:
                raise UnlabeledUtterance(f"missing {task} label at masked-in row {p}")
            targets[p] = _ENUM_INDEX[task][label]
        out[task] = _masked_ce_np(mat, targets, rows)
    out["total"] = float(sum(out[task] for task in TASKS))
    return out


def encode_targets(utt: Utterance):
    """Integer class targets per task (-1 off-core) and the core mask."""
    if utt.labels is None:
        raise UnlabeledUtterance(f"utterance {utt.id!r} has no labels")
    mask = np.array(utt.mora_core_mask, dtype=bool)
    targets = {}
    for task in TASKS:
        col = np.full(len(utt.phonemes), -1, dtype=np.intp)
        for p, bundle in enumerate(utt.labels):
            if mask[p]:
                label = bundle.get(task)
                if label is None:
                    raise UnlabeledUtterance(
                        f"utterance {utt.id!r}: no {task} label at mora core {p}"
                    )
                col[p] = _ENUM_INDEX[task][label]
        targets[task] = col
    return targets, mask


@dataclass
class Example:
    """One training utterance with its streams preloaded."""

    id: str
    stacks: "dict[str, np.ndarray]"
    durations: tuple
    targets: "dict[str, np.ndarray]"
    mask: np.ndarray


def prepare_examples(
    utterances: Sequence[Utterance],
    stream_config: StreamConfig,
    *,
    inventory: PhonemeInventory = DEFAULT_INVENTORY,
    root=None,
) -> "list[Example]":
    examples = []
    for utt in utterances:
        stacks = {
            role: load_stream_stack(utt, role, stream, inventory=inventory, root=root)
            for role, stream in stream_config.active_streams()
        }
        targets, mask = encode_targets(utt)
        if not mask.any():
            raise EmptyMask(f"utterance {utt.id!r} has no mora-core phonemes")
        examples.append(Example(utt.id, stacks, utt.durations(), targets, mask))
    return examples


def _infer_dims(examples: Sequence[Example], stream_config: StreamConfig):
    """Layer count per role and the assembled input width, checked for
    consistency across the corpus."""
    layer_counts: "dict[str, int]" = {}
    dims: "dict[str, int]" = {}
    for ex in examples:
        for role, _ in stream_config.active_streams():
            L, _, D = ex.stacks[role].shape
            if layer_counts.setdefault(role, L) != L:
                raise LayerCountMismatch(
                    f"utterance {ex.id!r}: {role} stream has {L} layers, "
                    f"corpus started with {layer_counts[role]}"
                )
            if dims.setdefault(role, D) != D:
                raise DimMismatch(
                    f"utterance {ex.id!r}: {role} stream has width {D}, "
                    f"corpus started with {dims[role]}"
                )
    in_dim = sum(dims[role] for role, _ in stream_config.active_streams())
    return layer_counts, in_dim


def utterance_loss(model: AnnotatorModel, ex: Example):
    """Build the full differentiable graph for one utterance.

    Returns the total-loss Tensor and the per-task loss Tensors; calling
    backward on the total accumulates into the model's parameter grads.
    """
    rows = np.flatnonzero(ex.mask)
    if rows.size == 0:
        raise EmptyMask(f"utterance {ex.id!r} has no mora-core phonemes")
    parts = []
    for role, _ in model.stream_config.active_streams():
        wv = ad.softmax_vec(model.params[f"fusion.{role}"])
        fused = ad.weighted_sum(wv, ex.stacks[role])
        if role == "acoustic":
            spans = spans_from_durations(ex.durations, fused.value.shape[0])
            parts.append(ad.pool_spans(fused, spans))
        else:
            parts.append(fused)
    h = parts[0] if len(parts) == 1 else ad.concat_cols(parts[0], parts[1])
    if h.value.shape[1] != model.config.in_dim:
        raise DimMismatch(
            f"assembled width {h.value.shape[1]} does not match model in_dim "
            f"{model.config.in_dim}"
        )
    for i in range(model.config.n_layers):
        h = ad.relu(ad.conv1d_same(h, model.params[f"conv{i}.w"], model.params[f"conv{i}.b"]))
    losses = {}
    for task in TASKS:
        logits = ad.add_bias(
            ad.matmul(h, model.params[f"head.{task}.w"]), model.params[f"head.{task}.b"]
        )
        losses[task] = ad.masked_cross_entropy(logits, ex.targets[task], rows)
    total = ad.add_n(losses.values())
    return total, losses


class Adam:
    """Adam with bias correction, state exposed for checkpointing."""

    def __init__(self, cfg: TrainConfig, params: "Mapping[str, ad.Tensor]"):
        self.cfg = cfg
        self.m = {name: np.zeros_like(p.value) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.value) for name, p in params.items()}
        self.t = 0

    def step(self, params: "Mapping[str, ad.Tensor]"):
        cfg = self.cfg
        self.t += 1
        for name, p in params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.value)
            if not np.all(np.isfinite(g)):
                raise NonFiniteGradient(
                    f"non-finite gradient in {name!r} at optimizer step {self.t}"
                )
            self.m[name] = cfg.beta1 * self.m[name] + (1.0 - cfg.beta1) * g
            self.v[name] = cfg.beta2 * self.v[name] + (1.0 - cfg.beta2) * g * g
            m_hat = self.m[name] / (1.0 - cfg.beta1 ** self.t)
            v_hat = self.v[name] / (1.0 - cfg.beta2 ** self.t)
            p.value = p.value - cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps)


def backward_and_step(
    model: AnnotatorModel, batch: Sequence[Example], optimizer: Adam
) -> "dict[str, float]":
    """One optimization step over a batch: accumulate per-utterance
    gradients scaled by 1/B, then apply Adam.  Returns batch-mean losses."""
    if not batch:
        raise ValueError("batch must be non-empty")
    for p in model.params.values():
        p.zero_grad()
    sums = {task: 0.0 for task in TASKS}
    total_sum = 0.0
    scale = 1.0 / len(batch)
    for ex in batch:
        total, losses = utterance_loss(model, ex)
        total.backward(scale)
        total_sum += float(total.value)
        for task in TASKS:
            sums[task] += float(losses[task].value)
    optimizer.step(model.params)
    out = {task: sums[task] * scale for task in TASKS}
    out["total"] = total_sum * scale
    return out


def model_input(model: AnnotatorModel, ex: Example) -> np.ndarray:
    """Assembled classifier input under the model's current fusion
    logits; bitwise-identical to the training graph's activations."""
    parts = []
    for role, _ in model.stream_config.active_streams():
        fused = fuse_np(ex.stacks[role], model.params[f"fusion.{role}"].value)
        if role == "acoustic":
            spans = spans_from_durations(ex.durations, fused.shape[0])
            parts.append(pool_rows(fused, spans))
        else:
            parts.append(fused)
    return parts[0] if len(parts) == 1 else np.concatenate(parts, axis=1)


def _mean_accuracy(model: AnnotatorModel, examples: Sequence[Example]) -> float:
    """Mean over tasks of pooled per-position accuracy; used to pick the
    best checkpoint during training."""
    correct = {task: 0 for task in TASKS}
    seen = 0
    for ex in examples:
        logits = forward(model, model_input(model, ex))
        rows = np.flatnonzero(ex.mask)
        seen += rows.size
        for task in TASKS:
            pred = logits[task][rows].argmax(axis=1)
            correct[task] += int((pred == ex.targets[task][rows]).sum())
    if seen == 0:
        raise EmptyMask("no mora-core positions in the evaluation set")
    return float(np.mean([correct[task] / seen for task in TASKS]))


@dataclass
class Checkpoint:
    """Frozen training state: parameters, optimizer moments, provenance."""

    model_config: ModelConfig
    stream_config: StreamConfig
    layer_counts: "dict[str, int]"
    train_config: TrainConfig
    step: int
    params: "dict[str, np.ndarray]"
    adam_m: "dict[str, np.ndarray]"
    adam_v: "dict[str, np.ndarray]"
    adam_t: int

    def config_dict(self) -> dict:
        mc, tc = self.model_config, self.train_config
        return {
            "model": {
                "in_dim": mc.in_dim,
                "hidden": mc.hidden,
                "n_layers": mc.n_layers,
                "kernel": mc.kernel,
            },
            "streams": {
                "acoustic": self.stream_config.acoustic,
                "linguistic": self.stream_config.linguistic,
            },
            "layer_counts": {k: int(v) for k, v in sorted(self.layer_counts.items())},
            "train": {
                "lr": tc.lr,
                "batch_size": tc.batch_size,
                "max_steps": tc.max_steps,
                "beta1": tc.beta1,
                "beta2": tc.beta2,
                "eps": tc.eps,
                "seed": tc.seed,
                "eval_every": tc.eval_every,
            },
        }

    def config_hash(self) -> str:
        blob = json.dumps(self.config_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    def to_model(self) -> AnnotatorModel:
        params = {name: ad.Tensor(arr.copy(), name=name) for name, arr in self.params.items()}
        return AnnotatorModel(self.model_config, self.stream_config, dict(self.layer_counts), params)

    def save(self, path):
        """Single-file binary: magic, version, JSON metadata, float64
        little-endian blobs.  Identical state writes identical bytes."""
        groups = (("param", self.params), ("adam_m", self.adam_m), ("adam_v", self.adam_v))
        manifest = []
        payload = bytearray()
        for group, table in groups:
            for name, arr in table.items():
                arr = np.asarray(arr, dtype=np.float64)
                manifest.append({"group": group, "name": name, "shape": list(arr.shape)})
                payload.extend(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        meta = {
            "config": self.config_dict(),
            "config_hash": self.config_hash(),
            "step": self.step,
            "adam_t": self.adam_t,
            "blobs": manifest,
        }
        meta_bytes = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "wb") as fh:
            fh.write(CHECKPOINT_MAGIC)
            fh.write(struct.pack("<IQ", CHECKPOINT_VERSION, len(meta_bytes)))
            fh.write(meta_bytes)
            fh.write(payload)

    @classmethod
    def load(cls, path) -> "Checkpoint":
        with open(path, "rb") as fh:
            magic = fh.read(4)
            if magic != CHECKPOINT_MAGIC:
                raise BadMagic(f"{path}: not a checkpoint file")
            version, meta_len = struct.unpack("<IQ", fh.read(12))
            if version != CHECKPOINT_VERSION:
                raise BadMagic(f"{path}: unsupported checkpoint version {version}")
            meta = json.loads(fh.read(meta_len).decode("utf-8"))
            payload = fh.read()
        tables = {"param": {}, "adam_m": {}, "adam_v": {}}
        offset = 0
        for entry in meta["blobs"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            nbytes = 8 * count
            chunk = payload[offset : offset + nbytes]
            if len(chunk) != nbytes:
                raise HeaderShapeMismatch(f"{path}: truncated blob {entry['name']!r}")
            tables[entry["group"]][entry["name"]] = (
                np.frombuffer(chunk, dtype="<f8").reshape(shape).copy()
            )
            offset += nbytes
        if offset != len(payload):
            raise HeaderShapeMismatch(f"{path}: {len(payload) - offset} trailing bytes")
        cfg = meta["config"]
        return cls(
            model_config=ModelConfig(**cfg["model"]),
            stream_config=StreamConfig(**cfg["streams"]),
            layer_counts={k: int(v) for k, v in cfg["layer_counts"].items()},
            train_config=TrainConfig(**cfg["train"]),
            step=int(meta["step"]),
            params=tables["param"],
            adam_m=tables["adam_m"],
            adam_v=tables["adam_v"],
            adam_t=int(meta["adam_t"]),
        )


def _snapshot(model, optimizer, cfg, step) -> Checkpoint:
    return Checkpoint(
        model_config=model.config,
        stream_config=model.stream_config,
        layer_counts=dict(model.layer_counts),
        train_config=cfg,
        step=step,
        params={name: p.value.copy() for name, p in model.params.items()},
        adam_m={name: arr.copy() for name, arr in optimizer.m.items()},
        adam_v={name: arr.copy() for name, arr in optimizer.v.items()},
        adam_t=optimizer.t,
    )


def train(
    train_utts: Sequence[Utterance],
    stream_config: StreamConfig,
    cfg: TrainConfig,
    *,
    dev_utts: Sequence[Utterance] = (),
    hidden: int = 256,
    n_layers: int = 6,
    kernel: int = 5,
    inventory: PhonemeInventory = DEFAULT_INVENTORY,
    root=None,
):
    """Train from scratch; returns (checkpoint, loss_rows).

    Shuffling is epoch-wise with a seeded generator, so the whole
    trajectory is a pure function of (corpus, config).  When a dev set
    is given the checkpoint with the best mean dev accuracy is returned
    (evaluated every cfg.eval_every steps and at the end); otherwise the
    final state.  loss_rows are (step, total, acc, hl, bi, pau) tuples.
    """
    if not train_utts:
        raise ValueError("training corpus is empty")
    examples = prepare_examples(train_utts, stream_config, inventory=inventory, root=root)
    dev_examples = prepare_examples(dev_utts, stream_config, inventory=inventory, root=root)
    layer_counts, in_dim = _infer_dims(examples, stream_config)
    model_cfg = ModelConfig(in_dim=in_dim, hidden=hidden, n_layers=n_layers, kernel=kernel)
    model = build_model(model_cfg, stream_config, layer_counts, cfg.seed)
    optimizer = Adam(cfg, model.params)
    shuffle_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))

    loss_rows = []
    best: Optional[Checkpoint] = None
    best_score = -1.0
    step = 0
    while step < cfg.max_steps:
        order = shuffle_rng.permutation(len(examples))
        for start in range(0, len(order), cfg.batch_size):
            if step >= cfg.max_steps:
                break
            batch = [examples[i] for i in order[start : start + cfg.batch_size]]
            losses = backward_and_step(model, batch, optimizer)
            step += 1
            loss_rows.append(
                (step, losses["total"], losses["acc"], losses["hl"], losses["bi"], losses["pau"])
            )
            if dev_examples and (step % cfg.eval_every == 0 or step == cfg.max_steps):
                score = _mean_accuracy(model, dev_examples)
                if score > best_score:
                    best_score = score
                    best = _snapshot(model, optimizer, cfg, step)
    if best is None:
        best = _snapshot(model, optimizer, cfg, step)
    return best, loss_rows


def annotate(
    checkpoint: Checkpoint,
    utt: Utterance,
    *,
    inventory: PhonemeInventory = DEFAULT_INVENTORY,
    root=None,
) -> tuple:
    """Predict one LabelBundle per phoneme: argmax of each head at
    mora-core positions, empty bundles everywhere else."""
    model = checkpoint.to_model()
    x = assemble_input(
        utt, checkpoint.stream_config, model.fusion_weights(), inventory=inventory, root=root
    )
    logits = forward(model, x)
    bundles = []
    for p, tok in enumerate(utt.phonemes):
        if not tok.mora_core:
            bundles.append(EMPTY_BUNDLE)
            continue
        picks = {
            task: _ENUM_MEMBERS[task][int(np.argmax(logits[task][p]))] for task in TASKS
        }
        bundles.append(LabelBundle(**picks))
    return tuple(bundles)
