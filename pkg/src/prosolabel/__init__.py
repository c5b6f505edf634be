"""Phoneme-level prosodic-label annotation: corpus model, acoustic front
ends, layer fusion and pooling, the conv-net annotator, and evaluation."""

__version__ = "0.1.0"

from .corpus import (
    AccLabel,
    BiLabel,
    DEFAULT_INVENTORY,
    HlLabel,
    LabelBundle,
    PauLabel,
    PhonemeInventory,
    PhonemeToken,
    TASKS,
    Utterance,
    parse_manifest,
    write_manifest,
)
from .features import (
    AxisKind,
    FeatureTensor,
    FusionWeights,
    StreamConfig,
    SynthPlan,
    assemble_input,
    fuse_layers,
    one_hot_stream,
    pool_to_phonemes,
    read_features,
    synth_corpus,
    write_features,
)
from .net import AnnotatorModel, Checkpoint, TrainConfig, annotate, train
from .metrics import ConfusionMatrix, ScoreReport, report_layer_weights, score

__all__ = [
    "AccLabel", "AnnotatorModel", "AxisKind", "BiLabel", "Checkpoint",
    "ConfusionMatrix", "DEFAULT_INVENTORY", "FeatureTensor", "FusionWeights",
    "HlLabel", "LabelBundle", "PauLabel", "PhonemeInventory", "PhonemeToken",
    "ScoreReport", "StreamConfig", "SynthPlan", "TASKS", "TrainConfig",
    "Utterance", "annotate", "assemble_input", "fuse_layers", "one_hot_stream",
    "parse_manifest", "pool_to_phonemes", "read_features", "report_layer_weights",
    "score", "synth_corpus", "train", "write_features", "write_manifest",
]
