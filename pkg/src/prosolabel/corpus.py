"""Prosodic label taxonomies, the utterance data model, and manifest I/O.

Labels attach to moras, and each mora is carried by exactly one phoneme:
its vowel (short or long), the geminate marker ``Q``, or the syllabic
nasal ``N``.  Those carrier phonemes are called *mora cores*.  A labeled
utterance stores one :class:`LabelBundle` per phoneme, full at mora-core
positions and empty everywhere else, so the training loss mask is a pure
function of the phoneme sequence.

Four label tasks are predicted jointly:

* ACC: pitch transitions and accent-phrase boundaries with their boundary
  pitch movement (fall, rise-fall, rise).
* HL: per-mora high or low pitch.
* BI: break index, i.e. phrase-boundary strength, plus filled-pause and
  disfluency phrase ends.
* PAU: presence of a short pause after the mora.

The on-disk corpus format is UTF-8 JSON-lines, one utterance per record;
see :func:`parse_manifest` for the exact schema.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Mapping, Optional, Sequence

from .errors import (
    AlignmentMismatch,
    MalformedRecord,
    UnknownSymbol,
    UnlabeledUtterance,
)


class _SymbolEnum(Enum):
    """Enum whose member values are the surface symbols used in manifests."""

    def __str__(self) -> str:
        return self.value

    @property
    def symbol(self) -> str:
        return self.value

    @classmethod
    def from_symbol(cls, symbol: str) -> "_SymbolEnum":
        try:
            return cls(symbol)
        except ValueError:
            raise UnknownSymbol(symbol, context=cls.__name__) from None

    @classmethod
    def symbols(cls) -> tuple:
        return tuple(member.value for member in cls)


class AccLabel(_SymbolEnum):
    """Accent transitions and accent-phrase boundaries."""

    OTHER = "*"
    LOW_TO_HIGH = "["
    HIGH_TO_LOW = "]"
    BOUNDARY_FALL = "#"
    BOUNDARY_RISE_FALL = "%"
    BOUNDARY_RISE = "?"


class HlLabel(_SymbolEnum):
    """Per-mora pitch level."""

    LOW = "L"
    HIGH = "H"


class BiLabel(_SymbolEnum):
    """Break index: phrase-boundary strength and special phrase ends."""

    B0 = "0"
    B1 = "1"
    B2 = "2"
    B3 = "3"
    FILLED = "F"
    DISFLUENCY = "D"


class PauLabel(_SymbolEnum):
    """Short-pause presence."""

    NO = "N"
    YES = "Y"


TASKS = ("acc", "hl", "bi", "pau")

TASK_ENUMS: Mapping[str, type] = {
    "acc": AccLabel,
    "hl": HlLabel,
    "bi": BiLabel,
    "pau": PauLabel,
}

# Default closed phoneme inventory (62 symbols).  Long vowels carry a ':'
# suffix, capitalized vowels are devoiced variants, and the trailing tag
# block covers the non-speech events found in spontaneous-speech corpora.
# Corpora with a different phone set supply their own PhonemeInventory.
DEFAULT_PHONEMES: tuple = (
    # short vowels
    "a", "i", "u", "e", "o",
    # long vowels
    "a:", "i:", "u:", "e:", "o:",
    # devoiced vowels
    "A", "I", "U", "E", "O",
    # moraic consonants
    "N", "Q",
    # plain consonants
    "b", "ch", "d", "dz", "f", "g", "h", "j", "k", "m", "n", "p",
    "r", "s", "sh", "t", "ts", "v", "w", "y", "z",
    # palatalized consonants
    "by", "dy", "fy", "gy", "hy", "ky", "my", "ny", "py", "ry",
    "ty", "vy", "zy",
    # labio-velar consonants
    "kw", "gw",
    # non-speech tags
    "sil", "sp", "br", "cl", "fl", "lg", "cg", "ns", "xx",
)

# Devoiced vowels are deliberately excluded: whether they carry a mora
# label is corpus-dependent, so callers opt in via a custom inventory.
DEFAULT_MORA_CORES = frozenset(
    {"a", "i", "u", "e", "o", "a:", "i:", "u:", "e:", "o:", "N", "Q"}
)


@dataclass(frozen=True)
class PhonemeInventory:
    """Closed phoneme set plus the subset of mora-core symbols."""

    symbols: tuple = DEFAULT_PHONEMES
    mora_cores: frozenset = DEFAULT_MORA_CORES

    def __post_init__(self):
        if len(set(self.symbols)) != len(self.symbols):
            raise ValueError("inventory contains duplicate symbols")
        stray = set(self.mora_cores) - set(self.symbols)
        if stray:
            raise ValueError(f"mora-core symbols not in inventory: {sorted(stray)}")
        object.__setattr__(self, "_index", {s: i for i, s in enumerate(self.symbols)})

    def __len__(self) -> int:
        return len(self.symbols)

    def __contains__(self, symbol: str) -> bool:
        return symbol in self._index

    def index(self, symbol: str) -> int:
        try:
            return self._index[symbol]
        except KeyError:
            raise UnknownSymbol(symbol, context="phoneme inventory") from None

    def is_mora_core(self, symbol: str) -> bool:
        if symbol not in self._index:
            raise UnknownSymbol(symbol, context="phoneme inventory")
        return symbol in self.mora_cores


DEFAULT_INVENTORY = PhonemeInventory()


def is_mora_core(symbol: str, inventory: PhonemeInventory = DEFAULT_INVENTORY) -> bool:
    """True iff ``symbol`` carries a mora label under ``inventory``."""
    return inventory.is_mora_core(symbol)


@dataclass(frozen=True)
class PhonemeToken:
    """One phoneme with its frame duration and mora-core flag.

    ``duration`` counts frames at the canonical hop; the mora_core flag
    drives the loss mask and must equal the inventory's classification
    of ``symbol``.
    """

    symbol: str
    duration: int
    mora_core: bool


@dataclass(frozen=True)
class LabelBundle:
    """Per-phoneme labels for the four tasks; all None off mora cores."""

    acc: Optional[AccLabel] = None
    hl: Optional[HlLabel] = None
    bi: Optional[BiLabel] = None
    pau: Optional[PauLabel] = None

    def is_full(self) -> bool:
        return None not in (self.acc, self.hl, self.bi, self.pau)

    def is_empty(self) -> bool:
        return (self.acc, self.hl, self.bi, self.pau) == (None, None, None, None)

    def get(self, task: str):
        return getattr(self, task)


EMPTY_BUNDLE = LabelBundle()


@dataclass(frozen=True)
class Utterance:
    """One utterance: phoneme tokens, optional labels, and data references.

    ``features`` maps a stream name (e.g. ``melspec``, ``hubert``) to the
    path of that stream's feature file, interpreted relative to the
    manifest's directory.
    """

    id: str
    phonemes: tuple
    labels: Optional[tuple] = None
    audio: Optional[str] = None
    features: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.labels is not None and len(self.labels) != len(self.phonemes):
            raise AlignmentMismatch(
                f"utterance {self.id!r}: {len(self.labels)} label bundles "
                f"for {len(self.phonemes)} phonemes"
            )

    @property
    def mora_core_mask(self) -> tuple:
        return tuple(tok.mora_core for tok in self.phonemes)

    def durations(self) -> tuple:
        return tuple(tok.duration for tok in self.phonemes)

    def total_frames(self) -> int:
        return sum(tok.duration for tok in self.phonemes)

    def validate_label_placement(self):
        """Reject label bundles that violate the mora-core placement rule."""
        if self.labels is None:
            return
        for pos, (tok, bundle) in enumerate(zip(self.phonemes, self.labels)):
            if tok.mora_core and not bundle.is_full():
                raise AlignmentMismatch(
                    f"utterance {self.id!r}: missing label at mora core "
                    f"{tok.symbol!r} (position {pos})"
                )
            if not tok.mora_core and not bundle.is_empty():
                raise AlignmentMismatch(
                    f"utterance {self.id!r}: label present at non-core "
                    f"{tok.symbol!r} (position {pos})"
                )


_RECORD_KEYS = {"id", "phonemes", "durations", "labels", "audio", "features"}
_REQUIRED_KEYS = {"id", "phonemes", "durations"}


def _decode_labels(raw, phonemes, line_no: int):
    if raw is None:
        return None
    if not isinstance(raw, dict):
        raise MalformedRecord(line_no, "labels must be an object or null")
    extra = set(raw) - set(TASKS)
    if extra:
        raise MalformedRecord(line_no, f"unknown label task keys: {sorted(extra)}")
    missing = set(TASKS) - set(raw)
    if missing:
        raise MalformedRecord(line_no, f"missing label task keys: {sorted(missing)}")
    columns = {}
    for task in TASKS:
        col = raw[task]
        if not isinstance(col, list):
            raise MalformedRecord(line_no, f"labels[{task!r}] must be a list")
        if len(col) != len(phonemes):
            raise AlignmentMismatch(
                f"line {line_no}: labels[{task!r}] has {len(col)} entries "
                f"for {len(phonemes)} phonemes"
            )
        enum_cls = TASK_ENUMS[task]
        decoded = []
        for entry in col:
            if entry is None:
                decoded.append(None)
            elif isinstance(entry, str):
                decoded.append(enum_cls.from_symbol(entry))
            else:
                raise MalformedRecord(line_no, f"labels[{task!r}] entries must be strings or null")
        columns[task] = decoded
    return tuple(
        LabelBundle(acc=columns["acc"][i], hl=columns["hl"][i],
                    bi=columns["bi"][i], pau=columns["pau"][i])
        for i in range(len(phonemes))
    )


def _decode_record(raw: dict, line_no: int, inventory: PhonemeInventory) -> Utterance:
    if not isinstance(raw, dict):
        raise MalformedRecord(line_no, "record is not a JSON object")
    extra = set(raw) - _RECORD_KEYS
    if extra:
        raise MalformedRecord(line_no, f"unknown keys: {sorted(extra)}")
    missing = _REQUIRED_KEYS - set(raw)
    if missing:
        raise MalformedRecord(line_no, f"missing keys: {sorted(missing)}")

    utt_id = raw["id"]
    if not isinstance(utt_id, str) or not utt_id:
        raise MalformedRecord(line_no, "id must be a non-empty string")

    symbols = raw["phonemes"]
    durations = raw["durations"]
    if not isinstance(symbols, list) or not all(isinstance(s, str) for s in symbols):
        raise MalformedRecord(line_no, "phonemes must be a list of strings")
    if not isinstance(durations, list):
        raise MalformedRecord(line_no, "durations must be a list")
    if len(durations) != len(symbols):
        raise MalformedRecord(
            line_no, f"{len(durations)} durations for {len(symbols)} phonemes"
        )
    tokens = []
    for sym, dur in zip(symbols, durations):
        if isinstance(dur, bool) or not isinstance(dur, int):
            raise MalformedRecord(line_no, f"duration {dur!r} is not an integer")
        if dur < 0:
            raise MalformedRecord(line_no, f"negative duration {dur}")
        tokens.append(PhonemeToken(sym, dur, inventory.is_mora_core(sym)))

    labels = _decode_labels(raw.get("labels"), tokens, line_no)

    audio = raw.get("audio")
    if audio is not None and not isinstance(audio, str):
        raise MalformedRecord(line_no, "audio must be a string or null")

    features = raw.get("features", {})
    if features is None:
        features = {}
    if not isinstance(features, dict) or not all(
        isinstance(k, str) and isinstance(v, str) for k, v in features.items()
    ):
        raise MalformedRecord(line_no, "features must map stream names to paths")

    utt = Utterance(
        id=utt_id,
        phonemes=tuple(tokens),
        labels=labels,
        audio=audio,
        features=dict(features),
    )
    try:
        utt.validate_label_placement()
    except AlignmentMismatch as exc:
        raise MalformedRecord(line_no, str(exc)) from None
    return utt


def parse_manifest(path, inventory: PhonemeInventory = DEFAULT_INVENTORY):
    """Read a JSON-lines manifest into a list of validated Utterances.

    Each line holds one record::

        {"id": str, "phonemes": [str], "durations": [int],
         "labels": {"acc": [str|null], "hl": [...], "bi": [...],
                    "pau": [...]} | null,
         "audio": str|null, "features": {stream: path}}

    Keys outside this schema are rejected.  Label entries must be
    present exactly at mora-core positions and null elsewhere.
    """
    utterances = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped:
                continue
            try:
                raw = json.loads(stripped)
            except json.JSONDecodeError as exc:
                raise MalformedRecord(line_no, f"invalid JSON: {exc.msg}") from None
            utterances.append(_decode_record(raw, line_no, inventory))
    return utterances


def _encode_record(utt: Utterance) -> dict:
    record = {
        "id": utt.id,
        "phonemes": [tok.symbol for tok in utt.phonemes],
        "durations": [tok.duration for tok in utt.phonemes],
        "labels": None,
        "audio": utt.audio,
        "features": dict(utt.features),
    }
    if utt.labels is not None:
        record["labels"] = {
            task: [
                bundle.get(task).symbol if bundle.get(task) is not None else None
                for bundle in utt.labels
            ]
            for task in TASKS
        }
    return record


def write_manifest(utterances: Sequence[Utterance], path):
    """Write utterances as a JSON-lines manifest (inverse of parse_manifest)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for utt in utterances:
            fh.write(json.dumps(_encode_record(utt), ensure_ascii=False))
            fh.write("\n")


def class_counts(utterances: Sequence[Utterance]):
    """Per-task label counts over mora-core positions.

    Every class of every task appears in the result, zero or not, in
    enumeration order.  Raises UnlabeledUtterance on any utterance
    without labels.
    """
    counts = {
        task: {member.symbol: 0 for member in enum_cls}
        for task, enum_cls in TASK_ENUMS.items()
    }
    for utt in utterances:
        if utt.labels is None:
            raise UnlabeledUtterance(f"utterance {utt.id!r} has no labels")
        for tok, bundle in zip(utt.phonemes, utt.labels):
            if not tok.mora_core:
                continue
            for task in TASKS:
                counts[task][bundle.get(task).symbol] += 1
    return counts
