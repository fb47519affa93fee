"""Binary encoding of BI-RADS lesion descriptor classes.

A vocabulary maps each descriptor class (e.g. mass margin "Spicular") to
a stable index; a lesion's description becomes a binary vector with ones
at the indices of its classes, zero-padded to a configurable length L.
A case carries one such vector per lesion.

Matching is case-insensitive with whitespace trimming (source CSVs are
inconsistently cased). Combined classes written as hyphenated
conjunctions ("Circumscribed-Obscured", "Round-Oval") are split into
their atomic classes; hyphens *inside* an atomic class ("Ill-defined")
are handled by segmenting against the vocabulary, never blindly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ValidationError

DEFAULT_LENGTH = 256

# (category, class) pairs for masses and calcifications: margins, shapes,
# calcification morphology and distribution. 14 classes total.
DEFAULT_CLASSES: tuple[tuple[str, str], ...] = (
    ("mass-margin", "Circumscribed"),
    ("mass-margin", "Ill-defined"),
    ("mass-margin", "Spicular"),
    ("mass-margin", "Obscured"),
    ("mass-shape", "Round"),
    ("mass-shape", "Oval"),
    ("mass-shape", "Irregular"),
    ("calc-morphology", "Pleomorphic"),
    ("calc-morphology", "Amorphous"),
    ("calc-morphology", "Linear"),
    ("calc-morphology", "Punctate"),
    ("calc-distribution", "Clustered"),
    ("calc-distribution", "Scattered"),
    ("calc-distribution", "Diffuse"),
)


def _norm(token: str) -> str:
    return token.strip().casefold()


@dataclass(frozen=True)
class DescriptorVocabulary:
    """Ordered descriptor classes with a stable token -> index map."""

    entries: tuple[tuple[str, str], ...]  # (category, token) in index order
    index: dict[str, int] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        seen: dict[str, int] = {}
        for i, (category, token) in enumerate(self.entries):
            key = _norm(token)
            if key in seen:
                raise ValidationError(f"duplicate descriptor token: {token!r}")
            seen[key] = i
        object.__setattr__(self, "index", seen)

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, token: str) -> bool:
        return _norm(token) in self.index

    def index_of(self, token: str) -> int:
        key = _norm(token)
        if key not in self.index:
            raise ValidationError(f"unknown descriptor token: {token!r}")
        return self.index[key]

    def token_at(self, i: int) -> str:
        return self.entries[i][1]

    def save(self, path: str | Path) -> None:
        lines = [f"{category},{token}\n" for category, token in self.entries]
        Path(path).write_text("".join(lines), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "DescriptorVocabulary":
        pairs = []
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            category, _, token = line.partition(",")
            if not token:
                raise ValidationError(f"malformed vocabulary line: {line!r}")
            pairs.append((category.strip(), token.strip()))
        return build_vocabulary(pairs)


def build_vocabulary(tokens) -> DescriptorVocabulary:
    """Assign indices to (category, token) pairs in input order."""
    pairs = tuple((category, token) for category, token in tokens)
    if not pairs:
        raise ValidationError("vocabulary must be non-empty")
    per_category: dict[str, set[str]] = {}
    for category, token in pairs:
        bucket = per_category.setdefault(category, set())
        key = _norm(token)
        if key in bucket:
            raise ValidationError(f"duplicate token {token!r} in category {category!r}")
        bucket.add(key)
    return DescriptorVocabulary(entries=pairs)


def default_vocabulary() -> DescriptorVocabulary:
    return build_vocabulary(DEFAULT_CLASSES)


def split_combined(token: str, vocab: DescriptorVocabulary) -> list[str]:
    """Resolve a possibly hyphen-combined token into atomic vocabulary classes.

    Exact matches win; otherwise the hyphen-separated parts are segmented
    greedily (longest candidate first) so that multi-part classes like
    "Ill-defined" survive inside combinations like "Circumscribed-Ill-defined".
    """
    if token in vocab:
        return [token]
    parts = token.strip().split("-")
    if len(parts) < 2:
        raise ValidationError(f"unknown descriptor token: {token!r}")

    def segment(start: int) -> list[str] | None:
        if start == len(parts):
            return []
        for end in range(len(parts), start, -1):
            candidate = "-".join(parts[start:end])
            if candidate in vocab:
                rest = segment(end)
                if rest is not None:
                    return [candidate] + rest
        return None

    result = segment(0)
    if result is None:
        raise ValidationError(f"unknown descriptor token: {token!r}")
    return result


def encode_lesion(tokens, vocab: DescriptorVocabulary, length: int = DEFAULT_LENGTH) -> np.ndarray:
    """Binary vector with ones at the indices of the given classes.

    Set semantics: order and duplicates do not matter. Entries past the
    vocabulary size stay zero (padding up to ``length``).
    """
    if len(vocab) > length:
        raise ValidationError(
            f"vector length {length} shorter than vocabulary size {len(vocab)}"
        )
    vec = np.zeros(length, dtype=np.float64)
    for token in tokens:
        for atom in split_combined(token, vocab):
            vec[vocab.index_of(atom)] = 1.0
    return vec


def decode_vector(vec: np.ndarray, vocab: DescriptorVocabulary) -> list[str]:
    """Tokens (canonical casing) of the set bits, in index order."""
    return [vocab.token_at(i) for i in np.flatnonzero(vec[: len(vocab)] != 0)]


def encode_case(lesions, vocab: DescriptorVocabulary, length: int = DEFAULT_LENGTH) -> np.ndarray:
    """One row per lesion, order preserved; shape (K, length)."""
    lesions = list(lesions)
    if not lesions:
        raise ValidationError("a case needs at least one lesion")
    return np.stack([encode_lesion(tokens, vocab, length) for tokens in lesions])
