#!/usr/bin/env python3
"""
Scene Embedding Database

Stores (scene embedding, condition, filter parameters, quality signal)
entries and recommends filter parameters for a new scene from its k = 5
nearest neighbours by cosine similarity:

    score(c) = sim(c) * exp(2 * c.delta_f1)    over neighbours with delta_f1 > 0

The analytics thread publishes its zero-shot label and the recommendation
through an AtomicSlot that the quality thread reads without locking.

On-disk format (append-only):
    header   fixed-width text line holding the embedding dimension and the
             number of committed records
    records  fixed-width binary: '<f8' embedding, 8-byte condition,
             '<f8' delta_f1, 256-byte JSON parameters (NUL padded)

A record is written before the header count is rewritten, so a crash during
append leaves the previous count valid.
"""

import json
import logging
import math
import os
import re
from dataclasses import dataclass, field
from typing import Dict, Generic, List, Optional, Protocol, Sequence, Tuple, TypeVar

import cv2
import numpy as np

from imaging import lab_stats, validate_raster
from wem import CONDITIONS, rule_scores

logger = logging.getLogger(__name__)

DEFAULT_DIM = 2048
DEFAULT_K = 5
QUALITY_GAIN = 2.0
NORM_TOLERANCE = 1e-6
INITIAL_CAPACITY = 64

HEADER_FORMAT = "CADENET-SED v1 dim={dim:08d} count={count:012d}\n"
HEADER_SIZE = len(HEADER_FORMAT.format(dim=0, count=0))
_HEADER_PATTERN = re.compile(r"^CADENET-SED v1 dim=(\d{8}) count=(\d{12})\n$")
CONDITION_BYTES = 8
PARAMS_BYTES = 256

DEFAULT_PROMPTS = [
    ('rain', 'a photo taken in heavy rain'),
    ('fog', 'a photo taken in dense fog'),
    ('sand', 'a photo taken in a sandstorm'),
    ('snow', 'a photo taken in falling snow'),
    ('clear', 'a photo taken in clear weather'),
]

T = TypeVar('T')


class SedFormatError(ValueError):
    """Raised for a malformed database file, entry or prompt file"""


class AtomicSlot(Generic[T]):
    """
    Single-writer cell holding the latest immutable record.

    ``publish`` replaces the held reference in one store and ``read`` loads it
    in one load; records are frozen, so a reader sees either the previous or
    the new record in full and never waits.
    """

    def __init__(self, initial: Optional[T] = None):
        self._record: Optional[T] = initial

    def publish(self, record: T) -> None:
        self._record = record

    def read(self) -> Optional[T]:
        return self._record


@dataclass(frozen=True)
class Recommendation:
    condition: str
    params: Dict = field(compare=False)
    score: float = 0.0
    similarity: float = 0.0


@dataclass(frozen=True)
class SlotRecord:
    clip_label: str
    clip_scores: Tuple[float, ...]
    recommendation: Optional[Recommendation]
    version: int


def publish_slot(slot: AtomicSlot, clip_label: str, clip_scores: Sequence[float],
                 recommendation: Optional[Recommendation]) -> SlotRecord:
    """Publish the next SlotRecord with a version one above the current one."""
    current = slot.read()
    record = SlotRecord(
        clip_label=clip_label,
        clip_scores=tuple(float(s) for s in clip_scores),
        recommendation=recommendation,
        version=(current.version + 1) if current is not None else 1,
    )
    slot.publish(record)
    return record


@dataclass(frozen=True, eq=False)
class SedEntry:
    embedding: np.ndarray
    condition: str
    filter_params: Dict
    delta_f1: float

    def __post_init__(self):
        emb = np.asarray(self.embedding, dtype=np.float64)
        if emb.ndim != 1:
            raise SedFormatError(f"embedding must be a vector, got shape {emb.shape}")
        norm = float(np.linalg.norm(emb))
        if abs(norm - 1.0) > NORM_TOLERANCE:
            raise SedFormatError(f"embedding must be unit norm, got {norm:.9f}")
        if self.condition not in CONDITIONS:
            raise SedFormatError(f"unknown condition {self.condition!r}")
        object.__setattr__(self, 'embedding', emb)


def normalise(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64).ravel()
    norm = np.linalg.norm(v)
    if norm == 0:
        raise ValueError("cannot normalise a zero vector")
    return v / norm


def _check_query(query: np.ndarray, dim: int) -> np.ndarray:
    q = np.asarray(query, dtype=np.float64).ravel()
    if q.shape[0] != dim:
        raise ValueError(f"query dimension {q.shape[0]} does not match database dimension {dim}")
    if abs(float(np.linalg.norm(q)) - 1.0) > NORM_TOLERANCE:
        raise ValueError("query must be unit norm")
    return q


class SceneDatabase:
    """Exact-scan embedding store with optional append-only persistence."""

    def __init__(self, dim: int = DEFAULT_DIM, path: Optional[str] = None):
        """
        Initialize the SceneDatabase.

        Args:
            dim: Embedding dimension
            path: Backing file; entries are appended to it as they arrive
        """
        self.dim = dim
        self.path = path
        self._entries: List[SedEntry] = []
        # rows below len(self._entries) are live; capacity doubles when full
        self._matrix = np.zeros((INITIAL_CAPACITY, dim))
        self._record_dtype = np.dtype([
            ('embedding', '<f8', (dim,)),
            ('condition', f'S{CONDITION_BYTES}'),
            ('delta_f1', '<f8'),
            ('params', f'S{PARAMS_BYTES}'),
        ])

    def __len__(self) -> int:
        return len(self._entries)

    @property
    def entries(self) -> List[SedEntry]:
        return list(self._entries)

    @classmethod
    def load(cls, path: str, dim: Optional[int] = None) -> 'SceneDatabase':
        """
        Open a database file, or start an empty one bound to ``path``.

        Args:
            path: Database file
            dim: Expected dimension; required when the file does not exist yet
        """
        if not os.path.exists(path):
            db = cls(dim=dim or DEFAULT_DIM, path=path)
            logger.info(f"Scene database {path} not found, starting empty (dim={db.dim})")
            return db

        with open(path, 'rb') as f:
            header = f.read(HEADER_SIZE)
        match = _HEADER_PATTERN.match(header.decode('ascii', errors='replace'))
        if not match:
            raise SedFormatError(f"{path}: bad header")
        file_dim, count = int(match.group(1)), int(match.group(2))
        if dim is not None and dim != file_dim:
            raise SedFormatError(f"{path}: dimension {file_dim} does not match expected {dim}")

        db = cls(dim=file_dim, path=path)
        records = np.fromfile(path, dtype=db._record_dtype, count=count, offset=HEADER_SIZE)
        if len(records) != count:
            raise SedFormatError(f"{path}: header promises {count} records, found {len(records)}")
        entries = []
        for rec in records:
            try:
                params = json.loads(rec['params'].rstrip(b'\0').decode('utf-8') or '{}')
            except (UnicodeDecodeError, json.JSONDecodeError) as e:
                raise SedFormatError(f"{path}: unreadable parameters in record: {e}") from e
            entry = SedEntry(
                embedding=np.array(rec['embedding'], dtype=np.float64),
                condition=rec['condition'].rstrip(b'\0').decode('ascii'),
                filter_params=params,
                delta_f1=float(rec['delta_f1']),
            )
            entries.append(entry)
        db._entries = entries
        db._matrix = np.array(records['embedding'], dtype=np.float64).reshape(count, file_dim)
        logger.info(f"Loaded {count} scene database entries from {path}")
        return db

    def _add(self, entry: SedEntry) -> None:
        n = len(self._entries)
        if n == self._matrix.shape[0]:
            grown = np.zeros((max(2 * n, INITIAL_CAPACITY), self.dim))
            grown[:n] = self._matrix
            self._matrix = grown
        self._matrix[n] = entry.embedding
        self._entries.append(entry)

    def _encode(self, entry: SedEntry) -> bytes:
        params = json.dumps(entry.filter_params, sort_keys=True).encode('utf-8')
        if len(params) > PARAMS_BYTES:
            raise SedFormatError(f"filter parameters exceed {PARAMS_BYTES} bytes when encoded")
        rec = np.zeros(1, dtype=self._record_dtype)
        rec['embedding'][0] = entry.embedding
        rec['condition'][0] = entry.condition.encode('ascii')
        rec['delta_f1'][0] = entry.delta_f1
        rec['params'][0] = params
        return rec.tobytes()

    def _persist(self, entry: SedEntry) -> None:
        count = len(self._entries)
        payload = self._encode(entry)
        mode = 'r+b' if os.path.exists(self.path) else 'w+b'
        with open(self.path, mode) as f:
            if mode == 'w+b':
                f.write(HEADER_FORMAT.format(dim=self.dim, count=0).encode('ascii'))
            f.seek(HEADER_SIZE + count * self._record_dtype.itemsize)
            f.write(payload)
            f.flush()
            f.seek(0)
            f.write(HEADER_FORMAT.format(dim=self.dim, count=count + 1).encode('ascii'))
            f.flush()

    def append(self, entry: SedEntry) -> None:
        """Add an entry and, when bound to a file, persist it."""
        if entry.embedding.shape[0] != self.dim:
            raise SedFormatError(f"embedding dimension {entry.embedding.shape[0]} does not match {self.dim}")
        if self.path:
            self._persist(entry)
        self._add(entry)
        logger.debug(f"Appended {entry.condition} entry (delta={entry.delta_f1:+.4f}), size {len(self)}")

    def knn(self, query: np.ndarray, k: int = DEFAULT_K) -> List[Tuple[SedEntry, float]]:
        """Top-k entries by cosine similarity, descending; ties keep insertion order."""
        if not self._entries:
            return []
        q = _check_query(query, self.dim)
        sims = self._matrix[:len(self._entries)] @ q
        order = np.argsort(-sims, kind='stable')[:k]
        return [(self._entries[i], float(sims[i])) for i in order]

    def recommend(self, query: np.ndarray, k: int = DEFAULT_K) -> Optional[Recommendation]:
        best: Optional[Recommendation] = None
        for entry, sim in self.knn(query, k):
            if not entry.delta_f1 > 0:
                continue
            score = sim * math.exp(QUALITY_GAIN * entry.delta_f1)
            if best is None or score > best.score:
                best = Recommendation(entry.condition, dict(entry.filter_params), score, sim)
        return best

    def dump(self) -> List[str]:
        lines = [f"# dim={self.dim} entries={len(self)}"]
        for i, e in enumerate(self._entries):
            head = ' '.join(f"{v:+.3f}" for v in e.embedding[:4])
            lines.append(f"{i:6d} {e.condition:<6} delta={e.delta_f1:+.4f} "
                         f"params={json.dumps(e.filter_params, sort_keys=True)} emb=[{head} ...]")
        return lines


class SceneEmbedder(Protocol):
    def embed(self, frame: np.ndarray) -> np.ndarray:
        ...


class ZeroShotClassifier(Protocol):
    def classify_prompts(self, frame: np.ndarray, prompts: Sequence[str]) -> List[float]:
        ...


class PseudoEmbedder:
    """
    Deterministic local embedder.

    Projects an 8x8 thumbnail through a seeded Gaussian matrix and normalises,
    so similar frames get similar embeddings.
    """

    THUMBNAIL = (8, 8)

    def __init__(self, dim: int = DEFAULT_DIM, seed: int = 0):
        self.dim = dim
        self.seed = seed
        self._projections: Dict[int, np.ndarray] = {}

    def _projection(self, n_features: int) -> np.ndarray:
        if n_features not in self._projections:
            rng = np.random.default_rng(self.seed)
            self._projections[n_features] = rng.standard_normal((self.dim, n_features))
        return self._projections[n_features]

    def embed(self, frame: np.ndarray) -> np.ndarray:
        validate_raster(frame)
        thumb = cv2.resize(frame, self.THUMBNAIL, interpolation=cv2.INTER_AREA)
        features = thumb.astype(np.float64).ravel() / 255.0 - 0.5
        v = self._projection(features.size) @ features
        if not np.any(v):
            v = np.zeros(self.dim)
            v[0] = 1.0
        return normalise(v)


class HeuristicPromptScorer:
    """
    Deterministic local zero-shot stand-in.

    Scores each prompt by its label: the weather rule margins for rain, fog
    and sand, a bright-and-desaturated margin for snow, and the complement of
    the strongest of those for clear. Scores are softmax-normalised.
    """

    def __init__(self, prompts: Optional[Sequence[Tuple[str, str]]] = None, temperature: float = 0.1):
        """
        Args:
            prompts: (label, text) pairs telling which condition each prompt
                text stands for; unknown texts fall back to a keyword match
            temperature: Softmax temperature
        """
        self._labels = {text: label for label, text in (prompts or DEFAULT_PROMPTS)}
        self.temperature = temperature

    def label_scores(self, frame: np.ndarray) -> Dict[str, float]:
        stats = lab_stats(frame)
        scores = rule_scores(stats)
        bright = (stats.mu_L - 170.0) / 60.0
        pale = 1.0 - stats.mu_S / 60.0
        scores['snow'] = float(np.clip(min(bright, pale), 0.0, 1.0))
        scores['clear'] = 1.0 - max(scores.values())
        return scores

    def classify_prompts(self, frame: np.ndarray, prompts: Sequence[str]) -> List[float]:
        by_label = self.label_scores(frame)
        raw = np.array([by_label.get(self._labels.get(p) or label_of(p), 0.0) for p in prompts])
        e = np.exp((raw - raw.max()) / self.temperature)
        return (e / e.sum()).tolist()


def label_of(prompt: str) -> str:
    """Condition label a prompt line stands for: the label prefix or a keyword match."""
    if '|' in prompt:
        return prompt.split('|', 1)[0].strip()
    lowered = prompt.lower()
    for condition in CONDITIONS:
        if condition in lowered:
            return condition
    return 'clear'


def load_prompts(path: str) -> List[Tuple[str, str]]:
    """
    Read zero-shot prompts, one ``label|prompt text`` per line.

    Blank lines and lines starting with '#' are ignored.
    """
    prompts = []
    with open(path, 'r') as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith('#'):
                continue
            if '|' not in line:
                raise SedFormatError(f"{path}:{lineno}: expected 'label|prompt', got {line!r}")
            label, text = (part.strip() for part in line.split('|', 1))
            if label not in CONDITIONS:
                raise SedFormatError(f"{path}:{lineno}: unknown condition label {label!r}")
            prompts.append((label, text))
    if not prompts:
        raise SedFormatError(f"{path}: no prompts")
    logger.debug(f"Loaded {len(prompts)} prompts from {path}")
    return prompts
