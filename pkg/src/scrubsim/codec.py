"""Continuous-action <-> token conversion.

Each action dimension is discretized into 256 uniform bins. The token ids
used for bins come from "vocabulary surgery": the 256 least-used ids of a
text vocabulary are reassigned as action tokens. De-tokenization maps a
bin back to its center, so the round trip moves a value by at most half a
bin width.
"""

from dataclasses import dataclass, field

import numpy as np

NUM_BINS = 256

ROLE_TEXT = 0
ROLE_ACTION = 1


class CodecError(Exception):
    pass


class OutOfRange(CodecError):
    pass


class InvalidToken(CodecError):
    pass


class LengthMismatch(CodecError):
    pass


class VocabConflict(CodecError):
    """A least-used id collides with a template-reserved text id."""


@dataclass(frozen=True)
class ActionRanges:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float)
        hi = np.asarray(self.hi, dtype=float)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("lo/hi must be equal-length vectors")
        if np.any(lo >= hi):
            raise ValueError("need lo < hi per dimension")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dims(self):
        return self.lo.shape[0]

    @property
    def width(self):
        return self.hi - self.lo


@dataclass(frozen=True)
class Vocabulary:
    size: int
    action_ids: np.ndarray          # ascending; bin k <-> action_ids[k]
    lexemes: dict = field(default_factory=dict)  # word -> reserved text id

    def __post_init__(self):
        ids = np.asarray(self.action_ids, dtype=np.int64)
        if ids.shape != (NUM_BINS,):
            raise ValueError(f"need exactly {NUM_BINS} action ids")
        if len(np.unique(ids)) != NUM_BINS:
            raise ValueError("action ids must be unique")
        if ids.min() < 0 or ids.max() >= self.size:
            raise ValueError("action id outside vocabulary")
        object.__setattr__(self, "action_ids", np.sort(ids))
        bin_of = {int(t): k for k, t in enumerate(self.action_ids)}
        object.__setattr__(self, "_bin_of", bin_of)

    def is_action_id(self, token_id):
        return int(token_id) in self._bin_of

    def bin_of(self, token_id):
        try:
            return self._bin_of[int(token_id)]
        except KeyError:
            raise InvalidToken(f"id {token_id} is not an action token") from None

    def id_of_bin(self, k):
        return int(self.action_ids[k])


@dataclass(frozen=True)
class TokenSequence:
    ids: np.ndarray
    roles: np.ndarray  # per-position ROLE_TEXT / ROLE_ACTION

    def __post_init__(self):
        ids = np.asarray(self.ids, dtype=np.int64)
        roles = np.asarray(self.roles, dtype=np.int64)
        if ids.shape != roles.shape or ids.ndim != 1:
            raise ValueError("ids and roles must be equal-length vectors")
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "roles", roles)

    def __len__(self):
        return self.ids.shape[0]

    @staticmethod
    def concat(sequences):
        return TokenSequence(np.concatenate([s.ids for s in sequences]),
                             np.concatenate([s.roles for s in sequences]))


@dataclass(frozen=True)
class ContinuousAction:
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if not np.all(np.isfinite(v)):
            raise ValueError("action values must be finite")
        object.__setattr__(self, "values", v)


def build_vocab(base_size, frequency_table, reserved_text_ids=None, lexemes=None):
    """Reassign the 256 least-used ids as action tokens.

    Ties in the frequency table break toward the larger id. Raises
    VocabConflict if a selected id is reserved by an instruction-template
    lexeme (caller must enlarge the base vocabulary).
    """
    freq = np.asarray(frequency_table)
    if base_size < 2 * NUM_BINS:
        raise ValueError("base vocabulary too small for surgery")
    if freq.shape != (base_size,):
        raise ValueError("frequency table length must equal base_size")
    # sort by (count asc, id desc): stable argsort over (count, -id)
    order = np.lexsort((-np.arange(base_size), freq))
    chosen = order[:NUM_BINS]
    if reserved_text_ids is None and lexemes:
        reserved_text_ids = set(lexemes.values())
    if reserved_text_ids:
        clash = set(int(i) for i in chosen) & set(int(i) for i in reserved_text_ids)
        if clash:
            raise VocabConflict(f"least-used ids {sorted(clash)} are template-reserved")
    return Vocabulary(base_size, np.sort(chosen), dict(lexemes or {}))


def tokenize_action(action, ranges, vocab):
    """Quantize to one action token per dimension: floor binning with clamp."""
    v = action.values if isinstance(action, ContinuousAction) else np.asarray(action, dtype=float)
    if v.shape != (ranges.dims,):
        raise LengthMismatch(f"expected {ranges.dims} action values")
    if np.any(v < ranges.lo - 1e-9) or np.any(v > ranges.hi + 1e-9):
        raise OutOfRange("action value outside configured ranges")
    frac = (v - ranges.lo) / ranges.width
    bins = np.clip(np.floor(frac * NUM_BINS).astype(np.int64), 0, NUM_BINS - 1)
    ids = vocab.action_ids[bins]
    return TokenSequence(ids, np.full(ranges.dims, ROLE_ACTION))


def detokenize(tokens, ranges, vocab):
    """Map action tokens back to bin centers."""
    ids = tokens.ids if isinstance(tokens, TokenSequence) else np.asarray(tokens, dtype=np.int64)
    if ids.shape != (ranges.dims,):
        raise LengthMismatch(f"expected {ranges.dims} action tokens, got {ids.shape[0]}")
    bins = np.array([vocab.bin_of(t) for t in ids], dtype=np.int64)
    values = ranges.lo + (bins + 0.5) * ranges.width / NUM_BINS
    return ContinuousAction(values)


def tokenize_batch(values, ranges, vocab):
    """Vectorized tokenize over an (n, dims) array; returns (n, dims) ids."""
    v = np.asarray(values, dtype=float)
    if v.ndim != 2 or v.shape[1] != ranges.dims:
        raise LengthMismatch(f"expected (n, {ranges.dims}) action array")
    if np.any(v < ranges.lo - 1e-9) or np.any(v > ranges.hi + 1e-9):
        raise OutOfRange("action value outside configured ranges")
    frac = (v - ranges.lo) / ranges.width
    bins = np.clip(np.floor(frac * NUM_BINS).astype(np.int64), 0, NUM_BINS - 1)
    return vocab.action_ids[bins]


def detokenize_batch(ids, ranges, vocab):
    """Vectorized detokenize over an (n, dims) id array; returns bin centers."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 2 or ids.shape[1] != ranges.dims:
        raise LengthMismatch(f"expected (n, {ranges.dims}) token array")
    # action_ids is sorted, so bin lookup is a searchsorted
    bins = np.searchsorted(vocab.action_ids, ids)
    if (np.any(bins >= NUM_BINS)
            or np.any(vocab.action_ids[np.clip(bins, 0, NUM_BINS - 1)] != ids)):
        raise InvalidToken("id is not an action token")
    return ranges.lo + (bins + 0.5) * ranges.width / NUM_BINS


def write_vocab(vocab, path):
    """Textual vocabulary table: one `(id, kind, payload)` line per id."""
    bin_of = {int(t): k for k, t in enumerate(vocab.action_ids)}
    word_of = {v: k for k, v in vocab.lexemes.items()}
    with open(path, "w") as f:
        f.write(f"# scrubsim vocabulary v1 size={vocab.size}\n")
        for i in range(vocab.size):
            if i in bin_of:
                f.write(f"{i}\taction\tbin:{bin_of[i]}\n")
            elif i in word_of:
                f.write(f"{i}\ttext\tlex:{word_of[i]}\n")
            else:
                f.write(f"{i}\ttext\t-\n")


def read_vocab(path):
    action = {}
    lexemes = {}
    size = None
    with open(path) as f:
        header = f.readline()
        for part in header.split():
            if part.startswith("size="):
                size = int(part[5:])
        if size is None:
            raise CodecError("vocabulary file missing size header")
        for line in f:
            ident, kind, payload = line.rstrip("\n").split("\t")
            if kind == "action":
                action[int(payload.split(":")[1])] = int(ident)
            elif payload.startswith("lex:"):
                lexemes[payload[4:]] = int(ident)
    ids = np.array([action[k] for k in range(NUM_BINS)], dtype=np.int64)
    return Vocabulary(size, ids, lexemes)
