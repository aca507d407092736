"""Three-component waveforms, token sequences, and their file formats.

A waveform is a (T, 3) sample grid over the Z, N, E channels.  The model
consumes it as non-overlapping tokens of L consecutive samples, normalized
per channel over whatever segment was tokenized; the normalization record
travels with the tokens so predictions can be mapped back to physical
amplitudes.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

SGWF_MAGIC = b"SGWF"
SGWF_VERSION = 1
SCALE_FLOOR = 1e-12  # constant channels normalize by this instead of 0


@dataclass
class Waveform:
    """A (T, 3) velocity trace with channels ordered (Z, N, E)."""

    samples: np.ndarray
    sampling_rate_hz: float
    station_id: str = ""
    start_time_s: float = 0.0

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 2 or self.samples.shape[1] != 3:
            raise ValueError(f"waveform samples must be (T, 3), got {self.samples.shape}")
        if self.samples.shape[0] < 1:
            raise ValueError("waveform needs at least one sample")
        if self.sampling_rate_hz <= 0:
            raise ValueError(f"sampling rate must be positive, got {self.sampling_rate_hz}")

    @property
    def n_samples(self) -> int:
        return self.samples.shape[0]

    def times(self) -> np.ndarray:
        return self.start_time_s + np.arange(self.n_samples) / self.sampling_rate_hz


@dataclass
class TokenSequence:
    """An (N, L, 3) partition of a waveform, normalized per channel.

    ``tokens`` are (samples - norm_offset) / norm_scale reshaped to tokens;
    the offset/scale pair is what detokenize uses to undo it.
    """

    tokens: np.ndarray
    token_len: int
    norm_offset: np.ndarray
    norm_scale: np.ndarray
    sampling_rate_hz: float = 1.0
    station_id: str = ""
    start_time_s: float = 0.0

    def __post_init__(self):
        self.tokens = np.asarray(self.tokens, dtype=np.float64)
        self.norm_offset = np.asarray(self.norm_offset, dtype=np.float64)
        self.norm_scale = np.asarray(self.norm_scale, dtype=np.float64)
        if self.tokens.ndim != 3 or self.tokens.shape[1] != self.token_len or self.tokens.shape[2] != 3:
            raise ValueError(f"tokens must be (N, {self.token_len}, 3), got {self.tokens.shape}")
        if self.norm_offset.shape != (3,) or self.norm_scale.shape != (3,):
            raise ValueError("normalization records must be 3-vectors")
        if np.any(self.norm_scale <= 0):
            raise ValueError("norm_scale entries must be positive")

    @property
    def n_tokens(self) -> int:
        return self.tokens.shape[0]


@dataclass
class PaddingMask:
    """Per-token keep flags; the kept region is a contiguous trailing suffix."""

    keep: np.ndarray = field()

    def __post_init__(self):
        self.keep = np.asarray(self.keep, dtype=bool)
        if self.keep.ndim != 1 or self.keep.size < 1:
            raise ValueError("padding mask must be a non-empty 1-d bool vector")
        kept = np.flatnonzero(self.keep)
        if kept.size == 0:
            raise ValueError("padding mask keeps no positions")
        if kept.size != self.keep.size - kept[0]:
            raise ValueError("kept positions must form a contiguous trailing suffix")

    @property
    def n_kept(self) -> int:
        return int(self.keep.sum())


def tokenize(w: Waveform, token_len: int) -> TokenSequence:
    """Split a waveform into non-overlapping tokens of ``token_len`` samples.

    Each channel is normalized to zero mean and unit standard deviation over
    the full segment (scale floored for constant channels).  T must divide
    evenly; silent truncation would shift arrival times, so it is an error.
    """
    if token_len < 1:
        raise ValueError(f"token_len must be >= 1, got {token_len}")
    t = w.n_samples
    if t % token_len != 0:
        raise ValueError(f"waveform length {t} is not divisible by token length {token_len}")
    offset = w.samples.mean(axis=0)
    scale = np.maximum(w.samples.std(axis=0), SCALE_FLOOR)
    normed = (w.samples - offset) / scale
    tokens = normed.reshape(t // token_len, token_len, 3)
    return TokenSequence(
        tokens=tokens,
        token_len=token_len,
        norm_offset=offset,
        norm_scale=scale,
        sampling_rate_hz=w.sampling_rate_hz,
        station_id=w.station_id,
        start_time_s=w.start_time_s,
    )


def detokenize(ts: TokenSequence) -> Waveform:
    """Invert tokenize: denormalize and concatenate tokens back to samples."""
    samples = ts.tokens.reshape(-1, 3) * ts.norm_scale + ts.norm_offset
    return Waveform(
        samples=samples,
        sampling_rate_hz=ts.sampling_rate_hz,
        station_id=ts.station_id,
        start_time_s=ts.start_time_s,
    )


def denormalize(ts: TokenSequence, tokens: np.ndarray) -> np.ndarray:
    """Map tokens from a sequence's normalized domain back to physical units."""
    return tokens * ts.norm_scale + ts.norm_offset


def random_padding_mask(n_tokens: int, min_keep: int, rng: np.random.Generator) -> PaddingMask:
    """Draw a keep-count uniformly from [min_keep, n_tokens], keep the suffix.

    Dropping leading tokens (oldest history) is the natural shorter-context
    augmentation for a forecaster conditioned on the most recent past.
    """
    if not 1 <= min_keep <= n_tokens:
        raise ValueError(f"min_keep {min_keep} outside [1, {n_tokens}]")
    n_keep = int(rng.integers(min_keep, n_tokens + 1))
    keep = np.zeros(n_tokens, dtype=bool)
    keep[n_tokens - n_keep :] = True
    return PaddingMask(keep=keep)


# ---------------------------------------------------------------------------
# Waveform file format
# ---------------------------------------------------------------------------
#
# Little-endian binary layout:
#   magic "SGWF" | version u32 | station_count u32 | sampling_rate_hz f64
#   | T u64 | per station: id_len u16, id UTF-8, (T x 3) f64 time-major
#
# All stations in one file share T and the sampling rate.


def write_sgwf(path, waveforms: list[Waveform]) -> None:
    if not waveforms:
        raise ValueError("refusing to write an empty waveform file")
    t = waveforms[0].n_samples
    sr = waveforms[0].sampling_rate_hz
    for w in waveforms:
        if w.n_samples != t or w.sampling_rate_hz != sr:
            raise ValueError("all waveforms in one file must share length and sampling rate")
    with open(path, "wb") as f:
        f.write(SGWF_MAGIC)
        f.write(struct.pack("<II", SGWF_VERSION, len(waveforms)))
        f.write(struct.pack("<dQ", sr, t))
        for w in waveforms:
            sid = w.station_id.encode("utf-8")
            f.write(struct.pack("<H", len(sid)))
            f.write(sid)
            f.write(np.ascontiguousarray(w.samples, dtype="<f8").tobytes())


def read_sgwf(path) -> list[Waveform]:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != SGWF_MAGIC:
            raise ValueError(f"{path}: not a waveform file (magic {magic!r})")
        version, n_stations = struct.unpack("<II", f.read(8))
        if version != SGWF_VERSION:
            raise ValueError(f"{path}: unsupported waveform format version {version}")
        sr, t = struct.unpack("<dQ", f.read(16))
        out = []
        for _ in range(n_stations):
            (id_len,) = struct.unpack("<H", f.read(2))
            sid = f.read(id_len).decode("utf-8")
            raw = f.read(t * 3 * 8)
            if len(raw) != t * 3 * 8:
                raise ValueError(f"{path}: truncated sample block")
            samples = np.frombuffer(raw, dtype="<f8").reshape(t, 3)
            out.append(Waveform(samples.copy(), sr, station_id=sid))
    return out


def read_csv_waveform(path, station_id: str = "") -> Waveform:
    """Import a plain-text trace with columns time, Z, N, E.

    A non-numeric first row is treated as a header.  The sampling rate is
    inferred from the time column, which must be uniformly spaced.
    """
    rows = np.genfromtxt(path, delimiter=",", skip_header=0)
    if rows.ndim == 1:
        rows = rows[None, :]
    if np.isnan(rows[0]).any():  # header row
        rows = rows[1:]
    if rows.shape[0] < 2 or rows.shape[1] < 4:
        raise ValueError(f"{path}: need at least 2 rows of time,Z,N,E columns")
    times = rows[:, 0]
    dt = np.diff(times)
    if np.any(dt <= 0) or np.max(np.abs(dt - dt[0])) > 1e-6 * dt[0] + 1e-12:
        raise ValueError(f"{path}: time column must be uniformly increasing")
    return Waveform(
        samples=rows[:, 1:4],
        sampling_rate_hz=1.0 / dt[0],
        station_id=station_id,
        start_time_s=float(times[0]),
    )
