"""Objective metrics: chroma similarity over DTW, tempo deviation, and
Fréchet distance between embedding sets.

All functions take plain numpy buffers (mono, 44100 Hz unless stated) and
are pure; file handling lives in audio_io and the CLI.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from scipy.signal.windows import hann

from ._kernels import dtw_backtrack, dtw_fill
from .notes import NoteSequence

CHROMA_WINDOW = 4096
CHROMA_HOP = 2048
DEFAULT_PENALTY_WEIGHT = 1e-3

TEMPO_MIN_BPM = 40.0
TEMPO_MAX_BPM = 220.0
# octave-resolution target band; a sub-70 estimate is doubled when the
# doubled lag scores within 10% of the winning autocorrelation peak
_PREFERRED_LOW = 70.0
_TEMPO_WINDOW = 2048
_TEMPO_HOP = 512

_FREQ_LOW = 27.5
_FREQ_HIGH = 8000.0

EMBEDDING_MAGIC = b"ENEB"
_EMBEDDING_HEADER = struct.Struct("<4sII")  # magic, D, N


class MetricError(RuntimeError):
    """A metric is undefined or not computable for the given inputs."""


# ---------------------------------------------------------------------------
# chroma


@dataclass(frozen=True)
class ChromaMatrix:
    """T x 12 pitch-class energy frames; row 0 of a frame is class C.

    Every frame is either L2-normalized or all-zero (silence).
    """

    frames: np.ndarray
    frame_rate: float

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float64)
        if frames.ndim != 2 or frames.shape[1] != 12:
            raise ValueError(f"frames must be T x 12, got {frames.shape}")
        if frames.shape[0] == 0:
            raise ValueError("chromagram has no frames")
        if np.any(frames < 0.0):
            raise ValueError("chroma energies must be non-negative")
        norms = np.linalg.norm(frames, axis=1)
        bad = ~((norms == 0.0) | (np.abs(norms - 1.0) <= 1e-6))
        if np.any(bad):
            raise ValueError("frames must be unit-norm or all-zero")
        if self.frame_rate <= 0:
            raise ValueError(f"frame_rate must be positive, got {self.frame_rate}")
        object.__setattr__(self, "frames", frames)

    def __len__(self) -> int:
        return self.frames.shape[0]

    @property
    def is_silent(self) -> bool:
        return not self.frames.any()


def _frame_signal(x: np.ndarray, window: int, hop: int) -> np.ndarray:
    if x.shape[0] < window:
        x = np.pad(x, (0, window - x.shape[0]))
    n_frames = 1 + (x.shape[0] - window) // hop
    frames = np.lib.stride_tricks.sliding_window_view(x, window)[:: hop]
    return frames[:n_frames]


def chromagram(audio: np.ndarray, sample_rate: int = 44100) -> ChromaMatrix:
    """Fold STFT bin energies into 12 pitch classes.

    Window 4096, hop 2048, Hann. Bins between 27.5 Hz and 8 kHz are
    assigned to the nearest equal-tempered pitch (A4 = 440 Hz) and their
    energies (squared magnitudes, which keep window leakage out of the
    neighboring semitones) summed by pitch class; frames are then
    L2-normalized (silent frames stay zero).
    """
    x = np.asarray(audio, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"audio must be mono, got shape {x.shape}")
    if x.size == 0:
        raise ValueError("audio buffer is empty")
    frames = _frame_signal(x, CHROMA_WINDOW, CHROMA_HOP)
    spec = np.abs(np.fft.rfft(frames * hann(CHROMA_WINDOW, sym=False), axis=1)) ** 2
    freqs = np.fft.rfftfreq(CHROMA_WINDOW, 1.0 / sample_rate)
    keep = (freqs >= _FREQ_LOW) & (freqs <= _FREQ_HIGH)
    pitch = np.round(69.0 + 12.0 * np.log2(freqs[keep] / 440.0)).astype(np.int64)
    pitch_class = pitch % 12
    spec = spec[:, keep]
    chroma = np.zeros((spec.shape[0], 12), dtype=np.float64)
    for klass in range(12):
        chroma[:, klass] = spec[:, pitch_class == klass].sum(axis=1)
    norms = np.linalg.norm(chroma, axis=1)
    sounding = norms > 0.0
    chroma[sounding] /= norms[sounding, None]
    return ChromaMatrix(chroma, sample_rate / CHROMA_HOP)


def _silence_mask(frames: np.ndarray) -> np.ndarray:
    return ~frames.any(axis=1)


def _cosine_distance_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # frames are unit-norm or zero, so the dot product is the cosine;
    # convention: silence matches silence (distance 0) and maximally
    # mismatches sound (distance 1)
    dist = 1.0 - a @ b.T
    # rounded dot products of unit vectors can stray past 1, and the
    # accumulated cost must stay non-negative
    np.clip(dist, 0.0, 2.0, out=dist)
    za = _silence_mask(a)
    zb = _silence_mask(b)
    dist[np.ix_(za, zb)] = 0.0
    dist[np.ix_(za, ~zb)] = 1.0
    dist[np.ix_(~za, zb)] = 1.0
    return dist


def _banded(cost: np.ndarray, band: int) -> np.ndarray:
    if band < 0:
        raise ValueError(f"band must be non-negative, got {band}")
    n, m = cost.shape
    rows = np.arange(n, dtype=np.float64)
    center = rows * (m - 1) / (n - 1) if n > 1 else np.zeros(n)
    cols = np.arange(m, dtype=np.float64)
    outside = np.abs(cols[None, :] - center[:, None]) > band
    cost = cost.copy()
    cost[outside] = np.inf
    return cost


def dtw_from_costs(
    cost: np.ndarray, band: int | None = None
) -> tuple[float, list[tuple[int, int]]]:
    """Minimal accumulated cost and path over a pairwise cost matrix.

    Classic DTW with step set {(1,0), (0,1), (1,1)}; backtracking breaks
    ties toward the diagonal, then (1,0), then (0,1). ``band`` is an
    optional Sakoe-Chiba radius in frames around the stretched diagonal.
    """
    cost = np.ascontiguousarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.shape[0] == 0 or cost.shape[1] == 0:
        raise ValueError(f"cost must be a non-empty 2-D matrix, got {cost.shape}")
    if band is not None:
        cost = _banded(cost, band)
    acc = dtw_fill(cost)
    total = float(acc[-1, -1])
    if not np.isfinite(total):
        raise MetricError(
            f"no monotone path through the cost matrix (band {band} too narrow?)"
        )
    path = dtw_backtrack(acc)
    return total, [(int(i), int(j)) for i, j in path]


def dtw_align(
    a: ChromaMatrix, b: ChromaMatrix, band: int | None = None
) -> tuple[float, list[tuple[int, int]]]:
    """Align two chromagrams; returns (accumulated cosine distance, path)."""
    return dtw_from_costs(_cosine_distance_matrix(a.frames, b.frames), band=band)


@dataclass(frozen=True)
class ChromaSimilarityResult:
    mean_cosine: float
    dtw_cost: float
    penalty_weight: float
    score: float
    path: list[tuple[int, int]]


def chroma_similarity(
    out_audio: np.ndarray,
    ref_audio: np.ndarray,
    penalty_weight: float = DEFAULT_PENALTY_WEIGHT,
    sample_rate: int = 44100,
    band: int | None = None,
) -> ChromaSimilarityResult:
    """Mean cosine similarity along the DTW path, minus a cost penalty.

    score = mean_cosine - penalty_weight * dtw_cost. Raises MetricError
    when either input is entirely silent (similarity undefined).
    """
    ca = chromagram(out_audio, sample_rate)
    cb = chromagram(ref_audio, sample_rate)
    if ca.is_silent or cb.is_silent:
        raise MetricError("chroma similarity undefined for all-silent audio")
    dist = _cosine_distance_matrix(ca.frames, cb.frames)
    cost, path = dtw_from_costs(dist, band=band)
    idx = np.asarray(path)
    mean_cosine = float(np.mean(1.0 - dist[idx[:, 0], idx[:, 1]]))
    return ChromaSimilarityResult(
        mean_cosine=mean_cosine,
        dtw_cost=cost,
        penalty_weight=penalty_weight,
        score=mean_cosine - penalty_weight * cost,
        path=path,
    )


# ---------------------------------------------------------------------------
# tempo


def _onset_envelope(x: np.ndarray, sample_rate: int) -> tuple[np.ndarray, float]:
    frames = _frame_signal(x, _TEMPO_WINDOW, _TEMPO_HOP)
    spec = np.abs(np.fft.rfft(frames * hann(_TEMPO_WINDOW, sym=False), axis=1))
    flux = np.maximum(spec[1:] - spec[:-1], 0.0).sum(axis=1)
    return flux, sample_rate / _TEMPO_HOP


def _autocorrelate(x: np.ndarray) -> np.ndarray:
    n = x.shape[0]
    size = 2 ** int(np.ceil(np.log2(2 * n)))  # pad against circular wrap
    spec = np.fft.rfft(x, size)
    return np.fft.irfft((spec * np.conj(spec)).real)[:n]


def _parabolic_lag(acf: np.ndarray, lag: int) -> float:
    if lag <= 0 or lag >= acf.shape[0] - 1:
        return float(lag)
    y0, y1, y2 = acf[lag - 1], acf[lag], acf[lag + 1]
    denom = y0 - 2.0 * y1 + y2
    if denom >= 0.0:  # not a proper maximum; keep the integer lag
        return float(lag)
    delta = 0.5 * (y0 - y2) / denom
    return lag + float(np.clip(delta, -0.5, 0.5))


def tempo_estimate(audio: np.ndarray, sample_rate: int = 44100) -> float:
    """Tempo in BPM from spectral-flux autocorrelation.

    The onset envelope is the half-wave-rectified frame-to-frame spectral
    flux; its autocorrelation is scanned for the strongest lag in the
    40-220 BPM band, refined by parabolic interpolation. A winner below
    70 BPM may be a subharmonic (the lag at 2x or 3x the true period can
    align better with the frame grid), so small integer divisors of its
    lag are tried and the fastest one scoring within 10% of the peak wins.
    """
    x = np.asarray(audio, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"audio must be mono, got shape {x.shape}")
    if x.shape[0] < 5 * sample_rate:
        raise ValueError("tempo estimation needs at least 5 s of audio")
    flux, fps = _onset_envelope(x, sample_rate)
    flux = flux - flux.mean()
    if not np.any(flux):
        raise MetricError("no detectable periodicity: flat onset envelope")
    acf = _autocorrelate(flux)
    lag_min = max(1, int(np.floor(fps * 60.0 / TEMPO_MAX_BPM)))
    lag_max = min(acf.shape[0] - 2, int(np.ceil(fps * 60.0 / TEMPO_MIN_BPM)))
    if lag_min > lag_max:
        raise MetricError("envelope too short for the tempo search band")
    band = acf[lag_min : lag_max + 1]
    peak_lag = lag_min + int(np.argmax(band))
    peak_val = acf[peak_lag]
    if peak_val <= 0.0:
        raise MetricError("no detectable periodicity: flat onset envelope")
    best = _parabolic_lag(acf, peak_lag)
    bpm = 60.0 * fps / best
    if bpm < _PREFERRED_LOW:
        chosen = None
        for divisor in (2, 3, 4):
            center = int(round(best / divisor))
            # one frame of slack either side of the divided lag
            cands = [k for k in (center - 1, center, center + 1) if lag_min <= k <= lag_max]
            if not cands:
                continue
            cand = max(cands, key=lambda k: acf[k])
            if acf[cand] >= 0.9 * peak_val and (chosen is None or cand < chosen):
                chosen = cand
        if chosen is not None:
            bpm = 60.0 * fps / _parabolic_lag(acf, chosen)
    return float(bpm)


def deviation_from_expected(
    estimated_bpm: float, score_bpm: float, prompt_ratio: float
) -> float:
    """|estimated - expected| / expected with expected = score / ratio."""
    if not 0.4 <= prompt_ratio <= 2.2:
        raise ValueError(f"prompt_ratio {prompt_ratio} outside [0.4, 2.2]")
    if score_bpm <= 0:
        raise ValueError(f"score_bpm must be positive, got {score_bpm}")
    expected = score_bpm / prompt_ratio
    return abs(estimated_bpm - expected) / expected


def tempo_deviation(
    out_audio: np.ndarray,
    score: NoteSequence,
    prompt_ratio: float,
    sample_rate: int = 44100,
) -> float:
    """Relative tempo error of audio against the prompt-adjusted score."""
    if score.reference_bpm is None:
        raise MetricError(f"score {score.source_id!r} carries no tempo reference")
    estimated = tempo_estimate(out_audio, sample_rate)
    return deviation_from_expected(estimated, score.reference_bpm, prompt_ratio)


# ---------------------------------------------------------------------------
# Fréchet distance on embedding sets


@dataclass(frozen=True)
class EmbeddingSet:
    vectors: np.ndarray
    label: str = ""

    def __post_init__(self):
        vectors = np.asarray(self.vectors, dtype=np.float64)
        if vectors.ndim != 2 or vectors.shape[1] == 0:
            raise ValueError(f"vectors must be N x D, got shape {vectors.shape}")
        if vectors.shape[0] < 2:
            raise ValueError("need N >= 2 vectors to fit a covariance")
        if not np.all(np.isfinite(vectors)):
            raise ValueError("embedding vectors must be finite")
        object.__setattr__(self, "vectors", vectors)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


def frechet_distance(a: EmbeddingSet, b: EmbeddingSet) -> float:
    """Fréchet distance between Gaussians fitted to two embedding sets.

    ||mu_a - mu_b||^2 + tr(S_a + S_b - 2 (S_a S_b)^{1/2}), the matrix
    square root taken via eigendecomposition of S_a^{1/2} S_b S_a^{1/2}
    (symmetric, same spectrum as S_a S_b). Eigenvalues below -1e-8 are a
    numerical failure; small negatives are clipped to zero.
    """
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: {a.dim} vs {b.dim}")
    mu_a = a.vectors.mean(axis=0)
    mu_b = b.vectors.mean(axis=0)
    cov_a = np.atleast_2d(np.cov(a.vectors, rowvar=False))
    cov_b = np.atleast_2d(np.cov(b.vectors, rowvar=False))
    ew_a, ev_a = np.linalg.eigh(cov_a)
    if ew_a.min() < -1e-8:
        raise MetricError(f"covariance of {a.label!r} is not positive semidefinite")
    sqrt_a = (ev_a * np.sqrt(np.clip(ew_a, 0.0, None))) @ ev_a.T
    inner = sqrt_a @ cov_b @ sqrt_a
    inner = (inner + inner.T) / 2.0
    ew = np.linalg.eigvalsh(inner)
    if ew.min() < -1e-8:
        raise MetricError("covariance product has a significantly negative eigenvalue")
    trace_sqrt = float(np.sqrt(np.clip(ew, 0.0, None)).sum())
    diff = mu_a - mu_b
    dist = float(diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2.0 * trace_sqrt)
    if dist < -1e-6:
        raise MetricError(f"negative distance {dist}: numerical failure")
    return max(dist, 0.0)


def write_embeddings(path, embeddings: EmbeddingSet) -> None:
    """Serialize an embedding set: header (magic, D, N), then row-major f32."""
    n, d = embeddings.vectors.shape
    payload = _EMBEDDING_HEADER.pack(EMBEDDING_MAGIC, d, n)
    payload += np.ascontiguousarray(embeddings.vectors, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(payload)


def read_embeddings(path, label: str = "") -> EmbeddingSet:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _EMBEDDING_HEADER.size:
        raise ValueError(f"{path}: truncated embedding header")
    magic, d, n = _EMBEDDING_HEADER.unpack_from(blob)
    if magic != EMBEDDING_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    body = blob[_EMBEDDING_HEADER.size :]
    if len(body) != 4 * n * d:
        raise ValueError(f"{path}: expected {4 * n * d} body bytes, got {len(body)}")
    vectors = np.frombuffer(body, dtype="<f4").reshape(n, d).astype(np.float64)
    return EmbeddingSet(vectors, label=label or str(path))
