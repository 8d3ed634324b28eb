"""Reading, writing and replaying .lgtr logit traces.

Layout, all little-endian with no padding:

    magic            4 bytes   b'LGTR'
    version          uint32    1
    vocab            uint32    V
    frames           uint32    T
    sites_per_frame  uint32    m
    dtype            uint8     0 = float32

followed by T * m logit vectors of V float32 values, frame-major then
site-major.
"""
from collections import namedtuple
from dataclasses import dataclass
import io
import logging
from pathlib import Path
import struct

import numpy as np

from .diagnostics import (EntropyGrid, report_from_grids, check_threshold,
                          DEFAULT_LOW_ENTROPY_THRESHOLD)
from .distributions import LogitVector, softmax
from .errors import (BadMagic, UnsupportedVersion, TruncatedPayload, SinkFailure,
                     InvalidHeader, NonFiniteLogit, DimensionMismatch)
from .rng import RngState
from .samplers import sample

logger = logging.getLogger(__name__)

MAGIC = b'LGTR'
VERSION = 1
DTYPE_F32 = 0
HEADER = struct.Struct('<4sIIIIB')
PAYLOAD_DTYPE = np.dtype('<f4')

# Logit written for tokens the model gives zero probability.
LOGIT_FLOOR = -60.0


@dataclass(frozen=True)
class TraceHeader:
    vocab: int
    frames: int
    sites_per_frame: int
    version: int = VERSION
    dtype: int = DTYPE_F32
    magic: bytes = MAGIC

    def validate(self):
        if self.magic != MAGIC:
            raise BadMagic(f'Not a logit trace: magic is {self.magic!r}, expected {MAGIC!r}.')
        if self.version != VERSION:
            raise UnsupportedVersion(f'Trace version {self.version} is not supported.')
        if self.dtype != DTYPE_F32:
            raise UnsupportedVersion(f'Trace payload type {self.dtype} is not supported.')
        if self.vocab < 2 or self.frames < 1 or self.sites_per_frame < 1:
            raise InvalidHeader(
                f'Bad trace dimensions V={self.vocab}, T={self.frames}, m={self.sites_per_frame}.')

    @property
    def payload_size(self):
        return self.frames * self.sites_per_frame * self.vocab * PAYLOAD_DTYPE.itemsize

    def pack(self):
        return HEADER.pack(self.magic, self.version, self.vocab, self.frames,
                           self.sites_per_frame, self.dtype)

    @classmethod
    def unpack(cls, buf):
        magic, version, vocab, frames, m, dtype = HEADER.unpack(buf)
        return cls(vocab, frames, m, version, dtype, magic)


class LogitTrace:
    """A recorded sequence of logit vectors, held as a read-only float32
    array of shape (T, m, V).
    """

    def __init__(self, header, array):
        header.validate()
        arr = np.array(array, dtype=PAYLOAD_DTYPE, copy=True)
        shape = (header.frames, header.sites_per_frame, header.vocab)
        if arr.shape != shape:
            raise DimensionMismatch(f'Payload shape {arr.shape} does not match header {shape}.')
        if not np.all(np.isfinite(arr)):
            raise NonFiniteLogit('Trace payload contains NaN or infinite logits.')
        arr.setflags(write=False)
        self.header = header
        self.array = arr

    @classmethod
    def from_array(cls, array):
        """Trace of a (T, m, V) array of logits.
        """
        arr = np.asarray(array)
        if arr.ndim != 3:
            raise DimensionMismatch(f'Expected a (T, m, V) array, got shape {arr.shape}.')
        T, m, V = arr.shape
        return cls(TraceHeader(V, T, m), arr)

    @classmethod
    def from_probs(cls, probs):
        """Trace of a (T, m, V) array of probabilities.  Zero probabilities
        become LOGIT_FLOOR.
        """
        probs = np.asarray(probs, dtype=np.float64)
        with np.errstate(divide='ignore'):
            logits = np.log(probs)
        return cls.from_array(np.maximum(logits, LOGIT_FLOOR))

    @property
    def V(self):
        return self.header.vocab

    @property
    def T(self):
        return self.header.frames

    @property
    def m(self):
        return self.header.sites_per_frame

    def logits(self, frame, site):
        if not (0 <= frame < self.T and 0 <= site < self.m):
            raise DimensionMismatch(f'No logits at frame {frame}, site {site}.')
        return LogitVector(self.array[frame, site])

    def distributions(self, frame, temperature=1.0):
        """Softmax of every site's logits in 'frame'.
        """
        return [softmax(self.logits(frame, i), temperature) for i in range(self.m)]

    def to_bytes(self):
        return self.header.pack() + self.array.astype(PAYLOAD_DTYPE, copy=False).tobytes()

    def __eq__(self, other):
        if not isinstance(other, LogitTrace):
            return NotImplemented
        return self.header == other.header and self.array.tobytes() == other.array.tobytes()

    def __repr__(self):
        return f'LogitTrace(V={self.V}, T={self.T}, m={self.m})'


def write_trace(trace, sink):
    """Writes 'trace' to 'sink', a path or a binary stream.
    """
    if not np.all(np.isfinite(trace.array)):
        raise NonFiniteLogit('Refusing to write a trace with NaN or infinite logits.')
    data = trace.to_bytes()
    try:
        if isinstance(sink, (str, Path)):
            Path(sink).write_bytes(data)
            logger.info('Wrote trace %s (%d bytes)', sink, len(data))
        else:
            sink.write(data)
    except OSError as e:
        raise SinkFailure(f'Could not write trace: {e}') from e

def read_trace(source):
    """Reads a trace from a path, a bytes object or a binary stream.  The
    result is fully validated.
    """
    if isinstance(source, (str, Path)):
        with open(source, 'rb') as f:
            return _read_stream(f)
    if isinstance(source, (bytes, bytearray, memoryview)):
        return _read_stream(io.BytesIO(bytes(source)))
    return _read_stream(source)

def _read_stream(f):
    buf = f.read(HEADER.size)
    if len(buf) < HEADER.size:
        # a short read that cannot even hold the magic is not a trace at all
        if len(buf) < len(MAGIC) or buf[:len(MAGIC)] != MAGIC:
            raise BadMagic('Not a logit trace.')
        raise TruncatedPayload(f'Trace header is {len(buf)} bytes, expected {HEADER.size}.')
    header = TraceHeader.unpack(buf)
    header.validate()

    payload = f.read(header.payload_size)
    if len(payload) < header.payload_size:
        raise TruncatedPayload(
            f'Trace payload is {len(payload)} bytes, expected {header.payload_size}.')
    if f.read(1):
        raise InvalidHeader('Trace has data beyond the declared payload.')

    arr = np.frombuffer(payload, dtype=PAYLOAD_DTYPE)
    if not np.all(np.isfinite(arr)):
        raise NonFiniteLogit('Trace payload contains NaN or infinite logits.')
    arr = arr.reshape(header.frames, header.sites_per_frame, header.vocab)
    return LogitTrace(header, arr)

# --------------------------------------------------------------------------

ReplayResult = namedtuple('ReplayResult', ('tokens', 'report', 'diagnostics'))

def replay(trace, sampler, temperature=1.0, seed=0,
           collapse_threshold=DEFAULT_LOW_ENTROPY_THRESHOLD):
    """Decodes every (frame, site) of 'trace' with 'sampler'.  Site (t, i) uses
    softmax at 'temperature' and the (seed, t, i) random substream, so tokens
    match a rollout over the same distributions.  Returns a ReplayResult of
    tokens (T, m), a CollapseReport and per-site SampleDiagnostics.
    """
    check_threshold(collapse_threshold)
    tokens = np.empty((trace.T, trace.m), dtype=np.int64)
    diagnostics = []
    grids = []
    top1 = []
    for t in range(trace.T):
        dists = trace.distributions(t, temperature)
        frame_diag = []
        for i, dist in enumerate(dists):
            tokens[t, i], diag, _ = sample(sampler, dist, RngState.for_site(seed, t, i))
            frame_diag.append(diag)
        diagnostics.append(frame_diag)
        grids.append(EntropyGrid(t, 1, trace.m, [d.normalized_entropy for d in frame_diag]))
        top1.append(float(np.mean([d.probs.max() for d in dists])))
        logger.debug('replayed frame %d', t)

    report = report_from_grids(grids, top1, collapse_threshold)
    logger.info('Replayed %d frames x %d sites with %s', trace.T, trace.m, sampler.label())
    return ReplayResult(tokens, report, diagnostics)
