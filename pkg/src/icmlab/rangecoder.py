"""Byte-oriented range coder with 16-bit probability resolution.

This is the classic carry-less low/range variant: 32-bit state, bytes
released whenever the top byte of low and low+range agree, and a small
slice of range sacrificed when the interval straddles a byte boundary.
Frequencies are given as integer cumulative tables whose total must not
exceed 2^16. Coded streams decode exactly; overhead over the model
cross-entropy is a few bytes of flush plus rare normalization waste.
"""

from __future__ import annotations

import numpy as np

from .errors import BitstreamError, ContractError

PROB_BITS = 16
PROB_TOTAL = 1 << PROB_BITS

_MASK = 0xFFFFFFFF
_TOP = 1 << 24
_BOTTOM = 1 << 16


class RangeEncoder:
    def __init__(self):
        self.low = 0
        self.range = _MASK
        self._out = bytearray()

    def encode(self, cum_lo: int, cum_hi: int, total: int) -> None:
        """Narrow the interval to [cum_lo, cum_hi) out of total."""
        if not 0 <= cum_lo < cum_hi <= total <= _BOTTOM:
            raise ContractError(
                f"bad cumulative interval ({cum_lo}, {cum_hi}, {total})")
        r = self.range // total
        self.low += cum_lo * r
        self.range = (cum_hi - cum_lo) * r
        self._normalize()

    def _normalize(self) -> None:
        while True:
            if (self.low ^ (self.low + self.range)) < _TOP:
                pass  # top byte settled, release it below
            elif self.range < _BOTTOM:
                # interval straddles a byte boundary: clip range down to it
                self.range = (-self.low) & (_BOTTOM - 1)
            else:
                return
            self._out.append((self.low >> 24) & 0xFF)
            self.low = (self.low << 8) & _MASK
            self.range = self.range << 8

    def finish(self) -> bytes:
        for _ in range(4):
            self._out.append((self.low >> 24) & 0xFF)
            self.low = (self.low << 8) & _MASK
        return bytes(self._out)


class RangeDecoder:
    def __init__(self, data: bytes):
        self._data = data
        self._pos = 0
        self.low = 0
        self.range = _MASK
        self.code = 0
        for _ in range(4):
            self.code = ((self.code << 8) | self._next_byte()) & _MASK

    def _next_byte(self) -> int:
        if self._pos >= len(self._data):
            raise BitstreamError(
                f"range decoder ran past the end of a {len(self._data)}-byte payload")
        b = self._data[self._pos]
        self._pos += 1
        return b

    def decode(self, cdf: np.ndarray, total: int) -> int:
        """Pick the symbol whose cumulative slot contains the code point.

        ``cdf`` is a non-decreasing int array of length n_symbols + 1 with
        cdf[0] == 0 and cdf[-1] == total.
        """
        if total > _BOTTOM:
            raise ContractError(f"total frequency {total} exceeds {_BOTTOM}")
        r = self.range // total
        target = (self.code - self.low) // r
        if target >= total:
            target = total - 1
        sym = int(np.searchsorted(cdf, target, side="right")) - 1
        cum_lo = int(cdf[sym])
        cum_hi = int(cdf[sym + 1])
        self.low += cum_lo * r
        self.range = (cum_hi - cum_lo) * r
        self._normalize()
        return sym

    def _normalize(self) -> None:
        while True:
            if (self.low ^ (self.low + self.range)) < _TOP:
                pass
            elif self.range < _BOTTOM:
                self.range = (-self.low) & (_BOTTOM - 1)
            else:
                return
            self.code = ((self.code << 8) | self._next_byte()) & _MASK
            self.low = (self.low << 8) & _MASK
            self.range = self.range << 8


def quantize_pmf(pmf: np.ndarray, total: int = PROB_TOTAL) -> np.ndarray:
    """Turn a probability vector into integer frequencies summing to total.

    Every symbol gets frequency >= 1 so anything stays codable; leftover
    counts go to the largest fractional remainders (stable tie-break by
    index, so tables are platform-independent).
    """
    pmf = np.asarray(pmf, dtype=np.float64)
    n = pmf.size
    if n == 0 or n > total:
        raise ContractError(f"cannot quantize {n} symbols into total {total}")
    if (pmf < 0).any():
        raise ContractError("pmf entries must be non-negative")
    mass = pmf.sum()
    if mass <= 0 or not np.isfinite(mass):
        raise ContractError("pmf must have positive finite mass")
    scaled = pmf / mass * (total - n)
    base = np.floor(scaled).astype(np.int64)
    freq = base + 1
    remainder = total - int(freq.sum())
    if remainder > 0:
        order = np.argsort(-(scaled - base), kind="stable")
        freq[order[:remainder]] += 1
    return freq


def cdf_from_freq(freq: np.ndarray) -> np.ndarray:
    cdf = np.zeros(freq.size + 1, dtype=np.int64)
    np.cumsum(freq, out=cdf[1:])
    return cdf


def encode_symbols(symbols: np.ndarray, cdf: np.ndarray, total: int = PROB_TOTAL) -> bytes:
    enc = RangeEncoder()
    for s in np.asarray(symbols).ravel():
        enc.encode(int(cdf[s]), int(cdf[s + 1]), total)
    return enc.finish()


def decode_symbols(payload: bytes, count: int, cdf: np.ndarray,
                   total: int = PROB_TOTAL) -> np.ndarray:
    dec = RangeDecoder(payload)
    out = np.empty(count, dtype=np.int64)
    for i in range(count):
        try:
            out[i] = dec.decode(cdf, total)
        except BitstreamError as exc:
            raise BitstreamError(f"payload truncated at symbol {i} of {count}: {exc}") from None
    return out
