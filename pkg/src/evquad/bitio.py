"""MSB-first bit packing used by the segmentation, event and packet serializers."""

from __future__ import annotations


class BitWriter:
    """Accumulates bits MSB-first into bytes."""

    def __init__(self):
        self._buf = bytearray()
        self._acc = 0
        self._nacc = 0

    def write(self, value: int, nbits: int) -> None:
        if nbits < 0:
            raise ValueError("nbits must be >= 0")
        if nbits and not 0 <= value < (1 << nbits):
            raise ValueError(f"value {value} does not fit in {nbits} bits")
        self._acc = (self._acc << nbits) | value
        self._nacc += nbits
        while self._nacc >= 8:
            self._nacc -= 8
            self._buf.append((self._acc >> self._nacc) & 0xFF)
        self._acc &= (1 << self._nacc) - 1

    def write_bit(self, bit: int) -> None:
        self.write(1 if bit else 0, 1)

    def align_to_byte(self) -> None:
        """Pad with zero bits up to the next byte boundary."""
        if self._nacc:
            self.write(0, 8 - self._nacc)

    @property
    def bit_length(self) -> int:
        return 8 * len(self._buf) + self._nacc

    def getvalue(self) -> bytes:
        """Bytes written so far, zero-padded to a whole byte."""
        out = bytearray(self._buf)
        if self._nacc:
            out.append((self._acc << (8 - self._nacc)) & 0xFF)
        return bytes(out)


class BitstreamError(ValueError):
    """Malformed or truncated bitstream."""


class BitReader:
    """Reads bits MSB-first from bytes; tracks its bit offset for error messages."""

    def __init__(self, data: bytes, bit_offset: int = 0):
        self._data = data
        self._pos = bit_offset

    @property
    def bit_offset(self) -> int:
        return self._pos

    @property
    def bits_remaining(self) -> int:
        return 8 * len(self._data) - self._pos

    def read(self, nbits: int) -> int:
        if nbits > self.bits_remaining:
            raise BitstreamError(
                f"truncated stream: need {nbits} bits at bit offset {self._pos}, "
                f"have {self.bits_remaining}"
            )
        value = 0
        pos = self._pos
        for _ in range(nbits):
            byte = self._data[pos >> 3]
            value = (value << 1) | ((byte >> (7 - (pos & 7))) & 1)
            pos += 1
        self._pos = pos
        return value

    def read_bit(self) -> int:
        return self.read(1)

    def align_to_byte(self) -> None:
        rem = self._pos & 7
        if rem:
            self._pos += 8 - rem
