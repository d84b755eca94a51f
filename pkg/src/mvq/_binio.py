"""Small helpers shared by the binary file formats (all little-endian)."""

import struct


class FormatError(ValueError):
    """A binary file does not match its declared layout."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


def read_header(buf, magic, nfields, what):
    """Check ``magic`` and unpack ``nfields`` u32 values after it.

    Returns the tuple of fields and the offset of the first payload byte.
    """
    if len(buf) < len(magic):
        raise FormatError(f"{what}: file shorter than magic bytes", 0)
    if buf[:len(magic)] != magic:
        raise FormatError(
            f"{what}: bad magic {bytes(buf[:len(magic)])!r}, expected {magic!r}", 0
        )
    end = len(magic) + 4 * nfields
    if len(buf) < end:
        raise FormatError(
            f"{what}: header truncated, need {end} bytes, have {len(buf)}", len(buf)
        )
    fields = struct.unpack(f"<{nfields}I", buf[len(magic):end])
    return fields, end


def pack_header(magic, *fields):
    return magic + struct.pack(f"<{len(fields)}I", *fields)


def check_payload(buf, offset, expected, what):
    actual = len(buf) - offset
    if actual < expected:
        raise FormatError(
            f"{what}: payload truncated, expected {expected} bytes, got {actual}",
            len(buf),
        )
    if actual > expected:
        raise FormatError(
            f"{what}: {actual - expected} trailing bytes after payload of {expected}",
            offset + expected,
        )
