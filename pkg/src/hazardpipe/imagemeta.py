"""Image container handling: format sniffing, EXIF geotag extraction, and
lossless metadata stripping.

Stripping works at the container level (JPEG segments / PNG chunks) so the
compressed pixel data passes through byte-for-byte; re-encoding would alter
pixels and break dedup hashing.
"""
from __future__ import annotations

import io
import struct
from typing import Optional

from PIL import Image, UnidentifiedImageError

from .core import GeoPoint, HazardPipeError

JPEG_MAGIC = b"\xff\xd8\xff"
PNG_MAGIC = b"\x89PNG\r\n\x1a\n"

GPS_IFD_TAG = 0x8825
ORIENTATION_TAG = 0x0112

# PNG ancillary chunks that carry text/metadata rather than pixels.
PNG_METADATA_CHUNKS = {b"tEXt", b"zTXt", b"iTXt", b"eXIf", b"tIME"}

# JPEG APP segments to keep: APP0 (JFIF) and APP14 (Adobe) influence how
# decoders interpret the stream; everything else is metadata.
JPEG_KEEP_MARKERS = {0xE0, 0xEE}


class MalformedImage(HazardPipeError):
    """The payload is not a decodable JPEG or PNG."""


def sniff_format(data: bytes) -> Optional[str]:
    if data.startswith(JPEG_MAGIC):
        return "jpeg"
    if data.startswith(PNG_MAGIC):
        return "png"
    return None


def _open_image(data: bytes) -> Image.Image:
    try:
        img = Image.open(io.BytesIO(data))
        img.load()
        return img
    except (UnidentifiedImageError, OSError, SyntaxError) as err:
        raise MalformedImage(str(err)) from err


def _dms_to_degrees(dms, ref: str) -> float:
    degrees = float(dms[0]) + float(dms[1]) / 60.0 + float(dms[2]) / 3600.0
    if ref in ("S", "W"):
        degrees = -degrees
    return degrees


def extract_geotag(data: bytes) -> Optional[GeoPoint]:
    """Decimal-degree GPS position from JPEG EXIF; None when absent.

    PNG never yields a geotag here, by contract.
    """
    fmt = sniff_format(data)
    if fmt is None:
        raise MalformedImage("unsupported container")
    if fmt == "png":
        _open_image(data)  # still reject corrupt files
        return None
    img = _open_image(data)
    gps = img.getexif().get_ifd(GPS_IFD_TAG)
    if not gps or 2 not in gps or 4 not in gps:
        return None
    try:
        lat = _dms_to_degrees(gps[2], gps.get(1, "N"))
        lon = _dms_to_degrees(gps[4], gps.get(3, "E"))
        return GeoPoint(lat, lon)
    except (ValueError, TypeError, IndexError, ZeroDivisionError) as err:
        raise MalformedImage(f"corrupt GPS directory: {err}") from err


def _orientation_app1(orientation: int) -> bytes:
    """Minimal EXIF APP1 segment holding only the orientation tag."""
    tiff = struct.pack(
        "<2sHI",  # little-endian TIFF header
        b"II",
        42,
        8,
    )
    ifd = struct.pack(
        "<H" + "HHI4s" + "I",
        1,  # one entry
        ORIENTATION_TAG,
        3,  # SHORT
        1,
        struct.pack("<HH", orientation, 0),
        0,  # no next IFD
    )
    body = b"Exif\x00\x00" + tiff + ifd
    return b"\xff\xe1" + struct.pack(">H", len(body) + 2) + body


def _strip_jpeg(data: bytes) -> bytes:
    """Drop metadata segments, keeping entropy-coded data untouched."""
    img = _open_image(data)
    orientation = img.getexif().get(ORIENTATION_TAG, 1)

    kept: list[bytes] = []
    pos = 2  # skip SOI
    length = len(data)
    tail = b""
    while pos < length:
        if data[pos] != 0xFF:
            raise MalformedImage(f"broken segment structure at offset {pos}")
        marker = data[pos + 1]
        if marker in (0xD9, 0xDA):  # EOI, or SOS with entropy data to the end
            tail = data[pos:]
            break
        seg_len = struct.unpack(">H", data[pos + 2 : pos + 4])[0]
        segment = data[pos : pos + 2 + seg_len]
        is_metadata = (
            0xE1 <= marker <= 0xEF and marker not in JPEG_KEEP_MARKERS
        ) or marker == 0xFE
        if not is_metadata:
            kept.append(segment)
        pos += 2 + seg_len

    out = bytearray(b"\xff\xd8")
    # Orientation-only EXIF goes right after an APP0 header when one exists.
    insert_at = 1 if kept and kept[0][1] == 0xE0 else 0
    if orientation != 1:
        kept.insert(insert_at, _orientation_app1(orientation))
    for segment in kept:
        out += segment
    out += tail
    return bytes(out)


def _strip_png(data: bytes) -> bytes:
    out = bytearray(PNG_MAGIC)
    pos = len(PNG_MAGIC)
    length = len(data)
    while pos < length:
        if pos + 8 > length:
            raise MalformedImage("truncated PNG chunk header")
        (chunk_len,) = struct.unpack(">I", data[pos : pos + 4])
        chunk_type = data[pos + 4 : pos + 8]
        end = pos + 12 + chunk_len
        if end > length:
            raise MalformedImage("truncated PNG chunk body")
        if chunk_type not in PNG_METADATA_CHUNKS:
            out += data[pos:end]
        pos = end
        if chunk_type == b"IEND":
            break
    return bytes(out)


def anonymize(data: bytes) -> bytes:
    """Remove identifying metadata without touching pixel data.

    JPEG keeps at most an orientation-only EXIF block; PNG loses its textual
    chunks. Decoding the result yields byte-identical pixels.
    """
    fmt = sniff_format(data)
    if fmt == "jpeg":
        stripped = _strip_jpeg(data)
    elif fmt == "png":
        stripped = _strip_png(data)
    else:
        raise MalformedImage("unsupported container")
    _open_image(stripped)  # the strip must never corrupt the image
    return stripped


def decode_pixels(data: bytes):
    """Decoded RGB pixel array, for equality checks and overlay rendering."""
    import numpy as np

    return np.asarray(_open_image(data).convert("RGB"))


def image_size(data: bytes) -> tuple[int, int]:
    img = _open_image(data)
    return img.width, img.height
