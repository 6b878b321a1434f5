"""Shared helpers for the binary file formats (PGM, KVOL, KDF1, KDL1)."""

from __future__ import annotations

import os
import tempfile
from contextlib import contextmanager


class FormatError(ValueError):
    """A file does not match its declared on-disk format."""


@contextmanager
def atomic_write(path):
    """Open a temporary file for writing and rename it over ``path`` on success.

    The rename happens only if the block completes; a failure leaves no
    partial output behind.
    """
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".kdlseg-", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as handle:
            yield handle
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def read_exact(handle, count, path, what):
    """Read exactly ``count`` bytes or raise a FormatError naming the file."""
    data = handle.read(count)
    if len(data) != count:
        raise FormatError(f"{path}: truncated file while reading {what}")
    return data


def expect_eof(handle, path):
    if handle.read(1):
        raise FormatError(f"{path}: trailing data after expected end of file")
