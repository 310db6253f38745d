"""Atomic file output: write to a sibling temp file, fsync, then rename."""

from __future__ import annotations

import io
import os
import tempfile
from contextlib import contextmanager
from pathlib import Path


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


@contextmanager
def atomic_text(path):
    """Yield a text buffer whose contents replace ``path`` on clean exit."""
    buf = io.StringIO(newline="")
    yield buf
    atomic_write_bytes(path, buf.getvalue().encode("utf-8"))
