"""Run output plumbing: atomic writes, content hashes, run manifests.

Every CLI run leaves a ``manifest.json`` next to its outputs recording the
exact flags, seeds, library versions, and SHA-256 hashes of all inputs and
outputs, so a run can be re-executed and checked byte for byte.  Output
files are written through a temp file plus rename, never in place.
"""

from __future__ import annotations

import hashlib
import json
import os
import sys
import tempfile
from datetime import datetime, timezone
from pathlib import Path


def worker_count(env: str = "SEGLENS_THREADS") -> int:
    """Worker cap from the environment; defaults to single-threaded."""
    raw = os.environ.get(env, "")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_manifest(out_dir, subcommand: str, argv, input_paths, output_names,
                   seed=None, extra=None) -> Path:
    """Record a run: flags, versions, seed, and hashes of inputs/outputs.

    ``output_names`` are paths relative to ``out_dir`` that must already
    exist.  Re-running the recorded argv must reproduce the same output
    hashes; only the timestamp is allowed to differ.
    """
    import numpy

    from . import __version__

    out_dir = Path(out_dir)
    manifest = {
        "tool": "seglens",
        "version": __version__,
        "python": sys.version.split()[0],
        "numpy": numpy.__version__,
        "subcommand": subcommand,
        "argv": list(argv),
        "seed": seed,
        "inputs": {str(p): sha256_file(p) for p in sorted(str(x) for x in input_paths)},
        "outputs": {name: sha256_file(out_dir / name) for name in sorted(output_names)},
        "created": datetime.now(timezone.utc).isoformat(),
    }
    if extra:
        manifest["extra"] = extra
    path = out_dir / "manifest.json"
    atomic_write_text(path, json.dumps(manifest, indent=1) + "\n")
    return path
