"""Columnar text tables and run manifests.

Every table starts with ``#`` header lines: ``# key: value`` metadata (always
including the configuration hash) followed by ``# columns: name name ...``.
Rows are whitespace separated and written with ``repr``-exact precision, so
identical inputs give byte-identical files.
"""

import json
import platform
from pathlib import Path

import numpy as np

FORMAT = "%.17g"


def write_table(path, columns, header=None):
    """Write named equal-length columns to ``path``.

    Parameters
    ----------
    columns : dict of str -> array_like
    header : dict, optional
        Metadata lines; ``config_hash`` should be among them.

    Returns
    -------
    Path
    """
    path = Path(path)
    names = list(columns)
    data = np.column_stack([np.asarray(columns[k], dtype=float) for k in names])
    lines = [f"{k}: {v}" for k, v in (header or {}).items()]
    lines.append("columns: " + " ".join(names))
    np.savetxt(path, data, fmt=FORMAT, header="\n".join(lines), comments="# ")
    return path


def read_table(path):
    """Read a table written by :func:`write_table`.

    Returns
    -------
    header : dict of str -> str
    columns : dict of str -> ndarray
    """
    header, names = {}, []
    with open(path) as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            key, _, value = line[1:].strip().partition(": ")
            if key == "columns":
                names = value.split()
            else:
                header[key] = value
    data = np.loadtxt(path, ndmin=2)
    return header, {name: data[:, i] for i, name in enumerate(names)}


def monomial_name(key):
    """Column label for a monomial key, e.g. ``dx1_dp0_x0_p1``."""
    i, j, k, l = key
    return f"dx{i}_dp{j}_x{k}_p{l}"


def versions():
    """Versions of the interpreter and numerical libraries."""
    import matplotlib
    import mpmath
    import scipy

    from . import __version__

    return {
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "mpmath": mpmath.__version__,
        "matplotlib": matplotlib.__version__,
        "strongqbm": __version__,
    }


def write_manifest(path, payload):
    """Write ``payload`` as sorted, indented JSON."""
    path = Path(path)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=_jsonable) + "\n")
    return path


def _jsonable(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")
