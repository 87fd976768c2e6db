"""Minimal PLY reader/writer (ASCII and binary little-endian, scalar properties)."""

from __future__ import annotations

from pathlib import Path

import numpy as np

_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}
_NAMES = {"i1": "char", "u1": "uchar", "i2": "short", "u2": "ushort",
          "i4": "int", "u4": "uint", "f4": "float", "f8": "double"}


class PlyError(ValueError):
    """Raised for malformed or unsupported PLY files."""


def _parse_header(fh):
    elements = []
    fmt = None
    lineno = 0
    first = fh.readline()
    lineno += 1
    if first.strip() != b"ply":
        raise PlyError(f"line {lineno}: expected 'ply' magic, got {first.strip()!r}")
    while True:
        raw = fh.readline()
        lineno += 1
        if not raw:
            raise PlyError(f"line {lineno}: unexpected end of file inside header")
        line = raw.decode("ascii", errors="replace").strip()
        if not line or line.startswith(("comment", "obj_info")):
            continue
        tok = line.split()
        if tok[0] == "format":
            if len(tok) != 3 or tok[1] not in ("ascii", "binary_little_endian"):
                raise PlyError(f"line {lineno}: unsupported format {line!r}")
            fmt = tok[1]
        elif tok[0] == "element":
            if len(tok) != 3 or not tok[2].isdigit():
                raise PlyError(f"line {lineno}: malformed element line {line!r}")
            elements.append((tok[1], int(tok[2]), []))
        elif tok[0] == "property":
            if not elements:
                raise PlyError(f"line {lineno}: property before any element")
            if tok[1] == "list":
                raise PlyError(f"line {lineno}: list properties are not supported ({line!r})")
            if len(tok) != 3 or tok[1] not in _TYPES:
                raise PlyError(f"line {lineno}: malformed property line {line!r}")
            elements[-1][2].append((tok[2], _TYPES[tok[1]]))
        elif tok[0] == "end_header":
            break
        else:
            raise PlyError(f"line {lineno}: unrecognised header line {line!r}")
    if fmt is None:
        raise PlyError(f"line {lineno}: header has no format line")
    return fmt, elements, lineno


def read_ply(path: str | Path, element: str = "vertex") -> dict[str, np.ndarray]:
    """Read one element of a PLY file into a dict of 1-D arrays keyed by property name."""
    with open(path, "rb") as fh:
        fmt, elements, lineno = _parse_header(fh)
        names = [e[0] for e in elements]
        if element not in names:
            raise PlyError(f"no element {element!r} in header (found {names})")
        if fmt == "binary_little_endian":
            for name, count, props in elements:
                dtype = np.dtype([(p, "<" + t) for p, t in props])
                data = np.fromfile(fh, dtype=dtype, count=count)
                if len(data) != count:
                    raise PlyError(f"element {name!r}: expected {count} rows, file holds {len(data)}")
                if name == element:
                    return {p: np.asarray(data[p]) for p, _ in props}
        lines = fh.read().decode("ascii", errors="replace").splitlines()
    pos = 0
    for name, count, props in elements:
        rows = []
        for k in range(count):
            if pos >= len(lines):
                raise PlyError(f"line {lineno + pos + 1}: unexpected end of data in element {name!r}")
            tok = lines[pos].split()
            if len(tok) != len(props):
                raise PlyError(f"line {lineno + pos + 1}: expected {len(props)} values, got {len(tok)}")
            rows.append(tok)
            pos += 1
        if name == element:
            out = {}
            arr = np.array(rows, dtype=object).reshape(count, len(props))
            for j, (p, t) in enumerate(props):
                out[p] = arr[:, j].astype(np.float64).astype(t)
            return out
    raise PlyError(f"element {element!r} not found")  # pragma: no cover


def write_ply(path: str | Path, props: dict[str, np.ndarray], binary: bool = True) -> None:
    """Write a vertex element; property order follows dict order, dtype from each array."""
    cols = {k: np.asarray(v) for k, v in props.items()}
    counts = {len(v) for v in cols.values()}
    if len(counts) > 1:
        raise PlyError(f"property columns differ in length: {sorted(counts)}")
    n = counts.pop() if counts else 0
    header = ["ply", f"format {'binary_little_endian' if binary else 'ascii'} 1.0",
              f"element vertex {n}"]
    dtypes = []
    for k, v in cols.items():
        code = v.dtype.str[1:]
        if code not in _NAMES:
            raise PlyError(f"property {k!r}: unsupported dtype {v.dtype}")
        header.append(f"property {_NAMES[code]} {k}")
        dtypes.append((k, "<" + code))
    header.append("end_header")
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        if binary:
            rec = np.empty(n, dtype=np.dtype(dtypes))
            for k in cols:
                rec[k] = cols[k]
            fh.write(rec.tobytes())
        else:
            for i in range(n):
                fh.write((" ".join(repr(cols[k][i].item()) for k in cols) + "\n").encode("ascii"))
