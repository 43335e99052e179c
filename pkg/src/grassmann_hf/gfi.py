"""Reader and writer for the plain-text GFI v1 integral format.

::

    GFI 1
    d 2 na 1 nb 1 enuc 0.7142857142857143
    S 1 1 1.0
    H 1 2 -0.9584
    G 1 2 1 2 0.5697     # g[i, j, k, l] = <ij|kl>, 1-based

Unlisted entries are zero.  ``S`` and ``H`` are completed from either
triangle, ``G`` by its 8-fold symmetry.  Repeating an entry, directly or via
a symmetry image, is allowed only if the values agree to 1e-12.
"""
import math
import re
from typing import Dict, Tuple

import numpy as np

from .errors import GrassmannHFError, IntegralFileError
from .hf import IntegralSet, eightfold_images

DUPLICATE_TOL = 1e-12
_HEADER_KEYS = ("d", "na", "nb", "enuc")


def _tokens(raw):
    """Whitespace tokens of the uncommented part, with 1-based columns."""
    body = raw.split("#", 1)[0]
    return [(m.group(), m.start() + 1) for m in re.finditer(r"\S+", body)]


def _parse_float(tok, col, lineno, path):
    try:
        v = float(tok)
    except ValueError:
        raise IntegralFileError(f"column {col}: expected a number, got {tok!r}", lineno, path) from None
    if not math.isfinite(v):
        raise IntegralFileError(f"column {col}: non-finite value {tok!r}", lineno, path)
    return v


def _parse_int(tok, col, lineno, path):
    try:
        return int(tok)
    except ValueError:
        raise IntegralFileError(f"column {col}: expected an integer, got {tok!r}", lineno, path) from None


def parse_gfi(text: str, path=None) -> IntegralSet:
    lines = [(n, _tokens(raw)) for n, raw in enumerate(text.splitlines(), 1)]
    lines = [(n, toks) for n, toks in lines if toks]
    if not lines:
        raise IntegralFileError("empty file", None, path)
    n, toks = lines[0]
    words = [t for t, _ in toks]
    if words != ["GFI", "1"]:
        raise IntegralFileError(f"expected header 'GFI 1', got {' '.join(words)!r}", n, path)
    if len(lines) < 2:
        raise IntegralFileError("missing dimension line", n, path)
    n, toks = lines[1]
    if len(toks) != 8 or tuple(t for t, _ in toks[0::2]) != _HEADER_KEYS:
        raise IntegralFileError("expected 'd <d> na <na> nb <nb> enuc <E>'", n, path)
    d = _parse_int(*toks[1], n, path)
    na = _parse_int(*toks[3], n, path)
    nb = _parse_int(*toks[5], n, path)
    e_nuc = _parse_float(*toks[7], n, path)
    if d <= 0:
        raise IntegralFileError(f"dimension must be positive, got {d}", n, path)

    tables: Dict[str, Dict[Tuple[int, ...], Tuple[float, int]]] = {"S": {}, "H": {}, "G": {}}
    for n, toks in lines[2:]:
        kind, col = toks[0]
        if kind not in tables:
            raise IntegralFileError(f"column {col}: unknown record {kind!r}", n, path)
        arity = 4 if kind == "G" else 2
        if len(toks) != arity + 2:
            raise IntegralFileError(f"{kind} record needs {arity} indices and a value", n, path)
        idx = []
        for tok, col in toks[1:arity + 1]:
            i = _parse_int(tok, col, n, path)
            if not 1 <= i <= d:
                raise IntegralFileError(f"column {col}: index {i} outside 1..{d}", n, path)
            idx.append(i - 1)
        value = _parse_float(*toks[-1], n, path)
        if kind == "G":
            key = min(eightfold_images(*idx))
        else:
            key = tuple(sorted(idx))
        seen = tables[kind].get(key)
        if seen is not None:
            if abs(seen[0] - value) > DUPLICATE_TOL:
                shown = tuple(i + 1 for i in idx)
                raise IntegralFileError(
                    f"{kind}{shown} = {value!r} conflicts with symmetry-equivalent entry "
                    f"{seen[0]!r} from line {seen[1]} (difference {abs(seen[0] - value):.3e})",
                    n, path)
            continue
        tables[kind][key] = (value, n)

    S = np.zeros((d, d))
    h = np.zeros((d, d))
    for M, table in ((S, tables["S"]), (h, tables["H"])):
        for (i, j), (v, _) in table.items():
            M[i, j] = M[j, i] = v
    g = np.zeros((d,) * 4)
    for key, (v, _) in tables["G"].items():
        for img in eightfold_images(*key):
            g[img] = v
    try:
        return IntegralSet(S, h, g, e_nuc, na, nb)
    except GrassmannHFError as exc:
        raise IntegralFileError(str(exc), None, path) from exc


def load_integrals(path) -> IntegralSet:
    with open(path, encoding="utf-8") as fh:
        return parse_gfi(fh.read(), path=str(path))


def format_gfi(ints: IntegralSet, comment=None) -> str:
    """Serialize with ``repr`` floats so that a reload is bit-exact."""
    d = ints.d
    out = []
    if comment:
        out.extend(f"# {line}" for line in comment.splitlines())
    out.append("GFI 1")
    out.append(f"d {d} na {ints.n_alpha} nb {ints.n_beta} enuc {ints.e_nuc!r}")
    for kind, M in (("S", ints.S), ("H", ints.h)):
        for i in range(d):
            for j in range(i, d):
                if M[i, j] != 0.0:
                    out.append(f"{kind} {i + 1} {j + 1} {float(M[i, j])!r}")
    for idx in np.ndindex(*ints.g.shape):
        if ints.g[idx] != 0.0 and idx == min(eightfold_images(*idx)):
            out.append("G " + " ".join(str(i + 1) for i in idx) + f" {float(ints.g[idx])!r}")
    return "\n".join(out) + "\n"


def write_integrals(path, ints: IntegralSet, comment=None):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_gfi(ints, comment))
