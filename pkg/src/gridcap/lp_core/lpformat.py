"""Fixed-format MPS text dump for cross-checking programs in external solvers.

Fixed MPS limits names to eight characters, so rows and columns are written
under generated names (``R0000001``, ``C0000001``) and the original names are
listed as ``*`` comment lines at the top of the file.
"""
import math

from .problem import Relation, Sense


def _fmt(v):
    s = f"{v:.12g}"
    if len(s) > 12:
        s = f"{v:.6e}"
    return s


def _line(f1, f2, f3, f4="", f5="", f6=""):
    # columns 2-3, 5-12, 15-22, 25-36, 40-47, 50-61
    text = f" {f1:<2} {f2:<8}  {f3:<8}  {f4:>12}"
    if f5:
        text += f"   {f5:<8}  {f6:>12}"
    return text.rstrip()


def write_mps(lp, path_or_file, binaries=()):
    """Write ``lp`` in fixed-format MPS; ``binaries`` are tagged as integer columns."""
    own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
    fh = open(path_or_file, "w") if own else path_or_file
    try:
        fh.write(mps_text(lp, binaries))
    finally:
        if own:
            fh.close()


def mps_text(lp, binaries=()):
    rn = [f"R{i + 1:07d}" for i in range(lp.n_rows)]
    cn = [f"C{j + 1:07d}" for j in range(lp.n_vars)]
    binaries = set(int(j) for j in binaries)
    out = [f"* {lp.name}: {lp.n_vars} columns, {lp.n_rows} rows"]
    out += [f"* {cn[j]} = {name}" for j, name in enumerate(lp.var_names)]
    out += [f"* {rn[i]} = {name} [{kind}]" for i, (name, kind)
            in enumerate(zip(lp.row_names, lp.row_kinds))]
    out.append(f"NAME          {lp.name[:8].upper() or 'LP'}")
    out.append("OBJSENSE")
    out.append("    MAX" if lp.sense == Sense.MAXIMIZE else "    MIN")
    out.append("ROWS")
    out.append(_line("N", "COST", ""))
    tag = {Relation.LE: "L", Relation.GE: "G", Relation.EQ: "E"}
    for i, rel in enumerate(lp.relations):
        out.append(_line(tag[rel], rn[i], ""))
    cols = [[] for _ in range(lp.n_vars)]
    for j, v in lp.objective.items():
        cols[j].append(("COST", v))
    for i, row in enumerate(lp.rows):
        for j, v in row.items():
            cols[j].append((rn[i], v))
    out.append("COLUMNS")
    in_int = False
    marker = 0
    for j in range(lp.n_vars):
        if (j in binaries) != in_int:
            in_int = j in binaries
            out.append(f"    MARKER{marker:04d}  'MARKER'                 "
                       f"'{'INTORG' if in_int else 'INTEND'}'")
            marker += 1
        entries = cols[j] or [("COST", 0.0)]
        for k in range(0, len(entries), 2):
            pair = entries[k:k + 2]
            f5, f6 = (pair[1][0], _fmt(pair[1][1])) if len(pair) > 1 else ("", "")
            out.append(_line("", cn[j], pair[0][0], _fmt(pair[0][1]), f5, f6))
    if in_int:
        out.append(f"    MARKER{marker:04d}  'MARKER'                 'INTEND'")
    out.append("RHS")
    for i, b in enumerate(lp.rhs):
        if b != 0.0:
            out.append(_line("", "RHS", rn[i], _fmt(b)))
    out.append("BOUNDS")
    for j in range(lp.n_vars):
        lo, up = lp.lower[j], lp.upper[j]
        if j in binaries and lo == 0.0 and up == 1.0:
            out.append(_line("BV", "BND", cn[j]))
        elif lo == up:
            out.append(_line("FX", "BND", cn[j], _fmt(lo)))
        elif lo == -math.inf and up == math.inf:
            out.append(_line("FR", "BND", cn[j]))
        else:
            if lo == -math.inf:
                out.append(_line("MI", "BND", cn[j]))
            elif lo != 0.0:
                out.append(_line("LO", "BND", cn[j], _fmt(lo)))
            if up != math.inf:
                out.append(_line("UP", "BND", cn[j], _fmt(up)))
    out.append("ENDATA")
    return "\n".join(out) + "\n"
