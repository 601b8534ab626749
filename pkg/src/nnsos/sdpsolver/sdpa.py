"""SDPA sparse (.dat-s) reader and writer.

SDPA poses ``max <F0, Y>  s.t.  <F_i, Y> = c_i,  Y PSD``.  Our standard
form ``min <C, X>  s.t.  <A_r, X> = b_r`` maps onto it with ``Y = X``,
``F_r = A_r``, ``c = b`` and ``F0 = -C``.  Diagonal (LP) blocks carry a
negative size.  SDPA has no free variables, so a free block of size n is
written as a diagonal block of size 2n holding ``x = x_pos - x_neg``; the
solver's presolve merges such pairs back on import.
"""

from __future__ import annotations

import re

import numpy as np
import scipy.sparse as sp

from .problem import Block, ProblemError, SdpProblem, tri_index, triu

_PUNCT = re.compile(r"[{}(),]")


def _fmt(v: float) -> str:
    return repr(float(v))


def _file_blocks(prob: SdpProblem):
    """(size, kind, A, C) per exported block, with free blocks split."""
    out = []
    for blk, Ak, Ck in zip(prob.blocks, prob.A, prob.C):
        if blk.kind == "free":
            out.append((2 * blk.size, "lp", sp.hstack([Ak, -Ak]).tocsr(), np.concatenate([Ck, -Ck])))
        else:
            out.append((blk.size, blk.kind, Ak, np.asarray(Ck)))
    return out


def export_sdpa(prob: SdpProblem) -> str:
    fb = _file_blocks(prob)
    lines = [str(prob.m), str(len(fb)),
             " ".join(str(-n if kind == "lp" else n) for n, kind, _, _ in fb),
             " ".join(_fmt(v) for v in prob.b)]
    for bi, (n, kind, Ak, Ck) in enumerate(fb, start=1):
        if kind == "psd":
            ti, tj = triu(n)
        else:
            ti = tj = np.arange(n)
        entries = []
        for pos in np.flatnonzero(Ck):
            entries.append((ti[pos], tj[pos], 0, -Ck[pos]))
        coo = Ak.tocoo()
        for r, pos, v in zip(coo.row, coo.col, coo.data):
            if v != 0.0:
                entries.append((ti[pos], tj[pos], r + 1, v))
        entries.sort(key=lambda e: (e[0], e[1], e[2]))
        for i, j, k, v in entries:
            lines.append(f"{k} {bi} {i + 1} {j + 1} {_fmt(v)}")
    return "\n".join(lines) + "\n"


def _tokens(text: str):
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line[0] in '"*':
            continue
        line = _PUNCT.sub(" ", line)
        toks = line.split()
        if toks:
            yield toks


def import_sdpa(text: str) -> SdpProblem:
    it = _tokens(text)
    try:
        m = int(next(it)[0])
        nb = int(next(it)[0])
        sizes: list[int] = []
        while len(sizes) < nb:
            sizes += [int(float(t)) for t in next(it)]
        b: list[float] = []
        while len(b) < m:
            b += [float(t) for t in next(it)]
    except StopIteration as exc:
        raise ProblemError("truncated SDPA header") from exc
    except ValueError as exc:
        raise ProblemError(f"malformed SDPA header: {exc}") from exc
    sizes = sizes[:nb]
    blocks = [Block(abs(s), "lp" if s < 0 else "psd") for s in sizes]
    rows: list[list] = [[] for _ in blocks]
    cols: list[list] = [[] for _ in blocks]
    vals: list[list] = [[] for _ in blocks]
    C = [np.zeros(bl.nvar) for bl in blocks]
    for toks in it:
        if len(toks) < 5:
            raise ProblemError(f"malformed SDPA entry line: {' '.join(toks)}")
        k, bi, i, j = (int(t) for t in toks[:4])
        v = float(toks[4])
        if not (0 <= k <= m and 1 <= bi <= nb):
            raise ProblemError(f"entry index out of range: {' '.join(toks)}")
        blk = blocks[bi - 1]
        i, j = i - 1, j - 1
        if not (0 <= i < blk.size and 0 <= j < blk.size):
            raise ProblemError(f"entry outside its {blk.size}x{blk.size} block: {' '.join(toks)}")
        if blk.kind == "psd":
            pos = tri_index(i, j, blk.size)
        else:
            if i != j:
                raise ProblemError("off-diagonal entry in a diagonal block")
            pos = i
        if k == 0:
            C[bi - 1][pos] -= v
        else:
            rows[bi - 1].append(k - 1)
            cols[bi - 1].append(pos)
            vals[bi - 1].append(v)
    A = [sp.csr_matrix((vals[q], (rows[q], cols[q])), shape=(m, blocks[q].nvar)) for q in range(nb)]
    return SdpProblem(blocks, A, np.array(b[:m]), C)
