"""Steady-state IR drop in a resistive crossbar.

Network model: every device ``g[i, j]`` joins wordline node ``(i, j)`` to
bitline node ``(i, j)``.  Adjacent nodes on a wordline or bitline are joined
by a wire segment of resistance ``R``.  Wordline ``i`` is driven at its
column-0 end through one segment from a source at ``v_in[i]``; bitline ``j``
is sensed at its last-row end through one segment into a virtual ground.
The 1x1 crossbar therefore reads ``I = v g / (1 + 2 R g)``.

The production solver is block Gauss-Seidel over lines: with the bitline
voltages frozen each wordline is a tridiagonal system and vice versa.  The
line factorizations depend only on ``g`` and are computed once.
"""

from __future__ import annotations

import numba
import numpy as np

from .errors import InvalidConfigError, ShapeError, SolverError

# conductances are in uS and resistances in ohm
_US = 1e-6

DENSE_ORACLE_MAX_NODES = 2 * 64 * 64


@numba.njit(cache=True)
def _line_factors(rg, end_first, end_last):
    # rg: (lines, n) normalized device conductances R*g along each line.
    # Diagonal entry is (#wire neighbours) + R*g with sub/super diagonal -1.
    lines, n = rg.shape
    inv = np.empty((lines, n))
    for l in range(lines):
        cprev = 0.0
        for k in range(n):
            nb = 0.0
            if k > 0:
                nb += 1.0
            elif end_first:
                nb += 1.0
            if k < n - 1:
                nb += 1.0
            elif end_last:
                nb += 1.0
            m = nb + rg[l, k] + cprev
            inv[l, k] = 1.0 / m
            cprev = -inv[l, k]
    return inv


@numba.njit(cache=True, fastmath=True)
def _solve_wordlines(rg, inv, b, vsrc, a):
    # rg, inv: (rows, cols); b, a: (rows, cols, K); vsrc: (rows, K)
    rows, cols, K = b.shape
    for i in range(rows):
        # forward elimination, stored in a
        for k in range(K):
            a[i, 0, k] = (rg[i, 0] * b[i, 0, k] + vsrc[i, k]) * inv[i, 0]
        for j in range(1, cols):
            r = rg[i, j]
            m = inv[i, j]
            for k in range(K):
                a[i, j, k] = (r * b[i, j, k] + a[i, j - 1, k]) * m
        for j in range(cols - 2, -1, -1):
            m = inv[i, j]
            for k in range(K):
                a[i, j, k] += m * a[i, j + 1, k]


@numba.njit(cache=True, fastmath=True)
def _solve_bitlines(rgt, invt, g, a, old, b):
    # Writes the new bitline voltages into b and returns the wordline KCL
    # residual they leave behind (old -> b), relative to the total device
    # current.  Rows are swept outermost so passes stream (cols, K) slabs.
    rows, cols, K = a.shape
    for j in range(cols):
        m = invt[j, 0]
        r = rgt[j, 0]
        for k in range(K):
            b[0, j, k] = r * a[0, j, k] * m
    for i in range(1, rows):
        for j in range(cols):
            r = rgt[j, i]
            m = invt[j, i]
            for k in range(K):
                b[i, j, k] = (r * a[i, j, k] + b[i - 1, j, k]) * m
    for i in range(rows - 2, -1, -1):
        for j in range(cols):
            m = invt[j, i]
            for k in range(K):
                b[i, j, k] += m * b[i + 1, j, k]
    num = 0.0
    den = 0.0
    for i in range(rows):
        for j in range(cols):
            gij = g[i, j]
            if gij == 0.0:
                continue
            for k in range(K):
                d = gij * (b[i, j, k] - old[i, j, k])
                c = gij * (a[i, j, k] - b[i, j, k])
                num += d * d
                den += c * c
    if den == 0.0:
        return 0.0
    return np.sqrt(num / den)


def _check(g, v_in, wire_resistance):
    g = np.asarray(g, dtype=float)
    v = np.asarray(v_in, dtype=float)
    if g.ndim != 2:
        raise ShapeError("conductance grid must be 2-D")
    if v.shape[-1] != g.shape[0] or v.ndim > 2:
        raise ShapeError(f"input of shape {v.shape} does not match {g.shape[0]} rows")
    if wire_resistance < 0:
        raise InvalidConfigError("wire_resistance must be >= 0")
    if np.any(g < 0):
        raise InvalidConfigError("conductances must be non-negative")
    return g, v


def ir_drop_currents(g, v_in, wire_resistance: float, tol: float = 1e-10, max_iter: int = 500,
                     chunk: int = 64) -> np.ndarray:
    """Sensed bitline currents (uA) for wordline voltages ``v_in``.

    ``v_in`` is a vector of length ``rows`` or a ``(batch, rows)`` array.
    With zero wire resistance the ideal product ``v_in @ g`` is returned.
    """
    g, v = _check(g, v_in, wire_resistance)
    single = v.ndim == 1
    v2 = v[None, :] if single else v
    if wire_resistance == 0:
        out = v2 @ g
        return out[0] if single else out

    rows, cols = g.shape
    rg = wire_resistance * _US * g
    inv_w = _line_factors(rg, True, False)
    rgt = np.ascontiguousarray(rg.T)
    inv_b = _line_factors(rgt, False, True)

    out = np.empty((v2.shape[0], cols))
    for start in range(0, v2.shape[0], chunk):
        vs = np.ascontiguousarray(v2[start:start + chunk].T)
        out[start:start + chunk] = _relax(g, rg, inv_w, rgt, inv_b, vs, wire_resistance, tol, max_iter).T
    return out[0] if single else out


def _relax(g, rg, inv_w, rgt, inv_b, vsrc, R, tol, max_iter):
    rows, cols = g.shape
    K = vsrc.shape[1]
    a = np.empty((rows, cols, K))
    b = np.zeros((rows, cols, K))
    b_next = np.empty_like(b)
    for it in range(max_iter):
        _solve_wordlines(rg, inv_w, b, vsrc, a)
        res = _solve_bitlines(rgt, inv_b, g, a, b, b_next)
        b, b_next = b_next, b
        if res < tol:
            # sense current flows through the last bitline segment to ground
            return b[rows - 1] / (R * _US)
    raise SolverError(f"IR-drop relaxation did not reach tolerance {tol} in {max_iter} sweeps")


def ir_drop_transfer(g, wire_resistance: float, tol: float = 1e-10, max_iter: int = 500) -> np.ndarray:
    """Effective ``rows x cols`` conductance matrix ``T`` with ``I = v @ T``.

    The network is linear, so ``T`` answers any number of input vectors
    with one solve per wordline.
    """
    g = np.asarray(g, dtype=float)
    return ir_drop_currents(g, np.eye(g.shape[0]), wire_resistance, tol=tol, max_iter=max_iter)


def dense_nodal_currents(g, v_in, wire_resistance: float) -> np.ndarray:
    """Reference solution by direct dense nodal analysis (small tiles only).

    Builds the full node conductance matrix by stamping every element and
    solves it with LAPACK.  Intended as an oracle for the relaxation solver.
    """
    g, v = _check(g, v_in, wire_resistance)
    if not wire_resistance > 0:
        raise InvalidConfigError("dense nodal solve needs wire_resistance > 0")
    rows, cols = g.shape
    n = 2 * rows * cols
    if n > DENSE_ORACLE_MAX_NODES:
        raise InvalidConfigError("dense nodal oracle is limited to 64x64 tiles")
    gw = 1.0 / (wire_resistance * _US)  # segment conductance in uS
    A = np.zeros((n, n))

    def wl(i, j):
        return i * cols + j

    def bl(i, j):
        return rows * cols + i * cols + j

    def stamp(p, q, y):
        A[p, p] += y
        if q is not None:
            A[q, q] += y
            A[p, q] -= y
            A[q, p] -= y

    for i in range(rows):
        for j in range(cols):
            stamp(wl(i, j), bl(i, j), g[i, j])
            if j + 1 < cols:
                stamp(wl(i, j), wl(i, j + 1), gw)
            if i + 1 < rows:
                stamp(bl(i, j), bl(i + 1, j), gw)
        stamp(wl(i, 0), None, gw)  # source segment, source voltage goes to rhs
    for j in range(cols):
        stamp(bl(rows - 1, j), None, gw)  # segment into virtual ground

    single = v.ndim == 1
    v2 = v[None, :] if single else v
    rhs = np.zeros((n, v2.shape[0]))
    for i in range(rows):
        rhs[wl(i, 0)] = gw * v2[:, i]
    nodes = np.linalg.solve(A, rhs)
    out = np.stack([gw * nodes[bl(rows - 1, j)] for j in range(cols)], axis=1)
    return out[0] if single else out
