"""Numba search kernel: DPLL over pseudo-boolean rows plus parity rows.

Linear rows have the form ``lo <= sum(a * x) <= hi`` and are stored CSR with
entries sorted by ``|a|`` descending, so slack-based implication scans can stop
early. Parity rows keep an unassigned-count and running parity for unit
reasoning; optionally the residual parity system is reduced by Gauss-Jordan
elimination over bitsets at every search node, which detects conflicts and
implications that single rows cannot see.
"""

import numpy as np
from numba import njit, uint64

SAT = 1
UNSAT = 0
TIMEOUT = 2

_M1 = uint64(0x5555555555555555)
_M2 = uint64(0x3333333333333333)
_M4 = uint64(0x0F0F0F0F0F0F0F0F)
_H01 = uint64(0x0101010101010101)


@njit(cache=True, inline="always")
def _popcount(x):
    x = x - ((x >> uint64(1)) & _M1)
    x = (x & _M2) + ((x >> uint64(2)) & _M2)
    x = (x + (x >> uint64(4))) & _M4
    return (x * _H01) >> uint64(56)


@njit(cache=True, inline="always")
def _lowest_bit(x):
    n = 0
    while (x & uint64(1)) == uint64(0):
        x >>= uint64(1)
        n += 1
    return n


@njit(cache=True)
def _assign(v, b, val, trail, tl, L, U, var_ptr, var_row, var_coef,
            xv_ptr, xv_row, xcnt, xpar, xcol, abits, obits):
    val[v] = b
    trail[tl] = v
    for k in range(var_ptr[v], var_ptr[v + 1]):
        r = var_row[k]
        a = var_coef[k]
        if a > 0:
            if b == 1:
                L[r] += a
            else:
                U[r] -= a
        else:
            if b == 1:
                U[r] += a
            else:
                L[r] -= a
    for k in range(xv_ptr[v], xv_ptr[v + 1]):
        r = xv_row[k]
        xcnt[r] -= 1
        xpar[r] ^= b
    c = xcol[v]
    if c >= 0:
        w = c >> 6
        bit = uint64(1) << uint64(c & 63)
        abits[w] |= bit
        if b == 1:
            obits[w] |= bit
    return tl + 1


@njit(cache=True)
def _unassign(v, val, L, U, var_ptr, var_row, var_coef,
              xv_ptr, xv_row, xcnt, xpar, xcol, abits, obits):
    b = val[v]
    for k in range(var_ptr[v], var_ptr[v + 1]):
        r = var_row[k]
        a = var_coef[k]
        if a > 0:
            if b == 1:
                L[r] -= a
            else:
                U[r] += a
        else:
            if b == 1:
                U[r] -= a
            else:
                L[r] += a
    for k in range(xv_ptr[v], xv_ptr[v + 1]):
        r = xv_row[k]
        xcnt[r] += 1
        xpar[r] ^= b
    c = xcol[v]
    if c >= 0:
        w = c >> 6
        bit = ~(uint64(1) << uint64(c & 63))
        abits[w] &= bit
        obits[w] &= bit
    val[v] = -1


@njit(cache=True)
def search(n, row_ptr, row_col, row_coef, row_lo, row_hi,
           var_ptr, var_row, var_coef,
           x_ptr, x_var, x_rhs, xv_ptr, xv_row,
           xcol, col_var, xbits, use_gauss,
           order, phase, max_solutions, max_decisions, out):
    """Run the search; returns ``(status, n_solutions, decisions, propagations, conflicts)``.

    The first solution found is written to ``out``. With ``max_solutions > 1``
    the search keeps enumerating (model counting) until the count reaches the
    limit or the space is exhausted; status is then SAT when at least one
    solution exists.
    """
    n_rows = row_lo.shape[0]
    n_x = x_rhs.shape[0]
    nw = xbits.shape[1]
    val = np.full(n, -1, dtype=np.int8)
    trail = np.empty(n, dtype=np.int64)
    L = np.zeros(n_rows, dtype=np.int64)
    U = np.zeros(n_rows, dtype=np.int64)
    for r in range(n_rows):
        for k in range(row_ptr[r], row_ptr[r + 1]):
            a = row_coef[k]
            if a > 0:
                U[r] += a
            else:
                L[r] += a
    xcnt = np.zeros(n_x, dtype=np.int64)
    xpar = np.zeros(n_x, dtype=np.int8)
    for r in range(n_x):
        xcnt[r] = x_ptr[r + 1] - x_ptr[r]
    abits = np.zeros(nw, dtype=np.uint64)
    obits = np.zeros(nw, dtype=np.uint64)
    work = np.zeros((n_x, nw), dtype=np.uint64)
    wrhs = np.zeros(n_x, dtype=np.int8)

    dec_var = np.empty(n + 1, dtype=np.int64)
    dec_pos = np.empty(n + 1, dtype=np.int64)
    dec_flip = np.zeros(n + 1, dtype=np.bool_)
    dec_op = np.empty(n + 1, dtype=np.int64)
    nd = 0
    tl = 0
    qhead = 0
    op = 0
    decisions = 0
    props = 0
    conflicts = 0
    n_sol = 0

    # root: rows whose implications hold before any assignment
    conflict = False
    for r in range(n_rows):
        if L[r] > row_hi[r] or U[r] < row_lo[r]:
            conflict = True
            break
    if not conflict:
        for r in range(n_x):
            if xcnt[r] == 0 and x_rhs[r] == 1:
                conflict = True
                break
    root_scan = True

    while True:
        if not conflict:
            # ---- propagation to fixpoint ----
            while True:
                if root_scan:
                    # one pass over every row at the root
                    root_scan = False
                    for r in range(n_rows):
                        if conflict:
                            break
                        s1 = row_hi[r] - L[r]
                        s2 = U[r] - row_lo[r]
                        for k in range(row_ptr[r], row_ptr[r + 1]):
                            a = row_coef[k]
                            aa = a if a > 0 else -a
                            if aa <= s1 and aa <= s2:
                                break
                            v = row_col[k]
                            if val[v] >= 0:
                                continue
                            if aa > s1 and aa > s2:
                                conflict = True
                                break
                            if a > 0:
                                b = 0 if aa > s1 else 1
                            else:
                                b = 0 if aa > s2 else 1
                            tl = _assign(v, b, val, trail, tl, L, U, var_ptr, var_row, var_coef,
                                         xv_ptr, xv_row, xcnt, xpar, xcol, abits, obits)
                            props += 1
                            s1 = row_hi[r] - L[r]
                            s2 = U[r] - row_lo[r]
                            if s1 < 0 or s2 < 0:
                                conflict = True
                                break
                    for r in range(n_x):
                        if conflict:
                            break
                        if xcnt[r] == 1:
                            for k in range(x_ptr[r], x_ptr[r + 1]):
                                v = x_var[k]
                                if val[v] < 0:
                                    b = x_rhs[r] ^ xpar[r]
                                    tl = _assign(v, b, val, trail, tl, L, U, var_ptr, var_row,
                                                 var_coef, xv_ptr, xv_row, xcnt, xpar, xcol,
                                                 abits, obits)
                                    props += 1
                                    break
                        elif xcnt[r] == 0 and xpar[r] != x_rhs[r]:
                            conflict = True
                while qhead < tl and not conflict:
                    v0 = trail[qhead]
                    qhead += 1
                    for kk in range(var_ptr[v0], var_ptr[v0 + 1]):
                        r = var_row[kk]
                        if L[r] > row_hi[r] or U[r] < row_lo[r]:
                            conflict = True
                            break
                        s1 = row_hi[r] - L[r]
                        s2 = U[r] - row_lo[r]
                        for k in range(row_ptr[r], row_ptr[r + 1]):
                            a = row_coef[k]
                            aa = a if a > 0 else -a
                            if aa <= s1 and aa <= s2:
                                break
                            v = row_col[k]
                            if val[v] >= 0:
                                continue
                            if aa > s1 and aa > s2:
                                conflict = True
                                break
                            if a > 0:
                                b = 0 if aa > s1 else 1
                            else:
                                b = 0 if aa > s2 else 1
                            tl = _assign(v, b, val, trail, tl, L, U, var_ptr, var_row, var_coef,
                                         xv_ptr, xv_row, xcnt, xpar, xcol, abits, obits)
                            props += 1
                            s1 = row_hi[r] - L[r]
                            s2 = U[r] - row_lo[r]
                            if s1 < 0 or s2 < 0:
                                conflict = True
                                break
                        if conflict:
                            break
                    if conflict:
                        break
                    for kk in range(xv_ptr[v0], xv_ptr[v0 + 1]):
                        r = xv_row[kk]
                        if xcnt[r] == 0:
                            if xpar[r] != x_rhs[r]:
                                conflict = True
                                break
                        elif xcnt[r] == 1:
                            for k in range(x_ptr[r], x_ptr[r + 1]):
                                v = x_var[k]
                                if val[v] < 0:
                                    b = x_rhs[r] ^ xpar[r]
                                    tl = _assign(v, b, val, trail, tl, L, U, var_ptr, var_row,
                                                 var_coef, xv_ptr, xv_row, xcnt, xpar, xcol,
                                                 abits, obits)
                                    props += 1
                                    break
                if conflict or not use_gauss or n_x == 0:
                    break
                # ---- residual Gauss-Jordan over the unassigned parity columns ----
                for i in range(n_x):
                    par = 0
                    for w in range(nw):
                        work[i, w] = xbits[i, w] & ~abits[w]
                        par ^= int(_popcount(xbits[i, w] & obits[w]) & uint64(1))
                    wrhs[i] = x_rhs[i] ^ par
                for i in range(n_x):
                    w0 = -1
                    for w in range(nw):
                        if work[i, w] != uint64(0):
                            w0 = w
                            break
                    if w0 < 0:
                        if wrhs[i] == 1:
                            conflict = True
                            break
                        continue
                    piv = work[i, w0] & (~work[i, w0] + uint64(1))
                    for j in range(n_x):
                        if j != i and (work[j, w0] & piv) != uint64(0):
                            for w in range(nw):
                                work[j, w] ^= work[i, w]
                            wrhs[j] ^= wrhs[i]
                if conflict:
                    break
                implied = 0
                for i in range(n_x):
                    cnt = 0
                    wsel = -1
                    for w in range(nw):
                        c = _popcount(work[i, w])
                        if c > uint64(0):
                            cnt += int(c)
                            wsel = w
                        if cnt > 1:
                            break
                    if cnt == 1:
                        col = wsel * 64 + _lowest_bit(work[i, wsel])
                        v = col_var[col]
                        if val[v] < 0:
                            tl = _assign(v, wrhs[i], val, trail, tl, L, U, var_ptr, var_row,
                                         var_coef, xv_ptr, xv_row, xcnt, xpar, xcol, abits, obits)
                            props += 1
                            implied += 1
                if implied == 0:
                    break

        if conflict:
            conflicts += 1
            while nd > 0 and dec_flip[nd - 1]:
                nd -= 1
                while tl > dec_pos[nd]:
                    tl -= 1
                    _unassign(trail[tl], val, L, U, var_ptr, var_row, var_coef,
                              xv_ptr, xv_row, xcnt, xpar, xcol, abits, obits)
            if nd == 0:
                break
            d = nd - 1
            v = dec_var[d]
            b = 1 - val[v]
            while tl > dec_pos[d]:
                tl -= 1
                _unassign(trail[tl], val, L, U, var_ptr, var_row, var_coef,
                          xv_ptr, xv_row, xcnt, xpar, xcol, abits, obits)
            tl = _assign(v, b, val, trail, tl, L, U, var_ptr, var_row, var_coef,
                         xv_ptr, xv_row, xcnt, xpar, xcol, abits, obits)
            dec_flip[d] = True
            qhead = dec_pos[d]
            op = dec_op[d]
            conflict = False
            continue

        while op < n and val[order[op]] >= 0:
            op += 1
        if op == n:
            if n_sol == 0:
                for i in range(n):
                    out[i] = val[i]
            n_sol += 1
            if n_sol >= max_solutions:
                break
            conflict = True
            conflicts -= 1  # a found model is not a conflict
            continue
        if decisions >= max_decisions:
            return TIMEOUT, n_sol, decisions, props, conflicts
        decisions += 1
        v = order[op]
        dec_var[nd] = v
        dec_pos[nd] = tl
        dec_flip[nd] = False
        dec_op[nd] = op
        nd += 1
        tl = _assign(v, phase[v], val, trail, tl, L, U, var_ptr, var_row, var_coef,
                     xv_ptr, xv_row, xcnt, xpar, xcol, abits, obits)

    status = SAT if n_sol > 0 else UNSAT
    return status, n_sol, decisions, props, conflicts


@njit(cache=True)
def prepare_parity(words, rhs, n, eliminate):
    """Turn packed parity rows into the search's CSR and bitset arrays.

    ``words[r]`` holds row ``r`` as little-endian 64-bit words over variable
    ids. With ``eliminate`` the rows are first brought to reduced row echelon
    form over GF(2), dropping dependent rows. Returns ``ok`` (False when the
    system is inconsistent) and the arrays expected by :func:`search`.
    """
    m, nw = words.shape
    W = words.copy()
    R = rhs.copy()
    keep = np.ones(m, dtype=np.bool_)
    ok = True
    if eliminate:
        for i in range(m):
            w0 = -1
            for w in range(nw):
                if W[i, w] != uint64(0):
                    w0 = w
                    break
            if w0 < 0:
                keep[i] = False
                if R[i] == 1:
                    ok = False
                continue
            piv = W[i, w0] & (~W[i, w0] + uint64(1))
            for j in range(m):
                if j != i and (W[j, w0] & piv) != uint64(0):
                    for w in range(nw):
                        W[j, w] ^= W[i, w]
                    R[j] ^= R[i]
        # rows emptied after their own turn were rechecked when processed;
        # earlier pivot rows never lose their pivot
    else:
        for i in range(m):
            empty = True
            for w in range(nw):
                if W[i, w] != uint64(0):
                    empty = False
                    break
            if empty:
                keep[i] = False
                if R[i] == 1:
                    ok = False
    mk = 0
    for i in range(m):
        if keep[i]:
            mk += 1
    xbits = np.zeros((mk, nw), dtype=np.uint64)
    x_rhs = np.zeros(mk, dtype=np.int8)
    x_ptr = np.zeros(mk + 1, dtype=np.int64)
    r = 0
    total = 0
    for i in range(m):
        if keep[i]:
            for w in range(nw):
                xbits[r, w] = W[i, w]
                total += int(_popcount(W[i, w]))
            x_rhs[r] = R[i]
            r += 1
            x_ptr[r] = total
    x_var = np.empty(total, dtype=np.int64)
    cnt = np.zeros(n + 1, dtype=np.int64)
    k = 0
    for i in range(mk):
        for w in range(nw):
            x = xbits[i, w]
            while x != uint64(0):
                low = x & (~x + uint64(1))
                v = w * 64 + _lowest_bit(low)
                x_var[k] = v
                cnt[v + 1] += 1
                k += 1
                x ^= low
    xv_ptr = np.cumsum(cnt)
    fill = xv_ptr[:-1].copy()
    xv_row = np.empty(total, dtype=np.int64)
    for i in range(mk):
        for kk in range(x_ptr[i], x_ptr[i + 1]):
            v = x_var[kk]
            xv_row[fill[v]] = i
            fill[v] += 1
    xcol = np.arange(n).astype(np.int64)
    col_var = np.arange(nw * 64).astype(np.int64)
    return ok, x_ptr, x_var, x_rhs, xv_ptr, xv_row, xcol, col_var, xbits
