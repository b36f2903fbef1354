"""Numba kernels for the weighted agreement-subtree dynamic program.

Tables are indexed by pairs of directed-edge handles of the two host trees
(one row/column per handle).  Case codes shared by the value tables and the
traceback:

    0  unreachable
    1  singleton base (the common leaf)
    2  both roots used, children paired (a-a, b-b)
    3  both roots used, children paired (a-b, b-a)
    4  descend tree-1 into child a
    5  descend tree-1 into child b
    6  descend tree-2 into child a
    7  descend tree-2 into child b
    8  leaf sets disjoint (empty)

``v`` is root-pinned: every vertex on the paths from both handle roots down
to the agreement subtree is charged, so adding two ``v`` values across a cut
edge prices the embedding of the joined block exactly.  ``m`` is the
floating variant (no path charges), used by the rooted operation and the
literal combine variant.  Forbidden vertices and excluded taxa carry weight
``-inf`` which propagates absorbingly.
"""

import numpy as np
from numba import njit

NEG_INF = float("-inf")


@njit(cache=True)
def run_dp(
    order1,
    sing1,
    tax1,
    c1a_arr,
    c1b_arr,
    rootv1,
    lm1,
    taxv1,
    order2,
    sing2,
    tax2,
    c2a_arr,
    c2b_arr,
    rootv2,
    lm2,
    taxv2,
    wleaf,
    wv1,
    wv2,
    has_req,
    reqw,
):
    h1 = order1.shape[0]
    h2 = order2.shape[0]
    words = lm1.shape[1]
    v = np.full((h1, h2), NEG_INF)
    m = np.zeros((h1, h2))
    wt = np.full((h1, h2), NEG_INF)
    ch_v = np.zeros((h1, h2), dtype=np.uint8)
    ch_m = np.zeros((h1, h2), dtype=np.uint8)
    at1 = np.full((h1, h2), -1, dtype=np.int32)
    at2 = np.full((h1, h2), -1, dtype=np.int32)

    for p1 in range(h1):
        i1 = order1[p1]
        s1 = sing1[i1]
        for p2 in range(h2):
            i2 = order2[p2]
            s2 = sing2[i2]

            inter = np.uint64(0)
            for w in range(words):
                inter |= lm1[i1, w] & lm2[i2, w]
            if inter == np.uint64(0):
                v[i1, i2] = NEG_INF
                m[i1, i2] = 0.0
                ch_v[i1, i2] = 8
                ch_m[i1, i2] = 8
                continue

            if s1 and s2:
                # same leaf (disjoint case handled above)
                val = wleaf[tax1[i1]]
                v[i1, i2] = val
                m[i1, i2] = val
                ch_v[i1, i2] = 1
                ch_m[i1, i2] = 1
                at1[i1, i2] = rootv1[i1]
                at2[i1, i2] = rootv2[i2]
                continue

            if s1:
                # tree-1 side is the single common leaf; descend tree 2
                x = tax1[i1]
                ca = c2a_arr[i2]
                cb = c2b_arr[i2]
                va = v[i1, ca]
                vb = v[i1, cb]
                if va >= vb:
                    v[i1, i2] = wv2[rootv2[i2]] + va
                    ch_v[i1, i2] = 6
                else:
                    v[i1, i2] = wv2[rootv2[i2]] + vb
                    ch_v[i1, i2] = 7
                m[i1, i2] = wleaf[x]
                ch_m[i1, i2] = 1
                at1[i1, i2] = rootv1[i1]
                at2[i1, i2] = taxv2[x]
                continue

            if s2:
                x = tax2[i2]
                ca = c1a_arr[i1]
                cb = c1b_arr[i1]
                va = v[ca, i2]
                vb = v[cb, i2]
                if va >= vb:
                    v[i1, i2] = wv1[rootv1[i1]] + va
                    ch_v[i1, i2] = 4
                else:
                    v[i1, i2] = wv1[rootv1[i1]] + vb
                    ch_v[i1, i2] = 5
                m[i1, i2] = wleaf[x]
                ch_m[i1, i2] = 1
                at1[i1, i2] = taxv1[x]
                at2[i1, i2] = rootv2[i2]
                continue

            c1a = c1a_arr[i1]
            c1b = c1b_arr[i1]
            c2a = c2a_arr[i2]
            c2b = c2b_arr[i2]

            ok_pa = True
            ok_pb = True
            ok_d1a = True
            ok_d1b = True
            ok_d2a = True
            ok_d2b = True
            if has_req:
                for w in range(words):
                    rc = reqw[w] & lm1[i1, w] & lm2[i2, w]
                    if rc == np.uint64(0):
                        continue
                    pa = (reqw[w] & lm1[c1a, w] & lm2[c2a, w]) | (
                        reqw[w] & lm1[c1b, w] & lm2[c2b, w]
                    )
                    if pa != rc:
                        ok_pa = False
                    pb = (reqw[w] & lm1[c1a, w] & lm2[c2b, w]) | (
                        reqw[w] & lm1[c1b, w] & lm2[c2a, w]
                    )
                    if pb != rc:
                        ok_pb = False
                    if rc & lm1[c1b, w]:
                        ok_d1a = False
                    if rc & lm1[c1a, w]:
                        ok_d1b = False
                    if rc & lm2[c2b, w]:
                        ok_d2a = False
                    if rc & lm2[c2a, w]:
                        ok_d2b = False

            wa = v[c1a, c2a] + v[c1b, c2b] if ok_pa else NEG_INF
            wb = v[c1a, c2b] + v[c1b, c2a] if ok_pb else NEG_INF
            if wa >= wb:
                wt[i1, i2] = wa
            else:
                wt[i1, i2] = wb

            roots = wv1[rootv1[i1]] + wv2[rootv2[i2]]
            best = NEG_INF
            code = 0
            cand = roots + wa
            if cand > best:
                best = cand
                code = 2
            cand = roots + wb
            if cand > best:
                best = cand
                code = 3
            if ok_d1a:
                cand = wv1[rootv1[i1]] + v[c1a, i2]
                if cand > best:
                    best = cand
                    code = 4
            if ok_d1b:
                cand = wv1[rootv1[i1]] + v[c1b, i2]
                if cand > best:
                    best = cand
                    code = 5
            if ok_d2a:
                cand = wv2[rootv2[i2]] + v[i1, c2a]
                if cand > best:
                    best = cand
                    code = 6
            if ok_d2b:
                cand = wv2[rootv2[i2]] + v[i1, c2b]
                if cand > best:
                    best = cand
                    code = 7
            v[i1, i2] = best
            ch_v[i1, i2] = code

            # floating table: roots case first, then descend tree 2, tree 1
            mwa = v[c1a, c2a] + v[c1b, c2b]
            mwb = v[c1a, c2b] + v[c1b, c2a]
            mbest = roots + (mwa if mwa >= mwb else mwb)
            mcode = 2 if mwa >= mwb else 3
            ma1 = rootv1[i1]
            ma2 = rootv2[i2]
            cand = m[i1, c2a]
            if cand > mbest:
                mbest = cand
                mcode = 6
                ma1 = at1[i1, c2a]
                ma2 = at2[i1, c2a]
            cand = m[i1, c2b]
            if cand > mbest:
                mbest = cand
                mcode = 7
                ma1 = at1[i1, c2b]
                ma2 = at2[i1, c2b]
            cand = m[c1a, i2]
            if cand > mbest:
                mbest = cand
                mcode = 4
                ma1 = at1[c1a, i2]
                ma2 = at2[c1a, i2]
            cand = m[c1b, i2]
            if cand > mbest:
                mbest = cand
                mcode = 5
                ma1 = at1[c1b, i2]
                ma2 = at2[c1b, i2]
            m[i1, i2] = mbest
            ch_m[i1, i2] = mcode
            at1[i1, i2] = ma1
            at2[i1, i2] = ma2

    return v, m, wt, ch_v, ch_m, at1, at2


@njit(cache=True)
def combine_pinned(v, opp1, opp2, lm1, lm2, has_req, reqw):
    """comb[h, g] = v[h, g] + v[opp(h), opp(g)], -inf where a required taxon
    cannot fall on either side of the cut pair."""
    h1 = v.shape[0]
    h2 = v.shape[1]
    words = lm1.shape[1]
    comb = np.full((h1, h2), NEG_INF)
    for h in range(h1):
        oh = opp1[h]
        for g in range(h2):
            og = opp2[g]
            if has_req:
                ok = True
                for w in range(words):
                    cov = (lm1[h, w] & lm2[g, w]) | (lm1[oh, w] & lm2[og, w])
                    if (reqw[w] & cov) != reqw[w]:
                        ok = False
                        break
                if not ok:
                    continue
            comb[h, g] = v[h, g] + v[oh, og]
    return comb


@njit(cache=True)
def path_weights(order, sing, ca_arr, cb_arr, rootv, vmask, wv):
    """pathw[h, x] = summed weight of vertices on the path from handle h's
    root down to vertex x, inclusive of the root, exclusive of x."""
    nh = order.shape[0]
    nv = vmask.shape[1]
    pathw = np.zeros((nh, nv))
    for p in range(nh):
        h = order[p]
        if sing[h]:
            continue
        wroot = wv[rootv[h]]
        for c in (ca_arr[h], cb_arr[h]):
            for x in range(nv):
                if vmask[c, x]:
                    pathw[h, x] = wroot + pathw[c, x]
    return pathw
