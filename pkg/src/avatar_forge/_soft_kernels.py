"""Compiled per-pixel loops for the soft silhouette (forward and backward)."""
import math

import numba
import numpy as np


@numba.njit(cache=True, inline="always")
def _softplus(x):
    # log(1 + exp(x)) without overflow
    if x > 0.0:
        return x + math.log1p(math.exp(-x))
    return math.log1p(math.exp(x))


@numba.njit(cache=True, inline="always")
def _closest_edge(t, px, py):
    """Squared distance to the nearest edge of triangle ``t`` (3, 2).

    Returns ``(d2, edge, s, dx, dy)``: ``s`` is the parameter of the closest
    point on the edge and ``(dx, dy)`` the vector from it to the pixel.
    Ties keep the lowest edge index.
    """
    best = np.inf
    be, bs, bdx, bdy = 0, 0.0, 0.0, 0.0
    for e in range(3):
        ax, ay = t[e, 0], t[e, 1]
        bx, by = t[(e + 1) % 3, 0], t[(e + 1) % 3, 1]
        abx, aby = bx - ax, by - ay
        apx, apy = px - ax, py - ay
        s = (apx * abx + apy * aby) / (abx * abx + aby * aby)
        s = min(max(s, 0.0), 1.0)
        dx, dy = apx - s * abx, apy - s * aby
        d2 = dx * dx + dy * dy
        if d2 < best:
            best, be, bs, bdx, bdy = d2, e, s, dx, dy
    return best, be, bs, bdx, bdy


@numba.njit(cache=True, inline="always")
def _inside(t, sa, px, py):
    for e in range(3):
        ax, ay = t[e, 0], t[e, 1]
        bx, by = t[(e + 1) % 3, 0], t[(e + 1) % 3, 1]
        if ((bx - ax) * (py - ay) - (by - ay) * (px - ax)) * sa < 0.0:
            return False
    return True


@numba.njit(cache=True, nogil=True)
def soft_forward(tri, area, faces, x0, x1, y0, y1, band, width, tau, floor, log_keep):
    """Accumulate ``log(1 - D_f)`` of every face into ``log_keep`` (flat, H*W)."""
    for k in range(len(faces)):
        f = faces[k]
        t = tri[f]
        sa = 1.0 if area[f] > 0 else -1.0
        for py in range(y0[k], y1[k] + 1):
            for px in range(x0[k], x1[k] + 1):
                pix = py * width + px
                if not band[pix]:
                    continue
                cx, cy = px + 0.5, py + 0.5
                d2, _, _, _, _ = _closest_edge(t, cx, cy)
                x = d2 / tau if _inside(t, sa, cx, cy) else -d2 / tau
                if x > floor:
                    log_keep[pix] -= _softplus(x)


@numba.njit(cache=True, nogil=True)
def soft_backward(tri, area, tri_idx, faces, x0, x1, y0, y1, band, width, tau, floor,
                  coef_pix, grad2):
    """Scatter dLoss/d(screen xy) into ``grad2`` (V, 2).

    ``coef_pix`` holds dLoss/dS * (1 - S) per pixel, so the chain through
    face ``f`` is ``coef * sigmoid(x) * sign / tau * d(d^2)``.
    """
    for k in range(len(faces)):
        f = faces[k]
        t = tri[f]
        sa = 1.0 if area[f] > 0 else -1.0
        for py in range(y0[k], y1[k] + 1):
            for px in range(x0[k], x1[k] + 1):
                pix = py * width + px
                if not band[pix] or coef_pix[pix] == 0.0:
                    continue
                cx, cy = px + 0.5, py + 0.5
                d2, e, s, dx, dy = _closest_edge(t, cx, cy)
                sign = 1.0 if _inside(t, sa, cx, cy) else -1.0
                x = sign * d2 / tau
                if x <= floor:
                    continue
                c = coef_pix[pix] * math.exp(-_softplus(-x)) * sign / tau
                # d(d^2)/dA = -2 (1 - s) (dx, dy), d(d^2)/dB = -2 s (dx, dy)
                va = tri_idx[f, e]
                vb = tri_idx[f, (e + 1) % 3]
                grad2[va, 0] -= 2.0 * c * (1.0 - s) * dx
                grad2[va, 1] -= 2.0 * c * (1.0 - s) * dy
                grad2[vb, 0] -= 2.0 * c * s * dx
                grad2[vb, 1] -= 2.0 * c * s * dy


@numba.njit(cache=True, nogil=True)
def contour_nearest(tri, tri_idx, faces, contour, x0, x1, y0, y1, band, inside, width,
                    best_d2, best_va, best_vb, best_s, best_d):
    """Per band pixel, the nearest front face (outside pixels) or contour edge (inside).

    ``contour[f, e]`` flags edge ``e`` of face ``f`` as a visible contour
    edge. Results go to the flat ``best_*`` arrays, which must come in with
    ``best_d2 = inf``.
    """
    for k in range(len(faces)):
        f = faces[k]
        t = tri[f]
        for py in range(y0[k], y1[k] + 1):
            for px in range(x0[k], x1[k] + 1):
                pix = py * width + px
                if not band[pix]:
                    continue
                cx, cy = px + 0.5, py + 0.5
                for e in range(3):
                    if inside[pix] and not contour[f, e]:
                        continue
                    ax, ay = t[e, 0], t[e, 1]
                    bx, by = t[(e + 1) % 3, 0], t[(e + 1) % 3, 1]
                    abx, aby = bx - ax, by - ay
                    apx, apy = cx - ax, cy - ay
                    s = (apx * abx + apy * aby) / (abx * abx + aby * aby)
                    s = min(max(s, 0.0), 1.0)
                    dx, dy = apx - s * abx, apy - s * aby
                    d2 = dx * dx + dy * dy
                    if d2 < best_d2[pix]:
                        best_d2[pix] = d2
                        best_va[pix] = tri_idx[f, e]
                        best_vb[pix] = tri_idx[f, (e + 1) % 3]
                        best_s[pix] = s
                        best_d[pix, 0] = dx
                        best_d[pix, 1] = dy
