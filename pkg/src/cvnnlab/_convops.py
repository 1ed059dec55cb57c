"""Real strided cross-correlation kernels (im2col style) and their adjoints.

These are the raw numpy routines the autodiff layer records as single
operations; gradients are computed by the explicit adjoints below, with the
input adjoint being the matching transposed-convolution operator. All the
contractions are phrased as stacked matmuls so they hit BLAS.
"""

from __future__ import annotations

import numpy as np

from .ctensor import ShapeError


def out_length(length: int, k: int, stride: int, pad: int, dilation: int) -> int:
    n = (length + 2 * pad - dilation * (k - 1) - 1) // stride + 1
    if n <= 0:
        raise ShapeError(
            f"conv geometry collapses: L={length} k={k} stride={stride} "
            f"pad={pad} dilation={dilation}"
        )
    return n


def conv1d_forward(x, w, stride, pad, dilation, groups):
    """x: [B, Cin, L], w: [Cout, Cin/groups, K] -> [B, Cout, Lout]."""
    b, cin, length = x.shape
    cout, cing, k = w.shape
    if cin % groups or cout % groups or cing * groups != cin:
        raise ShapeError(f"groups={groups} incompatible with {cin}->{cout} channels")
    lout = out_length(length, k, stride, pad, dilation)
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad))) if pad else x
    col = np.empty((b, cin, k, lout))
    for i in range(k):
        start = i * dilation
        col[:, :, i, :] = xp[:, :, start : start + stride * lout : stride]
    # [1, g, Og, Cg*K] @ [B, g, Cg*K, Lout]
    colm = col.reshape(b, groups, cing * k, lout)
    wm = w.reshape(groups, cout // groups, cing * k)
    y = np.matmul(wm[None], colm)
    return y.reshape(b, cout, lout), col


def conv1d_backward(g, x, w, col, stride, pad, dilation, groups):
    """Gradients of conv1d_forward w.r.t. input and weight."""
    b, cin, length = x.shape
    cout, cing, k = w.shape
    lout = g.shape[-1]
    gm = g.reshape(b, groups, cout // groups, lout)
    colm = col.reshape(b, groups, cing * k, lout)
    wm = w.reshape(groups, cout // groups, cing * k)
    gw = np.matmul(gm, colm.transpose(0, 1, 3, 2)).sum(axis=0)
    gcol = np.matmul(wm.transpose(0, 2, 1)[None], gm)
    gcol = gcol.reshape(b, cin, k, lout)
    gxp = np.zeros((b, cin, length + 2 * pad))
    for i in range(k):
        start = i * dilation
        gxp[:, :, start : start + stride * lout : stride] += gcol[:, :, i, :]
    gx = gxp[:, :, pad : pad + length] if pad else gxp
    return gx, gw.reshape(cout, cing, k)


def conv2d_forward(x, w, stride, pad, dilation, groups):
    """x: [B, Cin, H, W], w: [Cout, Cin/groups, Kh, Kw] -> [B, Cout, Ho, Wo]."""
    b, cin, h, wdt = x.shape
    cout, cing, kh, kw = w.shape
    if cin % groups or cout % groups or cing * groups != cin:
        raise ShapeError(f"groups={groups} incompatible with {cin}->{cout} channels")
    ho = out_length(h, kh, stride, pad, dilation)
    wo = out_length(wdt, kw, stride, pad, dilation)
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    col = np.empty((b, cin, kh, kw, ho, wo))
    for i in range(kh):
        hi = i * dilation
        for j in range(kw):
            wj = j * dilation
            col[:, :, i, j] = xp[
                :, :, hi : hi + stride * ho : stride, wj : wj + stride * wo : stride
            ]
    colm = col.reshape(b, groups, cing * kh * kw, ho * wo)
    wm = w.reshape(groups, cout // groups, cing * kh * kw)
    y = np.matmul(wm[None], colm)
    return y.reshape(b, cout, ho, wo), col


def conv2d_backward(g, x, w, col, stride, pad, dilation, groups):
    b, cin, h, wdt = x.shape
    cout, cing, kh, kw = w.shape
    ho, wo = g.shape[-2:]
    gm = g.reshape(b, groups, cout // groups, ho * wo)
    colm = col.reshape(b, groups, cing * kh * kw, ho * wo)
    wm = w.reshape(groups, cout // groups, cing * kh * kw)
    gw = np.matmul(gm, colm.transpose(0, 1, 3, 2)).sum(axis=0)
    gcol = np.matmul(wm.transpose(0, 2, 1)[None], gm)
    gcol = gcol.reshape(b, cin, kh, kw, ho, wo)
    gxp = np.zeros((b, cin, h + 2 * pad, wdt + 2 * pad))
    for i in range(kh):
        hi = i * dilation
        for j in range(kw):
            wj = j * dilation
            gxp[
                :, :, hi : hi + stride * ho : stride, wj : wj + stride * wo : stride
            ] += gcol[:, :, i, j]
    gx = gxp[:, :, pad : pad + h, pad : pad + wdt] if pad else gxp
    return gx, gw.reshape(cout, cing, kh, kw)


# ---------------------------------------------------------------------------
# block layout helpers: stacked [x; y] channels, grouped per conv group


def stack_planes(x, y, groups):
    """[B, C, ...] planes -> [B, 2C, ...] with per-group [x_g; y_g] layout."""
    b, c = x.shape[:2]
    cg = c // groups
    rest = x.shape[2:]
    out = np.empty((b, groups, 2 * cg) + rest)
    xv = x.reshape(b, groups, cg, *rest)
    yv = y.reshape(b, groups, cg, *rest)
    out[:, :, :cg] = xv
    out[:, :, cg:] = yv
    return out.reshape(b, 2 * c, *rest)


def unstack_planes(s, groups):
    b, c2 = s.shape[:2]
    cg = c2 // (2 * groups)
    rest = s.shape[2:]
    sv = s.reshape(b, groups, 2 * cg, *rest)
    x = np.ascontiguousarray(sv[:, :, :cg]).reshape(b, c2 // 2, *rest)
    y = np.ascontiguousarray(sv[:, :, cg:]).reshape(b, c2 // 2, *rest)
    return x, y


def block_kernel(a, b, groups):
    """Real/imag kernels -> the [[a, -b], [b, a]] block kernel, per group."""
    cout, cing = a.shape[:2]
    og = cout // groups
    rest = a.shape[2:]
    av = a.reshape(groups, og, cing, *rest)
    bv = b.reshape(groups, og, cing, *rest)
    wb = np.empty((groups, 2 * og, 2 * cing) + rest)
    wb[:, :og, :cing] = av
    wb[:, :og, cing:] = -bv
    wb[:, og:, :cing] = bv
    wb[:, og:, cing:] = av
    return wb.reshape(2 * cout, 2 * cing, *rest)


def unblock_kernel_grad(gw, cout, cing, groups):
    """Collapse a block-kernel gradient onto the tied (a, b) kernels."""
    og = cout // groups
    gv = gw.reshape(groups, 2 * og, 2 * cing, *gw.shape[2:])
    g11 = gv[:, :og, :cing]
    g12 = gv[:, :og, cing:]
    g21 = gv[:, og:, :cing]
    g22 = gv[:, og:, cing:]
    ga = (g11 + g22).reshape(cout, cing, *gw.shape[2:])
    gb = (g21 - g12).reshape(cout, cing, *gw.shape[2:])
    return ga, gb
