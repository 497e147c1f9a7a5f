"""Pure-numpy implementations of the compiled kernels.

Same signatures and semantics as ``_ckernels``; used when the extension
is unavailable. Convolution is direct: one batched matrix product per
kernel offset, no im2col buffer.
"""
import numpy as np


def conv2d(x, w, bias, stride, pad_h, pad_w, groups):
    n, c, h, wd = x.shape
    o, cg, kh, kw = w.shape
    ho = (h + 2 * pad_h - kh) // stride + 1
    wo = (wd + 2 * pad_w - kw) // stride + 1
    xp = np.pad(x, ((0, 0), (0, 0), (pad_h, pad_h), (pad_w, pad_w)))
    og = o // groups
    out = np.zeros((n, o, ho, wo), dtype=np.float64)
    # depthwise: elementwise multiply-add per offset is far cheaper than per-group matmuls
    depthwise = cg == 1 and og == 1
    for i in range(kh):
        for j in range(kw):
            patch = xp[:, :, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride]
            if depthwise:
                out += w[:, 0, i, j][None, :, None, None] * patch
                continue
            for g in range(groups):
                wg = w[g * og:(g + 1) * og, :, i, j]
                pg = patch[:, g * cg:(g + 1) * cg]
                out[:, g * og:(g + 1) * og] += np.einsum("oc,nchw->nohw", wg, pg, optimize=True)
    if bias is not None:
        out += np.asarray(bias, dtype=np.float64)[None, :, None, None]
    return out


def carafe_reassemble(x, kernels, k_up, scale):
    n, c, h, w = x.shape
    r = k_up // 2
    xp = np.pad(x, ((0, 0), (0, 0), (r, r), (r, r)))
    src = x.repeat(scale, axis=2).repeat(scale, axis=3)
    # accumulate offsets from the source pixel so constant neighbourhoods add exact zeros
    acc = np.zeros_like(src)
    for a in range(k_up):
        for b in range(k_up):
            shifted = xp[:, :, a:a + h, b:b + w]
            up = shifted.repeat(scale, axis=2).repeat(scale, axis=3)
            acc += kernels[:, a * k_up + b][:, None] * (up - src)
    return src + acc


def max_pool2d(x, k, stride, pad):
    n, c, h, w = x.shape
    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)), constant_values=-np.inf)
    out = np.full((n, c, ho, wo), -np.inf)
    for i in range(k):
        for j in range(k):
            np.maximum(out, xp[:, :, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride], out=out)
    return out
