"""Numpy versions of the compiled kernels in ``_ext``."""
import numpy as np


def cs_apply_rows(p, v, A, m):
    out = np.zeros((m, A.shape[1]))
    np.add.at(out, p, v[:, None] * A)
    return out


def cs_apply_cols(p, v, A, m):
    out = np.zeros((A.shape[0], m))
    np.add.at(out.T, p, (A * v).T)
    return out


def argmax_abs_inner(centers, rows):
    dots = rows @ centers.T
    bucket = np.argmax(np.abs(dots), axis=1)
    best = dots[np.arange(rows.shape[0]), bucket]
    sign = np.where(best < 0, -1.0, 1.0)
    return bucket.astype(np.int64), sign
