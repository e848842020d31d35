"""Pure-NumPy reference implementation of the affine scan kernel.

Semantics match sdesem._scan exactly (same operation order per step, same
return convention); this backend is selected when the compiled extension
is unavailable.
"""

import numpy as np


def affine_scan(phi, w, x0, thin, blow, out):
    """Run the scan; return -1 on success or the 0-based index of the
    first step whose state is non-finite or exceeds `blow` in magnitude."""
    n_keep = out.shape[0]
    x = x0.copy()
    out[0] = x0
    step = 0
    for k in range(1, n_keep):
        for _ in range(thin):
            # einsum keeps the scalar accumulation order of the compiled
            # kernel (ascending j, no FMA); BLAS matvec does not
            y = w[step] + np.einsum("ij,j->i", phi, x)
            m = np.abs(y).max()
            if not m <= blow:  # catches NaN as well
                return step
            x = y
            step += 1
        out[k] = x
    return -1
