"""Pure-numpy implementation of the hot model kernels.

Signal stacks use the node-major layout (n_nodes, batch, features) so the
adjacency multiply and the coefficient multiply both reduce to single
BLAS calls on zero-copy reshapes.  The compiled backend in ``_kernels``
implements the identical contract; see ``_backend`` for selection.

Activation codes: 0 = identity, 1 = relu (subgradient 0 at the kink).
"""

import numpy as np

BACKEND_NAME = "python"

ACT_IDENTITY = 0
ACT_RELU = 1


def _shift(weights, stack):
    """Adjacency multiply of a (N, B, F) stack: one (N,N) @ (N, B*F) gemm."""
    n, b, f = stack.shape
    return (weights @ stack.reshape(n, b * f)).reshape(n, b, f)


def layer_forward(weights, x, h, activation):
    """One polynomial-filter layer on a signal stack.

    Args:
        weights: (N, N) adjacency.
        x: (N, B, F_in) input stack.
        h: (K, F_in, F_out) filter coefficients.
        activation: ACT_IDENTITY or ACT_RELU.

    Returns:
        (out, taps, mask) with out (N, B, F_out), taps (K, N, B, F_in)
        holding the k-hop diffusions of x (taps[0] is x itself), and mask
        the uint8 relu gate (None for identity).
    """
    k_taps = h.shape[0]
    n, b, f_in = x.shape
    taps = np.empty((k_taps, n, b, f_in), dtype=np.float64)
    taps[0] = x
    for k in range(1, k_taps):
        taps[k] = _shift(weights, taps[k - 1])
    f_out = h.shape[2]
    y = np.zeros((n, b, f_out), dtype=np.float64)
    flat = y.reshape(n * b, f_out)
    for k in range(k_taps):
        flat += taps[k].reshape(n * b, f_in) @ h[k]
    if activation == ACT_RELU:
        mask = (y > 0.0).astype(np.uint8)
        y *= mask
        return y, taps, mask
    return y, taps, None


def layer_backward(weights, h, taps, mask, d_out):
    """Adjoint of :func:`layer_forward`.

    Returns (grad_h, d_x): grad_h (K, F_in, F_out) summed over the batch
    axis, d_x (N, B, F_in).  Relies on the adjacency being symmetric.
    """
    k_taps, n, b, f_in = taps.shape
    f_out = h.shape[2]
    if mask is not None:
        d_out = d_out * mask
    d_flat = d_out.reshape(n * b, f_out)
    grad_h = np.empty_like(h)
    for k in range(k_taps):
        grad_h[k] = taps[k].reshape(n * b, f_in).T @ d_flat
    # d_x = sum_k W^k (d_out H_k^T), accumulated innermost-first
    d_x = (d_flat @ h[k_taps - 1].T).reshape(n, b, f_in)
    for k in range(k_taps - 2, -1, -1):
        d_x = _shift(weights, d_x)
        d_x += (d_flat @ h[k].T).reshape(n, b, f_in)
    return grad_h, d_x


def model_forward(weights, x, hs, acts):
    """Full network forward pass on a (N, B, F0) stack.

    Returns (out, taps_list, mask_list) where the lists hold one entry
    per layer, as produced by :func:`layer_forward`.
    """
    taps_list = []
    mask_list = []
    cur = x
    for h, act in zip(hs, acts):
        cur, taps, mask = layer_forward(weights, cur, h, act)
        taps_list.append(taps)
        mask_list.append(mask)
    return cur, taps_list, mask_list


def model_backward(weights, hs, acts, taps_list, mask_list, d_out):
    """Reverse pass matching :func:`model_forward`.

    Returns (grad_hs, d_x): per-layer coefficient gradients summed over
    the batch, and the gradient with respect to the input stack.
    """
    grad_hs = [None] * len(hs)
    cur = d_out
    for l in range(len(hs) - 1, -1, -1):
        grad_hs[l], cur = layer_backward(weights, hs[l], taps_list[l], mask_list[l], cur)
    return grad_hs, cur
