"""Numpy implementation of the batched relation-recognition cell kernels.

Shapes: x, y are (B, d) concept embeddings, protos is (K, d) with one row
per relation prototype, w1/w2 are (2d, d) (top half applied to the concept,
bottom half to the prototype), w3/w4 are (d, d), biases are (d,). All
hidden states come back as (K, B, d).
"""

import numpy as np


def cell_forward(x, y, protos, w1, w2, w3, w4, b1, b2, b3, b4):
    """Run every cell over the batch; returns (u1, u2, u3, u4)."""
    d = x.shape[1]
    # (x ⊕ p) @ w1 split into the concept part (shared over cells) and the
    # prototype part (shared over the batch).
    u1 = np.tanh((x @ w1[:d])[None, :, :] + (protos @ w1[d:] + b1)[:, None, :])
    u2 = np.tanh((y @ w2[:d])[None, :, :] + (protos @ w2[d:] + b2)[:, None, :])
    u3 = np.tanh((u1 - y[None, :, :]) @ w3 + b3)
    u4 = np.tanh((u2 - x[None, :, :]) @ w4 + b4)
    return u1, u2, u3, u4


def cell_backward(x, y, protos, w1, w2, w3, w4, u1, u2, u3, u4, du3, du4):
    """Gradients of the cell stack w.r.t. its weights and biases.

    du3, du4 are (K, B, d) adjoints of u3, u4. Prototypes are constants:
    no gradient is produced (or needed) for them, nor for x and y.
    Returns (dw1, dw2, dw3, dw4, db1, db2, db3, db4).
    """
    d = x.shape[1]
    flat = lambda a: a.reshape(-1, d)

    dz3 = du3 * (1.0 - u3 * u3)
    dz4 = du4 * (1.0 - u4 * u4)
    d3 = u1 - y[None, :, :]
    d4 = u2 - x[None, :, :]
    dw3 = flat(d3).T @ flat(dz3)
    dw4 = flat(d4).T @ flat(dz4)
    db3 = dz3.sum(axis=(0, 1))
    db4 = dz4.sum(axis=(0, 1))

    dz1 = (dz3 @ w3.T) * (1.0 - u1 * u1)
    dz2 = (dz4 @ w4.T) * (1.0 - u2 * u2)
    dw1 = np.empty_like(w1)
    dw2 = np.empty_like(w2)
    dw1[:d] = x.T @ dz1.sum(axis=0)
    dw1[d:] = protos.T @ dz1.sum(axis=1)
    dw2[:d] = y.T @ dz2.sum(axis=0)
    dw2[d:] = protos.T @ dz2.sum(axis=1)
    db1 = dz1.sum(axis=(0, 1))
    db2 = dz2.sum(axis=(0, 1))
    return dw1, dw2, dw3, dw4, db1, db2, db3, db4
