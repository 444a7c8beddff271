"""Independent reference implementations used to check the package.

Nothing here imports touchcal internals beyond plain data access, and the
math deliberately takes a different route (quaternions and 4x4 homogeneous
matrices for FK, explicit loops for interpolation and the MLP) so a shared
bug cannot make both sides agree.
"""

import math

import numpy as np


def quat_about(axis, angle):
    axis = np.asarray(axis, dtype=float)
    h = 0.5 * angle
    return np.concatenate([[math.cos(h)], math.sin(h) * axis])


def quat_to_matrix(qt):
    w, x, y, z = qt
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def homogeneous(R, t):
    T = np.eye(4)
    T[:3, :3] = R
    T[:3, 3] = t
    return T


def fk_homogeneous(chain, q):
    """Fingertip by multiplying 4x4 transforms, joint rotations from quaternions."""
    T = homogeneous(chain.base_pose.rotation, chain.base_pose.translation)
    for joint, angle in zip(chain.joints, q):
        T = T @ homogeneous(joint.origin_rotation, joint.origin_translation)
        T = T @ homogeneous(quat_to_matrix(quat_about(joint.axis, angle)), np.zeros(3))
    tip = T @ np.append(chain.fingertip_offset, 1.0)
    return tip[:3]


def fd_jacobian(f, q, h=1e-6):
    q = np.asarray(q, dtype=float)
    cols = []
    for j in range(len(q)):
        dq = np.zeros_like(q)
        dq[j] = h
        cols.append((f(q + dq) - f(q - dq)) / (2 * h))
    return np.column_stack(cols)


def clamp_scalar(v, lo, hi):
    if v < lo:
        return lo
    if v > hi:
        return hi
    return v


def bilinear_loop(xs, ys, z, x, y):
    """Cell found by linear scan; edge cells extend outward."""
    i = 0
    while i < len(xs) - 2 and x >= xs[i + 1]:
        i += 1
    j = 0
    while j < len(ys) - 2 and y >= ys[j + 1]:
        j += 1
    return bilinear_in_cell(xs, ys, z, i, j, x, y)


def bilinear_in_cell(xs, ys, z, i, j, x, y):
    """The bilinear patch of cell (i, j) evaluated at (x, y), written as the
    weighted sum over the four corners by their opposite sub-rectangle areas."""
    x0, x1, y0, y1 = xs[i], xs[i + 1], ys[j], ys[j + 1]
    area = (x1 - x0) * (y1 - y0)
    return (z[i][j] * (x1 - x) * (y1 - y) + z[i + 1][j] * (x - x0) * (y1 - y)
            + z[i][j + 1] * (x1 - x) * (y - y0) + z[i + 1][j + 1] * (x - x0) * (y - y0)) / area


def mlp_forward_loops(weights, biases, x):
    """Neuron-by-neuron forward pass of a ReLU MLP with identity output."""
    h = [float(v) for v in x]
    for l, (W, b) in enumerate(zip(weights, biases)):
        out = []
        for k in range(W.shape[1]):
            s = float(b[k])
            for i in range(W.shape[0]):
                s += h[i] * float(W[i, k])
            if l < len(weights) - 1 and s < 0.0:
                s = 0.0
            out.append(s)
        h = out
    return np.array(h)


def mse_loops(weights, biases, X, Y):
    total = 0.0
    for x, y in zip(X, Y):
        out = mlp_forward_loops(weights, biases, x)
        total += float(np.sum((out - y) ** 2))
    return total / (len(X) * len(Y[0]))


def fd_param_gradient(weights, biases, X, Y, h=1e-5):
    """Central differences of the loop MSE for every parameter, in
    (W0, b0, W1, b1, ...) order."""
    params = [p for pair in zip(weights, biases) for p in pair]
    grads = []
    for p in params:
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            keep = p[idx]
            p[idx] = keep + h
            up = mse_loops(weights, biases, X, Y)
            p[idx] = keep - h
            down = mse_loops(weights, biases, X, Y)
            p[idx] = keep
            g[idx] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def adam_scalar_step(theta, g, lr, beta1, beta2, eps):
    """First Adam step written out: with zero moments, m_hat = g and v_hat = g^2."""
    m = (1 - beta1) * g
    v = (1 - beta2) * g * g
    m_hat = m / (1 - beta1)
    v_hat = v / (1 - beta2)
    return theta - lr * m_hat / (math.sqrt(v_hat) + eps)
