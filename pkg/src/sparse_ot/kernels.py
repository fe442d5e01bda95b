"""Hot numeric kernels.

Loop-heavy kernels (assignment, Sinkhorn sweeps, Adam, pairwise cost) are
written in the numpy subset numba understands and wrapped with
``maybe_njit``; ``SPARSE_OT_NUMBA=0`` runs the same code as plain numpy.
The ICNN passes are always vectorised numpy: their cost is BLAS plus
exp/log1p over whole activation arrays, and numpy's SIMD ufuncs beat
numba's scalar libm calls there (see benchmarks/bench_kernels.py).

ICNN parameters live in one flat float64 vector.  ``layout`` is an int64
array with one row per layer: ``(width, offset_Wy, offset_b, offset_Wz)``;
``offset_Wz`` is -1 for the first layer.  Batches are row-major ``(B, d)``.
"""
import numpy as np

from ._accel import maybe_njit

ACT_SOFTPLUS = 0
ACT_RELU = 1
ACT_LEAKY_SOFTPLUS = 2
LEAK = 0.2


def activation(a, kind):
    """Return (value, first derivative, second derivative) elementwise."""
    if kind == ACT_RELU:
        pos = a > 0.0
        return np.maximum(a, 0.0), pos.astype(np.float64), np.zeros_like(a)
    e = np.exp(-np.abs(a))
    sp = np.log1p(e)
    sp += np.maximum(a, 0.0)
    r = 1.0 / (1.0 + e)
    sig = np.where(a >= 0.0, r, e * r)
    ds = r * (e * r)
    if kind == ACT_LEAKY_SOFTPLUS:
        return LEAK * a + (1.0 - LEAK) * sp, LEAK + (1.0 - LEAK) * sig, (1.0 - LEAK) * ds
    return sp, sig, ds


class Layers:
    """Views of each layer's weights inside the flat parameter vector."""

    __slots__ = ("Wy", "b", "Wz")

    def __init__(self, theta, layout, d):
        self.Wy, self.b, self.Wz = [], [], []
        for i, (w, oy, ob, oz) in enumerate(layout):
            self.Wy.append(theta[oy:oy + w * d].reshape(w, d))
            self.b.append(theta[ob:ob + w])
            self.Wz.append(None if i == 0 else theta[oz:oz + w * layout[i - 1][0]].reshape(w, layout[i - 1][0]))


def _forward(L, act, Y):
    posts, d1, d2 = [], [], []
    z = None
    for i in range(len(L.Wy)):
        a = Y @ L.Wy[i].T
        a += L.b[i]
        if i:
            a += z @ L.Wz[i].T
        z, s, c = activation(a, act)
        posts.append(z)
        d1.append(s)
        d2.append(c)
    return posts, d1, d2


def _input_grad(L, d1):
    n = len(L.Wy)
    delta = d1[-1]
    G = delta @ L.Wy[-1]
    for i in range(n - 1, 0, -1):
        delta = (delta @ L.Wz[i]) * d1[i - 1]
        G += delta @ L.Wy[i - 1]
    return G


def icnn_values(theta, layout, d, act, Y):
    """Network output for each row of ``Y`` (no quadratic term)."""
    posts, _, _ = _forward(Layers(theta, layout, d), act, Y)
    return posts[-1][:, 0].copy()


def icnn_value_and_input_grad(theta, layout, d, act, Y):
    """Values and gradients with respect to the input rows."""
    L = Layers(theta, layout, d)
    posts, d1, _ = _forward(L, act, Y)
    return posts[-1][:, 0].copy(), _input_grad(L, d1)


def icnn_param_grad(theta, layout, d, act, Y, wts):
    """Gradient of ``sum_b wts[b] * h(Y[b])`` with respect to ``theta``."""
    L = Layers(theta, layout, d)
    posts, d1, _ = _forward(L, act, Y)
    grad = np.zeros_like(theta)
    gL = Layers(grad, layout, d)
    abar = wts[:, None] * d1[-1]
    for i in range(len(L.Wy) - 1, -1, -1):
        gL.Wy[i][...] = abar.T @ Y
        gL.b[i][...] = abar.sum(axis=0)
        if i:
            gL.Wz[i][...] = abar.T @ posts[i - 1]
            abar = (abar @ L.Wz[i]) * d1[i - 1]
    return grad


def _mixed_reverse(L, gL, Y, V, posts, d1, d2):
    # tangent pass along V
    n = len(L.Wy)
    adots, zdots = [], []
    for i in range(n):
        adot = V @ L.Wy[i].T
        if i:
            adot += zdots[i - 1] @ L.Wz[i].T
        adots.append(adot)
        zdots.append(d1[i] * adot)
    zdot_bar = np.ones((Y.shape[0], 1))
    z_bar = None
    for i in range(n - 1, -1, -1):
        at_bar = zdot_bar * d1[i]
        a_bar = zdot_bar * adots[i] * d2[i]
        if z_bar is not None:
            a_bar += z_bar * d1[i]
        gL.Wy[i][...] = at_bar.T @ V + a_bar.T @ Y
        gL.b[i][...] = a_bar.sum(axis=0)
        if i:
            gL.Wz[i][...] = at_bar.T @ zdots[i - 1] + a_bar.T @ posts[i - 1]
            zdot_bar = at_bar @ L.Wz[i]
            z_bar = a_bar @ L.Wz[i]


def icnn_mixed_param_grad(theta, layout, d, act, Y, V):
    """Gradient of ``sum_b <V[b], grad_y h(Y[b])>`` with respect to ``theta``.

    Forward-mode tangent along ``V`` followed by reverse mode through both
    the primal and the tangent computation.
    """
    L = Layers(theta, layout, d)
    posts, d1, d2 = _forward(L, act, Y)
    grad = np.zeros_like(theta)
    _mixed_reverse(L, Layers(grad, layout, d), Y, V, posts, d1, d2)
    return grad


def icnn_mixed_step(theta, layout, d, act, Y, cotangent):
    """Fused g-player pass: returns ``(G, grad)`` where ``G`` are the input
    gradients and ``grad`` the parameter gradient of ``sum <V, G>`` with
    ``V = cotangent(G)`` computed from the same forward pass."""
    L = Layers(theta, layout, d)
    posts, d1, d2 = _forward(L, act, Y)
    G = _input_grad(L, d1)
    V = cotangent(G)
    grad = np.zeros_like(theta)
    _mixed_reverse(L, Layers(grad, layout, d), Y, V, posts, d1, d2)
    return G, grad


@maybe_njit
def adam_update(theta, grad, m, v, t, lr, beta1, beta2, eps, nonneg_mask):
    """One in-place Adam descent step followed by clipping masked entries at 0."""
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for j in range(theta.shape[0]):
        g = grad[j]
        m[j] = beta1 * m[j] + (1.0 - beta1) * g
        v[j] = beta2 * v[j] + (1.0 - beta2) * g * g
        theta[j] -= lr * (m[j] / c1) / (np.sqrt(v[j] / c2) + eps)
        if nonneg_mask[j] and theta[j] < 0.0:
            theta[j] = 0.0


# --------------------------------------------------------------------------
# transport oracles


@maybe_njit
def sq_euclidean_cost(X, Y):
    """Half squared Euclidean distances, shape (n, m).

    Built from explicit differences rather than |x|^2 + |y|^2 - 2 x.y so that
    coincident points cost exactly zero.
    """
    n = X.shape[0]
    C = np.empty((n, Y.shape[0]))
    for i in range(n):
        D = Y - X[i]
        C[i] = 0.5 * (D * D).sum(axis=1)
    return C


@maybe_njit
def _lse_rows(M):
    mx = np.empty(M.shape[0])
    out = np.empty(M.shape[0])
    for i in range(M.shape[0]):
        mx[i] = M[i].max()
        out[i] = mx[i] + np.log(np.exp(M[i] - mx[i]).sum())
    return out


@maybe_njit
def sinkhorn_log(C, log_a, log_b, eps, max_iters, tol, f0, g0):
    """Log-domain Sinkhorn from potentials (f0, g0).  Returns (f, g, iterations, marginal_error)."""
    f = f0.copy()
    g = g0.copy()
    err = np.inf
    it = 0
    b = np.exp(log_b)
    CT = C.T.copy()
    while it < max_iters:
        it += 1
        f = -eps * _lse_rows((g.reshape((1, -1)) - C) / eps + log_b.reshape((1, -1)))
        g = -eps * _lse_rows((f.reshape((1, -1)) - CT) / eps + log_a.reshape((1, -1)))
        # rows are exact right after the f-update; check columns before the g-update
        if it % 10 == 0 or it == max_iters:
            f = -eps * _lse_rows((g.reshape((1, -1)) - C) / eps + log_b.reshape((1, -1)))
            logp = (f.reshape((-1, 1)) + g.reshape((1, -1)) - C) / eps
            logp += log_a.reshape((-1, 1)) + log_b.reshape((1, -1))
            col = np.exp(logp).sum(axis=0)
            err = np.abs(col - b).sum()
            if err < tol:
                break
    return f, g, it, err


@maybe_njit
def hungarian(C):
    """Minimum-cost perfect matching for a square cost matrix.

    Shortest augmenting path with potentials, O(n^3).  Returns ``col`` with
    ``col[i]`` the column assigned to row ``i``.
    """
    n = C.shape[0]
    inf = np.inf
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=np.int64)
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, inf)
        used = np.zeros(n + 1, dtype=np.bool_)
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = inf
            j1 = 0
            for j in range(1, n + 1):
                if not used[j]:
                    cur = C[i0 - 1, j - 1] - u[i0] - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    col = np.empty(n, dtype=np.int64)
    for j in range(1, n + 1):
        col[p[j] - 1] = j - 1
    return col


def sliced_sq_w2(A, B, dirs):
    """Mean over directions of the squared 1-D W2 between sorted projections.

    Left to numpy on purpose: a batched axis sort beats the jitted per-column loop.
    """
    diff = np.sort(A @ dirs.T, axis=0) - np.sort(B @ dirs.T, axis=0)
    return float((diff * diff).mean())
