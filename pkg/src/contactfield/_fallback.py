"""Pure-numpy versions of the compiled kernels in ``_kernels.pyx``."""

import numpy as np

SQRT3 = np.sqrt(3.0)


def cone_project_batch(v, normals):
    v = np.asarray(v, dtype=np.float64)
    normals = np.asarray(normals, dtype=np.float64)
    a = np.sum(v * normals, axis=1)
    t = v - a[:, None] * normals
    b = np.sqrt(np.sum(t * t, axis=1))
    out = np.zeros_like(v)
    inside = b <= SQRT3 * a
    out[inside] = v[inside]
    edge = ~inside & ~(b <= -a / SQRT3)
    astar = (a[edge] + SQRT3 * b[edge]) / 4.0
    s = SQRT3 * astar / b[edge]
    out[edge] = astar[:, None] * normals[edge] + s[:, None] * t[edge]
    return out


def admm_run(minv, q, normals, x, z, u, rho, alpha, max_iter, tol_primal, tol_dual):
    nc = normals.shape[0]
    rp = rd = np.inf
    it = 0
    while it < max_iter:
        zold = z.copy()
        x[:] = minv @ (q + rho * (z - u))
        w = alpha * x + (1.0 - alpha) * zold + u
        z[:] = cone_project_batch(w.reshape(nc, 3), normals).ravel()
        u[:] = w - z
        rp = float(np.linalg.norm(x - z))
        rd = float(rho * np.linalg.norm(z - zold))
        it += 1
        if rp < tol_primal and rd < tol_dual:
            break
    return it, rp, rd


def farthest_point_sample(points, k, start):
    points = np.asarray(points, dtype=np.float64)
    idx = np.empty(k, dtype=np.intp)
    if k == 0:
        return idx
    mind = np.full(points.shape[0], np.inf)
    best = start
    for s in range(k):
        idx[s] = best
        d = np.sum((points - points[best]) ** 2, axis=1)
        np.minimum(mind, d, out=mind)
        best = int(np.argmax(mind))
    return idx


def kernel_weighted_mean(points, cpos, cvec, lam):
    diff = cpos[None, :, :] - points[:, None, :]
    r2 = np.sum(diff * diff, axis=2)
    w = 1.0 / (1.0 + lam * lam * r2)
    wsum = w.sum(axis=1)
    mean = np.zeros((points.shape[0], 3))
    ok = wsum >= 1e-12
    mean[ok] = (w[ok] @ cvec) / wsum[ok, None]
    return mean, wsum
