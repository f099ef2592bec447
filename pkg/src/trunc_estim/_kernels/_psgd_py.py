"""Pure-Python PSGD kernel; reference semantics for the compiled one.

Both kernels share one calling convention (see ``run_steps``) and consume
the random stream identically, so they agree up to floating-point
round-off in the small dense linear algebra.
"""

import math

import numpy as np

# status codes shared with the compiled kernel
OK = 0
STREAM_EXHAUSTED = 1
BUDGET_EXCEEDED = 2
PROJECTION_FAILED = 3
NOT_PD = 4

FAMILY_GAUSSIAN = 0
FAMILY_EXPONENTIAL = 1

SET_FULL = 0
SET_HALFSPACE = 1
SET_BOX = 2
SET_POLY = 3


def _stats(family, d, z, out):
    if family == FAMILY_GAUSSIAN:
        out[:d] = z
        out[d:] = -np.outer(z, z).reshape(-1)
    else:
        out[:] = z


def _member(set_code, z, w, tau, lo, hi, exps, coef, thresh):
    if set_code == SET_FULL:
        return True
    if set_code == SET_HALFSPACE:
        return float(np.dot(w, z)) >= tau
    if set_code == SET_BOX:
        return bool(np.all(z >= lo) and np.all(z <= hi))
    total = 0.0
    for k in range(exps.shape[0]):
        term = coef[k]
        for j in range(exps.shape[1]):
            e = exps[k, j]
            if e:
                term *= z[j] ** e
        total += term
    return total >= thresh


def _violation(family, d, theta, b, r, R):
    if family == FAMILY_GAUSSIAN:
        block = theta[d:].reshape(d, d)
        block = 0.5 * (block + block.T)
        ev_min = np.linalg.eigvalsh(block)[0]
        return max(np.linalg.norm(theta[:d]) - b, 0.5 / b - ev_min,
                   np.linalg.norm(block - 0.5 * np.eye(d)) - 0.5 * b)
    return max(np.max(theta) + r, -1.0 / r - np.min(theta), np.linalg.norm(theta + 1.0) - R)


def _ball(x, center, radius):
    diff = x - center
    norm = np.linalg.norm(diff)
    if norm <= radius:
        return x.copy()
    return center + diff * (radius / norm)


def _projectors(family, d, b, r, R, center, radius):
    projs = [lambda x: _ball(x, center, radius)]
    if family == FAMILY_GAUSSIAN:
        half_eye = 0.5 * np.eye(d).reshape(-1)

        def lin(x):
            out = x.copy()
            out[:d] = _ball(x[:d], np.zeros(d), b)
            return out

        def eig(x):
            out = x.copy()
            block = x[d:].reshape(d, d)
            w, V = np.linalg.eigh(0.5 * (block + block.T))
            out[d:] = ((V * np.maximum(w, 0.5 / b)) @ V.T).reshape(-1)
            return out

        def frob(x):
            out = x.copy()
            out[d:] = _ball(x[d:], half_eye, 0.5 * b)
            return out

        projs += [lin, eig, frob]
    else:
        projs += [lambda x: np.clip(x, -1.0 / r, -r), lambda x: _ball(x, -np.ones(d), R)]
    return projs


def _project(theta, family, d, b, r, R, center, radius, tol, max_sweeps):
    if np.linalg.norm(theta - center) <= radius and _violation(family, d, theta, b, r, R) <= 0:
        return theta, True
    projs = _projectors(family, d, b, r, R, center, radius)
    x = theta.copy()
    incs = [np.zeros_like(x) for _ in projs]
    for _ in range(max_sweeps):
        prev = x
        for i, proj in enumerate(projs):
            y = proj(x + incs[i])
            incs[i] = x + incs[i] - y
            x = y
        if np.linalg.norm(x - prev) < tol:
            return x, True
    return x, False


def run_steps(family, d, theta, data, order, step0, n_steps, gamma, batch,
              stream, pos, set_code, w, tau, lo, hi, exps, coef, thresh,
              b, r, R, center, radius, budget, tol, max_sweeps,
              tail_start, tail_sum, stride, trace_theta, trace_gnorm, trace_prop, totals):
    """Advance PSGD from global step ``step0`` for at most ``n_steps`` steps.

    ``theta``, ``tail_sum``, trace arrays and ``totals`` (``[sum ||v||^2,
    proposals]``) are updated in place.  Returns ``(status, steps_done,
    pos)``; on ``STREAM_EXHAUSTED`` the unfinished step is rolled back and
    ``pos`` points at its first unused variate.
    """
    m = theta.shape[0]
    v = np.empty(m)
    tz = np.empty(m)
    tx = np.empty(m)
    nstream = stream.shape[0]
    for s in range(n_steps):
        t = step0 + s + 1  # 1-based index of the iterate being produced
        start_pos = pos
        if family == FAMILY_GAUSSIAN:
            block = theta[d:].reshape(d, d)
            try:
                U = np.linalg.cholesky(block + block.T)
            except np.linalg.LinAlgError:
                return NOT_PD, s, start_pos
            mu = np.linalg.solve(block + block.T, theta[:d])
        else:
            rate = -theta
            if np.any(rate <= 0):
                return NOT_PD, s, start_pos
        v[:] = 0.0
        used = 0
        for k in range(batch):
            x = data[order[(t - 1) * batch + k]]
            tries = 0
            while True:
                if pos + d > nstream:
                    return STREAM_EXHAUSTED, s, start_pos
                base = stream[pos:pos + d]
                pos += d
                tries += 1
                if family == FAMILY_GAUSSIAN:
                    z = mu + np.linalg.solve(U.T, base)
                else:
                    z = -np.log1p(-base) / rate
                if _member(set_code, z, w, tau, lo, hi, exps, coef, thresh):
                    break
                if tries >= budget:
                    return BUDGET_EXCEEDED, s, start_pos
            used += tries
            _stats(family, d, z, tz)
            _stats(family, d, x, tx)
            v += tz - tx
        v /= batch
        gnorm = math.sqrt(float(v @ v))
        new_theta, ok = _project(theta - gamma * v, family, d, b, r, R, center, radius, tol, max_sweeps)
        if not ok:
            return PROJECTION_FAILED, s, start_pos
        theta[:] = new_theta
        totals[0] += gnorm * gnorm
        totals[1] += used
        if t > tail_start:
            tail_sum += theta
        if t % stride == 0:
            row = t // stride - 1
            trace_theta[row] = theta
            trace_gnorm[row] = gnorm
            trace_prop[row] = used
    return OK, n_steps, pos
