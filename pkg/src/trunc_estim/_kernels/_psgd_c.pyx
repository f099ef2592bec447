# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled PSGD kernel.

Same calling convention and stream consumption as ``_psgd_py.run_steps``.
Dense linear algebra is hand-written for the small matrices involved
(d is the data dimension, typically <= 10).
"""

from libc.math cimport sqrt, log1p, fabs, pow
from libc.stdlib cimport malloc, free
from libc.string cimport memcpy, memset

cdef int OK = 0
cdef int STREAM_EXHAUSTED = 1
cdef int BUDGET_EXCEEDED = 2
cdef int PROJECTION_FAILED = 3
cdef int NOT_PD = 4


cdef int cholesky(int d, const double* A, double* L) noexcept nogil:
    """Lower factor of A (row-major); returns 0 if A is not PD."""
    cdef int i, j, k
    cdef double s
    for i in range(d * d):
        L[i] = 0.0
    for i in range(d):
        for j in range(i + 1):
            s = A[i * d + j]
            for k in range(j):
                s -= L[i * d + k] * L[j * d + k]
            if i == j:
                if s <= 0.0:
                    return 0
                L[i * d + i] = sqrt(s)
            else:
                L[i * d + j] = s / L[j * d + j]
    return 1


cdef void solve_lower(int d, const double* L, const double* b, double* x) noexcept nogil:
    cdef int i, k
    cdef double s
    for i in range(d):
        s = b[i]
        for k in range(i):
            s -= L[i * d + k] * x[k]
        x[i] = s / L[i * d + i]


cdef void solve_upper_t(int d, const double* L, const double* b, double* x) noexcept nogil:
    """Solve L^T x = b for lower-triangular L."""
    cdef int i, k
    cdef double s
    for i in range(d - 1, -1, -1):
        s = b[i]
        for k in range(i + 1, d):
            s -= L[k * d + i] * x[k]
        x[i] = s / L[i * d + i]


cdef void jacobi_eig(int d, double* A, double* V, double* w) noexcept nogil:
    """Cyclic Jacobi eigen-decomposition of symmetric A (destroyed).

    On return A's diagonal holds the eigenvalues (copied to w) and the
    columns of V the eigenvectors.
    """
    cdef int i, j, k, p, q, sweep
    cdef double off, app, aqq, apq, theta, t, c, s, akp, akq, vkp, vkq
    for i in range(d):
        for j in range(d):
            V[i * d + j] = 1.0 if i == j else 0.0
    for sweep in range(100):
        off = 0.0
        for p in range(d):
            for q in range(p + 1, d):
                off += A[p * d + q] * A[p * d + q]
        if off < 1e-30:
            break
        for p in range(d):
            for q in range(p + 1, d):
                apq = A[p * d + q]
                if fabs(apq) < 1e-300:
                    continue
                app = A[p * d + p]
                aqq = A[q * d + q]
                theta = (aqq - app) / (2.0 * apq)
                if theta >= 0:
                    t = 1.0 / (theta + sqrt(1.0 + theta * theta))
                else:
                    t = -1.0 / (-theta + sqrt(1.0 + theta * theta))
                c = 1.0 / sqrt(1.0 + t * t)
                s = t * c
                for k in range(d):
                    akp = A[k * d + p]
                    akq = A[k * d + q]
                    A[k * d + p] = c * akp - s * akq
                    A[k * d + q] = s * akp + c * akq
                for k in range(d):
                    akp = A[p * d + k]
                    akq = A[q * d + k]
                    A[p * d + k] = c * akp - s * akq
                    A[q * d + k] = s * akp + c * akq
                for k in range(d):
                    vkp = V[k * d + p]
                    vkq = V[k * d + q]
                    V[k * d + p] = c * vkp - s * vkq
                    V[k * d + q] = s * vkp + c * vkq
    for i in range(d):
        w[i] = A[i * d + i]


cdef double norm2(int n, const double* x) noexcept nogil:
    cdef int i
    cdef double s = 0.0
    for i in range(n):
        s += x[i] * x[i]
    return sqrt(s)


cdef void ball(int n, double* x, const double* center, double radius) noexcept nogil:
    cdef int i
    cdef double s = 0.0, f
    for i in range(n):
        s += (x[i] - center[i]) * (x[i] - center[i])
    s = sqrt(s)
    if s <= radius:
        return
    f = radius / s
    for i in range(n):
        x[i] = center[i] + (x[i] - center[i]) * f


cdef struct Geom:
    int family
    int d
    int m
    double b
    double r
    double R
    const double* center
    double radius
    double* work   # scratch: at least 4 d*d + 2 d


cdef void apply_proj(Geom* g, int which, double* x) noexcept nogil:
    cdef int d = g.d, i, j, k
    cdef double* A = g.work
    cdef double* V = g.work + d * d
    cdef double* w = g.work + 2 * d * d
    cdef double* zero = g.work + 2 * d * d + d
    cdef double* half_eye = g.work + 2 * d * d + 2 * d
    cdef double s, floor_
    if which == 0:
        ball(g.m, x, g.center, g.radius)
        return
    if g.family == 0:
        if which == 1:
            for i in range(d):
                zero[i] = 0.0
            ball(d, x, zero, g.b)
        elif which == 2:
            for i in range(d):
                for j in range(d):
                    A[i * d + j] = 0.5 * (x[d + i * d + j] + x[d + j * d + i])
            jacobi_eig(d, A, V, w)
            floor_ = 0.5 / g.b
            for i in range(d):
                if w[i] < floor_:
                    w[i] = floor_
            for i in range(d):
                for j in range(d):
                    s = 0.0
                    for k in range(d):
                        s += V[i * d + k] * w[k] * V[j * d + k]
                    x[d + i * d + j] = s
        else:
            for i in range(d):
                for j in range(d):
                    half_eye[i * d + j] = 0.5 if i == j else 0.0
            ball(d * d, x + d, half_eye, 0.5 * g.b)
    else:
        if which == 1:
            for i in range(d):
                if x[i] < -1.0 / g.r:
                    x[i] = -1.0 / g.r
                elif x[i] > -g.r:
                    x[i] = -g.r
        else:
            for i in range(d):
                zero[i] = -1.0
            ball(d, x, zero, g.R)


cdef int feasible(Geom* g, const double* x) noexcept nogil:
    cdef int d = g.d, i, j
    cdef double s = 0.0
    cdef double* A = g.work
    cdef double* L = g.work + d * d
    for i in range(g.m):
        s += (x[i] - g.center[i]) * (x[i] - g.center[i])
    if sqrt(s) > g.radius:
        return 0
    if g.family == 0:
        if norm2(d, x) > g.b:
            return 0
        s = 0.0
        for i in range(d):
            for j in range(d):
                A[i * d + j] = 0.5 * (x[d + i * d + j] + x[d + j * d + i]) - (0.5 if i == j else 0.0)
                s += A[i * d + j] * A[i * d + j]
        if sqrt(s) > 0.5 * g.b:
            return 0
        # eig(block) >= 1/(2b)  <=>  block - I/(2b) is PSD
        for i in range(d):
            A[i * d + i] += 0.5 - 0.5 / g.b
        return cholesky(d, A, L)
    s = 0.0
    for i in range(d):
        if x[i] > -g.r or x[i] < -1.0 / g.r:
            return 0
        s += (x[i] + 1.0) * (x[i] + 1.0)
    return 1 if sqrt(s) <= g.R else 0


cdef int project(Geom* g, double* x, double* incs, double* tmp, double* prev,
                 double tol, long max_sweeps) noexcept nogil:
    """Dykstra over [Omega ball] + domain constraints; x updated in place."""
    cdef int m = g.m, nproj, i, j
    cdef long sweep
    cdef double diff
    if feasible(g, x):
        return 1
    nproj = 4 if g.family == 0 else 3
    for i in range(nproj * m):
        incs[i] = 0.0
    for sweep in range(max_sweeps):
        memcpy(prev, x, m * sizeof(double))
        for i in range(nproj):
            for j in range(m):
                tmp[j] = x[j] + incs[i * m + j]
            memcpy(x, tmp, m * sizeof(double))
            apply_proj(g, i, x)
            for j in range(m):
                incs[i * m + j] = tmp[j] - x[j]
        diff = 0.0
        for j in range(m):
            diff += (x[j] - prev[j]) * (x[j] - prev[j])
        if sqrt(diff) < tol:
            return 1
    return 0


cdef inline void stats(int family, int d, const double* z, double* out) noexcept nogil:
    cdef int i, j
    for i in range(d):
        out[i] = z[i]
    if family == 0:
        for i in range(d):
            for j in range(d):
                out[d + i * d + j] = -z[i] * z[j]


cdef inline int member(int set_code, int d, const double* z, const double[::1] w, double tau,
                       const double[::1] lo, const double[::1] hi, const long[:, ::1] exps,
                       const double[::1] coef, double thresh) noexcept nogil:
    cdef int i, k, e
    cdef double s, term
    if set_code == 0:
        return 1
    if set_code == 1:
        s = 0.0
        for i in range(d):
            s += w[i] * z[i]
        return 1 if s >= tau else 0
    if set_code == 2:
        for i in range(d):
            if z[i] < lo[i] or z[i] > hi[i]:
                return 0
        return 1
    s = 0.0
    for k in range(exps.shape[0]):
        term = coef[k]
        for i in range(d):
            e = <int> exps[k, i]
            if e == 1:
                term *= z[i]
            elif e > 1:
                term *= pow(z[i], e)
        s += term
    return 1 if s >= thresh else 0


def run_steps(int family, int d, double[::1] theta, const double[:, ::1] data,
              const long[::1] order, long step0, long n_steps, double gamma, int batch,
              const double[::1] stream, long pos, int set_code, const double[::1] w,
              double tau, const double[::1] lo, const double[::1] hi,
              const long[:, ::1] exps, const double[::1] coef, double thresh,
              double b, double r, double R, const double[::1] center, double radius,
              long budget, double tol, long max_sweeps, long tail_start,
              double[::1] tail_sum, long stride, double[:, ::1] trace_theta,
              double[::1] trace_gnorm, long[::1] trace_prop, double[::1] totals):
    cdef int m = theta.shape[0]
    cdef long nstream = stream.shape[0]
    cdef long s, t, start_pos, tries, used, row, idx
    cdef int k, i, j, status = OK
    cdef double gnorm, acc
    cdef Geom geom
    cdef double* buf = <double*> malloc((8 * m + 4 * m + 6 * d * d + 8 * d + 16) * sizeof(double))
    if buf == NULL:
        raise MemoryError()
    cdef double* v = buf
    cdef double* tz = buf + m
    cdef double* tx = buf + 2 * m
    cdef double* newt = buf + 3 * m
    cdef double* tmp = buf + 4 * m
    cdef double* prev = buf + 5 * m
    cdef double* incs = buf + 6 * m            # 4 m
    cdef double* P = buf + 10 * m              # d*d
    cdef double* U = P + d * d                 # d*d
    cdef double* mu = U + d * d                # d
    cdef double* y = mu + d                    # d
    cdef double* z = y + d                     # d
    cdef double* rate = z + d                  # d
    geom.family = family
    geom.d = d
    geom.m = m
    geom.b = b
    geom.r = r
    geom.R = R
    geom.center = &center[0]
    geom.radius = radius
    geom.work = rate + d                       # 4 d*d + 4 d

    with nogil:
        s = 0
        while s < n_steps:
            t = step0 + s + 1
            start_pos = pos
            if family == 0:
                for i in range(d):
                    for j in range(d):
                        P[i * d + j] = theta[d + i * d + j] + theta[d + j * d + i]
                if not cholesky(d, P, U):
                    status = NOT_PD
                    break
                solve_lower(d, U, &theta[0], y)
                solve_upper_t(d, U, y, mu)
            else:
                for i in range(d):
                    rate[i] = -theta[i]
                    if rate[i] <= 0:
                        status = NOT_PD
                if status != OK:
                    break
            for i in range(m):
                v[i] = 0.0
            used = 0
            for k in range(batch):
                idx = order[(t - 1) * batch + k]
                tries = 0
                while True:
                    if pos + d > nstream:
                        status = STREAM_EXHAUSTED
                        break
                    tries += 1
                    if family == 0:
                        solve_upper_t(d, U, &stream[pos], y)
                        for i in range(d):
                            z[i] = mu[i] + y[i]
                    else:
                        for i in range(d):
                            z[i] = -log1p(-stream[pos + i]) / rate[i]
                    pos += d
                    if member(set_code, d, z, w, tau, lo, hi, exps, coef, thresh):
                        break
                    if tries >= budget:
                        status = BUDGET_EXCEEDED
                        break
                if status != OK:
                    break
                used += tries
                stats(family, d, z, tz)
                stats(family, d, &data[idx, 0], tx)
                for i in range(m):
                    v[i] += tz[i] - tx[i]
            if status != OK:
                pos = start_pos
                break
            acc = 0.0
            for i in range(m):
                v[i] /= batch
                acc += v[i] * v[i]
                newt[i] = theta[i] - gamma * v[i]
            gnorm = sqrt(acc)
            if not project(&geom, newt, incs, tmp, prev, tol, max_sweeps):
                status = PROJECTION_FAILED
                pos = start_pos
                break
            for i in range(m):
                theta[i] = newt[i]
            totals[0] += acc
            totals[1] += used
            if t > tail_start:
                for i in range(m):
                    tail_sum[i] += theta[i]
            if t % stride == 0:
                row = t // stride - 1
                for i in range(m):
                    trace_theta[row, i] = theta[i]
                trace_gnorm[row] = gnorm
                trace_prop[row] = used
            s += 1
    free(buf)
    return status, s, pos
