"""Hot loops with a numba path and a pure-numpy path.

``AHR_DISABLE_NUMBA=1`` (or numba being unavailable) selects the numpy
implementations. Both paths accumulate in the same order, so they agree
bit for bit; the tests check that.
"""
import os

import numpy as np

DISABLED = os.environ.get("AHR_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes")

try:
    from numba import njit
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and not DISABLED

# status codes returned by rfa_integrate
OK = 0
COINCIDENT = 1
DIVERGED = 2


# ---------------------------------------------------------------- numpy path

def _forces_numpy(movers, frozen, zeta, min_dist):
    """Repulsive force on each mover from every frozen point and every other mover.

    Returns (forces, offending_mover); offending_mover >= 0 when a pair is
    closer than ``min_dist``.
    """
    k, m = movers.shape
    forces = np.zeros((k, m))
    sources = np.concatenate((frozen, movers), axis=0)
    nf = frozen.shape[0]
    for s in range(sources.shape[0]):
        d = movers - sources[s]
        r2 = np.zeros(k)
        for c in range(m):
            r2 += d[:, c] * d[:, c]
        if s >= nf:
            r2[s - nf] = np.inf  # no self-interaction
        r = np.sqrt(r2)
        close = np.nonzero(r < min_dist)[0]
        if close.size:
            return forces, int(close[0])
        scale = zeta / (r2 * r)
        forces += d * scale[:, None]
    return forces, -1


def _rfa_integrate_numpy(pos, vel, frozen, zeta, mass, dt, damping, start, steps, bound, min_dist):
    for t in range(start, steps):
        forces, bad = _forces_numpy(pos, frozen, zeta, min_dist)
        if bad >= 0:
            return COINCIDENT, t, bad
        vel *= damping
        vel += forces / mass * dt
        pos += vel * dt
        far = np.nonzero(np.abs(pos).max(axis=1) > bound)[0] if pos.size else []
        if len(far) or not np.all(np.isfinite(pos)):
            return DIVERGED, t, int(far[0]) if len(far) else 0
    return OK, steps, -1


def _sq_dists_numpy(z, centroids):
    n, m = z.shape
    out = np.zeros((n, centroids.shape[0]))
    for c in range(m):
        diff = z[:, c:c + 1] - centroids[None, :, c]
        out += diff * diff
    return out


def _nearest_numpy(z, centroids):
    # argmin returns the first minimum, i.e. the lowest centroid index on ties
    return np.argmin(_sq_dists_numpy(z, centroids), axis=1)


# ---------------------------------------------------------------- numba path

if HAVE_NUMBA:

    @njit(cache=True)
    def _forces_numba(movers, frozen, zeta, min_dist):
        k, m = movers.shape
        nf = frozen.shape[0]
        forces = np.zeros((k, m))
        d = np.empty(m)
        for s in range(nf + k):
            for a in range(k):
                if s >= nf and s - nf == a:
                    continue
                r2 = 0.0
                for c in range(m):
                    src = frozen[s, c] if s < nf else movers[s - nf, c]
                    d[c] = movers[a, c] - src
                    r2 += d[c] * d[c]
                r = np.sqrt(r2)
                if r < min_dist:
                    return forces, a
                scale = zeta / (r2 * r)
                for c in range(m):
                    forces[a, c] += d[c] * scale
        return forces, -1

    @njit(cache=True)
    def _rfa_integrate_numba(pos, vel, frozen, zeta, mass, dt, damping, start, steps, bound, min_dist):
        k, m = pos.shape
        for t in range(start, steps):
            forces, bad = _forces_numba(pos, frozen, zeta, min_dist)
            if bad >= 0:
                return COINCIDENT, t, bad
            for a in range(k):
                for c in range(m):
                    vel[a, c] *= damping
                    vel[a, c] += forces[a, c] / mass * dt
                    pos[a, c] += vel[a, c] * dt
            for a in range(k):
                for c in range(m):
                    if not np.isfinite(pos[a, c]) or abs(pos[a, c]) > bound:
                        return DIVERGED, t, a
        return OK, steps, -1

    @njit(cache=True)
    def _sq_dists_numba(z, centroids):
        n, m = z.shape
        k = centroids.shape[0]
        out = np.zeros((n, k))
        for c in range(m):
            for i in range(n):
                for j in range(k):
                    diff = z[i, c] - centroids[j, c]
                    out[i, j] += diff * diff
        return out

    @njit(cache=True)
    def _nearest_numba(z, centroids):
        d = _sq_dists_numba(z, centroids)
        n, k = d.shape
        out = np.empty(n, dtype=np.int64)
        for i in range(n):
            best = 0
            for j in range(1, k):
                if d[i, j] < d[i, best]:
                    best = j
            out[i] = best
        return out

else:  # pragma: no cover
    _forces_numba = _forces_numpy
    _rfa_integrate_numba = _rfa_integrate_numpy
    _sq_dists_numba = _sq_dists_numpy
    _nearest_numba = _nearest_numpy


BACKENDS = {
    "numpy": dict(
        forces=_forces_numpy,
        rfa_integrate=_rfa_integrate_numpy,
        sq_dists=_sq_dists_numpy,
        nearest=_nearest_numpy,
    ),
    "numba": dict(
        forces=_forces_numba,
        rfa_integrate=_rfa_integrate_numba,
        sq_dists=_sq_dists_numba,
        nearest=_nearest_numba,
    ),
}
BACKEND = "numba" if USE_NUMBA else "numpy"


def get(name, backend=None):
    return BACKENDS[backend or BACKEND][name]


def _c(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def pairwise_forces(movers, frozen, zeta, min_dist=0.0, backend=None):
    m = _c(movers)
    f = _c(frozen).reshape(-1, m.shape[1])
    return get("forces", backend)(m, f, float(zeta), float(min_dist))


def rfa_integrate(pos, vel, frozen, zeta, mass, dt, damping, start, steps, bound, min_dist, backend=None):
    """Advance ``pos``/``vel`` in place from step ``start`` to ``steps``.

    Returns (status, step, mover_index).
    """
    status, t, idx = get("rfa_integrate", backend)(
        pos, vel, _c(frozen).reshape(-1, pos.shape[1]), float(zeta), float(mass),
        float(dt), float(damping), int(start), int(steps), float(bound), float(min_dist),
    )
    return int(status), int(t), int(idx)


def sq_dists(z, centroids, backend=None):
    return get("sq_dists", backend)(_c(z), _c(centroids))


def nearest(z, centroids, backend=None):
    return np.asarray(get("nearest", backend)(_c(z), _c(centroids)), dtype=np.int64)
