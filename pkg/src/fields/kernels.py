"""
Batched semi-implicit stepper for the equivariant profile equation

    h_t = (1/r)(r h_r)_r - m^2 h / r^2 + (m^2 / r^2)(h - sin(2h)/2)

The linear part is implicit (constant tridiagonal matrix), the remainder
explicit. Both kernels advance h in place for up to n_steps steps and stop
early once |du| * (local spacing) exceeds du_limit.

Return value: number of steps taken, or -1 on a singular pivot or a
non-finite state.
"""
import numpy as np
from scipy.linalg import solve_banded


def tridiagonal_coefficients(r: np.ndarray, widths: np.ndarray, m: int, dt: float):
    """
    Sub-, main- and super-diagonals of I - dt * (A - m^2 / r^2) on nodes 1..M-1.

    A is the conservative operator (1/r)(r h_r)_r with mass-lumped widths.
    """
    gaps = np.diff(r)
    mid = 0.5 * (r[1:] + r[:-1])
    inner = slice(1, len(r) - 1)
    alpha = mid[1:] / (gaps[1:] * r[inner] * widths[inner])
    beta = mid[:-1] / (gaps[:-1] * r[inner] * widths[inner])
    sub = -dt * beta
    sup = -dt * alpha
    diag = 1.0 + dt * (alpha + beta) + dt * m * m / r[inner] ** 2
    return sub, diag, sup


def _explicit_part(h, r, m2, dt):
    return h + dt * m2 / r ** 2 * (h - 0.5 * np.sin(2.0 * h))


def _max_resolution_ratio(h, r, spacing, m2):
    h_r = (h[2:] - h[:-2]) / (r[2:] - r[:-2])
    du2 = h_r ** 2 + m2 * np.sin(h[1:-1]) ** 2 / r[1:-1] ** 2
    ratio = np.sqrt(du2) * spacing[1:-1]
    origin = np.sqrt(2.0 if m2 == 1 else 1.0) * abs(h[1]) / r[1] * spacing[0]
    return max(float(np.max(ratio)), origin)


def advance_radial_python(h, r, sub, diag, sup, spacing, m2, dt, n_steps, du_limit):
    """NumPy/SciPy stepper (banded solve per step)."""
    M = len(r) - 1
    banded = np.zeros((3, M - 1))
    banded[0, 1:] = sup[:-1]
    banded[1, :] = diag
    banded[2, :-1] = sub[1:]
    for step in range(n_steps):
        rhs = _explicit_part(h[1:M], r[1:M], m2, dt)
        rhs[-1] -= sup[-1] * h[M]
        try:
            h[1:M] = solve_banded((1, 1), banded, rhs)
        except (np.linalg.LinAlgError, ValueError):
            return -1
        if not np.all(np.isfinite(h)):
            return -1
        if _max_resolution_ratio(h, r, spacing, m2) > du_limit:
            return step + 1
    return n_steps


try:
    from numba import njit
    HAS_NUMBA = True

    @njit(cache=False)
    def advance_radial_numba(h, r, sub, diag, sup, spacing, m2, dt, n_steps, du_limit):
        """Thomas-algorithm stepper (JIT-compiled)."""
        M = r.shape[0] - 1
        n = M - 1
        c_prime = np.empty(n)
        inv_denom = np.empty(n)
        d_prime = np.empty(n)
        pivot = diag[0]
        if pivot == 0.0:
            return -1
        inv_denom[0] = 1.0 / pivot
        c_prime[0] = sup[0] * inv_denom[0]
        for i in range(1, n):
            pivot = diag[i] - sub[i] * c_prime[i - 1]
            if pivot == 0.0:
                return -1
            inv_denom[i] = 1.0 / pivot
            c_prime[i] = sup[i] * inv_denom[i]

        for step in range(n_steps):
            for i in range(n):
                node = i + 1
                hv = h[node]
                rhs = hv + dt * m2 / (r[node] * r[node]) * (hv - 0.5 * np.sin(2.0 * hv))
                if i == n - 1:
                    rhs -= sup[i] * h[M]
                if i == 0:
                    d_prime[0] = rhs * inv_denom[0]
                else:
                    d_prime[i] = (rhs - sub[i] * d_prime[i - 1]) * inv_denom[i]
            h[n] = d_prime[n - 1]
            for i in range(n - 2, -1, -1):
                h[i + 1] = d_prime[i] - c_prime[i] * h[i + 2]

            worst = 0.0
            factor = 2.0 if m2 == 1 else 1.0
            first = np.sqrt(factor) * abs(h[1]) / r[1] * spacing[0]
            if not np.isfinite(first):
                return -1
            worst = first
            for node in range(1, M):
                h_r = (h[node + 1] - h[node - 1]) / (r[node + 1] - r[node - 1])
                s = np.sin(h[node])
                du = np.sqrt(h_r * h_r + m2 * s * s / (r[node] * r[node])) * spacing[node]
                if not np.isfinite(du):
                    return -1
                if du > worst:
                    worst = du
            if worst > du_limit:
                return step + 1
        return n_steps

except ImportError:
    HAS_NUMBA = False
    advance_radial_numba = None


def select_radial_kernel(use_numba: bool = True):
    """Pick the JIT kernel when numba is importable and enabled."""
    if use_numba and HAS_NUMBA:
        return advance_radial_numba
    return advance_radial_python
