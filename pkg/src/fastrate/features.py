"""Feature maps for linear Q-functions.

Two families live here:

* ``MountainCarFeatures``: the product of a Fourier basis in position, a
  Fourier basis in velocity and a cubic polynomial in the force.  Because
  the force enters only through ``(1, f, f^2, f^3)``, the greedy action
  for fixed ``(p, v)`` maximizes a cubic and has a closed form.
* ``ArrayFeatures``: finite state and action sets with an explicit feature
  table ``phi[s, a, :]``; ``tabular_one_hot`` builds the indicator basis.

Both expose the small interface that fitted Q-iteration needs:
``dim``, ``design(states, actions)``, ``state_cache(states)`` and
``max_q(w, cache)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, DomainError, StructureError

P_MIN, P_MAX = -1.2, 0.6
V_MIN, V_MAX = -0.07, 0.07
F_MIN, F_MAX = -1.0, 1.0

CUBIC_DEGENERATE = 1e-14
GRAM_CHUNK = 8192


def fourier_features(x, n: int) -> np.ndarray:
    """Fourier basis with ``n`` slots.

    1-based slot ``k`` holds ``cos(j x)`` with ``j = (k-1)/2`` when ``k`` is
    odd and ``sin(j x)`` with ``j = k/2`` when ``k`` is even, so the first
    slot is the constant 1.  Output shape is ``x.shape + (n,)``.
    """
    x = np.asarray(x, dtype=float)
    k = np.arange(1, n + 1)
    freq = np.where(k % 2 == 1, (k - 1) // 2, k // 2).astype(float)
    arg = x[..., None] * freq
    return np.where(k % 2 == 1, np.cos(arg), np.sin(arg))


def _check_box(x, lo, hi, name):
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise DomainError(f"{name} must be finite")
    if np.any(x < lo) or np.any(x > hi):
        raise DomainError(f"{name} outside [{lo}, {hi}]")
    return x


def position_features(p, n: int = 50) -> np.ndarray:
    return fourier_features(_check_box(p, P_MIN, P_MAX, "position"), n)


def velocity_features(v, n: int = 15) -> np.ndarray:
    return fourier_features(_check_box(v, V_MIN, V_MAX, "velocity"), n)


def force_features(f, degree: int = 3) -> np.ndarray:
    f = _check_box(f, F_MIN, F_MAX, "force")
    return f[..., None] ** np.arange(degree + 1)


def cubic_value(c: np.ndarray, f) -> np.ndarray:
    """Evaluate ``c0 + c1 f + c2 f^2 + c3 f^3`` (Horner), broadcasting over rows of ``c``."""
    c = np.asarray(c, dtype=float)
    return ((c[..., 3] * f + c[..., 2]) * f + c[..., 1]) * f + c[..., 0]


def _critical_points(c: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Real roots of ``c1 + 2 c2 f + 3 c3 f^2`` as ``(small, large)``; NaN where absent."""
    a = 3.0 * c[:, 3]
    b = 2.0 * c[:, 2]
    cc = c[:, 1]
    n = c.shape[0]
    r1 = np.full(n, np.nan)
    r2 = np.full(n, np.nan)

    quad = np.abs(c[:, 3]) >= CUBIC_DEGENERATE
    lin = ~quad & (b != 0.0)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        r1[lin] = -cc[lin] / b[lin]

        disc = b * b - 4.0 * a * cc
        ok = quad & (disc >= 0.0)
        sq = np.sqrt(np.where(ok, disc, 0.0))
        sgn = np.where(b >= 0.0, 1.0, -1.0)
        q = -0.5 * (b + sgn * sq)
        # q == 0 only when b == 0 and disc == 0, i.e. a double root at 0
        x1 = np.where(q != 0.0, q / a, 0.0)
        x2 = np.where(q != 0.0, cc / q, 0.0)
    r1[ok] = np.minimum(x1, x2)[ok]
    r2[ok] = np.maximum(x1, x2)[ok]
    return r1, r2


def maximize_cubic_batch(c: np.ndarray, lo: float = F_MIN, hi: float = F_MAX) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise maximizer of a cubic over ``[lo, hi]``.

    Candidates are the two endpoints and the real critical points inside
    the interval.  Among equal values the smallest ``f`` wins.
    """
    c = np.atleast_2d(np.asarray(c, dtype=float))
    if c.shape[-1] != 4:
        raise StructureError("cubic coefficients need 4 columns")
    if not np.all(np.isfinite(c)):
        raise DataError("cubic coefficients must be finite")
    if not lo < hi:
        raise DomainError("need lo < hi")
    r1, r2 = _critical_points(c)
    n = c.shape[0]
    cand = np.empty((n, 4))
    cand[:, 0] = lo
    cand[:, 1] = r1
    cand[:, 2] = r2
    cand[:, 3] = hi
    inside = (cand > lo) & (cand < hi)
    inside[:, [0, 3]] = True
    vals = np.where(inside, cubic_value(c[:, None, :], np.where(inside, cand, 0.0)), -np.inf)
    # candidates are sorted by f, so the first maximal column is the smallest maximizer
    best = np.argmax(vals, axis=1)
    rows = np.arange(n)
    return cand[rows, best], vals[rows, best]


def maximize_cubic(c, lo: float = F_MIN, hi: float = F_MAX) -> tuple[float, float]:
    """Maximizer and maximum of ``c0 + c1 f + c2 f^2 + c3 f^3`` on ``[lo, hi]``."""
    f, v = maximize_cubic_batch(np.asarray(c, dtype=float).reshape(1, 4), lo, hi)
    return float(f[0]), float(v[0])


class DenseDesign:
    """Design matrix held in memory."""

    def __init__(self, phi: np.ndarray):
        self.phi = np.asarray(phi, dtype=float)
        self.n, self.dim = self.phi.shape

    def gram(self) -> np.ndarray:
        return self.phi.T @ self.phi

    def rmatvec(self, y: np.ndarray) -> np.ndarray:
        return self.phi.T @ y

    def matvec(self, w: np.ndarray) -> np.ndarray:
        return self.phi @ w


class ProductDesign:
    """Rows ``kron(b_i, g_i)`` stored as the two factors.

    ``b`` holds the state part (n x m) and ``g`` the force part (n x k), so
    memory is ``n (m + k)`` instead of ``n m k``.
    """

    def __init__(self, b: np.ndarray, g: np.ndarray):
        self.b = b
        self.g = g
        self.n = b.shape[0]
        self.dim = b.shape[1] * g.shape[1]

    def rows(self, start: int, stop: int) -> np.ndarray:
        b = self.b[start:stop]
        g = self.g[start:stop]
        return (b[:, :, None] * g[:, None, :]).reshape(b.shape[0], -1)

    def gram(self) -> np.ndarray:
        out = np.zeros((self.dim, self.dim))
        for start in range(0, self.n, GRAM_CHUNK):
            x = self.rows(start, start + GRAM_CHUNK)
            out += x.T @ x
        return out

    def rmatvec(self, y: np.ndarray) -> np.ndarray:
        return (self.b.T @ (y[:, None] * self.g)).ravel()

    def matvec(self, w: np.ndarray) -> np.ndarray:
        W = w.reshape(self.b.shape[1], self.g.shape[1])
        return np.einsum("nk,nk->n", self.b @ W, self.g)


@dataclass(frozen=True)
class ProductFeatureSpec:
    """Sizes of the position, velocity and force bases."""

    n_position: int = 50
    n_velocity: int = 15
    force_degree: int = 3
    unit_rescale: bool = False

    def __post_init__(self):
        if self.n_position < 1 or self.n_velocity < 1:
            raise StructureError("basis sizes must be positive")
        if not 0 <= self.force_degree <= 3:
            raise StructureError("force degree must be in 0..3")

    @property
    def n_force(self) -> int:
        return self.force_degree + 1

    @property
    def dim(self) -> int:
        return self.n_position * self.n_velocity * self.n_force

    def flatten(self, i: int, j: int, k: int) -> int:
        """Flat index of (position i, velocity j, force k), all 0-based."""
        return (i * self.n_velocity + j) * self.n_force + k

    def unflatten(self, idx: int) -> tuple[int, int, int]:
        ij, k = divmod(int(idx), self.n_force)
        i, j = divmod(ij, self.n_velocity)
        return i, j, k


PAPER_SPEC = ProductFeatureSpec(50, 15, 3)
DESK_SPEC = ProductFeatureSpec(20, 8, 3)


@dataclass(frozen=True)
class MountainCarFeatures:
    """``phi(p, v, f) = phi_pos(p) (x) phi_vel(v) (x) (1, f, f^2, f^3)``.

    Flattening is position-major and force-minor (see ``ProductFeatureSpec.flatten``).
    With ``unit_rescale`` every feature is divided by ``sqrt(d)``, which
    bounds the Euclidean norm by 1.
    """

    spec: ProductFeatureSpec = PAPER_SPEC

    @property
    def dim(self) -> int:
        return self.spec.dim

    @property
    def scale(self) -> float:
        return 1.0 / np.sqrt(self.dim) if self.spec.unit_rescale else 1.0

    def state_features(self, p, v) -> np.ndarray:
        """``kron(phi_pos(p), phi_vel(v))`` per row, shape (n, n_p * n_v)."""
        a = position_features(p, self.spec.n_position)
        b = velocity_features(v, self.spec.n_velocity)
        out = a[..., :, None] * b[..., None, :]
        return out.reshape(out.shape[:-2] + (-1,)) * self.scale

    def __call__(self, p, v, f) -> np.ndarray:
        s = self.state_features(p, v)
        g = force_features(f, self.spec.force_degree)
        out = s[..., :, None] * g[..., None, :]
        return out.reshape(out.shape[:-2] + (-1,))

    def design(self, states: np.ndarray, actions: np.ndarray) -> ProductDesign:
        states = np.asarray(states, dtype=float)
        return ProductDesign(self.state_features(states[:, 0], states[:, 1]),
                             force_features(actions, self.spec.force_degree))

    def state_cache(self, states: np.ndarray) -> np.ndarray:
        states = np.asarray(states, dtype=float)
        return self.state_features(states[:, 0], states[:, 1])

    def cubic_from_cache(self, w: np.ndarray, cache: np.ndarray) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        if w.shape != (self.dim,):
            raise StructureError(f"weight vector must have length {self.dim}")
        c = cache @ w.reshape(-1, self.spec.n_force)
        if c.shape[-1] < 4:
            c = np.concatenate([c, np.zeros(c.shape[:-1] + (4 - c.shape[-1],))], axis=-1)
        return c

    def cubic_coefficients(self, w: np.ndarray, p, v) -> np.ndarray:
        """Coefficients ``c`` with ``<w, phi(p, v, f)> = sum_k c_k f^k``; shape ``(..., 4)``."""
        return self.cubic_from_cache(w, self.state_features(p, v))

    def max_q(self, w: np.ndarray, cache: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Greedy values and forces for the cached states."""
        f, val = maximize_cubic_batch(self.cubic_from_cache(w, cache), F_MIN, F_MAX)
        return val, f


@dataclass(frozen=True, eq=False)
class ArrayFeatures:
    """Finite state/action feature table ``phi[s, a, :]``."""

    table: np.ndarray

    def __post_init__(self):
        t = np.array(self.table, dtype=float)
        if t.ndim != 3:
            raise StructureError("feature table must have shape (S, A, d)")
        if not np.all(np.isfinite(t)):
            raise DataError("feature table must be finite")
        t.setflags(write=False)
        object.__setattr__(self, "table", t)

    @property
    def n_states(self) -> int:
        return self.table.shape[0]

    @property
    def n_actions(self) -> int:
        return self.table.shape[1]

    @property
    def dim(self) -> int:
        return self.table.shape[2]

    def __call__(self, s, a) -> np.ndarray:
        return self.table[np.asarray(s), np.asarray(a)]

    def design(self, states, actions) -> DenseDesign:
        return DenseDesign(self(states, actions))

    def state_cache(self, states) -> np.ndarray:
        return np.asarray(states, dtype=int)

    def q_table(self, w: np.ndarray) -> np.ndarray:
        """``f_w(s, a)`` for every pair, shape (S, A)."""
        w = np.asarray(w, dtype=float)
        if w.shape != (self.dim,):
            raise StructureError(f"weight vector must have length {self.dim}")
        return self.table @ w

    def max_q(self, w: np.ndarray, cache: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        q = self.q_table(w)[cache]
        a = np.argmax(q, axis=-1)
        return np.take_along_axis(q, a[..., None], axis=-1)[..., 0], a


def tabular_one_hot(mdp, h: int | None = None) -> ArrayFeatures:
    """Indicator features on ``S x A``; flat index ``s * A + a``.

    The stage ``h`` is accepted for interface symmetry; the basis is the
    same at every stage.
    """
    S, A = mdp.n_states, mdp.n_actions
    return ArrayFeatures(np.eye(S * A).reshape(S, A, S * A))
