"""Federated objectives ``F = sum_i F_i`` with ``F_i(theta) = E_xi f_i(theta, xi)``.

Each objective evaluates all ``N`` devices at once. Points carry a leading
batch shape (``theta`` is ``(..., d)``) and per-device results add a device
axis (``(..., N)``). The stochastic sample ``xi`` is an explicit array made by
:meth:`Objective.make_xi` from uniform draws, so the two loss queries of a
round can reuse the same sample.

Gradients and Hessians are analytic and serve diagnostics and validators
only; the zero-order algorithm never sees them. The constants ``L``,
``alpha1`` and the per-device Lipschitz bounds are derived in closed form
from the task parameters. Constants that depend on the iterate norm are
certified on the ball of radius ``region_radius`` around ``theta0``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

REGION_RADIUS = 10.0


def _spectral_norms(mats: np.ndarray) -> np.ndarray:
    # symmetric input; eigvalsh is exact enough and cheaper than svd
    return np.abs(np.linalg.eigvalsh(mats)).max(axis=-1)


class Objective:
    kind = "abstract"
    #: trailing dims of one device's xi sample
    xi_event_ndim = 0
    #: uniforms consumed per device per round
    xi_width = 1

    N: int
    d: int
    theta0: np.ndarray
    region_radius: float
    known_minimum: float | None
    L: float
    alpha1: float
    lipschitz: np.ndarray
    lipschitz_sq: np.ndarray

    # -- per-device primitives, implemented by subclasses ------------------
    def device_values(self, theta) -> np.ndarray:
        raise NotImplementedError

    def device_grads(self, theta) -> np.ndarray:
        raise NotImplementedError

    def device_hessians(self, theta) -> np.ndarray:
        raise NotImplementedError

    def make_xi(self, u: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def sample_losses(self, theta, xi) -> np.ndarray:
        raise NotImplementedError

    def sample_grads(self, theta, xi) -> np.ndarray:
        raise NotImplementedError

    def subset(self, indices) -> "Objective":
        raise NotImplementedError

    def params(self) -> dict:
        return {}

    # -- global quantities -------------------------------------------------
    def value(self, theta) -> np.ndarray:
        return self.device_values(theta).sum(axis=-1)

    def grad(self, theta) -> np.ndarray:
        return self.device_grads(theta).sum(axis=-2)

    def hessian(self, theta) -> np.ndarray:
        return self.device_hessians(theta).sum(axis=0)

    @property
    def L_xi(self) -> float:
        """``max_i E[L_xi_i**2]``, the squared-Lipschitz constant of the analysis."""
        return float(self.lipschitz_sq.max())

    @property
    def devices(self) -> list["DeviceTask"]:
        return [DeviceTask(self.subset([i]), i + 1) for i in range(self.N)]

    def device(self, device_id: int) -> "DeviceTask":
        if not 1 <= device_id <= self.N:
            raise ConfigError(f"device id must lie in 1..{self.N}")
        return DeviceTask(self.subset([device_id - 1]), device_id)

    def xi_for_device(self, xi, device_id: int) -> np.ndarray:
        axis = xi.ndim - 1 - self.xi_event_ndim
        return np.take(xi, device_id - 1, axis=axis)

    def in_region(self, theta) -> bool:
        return bool(np.linalg.norm(np.asarray(theta) - self.theta0) <= self.region_radius)

    def describe(self) -> dict:
        return {
            "kind": self.kind,
            "N": self.N,
            "d": self.d,
            "L": self.L,
            "alpha1": self.alpha1,
            "L_xi": self.L_xi,
            "lipschitz": self.lipschitz.tolist(),
            "known_minimum": self.known_minimum,
            "region_radius": self.region_radius,
            **self.params(),
        }


@dataclass(frozen=True)
class DeviceTask:
    """One device's view of an objective (``device_id`` is 1-based)."""

    objective: Objective
    device_id: int

    def loss(self, theta, xi) -> float:
        xi = np.expand_dims(np.asarray(xi), axis=np.ndim(xi) - self.objective.xi_event_ndim)
        return self.objective.sample_losses(theta, xi)[..., 0]

    def value(self, theta):
        return self.objective.device_values(theta)[..., 0]

    def grad(self, theta):
        return self.objective.device_grads(theta)[..., 0, :]

    def hessian(self, theta):
        return self.objective.device_hessians(theta)[0]

    @property
    def lipschitz(self) -> float:
        return float(self.objective.lipschitz[0])

    @property
    def hessian_bound(self) -> float:
        return self.objective.alpha1


# ---------------------------------------------------------------------------
# quadratic
# ---------------------------------------------------------------------------


class QuadraticObjective(Objective):
    """``F_i(theta) = 1/2 (theta - m_i)^T A_i (theta - m_i)``.

    The sample ``xi`` adds zero-mean uniform noise of standard deviation
    ``noise`` to each loss value.
    """

    kind = "quadratic"
    xi_event_ndim = 0
    xi_width = 1

    def __init__(self, A, m, theta0=None, noise: float = 0.0, region_radius: float = REGION_RADIUS):
        A = np.asarray(A, dtype=np.float64)
        m = np.asarray(m, dtype=np.float64)
        if A.ndim != 3 or m.ndim != 2 or A.shape[:2] != (m.shape[0], m.shape[1]) or A.shape[1] != A.shape[2]:
            raise ConfigError("expected A of shape (N, d, d) and m of shape (N, d)")
        if not np.allclose(A, np.swapaxes(A, 1, 2)):
            raise ConfigError("curvature matrices must be symmetric")
        if np.linalg.eigvalsh(A).min() < -1e-12:
            raise ConfigError("curvature matrices must be positive semidefinite")
        self.A, self.m = A, m
        self.N, self.d = m.shape
        self.noise = float(noise)
        self.region_radius = float(region_radius)

        A_sum = A.sum(axis=0)
        b_sum = np.einsum("nij,nj->i", A, m)
        self.minimizer = np.linalg.lstsq(A_sum, b_sum, rcond=None)[0]
        self.known_minimum = float(self.value(self.minimizer))
        self.theta0 = self.minimizer.copy() if theta0 is None else np.asarray(theta0, dtype=np.float64)

        norms = _spectral_norms(A)
        self.alpha1 = float(norms.max())
        self.L = float(_spectral_norms(A_sum[None])[0])
        reach = np.linalg.norm(self.theta0 - m, axis=1) + self.region_radius
        self.lipschitz = norms * reach
        self.lipschitz_sq = self.lipschitz**2

    def device_values(self, theta):
        diff = np.asarray(theta)[..., None, :] - self.m
        return 0.5 * np.einsum("...ni,nij,...nj->...n", diff, self.A, diff)

    def device_grads(self, theta):
        diff = np.asarray(theta)[..., None, :] - self.m
        return np.einsum("nij,...nj->...ni", self.A, diff)

    def device_hessians(self, theta):
        return self.A.copy()

    def make_xi(self, u):
        return self.noise * math.sqrt(3.0) * (2.0 * u[..., 0] - 1.0)

    def sample_losses(self, theta, xi):
        return self.device_values(theta) + xi

    def sample_grads(self, theta, xi):
        # additive loss noise leaves the gradient untouched
        g = self.device_grads(theta)
        return np.broadcast_to(g, np.broadcast_shapes(g.shape, np.shape(xi) + (self.d,))).copy()

    def subset(self, indices):
        idx = list(indices)
        return QuadraticObjective(self.A[idx], self.m[idx], self.theta0, self.noise, self.region_radius)

    def params(self):
        return {"noise": self.noise}


def make_quadratic_task(d: int, N: int, seed: int, noise: float = 0.1,
                        eig_range=(0.2, 1.0), start_distance: float = 3.0) -> QuadraticObjective:
    """Random heterogeneous quadratics with ``A_i`` eigenvalues in ``eig_range``.

    ``theta0`` is placed at ``start_distance`` from the global minimizer, so
    the whole descent path lies inside the certified region.
    """
    if d < 1 or N < 1:
        raise ConfigError("quadratic task needs d >= 1 and N >= 1")
    rng = np.random.default_rng(seed)
    A = np.empty((N, d, d))
    for i in range(N):
        q, _ = np.linalg.qr(rng.normal(size=(d, d)))
        lam = rng.uniform(*eig_range, size=d)
        A[i] = (q * lam) @ q.T
        A[i] = 0.5 * (A[i] + A[i].T)
    m = rng.normal(size=(N, d))
    obj = QuadraticObjective(A, m, noise=noise)
    direction = rng.normal(size=d)
    theta0 = obj.minimizer + start_distance * direction / np.linalg.norm(direction)
    return QuadraticObjective(A, m, theta0=theta0, noise=noise)


# ---------------------------------------------------------------------------
# nonconvex
# ---------------------------------------------------------------------------


class NonconvexObjective(Objective):
    """``F_i(theta) = 1/2 theta^T A_i theta - b_i^T theta + c * sum_j cos(theta_j)``.

    The cosine term makes ``F`` nonconvex wherever ``N*c`` exceeds the local
    curvature of ``sum_i A_i``; its third derivative is bounded by ``c``.
    The sample ``xi`` is a random linear tilt ``xi^T theta`` with
    independent components uniform on ``[-tilt, tilt]``.
    """

    kind = "nonconvex"
    xi_event_ndim = 1

    def __init__(self, A, c: float, b=None, theta0=None, tilt: float = 0.0,
                 region_radius: float = REGION_RADIUS):
        A = np.asarray(A, dtype=np.float64)
        if A.ndim != 3 or A.shape[1] != A.shape[2]:
            raise ConfigError("expected A of shape (N, d, d)")
        if not np.allclose(A, np.swapaxes(A, 1, 2)):
            raise ConfigError("curvature matrices must be symmetric")
        if c < 0 or tilt < 0:
            raise ConfigError("cosine weight and tilt must be nonnegative")
        self.A = A
        self.N, self.d = A.shape[0], A.shape[1]
        self._A_rows = A.reshape(self.N * self.d, self.d)
        self.c = float(c)
        self.b = np.zeros((self.N, self.d)) if b is None else np.asarray(b, dtype=np.float64)
        self.tilt = float(tilt)
        self.theta0 = np.zeros(self.d) if theta0 is None else np.asarray(theta0, dtype=np.float64)
        self.region_radius = float(region_radius)
        self.known_minimum = None

        norms = _spectral_norms(A)
        self.alpha1 = float(norms.max()) + self.c
        self.L = float(_spectral_norms(A.sum(axis=0)[None])[0]) + self.N * self.c
        radius = np.linalg.norm(self.theta0) + self.region_radius
        base = norms * radius + np.linalg.norm(self.b, axis=1) + self.c * math.sqrt(self.d)
        self.lipschitz = base + self.tilt * math.sqrt(self.d)
        # E[(G + |xi|)^2] <= (G + sqrt(E|xi|^2))^2 with E|xi|^2 = d tilt^2 / 3
        self.lipschitz_sq = (base + self.tilt * math.sqrt(self.d / 3.0)) ** 2
        self.xi_width = self.d

    def _apply_A(self, theta):
        # stacked (N*d, d) product is much faster than einsum for small d
        flat = theta @ self._A_rows.T
        return flat.reshape(theta.shape[:-1] + (self.N, self.d))

    def device_values(self, theta):
        theta = np.asarray(theta, dtype=np.float64)
        At = self._apply_A(theta)
        quad = 0.5 * (At * theta[..., None, :]).sum(axis=-1)
        lin = theta @ self.b.T
        return quad - lin + self.c * np.cos(theta).sum(axis=-1)[..., None]

    def device_grads(self, theta):
        theta = np.asarray(theta, dtype=np.float64)
        return self._apply_A(theta) - self.b - self.c * np.sin(theta)[..., None, :]

    def device_hessians(self, theta):
        return self.A - self.c * np.diag(np.cos(np.asarray(theta)))[None]

    def make_xi(self, u):
        return self.tilt * (2.0 * u - 1.0)

    def sample_losses(self, theta, xi):
        theta = np.asarray(theta, dtype=np.float64)
        return self.device_values(theta) + (xi * theta[..., None, :]).sum(axis=-1)

    def sample_grads(self, theta, xi):
        return self.device_grads(theta) + xi

    def subset(self, indices):
        idx = list(indices)
        return NonconvexObjective(self.A[idx], self.c, self.b[idx], self.theta0, self.tilt, self.region_radius)

    def params(self):
        return {"c": self.c, "tilt": self.tilt}


def make_nonconvex_task(d: int, N: int, seed: int, c: float = 1.0, tilt: float = 0.1,
                        eig_range=(0.2, 1.0), linear_scale: float = 0.5,
                        start_scale: float = 2.0) -> NonconvexObjective:
    if d < 1 or N < 1:
        raise ConfigError("nonconvex task needs d >= 1 and N >= 1")
    rng = np.random.default_rng(seed)
    A = np.empty((N, d, d))
    for i in range(N):
        q, _ = np.linalg.qr(rng.normal(size=(d, d)))
        lam = rng.uniform(*eig_range, size=d)
        A[i] = (q * lam) @ q.T
        A[i] = 0.5 * (A[i] + A[i].T)
    b = linear_scale * rng.normal(size=(N, d))
    theta0 = start_scale * rng.normal(size=d)
    return NonconvexObjective(A, c, b=b, theta0=theta0, tilt=tilt)


# ---------------------------------------------------------------------------
# logistic regression
# ---------------------------------------------------------------------------


class LogisticObjective(Objective):
    """Mean logistic loss per device; ``xi`` is a mini-batch of sample indices
    drawn uniformly with replacement."""

    kind = "logistic"
    xi_event_ndim = 1

    def __init__(self, X, y, batch_size: int = 10, theta0=None, region_radius: float = REGION_RADIUS):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if X.ndim != 3 or y.shape != X.shape[:2]:
            raise ConfigError("expected X of shape (N, n, d) and y of shape (N, n)")
        if not np.all(np.abs(y) == 1):
            raise ConfigError("labels must be +-1")
        if batch_size < 1:
            raise ConfigError("batch size must be >= 1")
        self.X, self.y = X, y
        self.N, self.n, self.d = X.shape
        self.batch_size = int(batch_size)
        self.xi_width = self.batch_size
        self.theta0 = np.zeros(self.d) if theta0 is None else np.asarray(theta0, dtype=np.float64)
        self.region_radius = float(region_radius)
        self.known_minimum = None

        gram = np.einsum("nsi,nsj->nij", X, X) / self.n
        self.alpha1 = 0.25 * float(_spectral_norms(gram).max())
        self.L = 0.25 * float(_spectral_norms(gram.sum(axis=0)[None])[0])
        r = np.linalg.norm(X, axis=2)
        self.lipschitz = r.max(axis=1)
        # mean of B i.i.d. draws of |x_s|: E[mean^2] = E[r]^2 + Var[r]/B
        self.lipschitz_sq = r.mean(axis=1) ** 2 + r.var(axis=1) / self.batch_size

    def _margins(self, theta):
        return self.y * np.einsum("nsd,...d->...ns", self.X, np.asarray(theta))

    def device_values(self, theta):
        return np.logaddexp(0.0, -self._margins(theta)).mean(axis=-1)

    def device_grads(self, theta):
        w = -self.y * _sigmoid(-self._margins(theta))
        return np.einsum("...ns,nsd->...nd", w, self.X) / self.n

    def device_hessians(self, theta):
        s = _sigmoid(self._margins(theta))
        w = s * (1.0 - s)
        return np.einsum("ns,nsi,nsj->nij", w, self.X, self.X) / self.n

    def make_xi(self, u):
        return np.minimum((u * self.n).astype(np.int64), self.n - 1)

    def _batch(self, xi):
        dev = np.arange(self.N).reshape((self.N, 1))
        return self.X[dev, xi], self.y[dev, xi]

    def sample_losses(self, theta, xi):
        Xb, yb = self._batch(xi)
        margins = yb * np.einsum("...nbd,...d->...nb", Xb, np.asarray(theta))
        return np.logaddexp(0.0, -margins).mean(axis=-1)

    def sample_grads(self, theta, xi):
        Xb, yb = self._batch(xi)
        margins = yb * np.einsum("...nbd,...d->...nb", Xb, np.asarray(theta))
        w = -yb * _sigmoid(-margins)
        return np.einsum("...nb,...nbd->...nd", w, Xb) / self.batch_size

    def subset(self, indices):
        idx = list(indices)
        return LogisticObjective(self.X[idx], self.y[idx], self.batch_size, self.theta0, self.region_radius)

    def params(self):
        return {"samples_per_device": self.n, "batch_size": self.batch_size}


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def make_logistic_task(d: int, N: int, samples_per_device: int, seed: int,
                       batch_size: int = 10, separation: float = 1.0) -> LogisticObjective:
    """Two Gaussian blobs in ``d-1`` dimensions plus a constant bias feature,
    shuffled and split evenly (i.i.d.) across devices."""
    if d < 2:
        raise ConfigError("logistic task needs d >= 2 (features plus bias)")
    if N < 1 or samples_per_device < 1:
        raise ConfigError("logistic task needs N >= 1 and samples_per_device >= 1")
    rng = np.random.default_rng(seed)
    total = N * samples_per_device
    y = rng.choice([-1.0, 1.0], size=total)
    mu = rng.normal(size=d - 1)
    mu *= separation / np.linalg.norm(mu)
    feats = rng.normal(size=(total, d - 1)) + y[:, None] * mu
    X = np.concatenate([feats, np.ones((total, 1))], axis=1)
    return LogisticObjective(
        X.reshape(N, samples_per_device, d), y.reshape(N, samples_per_device), batch_size=batch_size
    )


TASKS = {
    "quadratic": make_quadratic_task,
    "nonconvex": make_nonconvex_task,
    "logistic": make_logistic_task,
}


def build_task(kind: str, **params) -> Objective:
    try:
        factory = TASKS[kind]
    except KeyError:
        raise ConfigError(f"unknown task kind {kind!r}; choose from {sorted(TASKS)}") from None
    return factory(**params)


def true_gradient_norm_sq(obj: Objective, theta) -> float:
    """``||grad F(theta)||^2`` from the analytic oracle (diagnostics only)."""
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (obj.d,):
        raise ConfigError(f"expected a model vector of length {obj.d}, got shape {theta.shape}")
    g = obj.grad(theta)
    return float(g @ g)
