"""System model shared by all trackers.

Near constant-velocity motion in 2D, a linear position sensor with Gaussian
noise, Poisson clutter and births that are uniform on a rectangular region of
interest, and the single-scan factors of the joint posterior (legacy factor,
new-target factor and the association consistency indicator).

States are ``[x1, x2, v1, v2]`` in metres and metres per second. Most
functions take plain numpy arrays; the small dataclasses below exist to name
the pieces and to carry invariants.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

STATE_DIM = 4
MEAS_DIM = 2
# position selection, shared by every linear update in the package
H = np.array([[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]])


class ModelError(ValueError):
    """Invalid model parameters or factor arguments."""


@dataclass(frozen=True)
class KinematicState:
    x1: float
    x2: float
    v1: float
    v2: float

    def __post_init__(self):
        if not np.all(np.isfinite(self.as_array())):
            raise ModelError("kinematic state must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.x1, self.x2, self.v1, self.v2], dtype=float)

    @classmethod
    def from_array(cls, x: Sequence[float]) -> "KinematicState":
        x = np.asarray(x, dtype=float)
        return cls(float(x[0]), float(x[1]), float(x[2]), float(x[3]))


@dataclass(frozen=True)
class Measurement:
    z1: float
    z2: float

    def as_array(self) -> np.ndarray:
        return np.array([self.z1, self.z2], dtype=float)


@dataclass
class GaussianBelief:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float).reshape(STATE_DIM)
        self.cov = symmetrize(np.asarray(self.cov, dtype=float).reshape(STATE_DIM, STATE_DIM))


@dataclass
class ParticleBelief:
    particles: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.particles = np.asarray(self.particles, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        if np.any(w < 0):
            raise ModelError("particle weights must be nonnegative")
        total = w.sum()
        if total > 0:
            w = w / total
        self.weights = w

    @property
    def count(self) -> int:
        return len(self.weights)

    def mean(self) -> np.ndarray:
        return self.weights @ self.particles


@dataclass
class PotentialTarget:
    id: int
    belief: GaussianBelief | ParticleBelief
    existence: float
    kind: Literal["legacy", "new"] = "legacy"

    def __post_init__(self):
        if not 0.0 <= self.existence <= 1.0:
            raise ModelError(f"existence probability {self.existence} outside [0, 1]")


@dataclass
class Scan:
    """Measurements of one time step; row order is the measurement index (1-based in DA vectors)."""

    k: int
    measurements: np.ndarray = field(default_factory=lambda: np.zeros((0, MEAS_DIM)))

    def __post_init__(self):
        self.measurements = np.asarray(self.measurements, dtype=float).reshape(-1, MEAS_DIM)

    def __len__(self) -> int:
        return len(self.measurements)


@dataclass(frozen=True)
class MotionModel:
    T: float
    sigma_u2: float
    p_s: float
    A: np.ndarray = field(repr=False)
    Sigma_u: np.ndarray = field(repr=False)
    # right factor F with F.T @ F = Sigma_u, reused by every particle prediction
    noise_factor: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "noise_factor", safe_cholesky(self.Sigma_u).T.copy())
        object.__setattr__(self, "_multi", {})

    def multi_step(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        """``(A^n, F_n)`` with ``F_n.T @ F_n`` the accumulated noise of ``n`` steps."""
        if n not in self._multi:
            An, Qn = np.eye(len(self.A)), np.zeros_like(self.Sigma_u)
            for _ in range(n):
                An, Qn = self.A @ An, self.A @ Qn @ self.A.T + self.Sigma_u
            self._multi[n] = (An, safe_cholesky(Qn).T.copy())
        return self._multi[n]


@dataclass(frozen=True)
class SensorModel:
    p_d: float
    sigma_v: float
    mu_c: float
    roi: tuple[float, float, float, float]  # xmin, xmax, ymin, ymax
    mu_b: float
    H: np.ndarray = field(default_factory=lambda: H.copy(), repr=False)

    def __post_init__(self):
        if not 0.0 < self.p_d <= 1.0:
            raise ModelError("p_d must lie in (0, 1]")
        if self.sigma_v <= 0:
            raise ModelError("sigma_v must be positive")
        if self.mu_c < 0 or self.mu_b < 0:
            raise ModelError("mean clutter and birth counts must be nonnegative")
        xmin, xmax, ymin, ymax = self.roi
        if not (xmax > xmin and ymax > ymin):
            raise ModelError("degenerate region of interest")

    @property
    def R(self) -> np.ndarray:
        return self.sigma_v**2 * np.eye(MEAS_DIM)

    @property
    def area(self) -> float:
        xmin, xmax, ymin, ymax = self.roi
        return (xmax - xmin) * (ymax - ymin)

    def in_roi(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        xmin, xmax, ymin, ymax = self.roi
        return (z[..., 0] >= xmin) & (z[..., 0] <= xmax) & (z[..., 1] >= ymin) & (z[..., 1] <= ymax)

    def clutter_pdf(self, z: np.ndarray) -> np.ndarray:
        return np.where(self.in_roi(z), 1.0 / self.area, 0.0)

    def birth_pdf(self, pos: np.ndarray) -> np.ndarray:
        """Birth density over position; the velocity part is handled by the trackers."""
        return np.where(self.in_roi(pos), 1.0 / self.area, 0.0)

    def clutter_intensity(self, z: np.ndarray) -> np.ndarray:
        return self.mu_c * self.clutter_pdf(z)


def build_motion_model(T: float = 1.0, sigma_u2: float = 0.1, p_s: float = 0.995) -> MotionModel:
    if T <= 0:
        raise ModelError("sampling period T must be positive")
    if sigma_u2 < 0:
        raise ModelError("sigma_u2 must be nonnegative")
    if not 0.0 < p_s <= 1.0:
        raise ModelError("p_s must lie in (0, 1]")
    I2 = np.eye(2)
    A = np.block([[I2, T * I2], [np.zeros((2, 2)), I2]])
    Q = sigma_u2 * np.block([[T**3 / 3 * I2, T**2 / 2 * I2], [T**2 / 2 * I2, T * I2]])
    A.flags.writeable = False
    Q.flags.writeable = False
    return MotionModel(T=T, sigma_u2=sigma_u2, p_s=p_s, A=A, Sigma_u=Q)


def build_sensor_model(
    p_d: float = 0.9,
    sigma_v: float = 10.0,
    mu_c: float = 10.0,
    roi: tuple[float, float, float, float] = (-750.0, 750.0, -750.0, 750.0),
    mu_b: float = 0.01,
) -> SensorModel:
    return SensorModel(p_d=p_d, sigma_v=sigma_v, mu_c=mu_c, roi=tuple(float(v) for v in roi), mu_b=mu_b)


def symmetrize(P: np.ndarray) -> np.ndarray:
    return 0.5 * (P + np.swapaxes(P, -1, -2))


def safe_cholesky(P: np.ndarray, jitter: float = 1e-9) -> np.ndarray:
    """Cholesky factor, retrying with diagonal jitter for semidefinite input."""
    P = symmetrize(np.asarray(P, dtype=float))
    n = P.shape[-1]
    eye = np.eye(n)
    for attempt in range(8):
        try:
            return np.linalg.cholesky(P + (jitter * 10**attempt if attempt else 0.0) * eye)
        except np.linalg.LinAlgError:
            continue
    # e.g. an all-zero process noise; eigen-decomposition handles it
    w, V = np.linalg.eigh(P)
    return V * np.sqrt(np.clip(w, 0.0, None))


def predict_moments(b: GaussianBelief, mm: MotionModel) -> GaussianBelief:
    A = mm.A
    return GaussianBelief(A @ b.mean, symmetrize(A @ b.cov @ A.T + mm.Sigma_u))


def predict_arrays(mean: np.ndarray, cov: np.ndarray, mm: MotionModel) -> tuple[np.ndarray, np.ndarray]:
    """Batched version of :func:`predict_moments` over leading axes."""
    A = mm.A
    return mean @ A.T, symmetrize(A @ cov @ A.T + mm.Sigma_u)


def kalman_update(
    mean: np.ndarray, cov: np.ndarray, z: np.ndarray, R: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Standard linear update with a position measurement (single state)."""
    S = H @ cov @ H.T + R
    K = np.linalg.solve(S, H @ cov).T
    mean = mean + K @ (z - H @ mean)
    cov = symmetrize(cov - K @ S @ K.T)
    return mean, cov


def sample_transition(x: np.ndarray, mm: MotionModel, rng: np.random.Generator, steps: int = 1) -> np.ndarray:
    """Draw ``A x + u`` with ``u ~ N(0, Sigma_u)``; ``x`` may carry leading batch axes.

    With ``steps > 1`` the state after that many transitions is drawn in one
    go from the exact multi-step Gaussian.
    """
    x = np.asarray(x, dtype=float)
    if steps == 1:
        A, F = mm.A, mm.noise_factor
    else:
        A, F = mm.multi_step(steps)
    out = x @ A.T
    if mm.sigma_u2 == 0:
        return out
    out += rng.standard_normal(x.shape) @ F
    return out


def measurement_likelihood(z: np.ndarray, x: np.ndarray, sm: SensorModel) -> np.ndarray:
    """Density N(z; Hx, sigma_v^2 I) with broadcasting over leading axes of ``z`` and ``x``."""
    z = np.asarray(z, dtype=float)
    x = np.asarray(x, dtype=float)
    var = sm.sigma_v**2
    d = z - x[..., :2]
    return np.exp(-0.5 * np.sum(d * d, axis=-1) / var) / (2.0 * np.pi * var)


def legacy_factor_q(x: np.ndarray, r: int, a: int, scan: Scan, sm: SensorModel) -> float:
    """Legacy PT factor for existence ``r`` and target-oriented association ``a``."""
    m_k = len(scan)
    if not 0 <= a <= m_k:
        raise ModelError(f"association index {a} outside 0..{m_k}")
    if r == 0:
        return 1.0 if a == 0 else 0.0
    if a == 0:
        return 1.0 - sm.p_d
    z = scan.measurements[a - 1]
    return float(sm.p_d * measurement_likelihood(z, x, sm) / sm.clutter_intensity(z))


def new_pt_factor_v(x: np.ndarray, r: int, b: int, z: np.ndarray, sm: SensorModel, n_legacy: int | None = None) -> float:
    """New PT factor; the dummy pdf for ``r = 0`` is represented by the constant 1."""
    if b < 0 or (n_legacy is not None and b > n_legacy):
        raise ModelError(f"measurement-oriented index {b} out of range")
    if r == 0:
        return 1.0
    if b >= 1:
        return 0.0
    z = np.asarray(z, dtype=float)
    x = np.asarray(x, dtype=float)
    return float(
        sm.p_d * sm.mu_b * sm.birth_pdf(x[:2]) * measurement_likelihood(z, x, sm) / sm.clutter_intensity(z)
    )


def consistency_indicator(a_j: int, b_m: int, j: int, m: int) -> int:
    if (a_j == m and b_m != j) or (b_m == j and a_j != m):
        return 0
    return 1


def is_valid_target_da(a: Sequence[int], m_k: int | None = None) -> bool:
    nz = [v for v in a if v != 0]
    if any(v < 0 or (m_k is not None and v > m_k) for v in a):
        return False
    return len(nz) == len(set(nz))


def is_valid_measurement_da(b: Sequence[int], j_prev: int | None = None) -> bool:
    return is_valid_target_da(b, j_prev)


def target_to_measurement_da(a: Sequence[int], m_k: int) -> list[int]:
    """The unique ``b`` consistent with a valid ``a`` (indices are 1-based, 0 = none)."""
    if not is_valid_target_da(a, m_k):
        raise ModelError(f"invalid target-oriented association vector {list(a)}")
    b = [0] * m_k
    for j, m in enumerate(a, start=1):
        if m:
            b[m - 1] = j
    return b


def measurement_to_target_da(b: Sequence[int], j_prev: int) -> list[int]:
    if not is_valid_measurement_da(b, j_prev):
        raise ModelError(f"invalid measurement-oriented association vector {list(b)}")
    a = [0] * j_prev
    for m, j in enumerate(b, start=1):
        if j:
            a[j - 1] = m
    return a


def psi_product(a: Sequence[int], b: Sequence[int]) -> int:
    """Product of all consistency indicators for a pair of DA vectors."""
    for j, a_j in enumerate(a, start=1):
        for m, b_m in enumerate(b, start=1):
            if not consistency_indicator(a_j, b_m, j, m):
                return 0
    return 1
