"""
Closed-form diffeomorphisms and the conductivity push-forward.

Every map is identity + a smooth displacement with an exact Jacobian, so the
push-forward F sigma F^T / det F carries no differentiation noise.

Classes:
    - Diffeo: base class (apply, jacobian, Newton inverse, composition)
    - IdentityDiffeo
    - BumpShift: x + a b(x) w with the C^2 bump b = (1 - |x - c|^2 / r^2)^3
    - Twist: rotation about the vertical axis through c by the angle a b(x), det = 1
    - LinearShear: x + a (x_n - z0) w for horizontal w (fixes flat horizontal planes only)
    - ComposedDiffeo: second o first

Functions:
    - diffeo_from_spec: Build a family member from its config model
    - pushforward: Push a tensor, model or tensor field forward at given points
    - pushed_field: The pushed-forward conductivity as a callable field
"""

from typing import Callable, Union

import numpy as np
import structlog

from core.conductivity import AnisoTensor, StrataModel
from core.errors import StrataSolverError, StrataValidationError
from models.specs import DiffeoSpec

logger = structlog.get_logger(__name__)

TensorField = Callable[[np.ndarray], np.ndarray]
FieldLike = Union[AnisoTensor, StrataModel, np.ndarray, TensorField]

# max over the bump of |grad b| * r
_BUMP_GRADIENT_BOUND = 96.0 / (25.0 * np.sqrt(5.0))


class InverseMapDiverged(StrataSolverError):
    """Raised when Newton iteration for the inverse map does not converge."""
    pass


class DiffeoInvalid(StrataValidationError):
    """Raised when diffeo parameters would fold the map (det D psi <= 0)."""
    pass


def _as_points(points: np.ndarray) -> np.ndarray:
    return np.atleast_2d(np.asarray(points, dtype=float))


def _bump(points: np.ndarray, center: np.ndarray, radius: float):
    """Bump value (N,) and gradient (N, 3)."""
    d = points - center
    s = np.sum(d * d, axis=1) / radius**2
    inside = s < 1.0
    one_minus = np.where(inside, 1.0 - s, 0.0)
    value = one_minus**3
    grad = (-6.0 * one_minus**2 / radius**2)[:, None] * d
    return value, grad


class Diffeo:
    """Base class; subclasses implement apply and jacobian on (N, 3) arrays."""

    name = "diffeo"
    boundary_fixing = True

    def apply(self, points: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def jacobian(self, points: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def det_jacobian(self, points: np.ndarray) -> np.ndarray:
        return np.linalg.det(self.jacobian(points))

    def inverse(self, points: np.ndarray, tol: float = 1e-12, max_iter: int = 50) -> np.ndarray:
        """
        Newton iteration for psi^{-1}, started at the target points.

        Raises:
            InverseMapDiverged: Residual above tol * max(1, |y|) after max_iter steps
        """
        target = _as_points(points)
        x = target.copy()
        scale = np.maximum(1.0, np.linalg.norm(target, axis=1))
        for _ in range(max_iter):
            residual = self.apply(x) - target
            if np.all(np.linalg.norm(residual, axis=1) <= tol * scale):
                return x
            step = np.linalg.solve(self.jacobian(x), residual[..., None])[..., 0]
            x = x - step
        residual = np.linalg.norm(self.apply(x) - target, axis=1)
        if np.all(residual <= tol * scale):
            return x
        raise InverseMapDiverged(
            f"{self.name}: inverse residual {residual.max():.3e} after {max_iter} Newton steps"
        )

    def then(self, other: "Diffeo") -> "ComposedDiffeo":
        """other o self."""
        return ComposedDiffeo(self, other)


class IdentityDiffeo(Diffeo):
    name = "identity"

    def apply(self, points: np.ndarray) -> np.ndarray:
        return _as_points(points).copy()

    def jacobian(self, points: np.ndarray) -> np.ndarray:
        return np.repeat(np.eye(3)[None], _as_points(points).shape[0], axis=0)

    def inverse(self, points: np.ndarray, tol: float = 1e-12, max_iter: int = 50) -> np.ndarray:
        return _as_points(points).copy()


class BumpShift(Diffeo):
    """x + a b(x) w; invertible when |a| * max |grad b| < 1."""

    name = "bump_shift"

    def __init__(self, center, radius: float, amplitude: float, direction) -> None:
        self.center = np.asarray(center, dtype=float)
        self.radius = float(radius)
        self.amplitude = float(amplitude)
        w = np.asarray(direction, dtype=float)
        norm = np.linalg.norm(w)
        if norm == 0:
            raise DiffeoInvalid("bump_shift direction must be nonzero")
        self.direction = w / norm
        if abs(self.amplitude) * _BUMP_GRADIENT_BOUND / self.radius >= 1.0:
            raise DiffeoInvalid(
                f"|amplitude| must stay below radius / {_BUMP_GRADIENT_BOUND:.4f} to keep det D psi > 0"
            )

    def apply(self, points: np.ndarray) -> np.ndarray:
        x = _as_points(points)
        b, _ = _bump(x, self.center, self.radius)
        return x + self.amplitude * b[:, None] * self.direction

    def jacobian(self, points: np.ndarray) -> np.ndarray:
        x = _as_points(points)
        _, grad = _bump(x, self.center, self.radius)
        return np.eye(3)[None] + self.amplitude * np.einsum("i,nj->nij", self.direction, grad)


class Twist(Diffeo):
    """
    Rotation about the vertical axis through center by theta(x) = a b(x).

    The rotation keeps |x - center|, so theta(psi(x)) = theta(x): the map is a
    bijection with inverse rotate(y, -theta(y)) and det D psi = 1 for every
    amplitude.
    """

    name = "twist"

    def __init__(self, center, radius: float, amplitude: float) -> None:
        self.center = np.asarray(center, dtype=float)
        self.radius = float(radius)
        self.amplitude = float(amplitude)

    def _angle(self, x: np.ndarray):
        b, grad = _bump(x, self.center, self.radius)
        return self.amplitude * b, self.amplitude * grad

    def _rotate(self, x: np.ndarray, theta: np.ndarray) -> np.ndarray:
        d = x[:, :2] - self.center[:2]
        c, s = np.cos(theta), np.sin(theta)
        out = x.copy()
        out[:, 0] = self.center[0] + c * d[:, 0] - s * d[:, 1]
        out[:, 1] = self.center[1] + s * d[:, 0] + c * d[:, 1]
        return out

    def apply(self, points: np.ndarray) -> np.ndarray:
        x = _as_points(points)
        theta, _ = self._angle(x)
        return self._rotate(x, theta)

    def inverse(self, points: np.ndarray, tol: float = 1e-12, max_iter: int = 50) -> np.ndarray:
        y = _as_points(points)
        theta, _ = self._angle(y)
        return self._rotate(y, -theta)

    def jacobian(self, points: np.ndarray) -> np.ndarray:
        x = _as_points(points)
        theta, grad = self._angle(x)
        d = x[:, :2] - self.center[:2]
        c, s = np.cos(theta), np.sin(theta)
        rot = np.stack([np.stack([c, -s], axis=-1), np.stack([s, c], axis=-1)], axis=-2)
        # dR/dtheta applied to d
        rd = np.column_stack([-s * d[:, 0] - c * d[:, 1], c * d[:, 0] - s * d[:, 1]])
        jac = np.repeat(np.eye(3)[None], x.shape[0], axis=0)
        jac[:, :2, :2] = rot + np.einsum("ni,nj->nij", rd, grad[:, :2])
        jac[:, :2, 2] = rd * grad[:, 2:3]
        return jac


class LinearShear(Diffeo):
    """x + a (x_n - z0) w with horizontal w; maps each plane x_n = const to itself."""

    name = "shear"
    boundary_fixing = False

    def __init__(self, amplitude: float, direction, base_height: float = 0.0) -> None:
        w = np.asarray(direction, dtype=float).copy()
        w[2] = 0.0
        norm = np.linalg.norm(w)
        if norm == 0:
            raise DiffeoInvalid("shear direction needs a horizontal component")
        self.direction = w / norm
        self.amplitude = float(amplitude)
        self.base_height = float(base_height)

    def apply(self, points: np.ndarray) -> np.ndarray:
        x = _as_points(points)
        return x + self.amplitude * (x[:, 2:3] - self.base_height) * self.direction

    def jacobian(self, points: np.ndarray) -> np.ndarray:
        x = _as_points(points)
        jac = np.eye(3).copy()
        jac[:, 2] += self.amplitude * self.direction
        return np.repeat(jac[None], x.shape[0], axis=0)

    def inverse(self, points: np.ndarray, tol: float = 1e-12, max_iter: int = 50) -> np.ndarray:
        y = _as_points(points)
        return y - self.amplitude * (y[:, 2:3] - self.base_height) * self.direction


class ComposedDiffeo(Diffeo):
    """second o first, with D = D_second(first(x)) D_first(x)."""

    name = "composed"

    def __init__(self, first: Diffeo, second: Diffeo) -> None:
        self.first = first
        self.second = second
        self.boundary_fixing = first.boundary_fixing and second.boundary_fixing

    def apply(self, points: np.ndarray) -> np.ndarray:
        return self.second.apply(self.first.apply(points))

    def jacobian(self, points: np.ndarray) -> np.ndarray:
        x = _as_points(points)
        return self.second.jacobian(self.first.apply(x)) @ self.first.jacobian(x)

    def inverse(self, points: np.ndarray, tol: float = 1e-12, max_iter: int = 50) -> np.ndarray:
        return self.first.inverse(self.second.inverse(points, tol, max_iter), tol, max_iter)


def diffeo_from_spec(spec: DiffeoSpec) -> Diffeo:
    if spec.family == "identity":
        return IdentityDiffeo()
    if spec.family == "bump_shift":
        return BumpShift(spec.center, spec.radius, spec.amplitude, spec.direction)
    if spec.family == "twist":
        return Twist(spec.center, spec.radius, spec.amplitude)
    return LinearShear(spec.amplitude, spec.direction, base_height=spec.center[2])


def _evaluate_field(field: FieldLike, points: np.ndarray) -> np.ndarray:
    """Tensors (N, 3, 3) of a tensor, model or field at points."""
    n = points.shape[0]
    if isinstance(field, AnisoTensor):
        return np.repeat(field.matrix[None], n, axis=0)
    if isinstance(field, StrataModel):
        tags = field.region.layer_of(points)
        if np.any(tags == 0):
            raise StrataValidationError("push-forward preimage lies outside the strata region")
        return field.element_tensors(tags)
    if isinstance(field, np.ndarray):
        return np.repeat(np.asarray(field, dtype=float).reshape(1, 3, 3), n, axis=0)
    return np.asarray(field(points), dtype=float).reshape(n, 3, 3)


def pushforward(field: FieldLike, psi: Diffeo, at: np.ndarray) -> np.ndarray:
    """
    (D psi sigma D psi^T / det D psi) evaluated at psi^{-1}(at).

    Args:
        field: Constant tensor, StrataModel, 3x3 array or callable field
        psi: Diffeomorphism
        at: One point (3,) or points (N, 3)

    Returns:
        (3, 3) for a single point, (N, 3, 3) otherwise

    Raises:
        InverseMapDiverged: Newton inversion failed
    """
    at_arr = np.asarray(at, dtype=float)
    points = _as_points(at_arr)
    pre = psi.inverse(points)
    jac = psi.jacobian(pre)
    det = np.linalg.det(jac)
    if np.any(det <= 0):
        raise DiffeoInvalid("det D psi is not positive at a preimage point")
    sigma = _evaluate_field(field, pre)
    pushed = jac @ sigma @ np.transpose(jac, (0, 2, 1)) / det[:, None, None]
    pushed = 0.5 * (pushed + np.transpose(pushed, (0, 2, 1)))
    return pushed[0] if at_arr.ndim == 1 else pushed


def pushed_field(field: FieldLike, psi: Diffeo) -> TensorField:
    """The push-forward as a field, so push-forwards compose."""

    def evaluate(points: np.ndarray) -> np.ndarray:
        return pushforward(field, psi, _as_points(points))

    return evaluate
