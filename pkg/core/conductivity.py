"""
Per-stratum anisotropic conductivity for strata-eit.

Classes:
    - AnisoTensor: constant SPD 3x3 tensor stored as its upper triangle
    - StrataModel: a StrataRegion plus one tensor per stratum

Functions:
    - metric_of: g = (det sigma)^{1/(n-2)} sigma^{-1}
    - tangential_submatrix: restriction of g to the plane orthogonal to a normal
    - random_spd: seeded SPD sample within an ellipticity bound
"""

import hashlib
from dataclasses import dataclass
from typing import Iterable, Sequence, Tuple

import numpy as np
import structlog

from core.errors import StrataValidationError
from core.geometry import StrataRegion
from models.specs import ModelSpec

logger = structlog.get_logger(__name__)

_UPPER = (np.array([0, 0, 0, 1, 1, 2]), np.array([0, 1, 2, 1, 2, 2]))
SINGULAR_CONDITION = 1.0e12


class SingularTensor(StrataValidationError):
    """Raised when a tensor is too ill-conditioned to invert."""
    pass


class EllipticityViolated(StrataValidationError):
    """Raised when a tensor has an eigenvalue outside [1/lambda, lambda]."""
    pass


class JumpConditionViolated(StrataValidationError):
    """Raised when adjacent strata carry (nearly) equal tensors."""
    pass


def to_upper(matrix: np.ndarray) -> np.ndarray:
    """Six upper-triangle entries [s11, s12, s13, s22, s23, s33]."""
    return np.asarray(matrix, dtype=float)[_UPPER].copy()


def from_upper(entries: Sequence[float]) -> np.ndarray:
    entries = np.asarray(entries, dtype=float)
    if entries.shape != (6,):
        raise ValueError(f"expected 6 upper-triangle entries, got shape {entries.shape}")
    m = np.zeros((3, 3))
    m[_UPPER] = entries
    m[(_UPPER[1], _UPPER[0])] = entries
    return m


@dataclass(frozen=True)
class AnisoTensor:
    """
    Constant symmetric positive-definite conductivity.

    Symmetry is structural: only the six upper-triangle values are stored.
    """

    entries: Tuple[float, float, float, float, float, float]

    @classmethod
    def from_matrix(cls, matrix: np.ndarray) -> "AnisoTensor":
        matrix = np.asarray(matrix, dtype=float)
        return cls(tuple(float(v) for v in to_upper(0.5 * (matrix + matrix.T))))  # type: ignore[arg-type]

    @classmethod
    def from_entries(cls, entries: Sequence[float]) -> "AnisoTensor":
        return cls(tuple(float(v) for v in from_upper(entries)[_UPPER]))  # type: ignore[arg-type]

    @classmethod
    def isotropic(cls, value: float = 1.0) -> "AnisoTensor":
        return cls.from_matrix(value * np.eye(3))

    @property
    def matrix(self) -> np.ndarray:
        return from_upper(self.entries)

    @property
    def vector(self) -> np.ndarray:
        return np.array(self.entries, dtype=float)

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.matrix)

    def scaled(self, factor: float) -> "AnisoTensor":
        return AnisoTensor.from_entries(factor * self.vector)

    def check_ellipticity(self, ellipticity: float) -> "AnisoTensor":
        """
        Raises:
            EllipticityViolated: An eigenvalue lies outside [1/lambda, lambda]
        """
        eig = self.eigenvalues()
        lo, hi = 1.0 / ellipticity, ellipticity
        if eig[0] < lo * (1 - 1e-12) or eig[-1] > hi * (1 + 1e-12):
            raise EllipticityViolated(
                f"eigenvalues [{eig[0]:.4g}, {eig[-1]:.4g}] outside [{lo:.4g}, {hi:.4g}]"
            )
        return self

    def frobenius_distance(self, other: "AnisoTensor") -> float:
        return float(np.linalg.norm(self.matrix - other.matrix))


@dataclass(frozen=True)
class StrataModel:
    """
    Piecewise-constant conductivity over a StrataRegion.

    Attributes:
        region: Geometry with K interfaces
        tensors: K + 1 tensors, sigma_1 (top stratum) first
        ellipticity: lambda of the ellipticity condition
        jump_tolerance: delta_jump, minimum Frobenius distance between neighbours
    """

    region: StrataRegion
    tensors: Tuple[AnisoTensor, ...]
    ellipticity: float = 1.0e3
    jump_tolerance: float = 1.0e-6

    def __post_init__(self) -> None:
        if len(self.tensors) != self.region.layer_count:
            raise StrataValidationError(
                f"{self.region.layer_count} strata need {self.region.layer_count} tensors, got {len(self.tensors)}"
            )
        for tensor in self.tensors:
            tensor.check_ellipticity(self.ellipticity)
        for k in range(len(self.tensors) - 1):
            jump = self.tensors[k].frobenius_distance(self.tensors[k + 1])
            if jump < self.jump_tolerance:
                raise JumpConditionViolated(
                    f"sigma_{k + 1} and sigma_{k + 2} differ by {jump:.3e} < {self.jump_tolerance:.3e}"
                )

    @classmethod
    def from_spec(cls, region: StrataRegion, spec: ModelSpec) -> "StrataModel":
        return cls(
            region=region,
            tensors=tuple(AnisoTensor.from_entries(t) for t in spec.tensors),
            ellipticity=spec.ellipticity,
            jump_tolerance=spec.jump_tolerance,
        )

    @classmethod
    def uniform(cls, region: StrataRegion, tensor: AnisoTensor, ellipticity: float = 1.0e3) -> "StrataModel":
        """Same tensor in every stratum, so every interface is invisible."""
        return cls(
            region=region,
            tensors=(tensor,) * region.layer_count,
            ellipticity=ellipticity,
            jump_tolerance=0.0,
        )

    def to_spec(self) -> ModelSpec:
        return ModelSpec(
            tensors=[list(t.entries) for t in self.tensors],
            ellipticity=self.ellipticity,
            jump_tolerance=self.jump_tolerance,
        )

    @property
    def model_id(self) -> str:
        digest = hashlib.sha256(self.region.region_id.encode())
        for tensor in self.tensors:
            digest.update(tensor.vector.tobytes())
        return digest.hexdigest()[:16]

    def scaled(self, factor: float) -> "StrataModel":
        return StrataModel(
            region=self.region,
            tensors=tuple(t.scaled(factor) for t in self.tensors),
            ellipticity=max(self.ellipticity, factor * self.ellipticity, self.ellipticity / factor),
            jump_tolerance=self.jump_tolerance * factor,
        )

    def element_tensors(self, region_tags: np.ndarray) -> np.ndarray:
        """(T, 3, 3) tensors looked up by 1-based stratum tag."""
        stack = np.stack([t.matrix for t in self.tensors])
        return stack[np.asarray(region_tags) - 1]


def metric_of(sigma: AnisoTensor, n: int = 3) -> np.ndarray:
    """
    g = (det sigma)^{1/(n-2)} sigma^{-1}.

    Raises:
        SingularTensor: cond(sigma) > 1e12
        ValueError: n != 3
    """
    if n != 3:
        raise ValueError("only n = 3 is supported")
    matrix = sigma.matrix
    if np.linalg.cond(matrix) > SINGULAR_CONDITION:
        raise SingularTensor(f"condition number {np.linalg.cond(matrix):.3e} exceeds {SINGULAR_CONDITION:.0e}")
    det = float(np.linalg.det(matrix))
    g = det ** (1.0 / (n - 2)) * np.linalg.inv(matrix)
    return 0.5 * (g + g.T)


def tangent_basis(normal: np.ndarray) -> np.ndarray:
    """
    Orthonormal tangent pair (2, 3) for a unit normal.

    Uses the Householder reflection H mapping e3 onto the normal; the tangents
    are H e1 and H e2. For the normal e3 itself the pair is (e1, e2). The basis
    is continuous away from the excluded pole normal = -e3. For normal = e1 the
    pair is (e3, e2).
    """
    n = np.asarray(normal, dtype=float)
    if abs(np.linalg.norm(n) - 1.0) > 1e-10:
        raise ValueError("normal must have unit length")
    v = n - np.array([0.0, 0.0, 1.0])
    vv = float(v @ v)
    if vv < 1e-24:
        return np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    householder = np.eye(3) - 2.0 * np.outer(v, v) / vv
    return householder[:, :2].T.copy()


def tangential_submatrix(g: np.ndarray, normal: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Restrict g to the tangent plane of a normal.

    Returns:
        (G, T): G = [t_i . g t_j] (2, 2) and the tangent basis T (2, 3)
    """
    basis = tangent_basis(normal)
    sub = basis @ np.asarray(g, dtype=float) @ basis.T
    return 0.5 * (sub + sub.T), basis


def random_spd(rng: np.random.Generator, low: float = 0.5, high: float = 3.0) -> AnisoTensor:
    """Random SPD tensor with eigenvalues uniform in [low, high] and a random frame."""
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q = q * np.sign(np.diag(r))
    eig = rng.uniform(low, high, size=3)
    return AnisoTensor.from_matrix(q @ np.diag(eig) @ q.T)


def frobenius_jumps(tensors: Iterable[AnisoTensor]) -> np.ndarray:
    tensors = list(tensors)
    return np.array([a.frobenius_distance(b) for a, b in zip(tensors[:-1], tensors[1:])])
