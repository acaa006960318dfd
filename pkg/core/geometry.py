"""
Layered cylinder geometry for strata-eit.

The computational domain is the cylinder C = {|x'| <= R, phi_0(x') <= x_n <= M}
(or its square-footprint variant) cut into K + 1 strata by graph interfaces
phi_1 < ... < phi_K. Every surface is a smooth cosine expansion over the
footprint, so the C^{1,alpha} requirement holds for every alpha.

x_n grows into the domain; the measurement patch Sigma lies on the top surface
phi_0, the face with the smallest x_n.

Classes:
    - Interface: one graph surface (offset + tensor-product cosine modes)
    - StrataRegion: footprint, cap height, ordered surfaces and the Sigma patch

Functions:
    - build_strata_region: Build and validate a region from its config model
    - validate_region: Check ordering, gap and layer count on a sample grid
    - non_flatness_certificate: Pick surface points with pairwise distinct normals
    - split_stratum: Insert an interface halfway through one stratum
"""

import hashlib
import json
from dataclasses import dataclass, field, replace
from typing import List, Sequence, Tuple

import numpy as np
import structlog

from core.errors import StrataValidationError
from models.specs import InterfaceSpec, StrataRegionSpec

logger = structlog.get_logger(__name__)

DEFAULT_GAP_FRACTION = 0.05
DEFAULT_THETA_MIN_DEG = 1.0


class OrderingViolation(StrataValidationError):
    """Raised when surfaces cross or come closer than the minimum gap."""
    pass


class EmptyLayer(StrataValidationError):
    """Raised when a region has no interface or a stratum has no volume."""
    pass


class FlatInterface(StrataValidationError):
    """Raised when a surface offers fewer than three distinct normals."""
    pass


Mode = Tuple[int, int, float]


@dataclass(frozen=True)
class Interface:
    """
    Graph surface x_n = offset + sum_i a_i cos(p_i pi x1 / R) cos(q_i pi x2 / R).

    Attributes:
        offset: Depth offset d_k
        modes: (p, q, amplitude) triples; (0, 0) is excluded
        radius: Footprint radius R that scales the modes
    """

    offset: float
    modes: Tuple[Mode, ...] = ()
    radius: float = 1.0

    @classmethod
    def from_spec(cls, spec: InterfaceSpec, radius: float) -> "Interface":
        return cls(
            offset=float(spec.offset),
            modes=tuple((int(p), int(q), float(a)) for p, q, a in spec.modes),
            radius=float(radius),
        )

    def to_spec(self) -> InterfaceSpec:
        return InterfaceSpec(offset=self.offset, modes=[(p, q, a) for p, q, a in self.modes])

    @property
    def amplitudes(self) -> np.ndarray:
        return np.array([a for _, _, a in self.modes], dtype=float)

    def with_coefficients(self, offset: float, amplitudes: Sequence[float]) -> "Interface":
        """Same modes, new offset and amplitudes."""
        if len(amplitudes) != len(self.modes):
            raise ValueError("amplitude count does not match mode count")
        modes = tuple((p, q, float(a)) for (p, q, _), a in zip(self.modes, amplitudes))
        return replace(self, offset=float(offset), modes=modes)

    def non_flat(self) -> bool:
        return any(a != 0.0 for _, _, a in self.modes)

    def evaluate(self, x1: np.ndarray, x2: np.ndarray) -> np.ndarray:
        x1 = np.asarray(x1, dtype=float)
        x2 = np.asarray(x2, dtype=float)
        value = np.full(np.broadcast(x1, x2).shape, self.offset)
        k = np.pi / self.radius
        for p, q, amp in self.modes:
            value = value + amp * np.cos(p * k * x1) * np.cos(q * k * x2)
        return value

    def gradient(self, x1: np.ndarray, x2: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Analytic tangential gradient (d phi / d x1, d phi / d x2)."""
        x1 = np.asarray(x1, dtype=float)
        x2 = np.asarray(x2, dtype=float)
        shape = np.broadcast(x1, x2).shape
        d1 = np.zeros(shape)
        d2 = np.zeros(shape)
        k = np.pi / self.radius
        for p, q, amp in self.modes:
            d1 = d1 - amp * p * k * np.sin(p * k * x1) * np.cos(q * k * x2)
            d2 = d2 - amp * q * k * np.cos(p * k * x1) * np.sin(q * k * x2)
        return d1, d2

    def normals(self, x1: np.ndarray, x2: np.ndarray) -> np.ndarray:
        """Unit normals (-grad phi, 1) / |.|, shape (..., 3), pointing towards +x_n."""
        d1, d2 = self.gradient(x1, x2)
        n = np.stack([-d1, -d2, np.ones_like(d1)], axis=-1)
        return n / np.linalg.norm(n, axis=-1, keepdims=True)


@dataclass(frozen=True)
class StrataRegion:
    """
    Layered cylinder with K interfaces between the top surface and the cap.

    Strata are numbered 1..K+1 from the top surface downwards in x_n:
    stratum k lies between phi_{k-1} and phi_k, stratum K+1 between phi_K and M.

    Attributes:
        radius: Footprint radius (disk) or half-width (square)
        cap_height: Cap height M
        top_surface: phi_0, carries the Sigma patch
        interfaces: phi_1 ... phi_K
        sigma_patch_radius: Sigma is the part of phi_0 over |x'| <= r_Sigma
        footprint: "disk" or "square"
        min_gap: Minimum vertical distance between consecutive surfaces
        sample_grid: Points per axis of the validation grid
    """

    radius: float
    cap_height: float
    top_surface: Interface
    interfaces: Tuple[Interface, ...]
    sigma_patch_radius: float
    footprint: str = "disk"
    min_gap: float = field(default=0.0)
    sample_grid: int = 64

    @property
    def interface_count(self) -> int:
        return len(self.interfaces)

    @property
    def layer_count(self) -> int:
        return len(self.interfaces) + 1

    @property
    def surfaces(self) -> Tuple[Interface, ...]:
        return (self.top_surface,) + tuple(self.interfaces)

    def is_flat(self) -> bool:
        return not any(s.non_flat() for s in self.surfaces)

    def contains_footprint(self, x1: np.ndarray, x2: np.ndarray, tol: float = 1e-12) -> np.ndarray:
        if self.footprint == "square":
            return (np.abs(x1) <= self.radius + tol) & (np.abs(x2) <= self.radius + tol)
        return np.hypot(x1, x2) <= self.radius + tol

    def sample_points(self, n: int = 0) -> np.ndarray:
        """Grid over the footprint plus its rim, shape (N, 2)."""
        n = max(n or self.sample_grid, 2)
        axis = np.linspace(-self.radius, self.radius, n)
        g1, g2 = np.meshgrid(axis, axis, indexing="ij")
        pts = np.column_stack([g1.ravel(), g2.ravel()])
        pts = pts[self.contains_footprint(pts[:, 0], pts[:, 1])]
        if self.footprint == "disk":
            theta = np.linspace(0.0, 2.0 * np.pi, 4 * n, endpoint=False)
            rim = self.radius * np.column_stack([np.cos(theta), np.sin(theta)])
            pts = np.vstack([pts, rim])
        return pts

    def surface_heights(self, x1: np.ndarray, x2: np.ndarray) -> np.ndarray:
        """Heights of phi_0..phi_K and the cap M, shape (K + 2, ...)."""
        rows = [s.evaluate(x1, x2) for s in self.surfaces]
        rows.append(np.full(np.broadcast(np.asarray(x1), np.asarray(x2)).shape, self.cap_height))
        return np.stack(rows)

    def stratum_thickness(self, n: int = 0) -> np.ndarray:
        """Minimum sampled thickness of each stratum, shape (K + 1,)."""
        pts = self.sample_points(n)
        heights = self.surface_heights(pts[:, 0], pts[:, 1])
        return np.diff(heights, axis=0).min(axis=1)

    def layer_of(self, points: np.ndarray) -> np.ndarray:
        """Stratum index (1-based) of each 3D point; points outside get 0."""
        points = np.atleast_2d(points)
        heights = self.surface_heights(points[:, 0], points[:, 1])
        z = points[:, 2]
        tags = np.zeros(len(points), dtype=int)
        for k in range(self.layer_count):
            inside = (z >= heights[k]) & (z <= heights[k + 1])
            tags[(tags == 0) & inside] = k + 1
        tags[~self.contains_footprint(points[:, 0], points[:, 1])] = 0
        return tags

    def with_interfaces(self, interfaces: Sequence[Interface]) -> "StrataRegion":
        return replace(self, interfaces=tuple(interfaces))

    def to_spec(self) -> StrataRegionSpec:
        return StrataRegionSpec(
            radius=self.radius,
            cap_height=self.cap_height,
            sigma_patch_radius=self.sigma_patch_radius,
            footprint=self.footprint,  # type: ignore[arg-type]
            top_surface=self.top_surface.to_spec(),
            interfaces=[i.to_spec() for i in self.interfaces],
            min_gap=self.min_gap or None,
            sample_grid=self.sample_grid,
        )

    @property
    def region_id(self) -> str:
        payload = json.dumps(self.to_spec().model_dump(mode="json"), sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


def validate_region(region: StrataRegion) -> StrataRegion:
    """
    Check the layered-cylinder assumptions on the sample grid.

    Raises:
        EmptyLayer: K < 1, or some stratum has no volume anywhere
        OrderingViolation: Surfaces cross, or come closer than min_gap
    """
    if region.interface_count < 1:
        raise EmptyLayer("a strata region needs at least one interface (K >= 1)")
    if region.radius <= 0 or region.cap_height <= 0:
        raise EmptyLayer("radius and cap height must be positive")

    pts = region.sample_points()
    heights = region.surface_heights(pts[:, 0], pts[:, 1])
    gaps = np.diff(heights, axis=0)

    for k, row in enumerate(gaps):
        if row.max() <= 0.0:
            raise EmptyLayer(f"stratum {k + 1} is empty")

    worst = int(np.argmin(gaps.min(axis=1)))
    smallest = float(gaps[worst].min())
    if smallest < region.min_gap:
        where = pts[int(np.argmin(gaps[worst]))]
        upper = "cap" if worst == region.interface_count else f"phi_{worst + 1}"
        raise OrderingViolation(
            f"phi_{worst} and {upper} are {smallest:.3e} apart at x'=({where[0]:.3f}, {where[1]:.3f}); "
            f"minimum gap is {region.min_gap:.3e}"
        )
    return region


def build_strata_region(config: StrataRegionSpec) -> StrataRegion:
    """
    Build a validated StrataRegion from its config model.

    Args:
        config: Parsed region section of an experiment config

    Returns:
        StrataRegion whose ordering holds on a >= 64 x 64 grid

    Raises:
        OrderingViolation, EmptyLayer
    """
    radius = float(config.radius)
    min_gap = config.min_gap if config.min_gap is not None else DEFAULT_GAP_FRACTION * config.cap_height
    region = StrataRegion(
        radius=radius,
        cap_height=float(config.cap_height),
        top_surface=Interface.from_spec(config.top_surface, radius),
        interfaces=tuple(Interface.from_spec(s, radius) for s in config.interfaces),
        sigma_patch_radius=float(config.sigma_patch_radius),
        footprint=config.footprint,
        min_gap=float(min_gap),
        sample_grid=int(config.sample_grid),
    )
    validate_region(region)
    logger.debug(
        "strata_region_built",
        interfaces=region.interface_count,
        radius=radius,
        cap_height=region.cap_height,
        footprint=region.footprint,
    )
    return region


def _angle_between(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    cos = np.clip(np.sum(a * b, axis=-1), -1.0, 1.0)
    return np.degrees(np.arccos(cos))


def non_flatness_certificate(
    iface: Interface,
    n_samples: int = 24,
    theta_min_deg: float = DEFAULT_THETA_MIN_DEG,
    max_points: int = 6,
    footprint: str = "disk",
) -> List[Tuple[np.ndarray, np.ndarray]]:
    """
    Select surface points whose unit normals are pairwise at least theta_min apart.

    Greedy farthest-angle selection over an n_samples x n_samples grid: start
    from the most tilted normal, then repeatedly add the normal whose smallest
    angle to the chosen set is largest.

    Returns:
        List of (point (3,), unit normal (3,)), at least three entries

    Raises:
        FlatInterface: Fewer than three sufficiently distinct normals exist
    """
    if not iface.non_flat():
        raise FlatInterface("interface has no nonzero mode amplitude")

    axis = np.linspace(-iface.radius, iface.radius, max(n_samples, 3))
    g1, g2 = np.meshgrid(axis, axis, indexing="ij")
    x1, x2 = g1.ravel(), g2.ravel()
    if footprint == "disk":
        keep = np.hypot(x1, x2) <= iface.radius
        x1, x2 = x1[keep], x2[keep]
    normals = iface.normals(x1, x2)

    tilt = _angle_between(normals, np.array([0.0, 0.0, 1.0]))
    chosen = [int(np.argmax(tilt))]
    nearest = _angle_between(normals, normals[chosen[0]])
    while len(chosen) < max_points:
        candidate = int(np.argmax(nearest))
        if nearest[candidate] < theta_min_deg:
            break
        chosen.append(candidate)
        nearest = np.minimum(nearest, _angle_between(normals, normals[candidate]))

    if len(chosen) < 3:
        raise FlatInterface(
            f"only {len(chosen)} normals at pairwise angle >= {theta_min_deg} deg"
        )

    heights = iface.evaluate(x1, x2)
    return [
        (np.array([x1[i], x2[i], heights[i]]), normals[i].copy())
        for i in chosen
    ]


def split_stratum(region: StrataRegion, stratum: int) -> StrataRegion:
    """
    Insert the mean of a stratum's two bounding surfaces as a new interface.

    The new surface lies strictly inside the stratum, so any point keeps its
    stratum under the original region. The minimum gap is halved.

    Raises:
        ValueError: stratum outside 1..K+1
    """
    if not 1 <= stratum <= region.layer_count:
        raise ValueError(f"stratum {stratum} outside 1..{region.layer_count}")
    upper = region.surfaces[stratum - 1]
    if stratum <= region.interface_count:
        lower = region.interfaces[stratum - 1]
    else:
        lower = Interface(offset=region.cap_height, radius=region.radius)

    amps: dict = {}
    for p, q, a in upper.modes + lower.modes:
        amps[(p, q)] = amps.get((p, q), 0.0) + 0.5 * a
    middle = Interface(
        offset=0.5 * (upper.offset + lower.offset),
        modes=tuple((p, q, a) for (p, q), a in sorted(amps.items())),
        radius=region.radius,
    )
    interfaces = list(region.interfaces)
    interfaces.insert(stratum - 1, middle)
    return replace(region, interfaces=tuple(interfaces), min_gap=0.5 * region.min_gap)
