"""
Continuous description of a periodic waveguide.

The waveguide occupies S_0 = [x_-, x_+] x [0, 1] and is 1-periodic in z.
Its squared wavenumber kappa^2(x, z) is piecewise constant: a background
value overridden inside axis-aligned rectangles. Outside the domain the
wavenumber is the constant kappa_- (left) or kappa_+ (right); these feed
the Dirichlet-to-Neumann boundary maps.
"""

import hashlib
import struct
from typing import List, Optional, Sequence

import numpy as np

from wepsmw.generic import ConfigError, OddGridRequired

# Relative slack when testing whether a grid node lies on a region edge.
_EDGE_SLACK: float = 1e-12


class Region:
    """
    Axis-aligned rectangle [x0, x1) x [z0, z1) with constant kappa^2.
    """

    def __init__(
        self, x0: float, x1: float, z0: float, z1: float, kappa2: float, name: str = ""
    ) -> None:
        self.x0: float = float(x0)
        self.x1: float = float(x1)
        self.z0: float = float(z0)
        self.z1: float = float(z1)
        self.kappa2: float = float(kappa2)
        self.name: str = name

    def __repr__(self) -> str:
        return (
            f"Region({self.x0!r}, {self.x1!r}, {self.z0!r}, {self.z1!r}, "
            f"{self.kappa2!r}, name={self.name!r})"
        )

    def mask(self, x: np.ndarray, z: np.ndarray, scale: float) -> np.ndarray:
        """
        Boolean mask of the nodes (z[k], x[l]) inside the rectangle.
        """
        eps = _EDGE_SLACK * scale
        in_x = (x >= self.x0 - eps) & (x < self.x1 - eps)
        in_z = (z >= self.z0 - _EDGE_SLACK) & (z < self.z1 - _EDGE_SLACK)
        return in_z[:, np.newaxis] & in_x[np.newaxis, :]


class WaveguideGeometry:
    """
    Piecewise-constant waveguide on [x_minus, x_plus] x [0, 1].

    Later regions take precedence over earlier ones where they overlap.
    """

    def __init__(
        self,
        x_minus: float,
        x_plus: float,
        background: float,
        kappa_minus: float,
        kappa_plus: float,
        regions: Optional[Sequence[Region]] = None,
    ) -> None:
        self.x_minus: float = float(x_minus)
        self.x_plus: float = float(x_plus)
        self.background: float = float(background)
        self.kappa_minus: float = float(kappa_minus)
        self.kappa_plus: float = float(kappa_plus)
        self.regions: List[Region] = list(regions) if regions is not None else []
        self._validate()

    def _validate(self) -> None:
        """
        Check that the description is a well-formed waveguide.
        """
        if not self.x_minus < self.x_plus:
            raise ConfigError(
                f"x_minus = {self.x_minus} must be smaller than x_plus = {self.x_plus}"
            )
        if self.kappa_minus <= 0 or self.kappa_plus <= 0:
            raise ConfigError(
                f"exterior wavenumbers ({self.kappa_minus}, {self.kappa_plus}) "
                "must be positive"
            )
        if self.background < 0:
            raise ConfigError(f"background kappa^2 = {self.background} is negative")
        for region in self.regions:
            if region.kappa2 < 0:
                raise ConfigError(f"{region!r} has a negative kappa^2")
            if not (region.x0 < region.x1 and region.z0 < region.z1):
                raise ConfigError(f"{region!r} is empty")
            if region.x0 < self.x_minus or region.x1 > self.x_plus:
                raise ConfigError(f"{region!r} leaves [{self.x_minus}, {self.x_plus}]")
            if region.z0 < 0 or region.z1 > 1:
                raise ConfigError(f"{region!r} leaves the period [0, 1]")

    @property
    def width(self) -> float:
        return self.x_plus - self.x_minus

    def kappa2(self, x: np.ndarray, z: np.ndarray) -> np.ndarray:
        """
        Squared wavenumber on the tensor grid z x x (shape len(z) x len(x)).
        """
        x = np.asarray(x, dtype=float)
        z = np.asarray(z, dtype=float)
        values = np.full((z.shape[0], x.shape[0]), self.background)
        scale = max(abs(self.x_minus), abs(self.x_plus), self.width)
        for region in self.regions:
            values[region.mask(x, z, scale)] = region.kappa2
        return values

    def digest(self) -> int:
        """
        64-bit fingerprint of the geometry, used to tag coupling caches.
        """
        h = hashlib.blake2b(digest_size=8)
        h.update(
            struct.pack(
                "<5d",
                self.x_minus,
                self.x_plus,
                self.background,
                self.kappa_minus,
                self.kappa_plus,
            )
        )
        for region in self.regions:
            h.update(
                struct.pack(
                    "<5d", region.x0, region.x1, region.z0, region.z1, region.kappa2
                )
            )
        return int.from_bytes(h.digest(), "little")


def grid_nodes(geometry: WaveguideGeometry, n_x: int, n_z: int):
    """
    Interior grid nodes (x_1..x_{n_x}, z_1..z_{n_z}) and steps (h_x, h_z).
    """
    h_x = geometry.width / (n_x + 1)
    h_z = 1.0 / n_z
    x = geometry.x_minus + h_x * np.arange(1, n_x + 1)
    z = h_z * np.arange(1, n_z + 1)
    return x, z, h_x, h_z


def sample_wavenumber(geometry: WaveguideGeometry, n_x: int, n_z: int) -> np.ndarray:
    """
    Sample kappa^2 at the grid nodes: [K]_{k,l} = kappa^2(x_l, z_k).
    """
    if n_z % 2 == 0:
        raise OddGridRequired(f"n_z = {n_z} must be odd (n_z = 2p + 1)")
    if n_x < 1 or n_z < 1:
        raise ConfigError(f"grid sizes n_x = {n_x}, n_z = {n_z} must be positive")
    x, _, _, _ = grid_nodes(geometry, n_x, n_z)
    # z_{n_z} = 1 is the periodic image of z = 0
    z = (np.arange(1, n_z + 1) % n_z) / n_z
    return geometry.kappa2(x, z)
