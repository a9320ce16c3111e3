"""
Binary record for precomputed SMW coupling matrices.

Layout (little endian):

    magic       8s   b"WEPSMWCP"
    version     B
    n_x, n_z    I I  fine grid
    N_x, N_z    I I  coarse grid
    sigma       d d  real and imaginary part of the shift
    kbar        d
    geometry    Q    64-bit geometry fingerprint
    payload          N x N complex128, column-major
    checksum    Q    blake2b-64 of everything before it
"""

import hashlib
import struct
from dataclasses import asdict, dataclass
from typing import Dict, List, Tuple, Union

import numpy as np

from wepsmw.generic import CacheMismatch

MAGIC: bytes = b"WEPSMWCP"
VERSION: int = 1

_HEADER = struct.Struct("<8sBIIII3dQ")
_CHECKSUM = struct.Struct("<Q")


@dataclass(frozen=True)
class CouplingHeader:
    """
    Identification of the problem a coupling matrix belongs to.
    """

    n_x: int
    n_z: int
    N_x: int
    N_z: int
    sigma_real: float
    sigma_imag: float
    kbar: float
    geometry: int

    @property
    def size(self) -> int:
        return self.N_x * self.N_z

    def pack(self) -> bytes:
        return _HEADER.pack(
            MAGIC,
            VERSION,
            self.n_x,
            self.n_z,
            self.N_x,
            self.N_z,
            self.sigma_real,
            self.sigma_imag,
            self.kbar,
            self.geometry,
        )

    @staticmethod
    def unpack(bytestr: bytes) -> "CouplingHeader":
        """
        Attempt to unpack a header.

        Raises CacheMismatch if the bytes are not a header this version
        of the format can read.
        """
        if len(bytestr) < _HEADER.size:
            raise CacheMismatch(f"header truncated: {len(bytestr)} < {_HEADER.size} bytes")
        magic, version, *fields = _HEADER.unpack(bytestr[: _HEADER.size])
        if magic != MAGIC:
            raise CacheMismatch(f"magic = {magic!r} is not {MAGIC!r}")
        if version != VERSION:
            raise CacheMismatch(f"version = {version} is not {VERSION}")
        return CouplingHeader(*fields)

    def validate(self, live: "CouplingHeader") -> None:
        """
        Check that this (cached) header describes the live problem.
        """
        mismatches: List[str] = [
            f"{name}: cache={cached!r} live={current!r}"
            for (name, cached), current in zip(
                asdict(self).items(), asdict(live).values()
            )
            if cached != current
        ]
        if mismatches:
            raise CacheMismatch("coupling cache mismatch: " + "; ".join(mismatches))

    def describe(self) -> Dict[str, Union[int, float, complex]]:
        fields = asdict(self)
        fields["sigma"] = complex(self.sigma_real, self.sigma_imag)
        fields["N"] = self.size
        return fields


def _checksum(bytestr: bytes) -> int:
    return int.from_bytes(hashlib.blake2b(bytestr, digest_size=8).digest(), "little")


def write_coupling(path: str, header: CouplingHeader, coupling: np.ndarray) -> None:
    """
    Write a coupling matrix and its header to `path`.
    """
    if coupling.shape != (header.size, header.size):
        raise ValueError(f"coupling shape {coupling.shape} does not match N = {header.size}")
    body = header.pack() + np.asarray(coupling, dtype="<c16").tobytes(order="F")
    with open(path, "wb") as handle:
        handle.write(body)
        handle.write(_CHECKSUM.pack(_checksum(body)))


def read_header(path: str) -> CouplingHeader:
    """
    Read only the header of a coupling file.
    """
    with open(path, "rb") as handle:
        return CouplingHeader.unpack(handle.read(_HEADER.size))


def read_coupling(path: str) -> Tuple[CouplingHeader, np.ndarray]:
    """
    Read and verify a coupling file.
    """
    with open(path, "rb") as handle:
        bytestr = handle.read()
    header = CouplingHeader.unpack(bytestr)
    expected = _HEADER.size + 16 * header.size**2 + _CHECKSUM.size
    if len(bytestr) != expected:
        raise CacheMismatch(f"file size = {len(bytestr)} bytes, expected {expected}")
    body, tail = bytestr[: -_CHECKSUM.size], bytestr[-_CHECKSUM.size :]
    (stored,) = _CHECKSUM.unpack(tail)
    if stored != _checksum(body):
        raise CacheMismatch(f"checksum = {stored:#018x} does not match the contents")
    coupling = np.frombuffer(body[_HEADER.size :], dtype="<c16")
    coupling = coupling.reshape((header.size, header.size), order="F").astype(complex)
    return header, coupling
