"""Uniform 2D grid, two-component spinor wavefunction and FFT conventions.

Arrays are indexed ``[ix, iz]``: the first axis is the laser polarization
direction x, the second the propagation direction z.  All transforms are
unitary (``norm="ortho"``) so Parseval holds without extra bookkeeping.
The coordinate lattice is ``x_j = (j - nx//2) * dx`` which places a grid
point exactly on the nucleus; momentum lattices are kept in FFT order.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.fft as sfft

__all__ = [
    "Grid2D",
    "SpinorWavefunction",
    "PositionOperator",
    "MomentumOperator",
    "SpinOperator",
    "NonHermitianError",
    "make_grid",
    "norm",
    "expectation",
    "fft_x",
    "ifft_x",
    "fft_z",
    "ifft_z",
    "fft_2d",
    "ifft_2d",
    "gaussian_packet",
    "write_snapshot",
    "read_snapshot",
    "SIGMA_X",
    "SIGMA_Y",
    "SIGMA_Z",
]

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)


class NonHermitianError(ValueError):
    """An expectation value carried an imaginary residue above tolerance."""


@dataclass(frozen=True)
class Grid2D:
    """Rectangular coordinate/momentum lattice in bohr and inverse bohr."""

    nx: int
    nz: int
    dx: float
    dz: float
    x: np.ndarray = field(init=False, repr=False, compare=False)
    z: np.ndarray = field(init=False, repr=False, compare=False)
    kx: np.ndarray = field(init=False, repr=False, compare=False)
    kz: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        x = (np.arange(self.nx) - self.nx // 2) * self.dx
        z = (np.arange(self.nz) - self.nz // 2) * self.dz
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "kx", 2 * np.pi * sfft.fftfreq(self.nx, d=self.dx))
        object.__setattr__(self, "kz", 2 * np.pi * sfft.fftfreq(self.nz, d=self.dz))

    @property
    def x_min(self) -> float:
        return float(self.x[0])

    @property
    def x_max(self) -> float:
        return float(self.x[-1])

    @property
    def z_min(self) -> float:
        return float(self.z[0])

    @property
    def z_max(self) -> float:
        return float(self.z[-1])

    @property
    def dkx(self) -> float:
        return 2 * np.pi / (self.nx * self.dx)

    @property
    def dkz(self) -> float:
        return 2 * np.pi / (self.nz * self.dz)

    @property
    def cell(self) -> float:
        """Area element dx*dz."""
        return self.dx * self.dz

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nx, self.nz)

    @property
    def origin_index(self) -> tuple[int, int]:
        return (self.nx // 2, self.nz // 2)

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        """Coordinate arrays X, Z of shape (nx, nz)."""
        return np.meshgrid(self.x, self.z, indexing="ij")

    def odd_mesh(self) -> tuple[np.ndarray, np.ndarray]:
        """X, Z with the unpaired edge sample set to zero.

        On the periodic lattice the first row sits at both -L and +L; zeroing it
        makes the coordinates exactly odd under reflection, matching the
        derivative multipliers whose Nyquist entry is zero.
        """
        X, Z = self.mesh()
        if self.nx % 2 == 0:
            X[0, :] = 0.0
        if self.nz % 2 == 0:
            Z[:, 0] = 0.0
        return X, Z

    def kmesh(self) -> tuple[np.ndarray, np.ndarray]:
        """Momentum arrays KX, KZ of shape (nx, nz) in FFT order."""
        return np.meshgrid(self.kx, self.kz, indexing="ij")

    def derivative_kx(self) -> np.ndarray:
        """kx with the unpaired Nyquist entry zeroed (keeps p_x odd under parity)."""
        k = self.kx.copy()
        if self.nx % 2 == 0:
            k[self.nx // 2] = 0.0
        return k

    def derivative_kz(self) -> np.ndarray:
        k = self.kz.copy()
        if self.nz % 2 == 0:
            k[self.nz // 2] = 0.0
        return k

    def key(self) -> tuple:
        return (self.nx, self.nz, float(self.dx), float(self.dz))


def make_grid(nx: int, nz: int, dx: float, dz: float | None = None) -> Grid2D:
    """Build a grid centred on the nucleus.

    The extents are ``[-(n//2)*d, (n - 1 - n//2)*d]`` so that (0, 0) is a grid
    point; for even ``n`` the lattice therefore reaches one spacing further on
    the negative side.
    """
    if dz is None:
        dz = dx
    for name, n in (("nx", nx), ("nz", nz)):
        if int(n) != n or n < 8:
            raise ValueError(f"{name} must be an integer >= 8, got {n!r}")
    for name, d in (("dx", dx), ("dz", dz)):
        if not np.isfinite(d) or d <= 0:
            raise ValueError(f"{name} must be positive, got {d!r}")
    return Grid2D(int(nx), int(nz), float(dx), float(dz))


class SpinorWavefunction:
    """Two complex fields (spin up, spin down) on a shared grid.

    ``data`` has shape ``(2, nx, nz)``; ``up`` and ``down`` are views into it.
    """

    def __init__(self, grid: Grid2D, up=None, down=None, time: float = 0.0):
        self.grid = grid
        self.data = np.zeros((2,) + grid.shape, dtype=np.complex128)
        if up is not None:
            self.data[0] = up
        if down is not None:
            self.data[1] = down
        self.time = float(time)

    @property
    def up(self) -> np.ndarray:
        return self.data[0]

    @up.setter
    def up(self, value):
        self.data[0] = value

    @property
    def down(self) -> np.ndarray:
        return self.data[1]

    @down.setter
    def down(self, value):
        self.data[1] = value

    def copy(self) -> "SpinorWavefunction":
        out = SpinorWavefunction(self.grid, time=self.time)
        out.data[...] = self.data
        return out

    def normalize(self) -> "SpinorWavefunction":
        n = norm(self)
        if n <= 0:
            raise ValueError("cannot normalize a zero wavefunction")
        self.data /= np.sqrt(n)
        return self

    def density(self) -> np.ndarray:
        return (np.abs(self.data) ** 2).sum(axis=0)

    def overlap(self, other: "SpinorWavefunction") -> complex:
        """<self|other> summed over both spin components."""
        return complex(np.vdot(self.data, other.data) * self.grid.cell)

    def __repr__(self):
        return f"SpinorWavefunction(grid={self.grid.shape}, time={self.time:g}, norm={norm(self):.6g})"


def norm(psi: SpinorWavefunction) -> float:
    """Total probability sum(|up|^2 + |down|^2) dx dz."""
    d = psi.data
    return float((d.real**2 + d.imag**2).sum() * psi.grid.cell)


# --- FFT helpers ---------------------------------------------------------
# Each accepts raw arrays whose last two axes are (x, z), or a spinor.


def _arr(psi):
    return psi.data if isinstance(psi, SpinorWavefunction) else psi


def fft_x(psi) -> np.ndarray:
    return sfft.fft(_arr(psi), axis=-2, norm="ortho")


def ifft_x(psi) -> np.ndarray:
    return sfft.ifft(_arr(psi), axis=-2, norm="ortho")


def fft_z(psi) -> np.ndarray:
    return sfft.fft(_arr(psi), axis=-1, norm="ortho")


def ifft_z(psi) -> np.ndarray:
    return sfft.ifft(_arr(psi), axis=-1, norm="ortho")


def fft_2d(psi) -> np.ndarray:
    return sfft.fft2(_arr(psi), axes=(-2, -1), norm="ortho")


def ifft_2d(psi) -> np.ndarray:
    return sfft.ifft2(_arr(psi), axes=(-2, -1), norm="ortho")


# --- operators for expectation values ------------------------------------


@dataclass
class PositionOperator:
    """Multiplication by a real function sampled on the grid."""

    values: np.ndarray

    def apply(self, comp: np.ndarray, grid: Grid2D) -> np.ndarray:
        return self.values * comp

    def scale(self) -> float:
        return float(np.max(np.abs(self.values))) if np.size(self.values) else 0.0


@dataclass
class MomentumOperator:
    """Multiplication by a real function of (kx, kz) in momentum space.

    ``values`` has shape (nx, nz) in FFT order, e.g. ``0.5 * (KX**2 + KZ**2)``.
    """

    values: np.ndarray

    def apply(self, comp: np.ndarray, grid: Grid2D) -> np.ndarray:
        return ifft_2d(self.values * fft_2d(comp))

    def scale(self) -> float:
        return float(np.max(np.abs(self.values)))


@dataclass
class SpinOperator:
    """2x2 spin matrix times a scalar (position or momentum) operator."""

    matrix: np.ndarray
    inner: PositionOperator | MomentumOperator | None = None

    def scale(self) -> float:
        s = np.linalg.norm(self.matrix, 2)
        return float(s * (self.inner.scale() if self.inner is not None else 1.0))


def expectation(psi: SpinorWavefunction, op, tol: float = 1e-8) -> float:
    """Re <psi|O|psi> as the grid sum over both spinor components.

    ``op`` may be an ndarray (treated as a position-diagonal function),
    a PositionOperator, a MomentumOperator, or a SpinOperator.  An imaginary
    part larger than ``tol * max(|O|) * norm`` means the operator is not
    Hermitian and raises NonHermitianError.
    """
    grid = psi.grid
    if isinstance(op, np.ndarray):
        op = PositionOperator(op)
    if isinstance(op, SpinOperator):
        m = np.asarray(op.matrix, dtype=complex)
        comps = [psi.data[s] if op.inner is None else op.inner.apply(psi.data[s], grid) for s in (0, 1)]
        val = 0j
        for a in (0, 1):
            for b in (0, 1):
                if m[a, b] != 0:
                    val += m[a, b] * np.vdot(psi.data[a], comps[b])
    elif isinstance(op, (PositionOperator, MomentumOperator)):
        val = sum(np.vdot(psi.data[s], op.apply(psi.data[s], grid)) for s in (0, 1))
    else:
        raise TypeError(f"unsupported operator type {type(op).__name__}")
    val = complex(val) * grid.cell
    bound = tol * max(op.scale(), 1.0) * max(norm(psi), 1e-300)
    if abs(val.imag) > bound:
        raise NonHermitianError(f"imaginary residue {val.imag:.3e} exceeds {bound:.3e}")
    return val.real


def gaussian_packet(
    grid: Grid2D,
    x0: float = 0.0,
    z0: float = 0.0,
    sigma_x: float = 1.0,
    sigma_z: float | None = None,
    kx0: float = 0.0,
    kz0: float = 0.0,
    spin=(1.0, 0.0),
    time: float = 0.0,
) -> SpinorWavefunction:
    """Normalized Gaussian with probability-density widths sigma_x, sigma_z."""
    if sigma_z is None:
        sigma_z = sigma_x
    X, Z = grid.mesh()
    g = np.exp(
        -((X - x0) ** 2) / (4 * sigma_x**2)
        - (Z - z0) ** 2 / (4 * sigma_z**2)
        + 1j * (kx0 * X + kz0 * Z)
    )
    spin = np.asarray(spin, dtype=complex)
    spin = spin / np.linalg.norm(spin)
    psi = SpinorWavefunction(grid, spin[0] * g, spin[1] * g, time=time)
    return psi.normalize()


# --- snapshot files -----------------------------------------------------
#
# Layout (little endian):
#   magic   8s   b"WRSNAP01"
#   nx, nz  2*u4
#   dx, dz, time  3*f8
#   tag     64s  ASCII config/toggles hash, NUL padded
#   payload nx*nz complex128 (re, im float64 pairs) for up, then down

SNAPSHOT_MAGIC = b"WRSNAP01"
_HEADER = struct.Struct("<8sIIddd64s")


def write_snapshot(path, psi: SpinorWavefunction, tag: str = "") -> Path:
    path = Path(path)
    g = psi.grid
    tagb = tag.encode("ascii")
    if len(tagb) > 64:
        raise ValueError("snapshot tag longer than 64 bytes")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(SNAPSHOT_MAGIC, g.nx, g.nz, g.dx, g.dz, psi.time, tagb))
        fh.write(np.ascontiguousarray(psi.data, dtype="<c16").tobytes())
    return path


def read_snapshot(path) -> tuple[SpinorWavefunction, str]:
    """Load a snapshot; returns (psi, tag).  Raises ValueError on corruption."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated snapshot header")
    magic, nx, nz, dx, dz, time, tagb = _HEADER.unpack_from(raw)
    if magic != SNAPSHOT_MAGIC:
        raise ValueError(f"{path}: bad snapshot magic {magic!r}")
    expected = _HEADER.size + 2 * nx * nz * 16
    if len(raw) != expected:
        raise ValueError(f"{path}: payload size {len(raw)} != expected {expected}")
    grid = make_grid(nx, nz, dx, dz)
    data = np.frombuffer(raw, dtype="<c16", offset=_HEADER.size).reshape(2, nx, nz)
    psi = SpinorWavefunction(grid, time=time)
    psi.data[...] = data
    return psi, tagb.rstrip(b"\0").decode("ascii")
