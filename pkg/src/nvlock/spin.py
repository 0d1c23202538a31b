"""NV ground-state spin model.

Maps a laboratory-frame magnetic field (nT) and a temperature offset from
300 K to the m_s = 0 -> +/-1 transition frequencies (Hz) of the four NV
orientation classes. Two models are provided: the first-order linear
Zeeman model and exact diagonalisation of the spin-1 ground-state
Hamiltonian, which includes the shifts caused by transverse fields.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

MODELS = ("linear", "full")


@dataclass(frozen=True)
class PhysicalConstants:
    """Zero-field splitting ``delta`` (Hz), temperature coefficient
    ``beta_t`` (Hz/K) and gyromagnetic ratio ``gamma`` (Hz/nT)."""

    delta: float = 2.87e9
    beta_t: float = -7.4e4
    gamma: float = 28.0

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError(f"delta must be positive, got {self.delta}")
        if not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if not self.beta_t < 0:
            raise ValueError(f"beta_t must be negative near room temperature, got {self.beta_t}")

    def center(self, dt=0.0):
        """Temperature-shifted zero-field splitting, Hz."""
        return self.delta + self.beta_t * np.asarray(dt, dtype=float)


DEFAULT_CONSTANTS = PhysicalConstants()

# Tetrahedral NV axes in the cubic crystal frame (= lab frame).
NV_AXES = np.array(
    [
        [1.0, 1.0, 1.0],
        [1.0, -1.0, -1.0],
        [-1.0, 1.0, -1.0],
        [-1.0, -1.0, 1.0],
    ]
) / np.sqrt(3.0)


def _transverse_basis(axes):
    """Two unit vectors per axis completing a right-handed frame."""
    e1 = np.empty_like(axes)
    e2 = np.empty_like(axes)
    for i, n in enumerate(axes):
        helper = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
        u = helper - n * (helper @ n)
        u /= np.linalg.norm(u)
        e1[i] = u
        e2[i] = np.cross(n, u)
    return e1, e2


@dataclass(frozen=True)
class NvOrientationSet:
    """The four orientation classes of the diamond lattice.

    ``axes`` has shape (4, 3). ``frames`` holds the per-axis rotation
    matrices whose rows are (e1, e2, n): multiplying a lab vector gives its
    components in that NV's own frame.
    """

    axes: np.ndarray = field(default_factory=lambda: NV_AXES.copy())

    def __post_init__(self):
        axes = np.asarray(self.axes, dtype=float)
        if axes.shape != (4, 3):
            raise ValueError(f"expected 4 axes of dimension 3, got shape {axes.shape}")
        norms = np.linalg.norm(axes, axis=1)
        if np.any(np.abs(1.0 - norms) >= 1e-12):
            raise ValueError("NV axes must have unit norm")
        gram = axes @ axes.T
        off = gram[~np.eye(4, dtype=bool)]
        if np.any(np.abs(off + 1.0 / 3.0) > 1e-12):
            raise ValueError("NV axes must be tetrahedral (pairwise dot product -1/3)")
        object.__setattr__(self, "axes", axes)
        e1, e2 = _transverse_basis(axes)
        object.__setattr__(self, "frames", np.stack([e1, e2, axes], axis=1))


DEFAULT_ORIENTATIONS = NvOrientationSet()

# Spin-1 operators in the basis (|+1>, |0>, |-1>).
_SQ2 = 1.0 / np.sqrt(2.0)
SX = _SQ2 * np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], dtype=complex)
SY = _SQ2 * np.array([[0, -1j, 0], [1j, 0, -1j], [0, 1j, 0]], dtype=complex)
SZ = np.diag([1.0, 0.0, -1.0]).astype(complex)
SZ2 = SZ @ SZ


def _check_axis_index(axis_index):
    if isinstance(axis_index, bool) or not isinstance(axis_index, (int, np.integer)):
        raise TypeError(f"axis_index must be an integer, got {axis_index!r}")
    if not 0 <= axis_index <= 3:
        raise IndexError(f"axis_index must be in 0..3, got {axis_index}")


def check_field(b, max_field=2e7):
    """Validate a lab field (..., 3) in nT against the model validity bound."""
    b = np.asarray(b, dtype=float)
    if b.shape[-1:] != (3,):
        raise ValueError(f"field must have 3 components, got shape {b.shape}")
    if not np.all(np.isfinite(b)):
        raise ValueError("field components must be finite")
    if np.any(np.linalg.norm(b, axis=-1) > max_field):
        raise ValueError(f"field magnitude exceeds validity bound of {max_field:g} nT")
    return b


def project_field(b, axis_index, orientations=DEFAULT_ORIENTATIONS):
    """Signed projection (nT) of lab field ``b`` onto NV axis ``axis_index``."""
    _check_axis_index(axis_index)
    b = np.asarray(b, dtype=float)
    return b @ orientations.axes[axis_index]


def project_all(b, orientations=DEFAULT_ORIENTATIONS):
    """Projections onto all four axes; shape (..., 4)."""
    return np.asarray(b, dtype=float) @ orientations.axes.T


def transitions_linear(b_nv, dt=0.0, constants=DEFAULT_CONSTANTS):
    """First-order transition frequencies ``(f_minus, f_plus)`` in Hz.

    Accepts scalars or arrays (broadcast).
    """
    center = constants.center(dt)
    shift = constants.gamma * np.asarray(b_nv, dtype=float)
    return center - shift, center + shift


def hamiltonian(b_local, dt=0.0, constants=DEFAULT_CONSTANTS):
    """Ground-state Hamiltonian in Hz for fields given in the NV frame.

    ``b_local`` has shape (..., 3) ordered (transverse x, transverse y, axial).
    """
    b_local = np.asarray(b_local, dtype=float)
    d = np.asarray(constants.center(dt))[..., None, None]
    g = constants.gamma
    return (
        d * SZ2
        + g * b_local[..., 0, None, None] * SX
        + g * b_local[..., 1, None, None] * SY
        + g * b_local[..., 2, None, None] * SZ
    )


def _full_from_local(b_local, dt, constants, with_vectors=False):
    h = hamiltonian(b_local, dt, constants)
    if with_vectors:
        w, v = np.linalg.eigh(h)
    else:
        w, v = np.linalg.eigvalsh(h), None
    lower = w[..., 1] - w[..., 0]
    upper = w[..., 2] - w[..., 0]
    # m_s=+1 is the lower branch when the axial projection is negative;
    # round-off around a purely transverse field must not flip the labels
    swap = b_local[..., 2] < -1e-9 * np.linalg.norm(b_local, axis=-1)
    f_minus = np.where(swap, upper, lower)
    f_plus = np.where(swap, lower, upper)
    return f_minus, f_plus, w, v, swap


def transitions_full(b, axis_index, dt=0.0, constants=DEFAULT_CONSTANTS,
                     orientations=DEFAULT_ORIENTATIONS):
    """Exact ``(f_minus, f_plus)`` in Hz for lab field ``b`` on one NV axis.

    The transitions are eigenvalue differences relative to the ground
    state. The branch carrying m_s=+1 character is labelled ``f_plus``, so
    the result reduces to :func:`transitions_linear` for purely axial
    fields of either sign.
    """
    _check_axis_index(axis_index)
    b = check_field(b)
    b_local = b @ orientations.frames[axis_index].T
    f_minus, f_plus, *_ = _full_from_local(b_local, dt, constants)
    return f_minus, f_plus


def eigenvalues(b, axis_index, dt=0.0, constants=DEFAULT_CONSTANTS,
                orientations=DEFAULT_ORIENTATIONS):
    """Sorted Hamiltonian eigenvalues (Hz) for one axis."""
    _check_axis_index(axis_index)
    b_local = check_field(b) @ orientations.frames[axis_index].T
    return np.linalg.eigvalsh(hamiltonian(b_local, dt, constants))


def hyperfine_lines(f_center, splitting=2.16e6):
    """Centres of the three 14N hyperfine lines around ``f_center``.

    Returned in the order m_I = -1, 0, +1 for the upper (m_s=+1) branch;
    for the lower branch the same set appears in reverse m_I order.
    """
    f_center = np.asarray(f_center, dtype=float)
    return np.stack([f_center - splitting, f_center, f_center + splitting], axis=-1)


def hyperfine_offset(branch, m_i, splitting=2.16e6):
    """Offset (Hz) of the (branch, m_I) hyperfine line from its centre.

    The hyperfine energy A*m_s*m_I shifts the 0 -> m_s transition by
    m_s * m_I * A.
    """
    if branch not in (-1, 1):
        raise ValueError(f"branch must be -1 or +1, got {branch}")
    if m_i not in (-1, 0, 1):
        raise ValueError(f"m_I must be -1, 0 or +1, got {m_i}")
    return branch * m_i * splitting


@dataclass(frozen=True)
class TransitionSet:
    """Eight resonance centres (Hz): ``f_minus`` and ``f_plus`` of shape (..., 4)."""

    f_minus: np.ndarray
    f_plus: np.ndarray
    splitting: float = 2.16e6

    def as_array(self):
        """Interleaved (..., 8) array: class 0 minus, class 0 plus, class 1 minus, ..."""
        return np.stack([self.f_minus, self.f_plus], axis=-1).reshape(
            np.shape(self.f_minus)[:-1] + (8,))

    @classmethod
    def from_array(cls, freqs, splitting=2.16e6):
        freqs = np.asarray(freqs, dtype=float)
        pairs = freqs.reshape(freqs.shape[:-1] + (4, 2))
        return cls(pairs[..., 0], pairs[..., 1], splitting)

    def line(self, axis_index, branch, m_i):
        centre = self.f_plus[..., axis_index] if branch == 1 else self.f_minus[..., axis_index]
        return centre + hyperfine_offset(branch, m_i, self.splitting)

    def all_lines(self):
        """All 24 hyperfine line centres, shape (..., 24)."""
        centres = self.as_array()
        return hyperfine_lines(centres, self.splitting).reshape(centres.shape[:-1] + (24,))


def all_class_frequencies(b, dt=0.0, model="linear", constants=DEFAULT_CONSTANTS,
                          orientations=DEFAULT_ORIENTATIONS, splitting=2.16e6):
    """Transition centres for all four classes under the chosen model.

    ``b`` may carry leading batch dimensions (..., 3); ``dt`` broadcasts
    against them.
    """
    if model not in MODELS:
        raise ValueError(f"model must be one of {MODELS}, got {model!r}")
    b = check_field(b)
    dt = np.asarray(dt, dtype=float)[..., None]
    if model == "linear":
        f_minus, f_plus = transitions_linear(project_all(b, orientations), dt, constants)
    else:
        b_local = np.einsum("aij,...j->...ai", orientations.frames, b)
        f_minus, f_plus, *_ = _full_from_local(b_local, dt, constants)
    return TransitionSet(f_minus, f_plus, splitting)


def frequency_jacobian(b, dt=0.0, model="linear", constants=DEFAULT_CONSTANTS,
                       orientations=DEFAULT_ORIENTATIONS):
    """Derivatives of the eight interleaved centres w.r.t. (bx, by, bz, dt).

    Returns ``(freqs, jac)`` with shapes (8,) and (8, 4). The full model uses
    Hellmann-Feynman derivatives of the Hamiltonian eigenvalues.
    """
    b = check_field(b)
    jac = np.empty((8, 4))
    if model == "linear":
        ts = all_class_frequencies(b, dt, "linear", constants, orientations)
        g = constants.gamma
        jac[0::2, :3] = -g * orientations.axes
        jac[1::2, :3] = g * orientations.axes
        jac[:, 3] = constants.beta_t
        return ts.as_array(), jac
    if model not in MODELS:
        raise ValueError(f"model must be one of {MODELS}, got {model!r}")
    frames = orientations.frames
    b_local = frames @ b
    f_minus, f_plus, w, v, swap = _full_from_local(b_local, dt, constants, with_vectors=True)
    g = constants.gamma
    for a in range(4):
        # dH/dB_lab_j = gamma * sum_k frames[a, k, j] * S_k
        ops = [SX, SY, SZ]
        dw = np.empty((3, 3))
        for j in range(3):
            dh = g * sum(frames[a, k, j] * ops[k] for k in range(3))
            dw[:, j] = np.real(np.einsum("ik,ij,jk->k", v[a].conj(), dh, v[a]))
        dwt = np.real(np.einsum("ik,ij,jk->k", v[a].conj(), constants.beta_t * SZ2, v[a]))
        lower = np.append(dw[1] - dw[0], dwt[1] - dwt[0])
        upper = np.append(dw[2] - dw[0], dwt[2] - dwt[0])
        if swap[a]:
            lower, upper = upper, lower
        jac[2 * a] = lower
        jac[2 * a + 1] = upper
    freqs = np.stack([f_minus, f_plus], axis=-1).reshape(8)
    return freqs, jac


def min_resonance_gap(ts):
    """Smallest spacing (Hz) between any two of the eight resonance centres."""
    f = np.sort(np.asarray(ts.as_array()).ravel())
    return float(np.min(np.diff(f)))


def bias_field(magnitude, theta, phi):
    """Lab-frame field (nT) from magnitude and polar/azimuthal angles (rad)."""
    return magnitude * np.array([
        np.sin(theta) * np.cos(phi),
        np.sin(theta) * np.sin(phi),
        np.cos(theta),
    ])
