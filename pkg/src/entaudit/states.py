"""Dense multiparty quantum states and the operations the audit toolkit needs.

States live on a :class:`PartyLayout`: an ordered list of party labels, each
party holding an ordered list of finite-dimensional subsystems.  Amplitudes
and density matrices are stored dense (row-major over the flattened subsystem
order), which is exact and fast for the joint dimensions this package targets
(a few hundred, hard cap 4096).

All entropic quantities use base-2 logarithms, so entropies are in bits and a
shared (|00> + |11>)/sqrt(2) pair carries exactly 1.0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "DEFAULT_DIM_CAP",
    "EIGEN_CUTOFF",
    "DimensionCapExceeded",
    "PartyLayout",
    "PureState",
    "DensityMatrix",
    "Ensemble",
    "ProjectiveMeasurement",
    "make_named_state",
    "tensor_states",
    "partial_trace",
    "von_neumann_entropy",
    "relative_entropy",
    "binary_entropy",
    "apply_local_unitary",
    "measure",
    "attach_ancilla",
    "computational_measurement",
    "x_basis_measurement",
    "bell_basis_measurement",
    "hamming_weight_measurement",
    "gate_matrix",
    "bell_vector",
    "BELL_LABELS",
    "haar_unitary",
    "random_pure_state",
    "random_density_matrix",
]

# Hard cap on the joint dimension of any constructed state.
DEFAULT_DIM_CAP = 4096
# Eigenvalues at or below this are treated as zero for supports and entropies.
EIGEN_CUTOFF = 1e-12
# Validation tolerances for norms, hermiticity, projector algebra.
_ATOL = 1e-10
# Measurement branches below this probability are pruned.
_BRANCH_PRUNE = 1e-12

_LN2 = math.log(2.0)


class DimensionCapExceeded(ValueError):
    """Raised when an operation would push the joint dimension past the cap."""


def _default_party_labels(n: int) -> tuple[str, ...]:
    # A, B, ..., Z, P0, P1, ... for pathological sizes
    alphabet = "ABCDEFGHIJKLMNOPQRSTUVWXYZ"
    if n <= len(alphabet):
        return tuple(alphabet[:n])
    return tuple(alphabet) + tuple(f"P{i}" for i in range(n - len(alphabet)))


@dataclass(frozen=True)
class PartyLayout:
    """Ordered parties, each holding an ordered tuple of subsystem dimensions.

    The flattened subsystem order (party order, then the party's own subsystem
    order) fixes the tensor index convention for every amplitude array and
    density matrix in the package.
    """

    parties: tuple[str, ...]
    dims: tuple[tuple[int, ...], ...]

    def __post_init__(self) -> None:
        parties = tuple(str(p) for p in self.parties)
        dims = tuple(tuple(int(d) for d in ds) for ds in self.dims)
        object.__setattr__(self, "parties", parties)
        object.__setattr__(self, "dims", dims)
        if len(parties) == 0:
            raise ValueError("layout needs at least one party")
        if len(set(parties)) != len(parties):
            raise ValueError(f"duplicate party labels in {parties}")
        if len(dims) != len(parties):
            raise ValueError("dims must give one tuple per party")
        for p, ds in zip(parties, dims):
            if len(ds) == 0:
                raise ValueError(f"party {p!r} has no subsystems")
            if any(d < 2 for d in ds):
                raise ValueError(f"party {p!r} has a subsystem of dimension < 2")

    @classmethod
    def of(cls, spec: Mapping[str, Sequence[int]]) -> "PartyLayout":
        """Build from an ordered mapping like ``{"A": [2], "B": [2, 2]}``."""
        return cls(tuple(spec.keys()), tuple(tuple(v) for v in spec.values()))

    @classmethod
    def qubits(cls, parties: Iterable[str], per_party: int = 1) -> "PartyLayout":
        """Layout with ``per_party`` qubits for each listed party."""
        labels = tuple(parties)
        return cls(labels, tuple((2,) * per_party for _ in labels))

    @property
    def joint_dim(self) -> int:
        return int(np.prod([d for ds in self.dims for d in ds], dtype=object))

    @property
    def subsystem_dims(self) -> tuple[int, ...]:
        return tuple(d for ds in self.dims for d in ds)

    def party_index(self, party: str) -> int:
        try:
            return self.parties.index(party)
        except ValueError:
            raise ValueError(f"unknown party {party!r}; layout has {self.parties}") from None

    def party_dims(self, party: str) -> tuple[int, ...]:
        return self.dims[self.party_index(party)]

    def local_dim(self, party: str) -> int:
        return int(np.prod(self.party_dims(party)))

    def axes_of(self, party: str) -> tuple[int, ...]:
        """Flat tensor-axis indices of the party's subsystems."""
        i = self.party_index(party)
        start = sum(len(ds) for ds in self.dims[:i])
        return tuple(range(start, start + len(self.dims[i])))

    def with_ancilla(self, party: str, dim: int) -> "PartyLayout":
        i = self.party_index(party)
        dims = list(self.dims)
        dims[i] = dims[i] + (int(dim),)
        return PartyLayout(self.parties, tuple(dims))

    def subset(self, keep: Iterable[str]) -> "PartyLayout":
        """Layout restricted to ``keep``, preserving the canonical order."""
        kept = set(keep)
        unknown = kept - set(self.parties)
        if unknown:
            raise ValueError(f"unknown parties {sorted(unknown)}; layout has {self.parties}")
        parties = tuple(p for p in self.parties if p in kept)
        if not parties:
            raise ValueError("cannot restrict a layout to zero parties")
        dims = tuple(self.dims[self.party_index(p)] for p in parties)
        return PartyLayout(parties, dims)

    def to_dict(self) -> dict:
        return {p: list(ds) for p, ds in zip(self.parties, self.dims)}

    @classmethod
    def from_dict(cls, d: Mapping[str, Sequence[int]]) -> "PartyLayout":
        return cls.of(d)


def _as_state_vector(layout: PartyLayout, amplitudes: np.ndarray) -> np.ndarray:
    vec = np.asarray(amplitudes, dtype=np.complex128).reshape(-1).copy()
    if vec.size != layout.joint_dim:
        raise ValueError(
            f"amplitude length {vec.size} does not match joint dimension {layout.joint_dim}"
        )
    norm = float(np.linalg.norm(vec))
    if abs(norm - 1.0) > _ATOL:
        raise ValueError(f"state vector norm {norm!r} is not 1 within {_ATOL}")
    vec.flags.writeable = False
    return vec


@dataclass(frozen=True)
class PureState:
    """Normalized state vector over a :class:`PartyLayout`."""

    layout: PartyLayout
    amplitudes: np.ndarray

    def __post_init__(self) -> None:
        if self.layout.joint_dim > DEFAULT_DIM_CAP:
            raise DimensionCapExceeded(
                f"joint dimension {self.layout.joint_dim} exceeds cap {DEFAULT_DIM_CAP}"
            )
        object.__setattr__(self, "amplitudes", _as_state_vector(self.layout, self.amplitudes))

    def tensor_view(self) -> np.ndarray:
        return self.amplitudes.reshape(self.layout.subsystem_dims)

    def density_matrix(self) -> "DensityMatrix":
        vec = self.amplitudes
        return DensityMatrix(self.layout, np.outer(vec, vec.conj()))

    def fidelity(self, other: "PureState") -> float:
        """|<self|other>|^2; requires identical layouts."""
        if self.layout != other.layout:
            raise ValueError("fidelity requires identical layouts")
        return float(abs(np.vdot(self.amplitudes, other.amplitudes)) ** 2)

    def to_dict(self) -> dict:
        return {
            "layout": self.layout.to_dict(),
            "amplitudes": [[float(a.real), float(a.imag)] for a in self.amplitudes],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "PureState":
        layout = PartyLayout.from_dict(d["layout"])
        amps = np.array([complex(re, im) for re, im in d["amplitudes"]], dtype=np.complex128)
        return cls(layout, amps)


def _symmetrize(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + m.conj().T)


@dataclass(frozen=True)
class DensityMatrix:
    """Hermitian, unit-trace, positive-semidefinite operator over a layout."""

    layout: PartyLayout
    matrix: np.ndarray

    def __post_init__(self) -> None:
        d = self.layout.joint_dim
        if d > DEFAULT_DIM_CAP:
            raise DimensionCapExceeded(
                f"joint dimension {d} exceeds cap {DEFAULT_DIM_CAP}"
            )
        m = np.asarray(self.matrix, dtype=np.complex128)
        if m.shape != (d, d):
            raise ValueError(f"matrix shape {m.shape} does not match joint dimension {d}")
        if np.max(np.abs(m - m.conj().T)) > _ATOL:
            raise ValueError("density matrix is not Hermitian within tolerance")
        m = _symmetrize(m).copy()
        tr = float(np.trace(m).real)
        if abs(tr - 1.0) > _ATOL:
            raise ValueError(f"density matrix trace {tr!r} is not 1 within {_ATOL}")
        lo = float(np.linalg.eigvalsh(m)[0])
        if lo < -_ATOL:
            raise ValueError(f"density matrix has negative eigenvalue {lo!r}")
        m.flags.writeable = False
        object.__setattr__(self, "matrix", m)

    def eigensystem(self) -> tuple[np.ndarray, np.ndarray]:
        return np.linalg.eigh(self.matrix)

    def purity(self) -> float:
        return float(np.trace(self.matrix @ self.matrix).real)


def _coerce_matrix(rho: "DensityMatrix | PureState") -> np.ndarray:
    if isinstance(rho, PureState):
        return np.outer(rho.amplitudes, rho.amplitudes.conj())
    if isinstance(rho, DensityMatrix):
        return rho.matrix
    return np.asarray(rho, dtype=np.complex128)


@dataclass(frozen=True)
class Ensemble:
    """Probability-weighted list of states on a common layout.

    ``labels`` optionally names the members (measurement outcomes); when
    present it has one entry per member.
    """

    members: tuple[tuple[float, "PureState | DensityMatrix"], ...]
    labels: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        members = tuple((float(p), s) for p, s in self.members)
        object.__setattr__(self, "members", members)
        if not members:
            raise ValueError("ensemble needs at least one member")
        probs = [p for p, _ in members]
        if any(p < -_ATOL for p in probs):
            raise ValueError("ensemble probabilities must be nonnegative")
        if abs(sum(probs) - 1.0) > _ATOL:
            raise ValueError(f"ensemble probabilities sum to {sum(probs)!r}, not 1")
        layouts = {s.layout for _, s in members}
        if len(layouts) != 1:
            raise ValueError("ensemble members must share one layout")
        if self.labels is not None:
            labels = tuple(str(x) for x in self.labels)
            if len(labels) != len(members):
                raise ValueError("one label per ensemble member required")
            object.__setattr__(self, "labels", labels)

    @property
    def layout(self) -> PartyLayout:
        return self.members[0][1].layout

    def average(self) -> DensityMatrix:
        acc = np.zeros((self.layout.joint_dim,) * 2, dtype=np.complex128)
        for p, s in self.members:
            acc += p * _coerce_matrix(s)
        return DensityMatrix(self.layout, acc)


@dataclass(frozen=True)
class ProjectiveMeasurement:
    """Complete set of orthogonal projectors on one party's full local space.

    Outcome ``k`` carries ``labels[k]``; labels are the handles protocol
    conditions match on.
    """

    party: str
    projectors: tuple[np.ndarray, ...]
    labels: tuple[str, ...]

    def __post_init__(self) -> None:
        projs = tuple(np.asarray(p, dtype=np.complex128) for p in self.projectors)
        for p in projs:
            p.flags.writeable = False
        object.__setattr__(self, "projectors", projs)
        object.__setattr__(self, "labels", tuple(str(x) for x in self.labels))
        if len(projs) == 0:
            raise ValueError("measurement needs at least one projector")
        if len(self.labels) != len(projs):
            raise ValueError("one label per projector required")
        if len(set(self.labels)) != len(self.labels):
            raise ValueError("outcome labels must be distinct")
        d = projs[0].shape[0]
        acc = np.zeros((d, d), dtype=np.complex128)
        for i, p in enumerate(projs):
            if p.shape != (d, d):
                raise ValueError("projectors must share one square shape")
            if np.max(np.abs(p - p.conj().T)) > _ATOL:
                raise ValueError(f"projector {i} is not Hermitian")
            if np.max(np.abs(p @ p - p)) > _ATOL:
                raise ValueError(f"projector {i} is not idempotent")
            for q in projs[:i]:
                if np.max(np.abs(p @ q)) > _ATOL:
                    raise ValueError("projectors are not mutually orthogonal")
            acc += p
        if np.max(np.abs(acc - np.eye(d))) > _ATOL:
            raise ValueError("projectors do not resolve the identity")

    @property
    def local_dim(self) -> int:
        return self.projectors[0].shape[0]


# ---------------------------------------------------------------------------
# Named states and gates
# ---------------------------------------------------------------------------

_H = np.array([[1.0, 1.0], [1.0, -1.0]], dtype=np.complex128) / math.sqrt(2.0)
_X = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=np.complex128)
_Z = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=np.complex128)

BELL_LABELS = ("phi+", "phi-", "psi+", "psi-")


def bell_vector(label: str) -> np.ndarray:
    """The four Bell vectors on two qubits, indexed by their usual names."""
    s = 1.0 / math.sqrt(2.0)
    table = {
        "phi+": np.array([s, 0.0, 0.0, s]),
        "phi-": np.array([s, 0.0, 0.0, -s]),
        "psi+": np.array([0.0, s, s, 0.0]),
        "psi-": np.array([0.0, s, -s, 0.0]),
    }
    if label not in table:
        raise ValueError(f"unknown Bell label {label!r}; expected one of {BELL_LABELS}")
    return table[label].astype(np.complex128)


def gate_matrix(spec: Mapping) -> np.ndarray:
    """Resolve a gate payload to a unitary matrix.

    Supported forms: ``{"gate": "H"|"X"|"Z"}``, ``{"gate": "Ry", "theta": t}``,
    ``{"gate": "diag", "phases": [...]}`` (phases in radians), and
    ``{"matrix": [[[re, im], ...], ...]}`` for an explicit unitary.
    """
    if "matrix" in spec:
        rows = spec["matrix"]
        m = np.array(
            [[complex(entry[0], entry[1]) for entry in row] for row in rows],
            dtype=np.complex128,
        )
        return m
    name = spec.get("gate")
    if name == "H":
        return _H.copy()
    if name == "X":
        return _X.copy()
    if name == "Z":
        return _Z.copy()
    if name == "Ry":
        t = float(spec["theta"])
        c, s = math.cos(t / 2.0), math.sin(t / 2.0)
        return np.array([[c, -s], [s, c]], dtype=np.complex128)
    if name == "diag":
        phases = [float(x) for x in spec["phases"]]
        return np.diag(np.exp(1j * np.array(phases)))
    raise ValueError(f"unknown gate payload {dict(spec)!r}")


def make_named_state(name: str, params: Sequence[float] = ()) -> PureState:
    """Construct one of the package's named states.

    Parameters
    ----------
    name : str
        One of ``ghz`` (params: number of parties), ``singlet``, ``psi_plus``,
        ``psi_minus``, ``phi1`` (params: alpha), ``phi2`` (params: alpha),
        ``product_zero`` (params: one local dimension per party).
    params : sequence of float
        Real parameters as listed above.

    Notes
    -----
    ``singlet`` and ``psi_plus`` are both (|00> + |11>)/sqrt(2) — the package
    follows the convention that "singlet" names the canonical unit of
    bipartite entanglement, not the antisymmetric state. ``phi1(alpha)`` is
    alpha|000> + beta|111> and ``phi2(alpha)`` is
    alpha|0>Psi+ + beta|1>Psi- with beta = sqrt(1 - alpha^2) and
    Psi+- = (|00> +- |11>)/sqrt(2).
    """
    params = tuple(float(x) for x in params)
    if name == "ghz":
        if len(params) != 1:
            raise ValueError("ghz takes one parameter: the number of parties")
        n = int(params[0])
        if n != params[0] or n < 2:
            raise ValueError(f"ghz party count must be an integer >= 2, got {params[0]!r}")
        layout = PartyLayout.qubits(_default_party_labels(n))
        amps = np.zeros(2**n, dtype=np.complex128)
        amps[0] = amps[-1] = 1.0 / math.sqrt(2.0)
        return PureState(layout, amps)
    if name in ("singlet", "psi_plus", "psi_minus"):
        layout = PartyLayout.qubits(("A", "B"))
        label = "phi-" if name == "psi_minus" else "phi+"
        return PureState(layout, bell_vector(label))
    if name in ("phi1", "phi2"):
        if len(params) != 1:
            raise ValueError(f"{name} takes one parameter: alpha")
        alpha = params[0]
        if not 0.0 <= alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {alpha!r}")
        beta = math.sqrt(max(0.0, 1.0 - alpha * alpha))
        layout = PartyLayout.qubits(("A", "B", "C"))
        amps = np.zeros(8, dtype=np.complex128)
        if name == "phi1":
            amps[0b000] = alpha
            amps[0b111] = beta
        else:
            s = 1.0 / math.sqrt(2.0)
            amps[0b000] = alpha * s
            amps[0b011] = alpha * s
            amps[0b100] = beta * s
            amps[0b111] = -beta * s
        return PureState(layout, amps)
    if name == "product_zero":
        if not params:
            raise ValueError("product_zero takes one local dimension per party")
        dims = tuple(int(d) for d in params)
        if any(d != p or d < 2 for d, p in zip(dims, params)):
            raise ValueError("product_zero dimensions must be integers >= 2")
        layout = PartyLayout(_default_party_labels(len(dims)), tuple((d,) for d in dims))
        amps = np.zeros(layout.joint_dim, dtype=np.complex128)
        amps[0] = 1.0
        return PureState(layout, amps)
    raise ValueError(f"unknown named state {name!r}")


def tensor_states(
    factors: Sequence[tuple[PureState, Sequence[str]]],
    dim_cap: int = DEFAULT_DIM_CAP,
) -> PureState:
    """Tensor pure states together, merging subsystems that land on one party.

    Each factor comes with replacement party labels (one per party of the
    factor's own layout).  A label may repeat across factors: the party then
    accumulates subsystems in factor order.  The result's party order is the
    order of first appearance.

    Examples
    --------
    Two shared pairs with a common middle party plus local workspace:

    >>> s = make_named_state("singlet")
    >>> z = make_named_state("product_zero", [2])
    >>> st = tensor_states([(s, ["A", "B"]), (s, ["B", "C"]), (z, ["B"])])
    >>> st.layout.to_dict()
    {'A': [2], 'B': [2, 2, 2], 'C': [2]}
    """
    if not factors:
        raise ValueError("tensor_states needs at least one factor")
    party_order: list[str] = []
    party_dims: dict[str, list[int]] = {}
    # Flat source position of every subsystem in the naive factor-order product.
    placements: list[tuple[str, int]] = []  # (party, subsystem index within party)
    for state, labels in factors:
        labels = [str(x) for x in labels]
        if len(labels) != len(state.layout.parties):
            raise ValueError("factor labels must cover the factor's parties exactly")
        for orig, new in zip(state.layout.parties, labels):
            if new not in party_dims:
                party_order.append(new)
                party_dims[new] = []
            for d in state.layout.party_dims(orig):
                party_dims[new].append(d)
                placements.append((new, len(party_dims[new]) - 1))
    layout = PartyLayout(tuple(party_order), tuple(tuple(party_dims[p]) for p in party_order))
    if layout.joint_dim > dim_cap:
        raise DimensionCapExceeded(
            f"joint dimension {layout.joint_dim} exceeds cap {dim_cap}"
        )
    joint = factors[0][0].amplitudes
    for state, _ in factors[1:]:
        joint = np.kron(joint, state.amplitudes)
    # Source axis i goes to the canonical position of placements[i].
    source_dims = tuple(
        d for state, _ in factors for d in state.layout.subsystem_dims
    )
    dest: list[int] = []
    for party, sub in placements:
        axis0 = layout.axes_of(party)[0]
        dest.append(axis0 + sub)
    tensor = joint.reshape(source_dims)
    tensor = np.moveaxis(tensor, list(range(len(dest))), dest)
    return PureState(layout, tensor.reshape(-1))


# ---------------------------------------------------------------------------
# Core operations
# ---------------------------------------------------------------------------


def _apply_on_axes(
    tensor: np.ndarray, op: np.ndarray, axes: Sequence[int], dims: Sequence[int]
) -> np.ndarray:
    """Contract ``op`` (matrix on prod(dims)) into the listed tensor axes."""
    k = len(axes)
    op_t = op.reshape(tuple(dims) + tuple(dims))
    out = np.tensordot(op_t, tensor, axes=(list(range(k, 2 * k)), list(axes)))
    return np.moveaxis(out, list(range(k)), list(axes))


def partial_trace(state: "PureState | DensityMatrix", keep: Iterable[str]) -> DensityMatrix:
    """Reduced density matrix on the kept parties (canonical layout order).

    Parameters
    ----------
    state : PureState or DensityMatrix
    keep : iterable of str
        Party labels to keep; the rest are traced out.

    Returns
    -------
    DensityMatrix on ``state.layout.subset(keep)``.
    """
    layout = state.layout
    sub = layout.subset(keep)
    keep_axes = [a for p in sub.parties for a in layout.axes_of(p)]
    drop_axes = [a for a in range(len(layout.subsystem_dims)) if a not in keep_axes]
    dims = layout.subsystem_dims
    dk = int(np.prod([dims[a] for a in keep_axes])) if keep_axes else 1
    if isinstance(state, PureState):
        t = state.tensor_view()
        if not drop_axes:
            vec = state.amplitudes
            return DensityMatrix(sub, np.outer(vec, vec.conj()))
        red = np.tensordot(t, t.conj(), axes=(drop_axes, drop_axes))
        return DensityMatrix(sub, red.reshape(dk, dk))
    m = state.matrix.reshape(dims + dims)
    n = len(dims)
    # Trace out dropped axes from highest to lowest so indices stay valid.
    # Kept axes stay in ascending flat order, which is already the canonical
    # order of the restricted layout.
    for a in sorted(drop_axes, reverse=True):
        m = np.trace(m, axis1=a, axis2=a + n)
        n -= 1
    return DensityMatrix(sub, m.reshape(dk, dk))


def _entropy_of_eigs(eigs: np.ndarray) -> float:
    lam = eigs[eigs > EIGEN_CUTOFF]
    if lam.size == 0:
        return 0.0
    return float(-(lam * np.log2(lam)).sum())


def von_neumann_entropy(rho: DensityMatrix) -> float:
    """S(rho) = -Tr rho log2 rho in bits (eigenvalue cutoff 1e-12)."""
    eigs = np.linalg.eigvalsh(_symmetrize(_coerce_matrix(rho)))
    return _entropy_of_eigs(np.clip(eigs, 0.0, None))


def binary_entropy(x: float) -> float:
    """H(x) = -x log2 x - (1-x) log2 (1-x) on [0, 1]."""
    x = float(x)
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"binary_entropy argument {x!r} outside [0, 1]")
    if x <= 0.0 or x >= 1.0:
        return 0.0
    return float(-x * math.log2(x) - (1.0 - x) * math.log2(1.0 - x))


def relative_entropy(rho, sigma) -> float:
    """S(rho||sigma) = Tr rho log2 rho - Tr rho log2 sigma in bits.

    Returns ``math.inf`` when the support of rho is not contained in the
    support of sigma (supports decided by the 1e-12 eigenvalue cutoff).
    Accepts :class:`DensityMatrix`, :class:`PureState`, or raw matrices.
    """
    r = _symmetrize(_coerce_matrix(rho))
    s = _symmetrize(_coerce_matrix(sigma))
    r_eigs = np.clip(np.linalg.eigvalsh(r), 0.0, None)
    tr_r_log_r = float((lambda lam: (lam * np.log2(lam)).sum())(r_eigs[r_eigs > EIGEN_CUTOFF]))
    s_eigs, s_vecs = np.linalg.eigh(s)
    r_in_s_basis = s_vecs.conj().T @ r @ s_vecs
    diag = np.clip(np.diag(r_in_s_basis).real, 0.0, None)
    on_support = s_eigs > EIGEN_CUTOFF
    # rho mass sitting outside sigma's support means the divergence is infinite.
    leaked = float(diag[~on_support].sum())
    if leaked > 1e-10:
        return math.inf
    lam = s_eigs[on_support]
    tr_r_log_s = float((diag[on_support] * np.log2(lam)).sum())
    return tr_r_log_r - tr_r_log_s


def apply_local_unitary(
    state: PureState,
    party: str,
    u: np.ndarray,
    subsystems: Sequence[int] | None = None,
) -> PureState:
    """Apply a unitary on one party's local space (or listed subsystems of it).

    Parameters
    ----------
    state : PureState
    party : str
    u : array
        Unitary on the product of the targeted subsystem dimensions.
    subsystems : sequence of int, optional
        Indices into the party's own subsystem list, in the tensor order the
        unitary expects.  Default: the party's full local space.
    """
    layout = state.layout
    party_axes = layout.axes_of(party)
    pdims = layout.party_dims(party)
    if subsystems is None:
        subsystems = tuple(range(len(pdims)))
    subsystems = tuple(int(i) for i in subsystems)
    if len(set(subsystems)) != len(subsystems):
        raise ValueError("subsystem indices must be distinct")
    for i in subsystems:
        if not 0 <= i < len(pdims):
            raise ValueError(f"party {party!r} has no subsystem {i}")
    axes = [party_axes[i] for i in subsystems]
    dims = [pdims[i] for i in subsystems]
    d = int(np.prod(dims))
    u = np.asarray(u, dtype=np.complex128)
    if u.shape != (d, d):
        raise ValueError(f"unitary shape {u.shape} does not match target dimension {d}")
    if np.max(np.abs(u.conj().T @ u - np.eye(d))) > _ATOL:
        raise ValueError("matrix is not unitary within tolerance")
    out = _apply_on_axes(state.tensor_view(), u, axes, dims)
    return PureState(layout, out.reshape(-1))


def measure(state: PureState, m: ProjectiveMeasurement) -> Ensemble:
    """Measure one party projectively; return the labeled outcome ensemble.

    Branches with probability below 1e-12 are pruned and the remaining
    probabilities renormalized.  Branch states are normalized pure states on
    the unchanged layout (nothing is discarded).
    """
    layout = state.layout
    axes = list(layout.axes_of(m.party))
    dims = list(layout.party_dims(m.party))
    if m.local_dim != int(np.prod(dims)):
        raise ValueError(
            f"measurement dimension {m.local_dim} does not match party "
            f"{m.party!r} local dimension {int(np.prod(dims))}"
        )
    t = state.tensor_view()
    branches: list[tuple[float, str, np.ndarray]] = []
    total = 0.0
    for label, proj in zip(m.labels, m.projectors):
        out = _apply_on_axes(t, proj, axes, dims).reshape(-1)
        p = float(np.linalg.norm(out) ** 2)
        total += p
        if p >= _BRANCH_PRUNE:
            branches.append((p, label, out / math.sqrt(p)))
    if abs(total - 1.0) > 1e-9:
        raise ValueError(f"outcome probabilities sum to {total!r}, not 1")
    norm = sum(p for p, _, _ in branches)
    members = tuple((p / norm, PureState(layout, vec)) for p, _, vec in branches)
    return Ensemble(members, labels=tuple(label for _, label, _ in branches))


def attach_ancilla(
    state: PureState, party: str, dim: int, dim_cap: int = DEFAULT_DIM_CAP
) -> PureState:
    """Append a |0> subsystem of the given dimension to one party."""
    dim = int(dim)
    if dim < 2:
        raise ValueError("ancilla dimension must be >= 2")
    new_layout = state.layout.with_ancilla(party, dim)
    if new_layout.joint_dim > dim_cap:
        raise DimensionCapExceeded(
            f"joint dimension {new_layout.joint_dim} exceeds cap {dim_cap}"
        )
    e0 = np.zeros(dim, dtype=np.complex128)
    e0[0] = 1.0
    tensor = np.tensordot(state.tensor_view(), e0, axes=0)
    # The new subsystem sits at the end of the party's block.
    pos = new_layout.axes_of(party)[-1]
    tensor = np.moveaxis(tensor, -1, pos)
    return PureState(new_layout, tensor.reshape(-1))


# ---------------------------------------------------------------------------
# Measurement constructors
# ---------------------------------------------------------------------------


def _embed_projectors(
    layout: PartyLayout,
    party: str,
    subsystems: Sequence[int] | None,
    projs: Sequence[np.ndarray],
    labels: Sequence[str],
) -> ProjectiveMeasurement:
    """Lift projectors on selected subsystems to the party's full local space."""
    pdims = layout.party_dims(party)
    if subsystems is None:
        subsystems = tuple(range(len(pdims)))
    subsystems = tuple(int(i) for i in subsystems)
    rest = [i for i in range(len(pdims)) if i not in subsystems]
    if not rest:
        # Projectors act on the full space already, possibly with reordered
        # subsystems; permute them into the party's canonical order.
        if subsystems == tuple(range(len(pdims))):
            return ProjectiveMeasurement(party, tuple(projs), tuple(labels))
    target_dims = [pdims[i] for i in subsystems]
    rest_dims = [pdims[i] for i in rest]
    d_rest = int(np.prod(rest_dims)) if rest else 1
    full: list[np.ndarray] = []
    order = list(subsystems) + rest
    inv = np.argsort(order)
    n = len(pdims)
    for proj in projs:
        p = np.kron(np.asarray(proj, dtype=np.complex128), np.eye(d_rest))
        # p currently acts on (targets..., rest...); permute to canonical order.
        pt = p.reshape(tuple(target_dims + rest_dims) * 2)
        perm = list(inv) + [i + n for i in inv]
        pt = np.transpose(pt, perm)
        d = int(np.prod(pdims))
        full.append(pt.reshape(d, d))
    return ProjectiveMeasurement(party, tuple(full), tuple(labels))


def _digit_labels(dims: Sequence[int]) -> list[str]:
    labels = [""]
    for d in dims:
        labels = [s + str(i) for s in labels for i in range(d)]
    return labels


def computational_measurement(
    layout: PartyLayout, party: str, subsystems: Sequence[int] | None = None
) -> ProjectiveMeasurement:
    """Rank-1 measurement in the computational basis of the chosen subsystems.

    Outcome labels are digit strings, one digit per measured subsystem.
    """
    pdims = layout.party_dims(party)
    subs = tuple(range(len(pdims))) if subsystems is None else tuple(subsystems)
    dims = [pdims[i] for i in subs]
    d = int(np.prod(dims))
    projs = []
    for i in range(d):
        p = np.zeros((d, d), dtype=np.complex128)
        p[i, i] = 1.0
        projs.append(p)
    return _embed_projectors(layout, party, subs, projs, _digit_labels(dims))


def x_basis_measurement(
    layout: PartyLayout, party: str, subsystems: Sequence[int] | None = None
) -> ProjectiveMeasurement:
    """Rank-1 measurement in the |+>/|-> basis (qubit subsystems only)."""
    pdims = layout.party_dims(party)
    subs = tuple(range(len(pdims))) if subsystems is None else tuple(subsystems)
    if any(pdims[i] != 2 for i in subs):
        raise ValueError("x-basis measurement requires qubit subsystems")
    plus = np.array([1.0, 1.0], dtype=np.complex128) / math.sqrt(2.0)
    minus = np.array([1.0, -1.0], dtype=np.complex128) / math.sqrt(2.0)
    vecs = [plus, minus]
    labels1 = ["+", "-"]
    projs = [np.outer(v, v.conj()) for v in vecs]
    out_projs = projs
    out_labels = labels1
    for _ in range(len(subs) - 1):
        out_projs = [np.kron(a, b) for a in out_projs for b in projs]
        out_labels = [la + lb for la in out_labels for lb in labels1]
    return _embed_projectors(layout, party, subs, out_projs, out_labels)


def bell_basis_measurement(
    layout: PartyLayout, party: str, subsystems: Sequence[int]
) -> ProjectiveMeasurement:
    """Bell-basis measurement on an ordered pair of one party's qubits."""
    subs = tuple(int(i) for i in subsystems)
    if len(subs) != 2:
        raise ValueError("Bell measurement takes exactly two subsystems")
    pdims = layout.party_dims(party)
    if any(pdims[i] != 2 for i in subs):
        raise ValueError("Bell measurement requires qubit subsystems")
    projs = [np.outer(bell_vector(l), bell_vector(l).conj()) for l in BELL_LABELS]
    return _embed_projectors(layout, party, subs, projs, BELL_LABELS)


def hamming_weight_measurement(layout: PartyLayout, party: str) -> ProjectiveMeasurement:
    """Coarse measurement of the number of excited qubits a party holds.

    Projector ``k`` sums the computational projectors of all bitstrings of
    weight ``k``; outcome labels are ``"0" ... "n"``.
    """
    pdims = layout.party_dims(party)
    if any(d != 2 for d in pdims):
        raise ValueError("Hamming-weight measurement requires qubit subsystems")
    n = len(pdims)
    d = 2**n
    projs = [np.zeros((d, d), dtype=np.complex128) for _ in range(n + 1)]
    for i in range(d):
        k = bin(i).count("1")
        projs[k][i, i] = 1.0
    return ProjectiveMeasurement(party, tuple(projs), tuple(str(k) for k in range(n + 1)))


# ---------------------------------------------------------------------------
# Randomized helpers (seeded; used by tests and the fuzz harness)
# ---------------------------------------------------------------------------


def haar_unitary(dim: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed unitary via QR of a complex Gaussian matrix."""
    g = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    q, r = np.linalg.qr(g)
    # Fix the phase ambiguity so the distribution is exactly Haar.
    return q * (np.diag(r) / np.abs(np.diag(r)))


def random_pure_state(layout: PartyLayout, rng: np.random.Generator) -> PureState:
    d = layout.joint_dim
    v = rng.normal(size=d) + 1j * rng.normal(size=d)
    return PureState(layout, v / np.linalg.norm(v))


def random_density_matrix(
    layout: PartyLayout, rng: np.random.Generator, rank: int | None = None
) -> DensityMatrix:
    d = layout.joint_dim
    r = d if rank is None else int(rank)
    g = rng.normal(size=(d, r)) + 1j * rng.normal(size=(d, r))
    m = g @ g.conj().T
    return DensityMatrix(layout, m / np.trace(m).real)
