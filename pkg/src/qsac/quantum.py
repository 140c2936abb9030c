"""
Statevector simulation of the variational circuits used by the hybrid networks.

Qubit 0 is the most significant bit of the basis index, so |10> on two qubits is
amplitude index 2. Gates act in place on a batch of amplitude vectors through
reshaped views; no full unitary is ever built here. Training runs fuse each layer
into one 2x2 matrix per qubit plus a basis permutation for the entangler, while
the gate-by-gate plan backs bind_gates and the parameter-shift rule.
"""

from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from qsac.exceptions import ConfigurationError

MAX_QUBITS = 12
SHIFT = np.pi / 2


class GateKind(str, Enum):
    RX = "RX"
    RY = "RY"
    RZ = "RZ"
    CNOT = "CNOT"


ROTATIONS = (GateKind.RX, GateKind.RY, GateKind.RZ)


@dataclass(frozen=True)
class GateOp:
    """A concrete gate: rotations carry an angle, CNOT a control qubit"""

    kind: GateKind
    target: int
    control: int = -1
    angle: float = 0.0


@dataclass(frozen=True)
class PlannedGate:
    """A gate of the expanded circuit layout.

    `param` indexes the flattened parameter vector; encoding gates also carry the
    `feature` they scale, so their angle is params[param] * x[feature].
    """

    kind: GateKind
    target: int
    control: int = -1
    param: int = -1
    feature: int = -1


@dataclass
class StateVector:
    n_qubits: int
    amplitudes: np.ndarray

    def __post_init__(self):
        if self.amplitudes.shape != (2**self.n_qubits,):
            raise ValueError(f"Expected {2 ** self.n_qubits} amplitudes, got shape {self.amplitudes.shape}")

    @property
    def norm(self) -> float:
        return float(np.vdot(self.amplitudes, self.amplitudes).real)


def ring_pattern(n_qubits: int) -> Tuple[Tuple[int, int], ...]:
    """Closed CNOT chain, control i -> target (i + 1) mod n."""
    if n_qubits < 2:
        return ()
    return tuple((i, (i + 1) % n_qubits) for i in range(n_qubits))


@dataclass(frozen=True)
class CircuitSpec:
    """Static layout of a data re-uploading circuit.

    encode, then (RX RY RZ rotations + CNOT ring + re-encode) x (n_layers - 1),
    then a final rotation layer (RY RZ only by default) + CNOT ring, then Z readout.
    """

    n_qubits: int
    n_layers: int
    reupload: bool = True
    last_layer_yz_only: bool = True
    entangle_pattern: Optional[Tuple[Tuple[int, int], ...]] = None

    def __post_init__(self):
        if not 1 <= self.n_qubits <= MAX_QUBITS:
            raise ConfigurationError(f"n_qubits must be in [1, {MAX_QUBITS}], got {self.n_qubits}")
        if self.n_layers < 1:
            raise ConfigurationError(f"n_layers must be >= 1, got {self.n_layers}")
        if self.entangle_pattern is None:
            object.__setattr__(self, "entangle_pattern", ring_pattern(self.n_qubits))
        for control, target in self.entangle_pattern:
            _check_qubit(control, self.n_qubits)
            _check_qubit(target, self.n_qubits)
            if control == target:
                raise ConfigurationError(f"CNOT control and target are both qubit {control}")

    @property
    def n_encodings(self) -> int:
        return self.n_layers if self.reupload else 1

    @property
    def rotation_shapes(self) -> List[Tuple[int, int]]:
        last_axes = 2 if self.last_layer_yz_only else 3
        return [(self.n_qubits, 3)] * (self.n_layers - 1) + [(self.n_qubits, last_axes)]

    @property
    def n_params(self) -> int:
        return self.n_encodings * self.n_qubits + sum(q * a for q, a in self.rotation_shapes)

    def plan(self) -> Tuple[PlannedGate, ...]:
        return expand_plan(self)


@dataclass
class CircuitParams:
    """Learnable circuit parameters.

    Flattened order: encoding weights (occurrence-major, then qubit), then every
    rotation layer (qubit-major, then axis).
    """

    encode_weights: np.ndarray
    rot_params: List[np.ndarray] = field(default_factory=list)

    def flatten(self) -> np.ndarray:
        return np.concatenate([self.encode_weights.ravel()] + [layer.ravel() for layer in self.rot_params])

    @classmethod
    def unflatten(cls, spec: CircuitSpec, flat: np.ndarray) -> "CircuitParams":
        flat = np.asarray(flat, dtype=float)
        if flat.shape != (spec.n_params,):
            raise ValueError(f"Expected {spec.n_params} circuit parameters, got shape {flat.shape}")
        n_enc = spec.n_encodings * spec.n_qubits
        encode_weights = flat[:n_enc].reshape(spec.n_encodings, spec.n_qubits).copy()
        rot_params, offset = [], n_enc
        for shape in spec.rotation_shapes:
            size = shape[0] * shape[1]
            rot_params.append(flat[offset : offset + size].reshape(shape).copy())
            offset += size
        return cls(encode_weights=encode_weights, rot_params=rot_params)

    @classmethod
    def zeros(cls, spec: CircuitSpec, encode_weight: float = 0.0) -> "CircuitParams":
        return cls(
            encode_weights=np.full((spec.n_encodings, spec.n_qubits), encode_weight),
            rot_params=[np.zeros(shape) for shape in spec.rotation_shapes],
        )

    @classmethod
    def initial(cls, spec: CircuitSpec, rng: np.random.Generator) -> "CircuitParams":
        """Unit encoding weights, rotation angles uniform in [0, pi)."""
        return cls(
            encode_weights=np.ones((spec.n_encodings, spec.n_qubits)),
            rot_params=[rng.uniform(0.0, np.pi, size=shape) for shape in spec.rotation_shapes],
        )


ParamsLike = Union[CircuitParams, np.ndarray]


@lru_cache(maxsize=64)
def expand_plan(spec: CircuitSpec) -> Tuple[PlannedGate, ...]:
    n = spec.n_qubits
    gates: List[PlannedGate] = []
    ring = [PlannedGate(GateKind.CNOT, target=t, control=c) for c, t in spec.entangle_pattern]

    def encoding(occurrence: int):
        for q in range(n):
            gates.append(PlannedGate(GateKind.RX, target=q, param=occurrence * n + q, feature=q))

    encoding(0)
    offset = spec.n_encodings * n
    for layer, (_, n_axes) in enumerate(spec.rotation_shapes):
        is_last = layer == spec.n_layers - 1
        axes = ROTATIONS[3 - n_axes :]
        for q in range(n):
            for a, kind in enumerate(axes):
                gates.append(PlannedGate(kind, target=q, param=offset + q * n_axes + a))
        offset += n * n_axes
        gates.extend(ring)
        if not is_last and spec.reupload:
            encoding(layer + 1)
    return tuple(gates)


def _check_qubit(qubit: int, n_qubits: int) -> None:
    if not 0 <= qubit < n_qubits:
        raise IndexError(f"Qubit index {qubit} out of range for {n_qubits} qubits")


def _as_flat(spec: CircuitSpec, params: ParamsLike) -> np.ndarray:
    flat = params.flatten() if isinstance(params, CircuitParams) else np.asarray(params, dtype=float)
    if flat.shape != (spec.n_params,):
        raise ValueError(f"Expected {spec.n_params} circuit parameters, got shape {flat.shape}")
    return flat


def _as_batch(spec: CircuitSpec, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    batch = x.reshape(1, -1) if x.ndim == 1 else x
    if batch.ndim != 2 or batch.shape[1] != spec.n_qubits:
        raise ValueError(f"Expected {spec.n_qubits} features per sample, got shape {x.shape}")
    return batch


# --- in-place batched kernels ---------------------------------------------------------------------------------

PAULI = {
    GateKind.RX: np.array([[0, 1], [1, 0]], dtype=complex),
    GateKind.RY: np.array([[0, -1j], [1j, 0]], dtype=complex),
    GateKind.RZ: np.array([[1, 0], [0, -1]], dtype=complex),
}


def _rotate(amps: np.ndarray, n: int, kind: GateKind, qubit: int, angle) -> None:
    """Apply RX/RY/RZ(angle) to `qubit` of every row of amps; angle is a scalar or one per row."""
    view = amps.reshape(amps.shape[0], 2**qubit, 2, 2 ** (n - qubit - 1))
    half = np.reshape(np.asarray(angle, dtype=float) / 2.0, (-1, 1, 1))
    a0, a1 = view[:, :, 0, :], view[:, :, 1, :]
    if kind is GateKind.RZ:
        a0 *= np.exp(-1j * half)
        a1 *= np.exp(1j * half)
        return
    c, s = np.cos(half), np.sin(half)
    if kind is GateKind.RX:
        new0, new1 = c * a0 - 1j * s * a1, c * a1 - 1j * s * a0
    else:
        new0, new1 = c * a0 - s * a1, s * a0 + c * a1
    view[:, :, 0, :] = new0
    view[:, :, 1, :] = new1


def _cnot(amps: np.ndarray, n: int, control: int, target: int) -> None:
    view = amps.reshape((amps.shape[0],) + (2,) * n)
    index = [slice(None)] * (n + 1)
    index[1 + control] = 1
    index[1 + target] = 0
    off = tuple(index)
    index[1 + target] = 1
    on = tuple(index)
    swap = view[off].copy()
    view[off] = view[on]
    view[on] = swap


def _apply_local(amps: np.ndarray, n: int, qubit: int, matrix: np.ndarray) -> None:
    """Apply a 2x2 matrix, shared or one per row, to `qubit` of every row of amps."""
    rows = amps.shape[0]
    view = amps.reshape(rows, 2**qubit, 2, 2 ** (n - qubit - 1))
    m = np.broadcast_to(matrix, (rows, 2, 2))[:, :, :, None, None]
    a0, a1 = view[:, :, 0, :], view[:, :, 1, :]
    new0 = m[:, 0, 0] * a0 + m[:, 0, 1] * a1
    new1 = m[:, 1, 0] * a0 + m[:, 1, 1] * a1
    view[:, :, 0, :] = new0
    view[:, :, 1, :] = new1


def _local_overlaps(lam_conj: np.ndarray, phi: np.ndarray, n: int, qubit: int) -> np.ndarray:
    """(rows, 2, 2) with [r, i, j] = sum over the other qubits of conj(lam)_i * phi_j."""
    shape = (phi.shape[0], 2**qubit, 2, 2 ** (n - qubit - 1))
    return np.einsum("raib,rajb->rij", lam_conj.reshape(shape), phi.reshape(shape))


def rotation_matrices(kind: GateKind, angles) -> np.ndarray:
    """exp(-i angle P / 2) for every entry of angles, shape angles.shape + (2, 2)."""
    half = np.asarray(angles, dtype=float)[..., None, None] / 2.0
    return np.cos(half) * np.eye(2) - 1j * np.sin(half) * PAULI[kind]


@dataclass(frozen=True)
class FusedBlock:
    """Encoding, rotation layer and entangler of one circuit layer.

    `encoding` is the encoding occurrence read by the layer, or -1; `offset` is the
    first flattened parameter of its rotation layer.
    """

    encoding: int
    axes: Tuple[GateKind, ...]
    offset: int


@dataclass(frozen=True)
class FusedLayout:
    blocks: Tuple[FusedBlock, ...]
    permutation: Optional[np.ndarray] = None
    inverse: Optional[np.ndarray] = None


@lru_cache(maxsize=64)
def fuse_plan(spec: CircuitSpec) -> FusedLayout:
    """Group the plan by layer; the entangler of every layer becomes one basis permutation."""
    n = spec.n_qubits
    blocks: List[FusedBlock] = []
    offset = spec.n_encodings * n
    for layer, (_, n_axes) in enumerate(spec.rotation_shapes):
        encoding = layer if layer == 0 or spec.reupload else -1
        blocks.append(FusedBlock(encoding=encoding, axes=ROTATIONS[3 - n_axes :], offset=offset))
        offset += n * n_axes
    if not spec.entangle_pattern:
        return FusedLayout(tuple(blocks))
    index = np.arange(2**n).reshape(1, -1)
    for control, target in spec.entangle_pattern:
        _cnot(index, n, control, target)
    permutation = index[0]
    return FusedLayout(tuple(blocks), permutation, np.argsort(permutation))


def _block_chain(spec: CircuitSpec, block: FusedBlock, flat: np.ndarray, batch: np.ndarray):
    """(kind, angles) of the block's rotations in application order.

    The encoding RX merges with the layer's own RX, so the first entry is per row
    (rows, n_qubits) when the block encodes; the rest are (n_qubits,).
    """
    n = spec.n_qubits
    rot = flat[block.offset : block.offset + n * len(block.axes)].reshape(n, len(block.axes))
    chain = [(kind, rot[:, a]) for a, kind in enumerate(block.axes)]
    if block.encoding >= 0:
        encoded = flat[block.encoding * n : (block.encoding + 1) * n] * batch
        if chain[0][0] is GateKind.RX:
            chain[0] = (GateKind.RX, encoded + chain[0][1])
        else:
            chain.insert(0, (GateKind.RX, encoded))
    return chain


def _fuse_chain(chain) -> Tuple[np.ndarray, np.ndarray]:
    """The fused matrix per qubit, and every rotation's generator seen from after the block.

    Generators come back as (len(chain), n_qubits, 2, 2): for rotation k it is
    A P_k A^dagger with A the product of the rotations that follow it.
    """
    after = np.eye(2, dtype=complex)
    n = np.shape(chain[-1][1])[-1]
    generators = np.empty((len(chain), n, 2, 2), dtype=complex)
    for k in reversed(range(len(chain))):
        kind, angles = chain[k]
        generators[k] = after @ PAULI[kind] @ np.conj(np.swapaxes(after, -1, -2))
        after = after @ rotation_matrices(kind, angles)
    return after, generators


def _zero_states(n: int, rows: int) -> np.ndarray:
    amps = np.zeros((rows, 2**n), dtype=complex)
    amps[:, 0] = 1.0
    return amps


def _gate_angle(gate: PlannedGate, flat: np.ndarray, batch: np.ndarray):
    if gate.feature >= 0:
        return flat[gate.param] * batch[:, gate.feature]
    return flat[gate.param]


def simulate_plan(
    spec: CircuitSpec, flat: np.ndarray, batch: np.ndarray, shifted: int = -1, shift: float = 0.0
) -> np.ndarray:
    """Gate-by-gate run of the plan; optionally offset the angle of plan gate `shifted`."""
    n = spec.n_qubits
    amps = _zero_states(n, batch.shape[0])
    for index, gate in enumerate(spec.plan()):
        if gate.kind is GateKind.CNOT:
            _cnot(amps, n, gate.control, gate.target)
            continue
        angle = _gate_angle(gate, flat, batch)
        if index == shifted:
            angle = angle + shift
        _rotate(amps, n, gate.kind, gate.target, angle)
    return amps


@dataclass
class CircuitTrace:
    """What the adjoint sweep replays from a forward run.

    `states[l]` holds the amplitudes after layer l's rotations and before its entangler;
    those arrays are never written to again. `fused` and `generators` are the
    per-layer outputs of _fuse_chain.
    """

    final: np.ndarray
    states: List[np.ndarray]
    fused: List[np.ndarray]
    generators: List[np.ndarray]


def trace_batch(spec: CircuitSpec, flat: np.ndarray, batch: np.ndarray) -> CircuitTrace:
    n, rows = spec.n_qubits, batch.shape[0]
    layout = fuse_plan(spec)
    amps = _zero_states(n, rows)
    trace = CircuitTrace(final=amps, states=[], fused=[], generators=[])
    for block in layout.blocks:
        fused, generators = _fuse_chain(_block_chain(spec, block, flat, batch))
        fused = np.broadcast_to(fused, (rows, n, 2, 2))
        for q in range(n):
            _apply_local(amps, n, q, fused[:, q])
        trace.states.append(amps)
        trace.fused.append(fused)
        trace.generators.append(generators)
        amps = amps[:, layout.permutation] if layout.permutation is not None else amps.copy()
    trace.final = amps
    return trace


def simulate_batch(spec: CircuitSpec, flat: np.ndarray, batch: np.ndarray) -> np.ndarray:
    """Final amplitudes, one row per input row."""
    return trace_batch(spec, flat, batch).final


@lru_cache(maxsize=MAX_QUBITS)
def z_signs(n_qubits: int) -> np.ndarray:
    """(n_qubits, 2**n_qubits) matrix of Z eigenvalues per qubit and basis state."""
    basis = np.arange(2**n_qubits)
    bits = (basis[None, :] >> (n_qubits - 1 - np.arange(n_qubits)[:, None])) & 1
    signs = 1.0 - 2.0 * bits
    signs.setflags(write=False)
    return signs


def expectations(amps: np.ndarray, n_qubits: int) -> np.ndarray:
    """Per-qubit <Z> for every row of amps, shape (rows, n_qubits)."""
    probs = np.abs(amps) ** 2
    return probs @ z_signs(n_qubits).T


def _chain_kinds(block: FusedBlock) -> Tuple[GateKind, ...]:
    if block.encoding >= 0 and block.axes[0] is not GateKind.RX:
        return (GateKind.RX,) + block.axes
    return block.axes


def adjoint_gradients(
    spec: CircuitSpec, flat: np.ndarray, batch: np.ndarray, trace: CircuitTrace, upstream: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    """Reverse sweep over the fused layers of a traced forward run.

    Returns the parameter gradient summed over rows (fixed summation order) and the
    per-row input-feature gradient of sum_o upstream[:, o] * <Z_o>.
    """
    n, rows = spec.n_qubits, batch.shape[0]
    layout = fuse_plan(spec)
    lam = trace.final * (upstream @ z_signs(n))
    grad_params = np.zeros(spec.n_params)
    grad_x = np.zeros_like(batch)
    for index in reversed(range(len(layout.blocks))):
        block, phi, generators = layout.blocks[index], trace.states[index], trace.generators[index]
        if layout.inverse is not None:
            lam = lam[:, layout.inverse]
        lam_conj = np.conj(lam)
        d_angles = np.empty((len(generators), rows, n))
        for q in range(n):
            overlaps = _local_overlaps(lam_conj, phi, n, q)
            d_angles[:, :, q] = np.imag(np.einsum("rij,kij->kr", overlaps, generators[:, q]))

        n_axes = len(block.axes)
        for kind, d_angle in zip(_chain_kinds(block), d_angles):
            if kind in block.axes:
                grad_params[block.offset + np.arange(n) * n_axes + block.axes.index(kind)] += d_angle.sum(axis=0)
            if kind is GateKind.RX and block.encoding >= 0:
                weights = slice(block.encoding * n, (block.encoding + 1) * n)
                grad_params[weights] += np.sum(d_angle * batch, axis=0)
                grad_x += d_angle * flat[weights]

        undo = np.conj(np.swapaxes(trace.fused[index], -1, -2))
        for q in range(n):
            _apply_local(lam, n, q, undo[:, q])
    return grad_params, grad_x


# --- single-state operations ----------------------------------------------------------------------------------


def init_state(n_qubits: int) -> StateVector:
    """|0...0> on n_qubits."""
    if not 1 <= n_qubits <= MAX_QUBITS:
        raise ConfigurationError(f"n_qubits must be in [1, {MAX_QUBITS}], got {n_qubits}")
    return StateVector(n_qubits=n_qubits, amplitudes=_zero_states(n_qubits, 1)[0])


def apply_gate(state: StateVector, gate: GateOp) -> StateVector:
    n = state.n_qubits
    _check_qubit(gate.target, n)
    amps = state.amplitudes.copy().reshape(1, -1)
    if gate.kind is GateKind.CNOT:
        _check_qubit(gate.control, n)
        if gate.control == gate.target:
            raise IndexError(f"CNOT control and target are both qubit {gate.target}")
        _cnot(amps, n, gate.control, gate.target)
    else:
        _rotate(amps, n, gate.kind, gate.target, gate.angle)
    return StateVector(n_qubits=n, amplitudes=amps[0])


def encode_input(state: StateVector, x: Sequence[float], weights: Sequence[float]) -> StateVector:
    """RX(weights[i] * x[i]) on every qubit i."""
    x, weights = np.asarray(x, dtype=float), np.asarray(weights, dtype=float)
    if not len(x) == len(weights) == state.n_qubits:
        raise ValueError(f"Need {state.n_qubits} features and weights, got {len(x)} and {len(weights)}")
    for qubit, angle in enumerate(weights * x):
        state = apply_gate(state, GateOp(GateKind.RX, target=qubit, angle=float(angle)))
    return state


def expectation_z(state: StateVector, qubit: int) -> float:
    _check_qubit(qubit, state.n_qubits)
    return float(expectations(state.amplitudes.reshape(1, -1), state.n_qubits)[0, qubit])


def bind_gates(spec: CircuitSpec, params: ParamsLike, x: Sequence[float]) -> List[GateOp]:
    """The concrete gate sequence run_circuit executes for (params, x)."""
    flat = _as_flat(spec, params)
    batch = _as_batch(spec, x)
    return [
        GateOp(gate.kind, target=gate.target, control=gate.control)
        if gate.kind is GateKind.CNOT
        else GateOp(gate.kind, target=gate.target, angle=float(np.ravel(_gate_angle(gate, flat, batch))[0]))
        for gate in spec.plan()
    ]


def run_circuit(spec: CircuitSpec, params: ParamsLike, x: Sequence[float]) -> np.ndarray:
    """Per-qubit <Z> after running the circuit on input x."""
    flat = _as_flat(spec, params)
    batch = _as_batch(spec, x)
    return expectations(simulate_batch(spec, flat, batch), spec.n_qubits)[0]


def _check_upstream(spec: CircuitSpec, upstream, rows: int) -> np.ndarray:
    upstream = np.asarray(upstream, dtype=float).reshape(rows, -1)
    if upstream.shape[1] != spec.n_qubits:
        raise ValueError(f"Expected {spec.n_qubits} upstream gradients per sample, got {upstream.shape[1]}")
    return upstream


def grad_parameter_shift(spec: CircuitSpec, params: ParamsLike, x, upstream) -> np.ndarray:
    """Gradient over the flattened parameters from two evaluations per gate at angle +/- pi/2.

    The shift acts on each gate angle; encoding weights pick up their feature value
    through the chain rule since their angle is weight * feature.
    """
    flat = _as_flat(spec, params)
    batch = _as_batch(spec, x)
    upstream = _check_upstream(spec, upstream, batch.shape[0])
    grad = np.zeros(spec.n_params)
    for index, gate in enumerate(spec.plan()):
        if gate.kind is GateKind.CNOT:
            continue
        plus = expectations(simulate_plan(spec, flat, batch, index, SHIFT), spec.n_qubits)
        minus = expectations(simulate_plan(spec, flat, batch, index, -SHIFT), spec.n_qubits)
        d_angle = np.sum(upstream * (plus - minus), axis=1) / 2.0
        if gate.feature >= 0:
            d_angle = d_angle * batch[:, gate.feature]
        grad[gate.param] += np.sum(d_angle)
    return grad


def grad_adjoint(spec: CircuitSpec, params: ParamsLike, x, upstream) -> Tuple[np.ndarray, np.ndarray]:
    """(gradient over flattened params, gradient over x) by a single reverse sweep."""
    flat = _as_flat(spec, params)
    batch = _as_batch(spec, x)
    upstream = _check_upstream(spec, upstream, batch.shape[0])
    grad_params, grad_x = adjoint_gradients(spec, flat, batch, trace_batch(spec, flat, batch), upstream)
    return grad_params, grad_x.reshape(np.shape(x))
