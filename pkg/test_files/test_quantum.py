import numpy as np
import pytest

from qsac.exceptions import ConfigurationError
from qsac.gradcheck import central_difference, circuit_gradient_triangle
from qsac.quantum import (
    CircuitParams,
    CircuitSpec,
    GateKind,
    GateOp,
    StateVector,
    apply_gate,
    bind_gates,
    encode_input,
    expand_plan,
    expectation_z,
    fuse_plan,
    grad_adjoint,
    grad_parameter_shift,
    init_state,
    ring_pattern,
    run_circuit,
    simulate_batch,
    simulate_plan,
)

SQRT_HALF = 1.0 / np.sqrt(2.0)


def gate_matrix(gate: GateOp, n: int) -> np.ndarray:
    """Dense 2**n matrix of a gate, qubit 0 being the leftmost kron factor."""
    if gate.kind is GateKind.CNOT:
        dim = 2**n
        matrix = np.zeros((dim, dim))
        for basis in range(dim):
            bits = [(basis >> (n - 1 - q)) & 1 for q in range(n)]
            if bits[gate.control]:
                bits[gate.target] ^= 1
            matrix[int("".join(map(str, bits)), 2), basis] = 1.0
        return matrix
    c, s = np.cos(gate.angle / 2), np.sin(gate.angle / 2)
    single = {
        GateKind.RX: np.array([[c, -1j * s], [-1j * s, c]]),
        GateKind.RY: np.array([[c, -s], [s, c]]),
        GateKind.RZ: np.diag([np.exp(-1j * gate.angle / 2), np.exp(1j * gate.angle / 2)]),
    }[gate.kind]
    out = np.eye(1)
    for q in range(n):
        out = np.kron(out, single if q == gate.target else np.eye(2))
    return out


def matrix_chain_expectations(spec: CircuitSpec, params, x) -> np.ndarray:
    state = np.zeros(2**spec.n_qubits, dtype=complex)
    state[0] = 1.0
    for gate in bind_gates(spec, params, x):
        state = gate_matrix(gate, spec.n_qubits) @ state
    probs = np.abs(state) ** 2
    result = []
    for q in range(spec.n_qubits):
        signs = [1 - 2 * ((b >> (spec.n_qubits - 1 - q)) & 1) for b in range(2**spec.n_qubits)]
        result.append(probs @ signs)
    return np.array(result)


@pytest.mark.parametrize(("n", "length"), ((1, 2), (2, 4), (3, 8)))
def test_init_state(n, length):
    state = init_state(n)
    assert state.amplitudes.shape == (length,)
    assert state.amplitudes[0] == 1
    assert np.count_nonzero(state.amplitudes) == 1


@pytest.mark.parametrize("n", (0, 13))
def test_init_state_bounds(n):
    with pytest.raises(ConfigurationError):
        init_state(n)


def test_rx_zero_is_identity():
    state = apply_gate(init_state(2), GateOp(GateKind.RY, target=1, angle=0.7))
    after = apply_gate(state, GateOp(GateKind.RX, target=0, angle=0.0))
    assert np.allclose(after.amplitudes, state.amplitudes)


def test_cnot_flips_target_when_control_set():
    ten = StateVector(2, np.array([0, 0, 1, 0], dtype=complex))
    after = apply_gate(ten, GateOp(GateKind.CNOT, target=1, control=0))
    assert np.allclose(after.amplitudes, [0, 0, 0, 1])


def test_rx_half_pi_on_zero():
    after = apply_gate(init_state(1), GateOp(GateKind.RX, target=0, angle=np.pi / 2))
    assert np.allclose(after.amplitudes, [SQRT_HALF, -1j * SQRT_HALF])


@pytest.mark.parametrize(
    "gate",
    (
        GateOp(GateKind.RX, target=2),
        GateOp(GateKind.CNOT, target=0, control=5),
        GateOp(GateKind.CNOT, target=1, control=1),
    ),
)
def test_apply_gate_bad_index(gate):
    with pytest.raises(IndexError):
        apply_gate(init_state(2), gate)


def test_encode_input():
    state = init_state(3)
    assert np.allclose(encode_input(state, [0, 0, 0], [1, 2, 3]).amplitudes, state.amplitudes)
    assert expectation_z(encode_input(init_state(1), [np.pi], [1.0]), 0) == pytest.approx(-1.0)
    assert expectation_z(encode_input(init_state(1), [np.pi / 6], [2.0]), 0) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        encode_input(state, [0.1, 0.2], [1.0, 1.0])


def test_expectation_z():
    assert expectation_z(init_state(1), 0) == pytest.approx(1.0)
    plus = StateVector(1, np.array([SQRT_HALF, SQRT_HALF], dtype=complex))
    assert expectation_z(plus, 0) == pytest.approx(0.0, abs=1e-12)
    rotated = apply_gate(init_state(1), GateOp(GateKind.RX, target=0, angle=np.pi / 3))
    assert expectation_z(rotated, 0) == pytest.approx(0.5)


def test_ring_pattern():
    assert ring_pattern(1) == ()
    assert ring_pattern(3) == ((0, 1), (1, 2), (2, 0))


@pytest.mark.parametrize(("n_qubits", "n_layers", "expected"), ((6, 4, 90), (6, 5, 114), (8, 20, 632), (1, 1, 3)))
def test_parameter_count(n_qubits, n_layers, expected):
    assert CircuitSpec(n_qubits, n_layers).n_params == expected


def test_bad_spec():
    with pytest.raises(ConfigurationError):
        CircuitSpec(2, 0)
    with pytest.raises(ConfigurationError):
        CircuitSpec(2, 1, entangle_pattern=((0, 0),))


def test_identity_circuit():
    spec = CircuitSpec(4, 3)
    assert np.allclose(run_circuit(spec, CircuitParams.zeros(spec), np.zeros(4)), 1.0)


def test_single_rotation_circuit():
    spec = CircuitSpec(1, 1)
    params = CircuitParams.zeros(spec)
    params.rot_params[0][0, 0] = np.pi / 3
    assert run_circuit(spec, params, [0.0])[0] == pytest.approx(0.5)


@pytest.mark.parametrize(("n_qubits", "n_layers"), ((2, 2), (3, 3), (1, 2)))
def test_matches_matrix_chain(n_qubits, n_layers):
    rng = np.random.default_rng(7)
    spec = CircuitSpec(n_qubits, n_layers)
    params = CircuitParams.initial(spec, rng)
    params.encode_weights = rng.uniform(0.5, 1.5, size=params.encode_weights.shape)
    x = rng.uniform(-1, 1, size=n_qubits)
    assert np.allclose(run_circuit(spec, params, x), matrix_chain_expectations(spec, params, x), atol=1e-10)


def test_run_circuit_is_deterministic():
    spec = CircuitSpec(3, 2)
    params = CircuitParams.initial(spec, np.random.default_rng(1))
    x = np.array([0.1, -0.4, 0.9])
    assert np.array_equal(run_circuit(spec, params, x), run_circuit(spec, params, x))


def test_run_circuit_dimension_errors():
    spec = CircuitSpec(2, 1)
    with pytest.raises(ValueError):
        run_circuit(spec, CircuitParams.zeros(spec), [0.0, 0.0, 0.0])
    with pytest.raises(ValueError):
        run_circuit(spec, np.zeros(spec.n_params + 1), [0.0, 0.0])


def test_flatten_order():
    spec = CircuitSpec(2, 2)
    flat = np.arange(spec.n_params, dtype=float)
    params = CircuitParams.unflatten(spec, flat)
    assert params.encode_weights.tolist() == [[0, 1], [2, 3]]
    assert params.rot_params[0].shape == (2, 3)
    assert params.rot_params[1].shape == (2, 2)
    assert np.array_equal(params.flatten(), flat)


def single_rx(theta: float):
    spec = CircuitSpec(1, 1)
    params = CircuitParams.zeros(spec)
    params.rot_params[0][0, 0] = theta
    return spec, params


@pytest.mark.parametrize(("theta", "expected"), ((0.0, 0.0), (np.pi / 6, -0.5)))
def test_parameter_shift_single_rotation(theta, expected):
    spec, params = single_rx(theta)
    grad = grad_parameter_shift(spec, params, [0.0], [1.0])
    # flat layout is [encode weight, RY angle, RZ angle]
    assert grad[1] == pytest.approx(expected, abs=1e-12)


def test_parameter_shift_matches_finite_differences():
    rng = np.random.default_rng(3)
    spec = CircuitSpec(3, 3)
    flat = CircuitParams.initial(spec, rng).flatten()
    x, upstream = rng.uniform(-1, 1, size=3), rng.normal(size=3)
    shift = grad_parameter_shift(spec, flat, x, upstream)
    fd = central_difference(lambda p: float(upstream @ run_circuit(spec, p, x)), flat)
    assert np.max(np.abs(shift - fd)) < 1e-6


def test_adjoint_zero_upstream():
    spec = CircuitSpec(2, 3)
    params = CircuitParams.initial(spec, np.random.default_rng(0))
    grad_params, grad_x = grad_adjoint(spec, params, [0.3, -0.2], [0.0, 0.0])
    assert not grad_params.any()
    assert not grad_x.any()


def test_adjoint_matches_parameter_shift():
    rng = np.random.default_rng(11)
    spec = CircuitSpec(2, 3)
    params = CircuitParams.initial(spec, rng)
    x, upstream = rng.uniform(-1, 1, size=2), rng.normal(size=2)
    adjoint, _ = grad_adjoint(spec, params, x, upstream)
    assert np.max(np.abs(adjoint - grad_parameter_shift(spec, params, x, upstream))) < 1e-8


def test_adjoint_input_gradient():
    spec = CircuitSpec(1, 1)
    params = CircuitParams.zeros(spec, encode_weight=2.0)
    _, grad_x = grad_adjoint(spec, params, [np.pi / 6], [1.0])
    assert grad_x[0] == pytest.approx(-2.0 * np.sin(np.pi / 3))


def test_adjoint_batched_rows():
    rng = np.random.default_rng(5)
    spec = CircuitSpec(3, 2)
    params = CircuitParams.initial(spec, rng)
    xs, upstream = rng.uniform(-1, 1, size=(4, 3)), rng.normal(size=(4, 3))
    batched, grad_x = grad_adjoint(spec, params, xs, upstream)
    rows = [grad_adjoint(spec, params, x, u) for x, u in zip(xs, upstream)]
    assert np.allclose(batched, sum(r[0] for r in rows))
    assert np.allclose(grad_x, np.stack([r[1] for r in rows]))


def test_gradient_triangle():
    result = circuit_gradient_triangle(n_cases=8, seed=2, max_qubits=4, max_layers=3)
    assert result.cases == 8
    assert result.passed


def random_gate(rng: np.random.Generator, n: int) -> GateOp:
    kinds = [GateKind.RX, GateKind.RY, GateKind.RZ] + ([GateKind.CNOT] if n > 1 else [])
    kind = kinds[int(rng.integers(len(kinds)))]
    if kind is GateKind.CNOT:
        control, target = rng.choice(n, size=2, replace=False)
        return GateOp(kind, target=int(target), control=int(control))
    return GateOp(kind, target=int(rng.integers(n)), angle=float(rng.uniform(-2 * np.pi, 2 * np.pi)))


def test_random_gate_sequences_keep_the_norm():
    rng = np.random.default_rng(21)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(1, 7))
        state = init_state(n)
        for _ in range(int(rng.integers(1, 40))):
            state = apply_gate(state, random_gate(rng, n))
        worst = max(worst, abs(state.norm - 1.0))
    assert worst < 1e-10


@pytest.mark.parametrize(
    "spec",
    (
        CircuitSpec(3, 3, reupload=False),
        CircuitSpec(3, 2, last_layer_yz_only=False),
        CircuitSpec(4, 2, entangle_pattern=((0, 2), (3, 1))),
        CircuitSpec(1, 3),
        CircuitSpec(5, 4),
    ),
)
def test_fused_layers_match_gate_plan(spec):
    rng = np.random.default_rng(13)
    flat = rng.uniform(-np.pi, np.pi, size=spec.n_params)
    xs = rng.uniform(-1, 1, size=(6, spec.n_qubits))
    fused = simulate_batch(spec, flat, xs)
    assert np.allclose(fused, simulate_plan(spec, flat, xs), atol=1e-12)
    assert np.allclose(np.sum(np.abs(fused) ** 2, axis=1), 1.0, atol=1e-10)


@pytest.mark.parametrize(
    "spec",
    (
        CircuitSpec(3, 3, reupload=False),
        CircuitSpec(3, 2, last_layer_yz_only=False),
        CircuitSpec(4, 2, entangle_pattern=((0, 2),)),
    ),
)
def test_adjoint_matches_parameter_shift_on_variants(spec):
    rng = np.random.default_rng(17)
    flat = rng.uniform(-np.pi, np.pi, size=spec.n_params)
    xs, upstream = rng.uniform(-1, 1, size=(3, spec.n_qubits)), rng.normal(size=(3, spec.n_qubits))
    adjoint, grad_x = grad_adjoint(spec, flat, xs, upstream)
    assert np.max(np.abs(adjoint - grad_parameter_shift(spec, flat, xs, upstream))) < 1e-8

    def weighted(values):
        return float(np.sum(upstream * np.stack([run_circuit(spec, flat, x) for x in values.reshape(xs.shape)])))

    assert grad_x.ravel() == pytest.approx(central_difference(weighted, xs.ravel()), abs=1e-6)


def test_layout_caches_are_bounded():
    assert expand_plan.cache_info().maxsize == 64
    assert fuse_plan.cache_info().maxsize == 64
    spec = CircuitSpec(3, 2)
    assert fuse_plan(spec) is fuse_plan(CircuitSpec(3, 2))
    assert len(fuse_plan(spec).blocks) == 2
    assert sorted(fuse_plan(spec).permutation.tolist()) == list(range(8))
