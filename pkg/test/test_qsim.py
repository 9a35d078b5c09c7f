import numpy as np
import pytest

from cqcnn_alzheimer.cqException import BadQubit, BadLength
from cqcnn_alzheimer.qsim import gates
from cqcnn_alzheimer.qsim.circuit import Gate, encode_zz, apply_ansatz, build_pqc, run_gates, pqc_forward, \
    pqc_backward, circuit_matrix


def _random_state(n, seed):

    generator = np.random.default_rng(seed)

    state = generator.standard_normal(2 ** n) + 1j * generator.standard_normal(2 ** n)

    return state / np.linalg.norm(state)


def test_zero_state():

    state = gates.zero_state(3)

    assert state.shape == (8,)
    assert state[0] == 1.0
    assert gates.expectation_parity(state) == 1.0


_GATE_NAMES = ('h', 'ry', 'p', 'cz', 'zz')


def _random_gate(generator, n):

    names = _GATE_NAMES if n > 1 else _GATE_NAMES[:3]

    name = names[int(generator.integers(0, len(names)))]

    if name in ('cz', 'zz'):

        q1, q2 = generator.choice(n, size=2, replace=False)

        return name, (int(q1), int(q2)), float(generator.uniform(-2 * np.pi, 2 * np.pi))

    return name, (int(generator.integers(0, n)),), float(generator.uniform(-2 * np.pi, 2 * np.pi))


def _apply(state, name, qubits, angle):

    if name == 'h':
        return gates.apply_h(state, qubits[0])

    if name == 'ry':
        return gates.apply_ry(state, qubits[0], angle)

    if name == 'p':
        return gates.apply_p(state, qubits[0], angle)

    if name == 'cz':
        return gates.apply_cz(state, qubits[0], qubits[1])

    return gates.apply_zz_phase(state, qubits[0], qubits[1], angle)


def _inverse(name, qubits, angle):

    if name in ('h', 'cz'):
        return name, qubits, angle

    return name, qubits, -angle


def test_norm_preserved():

    generator = np.random.default_rng(0)

    for circuit in range(1000):

        n = int(generator.integers(1, 6))
        depth = int(generator.integers(1, 51))

        state = _random_state(n, circuit)

        for _ in range(depth):

            state = _apply(state, *_random_gate(generator, n))

            assert abs(np.linalg.norm(state) - 1.0) <= 1e-10, "circuit %s" % circuit


def test_pqc_circuits_preserve_norm():

    generator = np.random.default_rng(10)

    for trial in range(50):

        n = int(generator.integers(1, 5))

        x = generator.uniform(0, np.pi, n)
        theta = generator.uniform(0, np.pi, n)

        out = run_gates(_random_state(n, trial), build_pqc(x, theta))

        assert abs(np.linalg.norm(out) - 1.0) <= 1e-10


@pytest.mark.parametrize("name", _GATE_NAMES)
def test_gate_inverses(name):

    generator = np.random.default_rng(1)

    for trial in range(100):

        n = int(generator.integers(2, 6))
        state = _random_state(n, 1000 + trial)

        gate = _random_gate(generator, n)

        while gate[0] != name:
            gate = _random_gate(generator, n)

        out = _apply(_apply(state, *gate), *_inverse(*gate))

        assert np.max(np.abs(out - state)) <= 1e-12, "%s on %s" % (name, gate[1])


@pytest.mark.parametrize("n", [1, 2, 3])
def test_parameter_shift_matches_finite_differences(n):

    generator = np.random.default_rng(3 + n)

    h = 1e-5

    worst = 0.0

    for _ in range(100):

        x = generator.uniform(0, np.pi, n)
        theta = generator.uniform(-np.pi, np.pi, n)

        grad_x, grad_theta = pqc_backward(x, theta)

        for i in range(n):

            step = np.zeros(n)
            step[i] = h

            numerical_x = (pqc_forward(x + step, theta) - pqc_forward(x - step, theta)) / (2 * h)
            numerical_theta = (pqc_forward(x, theta + step) - pqc_forward(x, theta - step)) / (2 * h)

            worst = max(worst, abs(numerical_x - grad_x[i]), abs(numerical_theta - grad_theta[i]))

    assert worst <= 1e-6


def test_qubit_zero_is_least_significant():

    # Ry(pi) on qubit 0 maps |00> to |01>, i.e. basis index 1
    state = gates.apply_ry(gates.zero_state(2), 0, np.pi)

    assert np.isclose(abs(state[1]), 1.0)

    state = gates.apply_ry(gates.zero_state(2), 1, np.pi)

    assert np.isclose(abs(state[2]), 1.0)


def test_parity_expectation():

    assert gates.expectation_parity(gates.basis_state(3, 0b011)) == 1.0
    assert gates.expectation_parity(gates.basis_state(3, 0b111)) == -1.0

    # |+> on one qubit has no parity bias
    assert abs(gates.expectation_parity(gates.apply_h(gates.zero_state(1), 0))) < 1e-12


def test_encode_known_amplitudes():

    state = encode_zz([0.0, 0.0])

    phase = np.exp(1j * 2 * np.pi ** 2)

    assert np.allclose(state, 0.5 * np.array([1, phase, phase, 1]))


def test_pqc_probability_range():

    generator = np.random.default_rng(2)

    for _ in range(10):

        p = pqc_forward(generator.uniform(0, np.pi, 3), generator.uniform(0, np.pi, 3))

        assert 0.0 <= p <= 1.0

    # No encoding angle and no rotation: H on every qubit leaves the parity unbiased
    assert pqc_forward(np.zeros(1), np.zeros(1)) == pytest.approx(0.5)


def test_theta_periodicity():

    x = np.array([0.3, 1.1, 2.0])
    theta = np.array([0.5, 0.1, 2.9])

    assert pqc_forward(x, theta) == pytest.approx(pqc_forward(x, theta + 2 * np.pi), abs=1e-12)


def test_backward_scales_with_upstream():

    x = np.array([0.4, 0.9])
    theta = np.array([1.2, 0.2])

    gx, gt = pqc_backward(x, theta)
    gx3, gt3 = pqc_backward(x, theta, upstream=3.0)

    assert np.allclose(gx3, 3 * gx) and np.allclose(gt3, 3 * gt)


def test_circuit_matrix_unitary():

    x = np.array([0.2, 1.7, 2.4])
    theta = np.array([0.9, 2.2, 0.1])

    u = circuit_matrix(3, build_pqc(x, theta))

    assert np.allclose(u.conj().T.dot(u), np.eye(8), atol=1e-12)
    assert np.allclose(u[:, 0], run_gates(gates.zero_state(3), build_pqc(x, theta)))


def test_apply_ansatz():

    state = apply_ansatz(gates.zero_state(2), [np.pi, 0.0])

    assert np.isclose(abs(state[1]), 1.0)


def test_errors():

    with pytest.raises(BadQubit):
        gates.apply_h(gates.zero_state(2), 2)

    with pytest.raises(BadQubit):
        gates.apply_cz(gates.zero_state(2), 1, 1)

    with pytest.raises(BadLength):
        gates.zero_state(0)

    with pytest.raises(BadLength):
        gates.expectation_parity(np.ones(3, dtype=np.complex128))

    with pytest.raises(BadLength):
        build_pqc([0.1, 0.2], [0.3])

    with pytest.raises(BadLength):
        apply_ansatz(gates.zero_state(2), [0.1])

    with pytest.raises(BadQubit):
        run_gates(gates.zero_state(1), [Gate('zz', (0, 1), 0.5, None, None)])
