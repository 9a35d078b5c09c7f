"""
The parameterized quantum circuit of the hybrid classifier: ZZ feature map encoding, one layer of Ry rotations,
parity measurement, and parameter-shift differentiation.

The circuit is kept as a list of Gate records so that the forward pass and the shift rule walk exactly the
same gate sequence.
"""

import collections

import numpy as np

from cqcnn_alzheimer.cqException import BadLength
from cqcnn_alzheimer.qsim import gates

SHIFT = np.pi / 2.0

# kind is one of 'h', 'p', 'zz', 'ry'. For parameterized gates, feature_grads maps feature index -> d angle/d x
# and theta_index is the ansatz parameter driving the angle (None for data gates)
Gate = collections.namedtuple("Gate", ["kind", "qubits", "angle", "feature_grads", "theta_index"])

_appliers = {
    'h': lambda state, qubits, angle: gates.apply_h(state, qubits[0]),
    'p': lambda state, qubits, angle: gates.apply_p(state, qubits[0], angle),
    'zz': lambda state, qubits, angle: gates.apply_zz_phase(state, qubits[0], qubits[1], angle),
    'ry': lambda state, qubits, angle: gates.apply_ry(state, qubits[0], angle),
}


def _as_vector(values, name):

    values = np.asarray(values, dtype=np.float64)

    if values.ndim != 1 or not 1 <= values.shape[0] <= gates.MAX_QUBITS:
        raise BadLength("%s must be a vector of 1..%s values, got shape %s" % (name, gates.MAX_QUBITS,
                                                                              values.shape))

    return values


def feature_map_gates(x):
    """
    ZZ feature map, one repetition: H on every qubit, P(2 x_i) on every qubit, then for every pair i < j a
    phase 2 (pi - x_i)(pi - x_j) on the states where exactly one of the two qubits is set.
    """

    x = _as_vector(x, "Feature vector")
    n = x.shape[0]

    sequence = [Gate('h', (i,), None, None, None) for i in range(n)]

    sequence.extend(Gate('p', (i,), 2.0 * x[i], {i: 2.0}, None) for i in range(n))

    for i in range(n):

        for j in range(i + 1, n):

            phi = 2.0 * (np.pi - x[i]) * (np.pi - x[j])

            sequence.append(Gate('zz', (i, j), phi, {i: -2.0 * (np.pi - x[j]), j: -2.0 * (np.pi - x[i])}, None))

    return sequence


def ansatz_gates(theta):

    theta = _as_vector(theta, "Ansatz parameters")

    return [Gate('ry', (i,), theta[i], None, i) for i in range(theta.shape[0])]


def build_pqc(x, theta):

    x = _as_vector(x, "Feature vector")
    theta = _as_vector(theta, "Ansatz parameters")

    if x.shape != theta.shape:
        raise BadLength("The circuit needs as many features as ansatz parameters (%s vs %s)" % (x.shape[0],
                                                                                              theta.shape[0]))

    return feature_map_gates(x) + ansatz_gates(theta)


def run_gates(state, sequence):

    for gate in sequence:

        state = _appliers[gate.kind](state, gate.qubits, gate.angle)

    return state


def encode_zz(x):

    x = _as_vector(x, "Feature vector")

    return run_gates(gates.zero_state(x.shape[0]), feature_map_gates(x))


def apply_ansatz(state, theta):

    theta = _as_vector(theta, "Ansatz parameters")

    if theta.shape[0] != gates.n_qubits_of(state):
        raise BadLength("%s ansatz parameters for a %s-qubit state" % (theta.shape[0], gates.n_qubits_of(state)))

    return run_gates(state, ansatz_gates(theta))


def pqc_forward(x, theta):
    """
    Probability p_q = (<Z x ... x Z> + 1) / 2 of the encoded-then-rotated state
    """

    sequence = build_pqc(x, theta)

    state = run_gates(gates.zero_state(len(theta)), sequence)

    return (gates.expectation_parity(state) + 1.0) / 2.0


def pqc_backward(x, theta, upstream=1.0):
    """
    Gradients of upstream * p_q with respect to the features and the ansatz parameters.

    Every parameterized gate occurrence is shifted by +-pi/2 on its own and the circuit re-evaluated:
    d<M>/d angle = (f(angle + pi/2) - f(angle - pi/2)) / 2. The gate-angle gradients are then mapped to the
    features (chain rule through 2 x_i and 2 (pi - x_i)(pi - x_j)) and to theta.

    :return: (grad_x, grad_theta) as float64 arrays
    """

    sequence = build_pqc(x, theta)
    n = len(theta)

    # States before each gate, so that a shifted evaluation only replays the tail of the circuit
    prefix = [gates.zero_state(n)]

    for gate in sequence:
        prefix.append(_appliers[gate.kind](prefix[-1], gate.qubits, gate.angle))

    grad_x = np.zeros(n)
    grad_theta = np.zeros(n)

    for g, gate in enumerate(sequence):

        if gate.kind == 'h':
            continue

        shifted = []

        for sign in (1.0, -1.0):

            state = _appliers[gate.kind](prefix[g], gate.qubits, gate.angle + sign * SHIFT)
            state = run_gates(state, sequence[g + 1:])

            shifted.append(gates.expectation_parity(state))

        d_angle = (shifted[0] - shifted[1]) / 2.0

        if gate.theta_index is not None:

            grad_theta[gate.theta_index] += d_angle

        else:

            for feature in sorted(gate.feature_grads):
                grad_x[feature] += d_angle * gate.feature_grads[feature]

    # dp_q/d<M> = 1/2
    scale = 0.5 * upstream

    return grad_x * scale, grad_theta * scale


def circuit_matrix(n, sequence):
    """
    Dense 2**n x 2**n unitary of a gate sequence, built column by column (for small n)
    """

    columns = [run_gates(gates.basis_state(n, b), sequence) for b in range(2 ** n)]

    return np.stack(columns, axis=1)
