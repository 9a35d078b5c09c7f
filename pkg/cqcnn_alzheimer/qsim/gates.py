"""
Statevector gates. A state of n qubits is a complex128 array of 2**n amplitudes, where bit q of the basis index
is the value of qubit q (qubit 0 is the least significant bit). Every gate returns a new array.
"""

import numpy as np

from cqcnn_alzheimer.cqException import BadQubit, BadLength

MAX_QUBITS = 12

_SQRT2_INV = 1.0 / np.sqrt(2.0)


def n_qubits_of(state):

    n = int(state.shape[0]).bit_length() - 1

    if state.ndim != 1 or 2 ** n != state.shape[0] or not 1 <= n <= MAX_QUBITS:
        raise BadLength("A state of 1..%s qubits needs 2**n amplitudes, got %s" % (MAX_QUBITS, state.shape))

    return n


def zero_state(n):

    if not 1 <= n <= MAX_QUBITS:
        raise BadLength("Between 1 and %s qubits are supported, got %s" % (MAX_QUBITS, n))

    state = np.zeros(2 ** n, dtype=np.complex128)
    state[0] = 1.0

    return state


def basis_state(n, index):

    state = np.zeros(2 ** n, dtype=np.complex128)
    state[index] = 1.0

    return state


def _check_qubit(state, q):

    n = n_qubits_of(state)

    if not 0 <= q < n:
        raise BadQubit("Qubit %s does not exist in a %s-qubit register" % (q, n))

    return n


def _bit(n, q):

    return (np.arange(2 ** n) >> q) & 1


def _apply_1q(state, matrix, q):

    n = _check_qubit(state, q)

    # Axis 1 of this view is qubit q
    view = state.reshape(2 ** (n - q - 1), 2, 2 ** q)

    out = np.empty_like(view)
    out[:, 0, :] = matrix[0, 0] * view[:, 0, :] + matrix[0, 1] * view[:, 1, :]
    out[:, 1, :] = matrix[1, 0] * view[:, 0, :] + matrix[1, 1] * view[:, 1, :]

    return out.reshape(-1)


def apply_h(state, q):

    return _apply_1q(state, np.array([[_SQRT2_INV, _SQRT2_INV], [_SQRT2_INV, -_SQRT2_INV]]), q)


def apply_ry(state, q, theta):

    c = np.cos(theta / 2.0)
    s = np.sin(theta / 2.0)

    return _apply_1q(state, np.array([[c, -s], [s, c]]), q)


def apply_p(state, q, lam):

    n = _check_qubit(state, q)

    return np.where(_bit(n, q) == 1, state * np.exp(1j * lam), state)


def _check_pair(state, q1, q2):

    n = _check_qubit(state, q1)
    _check_qubit(state, q2)

    if q1 == q2:
        raise BadQubit("Two-qubit gate needs two distinct qubits, got %s twice" % q1)

    return n


def apply_cz(state, q1, q2):

    n = _check_pair(state, q1, q2)

    both = (_bit(n, q1) & _bit(n, q2)) == 1

    return np.where(both, -state, state)


def apply_zz_phase(state, q1, q2, phi):
    """
    Multiply by exp(i phi) the amplitudes where exactly one of the two qubits is 1. This is the net effect of
    the CNOT-phase-CNOT entangling block of the ZZ feature map.
    """

    n = _check_pair(state, q1, q2)

    odd = (_bit(n, q1) ^ _bit(n, q2)) == 1

    return np.where(odd, state * np.exp(1j * phi), state)


def expectation_parity(state):
    """
    Expectation of Z x ... x Z: sum over basis states of (-1)**popcount(b) |amp_b|**2
    """

    n = n_qubits_of(state)

    index = np.arange(2 ** n)

    parity = np.zeros(2 ** n, dtype=np.int64)

    for q in range(n):
        parity ^= (index >> q) & 1

    eigenvalues = 1 - 2 * parity

    probabilities = np.abs(state) ** 2

    return float(np.clip(np.sum(eigenvalues * probabilities), -1.0, 1.0))
