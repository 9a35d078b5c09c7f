"""
First-order update rules (Adam, SGD, RMSprop, Adagrad).

Each rule is a pure function step(param, grad, state) -> (new_param, new_state). The element-wise updates are
evaluated with numexpr, which fuses them in a single pass without temporaries. The Optimizer class applies
one rule to a whole named parameter map, keeping one state per parameter.
"""

import collections

import numpy as np
import numexpr

from cqcnn_alzheimer import myLogging
from cqcnn_alzheimer.cqException import ShapeMismatch

_logger = myLogging.log.getLogger("neuralkernel.optimizers")

AdamState = collections.namedtuple("AdamState", ["t", "m", "v", "lr", "beta1", "beta2", "eps"])
SGDState = collections.namedtuple("SGDState", ["lr"])
RMSpropState = collections.namedtuple("RMSpropState", ["v", "lr", "rho", "eps"])
AdagradState = collections.namedtuple("AdagradState", ["accumulator", "lr", "eps"])


def _check(param, grad, *moments):

    for array in (grad,) + moments:

        if array.shape != param.shape:
            raise ShapeMismatch("Gradient/state shape %s does not match parameter shape %s" % (array.shape,
                                                                                               param.shape))


def adam_state(param, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):

    assert 0 < beta1 < 1 and 0 < beta2 < 1, "Adam betas must lie in (0, 1)"

    return AdamState(t=0, m=np.zeros_like(param), v=np.zeros_like(param), lr=lr, beta1=beta1, beta2=beta2, eps=eps)


def adam_step(param, grad, state):

    _check(param, grad, state.m, state.v)

    t = state.t + 1

    local_dict = {'p': param, 'g': grad, 'm': state.m, 'v': state.v,
                  'b1': state.beta1, 'b2': state.beta2, 'lr': state.lr, 'eps': state.eps,
                  'c1': 1.0 - state.beta1 ** t, 'c2': 1.0 - state.beta2 ** t}

    m = numexpr.evaluate("b1 * m + (1 - b1) * g", local_dict=local_dict).astype(param.dtype)
    v = numexpr.evaluate("b2 * v + (1 - b2) * g * g", local_dict=local_dict).astype(param.dtype)

    local_dict['m'] = m
    local_dict['v'] = v

    new_param = numexpr.evaluate("p - lr * (m / c1) / (sqrt(v / c2) + eps)",
                                 local_dict=local_dict).astype(param.dtype)

    return new_param, state._replace(t=t, m=m, v=v)


def sgd_state(param, lr=1e-3):

    return SGDState(lr=lr)


def sgd_step(param, grad, state):

    _check(param, grad)

    return numexpr.evaluate("p - lr * g", local_dict={'p': param, 'g': grad, 'lr': state.lr}).astype(param.dtype), \
        state


def rmsprop_state(param, lr=1e-3, rho=0.9, eps=1e-8):

    return RMSpropState(v=np.zeros_like(param), lr=lr, rho=rho, eps=eps)


def rmsprop_step(param, grad, state):

    _check(param, grad, state.v)

    local_dict = {'p': param, 'g': grad, 'v': state.v, 'rho': state.rho, 'lr': state.lr, 'eps': state.eps}

    v = numexpr.evaluate("rho * v + (1 - rho) * g * g", local_dict=local_dict).astype(param.dtype)

    local_dict['v'] = v

    new_param = numexpr.evaluate("p - lr * g / (sqrt(v) + eps)", local_dict=local_dict).astype(param.dtype)

    return new_param, state._replace(v=v)


def adagrad_state(param, lr=1e-3, eps=1e-10):

    return AdagradState(accumulator=np.zeros_like(param), lr=lr, eps=eps)


def adagrad_step(param, grad, state):

    _check(param, grad, state.accumulator)

    local_dict = {'p': param, 'g': grad, 'acc': state.accumulator, 'lr': state.lr, 'eps': state.eps}

    accumulator = numexpr.evaluate("acc + g * g", local_dict=local_dict).astype(param.dtype)

    local_dict['acc'] = accumulator

    new_param = numexpr.evaluate("p - lr * g / (sqrt(acc) + eps)", local_dict=local_dict).astype(param.dtype)

    return new_param, state._replace(accumulator=accumulator)


_rules = {
    'adam': (adam_state, adam_step),
    'sgd': (sgd_state, sgd_step),
    'rmsprop': (rmsprop_state, rmsprop_step),
    'adagrad': (adagrad_state, adagrad_step),
}


class Optimizer(object):
    """
    Applies one update rule to a named parameter map (dict name -> array), in place.
    """

    def __init__(self, kind='adam', lr=1e-3):

        if kind not in _rules:
            raise ValueError("Unknown optimizer %s (choose among %s)" % (kind, ", ".join(sorted(_rules))))

        self.kind = kind
        self.lr = lr

        self._make_state, self._step = _rules[kind]

        self._states = collections.OrderedDict()

    def step(self, params, grads):

        # Fixed (sorted) order so that runs are reproducible whatever the dict insertion order
        for name in sorted(params.keys()):

            if name not in self._states:

                self._states[name] = self._make_state(params[name], lr=self.lr)

            params[name], self._states[name] = self._step(params[name], grads[name], self._states[name])

    def state(self, name):

        return self._states[name]
