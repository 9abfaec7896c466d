import numpy as np
import pytest

from matnet.tensor import Tape, finite_difference_gradient, named_arrays, named_grads, relative_error, value_of


def gradient_error(loss_fn, params, h=1e-5, joint=False):
    """Worst relative error between tape gradients and central differences.

    ``loss_fn`` maps a parameter structure (plain or watched) to a scalar.
    Every array in ``params`` is checked, inputs included if present. With
    ``joint`` the error is taken over the concatenated gradient of all arrays,
    so an array whose true gradient is identically zero is judged against the
    layer's gradient scale rather than against pure rounding noise.
    """
    tape = Tape()
    bound = tape.watch(params)
    tape.backward(loss_fn(bound))
    grads = named_grads(bound)
    worst = 0.0
    tape_parts, fd_parts = [], []
    for name, arr in named_arrays(params).items():
        def f(x, arr=arr):
            saved = arr.copy()
            arr[...] = x
            try:
                return float(value_of(loss_fn(params)))
            finally:
                arr[...] = saved

        fd = finite_difference_gradient(f, arr, h)
        worst = max(worst, relative_error(grads[name], fd))
        tape_parts.append(np.ravel(grads[name]))
        fd_parts.append(np.ravel(fd))
    if joint:
        return relative_error(np.concatenate(tape_parts)[None, :], np.concatenate(fd_parts)[None, :])
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
