"""Central-difference verification of taped gradients.

``finite_diff_check`` is the acceptance oracle for every gradient in the
package: the analytic gradient comes from one taped evaluation, the
numeric one from plain (untaped) evaluations of the same function at
perturbed parameters, coordinate by coordinate.
"""

import numpy as np

from .tape import Tape, Var, as_tensor, backward


def _scalar(out) -> float:
    if isinstance(out, Var):
        return float(out.value)
    return float(np.asarray(out))


def finite_diff_check(f, theta, h: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` must accept either a taped Var or a plain array of the same
    shape as ``theta`` and return a scalar.  The error at coordinate i is
    |analytic_i - central_i| / max(1, |central_i|).
    """
    theta = as_tensor(theta)

    tape = Tape()
    leaf = tape.leaf(theta, name="theta")
    analytic = backward(tape, f(leaf))[leaf]

    work = theta.copy()
    flat = work.ravel()
    aflat = analytic.ravel()
    worst = 0.0
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = _scalar(f(work))
        flat[i] = orig - h
        fm = _scalar(f(work))
        flat[i] = orig
        central = (fp - fm) / (2.0 * h)
        err = abs(aflat[i] - central) / max(1.0, abs(central))
        if err > worst:
            worst = err
    return worst
