from typing import Callable, List, Sequence, Tuple
import logging

import numpy as np

from utils.autodiff import Tape, Value, clear_grads
from utils.errors import NumericError

logger = logging.getLogger(__name__)

MIN_SAMPLES = 32


def _evaluate(build: Callable[[Tape], Value]) -> Tuple[Tape, Value]:
    tape = Tape()
    return tape, build(tape)


def grad_check(
    build: Callable[[Tape], Value],
    leaves: Sequence[Value],
    step: float = 1e-5,
    samples: int = MIN_SAMPLES,
    seed: int = 0,
    min_magnitude: float = 0.0,
) -> float:
    """
    Compare analytic gradients with central finite differences.

    Args:
        build: Closure that records a forward pass on the given tape and
            returns a scalar root; must be deterministic in the leaf data.
        leaves: Leaves to perturb.
        step: Finite-difference step h.
        samples: Coordinates sampled across all leaves (all of them when
            there are fewer).
        seed: Seed for coordinate sampling.
        min_magnitude: Only coordinates whose analytic gradient is at least
            this large in absolute value are eligible for sampling.

    Returns:
        float: max |a - n| / max(1e-8, |a| + |n|) over the sampled coordinates.
    """
    clear_grads(leaves)
    tape, root = _evaluate(build)
    tape.backward(root)
    analytic = [leaf.grad.copy() for leaf in leaves]

    coordinates: List[Tuple[int, int]] = [
        (k, flat)
        for k, leaf in enumerate(leaves)
        for flat in range(leaf.size)
        if abs(analytic[k].reshape(-1)[flat]) >= min_magnitude
    ]
    if len(coordinates) > samples:
        rng = np.random.default_rng(seed)
        picked = rng.choice(len(coordinates), size=samples, replace=False)
        coordinates = [coordinates[i] for i in sorted(picked)]

    worst = 0.0
    for k, flat in coordinates:
        leaf = leaves[k]
        view = leaf.data.reshape(-1)
        original = view[flat]
        view[flat] = original + step
        upper = _evaluate(build)[1].item()
        view[flat] = original - step
        lower = _evaluate(build)[1].item()
        view[flat] = original

        numeric = (upper - lower) / (2.0 * step)
        exact = analytic[k].reshape(-1)[flat]
        if not np.isfinite([upper, lower, exact]).all():
            raise NumericError(
                f"grad_check: non-finite value at leaf {_label(leaf, k)} coordinate {flat}"
            )
        error = abs(exact - numeric) / max(1e-8, abs(exact) + abs(numeric))
        worst = max(worst, error)

    logger.debug(f"grad_check: {len(coordinates)} coordinates, max relative error {worst:.3e}")
    clear_grads(leaves)
    return worst


def _label(leaf: Value, index: int) -> str:
    return leaf.name if leaf.name else f"#{index}"
