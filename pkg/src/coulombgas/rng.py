"""Counter-based random streams.

Every stream is a Philox generator whose key is ``(seed, purpose)`` and
whose counter is offset by up to three integers, so a stream is a pure
function of its address and can be regenerated in any order.
"""

import numpy as np

SAMPLER = 1
INIT = 2
NOISE = 3
BRIDGE = 4
CONTROL = 5

_MASK = (1 << 64) - 1


def stream(seed: int, purpose: int, *address: int) -> np.random.Generator:
    if len(address) > 3:
        raise ValueError("stream address has at most three components")
    counter = [0] + [int(a) & _MASK for a in address] + [0] * (3 - len(address))
    bitgen = np.random.Philox(key=[int(seed) & _MASK, purpose], counter=counter)
    return np.random.Generator(bitgen)


def step_gaussians(seed: int, step: int, n: int, d: int) -> np.ndarray:
    """Standard normals for time step ``step``; row i belongs to label i.

    Draws are sequential within the step stream, so the value for
    ``(step, i, c)`` does not depend on n as long as i < n.
    """
    return stream(seed, NOISE, step).standard_normal((n, d))


def bridge_gaussians(seed: int, step: int, node: int, n: int, d: int) -> np.ndarray:
    """Standard normals for refining the Brownian path inside a step.

    ``node`` is the heap index of the sub-interval being split.
    """
    return stream(seed, BRIDGE, step, node).standard_normal((n, d))
