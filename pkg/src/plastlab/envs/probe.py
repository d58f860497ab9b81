"""Supervised plasticity probe: a frozen random teacher behind a permutation.

All probe tasks share one fixed teacher network; the only thing a task
changes is the input permutation drawn from perm_seed. perm_seed 0 means the
identity permutation (the base task).
"""

from __future__ import annotations

import numpy as np

from ..errors import InvalidInputError
from ..net import LayerSpec, init_network, network_output
from ..numkit import RngStream

PROBE_DIM = 16
PROBE_OUT = 4
_TEACHER_SEED = 0x7EAC4E12
_PERM_STREAM = 103

_teacher = None


def teacher_network():
    """The shared frozen teacher; built once, deterministically."""
    global _teacher
    if _teacher is None:
        layers = [
            LayerSpec(PROBE_DIM, 32, activation="tanh"),
            LayerSpec(32, PROBE_OUT, activation="linear"),
        ]
        _teacher = init_network(layers, RngStream(_TEACHER_SEED, 0))
    return _teacher


def probe_permutation(perm_seed: int) -> np.ndarray:
    if perm_seed == 0:
        return np.arange(PROBE_DIM)
    return RngStream(perm_seed, _PERM_STREAM).permutation(PROBE_DIM)


def probe_task(perm_seed: int, n: int, stream: RngStream) -> tuple[np.ndarray, np.ndarray]:
    """Draw a batch of (inputs, teacher targets) for one permutation task."""
    if n < 1:
        raise InvalidInputError(f"batch size must be >= 1, got {n}")
    x = stream.normal(0.0, 1.0, n * PROBE_DIM).reshape(n, PROBE_DIM)
    perm = probe_permutation(perm_seed)
    y = network_output(teacher_network(), x[:, perm])
    return x, y
