"""Parameter point of a switching model."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .switching import TransitionProbs


@dataclass
class ParamPoint:
    """Free coefficients, transition probabilities and the state vector.

    Attributes
    ----------
    free : ndarray
        Values of the free coefficients in ``ModelSpec.free_names`` order.
    trans : TransitionProbs
        Probabilities per free interval (empty for single-state models).
    s : ndarray of int8
        State of every auxiliary period.
    """

    free: NDArray[np.float64]
    trans: TransitionProbs
    s: NDArray[np.int8]

    def copy(self) -> "ParamPoint":
        return ParamPoint(self.free.copy(),
                          TransitionProbs(self.trans.p01.copy(), self.trans.p10.copy()),
                          self.s.copy())

    def continuous(self) -> NDArray[np.float64]:
        """Free coefficients followed by all ``p01`` and then all ``p10``."""
        return np.concatenate([self.free, self.trans.p01, self.trans.p10])
