"""Finite state space for treatment episodes.

A non-terminal state is a pair (diagnosis index, inpatient count): the most
recent diagnosis category seen so far and the number of inpatient claims so
far, capped. One extra absorbing TERMINAL state marks the end of an episode.
States are flattened to integer indices so matrices can be indexed directly;
TERMINAL always takes the last index.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import StateRangeError

TERMINAL_KEY = "terminal"


@dataclass(frozen=True)
class StateSpace:
    """Index layout for (diagnosis, inpatient count) states plus TERMINAL.

    n_diagnoses counts the diagnosis category dictionary entries, including
    the reserved unknown slot at index n_diagnoses - 1. max_inpatient is the
    cap on the inpatient-claim counter (0 collapses the counter entirely).
    """

    n_diagnoses: int
    max_inpatient: int

    def __post_init__(self):
        if self.n_diagnoses < 1:
            raise StateRangeError("n_diagnoses must be >= 1")
        if self.max_inpatient < 0:
            raise StateRangeError("max_inpatient must be >= 0")

    @property
    def n_states(self) -> int:
        """Total number of states including TERMINAL."""
        return self.n_diagnoses * (self.max_inpatient + 1) + 1

    @property
    def terminal(self) -> int:
        return self.n_states - 1

    @property
    def unknown_diagnosis(self) -> int:
        """Reserved index for episodes whose prefix carries no diagnosis."""
        return self.n_diagnoses - 1

    def index(self, diagnosis: int, inpatient: int) -> int:
        if not 0 <= diagnosis < self.n_diagnoses:
            raise StateRangeError(
                f"diagnosis index {diagnosis} outside [0, {self.n_diagnoses})"
            )
        if not 0 <= inpatient <= self.max_inpatient:
            raise StateRangeError(
                f"inpatient count {inpatient} outside [0, {self.max_inpatient}]"
            )
        return diagnosis * (self.max_inpatient + 1) + inpatient

    def decode(self, state: int) -> tuple[int, int] | None:
        """Return (diagnosis, inpatient) for a state index, None for TERMINAL."""
        if not 0 <= state < self.n_states:
            raise StateRangeError(f"state index {state} outside [0, {self.n_states})")
        if state == self.terminal:
            return None
        return divmod(state, self.max_inpatient + 1)

    def key(self, state: int) -> str:
        """Stable text key for a state index, used in JSON artifacts."""
        decoded = self.decode(state)
        if decoded is None:
            return TERMINAL_KEY
        d, c = decoded
        return f"d{d:03d}_c{c}"

    def from_key(self, key: str) -> int:
        if key == TERMINAL_KEY:
            return self.terminal
        try:
            d_part, c_part = key.split("_")
            return self.index(int(d_part[1:]), int(c_part[1:]))
        except (ValueError, IndexError) as exc:
            raise StateRangeError(f"malformed state key {key!r}") from exc

    def keys(self) -> list[str]:
        return [self.key(s) for s in range(self.n_states)]
