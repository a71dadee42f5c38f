"""Seeded splitmix64 generator behind every random choice in a run."""

from dataclasses import dataclass

from protocol_testbed.domain.value_objects import U64_MAX

GOLDEN_GAMMA = 0x9E3779B97F4A7C15
_MIX_1 = 0xBF58476D1CE4E5B9
_MIX_2 = 0x94D049BB133111EB
_UNIT = 2.0**-53


def splitmix64(state: int) -> tuple:
    """One splitmix64 step: returns (value, next_state)."""
    s = (state + GOLDEN_GAMMA) & U64_MAX
    z = s
    z = ((z ^ (z >> 30)) * _MIX_1) & U64_MAX
    z = ((z ^ (z >> 27)) * _MIX_2) & U64_MAX
    return z ^ (z >> 31), s


@dataclass
class Prng:
    """
    splitmix64 stream. Equal states produce equal output streams; every
    draw advances the state by exactly one step.
    """

    state: int = 0

    def __post_init__(self):
        self.state &= U64_MAX

    def next_u64(self) -> int:
        """Next 64-bit output."""
        value, self.state = splitmix64(self.state)
        return value

    def below(self, n: int) -> int:
        """Value in [0, n). Plain modulo reduction, so small bias is accepted for large n."""
        if n < 1:
            raise ValueError(f"below() needs n >= 1, got {n}")
        return self.next_u64() % n

    def bernoulli(self, rate: float) -> bool:
        """True with probability rate. Always consumes one draw, including rate 0 and 1."""
        u = (self.next_u64() >> 11) * _UNIT
        return u < rate

    def fork(self) -> "Prng":
        """Independent copy at the same state."""
        return Prng(self.state)


def derive_seed(seed: int, index: int) -> int:
    """Seed for the index-th independent sub-stream of seed."""
    value, _ = splitmix64(seed ^ ((index + 1) * GOLDEN_GAMMA & U64_MAX))
    return value
