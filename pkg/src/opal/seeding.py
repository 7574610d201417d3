"""Seed fan-out: one master seed per run splits into independent named streams.

Every source of randomness in a run draws from a stream derived here, so two
runs with the same master seed see identical randomness no matter which
variant knobs are flipped, and variants sharing a master seed share the same
benchmark and the same round-0 acquisition. Stream ids are append-only;
reordering them breaks reproducibility against older runs.

Split order (stream id, extra path components):
    0 benchmark generation
    1 round-0 reference model init
    2 round-0 reference model shuffle
    3 round-0 random scores
    4 member init               (member)
    5 member shuffle            (round, stage, member)
    6 scorer draws              (round)
    7 selection tie-break       (round)

Member init intentionally has no round component: every round re-initializes
its members from the same per-member warm start, mirroring training that
restarts from one fixed checkpoint each round.
"""

from __future__ import annotations

import numpy as np

_BENCHMARK = 0
_ROUND0_MODEL_INIT = 1
_ROUND0_MODEL_SHUFFLE = 2
_ROUND0_SCORES = 3
_MEMBER_INIT = 4
_MEMBER_SHUFFLE = 5
_SCORER = 6
_TIE_BREAK = 7

STAGE_SUPERVISED = 0
STAGE_SEMI = 1


def derive_seed(master: int, stream: int, *path: int) -> int:
    """Deterministic 64-bit seed for (master, stream, *path)."""
    ss = np.random.SeedSequence([int(master), int(stream), *(int(p) for p in path)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


class SeedPlan:
    """Named stream accessors for one run's master seed."""

    def __init__(self, master: int):
        self.master = int(master)

    def benchmark(self) -> int:
        return derive_seed(self.master, _BENCHMARK)

    def round0_model_init(self) -> int:
        return derive_seed(self.master, _ROUND0_MODEL_INIT)

    def round0_model_shuffle(self) -> int:
        return derive_seed(self.master, _ROUND0_MODEL_SHUFFLE)

    def round0_scores(self) -> int:
        return derive_seed(self.master, _ROUND0_SCORES)

    def member_init(self, member: int) -> int:
        return derive_seed(self.master, _MEMBER_INIT, member)

    def member_shuffle(self, round_index: int, stage: int, member: int) -> int:
        return derive_seed(self.master, _MEMBER_SHUFFLE, round_index, stage, member)

    def scorer(self, round_index: int) -> int:
        return derive_seed(self.master, _SCORER, round_index)

    def tie_break(self, round_index: int) -> int:
        return derive_seed(self.master, _TIE_BREAK, round_index)
