"""Abstract machines and the abstract interpreters derived from them.

A tower of concrete machines for a small call-by-value language (CEK,
CESK, CESK with store-allocated continuations, and its time-stamped
refinement) systematically becomes a family of static analyses: bound the
allocator and the same transition rules compute k-CFA-style flow
analyses.  The package carries the recipe across a by-need Krivine
machine, a machine with conditionals, mutation, first-class continuations
and exceptions, a stack-inspection machine with continuation marks, and a
pushdown analysis with an exact stack, plus abstract garbage collection
and store widening.
"""

from __future__ import annotations

from .analysis import (
    AbstractState,
    KCFAPolicy,
    StateGraph,
    WidenedSystem,
    abstraction_map,
    analyze_widened,
    analyze_widened_0cfa,
    explore,
    explore_0cfa,
    explore_states,
    monovariant_iteration_bound,
    state_leq,
)
from .machines import (
    CEKState,
    CESKState,
    CESKStarState,
    CESKtState,
    Closure,
    FRESH_POLICY,
    TIME_KEYED_POLICY,
    Trace,
    run_trace,
)
from .pushdown import (
    PushdownGraph,
    enumerate_bounded,
    reachable_pushdown,
    reachable_pushdown_widened,
)
from .store import FrozenMap, astore_join, astore_leq
from .syntax import Exp, ParseError, Program, parse, parse_program, unparse

__version__ = "0.1.0"

__all__ = [
    "AbstractState",
    "CEKState",
    "CESKState",
    "CESKStarState",
    "CESKtState",
    "Closure",
    "Exp",
    "FrozenMap",
    "FRESH_POLICY",
    "KCFAPolicy",
    "ParseError",
    "Program",
    "PushdownGraph",
    "StateGraph",
    "TIME_KEYED_POLICY",
    "Trace",
    "WidenedSystem",
    "abstraction_map",
    "analyze_widened",
    "analyze_widened_0cfa",
    "astore_join",
    "astore_leq",
    "enumerate_bounded",
    "explore",
    "explore_0cfa",
    "explore_states",
    "monovariant_iteration_bound",
    "parse",
    "parse_program",
    "reachable_pushdown",
    "reachable_pushdown_widened",
    "run_trace",
    "state_leq",
    "unparse",
    "__version__",
]
