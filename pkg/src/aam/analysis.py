"""Abstract interpretation of the core language.

The abstract machine is the time-stamped star machine re-read over an
abstract store: addresses hold non-empty sets of storables, store update
joins, and lookups fan out into one successor per storable.  Termination is
by exhaustion of the finite state space, never by fuel.

Three drivers are provided:

* ``explore``          breadth-first reachable-state graph, per-state stores
* ``explore_0cfa``     a specialized monovariant machine with no environment
                       (addresses are variable names and site labels)
* ``analyze_widened``  single-threaded global store: the system is a set of
                       store-less contexts plus one store, iterated to a
                       fixed point

``abstraction_map`` sends states of the concrete time-keyed machine into
the k-bounded abstract state space by truncating every contour (in the time
and inside every address) to its first k entries, and ``state_leq`` is the
induced order: identical up to the store, stores ordered pointwise.
"""

from __future__ import annotations

import dataclasses
from collections import deque
from dataclasses import dataclass

from .machines import (
    Ar,
    CESKtState,
    Closure,
    Fn,
    Kont,
    MT,
    Mt,
    tick_label,
)
from .store import (
    Addr,
    BindA,
    Contour,
    EMPTY_ASTORE,
    EMPTY_MAP,
    Env,
    FrozenMap,
    KontA,
    MonoBindA,
    MonoKontA,
    MonoUpdateA,
    TAG_KONT,
    Time,
    UpdateA,
    astore_add,
    astore_get,
    astore_join,
    astore_leq,
    sort_key,
)
from .syntax import App, CORE_FORMS, Exp, Lam, Ref, check_closed, check_features


@dataclass(frozen=True)
class AbstractState:
    ctrl: Exp
    env: Env
    store: FrozenMap
    kont: Kont
    time: Time


class KCFAPolicy:
    """Contours of the last k control labels; k=0 degenerates to the
    time-free monovariant address families."""

    concrete = False

    def __init__(self, k: int):
        if k < 0:
            raise ValueError("k must be non-negative")
        self.k = k
        self.t0 = Contour(())

    def tick(self, state, kont) -> Contour:
        return Contour(((tick_label(state.ctrl),) + state.time.labels)[: self.k])

    def alloc_bind(self, var: str, state, kont) -> Addr:
        if self.k == 0:
            return MonoBindA(var)
        return BindA(var, self.tick(state, kont))

    def alloc_kont(self, site: int, state, kont, tag: str = TAG_KONT) -> Addr:
        if self.k == 0:
            return MonoKontA(site, tag)
        return KontA(site, self.tick(state, kont), tag)

    def alloc_update(self, var: str, state, kont) -> Addr:
        if self.k == 0:
            return MonoUpdateA(var)
        return UpdateA(var, self.tick(state, kont))


def inject_abstract(e: Exp, policy: KCFAPolicy) -> AbstractState:
    check_closed(e)
    check_features(e, CORE_FORMS, "core")
    return AbstractState(e, EMPTY_MAP, EMPTY_ASTORE, MT, policy.t0)


def is_final_abstract(s: AbstractState) -> bool:
    return isinstance(s.ctrl, Lam) and isinstance(s.kont, Mt)


def step_abstract(s: AbstractState, policy: KCFAPolicy) -> list[AbstractState]:
    """All one-step successors, in a deterministic order."""
    c, env, store, k = s.ctrl, s.env, s.store, s.kont
    succs: list[AbstractState] = []
    if isinstance(c, Ref):
        addr = env.get(c.name)
        if addr is not None:
            u = policy.tick(s, k)
            for v in sorted(astore_get(store, addr), key=sort_key):
                if isinstance(v, Closure):
                    succs.append(AbstractState(v.lam, v.env, store, k, u))
    elif isinstance(c, App):
        u = policy.tick(s, k)
        addr = policy.alloc_kont(c.label, s, k)
        store2 = astore_add(store, addr, [k])
        succs.append(AbstractState(c.fun, env, store2, Ar(c.arg, env, addr), u))
    elif isinstance(c, Lam):
        if isinstance(k, Ar):
            u = policy.tick(s, k)
            succs.append(AbstractState(k.exp, k.env, store, Fn(c, env, k.tail), u))
        elif isinstance(k, Fn):
            for popped in sorted(astore_get(store, k.tail), key=sort_key):
                if not isinstance(popped, Kont):
                    continue
                u = policy.tick(s, popped)
                addr = policy.alloc_bind(k.lam.param, s, popped)
                store2 = astore_add(store, addr, [Closure(c, env)])
                succs.append(
                    AbstractState(
                        k.lam.body, k.env.set(k.lam.param, addr), store2, popped, u
                    )
                )
        # value at Mt: a finished computation, no successors
    return succs


# ---------------------------------------------------------------------------
# Reachable-state graphs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StateGraph:
    """States in first-discovery order (index 0 is the initial state)."""

    states: tuple
    edges: frozenset  # of (source index, target index)
    finals: tuple
    initial: int = 0

    def successors_of(self, i: int) -> list[int]:
        return sorted(j for (src, j) in self.edges if src == i)


def explore_states(initial, successors, is_final, order: str = "bfs") -> StateGraph:
    """Generic graph search; the seen set is checked before enqueueing, so
    any worklist discipline yields the same state and edge sets."""
    index = {initial: 0}
    states = [initial]
    edges: set[tuple[int, int]] = set()
    finals: list[int] = []
    if is_final(initial):
        finals.append(0)
    queue = deque([initial])
    pop = queue.popleft if order == "bfs" else queue.pop
    while queue:
        s = pop()
        i = index[s]
        for t in successors(s):
            j = index.get(t)
            if j is None:
                j = len(states)
                index[t] = j
                states.append(t)
                if is_final(t):
                    finals.append(j)
                queue.append(t)
            edges.add((i, j))
    return StateGraph(tuple(states), frozenset(edges), tuple(sorted(finals)))


def explore(e: Exp, policy: KCFAPolicy, order: str = "bfs") -> StateGraph:
    return explore_states(
        inject_abstract(e, policy),
        lambda s: step_abstract(s, policy),
        is_final_abstract,
        order,
    )


# ---------------------------------------------------------------------------
# The truncation map and the state order
# ---------------------------------------------------------------------------


def alpha_time(t: Time, k: int) -> Contour:
    if not isinstance(t, Contour):
        raise TypeError("only contour times abstract by truncation")
    return Contour(t.labels[:k])


def alpha_addr(a: Addr, k: int) -> Addr:
    if isinstance(a, BindA):
        return MonoBindA(a.var) if k == 0 else BindA(a.var, alpha_time(a.time, k))
    if isinstance(a, KontA):
        return MonoKontA(a.site, a.tag) if k == 0 else KontA(a.site, alpha_time(a.time, k), a.tag)
    if isinstance(a, UpdateA):
        return MonoUpdateA(a.var) if k == 0 else UpdateA(a.var, alpha_time(a.time, k))
    raise TypeError(f"address {a!r} is not in the truncation map's domain")


def alpha_env(env: Env, k: int) -> Env:
    return FrozenMap({x: alpha_addr(a, k) for x, a in env.items()})


def alpha_kont_core(kont: Kont, k: int) -> Kont:
    if isinstance(kont, Mt):
        return MT
    if isinstance(kont, Ar):
        return Ar(kont.exp, alpha_env(kont.env, k), alpha_addr(kont.tail, k))
    if isinstance(kont, Fn):
        return Fn(kont.lam, alpha_env(kont.env, k), alpha_addr(kont.tail, k))
    raise TypeError(f"not a core frame: {kont!r}")


def alpha_storable_core(v, k: int):
    if isinstance(v, Closure):
        return Closure(v.lam, alpha_env(v.env, k))
    if isinstance(v, Kont):
        return alpha_kont_core(v, k)
    raise TypeError(f"not a core storable: {v!r}")


def alpha_store(store: FrozenMap, k: int, alpha_storable=alpha_storable_core) -> FrozenMap:
    grouped: dict[Addr, set] = {}
    for a, v in store.items():
        grouped.setdefault(alpha_addr(a, k), set()).add(alpha_storable(v, k))
    return FrozenMap({a: frozenset(vs) for a, vs in grouped.items()})


def abstraction_map(s: CESKtState, k: int) -> AbstractState:
    """Truncate a concrete time-keyed state to the k-bounded space."""
    return AbstractState(
        s.ctrl,
        alpha_env(s.env, k),
        alpha_store(s.store, k),
        alpha_kont_core(s.kont, k),
        alpha_time(s.time, k),
    )


def state_leq(s1, s2) -> bool:
    """Pointwise order: equal everywhere except the store, stores ordered
    by pointwise subset.  Applies to any state type with a store field."""
    if type(s1) is not type(s2):
        return False
    if dataclasses.replace(s1, store=EMPTY_ASTORE) != dataclasses.replace(s2, store=EMPTY_ASTORE):
        return False
    return astore_leq(s1.store, s2.store)


# ---------------------------------------------------------------------------
# The specialized monovariant machine (no environments)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Ar0(Kont):
    exp: Exp
    tail: Addr

    def __repr__(self) -> str:
        return f"Ar0({self.exp!r} {self.tail!r})"


@dataclass(frozen=True)
class Fn0(Kont):
    lam: Lam
    tail: Addr

    def __repr__(self) -> str:
        return f"Fn0({self.lam!r} {self.tail!r})"


@dataclass(frozen=True)
class ZState:
    """Monovariant machine state: bindings key on the variable itself, so
    no environment is needed; stored values are bare lambda nodes."""

    ctrl: Exp
    store: FrozenMap
    kont: Kont


def inject_0cfa(e: Exp) -> ZState:
    check_closed(e)
    check_features(e, CORE_FORMS, "core")
    return ZState(e, EMPTY_ASTORE, MT)


def is_final_0cfa(s: ZState) -> bool:
    return isinstance(s.ctrl, Lam) and isinstance(s.kont, Mt)


def step_0cfa(s: ZState) -> list[ZState]:
    c, store, k = s.ctrl, s.store, s.kont
    succs: list[ZState] = []
    if isinstance(c, Ref):
        for v in sorted(astore_get(store, MonoBindA(c.name)), key=sort_key):
            if isinstance(v, Lam):
                succs.append(ZState(v, store, k))
    elif isinstance(c, App):
        addr = MonoKontA(c.label)
        store2 = astore_add(store, addr, [k])
        succs.append(ZState(c.fun, store2, Ar0(c.arg, addr)))
    elif isinstance(c, Lam):
        if isinstance(k, Ar0):
            succs.append(ZState(k.exp, store, Fn0(c, k.tail)))
        elif isinstance(k, Fn0):
            for popped in sorted(astore_get(store, k.tail), key=sort_key):
                if not isinstance(popped, Kont):
                    continue
                store2 = astore_add(store, MonoBindA(k.lam.param), [c])
                succs.append(ZState(k.lam.body, store2, popped))
    return succs


def explore_0cfa(e: Exp, order: str = "bfs") -> StateGraph:
    return explore_states(inject_0cfa(e), step_0cfa, is_final_0cfa, order)


# ---------------------------------------------------------------------------
# Store widening
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WidenedSystem:
    """Contexts are states with the store stripped (set to the empty
    abstract store); one global store serves all of them."""

    contexts: frozenset
    store: FrozenMap
    iterations: int


def strip_store(state):
    return dataclasses.replace(state, store=EMPTY_ASTORE)


def widened_fixpoint(initial, successors) -> WidenedSystem:
    """Kleene iteration from the empty system.  Each round steps every
    context against the global store, joins all produced stores, and adds
    the injected context; ``iterations`` counts the strictly-growing
    rounds."""
    contexts: set = set()
    store = EMPTY_ASTORE
    inj = strip_store(initial)
    iterations = 0
    while True:
        new_contexts = set(contexts)
        new_store = store
        for ctx in contexts:
            for t in successors(dataclasses.replace(ctx, store=store)):
                new_contexts.add(strip_store(t))
                new_store = astore_join(new_store, t.store)
        new_contexts.add(inj)
        if new_contexts == contexts and new_store == store:
            return WidenedSystem(frozenset(contexts), store, iterations)
        contexts, store = new_contexts, new_store
        iterations += 1


def analyze_widened(e: Exp, policy: KCFAPolicy) -> WidenedSystem:
    return widened_fixpoint(
        inject_abstract(e, policy), lambda s: step_abstract(s, policy)
    )


def analyze_widened_0cfa(e: Exp) -> WidenedSystem:
    return widened_fixpoint(inject_0cfa(e), step_0cfa)


def monovariant_iteration_bound(e: Exp) -> int:
    """Worst-case number of strictly-growing widened rounds, from the sizes
    of the monovariant state space: one new context or one new store entry
    per round."""
    from .syntax import lam_count, node_count, var_names

    n_exp = node_count(e)
    n_var = len(var_names(e))
    n_lam = lam_count(e)
    return n_exp * (1 + 2 * n_exp**2) + (n_var + n_exp) * (n_lam + 1 + 2 * n_exp**2)
