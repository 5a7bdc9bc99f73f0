"""Garbage collection for store-based machines.

A machine step never deletes store entries, so stores grow monotonically
and abstract stores accumulate flow facts for bindings that can no longer
influence the result.  Collection computes the set of addresses reachable
from a state's roots (its control, environment, continuation, and handler
register) and restricts the store to them.

In a concrete machine this is a space optimisation that leaves the trace's
controls untouched.  In an abstract machine it is a precision improvement:
dead bindings joined at a reused address would otherwise flow into later
lookups, so collecting between steps yields fewer states and smaller value
sets.

``live_locations`` knows every storable and frame shape in the package;
``collect`` knows every state shape and its root set.
"""

from __future__ import annotations

from dataclasses import replace
from typing import Callable, Iterable

from .analysis import AbstractState, Ar0, Fn0, ZState
from .extended import (
    ArX,
    CallccV,
    ExtState,
    FalseV,
    FnX,
    HandlerPair,
    Hn,
    IfK,
    KontV,
    MtH,
    SetK,
    Value,
)
from .inspection import ArM, CMStarState, CMState, FnM, MtM
from .lazy import ApplyExpK, ApplyK, Computed, Delayed, LKState, LKStarState, UpdateK
from .machines import (
    Ar,
    CESKState,
    CESKStarState,
    CESKtState,
    Closure,
    Fn,
    Mt,
    Next,
    StepOutcome,
)
from .store import Addr, Env, FrozenMap, MonoBindA, StoreError, astore_get
from .syntax import Exp, free_vars


def live_exp(e: Exp, env: Env) -> frozenset[Addr]:
    """Addresses the expression can touch: its free variables' bindings."""
    return frozenset(env[x] for x in free_vars(e))


def live_mono(e: Exp) -> frozenset[Addr]:
    """Monovariant liveness: the machine without environments binds each
    variable at the address named after it."""
    return frozenset(MonoBindA(x) for x in free_vars(e))


def _tail(t) -> frozenset[Addr]:
    if isinstance(t, Addr):
        return frozenset((t,))
    return live_locations(t)


def live_locations(v) -> frozenset[Addr]:
    """Addresses directly mentioned by one storable, value, frame, or
    handler."""
    if isinstance(v, Addr):
        return frozenset((v,))
    if isinstance(v, Closure):
        return live_exp(v.lam, v.env)
    if isinstance(v, (FalseV, CallccV)):
        return frozenset()
    if isinstance(v, KontV):
        return frozenset((v.addr,))
    if isinstance(v, (Mt, MtH, MtM)):
        return frozenset()
    if isinstance(v, Ar):
        return live_exp(v.exp, v.env) | _tail(v.tail)
    if isinstance(v, Fn):
        return live_exp(v.lam, v.env) | _tail(v.tail)
    if isinstance(v, UpdateK):
        return frozenset((v.target,)) | _tail(v.tail)
    if isinstance(v, ApplyK):
        return frozenset((v.arg,)) | _tail(v.tail)
    if isinstance(v, ApplyExpK):
        return live_exp(v.exp, v.env) | _tail(v.tail)
    if isinstance(v, Delayed):
        return live_exp(v.exp, v.env)
    if isinstance(v, Computed):
        return live_exp(v.lam, v.env)
    if isinstance(v, ArX):
        return live_exp(v.exp, v.env) | _tail(v.tail)
    if isinstance(v, FnX):
        return live_locations(v.op) | _tail(v.tail)
    if isinstance(v, IfK):
        return live_exp(v.then, v.env) | live_exp(v.other, v.env) | _tail(v.tail)
    if isinstance(v, SetK):
        return frozenset((v.target,)) | _tail(v.tail)
    if isinstance(v, Hn):
        return live_exp(v.lam, v.env) | frozenset((v.saved,))
    if isinstance(v, HandlerPair):
        return live_locations(v.handler) | live_locations(v.kont)
    if isinstance(v, ArM):
        return live_exp(v.exp, v.env) | _tail(v.tail)
    if isinstance(v, FnM):
        return live_exp(v.lam, v.env) | _tail(v.tail)
    if isinstance(v, Ar0):
        return live_mono(v.exp) | frozenset((v.tail,))
    if isinstance(v, Fn0):
        return live_mono(v.lam) | frozenset((v.tail,))
    if isinstance(v, Exp):
        return live_mono(v)
    raise TypeError(f"no liveness rule for {v!r}")


def gc_reachable(
    roots: Iterable[Addr],
    store: FrozenMap,
    abstract: bool = False,
    live_fn: Callable = live_locations,
) -> frozenset[Addr]:
    """Transitive closure of liveness through the store.

    Concrete stores must resolve every reached address; abstract stores may
    leave an address unmapped (bottom), which contributes nothing.
    """
    reached: set[Addr] = set()
    work = list(roots)
    while work:
        a = work.pop()
        if a in reached:
            continue
        reached.add(a)
        if abstract:
            for v in astore_get(store, a):
                work.extend(live_fn(v))
        else:
            if a not in store:
                raise StoreError(f"live address {a!r} is unmapped")
            work.extend(live_fn(store[a]))
    return frozenset(reached)


def _roots(state) -> frozenset[Addr]:
    if isinstance(state, (CESKState, CESKStarState, CESKtState, AbstractState)):
        return live_exp(state.ctrl, state.env) | live_locations(state.kont)
    if isinstance(state, (LKState, LKStarState)):
        return live_exp(state.ctrl, state.env) | live_locations(state.kont)
    if isinstance(state, ExtState):
        if isinstance(state.ctrl, Value):
            ctrl_live = live_locations(state.ctrl)
        else:
            ctrl_live = live_exp(state.ctrl, state.env)
        return ctrl_live | live_locations(state.kont) | live_locations(state.handler)
    if isinstance(state, (CMState, CMStarState)):
        return live_exp(state.ctrl, state.env) | live_locations(state.kont)
    if isinstance(state, ZState):
        return live_mono(state.ctrl) | live_locations(state.kont)
    raise TypeError(f"no root set for {type(state).__name__}")


def collect(state, abstract: bool = False):
    """Restrict the state's store to the addresses reachable from its
    roots."""
    live = gc_reachable(_roots(state), state.store, abstract)
    return replace(state, store=state.store.restrict(live))


def collecting_step(step: Callable) -> Callable:
    """Wrap a concrete step function so every successor state is collected."""

    def wrapped(state, *args, **kwargs) -> StepOutcome:
        out = step(state, *args, **kwargs)
        if isinstance(out, Next):
            return Next(collect(out.state))
        return out

    return wrapped


def collecting_successors(successors: Callable) -> Callable:
    """Wrap an abstract successor function so every successor is
    collected."""

    def wrapped(state, *args, **kwargs) -> list:
        return [collect(s, abstract=True) for s in successors(state, *args, **kwargs)]

    return wrapped
