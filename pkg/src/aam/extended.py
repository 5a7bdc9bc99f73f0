"""The extended machine: conditionals, assignment, first-class
continuations, and exception handlers over the star machine.

Values extend closures with ``FalseV``, the ``CallccV`` operator, and
``KontV(addr)`` — a reified continuation living in the store.  The control
register holds either an expression or one of these values; syntactic value
forms are converted at frame-matching time, so no administrative steps are
added.  A handler register rides along: ``MtH`` means no handler, and
``Hn(lam, env, addr)`` saves the handler body with the address of the
handler/continuation pair to reinstate on return or throw.

Rule highlights:

* ``(set! x e)`` returns the *old* value; the concrete store overwrites,
  the abstract store joins (so the old value is never lost abstractly).
* applying ``callcc`` to a closure binds the parameter to the current
  continuation frame, stored at the binding address.
* applying ``callcc`` to a continuation value reifies the *current* frame
  (the pending callcc application) as the captured continuation — invoking
  it later re-enters that application.
* applying a continuation value discards the current continuation.
* a value returning to ``Mt`` under an installed handler pops the handler;
  returning under ``MtH`` is final.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

from .machines import (
    Closure,
    FRESH_POLICY,
    Final,
    Kont,
    MT,
    Mt,
    Next,
    StepOutcome,
    Stuck,
    Value,
)
from .store import (
    Addr,
    EMPTY_ASTORE,
    EMPTY_MAP,
    Env,
    FrozenMap,
    TAG_REIFY,
    Time,
    astore_add,
    astore_get,
    sort_key,
    time_strictly_precedes,
)
from .syntax import (
    App,
    Callcc,
    Catch,
    EXTENDED_FORMS,
    Exp,
    FalseLit,
    If,
    Lam,
    Ref,
    SetBang,
    Throw,
    check_closed,
    check_features,
)


@dataclass(frozen=True)
class FalseV(Value):
    tick_label = -2

    def __repr__(self) -> str:
        return "#f"


@dataclass(frozen=True)
class CallccV(Value):
    tick_label = -3

    def __repr__(self) -> str:
        return "callcc"


@dataclass(frozen=True)
class KontV(Value):
    addr: Addr
    tick_label = -4

    def __repr__(self) -> str:
        return f"kont@{self.addr!r}"


FALSE = FalseV()
CALLCC = CallccV()


@dataclass(frozen=True)
class Handler:
    pass


@dataclass(frozen=True)
class MtH(Handler):
    def __repr__(self) -> str:
        return "MtH"


@dataclass(frozen=True)
class Hn(Handler):
    lam: Lam
    env: Env
    saved: Addr

    def __repr__(self) -> str:
        return f"Hn({self.lam!r} {self.env!r} {self.saved!r})"


MTH = MtH()


@dataclass(frozen=True)
class HandlerPair:
    """Storable snapshot of (handler register, continuation register)."""

    handler: Handler
    kont: Kont

    def __repr__(self) -> str:
        return f"pair[{self.handler!r} {self.kont!r}]"


# Frames.  Each records the label of the node that pushed it; the reified
# continuation address produced when callcc meets a continuation value is
# keyed by that site.
@dataclass(frozen=True)
class ArX(Kont):
    exp: Exp
    env: Env
    site: int
    tail: Addr

    def __repr__(self) -> str:
        return f"Ar({self.exp!r} {self.env!r} #{self.site} {self.tail!r})"


@dataclass(frozen=True)
class FnX(Kont):
    op: Value
    site: int
    tail: Addr

    def __repr__(self) -> str:
        return f"Fn({self.op!r} #{self.site} {self.tail!r})"


@dataclass(frozen=True)
class IfK(Kont):
    then: Exp
    other: Exp
    env: Env
    site: int
    tail: Addr

    def __repr__(self) -> str:
        return f"If({self.then!r} {self.other!r} {self.env!r} #{self.site} {self.tail!r})"


@dataclass(frozen=True)
class SetK(Kont):
    target: Addr
    site: int
    tail: Addr

    def __repr__(self) -> str:
        return f"Set({self.target!r} #{self.site} {self.tail!r})"


@dataclass(frozen=True)
class ExtState:
    ctrl: Union[Exp, Value]
    env: Env
    store: FrozenMap
    handler: Handler
    kont: Kont
    time: Time


def inject_extended(e: Exp, policy=FRESH_POLICY) -> ExtState:
    check_closed(e)
    check_features(e, EXTENDED_FORMS, "extended")
    return ExtState(e, EMPTY_MAP, EMPTY_MAP, MTH, MT, policy.t0)


def inject_aext(e: Exp, policy) -> ExtState:
    check_closed(e)
    check_features(e, EXTENDED_FORMS, "extended")
    return ExtState(e, EMPTY_MAP, EMPTY_ASTORE, MTH, MT, policy.t0)


def control_value(ctrl, env: Env):
    """The value a control represents, or None for a non-value expression."""
    if isinstance(ctrl, Value):
        return ctrl
    if isinstance(ctrl, Lam):
        return Closure(ctrl, env)
    if isinstance(ctrl, FalseLit):
        return FALSE
    if isinstance(ctrl, Callcc):
        return CALLCC
    return None


def _resume(w, env: Env):
    """Control/environment pair for re-entering a stored value."""
    if isinstance(w, Closure):
        return w.lam, w.env
    return w, env


def is_final_ext(s: ExtState) -> bool:
    return (
        control_value(s.ctrl, s.env) is not None
        and isinstance(s.kont, Mt)
        and isinstance(s.handler, MtH)
    )


# ---------------------------------------------------------------------------
# Concrete machine
# ---------------------------------------------------------------------------


def step_extended(s: ExtState, policy=FRESH_POLICY) -> StepOutcome:
    c, env, store, eta, k = s.ctrl, s.env, s.store, s.handler, s.kont

    def advance(chosen: Kont) -> Time:
        u = policy.tick(s, chosen)
        assert time_strictly_precedes(s.time, u), "tick must strictly advance time"
        return u

    def alloc(fn, *args):
        addr = fn(*args)
        assert addr not in store, "allocation must be fresh"
        return addr

    v = control_value(c, env)
    if v is None:
        if isinstance(c, Ref):
            addr = env.get(c.name)
            if addr is None:
                return Stuck(f"unbound variable {c.name}")
            w = store.get(addr)
            if w is None:
                return Stuck(f"dangling address {addr!r}")
            u = advance(k)
            if isinstance(w, Kont):
                return Next(ExtState(KontV(addr), env, store, eta, k, u))
            ctrl2, env2 = _resume(w, env)
            return Next(ExtState(ctrl2, env2, store, eta, k, u))
        if isinstance(c, App):
            u = advance(k)
            addr = alloc(policy.alloc_kont, c.label, s, k)
            return Next(
                ExtState(c.fun, env, store.set(addr, k), eta, ArX(c.arg, env, c.label, addr), u)
            )
        if isinstance(c, If):
            u = advance(k)
            addr = alloc(policy.alloc_kont, c.label, s, k)
            return Next(
                ExtState(
                    c.test, env, store.set(addr, k), eta,
                    IfK(c.then, c.other, env, c.label, addr), u,
                )
            )
        if isinstance(c, SetBang):
            target = env.get(c.name)
            if target is None:
                return Stuck(f"unbound variable {c.name}")
            u = advance(k)
            addr = alloc(policy.alloc_kont, c.label, s, k)
            return Next(
                ExtState(c.value, env, store.set(addr, k), eta, SetK(target, c.label, addr), u)
            )
        if isinstance(c, Throw):
            w = control_value(c.value, env)
            if not isinstance(eta, Hn):
                return Stuck("throw with no handler installed")
            pair = store.get(eta.saved)
            if not isinstance(pair, HandlerPair):
                return Stuck(f"dangling handler address {eta.saved!r}")
            u = advance(pair.kont)
            addr = alloc(policy.alloc_bind, eta.lam.param, s, pair.kont)
            store2 = store.set(addr, w)
            return Next(
                ExtState(
                    eta.lam.body, eta.env.set(eta.lam.param, addr), store2,
                    pair.handler, pair.kont, u,
                )
            )
        if isinstance(c, Catch):
            u = advance(k)
            addr = alloc(policy.alloc_kont, c.label, s, k)
            store2 = store.set(addr, HandlerPair(eta, k))
            return Next(ExtState(c.body, env, store2, Hn(c.handler, env, addr), MT, u))
        return Stuck(f"no rule for control {c!r}")

    # value rules
    if isinstance(k, Mt):
        if isinstance(eta, Hn):
            pair = store.get(eta.saved)
            if not isinstance(pair, HandlerPair):
                return Stuck(f"dangling handler address {eta.saved!r}")
            return Next(ExtState(c, env, store, pair.handler, pair.kont, advance(pair.kont)))
        return Final(v)
    if isinstance(k, ArX):
        u = advance(k)
        return Next(ExtState(k.exp, k.env, store, eta, FnX(v, k.site, k.tail), u))
    if isinstance(k, FnX):
        popped = store.get(k.tail)
        if not isinstance(popped, Kont):
            return Stuck(f"dangling continuation address {k.tail!r}")
        op = k.op
        if isinstance(op, Closure):
            u = advance(popped)
            addr = alloc(policy.alloc_bind, op.lam.param, s, popped)
            store2 = store.set(addr, v)
            return Next(
                ExtState(op.lam.body, op.env.set(op.lam.param, addr), store2, eta, popped, u)
            )
        if isinstance(op, CallccV):
            if isinstance(v, Closure):
                u = advance(popped)
                addr = alloc(policy.alloc_bind, v.lam.param, s, popped)
                store2 = store.set(addr, popped)
                return Next(
                    ExtState(v.lam.body, v.env.set(v.lam.param, addr), store2, eta, popped, u)
                )
            if isinstance(v, KontV):
                target = store.get(v.addr)
                if not isinstance(target, Kont):
                    return Stuck(f"dangling continuation address {v.addr!r}")
                u = advance(target)
                addr = alloc(policy.alloc_kont, k.site, s, target, TAG_REIFY)
                store2 = store.set(addr, k)
                return Next(ExtState(KontV(addr), env, store2, eta, target, u))
            return Stuck(f"callcc applied to {v!r}")
        if isinstance(op, KontV):
            target = store.get(op.addr)
            if not isinstance(target, Kont):
                return Stuck(f"dangling continuation address {op.addr!r}")
            return Next(ExtState(c, env, store, eta, target, advance(target)))
        return Stuck(f"{op!r} is not applicable")
    if isinstance(k, IfK):
        popped = store.get(k.tail)
        if not isinstance(popped, Kont):
            return Stuck(f"dangling continuation address {k.tail!r}")
        branch = k.other if isinstance(v, FalseV) else k.then
        return Next(ExtState(branch, k.env, store, eta, popped, advance(popped)))
    if isinstance(k, SetK):
        popped = store.get(k.tail)
        if not isinstance(popped, Kont):
            return Stuck(f"dangling continuation address {k.tail!r}")
        old = store.get(k.target)
        if old is None:
            return Stuck(f"dangling address {k.target!r}")
        u = advance(popped)
        if isinstance(old, Kont):
            # the old continuation needs a home that survives the overwrite
            addr = alloc(policy.alloc_kont, k.site, s, popped, TAG_REIFY)
            store2 = store.set(addr, old).set(k.target, v)
            return Next(ExtState(KontV(addr), env, store2, eta, popped, u))
        store2 = store.set(k.target, v)
        ctrl2, env2 = _resume(old, env)
        return Next(ExtState(ctrl2, env2, store2, eta, popped, u))
    return Stuck(f"no rule for continuation {k!r}")


# ---------------------------------------------------------------------------
# Abstract machine
# ---------------------------------------------------------------------------


def _konts_at(store: FrozenMap, addr: Addr) -> list:
    return [w for w in sorted(astore_get(store, addr), key=sort_key) if isinstance(w, Kont)]


def step_extended_abstract(s: ExtState, policy) -> list[ExtState]:
    c, env, store, eta, k = s.ctrl, s.env, s.store, s.handler, s.kont
    succs: list[ExtState] = []

    v = control_value(c, env)
    if v is None:
        if isinstance(c, Ref):
            addr = env.get(c.name)
            if addr is None:
                return []
            u = policy.tick(s, k)
            seen_kont = False
            for w in sorted(astore_get(store, addr), key=sort_key):
                if isinstance(w, Kont):
                    if not seen_kont:
                        seen_kont = True
                        succs.append(ExtState(KontV(addr), env, store, eta, k, u))
                else:
                    ctrl2, env2 = _resume(w, env)
                    succs.append(ExtState(ctrl2, env2, store, eta, k, u))
        elif isinstance(c, App):
            u = policy.tick(s, k)
            addr = policy.alloc_kont(c.label, s, k)
            store2 = astore_add(store, addr, [k])
            succs.append(
                ExtState(c.fun, env, store2, eta, ArX(c.arg, env, c.label, addr), u)
            )
        elif isinstance(c, If):
            u = policy.tick(s, k)
            addr = policy.alloc_kont(c.label, s, k)
            store2 = astore_add(store, addr, [k])
            succs.append(
                ExtState(c.test, env, store2, eta, IfK(c.then, c.other, env, c.label, addr), u)
            )
        elif isinstance(c, SetBang):
            target = env.get(c.name)
            if target is not None:
                u = policy.tick(s, k)
                addr = policy.alloc_kont(c.label, s, k)
                store2 = astore_add(store, addr, [k])
                succs.append(
                    ExtState(c.value, env, store2, eta, SetK(target, c.label, addr), u)
                )
        elif isinstance(c, Throw):
            if isinstance(eta, Hn):
                w = control_value(c.value, env)
                for pair in sorted(astore_get(store, eta.saved), key=sort_key):
                    if not isinstance(pair, HandlerPair):
                        continue
                    u = policy.tick(s, pair.kont)
                    addr = policy.alloc_bind(eta.lam.param, s, pair.kont)
                    store2 = astore_add(store, addr, [w])
                    succs.append(
                        ExtState(
                            eta.lam.body, eta.env.set(eta.lam.param, addr), store2,
                            pair.handler, pair.kont, u,
                        )
                    )
        elif isinstance(c, Catch):
            u = policy.tick(s, k)
            addr = policy.alloc_kont(c.label, s, k)
            store2 = astore_add(store, addr, [HandlerPair(eta, k)])
            succs.append(ExtState(c.body, env, store2, Hn(c.handler, env, addr), MT, u))
        return succs

    # value rules
    if isinstance(k, Mt):
        if isinstance(eta, Hn):
            for pair in sorted(astore_get(store, eta.saved), key=sort_key):
                if isinstance(pair, HandlerPair):
                    u = policy.tick(s, pair.kont)
                    succs.append(ExtState(c, env, store, pair.handler, pair.kont, u))
        return succs
    if isinstance(k, ArX):
        u = policy.tick(s, k)
        return [ExtState(k.exp, k.env, store, eta, FnX(v, k.site, k.tail), u)]
    if isinstance(k, FnX):
        op = k.op
        for popped in _konts_at(store, k.tail):
            if isinstance(op, Closure):
                u = policy.tick(s, popped)
                addr = policy.alloc_bind(op.lam.param, s, popped)
                store2 = astore_add(store, addr, [v])
                succs.append(
                    ExtState(op.lam.body, op.env.set(op.lam.param, addr), store2, eta, popped, u)
                )
            elif isinstance(op, CallccV):
                if isinstance(v, Closure):
                    u = policy.tick(s, popped)
                    addr = policy.alloc_bind(v.lam.param, s, popped)
                    store2 = astore_add(store, addr, [popped])
                    succs.append(
                        ExtState(v.lam.body, v.env.set(v.lam.param, addr), store2, eta, popped, u)
                    )
                elif isinstance(v, KontV):
                    for target in _konts_at(store, v.addr):
                        u = policy.tick(s, target)
                        addr = policy.alloc_kont(k.site, s, target, TAG_REIFY)
                        store2 = astore_add(store, addr, [k])
                        succs.append(ExtState(KontV(addr), env, store2, eta, target, u))
            elif isinstance(op, KontV):
                for target in _konts_at(store, op.addr):
                    u = policy.tick(s, target)
                    succs.append(ExtState(c, env, store, eta, target, u))
        return succs
    if isinstance(k, IfK):
        branch = k.other if isinstance(v, FalseV) else k.then
        for popped in _konts_at(store, k.tail):
            u = policy.tick(s, popped)
            succs.append(ExtState(branch, k.env, store, eta, popped, u))
        return succs
    if isinstance(k, SetK):
        olds = sorted(astore_get(store, k.target), key=sort_key)
        kont_olds = [w for w in olds if isinstance(w, Kont)]
        store2 = astore_add(store, k.target, [v])
        for popped in _konts_at(store, k.tail):
            u = policy.tick(s, popped)
            if kont_olds:
                addr = policy.alloc_kont(k.site, s, popped, TAG_REIFY)
                store3 = astore_add(store2, addr, kont_olds)
                succs.append(ExtState(KontV(addr), env, store3, eta, popped, u))
            for old in olds:
                if not isinstance(old, Kont):
                    ctrl2, env2 = _resume(old, env)
                    succs.append(ExtState(ctrl2, env2, store2, eta, popped, u))
        return succs
    return succs


# ---------------------------------------------------------------------------
# Truncation into the abstract space
# ---------------------------------------------------------------------------


def alpha_ext_value(v: Value, k: int) -> Value:
    from .analysis import alpha_addr, alpha_env

    if isinstance(v, Closure):
        return Closure(v.lam, alpha_env(v.env, k))
    if isinstance(v, KontV):
        return KontV(alpha_addr(v.addr, k))
    return v


def alpha_ext_kont(kont: Kont, k: int) -> Kont:
    from .analysis import alpha_addr, alpha_env

    if isinstance(kont, Mt):
        return MT
    if isinstance(kont, ArX):
        return ArX(kont.exp, alpha_env(kont.env, k), kont.site, alpha_addr(kont.tail, k))
    if isinstance(kont, FnX):
        return FnX(alpha_ext_value(kont.op, k), kont.site, alpha_addr(kont.tail, k))
    if isinstance(kont, IfK):
        return IfK(kont.then, kont.other, alpha_env(kont.env, k), kont.site, alpha_addr(kont.tail, k))
    if isinstance(kont, SetK):
        return SetK(alpha_addr(kont.target, k), kont.site, alpha_addr(kont.tail, k))
    raise TypeError(f"not an extended frame: {kont!r}")


def alpha_ext_handler(h: Handler, k: int) -> Handler:
    from .analysis import alpha_addr, alpha_env

    if isinstance(h, MtH):
        return MTH
    return Hn(h.lam, alpha_env(h.env, k), alpha_addr(h.saved, k))


def alpha_ext_storable(w, k: int):
    if isinstance(w, Value):
        return alpha_ext_value(w, k)
    if isinstance(w, Kont):
        return alpha_ext_kont(w, k)
    if isinstance(w, HandlerPair):
        return HandlerPair(alpha_ext_handler(w.handler, k), alpha_ext_kont(w.kont, k))
    raise TypeError(f"not an extended storable: {w!r}")


def alpha_ext_state(s: ExtState, k: int) -> ExtState:
    from .analysis import alpha_env, alpha_store, alpha_time

    ctrl = s.ctrl if isinstance(s.ctrl, Exp) else alpha_ext_value(s.ctrl, k)
    return ExtState(
        ctrl,
        alpha_env(s.env, k),
        alpha_store(s.store, k, alpha_ext_storable),
        alpha_ext_handler(s.handler, k),
        alpha_ext_kont(s.kont, k),
        alpha_time(s.time, k),
    )
