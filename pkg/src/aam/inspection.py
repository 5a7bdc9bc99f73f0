"""Stack inspection: continuation marks and the security machine.

Each frame carries a marks table mapping permissions to "grant" or "deny".
The security forms rewrite the top frame's marks:

* ``(frame (R) e)``  marks everything *outside* R denied: code only passes
  through the permissions it was granted statically
* ``(grant (R) e)``  marks R granted on the current frame
* ``(test (R) e0 e1)``  branches on the inspection predicate OK
* ``fail``           halts with a distinguished security failure

OK(R, κ) walks the continuation: it fails on a frame denying any member of
R, drops granted permissions, and succeeds at the empty continuation (or
once nothing is left to justify).  Pushed frames start with empty marks;
refocusing an argument frame into a call frame preserves its marks.

The abstract machine stores continuations like the star machine.  Its
inspection predicate is a pair of path searches over the store: a test
takes its true branch if some resolved continuation path satisfies OK and
its false branch if some path refutes OK; with a merged store both can
hold at once.

``annotate`` applies the static policy: every lambda body is wrapped in a
frame carrying the given permission set and every grant is intersected
with it.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Union

from .machines import (
    Closure,
    FRESH_POLICY,
    FailFinal,
    Final,
    Kont,
    Next,
    StepOutcome,
    Stuck,
)
from .store import (
    Addr,
    EMPTY_ASTORE,
    EMPTY_MAP,
    Env,
    FrozenMap,
    Time,
    astore_add,
    astore_get,
    fresh_addr,
    sort_key,
    time_strictly_precedes,
)
from .syntax import (
    App,
    Exp,
    Fail,
    Frame,
    Grant,
    Lam,
    Ref,
    SECURITY_FORMS,
    Test,
    check_closed,
    check_features,
    permissions_used,
)

GRANT = "grant"
DENY = "deny"

Marks = FrozenMap  # permission -> GRANT | DENY
EMPTY_MARKS = EMPTY_MAP


@dataclass(frozen=True)
class MtM(Kont):
    marks: Marks = EMPTY_MARKS

    def __repr__(self) -> str:
        return f"Mt^{self.marks!r}"


@dataclass(frozen=True)
class ArM(Kont):
    exp: Exp
    env: Env
    marks: Marks
    tail: Union[Kont, Addr]

    def __repr__(self) -> str:
        return f"Ar^{self.marks!r}({self.exp!r} {self.env!r} {self.tail!r})"


@dataclass(frozen=True)
class FnM(Kont):
    lam: Lam
    env: Env
    marks: Marks
    tail: Union[Kont, Addr]

    def __repr__(self) -> str:
        return f"Fn^{self.marks!r}({self.lam!r} {self.env!r} {self.tail!r})"


MTM = MtM()


def mark(kont: Kont, perms: frozenset[str], value: str) -> Kont:
    """Rewrite the top frame's marks for every permission in perms."""
    if not perms:
        return kont
    return dataclasses.replace(kont, marks=kont.marks.update({p: value for p in perms}))


@dataclass(frozen=True)
class CMState:
    ctrl: Exp
    env: Env
    store: FrozenMap
    kont: Kont


@dataclass(frozen=True)
class CMStarState:
    ctrl: Exp
    env: Env
    store: FrozenMap
    kont: Kont
    time: Time


def _validate(e: Exp, universe: frozenset[str]) -> None:
    check_closed(e)
    check_features(e, SECURITY_FORMS, "security")
    extra = permissions_used(e) - universe
    if extra:
        raise ValueError(f"permissions {sorted(extra)} are outside the declared universe")


def inject_cm(e: Exp, universe: frozenset[str]) -> CMState:
    _validate(e, universe)
    return CMState(e, EMPTY_MAP, EMPTY_MAP, MTM)


def inject_cm_star(e: Exp, universe: frozenset[str], policy=FRESH_POLICY) -> CMStarState:
    _validate(e, universe)
    return CMStarState(e, EMPTY_MAP, EMPTY_MAP, MTM, policy.t0)


def inject_acm(e: Exp, universe: frozenset[str], policy) -> CMStarState:
    _validate(e, universe)
    return CMStarState(e, EMPTY_MAP, EMPTY_ASTORE, MTM, policy.t0)


# ---------------------------------------------------------------------------
# The inspection predicate
# ---------------------------------------------------------------------------


def _denied(marks: Marks, perms: frozenset[str]) -> bool:
    return any(marks.get(p) == DENY for p in perms)


def _drop_granted(marks: Marks, perms: frozenset[str]) -> frozenset[str]:
    return frozenset(p for p in perms if marks.get(p) != GRANT)


def ok(perms: frozenset[str], kont: Kont, store: FrozenMap | None = None) -> bool:
    """The concrete predicate; pass the store when frame tails are addresses."""
    while True:
        if not perms:
            return True
        if _denied(kont.marks, perms):
            return False
        if isinstance(kont, MtM):
            return True
        perms = _drop_granted(kont.marks, perms)
        tail = kont.tail
        if isinstance(tail, Addr):
            if store is None:
                raise ValueError("address-tailed continuation needs a store")
            tail = store.get(tail)
            if not isinstance(tail, Kont):
                raise ValueError(f"dangling continuation address {kont.tail!r}")
        kont = tail


def ok_hat(perms: frozenset[str], kont: Kont, store: FrozenMap) -> bool:
    """True iff some store-resolved continuation path satisfies OK."""
    if not perms:
        return True
    work: list[tuple[frozenset[str], Kont]] = [(perms, kont)]
    visited: set[tuple[frozenset[str], Addr]] = set()
    while work:
        r, k = work.pop()
        if _denied(k.marks, r):
            continue
        if isinstance(k, MtM):
            return True
        r2 = _drop_granted(k.marks, r)
        if not r2:
            return True
        key = (r2, k.tail)
        if key in visited:
            continue
        visited.add(key)
        for nxt in sorted(astore_get(store, k.tail), key=sort_key):
            if isinstance(nxt, Kont):
                work.append((r2, nxt))
    return False


def fails_hat(perms: frozenset[str], kont: Kont, store: FrozenMap) -> bool:
    """True iff some store-resolved continuation path refutes OK."""
    if not perms:
        return False
    work: list[tuple[frozenset[str], Kont]] = [(perms, kont)]
    visited: set[tuple[frozenset[str], Addr]] = set()
    while work:
        r, k = work.pop()
        if _denied(k.marks, r):
            return True
        if isinstance(k, MtM):
            continue
        r2 = _drop_granted(k.marks, r)
        if not r2:
            continue
        key = (r2, k.tail)
        if key in visited:
            continue
        visited.add(key)
        for nxt in sorted(astore_get(store, k.tail), key=sort_key):
            if isinstance(nxt, Kont):
                work.append((r2, nxt))
    return False


# ---------------------------------------------------------------------------
# Annotation: push the static policy into the program text
# ---------------------------------------------------------------------------


def annotate(e: Exp, perms: frozenset[str]) -> Exp:
    """Wrap every lambda body in a frame for perms; intersect grants with
    perms.  Labels are regenerated in preorder."""
    from .syntax import relabel

    def go(node: Exp) -> Exp:
        if isinstance(node, Ref):
            return node
        if isinstance(node, Lam):
            return Lam(0, node.param, Frame(0, perms, go(node.body)))
        if isinstance(node, App):
            return App(0, go(node.fun), go(node.arg))
        if isinstance(node, Fail):
            return node
        if isinstance(node, Frame):
            return Frame(0, node.perms, go(node.body))
        if isinstance(node, Grant):
            return Grant(0, node.perms & perms, go(node.body))
        if isinstance(node, Test):
            return Test(0, node.perms, go(node.then), go(node.other))
        raise TypeError(f"not a security-language form: {node!r}")

    return relabel(go(e))


# ---------------------------------------------------------------------------
# Concrete machines
# ---------------------------------------------------------------------------


def _is_fail_halt(c: Exp, kont: Kont) -> bool:
    return isinstance(c, Fail) and kont == MTM


def step_cm(s: CMState, universe: frozenset[str]) -> StepOutcome:
    c, env, store, k = s.ctrl, s.env, s.store, s.kont
    if isinstance(c, Ref):
        addr = env.get(c.name)
        if addr is None:
            return Stuck(f"unbound variable {c.name}")
        clo = store.get(addr)
        if not isinstance(clo, Closure):
            return Stuck(f"dangling address {addr!r}")
        return Next(CMState(clo.lam, clo.env, store, k))
    if isinstance(c, App):
        return Next(CMState(c.fun, env, store, ArM(c.arg, env, EMPTY_MARKS, k)))
    if isinstance(c, Lam):
        if isinstance(k, ArM):
            return Next(CMState(k.exp, k.env, store, FnM(c, env, k.marks, k.tail)))
        if isinstance(k, FnM):
            addr = fresh_addr(store)
            store2 = store.set(addr, Closure(c, env))
            return Next(CMState(k.lam.body, k.env.set(k.lam.param, addr), store2, k.tail))
        if isinstance(k, MtM):
            return Final(Closure(c, env))
    if isinstance(c, Fail):
        if _is_fail_halt(c, k):
            return FailFinal()
        return Next(CMState(c, env, store, MTM))
    if isinstance(c, Frame):
        return Next(CMState(c.body, env, store, mark(k, universe - c.perms, DENY)))
    if isinstance(c, Grant):
        return Next(CMState(c.body, env, store, mark(k, c.perms, GRANT)))
    if isinstance(c, Test):
        branch = c.then if ok(c.perms, k) else c.other
        return Next(CMState(branch, env, store, k))
    return Stuck(f"no rule for control {c!r}")


def step_cm_star(s: CMStarState, universe: frozenset[str], policy=FRESH_POLICY) -> StepOutcome:
    c, env, store, k = s.ctrl, s.env, s.store, s.kont

    def advance(chosen: Kont) -> Time:
        u = policy.tick(s, chosen)
        assert time_strictly_precedes(s.time, u), "tick must strictly advance time"
        return u

    if isinstance(c, Ref):
        addr = env.get(c.name)
        if addr is None:
            return Stuck(f"unbound variable {c.name}")
        clo = store.get(addr)
        if not isinstance(clo, Closure):
            return Stuck(f"dangling address {addr!r}")
        return Next(CMStarState(clo.lam, clo.env, store, k, advance(k)))
    if isinstance(c, App):
        u = advance(k)
        addr = policy.alloc_kont(c.label, s, k)
        assert addr not in store, "allocation must be fresh"
        store2 = store.set(addr, k)
        return Next(CMStarState(c.fun, env, store2, ArM(c.arg, env, EMPTY_MARKS, addr), u))
    if isinstance(c, Lam):
        if isinstance(k, ArM):
            return Next(CMStarState(k.exp, k.env, store, FnM(c, env, k.marks, k.tail), advance(k)))
        if isinstance(k, FnM):
            popped = store.get(k.tail)
            if not isinstance(popped, Kont):
                return Stuck(f"dangling continuation address {k.tail!r}")
            u = advance(popped)
            addr = policy.alloc_bind(k.lam.param, s, popped)
            assert addr not in store, "allocation must be fresh"
            store2 = store.set(addr, Closure(c, env))
            return Next(CMStarState(k.lam.body, k.env.set(k.lam.param, addr), store2, popped, u))
        if isinstance(k, MtM):
            return Final(Closure(c, env))
    if isinstance(c, Fail):
        if _is_fail_halt(c, k):
            return FailFinal()
        return Next(CMStarState(c, env, store, MTM, advance(MTM)))
    if isinstance(c, Frame):
        return Next(CMStarState(c.body, env, store, mark(k, universe - c.perms, DENY), advance(k)))
    if isinstance(c, Grant):
        return Next(CMStarState(c.body, env, store, mark(k, c.perms, GRANT), advance(k)))
    if isinstance(c, Test):
        branch = c.then if ok(c.perms, k, store) else c.other
        return Next(CMStarState(branch, env, store, k, advance(k)))
    return Stuck(f"no rule for control {c!r}")


# ---------------------------------------------------------------------------
# Abstract machine
# ---------------------------------------------------------------------------


def is_final_acm(s: CMStarState) -> bool:
    return isinstance(s.ctrl, Lam) and isinstance(s.kont, MtM)


def is_fail_acm(s: CMStarState) -> bool:
    return _is_fail_halt(s.ctrl, s.kont)


def step_cm_abstract(s: CMStarState, universe: frozenset[str], policy) -> list[CMStarState]:
    c, env, store, k = s.ctrl, s.env, s.store, s.kont
    succs: list[CMStarState] = []
    if isinstance(c, Ref):
        addr = env.get(c.name)
        if addr is None:
            return []
        u = policy.tick(s, k)
        for v in sorted(astore_get(store, addr), key=sort_key):
            if isinstance(v, Closure):
                succs.append(CMStarState(v.lam, v.env, store, k, u))
    elif isinstance(c, App):
        u = policy.tick(s, k)
        addr = policy.alloc_kont(c.label, s, k)
        store2 = astore_add(store, addr, [k])
        succs.append(CMStarState(c.fun, env, store2, ArM(c.arg, env, EMPTY_MARKS, addr), u))
    elif isinstance(c, Lam):
        if isinstance(k, ArM):
            u = policy.tick(s, k)
            succs.append(CMStarState(k.exp, k.env, store, FnM(c, env, k.marks, k.tail), u))
        elif isinstance(k, FnM):
            for popped in sorted(astore_get(store, k.tail), key=sort_key):
                if not isinstance(popped, Kont):
                    continue
                u = policy.tick(s, popped)
                addr = policy.alloc_bind(k.lam.param, s, popped)
                store2 = astore_add(store, addr, [Closure(c, env)])
                succs.append(
                    CMStarState(k.lam.body, k.env.set(k.lam.param, addr), store2, popped, u)
                )
    elif isinstance(c, Fail):
        if not _is_fail_halt(c, k):
            succs.append(CMStarState(c, env, store, MTM, policy.tick(s, MTM)))
    elif isinstance(c, Frame):
        u = policy.tick(s, k)
        succs.append(CMStarState(c.body, env, store, mark(k, universe - c.perms, DENY), u))
    elif isinstance(c, Grant):
        u = policy.tick(s, k)
        succs.append(CMStarState(c.body, env, store, mark(k, c.perms, GRANT), u))
    elif isinstance(c, Test):
        u = policy.tick(s, k)
        if ok_hat(c.perms, k, store):
            succs.append(CMStarState(c.then, env, store, k, u))
        if fails_hat(c.perms, k, store):
            succs.append(CMStarState(c.other, env, store, k, u))
    return succs


# ---------------------------------------------------------------------------
# Truncation into the abstract space
# ---------------------------------------------------------------------------


def alpha_cm_kont(kont: Kont, k: int) -> Kont:
    from .analysis import alpha_addr, alpha_env

    if isinstance(kont, MtM):
        return kont
    if isinstance(kont, ArM):
        return ArM(kont.exp, alpha_env(kont.env, k), kont.marks, alpha_addr(kont.tail, k))
    if isinstance(kont, FnM):
        return FnM(kont.lam, alpha_env(kont.env, k), kont.marks, alpha_addr(kont.tail, k))
    raise TypeError(f"not a marked frame: {kont!r}")


def alpha_cm_storable(v, k: int):
    from .analysis import alpha_env

    if isinstance(v, Closure):
        return Closure(v.lam, alpha_env(v.env, k))
    if isinstance(v, Kont):
        return alpha_cm_kont(v, k)
    raise TypeError(f"not a security-machine storable: {v!r}")


def alpha_cm_state(s: CMStarState, k: int) -> CMStarState:
    from .analysis import alpha_env, alpha_store, alpha_time

    return CMStarState(
        s.ctrl,
        alpha_env(s.env, k),
        alpha_store(s.store, k, alpha_cm_storable),
        alpha_cm_kont(s.kont, k),
        alpha_time(s.time, k),
    )
