"""Command-line front end.

Runs any machine or analysis in the package on a program file and emits
the trace or state graph as text, JSON, or a directed-graph description.

    aam <machine> [--k N] [--widen] [--gc] [--fuel N]
        [--format text|json|dot] [--annotate p,q,...] FILE

Machines: cek cesk ceskstar ceskt lk lk-opt lk-postponed ext cm (concrete)
and kcfa 0cfa alk acm aext pushdown (abstract).

Exit codes: 0 on success (including fuel exhaustion and security failure),
1 on parse errors, 2 on configuration errors (bad flag combinations,
programs outside the machine's language, open programs), 3 when a concrete
machine gets stuck.

All emitted formats are byte-deterministic for a fixed configuration and
input: states appear in first-discovery order and every set is rendered
sorted.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from .analysis import (
    KCFAPolicy,
    explore_states,
    inject_abstract,
    inject_0cfa,
    is_final_abstract,
    is_final_0cfa,
    step_abstract,
    step_0cfa,
    strip_store,
    widened_fixpoint,
)
from .extended import inject_aext, inject_extended, is_final_ext, step_extended, step_extended_abstract
from .gc import collect, collecting_step, collecting_successors
from .inspection import (
    annotate,
    inject_acm,
    inject_cm,
    is_final_acm,
    step_cm,
    step_cm_abstract,
)
from .lazy import inject_alk, inject_lk, is_final_alk, step_lk, step_lk_star_abstract
from .machines import Closure, FRESH_POLICY, MACHINES, trace_from
from .pushdown import reachable_pushdown, reachable_pushdown_widened
from .store import (
    Addr,
    BindA,
    FrozenMap,
    MonoBindA,
    MonoUpdateA,
    UpdateA,
    sort_key,
)
from .syntax import (
    CORE_FORMS,
    Exp,
    FeatureError,
    Lam,
    ParseError,
    check_closed,
    check_features,
    parse_program,
    permissions_used,
    unparse,
)

CONCRETE = ("cek", "cesk", "ceskstar", "ceskt", "lk", "lk-opt", "lk-postponed", "ext", "cm")
ABSTRACT = ("kcfa", "0cfa", "alk", "acm", "aext", "pushdown")
ALL_MACHINES = CONCRETE + ABSTRACT
CONTOURED = ("kcfa", "alk", "acm", "aext")
NO_GC = ("cek", "pushdown")
ANNOTATABLE = ("cm", "acm")
LK_VARIANT = {"lk": "standard", "lk-opt": "opt", "lk-postponed": "postponed"}


class ConfigError(Exception):
    pass


@dataclasses.dataclass
class Row:
    id: int
    control: str
    env: dict
    store: dict
    kont: str
    time: str
    final: bool


@dataclasses.dataclass
class Model:
    """Renderer-ready view of one run, shared by all output formats."""

    machine: str
    k: int
    rows: list
    edges: list
    initial: int
    finals: list
    value_flow: dict
    headline: str
    extras: list


# ---------------------------------------------------------------------------
# Rendering helpers
# ---------------------------------------------------------------------------


def render_control(c) -> str:
    return unparse(c) if isinstance(c, Exp) else repr(c)


def render_value(v) -> str:
    if isinstance(v, Closure):
        return unparse(v.lam)
    if isinstance(v, Exp):
        return unparse(v)
    return repr(v)


def _render_env(env) -> dict:
    if env is None:
        return {}
    return {x: repr(a) for x, a in sorted(env.items(), key=lambda kv: kv[0])}


def _render_store(store, abstract: bool) -> dict:
    if store is None:
        return {}
    items = sorted(store.items(), key=lambda kv: sort_key(kv[0]))
    if abstract:
        return {repr(a): sorted(repr(v) for v in vs) for a, vs in items}
    return {repr(a): repr(v) for a, v in items}


def _row(i, ctrl, env, store, kont, time, final, abstract) -> Row:
    return Row(
        id=i,
        control=render_control(ctrl),
        env=_render_env(env),
        store=_render_store(store, abstract),
        kont="" if kont is None else repr(kont),
        time="" if time is None else repr(time),
        final=final,
    )


def _state_row(i, state, final, abstract) -> Row:
    return _row(
        i,
        state.ctrl,
        getattr(state, "env", None),
        getattr(state, "store", None),
        getattr(state, "kont", None),
        getattr(state, "time", None),
        final,
        abstract,
    )


def _value_lambda(w):
    from .lazy import Computed

    if isinstance(w, Closure):
        return w.lam
    if isinstance(w, Lam):
        return w
    if isinstance(w, Computed):
        return w.lam
    return None


def _binding_var(a) -> str | None:
    if isinstance(a, (MonoBindA, MonoUpdateA)):
        return a.var
    if isinstance(a, (BindA, UpdateA)):
        return a.var
    return None


def projection_flow(stores) -> dict:
    """Variable -> lambdas, read off binding addresses (contours dropped)."""
    flow: dict[str, set[str]] = {}
    for store in stores:
        for a, vs in store.items():
            var = _binding_var(a)
            if var is None:
                continue
            values = vs if isinstance(vs, frozenset) else (vs,)
            for w in values:
                lam = _value_lambda(w)
                if lam is not None:
                    flow.setdefault(var, set()).add(unparse(lam))
    return {x: sorted(vs) for x, vs in sorted(flow.items())}


def env_scan_flow(states) -> dict:
    """Variable -> lambdas, scanning environments and resolving addresses.
    Used for concrete machines, whose fresh addresses carry no variable."""
    flow: dict[str, set[str]] = {}
    for s in states:
        env = getattr(s, "env", None)
        if env is None:
            continue
        store = getattr(s, "store", None)
        for var, target in env.items():
            w = target
            if isinstance(target, Addr) and store is not None:
                w = store.get(target)
            lam = _value_lambda(w)
            if lam is not None:
                flow.setdefault(var, set()).add(unparse(lam))
    return {x: sorted(vs) for x, vs in sorted(flow.items())}


# ---------------------------------------------------------------------------
# Dispatch
# ---------------------------------------------------------------------------


def _validate_flags(args) -> None:
    machine = args.machine
    if args.k is not None:
        if machine not in CONTOURED:
            raise ConfigError(f"--k applies only to {', '.join(CONTOURED)}")
        if args.k < 0:
            raise ConfigError("--k must be non-negative")
    if args.widen and machine not in ABSTRACT:
        raise ConfigError("--widen applies only to abstract machines")
    if args.gc:
        if machine in NO_GC:
            raise ConfigError(f"--gc does not apply to {machine}")
        if args.widen:
            raise ConfigError("--gc cannot be combined with --widen")
    if args.fuel is not None:
        if machine in ABSTRACT:
            raise ConfigError("--fuel applies only to concrete machines")
        if args.fuel < 0:
            raise ConfigError("--fuel must be non-negative")
    if args.annotate is not None and machine not in ANNOTATABLE:
        raise ConfigError(f"--annotate applies only to {', '.join(ANNOTATABLE)}")


def _prepare_security(args, program):
    e = program.exp
    granted = frozenset()
    if args.annotate is not None:
        granted = frozenset(p for p in args.annotate.split(",") if p)
        e = annotate(e, granted)
    universe = program.permissions or (permissions_used(e) | granted)
    return e, universe


def _run_concrete(args, program) -> tuple[Model, int]:
    machine = args.machine
    fuel = 10000 if args.fuel is None else args.fuel
    e = program.exp
    if machine in MACHINES:
        check_closed(e)
        check_features(e, CORE_FORMS, "core")
        inject, rawstep = MACHINES[machine]
        initial = inject(e, FRESH_POLICY) if machine == "ceskt" else inject(e)
        step = lambda s: rawstep(s, FRESH_POLICY)
    elif machine in LK_VARIANT:
        variant = LK_VARIANT[machine]
        initial = inject_lk(e)
        step = lambda s: step_lk(s, variant)
    elif machine == "ext":
        initial = inject_extended(e)
        step = lambda s: step_extended(s)
    else:
        e, universe = _prepare_security(args, program)
        initial = inject_cm(e, universe)
        step = lambda s: step_cm(s, universe)
    if args.gc:
        initial = collect(initial)
        step = collecting_step(step)
    trace = trace_from(step, initial, fuel)

    n = len(trace.states)
    finals = [n - 1] if trace.outcome == "final" else []
    rows = [
        _state_row(i, s, final=(i in finals), abstract=False)
        for i, s in enumerate(trace.states)
    ]
    edges = [(i, i + 1) for i in range(n - 1)]
    if trace.outcome == "final":
        headline = f"Final: {render_value(trace.value)}"
        code = 0
    elif trace.outcome == "fail":
        headline = "Fail"
        code = 0
    elif trace.outcome == "fuel":
        headline = f"Out of fuel after {trace.steps} steps"
        code = 0
    else:
        headline = f"Stuck: {trace.reason}"
        code = 3
    model = Model(
        machine=machine,
        k=0,
        rows=rows,
        edges=edges,
        initial=0,
        finals=finals,
        value_flow=env_scan_flow(trace.states),
        headline=headline,
        extras=[f"steps: {trace.steps}"],
    )
    return model, code


def _abstract_parts(args, program):
    """Initial state, successor function, and finality test per machine."""
    machine = args.machine
    k = args.k if args.k is not None else 0
    e = program.exp
    policy = KCFAPolicy(k)
    if machine == "kcfa":
        return inject_abstract(e, policy), (lambda s: step_abstract(s, policy)), is_final_abstract
    if machine == "0cfa":
        return inject_0cfa(e), step_0cfa, is_final_0cfa
    if machine == "alk":
        return inject_alk(e, policy), (lambda s: step_lk_star_abstract(s, policy)), is_final_alk
    if machine == "aext":
        return inject_aext(e, policy), (lambda s: step_extended_abstract(s, policy)), is_final_ext
    e, universe = _prepare_security(args, program)
    return (
        inject_acm(e, universe, policy),
        lambda s: step_cm_abstract(s, universe, policy),
        is_final_acm,
    )


def _pushdown_model(args, program) -> Model:
    if args.widen:
        widened = reachable_pushdown_widened(program.exp)
        graph = widened.graph
        extras = [f"iterations: {widened.iterations}"]
    else:
        graph = reachable_pushdown(program.exp)
        extras = []
    rows = []
    finals = set(graph.finals)
    for i, node in enumerate(graph.nodes):
        rows.append(
            _row(
                i,
                node.control.exp,
                node.control.env,
                node.control.store,
                node.top,
                None,
                i in finals,
                abstract=True,
            )
        )
    summaries = sorted((i, j) for i, j, kind in graph.edges if kind == "summary")
    extras += [f"summary edge: {i} -> {j}" for i, j in summaries]
    return Model(
        machine="pushdown",
        k=0,
        rows=rows,
        edges=sorted(graph.edge_pairs()),
        initial=graph.initial,
        finals=sorted(finals),
        value_flow=projection_flow(n.control.store for n in graph.nodes),
        headline=f"Saturated {len(rows)} nodes, {len(graph.finals)} final",
        extras=extras,
    )


def _run_abstract(args, program) -> tuple[Model, int]:
    machine = args.machine
    k = args.k if args.k is not None else 0
    if machine == "pushdown":
        return _pushdown_model(args, program), 0
    initial, successors, is_final = _abstract_parts(args, program)
    if args.widen:
        system = widened_fixpoint(initial, successors)
        states = sorted(system.contexts, key=sort_key)
        index = {s: i for i, s in enumerate(states)}
        edges = set()
        for i, ctx in enumerate(states):
            for t in successors(dataclasses.replace(ctx, store=system.store)):
                j = index.get(strip_store(t))
                if j is not None:
                    edges.add((i, j))
        finals = [i for i, s in enumerate(states) if is_final(s)]
        rows = [
            _row(
                i,
                s.ctrl,
                getattr(s, "env", None),
                system.store,
                getattr(s, "kont", None),
                getattr(s, "time", None),
                i in finals,
                abstract=True,
            )
            for i, s in enumerate(states)
        ]
        model = Model(
            machine=machine,
            k=k,
            rows=rows,
            edges=sorted(edges),
            initial=index[strip_store(initial)],
            finals=finals,
            value_flow=projection_flow([system.store]),
            headline=f"Widened to {len(states)} contexts, {len(finals)} final",
            extras=[f"iterations: {system.iterations}", f"store entries: {len(system.store)}"],
        )
        return model, 0
    if args.gc:
        initial = collect(initial, abstract=True)
        successors = collecting_successors(successors)
    graph = explore_states(initial, successors, is_final)
    finals = list(graph.finals)
    rows = [
        _state_row(i, s, final=(i in set(finals)), abstract=True)
        for i, s in enumerate(graph.states)
    ]
    model = Model(
        machine=machine,
        k=k,
        rows=rows,
        edges=sorted(graph.edges),
        initial=graph.initial,
        finals=finals,
        value_flow=projection_flow(getattr(s, "store", FrozenMap()) for s in graph.states),
        headline=f"Explored {len(rows)} states, {len(finals)} final",
        extras=[],
    )
    return model, 0


def _dispatch(args, program) -> tuple[Model, int]:
    _validate_flags(args)
    if args.machine in CONCRETE:
        return _run_concrete(args, program)
    return _run_abstract(args, program)


# ---------------------------------------------------------------------------
# Output formats
# ---------------------------------------------------------------------------


def emit_text(model: Model) -> str:
    lines = [f"machine: {model.machine}" + (f" k={model.k}" if model.machine in CONTOURED else "")]
    for row in model.rows:
        mark = " *" if row.final else ""
        kont = f"  kont: {row.kont}" if row.kont else ""
        time = f"  time: {row.time}" if row.time else ""
        lines.append(f"{row.id}: {row.control}{kont}{time}{mark}")
    if model.edges:
        lines.append("edges:")
        lines += [f"  {i} -> {j}" for i, j in model.edges]
    lines.append(model.headline)
    lines += model.extras
    if model.value_flow:
        lines.append("value flow:")
        lines += [f"  {x}: " + " | ".join(vs) for x, vs in model.value_flow.items()]
    return "\n".join(lines)


def emit_json(model: Model) -> str:
    obj = {
        "machine": model.machine,
        "k": model.k,
        "states": [
            {
                "id": r.id,
                "control": r.control,
                "env": r.env,
                "store": r.store,
                "kont": r.kont,
                "time": r.time,
                "final": r.final,
            }
            for r in model.rows
        ],
        "edges": [[i, j] for i, j in model.edges],
        "initial": model.initial,
        "summary": {
            "stateCount": len(model.rows),
            "finals": model.finals,
            "valueFlow": model.value_flow,
        },
    }
    return json.dumps(obj, indent=2)


def _dot_escape(s: str) -> str:
    return s.replace("\\", "\\\\").replace('"', '\\"')


def emit_dot(model: Model) -> str:
    lines = ["digraph aam {", "  rankdir=LR;"]
    for row in model.rows:
        head = row.kont.split("(")[0] if row.kont else "-"
        label = _dot_escape(f"{row.id}: {row.control} <{head}>")
        attrs = [f'label="{label}"']
        if row.final:
            attrs.append("shape=doublecircle")
        if row.id == model.initial:
            attrs.append("style=bold")
        lines.append(f"  n{row.id} [{', '.join(attrs)}];")
    for i, j in model.edges:
        lines.append(f"  n{i} -> n{j};")
    lines.append("}")
    return "\n".join(lines)


EMITTERS = {"text": emit_text, "json": emit_json, "dot": emit_dot}


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="aam",
        description="Run abstract machines and the analyses derived from them.",
    )
    p.add_argument("machine", choices=ALL_MACHINES, metavar="machine")
    p.add_argument("file", help="program file")
    p.add_argument("--k", type=int, default=None, metavar="N", help="contour depth")
    p.add_argument("--widen", action="store_true", help="single global store")
    p.add_argument("--gc", action="store_true", help="collect between steps")
    p.add_argument("--fuel", type=int, default=None, metavar="N", help="step budget (concrete)")
    p.add_argument("--format", choices=("text", "json", "dot"), default="text")
    p.add_argument("--annotate", default=None, metavar="p,q,...", help="wrap lambda bodies in frames")
    return p


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        text = Path(args.file).read_text()
    except OSError as ex:
        print(f"error: {ex}", file=sys.stderr)
        return 2
    try:
        program = parse_program(text)
    except ParseError as ex:
        print(f"parse error: {ex}", file=sys.stderr)
        return 1
    try:
        model, code = _dispatch(args, program)
    except (ConfigError, FeatureError, ValueError) as ex:
        print(f"config error: {ex}", file=sys.stderr)
        return 2
    print(EMITTERS[args.format](model))
    return code


def main(argv=None) -> None:
    raise SystemExit(run(argv))


if __name__ == "__main__":
    main()
