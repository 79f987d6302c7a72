"""Behaviour execution: process instances, routing, and the interpreter.

A runtime hosts one program. Messages delivered to it are routed by
correlation value to a live instance, or spawn a fresh instance when
they hit a start operation (the first input of ``main``). Each instance
executes the behaviour tree as its own task with private state; the
``global`` tree and the correlation table are the only shared
structures, and both are only touched between await points, so every
check-and-act on them is atomic under the event loop.
"""

from __future__ import annotations

import asyncio
import logging
from typing import Optional

from . import correlation, model, types, values
from .correlation import CorrelationTable, START_NEW
from .errors import (
    FAULT_CALL_DEPTH, FAULT_CORRELATION, FAULT_CSET_REASSIGN, FAULT_DIV_ZERO,
    FAULT_OVERFLOW, FAULT_TYPE_MISMATCH, JoltFault, StartupError,
)
from .messages import Message, ONEWAY, ReplyHandle, RR
from .model import (
    AliasOf, Assign, Binary, Call, DeepCopy, For, ForEachChild, Fresh, If,
    Increment, InputChoice, Lit, Notify, NullProcess, ParallelNode, PathExpr,
    PostIncrement, ProvideUntil, Receive, ReceiveReply, Sequence, Solicit,
    Throw, TreeLit, Unary, VectorSize, While,
)
from .values import Segment, Value

log = logging.getLogger("jolt.engine")

MAX_CALL_DEPTH = 1024
_MATERIALIZE_CAP = 64

LOCAL, GLOBAL, CSETS = "local", "global", "csets"


class Timer:
    """Clock abstraction so tests can drive timeouts deterministically."""

    async def sleep(self, seconds: float) -> None:
        await asyncio.sleep(seconds)

    def time(self) -> float:
        return asyncio.get_running_loop().time()


class ManualTimer(Timer):
    """A timer that only advances when told to."""

    def __init__(self):
        self._now = 0.0
        self._sleepers: list[tuple[float, asyncio.Future]] = []

    async def sleep(self, seconds: float) -> None:
        if seconds <= 0:
            return
        fut = asyncio.get_running_loop().create_future()
        self._sleepers.append((self._now + seconds, fut))
        await fut

    def time(self) -> float:
        return self._now

    async def advance(self, seconds: float) -> None:
        self._now += seconds
        due = [f for when, f in self._sleepers if when <= self._now]
        self._sleepers = [(w, f) for w, f in self._sleepers if w > self._now]
        for fut in due:
            if not fut.done():
                fut.set_result(None)
        # let woken tasks run
        for _ in range(10):
            await asyncio.sleep(0)


class ProcessInstance:
    """A running copy of the behaviour with private state and a mailbox."""

    def __init__(self, runtime: "Runtime", iid: int):
        self.runtime = runtime
        self.id = iid
        self.state = Value()
        self.aliases: dict = {}
        self.cset_values: dict[str, Value] = {}
        self.mailbox: list[Message] = []
        self.waiters: list[tuple[set, asyncio.Future]] = []
        self.open_replies: list[tuple[ReplyHandle, Optional[types.TypeDef]]] = []
        self.status = "running"
        self.task: Optional[asyncio.Task] = None

    @property
    def waiting_ops(self) -> set:
        out = set()
        for ops, fut in self.waiters:
            if not fut.done():
                out |= ops
        return out

    def push(self, msg: Message) -> None:
        for ops, fut in self.waiters:
            if msg.operation in ops and not fut.done():
                fut.set_result(msg)
                return
        self.mailbox.append(msg)

    async def receive(self, ops: set) -> Message:
        for i, msg in enumerate(self.mailbox):
            if msg.operation in ops:
                return self.mailbox.pop(i)
        fut = asyncio.get_running_loop().create_future()
        entry = (ops, fut)
        self.waiters.append(entry)
        self.status = ("waiting", frozenset(ops))
        try:
            return await fut
        finally:
            if entry in self.waiters:
                self.waiters.remove(entry)
            self.status = "running"

    def state_reader(self):
        def read(names: tuple) -> Value:
            p = values.path(*names)
            node = values.get_existing(self.state, p)
            return node.clone() if node is not None else Value()
        return read


def _num(v: Value):
    if v.kind == values.VOID:
        return 0, values.INT
    if v.kind in (values.INT, values.LONG, values.DOUBLE):
        return v.content, v.kind
    if v.kind == values.BOOL:
        return (1 if v.content else 0), values.INT
    raise JoltFault(FAULT_TYPE_MISMATCH,
                    message=f"cannot use {v.kind} value in arithmetic")


def _fit(n, kind_a: str, kind_b: str) -> Value:
    if values.DOUBLE in (kind_a, kind_b):
        return Value(values.DOUBLE, float(n))
    if values.LONG in (kind_a, kind_b):
        if not values.fits_long(n):
            raise JoltFault(FAULT_OVERFLOW, message=f"long overflow: {n}")
        return Value(values.LONG, n)
    if not values.fits_int(n):
        raise JoltFault(FAULT_OVERFLOW, message=f"int overflow: {n}")
    return Value(values.INT, n)


def _trunc_div(a, b):
    q = abs(a) // abs(b)
    return q if (a < 0) == (b < 0) else -q


def arith(op: str, left: Value, right: Value) -> Value:
    if op == "+" and (left.kind == values.STRING or right.kind == values.STRING):
        return Value(values.STRING,
                     values.to_plain_string(left) + values.to_plain_string(right))
    a, ka = _num(left)
    b, kb = _num(right)
    if op == "+":
        return _fit(a + b, ka, kb)
    if op == "-":
        return _fit(a - b, ka, kb)
    if op == "*":
        return _fit(a * b, ka, kb)
    if op == "/":
        if values.DOUBLE in (ka, kb):
            if b == 0:
                raise JoltFault(FAULT_DIV_ZERO)
            return Value(values.DOUBLE, a / b)
        if b == 0:
            raise JoltFault(FAULT_DIV_ZERO)
        return _fit(_trunc_div(a, b), ka, kb)
    if op == "%":
        if b == 0:
            raise JoltFault(FAULT_DIV_ZERO)
        if values.DOUBLE in (ka, kb):
            import math
            return Value(values.DOUBLE, math.fmod(a, b))
        return _fit(a - _trunc_div(a, b) * b, ka, kb)
    raise ValueError(op)


_NUMERIC = (values.INT, values.LONG, values.DOUBLE)


def compare_eq(left: Value, right: Value) -> bool:
    if left.kind in _NUMERIC and right.kind in _NUMERIC:
        return left.content == right.content
    if left.kind != right.kind:
        return False
    if left.kind == values.VOID:
        return True
    return left.content == right.content


def compare_order(op: str, left: Value, right: Value) -> bool:
    if left.kind in _NUMERIC and right.kind in _NUMERIC:
        a, b = left.content, right.content
    elif left.kind == values.STRING and right.kind == values.STRING:
        a, b = left.content, right.content
    else:
        raise JoltFault(FAULT_TYPE_MISMATCH,
                        message=f"cannot order {left.kind} and {right.kind}")
    return {"<": a < b, "<=": a <= b, ">": a > b, ">=": a >= b}[op]


class Executor:
    """Interprets one instance's behaviour tree."""

    def __init__(self, runtime: "Runtime", inst: ProcessInstance):
        self.runtime = runtime
        self.inst = inst
        self.call_depth = 0

    # -- paths -----------------------------------------------------------

    def concrete_path(self, pe: PathExpr) -> tuple:
        segs = []
        for seg in pe.segments:
            name = seg.name
            if name is None:
                name = values.to_plain_string(self.eval(seg.name_expr))
            index = 0
            if seg.index_expr is not None:
                index = self._as_index(self.eval(seg.index_expr))
            segs.append(Segment(name, index))
        return tuple(segs)

    def _as_index(self, v: Value) -> int:
        if v.kind == values.VOID:
            return 0
        if v.kind in (values.INT, values.LONG):
            n = v.content
        elif v.kind == values.DOUBLE and float(v.content).is_integer():
            n = int(v.content)
        elif v.kind == values.STRING:
            try:
                n = int(v.content)
            except ValueError:
                raise JoltFault(FAULT_TYPE_MISMATCH,
                                message=f"bad vector index {v.content!r}") from None
        else:
            raise JoltFault(FAULT_TYPE_MISMATCH,
                            message=f"bad vector index of kind {v.kind}")
        if n < 0:
            raise JoltFault(FAULT_TYPE_MISMATCH, message="negative vector index")
        return n

    def resolve(self, pe: PathExpr) -> tuple[str, tuple]:
        """(root kind, concrete path) after alias rewriting."""
        p = values.resolve_alias(self.inst.aliases, self.concrete_path(pe))
        root = p[0].name
        if root == GLOBAL:
            return GLOBAL, p[1:]
        if root == CSETS:
            return CSETS, p[1:]
        return LOCAL, p

    def _tree_for(self, root: str) -> Value:
        return self.runtime.global_root if root == GLOBAL else self.inst.state

    def read_node(self, pe: PathExpr) -> Value:
        root, p = self.resolve(pe)
        if root == CSETS:
            if len(p) != 1:
                raise JoltFault(FAULT_TYPE_MISMATCH,
                                message="correlation variables are scalars")
            stored = self.inst.cset_values.get(p[0].name)
            return stored.clone() if stored is not None else Value()
        return self._read_concrete(root, p)

    def _read_concrete(self, root: str, p: tuple, depth: int = 0) -> Value:
        node = values.get(self._tree_for(root), p)
        full = (Segment(GLOBAL),) + p if root == GLOBAL else p
        extensions = [
            frm for frm in self.inst.aliases
            if len(frm) > len(full) and frm[:len(full)] == full
        ]
        if not extensions:
            return node
        if depth > _MATERIALIZE_CAP:
            raise JoltFault(FAULT_TYPE_MISMATCH, message="alias materialization too deep")
        out = node.clone()
        for frm in extensions:
            # an alias binds a whole child vector; splice every element
            resolved = values.resolve_alias(self.inst.aliases, frm)
            troot, tp = self._split_root(resolved)
            count = values.vector_size(self._tree_for(troot), tp)
            elements = [
                self._read_concrete(troot, tp[:-1] + (Segment(tp[-1].name, i),),
                                    depth + 1)
                for i in range(count)
            ]
            rel = frm[len(full):]
            holder = values.ensure(out, rel[:-1]) if len(rel) > 1 else out
            if elements:
                holder.children[rel[-1].name] = [el.clone() for el in elements]
            else:
                holder.children.pop(rel[-1].name, None)
        return out

    @staticmethod
    def _split_root(p: tuple) -> tuple[str, tuple]:
        if p and p[0].name == GLOBAL:
            return GLOBAL, p[1:]
        return LOCAL, p

    # -- expressions (synchronous: no await between read and write) -------

    def eval(self, e) -> Value:
        if isinstance(e, Lit):
            return e.value
        if isinstance(e, PathExpr):
            return self.read_node(e)
        if isinstance(e, Fresh):
            return correlation.fresh()
        if isinstance(e, VectorSize):
            root, p = self.resolve(e.path)
            if root == CSETS:
                return Value.of(1 if p and p[0].name in self.inst.cset_values else 0)
            return Value.of(values.vector_size(self._tree_for(root), p))
        if isinstance(e, Unary):
            v = self.eval(e.operand)
            if e.op == "!":
                return Value(values.BOOL, not values.truthy(v))
            n, kind = _num(v)
            return _fit(-n, kind, kind)
        if isinstance(e, Binary):
            if e.op == "&&":
                return Value(values.BOOL,
                             values.truthy(self.eval(e.left))
                             and values.truthy(self.eval(e.right)))
            if e.op == "||":
                return Value(values.BOOL,
                             values.truthy(self.eval(e.left))
                             or values.truthy(self.eval(e.right)))
            left = self.eval(e.left)
            right = self.eval(e.right)
            if e.op == "==":
                return Value(values.BOOL, compare_eq(left, right))
            if e.op == "!=":
                return Value(values.BOOL, not compare_eq(left, right))
            if e.op in ("<", "<=", ">", ">="):
                return Value(values.BOOL, compare_order(e.op, left, right))
            return arith(e.op, left, right)
        if isinstance(e, PostIncrement):
            return self._increment(e.path, e.delta)
        if isinstance(e, TreeLit):
            root = self.eval(e.root) if e.root is not None else Value()
            out = Value(root.kind, root.content)
            for segs, expr in e.entries:
                p = self.concrete_path(PathExpr(segs))
                v = self.eval(expr)
                values.set_scalar(out, p, v.kind, v.content)
            return out
        raise ValueError(f"cannot evaluate {e!r}")

    def _increment(self, pe: PathExpr, delta: int) -> Value:
        root, p = self.resolve(pe)
        if root == CSETS:
            raise JoltFault(FAULT_CSET_REASSIGN,
                            message="cannot increment a correlation variable")
        node = values.ensure(self._tree_for(root), p)
        old = Value(node.kind, node.content)
        n, kind = _num(old)
        updated = _fit(n + delta, kind, kind)
        node.set_scalar(updated.kind, updated.content)
        if old.kind == values.VOID:
            return Value(values.INT, 0)
        return old

    # -- writes ------------------------------------------------------------

    def write_scalar(self, pe: PathExpr, v: Value) -> None:
        root, p = self.resolve(pe)
        if root == CSETS:
            if len(p) != 1:
                raise JoltFault(FAULT_TYPE_MISMATCH,
                                message="correlation variables are scalars")
            self.runtime.bind_cset_value(self.inst, p[0].name,
                                         Value(v.kind, v.content))
            return
        values.set_scalar(self._tree_for(root), p, v.kind, v.content)

    def write_tree(self, pe: PathExpr, v: Value) -> None:
        root, p = self.resolve(pe)
        if root == CSETS:
            self.write_scalar(pe, v)
            return
        values.deep_copy(self._tree_for(root), p, v)

    # -- statements ---------------------------------------------------------

    async def exec(self, node) -> None:
        if isinstance(node, NullProcess):
            return
        if isinstance(node, Sequence):
            for item in node.items:
                await self.exec(item)
            return
        if isinstance(node, ParallelNode):
            await self._exec_parallel(node.arms)
            return
        if isinstance(node, Assign):
            self.write_scalar(node.path, self.eval(node.expr))
            return
        if isinstance(node, DeepCopy):
            self.write_tree(node.path, self.eval(node.expr))
            return
        if isinstance(node, AliasOf):
            frm = values.alias_key(self.concrete_path(node.path))
            # resolve the target through aliases that exist right now, so
            # self-referential re-aliasing (cur -> cur.next) walks forward
            tgt = values.resolve_alias(self.inst.aliases,
                                       self.concrete_path(node.target))
            self.inst.aliases[frm] = tgt
            return
        if isinstance(node, Increment):
            self._increment(node.path, node.delta)
            return
        if isinstance(node, If):
            if values.truthy(self.eval(node.condition)):
                await self.exec(node.then)
            elif node.orelse is not None:
                await self.exec(node.orelse)
            return
        if isinstance(node, While):
            while values.truthy(self.eval(node.condition)):
                await self.exec(node.body)
            return
        if isinstance(node, For):
            await self.exec(node.init)
            while values.truthy(self.eval(node.condition)):
                await self.exec(node.body)
                await self.exec(node.post)
            return
        if isinstance(node, ForEachChild):
            root, p = self.resolve(node.source)
            source = values.get(self._tree_for(root), p)
            for name in list(source.children.keys()):
                self.write_scalar(PathExpr([model.PathSegment(name=node.var)]),
                                  Value(values.STRING, name))
                await self.exec(node.body)
            return
        if isinstance(node, Throw):
            payload = self.eval(node.arg).clone() if node.arg is not None else None
            raise JoltFault(node.fault, payload)
        if isinstance(node, Call):
            body = self.runtime.program.procedures[node.procedure]
            self.call_depth += 1
            limit = getattr(self.runtime, "max_call_depth", MAX_CALL_DEPTH)
            if self.call_depth > limit:
                raise JoltFault(FAULT_CALL_DEPTH,
                                message=f"procedure depth over {limit}")
            try:
                await self.exec(body)
            finally:
                self.call_depth -= 1
            return
        if isinstance(node, (Receive, ReceiveReply)):
            await self._input_choice([(node, NullProcess())])
            return
        if isinstance(node, InputChoice):
            await self._input_choice(node.branches)
            return
        if isinstance(node, ProvideUntil):
            n_provide = len(node.provide)
            while True:
                chosen = await self._input_choice(node.provide + node.until)
                if chosen >= n_provide:
                    return
        if isinstance(node, Notify):
            arg = self.eval(node.arg).clone() if node.arg is not None else Value()
            await self.runtime.invoke_output(node.port, node.operation, arg,
                                             ONEWAY, self.inst)
            return
        if isinstance(node, Solicit):
            arg = self.eval(node.arg).clone() if node.arg is not None else Value()
            result = await self.runtime.invoke_output(node.port, node.operation,
                                                      arg, RR, self.inst)
            if node.store is not None:
                if self.runtime.is_output_port_name(node.store):
                    self.runtime.rebind_port(node.store.segments[0].name, result)
                else:
                    self.write_tree(node.store, result)
            return
        raise ValueError(f"cannot execute {node!r}")

    async def _exec_parallel(self, arms) -> None:
        tasks = [asyncio.ensure_future(self.exec(arm)) for arm in arms]
        try:
            await asyncio.gather(*tasks)
        except BaseException:
            for t in tasks:
                t.cancel()
            await asyncio.gather(*tasks, return_exceptions=True)
            raise

    async def _input_choice(self, branches) -> int:
        ops = {guard.operation for guard, _ in branches}
        msg = await self.inst.receive(ops)
        index = next(i for i, (guard, _) in enumerate(branches)
                     if guard.operation == msg.operation)
        guard, branch = branches[index]
        if guard.target is not None:
            self.write_tree(guard.target, msg.payload)
        for path_expr, value in msg.meta.var_writes:
            self.write_scalar(path_expr, value)
        if isinstance(guard, ReceiveReply):
            resp_type = self.runtime.response_type(msg.operation)
            entry = (msg.reply, resp_type)
            if msg.reply is not None:
                self.inst.open_replies.append(entry)
            await self.exec(guard.body)
            response = (self.eval(guard.response).clone()
                        if guard.response is not None else Value())
            if resp_type is not None:
                response = types.cast(response, resp_type)
            if msg.reply is not None:
                msg.reply.complete_ok(response, self.inst.state_reader())
                self.inst.open_replies.remove(entry)
        await self.exec(branch)
        return index

    # -- instance lifecycle ---------------------------------------------------

    async def run(self) -> None:
        fault: Optional[JoltFault] = None
        try:
            await self.exec(self.runtime.program.main)
            self.inst.status = "completed"
        except JoltFault as f:
            fault = f
            self.inst.status = ("faulted", f.name)
            if not self.inst.open_replies:
                log.warning("instance %s faulted with %s: %s",
                            self.inst.id, f.name, f)
        except asyncio.CancelledError:
            fault = JoltFault("ServiceShutdown")
            raise
        finally:
            self.runtime.retire_instance(self.inst, fault)


def input_frontier(node, procedures: dict, _seen=None) -> set:
    """Operations that can spawn an instance: the first inputs of main."""
    seen = _seen if _seen is not None else set()
    if isinstance(node, (Receive, ReceiveReply)):
        return {node.operation}
    if isinstance(node, Sequence):
        return input_frontier(node.items[0], procedures, seen) if node.items else set()
    if isinstance(node, ParallelNode):
        out = set()
        for arm in node.arms:
            out |= input_frontier(arm, procedures, seen)
        return out
    if isinstance(node, InputChoice):
        return {guard.operation for guard, _ in node.branches}
    if isinstance(node, ProvideUntil):
        return {guard.operation for guard, _ in node.provide + node.until}
    if isinstance(node, Call):
        if node.procedure in seen:
            return set()
        seen.add(node.procedure)
        return input_frontier(procedures.get(node.procedure), procedures, seen)
    return set()


class Runtime:
    """One deployed program: shared state, routing, ports and instances."""

    def __init__(self, program: model.Program, *, name: str = "",
                 root_dir: str = ".", args=(), timer: Optional[Timer] = None,
                 port_overrides: Optional[dict] = None, debug_http: bool = False,
                 stdout=None, max_call_depth: int = MAX_CALL_DEPTH):
        self.program = program
        self.name = name or program.source_name
        self.root_dir = root_dir
        self.args = tuple(args)
        self.timer = timer or Timer()
        self.port_overrides = dict(port_overrides or {})
        self.debug_http = debug_http
        self.stdout = stdout
        self.max_call_depth = max_call_depth

        self.global_root = Value()
        self.table = CorrelationTable()
        self.instances: dict[int, ProcessInstance] = {}
        self._next_id = 1
        self.start_operations = (input_frontier(program.main, program.procedures)
                                 if program.main else set())
        self.script_mode = not self.start_operations
        self.script_done: Optional[asyncio.Future] = None
        self.script_result: Optional[JoltFault] = None

        self._op_info: dict[str, tuple] = {}
        for port in program.input_ports:
            for iface in program.interfaces_of(port):
                for op in iface.operations():
                    info = (iface.kind_of(op), iface.request_type(op),
                            iface.response_type(op))
                    if op in self._op_info and self._op_info[op] != info:
                        raise StartupError(
                            f"operation {op} deployed with conflicting signatures")
                    self._op_info[op] = info

        self.output_ports: dict[str, object] = {}
        self.listeners: list = []
        self._started = False
        self._background: set[asyncio.Task] = set()

    # -- operation metadata -------------------------------------------------

    def operation_info(self, op: str) -> Optional[tuple]:
        return self._op_info.get(op)

    def response_type(self, op: str) -> Optional[types.TypeDef]:
        info = self._op_info.get(op)
        return info[2] if info else None

    def is_output_port_name(self, pe: PathExpr) -> bool:
        return (len(pe.segments) == 1 and pe.segments[0].name is not None
                and pe.segments[0].index_expr is None
                and pe.segments[0].name in self.output_ports)

    # -- lifecycle ------------------------------------------------------------

    async def start(self) -> None:
        from . import ports as ports_mod

        if self._started:
            return
        self._started = True
        for decl in self.program.output_ports:
            loc = self.port_overrides.get(decl.name, decl.location)
            self.output_ports[decl.name] = ports_mod.OutputPort(self, decl, loc)
        if self.program.init is not None:
            init_inst = ProcessInstance(self, 0)
            init_inst.state.children["args"] = [Value.of(a) for a in self.args] or []
            if not init_inst.state.children["args"]:
                del init_inst.state.children["args"]
            try:
                await Executor(self, init_inst).exec(self.program.init)
            except JoltFault as f:
                raise StartupError(f"init failed with fault {f.name}: {f}") from f
        for decl in self.program.input_ports:
            loc = self.port_overrides.get(decl.name, decl.location)
            listener = ports_mod.Listener(self, decl, loc)
            await listener.start()
            self.listeners.append(listener)
        if self.script_mode and self.program.main is not None:
            self.script_done = asyncio.get_running_loop().create_future()
            inst = self._new_instance()
            inst.task = asyncio.ensure_future(Executor(self, inst).run())

    async def stop(self) -> None:
        for listener in self.listeners:
            await listener.stop()
        self.listeners.clear()
        tasks = [inst.task for inst in list(self.instances.values()) if inst.task]
        for t in tasks:
            t.cancel()
        await asyncio.gather(*tasks, return_exceptions=True)
        for t in list(self._background):
            t.cancel()
        await asyncio.gather(*self._background, return_exceptions=True)
        for port in self.output_ports.values():
            await port.close()
        self._started = False

    async def run_until_script_done(self) -> Optional[JoltFault]:
        if self.script_done is not None:
            await self.script_done
        return self.script_result

    def spawn_background(self, coro) -> asyncio.Task:
        task = asyncio.ensure_future(coro)
        self._background.add(task)
        task.add_done_callback(self._background.discard)
        return task

    # -- instances -------------------------------------------------------------

    def _new_instance(self) -> ProcessInstance:
        inst = ProcessInstance(self, self._next_id)
        self._next_id += 1
        if self.args:
            inst.state.children["args"] = [Value.of(a) for a in self.args]
        self.instances[inst.id] = inst
        return inst

    def retire_instance(self, inst: ProcessInstance, fault: Optional[JoltFault]):
        reader = inst.state_reader()
        for handle, _resp_type in list(inst.open_replies):
            handle.complete_fault(fault or JoltFault("MissingReply"), reader)
        inst.open_replies.clear()
        self.table.release_instance(inst.id)
        self.instances.pop(inst.id, None)
        if self.script_mode and self.script_done is not None \
                and not self.script_done.done():
            self.script_result = fault
            self.script_done.set_result(None)
        pending, inst.mailbox = inst.mailbox, []
        for msg in pending:
            self.deliver(msg)

    # -- correlation -------------------------------------------------------------

    def bind_cset_value(self, inst: ProcessInstance, var: str, v: Value) -> None:
        known = any(var in decl.variables for decl in self.program.csets)
        if not known:
            raise JoltFault(FAULT_CORRELATION,
                            message=f"undeclared correlation variable {var}")
        if var in inst.cset_values:
            raise JoltFault(FAULT_CSET_REASSIGN,
                            message=f"correlation variable {var} is write-once")
        inst.cset_values[var] = v
        for idx, decl in enumerate(self.program.csets):
            if var in decl.variables and all(
                    x in inst.cset_values for x in decl.variables):
                key = tuple(correlation.scalar_key(inst.cset_values[x])
                            for x in decl.variables)
                if not self.table.bind(idx, key, inst.id):
                    raise JoltFault(
                        FAULT_CORRELATION,
                        message="correlation valuation already owned by a live process")

    # -- delivery -------------------------------------------------------------

    def deliver(self, msg: Message) -> str:
        """Route one inbound message; atomic match-or-spawn."""
        if msg.operation not in self._op_info:
            fault = JoltFault("OperationNotFound",
                              Value.of(msg.operation),
                              f"no such operation {msg.operation}")
            if msg.reply is not None:
                msg.reply.complete_fault(fault)
            return "rejected"
        valuations = correlation.extract(msg.operation, msg.payload,
                                         self.program.csets)
        decision, owner = correlation.route(valuations, msg.operation,
                                            self.table, self.start_operations)
        if decision == "deliver":
            self.instances[owner].push(msg)
            return "accepted"
        if decision == START_NEW:
            inst = self._new_instance()
            for idx, valuation in valuations:
                decl = self.program.csets[idx]
                for var in decl.variables:
                    bound = decl.bindings.get((msg.operation, var))
                    node = values.get_existing(msg.payload, values.path(*bound))
                    if var not in inst.cset_values:
                        inst.cset_values[var] = node.clone()
                self.table.bind(idx, valuation, inst.id)
            inst.push(msg)
            inst.task = asyncio.ensure_future(Executor(self, inst).run())
            return "accepted"
        if self.script_mode and self.instances:
            # a single-run service: its one instance owns all inbound traffic
            next(iter(self.instances.values())).push(msg)
            return "accepted"
        fault = JoltFault(FAULT_CORRELATION, Value.of(msg.operation),
                          f"no process correlates with this {msg.operation} message")
        if msg.reply is not None:
            msg.reply.complete_fault(fault)
        else:
            log.info("dropped uncorrelated %s message", msg.operation)
        return "rejected"

    # -- inbound routing (used by listeners) -------------------------------

    def route_operation(self, decl: model.PortDef, op: str):
        """(forward-port or None, kind, request type, response type)."""
        info = self.program.port_operation(decl, op)
        if info is not None:
            return (None,) + info
        for agg_name in decl.aggregates:
            target = self.program.output_port(agg_name)
            if target is None:
                continue
            info = self.program.port_operation(target, op)
            if info is not None:
                return (agg_name,) + info
        return None

    async def forward(self, port_name: str, op: str, payload: Value,
                      kind: str) -> Value:
        """Relay an aggregated message through the named output port."""
        return await self.invoke_output(port_name, op, payload, kind, None)

    # -- outbound --------------------------------------------------------------

    async def invoke_output(self, port_name: str, op: str, arg: Value,
                            kind: str, inst: Optional[ProcessInstance]) -> Value:
        port = self.output_ports.get(port_name)
        if port is None:
            raise JoltFault("PortUnbound",
                            message=f"no output port named {port_name}")
        return await port.invoke(op, arg, kind, inst)

    def rebind_port(self, port_name: str, binding: Value) -> None:
        self.output_ports[port_name].rebind(binding)
