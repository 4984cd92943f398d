"""
Hierarchical wall-clock timers for the expensive parts of a run.

    @timed
    def build(...):
        ...

    with hierarchical_timer("sweep"):
        build(...)

produces a tree ``root -> sweep -> build`` with total seconds and call counts
per node. Each thread keeps its own stack, so sweep workers never contend;
the runner merges worker trees into the main one and dumps the result to
``timers.json`` next to (never inside) the deterministic result documents.
"""

import math
import sys
import threading
import time
from contextlib import contextmanager
from typing import Any, Callable, Dict, Generator, Optional, TypeVar

TIMER_FORMAT_VERSION = "0.1.0"


class TimerNode:
    """
    Time spent in one named block, plus its nested blocks.
    """

    __slots__ = ["children", "total", "count", "is_parallel"]

    def __init__(self) -> None:
        self.children: Dict[str, "TimerNode"] = {}
        self.total: float = 0.0
        self.count: int = 0
        self.is_parallel = False

    def get_child(self, name: str) -> "TimerNode":
        if name not in self.children:
            self.children[name] = TimerNode()
        return self.children[name]

    def add_time(self, elapsed: float) -> None:
        self.total += elapsed
        self.count += 1

    def merge(self, other: "TimerNode", root_name: Optional[str] = None) -> None:
        """
        Fold another tree (typically from a worker thread) into this one.
        Merged blocks are flagged as parallel since their totals overlap.
        """
        node = self.get_child(root_name) if root_name else self
        node.total += other.total
        node.count += other.count
        node.is_parallel = True
        for child_name, child in other.children.items():
            node.get_child(child_name).merge(child)


class GaugeNode:
    """
    Last, min and max of a scalar metric reported during the run.
    """

    __slots__ = ["value", "min_value", "max_value", "count"]

    def __init__(self, value: float):
        self.value = value
        self.min_value = value
        self.max_value = value
        self.count = 1

    def update(self, new_value: float) -> None:
        self.value = new_value
        self.min_value = min(self.min_value, new_value)
        self.max_value = max(self.max_value, new_value)
        self.count += 1

    def as_dict(self) -> Dict[str, float]:
        return {
            "value": self.value,
            "min": self.min_value,
            "max": self.max_value,
            "count": self.count,
        }


class TimerStack:
    """
    The open timer blocks of one thread. Use hierarchical_timer() rather than
    push()/pop() directly so that they always pair up.
    """

    __slots__ = ["root", "stack", "start_time", "gauges", "metadata"]

    def __init__(self) -> None:
        self.reset()

    def reset(self) -> None:
        self.root = TimerNode()
        self.stack = [self.root]
        self.start_time = time.perf_counter()
        self.gauges: Dict[str, GaugeNode] = {}
        self.metadata: Dict[str, str] = {
            "timer_format_version": TIMER_FORMAT_VERSION,
            "start_time_seconds": str(int(time.time())),
            "python_version": sys.version,
            "command_line_arguments": " ".join(sys.argv),
        }

    def push(self, name: str) -> TimerNode:
        node = self.stack[-1].get_child(name)
        self.stack.append(node)
        return node

    def pop(self) -> None:
        self.stack.pop()

    def set_gauge(self, name: str, value: float) -> None:
        if math.isnan(value):
            return
        if name in self.gauges:
            self.gauges[name].update(value)
        else:
            self.gauges[name] = GaugeNode(value)

    def get_timing_tree(self, node: Optional[TimerNode] = None) -> Dict[str, Any]:
        res: Dict[str, Any] = {}
        if node is None:
            node = self.root
            node.total = time.perf_counter() - self.start_time
            node.count = 1
            res["name"] = "root"
            if self.gauges:
                res["gauges"] = {k: g.as_dict() for k, g in self.gauges.items()}
            res["metadata"] = dict(
                self.metadata, end_time_seconds=str(int(time.time()))
            )

        res["total"] = node.total
        res["count"] = node.count
        if node.is_parallel:
            res["is_parallel"] = True

        children = {k: self.get_timing_tree(c) for k, c in node.children.items()}
        # "self" is the time not attributed to any nested block.
        res["self"] = max(0.0, node.total - sum(c["total"] for c in children.values()))
        if children:
            res["children"] = children
        return res


_thread_timer_stacks: Dict[int, TimerStack] = {}


def _get_thread_timer() -> TimerStack:
    ident = threading.get_ident()
    if ident not in _thread_timer_stacks:
        _thread_timer_stacks[ident] = TimerStack()
    return _thread_timer_stacks[ident]


@contextmanager
def hierarchical_timer(
    name: str, timer_stack: Optional[TimerStack] = None
) -> Generator[TimerNode, None, None]:
    """
    Time the enclosed block under ``name``, nested inside whatever block is
    currently open on this thread.
    """
    timer_stack = timer_stack or _get_thread_timer()
    timer_node = timer_stack.push(name)
    start_time = time.perf_counter()
    try:
        yield timer_node
    finally:
        timer_node.add_time(time.perf_counter() - start_time)
        timer_stack.pop()


FuncT = TypeVar("FuncT", bound=Callable[..., Any])


def timed(func: FuncT) -> FuncT:
    """
    Decorator timing every call under the function's qualified name.
    """

    def wrapped(*args, **kwargs):
        with hierarchical_timer(func.__qualname__):
            return func(*args, **kwargs)

    wrapped.__doc__ = func.__doc__
    wrapped.__name__ = func.__name__
    wrapped.__qualname__ = func.__qualname__
    return wrapped  # type: ignore


def set_gauge(name: str, value: float, timer_stack: Optional[TimerStack] = None) -> None:
    (timer_stack or _get_thread_timer()).set_gauge(name, value)


def merge_thread_timers(timer_stack: Optional[TimerStack] = None) -> None:
    """
    Fold every other thread's timers and gauges into ``timer_stack`` (the
    calling thread's by default), then drop the merged stacks.
    """
    target = timer_stack or _get_thread_timer()
    for ident, other in list(_thread_timer_stacks.items()):
        if other is target:
            continue
        for child_name, child in other.root.children.items():
            target.root.get_child(child_name).merge(child)
        for gauge_name, gauge in other.gauges.items():
            if gauge_name in target.gauges:
                target.gauges[gauge_name].update(gauge.value)
            else:
                target.gauges[gauge_name] = gauge
        del _thread_timer_stacks[ident]


def get_timer_tree(timer_stack: Optional[TimerStack] = None) -> Dict[str, Any]:
    return (timer_stack or _get_thread_timer()).get_timing_tree()


def reset_timers(timer_stack: Optional[TimerStack] = None) -> None:
    (timer_stack or _get_thread_timer()).reset()
