"""Reverse-mode differentiation over the graph recorded by ``reafuse.tensor``.

Ops record themselves onto their output tensors at execution time; ``Tape``
collects the records reachable from a loss, ordered by the monotone sequence
number each tensor receives at construction.  ``backward`` replays a finished
tape strictly in reverse execution order, accumulating gradients by summation,
and ``gradcheck`` compares those gradients against central finite differences
on randomly sampled coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from . import tensor as T
from .tensor import Rng, Tensor

__all__ = ["Tape", "backward", "grad_and_value", "gradcheck", "GradcheckReport"]


@dataclass
class Tape:
    """Ordered record of the ops a loss depends on.

    ``nodes`` holds every op-produced tensor reachable from ``root`` through
    parent links, in ascending execution order.  Parents always execute
    before children, so walking ``nodes`` backwards is a valid reverse
    topological order.
    """

    root: Tensor
    nodes: list[Tensor]

    @classmethod
    def trace(cls, root: Tensor) -> "Tape":
        seen: set[int] = set()
        nodes: list[Tensor] = []
        stack = [root]
        while stack:
            t = stack.pop()
            if id(t) in seen or t.backward_fn is None:
                continue
            seen.add(id(t))
            nodes.append(t)
            stack.extend(t.parents)
        nodes.sort(key=lambda t: t.seq)
        return cls(root=root, nodes=nodes)


def backward(
    loss: Tensor,
    tape: Tape | None = None,
    wrt: Iterable[Tensor] | None = None,
) -> dict[int, np.ndarray]:
    """Gradients of a scalar ``loss`` with respect to every reachable tensor.

    Returns a dict keyed by ``id(tensor)``; look up with ``grads[id(param)]``.
    Tensors the loss does not depend on are absent unless listed in ``wrt``,
    in which case they get zeros so callers can iterate uniformly.  ``tape``
    defaults to a fresh trace of ``loss``; passing one in is only useful to
    reuse or inspect the record.
    """
    if loss.data.size != 1:
        raise T.ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    if tape is None:
        tape = Tape.trace(loss)
    elif tape.root is not loss:
        raise ValueError("backward: tape was recorded for a different loss")

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = grads.get(id(node))
        if g is None:  # on the tape but off this loss's path (shared subgraphs)
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            pid = id(parent)
            if pid in grads:
                grads[pid] = grads[pid] + pg
            else:
                grads[pid] = pg

    if wrt is not None:
        for t in wrt:
            grads.setdefault(id(t), np.zeros_like(t.data))
    return grads


def grad_and_value(fn: Callable[[], Tensor], wrt: Iterable[Tensor]) -> tuple[dict[int, np.ndarray], float]:
    """Evaluate ``fn`` and return (gradients for ``wrt``, loss value)."""
    wrt = list(wrt)
    loss = fn()
    return backward(loss, wrt=wrt), loss.item()


@dataclass
class GradcheckReport:
    """Outcome of one finite-difference check."""

    passed: bool
    max_rel_error: float
    checked: int
    skipped_kinks: int
    worst: tuple[str, tuple[int, ...]] | None = None
    failures: list[str] = field(default_factory=list)

    def __str__(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (
            f"gradcheck {status}: max rel err {self.max_rel_error:.3e} over "
            f"{self.checked} coords ({self.skipped_kinks} near-kink skipped)"
        )


def _crosses_kink(plus_trace: list[np.ndarray], minus_trace: list[np.ndarray], window: float) -> bool:
    """True when the +h/-h evaluations disagree about any relu's active set.

    A central difference straddling a relu kink measures the slope of neither
    branch; those coordinates are excluded rather than failed.  Requires both
    a sign flip and proximity to zero, so activation changes far from the
    kink (which would indicate a real bug) still count as errors.
    """
    if len(plus_trace) != len(minus_trace):
        return True  # control flow changed between evaluations; unreliable
    for p, m in zip(plus_trace, minus_trace):
        if p.shape != m.shape:
            return True
        flipped = (p > 0.0) != (m > 0.0)
        near = np.minimum(np.abs(p), np.abs(m)) < window
        if np.any(flipped & near):
            return True
    return False


def gradcheck(
    fn: Callable[[], Tensor],
    wrt: Iterable[Tensor],
    rng: Rng,
    h: float = 1e-5,
    tol: float = 1e-6,
    max_coords: int = 50,
    kink_window: float = 1e-6,
) -> GradcheckReport:
    """Compare analytic gradients of scalar ``fn()`` with central differences.

    ``fn`` must be a closure over the tensors in ``wrt`` (it is re-evaluated
    with perturbed parameter values).  Per tensor, at most ``max_coords``
    coordinates are sampled.  Relative error is
    ``|a - n| / max(|a|, |n|, 1)`` so near-zero gradients are judged on
    absolute scale.
    """
    if not 1e-7 <= h <= 1e-3:
        raise ValueError(f"gradcheck: step h={h} outside [1e-7, 1e-3]")
    wrt = list(wrt)
    analytic = backward(fn(), wrt=wrt)

    report = GradcheckReport(passed=True, max_rel_error=0.0, checked=0, skipped_kinks=0)

    for t_index, t in enumerate(wrt):
        a = analytic[id(t)]
        n_coords = min(max_coords, t.size)
        flat_ids = rng.choice(t.size, n_coords) if t.size > n_coords else np.arange(t.size)
        flat = t.data.reshape(-1)
        for fi in flat_ids:
            fi = int(fi)
            original = flat[fi]
            try:
                flat[fi] = original + h
                plus_trace: list[np.ndarray] = []
                T._RELU_TRACE = plus_trace
                f_plus = fn().item()
                flat[fi] = original - h
                minus_trace: list[np.ndarray] = []
                T._RELU_TRACE = minus_trace
                f_minus = fn().item()
            finally:
                T._RELU_TRACE = None
                flat[fi] = original

            if not np.isfinite(f_plus) or not np.isfinite(f_minus):
                raise FloatingPointError(
                    f"gradcheck: non-finite loss at wrt[{t_index}] flat coord {fi}"
                )
            if _crosses_kink(plus_trace, minus_trace, kink_window):
                report.skipped_kinks += 1
                continue

            numeric = (f_plus - f_minus) / (2.0 * h)
            a_val = float(a.reshape(-1)[fi])
            rel = abs(a_val - numeric) / max(abs(a_val), abs(numeric), 1.0)
            report.checked += 1
            coord = tuple(int(c) for c in np.unravel_index(fi, t.shape or (1,)))
            if rel > report.max_rel_error:
                report.max_rel_error = rel
                report.worst = (f"wrt[{t_index}]", coord)
            if rel > tol:
                report.passed = False
                report.failures.append(
                    f"wrt[{t_index}] coord {coord}: analytic {a_val:.9e}, "
                    f"numeric {numeric:.9e}, rel {rel:.3e}"
                )
    return report
