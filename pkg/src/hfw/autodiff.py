"""Tape-based reverse-mode automatic differentiation over numpy arrays.

A Tape records every primitive applied to tracked values (Vars) in execution
order, which is a topological order by construction. backward() walks the
entries once in reverse and accumulates gradients for trainable leaves.
Values that never touch a Var (e.g. frozen-encoder activations computed on
plain arrays) are ordinary numpy data and cost the tape nothing.

Gradients flow *through* non-trainable inputs: a convolution whose weights
are plain arrays still propagates a gradient to its tracked input, it just
never produces a weight gradient.
"""

from __future__ import annotations

import numpy as np


class Var:
    """A tensor tracked on a tape.

    data is always a numpy array (possibly 0-d for scalars). requires_grad
    marks values that need a gradient themselves or lie on a path to one.
    """

    __slots__ = ("data", "tape", "id", "requires_grad")

    def __init__(self, data, tape, node_id, requires_grad):
        self.data = data
        self.tape = tape
        self.id = node_id
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return "Var(id=%d, shape=%s, requires_grad=%s)" % (
            self.id, self.data.shape, self.requires_grad)


class _Entry:
    __slots__ = ("tag", "slot_ids", "slot_vals", "needs", "out_id", "out_val",
                 "fwd", "bwd")

    def __init__(self, tag, slot_ids, slot_vals, needs, out_id, out_val, fwd, bwd):
        self.tag = tag
        self.slot_ids = slot_ids
        self.slot_vals = slot_vals
        self.needs = needs
        self.out_id = out_id
        self.out_val = out_val
        self.fwd = fwd
        self.bwd = bwd


class Tape:
    """Execution trace of primitive operations.

    entries are appended in execution order; every entry's inputs are either
    leaves or outputs of earlier entries, so the list is already a valid
    topological order for the reverse sweep.
    """

    def __init__(self):
        self.entries = []
        self.trainable = []
        self._leaf_vals = {}
        self._next_id = 0

    def _fresh_id(self):
        i = self._next_id
        self._next_id += 1
        return i

    def leaf(self, value, trainable=False):
        """Register an input value. Trainable leaves receive gradients."""
        data = np.asarray(value)
        v = Var(data, self, self._fresh_id(), bool(trainable))
        self._leaf_vals[v.id] = data
        if trainable:
            self.trainable.append(v)
        return v

    def record(self, tag, slots, out_val, fwd, bwd):
        """Append one primitive application.

        slots: sequence of Var or plain ndarray inputs, in the op's slot
        order. fwd(vals) must recompute out_val from the slot values alone
        (op parameters are closed over). bwd(grad, vals, out, needs) returns
        one gradient per slot, None where needs[i] is False.
        """
        slot_ids = []
        slot_vals = []
        needs = []
        requires = False
        for s in slots:
            if isinstance(s, Var):
                if s.tape is not self:
                    raise ValueError("input Var belongs to a different tape")
                if s.id >= self._next_id:
                    raise ValueError("tape entries out of order")
                slot_ids.append(s.id)
                slot_vals.append(s.data)
                needs.append(s.requires_grad)
                requires = requires or s.requires_grad
            else:
                slot_ids.append(None)
                slot_vals.append(s)
                needs.append(False)
        out = Var(out_val, self, self._fresh_id(), requires)
        self.entries.append(_Entry(tag, tuple(slot_ids), slot_vals,
                                   tuple(needs), out.id, out_val, fwd, bwd))
        return out

    def replay(self):
        """Recompute every entry from leaf values.

        Returns True when every recomputed output is bitwise identical to
        the recorded one after clearing, False otherwise.
        """
        values = dict(self._leaf_vals)
        ok = True
        for e in self.entries:
            vals = [values[i] if i is not None else v
                    for i, v in zip(e.slot_ids, e.slot_vals)]
            out = e.fwd(vals)
            rec = e.out_val
            if (out.dtype != rec.dtype or out.shape != rec.shape
                    or out.tobytes() != rec.tobytes()):
                ok = False
            values[e.out_id] = out
        return ok


def apply_op(tag, slots, fwd, bwd):
    """Run a primitive, recording it when any input is tracked.

    slots may mix Vars and plain arrays; with no Var present the op runs as
    plain numpy and returns an ndarray. All Var slots must share one tape.
    """
    tape = None
    vals = []
    for s in slots:
        if isinstance(s, Var):
            if tape is None:
                tape = s.tape
            elif s.tape is not tape:
                raise ValueError("inputs of %r live on different tapes" % tag)
            vals.append(s.data)
        else:
            vals.append(s)
    out = fwd(vals)
    if tape is None:
        return out
    return tape.record(tag, slots, out, fwd, bwd)


def backward(tape, loss):
    """Reverse sweep from a scalar loss.

    Returns a dict mapping trainable-leaf node id to its gradient (zeros for
    trainable leaves the loss never touched).
    """
    if not isinstance(loss, Var):
        raise ValueError("loss must be a Var, got %r" % type(loss).__name__)
    if loss.tape is not tape:
        raise ValueError("loss was recorded on a different tape")
    if loss.data.shape != ():
        raise ValueError("loss must be scalar, got shape %s" % (loss.data.shape,))
    grads = {loss.id: np.asarray(1.0, dtype=loss.data.dtype)}
    for e in reversed(tape.entries):
        g = grads.pop(e.out_id, None)
        if g is None or not any(e.needs):
            continue
        slot_grads = e.bwd(g, e.slot_vals, e.out_val, e.needs)
        for sid, gi, need in zip(e.slot_ids, slot_grads, e.needs):
            if not need or gi is None:
                continue
            acc = grads.get(sid)
            grads[sid] = gi if acc is None else acc + gi
    out = {}
    for v in tape.trainable:
        g = grads.get(v.id)
        out[v.id] = np.zeros_like(v.data) if g is None else g
    return out
