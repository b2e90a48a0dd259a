"""Two-level differentiable architecture search over bimodal fusion graphs.

First level: a DAG whose nodes are tapped modality features followed by
cells; every edge into a cell carries a relaxed Identity/Zero choice
(logits alpha).  Second level: inside each cell, intermediate nodes fuse
two inputs with a relaxed mixture over the candidate binary operations
(logits gamma), and per-slot input wiring is itself a relaxed binary
choice between the cell input node and the previous intermediate node
(logits beta).  In search mode every mixture weight vector is a
Monte Carlo average of K tempered softmaxes at conditionally re-drawn
Gumbel perturbations given a sampled hard outcome; gradients flow to the
logits through the averaged softmax Jacobians with the noise held fixed.
Eval mode replaces all of it with plain softmax probabilities and is
sampling-free.

Bilevel training alternates weight updates (train split) with
architecture updates (validation split); search stops when the Shannon
entropies of the alpha and gamma distributions stabilize.
"""

from __future__ import annotations

import io
import json
import struct
import zipfile
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import kernels, ops, tensor_io
from .autodiff import Tape, Tensor
from .metrics import MetricsReport, classification_report
from .ops import FIRST_LEVEL_OPS, SECOND_LEVEL_OPS, OpInstance, descriptor

CHECKPOINT_VERSION = 1
GENOTYPE_VERSION = 1


class TrainingDivergedError(RuntimeError):
    """Raised when a training step produces a non-finite loss."""


class DegenerateGenotypeError(ValueError):
    """Raised when a derived architecture leaves a cell without inputs."""


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class SearchSpaceConfig:
    n_image_features: int = 2
    n_speech_features: int = 2
    n_cells: int = 2
    nodes_per_cell: int = 2
    lam: float = 0.1
    k_samples: int = 100
    channels: int = 16
    length: int = 8
    tap_seed: int = 1234  # fixed feature-tap projections, shared by search and retrain

    def __post_init__(self):
        counts = (self.n_image_features, self.n_speech_features, self.n_cells, self.nodes_per_cell)
        if min(counts) < 1:
            raise ValueError(f"all topology counts must be >= 1, got {counts}")
        if not self.lam > 0:
            raise ValueError(f"temperature must be positive, got {self.lam}")
        if self.k_samples < 1:
            raise ValueError(f"k_samples must be >= 1, got {self.k_samples}")

    @property
    def n_feature_nodes(self) -> int:
        return self.n_image_features + self.n_speech_features

    @property
    def node_names(self) -> list:
        return (
            [f"I{i + 1}" for i in range(self.n_image_features)]
            + [f"S{i + 1}" for i in range(self.n_speech_features)]
            + [f"Cell{i + 1}" for i in range(self.n_cells)]
        )

    def first_level_edges(self) -> list:
        """(src index, dst index) pairs: every cell sees all its predecessors."""
        edges = []
        for ci in range(self.n_cells):
            dst = self.n_feature_nodes + ci
            for src in range(dst):
                edges.append((src, dst))
        return edges


@dataclass(frozen=True)
class TrainSchedule:
    epochs: int = 100
    batch_size: int = 8
    weight_lr: float = 3e-3
    arch_lr: float = 2e-2
    arch_lr_decay: float = 0.90  # per-epoch exponential decay; 1.0 disables
    weight_decay: float = 1e-3
    entropy_tol: float = 1e-3
    entropy_patience: int = 5

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.entropy_patience < 1:
            raise ValueError("epochs, batch_size and entropy_patience must be positive")
        if self.weight_lr < 0 or self.arch_lr < 0 or self.weight_decay < 0 or self.entropy_tol < 0:
            raise ValueError("rates, decay and tolerance must be non-negative")
        if not 0.0 < self.arch_lr_decay <= 1.0:
            raise ValueError(f"arch_lr_decay must lie in (0, 1], got {self.arch_lr_decay}")


# ---------------------------------------------------------------------------
# state


def make_taps(space: SearchSpaceConfig) -> list:
    """Fixed orthogonal channel projections standing in for backbone stages.

    Tap 0 of each modality is the identity; later taps are seeded orthogonal
    mixings.  Non-learnable, identical for search and retrain.
    """
    rng = np.random.default_rng(space.tap_seed)
    taps = []
    for count in (space.n_image_features, space.n_speech_features):
        for j in range(count):
            if j == 0:
                taps.append(np.eye(space.channels))
            else:
                q, _ = np.linalg.qr(rng.normal(size=(space.channels, space.channels)))
                taps.append(q)
    return taps


class SearchState:
    """All learnable parameters of a search run.

    alpha: (edges, 2) first-level logits over (identity, zero);
    gamma: (cells * nodes, |second-level ops|) operation logits;
    beta:  (cells * nodes * 2 slots, 2) input-wiring logits over
           (cell input node, previous intermediate node);
    omega: every candidate op's weights at every cell node, plus the head.
    """

    def __init__(self, space: SearchSpaceConfig, rng: np.random.Generator):
        self.space = space
        self.alpha = np.zeros((len(space.first_level_edges()), len(FIRST_LEVEL_OPS)))
        self.gamma = np.zeros((space.n_cells * space.nodes_per_cell, len(SECOND_LEVEL_OPS)))
        self.beta = np.zeros((space.n_cells * space.nodes_per_cell * 2, 2))
        self.ops = {}
        for ci in range(space.n_cells):
            for ni in range(space.nodes_per_cell):
                for name in SECOND_LEVEL_OPS:
                    self.ops[(ci, ni, name)] = OpInstance(descriptor(name, space.channels), rng)
        c = space.channels
        self.head_w = rng.uniform(-1.0 / np.sqrt(c), 1.0 / np.sqrt(c), size=(c, 2))
        self.head_b = rng.uniform(-1.0 / np.sqrt(c), 1.0 / np.sqrt(c), size=2)
        self.taps = make_taps(space)

    def gamma_row(self, ci: int, ni: int) -> int:
        return ci * self.space.nodes_per_cell + ni

    def beta_row(self, ci: int, ni: int, slot: int) -> int:
        return (ci * self.space.nodes_per_cell + ni) * 2 + slot

    def omega_arrays(self) -> dict:
        out = {}
        for (ci, ni, name), inst in sorted(self.ops.items()):
            for k, w in enumerate(inst.weights):
                out[f"cell{ci}.node{ni}.{name}.w{k}"] = w
        out["head.w"] = self.head_w
        out["head.b"] = self.head_b
        return out

    def arch_arrays(self) -> dict:
        return {"alpha": self.alpha, "gamma": self.gamma, "beta": self.beta}


# ---------------------------------------------------------------------------
# relaxed mixtures


def grmc_mixture_weights(tape: Tape, logits: Tensor, lam: float, k: int, rng, mode: str) -> Tensor:
    """Mixture weight vector over candidates for one edge/node.

    search: sample the hard outcome, draw k conditional perturbations, and
    average the tempered softmaxes; the backward pass applies the averaged
    softmax Jacobian at the same fixed perturbations.  eval: plain softmax
    of the logits, no sampling, no temperature.
    """
    if mode == "eval":
        return ad.softmax_last(logits)
    if mode != "search":
        raise ValueError(f"mode must be 'search' or 'eval', got {mode!r}")
    theta = logits.data
    index = int(kernels.gumbel_max_indices(theta, 1, rng)[0])
    values = kernels.conditional_values(theta, index, k, rng)  # (k, N), noise held fixed
    scaled = values / lam
    m = scaled.max(axis=1, keepdims=True)
    e = np.exp(scaled - m)
    s = e / e.sum(axis=1, keepdims=True)
    weights = s.mean(axis=0)
    out = Tensor(weights, tape, logits.requires_grad)
    if out.requires_grad:

        def run():
            if out.grad is None:
                return
            g = out.grad
            inner = (s * (g[None, :] - (s * g[None, :]).sum(axis=1, keepdims=True))).mean(axis=0)
            if logits.grad is None:
                logits.grad = np.zeros_like(logits.data)
            logits.grad += inner / lam

        tape.record(run)
    return out


def mixed_edge_forward(tape, x: Tensor, edge_logits: Tensor, lam, k, rng, mode) -> Tensor:
    """Relaxed Identity/Zero edge: the zero branch contributes exactly nothing."""
    w = grmc_mixture_weights(tape, edge_logits, lam, k, rng, mode)
    return ad.scale_by(x, ad.take(w, FIRST_LEVEL_OPS.index("identity")))


def cell_forward(tape, inputs, gamma_rows, beta_rows, node_ops, lam, k, rng, mode) -> Tensor:
    """One cell: beta-wired slots feed gamma-weighted op mixtures; output sums nodes.

    inputs: already edge-transformed predecessor tensors (>= 1);
    gamma_rows: per intermediate node, the (|ops|,) logits tensor;
    beta_rows: per node, two (2,) slot logits tensors;
    node_ops: per node, list of (name, callable(tape, x, y) -> Tensor).
    """
    if not inputs:
        raise ValueError("cell needs at least one predecessor input")
    in_c = inputs[0]
    for extra in inputs[1:]:
        in_c = ad.add(in_c, extra)
    prev = in_c
    node_outputs = []
    for gamma_row, slot_rows, candidates in zip(gamma_rows, beta_rows, node_ops):
        slots = []
        for slot_logits in slot_rows:
            wb = grmc_mixture_weights(tape, slot_logits, lam, k, rng, mode)
            slots.append(
                ad.add(ad.scale_by(in_c, ad.take(wb, 0)), ad.scale_by(prev, ad.take(wb, 1)))
            )
        wg = grmc_mixture_weights(tape, gamma_row, lam, k, rng, mode)
        node_out = None
        for oi, (name, fn) in enumerate(candidates):
            if name == "zero":
                continue  # exact zero contribution and zero weight gradient
            term = ad.scale_by(fn(tape, slots[0], slots[1]), ad.take(wg, oi))
            node_out = term if node_out is None else ad.add(node_out, term)
        node_outputs.append(node_out)
        prev = node_out
    out = node_outputs[0]
    for extra in node_outputs[1:]:
        out = ad.add(out, extra)
    return out


# ---------------------------------------------------------------------------
# full network forward


def _head_logits(tape, pooled: Tensor, head_w: Tensor, head_b: Tensor) -> Tensor:
    n = pooled.shape[0]
    ones = tape.constant(np.ones((n, 1)))
    bias = ad.matmul(ones, ad.reshape(head_b, (1, 2)))
    return ad.add(ad.matmul(pooled, head_w), bias)


def network_forward(tape, state: SearchState, xa, xb, rng, mode: str):
    """Search-space forward pass; returns (logits tensor, leaf tensor dict)."""
    space = state.space
    leaves = {
        "alpha": tape.tensor(state.alpha, requires_grad=True),
        "gamma": tape.tensor(state.gamma, requires_grad=True),
        "beta": tape.tensor(state.beta, requires_grad=True),
        "head.w": tape.tensor(state.head_w, requires_grad=True),
        "head.b": tape.tensor(state.head_b, requires_grad=True),
    }
    op_tensors = {}
    for (ci, ni, name), inst in sorted(state.ops.items()):
        tensors = inst.make_tensors(tape)
        op_tensors[(ci, ni, name)] = tensors
        for kk, t in enumerate(tensors):
            leaves[f"cell{ci}.node{ni}.{name}.w{kk}"] = t

    modal = [tape.constant(xa), tape.constant(xb)]
    node_values = []
    for fi in range(space.n_feature_nodes):
        src = modal[0] if fi < space.n_image_features else modal[1]
        tap = state.taps[fi]
        if np.array_equal(tap, np.eye(space.channels)):
            node_values.append(src)
        else:
            node_values.append(ops.channel_linear(src, tape.constant(tap)))

    edges = space.first_level_edges()
    for ci in range(space.n_cells):
        dst = space.n_feature_nodes + ci
        ins = []
        for ei, (src, d) in enumerate(edges):
            if d != dst:
                continue
            ins.append(
                mixed_edge_forward(
                    tape,
                    node_values[src],
                    ad.take_row(leaves["alpha"], ei),
                    space.lam,
                    space.k_samples,
                    rng,
                    mode,
                )
            )
        gamma_rows = [
            ad.take_row(leaves["gamma"], state.gamma_row(ci, ni))
            for ni in range(space.nodes_per_cell)
        ]
        beta_rows = [
            [
                ad.take_row(leaves["beta"], state.beta_row(ci, ni, slot))
                for slot in range(2)
            ]
            for ni in range(space.nodes_per_cell)
        ]
        def bind(ci, ni, name):
            inst = state.ops[(ci, ni, name)]
            tensors = op_tensors[(ci, ni, name)]
            return lambda t, x, y: inst.forward(t, x, y, tensors)

        node_ops = [
            [(name, bind(ci, ni, name)) for name in SECOND_LEVEL_OPS]
            for ni in range(space.nodes_per_cell)
        ]
        node_values.append(
            cell_forward(
                tape, ins, gamma_rows, beta_rows, node_ops, space.lam, space.k_samples, rng, mode
            )
        )

    pooled = ad.mean_axis(node_values[-1], 2)
    return _head_logits(tape, pooled, leaves["head.w"], leaves["head.b"]), leaves


def cross_entropy_loss(tape, logits: Tensor, labels) -> Tensor:
    onehot = np.eye(2)[np.asarray(labels, dtype=np.int64)]
    logp = ad.log_softmax_last(logits)
    return ad.scale(ad.sum_all(ad.mul(logp, tape.constant(onehot))), -1.0 / labels.shape[0])


# ---------------------------------------------------------------------------
# optimization


class Adam:
    """Adaptive-moment optimizer over a dict of named arrays (in-place)."""

    def __init__(self, lr, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.moments = {}

    def step(self, params: dict, grads: dict) -> None:
        if self.lr == 0.0:
            return  # bitwise no-op contract for zero learning rates
        self.step_count += 1
        b1, b2 = self.betas
        correction1 = 1.0 - b1**self.step_count
        correction2 = 1.0 - b2**self.step_count
        for name, p in params.items():
            g = grads.get(name)
            if g is None:
                g = np.zeros_like(p)
            if self.weight_decay:
                g = g + self.weight_decay * p
            if name not in self.moments:
                self.moments[name] = (np.zeros_like(p), np.zeros_like(p))
            m, v = self.moments[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= self.lr * (m / correction1) / (np.sqrt(v / correction2) + self.eps)


def _collect_grads(leaves: dict, names) -> dict:
    out = {}
    for name in names:
        t = leaves[name]
        out[name] = t.grad if t.grad is not None else np.zeros_like(t.data)
    return out


def bilevel_train_step(state, train_batch, val_batch, schedule, rng, w_opt, a_opt):
    """One alternation: weights on the train batch, architecture on the val batch.

    Returns (train_loss, val_loss).  Raises TrainingDivergedError on
    non-finite losses.
    """
    xa, xb, labels = train_batch
    tape = Tape()
    logits, leaves = network_forward(tape, state, xa, xb, rng, "search")
    loss = cross_entropy_loss(tape, logits, labels)
    train_loss = loss.item()
    if not np.isfinite(train_loss):
        raise TrainingDivergedError(f"non-finite train loss {train_loss} at weight update")
    tape.backward(loss)
    omega = state.omega_arrays()
    w_opt.step(omega, _collect_grads(leaves, omega.keys()))

    xa, xb, labels = val_batch
    tape = Tape()
    logits, leaves = network_forward(tape, state, xa, xb, rng, "search")
    loss = cross_entropy_loss(tape, logits, labels)
    val_loss = loss.item()
    if not np.isfinite(val_loss):
        raise TrainingDivergedError(f"non-finite validation loss {val_loss} at architecture update")
    tape.backward(loss)
    arch = state.arch_arrays()
    a_opt.step(arch, _collect_grads(leaves, arch.keys()))
    return train_loss, val_loss


def entropy(logits_matrix) -> float:
    """Summed Shannon entropy (natural log) of softmax over each row."""
    z = np.atleast_2d(np.asarray(logits_matrix, dtype=np.float64))
    m = z.max(axis=1, keepdims=True)
    e = np.exp(z - m)
    p = e / e.sum(axis=1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        plogp = np.where(p > 0, p * np.log(p), 0.0)
    return float(-plogp.sum())


# ---------------------------------------------------------------------------
# genotype


@dataclass(frozen=True)
class Genotype:
    """Discrete architecture extracted from a search state."""

    first_level_edges: tuple  # of (src name, dst name, kept)
    cells: tuple  # of dicts {cell, node, op, inputs, tie}
    lam: float
    k_samples: int
    seed: int
    epoch: int
    entropy_history_ref: str = None

    def to_json_dict(self) -> dict:
        return {
            "version": GENOTYPE_VERSION,
            "lambda": self.lam,
            "K": self.k_samples,
            "seed": self.seed,
            "epoch": self.epoch,
            "first_level_edges": [list(e) for e in self.first_level_edges],
            "cells": [dict(c) for c in self.cells],
            "entropy_history_ref": self.entropy_history_ref,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2, sort_keys=True) + "\n"

    def structure_json(self) -> str:
        """Edges and cells only, no provenance; for stability comparisons."""
        payload = self.to_json_dict()
        for key in ("epoch", "seed", "entropy_history_ref"):
            payload.pop(key, None)
        return json.dumps(payload, sort_keys=True)

    @classmethod
    def from_json_dict(cls, payload: dict) -> "Genotype":
        if payload.get("version") != GENOTYPE_VERSION:
            raise ValueError(f"unsupported genotype version {payload.get('version')!r}")
        return cls(
            first_level_edges=tuple((e[0], e[1], bool(e[2])) for e in payload["first_level_edges"]),
            cells=tuple(
                {
                    "cell": c["cell"],
                    "node": c["node"],
                    "op": c["op"],
                    "inputs": list(c["inputs"]),
                    "tie": bool(c.get("tie", False)),
                }
                for c in payload["cells"]
            ),
            lam=payload["lambda"],
            k_samples=payload["K"],
            seed=payload["seed"],
            epoch=payload["epoch"],
            entropy_history_ref=payload.get("entropy_history_ref"),
        )

    @classmethod
    def from_json(cls, text: str) -> "Genotype":
        return cls.from_json_dict(json.loads(text))


def _softmax_rows(z):
    m = z.max(axis=-1, keepdims=True)
    e = np.exp(z - m)
    return e / e.sum(axis=-1, keepdims=True)


def derive_architecture(state: SearchState, seed: int = 0, epoch: int = 0,
                        entropy_history_ref: str = None) -> Genotype:
    """Per-edge and per-node argmax extraction; deterministic given the state.

    First-level edges are kept iff the identity probability strictly exceeds
    the zero probability; gamma/beta ties resolve to the lowest index and
    set the node's tie flag.  A cell left without any kept incoming edge is
    a degenerate genotype and raises.
    """
    space = state.space
    names = space.node_names
    edges = space.first_level_edges()
    probs = _softmax_rows(state.alpha)
    id_col = FIRST_LEVEL_OPS.index("identity")
    zero_col = FIRST_LEVEL_OPS.index("zero")
    first = tuple(
        (names[src], names[dst], bool(probs[ei, id_col] > probs[ei, zero_col]))
        for ei, (src, dst) in enumerate(edges)
    )
    for ci in range(space.n_cells):
        dst_name = names[space.n_feature_nodes + ci]
        if not any(kept for _, dst, kept in first if dst == dst_name):
            raise DegenerateGenotypeError(f"no kept input edge into {dst_name}")

    cells = []
    gamma_probs = _softmax_rows(state.gamma)
    beta_probs = _softmax_rows(state.beta)
    for ci in range(space.n_cells):
        for ni in range(space.nodes_per_cell):
            row = gamma_probs[state.gamma_row(ci, ni)]
            op_idx = int(np.argmax(row))
            tie = bool(np.sum(row == row[op_idx]) > 1)
            inputs = []
            for slot in range(2):
                brow = beta_probs[state.beta_row(ci, ni, slot)]
                src_idx = int(np.argmax(brow))
                if ni == 0:
                    inputs.append("in")  # both candidates coincide: a tie here is structural
                else:
                    tie = tie or bool(brow[0] == brow[1])
                    inputs.append("in" if src_idx == 0 else f"node{ni - 1}")
            cells.append(
                {
                    "cell": ci,
                    "node": ni,
                    "op": SECOND_LEVEL_OPS[op_idx],
                    "inputs": inputs,
                    "tie": tie,
                }
            )
    return Genotype(
        first_level_edges=first,
        cells=tuple(cells),
        lam=space.lam,
        k_samples=space.k_samples,
        seed=seed,
        epoch=epoch,
        entropy_history_ref=entropy_history_ref,
    )


def genotype_param_count(genotype: Genotype, space: SearchSpaceConfig) -> int:
    """Analytic learnable-parameter count of the discrete network (ops + head)."""
    total = sum(
        descriptor(cell["op"], space.channels).param_count for cell in genotype.cells
    )
    return total + space.channels * 2 + 2


# ---------------------------------------------------------------------------
# discrete (derived) network: retraining and evaluation


class DiscreteNetwork:
    """The derived architecture with fresh weights; no sampling anywhere."""

    def __init__(self, genotype: Genotype, space: SearchSpaceConfig, rng: np.random.Generator):
        self.genotype = genotype
        self.space = space
        names = space.node_names
        self.kept = {
            dst: [names.index(src) for src, d, kept in genotype.first_level_edges if d == dst and kept]
            for dst in names[space.n_feature_nodes :]
        }
        self.node_specs = {}
        for cell in genotype.cells:
            inst = OpInstance(descriptor(cell["op"], space.channels), rng)
            self.node_specs[(cell["cell"], cell["node"])] = (cell["op"], cell["inputs"], inst)
        c = space.channels
        self.head_w = rng.uniform(-1.0 / np.sqrt(c), 1.0 / np.sqrt(c), size=(c, 2))
        self.head_b = rng.uniform(-1.0 / np.sqrt(c), 1.0 / np.sqrt(c), size=2)
        self.taps = make_taps(space)

    def params(self) -> dict:
        out = {}
        for (ci, ni), (name, _, inst) in sorted(self.node_specs.items()):
            for k, w in enumerate(inst.weights):
                out[f"cell{ci}.node{ni}.{name}.w{k}"] = w
        out["head.w"] = self.head_w
        out["head.b"] = self.head_b
        return out

    def param_count(self) -> int:
        return int(sum(w.size for w in self.params().values()))

    def forward(self, tape, xa, xb):
        space = self.space
        leaves = {}
        weight_tensors = {}
        for (ci, ni), (name, _, inst) in sorted(self.node_specs.items()):
            tensors = inst.make_tensors(tape)
            weight_tensors[(ci, ni)] = tensors
            for k, t in enumerate(tensors):
                leaves[f"cell{ci}.node{ni}.{name}.w{k}"] = t
        leaves["head.w"] = tape.tensor(self.head_w, requires_grad=True)
        leaves["head.b"] = tape.tensor(self.head_b, requires_grad=True)

        modal = [tape.constant(xa), tape.constant(xb)]
        node_values = []
        for fi in range(space.n_feature_nodes):
            src = modal[0] if fi < space.n_image_features else modal[1]
            tap = self.taps[fi]
            if np.array_equal(tap, np.eye(space.channels)):
                node_values.append(src)
            else:
                node_values.append(ops.channel_linear(src, tape.constant(tap)))

        names = space.node_names
        for ci in range(space.n_cells):
            dst = names[space.n_feature_nodes + ci]
            srcs = self.kept[dst]
            in_c = node_values[srcs[0]]
            for s in srcs[1:]:
                in_c = ad.add(in_c, node_values[s])
            prev = in_c
            node_outputs = []
            for ni in range(space.nodes_per_cell):
                name, inputs, inst = self.node_specs[(ci, ni)]
                operands = [in_c if src == "in" else prev for src in inputs]
                out = inst.forward(tape, operands[0], operands[1], weight_tensors[(ci, ni)])
                node_outputs.append(out)
                prev = out
            cell_out = node_outputs[0]
            for extra in node_outputs[1:]:
                cell_out = ad.add(cell_out, extra)
            node_values.append(cell_out)

        pooled = ad.mean_axis(node_values[-1], 2)
        return _head_logits(tape, pooled, leaves["head.w"], leaves["head.b"]), leaves

    def scores(self, xa, xb) -> np.ndarray:
        """Deterministic class-1 probabilities."""
        tape = Tape()
        logits, _ = self.forward(tape, xa, xb)
        z = logits.data
        m = z.max(axis=1, keepdims=True)
        e = np.exp(z - m)
        return (e / e.sum(axis=1, keepdims=True))[:, 1]


def train_discrete(net: DiscreteNetwork, train_split, schedule: TrainSchedule, rng) -> list:
    """Plain supervised training of the derived network; returns epoch losses."""
    xa, xb, labels = train_split.xa, train_split.xb, train_split.labels
    opt = Adam(schedule.weight_lr, weight_decay=schedule.weight_decay)
    n = labels.shape[0]
    losses = []
    for _ in range(schedule.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        batches = 0
        for start in range(0, n - schedule.batch_size + 1, schedule.batch_size):
            sel = order[start : start + schedule.batch_size]
            tape = Tape()
            logits, leaves = net.forward(tape, xa[sel], xb[sel])
            loss = cross_entropy_loss(tape, logits, labels[sel])
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingDivergedError(f"non-finite retrain loss {value}")
            tape.backward(loss)
            params = net.params()
            opt.step(params, _collect_grads(leaves, params.keys()))
            epoch_loss += value
            batches += 1
        losses.append(epoch_loss / max(batches, 1))
    return losses


def retrain_and_eval(
    genotype: Genotype, dataset: dict, schedule: TrainSchedule, rng, space: SearchSpaceConfig = None
) -> MetricsReport:
    """Build the discrete network, train from fresh weights, report test metrics.

    ``dataset`` maps split names to ModalitySplit-like objects; training uses
    "train" and metrics come from "test".
    """
    net = DiscreteNetwork(genotype, space if space is not None else SearchSpaceConfig(), rng)
    train_discrete(net, dataset["train"], schedule, rng)
    test = dataset["test"]
    scores = net.scores(test.xa, test.xb)
    return classification_report(scores, test.labels, net.param_count())


# ---------------------------------------------------------------------------
# the search loop


@dataclass
class EpochRecord:
    epoch: int
    e_alpha: float
    e_gamma: float
    train_loss: float
    val_loss: float

    def as_row(self) -> list:
        return [self.epoch, self.e_alpha, self.e_gamma, self.train_loss, self.val_loss]


@dataclass
class SearchResult:
    state: SearchState
    genotype: Genotype
    history: list
    stopped_epoch: int
    stopped_early: bool
    seed: int
    genotype_trace: list = None  # (epoch, genotype JSON or None while degenerate)


def _entropy_converged(history, tol: float, patience: int) -> bool:
    if len(history) <= patience:
        return False
    recent = history[-(patience + 1) :]
    for prev, cur in zip(recent, recent[1:]):
        if abs(cur.e_alpha - prev.e_alpha) >= tol or abs(cur.e_gamma - prev.e_gamma) >= tol:
            return False
    return True


def run_search(
    train_split,
    val_split,
    space: SearchSpaceConfig,
    schedule: TrainSchedule,
    seed: int,
    checkpoint_path=None,
    checkpoint_every: int = 0,
    resume_from=None,
) -> SearchResult:
    """Bilevel search with entropy stopping; deterministic given the seed.

    Checkpointing (optional) snapshots the full state, optimizer moments,
    RNG stream and history every ``checkpoint_every`` epochs; ``resume_from``
    continues a run so precisely that the final genotype matches the
    uninterrupted run.
    """
    rng = np.random.default_rng(seed)
    state = SearchState(space, rng)
    w_opt = Adam(schedule.weight_lr, weight_decay=schedule.weight_decay)
    a_opt = Adam(schedule.arch_lr)
    history = []
    start_epoch = 0
    if resume_from is not None:
        state, w_opt, a_opt, rng, history, start_epoch = load_checkpoint(resume_from, space, schedule)

    n = min(len(train_split.labels), len(val_split.labels))
    per_epoch = max(n // schedule.batch_size, 1)
    bs = schedule.batch_size
    genotype_trace = []

    for epoch in range(start_epoch, schedule.epochs):
        a_opt.lr = schedule.arch_lr * schedule.arch_lr_decay**epoch
        train_order = rng.permutation(len(train_split.labels))
        val_order = rng.permutation(len(val_split.labels))
        train_loss_sum = 0.0
        val_loss_sum = 0.0
        e_alpha_sum = 0.0
        e_gamma_sum = 0.0
        for b in range(per_epoch):
            ts = train_order[b * bs : (b + 1) * bs]
            vs = val_order[b * bs : (b + 1) * bs]
            if ts.size == 0 or vs.size == 0:
                break
            tr = (train_split.xa[ts], train_split.xb[ts], train_split.labels[ts])
            va = (val_split.xa[vs], val_split.xb[vs], val_split.labels[vs])
            t_loss, v_loss = bilevel_train_step(state, tr, va, schedule, rng, w_opt, a_opt)
            train_loss_sum += t_loss
            val_loss_sum += v_loss
            e_alpha_sum += entropy(state.alpha)
            e_gamma_sum += entropy(state.gamma)
        record = EpochRecord(
            epoch=epoch + 1,
            e_alpha=e_alpha_sum / per_epoch,
            e_gamma=e_gamma_sum / per_epoch,
            train_loss=train_loss_sum / per_epoch,
            val_loss=val_loss_sum / per_epoch,
        )
        history.append(record)
        try:
            snapshot = derive_architecture(state, seed=seed, epoch=epoch + 1).structure_json()
        except DegenerateGenotypeError:
            snapshot = None
        genotype_trace.append((epoch + 1, snapshot))
        if checkpoint_path is not None and checkpoint_every and (epoch + 1) % checkpoint_every == 0:
            save_checkpoint(checkpoint_path, state, w_opt, a_opt, rng, history, epoch + 1, seed)
        if _entropy_converged(history, schedule.entropy_tol, schedule.entropy_patience):
            break

    stopped = history[-1].epoch if history else 0
    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, state, w_opt, a_opt, rng, history, stopped, seed)
    genotype = derive_architecture(state, seed=seed, epoch=stopped)
    return SearchResult(
        state=state,
        genotype=genotype,
        history=history,
        stopped_epoch=stopped,
        stopped_early=stopped < schedule.epochs,
        seed=seed,
        genotype_trace=genotype_trace,
    )


# ---------------------------------------------------------------------------
# checkpoints: zip of GRNT tensors (interchange) + exact f64 sidecars + manifest


def _checkpoint_arrays(state: SearchState, w_opt: Adam, a_opt: Adam) -> dict:
    arrays = dict(state.arch_arrays())
    arrays.update(state.omega_arrays())
    for ti, tap in enumerate(state.taps):
        arrays[f"tap.{ti}"] = tap
    for prefix, opt in (("w_opt", w_opt), ("a_opt", a_opt)):
        for name, (m, v) in opt.moments.items():
            arrays[f"{prefix}.m.{name}"] = m
            arrays[f"{prefix}.v.{name}"] = v
    return arrays


def save_checkpoint(path, state, w_opt, a_opt, rng, history, epoch, seed) -> None:
    arrays = _checkpoint_arrays(state, w_opt, a_opt)
    manifest = {
        "version": CHECKPOINT_VERSION,
        "epoch": epoch,
        "seed": seed,
        "rng_state": rng.bit_generator.state,
        "history": [r.as_row() for r in history],
        "tensors": {name: list(a.shape) for name, a in arrays.items()},
        "optimizer_steps": {"w_opt": w_opt.step_count, "a_opt": a_opt.step_count},
    }
    def entry(name):
        # fixed timestamp: checkpoint bytes depend only on content
        return zipfile.ZipInfo(name, date_time=(1980, 1, 1, 0, 0, 0))

    with zipfile.ZipFile(path, "w") as zf:
        zf.writestr(entry("manifest.json"), json.dumps(manifest, indent=2, sort_keys=True))
        for name, arr in sorted(arrays.items()):
            buf = io.BytesIO()
            _write_grnt_bytes(buf, arr)
            zf.writestr(entry(f"{name}.grnt"), buf.getvalue())
            zf.writestr(entry(f"{name}.f64le"), np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _write_grnt_bytes(buf, arr) -> None:
    arr32 = np.ascontiguousarray(arr, dtype=np.float32)
    buf.write(tensor_io.MAGIC)
    buf.write(struct.pack("<I", arr32.ndim))
    buf.write(struct.pack(f"<{arr32.ndim}I", *arr32.shape))
    buf.write(arr32.astype("<f4").tobytes(order="C"))


def load_checkpoint(path, space: SearchSpaceConfig, schedule: TrainSchedule):
    """Restore (state, optimizers, rng, history, next_epoch) for exact resume."""
    with zipfile.ZipFile(path) as zf:
        manifest = json.loads(zf.read("manifest.json"))
        if manifest["version"] != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {manifest['version']!r}")
        arrays = {}
        for name, shape in manifest["tensors"].items():
            raw = zf.read(f"{name}.f64le")
            arrays[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()

    state = SearchState(space, np.random.default_rng(manifest["seed"]))
    state.alpha[...] = arrays.pop("alpha")
    state.gamma[...] = arrays.pop("gamma")
    state.beta[...] = arrays.pop("beta")
    omega = state.omega_arrays()
    for name in list(arrays):
        if name in omega:
            omega[name][...] = arrays.pop(name)
    for ti in range(len(state.taps)):
        state.taps[ti][...] = arrays.pop(f"tap.{ti}")

    w_opt = Adam(schedule.weight_lr, weight_decay=schedule.weight_decay)
    a_opt = Adam(schedule.arch_lr)
    w_opt.step_count = manifest["optimizer_steps"]["w_opt"]
    a_opt.step_count = manifest["optimizer_steps"]["a_opt"]
    for prefix, opt in (("w_opt", w_opt), ("a_opt", a_opt)):
        moment_names = sorted(
            {n[len(prefix) + 3 :] for n in arrays if n.startswith(f"{prefix}.m.")}
        )
        for name in moment_names:
            opt.moments[name] = (arrays[f"{prefix}.m.{name}"], arrays[f"{prefix}.v.{name}"])

    rng = np.random.default_rng(manifest["seed"])
    rng.bit_generator.state = manifest["rng_state"]
    history = [EpochRecord(*row) for row in manifest["history"]]
    return state, w_opt, a_opt, rng, history, manifest["epoch"]
