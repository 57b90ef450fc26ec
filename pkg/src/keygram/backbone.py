"""Toy transformer backbone with memory-fusion layers and a trainer.

A small encoder (single-head attention blocks, pre-norm, ReLU MLP) reads
a tokenized instruction and classifies (attribute, object, target) from
the leading [cls] position. Fusion layers, when inserted, rewrite the
hidden states right before a block's attention using the instruction's
retrieved memory vector.

Everything is plain numpy with hand-written backward passes; training is
Adam for dense parameters and sparse SGD through the memory store's
update path for embedding rows. Runs are bit-reproducible for a fixed
(seed, config) on one platform.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .config import Config
from .errors import DivergenceError, NoInsertedLayers
from .fusion import (
    FusionCache,
    FusionLayer,
    GateTrace,
    create_fusion_layer,
    fusion_backward,
    fusion_forward,
)
from .hashing import MemoryAddress, hash_key, mix_seed
from .memory import LogicalMemory, RowUpdate, apply_updates, init_memory
from .parser import Lexicon, encode_set, extract_from_instruction
from .task import Example, SyntheticTask, generate_task

_DENSE_DOMAIN = 0x44454E53
_FUSION_DOMAIN = 0x46555345
_MEMORY_DOMAIN = 0x4D454D52
_BATCH_DOMAIN = 0x42415443

_LN_EPS = 1e-5


# --- memory bridge -----------------------------------------------------------

class MemoryBridge:
    """Caches parse/hash work per instruction and moves data both ways.

    Build a bridge after any memory expansion; cached row plans assume a
    fixed table structure.
    """

    def __init__(self, memory: LogicalMemory, max_words: int,
                 lexicon: Lexicon | None = None):
        self.memory = memory
        self.max_words = max_words
        self.lexicon = lexicon if lexicon is not None else Lexicon.load()
        self._keys: dict[str, list] = {}
        self._plans: dict[tuple[str, int], np.ndarray] = {}
        self._tables: dict[int, list] = {}

    def keys_for(self, instruction: str):
        keys = self._keys.get(instruction)
        if keys is None:
            grams = extract_from_instruction(instruction, budget=self.memory.slots,
                                             max_words=self.max_words,
                                             lexicon=self.lexicon)
            keys = encode_set(grams, self.max_words)
            self._keys[instruction] = keys
        return keys

    def _layer_tables(self, layer: int) -> list:
        tables = self._tables.get(layer)
        if tables is None:
            tables = []
            for slot in range(self.memory.slots):
                for head in range(self.memory.heads):
                    tables.extend(self.memory.tables(layer, slot, head))
            self._tables[layer] = tables
        return tables

    def _plan(self, instruction: str, layer: int) -> np.ndarray:
        """Row index per memory-vector segment, canonical order."""
        plan = self._plans.get((instruction, layer))
        if plan is None:
            keys = self.keys_for(instruction)
            rows = [
                hash_key(keys[table.slot].ids, table.spec).row
                for table in self._layer_tables(layer)
            ]
            plan = np.asarray(rows, dtype=np.int64)
            self._plans[(instruction, layer)] = plan
        return plan

    def memory_vectors(self, instructions: list[str], layer: int) -> np.ndarray:
        tables = self._layer_tables(layer)
        idx = np.stack([self._plan(i, layer) for i in instructions])
        parts = [tables[j].rows[idx[:, j]] for j in range(len(tables))]
        return np.concatenate(parts, axis=1)

    def updates_for(self, instructions: list[str], layer: int,
                    d_memory: np.ndarray) -> list[RowUpdate]:
        tables = self._layer_tables(layer)
        d = self.memory.head_width
        updates = []
        for b, instruction in enumerate(instructions):
            plan = self._plan(instruction, layer)
            for j, table in enumerate(tables):
                address = MemoryAddress(layer, table.slot, table.head,
                                        table.generation, int(plan[j]))
                updates.append(RowUpdate(address, d_memory[b, j * d:(j + 1) * d]))
        return updates


# --- model -------------------------------------------------------------------

@dataclass
class Model:
    params: dict[str, np.ndarray]
    fusion: dict[int, FusionLayer]
    insert_layers: tuple[int, ...]
    blocks: int
    width: int
    label_sizes: tuple[int, int, int]

    def astype(self, dtype) -> "Model":
        params = {k: v.astype(dtype) for k, v in self.params.items()}
        fusion = {}
        for layer, f in self.fusion.items():
            fusion[layer] = FusionLayer(
                layer, params[f"fusion{layer}.w_k"], params[f"fusion{layer}.w_v"],
                params[f"fusion{layer}.kernel"], f.conv_mode, f.slot_groups)
        return Model(params, fusion, self.insert_layers, self.blocks, self.width,
                     self.label_sizes)


def init_model(task: SyntheticTask, config: Config, seed: int,
               memory: LogicalMemory | None) -> Model:
    """Dense parameters come from a stream independent of the fusion
    stream, so models with and without insertion share their backbone init."""
    bb = config.backbone
    d = bb.width
    rng = np.random.default_rng(mix_seed(seed, _DENSE_DOMAIN))
    vocab = len(task.vocab)
    seq = task.sequence_length

    params: dict[str, np.ndarray] = {}

    def normal(name, shape, std):
        params[name] = (rng.normal(size=shape) * std).astype(np.float32)

    def zeros(name, shape):
        params[name] = np.zeros(shape, dtype=np.float32)

    def ones(name, shape):
        params[name] = np.ones(shape, dtype=np.float32)

    normal("embed", (vocab, d), 0.1)
    normal("pos", (seq, d), 0.1)
    proj_std = 1.0 / np.sqrt(d)
    out_std = proj_std / np.sqrt(2.0 * bb.blocks)
    hidden = bb.mlp_ratio * d
    for i in range(bb.blocks):
        ones(f"b{i}.ln1_g", (d,)); zeros(f"b{i}.ln1_b", (d,))
        normal(f"b{i}.wq", (d, d), proj_std)
        normal(f"b{i}.wk", (d, d), proj_std)
        normal(f"b{i}.wv", (d, d), proj_std)
        normal(f"b{i}.wo", (d, d), out_std)
        ones(f"b{i}.ln2_g", (d,)); zeros(f"b{i}.ln2_b", (d,))
        normal(f"b{i}.w1", (d, hidden), proj_std); zeros(f"b{i}.b1", (hidden,))
        normal(f"b{i}.w2", (hidden, d), 1.0 / np.sqrt(hidden) / np.sqrt(2.0 * bb.blocks))
        zeros(f"b{i}.b2", (d,))
    ones("lnf_g", (d,)); zeros("lnf_b", (d,))
    label_sizes = (len(task.attributes), len(task.objects), task.target_labels)
    for name, n in zip(("attr", "obj", "tgt"), label_sizes):
        normal(f"head_{name}.w", (d, n), proj_std)
        zeros(f"head_{name}.b", (n,))

    fusion: dict[int, FusionLayer] = {}
    insert = tuple(sorted(bb.insert_layers))
    if insert:
        if memory is None:
            raise ValueError("insertion layers configured but no memory given")
        fseed = mix_seed(seed, _FUSION_DOMAIN)
        for layer in insert:
            if layer < 0 or layer >= bb.blocks:
                raise ValueError(f"insert layer {layer} outside [0, {bb.blocks})")
            f = create_fusion_layer(
                layer, memory.memory_width(layer), d, config.fusion.conv_span,
                fseed, config.fusion.conv_mode, config.fusion.slot_groups)
            params[f"fusion{layer}.w_k"] = f.w_k
            params[f"fusion{layer}.w_v"] = f.w_v
            params[f"fusion{layer}.kernel"] = f.conv_kernel
            fusion[layer] = f
    return Model(params, fusion, insert, bb.blocks, d, label_sizes)


def _layer_norm(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + _LN_EPS)
    xhat = (x - mu) * inv
    return xhat * g + b, (xhat, inv, g)


def _layer_norm_backward(dy, cache):
    xhat, inv, g = cache
    dxhat = dy * g
    dg = (dy * xhat).sum(axis=tuple(range(dy.ndim - 1)))
    db = dy.sum(axis=tuple(range(dy.ndim - 1)))
    mean1 = dxhat.mean(axis=-1, keepdims=True)
    mean2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
    dx = (dxhat - mean1 - xhat * mean2) * inv
    return dx, dg, db


def _softmax(x):
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class ForwardCaches:
    tokens: np.ndarray
    fusion: dict[int, FusionCache]
    ln1: list
    attn: list
    ln2: list
    mlp: list
    lnf: tuple | None = None
    cls_hidden: np.ndarray | None = None
    gates_mean: dict[int, float] = field(default_factory=dict)


def forward(model: Model, tokens: np.ndarray,
            memory_vectors: dict[int, np.ndarray] | None = None
            ) -> tuple[dict[str, np.ndarray], ForwardCaches]:
    """Returns ({"attr","obj","tgt"} logits, caches for backward)."""
    p = model.params
    x = p["embed"][tokens] + p["pos"][None, :tokens.shape[1], :]
    caches = ForwardCaches(tokens=tokens, fusion={}, ln1=[], attn=[], ln2=[],
                           mlp=[])
    scale = 1.0 / np.sqrt(model.width)
    for i in range(model.blocks):
        if i in model.fusion:
            x, fcache = fusion_forward(model.fusion[i], x, memory_vectors[i])
            caches.fusion[i] = fcache
            caches.gates_mean[i] = float(fcache.gates.mean())
        h1, ln1c = _layer_norm(x, p[f"b{i}.ln1_g"], p[f"b{i}.ln1_b"])
        q, k, v = h1 @ p[f"b{i}.wq"], h1 @ p[f"b{i}.wk"], h1 @ p[f"b{i}.wv"]
        scores = (q @ k.transpose(0, 2, 1)) * scale
        probs = _softmax(scores)
        ctx = probs @ v
        attn_out = ctx @ p[f"b{i}.wo"]
        x = x + attn_out
        caches.ln1.append((h1, ln1c))
        caches.attn.append((q, k, v, probs, ctx))

        x_mid = x
        h2, ln2c = _layer_norm(x_mid, p[f"b{i}.ln2_g"], p[f"b{i}.ln2_b"])
        pre = h2 @ p[f"b{i}.w1"] + p[f"b{i}.b1"]
        act = np.maximum(pre, 0.0)
        x = x_mid + act @ p[f"b{i}.w2"] + p[f"b{i}.b2"]
        caches.ln2.append((x_mid, h2, ln2c))
        caches.mlp.append((pre, act))

    hf, lnfc = _layer_norm(x, p["lnf_g"], p["lnf_b"])
    caches.lnf = (x, lnfc)
    cls = hf[:, 0, :]
    caches.cls_hidden = cls
    logits = {
        "attr": cls @ p["head_attr.w"] + p["head_attr.b"],
        "obj": cls @ p["head_obj.w"] + p["head_obj.b"],
        "tgt": cls @ p["head_tgt.w"] + p["head_tgt.b"],
    }
    return logits, caches


def backward(model: Model, caches: ForwardCaches,
             d_logits: dict[str, np.ndarray]
             ) -> tuple[dict[str, np.ndarray], dict[int, np.ndarray]]:
    """Gradients for every dense parameter and each layer's memory vector."""
    p = model.params
    grads = {k: np.zeros_like(v) for k, v in p.items()}
    b, l = caches.tokens.shape
    scale = 1.0 / np.sqrt(model.width)

    cls = caches.cls_hidden
    d_cls = np.zeros_like(cls)
    for name in ("attr", "obj", "tgt"):
        dl = d_logits[name]
        grads[f"head_{name}.w"] += cls.T @ dl
        grads[f"head_{name}.b"] += dl.sum(axis=0)
        d_cls += dl @ p[f"head_{name}.w"].T

    x_final, lnfc = caches.lnf
    d_hf = np.zeros_like(x_final)
    d_hf[:, 0, :] = d_cls
    dx, dg, db = _layer_norm_backward(d_hf, lnfc)
    grads["lnf_g"] += dg
    grads["lnf_b"] += db

    d_memory: dict[int, np.ndarray] = {}
    for i in reversed(range(model.blocks)):
        # MLP sublayer
        x_mid, h2, ln2c = caches.ln2[i]
        pre, act = caches.mlp[i]
        d_out = dx
        grads[f"b{i}.w2"] += np.tensordot(act, d_out, axes=((0, 1), (0, 1)))
        grads[f"b{i}.b2"] += d_out.sum(axis=(0, 1))
        d_act = d_out @ p[f"b{i}.w2"].T
        d_pre = d_act * (pre > 0)
        grads[f"b{i}.w1"] += np.tensordot(h2, d_pre, axes=((0, 1), (0, 1)))
        grads[f"b{i}.b1"] += d_pre.sum(axis=(0, 1))
        d_h2 = d_pre @ p[f"b{i}.w1"].T
        d_x_mid, dg, db = _layer_norm_backward(d_h2, ln2c)
        grads[f"b{i}.ln2_g"] += dg
        grads[f"b{i}.ln2_b"] += db
        dx = d_out + d_x_mid

        # attention sublayer
        h1, ln1c = caches.ln1[i]
        q, k, v, probs, ctx = caches.attn[i]
        d_attn_out = dx
        grads[f"b{i}.wo"] += np.tensordot(ctx, d_attn_out, axes=((0, 1), (0, 1)))
        d_ctx = d_attn_out @ p[f"b{i}.wo"].T
        d_probs = d_ctx @ v.transpose(0, 2, 1)
        d_v = probs.transpose(0, 2, 1) @ d_ctx
        d_scores = probs * (d_probs - (d_probs * probs).sum(axis=-1, keepdims=True))
        d_q = (d_scores @ k) * scale
        d_k = (d_scores.transpose(0, 2, 1) @ q) * scale
        d_h1 = d_q @ p[f"b{i}.wq"].T + d_k @ p[f"b{i}.wk"].T + d_v @ p[f"b{i}.wv"].T
        grads[f"b{i}.wq"] += np.tensordot(h1, d_q, axes=((0, 1), (0, 1)))
        grads[f"b{i}.wk"] += np.tensordot(h1, d_k, axes=((0, 1), (0, 1)))
        grads[f"b{i}.wv"] += np.tensordot(h1, d_v, axes=((0, 1), (0, 1)))
        d_x_in, dg, db = _layer_norm_backward(d_h1, ln1c)
        grads[f"b{i}.ln1_g"] += dg
        grads[f"b{i}.ln1_b"] += db
        dx = dx + d_x_in

        if i in model.fusion:
            fgrads = fusion_backward(model.fusion[i], caches.fusion[i], dx)
            grads[f"fusion{i}.w_k"] += fgrads.d_w_k
            grads[f"fusion{i}.w_v"] += fgrads.d_w_v
            grads[f"fusion{i}.kernel"] += fgrads.d_kernel
            d_memory[i] = fgrads.d_memory
            dx = fgrads.d_hidden

    np.add.at(grads["embed"], caches.tokens, dx)
    grads["pos"] += dx.sum(axis=0)
    return grads, d_memory


def cross_entropy(logits: dict[str, np.ndarray], labels: dict[str, np.ndarray]
                  ) -> tuple[float, dict[str, np.ndarray]]:
    """Mean CE over the three heads; returns (loss, d_logits)."""
    total = 0.0
    d_logits = {}
    n_heads = len(logits)
    for name, l in logits.items():
        y = labels[name]
        shifted = l - l.max(axis=-1, keepdims=True)
        logz = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
        logp = shifted - logz
        batch = y.shape[0]
        total += float(-logp[np.arange(batch), y].mean()) / n_heads
        soft = np.exp(logp)
        soft[np.arange(batch), y] -= 1.0
        d_logits[name] = soft / (batch * n_heads)
    return total, d_logits


# --- training ---------------------------------------------------------------

@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState, lr: float, beta1=0.9, beta2=0.999, eps=1e-8) -> None:
    state.t += 1
    t = state.t
    for key, g in grads.items():
        m = state.m[key] = beta1 * state.m[key] + (1 - beta1) * g
        v = state.v[key] = beta2 * state.v[key] + (1 - beta2) * (g * g)
        mhat = m / (1 - beta1 ** t)
        vhat = v / (1 - beta2 ** t)
        params[key] -= (lr * mhat / (np.sqrt(vhat) + eps)).astype(params[key].dtype)


def _labels_of(batch: list[Example]) -> dict[str, np.ndarray]:
    return {
        "attr": np.array([e.attribute_id for e in batch]),
        "obj": np.array([e.object_id for e in batch]),
        "tgt": np.array([e.target_id for e in batch]),
    }


@dataclass
class TrainResult:
    model: Model
    memory: LogicalMemory | None
    bridge: MemoryBridge | None
    task: SyntheticTask
    metrics: dict
    curve: list[dict]


def evaluate(model: Model, task: SyntheticTask, examples: list[Example],
             bridge: MemoryBridge | None, chunk: int = 256) -> dict:
    """Per-head and exact-match accuracies over an example list."""
    correct = {"attr": 0, "obj": 0, "tgt": 0, "exact": 0}
    for start in range(0, len(examples), chunk):
        batch = examples[start:start + chunk]
        tokens = np.array([task.tokenize(e.instruction) for e in batch])
        memvecs = None
        if model.insert_layers:
            memvecs = {
                layer: bridge.memory_vectors([e.instruction for e in batch], layer)
                for layer in model.insert_layers
            }
        logits, _ = forward(model, tokens, memvecs)
        labels = _labels_of(batch)
        hits = np.ones(len(batch), dtype=bool)
        for name in ("attr", "obj", "tgt"):
            pred = logits[name].argmax(axis=-1)
            ok = pred == labels[name]
            correct[name] += int(ok.sum())
            hits &= ok
        correct["exact"] += int(hits.sum())
    n = max(len(examples), 1)
    return {key: value / n for key, value in correct.items()}


def train(config: Config, use_memory: bool = True, seed: int | None = None,
          task: SyntheticTask | None = None) -> TrainResult:
    """One full training run; bit-reproducible for fixed (seed, config)."""
    tc = config.train
    seed = tc.seed if seed is None else seed
    if task is None:
        task = generate_task(seed=seed, cfg=config.task)

    insert = tuple(sorted(config.backbone.insert_layers)) if use_memory else ()
    memory = None
    bridge = None
    if insert:
        memory = init_memory(
            layers=list(insert), slots=config.memory.slots,
            heads=config.memory.heads, head_width=config.memory.head_width,
            capacity=config.memory.capacity, seed=mix_seed(seed, _MEMORY_DOMAIN),
            init_scale=config.memory.init_scale,
            max_words=config.parser.max_words)
        bridge = MemoryBridge(memory, config.parser.max_words,
                              Lexicon.load(config.parser.lexicon_dir))

    model = init_model(task, replace(config, backbone=replace(
        config.backbone, insert_layers=insert)), seed, memory)
    adam = AdamState(m={k: np.zeros_like(v) for k, v in model.params.items()},
                     v={k: np.zeros_like(v) for k, v in model.params.items()})
    rng = np.random.default_rng(mix_seed(seed, _BATCH_DOMAIN))

    eval_rng = np.random.default_rng(mix_seed(seed, _BATCH_DOMAIN, 1))
    train_eval_idx = eval_rng.choice(len(task.train),
                                     min(tc.eval_samples, len(task.train)),
                                     replace=False)
    train_eval = [task.train[i] for i in train_eval_idx]

    curve = []
    for step in range(tc.steps):
        idx = rng.integers(0, len(task.train), tc.batch_size)
        batch = [task.train[i] for i in idx]
        instructions = [e.instruction for e in batch]
        tokens = np.array([task.tokenize(e.instruction) for e in batch])
        memvecs = None
        if insert:
            memvecs = {layer: bridge.memory_vectors(instructions, layer)
                       for layer in insert}
        logits, caches = forward(model, tokens, memvecs)
        loss, d_logits = cross_entropy(logits, _labels_of(batch))
        if not np.isfinite(loss):
            raise DivergenceError(f"loss {loss} at step {step}")
        grads, d_memory = backward(model, caches, d_logits)
        adam_step(model.params, grads, adam, tc.lr_dense)
        if insert:
            updates = []
            for layer in insert:
                updates.extend(bridge.updates_for(instructions, layer, d_memory[layer]))
            apply_updates(memory, updates, tc.lr_memory)
        if (step + 1) % tc.eval_every == 0 or step + 1 == tc.steps:
            point = {"step": step + 1, "loss": loss,
                     "train": evaluate(model, task, train_eval, bridge),
                     "test": evaluate(model, task, task.test, bridge)}
            curve.append(point)

    final_train = evaluate(model, task, train_eval, bridge)
    final_test = evaluate(model, task, task.test, bridge)
    metrics = {
        "seed": seed,
        "steps": tc.steps,
        "inserted_layers": list(insert),
        "train": final_train,
        "test": final_test,
    }
    return TrainResult(model=model, memory=memory, bridge=bridge, task=task,
                       metrics=metrics, curve=curve)


def extend_model_projections(model: Model, memory: LogicalMemory,
                             old_labels: dict[int, list]) -> None:
    """Re-layout every fusion projection after a memory expansion.

    old_labels maps layer -> segment_labels() captured before expanding.
    Forward passes stay exactly function-preserving; optimizer state is
    the caller's problem (shapes change).
    """
    from .fusion import extend_projections
    for layer in model.insert_layers:
        grown = extend_projections(model.fusion[layer], old_labels[layer],
                                   memory.segment_labels(layer))
        model.params[f"fusion{layer}.w_k"] = grown.w_k
        model.params[f"fusion{layer}.w_v"] = grown.w_v
        model.params[f"fusion{layer}.kernel"] = grown.conv_kernel
        model.fusion[layer] = grown


def collect_gate_traces(model: Model, task: SyntheticTask, examples: list[Example],
                        bridge: MemoryBridge | None) -> list[GateTrace]:
    """Token-wise gate activations for every inserted layer on one batch."""
    if not model.insert_layers:
        raise NoInsertedLayers("model has no fusion layers to probe")
    tokens = np.array([task.tokenize(e.instruction) for e in examples])
    instructions = [e.instruction for e in examples]
    memvecs = {layer: bridge.memory_vectors(instructions, layer)
               for layer in model.insert_layers}
    _, caches = forward(model, tokens, memvecs)
    return [
        GateTrace(layer=layer, mean_gate=caches.gates_mean[layer],
                  gates=caches.fusion[layer].gates)
        for layer in model.insert_layers
    ]


def probe_gates(model: Model, task: SyntheticTask, examples: list[Example],
                bridge: MemoryBridge | None) -> list[dict]:
    """Mean gate per inserted layer, normalized so the peak layer reads 1."""
    traces = collect_gate_traces(model, task, examples, bridge)
    peak = max(t.mean_gate for t in traces)
    return [
        {"layer": t.layer, "mean_gate": t.mean_gate,
         "normalized_gate": t.mean_gate / peak if peak > 0 else 0.0}
        for t in sorted(traces, key=lambda t: t.layer)
    ]
