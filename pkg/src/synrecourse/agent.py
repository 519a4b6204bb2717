"""Policy/value network: state encoder, LSTM controller, function/argument/value heads.

Everything is numpy with hand-written gradients. Training replays each
stored step from its recorded controller state, so backpropagation runs
through a single LSTM step rather than through time.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .dsl import Action, Library

CHECKPOINT_VERSION = 1
PARAM_NAMES = ("W_enc", "b_enc", "W_lstm", "b_lstm", "W_f", "b_f", "W_x", "b_x", "W_v", "b_v")


class DegenerateMaskError(ValueError):
    pass


class TrainingDivergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class ControllerState:
    h: np.ndarray
    c: np.ndarray

    @classmethod
    def zeros(cls, hidden: int) -> "ControllerState":
        return cls(np.zeros(hidden), np.zeros(hidden))


@dataclass(frozen=True)
class AgentConfig:
    input_size: int
    n_functions: int
    n_args: int
    embedding: int = 32
    hidden: int = 64
    seed: int = 0


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-np.clip(z, -60, 60)))


def _masked_softmax(logits: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Softmax along the last axis over ``mask``; masked entries are exactly 0.

    Rows with an empty mask come back all-zero.
    """
    z = np.where(mask, logits, -np.inf)
    m = np.max(z, axis=-1, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    e = np.where(mask, np.exp(z - m), 0.0)
    s = e.sum(axis=-1, keepdims=True)
    return np.divide(e, s, out=np.zeros_like(e), where=s > 0)


class ActionMasks:
    """Turns a flat action mask into function and per-function argument masks."""

    def __init__(self, library: Library):
        self.library = library
        self.n_functions = len(library)
        self.n_args = len(library.arg_vocab)
        self.action_function = library.action_function
        self.action_arg = library.action_arg

    def split(self, mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        mask = np.asarray(mask, dtype=bool)
        arg_mask = np.zeros(mask.shape[:-1] + (self.n_functions, self.n_args), dtype=bool)
        arg_mask[..., self.action_function, self.action_arg] = mask
        return arg_mask.any(axis=-1), arg_mask

    def joint(self, pi_f: np.ndarray, pi_x: np.ndarray) -> np.ndarray:
        """Probability of each flat action under pi_f(f) * pi_x(x | f)."""
        return pi_f[self.action_function] * pi_x[self.action_function, self.action_arg]


class AgentNet:
    """The five-part agent.

    ``e = tanh(W_enc b + b_enc)``; a standard LSTM cell maps ``(e, h, c)`` to
    ``(h', c')``; the heads read ``h'``: softmax over functions, one softmax
    over the union argument vocabulary masked per function, and a sigmoid
    value in [0, 1].
    """

    def __init__(self, config: AgentConfig, params: dict | None = None):
        self.config = config
        self.params = params if params is not None else self._init(config)

    @staticmethod
    def _init(cfg: AgentConfig) -> dict:
        rng = np.random.default_rng(cfg.seed)
        E, H = cfg.embedding, cfg.hidden

        def glorot(n_out, n_in, scale=1.0):
            lim = scale * np.sqrt(6.0 / (n_in + n_out))
            return rng.uniform(-lim, lim, size=(n_out, n_in))

        b_lstm = np.zeros(4 * H)
        b_lstm[H:2 * H] = 1.0  # forget gate bias
        return {
            "W_enc": glorot(E, cfg.input_size),
            "b_enc": np.zeros(E),
            "W_lstm": glorot(4 * H, E + H),
            "b_lstm": b_lstm,
            "W_f": glorot(cfg.n_functions, H, 0.1),
            "b_f": np.zeros(cfg.n_functions),
            "W_x": glorot(cfg.n_args, H, 0.1),
            "b_x": np.zeros(cfg.n_args),
            "W_v": glorot(1, H, 0.1),
            "b_v": np.zeros(1),
        }

    @classmethod
    def for_library(cls, library: Library, input_size: int, embedding=32, hidden=64, seed=0):
        cfg = AgentConfig(input_size, len(library), len(library.arg_vocab), embedding, hidden, seed)
        return cls(cfg)

    def initial_state(self) -> ControllerState:
        return ControllerState.zeros(self.config.hidden)

    def copy(self) -> "AgentNet":
        return AgentNet(self.config, {k: v.copy() for k, v in self.params.items()})

    # ------------------------------------------------------------------ forward

    def _core(self, x, h, c):
        p = self.params
        H = self.config.hidden
        e = np.tanh(x @ p["W_enc"].T + p["b_enc"])
        z = np.concatenate([e, h], axis=-1)
        pre = z @ p["W_lstm"].T + p["b_lstm"]
        i = _sigmoid(pre[..., :H])
        f = _sigmoid(pre[..., H:2 * H])
        o = _sigmoid(pre[..., 2 * H:3 * H])
        g = np.tanh(pre[..., 3 * H:])
        c2 = f * c + i * g
        tc = np.tanh(c2)
        h2 = o * tc
        lf = h2 @ p["W_f"].T + p["b_f"]
        lx = h2 @ p["W_x"].T + p["b_x"]
        v = _sigmoid(h2 @ p["W_v"].T + p["b_v"])[..., 0]
        cache = dict(x=x, e=e, z=z, i=i, f=f, o=o, g=g, c=c, tc=tc, h2=h2)
        return lf, lx, v, h2, c2, cache

    def forward(self, bits: np.ndarray, ctrl: ControllerState, fmask: np.ndarray, amask: np.ndarray):
        """One controller step.

        Returns ``(pi_f, pi_x, v, ctrl')`` where ``pi_x[f]`` is the argument
        distribution conditioned on function ``f`` (all-zero rows for
        functions without valid arguments).
        """
        bits = np.asarray(bits, dtype=float)
        if bits.shape[-1] != self.config.input_size:
            raise ValueError(f"expected {self.config.input_size} input bits, got {bits.shape[-1]}")
        if not np.any(fmask):
            raise DegenerateMaskError("every function is masked")
        lf, lx, v, h2, c2, _ = self._core(bits, ctrl.h, ctrl.c)
        pi_f = _masked_softmax(lf, fmask)
        pi_x = _masked_softmax(np.broadcast_to(lx, amask.shape), amask)
        return pi_f, pi_x, float(v), ControllerState(h2, c2)

    # ------------------------------------------------------------------ loss

    def loss_and_grads(self, batch: "StepBatch", compute_grads: bool = True):
        """Summed loss over the batch and its gradient w.r.t. every parameter.

        Per step: ``(v - r)^2 - sum_f tf log pi_f - sum_f tf sum_x tx|f log pi_x(x|f)``.
        """
        p = self.params
        H = self.config.hidden
        lf, lx, v, h2, c2, k = self._core(batch.bits, batch.h, batch.c)
        pi_f = _masked_softmax(lf, batch.fmask)
        lx_full = np.broadcast_to(lx[:, None, :], batch.amask.shape)
        pi_x = _masked_softmax(lx_full, batch.amask)

        tf, tx, r = batch.target_f, batch.target_x, batch.reward
        with np.errstate(divide="ignore"):
            log_f = np.where(tf > 0, np.log(np.where(tf > 0, pi_f, 1.0)), 0.0)
            log_x = np.where(tx > 0, np.log(np.where(tx > 0, pi_x, 1.0)), 0.0)
        ce_f = -(tf * log_f).sum(axis=1)
        ce_x = -(tf[:, :, None] * tx * log_x).sum(axis=(1, 2))
        value = (v - r) ** 2
        loss = float(np.sum(value + ce_f + ce_x))
        if not compute_grads:
            return loss, None

        # head pre-activation gradients
        d_lf = pi_f * tf.sum(axis=1, keepdims=True) - tf
        w = tf[:, :, None]
        d_lx = (w * (pi_x * tx.sum(axis=2, keepdims=True) - tx)).sum(axis=1)
        d_v = 2.0 * (v - r) * v * (1.0 - v)

        grads = {
            "W_f": d_lf.T @ h2,
            "b_f": d_lf.sum(axis=0),
            "W_x": d_lx.T @ h2,
            "b_x": d_lx.sum(axis=0),
            "W_v": d_v[None, :] @ h2,
            "b_v": np.array([d_v.sum()]),
        }
        dh = d_lf @ p["W_f"] + d_lx @ p["W_x"] + d_v[:, None] * p["W_v"][0]

        # LSTM cell, single step
        dc2 = dh * k["o"] * (1.0 - k["tc"] ** 2)
        d_o = dh * k["tc"]
        d_i = dc2 * k["g"]
        d_g = dc2 * k["i"]
        d_fg = dc2 * k["c"]
        d_pre = np.concatenate(
            [
                d_i * k["i"] * (1 - k["i"]),
                d_fg * k["f"] * (1 - k["f"]),
                d_o * k["o"] * (1 - k["o"]),
                d_g * (1 - k["g"] ** 2),
            ],
            axis=1,
        )
        grads["W_lstm"] = d_pre.T @ k["z"]
        grads["b_lstm"] = d_pre.sum(axis=0)
        dz = d_pre @ p["W_lstm"]
        de = dz[:, : self.config.embedding]
        d_enc = de * (1.0 - k["e"] ** 2)
        grads["W_enc"] = d_enc.T @ k["x"]
        grads["b_enc"] = d_enc.sum(axis=0)
        return loss, grads

    def train_step(self, batch: "StepBatch", learning_rate: float) -> float:
        """One plain SGD step on the mean loss; returns the pre-step mean loss."""
        loss, grads = self.loss_and_grads(batch)
        n = max(1, len(batch))
        if not np.isfinite(loss):
            raise TrainingDivergenceError(f"non-finite loss {loss} on a batch of {n} steps")
        for name, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise TrainingDivergenceError(f"non-finite gradient in {name}")
            self.params[name] -= learning_rate * g / n
        return loss / n

    # ------------------------------------------------------------------ io

    def save(self, path: str | Path, extra: dict | None = None):
        meta = {"version": CHECKPOINT_VERSION, "config": self.config.__dict__, "extra": extra or {}}
        with open(path, "wb") as fh:
            np.savez(fh, meta=np.array(json.dumps(meta)), **self.params)

    @classmethod
    def load(cls, path: str | Path) -> tuple["AgentNet", dict]:
        with np.load(path, allow_pickle=False) as z:
            meta = json.loads(str(z["meta"]))
            if meta.get("version") != CHECKPOINT_VERSION:
                raise ValueError(f"{path}: unsupported checkpoint version {meta.get('version')}")
            params = {n: z[n].copy() for n in PARAM_NAMES}
        return cls(AgentConfig(**meta["config"]), params), meta.get("extra", {})


@dataclass
class StepBatch:
    """Stacked training steps (one row per step)."""

    bits: np.ndarray
    h: np.ndarray
    c: np.ndarray
    fmask: np.ndarray
    amask: np.ndarray
    target_f: np.ndarray
    target_x: np.ndarray
    reward: np.ndarray

    def __len__(self):
        return self.bits.shape[0]

    @classmethod
    def stack(cls, steps: Sequence) -> "StepBatch":
        return cls(
            bits=np.stack([s.bits for s in steps]),
            h=np.stack([s.ctrl.h for s in steps]),
            c=np.stack([s.ctrl.c for s in steps]),
            fmask=np.stack([s.fmask for s in steps]),
            amask=np.stack([s.amask for s in steps]),
            target_f=np.stack([s.pi_f for s in steps]),
            target_x=np.stack([s.pi_x for s in steps]),
            reward=np.asarray([s.reward for s in steps], dtype=float),
        )


def select_action(pi_f: np.ndarray, pi_x: np.ndarray, library: Library, mask: np.ndarray | None = None) -> Action:
    """Greedy (function, argument): argmax of pi_f, then of pi_x(. | f).

    ``np.argmax`` returns the first maximum, so ties go to the lowest index.
    When ``mask`` is given, masked functions/arguments are never chosen.
    """
    pf = np.asarray(pi_f, dtype=float)
    px = np.asarray(pi_x, dtype=float)
    if mask is not None:
        fmask, amask = ActionMasks(library).split(mask)
        pf = np.where(fmask, pf, -np.inf)
        px = np.where(amask, px, -np.inf)
    f = int(np.argmax(pf))
    spec = library.functions[f]
    if spec.is_stop:
        return Action(spec.name, None)
    # candidate argument tokens of this function, in domain order
    idx = [library.action_index[Action(spec.name, a)] for a in spec.arguments]
    toks = library.action_arg[idx]
    scores = px[f, toks] if px.ndim == 2 else px[toks]
    return library.actions[idx[int(np.argmax(scores))]]
