"""Augmentation policy search: an RNN controller trained with PPO, plus a
random-search baseline, against a pluggable reward evaluator.

The controller emits 30 categorical decisions, (kind, magnitude, probability)
for each of the 10 operation slots.  Every drawn token is embedded and fed to
the next recurrent step.  Gradients are computed analytically by
backpropagation through time.
"""
from __future__ import annotations

import json
import math
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np

from .policy import (
    MAG_LEVELS,
    OPS,
    OPS_PER_SUB,
    PROB_LEVELS,
    SUBS_PER_POLICY,
    AugOpSpec,
    Policy,
    SubPolicy,
)

HEADS = ("kind", "mag", "prob")
HEAD_SIZES = {"kind": len(OPS), "mag": MAG_LEVELS, "prob": PROB_LEVELS}
N_STEPS = SUBS_PER_POLICY * OPS_PER_SUB * len(HEADS)

RewardEvaluator = Callable[[Policy], float]


class SearchError(RuntimeError):
    def __init__(self, message: str, policy: Optional[Policy] = None):
        super().__init__(message)
        self.policy = policy


def search_space_size(n_ops: int, d: int, p: int, n_subs: int) -> int:
    """Number of distinct policies: ``(n_ops * d * p) ** (2 * n_subs)``."""
    if min(n_ops, d, p, n_subs) < 1:
        raise ValueError("all arguments must be >= 1")
    return (int(n_ops) * int(d) * int(p)) ** (OPS_PER_SUB * int(n_subs))


# -- controller -------------------------------------------------------------

@dataclass(frozen=True)
class Controller:
    params: dict
    hidden: int = 64
    embed: int = 32

    @classmethod
    def init(cls, seed: int = 0, hidden: int = 64, embed: int = 32, scale: float = 0.1) -> "Controller":
        rng = np.random.default_rng(seed)
        shapes = param_shapes(hidden, embed)
        return cls({k: rng.uniform(-scale, scale, s) for k, s in shapes.items()}, hidden, embed)

    @classmethod
    def zeros(cls, hidden: int = 64, embed: int = 32) -> "Controller":
        return cls({k: np.zeros(s) for k, s in param_shapes(hidden, embed).items()}, hidden, embed)

    def with_params(self, params: dict) -> "Controller":
        return Controller(params, self.hidden, self.embed)

    def flat(self) -> np.ndarray:
        return np.concatenate([self.params[k].ravel() for k in sorted(self.params)])

    def from_flat(self, vec: np.ndarray) -> "Controller":
        out, i = {}, 0
        for k in sorted(self.params):
            n = self.params[k].size
            out[k] = np.asarray(vec[i:i + n], dtype=float).reshape(self.params[k].shape)
            i += n
        return self.with_params(out)


def param_shapes(hidden: int, embed: int) -> dict[str, tuple[int, ...]]:
    shapes = {
        "start": (embed,),
        "rnn.w_in": (hidden, embed),
        "rnn.w_hid": (hidden, hidden),
        "rnn.bias": (hidden,),
    }
    for head in HEADS:
        n = HEAD_SIZES[head]
        shapes[f"emb.{head}"] = (n, embed)
        shapes[f"head.{head}.w"] = (n, hidden)
        shapes[f"head.{head}.b"] = (n,)
    return shapes


def head_of(step: int) -> str:
    return HEADS[step % len(HEADS)]


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(logits)):
        raise FloatingPointError("non-finite controller logits")
    z = logits - logits.max()
    return z - math.log(np.exp(z).sum())


class Rollout(NamedTuple):
    trace: tuple[int, ...]
    log_prob: float
    hiddens: list
    inputs: list
    log_probs: list  # per-step log-softmax vectors


def _run(c: Controller, choose: Callable[[int, np.ndarray], int]) -> Rollout:
    p = c.params
    h = np.zeros(c.hidden)
    x = p["start"]
    trace, hiddens, inputs, logps = [], [], [], []
    total = 0.0
    for t in range(N_STEPS):
        head = head_of(t)
        h = np.tanh(p["rnn.w_in"] @ x + p["rnn.w_hid"] @ h + p["rnn.bias"])
        logp = _log_softmax(p[f"head.{head}.w"] @ h + p[f"head.{head}.b"])
        k = choose(t, logp)
        trace.append(k)
        inputs.append(x)
        hiddens.append(h)
        logps.append(logp)
        total += float(logp[k])
        x = p[f"emb.{head}"][k]
    return Rollout(tuple(trace), total, hiddens, inputs, logps)


def decode(trace: Sequence[int]) -> Policy:
    if len(trace) != N_STEPS:
        raise ValueError(f"trace must have {N_STEPS} decisions, got {len(trace)}")
    ops = []
    for i in range(0, N_STEPS, 3):
        kind, mag, prob = trace[i:i + 3]
        ops.append(AugOpSpec(OPS[kind], int(prob), int(mag)))
    return Policy(tuple(SubPolicy((ops[j], ops[j + 1])) for j in range(0, len(ops), 2)))


def encode(policy: Policy) -> tuple[int, ...]:
    out = []
    for op in policy.slots():
        out += [OPS.index(op.kind), op.mag_level, op.prob_level]
    return tuple(out)


def controller_sample(c: Controller, rng: np.random.Generator) -> tuple[Policy, float, tuple[int, ...]]:
    def choose(t, logp):
        cdf = np.cumsum(np.exp(logp))
        k = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
        return min(k, logp.size - 1)

    r = _run(c, choose)
    return decode(r.trace), r.log_prob, r.trace


def controller_greedy(c: Controller) -> Policy:
    return decode(_run(c, lambda t, logp: int(np.argmax(logp))).trace)


def trace_log_prob(c: Controller, trace: Sequence[int]) -> float:
    return _run(c, lambda t, logp: int(trace[t])).log_prob


def log_prob_grad(c: Controller, trace: Sequence[int]) -> tuple[float, dict]:
    """Log-probability of ``trace`` and its gradient w.r.t. every parameter."""
    r = _run(c, lambda t, logp: int(trace[t]))
    p = c.params
    g = {k: np.zeros_like(v) for k, v in p.items()}
    dh_next = np.zeros(c.hidden)
    for t in reversed(range(N_STEPS)):
        head = head_of(t)
        h, x = r.hiddens[t], r.inputs[t]
        dlogits = -np.exp(r.log_probs[t])
        dlogits[trace[t]] += 1.0
        g[f"head.{head}.w"] += np.outer(dlogits, h)
        g[f"head.{head}.b"] += dlogits
        dh = p[f"head.{head}.w"].T @ dlogits + dh_next
        da = dh * (1.0 - h * h)
        h_prev = r.hiddens[t - 1] if t > 0 else np.zeros(c.hidden)
        g["rnn.w_in"] += np.outer(da, x)
        g["rnn.w_hid"] += np.outer(da, h_prev)
        g["rnn.bias"] += da
        dx = p["rnn.w_in"].T @ da
        if t == 0:
            g["start"] += dx
        else:
            prev = head_of(t - 1)
            g[f"emb.{prev}"][trace[t - 1]] += dx
        dh_next = p["rnn.w_hid"].T @ da
    return r.log_prob, g


# -- PPO --------------------------------------------------------------------

@dataclass(frozen=True)
class AdamState:
    m: dict
    v: dict
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_controller(cls, c: Controller) -> "AdamState":
        return cls({k: np.zeros_like(v) for k, v in c.params.items()},
                   {k: np.zeros_like(v) for k, v in c.params.items()})


class Trajectory(NamedTuple):
    trace: tuple[int, ...]
    log_prob_old: float
    reward: float


class UpdateResult(NamedTuple):
    controller: Controller
    baseline: float
    adam: Optional[AdamState]
    surrogate: float


def surrogate(c: Controller, batch: Sequence[Trajectory], baseline: float, clip_eps: float) -> float:
    """Clipped PPO objective, averaged over the batch."""
    total = 0.0
    for traj in batch:
        adv = traj.reward - baseline
        ratio = math.exp(trace_log_prob(c, traj.trace) - traj.log_prob_old)
        clipped = min(max(ratio, 1 - clip_eps), 1 + clip_eps)
        total += min(ratio * adv, clipped * adv)
    return total / len(batch)


def surrogate_grad(c: Controller, batch: Sequence[Trajectory], baseline: float,
                   clip_eps: float) -> tuple[float, dict]:
    grad = {k: np.zeros_like(v) for k, v in c.params.items()}
    total = 0.0
    for traj in batch:
        adv = traj.reward - baseline
        logp, g = log_prob_grad(c, traj.trace)
        ratio = math.exp(logp - traj.log_prob_old)
        clipped = min(max(ratio, 1 - clip_eps), 1 + clip_eps)
        total += min(ratio * adv, clipped * adv)
        # the unclipped branch carries gradient only while it is the minimum
        if adv == 0 or (adv > 0 and ratio >= 1 + clip_eps) or (adv < 0 and ratio <= 1 - clip_eps):
            continue
        for k in grad:
            grad[k] += adv * ratio * g[k]
    n = len(batch)
    return total / n, {k: v / n for k, v in grad.items()}


def ppo_update(c: Controller, batch: Sequence[Trajectory], baseline: float, clip_eps: float = 0.2,
               lr: float = 0.00035, adam: Optional[AdamState] = None,
               baseline_decay: float = 0.95) -> UpdateResult:
    """One ascent step on the clipped surrogate.

    Advantages are ``reward - baseline``.  With ``adam`` the step is an Adam
    step and the updated optimizer state is returned; otherwise plain
    gradient ascent.  The baseline is then moved toward the batch mean reward.
    """
    if not batch:
        raise ValueError("ppo_update needs a non-empty batch")
    if not 0 < clip_eps < 1:
        raise ValueError("clip_eps must lie in (0, 1)")
    value, grad = surrogate_grad(c, batch, baseline, clip_eps)
    if adam is None:
        params = {k: c.params[k] + lr * grad[k] for k in c.params}
    else:
        step = adam.step + 1
        m = {k: adam.beta1 * adam.m[k] + (1 - adam.beta1) * grad[k] for k in grad}
        v = {k: adam.beta2 * adam.v[k] + (1 - adam.beta2) * grad[k] ** 2 for k in grad}
        c1, c2 = 1 - adam.beta1 ** step, 1 - adam.beta2 ** step
        params = {
            k: c.params[k] + lr * (m[k] / c1) / (np.sqrt(v[k] / c2) + adam.eps) for k in c.params
        }
        adam = AdamState(m, v, step, adam.beta1, adam.beta2, adam.eps)
    mean_reward = float(np.mean([t.reward for t in batch]))
    new_baseline = baseline_decay * baseline + (1 - baseline_decay) * mean_reward
    return UpdateResult(c.with_params(params), new_baseline, adam, value)


# -- search loop ------------------------------------------------------------

def random_policy(rng: np.random.Generator) -> Policy:
    trace = [int(rng.integers(HEAD_SIZES[head_of(t)])) for t in range(N_STEPS)]
    return decode(trace)


@dataclass
class SearchState:
    """Everything needed to resume a search exactly."""

    algo: str
    seed: int
    controller: Optional[Controller] = None
    adam: Optional[AdamState] = None
    baseline: Optional[float] = None
    iteration: int = 0
    evaluations: int = 0
    best_policy: Optional[Policy] = None
    best_reward: float = -math.inf
    history: list = field(default_factory=list)
    config: dict = field(default_factory=dict)


class SearchResult(NamedTuple):
    best_policy: Policy
    best_reward: float
    history: list  # (iteration, reward), one entry per evaluated policy
    state: SearchState

    @property
    def greedy_policy(self) -> Optional[Policy]:
        c = self.state.controller
        return None if c is None else controller_greedy(c)


def _evaluate(evaluator: RewardEvaluator, policies: Sequence[Policy], workers: int) -> list[float]:
    def one(policy):
        try:
            reward = float(evaluator(policy))
        except Exception as exc:
            raise SearchError(f"evaluator failed: {exc}", policy) from exc
        if not math.isfinite(reward):
            raise SearchError(f"evaluator returned non-finite reward {reward}", policy)
        return reward

    if workers <= 1 or len(policies) <= 1:
        return [one(p) for p in policies]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, policies))


def _record(state: SearchState, policies, rewards) -> None:
    for policy, reward in zip(policies, rewards):
        state.history.append((state.iteration, reward))
        if reward > state.best_reward:
            state.best_reward, state.best_policy = reward, policy
        state.evaluations += 1


def new_state(algo: str, seed: int, lr: float = 0.00035, batch_size: int = 8, clip_eps: float = 0.2,
              epochs: int = 4, hidden: int = 64, embed: int = 32) -> SearchState:
    if algo not in ("ppo", "random"):
        raise ValueError(f"unknown search algorithm {algo!r}")
    config = {"lr": lr, "batch_size": batch_size, "clip_eps": clip_eps, "epochs": epochs,
              "hidden": hidden, "embed": embed}
    state = SearchState(algo, int(seed), config=config)
    if algo == "ppo":
        state.controller = Controller.init(seed, hidden, embed)
        state.adam = AdamState.for_controller(state.controller)
    return state


def resume(state: SearchState, evaluator: RewardEvaluator, budget: int, workers: int = 1) -> SearchResult:
    """Continue ``state`` until ``budget`` search iterations have run in total.

    A PPO iteration evaluates one batch of controller samples and updates the
    controller; a random-search iteration evaluates one uniform policy.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    cfg = state.config
    while state.iteration < budget:
        rng = np.random.default_rng([state.seed, state.iteration])
        if state.algo == "random":
            policies = [random_policy(rng)]
            _record(state, policies, _evaluate(evaluator, policies, workers))
        else:
            samples = [controller_sample(state.controller, rng) for _ in range(cfg["batch_size"])]
            policies = [s[0] for s in samples]
            rewards = _evaluate(evaluator, policies, workers)
            _record(state, policies, rewards)
            batch = [Trajectory(trace, logp, r) for (_, logp, trace), r in zip(samples, rewards)]
            if state.baseline is None:
                state.baseline = float(np.mean(rewards))
            baseline = state.baseline
            for _ in range(cfg["epochs"]):
                res = ppo_update(state.controller, batch, baseline, cfg["clip_eps"], cfg["lr"], state.adam)
                state.controller, state.adam = res.controller, res.adam
            state.baseline = res.baseline
        state.iteration += 1
    return SearchResult(state.best_policy, state.best_reward, list(state.history), state)


def search(evaluator: RewardEvaluator, budget: int, algo: str = "ppo", seed: int = 0,
           lr: float = 0.00035, batch_size: int = 8, clip_eps: float = 0.2, epochs: int = 4,
           workers: int = 1) -> SearchResult:
    """Search for the best-rewarded policy within ``budget`` iterations."""
    state = new_state(algo, seed, lr=lr, batch_size=batch_size, clip_eps=clip_eps, epochs=epochs)
    return resume(state, evaluator, budget, workers)


# -- evaluators -------------------------------------------------------------

class SyntheticReward:
    """Separable reward: fraction of the 10 slots whose kind is ``target``."""

    def __init__(self, target: str = "TranslateX"):
        if target not in OPS:
            raise ValueError(f"unknown op {target!r}")
        self.target = target

    def __call__(self, policy: Policy) -> float:
        slots = policy.slots()
        return sum(op.kind == self.target for op in slots) / len(slots)


# -- checkpoints ------------------------------------------------------------

def _arrays_to_json(arrays: dict) -> dict:
    return {k: {"shape": list(v.shape), "data": [float(x) for x in v.ravel()]} for k, v in sorted(arrays.items())}


def _arrays_from_json(d: dict) -> dict:
    return {k: np.array(e["data"], dtype=float).reshape(e["shape"]) for k, e in d.items()}


def state_to_json(state: SearchState) -> dict:
    out = {
        "algo": state.algo,
        "seed": state.seed,
        "iteration": state.iteration,
        "evaluations": state.evaluations,
        "baseline": state.baseline,
        "best_reward": state.best_reward if state.best_policy is not None else None,
        "best_policy": state.best_policy.to_json() if state.best_policy is not None else None,
        "history": [[i, r] for i, r in state.history],
        "config": state.config,
        "controller": None,
        "adam": None,
    }
    if state.controller is not None:
        out["controller"] = _arrays_to_json(state.controller.params)
    if state.adam is not None:
        out["adam"] = {"step": state.adam.step, "m": _arrays_to_json(state.adam.m),
                       "v": _arrays_to_json(state.adam.v)}
    return out


def state_from_json(d: dict) -> SearchState:
    cfg = d["config"]
    state = SearchState(d["algo"], int(d["seed"]), config=cfg)
    state.iteration, state.evaluations = int(d["iteration"]), int(d["evaluations"])
    state.baseline = d["baseline"]
    state.history = [(int(i), float(r)) for i, r in d["history"]]
    if d.get("best_policy") is not None:
        state.best_policy = Policy.from_json(d["best_policy"])
        state.best_reward = float(d["best_reward"])
    if d.get("controller") is not None:
        state.controller = Controller(_arrays_from_json(d["controller"]), cfg["hidden"], cfg["embed"])
    if d.get("adam") is not None:
        state.adam = AdamState(_arrays_from_json(d["adam"]["m"]), _arrays_from_json(d["adam"]["v"]),
                               int(d["adam"]["step"]))
    return state


def save_checkpoint(state: SearchState, path) -> None:
    path = Path(path)
    text = json.dumps(state_to_json(state), sort_keys=True) + "\n"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    with os.fdopen(fd, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def load_checkpoint(path) -> SearchState:
    return state_from_json(json.loads(Path(path).read_text()))
