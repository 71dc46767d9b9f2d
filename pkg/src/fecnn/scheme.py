"""Selective protection plans: masks, TopBits adjustment, rewards, evaluation."""

import math
import statistics
from dataclasses import dataclass, field

import numpy as np

from . import codec, ecc as ecc_mod
from .nn import Evaluator

PLAN_HEADER = "# fecnn protection plan v1"


@dataclass
class ProtectionPlan:
    masks: np.ndarray  # (N, m) uint8
    ecc: ecc_mod.EccSpec = field(default_factory=ecc_mod.EccSpec)
    target_r: float | None = None

    def __post_init__(self):
        self.masks = np.asarray(self.masks, dtype=np.uint8)
        if self.masks.ndim != 2:
            raise ValueError("plan masks must be an (N, m) array")
        if np.any(self.masks > 1):
            raise ValueError("plan masks must be 0/1")

    @property
    def n_layers(self):
        return self.masks.shape[0]

    @property
    def m(self):
        return self.masks.shape[1]

    def redundancy(self, layer_sizes, p=None):
        return ecc_mod.redundancy(list(self.masks), layer_sizes, self.m, self.ecc, p)

    def bit_counts(self):
        return self.masks.sum(axis=1).astype(int).tolist()

    def key(self):
        return self.masks.tobytes()


@dataclass(frozen=True)
class RewardParams:
    beta_plus: float = 1.0
    beta_minus: float = 0.05
    gamma: float = 1.0
    baseline_decay: float = 0.95

    def __post_init__(self):
        if self.beta_plus <= 0 or self.beta_minus <= 0:
            raise ValueError("penalty coefficients must be positive")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("discount must lie in [0, 1]")


@dataclass(frozen=True)
class EvaluationResult:
    mean: float
    std: float
    r: float
    accuracies: tuple = ()

    @property
    def stderr(self):
        n = len(self.accuracies)
        return self.std / math.sqrt(n) if n else 0.0


# ------------------------------------------------------------------ plans


def topbits_masks(counts, m):
    counts = np.asarray(counts, dtype=int)
    return (np.arange(m)[None, :] < counts[:, None]).astype(np.uint8)


def baseline_plan(t, n_layers, m, ecc=None, target_r=None):
    """Every layer protects its first ``t`` bit positions."""
    if not 0 <= t <= m:
        raise ValueError(f"baseline bit count must lie in [0, {m}], got {t}")
    return ProtectionPlan(topbits_masks([t] * n_layers, m), ecc or ecc_mod.EccSpec(), target_r)


def baseline_for_target(target_r, layer_sizes, m, ecc, p):
    """Largest uniform prefix whose redundancy stays within ``target_r``."""
    best = 0
    for t in range(m + 1):
        plan = baseline_plan(t, len(layer_sizes), m, ecc, target_r)
        if plan.redundancy(layer_sizes, p).r <= target_r:
            best = t
    return baseline_plan(best, len(layer_sizes), m, ecc, target_r)


def topbits_adjust(actions, layer_sizes, m, ecc, p, target_r):
    """Second TopBits round: decrement layers in order until r <= target_r.

    Sweeps restart from the first layer when one pass is not enough; every
    count floors at 0.
    """
    a = [int(v) for v in actions]

    def r_of(counts):
        return ecc_mod.redundancy(list(topbits_masks(counts, m)), layer_sizes, m, ecc, p).r

    r = r_of(a)
    while r > target_r and any(a):
        for i in range(len(a)):
            if a[i] > 0:
                a[i] -= 1
                r = r_of(a)
                if r <= target_r:
                    break
    return a


# ------------------------------------------------------------------ rewards


def reward_topbits(perf, perf0):
    return perf - perf0


def redundancy_penalty(r, target_r, params):
    """Always <= 0; zero only at r == target_r."""
    if r >= target_r:
        return params.beta_plus * (target_r - r)
    return params.beta_minus * (r - target_r)


def reward_bitmask(perf, perf0, r, target_r, params):
    return perf - perf0 + redundancy_penalty(r, target_r, params)


# ------------------------------------------------------------------ evaluation


class PlanEvaluator:
    """Monte-Carlo accuracy of a model under channel noise and a protection plan.

    The clean bit matrices, the fixed-point scale (if any) and the evaluation
    inputs are prepared once; each trial only re-runs injection, decoding and
    the forward pass.
    """

    def __init__(self, model, dataset, rep, limit=None):
        self.model = model
        self.rep = rep
        self.fixed = rep.resolve(model.weights())
        self.bits = codec.model_to_bits(model, rep, self.fixed)
        self.evaluator = Evaluator(model, dataset, limit)
        self.clean_model = codec.bits_to_model(model, self.bits, rep, self.fixed)
        self.perf0 = self.evaluator.accuracy(self.clean_model)

    @property
    def layer_sizes(self):
        return self.model.layer_sizes

    @property
    def m(self):
        return self.rep.m

    def corrupted_bits(self, masks, ecc, chan):
        return ecc_mod.simulate_protection(self.bits, masks, ecc, chan)

    def accuracy_from_bits(self, bits):
        return self.evaluator.accuracy(codec.bits_to_model(self.model, bits, self.rep, self.fixed))

    def trial(self, masks, ecc, chan):
        return self.accuracy_from_bits(self.corrupted_bits(masks, ecc, chan))

    def evaluate(self, plan, chan, trials):
        if trials < 1:
            raise ValueError("need at least one trial")
        accs = [self.trial(plan.masks, plan.ecc, chan.for_trial(t)) for t in range(trials)]
        # exact summation so identical trials give exactly their value and zero spread
        std = statistics.stdev(accs) if trials > 1 else 0.0
        r = plan.redundancy(self.layer_sizes, chan.p).r
        return EvaluationResult(float(statistics.mean(accs)), std, r, tuple(accs))


def evaluate_plan(model, plan, chan, dataset, trials=100, limit=None, rep=None):
    """Mean/stddev accuracy over ``trials`` seeded noise draws."""
    ev = PlanEvaluator(model, dataset, rep or codec.Representation(), limit)
    return ev.evaluate(plan, chan, trials)


def pooled_stderr(a, b):
    """Standard error of mean(a) - mean(b) for two EvaluationResults."""
    return math.sqrt(a.stderr**2 + b.stderr**2)


# ------------------------------------------------------------------ serialisation


def format_plan(plan, layer_sizes, p=None):
    rep = plan.redundancy(layer_sizes, p)
    lines = [
        PLAN_HEADER,
        f"ecc = {plan.ecc}",
        f"m = {plan.m}",
        f"p = {'none' if p is None else repr(float(p))}",
        f"target_r = {'none' if plan.target_r is None else repr(float(plan.target_r))}",
        f"achieved_r = {rep.r!r}",
        "layer_sizes = " + ",".join(str(int(s)) for s in layer_sizes),
    ]
    for i, mask in enumerate(plan.masks):
        lines.append(f"mask {i} = {codec.format_bits(mask)}")
    return "\n".join(lines) + "\n"


def parse_plan(text):
    """Inverse of :func:`format_plan`; returns (plan, layer_sizes, p, achieved_r)."""
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != PLAN_HEADER:
        raise ValueError("not a fecnn protection plan")
    fields, masks = {}, {}
    for ln in lines[1:]:
        key, _, value = (part.strip() for part in ln.partition("="))
        if key.startswith("mask "):
            masks[int(key.split()[1])] = codec.parse_bits(value)
        else:
            fields[key] = value
    opt = lambda v: None if v == "none" else float(v)
    m = int(fields["m"])
    rows = [masks[i] for i in range(len(masks))]
    if any(len(row) != m for row in rows):
        raise ValueError("mask length does not match m")
    plan = ProtectionPlan(np.array(rows, dtype=np.uint8).reshape(len(rows), m), ecc_mod.EccSpec.parse(fields["ecc"]), opt(fields["target_r"]))
    sizes = [int(s) for s in fields["layer_sizes"].split(",")]
    return plan, sizes, opt(fields["p"]), float(fields["achieved_r"])


def save_plan(path, plan, layer_sizes, p=None):
    with open(path, "w") as fh:
        fh.write(format_plan(plan, layer_sizes, p))


def load_plan(path):
    with open(path) as fh:
        return parse_plan(fh.read())

