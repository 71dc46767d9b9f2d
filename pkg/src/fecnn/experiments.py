"""Experiment drivers behind the command line: sweeps, bit statistics,
two-phase degradation curves and single training runs.

Everything here returns plain rows (lists of dicts); writing them out is the
CLI's job.
"""

import hashlib
import json
import statistics

import numpy as np

from . import codec, ddpg, kernels
from . import ecc as ecc_mod
from .channel import ChannelSpec, inject
from .scheme import baseline_for_target

EVAL_STREAM = 0xE7A1
PHASE1_STREAM = 0x0F1
PHASE2_STREAM = 0x0F2

SCENARIOS = (
    "oneToZero_then_zeroToOne",
    "zeroToOne_then_oneToZero",
    "setdiff_TopBits_first",
    "setdiff_BitMask_first",
)

SWEEP_COLUMNS = ("method", "target_r", "achieved_r", "mean_P", "std_P", "stderr_P", "trials", "bits_per_layer", "seed", "config_hash")
BITSTATS_COLUMNS = ("position", "p0", "p1", "seed", "config_hash")
TWOPHASE_COLUMNS = ("scenario", "phase", "step", "p", "mean_P", "std_P", "trials", "seed", "config_hash")
EVAL_COLUMNS = ("plan", "ber", "achieved_r", "mean_P", "std_P", "stderr_P", "trials", "seed", "config_hash")


def config_hash(config):
    """Short stable digest of a JSON-serialisable config."""
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def eval_channel(p, seed):
    """Channel shared by every method evaluated under master seed ``seed``."""
    return ChannelSpec(p, seed=kernels.derive_seed(seed, EVAL_STREAM))


# ------------------------------------------------------------------ sweep


def train_plan(pe, ecc, p, cfg, select_trials=None):
    env = ddpg.NetworkEnv(pe, ecc, p, seed=cfg.seed, select_trials=select_trials or cfg.select_trials)
    return ddpg.run_optimization(env, cfg)


def sweep(pe, ecc, p, grid, methods, trials, seed, train_cfg=None, on_plan=None):
    """Rows of (method, target_r, ...) for every grid point and method.

    Learned methods train with ``train_cfg`` (mode and target overridden per
    row). All methods are scored on the same evaluation channel seeds.
    """
    cfg_dict = {
        "kind": "sweep",
        "ecc": str(ecc),
        "ber": p,
        "grid": list(grid),
        "methods": list(methods),
        "trials": trials,
        "seed": seed,
        "train": ddpg.config_to_dict(train_cfg) if train_cfg else None,
    }
    digest = config_hash(cfg_dict)
    chan = eval_channel(p, seed)
    rows = []
    for target in grid:
        for method in methods:
            if method == "baseline":
                plan = baseline_for_target(target, pe.layer_sizes, pe.m, ecc, p)
            else:
                base = train_cfg or ddpg.TrainConfig()
                cfg = ddpg.TrainConfig(**{**ddpg.config_to_dict(base), "mode": method, "target_r": target, "seed": seed})
                plan = train_plan(pe, ecc, p, cfg).plan
            if on_plan is not None:
                on_plan(method, target, plan)
            res = pe.evaluate(plan, chan, trials)
            rows.append(
                {
                    "method": method,
                    "target_r": target,
                    "achieved_r": res.r,
                    "mean_P": res.mean,
                    "std_P": res.std,
                    "stderr_P": res.stderr,
                    "trials": trials,
                    "bits_per_layer": "/".join(str(c) for c in plan.bit_counts()),
                    "seed": seed,
                    "config_hash": digest,
                }
            )
    return rows


# ------------------------------------------------------------------ bit statistics


def bit_distribution(model, rep):
    """P[bit = 1] at every bit position, pooled over all weights of the model."""
    bits = codec.model_to_bits(model, rep)
    stacked = np.concatenate(bits, axis=0)
    return stacked.mean(axis=0)


def bitstats(model, rep, seed=0):
    digest = config_hash({"kind": "bitstats", "repr": str(rep), "seed": seed})
    p1 = bit_distribution(model, rep)
    return [
        {"position": j, "p0": 1.0 - float(v), "p1": float(v), "seed": seed, "config_hash": digest}
        for j, v in enumerate(p1)
    ]


# ------------------------------------------------------------------ two-phase curves


def _flips(bits, region, chan):
    """Per-layer XOR masks of the errors ``chan`` puts on ``region`` (1 = exposed)."""
    prot = [np.asarray(1 - r, dtype=np.uint8) for r in region]
    return [a ^ b for a, b in zip(inject(bits, prot, chan), bits)]


def _region(masks, sizes):
    return [np.broadcast_to(np.asarray(mk, dtype=np.uint8), (int(n), len(mk))).copy() for mk, n in zip(masks, sizes)]


def scenario_setup(scenario, n_layers, m, plan_a=None, plan_b=None, exposed=None):
    """(phase-1 direction, phase-1 masks, phase-2 direction, phase-2 masks).

    Directional scenarios expose every bit (or ``exposed`` masks when given).
    Set-difference scenarios expose S_TopBits - S_BitMask and the reverse,
    where ``plan_a`` is the TopBits plan and ``plan_b`` the BitMask plan.
    """
    full = np.ones((n_layers, m), dtype=np.uint8) if exposed is None else np.asarray(exposed, dtype=np.uint8)
    if scenario == "oneToZero_then_zeroToOne":
        return "one_to_zero_only", full, "zero_to_one_only", full
    if scenario == "zeroToOne_then_oneToZero":
        return "zero_to_one_only", full, "one_to_zero_only", full
    if scenario not in SCENARIOS:
        raise ValueError(f"unknown scenario {scenario!r}; expected one of {SCENARIOS}")
    if plan_a is None or plan_b is None:
        raise ValueError(f"{scenario} needs a TopBits plan and a BitMask plan")
    a, b = np.asarray(plan_a.masks), np.asarray(plan_b.masks)
    top_only = (a & (1 - b)).astype(np.uint8)
    mask_only = (b & (1 - a)).astype(np.uint8)
    if scenario == "setdiff_TopBits_first":
        return "symmetric", top_only, "symmetric", mask_only
    return "symmetric", mask_only, "symmetric", top_only


def twophase(pe, scenario, p_max, steps, trials, seed, plan_a=None, plan_b=None, exposed=None):
    """Accuracy while errors grow 0 -> p_max in phase 1, then again in phase 2
    on top of the frozen phase-1 corruption at p_max.

    Both phases draw from fixed per-trial seeds, so error sets are nested as
    p grows. Phase-2 errors are independent of phase 1 and are unioned with
    it (XOR masks are OR-ed against the clean bits).
    """
    sizes = pe.layer_sizes
    d1, m1, d2, m2 = scenario_setup(scenario, len(sizes), pe.m, plan_a, plan_b, exposed)
    r1, r2 = _region(m1, sizes), _region(m2, sizes)
    digest = config_hash(
        {
            "kind": "twophase",
            "scenario": scenario,
            "p_max": p_max,
            "steps": steps,
            "trials": trials,
            "seed": seed,
            "m1": m1.tolist(),
            "m2": m2.tolist(),
        }
    )
    ps = [p_max * k / steps for k in range(steps + 1)]
    s1 = kernels.derive_seed(seed, PHASE1_STREAM)
    s2 = kernels.derive_seed(seed, PHASE2_STREAM)
    clean = pe.bits
    acc = np.zeros((2, steps + 1, trials))
    for t in range(trials):
        frozen = _flips(clean, r1, ChannelSpec(p_max, d1, s1).for_trial(t))
        for k, p in enumerate(ps):
            f1 = _flips(clean, r1, ChannelSpec(p, d1, s1).for_trial(t))
            acc[0, k, t] = pe.accuracy_from_bits([b ^ f for b, f in zip(clean, f1)])
            f2 = _flips(clean, r2, ChannelSpec(p, d2, s2).for_trial(t))
            acc[1, k, t] = pe.accuracy_from_bits([b ^ (f | g) for b, f, g in zip(clean, frozen, f2)])
    rows = []
    for phase in (0, 1):
        for k, p in enumerate(ps):
            a = acc[phase, k]
            rows.append(
                {
                    "scenario": scenario,
                    "phase": phase + 1,
                    "step": k,
                    "p": p,
                    "mean_P": float(statistics.mean(a.tolist())),
                    "std_P": statistics.stdev(a.tolist()) if trials > 1 else 0.0,
                    "trials": trials,
                    "seed": seed,
                    "config_hash": digest,
                }
            )
    return rows


def exponent_masks(n_layers, m=codec.FLOAT_BITS):
    """Masks selecting the eight float32 exponent positions in every layer."""
    masks = np.zeros((n_layers, m), dtype=np.uint8)
    masks[:, 1:9] = 1
    return masks


# ------------------------------------------------------------------ single-plan evaluation


def evaluate_plan_rows(pe, plan, p, trials, seed, name="plan"):
    digest = config_hash({"kind": "eval-plan", "masks": plan.masks.tolist(), "ecc": str(plan.ecc), "ber": p, "trials": trials, "seed": seed})
    res = pe.evaluate(plan, eval_channel(p, seed), trials)
    return [
        {
            "plan": name,
            "ber": p,
            "achieved_r": res.r,
            "mean_P": res.mean,
            "std_P": res.std,
            "stderr_P": res.stderr,
            "trials": trials,
            "seed": seed,
            "config_hash": digest,
        }
    ]


def unprotected_curve(pe, bers, trials, seed):
    """Mean accuracy of the unprotected model at each flip probability."""
    empty = np.zeros((len(pe.layer_sizes), pe.m), dtype=np.uint8)
    out = []
    for p in bers:
        chan = eval_channel(p, seed)
        accs = [pe.trial(empty, ecc_mod.EccSpec(), chan.for_trial(t)) for t in range(trials)]
        out.append((p, float(statistics.mean(accs)), statistics.stdev(accs) if trials > 1 else 0.0))
    return out


def isotonic_decreasing(y):
    """Least-squares non-increasing fit (pool adjacent violators)."""
    blocks = []
    for v in y:
        blocks.append([float(v), 1])
        while len(blocks) > 1 and blocks[-2][0] < blocks[-1][0]:
            v2, n2 = blocks.pop()
            v1, n1 = blocks.pop()
            blocks.append([(v1 * n1 + v2 * n2) / (n1 + n2), n1 + n2])
    out = []
    for v, n in blocks:
        out.extend([v] * n)
    return np.array(out)
