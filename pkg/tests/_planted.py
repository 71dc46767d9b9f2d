"""Synthetic environment whose reward peaks at protecting exactly bit 1 of every layer."""

import numpy as np

from fecnn import ddpg, nn
from fecnn.ecc import EccSpec

PLANTED_CONFIG = dict(
    mode="bitmask",
    target_r=1.0,
    iterations=300,
    init_action=0.2,
    updates_per_iter=8,
    warmup=150,
    logit_l2=1.0,
    logit_bound=3.0,
)


class PlantedEnv:
    def __init__(self, model=None, m=32):
        model = model or nn.load_model()
        self.metas = nn.layer_metadata(model)
        self.layer_sizes = model.layer_sizes
        self.m = m
        self.ecc = EccSpec()
        self.p = 0.01
        self.perf0 = 1.0
        self.target = np.zeros((len(self.layer_sizes), m), dtype=np.uint8)
        self.target[:, 1] = 1

    def score(self, masks):
        """1 minus the fraction of mask bits that differ from the planted optimum."""
        return 1.0 - np.abs(masks.astype(int) - self.target).sum() / self.target.size

    def reward(self, masks, r, iteration):
        s = self.score(masks)
        return s, s

    def performance(self, masks, iteration):
        return self.score(masks)

    def final_score(self, masks):
        return self.score(masks)


def planted_run(seed, **overrides):
    env = PlantedEnv()
    cfg = ddpg.TrainConfig(**{**PLANTED_CONFIG, "seed": seed, **overrides})
    res = ddpg.run_optimization(env, cfg, reward_fn=env.reward)
    return env, res
