"""Offline training of the desk-scale reference CNN (needs torch; not a package dependency).

Usage: python scripts/train_reference.py [out_path]

Architecture: conv 1->8 5x5 + ReLU + pool2, conv 8->16 5x5 + ReLU + pool2,
fc 256->32 + ReLU, fc 32->10. Weights are saved as float32 in the fecnn
model format and the clean test accuracy is checked with fecnn's own engine.
"""

import sys

import numpy as np
import torch
from torch import nn

from fecnn.nn import REFERENCE_MODEL, conv_layer, evaluate_accuracy, fc_layer, load_dataset, save_model
from fecnn.nn import NetworkModel


def build():
    return nn.Sequential(
        nn.Conv2d(1, 8, 5), nn.ReLU(), nn.MaxPool2d(2),
        nn.Conv2d(8, 16, 5), nn.ReLU(), nn.MaxPool2d(2),
        nn.Flatten(),
        nn.Linear(256, 32), nn.ReLU(),
        nn.Linear(32, 10),
    )


def shift_batch(x, gen, max_shift=2):
    out = torch.zeros_like(x)
    for i in range(x.shape[0]):
        dy, dx = (torch.randint(-max_shift, max_shift + 1, (2,), generator=gen)).tolist()
        out[i] = torch.roll(x[i], shifts=(dy, dx), dims=(1, 2))
    return out


def to_fecnn(net):
    c1, c2, f1, f2 = net[0], net[3], net[7], net[9]
    g = lambda t: t.detach().numpy().astype(np.float32).astype(np.float64)
    layers = [
        conv_layer(1, 8, 5, 28, g(c1.weight), g(c1.bias), pool=2),
        conv_layer(8, 16, 5, 12, g(c2.weight), g(c2.bias), pool=2),
        fc_layer(256, 32, g(f1.weight), g(f1.bias)),
        fc_layer(32, 10, g(f2.weight), g(f2.bias), activation="none"),
    ]
    return NetworkModel(layers, 10, (28, 28, 1))


def main(out=REFERENCE_MODEL):
    torch.manual_seed(7)
    gen = torch.Generator().manual_seed(7)
    train, test = load_dataset(split="train"), load_dataset(split="test")
    xtr = torch.tensor(train.images.transpose(0, 3, 1, 2) / 255.0, dtype=torch.float32)
    ytr = torch.tensor(train.labels)
    net = build()
    opt = torch.optim.Adam(net.parameters(), lr=2e-3)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=60)
    for epoch in range(60):
        perm = torch.randperm(len(ytr), generator=gen)
        net.train()
        for s in range(0, len(perm), 64):
            idx = perm[s : s + 64]
            loss = nn.functional.cross_entropy(net(shift_batch(xtr[idx], gen)), ytr[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
        sched.step()
        if epoch % 10 == 9:
            acc = evaluate_accuracy(to_fecnn(net), test)
            print(f"epoch {epoch + 1}: test accuracy {acc:.4f}")
    model = to_fecnn(net)
    save_model(model, out)
    print(f"saved {out}: clean test accuracy {evaluate_accuracy(model, test):.4f}")


if __name__ == "__main__":
    main(*sys.argv[1:2])
