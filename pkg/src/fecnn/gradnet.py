"""Dense ReLU networks with hand-written backprop, Adam and soft target updates.

Used for the actor, critic and their target copies. All parameters are
float64 arrays; weight matrices are stored (fan_in, fan_out) so a batch
forward pass is ``x @ W + b``.
"""

import numpy as np

CHECKPOINT_VERSION = 1


class MLP:
    def __init__(self, sizes, output="identity", seed=0, final_scale=1.0):
        if output not in ("identity", "sigmoid"):
            raise ValueError(f"unknown output activation {output!r}")
        self.sizes = tuple(int(s) for s in sizes)
        self.output = output
        rng = np.random.default_rng(seed)
        self.weights = []
        self.biases = []
        for i, (fan_in, fan_out) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            bound = 1.0 / np.sqrt(fan_in)
            scale = final_scale if i == len(self.sizes) - 2 else 1.0
            self.weights.append(rng.uniform(-bound, bound, (fan_in, fan_out)) * scale)
            self.biases.append(rng.uniform(-bound, bound, fan_out) * scale)

    @property
    def params(self):
        return self.weights + self.biases

    def copy(self):
        other = MLP.__new__(MLP)
        other.sizes = self.sizes
        other.output = self.output
        other.weights = [w.copy() for w in self.weights]
        other.biases = [b.copy() for b in self.biases]
        return other

    def logits(self, acts):
        """Final pre-activation recovered from cached activations."""
        return acts[-2] @ self.weights[-1] + self.biases[-1]

    def forward(self, x, cache=False):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.sizes[0]:
            raise ValueError(f"input width {x.shape[-1]} != {self.sizes[0]}")
        acts = [x]
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = x @ w + b
            if i < last:
                x = np.maximum(z, 0.0)
            elif self.output == "sigmoid":
                x = 1.0 / (1.0 + np.exp(-np.clip(z, -500.0, 500.0)))
            else:
                x = z
            acts.append(x)
        return (x, acts) if cache else x

    __call__ = forward

    def backward(self, grad_out, acts, grad_pre=None):
        """Reverse pass from dLoss/dOutput.

        ``grad_pre`` is an optional extra gradient on the final layer's
        pre-activation (for penalties on logits). Returns
        ``(weight_grads, bias_grads, input_grad)``.
        """
        g = np.asarray(grad_out, dtype=np.float64)
        n = len(self.weights)
        gw = [None] * n
        gb = [None] * n
        for i in range(n - 1, -1, -1):
            out = acts[i + 1]
            if i == n - 1:
                if self.output == "sigmoid":
                    g = g * out * (1.0 - out)
                if grad_pre is not None:
                    g = g + grad_pre
            else:
                g = g * (out > 0.0)
            inp = acts[i]
            gw[i] = inp.reshape(-1, inp.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            gb[i] = g.reshape(-1, g.shape[-1]).sum(axis=0)
            g = g @ self.weights[i].T
        return gw, gb, g


def net_forward(net, x):
    return net.forward(x)


def net_gradient(net, grad_out, acts):
    return net.backward(grad_out, acts)


class Adam:
    """Adaptive moment estimation over a net's parameter list."""

    def __init__(self, net, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in net.params]
        self.v = [np.zeros_like(p) for p in net.params]
        self.t = 0

    def step(self, net, weight_grads, bias_grads):
        self.t += 1
        grads = list(weight_grads) + list(bias_grads)
        params = net.params
        if len(grads) != len(params):
            raise ValueError("gradient list does not match parameters")
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            if g.shape != p.shape:
                raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape}")
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def optimizer_step(net, opt, weight_grads, bias_grads):
    opt.step(net, weight_grads, bias_grads)
    return net


def soft_update(target, source, delta):
    """target <- target + delta * (source - target), parameter-wise, in place."""
    if target.sizes != source.sizes or target.output != source.output:
        raise ValueError("soft update between different architectures")
    for t, s in zip(target.params, source.params):
        if delta == 1.0:
            t[...] = s  # exact copy; t + (s - t) can be off by one ulp
        else:
            t += delta * (s - t)
    return target


def save_checkpoint(path, nets):
    """Store named nets in one ``.npz`` file (layout version CHECKPOINT_VERSION)."""
    arrays = {"format_version": np.array(CHECKPOINT_VERSION)}
    for name, net in nets.items():
        arrays[f"{name}/sizes"] = np.array(net.sizes)
        arrays[f"{name}/output"] = np.array(net.output)
        for i, (w, b) in enumerate(zip(net.weights, net.biases)):
            arrays[f"{name}/W{i}"] = w
            arrays[f"{name}/b{i}"] = b
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path):
    data = np.load(path)
    if int(data["format_version"]) != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {int(data['format_version'])}")
    names = sorted({k.split("/")[0] for k in data.files if "/" in k})
    nets = {}
    for name in names:
        net = MLP.__new__(MLP)
        net.sizes = tuple(int(s) for s in data[f"{name}/sizes"])
        net.output = str(data[f"{name}/output"])
        n = len(net.sizes) - 1
        net.weights = [data[f"{name}/W{i}"].copy() for i in range(n)]
        net.biases = [data[f"{name}/b{i}"].copy() for i in range(n)]
        nets[name] = net
    return nets
