"""Plain SGD and Adam over a dict of named numpy arrays, updated in place."""

import numpy as np


class SGD:
    def __init__(self, learning_rate=1e-2):
        self.learning_rate = learning_rate
        self.steps = 0

    def step(self, params, grads):
        for name, g in grads.items():
            params[name] -= self.learning_rate * g
        self.steps += 1

    def state_arrays(self):
        return {}

    def header(self):
        return {"kind": "sgd", "steps": self.steps}

    def load(self, header, arrays):
        self.steps = header["steps"]


class Adam:
    def __init__(self, learning_rate=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.learning_rate = learning_rate
        self.betas = tuple(betas)
        self.eps = eps
        self.m = {}
        self.v = {}
        self.steps = 0

    def step(self, params, grads):
        """One bias-corrected Adam update of every entry of ``grads``."""
        self.steps += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1 ** self.steps
        c2 = 1.0 - b2 ** self.steps
        for name, g in grads.items():
            if name not in self.m:
                self.m[name] = np.zeros_like(g)
                self.v[name] = np.zeros_like(g)
            m, v = self.m[name], self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            params[name] -= self.learning_rate * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state_arrays(self):
        out = {}
        for name in sorted(self.m):
            out[f"m.{name}"] = self.m[name]
            out[f"v.{name}"] = self.v[name]
        return out

    def header(self):
        return {"kind": "adam", "steps": self.steps}

    def load(self, header, arrays):
        self.steps = header["steps"]
        for key, arr in arrays.items():
            slot, name = key.split(".", 1)
            getattr(self, slot)[name] = np.array(arr)


def make_optimizer(kind, learning_rate, betas=(0.9, 0.999), eps=1e-8):
    if kind == "adam":
        return Adam(learning_rate, betas, eps)
    if kind == "sgd":
        return SGD(learning_rate)
    raise ValueError(f"unknown optimizer {kind!r}")
