"""Parameter containers: a minimal Module tree, dense layers and MLPs."""

import numpy as np

from . import tensor as tn
from .tensor import Parameter


class Module:
    """Walks its attributes to find parameters and child modules.

    Names are dotted attribute paths.  A parameter reachable along several
    paths (shared layers) is reported once, under the first path in attribute
    declaration order, so optimisers update it exactly once per step.
    """

    training = True

    def _walk(self, prefix, seen_modules):
        if id(self) in seen_modules:
            return
        seen_modules.add(id(self))
        for key, value in vars(self).items():
            if key.startswith("_"):
                continue
            if isinstance(value, Parameter):
                yield prefix + key, value
            elif isinstance(value, Module):
                yield from value._walk(f"{prefix}{key}.", seen_modules)
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item._walk(f"{prefix}{key}.{i}.", seen_modules)
                    elif isinstance(item, Parameter):
                        yield f"{prefix}{key}.{i}", item

    def named_parameters(self, prefix=""):
        seen = set()
        for name, p in self._walk(prefix, set()):
            if id(p) not in seen:
                seen.add(id(p))
                yield name, p

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def n_parameters(self):
        return int(np.sum([p.size for p in self.parameters()], dtype=np.int64))

    def modules(self):
        seen = set()
        stack = [self]
        while stack:
            m = stack.pop()
            if id(m) in seen:
                continue
            seen.add(id(m))
            yield m
            for value in vars(m).values():
                if isinstance(value, Module):
                    stack.append(value)
                elif isinstance(value, (list, tuple)):
                    stack.extend(v for v in value if isinstance(v, Module))

    def train(self, mode=True):
        for m in self.modules():
            m.training = mode
        return self

    def eval(self):
        return self.train(False)

    def state_dict(self):
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state):
        params = dict(self.named_parameters())
        missing = set(params) - set(state)
        unexpected = set(state) - set(params)
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={sorted(missing)} "
                           f"unexpected={sorted(unexpected)}")
        for name, p in params.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != p.shape:
                raise ValueError(f"{name}: shape {value.shape} != {p.shape}")
            p.data[...] = value


class Linear(Module):
    """``x @ W + b`` with uniform fan-in initialisation and zero bias."""

    def __init__(self, n_in, n_out, rng):
        bound = 1.0 / np.sqrt(n_in)
        self.W = Parameter(rng.uniform(-bound, bound, size=(n_in, n_out)))
        self.b = Parameter(np.zeros(n_out))

    @property
    def n_in(self):
        return self.W.shape[0]

    @property
    def n_out(self):
        return self.W.shape[1]

    def __call__(self, x):
        return tn.matmul(x, self.W) + self.b


class MLP(Module):
    """Linear layers with ReLU between them (and optionally after the last)."""

    def __init__(self, sizes, rng, final_activation=False, dropout=0.0):
        self.layers = [Linear(a, b, rng) for a, b in zip(sizes[:-1], sizes[1:])]
        self.final_activation = final_activation
        self.dropout = dropout

    @property
    def n_out(self):
        return self.layers[-1].n_out

    def __call__(self, x, rng=None):
        h = x
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            h = layer(h)
            if i < last or self.final_activation:
                h = tn.relu(h)
                h = tn.dropout(h, self.dropout, rng, self.training and rng is not None)
        return h
