"""Adam with bias correction. Moments update in place; `state_dict` exposes
them (plus the step counter) for bitwise checkpoint resume.
"""

import numpy as np

__all__ = ["Adam"]


class Adam:
    def __init__(self, params, lr=1e-4, beta1=0.5, beta2=0.99, eps=1e-8):
        self.params = [p for p in params if p.requires_grad]
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def state_dict(self):
        state = {"opt.t": np.array([self.t], dtype=np.float64)}
        for i, (m, v) in enumerate(zip(self.m, self.v)):
            state["opt.m.%d" % i] = m.copy()
            state["opt.v.%d" % i] = v.copy()
        return state

    def load_state_dict(self, state):
        self.t = int(state["opt.t"][0])
        for i in range(len(self.params)):
            self.m[i][...] = state["opt.m.%d" % i]
            self.v[i][...] = state["opt.v.%d" % i]
