import numpy as np


class NonFiniteGradient(FloatingPointError):
    pass


class Adam:
    """Adam with bias correction. Moments live alongside each parameter."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self, names=None):
        grads = []
        for i, p in enumerate(self.params):
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if not np.all(np.isfinite(g)):
                label = names[i] if names else f"param[{i}]"
                raise NonFiniteGradient(
                    f"non-finite gradient in {label} at step {self.step_count + 1}")
            grads.append(g)
        self.step_count += 1
        t = self.step_count
        c1 = 1 - self.beta1 ** t
        c2 = 1 - self.beta2 ** t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            update = self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.data = (p.data - update).astype(p.data.dtype)

    def state(self):
        return {"lr": self.lr, "step": self.step_count, "m": self.m, "v": self.v}
