import numpy as np


class Adam:
    """Adam over a dict of named parameter arrays, updated in place.

    Parameters
    ----------
    params : dict[str, np.ndarray]
        arrays to optimize; `step` writes into them
    lr : float
        learning rate
    beta1, beta2 : float
        decay rates of the first and second moment estimates
    eps : float
        added to the root of the second moment to avoid division by zero
    """

    def __init__(self, params: dict, lr: float = 1e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, grads: dict) -> None:
        self.t += 1
        bias_correction_1 = 1 - self.beta1 ** self.t
        bias_correction_2 = 1 - self.beta2 ** self.t

        for name, g in grads.items():
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * (g * g)

            m_hat = m / bias_correction_1
            v_hat = v / bias_correction_2
            self.params[name] -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
