"""Minimal dense network used by the schedulers and federated clients.

One tanh hidden layer, linear output, full-batch gradient descent on mean
squared error. Weights live in a single flat float64 vector so model updates
can be shipped, compressed and aggregated as plain arrays.
"""

from __future__ import annotations

import numpy as np


class Mlp:
    def __init__(self, n_in: int, n_hidden: int, n_out: int, rng: np.random.Generator):
        self.n_in, self.n_hidden, self.n_out = n_in, n_hidden, n_out
        s1 = 1.0 / np.sqrt(max(n_in, 1))
        s2 = 1.0 / np.sqrt(max(n_hidden, 1))
        self.w1 = rng.uniform(-s1, s1, size=(n_hidden, n_in))
        self.b1 = np.zeros(n_hidden)
        self.w2 = rng.uniform(-s2, s2, size=(n_out, n_hidden))
        self.b2 = np.zeros(n_out)

    @property
    def n_params(self) -> int:
        return self.w1.size + self.b1.size + self.w2.size + self.b2.size

    def get_params(self) -> np.ndarray:
        return np.concatenate([self.w1.ravel(), self.b1, self.w2.ravel(), self.b2])

    def set_params(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=float)
        if flat.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got {flat.shape}")
        i = 0
        for arr in (self.w1, self.b1, self.w2, self.b2):
            arr[...] = flat[i : i + arr.size].reshape(arr.shape)
            i += arr.size

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        h = np.tanh(x @ self.w1.T + self.b1)
        return h @ self.w2.T + self.b2

    def loss(self, x: np.ndarray, y: np.ndarray) -> float:
        pred = self.forward(x)
        y = np.atleast_2d(np.asarray(y, dtype=float)).reshape(pred.shape)
        return float(np.mean((pred - y) ** 2))

    def loss_and_grad(self, x: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
        """MSE loss and its analytic gradient, flat-packed like get_params()."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        y = np.atleast_2d(np.asarray(y, dtype=float))
        z1 = x @ self.w1.T + self.b1
        h = np.tanh(z1)
        pred = h @ self.w2.T + self.b2
        y = y.reshape(pred.shape)
        err = pred - y
        loss = float(np.mean(err**2))

        n = err.size
        d_pred = 2.0 * err / n
        g_w2 = d_pred.T @ h
        g_b2 = d_pred.sum(axis=0)
        d_h = d_pred @ self.w2
        d_z1 = d_h * (1.0 - h**2)
        g_w1 = d_z1.T @ x
        g_b1 = d_z1.sum(axis=0)
        grad = np.concatenate([g_w1.ravel(), g_b1, g_w2.ravel(), g_b2])
        return loss, grad

    def train(self, x: np.ndarray, y: np.ndarray, epochs: int, lr: float = 0.05) -> list[float]:
        """Full-batch gradient descent; halves the step whenever a move would
        increase the training loss, so the recorded losses are non-increasing."""
        losses = []
        params = self.get_params()
        loss, grad = self.loss_and_grad(x, y)
        for _ in range(epochs):
            step = lr
            while True:
                candidate = params - step * grad
                self.set_params(candidate)
                new_loss, new_grad = self.loss_and_grad(x, y)
                if new_loss <= loss or step < 1e-12:
                    break
                step *= 0.5
            params, loss, grad = candidate, new_loss, new_grad
            losses.append(loss)
        return losses


def numerical_grad(model: Mlp, x: np.ndarray, y: np.ndarray, coords, eps: float = 1e-6) -> np.ndarray:
    """Central finite differences of the loss along the given flat coordinates."""
    base = model.get_params()
    out = np.zeros(len(coords))
    for k, c in enumerate(coords):
        p = base.copy()
        p[c] = base[c] + eps
        model.set_params(p)
        up = model.loss(x, y)
        p[c] = base[c] - eps
        model.set_params(p)
        down = model.loss(x, y)
        out[k] = (up - down) / (2 * eps)
    model.set_params(base)
    return out
