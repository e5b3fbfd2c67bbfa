"""Ensemble of small feedforward networks trained with minibatch Adam.

Architecture is fixed at input -> 8 -> 4 -> 1 with relu/relu/sigmoid;
land_type enters one-hot expanded. Loss is binary cross-entropy plus an
L2 penalty of 0.5 * decay * sum(W^2) over the weight matrices (biases are
not penalized). Each member trains on its own seed-derived stream, so
members are independent of training order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..dataset import LAND_TYPE_COL
from ..errors import DivergenceError, ParameterError, ShapeError, TrainingError

HIDDEN = (8, 4)


def _shapes(d_in: int) -> list[tuple[int, ...]]:
    return [
        (d_in, HIDDEN[0]), (HIDDEN[0],),
        (HIDDEN[0], HIDDEN[1]), (HIDDEN[1],),
        (HIDDEN[1], 1), (1,),
    ]


def n_params(d_in: int) -> int:
    return sum(int(np.prod(s)) for s in _shapes(d_in))


def unpack(theta: np.ndarray, d_in: int):
    parts = []
    i = 0
    for shape in _shapes(d_in):
        size = int(np.prod(shape))
        parts.append(theta[i:i + size].reshape(shape))
        i += size
    return parts  # W1, b1, W2, b2, W3, b3


def pack(parts) -> np.ndarray:
    return np.concatenate([p.ravel() for p in parts])


def init_params(rng: np.random.Generator, d_in: int) -> np.ndarray:
    W1 = rng.normal(0.0, np.sqrt(2.0 / d_in), size=(d_in, HIDDEN[0]))
    b1 = np.zeros(HIDDEN[0])
    W2 = rng.normal(0.0, np.sqrt(2.0 / HIDDEN[0]), size=(HIDDEN[0], HIDDEN[1]))
    b2 = np.zeros(HIDDEN[1])
    W3 = rng.normal(0.0, np.sqrt(1.0 / HIDDEN[1]), size=(HIDDEN[1], 1))
    b3 = np.zeros(1)
    return pack([W1, b1, W2, b2, W3, b3])


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def forward_logits(theta: np.ndarray, X: np.ndarray, d_in: int) -> np.ndarray:
    W1, b1, W2, b2, W3, b3 = unpack(theta, d_in)
    a1 = np.maximum(X @ W1 + b1, 0.0)
    a2 = np.maximum(a1 @ W2 + b2, 0.0)
    return (a2 @ W3 + b3).ravel()


def loss_and_grad(theta: np.ndarray, X: np.ndarray, y: np.ndarray,
                  l2: float, d_in: int) -> tuple[float, np.ndarray]:
    """Mean BCE + L2 penalty, with analytic gradients for every parameter."""
    W1, b1, W2, b2, W3, b3 = unpack(theta, d_in)
    n = X.shape[0]
    z1 = X @ W1 + b1
    a1 = np.maximum(z1, 0.0)
    z2 = a1 @ W2 + b2
    a2 = np.maximum(z2, 0.0)
    z3 = (a2 @ W3 + b3).ravel()
    # stable BCE on logits: softplus(z) - y*z
    data_loss = float(np.mean(np.logaddexp(0.0, z3) - y * z3))
    penalty = 0.5 * l2 * (np.sum(W1 ** 2) + np.sum(W2 ** 2) + np.sum(W3 ** 2))
    loss = data_loss + float(penalty)

    dz3 = ((_sigmoid(z3) - y) / n)[:, None]
    dW3 = a2.T @ dz3 + l2 * W3
    db3 = dz3.sum(axis=0)
    da2 = dz3 @ W3.T
    dz2 = da2 * (z2 > 0.0)
    dW2 = a1.T @ dz2 + l2 * W2
    db2 = dz2.sum(axis=0)
    da1 = dz2 @ W2.T
    dz1 = da1 * (z1 > 0.0)
    dW1 = X.T @ dz1 + l2 * W1
    db1 = dz1.sum(axis=0)
    return loss, pack([dW1, db1, dW2, db2, dW3, db3])


@dataclass(frozen=True)
class NetParams:
    n_members: int = 100
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 64
    l2: float = 0.1
    epochs: int = 50
    plateau_tol: float = 1e-5
    plateau_window: int = 5

    def validate(self):
        if self.n_members < 1:
            raise ParameterError("n_members must be >= 1")
        if self.batch_size < 1:
            raise ParameterError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ParameterError("epochs must be >= 1")


def _train_member(theta: np.ndarray, X: np.ndarray, y: np.ndarray,
                  params: NetParams, rng: np.random.Generator,
                  member: int, d_in: int) -> np.ndarray:
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    t = 0
    n = X.shape[0]
    epoch_losses: list[float] = []
    for epoch in range(params.epochs):
        perm = rng.permutation(n)
        total = 0.0
        for s in range(0, n, params.batch_size):
            batch = perm[s:s + params.batch_size]
            loss, grad = loss_and_grad(theta, X[batch], y[batch], params.l2, d_in)
            if not np.isfinite(loss):
                raise DivergenceError(
                    f"member {member}: non-finite loss at step {t} (epoch {epoch})"
                )
            t += 1
            m = params.beta1 * m + (1.0 - params.beta1) * grad
            v = params.beta2 * v + (1.0 - params.beta2) * grad ** 2
            m_hat = m / (1.0 - params.beta1 ** t)
            v_hat = v / (1.0 - params.beta2 ** t)
            theta = theta - params.learning_rate * m_hat / (np.sqrt(v_hat) + params.eps)
            total += loss * len(batch)
        epoch_losses.append(total / n)
        if (
            len(epoch_losses) > params.plateau_window
            and epoch_losses[-1 - params.plateau_window] - epoch_losses[-1]
            < params.plateau_tol
        ):
            break
    return theta


class NetEnsemble:
    """Mean of member sigmoids; every member output stays in (0, 1)."""

    def __init__(self, params: NetParams, seed: int,
                 land_categories: tuple[int, ...] = (),
                 members: list[np.ndarray] | None = None):
        self.params = params
        self.seed = seed
        self.land_categories = tuple(land_categories)
        self.members = members or []

    @property
    def d_in(self) -> int:
        # 13 pass-through features + one-hot land block
        return 13 + len(self.land_categories)

    def _embed(self, X: np.ndarray) -> np.ndarray:
        land = X[:, LAND_TYPE_COL].astype(np.int64)
        other = np.delete(X, LAND_TYPE_COL, axis=1)
        onehot = np.zeros((X.shape[0], len(self.land_categories)))
        for j, cat in enumerate(self.land_categories):
            onehot[:, j] = land == cat
        return np.hstack([other, onehot])

    def fit(self, X: np.ndarray, y: np.ndarray) -> "NetEnsemble":
        self.params.validate()
        X = np.ascontiguousarray(X, dtype=np.float64)
        y = np.ascontiguousarray(y, dtype=np.float64)
        if X.ndim != 2 or X.shape[0] != y.shape[0]:
            raise ShapeError(f"bad training shapes {X.shape} vs {y.shape}")
        if np.unique(y).size < 2 and X.shape[0] > 1:
            raise TrainingError(
                "training data contains a single class; apply data "
                "duplication (DD) or another balancing step first"
            )
        self.land_categories = tuple(
            int(c) for c in np.unique(X[:, LAND_TYPE_COL].astype(np.int64))
        )
        Xe = self._embed(X)
        children = np.random.SeedSequence(self.seed).spawn(self.params.n_members)
        self.members = []
        for k in range(self.params.n_members):
            rng = np.random.default_rng(children[k])
            theta = init_params(rng, self.d_in)
            theta = _train_member(theta, Xe, y, self.params, rng, k, self.d_in)
            self.members.append(theta)
        return self

    def member_proba(self, X: np.ndarray) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != 14:
            raise ShapeError(f"expected (n, 14) features, got {X.shape}")
        if not self.members:
            raise TrainingError("ensemble is not fitted")
        Xe = self._embed(X)
        out = np.empty((len(self.members), X.shape[0]))
        for k, theta in enumerate(self.members):
            p = _sigmoid(forward_logits(theta, Xe, self.d_in))
            out[k] = np.clip(p, 1e-12, 1.0 - 1e-12)
        return out

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return self.member_proba(X).mean(axis=0)

    def to_dict(self) -> dict:
        return {
            "params": {
                "n_members": self.params.n_members,
                "learning_rate": self.params.learning_rate,
                "beta1": self.params.beta1,
                "beta2": self.params.beta2,
                "eps": self.params.eps,
                "batch_size": self.params.batch_size,
                "l2": self.params.l2,
                "epochs": self.params.epochs,
                "plateau_tol": self.params.plateau_tol,
                "plateau_window": self.params.plateau_window,
            },
            "seed": self.seed,
            "land_categories": list(self.land_categories),
            "members": [theta.tolist() for theta in self.members],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetEnsemble":
        return cls(
            params=NetParams(**d["params"]),
            seed=d["seed"],
            land_categories=tuple(d["land_categories"]),
            members=[np.asarray(m, dtype=np.float64) for m in d["members"]],
        )
