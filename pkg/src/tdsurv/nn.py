"""Feed-forward risk-score network written directly in numpy.

Layer order: affine -> SeLU -> batch norm -> dropout -> affine (one output).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

SELU_LAMBDA = 1.0507009873554805
SELU_ALPHA = 1.6732632423543772
BN_EPS = 1e-5
MODEL_FORMAT = "tdsurv.network"
MODEL_VERSION = 1

TRAINABLE = ("W1", "b1", "gamma", "beta", "W2", "b2")


class NumericalError(FloatingPointError):
    pass


@dataclass(frozen=True)
class NetworkSpec:
    input_dim: int
    hidden_nodes: int = 30
    dropout_rate: float = 0.2
    bn_momentum: float = 0.9
    seed: int = 0
    activation: str = "selu"

    def __post_init__(self):
        if self.input_dim < 1:
            raise ValueError("input_dim must be >= 1")
        if self.hidden_nodes < 1:
            raise ValueError("hidden_nodes must be >= 1")
        if not 0 <= self.dropout_rate < 1:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if not 0 <= self.bn_momentum < 1:
            raise ValueError("bn_momentum must lie in [0, 1)")
        if self.activation != "selu":
            raise ValueError("only the selu activation is supported")


@dataclass
class NetworkParams:
    W1: np.ndarray  # (input_dim, hidden)
    b1: np.ndarray  # (hidden,)
    gamma: np.ndarray  # batch-norm scale
    beta: np.ndarray  # batch-norm shift
    W2: np.ndarray  # (hidden,)
    b2: np.ndarray  # (1,)
    running_mean: np.ndarray
    running_var: np.ndarray

    def copy(self) -> "NetworkParams":
        return NetworkParams(**{k: v.copy() for k, v in self.arrays().items()})

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    def trainable(self) -> dict[str, np.ndarray]:
        return {k: getattr(self, k) for k in TRAINABLE}


@dataclass
class OptimizerState:
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def selu(x):
    x = np.asarray(x, dtype=float)
    return SELU_LAMBDA * np.where(x > 0, x, SELU_ALPHA * np.expm1(np.minimum(x, 0.0)))


def selu_grad(x):
    x = np.asarray(x, dtype=float)
    return SELU_LAMBDA * np.where(x > 0, 1.0, SELU_ALPHA * np.exp(np.minimum(x, 0.0)))


def init_params(spec: NetworkSpec, rng: np.random.Generator) -> NetworkParams:
    """LeCun-normal weights (variance 1/fan-in), zero shifts, identity batch norm."""
    h = spec.hidden_nodes
    return NetworkParams(
        W1=rng.normal(0.0, np.sqrt(1.0 / spec.input_dim), size=(spec.input_dim, h)),
        b1=np.zeros(h),
        gamma=np.ones(h),
        beta=np.zeros(h),
        W2=rng.normal(0.0, np.sqrt(1.0 / h), size=h),
        b2=np.zeros(1),
        running_mean=np.zeros(h),
        running_var=np.ones(h),
    )


def _check(name, a):
    if not np.all(np.isfinite(a)):
        raise NumericalError(f"non-finite values in layer '{name}'")


@dataclass
class ForwardCache:
    X: np.ndarray
    z1: np.ndarray
    xhat: np.ndarray
    inv_std: np.ndarray
    mask: np.ndarray  # inverted-dropout multiplier, 0 or 1/(1-rate)
    h_drop: np.ndarray
    params: NetworkParams


def forward(params: NetworkParams, X, spec: NetworkSpec, mode: str = "eval",
            rng: np.random.Generator | None = None):
    """Risk scores for each row of ``X``.

    In ``train`` mode batch statistics normalize the hidden layer, the running
    statistics of ``params`` are updated in place and inverted dropout is
    applied.  Returns ``(scores, cache)``; the cache is ``None`` in eval mode.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != params.W1.shape[0]:
        raise ValueError(f"input width {X.shape[1]} != network input_dim {params.W1.shape[0]}")
    z1 = X @ params.W1 + params.b1
    _check("hidden affine", z1)
    a1 = selu(z1)
    _check("selu", a1)

    if mode == "eval":
        inv_std = 1.0 / np.sqrt(params.running_var + BN_EPS)
        bn = params.gamma * (a1 - params.running_mean) * inv_std + params.beta
        out = bn @ params.W2 + params.b2[0]
        _check("output", out)
        return out, None
    if mode != "train":
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    if X.shape[0] < 2:
        raise ValueError("train-mode forward needs a batch of at least 2 rows")

    mu = a1.mean(axis=0)
    var = a1.var(axis=0)
    inv_std = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (a1 - mu) * inv_std
    bn = params.gamma * xhat + params.beta
    _check("batch norm", bn)
    m = spec.bn_momentum
    params.running_mean[:] = m * params.running_mean + (1 - m) * mu
    params.running_var[:] = m * params.running_var + (1 - m) * var

    rate = spec.dropout_rate
    if rate > 0:
        if rng is None:
            raise ValueError("train-mode dropout needs an rng")
        mask = (rng.random(bn.shape) >= rate) / (1.0 - rate)
    else:
        mask = np.ones_like(bn)
    h_drop = bn * mask
    out = h_drop @ params.W2 + params.b2[0]
    _check("output", out)
    return out, ForwardCache(X, z1, xhat, inv_std, mask, h_drop, params)


def backward(cache: ForwardCache, dscore) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss with respect to every trainable parameter,
    given its gradient ``dscore`` with respect to each output score."""
    dscore = np.asarray(dscore, dtype=float)
    if dscore.shape != (cache.X.shape[0],):
        raise ValueError(f"gradient length {dscore.shape} does not match batch of {cache.X.shape[0]}")
    p = cache.params
    n = dscore.shape[0]
    dW2 = cache.h_drop.T @ dscore
    db2 = np.array([dscore.sum()])
    dbn = np.outer(dscore, p.W2) * cache.mask
    dgamma = (dbn * cache.xhat).sum(axis=0)
    dbeta = dbn.sum(axis=0)
    dxhat = dbn * p.gamma
    # batch-norm backward with batch statistics
    da1 = cache.inv_std / n * (n * dxhat - dxhat.sum(axis=0) - cache.xhat * (dxhat * cache.xhat).sum(axis=0))
    dz1 = da1 * selu_grad(cache.z1)
    return {
        "W1": cache.X.T @ dz1,
        "b1": dz1.sum(axis=0),
        "gamma": dgamma,
        "beta": dbeta,
        "W2": dW2,
        "b2": db2,
    }


def adam_step(params: NetworkParams, grads: dict, state: OptimizerState):
    """One bias-corrected Adam update; returns new ``(params, state)``."""
    for k, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for {k}")
    t = state.step + 1
    new = params.copy()
    m_new, v_new = {}, {}
    for k, g in grads.items():
        m = state.beta1 * state.m.get(k, 0.0) + (1 - state.beta1) * g
        v = state.beta2 * state.v.get(k, 0.0) + (1 - state.beta2) * g * g
        mhat = m / (1 - state.beta1 ** t)
        vhat = v / (1 - state.beta2 ** t)
        setattr(new, k, getattr(params, k) - state.lr * mhat / (np.sqrt(vhat) + state.eps))
        m_new[k], v_new[k] = m, v
    return new, OptimizerState(state.lr, state.beta1, state.beta2, state.eps, t, m_new, v_new)


def params_to_json(spec: NetworkSpec, params: NetworkParams, **extra) -> dict:
    doc = {"format": MODEL_FORMAT, "version": MODEL_VERSION, "spec": asdict(spec),
           "params": {k: v.tolist() for k, v in params.arrays().items()}}
    doc.update(extra)
    return doc


def params_from_json(doc: dict) -> tuple[NetworkSpec, NetworkParams]:
    if doc.get("format") != MODEL_FORMAT or doc.get("version") != MODEL_VERSION:
        raise ValueError(f"unsupported model document {doc.get('format')!r} v{doc.get('version')!r}")
    spec = NetworkSpec(**doc["spec"])
    arrs = {k: np.asarray(v, dtype=float) for k, v in doc["params"].items()}
    arrs["W1"] = arrs["W1"].reshape(spec.input_dim, spec.hidden_nodes)
    return spec, NetworkParams(**arrs)


def save_params(path, spec: NetworkSpec, params: NetworkParams, **extra) -> None:
    Path(path).write_text(json.dumps(params_to_json(spec, params, **extra)))
