"""Reflex, happiness and policy networks and the four-step decision pipeline."""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class NervousError(ValueError):
    pass


@dataclass
class ReflexNetwork:
    """Single ternary weight layer, one row per action."""

    weights: np.ndarray
    thresholds: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.thresholds = np.asarray(self.thresholds, dtype=float)
        if not np.all(np.isin(self.weights, (-1.0, 0.0, 1.0))):
            raise NervousError("reflex weights must lie in {-1, 0, +1}")
        if self.thresholds.shape != (self.weights.shape[0],):
            raise NervousError("one threshold per action required")

    @classmethod
    def empty(cls, n_actions: int, n_inputs: int, threshold: float = 0.0) -> "ReflexNetwork":
        return cls(np.zeros((n_actions, n_inputs)), np.full(n_actions, threshold))

    @property
    def is_empty(self) -> bool:
        return not self.weights.any()


def reflex_out(net: ReflexNetwork, x) -> np.ndarray:
    """Ternary reflex signal: -1 block, 0 accept, +1 force.

    Sign with a dead zone of half-width ``threshold`` around zero activation;
    with zero thresholds this is sgn(W x) with sgn(0) = 0.
    """
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != net.weights.shape[1]:
        raise NervousError(
            f"reflex input has {x.shape[-1]} entries, network expects {net.weights.shape[1]}"
        )
    a = x @ net.weights.T
    th = net.thresholds
    return np.where(a > th, 1, np.where(a < -th, -1, 0)).astype(np.int8)


@dataclass
class HappinessNetwork:
    """Linear map from the observation to one scalar; never trained."""

    weights: np.ndarray
    bias: float = 0.0

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)


def happiness(net: HappinessNetwork, x) -> np.ndarray | float:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != net.weights.shape[0]:
        raise NervousError(
            f"happiness input has {x.shape[-1]} entries, network expects {net.weights.shape[0]}"
        )
    if not np.all(np.isfinite(x)):
        raise NervousError("non-finite observation passed to happiness network")
    h = x @ net.weights + net.bias
    return float(h) if np.ndim(h) == 0 else h


class PolicyNetwork:
    """Tanh MLP trunk with a logits head and a scalar value head.

    Parameters are kept in one list in declared order:
    trunk (W, b) pairs, then logits (W, b), then value (W, b).
    Weights are stored (out, in).
    """

    def __init__(self, n_inputs: int, n_actions: int, hidden=(32, 32), input_scale=None,
                 params=None, rng: np.random.Generator | None = None):
        self.n_inputs = int(n_inputs)
        self.n_actions = int(n_actions)
        self.hidden = [int(h) for h in hidden]
        self.input_scale = (np.ones(n_inputs) if input_scale is None
                            else np.asarray(input_scale, dtype=float).copy())
        if params is None:
            params = self._init_params(rng if rng is not None else np.random.default_rng(0))
        self.params = [np.array(p, dtype=float) for p in params]
        if [p.shape for p in self.params] != self.param_shapes():
            raise NervousError("parameter shapes do not match the declared layer sizes")

    def param_shapes(self) -> list[tuple]:
        shapes = []
        prev = self.n_inputs
        for h in self.hidden:
            shapes += [(h, prev), (h,)]
            prev = h
        shapes += [(self.n_actions, prev), (self.n_actions,), (1, prev), (1,)]
        return shapes

    def _init_params(self, rng):
        params = []
        shapes = self.param_shapes()
        n_trunk = len(self.hidden)
        for i in range(0, len(shapes), 2):
            out_in = shapes[i]
            layer = i // 2
            if layer < n_trunk:
                gain = 1.0
            elif layer == n_trunk:
                gain = 0.01  # near-uniform initial action distribution
            else:
                gain = 1.0
            params.append(rng.normal(0.0, gain / np.sqrt(out_in[1]), size=out_in))
            params.append(np.zeros(shapes[i + 1]))
        return params

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params)

    def copy(self) -> "PolicyNetwork":
        return PolicyNetwork(self.n_inputs, self.n_actions, self.hidden, self.input_scale,
                             [p.copy() for p in self.params])

    def perturbed(self, rng: np.random.Generator, sigma: float) -> "PolicyNetwork":
        net = self.copy()
        if sigma > 0:
            for p in net.params:
                p += rng.normal(0.0, sigma, size=p.shape)
        return net

    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params])

    def set_flat(self, flat) -> None:
        flat = np.asarray(flat, dtype=float)
        i = 0
        for p in self.params:
            n = p.size
            p[...] = flat[i:i + n].reshape(p.shape)
            i += n

    def forward(self, X, params=None):
        """Return (logits, values, cache) for a batch of observations."""
        ps = self.params if params is None else params
        a = np.atleast_2d(np.asarray(X, dtype=float)) * self.input_scale
        acts = [a]
        n_trunk = len(self.hidden)
        for layer in range(n_trunk):
            a = np.tanh(a @ ps[2 * layer].T + ps[2 * layer + 1])
            acts.append(a)
        k = 2 * n_trunk
        logits = a @ ps[k].T + ps[k + 1]
        values = (a @ ps[k + 2].T + ps[k + 3])[:, 0]
        return logits, values, acts

    def backward(self, acts, dlogits, dvalues, params=None):
        ps = self.params if params is None else params
        n_trunk = len(self.hidden)
        k = 2 * n_trunk
        h = acts[-1]
        grads = [None] * len(ps)
        dv = dvalues[:, None]
        grads[k] = dlogits.T @ h
        grads[k + 1] = dlogits.sum(axis=0)
        grads[k + 2] = dv.T @ h
        grads[k + 3] = dv.sum(axis=0)
        dh = dlogits @ ps[k] + dv @ ps[k + 2]
        for layer in reversed(range(n_trunk)):
            out = acts[layer + 1]
            dz = dh * (1.0 - out * out)
            grads[2 * layer] = dz.T @ acts[layer]
            grads[2 * layer + 1] = dz.sum(axis=0)
            if layer:
                dh = dz @ ps[2 * layer]
        return grads


def log_softmax(logits):
    m = logits.max(axis=-1, keepdims=True)
    z = logits - m
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax(logits):
    return np.exp(log_softmax(logits))


def sample_actions(probs, uniforms) -> np.ndarray:
    """Inverse-CDF sampling, one uniform per row."""
    cdf = np.cumsum(probs, axis=-1)
    idx = (cdf < np.asarray(uniforms)[:, None]).sum(axis=-1)
    return np.minimum(idx, probs.shape[-1] - 1)


def policy_select(net: PolicyNetwork | None, x, rng: np.random.Generator, greedy: bool = False,
                  n_actions: int | None = None):
    """Pick one action from the policy; returns (action, log_prob, value).

    ``net=None`` is the uniform random-policy control.
    """
    u = rng.random()
    if net is None:
        n = int(n_actions)
        logits = np.zeros((1, n))
        value = 0.0
    else:
        logits, values, _ = net.forward(x)
        value = float(values[0])
    if not np.all(np.isfinite(logits)):
        raise NervousError("non-finite policy logits")
    logp = log_softmax(logits)[0]
    if greedy:
        a = int(np.argmax(logits[0]))
    else:
        a = int(sample_actions(np.exp(logp)[None, :], [u])[0])
    return a, float(logp[a]), value


def one_hot(index: int, n: int) -> np.ndarray:
    z = np.zeros(n, dtype=np.int8)
    z[index] = 1
    return z


def combine(y, z) -> np.ndarray:
    """Elementwise [y_i + z_i > 0] over reflex output and policy one-hot."""
    y = np.asarray(y)
    z = np.asarray(z)
    if y.shape != z.shape:
        raise NervousError("reflex and policy vectors differ in length")
    if not (np.all((z == 0) | (z == 1)) and z.sum() == 1):
        raise NervousError("policy vector must be one-hot")
    return ((y + z) > 0).astype(np.int8)


@dataclass
class Decision:
    multi_hot: np.ndarray
    chosen_policy_action: int
    log_prob: float
    value: float
    reflex: np.ndarray | None = None


@dataclass
class NervousSystem:
    reflex: ReflexNetwork
    happiness: HappinessNetwork
    policy: PolicyNetwork | None  # None: uniform random control
    n_actions: int = field(default=0)

    def __post_init__(self):
        if not self.n_actions:
            self.n_actions = self.reflex.weights.shape[0]


def decide(org, x, rng: np.random.Generator, greedy: bool = False) -> Decision:
    ns: NervousSystem = org.nervous if hasattr(org, "nervous") else org
    y = reflex_out(ns.reflex, x)
    a, logp, v = policy_select(ns.policy, x, rng, greedy=greedy, n_actions=ns.n_actions)
    z = one_hot(a, ns.n_actions)
    return Decision(combine(y, z), a, logp, v, y)


# -- checkpoints -----------------------------------------------------------

MAGIC = b"ECOSIMCK"
VERSION = 1


def layout_hash(sensor_names) -> str:
    return hashlib.sha256("\n".join(sensor_names).encode()).hexdigest()[:16]


def save_checkpoint(path, net: PolicyNetwork, species: str, sensor_names) -> None:
    header = {
        "species": species,
        "sensor_names": list(sensor_names),
        "sensor_layout_hash": layout_hash(sensor_names),
        "n_inputs": net.n_inputs,
        "n_actions": net.n_actions,
        "hidden": net.hidden,
        "input_scale": [float(v) for v in net.input_scale],
        "param_shapes": [list(s) for s in net.param_shapes()],
        "dtype": "<f8",
    }
    hbytes = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(hbytes)))
        fh.write(hbytes)
        for p in net.params:
            fh.write(np.ascontiguousarray(p, dtype="<f8").tobytes())


def load_checkpoint(path, expected_sensor_names=None) -> tuple[PolicyNetwork, dict]:
    data = Path(path).read_bytes()
    if data[:len(MAGIC)] != MAGIC:
        raise NervousError(f"{path}: not a policy checkpoint")
    off = len(MAGIC)
    version, hlen = struct.unpack_from("<II", data, off)
    if version != VERSION:
        raise NervousError(f"{path}: unsupported checkpoint version {version}")
    off += 8
    header = json.loads(data[off:off + hlen])
    off += hlen
    if expected_sensor_names is not None and \
            header["sensor_layout_hash"] != layout_hash(expected_sensor_names):
        raise NervousError(f"{path}: sensor layout does not match species {header['species']}")
    params = []
    for shape in header["param_shapes"]:
        n = int(np.prod(shape))
        params.append(np.frombuffer(data, dtype="<f8", count=n, offset=off).reshape(shape).copy())
        off += 8 * n
    if off != len(data):
        raise NervousError(f"{path}: trailing bytes after parameters")
    net = PolicyNetwork(header["n_inputs"], header["n_actions"], header["hidden"],
                        header["input_scale"], params)
    return net, header
