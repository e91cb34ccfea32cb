"""Dense MLP core with flat parameter vectors and hand-written backprop.

Everything downstream (imitation losses, policy-gradient surrogates, the
interleaving engine) manipulates gradients as plain 1-D float64 arrays, so
this module owns the single flattening layout and produces analytic
gradients that are checked against finite differences in the test suite.

Parameter layout (layout version 1), in order:
    for each layer l = 1..L: W_l flattened row-major (fan_in, fan_out), then b_l
    for gaussian_policy heads: log_std (one entry per action dimension), last

The same layout is used by checkpoints, so files written by `save_checkpoint`
round-trip bit-exactly through `load_checkpoint`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, NumericError, ShapeError, UsageError

# ParamVector: 1-D float64 ndarray; length fixed by the owning MlpSpec.
ParamVector = np.ndarray

LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0

ACTIVATIONS = ("tanh", "relu")
HEADS = ("gaussian_policy", "scalar_value")

CHECKPOINT_FORMAT = "rlweave-checkpoint"
LAYOUT_VERSION = 1


@dataclass(frozen=True)
class MlpSpec:
    """Architecture of a dense network: widths, activation, output head."""

    layer_widths: tuple
    activation: str = "tanh"
    head: str = "gaussian_policy"

    def __post_init__(self):
        widths = tuple(int(w) for w in self.layer_widths)
        object.__setattr__(self, "layer_widths", widths)
        if len(widths) < 3:
            raise ConfigError("need at least one hidden layer: got widths %r" % (widths,))
        if any(w < 1 for w in widths):
            raise ConfigError("layer widths must be positive: got %r" % (widths,))
        if self.activation not in ACTIVATIONS:
            raise ConfigError("unknown activation %r (choices: %s)" % (self.activation, ", ".join(ACTIVATIONS)))
        if self.head not in HEADS:
            raise ConfigError("unknown head %r (choices: %s)" % (self.head, ", ".join(HEADS)))
        if self.head == "scalar_value" and widths[-1] != 1:
            raise ConfigError("scalar_value head requires output width 1, got %d" % widths[-1])

    @property
    def input_dim(self):
        return self.layer_widths[0]

    @property
    def output_dim(self):
        return self.layer_widths[-1]

    def n_params(self):
        n = 0
        for fan_in, fan_out in zip(self.layer_widths[:-1], self.layer_widths[1:]):
            n += fan_in * fan_out + fan_out
        if self.head == "gaussian_policy":
            n += self.output_dim
        return n

    def to_dict(self):
        return {
            "layer_widths": list(self.layer_widths),
            "activation": self.activation,
            "head": self.head,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["layer_widths"]), d["activation"], d["head"])


def init_params(spec: MlpSpec, seed: int, init_log_std: float = -0.5) -> ParamVector:
    """Fan-in scaled uniform weight init (gain 1 for tanh), zero biases."""
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    gain = 1.0 if spec.activation == "tanh" else np.sqrt(2.0)
    chunks = []
    for fan_in, fan_out in zip(spec.layer_widths[:-1], spec.layer_widths[1:]):
        bound = gain * np.sqrt(3.0 / fan_in)
        chunks.append(rng.uniform(-bound, bound, size=fan_in * fan_out))
        chunks.append(np.zeros(fan_out))
    if spec.head == "gaussian_policy":
        chunks.append(np.full(spec.output_dim, float(init_log_std)))
    return np.concatenate(chunks).astype(np.float64)


def unpack_params(spec: MlpSpec, params: ParamVector):
    """Split a flat vector into per-layer (W, b) views plus log_std (or None)."""
    if params.ndim != 1 or params.size != spec.n_params():
        raise ShapeError("param vector of length %d does not match spec (%d)" % (params.size, spec.n_params()))
    weights, biases = [], []
    pos = 0
    for fan_in, fan_out in zip(spec.layer_widths[:-1], spec.layer_widths[1:]):
        weights.append(params[pos:pos + fan_in * fan_out].reshape(fan_in, fan_out))
        pos += fan_in * fan_out
        biases.append(params[pos:pos + fan_out])
        pos += fan_out
    log_std = None
    if spec.head == "gaussian_policy":
        log_std = params[pos:pos + spec.output_dim]
    return weights, biases, log_std


def _check_finite(arr, what):
    if not np.all(np.isfinite(arr)):
        raise NumericError("non-finite values in %s" % what)


def forward_core(spec: MlpSpec, params: ParamVector, x: np.ndarray):
    """Batched forward pass; returns (output (n, out), activation cache)."""
    if x.ndim != 2 or x.shape[1] != spec.input_dim:
        raise ShapeError("expected input of shape (n, %d), got %r" % (spec.input_dim, x.shape))
    _check_finite(x, "network input")
    weights, biases, _ = unpack_params(spec, params)
    act = np.tanh if spec.activation == "tanh" else lambda z: np.maximum(z, 0.0)
    layer_inputs = [x]
    a = x
    for w, b in zip(weights[:-1], biases[:-1]):
        a = act(a @ w + b)
        layer_inputs.append(a)
    out = a @ weights[-1] + biases[-1]
    return out, layer_inputs


def backward_core(spec: MlpSpec, params: ParamVector, layer_inputs, d_out: np.ndarray) -> ParamVector:
    """Backprop d_out (n, out) through the cached forward pass.

    Returns the flat gradient of sum_i <d_out_i, out_i> with respect to the
    MLP parameters (log_std entries, if any, are returned as zeros; the
    Gaussian-head helpers fill them in).
    """
    weights, _, _ = unpack_params(spec, params)
    grad = np.zeros_like(params)
    w_grads = [None] * len(weights)
    b_grads = [None] * len(weights)

    delta = d_out
    w_grads[-1] = layer_inputs[-1].T @ delta
    b_grads[-1] = delta.sum(axis=0)
    upstream = delta @ weights[-1].T
    for l in range(len(weights) - 2, -1, -1):
        a = layer_inputs[l + 1]
        if spec.activation == "tanh":
            delta = upstream * (1.0 - a * a)
        else:
            delta = upstream * (a > 0.0)
        w_grads[l] = layer_inputs[l].T @ delta
        b_grads[l] = delta.sum(axis=0)
        upstream = delta @ weights[l].T

    pos = 0
    for wg, bg in zip(w_grads, b_grads):
        grad[pos:pos + wg.size] = wg.ravel()
        pos += wg.size
        grad[pos:pos + bg.size] = bg
        pos += bg.size
    return grad


class GaussianMlpPolicy:
    """MLP mapping observation -> diagonal Gaussian over actions.

    The mean comes from the network output; log_std is a state-independent
    learned vector stored at the tail of the flat parameter vector and
    clamped to [LOG_STD_MIN, LOG_STD_MAX] after every update.
    """

    def __init__(self, spec: MlpSpec, params: ParamVector):
        if spec.head != "gaussian_policy":
            raise ConfigError("GaussianMlpPolicy requires a gaussian_policy head")
        self.spec = spec
        self._params = np.array(params, dtype=np.float64)  # owned copy
        self._views = None
        self.clamp_log_std()

    @property
    def params(self) -> ParamVector:
        return self._params

    @params.setter
    def params(self, values: ParamVector):
        self._params = np.asarray(values, dtype=np.float64)
        self._views = None

    def _unpacked(self):
        # cached (weights, biases, log_std) views; they alias self._params,
        # so in-place edits through unpack_params stay visible
        if self._views is None:
            self._views = unpack_params(self.spec, self._params)
        return self._views

    @classmethod
    def create(cls, spec: MlpSpec, seed: int, init_log_std: float = -0.5):
        return cls(spec, init_params(spec, seed, init_log_std))

    @property
    def obs_dim(self):
        return self.spec.input_dim

    @property
    def action_dim(self):
        return self.spec.output_dim

    def clamp_log_std(self):
        _, _, log_std = self._unpacked()
        np.clip(log_std, LOG_STD_MIN, LOG_STD_MAX, out=log_std)

    def log_std(self):
        _, _, log_std = self._unpacked()
        return log_std.copy()

    def forward_batch(self, obs: np.ndarray):
        """(n, obs_dim) -> (means (n, k), std (k,))."""
        means, _ = forward_core(self.spec, self.params, obs)
        _, _, log_std = self._unpacked()
        return means, np.exp(log_std)

    def forward(self, obs: np.ndarray):
        """Single observation -> (mean, std), both shape (k,)."""
        obs = np.asarray(obs, dtype=np.float64)
        if obs.shape != (self.obs_dim,):
            raise ShapeError("expected obs of shape (%d,), got %r" % (self.obs_dim, obs.shape))
        weights, biases, log_std = self._unpacked()
        act = np.tanh if self.spec.activation == "tanh" else lambda z: np.maximum(z, 0.0)
        a = obs
        for w, b in zip(weights[:-1], biases[:-1]):
            a = act(a @ w + b)
        return a @ weights[-1] + biases[-1], np.exp(log_std)

    def sample(self, obs: np.ndarray, rng: np.random.Generator):
        """Draw action = mean + std * eps; returns (action, log_prob)."""
        mean, std = self.forward(obs)
        eps = rng.standard_normal(self.action_dim)
        action = mean + std * eps
        # z = eps by construction; avoid a second forward pass
        k = self.action_dim
        logp = float(-0.5 * k * np.log(2.0 * np.pi) - np.log(std).sum() - 0.5 * (eps @ eps))
        return action, logp

    def log_prob(self, obs: np.ndarray, actions: np.ndarray) -> np.ndarray:
        """Per-row log density of `actions` under the policy at `obs`."""
        means, std = self.forward_batch(np.atleast_2d(obs))
        actions = np.atleast_2d(actions)
        if actions.shape != means.shape:
            raise ShapeError("action batch %r does not match means %r" % (actions.shape, means.shape))
        _check_finite(actions, "actions")
        z = (actions - means) / std
        k = self.action_dim
        return -0.5 * k * np.log(2.0 * np.pi) - np.sum(np.log(std)) - 0.5 * np.sum(z * z, axis=1)

    def copy(self):
        return GaussianMlpPolicy(self.spec, self.params.copy())


class ValueMlp:
    """MLP with a scalar head, used as the advantage baseline."""

    def __init__(self, spec: MlpSpec, params: ParamVector):
        if spec.head != "scalar_value":
            raise ConfigError("ValueMlp requires a scalar_value head")
        self.spec = spec
        self.params = np.array(params, dtype=np.float64)  # owned copy

    @classmethod
    def create(cls, spec: MlpSpec, seed: int):
        return cls(spec, init_params(spec, seed))

    def value_batch(self, obs: np.ndarray) -> np.ndarray:
        out, _ = forward_core(self.spec, self.params, np.atleast_2d(obs))
        return out[:, 0]

    def value(self, obs: np.ndarray) -> float:
        return float(self.value_batch(np.asarray(obs, dtype=np.float64)[None, :])[0])

    def copy(self):
        return ValueMlp(self.spec, self.params.copy())


def log_prob_weighted_grad(policy: GaussianMlpPolicy, obs: np.ndarray, actions: np.ndarray,
                           weights: np.ndarray):
    """Log-probs plus the gradient of sum_i weights[i] * log pi(a_i|s_i).

    This is the one backward pass both the imitation loss and the clipped
    surrogate reduce to; they differ only in the per-row weights.
    """
    obs = np.atleast_2d(np.asarray(obs, dtype=np.float64))
    actions = np.atleast_2d(np.asarray(actions, dtype=np.float64))
    weights = np.asarray(weights, dtype=np.float64)
    means, cache = forward_core(policy.spec, policy.params, obs)
    _, _, log_std = unpack_params(policy.spec, policy.params)
    std = np.exp(log_std)
    if actions.shape != means.shape:
        raise ShapeError("action batch %r does not match means %r" % (actions.shape, means.shape))
    _check_finite(actions, "actions")

    z = (actions - means) / std
    k = policy.action_dim
    logp = -0.5 * k * np.log(2.0 * np.pi) - np.sum(np.log(std)) - 0.5 * np.sum(z * z, axis=1)

    # d logp/d mean = (a - mu) / sigma^2 ; d logp/d log_std_j = z_j^2 - 1
    d_mean = weights[:, None] * (actions - means) / (std * std)
    grad = backward_core(policy.spec, policy.params, cache, d_mean)
    grad[-k:] = ((z * z - 1.0) * weights[:, None]).sum(axis=0)
    _check_finite(grad, "log-prob gradient")
    return logp, grad


def log_prob_and_grad(policy: GaussianMlpPolicy, obs: np.ndarray, action: np.ndarray):
    """Log density of one (obs, action) pair and its gradient wrt params."""
    logp, grad = log_prob_weighted_grad(policy, np.asarray(obs)[None, :],
                                        np.asarray(action)[None, :], np.ones(1))
    return float(logp[0]), grad


def value_batch_loss_and_grad(valuenet: ValueMlp, obs: np.ndarray, targets: np.ndarray):
    """Mean squared-error loss (1/n) sum 0.5*(V(s)-target)^2 and its gradient."""
    if valuenet.spec.head != "scalar_value":
        raise ConfigError("value loss requires a scalar_value head")
    obs = np.atleast_2d(np.asarray(obs, dtype=np.float64))
    targets = np.asarray(targets, dtype=np.float64).reshape(-1)
    if targets.shape[0] != obs.shape[0]:
        raise ShapeError("targets length %d != batch size %d" % (targets.shape[0], obs.shape[0]))
    _check_finite(targets, "value targets")
    out, cache = forward_core(valuenet.spec, valuenet.params, obs)
    resid = out[:, 0] - targets
    loss = 0.5 * float(np.mean(resid * resid))
    d_out = (resid / obs.shape[0])[:, None]
    grad = backward_core(valuenet.spec, valuenet.params, cache, d_out)
    return loss, grad


def value_forward_and_grad(valuenet: ValueMlp, obs: np.ndarray, target: float):
    """Single-state value loss 0.5*(V(s)-target)^2 and its gradient."""
    return value_batch_loss_and_grad(valuenet, np.asarray(obs, dtype=np.float64)[None, :],
                                     np.asarray([target]))


def axpy_update(params: ParamVector, grad: ParamVector, step: float) -> ParamVector:
    """Return params - step * grad (the shared SGD primitive)."""
    if params.shape != grad.shape:
        raise ShapeError("params length %d != grad length %d" % (params.size, grad.size))
    out = params - step * grad
    _check_finite(out, "updated parameters")
    return out


# -- checkpoints --------------------------------------------------------------
#
# Text format, one file:
#   line 1: JSON header {"format", "layout_version", "spec", "meta", "n_params"}
#   lines 2..n+1: repr() of each float64 parameter, one per line.
# repr round-trips doubles exactly, so load(save(x)) == x bit for bit.

def save_checkpoint(path, spec: MlpSpec, params: ParamVector, meta: dict | None = None):
    params = np.asarray(params, dtype=np.float64)
    if params.size != spec.n_params():
        raise ShapeError("checkpoint params length %d does not match spec (%d)" % (params.size, spec.n_params()))
    header = {
        "format": CHECKPOINT_FORMAT,
        "layout_version": LAYOUT_VERSION,
        "spec": spec.to_dict(),
        "meta": meta or {},
        "n_params": int(params.size),
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        f.write(json.dumps(header, sort_keys=True) + "\n")
        for v in params:
            f.write(repr(float(v)) + "\n")


def load_checkpoint(path):
    """Read a checkpoint; returns (spec, params, meta)."""
    path = Path(path)
    if not path.exists():
        raise UsageError("checkpoint file not found: %s" % path)
    with open(path) as f:
        try:
            header = json.loads(f.readline())
        except json.JSONDecodeError as e:
            raise ConfigError("malformed checkpoint header in %s: %s" % (path, e)) from e
        if header.get("format") != CHECKPOINT_FORMAT:
            raise ConfigError("%s is not a %s file" % (path, CHECKPOINT_FORMAT))
        if header.get("layout_version") != LAYOUT_VERSION:
            raise ConfigError("unsupported layout version %r" % header.get("layout_version"))
        spec = MlpSpec.from_dict(header["spec"])
        values = [float(line) for line in f if line.strip()]
    params = np.asarray(values, dtype=np.float64)
    if params.size != header["n_params"] or params.size != spec.n_params():
        raise ConfigError("checkpoint %s has %d values, expected %d" % (path, params.size, spec.n_params()))
    return spec, params, header.get("meta", {})


def load_policy(path) -> GaussianMlpPolicy:
    spec, params, _ = load_checkpoint(path)
    return GaussianMlpPolicy(spec, params)
