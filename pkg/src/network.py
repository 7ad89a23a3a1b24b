"""Recurrent Q-network in numpy: torso, LSTM, MLP head, with exact BPTT.

Inputs are time-major: observations (T, B, *input_shape), previous-action
one-hots (T, B, A + 1) and previous rewards (T, B). The torso is a dense
layer for vector observations, or two 3x3 convolutions followed by a dense
layer for (channels, height, width) observations.
"""

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from .constants import CHECKPOINT_FORMAT, CHECKPOINT_VERSION

logger = logging.getLogger(__name__)

FORGET_BIAS = 1.0
KERNEL = 3


@dataclass(frozen=True)
class NetSpec:
    input_shape: tuple[int, ...]
    num_actions: int
    torso_width: int = 128
    recurrent_width: int = 128
    head_width: int = 128
    conv_channels: tuple[int, ...] = (16, 16)
    use_prev_inputs: bool = True

    def __post_init__(self):
        if len(self.input_shape) not in (1, 3):
            raise ValueError(f"input_shape must be (features,) or (channels, height, width), got {self.input_shape}")
        sizes = (*self.input_shape, self.num_actions, self.torso_width, self.recurrent_width, self.head_width)
        if any(n < 1 for n in (*sizes, *self.conv_channels)):
            raise ValueError("all NetSpec sizes must be positive")

    @property
    def torso(self) -> str:
        return "conv" if len(self.input_shape) == 3 else "mlp"

    @property
    def prev_action_size(self) -> int:
        return self.num_actions + 1

    @property
    def lstm_input_size(self) -> int:
        return self.torso_width + self.prev_action_size + 1

    def layout(self) -> list[tuple[str, tuple[int, ...]]]:
        """Ordered (name, shape) of every parameter block in the flat vector."""
        layers: list[tuple[str, tuple[int, ...]]] = []
        if self.torso == "conv":
            channels, height, width = self.input_shape
            for i, out in enumerate(self.conv_channels, 1):
                layers += [(f"conv{i}/w", (out, channels, KERNEL, KERNEL)), (f"conv{i}/b", (out,))]
                channels = out
            flat = channels * height * width
        else:
            flat = self.input_shape[0]
        d = self.recurrent_width
        layers += [
            ("torso/w", (flat, self.torso_width)),
            ("torso/b", (self.torso_width,)),
            ("lstm/w", (self.lstm_input_size + d, 4 * d)),
            ("lstm/b", (4 * d,)),
            ("head/w", (d, self.head_width)),
            ("head/b", (self.head_width,)),
            ("out/w", (self.head_width, self.num_actions)),
            ("out/b", (self.num_actions,)),
        ]
        return layers

    @property
    def num_params(self) -> int:
        return sum(math.prod(shape) for _, shape in self.layout())

    def to_dict(self) -> dict:
        return {
            "input_shape": list(self.input_shape),
            "num_actions": self.num_actions,
            "torso_width": self.torso_width,
            "recurrent_width": self.recurrent_width,
            "head_width": self.head_width,
            "conv_channels": list(self.conv_channels),
            "use_prev_inputs": self.use_prev_inputs,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "NetSpec":
        return cls(
            input_shape=tuple(data["input_shape"]),
            num_actions=int(data["num_actions"]),
            torso_width=int(data["torso_width"]),
            recurrent_width=int(data["recurrent_width"]),
            head_width=int(data["head_width"]),
            conv_channels=tuple(data["conv_channels"]),
            use_prev_inputs=bool(data["use_prev_inputs"]),
        )

    @classmethod
    def with_width(
        cls, input_shape: tuple[int, ...], num_actions: int, width: int, use_prev_inputs: bool = True
    ) -> "NetSpec":
        return cls(
            input_shape=tuple(input_shape),
            num_actions=num_actions,
            torso_width=width,
            recurrent_width=width,
            head_width=width,
            use_prev_inputs=use_prev_inputs,
        )


class NetParams:
    """Flat parameter vector with named, shaped views into it."""

    def __init__(self, spec: NetSpec, data: np.ndarray):
        if data.shape != (spec.num_params,):
            raise ValueError(f"parameter vector has shape {data.shape}, expected ({spec.num_params},)")
        self.spec = spec
        self.data = data
        self._views: dict[str, np.ndarray] = {}
        offset = 0
        for name, shape in spec.layout():
            size = math.prod(shape)
            self._views[name] = data[offset : offset + size].reshape(shape)
            offset += size

    def __getitem__(self, name: str) -> np.ndarray:
        return self._views[name]

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @classmethod
    def zeros(cls, spec: NetSpec, dtype=np.float32) -> "NetParams":
        return cls(spec, np.zeros(spec.num_params, dtype=dtype))

    def zeros_like(self) -> "NetParams":
        return NetParams.zeros(self.spec, self.dtype)

    def copy(self) -> "NetParams":
        return NetParams(self.spec, self.data.copy())

    def astype(self, dtype) -> "NetParams":
        return NetParams(self.spec, self.data.astype(dtype))

    def frozen(self) -> "NetParams":
        """Read-only copy; any in-place write raises."""
        data = self.data.copy()
        data.flags.writeable = False
        return NetParams(self.spec, data)


@dataclass(frozen=True)
class MemoryState:
    """LSTM hidden and cell vectors, shaped (d,) or (B, d)."""

    h: np.ndarray
    c: np.ndarray

    @classmethod
    def zeros(cls, width: int, batch: int | None = None, dtype=np.float32) -> "MemoryState":
        shape = (width,) if batch is None else (batch, width)
        return cls(np.zeros(shape, dtype=dtype), np.zeros(shape, dtype=dtype))

    def batched(self) -> "MemoryState":
        return self if self.h.ndim == 2 else MemoryState(self.h[None], self.c[None])

    def repeat(self, n: int) -> "MemoryState":
        """Broadcast a single memory to a batch of n."""
        return MemoryState(np.repeat(self.h[None], n, axis=0), np.repeat(self.c[None], n, axis=0))

    def select(self, index) -> "MemoryState":
        return MemoryState(self.h[index], self.c[index])

    @classmethod
    def stack(cls, memories: list["MemoryState"]) -> "MemoryState":
        return cls(np.stack([m.h for m in memories]), np.stack([m.c for m in memories]))


def init_params(spec: NetSpec, seed: int, dtype=np.float32) -> NetParams:
    """Fan-in scaled uniform weights, zero biases, forget-gate bias FORGET_BIAS."""
    rng = np.random.default_rng(seed)
    params = NetParams.zeros(spec, dtype=np.float64)
    for name, shape in spec.layout():
        if not name.endswith("/w"):
            continue
        fan_in = math.prod(shape[1:]) if name.startswith("conv") else shape[0]
        bound = 1.0 / math.sqrt(fan_in)
        params[name][...] = rng.uniform(-bound, bound, size=shape)
    d = spec.recurrent_width
    params["lstm/b"][d : 2 * d] = FORGET_BIAS
    return params.astype(dtype)


def _im2col(x: np.ndarray) -> np.ndarray:
    n, c, h, w = x.shape
    padded = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    windows = sliding_window_view(padded, (KERNEL, KERNEL), axis=(2, 3))
    return windows.transpose(0, 2, 3, 1, 4, 5).reshape(n * h * w, c * KERNEL * KERNEL)


def _col2im(dcols: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    n, c, h, w = shape
    dcols = dcols.reshape(n, h, w, c, KERNEL, KERNEL)
    dpadded = np.zeros((n, c, h + 2, w + 2), dtype=dcols.dtype)
    for i in range(KERNEL):
        for j in range(KERNEL):
            dpadded[:, :, i : i + h, j : j + w] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    return dpadded[:, :, 1:-1, 1:-1]


@dataclass
class _ConvCache:
    cols: np.ndarray
    pre: np.ndarray
    input_shape: tuple[int, ...]


@dataclass
class _TorsoCache:
    convs: list[_ConvCache]
    flat: np.ndarray
    pre: np.ndarray
    conv_output_shape: tuple[int, ...] | None = None


@dataclass
class _LSTMStep:
    xh: np.ndarray
    c_prev: np.ndarray
    i: np.ndarray
    f: np.ndarray
    o: np.ndarray
    g: np.ndarray
    tanh_c: np.ndarray


@dataclass
class UnrollCache:
    torso: _TorsoCache
    steps: list[_LSTMStep] = field(default_factory=list)
    hidden: np.ndarray | None = None
    head_pre: np.ndarray | None = None
    head: np.ndarray | None = None


def _torso_forward(params: NetParams, obs: np.ndarray) -> tuple[np.ndarray, _TorsoCache]:
    convs: list[_ConvCache] = []
    conv_output_shape = None
    x = obs
    if params.spec.torso == "conv":
        for i in range(1, len(params.spec.conv_channels) + 1):
            w, b = params[f"conv{i}/w"], params[f"conv{i}/b"]
            n, _, h, width = x.shape
            cols = _im2col(x)
            pre = (cols @ w.reshape(w.shape[0], -1).T + b).reshape(n, h, width, -1).transpose(0, 3, 1, 2)
            convs.append(_ConvCache(cols=cols, pre=pre, input_shape=x.shape))
            x = np.maximum(pre, 0.0)
        conv_output_shape = x.shape
    flat = x.reshape(len(x), -1)
    pre = flat @ params["torso/w"] + params["torso/b"]
    return np.maximum(pre, 0.0), _TorsoCache(convs, flat, pre, conv_output_shape)


def _torso_backward(params: NetParams, cache: _TorsoCache, dout: np.ndarray, grads: NetParams) -> None:
    dpre = dout * (cache.pre > 0)
    grads["torso/w"][...] = cache.flat.T @ dpre
    grads["torso/b"][...] = dpre.sum(axis=0)
    if not cache.convs:
        return
    dx = (dpre @ params["torso/w"].T).reshape(cache.conv_output_shape)
    for i in range(len(cache.convs), 0, -1):
        conv = cache.convs[i - 1]
        w = params[f"conv{i}/w"]
        dmat = (dx * (conv.pre > 0)).transpose(0, 2, 3, 1).reshape(-1, w.shape[0])
        grads[f"conv{i}/w"][...] = (dmat.T @ conv.cols).reshape(w.shape)
        grads[f"conv{i}/b"][...] = dmat.sum(axis=0)
        if i > 1:
            dx = _col2im(dmat @ w.reshape(w.shape[0], -1), conv.input_shape)


def unroll_with_cache(
    params: NetParams,
    obs: np.ndarray,
    prev_actions: np.ndarray,
    prev_rewards: np.ndarray,
    memory: MemoryState,
) -> tuple[np.ndarray, MemoryState, UnrollCache]:
    """Run T steps for a batch of B sequences; returns Q (T, B, A), final memory and the BPTT cache."""
    spec = params.spec
    dtype = params.dtype
    obs = np.asarray(obs, dtype=dtype)
    if obs.ndim != 2 + len(spec.input_shape) or obs.shape[2:] != spec.input_shape:
        raise ValueError(f"observations have shape {obs.shape}, expected (T, B, {spec.input_shape})")
    steps, batch = obs.shape[:2]
    if steps == 0:
        raise ValueError("cannot unroll an empty sequence")
    prev_actions = np.asarray(prev_actions, dtype=dtype)
    prev_rewards = np.asarray(prev_rewards, dtype=dtype)
    if prev_actions.shape != (steps, batch, spec.prev_action_size) or prev_rewards.shape != (steps, batch):
        raise ValueError(
            f"previous actions {prev_actions.shape} / rewards {prev_rewards.shape} do not match "
            f"observations {obs.shape[:2]} with {spec.prev_action_size} action slots"
        )
    memory = memory.batched()
    d = spec.recurrent_width
    if memory.h.shape != (batch, d):
        raise ValueError(f"memory has shape {memory.h.shape}, expected ({batch}, {d})")

    torso_out, torso_cache = _torso_forward(params, obs.reshape(steps * batch, *spec.input_shape))
    if not spec.use_prev_inputs:
        prev_actions = np.zeros_like(prev_actions)
        prev_rewards = np.zeros_like(prev_rewards)
    x = np.concatenate([torso_out.reshape(steps, batch, -1), prev_actions, prev_rewards[..., None]], axis=-1)

    cache = UnrollCache(torso=torso_cache)
    w, b = params["lstm/w"], params["lstm/b"]
    h, c = memory.h.astype(dtype), memory.c.astype(dtype)
    hidden = np.empty((steps, batch, d), dtype=dtype)
    for t in range(steps):
        xh = np.concatenate([x[t], h], axis=-1)
        z = xh @ w + b
        i, f, o = expit(z[:, :d]), expit(z[:, d : 2 * d]), expit(z[:, 2 * d : 3 * d])
        g = np.tanh(z[:, 3 * d :])
        c_prev = c
        c = f * c_prev + i * g
        tanh_c = np.tanh(c)
        h = o * tanh_c
        hidden[t] = h
        cache.steps.append(_LSTMStep(xh=xh, c_prev=c_prev, i=i, f=f, o=o, g=g, tanh_c=tanh_c))

    cache.hidden = hidden.reshape(steps * batch, d)
    cache.head_pre = cache.hidden @ params["head/w"] + params["head/b"]
    cache.head = np.maximum(cache.head_pre, 0.0)
    q = cache.head @ params["out/w"] + params["out/b"]
    return q.reshape(steps, batch, spec.num_actions), MemoryState(h, c), cache


def unroll(
    params: NetParams,
    obs: np.ndarray,
    prev_actions: np.ndarray,
    prev_rewards: np.ndarray,
    memory: MemoryState,
) -> tuple[np.ndarray, MemoryState]:
    q, memory, _ = unroll_with_cache(params, obs, prev_actions, prev_rewards, memory)
    return q, memory


def forward(
    params: NetParams,
    obs: np.ndarray,
    prev_action: np.ndarray,
    prev_reward: float | np.ndarray,
    memory: MemoryState,
) -> tuple[np.ndarray, MemoryState]:
    """One step. Accepts a single input or a batch along the leading axis."""
    obs = np.asarray(obs)
    single = obs.ndim == len(params.spec.input_shape)
    if single:
        obs = obs[None]
        prev_action = np.asarray(prev_action)[None]
        memory = memory.batched()
    prev_reward = np.atleast_1d(np.asarray(prev_reward))
    q, memory = unroll(params, obs[None], np.asarray(prev_action)[None], prev_reward[None], memory)
    if single:
        return q[0, 0], memory.select(0)
    return q[0], memory


def backward(params: NetParams, cache: UnrollCache, dq: np.ndarray) -> np.ndarray:
    """Gradient of sum(dq * Q) with respect to the flat parameter vector."""
    spec = params.spec
    grads = params.zeros_like()
    steps, batch, _ = dq.shape
    d = spec.recurrent_width
    dq = dq.reshape(steps * batch, -1).astype(params.dtype)

    grads["out/w"][...] = cache.head.T @ dq
    grads["out/b"][...] = dq.sum(axis=0)
    dhead = (dq @ params["out/w"].T) * (cache.head_pre > 0)
    grads["head/w"][...] = cache.hidden.T @ dhead
    grads["head/b"][...] = dhead.sum(axis=0)
    dhidden = (dhead @ params["head/w"].T).reshape(steps, batch, d)

    w = params["lstm/w"]
    dw = np.zeros_like(w)
    db = np.zeros(4 * d, dtype=params.dtype)
    dx = np.empty((steps, batch, spec.lstm_input_size), dtype=params.dtype)
    dh_next = np.zeros((batch, d), dtype=params.dtype)
    dc_next = np.zeros((batch, d), dtype=params.dtype)
    for t in range(steps - 1, -1, -1):
        s = cache.steps[t]
        dh = dhidden[t] + dh_next
        do = dh * s.tanh_c
        dc = dh * s.o * (1.0 - s.tanh_c**2) + dc_next
        dz = np.concatenate(
            [
                dc * s.g * s.i * (1.0 - s.i),
                dc * s.c_prev * s.f * (1.0 - s.f),
                do * s.o * (1.0 - s.o),
                dc * s.i * (1.0 - s.g**2),
            ],
            axis=-1,
        )
        dw += s.xh.T @ dz
        db += dz.sum(axis=0)
        dxh = dz @ w.T
        dx[t] = dxh[:, : spec.lstm_input_size]
        dh_next = dxh[:, spec.lstm_input_size :]
        dc_next = dc * s.f
    grads["lstm/w"][...] = dw
    grads["lstm/b"][...] = db

    dtorso = dx[..., : spec.torso_width].reshape(steps * batch, -1)
    _torso_backward(params, cache.torso, dtorso, grads)
    return grads.data


def clip_by_global_norm(grads: np.ndarray, max_norm: float) -> tuple[np.ndarray, float]:
    norm = float(np.sqrt(np.sum(np.square(grads, dtype=np.float64))))
    if norm > max_norm:
        grads = grads * (max_norm / norm)
    return grads, norm


class AdamOptimizer:
    """Adam with bias-corrected moments."""

    def __init__(self, size: int, lr: float = 1e-4, b1: float = 0.9, b2: float = 0.999, eps: float = 1e-8, dtype=np.float32):
        self.lr = lr
        self.b1 = b1
        self.b2 = b2
        self.eps = eps
        self.m = np.zeros(size, dtype=dtype)
        self.v = np.zeros(size, dtype=dtype)
        self.t = 0

    def update(self, data: np.ndarray, grads: np.ndarray) -> np.ndarray:
        self.t += 1
        self.m = self.b1 * self.m + (1.0 - self.b1) * grads
        self.v = self.b2 * self.v + (1.0 - self.b2) * grads**2
        m_hat = self.m / (1.0 - self.b1**self.t)
        v_hat = self.v / (1.0 - self.b2**self.t)
        return (data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(data.dtype, copy=False)

    def copy(self) -> "AdamOptimizer":
        clone = AdamOptimizer(self.m.size, self.lr, self.b1, self.b2, self.eps, self.m.dtype)
        clone.m, clone.v, clone.t = self.m.copy(), self.v.copy(), self.t
        return clone


def sgd_step(params: NetParams, grads: np.ndarray, optimizer: AdamOptimizer, max_grad_norm: float = 1.0) -> NetParams:
    """Clip to `max_grad_norm` in global norm, then apply one optimizer update."""
    grads = np.asarray(grads)
    if grads.shape != params.data.shape:
        raise ValueError(f"gradient has shape {grads.shape}, expected {params.data.shape}")
    if not np.all(np.isfinite(grads)):
        raise ValueError("gradient contains non-finite entries")
    clipped, _ = clip_by_global_norm(grads, max_grad_norm)
    return NetParams(params.spec, optimizer.update(params.data, clipped.astype(params.dtype, copy=False)))


def save_checkpoint(path: str | Path, params: NetParams, metadata: dict | None = None) -> Path:
    """Write a JSON header line followed by the little-endian parameter payload."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "spec": params.spec.to_dict(),
        "dtype": params.dtype.name,
        "size": int(params.data.size),
        "metadata": metadata or {},
    }
    payload = params.data.astype(params.dtype.newbyteorder("<")).tobytes()
    with open(path, "wb") as f:
        f.write(json.dumps(header).encode() + b"\n")
        f.write(payload)
    logger.debug(f"Saved checkpoint {path} ({params.data.size} parameters)")
    return path


def load_checkpoint(path: str | Path) -> tuple[NetParams, dict]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Checkpoint not found: {path}")
    with open(path, "rb") as f:
        header = json.loads(f.readline())
        payload = f.read()
    if header.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not a checkpoint")
    if header.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {header.get('version')} in {path}")
    dtype = np.dtype(header["dtype"])
    data = np.frombuffer(payload, dtype=dtype.newbyteorder("<")).astype(dtype)
    if data.size != header["size"]:
        raise ValueError(f"checkpoint {path} holds {data.size} values, header says {header['size']}")
    return NetParams(NetSpec.from_dict(header["spec"]), data), header["metadata"]
