"""MLP tone-mapper: three independent per-channel heads turning log-HDR
radiance plus log exposure time into LDR color in (0, 1).

Each channel is fc -> ReLU -> fc -> sigmoid on a scalar input. The default
("log") domain feeds log(radiance * exposure); the "linear" domain feeds the
raw product and exists as an ablation baseline.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LOG_FLOOR = 1e-10
CHANNEL_NAMES = ("r", "g", "b")


class ToneMapError(ValueError):
    pass


@dataclass
class ChannelMlp:
    """One scalar-input head: y = sigmoid(w2 . relu(w1 * x + b1) + b2)."""

    w1: np.ndarray  # (hidden,)
    b1: np.ndarray  # (hidden,)
    w2: np.ndarray  # (hidden,)
    b2: np.ndarray  # () scalar, kept as array so optimizers can view it

    def __post_init__(self):
        self.w1 = np.asarray(self.w1, dtype=np.float64).reshape(-1)
        h = self.w1.shape[0]
        self.b1 = np.asarray(self.b1, dtype=np.float64).reshape(h)
        self.w2 = np.asarray(self.w2, dtype=np.float64).reshape(h)
        self.b2 = np.asarray(self.b2, dtype=np.float64).reshape(())

    @property
    def hidden_width(self) -> int:
        return self.w1.shape[0]

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        a = np.multiply.outer(x, self.w1) + self.b1  # (..., hidden)
        h = np.maximum(a, 0.0)
        z = h @ self.w2 + self.b2
        return _sigmoid(z)

    def backward(self, x: np.ndarray, upstream: np.ndarray):
        """Cotangents of a batch forward pass.

        Returns (dx, dw1, db1, dw2, db2); parameter cotangents are summed
        over the batch.
        """
        x = np.asarray(x, dtype=np.float64)
        shape = x.shape
        xf = x.reshape(-1)
        up = np.asarray(upstream, dtype=np.float64).reshape(-1)
        a = np.outer(xf, self.w1) + self.b1  # (n, hidden)
        h = np.maximum(a, 0.0)
        z = h @ self.w2 + self.b2
        y = _sigmoid(z)
        dz = up * y * (1.0 - y)
        dw2 = dz @ h
        db2 = np.asarray(dz.sum())
        da = np.where(a > 0.0, np.outer(dz, self.w2), 0.0)
        dw1 = da.T @ xf
        db1 = da.sum(axis=0)
        dx = (da @ self.w1).reshape(shape)
        return dx, dw1, db1, dw2, db2

    def copy(self) -> "ChannelMlp":
        return ChannelMlp(self.w1.copy(), self.b1.copy(), self.w2.copy(), self.b2.copy())


def _sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


class ToneMapper:
    """Three parameter-disjoint channel heads plus the CRF-domain switch."""

    def __init__(self, channels: tuple[ChannelMlp, ChannelMlp, ChannelMlp], domain: str = "log"):
        if len(channels) != 3:
            raise ToneMapError("tone mapper needs exactly 3 channel heads")
        if domain not in ("log", "linear"):
            raise ToneMapError(f"unknown CRF domain {domain!r}")
        widths = {c.hidden_width for c in channels}
        if len(widths) != 1:
            raise ToneMapError("channel heads must share one hidden width")
        self.channels = tuple(channels)
        self.domain = domain

    @classmethod
    def random_init(cls, rng: np.random.Generator, hidden_width: int = 64, domain: str = "log"):
        """Uniform +-1/sqrt(fan_in) weights; final bias 0 so output starts at 0.5."""
        chans = []
        for _ in range(3):
            bound2 = 1.0 / np.sqrt(hidden_width)
            chans.append(
                ChannelMlp(
                    w1=rng.uniform(-1.0, 1.0, hidden_width),
                    b1=rng.uniform(-1.0, 1.0, hidden_width),
                    w2=rng.uniform(-bound2, bound2, hidden_width),
                    b2=np.zeros(()),
                )
            )
        return cls(tuple(chans), domain=domain)

    @property
    def hidden_width(self) -> int:
        return self.channels[0].hidden_width

    def params(self) -> dict[str, np.ndarray]:
        out = {}
        for name, ch in zip(CHANNEL_NAMES, self.channels):
            out[f"tm.{name}.w1"] = ch.w1
            out[f"tm.{name}.b1"] = ch.b1
            out[f"tm.{name}.w2"] = ch.w2
            out[f"tm.{name}.b2"] = ch.b2
        return out

    def set_param(self, name: str, value: np.ndarray) -> None:
        _, chan, attr = name.split(".")
        ch = self.channels[CHANNEL_NAMES.index(chan)]
        getattr(ch, attr)[...] = value

    def copy(self) -> "ToneMapper":
        return ToneMapper(tuple(c.copy() for c in self.channels), domain=self.domain)

    # -- evaluation ---------------------------------------------------------

    def forward_inputs(self, x: np.ndarray) -> np.ndarray:
        """Apply the three heads to already-built MLP inputs x (..., 3)."""
        x = np.asarray(x, dtype=np.float64)
        out = np.empty_like(x)
        for c in range(3):
            out[..., c] = self.channels[c].forward(x[..., c])
        return out

    def backward_inputs(self, x: np.ndarray, upstream: np.ndarray):
        """Cotangents w.r.t. inputs and parameters for a batch of inputs."""
        x = np.asarray(x, dtype=np.float64)
        up = np.asarray(upstream, dtype=np.float64)
        dx = np.empty_like(x)
        grads: dict[str, np.ndarray] = {}
        for c, name in enumerate(CHANNEL_NAMES):
            dxc, dw1, db1, dw2, db2 = self.channels[c].backward(x[..., c], up[..., c])
            dx[..., c] = dxc
            grads[f"tm.{name}.w1"] = dw1
            grads[f"tm.{name}.b1"] = db1
            grads[f"tm.{name}.w2"] = dw2
            grads[f"tm.{name}.b2"] = db2
        return dx, grads

    def tone_map(self, hdr_color: np.ndarray, exposure_time: float, sh_bias: float = 0.0) -> np.ndarray:
        """LDR color from linear HDR radiance and exposure time (log domain).

        The MLP input is log(hdr * exposure) + sh_bias; forming one product
        before the log makes the radiance/exposure exchange an exact identity.
        """
        hdr = np.asarray(hdr_color, dtype=np.float64)
        if np.any(hdr <= 0.0) or not np.all(np.isfinite(hdr)):
            raise ToneMapError("hdr_color components must be positive and finite")
        if not (exposure_time > 0.0 and np.isfinite(exposure_time)):
            raise ToneMapError("exposure_time must be positive and finite")
        x = np.log(np.maximum(hdr * exposure_time, LOG_FLOOR)) + sh_bias
        return self.forward_inputs(x)

    def tone_map_linear(self, hdr_color: np.ndarray, exposure_time: float) -> np.ndarray:
        """Ablation baseline: the heads see the raw product hdr * exposure."""
        hdr = np.asarray(hdr_color, dtype=np.float64)
        if not np.all(np.isfinite(hdr)) or not np.isfinite(exposure_time):
            raise ToneMapError("inputs must be finite")
        return self.forward_inputs(hdr * exposure_time)

    def tone_map_grad(self, inputs: np.ndarray, upstream: np.ndarray):
        """Exact reverse-mode derivative of forward_inputs at a single input triple."""
        return self.backward_inputs(np.asarray(inputs, dtype=np.float64), upstream)
