"""LSTM cells, stacked bidirectional encoders and stacked LSTM decoders.

Gate weights are stored fused, one column block per gate in the order
``input, forget, output, candidate``; ``W`` maps the step input, ``U`` the
previous hidden state. Sequences travel as Python lists of ``(batch, dim)``
step tensors, so a ``seq x batch x dim`` quantity is ``list[Tensor]`` of
length ``seq``.

Padding is handled by carrying state: wherever ``mask[t, b]`` is false the
cell keeps its previous ``(h, c)``. The forward direction therefore ends on
the last real token and the backward direction starts from zeros at it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import tensor as T
from .tensor import ContractError, DimensionError, Tensor

INIT_SCALE = 0.1
FORGET_BIAS = 1.0


def uniform(rng: np.random.Generator, shape, dtype=T.DEFAULT_DTYPE, scale: float = INIT_SCALE) -> np.ndarray:
    return rng.uniform(-scale, scale, size=shape).astype(dtype)


@dataclass
class LstmParams:
    input_dim: int
    hidden_dim: int
    W: Tensor
    U: Tensor
    b: Tensor

    @classmethod
    def init(cls, input_dim: int, hidden_dim: int, rng: np.random.Generator, dtype=T.DEFAULT_DTYPE):
        H = hidden_dim
        b = np.zeros(4 * H, dtype=dtype)
        b[H:2 * H] = FORGET_BIAS
        return cls(
            input_dim,
            hidden_dim,
            Tensor(uniform(rng, (input_dim, 4 * H), dtype), requires_grad=True),
            Tensor(uniform(rng, (H, 4 * H), dtype), requires_grad=True),
            Tensor(b, requires_grad=True),
        )

    def named_parameters(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.W": self.W, f"{prefix}.U": self.U, f"{prefix}.b": self.b}

    def gate(self, name: str, which: str = "W") -> np.ndarray:
        """View of one gate's block (``i``, ``f``, ``o`` or ``c``) of ``W``, ``U`` or ``b``."""
        k = "ifoc".index(name)
        H = self.hidden_dim
        arr = getattr(self, which).data
        return arr[..., k * H:(k + 1) * H]


@dataclass
class BlstmEncoder:
    layers: list[tuple[LstmParams, LstmParams]]
    hidden_dim: int

    @classmethod
    def init(cls, input_dim: int, hidden_dim: int, num_layers: int, rng: np.random.Generator,
             dtype=T.DEFAULT_DTYPE, top_forward_extra: int = 0):
        """``top_forward_extra`` widens only the top layer's forward-direction input."""
        if num_layers < 1:
            raise ValueError("num_layers must be >= 1")
        layers = []
        for ell in range(num_layers):
            d_in = input_dim if ell == 0 else 2 * hidden_dim
            extra = top_forward_extra if ell == num_layers - 1 else 0
            fwd = LstmParams.init(d_in + extra, hidden_dim, rng, dtype)
            bwd = LstmParams.init(d_in, hidden_dim, rng, dtype)
            layers.append((fwd, bwd))
        return cls(layers, hidden_dim)

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    def named_parameters(self, prefix: str) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for ell, (fwd, bwd) in enumerate(self.layers):
            out.update(fwd.named_parameters(f"{prefix}.l{ell}.fwd"))
            out.update(bwd.named_parameters(f"{prefix}.l{ell}.bwd"))
        return out


@dataclass
class LstmDecoder:
    layers: list[LstmParams]
    hidden_dim: int = field(default=0)

    @classmethod
    def init(cls, input_dim: int, hidden_dim: int, num_layers: int, rng: np.random.Generator,
             dtype=T.DEFAULT_DTYPE):
        layers = [LstmParams.init(input_dim if ell == 0 else hidden_dim, hidden_dim, rng, dtype)
                  for ell in range(num_layers)]
        return cls(layers, hidden_dim)

    def named_parameters(self, prefix: str) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for ell, p in enumerate(self.layers):
            out.update(p.named_parameters(f"{prefix}.l{ell}"))
        return out

    def initial_state(self, batch: int, dtype=T.DEFAULT_DTYPE) -> list[tuple[Tensor, Tensor]]:
        z = np.zeros((batch, self.hidden_dim), dtype=dtype)
        return [(Tensor(z), Tensor(z)) for _ in self.layers]


# ---------------------------------------------------------------------------
# recurrences


def _cell(params: LstmParams, pre: Tensor, h_prev: Tensor, c_prev: Tensor) -> tuple[Tensor, Tensor]:
    """Finish one step given ``pre = x W + b`` (batch x 4H)."""
    H = params.hidden_dim
    z = T.add(pre, T.matmul(h_prev, params.U))
    i = T.sigmoid(T.slice_cols(z, 0, H))
    f = T.sigmoid(T.slice_cols(z, H, 2 * H))
    o = T.sigmoid(T.slice_cols(z, 2 * H, 3 * H))
    g = T.tanh(T.slice_cols(z, 3 * H, 4 * H))
    c = T.add(T.mul(f, c_prev), T.mul(i, g))
    h = T.mul(o, T.tanh(c))
    return h, c


def lstm_step(params: LstmParams, x_t: Tensor, h_prev: Tensor, c_prev: Tensor) -> tuple[Tensor, Tensor]:
    if x_t.ndim != 2 or x_t.shape[1] != params.input_dim:
        raise DimensionError(f"lstm_step: input {x_t.shape} does not match input_dim {params.input_dim}")
    expected = (x_t.shape[0], params.hidden_dim)
    if h_prev.shape != expected or c_prev.shape != expected:
        raise DimensionError(f"lstm_step: state shapes {h_prev.shape}, {c_prev.shape}, expected {expected}")
    pre = T.add(T.matmul(x_t, params.W), params.b)
    return _cell(params, pre, h_prev, c_prev)


def run_direction(params: LstmParams, inputs: Tensor, seq: int, batch: int, reverse: bool = False,
                  mask: np.ndarray | None = None) -> list[Tensor]:
    """Run one LSTM over ``inputs`` laid out as ``(seq * batch, dim)``, time-major.

    Returns hidden states in original time order regardless of direction.
    """
    if inputs.shape[0] != seq * batch or inputs.shape[1] != params.input_dim:
        raise DimensionError(
            f"run_direction: inputs {inputs.shape} do not match seq={seq}, batch={batch}, "
            f"input_dim={params.input_dim}"
        )
    pre_all = T.add(T.matmul(inputs, params.W), params.b)
    zeros = np.zeros((batch, params.hidden_dim), dtype=inputs.dtype)
    h, c = Tensor(zeros), Tensor(zeros)
    out: list[Tensor | None] = [None] * seq
    steps = range(seq - 1, -1, -1) if reverse else range(seq)
    for t in steps:
        pre = T.slice_rows(pre_all, t * batch, (t + 1) * batch) if seq > 1 else pre_all
        h_new, c_new = _cell(params, pre, h, c)
        if mask is not None and not mask[t].all():
            h_new = T.blend(mask[t], h_new, h)
            c_new = T.blend(mask[t], c_new, c)
        h, c = h_new, c_new
        out[t] = h
    return out  # type: ignore[return-value]


def shift_aux(aux: np.ndarray, mask: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Align a ``seq x batch x d`` side input for each direction.

    The forward direction at step ``t`` sees ``aux[t-1]``, the backward
    direction sees ``aux[t+1]``; both see zeros past either end and at
    padded positions.
    """
    aux = np.asarray(aux)
    if mask is not None:
        aux = aux * mask[:, :, None].astype(aux.dtype)
    fwd = np.zeros_like(aux)
    bwd = np.zeros_like(aux)
    fwd[1:] = aux[:-1]
    bwd[:-1] = aux[1:]
    return fwd, bwd


def flatten_steps(steps: Sequence[Tensor]) -> Tensor:
    """Time-major ``(seq * batch, dim)`` view of a list of step tensors."""
    return T.concat(list(steps), axis=0)


def encode_below_top(encoder: BlstmEncoder, inputs: Tensor, aux=None, mask: np.ndarray | None = None):
    """Run every layer except the top one.

    Returns ``(fwd_input, bwd_input)``: the ``(seq * batch, dim)`` inputs the
    top layer's forward and backward directions consume. Side input ``aux``
    is treated as a constant and enters layer 0 only.
    """
    if inputs.ndim != 3:
        raise DimensionError(f"encoder inputs must be seq x batch x dim, got {inputs.shape}")
    seq, batch, _ = inputs.shape
    if seq == 0:
        raise ContractError("encoder: sequence length is 0")
    if mask is not None and mask.shape != (seq, batch):
        raise DimensionError(f"encoder: mask {mask.shape} does not match ({seq}, {batch})")
    x = T.reshape(inputs, (seq * batch, inputs.shape[2]))
    aux_dim = encoder.layers[0][1].input_dim - inputs.shape[2]
    if aux is None and aux_dim > 0:
        aux = np.zeros((seq, batch, aux_dim), dtype=inputs.dtype)
    if aux is not None:
        aux_arr = aux.data if isinstance(aux, Tensor) else np.asarray(aux)
        if aux_arr.shape[:2] != (seq, batch):
            raise DimensionError(f"encoder: aux {aux_arr.shape} does not match ({seq}, {batch})")
        fa, ba = shift_aux(aux_arr.astype(inputs.dtype, copy=False), mask)
        fwd_in = T.concat([x, Tensor(fa.reshape(seq * batch, -1))], axis=1)
        bwd_in = T.concat([x, Tensor(ba.reshape(seq * batch, -1))], axis=1)
    else:
        fwd_in = bwd_in = x
    for fwd, bwd in encoder.layers[:-1]:
        hf = run_direction(fwd, fwd_in, seq, batch, reverse=False, mask=mask)
        hb = run_direction(bwd, bwd_in, seq, batch, reverse=True, mask=mask)
        fwd_in = bwd_in = flatten_steps([T.concat([a, b], axis=1) for a, b in zip(hf, hb)])
    return fwd_in, bwd_in


def blstm_forward(encoder: BlstmEncoder, inputs: Tensor, aux=None, mask: np.ndarray | None = None) -> list[Tensor]:
    """Per-step top-layer states ``[forward_t, backward_t]``, each ``(batch, 2 * hidden)``."""
    fwd_in, bwd_in = encode_below_top(encoder, inputs, aux, mask)
    seq, batch = inputs.shape[:2]
    fwd, bwd = encoder.layers[-1]
    extra = fwd.input_dim - fwd_in.shape[1]
    if extra > 0:
        # a top-layer feed the caller did not supply reads as zeros
        fwd_in = T.concat([fwd_in, Tensor(np.zeros((seq * batch, extra), dtype=fwd_in.dtype))], axis=1)
    hf = run_direction(fwd, fwd_in, seq, batch, reverse=False, mask=mask)
    hb = run_direction(bwd, bwd_in, seq, batch, reverse=True, mask=mask)
    return [T.concat([a, b], axis=1) for a, b in zip(hf, hb)]


def decoder_step(decoder: LstmDecoder, input_t: Tensor,
                 s_prev: list[tuple[Tensor, Tensor]]) -> tuple[Tensor, list[tuple[Tensor, Tensor]]]:
    """Advance every decoder layer once; returns the top hidden state and the new per-layer states."""
    if len(s_prev) != len(decoder.layers):
        raise DimensionError(f"decoder_step: {len(s_prev)} states for {len(decoder.layers)} layers")
    x = input_t
    new_state = []
    for params, (h, c) in zip(decoder.layers, s_prev):
        h, c = lstm_step(params, x, h, c)
        new_state.append((h, c))
        x = h
    return x, new_state
