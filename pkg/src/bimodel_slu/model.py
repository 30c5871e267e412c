"""Two cross-connected task networks for intent detection and slot filling.

The intent network and the slot network each own a bidirectional LSTM
encoder and, in the ``with_decoder`` variant, an LSTM decoder. They exchange
encoder states only as detached values (:class:`SharedStates`), so each
network's loss produces gradients for its own parameters alone. The word
embedding table is shared between them unless ``tie_embeddings`` is off.

Shapes used below: ``n`` tokens, ``B`` utterances, ``H`` hidden units,
``k`` intents, ``m`` tag ids (reserved PAD and BOS included).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import rnn
from . import tensor as T
from .config import RunConfig
from .data import BOS_ID, Batch, Utterance, Vocabulary, encode_batch, normalize_token
from .tensor import ContractError, Tensor

RESERVED_TAGS = 2  # PAD, BOS are never predicted


@dataclass
class IntentNetwork:
    encoder: rnn.BlstmEncoder
    decoder: rnn.LstmDecoder | None
    proj_W: Tensor
    proj_b: Tensor

    def named_parameters(self) -> dict[str, Tensor]:
        out = self.encoder.named_parameters("intent.encoder")
        if self.decoder is not None:
            out.update(self.decoder.named_parameters("intent.decoder"))
        out["intent.proj.W"] = self.proj_W
        out["intent.proj.b"] = self.proj_b
        return out


@dataclass
class SlotNetwork:
    encoder: rnn.BlstmEncoder
    decoder: rnn.LstmDecoder | None
    label_embedding: Tensor
    proj_W: Tensor
    proj_b: Tensor

    def named_parameters(self) -> dict[str, Tensor]:
        out = self.encoder.named_parameters("slot.encoder")
        if self.decoder is not None:
            out.update(self.decoder.named_parameters("slot.decoder"))
        out["slot.label_embedding"] = self.label_embedding
        out["slot.proj.W"] = self.proj_W
        out["slot.proj.b"] = self.proj_b
        return out


@dataclass
class SharedStates:
    """Detached top-layer encoder states, ``n x B x 2H`` each, zero at padding."""

    h1: Tensor
    h2: Tensor
    lengths: np.ndarray

    def __post_init__(self):
        if self.h1.shape != self.h2.shape:
            raise ContractError(f"shared states differ in shape: {self.h1.shape} vs {self.h2.shape}")
        if self.h1.requires_grad or self.h2.requires_grad:
            raise ContractError("shared states must be detached")


class BiModel:
    def __init__(self, config: RunConfig, vocab: Vocabulary, dtype=T.DEFAULT_DTYPE):
        self.config = config
        self.vocab = vocab
        rng = np.random.default_rng(config.seed)
        H, L, E = config.hidden_dim, config.num_layers, config.embed_dim
        k, m, Ld = vocab.num_intents, vocab.num_tags, config.label_embed_dim
        if k < 1:
            raise ContractError("vocabulary has no intents")

        def param(shape, zero=False):
            data = np.zeros(shape, dtype=dtype) if zero else rnn.uniform(rng, shape, dtype)
            return Tensor(data, requires_grad=True)

        self.word_embedding = param((vocab.num_words, E))
        self.slot_word_embedding = None if config.tie_embeddings else param((vocab.num_words, E))

        dec = config.with_decoder
        self.intent_net = IntentNetwork(
            encoder=rnn.BlstmEncoder.init(E + 2 * H, H, L, rng, dtype),
            decoder=rnn.LstmDecoder.init(4 * H, H, L, rng, dtype) if dec else None,
            proj_W=param((H if dec else 2 * H, k)),
            proj_b=param((k,), zero=True),
        )
        self.slot_net = SlotNetwork(
            encoder=rnn.BlstmEncoder.init(E + 2 * H, H, L, rng, dtype, top_forward_extra=0 if dec else Ld),
            decoder=rnn.LstmDecoder.init(4 * H + Ld, H, L, rng, dtype) if dec else None,
            label_embedding=param((m, Ld)),
            proj_W=param((H if dec else 2 * H, m)),
            proj_b=param((m,), zero=True),
        )
        for name, p in self.named_parameters().items():
            p.name = name

    # -- parameter bookkeeping -------------------------------------------------

    @property
    def with_decoder(self) -> bool:
        return self.config.with_decoder

    @property
    def share_states(self) -> bool:
        return self.config.share_states

    def named_parameters(self) -> dict[str, Tensor]:
        out = {"embedding.words": self.word_embedding}
        if self.slot_word_embedding is not None:
            out["embedding.slot_words"] = self.slot_word_embedding
        out.update(self.intent_net.named_parameters())
        out.update(self.slot_net.named_parameters())
        return out

    def intent_parameters(self) -> list[Tensor]:
        """Parameters updated by the intent loss, the word embedding included."""
        return [self.word_embedding] + list(self.intent_net.named_parameters().values())

    def slot_parameters(self) -> list[Tensor]:
        table = self.slot_word_embedding if self.slot_word_embedding is not None else self.word_embedding
        return [table] + list(self.slot_net.named_parameters().values())

    def parameter_count(self) -> int:
        return sum(p.data.size for p in self.named_parameters().values())

    def zero_grad(self) -> None:
        for p in self.named_parameters().values():
            p.grad = None

    def astype(self, dtype) -> "BiModel":
        """Cast every parameter in place (used for 64-bit gradient checks)."""
        for p in self.named_parameters().values():
            p.data = p.data.astype(dtype)
            p.grad = None
        return self

    @property
    def dtype(self):
        return self.word_embedding.dtype

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.named_parameters().items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = self.named_parameters()
        missing = set(params) ^ set(state)
        if missing:
            raise ContractError(f"state dict mismatch on {sorted(missing)}")
        for k, p in params.items():
            if state[k].shape != p.shape:
                raise ContractError(f"{k}: shape {state[k].shape} does not match {p.shape}")
            p.data = np.array(state[k], dtype=p.dtype)


def ablate_sharing(config: RunConfig, vocab: Vocabulary) -> BiModel:
    """Same architecture with every cross-network state replaced by zeros."""
    return BiModel(config.replace(share_states=False), vocab)


# ---------------------------------------------------------------------------
# forward passes


def _embed(model: BiModel, table: Tensor, batch: Batch) -> Tensor:
    seq, n = batch.word_ids.shape
    flat = T.embedding_lookup(table, batch.word_ids.reshape(-1))
    return T.reshape(flat, (seq, n, model.config.embed_dim))


def _slot_table(model: BiModel) -> Tensor:
    return model.slot_word_embedding if model.slot_word_embedding is not None else model.word_embedding


def _check_batch(batch: Batch) -> None:
    if batch is None or batch.size == 0 or batch.seq_len == 0:
        raise ContractError("empty batch")


def _stack_states(states: Sequence[Tensor], mask: np.ndarray) -> np.ndarray:
    arr = np.stack([s.data for s in states])
    return arr * mask[:, :, None].astype(arr.dtype)


def encoder_states(model: BiModel, batch: Batch, network: str) -> np.ndarray:
    """Top-layer states of one encoder run without side input, as a constant array."""
    _check_batch(batch)
    with T.no_grad():
        if network == "intent":
            x = _embed(model, model.word_embedding, batch)
            states = rnn.blstm_forward(model.intent_net.encoder, x, None, batch.mask)
        else:
            x = _embed(model, _slot_table(model), batch)
            states = rnn.blstm_forward(model.slot_net.encoder, x, None, batch.mask)
    return _stack_states(states, batch.mask)


def compute_shared_states(model: BiModel, batch: Batch) -> SharedStates:
    _check_batch(batch)
    seq, n = batch.word_ids.shape
    if not model.share_states:
        z = np.zeros((seq, n, 2 * model.config.hidden_dim), dtype=model.dtype)
        return SharedStates(Tensor(z), Tensor(z.copy()), batch.lengths.copy())
    h1 = encoder_states(model, batch, "intent")
    h2 = encoder_states(model, batch, "slot")
    return SharedStates(Tensor(h1), Tensor(h2), batch.lengths.copy())


def refresh_intent_states(model: BiModel, batch: Batch, shared: SharedStates) -> SharedStates:
    if not model.share_states:
        return shared
    return SharedStates(Tensor(encoder_states(model, batch, "intent")), shared.h2, shared.lengths)


def _summary(states: Sequence[Tensor], H: int) -> Tensor:
    """``[forward state at the last real token, backward state at token 0]``."""
    return T.concat([T.slice_cols(states[-1], 0, H), T.slice_cols(states[0], H, 2 * H)], axis=1)


def _shared_summary(h: np.ndarray, lengths: np.ndarray, H: int) -> np.ndarray:
    last = h[lengths - 1, np.arange(h.shape[1]), :H]
    return np.concatenate([last, h[0, :, H:]], axis=1)


def predict_intent(model: BiModel, batch: Batch, shared: SharedStates | None) -> Tensor:
    """Intent logits, ``B x k``."""
    _check_batch(batch)
    if shared is None:
        raise ContractError("predict_intent needs shared states")
    H = model.config.hidden_dim
    net = model.intent_net
    x = _embed(model, model.word_embedding, batch)
    states = rnn.blstm_forward(net.encoder, x, shared.h2, batch.mask)
    summary = _summary(states, H)
    if net.decoder is None:
        readout = summary
    else:
        other = Tensor(_shared_summary(shared.h2.data, shared.lengths, H).astype(model.dtype))
        readout, _ = rnn.decoder_step(net.decoder, T.concat([summary, other], axis=1),
                                      net.decoder.initial_state(batch.size, model.dtype))
    return T.add(T.matmul(readout, net.proj_W), net.proj_b)


def greedy_tags(logits: np.ndarray) -> np.ndarray:
    """Argmax over tag ids, never choosing a reserved id."""
    return np.argmax(logits[:, RESERVED_TAGS:], axis=1) + RESERVED_TAGS


def predict_slots(model: BiModel, batch: Batch, shared: SharedStates | None,
                  teacher_labels: np.ndarray | None = None) -> list[Tensor]:
    """Per-step slot logits, a list of ``n`` tensors of shape ``B x m``.

    The previous tag fed at each step is the teacher label when
    ``teacher_labels`` (``n x B`` ids) is given, otherwise the greedy choice
    of the step before. Step 0 is fed BOS.
    """
    _check_batch(batch)
    if shared is None:
        raise ContractError("predict_slots needs shared states")
    seq, n = batch.word_ids.shape
    if teacher_labels is not None:
        teacher_labels = np.asarray(teacher_labels)
        if teacher_labels.shape != (seq, n):
            raise ContractError(f"teacher labels {teacher_labels.shape} do not match batch ({seq}, {n})")
    net = model.slot_net
    H = model.config.hidden_dim
    mask = batch.mask
    x = _embed(model, _slot_table(model), batch)
    h1 = shared.h1.data.astype(model.dtype, copy=False)
    prev = np.full(n, BOS_ID, dtype=np.int64)
    logits: list[Tensor] = []

    def advance(t: int, step_logits: Tensor) -> np.ndarray:
        logits.append(step_logits)
        return teacher_labels[t] if teacher_labels is not None else greedy_tags(step_logits.data)

    if net.decoder is not None:
        states = rnn.blstm_forward(net.encoder, x, shared.h1, mask)
        s = net.decoder.initial_state(n, model.dtype)
        for t in range(seq):
            label = T.embedding_lookup(net.label_embedding, prev)
            inp = T.concat([states[t], Tensor(h1[t]), label], axis=1)
            top, s_new = rnn.decoder_step(net.decoder, inp, s)
            if not mask[t].all():
                s_new = [(T.blend(mask[t], hn, ho), T.blend(mask[t], cn, co))
                         for (hn, cn), (ho, co) in zip(s_new, s)]
            s = s_new
            prev = advance(t, T.add(T.matmul(top, net.proj_W), net.proj_b))
        return logits

    # without a decoder the previous tag enters the top forward direction
    fwd_in, bwd_in = rnn.encode_below_top(net.encoder, x, shared.h1, mask)
    top_fwd, top_bwd = net.encoder.layers[-1]
    hb = rnn.run_direction(top_bwd, bwd_in, seq, n, reverse=True, mask=mask)
    zeros = np.zeros((n, H), dtype=model.dtype)
    h, c = Tensor(zeros), Tensor(zeros)
    for t in range(seq):
        below = T.slice_rows(fwd_in, t * n, (t + 1) * n) if seq > 1 else fwd_in
        label = T.embedding_lookup(net.label_embedding, prev)
        h_new, c_new = rnn.lstm_step(top_fwd, T.concat([below, label], axis=1), h, c)
        if not mask[t].all():
            h_new, c_new = T.blend(mask[t], h_new, h), T.blend(mask[t], c_new, c)
        h, c = h_new, c_new
        state = T.concat([h, hb[t]], axis=1)
        prev = advance(t, T.add(T.matmul(state, net.proj_W), net.proj_b))
    return logits


# ---------------------------------------------------------------------------
# losses


def intent_loss(logits: Tensor, gold) -> Tensor:
    """Mean cross entropy of one intent per utterance."""
    return T.softmax_cross_entropy(logits, gold)


def slot_loss(logits: Sequence[Tensor] | Tensor, gold_seq: np.ndarray, mask: np.ndarray) -> Tensor:
    """Cross entropy summed over real tokens of each utterance, averaged over utterances."""
    mask = np.asarray(mask, dtype=bool)
    gold_seq = np.asarray(gold_seq)
    if mask.shape != gold_seq.shape:
        raise ContractError(f"slot_loss: mask {mask.shape} does not match gold {gold_seq.shape}")
    if not mask.any(axis=0).all():
        raise ContractError("slot_loss: an utterance has every position masked")
    flat = logits if isinstance(logits, Tensor) else T.concat(list(logits), axis=0)
    return T.softmax_cross_entropy(flat, gold_seq.reshape(-1), weights=mask.reshape(-1),
                                   normalizer=gold_seq.shape[1])


# ---------------------------------------------------------------------------
# inference


def predict_batch(model: BiModel, utterances: Sequence[Utterance]) -> list[tuple[str, list[str]]]:
    """Greedy intent and tags for each utterance (gold fields are ignored)."""
    if not utterances:
        return []
    batch = encode_batch(utterances, model.vocab)
    with T.no_grad():
        shared = compute_shared_states(model, batch)
        intents = np.argmax(predict_intent(model, batch, shared).data, axis=1)
        steps = predict_slots(model, batch, shared)
    tag_ids = np.stack([greedy_tags(s.data) for s in steps])
    out = []
    for b, u in enumerate(utterances):
        tags = [model.vocab.tags[i] for i in tag_ids[: len(u), b]]
        out.append((model.vocab.intents[intents[b]], tags))
    return out


def predict(model: BiModel, utterance_tokens: Sequence[str]) -> tuple[str, list[str]]:
    tokens = [normalize_token(t, model.config.lowercase, model.config.normalize_digits)
              for t in utterance_tokens]
    if not tokens:
        raise ContractError("predict: empty input")
    utt = Utterance(tuple(tokens), ("O",) * len(tokens), "")
    return predict_batch(model, [utt])[0]
