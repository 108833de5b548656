"""The branched recurrent network: an encoder that compresses context
frames, a bidirectional event branch that classifies spatio-temporal events
into per-block classes, and a decoder that reconstructs the target frames
from both. Also the supervised variant (event branch + output convolutions,
no event head) and the binary checkpoint format.

Event maps are [n,M,M] float arrays: block-constant per grid cell, exactly
one active class per cell, values in (0,1].
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import conv_lstm as cl
from . import tensor_core as tc

__all__ = [
    "NetworkConfig",
    "BranchedModel",
    "SupervisedModel",
    "ReconOutput",
    "SupervisedOutput",
    "CheckpointError",
    "init_unsupervised",
    "init_supervised",
    "encode",
    "event_head",
    "detect_events",
    "reconstruct",
    "forward_unsupervised",
    "backward_unsupervised",
    "supervised_maps",
    "forward_supervised",
    "backward_supervised",
    "build_supervised_target",
    "event_map_ok",
    "save_checkpoint",
    "load_checkpoint",
]


@dataclass
class NetworkConfig:
    frame_size: int = 64
    hidden_channels: int = 32
    event_classes: int = 16
    encoder_len: int = 5
    target_len: int = 10
    grid_factor: int = 8
    conv_kernel: int = 5
    cnn1_kernel: int = 5

    def __post_init__(self):
        if self.frame_size % self.grid_factor != 0:
            raise ValueError(
                f"frame_size {self.frame_size} not divisible by grid_factor {self.grid_factor}")
        if self.encoder_len < 1 or self.target_len < 1:
            raise ValueError("encoder_len and target_len must be >= 1")
        if self.conv_kernel % 2 == 0 or self.cnn1_kernel % 2 == 0:
            raise ValueError("kernel sizes must be odd")

    def as_dict(self) -> dict:
        return {
            "frame_size": self.frame_size,
            "hidden_channels": self.hidden_channels,
            "event_classes": self.event_classes,
            "encoder_len": self.encoder_len,
            "target_len": self.target_len,
            "grid_factor": self.grid_factor,
            "conv_kernel": self.conv_kernel,
            "cnn1_kernel": self.cnn1_kernel,
        }


_LSTM_LAYERS_UNSUP = ("encoder", "event_fwd", "event_bwd", "event_merge", "decoder")
_LSTM_LAYERS_SUP = ("event_fwd", "event_bwd", "event_merge")


@dataclass
class BranchedModel:
    """Parameters of the full unsupervised network."""
    config: NetworkConfig
    encoder: cl.ConvLstmParams
    event_fwd: cl.ConvLstmParams
    event_bwd: cl.ConvLstmParams
    event_merge: cl.ConvLstmParams
    event_proj_w: np.ndarray  # [n,S,1,1]
    event_proj_b: np.ndarray  # [n]
    decoder: cl.ConvLstmParams
    recon_w: np.ndarray  # [S, S+n, k, k]
    recon_b: np.ndarray  # [S]
    out_w: np.ndarray  # [1, S, 1, 1]
    out_b: np.ndarray  # [1]

    kind = "unsupervised"

    def named_params(self):
        for layer in _LSTM_LAYERS_UNSUP:
            for name, arr in getattr(self, layer).named_arrays():
                yield f"{layer}.{name}", arr
        yield "event_proj.w", self.event_proj_w
        yield "event_proj.b", self.event_proj_b
        yield "recon_conv.w", self.recon_w
        yield "recon_conv.b", self.recon_b
        yield "output_conv.w", self.out_w
        yield "output_conv.b", self.out_b

    def zeros_like(self) -> "BranchedModel":
        return BranchedModel(
            self.config,
            *(getattr(self, l).zeros_like() for l in _LSTM_LAYERS_UNSUP[:4]),
            np.zeros_like(self.event_proj_w), np.zeros_like(self.event_proj_b),
            self.decoder.zeros_like(),
            np.zeros_like(self.recon_w), np.zeros_like(self.recon_b),
            np.zeros_like(self.out_w), np.zeros_like(self.out_b),
        )


@dataclass
class SupervisedModel:
    """Event branch plus output convolutions; no event head, no decoder."""
    config: NetworkConfig
    event_fwd: cl.ConvLstmParams
    event_bwd: cl.ConvLstmParams
    event_merge: cl.ConvLstmParams
    recon_w: np.ndarray  # [S, S, k, k]
    recon_b: np.ndarray
    out_w: np.ndarray
    out_b: np.ndarray

    kind = "supervised"

    def named_params(self):
        for layer in _LSTM_LAYERS_SUP:
            for name, arr in getattr(self, layer).named_arrays():
                yield f"{layer}.{name}", arr
        yield "recon_conv.w", self.recon_w
        yield "recon_conv.b", self.recon_b
        yield "output_conv.w", self.out_w
        yield "output_conv.b", self.out_b

    def zeros_like(self) -> "SupervisedModel":
        return SupervisedModel(
            self.config,
            *(getattr(self, l).zeros_like() for l in _LSTM_LAYERS_SUP),
            np.zeros_like(self.recon_w), np.zeros_like(self.recon_b),
            np.zeros_like(self.out_w), np.zeros_like(self.out_b),
        )


def _xavier_kernel(rng, c_out, c_in, k):
    bound = cl.xavier_bound(c_in, c_out, k, k)
    return rng.uniform(-bound, bound, size=(c_out, c_in, k, k))


def init_unsupervised(config: NetworkConfig, seed=0) -> BranchedModel:
    rng = np.random.default_rng(seed)
    m, s, n = config.frame_size, config.hidden_channels, config.event_classes
    k = config.conv_kernel
    return BranchedModel(
        config,
        encoder=cl.init_params(1, s, m, m, k, rng),
        event_fwd=cl.init_params(1, s, m, m, k, rng),
        event_bwd=cl.init_params(1, s, m, m, k, rng),
        event_merge=cl.init_params(2 * s, s, m, m, k, rng),
        event_proj_w=_xavier_kernel(rng, n, s, 1),
        event_proj_b=np.zeros(n),
        decoder=cl.init_params(1, s, m, m, k, rng),
        recon_w=_xavier_kernel(rng, s, s + n, config.cnn1_kernel),
        recon_b=np.zeros(s),
        out_w=_xavier_kernel(rng, 1, s, 1),
        out_b=np.zeros(1),
    )


def init_supervised(config: NetworkConfig, seed=0) -> SupervisedModel:
    rng = np.random.default_rng(seed)
    m, s = config.frame_size, config.hidden_channels
    k = config.conv_kernel
    return SupervisedModel(
        config,
        event_fwd=cl.init_params(1, s, m, m, k, rng),
        event_bwd=cl.init_params(1, s, m, m, k, rng),
        event_merge=cl.init_params(2 * s, s, m, m, k, rng),
        recon_w=_xavier_kernel(rng, s, s, config.cnn1_kernel),
        recon_b=np.zeros(s),
        out_w=_xavier_kernel(rng, 1, s, 1),
        out_b=np.zeros(1),
    )


# ---------------------------------------------------------------------------
# forward pieces
# ---------------------------------------------------------------------------

def _check_frames(frames, expected_len: int, m: int, what: str):
    if len(frames) != expected_len:
        raise ValueError(f"{what}: expected {expected_len} frames, got {len(frames)}")
    for t, fr in enumerate(frames):
        if np.shape(fr) != (1, m, m):
            raise ValueError(
                f"{what}: frame {t} has shape {np.shape(fr)}, expected {(1, m, m)}")


def encode(model: BranchedModel, frames) -> cl.CellState:
    """Compress the context frames into the encoder's final (h, c)."""
    return _encode_traced(model, frames).final


def _encode_traced(model: BranchedModel, frames) -> cl.UnrollResult:
    cfg = model.config
    _check_frames(frames, cfg.encoder_len, cfg.frame_size, "encode")
    init = cl.zero_state(cfg.hidden_channels, cfg.frame_size, cfg.frame_size)
    return cl.unroll(model.encoder, frames, init)


@dataclass
class _HeadTrace:
    conv: object
    pool: object
    softmax: object
    wta: object
    factor: int


def _event_head_traced(hidden, proj_w, proj_b, factor: int):
    z, t_conv = tc.conv2d_same(hidden, proj_w, proj_b)
    pooled, t_pool = tc.maxpool2d(z, factor)
    soft, t_soft = tc.channel_softmax(pooled)
    wta, t_wta = tc.channel_wta(soft)
    y = tc.upsample_nn(wta, factor)
    return y, _HeadTrace(t_conv, t_pool, t_soft, t_wta, factor)


def _event_head_backward(trace: _HeadTrace, d_y):
    d_wta = tc.upsample_nn_backward(d_y, trace.factor)
    d_soft = tc.channel_wta_backward(trace.wta, d_wta)
    d_pool = tc.channel_softmax_backward(trace.softmax, d_soft)
    d_z = tc.maxpool2d_backward(trace.pool, d_pool)
    return tc.conv2d_same_backward(trace.conv, d_z)


def event_head(hidden, proj_w, proj_b, grid_factor: int = 8) -> np.ndarray:
    """Project hidden channels to class logits, pool to the event grid,
    softmax across classes, keep only the winner, and replicate back up."""
    y, _ = _event_head_traced(hidden, proj_w, proj_b, grid_factor)
    return y


@dataclass
class _EventBranchTrace:
    fwd_run: cl.UnrollResult
    bwd_run: cl.UnrollResult
    merge_run: cl.UnrollResult
    split: int  # channel split point of the concatenated features


def _bidirectional_features(fwd_params, bwd_params, frames):
    """Forward and reversed unrolls over the target frames, hidden states
    re-aligned to forward time and channel-concatenated per step."""
    s = fwd_params.state_channels
    h = frames[0].shape[1]
    w = frames[0].shape[2]
    run_f = cl.unroll(fwd_params, frames, cl.zero_state(s, h, w))
    run_b = cl.unroll(bwd_params, frames, cl.zero_state(s, h, w), reverse=True)
    feats = [tc.concat_channels(run_f.states[t].h, run_b.states[t].h)
             for t in range(len(frames))]
    return feats, run_f, run_b


def _event_branch_traced(model, frames):
    feats, run_f, run_b = _bidirectional_features(model.event_fwd, model.event_bwd, frames)
    s = model.event_fwd.state_channels
    m = frames[0].shape[1]
    merge_run = cl.unroll(model.event_merge, feats, cl.zero_state(s, m, m))
    return merge_run, _EventBranchTrace(run_f, run_b, merge_run, s)


def _event_branch_backward(model, trace: _EventBranchTrace, d_hidden, grads):
    """BPTT through merge, then split the per-step feature gradients back
    into the forward and backward readers."""
    g_merge, d_feats, _ = cl.bptt(model.event_merge, trace.merge_run, d_hidden)
    _accum_params(grads.event_merge, g_merge)
    d_fwd_h, d_bwd_h = [], []
    for d in d_feats:
        a, b = tc.concat_channels_backward(d, trace.split)
        d_fwd_h.append(a)
        d_bwd_h.append(b)
    g_fwd, _, _ = cl.bptt(model.event_fwd, trace.fwd_run, d_fwd_h)
    g_bwd, _, _ = cl.bptt(model.event_bwd, trace.bwd_run, d_bwd_h)
    _accum_params(grads.event_fwd, g_fwd)
    _accum_params(grads.event_bwd, g_bwd)


def _accum_params(dst: cl.ConvLstmParams, src: cl.ConvLstmParams):
    for (_, a), (_, b) in zip(dst.named_arrays(), src.named_arrays()):
        a += b


def detect_events(model: BranchedModel, frames) -> list:
    """Per-frame event maps for a target sequence: bidirectional reading,
    a merging recurrence, then the event head on every hidden state."""
    cfg = model.config
    _check_frames(frames, cfg.target_len, cfg.frame_size, "detect_events")
    merge_run, _ = _event_branch_traced(model, frames)
    return [event_head(st.h, model.event_proj_w, model.event_proj_b, cfg.grid_factor)
            for st in merge_run.states]


@dataclass
class _DecodeStep:
    conv1: object
    tanh_out: np.ndarray
    conv2: object
    sig_out: np.ndarray


def _decode_traced(model: BranchedModel, enc_state: cl.CellState, events):
    """Unroll the decoder from the encoder state over zero input frames,
    fusing each hidden state with its event map through the two output
    convolutions."""
    cfg = model.config
    m = cfg.frame_size
    zeros_frame = np.zeros((1, m, m))
    run = cl.unroll(model.decoder, [zeros_frame] * len(events), enc_state)
    frames_out, steps = [], []
    for t, y in enumerate(events):
        merged = tc.concat_channels(run.states[t].h, y)
        a, t_conv1 = tc.conv2d_same(merged, model.recon_w, model.recon_b)
        ta = tc.tanh_act(a)
        b, t_conv2 = tc.conv2d_same(ta, model.out_w, model.out_b)
        frame = tc.sigmoid(b)
        frames_out.append(frame)
        steps.append(_DecodeStep(t_conv1, ta, t_conv2, frame))
    return frames_out, run, steps


def reconstruct(model: BranchedModel, enc_state: cl.CellState, events) -> list:
    if len(events) != model.config.target_len:
        raise ValueError(
            f"reconstruct: expected {model.config.target_len} event maps, got {len(events)}")
    frames_out, _, _ = _decode_traced(model, enc_state, events)
    return frames_out


# ---------------------------------------------------------------------------
# unsupervised forward / backward
# ---------------------------------------------------------------------------

@dataclass
class _UnsupTrace:
    enc_run: cl.UnrollResult
    branch: _EventBranchTrace
    head_traces: list
    dec_run: cl.UnrollResult
    dec_steps: list
    d_pred: list  # per-frame gradient of the loss wrt the reconstruction


@dataclass
class ReconOutput:
    frames: list  # reconstructed target frames, each [1,M,M] in (0,1)
    hiddens: list  # decoder hidden states
    events: list  # per-frame event maps [n,M,M]
    loss: float
    trace: _UnsupTrace = field(repr=False, default=None)


def forward_unsupervised(model: BranchedModel, frames) -> ReconOutput:
    """Split the input into context + target, run all three branches, and
    score the reconstruction with mean binary cross-entropy."""
    cfg = model.config
    total = cfg.encoder_len + cfg.target_len
    _check_frames(frames, total, cfg.frame_size, "forward_unsupervised")
    context = list(frames[:cfg.encoder_len])
    target = list(frames[cfg.encoder_len:])

    enc_run = _encode_traced(model, context)
    merge_run, branch = _event_branch_traced(model, target)
    events, head_traces = [], []
    for st in merge_run.states:
        y, ht = _event_head_traced(st.h, model.event_proj_w, model.event_proj_b,
                                   cfg.grid_factor)
        events.append(y)
        head_traces.append(ht)

    recon, dec_run, dec_steps = _decode_traced(model, enc_run.final, events)

    pred = np.stack(recon)
    truth = np.stack([np.asarray(f, dtype=np.float64) for f in target])
    loss, d_pred = tc.bce_loss(pred, truth)
    trace = _UnsupTrace(enc_run, branch, head_traces, dec_run, dec_steps,
                        [d_pred[t] for t in range(len(target))])
    hiddens = [st.h for st in dec_run.states]
    return ReconOutput(recon, hiddens, events, loss, trace)


def _decode_backward(model, trace_steps, d_frames, n_classes):
    """Backward through the per-step output convolutions. Returns per-step
    gradients on the decoder hidden states and the event maps, plus
    accumulated conv parameter gradients."""
    s = model.recon_w.shape[0]
    d_hidden, d_events = [], []
    d_recon_w = np.zeros_like(model.recon_w)
    d_recon_b = np.zeros_like(model.recon_b)
    d_out_w = np.zeros_like(model.out_w)
    d_out_b = np.zeros_like(model.out_b)
    for st, d_frame in zip(trace_steps, d_frames):
        d_b = tc.sigmoid_backward(st.sig_out, d_frame)
        d_ta, dw2, db2 = tc.conv2d_same_backward(st.conv2, d_b)
        d_a = tc.tanh_backward(st.tanh_out, d_ta)
        d_merged, dw1, db1 = tc.conv2d_same_backward(st.conv1, d_a)
        d_out_w += dw2
        d_out_b += db2
        d_recon_w += dw1
        d_recon_b += db1
        if n_classes:
            d_h, d_y = tc.concat_channels_backward(d_merged, s)
            d_events.append(d_y)
        else:
            d_h = d_merged
        d_hidden.append(d_h)
    return d_hidden, d_events, (d_recon_w, d_recon_b, d_out_w, d_out_b)


def backward_unsupervised(model: BranchedModel, out: ReconOutput) -> BranchedModel:
    """Reverse-mode gradients of the reconstruction loss for every
    parameter. Winner-take-all and max-pooling route gradients through
    their winners only."""
    tr = out.trace
    if tr is None:
        raise ValueError("backward_unsupervised: forward trace missing")
    grads = model.zeros_like()
    n = model.config.event_classes

    d_hidden, d_events, (dw1, db1, dw2, db2) = _decode_backward(
        model, tr.dec_steps, tr.d_pred, n)
    grads.recon_w += dw1
    grads.recon_b += db1
    grads.out_w += dw2
    grads.out_b += db2

    # decoder BPTT; its initial-state gradient flows into the encoder
    g_dec, _, d_enc_state = cl.bptt(model.decoder, tr.dec_run, d_hidden)
    _accum_params(grads.decoder, g_dec)
    enc_d_hidden: list = [None] * model.config.encoder_len
    enc_d_hidden[-1] = d_enc_state.h
    g_enc, _, _ = cl.bptt(model.encoder, tr.enc_run, enc_d_hidden,
                          d_c_final=d_enc_state.c)
    _accum_params(grads.encoder, g_enc)

    # event path: head backward, then the bidirectional branch
    d_merge_hidden = []
    for ht, d_y in zip(tr.head_traces, d_events):
        d_h, d_pw, d_pb = _event_head_backward(ht, d_y)
        grads.event_proj_w += d_pw
        grads.event_proj_b += d_pb
        d_merge_hidden.append(d_h)
    _event_branch_backward(model, tr.branch, d_merge_hidden, grads)
    return grads


# ---------------------------------------------------------------------------
# supervised variant
# ---------------------------------------------------------------------------

@dataclass
class _SupTrace:
    branch: _EventBranchTrace
    steps: list
    d_pred: list


@dataclass
class SupervisedOutput:
    maps: list  # per-frame response maps [1,M,M]
    loss: float
    trace: _SupTrace = field(repr=False, default=None)


def supervised_maps(model: SupervisedModel, frames):
    """Per-frame response maps of the supervised variant (no loss)."""
    cfg = model.config
    _check_frames(frames, cfg.target_len, cfg.frame_size, "supervised_maps")
    merge_run, branch = _event_branch_traced(model, frames)
    maps, steps = [], []
    for st in merge_run.states:
        a, t_conv1 = tc.conv2d_same(st.h, model.recon_w, model.recon_b)
        ta = tc.tanh_act(a)
        b, t_conv2 = tc.conv2d_same(ta, model.out_w, model.out_b)
        frame = tc.sigmoid(b)
        maps.append(frame)
        steps.append(_DecodeStep(t_conv1, ta, t_conv2, frame))
    return maps, branch, steps


def forward_supervised(model: SupervisedModel, frames, targets) -> SupervisedOutput:
    maps, branch, steps = supervised_maps(model, frames)
    if len(targets) != len(maps):
        raise ValueError(
            f"forward_supervised: {len(targets)} targets for {len(maps)} frames")
    pred = np.stack(maps)
    truth = np.stack([np.asarray(t, dtype=np.float64) for t in targets])
    if truth.shape != pred.shape:
        raise ValueError(
            f"forward_supervised: target shape {truth.shape} != map shape {pred.shape}")
    loss, d_pred = tc.bce_loss(pred, truth)
    trace = _SupTrace(branch, steps, [d_pred[t] for t in range(len(maps))])
    return SupervisedOutput(maps, loss, trace)


def backward_supervised(model: SupervisedModel, out: SupervisedOutput) -> SupervisedModel:
    tr = out.trace
    if tr is None:
        raise ValueError("backward_supervised: forward trace missing")
    grads = model.zeros_like()
    d_hidden, _, (dw1, db1, dw2, db2) = _decode_backward(model, tr.steps, tr.d_pred, 0)
    grads.recon_w += dw1
    grads.recon_b += db1
    grads.out_w += dw2
    grads.out_b += db2
    _event_branch_backward(model, tr.branch, d_hidden, grads)
    return grads


def build_supervised_target(points, frame_size: int, length: int,
                            background: float = 0.1, ring_value: float = 0.6,
                            core_value: float = 1.0, ring_size: int = 20,
                            core_size: int = 7) -> list:
    """Training targets from annotated (frame, x, y) points: a large square
    of ring_value and a small square of core_value around each point, max
    over overlaps, squares clipped at the frame border."""
    m = frame_size
    maps = [np.full((1, m, m), background) for _ in range(length)]

    def paint(arr, cx, cy, size, value):
        half = (size - 1) // 2
        x0, x1 = max(0, cx - half), min(m, cx - half + size)
        y0, y1 = max(0, cy - half), min(m, cy - half + size)
        region = arr[0, y0:y1, x0:x1]
        np.maximum(region, value, out=region)

    for f, x, y in points:
        if not (0 <= x < m and 0 <= y < m):
            raise ValueError(f"build_supervised_target: point ({x},{y}) outside {m}x{m} frame")
        if not (0 <= f < length):
            continue
        paint(maps[f], x, y, ring_size, ring_value)
    for f, x, y in points:
        if 0 <= f < length:
            paint(maps[f], x, y, core_size, core_value)
    return maps


def event_map_ok(y: np.ndarray, grid_factor: int) -> bool:
    """Structural check: block-constant channels, exactly one active class
    per grid cell, active values in (0, 1]."""
    n, m, m2 = y.shape
    if m != m2 or m % grid_factor != 0:
        return False
    g = m // grid_factor
    blocks = y.reshape(n, g, grid_factor, g, grid_factor)
    if (blocks.max(axis=(2, 4)) != blocks.min(axis=(2, 4))).any():
        return False
    per_block = blocks[:, :, 0, :, 0]
    active = per_block != 0
    if (active.sum(axis=0) != 1).any():
        return False
    vals = per_block[active]
    return bool(((vals > 0) & (vals <= 1)).all())


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

CHECKPOINT_MAGIC = b"MSCOPE1\n"


class CheckpointError(ValueError):
    pass


def save_checkpoint(model, path):
    """Binary layout: magic line, key=value config lines, a blank line, then
    one blob per parameter (u32 name length, name, u32 ndim, u32 dims,
    little-endian float64 data)."""
    cfg = model.config.as_dict()
    cfg["kind"] = model.kind
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        for key in sorted(cfg):
            fh.write(f"{key}={cfg[key]}\n".encode())
        fh.write(b"\n")
        for name, arr in model.named_params():
            nb = name.encode()
            fh.write(struct.pack("<I", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read_exact(fh, n, what):
    data = fh.read(n)
    if len(data) != n:
        raise CheckpointError(f"truncated blob: {what}")
    return data


def load_checkpoint(path, expect: NetworkConfig | None = None):
    """Rebuild a model from a checkpoint file. With ``expect`` given, blob
    shapes are validated against that config instead of the file's own and
    any mismatch names the offending blob."""
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointError(f"not a checkpoint: bad magic in {path}")
        cfg_items: dict = {}
        while True:
            line = b""
            while not line.endswith(b"\n"):
                ch = fh.read(1)
                if not ch:
                    raise CheckpointError("truncated blob: config header")
                line += ch
            text = line.decode().rstrip("\n")
            if not text:
                break
            if "=" not in text:
                raise CheckpointError(f"malformed config line: {text!r}")
            key, value = text.split("=", 1)
            cfg_items[key] = value

        kind = cfg_items.pop("kind", None)
        if kind not in ("unsupervised", "supervised"):
            raise CheckpointError(f"unknown checkpoint kind: {kind!r}")
        known = NetworkConfig().as_dict()
        unknown = set(cfg_items) - set(known)
        if unknown:
            raise CheckpointError(f"unknown config keys: {sorted(unknown)}")
        try:
            config = NetworkConfig(**{k: int(v) for k, v in cfg_items.items()})
        except ValueError as exc:
            raise CheckpointError(f"bad config: {exc}") from exc

        build_cfg = expect if expect is not None else config
        if kind == "unsupervised":
            model = init_unsupervised(build_cfg, seed=0)
        else:
            model = init_supervised(build_cfg, seed=0)
        expected = dict(model.named_params())
        seen = set()
        while True:
            head = fh.read(4)
            if not head:
                break
            if len(head) != 4:
                raise CheckpointError("truncated blob: name length")
            (name_len,) = struct.unpack("<I", head)
            name = _read_exact(fh, name_len, "blob name").decode()
            (ndim,) = struct.unpack("<I", _read_exact(fh, 4, f"{name} rank"))
            shape = struct.unpack(f"<{ndim}I", _read_exact(fh, 4 * ndim, f"{name} shape"))
            if name not in expected:
                raise CheckpointError(f"unexpected blob '{name}' for kind {kind}")
            want = expected[name].shape
            if tuple(shape) != want:
                raise CheckpointError(
                    f"blob '{name}': shape {tuple(shape)} does not match expected {want}")
            count = int(np.prod(shape)) if shape else 1
            raw = _read_exact(fh, count * 8, name)
            expected[name][:] = np.frombuffer(raw, dtype="<f8").reshape(shape)
            seen.add(name)
        missing = set(expected) - seen
        if missing:
            raise CheckpointError(f"missing blobs: {sorted(missing)}")
    return model
