"""Small CNN classifiers over stacked-cutout channel sets.

Six fixed channel plans (two or four conv blocks) feed a single-logit
sigmoid head. Block order: 3x3 conv (padding 1) -> batch norm -> relu ->
2x2 max pool -> attention (optional) -> dropout. A block pools only while
the spatial dims are still even, so a 20x20 input runs 20 -> 10 -> 5 and
four-block plans keep 5x5 through blocks three and four.

Model files (`MDLV1`): magic, LE u32 header length, canonical-JSON header
(architecture spec + tensor names), sha256 of the header bytes, then every
tensor in declaration order in the single-tensor format. Loading verifies
the digest and every shape; truncated or oversized files never yield a model.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .attention import CbamParams, cbam, make_cbam_params
from .jsonutil import dumps_canonical
from .tensor import BatchNormState, Parameter, Tensor, no_grad

CHANNEL_PLANS: dict[str, tuple[int, ...]] = {
    "cnn1": (32, 64),
    "cnn2": (64, 128),
    "cnn3": (32, 32, 64, 64),
    "cnn4": (64, 64, 128, 128),
    "cnn5": (32, 64, 128, 256),
    "cnn6": (64, 128, 256, 512),
}


@dataclass(frozen=True)
class ModelSpec:
    """Architecture description; everything needed to rebuild a model."""

    model_id: str
    input_channels: int
    channel_plan: tuple[int, ...] = ()
    input_size: int = 20
    cbam_enabled: bool = True
    dropout_rate: float = 0.25
    cbam_reduction: int = 16

    def __post_init__(self):
        plan = tuple(int(c) for c in self.channel_plan)
        if not plan:
            if self.model_id not in CHANNEL_PLANS:
                raise ValueError(f"unknown model id {self.model_id!r} and no channel plan given")
            plan = CHANNEL_PLANS[self.model_id]
        elif self.model_id in CHANNEL_PLANS and plan != CHANNEL_PLANS[self.model_id]:
            raise ValueError(f"channel plan {plan} does not match {self.model_id} = {CHANNEL_PLANS[self.model_id]}")
        object.__setattr__(self, "channel_plan", plan)
        if len(plan) not in (2, 4):
            raise ValueError(f"channel plan must have 2 or 4 blocks, got {len(plan)}")
        if self.input_channels < 1:
            raise ValueError(f"input_channels must be >= 1, got {self.input_channels}")
        if self.input_size < 4:
            raise ValueError(f"input_size must be >= 4, got {self.input_size}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must be in [0,1), got {self.dropout_rate}")
        if self.cbam_reduction < 1:
            raise ValueError(f"cbam_reduction must be >= 1, got {self.cbam_reduction}")

    def to_dict(self) -> dict:
        return {
            "model_id": self.model_id,
            "input_channels": self.input_channels,
            "channel_plan": list(self.channel_plan),
            "input_size": self.input_size,
            "cbam_enabled": self.cbam_enabled,
            "dropout_rate": self.dropout_rate,
            "cbam_reduction": self.cbam_reduction,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        known = {
            "model_id",
            "input_channels",
            "channel_plan",
            "input_size",
            "cbam_enabled",
            "dropout_rate",
            "cbam_reduction",
        }
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown model spec keys: {sorted(extra)}")
        d = dict(d)
        d["channel_plan"] = tuple(d.get("channel_plan", ()))
        return cls(**d)


@dataclass
class BlockParams:
    conv_w: Parameter
    conv_b: Parameter
    bn_gamma: Parameter
    bn_beta: Parameter
    bn_state: BatchNormState
    attn: CbamParams | None
    pools: bool


@dataclass
class Model:
    spec: ModelSpec
    blocks: list[BlockParams]
    head_w: Parameter
    head_b: Parameter
    dtype: np.dtype = field(default=np.dtype(np.float32))

    def parameters(self) -> list[Parameter]:
        """Trainable parameters in declaration order (excludes running stats)."""
        out: list[Parameter] = []
        for b in self.blocks:
            out += [b.conv_w, b.conv_b, b.bn_gamma, b.bn_beta]
            if b.attn is not None:
                out += b.attn.parameters()
        out += [self.head_w, self.head_b]
        return out

    def named_tensors(self) -> list[tuple[str, np.ndarray]]:
        """Parameters plus batch-norm running stats, in file order."""
        out: list[tuple[str, np.ndarray]] = []
        for i, b in enumerate(self.blocks):
            out += [
                (f"block{i}.conv_w", b.conv_w.data),
                (f"block{i}.conv_b", b.conv_b.data),
                (f"block{i}.bn_gamma", b.bn_gamma.data),
                (f"block{i}.bn_beta", b.bn_beta.data),
                (f"block{i}.bn_running_mean", b.bn_state.running_mean),
                (f"block{i}.bn_running_var", b.bn_state.running_var),
            ]
            if b.attn is not None:
                out += [
                    (f"block{i}.attn.w0", b.attn.w0.data),
                    (f"block{i}.attn.w1", b.attn.w1.data),
                    (f"block{i}.attn.conv7", b.attn.conv7.data),
                ]
        out += [("head.w", self.head_w.data), ("head.b", self.head_b.data)]
        return out

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def snapshot(self) -> list[np.ndarray]:
        """Copy of every tensor in file order (for best-epoch restore)."""
        return [arr.copy() for _, arr in self.named_tensors()]

    def restore(self, snap: list[np.ndarray]) -> None:
        tensors = self.named_tensors()
        if len(snap) != len(tensors):
            raise ValueError(f"snapshot has {len(snap)} tensors, model expects {len(tensors)}")
        for (name, arr), saved in zip(tensors, snap):
            if arr.shape != saved.shape:
                raise ValueError(f"snapshot shape mismatch for {name}: {saved.shape} vs {arr.shape}")
            arr[...] = saved

    def forward(self, x, mode: str = "infer", rng: np.random.Generator | None = None) -> Tensor:
        """Probability of the positive class for each sample, shape (N,)."""
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x), dtype=self.dtype)
        squeeze = x.ndim == 3
        if squeeze:
            x = T.reshape(x, (1,) + x.shape)
        if x.ndim != 4:
            raise ValueError(f"expected (N,C,H,W) input, got shape {x.shape}")
        n, c, h, w = x.shape
        s = self.spec
        if c != s.input_channels:
            raise ValueError(f"input has {c} channels (axis 1) but model expects {s.input_channels}")
        if (h, w) != (s.input_size, s.input_size):
            raise ValueError(f"input is {h}x{w} but model expects {s.input_size}x{s.input_size}")
        out = x
        for b in self.blocks:
            out = T.conv2d(out, b.conv_w, b.conv_b, padding=1)
            out = T.batch_norm(out, b.bn_gamma, b.bn_beta, b.bn_state, mode)
            out = T.relu(out)
            if b.pools:
                out = T.pool2d(out, 2, "max")
            if b.attn is not None:
                out = cbam(out, b.attn)
            if s.dropout_rate > 0:
                out = T.dropout(out, s.dropout_rate, rng, mode)
        flat = T.reshape(out, (n, -1))
        logit = T.affine(flat, self.head_w, self.head_b)
        return T.sigmoid(T.reshape(logit, (n,)))


def block_layout(spec: ModelSpec) -> list[tuple[int, int, bool]]:
    """Per block: (in_channels, out_channels, pools). Tracks spatial size."""
    layout = []
    size = spec.input_size
    cin = spec.input_channels
    for cout in spec.channel_plan:
        pools = size % 2 == 0 and size > 1
        layout.append((cin, cout, pools))
        if pools:
            size //= 2
        cin = cout
    return layout


def final_spatial(spec: ModelSpec) -> int:
    size = spec.input_size
    for _, _, pools in block_layout(spec):
        if pools:
            size //= 2
    return size


def build_model(spec: ModelSpec, rng: np.random.Generator | None = None, dtype=np.float32) -> Model:
    """Fresh model; weights uniform +-sqrt(1/fan_in), biases zero, BN affine identity."""
    rng = rng or np.random.default_rng(0)
    dtype = np.dtype(dtype)

    def uniform(shape, fan_in, name):
        bound = np.sqrt(1.0 / fan_in)
        return Parameter(rng.uniform(-bound, bound, size=shape), name=name, dtype=dtype)

    blocks: list[BlockParams] = []
    for i, (cin, cout, pools) in enumerate(block_layout(spec)):
        conv_w = uniform((cout, cin, 3, 3), cin * 9, f"block{i}.conv_w")
        conv_b = Parameter(np.zeros(cout), name=f"block{i}.conv_b", dtype=dtype)
        bn_gamma = Parameter(np.ones(cout), name=f"block{i}.bn_gamma", dtype=dtype)
        bn_beta = Parameter(np.zeros(cout), name=f"block{i}.bn_beta", dtype=dtype)
        bn_state = BatchNormState.initial(cout, dtype=dtype)
        attn = (
            make_cbam_params(cout, spec.cbam_reduction, rng, dtype=dtype, name=f"block{i}.attn")
            if spec.cbam_enabled
            else None
        )
        blocks.append(BlockParams(conv_w, conv_b, bn_gamma, bn_beta, bn_state, attn, pools))

    feat = spec.channel_plan[-1] * final_spatial(spec) ** 2
    head_w = uniform((1, feat), feat, "head.w")
    head_b = Parameter(np.zeros(1), name="head.b", dtype=dtype)
    return Model(spec=spec, blocks=blocks, head_w=head_w, head_b=head_b, dtype=dtype)


def predict(model: Model, batch, mode: str = "infer", rng: np.random.Generator | None = None) -> np.ndarray:
    """Scores in [0,1] as a plain array; no graph is recorded in infer mode."""
    if mode == "infer":
        with no_grad():
            return model.forward(batch, mode="infer").data.copy()
    return model.forward(batch, mode=mode, rng=rng).data.copy()


def param_count(model: Model) -> int:
    """Exact number of trainable scalars (batch-norm affine included)."""
    return sum(p.size for p in model.parameters())


MODEL_MAGIC = b"MDLV1"


def save_model(model: Model, path) -> None:
    """Write the MDLV1 container; float32 payload regardless of model dtype."""
    tensors = model.named_tensors()
    header = {
        "format": "MDLV1",
        "model": model.spec.to_dict(),
        "tensors": [name for name, _ in tensors],
    }
    hjson = dumps_canonical(header).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<I", len(hjson)))
        fh.write(hjson)
        fh.write(hashlib.sha256(hjson).digest())
        for _, arr in tensors:
            fh.write(T.encode_mdt(arr))


def load_model(path) -> Model:
    """Read an MDLV1 container, verifying digest, names, shapes, and length."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:5] != MODEL_MAGIC:
        raise ValueError(f"{path}: bad model magic")
    if len(blob) < 9:
        raise ValueError(f"{path}: truncated header")
    (hlen,) = struct.unpack_from("<I", blob, 5)
    off = 9
    if off + hlen + 32 > len(blob):
        raise ValueError(f"{path}: truncated header (need {hlen} + digest bytes)")
    hjson = blob[off : off + hlen]
    off += hlen
    digest = blob[off : off + 32]
    off += 32
    if hashlib.sha256(hjson).digest() != digest:
        raise ValueError(f"{path}: header digest mismatch")
    import json

    header = json.loads(hjson.decode("utf-8"))
    if header.get("format") != "MDLV1":
        raise ValueError(f"{path}: unknown container format {header.get('format')!r}")
    spec = ModelSpec.from_dict(header["model"])
    model = build_model(spec, rng=np.random.default_rng(0), dtype=np.float32)
    tensors = model.named_tensors()
    expected_names = [name for name, _ in tensors]
    if header.get("tensors") != expected_names:
        raise ValueError(f"{path}: tensor listing does not match architecture")
    for name, arr in tensors:
        value, off = T.decode_mdt(blob, off)
        if value.shape != arr.shape:
            raise ValueError(f"{path}: tensor {name} has shape {value.shape}, expected {arr.shape}")
        arr[...] = value.astype(arr.dtype)
    if off != len(blob):
        raise ValueError(f"{path}: {len(blob) - off} trailing bytes after last tensor")
    return model


def clone_model(model: Model) -> Model:
    """Deep copy sharing nothing with the source (spec objects are frozen)."""
    fresh = build_model(model.spec, rng=np.random.default_rng(0), dtype=model.dtype)
    fresh.restore(model.snapshot())
    return fresh
