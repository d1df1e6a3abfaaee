"""The entangled CNN/GCN network.

A stack of conv blocks carries the visual signal. At wired blocks the
feature map is pooled and projected onto the attribute vertices, pushed
through a two-layer graph convolution block over the knowledge graph, and
the block output gates the conv feature map elementwise before it
continues down the CNN. Vertex-pooled, squeezed block outputs (semantic
relational features) are fused into the pooled visual embedding, which
feeds the attribute and latent projection heads.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ArtifactMismatch, ConfigError, ContractError, NumericFault, ShapeError
from .tensor import Param, Tensor

WIRING_STRATEGIES = ("each-block", "each-stage", "last-block")
FUSION_MODES = ("concat", "sum")

CHECKPOINT_MAGIC = b"GVSE"
CHECKPOINT_VERSION = 1


@dataclass
class CnnBlockSpec:
    in_channels: int
    out_channels: int
    kernel: int = 3
    stride: int = 1
    pad: int = 1


@dataclass
class ModelConfig:
    num_attributes: int
    num_classes: int
    graph_vertices: int | None = None  # GCN vertex count; defaults to num_attributes
    image_hw: int = 32
    in_channels: int = 3
    # (out_channels, kernel, stride, pad) per block; stride-2 blocks use a
    # 2x2 kernel so the output size divides exactly on even inputs
    blocks: list = field(
        default_factory=lambda: [(16, 2, 2, 0), (32, 2, 2, 0), (64, 2, 2, 0), (64, 3, 1, 1)]
    )
    wiring: str = "each-stage"
    fusion: str = "concat"
    gvse_enabled: bool = True
    latent: bool = True
    latent_dim: int = 32
    d_node: int = 16
    gcn_hidden: int = 64
    embed_dim: int = 10

    def __post_init__(self):
        if self.wiring not in WIRING_STRATEGIES:
            raise ConfigError(f"unknown wiring strategy: {self.wiring!r}")
        if self.fusion not in FUSION_MODES:
            raise ConfigError(f"unknown fusion mode: {self.fusion!r}")

    def block_specs(self) -> list[CnnBlockSpec]:
        specs = []
        cin = self.in_channels
        for cout, k, s, p in self.blocks:
            specs.append(CnnBlockSpec(cin, cout, k, s, p))
            cin = cout
        return specs

    def spatial_dims(self) -> list[int]:
        """Output height (== width) after each block."""
        hw = self.image_hw
        dims = []
        for _, k, s, p in self.blocks:
            if (hw + 2 * p - k) % s != 0:
                raise ConfigError(f"block output size not integral at hw={hw}, k={k}, s={s}, p={p}")
            hw = (hw + 2 * p - k) // s + 1
            if hw <= 0:
                raise ConfigError("block output size is not positive")
            dims.append(hw)
        return dims

    def wired_blocks(self) -> list[int]:
        """CNN block indices that get a GCN block, per the wiring strategy."""
        if not self.gvse_enabled:
            return []
        n = len(self.blocks)
        if self.wiring == "each-block":
            return list(range(n))
        if self.wiring == "last-block":
            return [n - 1]
        # each-stage: the last block before a spatial downsampling, plus the end
        wired = [i for i in range(n - 1) if self.blocks[i + 1][2] > 1]
        wired.append(n - 1)
        return sorted(set(wired))


@dataclass
class ForwardTrace:
    """Everything recorded during one forward pass of one image."""

    x_maps: list = field(default_factory=list)  # X^(l), post-activation conv outputs
    gated_maps: dict = field(default_factory=dict)  # block index -> gated map
    gcn_outputs: dict = field(default_factory=dict)  # block index -> f_G^(l), m x (R*C)
    gates: dict = field(default_factory=dict)  # block index -> gate tensor values
    srfs: list = field(default_factory=list)
    theta: Tensor | None = None
    theta_plus: Tensor | None = None
    phi: Tensor | None = None
    phi_lat: Tensor | None = None
    word_vectors: Tensor | None = None  # squeeze of the last GCN block, m x d


# ---------------------------------------------------------------------------
# layer-level operations
# ---------------------------------------------------------------------------

def reshape_in(x_map: Tensor, w_in: Param, b_in: Param, m: int, d_node: int) -> Tensor:
    """Pool a feature map spatially and project it to m x d_node node features."""
    if w_in.shape != (m * d_node, x_map.shape[0]):
        raise ShapeError(f"reshape_in: W_in {w_in.shape} does not fit map {x_map.shape} -> {m}x{d_node}")
    u = T.global_avg_pool(x_map)  # (C,)
    h = T.matmul(w_in, T.reshape(u, (x_map.shape[0], 1)))  # (m*d_node, 1)
    return T.reshape(T.add(h, T.reshape(b_in, (m * d_node, 1))), (m, d_node))


def gcn_layer(h: Tensor, operator: Tensor, w: Param, b: Param, act: str) -> Tensor:
    """One graph convolution: act(P H W + b)."""
    if h.shape[1] != w.shape[0]:
        raise ShapeError(f"gcn_layer: features {h.shape} do not match weights {w.shape}")
    out = T.matmul(T.matmul(operator, h), w)
    out = T.add(out, T.reshape(b, (1, w.shape[1])))
    return T.activation(out, act)


def squeeze(f: Tensor, f_sq: Param) -> Tensor:
    """Linear width reduction of vertex features; no activation."""
    return T.matmul(f, f_sq)


def gate_feedback(x_map: Tensor, f: Tensor, w_out: Param, b_out: Param) -> tuple[Tensor, Tensor]:
    """Sigmoid gate from graph features, applied elementwise to the map."""
    c, r, co = x_map.shape
    if f.shape != (w_out.shape[0], r * co) or w_out.shape[1] != c:
        raise ShapeError(f"gate_feedback: f {f.shape} / W_out {w_out.shape} do not fit map {x_map.shape}")
    pre = T.add(T.matmul(T.transpose(w_out), f), T.reshape(b_out, (c, 1)))
    gate = T.reshape(T.sigmoid(pre), (c, r, co))
    return T.mul(gate, x_map), gate


def srf_pool(f: Tensor, f_sq: Param) -> Tensor:
    """Vertex mean of the squeezed block output: one d-vector per block."""
    m = f.shape[0]
    pooled = T.matmul(Tensor(np.full((1, m), 1.0 / m)), squeeze(f, f_sq))
    return T.reshape(pooled, (f_sq.shape[1],))


def fuse_embedding(theta: Tensor, srfs: list[Tensor], mode: str) -> Tensor:
    if not srfs:
        raise ContractError("fuse_embedding called with no semantic features")
    if mode == "concat":
        return T.concat([theta] + srfs, axis=0)
    if mode == "sum":
        total = srfs[0]
        for s in srfs[1:]:
            total = T.add(total, s)
        return T.concat([theta, total], axis=0)
    raise ConfigError(f"unknown fusion mode: {mode!r}")


# ---------------------------------------------------------------------------
# the model
# ---------------------------------------------------------------------------

class GvseModel:
    def __init__(self, config: ModelConfig, operator: np.ndarray, seed: int = 0):
        cfg = config
        m = cfg.num_attributes
        mv = cfg.graph_vertices if cfg.graph_vertices is not None else m
        self.graph_vertices = mv
        if operator.shape != (mv, mv):
            raise ShapeError(f"operator {operator.shape} does not match vertex count {mv}")
        self.config = cfg
        self.operator = np.asarray(operator, dtype=np.float64)
        self._rng = np.random.default_rng(seed)
        self.params: list[Param] = []

        specs = cfg.block_specs()
        dims = cfg.spatial_dims()
        self.wired = cfg.wired_blocks()
        self.conv_kernels, self.conv_biases = [], []
        for i, s in enumerate(specs):
            fan_in = s.in_channels * s.kernel * s.kernel
            self.conv_kernels.append(self._param((s.out_channels, s.in_channels, s.kernel, s.kernel), fan_in, f"conv{i}.w"))
            self.conv_biases.append(self._param((s.out_channels,), fan_in, f"conv{i}.b"))

        d, dn, hid = cfg.embed_dim, cfg.d_node, cfg.gcn_hidden
        self.gcn = {}  # CNN block index -> dict of params
        prev_width = None
        for j, l in enumerate(self.wired):
            c = specs[l].out_channels
            width = dims[l] * dims[l]
            in_dim = dn if j == 0 else dn + d
            blk = {
                "w_in": self._param((mv * dn, c), c, f"gcn{l}.w_in"),
                "b_in": self._param((mv * dn,), c, f"gcn{l}.b_in"),
                "w1": self._param((in_dim, hid), in_dim, f"gcn{l}.w1"),
                "b1": self._param((hid,), in_dim, f"gcn{l}.b1"),
                "w2": self._param((hid, width), hid, f"gcn{l}.w2"),
                "b2": self._param((width,), hid, f"gcn{l}.b2"),
                "f_sq": self._param((width, d), width, f"gcn{l}.f_sq"),
                "w_out": self._param((mv, c), mv, f"gcn{l}.w_out"),
                "b_out": self._param((c,), mv, f"gcn{l}.b_out"),
                "width": width,
            }
            if j > 0 and prev_width != width:
                blk["proj"] = self._param((prev_width, width), prev_width, f"gcn{l}.proj")
            prev_width = width
            self.gcn[l] = blk

        dv = specs[-1].out_channels
        self.fused_width = dv
        if cfg.gvse_enabled and self.wired:
            self.fused_width += (len(self.wired) * d) if cfg.fusion == "concat" else d
        self.w_phi = self._param((self.fused_width, m), self.fused_width, "head.w_phi")
        self.b_phi = self._param((m,), self.fused_width, "head.b_phi")
        if cfg.latent:
            self.w_lat = self._param((self.fused_width, cfg.latent_dim), self.fused_width, "head.w_lat")
            self.b_lat = self._param((cfg.latent_dim,), self.fused_width, "head.b_lat")

    def _param(self, shape, fan_in, name) -> Param:
        bound = np.sqrt(1.0 / fan_in)
        p = Param(self._rng.uniform(-bound, bound, size=shape), name=name)
        self.params.append(p)
        return p

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    # -- forward -----------------------------------------------------------

    def gcn_block(self, l: int, x_map: Tensor, prev: Tensor | None, operator: Tensor,
                  is_last: bool) -> Tensor:
        """Two GCN layers over the node features derived from x_map.

        From the second wired block on, the previous block's squeezed output
        joins the node input and a (projected) residual path adds the
        previous output to this block's output.
        """
        blk = self.gcn[l]
        j = self.wired.index(l)
        if (prev is None) != (j == 0):
            raise ContractError("gcn_block: prev must be given exactly for the non-first blocks")
        cfg = self.config
        h0 = reshape_in(x_map, blk["w_in"], blk["b_in"], self.graph_vertices, cfg.d_node)
        if prev is not None:
            prev_blk = self.gcn[self.wired[j - 1]]
            h0 = T.concat([h0, squeeze(prev, prev_blk["f_sq"])], axis=1)
        h1 = gcn_layer(h0, operator, blk["w1"], blk["b1"], "relu")
        out = gcn_layer(h1, operator, blk["w2"], blk["b2"], "identity" if is_last else "relu")
        if prev is not None:
            res = T.matmul(prev, blk["proj"]) if "proj" in blk else prev
            out = T.add(out, res)
        return out

    def forward(self, x: Tensor) -> ForwardTrace:
        cfg = self.config
        trace = ForwardTrace()
        operator = Tensor(self.operator)
        specs = cfg.block_specs()
        prev_f = None
        try:
            for l, s in enumerate(specs):
                x = T.conv2d(x, self.conv_kernels[l], stride=s.stride, pad=s.pad)
                x = T.relu(T.add(x, T.reshape(self.conv_biases[l], (s.out_channels, 1, 1))))
                trace.x_maps.append(x)
                if l in self.wired:
                    f = self.gcn_block(l, x, prev_f, operator, is_last=(l == self.wired[-1]))
                    x, gate = gate_feedback(x, f, self.gcn[l]["w_out"], self.gcn[l]["b_out"])
                    trace.gcn_outputs[l] = f
                    trace.gates[l] = gate
                    trace.gated_maps[l] = x
                    prev_f = f
        except NumericFault as exc:
            raise NumericFault(f"numeric fault in block {l}: {exc}") from exc

        trace.theta = T.global_avg_pool(x)
        if cfg.gvse_enabled and self.wired:
            trace.srfs = [srf_pool(trace.gcn_outputs[l], self.gcn[l]["f_sq"]) for l in self.wired]
            trace.theta_plus = fuse_embedding(trace.theta, trace.srfs, cfg.fusion)
            last = self.wired[-1]
            trace.word_vectors = squeeze(trace.gcn_outputs[last], self.gcn[last]["f_sq"])
        else:
            trace.theta_plus = trace.theta
        assert trace.theta_plus.shape == (self.fused_width,)

        trace.phi = self._head(trace.theta_plus, self.w_phi, self.b_phi)
        if cfg.latent:
            trace.phi_lat = self._head(trace.theta_plus, self.w_lat, self.b_lat)
        return trace

    @staticmethod
    def _head(v: Tensor, w: Param, b: Param) -> Tensor:
        out = T.matmul(T.reshape(v, (1, v.shape[0])), w)
        return T.reshape(T.add(out, T.reshape(b, (1, w.shape[1]))), (w.shape[1],))


def forward(x: Tensor, model: GvseModel) -> ForwardTrace:
    return model.forward(x)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def config_digest(config_obj) -> str:
    """Stable content hash of a JSON-serializable config."""
    blob = json.dumps(config_obj, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def save_checkpoint(model: GvseModel, path, digest: str, config_obj=None) -> None:
    """Binary file: magic, version, digest, then params in declaration order."""
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(bytes.fromhex(digest))
        fh.write(struct.pack("<I", len(model.params)))
        for p in model.params:
            arr = np.ascontiguousarray(p.data, dtype="<f8")
            fh.write(arr.tobytes())
    if config_obj is not None:
        with open(str(path) + ".json", "w") as fh:
            json.dump({"digest": digest, "config": config_obj}, fh, indent=2, sort_keys=True)
            fh.write("\n")


def load_checkpoint(model: GvseModel, path, digest: str | None = None) -> str:
    """Load params into `model`; returns the stored digest."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise ArtifactMismatch(f"{path}: bad magic {magic!r}")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != CHECKPOINT_VERSION:
            raise ArtifactMismatch(f"{path}: unsupported checkpoint version {version}")
        stored = fh.read(32).hex()
        if digest is not None and stored != digest:
            raise ArtifactMismatch(f"{path}: checkpoint digest {stored[:12]}... does not match config digest {digest[:12]}...")
        (count,) = struct.unpack("<I", fh.read(4))
        if count != len(model.params):
            raise ArtifactMismatch(f"{path}: {count} params stored, model has {len(model.params)}")
        for p in model.params:
            buf = fh.read(p.size * 8)
            p.data = np.frombuffer(buf, dtype="<f8").reshape(p.shape).copy()
            p.zero_grad()
    return stored
