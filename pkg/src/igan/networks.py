"""Builders, initialization, and forward passes for the five coupled networks.

E encodes data to primary latents, G generates data from latents, F and H
embed data and latents into a shared secondary space, and D scores the
concatenated secondary pair. Conv variants follow the stride-2
conv/batchnorm/relu stack halving images down to 4x4 (mirrored with
transposed convs in G); toy variants of E, G and F are fully connected
maps with two hidden layers over flat vectors, while D and H keep a
single hidden layer of secondary_latent_dim units.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError, ShapeError
from .tensor import Tensor

KERNEL = 4
STRIDE = 2
PAD = 1
INIT_STD = 0.02


@dataclass
class ArchConfig:
    """Structural hyper-parameters shared by all five networks.

    data_shape is (channels, height, width) for images or a flat int for
    toy vector data. With omit_h the prior latent is fed to the
    discriminator directly next to F's output, so D's input width is
    secondary_latent_dim + latent_dim instead of 2 * secondary_latent_dim.
    """

    data_shape: tuple[int, int, int] | int
    latent_dim: int
    secondary_latent_dim: int
    base_channels: int
    omit_h: bool = True
    toy_mode: bool = False

    def __post_init__(self):
        if isinstance(self.data_shape, list):
            self.data_shape = tuple(self.data_shape)
        if self.latent_dim < 1 or self.secondary_latent_dim < 1 or self.base_channels < 1:
            raise ConfigError(
                "latent_dim, secondary_latent_dim and base_channels must be positive"
            )
        if self.toy_mode:
            if not isinstance(self.data_shape, int) or self.data_shape < 1:
                raise ConfigError(
                    f"toy mode needs a positive flat data dim, got {self.data_shape!r}"
                )
        else:
            if not (isinstance(self.data_shape, tuple) and len(self.data_shape) == 3):
                raise ConfigError(
                    f"conv mode needs a (channels, height, width) shape, got {self.data_shape!r}"
                )
            c, h, w = self.data_shape
            if c < 1:
                raise ConfigError(f"channel count must be positive, got {c}")
            if h != w or h < 8 or (h & (h - 1)) != 0:
                raise ConfigError(
                    f"image extents must be equal powers of two >= 8, got {h}x{w}"
                )

    @property
    def d_input_dim(self) -> int:
        if self.omit_h:
            return self.secondary_latent_dim + self.latent_dim
        return 2 * self.secondary_latent_dim

    @property
    def flat_data_dim(self) -> int:
        if self.toy_mode:
            return self.data_shape
        c, h, w = self.data_shape
        return c * h * w

    @property
    def conv_blocks(self) -> int:
        _, h, _ = self.data_shape
        return int(math.log2(h // 4))


class NetworkParams:
    """Ordered, named tensor collection for one network.

    Trainable entries carry requires_grad; batchnorm running stats are
    stored as non-trainable entries so checkpoints capture them.
    """

    def __init__(self, name: str):
        self.name = name
        self._tensors: dict[str, Tensor] = {}

    def add(self, key: str, tensor: Tensor) -> Tensor:
        if key in self._tensors:
            raise ContractError(f"duplicate parameter name {self.name}/{key}")
        self._tensors[key] = tensor
        return tensor

    def __getitem__(self, key: str) -> Tensor:
        return self._tensors[key]

    def __contains__(self, key: str) -> bool:
        return key in self._tensors

    def entries(self):
        """Yield (name, tensor, trainable) in creation order."""
        for key, t in self._tensors.items():
            yield key, t, t.requires_grad

    def trainable(self):
        return [(k, t) for k, t, tr in self.entries() if tr]

    def n_layers(self, prefix: str) -> int:
        return sum(1 for k in self._tensors if k.startswith(prefix) and k.endswith(".weight"))


@dataclass
class IganModel:
    arch: ArchConfig
    E: NetworkParams
    G: NetworkParams
    F: NetworkParams
    D: NetworkParams
    H: NetworkParams | None = None

    def nets(self):
        """(symbol, params) pairs in the fixed build order."""
        out = [("E", self.E), ("G", self.G), ("F", self.F)]
        if self.H is not None:
            out.append(("H", self.H))
        out.append(("D", self.D))
        return out

    def named_tensors(self):
        for sym, net in self.nets():
            for key, t, trainable in net.entries():
                yield f"{sym}/{key}", t, trainable

    def group_params(self, group: str):
        """Trainable (name, tensor) pairs for an optimizer group."""
        if group == "eg":
            syms = ("E", "G")
        elif group == "dfh":
            syms = ("D", "F", "H")
        else:
            raise ContractError(f"unknown parameter group {group!r}")
        out = []
        for sym, net in self.nets():
            if sym in syms:
                out.extend((f"{sym}/{k}", t) for k, t in net.trainable())
        return out

    def zero_grad(self):
        for _, t, trainable in self.named_tensors():
            if trainable:
                t.zero_grad()


# ---------------------------------------------------------------------------
# construction
# ---------------------------------------------------------------------------


def _weight(rng: np.random.Generator, shape, fan_in: int = 0) -> Tensor:
    # conv nets keep the small fixed std because batchnorm rescales
    # activations; the batchnorm-free toy layers need fan-in scaling or
    # every network starts as a near-zero map and the game degenerates
    std = math.sqrt(2.0 / fan_in) if fan_in else INIT_STD
    return Tensor(rng.normal(0.0, std, size=shape), requires_grad=True)


def _zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


def _add_bn(net: NetworkParams, prefix: str, channels: int, rng: np.random.Generator):
    net.add(f"{prefix}.gamma", Tensor(rng.normal(1.0, INIT_STD, size=channels), requires_grad=True))
    net.add(f"{prefix}.beta", _zeros(channels))
    net.add(f"{prefix}.running_mean", Tensor(np.zeros(channels)))
    net.add(f"{prefix}.running_var", Tensor(np.ones(channels)))


def _build_mlp(name: str, rng: np.random.Generator, dims: list[int],
               fan_scaled: bool = True) -> NetworkParams:
    net = NetworkParams(name)
    for i, (din, dout) in enumerate(zip(dims[:-1], dims[1:])):
        net.add(f"fc{i}.weight", _weight(rng, (din, dout), din if fan_scaled else 0))
        net.add(f"fc{i}.bias", _zeros(dout))
    return net


def _build_conv_encoder(name: str, rng: np.random.Generator, arch: ArchConfig,
                        out_dim: int) -> NetworkParams:
    net = NetworkParams(name)
    ch = arch.data_shape[0]
    for i in range(arch.conv_blocks):
        och = arch.base_channels * (2 ** i)
        net.add(f"conv{i}.weight", _weight(rng, (och, ch, KERNEL, KERNEL)))
        net.add(f"conv{i}.bias", _zeros(och))
        if i > 0:
            _add_bn(net, f"bn{i}", och, rng)
        ch = och
    net.add("head.weight", _weight(rng, (ch * 16, out_dim)))
    net.add("head.bias", _zeros(out_dim))
    return net


def _build_conv_generator(name: str, rng: np.random.Generator, arch: ArchConfig) -> NetworkParams:
    net = NetworkParams(name)
    nb = arch.conv_blocks
    ch = arch.base_channels * (2 ** (nb - 1))
    net.add("head.weight", _weight(rng, (arch.latent_dim, ch * 16)))
    net.add("head.bias", _zeros(ch * 16))
    _add_bn(net, "bn0", ch, rng)
    for i in range(1, nb):
        och = ch // 2
        net.add(f"tconv{i}.weight", _weight(rng, (ch, och, KERNEL, KERNEL)))
        net.add(f"tconv{i}.bias", _zeros(och))
        _add_bn(net, f"bn{i}", och, rng)
        ch = och
    net.add(f"tconv{nb}.weight", _weight(rng, (ch, arch.data_shape[0], KERNEL, KERNEL)))
    net.add(f"tconv{nb}.bias", _zeros(arch.data_shape[0]))
    return net


def build_model(arch: ArchConfig, seed: int) -> IganModel:
    """Construct all five networks from one seed, in the fixed order
    E, G, F, H, D. Two builds with the same arch and seed are bit-identical.
    """
    rng = np.random.default_rng(seed)
    toy = arch.toy_mode
    if toy:
        d = arch.data_shape
        bc = arch.base_channels
        e_net = _build_mlp("E", rng, [d, bc, bc, arch.latent_dim])
        g_net = _build_mlp("G", rng, [arch.latent_dim, bc, bc, d])
        f_net = _build_mlp("F", rng, [d, bc, bc, arch.secondary_latent_dim])
    else:
        e_net = _build_conv_encoder("E", rng, arch, arch.latent_dim)
        g_net = _build_conv_generator("G", rng, arch)
        f_net = _build_conv_encoder("F", rng, arch, arch.secondary_latent_dim)
    h_net = None
    if not arch.omit_h:
        h_net = _build_mlp(
            "H", rng,
            [arch.latent_dim, arch.secondary_latent_dim, arch.secondary_latent_dim],
            fan_scaled=toy,
        )
    d_net = _build_mlp("D", rng, [arch.d_input_dim, arch.secondary_latent_dim, 1],
                       fan_scaled=toy)
    return IganModel(arch, e_net, g_net, f_net, d_net, h_net)


# ---------------------------------------------------------------------------
# forward passes
# ---------------------------------------------------------------------------


def _check_matrix(x: Tensor, dim: int, who: str):
    if x.data.ndim != 2 or x.data.shape[1] != dim:
        raise ShapeError(f"{who} expects input (batch, {dim}), got {x.data.shape}")


def _check_image(x: Tensor, arch: ArchConfig, who: str):
    c, h, w = arch.data_shape
    if x.data.ndim != 4 or x.data.shape[1:] != (c, h, w):
        raise ShapeError(f"{who} expects input (batch, {c}, {h}, {w}), got {x.data.shape}")


def _mlp_forward(net: NetworkParams, x: Tensor, final: str | None = None) -> Tensor:
    n = net.n_layers("fc")
    h = x
    for i in range(n):
        h = T.add(T.matmul(h, net[f"fc{i}.weight"]), net[f"fc{i}.bias"])
        if i < n - 1:
            h = T.relu(h)
    if final == "sigmoid":
        h = T.sigmoid(h)
    return h


def _bn(net: NetworkParams, prefix: str, x: Tensor, mode: str) -> Tensor:
    return T.batchnorm(
        x, net[f"{prefix}.gamma"], net[f"{prefix}.beta"],
        net[f"{prefix}.running_mean"], net[f"{prefix}.running_var"], mode=mode,
    )


def _conv_encoder_forward(net: NetworkParams, arch: ArchConfig, x: Tensor, mode: str) -> Tensor:
    h = x
    for i in range(arch.conv_blocks):
        ch = net[f"conv{i}.weight"].data.shape[0]
        h = T.conv2d(h, net[f"conv{i}.weight"], STRIDE, PAD)
        h = T.add(h, T.reshape(net[f"conv{i}.bias"], (1, ch, 1, 1)))
        if i > 0:
            h = _bn(net, f"bn{i}", h, mode)
        h = T.relu(h)
    flat = T.reshape(h, (x.data.shape[0], h.data.shape[1] * 16))
    return T.add(T.matmul(flat, net["head.weight"]), net["head.bias"])


def _conv_generator_forward(net: NetworkParams, arch: ArchConfig, z: Tensor, mode: str) -> Tensor:
    nb = arch.conv_blocks
    cmax = arch.base_channels * (2 ** (nb - 1))
    h = T.add(T.matmul(z, net["head.weight"]), net["head.bias"])
    h = T.reshape(h, (z.data.shape[0], cmax, 4, 4))
    h = T.relu(_bn(net, "bn0", h, mode))
    for i in range(1, nb):
        ch = net[f"tconv{i}.weight"].data.shape[1]
        h = T.conv2d_transposed(h, net[f"tconv{i}.weight"], STRIDE, PAD)
        h = T.add(h, T.reshape(net[f"tconv{i}.bias"], (1, ch, 1, 1)))
        h = T.relu(_bn(net, f"bn{i}", h, mode))
    c = arch.data_shape[0]
    h = T.conv2d_transposed(h, net[f"tconv{nb}.weight"], STRIDE, PAD)
    h = T.add(h, T.reshape(net[f"tconv{nb}.bias"], (1, c, 1, 1)))
    return T.tanh(h)


def forward_E(model: IganModel, x: Tensor, mode: str = "eval") -> Tensor:
    """Data batch to primary latents, shape (batch, latent_dim)."""
    if model.arch.toy_mode:
        _check_matrix(x, model.arch.data_shape, "E")
        return _mlp_forward(model.E, x)
    _check_image(x, model.arch, "E")
    return _conv_encoder_forward(model.E, model.arch, x, mode)


def forward_G(model: IganModel, z: Tensor, mode: str = "eval") -> Tensor:
    """Prior latents to data space.

    The conv generator ends in tanh so image values stay in (-1, 1); the
    toy generator is linear so vector data of any scale is reachable.
    """
    _check_matrix(z, model.arch.latent_dim, "G")
    if model.arch.toy_mode:
        return _mlp_forward(model.G, z)
    return _conv_generator_forward(model.G, model.arch, z, mode)


def forward_F(model: IganModel, x: Tensor, mode: str = "eval") -> Tensor:
    """Data batch to secondary latents, shape (batch, secondary_latent_dim)."""
    if model.arch.toy_mode:
        _check_matrix(x, model.arch.data_shape, "F")
        return _mlp_forward(model.F, x)
    _check_image(x, model.arch, "F")
    return _conv_encoder_forward(model.F, model.arch, x, mode)


def forward_H(model: IganModel, z: Tensor) -> Tensor:
    """Primary to secondary latents; identity pass-through when H is omitted."""
    _check_matrix(z, model.arch.latent_dim, "H")
    if model.H is None:
        return z
    return _mlp_forward(model.H, z)


def discriminate(model: IganModel, x_like: Tensor, z_like: Tensor,
                 mode: str = "eval") -> Tensor:
    """Probability in (0, 1), shape (batch,), that (x_like, z_like) is a
    true couple: D(concat(F(x_like), H(z_like)))."""
    fx = forward_F(model, x_like, mode)
    hz = forward_H(model, z_like)
    score = _mlp_forward(model.D, T.concat(fx, hz, axis=1), final="sigmoid")
    return T.reshape(score, (score.data.shape[0],))
