"""Generator and discriminator networks.

Both are small CNNs: conv 32 filters 3x3 stride 3, conv 64 filters 3x3 stride
3, 2x2 max pool, dense 128, dense output. ReLU everywhere except the
generator's softmax head; the discriminator head is a single linear unit. With
'same' zero padding the spatial plan is 28 -> 10 -> 4 -> 2, so the flattened
feature width is 2*2*64 = 256.

The generator maps images (N, 28, 28, 1) to class probabilities (N, 10) and
uses batch normalization. The discriminator scores (image, label) pairs and
gets the 10-dim label vector concatenated to the input of every layer (as
constant spatial channels for conv layers, plain concatenation for dense
ones). It uses layer normalization unless spectral normalization is enabled,
in which case the weights are normalized and no other normalization is used.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

NUM_CLASSES = 10
IMAGE_SHAPE = (28, 28, 1)


@dataclass(frozen=True)
class ConvSpec:
    filters: int
    kernel: int
    stride: int


@dataclass(frozen=True)
class PoolSpec:
    size: int
    stride: int


@dataclass(frozen=True)
class DenseSpec:
    width: int


@dataclass(frozen=True)
class NetworkSpec:
    layers: tuple
    final_activation: str   # "softmax" | "none"
    normalization: str      # "batch" | "layer" | "spectral" | "none"
    label_conditioned: bool


GENERATOR_SPEC = NetworkSpec(
    layers=(ConvSpec(32, 3, 3), ConvSpec(64, 3, 3), PoolSpec(2, 2),
            DenseSpec(128), DenseSpec(NUM_CLASSES)),
    final_activation="softmax", normalization="batch", label_conditioned=False)


def discriminator_spec(spectral_norm=False):
    return NetworkSpec(
        layers=(ConvSpec(32, 3, 3), ConvSpec(64, 3, 3), PoolSpec(2, 2),
                DenseSpec(128), DenseSpec(1)),
        final_activation="none",
        normalization="spectral" if spectral_norm else "layer",
        label_conditioned=True)


def _he_uniform(rng, shape, fan_in):
    bound = np.sqrt(6.0 / fan_in)
    return ad.Tensor(rng.uniform(-bound, bound, size=shape))


def _zeros(shape):
    return ad.Tensor(np.zeros(shape))


def _ones(shape):
    return ad.Tensor(np.ones(shape))


class Generator:
    """Classifier network G: images -> label distribution."""

    def __init__(self, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.conv1_w = _he_uniform(rng, (3, 3, 1, 32), fan_in=9)
        self.conv1_b = _zeros(32)
        self.bn1_gamma, self.bn1_beta = _ones(32), _zeros(32)
        self.bn1_state = ad.BatchNormState.create(32)
        self.conv2_w = _he_uniform(rng, (3, 3, 32, 64), fan_in=9 * 32)
        self.conv2_b = _zeros(64)
        self.bn2_gamma, self.bn2_beta = _ones(64), _zeros(64)
        self.bn2_state = ad.BatchNormState.create(64)
        self.dense1_w = _he_uniform(rng, (256, 128), fan_in=256)
        self.dense1_b = _zeros(128)
        self.bn3_gamma, self.bn3_beta = _ones(128), _zeros(128)
        self.bn3_state = ad.BatchNormState.create(128)
        self.dense2_w = _he_uniform(rng, (128, NUM_CLASSES), fan_in=128)
        self.dense2_b = _zeros(NUM_CLASSES)

    def named_params(self):
        return [(n, getattr(self, n)) for n in (
            "conv1_w", "conv1_b", "bn1_gamma", "bn1_beta",
            "conv2_w", "conv2_b", "bn2_gamma", "bn2_beta",
            "dense1_w", "dense1_b", "bn3_gamma", "bn3_beta",
            "dense2_w", "dense2_b")]

    def params(self):
        return [p for _, p in self.named_params()]

    def named_state(self):
        return [("bn1_state.mean", self.bn1_state.mean), ("bn1_state.var", self.bn1_state.var),
                ("bn2_state.mean", self.bn2_state.mean), ("bn2_state.var", self.bn2_state.var),
                ("bn3_state.mean", self.bn3_state.mean), ("bn3_state.var", self.bn3_state.var)]

    def forward(self, images, train):
        x = ad.astensor(images)
        x = ad.conv2d(x, self.conv1_w, self.conv1_b, stride=3, padding="same")
        x = ad.relu(ad.batch_norm(x, self.bn1_gamma, self.bn1_beta, self.bn1_state, train))
        x = ad.conv2d(x, self.conv2_w, self.conv2_b, stride=3, padding="same")
        x = ad.relu(ad.batch_norm(x, self.bn2_gamma, self.bn2_beta, self.bn2_state, train))
        x = ad.maxpool2x2(x)
        n = x.shape[0]
        x = ad.reshape(x, (n, 256))
        x = ad.add(ad.matmul(x, self.dense1_w), self.dense1_b)
        x = ad.relu(ad.batch_norm(x, self.bn3_gamma, self.bn3_beta, self.bn3_state, train))
        x = ad.add(ad.matmul(x, self.dense2_w), self.dense2_b)
        return ad.softmax(x, axis=1)

    __call__ = forward


class Discriminator:
    """Pair critic D: (images, label vectors) -> unbounded realness score.

    Conv kernels are spectrally normalized through their (out_channels,
    kh*kw*in_channels) reshape; dense matrices through their (out, in)
    transpose.
    """

    def __init__(self, rng=None, spectral_norm=False):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.spectral_norm = spectral_norm
        cin1 = 1 + NUM_CLASSES
        self.conv1_w = _he_uniform(rng, (3, 3, cin1, 32), fan_in=9 * cin1)
        self.conv1_b = _zeros(32)
        cin2 = 32 + NUM_CLASSES
        self.conv2_w = _he_uniform(rng, (3, 3, cin2, 64), fan_in=9 * cin2)
        self.conv2_b = _zeros(64)
        din1 = 256 + NUM_CLASSES
        self.dense1_w = _he_uniform(rng, (din1, 128), fan_in=din1)
        self.dense1_b = _zeros(128)
        din2 = 128 + NUM_CLASSES
        self.dense2_w = _he_uniform(rng, (din2, 1), fan_in=din2)
        self.dense2_b = _zeros(1)
        if spectral_norm:
            self.sn_states = {
                "conv1_w": ad.SpectralState.create(32, rng),
                "conv2_w": ad.SpectralState.create(64, rng),
                "dense1_w": ad.SpectralState.create(128, rng),
                "dense2_w": ad.SpectralState.create(1, rng),
            }
        else:
            self.ln1_gamma, self.ln1_beta = _ones(32), _zeros(32)
            self.ln2_gamma, self.ln2_beta = _ones(64), _zeros(64)
            self.ln3_gamma, self.ln3_beta = _ones(128), _zeros(128)

    def named_params(self):
        names = ["conv1_w", "conv1_b", "conv2_w", "conv2_b",
                 "dense1_w", "dense1_b", "dense2_w", "dense2_b"]
        if not self.spectral_norm:
            names += ["ln1_gamma", "ln1_beta", "ln2_gamma", "ln2_beta",
                      "ln3_gamma", "ln3_beta"]
        return [(n, getattr(self, n)) for n in names]

    def params(self):
        return [p for _, p in self.named_params()]

    def _kernel(self, name, train):
        w = getattr(self, name)
        if not self.spectral_norm:
            return w
        kh, kw, cin, f = w.shape
        w2 = ad.reshape(ad.transpose(w, (3, 0, 1, 2)), (f, kh * kw * cin))
        wb = ad.spectral_normalize(w2, self.sn_states[name], iters=1 if train else 0)
        return ad.transpose(ad.reshape(wb, (f, kh, kw, cin)), (1, 2, 3, 0))

    def _matrix(self, name, train):
        w = getattr(self, name)
        if not self.spectral_norm:
            return w
        wb = ad.spectral_normalize(ad.transpose(w), self.sn_states[name],
                                   iters=1 if train else 0)
        return ad.transpose(wb)

    def normalized_weight_matrices(self, train=False):
        """(name, 2-D tensor) pairs as used in the forward pass."""
        out = []
        for name in ("conv1_w", "conv2_w"):
            w = self._kernel(name, train)
            kh, kw, cin, f = w.shape
            out.append((name, ad.reshape(ad.transpose(w, (3, 0, 1, 2)), (f, kh * kw * cin))))
        for name in ("dense1_w", "dense2_w"):
            out.append((name, self._matrix(name, train)))
        return out

    def _spatial_labels(self, labels, h, w):
        n = labels.shape[0]
        return ad.broadcast_to(ad.reshape(labels, (n, 1, 1, NUM_CLASSES)),
                               (n, h, w, NUM_CLASSES))

    def forward(self, images, labels, train):
        x = ad.astensor(images)
        labels = ad.astensor(labels)
        n = x.shape[0]
        x = ad.concat([x, self._spatial_labels(labels, 28, 28)], axis=3)
        x = ad.conv2d(x, self._kernel("conv1_w", train), self.conv1_b, stride=3)
        if not self.spectral_norm:
            x = ad.layer_norm(x, self.ln1_gamma, self.ln1_beta)
        x = ad.relu(x)
        x = ad.concat([x, self._spatial_labels(labels, 10, 10)], axis=3)
        x = ad.conv2d(x, self._kernel("conv2_w", train), self.conv2_b, stride=3)
        if not self.spectral_norm:
            x = ad.layer_norm(x, self.ln2_gamma, self.ln2_beta)
        x = ad.relu(x)
        x = ad.maxpool2x2(x)
        x = ad.reshape(x, (n, 256))
        x = ad.concat([x, labels], axis=1)
        x = ad.add(ad.matmul(x, self._matrix("dense1_w", train)), self.dense1_b)
        if not self.spectral_norm:
            x = ad.layer_norm(x, self.ln3_gamma, self.ln3_beta)
        x = ad.relu(x)
        x = ad.concat([x, labels], axis=1)
        return ad.add(ad.matmul(x, self._matrix("dense2_w", train)), self.dense2_b)

    __call__ = forward


def build_generator(rng=None):
    return Generator(rng)


def build_discriminator(rng=None, spectral_norm=False):
    return Discriminator(rng, spectral_norm=spectral_norm)


def parameter_count(model):
    return sum(int(np.prod(p.shape)) for p in model.params())
