"""
Small differentiable building blocks shared by the encoder, policy and adaptation networks,
plus the checkpoint file format. Everything runs on the CPU in 64-bit floating point.
"""
import hashlib
import json
import math
import struct

from collections import OrderedDict
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from hinge.rl.errors import NetworkError, CheckpointError
from hinge.rl.logger import HingeLogger

DTYPE = torch.float64
SIGMA_FLOOR = 1e-6

CHECKPOINT_MAGIC = b"HINGERL\0"
CHECKPOINT_VERSION = 1

ACTIVATIONS = {
    "tanh": torch.tanh,
    "relu": torch.relu,
    "identity": lambda x: x,
    "softplus": F.softplus,
}

_GAINS = {
    "tanh": 1.0,
    "relu": math.sqrt(2.0),
    "identity": 1.0,
    "softplus": 1.0,
}


def as_tensor(values):
    if isinstance(values, torch.Tensor):
        return values.to(DTYPE)
    return torch.as_tensor(np.asarray(values, dtype=float), dtype=DTYPE)


def make_generator(seed):
    return torch.Generator().manual_seed(int(seed))


@dataclass
class DenseLayerSpec:
    in_dim: int
    out_dim: int
    activation: str = "tanh"

    def __post_init__(self):
        if self.in_dim <= 0 or self.out_dim <= 0:
            raise NetworkError(f"Dense layer dimensions must be positive, got {self.in_dim} -> {self.out_dim}.")
        if self.activation not in ACTIVATIONS:
            raise NetworkError(f"Unknown activation {self.activation}.")


@dataclass
class Conv1DLayerSpec:
    in_channels: int
    out_channels: int
    kernel: int
    stride: int
    activation: str = "relu"

    def __post_init__(self):
        if min(self.in_channels, self.out_channels, self.kernel, self.stride) <= 0:
            raise NetworkError("Convolution channels, kernel and stride must all be positive.")
        if self.activation not in ACTIVATIONS:
            raise NetworkError(f"Unknown activation {self.activation}.")

    def output_length(self, length):
        if length < self.kernel:
            raise NetworkError(f"Sequence of length {length} is shorter than the kernel {self.kernel}.")
        return (length - self.kernel) // self.stride + 1


def _check_last_dim(x, size, what):
    if x.shape[-1] != size:
        raise NetworkError(f"{what} expects trailing dimension {size}, got shape {tuple(x.shape)}.")


class DenseLayer(nn.Module):

    def __init__(self, spec, generator=None, gain=None):
        super().__init__()
        self.spec = spec
        self.linear = nn.Linear(spec.in_dim, spec.out_dim, dtype=DTYPE)
        nn.init.orthogonal_(self.linear.weight, gain=_GAINS[spec.activation] if gain is None else gain,
                            generator=generator)
        nn.init.zeros_(self.linear.bias)

    def forward(self, x):
        _check_last_dim(x, self.spec.in_dim, "Dense layer")
        return ACTIVATIONS[self.spec.activation](self.linear(x))


class Conv1DLayer(nn.Module):
    """
    Valid (unpadded) strided 1-D convolution over inputs shaped (batch, channels, length).
    """

    def __init__(self, spec, generator=None):
        super().__init__()
        self.spec = spec
        self.conv = nn.Conv1d(spec.in_channels, spec.out_channels, spec.kernel, stride=spec.stride, dtype=DTYPE)
        nn.init.orthogonal_(self.conv.weight, gain=_GAINS[spec.activation], generator=generator)
        nn.init.zeros_(self.conv.bias)

    def forward(self, x):
        if x.dim() != 3 or x.shape[1] != self.spec.in_channels:
            raise NetworkError(f"Convolution expects (batch, {self.spec.in_channels}, length), got {tuple(x.shape)}.")
        self.spec.output_length(x.shape[2])
        return ACTIVATIONS[self.spec.activation](self.conv(x))


class DenseStack(nn.Module):
    """
    Dense layers through *sizes* with *activation* between them and *final_activation* on the last.
    """

    def __init__(self, sizes, activation="tanh", final_activation=None, generator=None):
        super().__init__()
        if len(sizes) < 2:
            raise NetworkError("A dense stack needs at least input and output sizes.")
        final_activation = activation if final_activation is None else final_activation
        layers = []
        for i, (in_dim, out_dim) in enumerate(zip(sizes[:-1], sizes[1:])):
            last = i == len(sizes) - 2
            layers.append(DenseLayer(DenseLayerSpec(in_dim, out_dim, final_activation if last else activation),
                                     generator=generator))
        self.layers = nn.ModuleList(layers)
        self.in_dim = sizes[0]
        self.out_dim = sizes[-1]

    def forward(self, x):
        for layer in self.layers:
            x = layer(x)
        return x


class GaussianHead(nn.Module):
    """
    Linear mean and positive standard deviation, sigma = softplus(raw) + SIGMA_FLOOR.
    """

    def __init__(self, in_dim, out_dim, generator=None, gain=1.0):
        super().__init__()
        self.mu = DenseLayer(DenseLayerSpec(in_dim, out_dim, "identity"), generator=generator, gain=gain)
        self.sigma = DenseLayer(DenseLayerSpec(in_dim, out_dim, "identity"), generator=generator, gain=gain)

    def forward(self, x):
        return self.mu(x), F.softplus(self.sigma(x)) + SIGMA_FLOOR


def _dense_params(spec, params):
    weight, bias = (as_tensor(p) for p in params)
    if tuple(weight.shape) != (spec.out_dim, spec.in_dim) or tuple(bias.shape) != (spec.out_dim,):
        raise NetworkError(f"Dense parameters {tuple(weight.shape)}, {tuple(bias.shape)} "
                           f"do not match {spec.in_dim} -> {spec.out_dim}.")
    return weight, bias


def dense_forward(spec, params, x):
    """
    act(W x + b) for a single input vector or a batch of row vectors.

    :param params: Tuple of (weight (out, in), bias (out)).
    """
    weight, bias = _dense_params(spec, params)
    x = as_tensor(x)
    _check_last_dim(x, spec.in_dim, "Dense layer")
    return ACTIVATIONS[spec.activation](F.linear(x, weight, bias))


def dense_backward(spec, params, x, output_grad):
    """
    Gradients of sum(output * output_grad) with respect to the input and the parameters.

    :return: Tuple of (input gradient, (weight gradient, bias gradient)).
    """
    weight, bias = (p.detach().clone().requires_grad_(True) for p in _dense_params(spec, params))
    x = as_tensor(x).detach().clone().requires_grad_(True)
    output = dense_forward(spec, (weight, bias), x)
    grads = torch.autograd.grad(output, (x, weight, bias), grad_outputs=as_tensor(output_grad))
    return grads[0], (grads[1], grads[2])


def _conv_params(spec, params):
    weight, bias = (as_tensor(p) for p in params)
    if (tuple(weight.shape) != (spec.out_channels, spec.in_channels, spec.kernel)
            or tuple(bias.shape) != (spec.out_channels,)):
        raise NetworkError(f"Convolution parameters {tuple(weight.shape)}, {tuple(bias.shape)} do not match {spec}.")
    return weight, bias


def conv1d_forward(spec, params, sequence):
    """
    Strided cross-correlation summed over input channels, plus bias, then the layer activation.

    :param sequence: Array shaped (channels, length) or (batch, channels, length).
    """
    weight, bias = _conv_params(spec, params)
    x = as_tensor(sequence)
    batched = x.dim() == 3
    if not batched:
        x = x.unsqueeze(0)
    if x.dim() != 3 or x.shape[1] != spec.in_channels:
        raise NetworkError(f"Convolution expects {spec.in_channels} input channels, got shape {tuple(x.shape)}.")
    spec.output_length(x.shape[2])
    y = ACTIVATIONS[spec.activation](F.conv1d(x, weight, bias, stride=spec.stride))
    return y if batched else y.squeeze(0)


def conv1d_backward(spec, params, sequence, output_grad):
    weight, bias = (p.detach().clone().requires_grad_(True) for p in _conv_params(spec, params))
    x = as_tensor(sequence).detach().clone().requires_grad_(True)
    output = conv1d_forward(spec, (weight, bias), x)
    grads = torch.autograd.grad(output, (x, weight, bias), grad_outputs=as_tensor(output_grad))
    return grads[0], (grads[1], grads[2])


def _check_sigma(sigma):
    if not bool(torch.all(sigma > 0.0)):
        raise NetworkError("Standard deviations must be strictly positive.")


def gaussian_sample(mu, sigma, eps):
    """
    Reparameterised sample mu + eps * sigma, differentiable in mu and sigma.
    """
    mu, sigma, eps = as_tensor(mu), as_tensor(sigma), as_tensor(eps)
    _check_sigma(sigma)
    return mu + eps * sigma


def gaussian_log_prob(mu, sigma, x):
    """
    Log density of a diagonal Gaussian, summed over the last dimension.
    """
    mu, sigma, x = as_tensor(mu), as_tensor(sigma), as_tensor(x)
    _check_sigma(sigma)
    return torch.distributions.Normal(mu, sigma).log_prob(x).sum(dim=-1)


def gaussian_entropy(sigma):
    sigma = as_tensor(sigma)
    _check_sigma(sigma)
    return torch.distributions.Normal(torch.zeros_like(sigma), sigma).entropy().sum(dim=-1)


def squared_error(target, estimate):
    """
    Squared Euclidean distance over the last dimension.
    """
    return ((as_tensor(target) - as_tensor(estimate)) ** 2).sum(dim=-1)


def kl_standard_normal(mu, sigma):
    """
    KL divergence of N(mu, sigma^2) from the unit normal, summed over the last dimension.
    """
    mu, sigma = as_tensor(mu), as_tensor(sigma)
    _check_sigma(sigma)
    return 0.5 * (mu ** 2 + sigma ** 2 - torch.log(sigma ** 2) - 1.0).sum(dim=-1)


class AdamState(object):
    """
    Bias-corrected Adam over a fixed list of parameters.
    """

    def __init__(self, parameters, lr, betas=(0.9, 0.999), eps=1e-8):
        self._parameters = [p for p in parameters]
        if not self._parameters:
            raise NetworkError("Adam needs at least one parameter.")
        self.lr = lr
        self.optimizer = torch.optim.Adam(self._parameters, lr=lr, betas=betas, eps=eps)

    def parameters(self):
        return self._parameters

    def step_count(self):
        states = [self.optimizer.state[p] for p in self._parameters if p in self.optimizer.state]
        return int(states[0]["step"]) if states else 0

    def zero_grad(self):
        self.optimizer.zero_grad(set_to_none=False)

    def step(self):
        self.optimizer.step()


def adam_step(state, grads):
    """
    Apply one Adam update with explicit gradients.

    :param state: AdamState holding the parameters.
    :param grads: One gradient per parameter, same shapes.
    """
    parameters = state.parameters()
    if len(grads) != len(parameters):
        raise NetworkError(f"Adam expected {len(parameters)} gradients, got {len(grads)}.")
    for p, g in zip(parameters, grads):
        g = as_tensor(g)
        if g.shape != p.shape:
            raise NetworkError(f"Gradient shape {tuple(g.shape)} does not match parameter {tuple(p.shape)}.")
        p.grad = g.clone()
    state.step()
    return parameters


class RunningMeanStd(object):
    """
    Streaming mean and variance, merged batch by batch.
    """

    def __init__(self, epsilon=1e-4):
        self.mean = 0.0
        self.var = 1.0
        self.count = epsilon

    def update(self, values):
        values = np.asarray(values, dtype=float).reshape(-1)
        if values.size == 0:
            return
        batch_mean, batch_var, batch_count = float(values.mean()), float(values.var()), values.size
        delta = batch_mean - self.mean
        total = self.count + batch_count
        self.mean += delta * batch_count / total
        m2 = self.var * self.count + batch_var * batch_count + delta ** 2 * self.count * batch_count / total
        self.var = m2 / total
        self.count = total

    def std(self):
        return math.sqrt(self.var + 1e-8)


def parameter_checksum(module):
    """
    SHA-256 over every parameter and buffer in state_dict order, as little-endian float64.
    """
    digest = hashlib.sha256()
    for name, tensor in module.state_dict().items():
        digest.update(name.encode("utf-8"))
        digest.update(tensor.detach().cpu().numpy().astype("<f8").tobytes())
    return digest.hexdigest()


def save_checkpoint(filename, module, kind, arguments, metadata=None):
    """
    Write *module* in the versioned binary checkpoint layout: magic, version, JSON descriptor
    and then each state_dict tensor as little-endian float64 in declaration order.

    :param kind: Model kind recorded in the descriptor, checked on load.
    :param arguments: Constructor arguments needed to rebuild the module.
    :param metadata: Optional *dict* of JSON-serialisable extras.
    """
    state = module.state_dict()
    descriptor = {
        "kind": kind,
        "arguments": arguments,
        "layers": [{"name": name, "shape": list(tensor.shape)} for name, tensor in state.items()],
        "metadata": metadata or {},
    }
    encoded = json.dumps(descriptor, sort_keys=True).encode("utf-8")
    with open(filename, 'wb') as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<II", CHECKPOINT_VERSION, len(encoded)))
        f.write(encoded)
        for tensor in state.values():
            f.write(tensor.detach().cpu().numpy().astype("<f8").tobytes())


def read_checkpoint(filename, kind=None):
    """
    :return: Tuple of (descriptor *dict*, OrderedDict of name to numpy array).
    """
    try:
        with open(filename, 'rb') as f:
            data = f.read()
    except IOError as e:
        raise CheckpointError(f"Failed to read checkpoint {filename}: {e}")

    header_size = len(CHECKPOINT_MAGIC) + 8
    if len(data) < header_size or not data.startswith(CHECKPOINT_MAGIC):
        raise CheckpointError(f"{filename} is not a checkpoint file.")
    version, length = struct.unpack_from("<II", data, len(CHECKPOINT_MAGIC))
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"Unsupported checkpoint version {version} in {filename}.")
    try:
        descriptor = json.loads(data[header_size:header_size + length].decode("utf-8"))
    except (UnicodeDecodeError, ValueError) as e:
        raise CheckpointError(f"Corrupt checkpoint descriptor in {filename}: {e}")
    if kind is not None and descriptor.get("kind") != kind:
        raise CheckpointError(f"Checkpoint {filename} holds a {descriptor.get('kind')}, expected a {kind}.")

    arrays = OrderedDict()
    offset = header_size + length
    for layer in descriptor["layers"]:
        count = int(np.prod(layer["shape"], dtype=np.int64))
        end = offset + 8 * count
        if end > len(data):
            raise CheckpointError(f"Checkpoint {filename} is truncated at {layer['name']}.")
        arrays[layer["name"]] = np.frombuffer(data, dtype="<f8", count=count, offset=offset).reshape(layer["shape"])
        offset = end
    if offset != len(data):
        raise CheckpointError(f"Checkpoint {filename} has {len(data) - offset} trailing bytes.")

    return descriptor, arrays


def load_state(module, arrays):
    """
    Copy checkpoint arrays into *module*, which must have exactly the same layers.
    """
    try:
        module.load_state_dict(OrderedDict((name, torch.tensor(np.array(values), dtype=DTYPE))
                                           for name, values in arrays.items()))
    except RuntimeError as e:
        HingeLogger.getLogger().error(f"Checkpoint does not fit {type(module).__name__}: {e}")
        raise CheckpointError(f"Checkpoint layers do not match {type(module).__name__}: {e}")
    return module
