"""Network architectures, shape inference, block partitioning and weights."""

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ArchitectureError, ConfigError

CONV, AVGPOOL, FC = "conv", "avgpool", "fc"
_KIND_ALIASES = {
    "conv": CONV,
    "avgpool": AVGPOOL,
    "pool": AVGPOOL,
    "fc": FC,
    "fullyconnected": FC,
    "linear": FC,
}

TRAINABLE, FROZEN_RANDOM = "trainable", "random"
_MODE_ALIASES = {"trainable": TRAINABLE, "random": FROZEN_RANDOM, "frozenrandom": FROZEN_RANDOM}


def normalize_mode(mode):
    try:
        return _MODE_ALIASES[str(mode).lower().replace("_", "").replace("-", "")]
    except KeyError:
        raise ConfigError(f"unknown classifier mode {mode!r}") from None


@dataclass(frozen=True)
class LayerSpec:
    """One spiking layer: a synaptic operator followed by LIF neurons.

    ``size`` is the output channel count (conv, avgpool) or neuron count (fc).
    ``padding`` is zero-padding on each spatial border of a conv input.
    """

    kind: str
    size: int
    kernel: int | None = None
    stride: int | None = None
    padding: int = 0

    def __post_init__(self):
        kind = _KIND_ALIASES.get(str(self.kind).lower().replace("_", ""))
        if kind is None:
            raise ArchitectureError(f"unknown layer kind {self.kind!r}")
        object.__setattr__(self, "kind", kind)
        if self.size < 1:
            raise ArchitectureError(f"size must be positive, got {self.size}")
        if kind == FC:
            if self.kernel is not None or self.stride is not None or self.padding:
                raise ArchitectureError("fully-connected layers take no kernel/stride/padding")
        else:
            if self.kernel is None or self.kernel < 1:
                raise ArchitectureError(f"{kind} needs kernel >= 1")
            if self.stride is None:
                object.__setattr__(self, "stride", 1 if kind == CONV else self.kernel)
            if self.stride < 1:
                raise ArchitectureError(f"{kind} needs stride >= 1")
            if self.padding < 0:
                raise ArchitectureError("padding must be non-negative")
            if kind == AVGPOOL and self.padding:
                raise ArchitectureError("average pooling does not support padding")

    @property
    def trainable(self):
        return self.kind != AVGPOOL

    def to_dict(self):
        d = {"kind": self.kind, "size": self.size}
        if self.kind != FC:
            d.update(kernel=self.kernel, stride=self.stride)
            if self.padding:
                d["padding"] = self.padding
        return d


@dataclass(frozen=True)
class NetworkArch:
    input_shape: tuple
    layers: tuple
    num_classes: int
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))
        if len(self.input_shape) != 3 or min(self.input_shape) < 1:
            raise ArchitectureError(f"input_shape must be [C, H, W] with positive dims, got {self.input_shape}")
        if not self.layers:
            raise ArchitectureError("architecture needs at least one layer")
        if self.num_classes < 1:
            raise ArchitectureError("num_classes must be positive")
        infer_shapes(self)

    @property
    def num_trainable(self):
        return sum(1 for l in self.layers if l.trainable)

    @classmethod
    def from_dict(cls, d):
        try:
            layers = [
                LayerSpec(
                    kind=l["kind"],
                    size=int(l["size"]),
                    kernel=l.get("kernel"),
                    stride=l.get("stride"),
                    padding=int(l.get("padding", 0)),
                )
                for l in d["layers"]
            ]
            return cls(tuple(d["input_shape"]), tuple(layers), int(d["num_classes"]), d.get("name", ""))
        except KeyError as e:
            raise ArchitectureError(f"architecture file is missing field {e}") from None

    def to_dict(self):
        return {
            "name": self.name,
            "input_shape": list(self.input_shape),
            "layers": [l.to_dict() for l in self.layers],
            "num_classes": self.num_classes,
        }


BUNDLED = {"lenet1": "lenet1.json", "lenet2": "lenet2.json", "alexnet": "alexnet.json", "alexnet-dvs": "alexnet_dvs.json",
           "toy": "toy.json", "synth": "synth.json"}


def load_arch(source):
    """Load an architecture from a JSON path or a bundled name (see ``BUNDLED``)."""
    if isinstance(source, dict):
        return NetworkArch.from_dict(source)
    key = str(source).lower()
    if key in BUNDLED:
        text = resources.files("ttlbp.archs").joinpath(BUNDLED[key]).read_text()
    else:
        text = Path(source).read_text()
    return NetworkArch.from_dict(json.loads(text))


def save_arch(arch, path):
    Path(path).write_text(json.dumps(arch.to_dict(), indent=2) + "\n")


def infer_shapes(arch):
    """Per-layer output shapes: (C, H, W) for conv/avgpool, (N,) for fc."""
    shape = tuple(arch.input_shape)
    shapes = []
    for i, spec in enumerate(arch.layers):
        if spec.kind == FC:
            shape = (spec.size,)
        else:
            if len(shape) != 3:
                raise ArchitectureError(f"{spec.kind} cannot follow a fully-connected layer", layer=i)
            c, h, w = shape
            if spec.kind == AVGPOOL and spec.size != c:
                raise ArchitectureError(f"avgpool keeps {c} channels but declares {spec.size}", layer=i)
            p = spec.padding
            ho = (h + 2 * p - spec.kernel) // spec.stride + 1
            wo = (w + 2 * p - spec.kernel) // spec.stride + 1
            if ho < 1 or wo < 1 or h + 2 * p < spec.kernel or w + 2 * p < spec.kernel:
                raise ArchitectureError(
                    f"{spec.kind} (kernel {spec.kernel}, stride {spec.stride}) on {shape} gives non-positive output",
                    layer=i,
                )
            shape = (spec.size, ho, wo)
        shapes.append(shape)
    return shapes


def input_shapes(arch):
    return [tuple(arch.input_shape)] + infer_shapes(arch)[:-1]


def weight_shape(arch, index):
    spec = arch.layers[index]
    in_shape = input_shapes(arch)[index]
    if spec.kind == CONV:
        return (spec.size, in_shape[0], spec.kernel, spec.kernel)
    if spec.kind == FC:
        return (spec.size, int(np.prod(in_shape)))
    return None


@dataclass(frozen=True)
class BlockPlan:
    blocks: tuple          # tuple of range objects over layer indices
    classifier_at: tuple   # last layer index of each block
    classifier_mode: str
    n: int

    @property
    def num_blocks(self):
        return len(self.blocks)

    def block_of(self, layer):
        for b, r in enumerate(self.blocks):
            if layer in r:
                return b
        raise IndexError(layer)


def partition_blocks(arch, n, classifier_mode=TRAINABLE):
    """Split the layers into blocks of ``n`` trainable layers.

    Pooling layers join the block of the trainable layer before them; the
    last block takes any remainder.
    """
    total = arch.num_trainable
    if not isinstance(n, (int, np.integer)) or not 1 <= n <= total:
        raise ConfigError(f"block length n must lie in [1, {total}], got {n}")
    mode = normalize_mode(classifier_mode)
    starts = []
    seen = 0
    for i, spec in enumerate(arch.layers):
        if spec.trainable:
            if seen % n == 0:
                starts.append(i)
            seen += 1
    starts[0] = 0
    ends = starts[1:] + [len(arch.layers)]
    blocks = tuple(range(s, e) for s, e in zip(starts, ends))
    return BlockPlan(blocks, tuple(r[-1] for r in blocks), mode, int(n))


@dataclass
class WeightSet:
    """Main-network and classifier weights plus heavy-ball momentum buffers.

    Entries for pooling layers are ``None``. Frozen random classifiers have
    ``None`` momentum and are never updated.
    """

    layers: list
    classifiers: list
    frozen: list
    layer_momentum: list = field(default_factory=list)
    classifier_momentum: list = field(default_factory=list)

    def copy(self):
        cp = lambda xs: [None if x is None else x.copy() for x in xs]
        return WeightSet(cp(self.layers), cp(self.classifiers), list(self.frozen),
                         cp(self.layer_momentum), cp(self.classifier_momentum))

    def arrays(self):
        """Flat ``(name, array)`` listing, used for checkpoints and comparisons."""
        out = []
        for i, w in enumerate(self.layers):
            if w is not None:
                out.append((f"W{i}", w))
        for b, w in enumerate(self.classifiers):
            out.append((f"Wc{b}", w))
        for i, v in enumerate(self.layer_momentum):
            if v is not None:
                out.append((f"vW{i}", v))
        for b, v in enumerate(self.classifier_momentum):
            if v is not None:
                out.append((f"vWc{b}", v))
        return out


def _uniform(rng, shape, fan_in, scale, dtype):
    bound = scale / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def attach_classifiers(plan, arch, mode=None, rng_seed=0, scale=1.0, dtype=np.float64):
    """One fully-connected LIF readout of ``num_classes`` neurons per block.

    Returns ``(weights, momentum, frozen)`` lists, one entry per block.
    """
    mode = normalize_mode(mode or plan.classifier_mode)
    shapes = infer_shapes(arch)
    rng = np.random.default_rng(np.random.SeedSequence([int(rng_seed), 2]))
    weights, momentum, frozen = [], [], []
    for last in plan.classifier_at:
        fan_in = int(np.prod(shapes[last]))
        w = _uniform(rng, (arch.num_classes, fan_in), fan_in, scale, dtype)
        if mode == FROZEN_RANDOM:
            w.flags.writeable = False
        weights.append(w)
        momentum.append(None if mode == FROZEN_RANDOM else np.zeros_like(w))
        frozen.append(mode == FROZEN_RANDOM)
    return weights, momentum, frozen


def init_weights(arch, plan, rng_seed=0, scale=1.0, dtype=np.float64):
    """Fan-in scaled uniform init, U(-scale/sqrt(fan_in), +scale/sqrt(fan_in))."""
    rng = np.random.default_rng(np.random.SeedSequence([int(rng_seed), 1]))
    layers, momentum = [], []
    for i in range(len(arch.layers)):
        shape = weight_shape(arch, i)
        if shape is None:
            layers.append(None)
            momentum.append(None)
            continue
        fan_in = int(np.prod(shape[1:]))
        w = _uniform(rng, shape, fan_in, scale, dtype)
        layers.append(w)
        momentum.append(np.zeros_like(w))
    cls, cmom, frozen = attach_classifiers(plan, arch, plan.classifier_mode, rng_seed, scale, dtype)
    return WeightSet(layers, cls, frozen, momentum, cmom)
