"""LoRA and weight-decomposed LoRA (WDLoRA) adapters for :class:`~nervesynth.nn.Linear`.

For a frozen weight ``W0`` of shape ``d x k``:

* LoRA:   ``W' = W0 + s * B A``
* WDLoRA: ``W' = m * (V + s * B A) / ||V + s * B A||_c``

with ``B: d x r`` (zero at init), ``A: r x k``, ``V = W0`` frozen and the
magnitude ``m`` (one entry per column, initialised to ``||W0||_c``) trained
directly. ``||.||_c`` is the column-wise Euclidean norm.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .bundle import read_bundle, write_bundle
from .errors import ConfigError
from .nn import Linear, Module
from .tensor import Tensor

TARGET_ROLES = frozenset({"q", "k", "v", "out_proj", "mlp_in", "mlp_out"})
DEFAULT_TARGETS = frozenset({"q", "k", "v", "out_proj"})
KINDS = ("lora", "wdlora")


def _check_rank(w0: np.ndarray, rank: int) -> None:
    if w0.ndim != 2:
        raise ConfigError(f"adapters need a 2-D weight, got shape {w0.shape}")
    if not 1 <= rank <= min(w0.shape):
        raise ConfigError(f"rank must lie in [1, {min(w0.shape)}], got {rank}")


def _init_a(rank: int, k: int, seed: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(k)
    return np.random.default_rng(seed).uniform(-bound, bound, size=(rank, k))


class LoraAdapter(Module):
    kind = "lora"

    def __init__(self, w0, a, b, scale: float = 1.0, seed: int = 0):
        self.w0 = Tensor(w0)
        self.a = Tensor(a, requires_grad=True)
        self.b = Tensor(b, requires_grad=True)
        self._scale = float(scale)
        self._seed = seed

    @property
    def rank(self) -> int:
        return self.a.shape[0]

    @property
    def scale(self) -> float:
        return self._scale

    @property
    def shape(self) -> tuple[int, int]:
        return self.w0.shape

    def compose(self) -> Tensor:
        return self.w0 + T.matmul(self.b, self.a) * self._scale


class WdLoraAdapter(Module):
    kind = "wdlora"

    def __init__(self, m, v, a, b, scale: float = 1.0, seed: int = 0, norm_axis: str = "column"):
        if norm_axis not in ("column", "row"):
            raise ConfigError(f"norm_axis must be 'column' or 'row', got {norm_axis!r}")
        self.m = Tensor(m, requires_grad=True)
        self.v = Tensor(v)
        self.a = Tensor(a, requires_grad=True)
        self.b = Tensor(b, requires_grad=True)
        self._scale = float(scale)
        self._seed = seed
        self._norm_axis = norm_axis

    @property
    def rank(self) -> int:
        return self.a.shape[0]

    @property
    def scale(self) -> float:
        return self._scale

    @property
    def norm_axis(self) -> str:
        return self._norm_axis

    @property
    def shape(self) -> tuple[int, int]:
        return self.v.shape

    def direction(self) -> Tensor:
        """Unit-norm direction matrix ``(V + sBA) / ||V + sBA||``."""
        delta = self.v + T.matmul(self.b, self.a) * self._scale
        if self._norm_axis == "column":
            return delta / T.reshape(T.column_norms(delta), (1, -1))
        return delta / T.reshape(T.row_norms(delta), (-1, 1))

    def compose(self) -> Tensor:
        delta = self.v + T.matmul(self.b, self.a) * self._scale
        if self._norm_axis == "column":
            return delta * T.reshape(self.m / T.column_norms(delta), (1, -1))
        return delta * T.reshape(self.m / T.row_norms(delta), (-1, 1))


def init_lora(w0, rank: int, seed: int, scale: float = 1.0) -> LoraAdapter:
    w0 = np.array(w0.data if isinstance(w0, Tensor) else w0, dtype=np.float64)
    _check_rank(w0, rank)
    d, k = w0.shape
    return LoraAdapter(w0, _init_a(rank, k, seed), np.zeros((d, rank)), scale, seed)


def init_wdlora(w0, rank: int, seed: int, scale: float = 1.0, norm_axis: str = "column") -> WdLoraAdapter:
    w0 = np.array(w0.data if isinstance(w0, Tensor) else w0, dtype=np.float64)
    _check_rank(w0, rank)
    d, k = w0.shape
    w0_t = Tensor(w0)
    norms = T.column_norms(w0_t) if norm_axis == "column" else T.row_norms(w0_t)
    return WdLoraAdapter(norms.data.copy(), w0.copy(), _init_a(rank, k, seed), np.zeros((d, rank)),
                         scale, seed, norm_axis)


def compose(adapter: WdLoraAdapter) -> Tensor:
    return adapter.compose()


def compose_lora(adapter: LoraAdapter) -> Tensor:
    return adapter.compose()


def merge(adapter) -> Tensor:
    """Dense, gradient-free weight equal to the adapter's composed weight."""
    with T.no_grad():
        return Tensor(adapter.compose().data.copy())


def param_count(adapter) -> int:
    """Trainable entries: ``r(d+k)`` for LoRA, plus the magnitude vector for WDLoRA."""
    d, k = adapter.shape
    n = adapter.rank * (d + k)
    if isinstance(adapter, WdLoraAdapter):
        n += adapter.m.size
    return n


def closed_form_count(kind: str, d: int, k: int, rank: int) -> int:
    if kind not in KINDS:
        raise ConfigError(f"unknown adapter kind {kind!r}")
    return rank * (d + k) + (k if kind == "wdlora" else 0)


class AdaptedLinear(Linear):
    """A linear layer whose weight is produced by an adapter."""

    def __init__(self, base: Linear, adapter):
        self.adapter = adapter
        self.bias = base.bias
        self._role = base.role

    def effective_weight(self) -> Tensor:
        return self.adapter.compose()

    def merged(self) -> Linear:
        out = Linear.__new__(Linear)
        out.weight = merge(self.adapter)
        out.bias = None if self.bias is None else Tensor(self.bias.data.copy())
        out._role = self._role
        return out


@dataclass
class AdapterReport:
    kind: str
    rank: int
    layers: list[str]
    per_layer: dict[str, int]
    trainable: int
    total: int

    @property
    def fraction(self) -> float:
        return self.trainable / self.total if self.total else 0.0

    def as_dict(self) -> dict:
        return {"kind": self.kind, "rank": self.rank, "layers": self.layers,
                "per_layer": self.per_layer, "trainable": self.trainable,
                "total": self.total, "fraction": self.fraction}


def _linear_slots(model: Module):
    """Yield ``(path, container, key, layer)`` for every Linear reachable from ``model``."""
    for path, mod in model.modules():
        for name, val in vars(mod).items():
            if name.startswith("_"):
                continue
            sub = f"{path}.{name}" if path else name
            if isinstance(val, Linear):
                yield sub, mod, name, val
            elif isinstance(val, list):
                for i, item in enumerate(val):
                    if isinstance(item, Linear):
                        yield f"{sub}.{i}", val, i, item


def attach_adapters(model: Module, targets=DEFAULT_TARGETS, kind: str = "wdlora", rank: int = 8,
                    seed: int = 0, scale: float = 1.0, norm_axis: str = "column") -> AdapterReport:
    """Freeze ``model`` and wrap every linear layer whose role is in ``targets``.

    Mutates ``model`` in place and returns the parameter accounting.
    """
    targets = set(targets)
    unknown = targets - TARGET_ROLES
    if unknown:
        raise ConfigError(f"unknown adapter target(s) {sorted(unknown)}; choose from {sorted(TARGET_ROLES)}")
    if kind not in KINDS:
        raise ConfigError(f"unknown adapter kind {kind!r}; choose from {KINDS}")
    total = model.num_parameters()
    model.freeze()
    seeds = np.random.SeedSequence(seed)
    layers, per_layer = [], {}
    slots = [s for s in _linear_slots(model) if s[3].role in targets and not isinstance(s[3], AdaptedLinear)]
    for (path, container, key, layer), child in zip(slots, seeds.spawn(len(slots))):
        layer_seed = int(child.generate_state(1)[0])
        if kind == "lora":
            adapter = init_lora(layer.weight, rank, layer_seed, scale)
        else:
            adapter = init_wdlora(layer.weight, rank, layer_seed, scale, norm_axis)
        wrapped = AdaptedLinear(layer, adapter)
        if isinstance(container, list):
            container[key] = wrapped
        else:
            setattr(container, key, wrapped)
        layers.append(path)
        per_layer[path] = param_count(adapter)
    return AdapterReport(kind, rank, layers, per_layer, model.num_parameters(trainable_only=True), total)


def merge_adapters(model: Module) -> None:
    """Replace every adapted layer with a plain dense layer holding its merged weight."""
    for _, container, key, layer in list(_linear_slots(model)):
        if isinstance(layer, AdaptedLinear):
            if isinstance(container, list):
                container[key] = layer.merged()
            else:
                setattr(container, key, layer.merged())


def save_adapter(adapter, stem: str | Path) -> None:
    names = ["w0", "a", "b"] if adapter.kind == "lora" else ["m", "v", "a", "b"]
    d, k = adapter.shape
    manifest = {"kind": adapter.kind, "rank": adapter.rank, "scale": adapter.scale,
                "shape": [d, k], "seed": adapter._seed}
    if adapter.kind == "wdlora":
        manifest["norm_axis"] = adapter.norm_axis
    write_bundle(stem, manifest, [(n, getattr(adapter, n).data) for n in names])


def load_adapter(stem: str | Path):
    doc, arr = read_bundle(stem)
    if doc["kind"] == "lora":
        return LoraAdapter(arr["w0"], arr["a"], arr["b"], doc["scale"], doc["seed"])
    if doc["kind"] == "wdlora":
        return WdLoraAdapter(arr["m"], arr["v"], arr["a"], arr["b"], doc["scale"], doc["seed"],
                             doc.get("norm_axis", "column"))
    raise ConfigError(f"unknown adapter kind {doc['kind']!r}")
