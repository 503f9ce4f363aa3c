"""Model and training configuration, loadable from a sectioned TOML file."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from ..bit_alloc import RegulatingTargets
from ..errors import InvalidArgument
from ..renewal import GridSearchConfig

RENEWAL_MODES = ("off", "act-only", "weight-only", "bilateral")


@dataclass(frozen=True)
class LayerSpec:
    kind: str = "conv2d"
    out: int = 8
    kernel: int = 3
    stride: int = 1
    padding: int = 1
    batch_norm: bool = True

    def __post_init__(self):
        if self.kind not in ("conv2d", "dense"):
            raise InvalidArgument(f"unknown layer kind {self.kind!r}")
        if self.out < 1:
            raise InvalidArgument("layer width must be >= 1")


@dataclass(frozen=True)
class ModelSpec:
    input_shape: tuple = (1, 8, 8)
    num_classes: int = 10
    layers: tuple = (
        LayerSpec("conv2d", 8, 3, 1, 1),
        LayerSpec("conv2d", 16, 3, 2, 1),
        LayerSpec("conv2d", 16, 3, 1, 1),
    )
    tau: float = 1.0
    shift_enabled: bool = True
    bidirectional_first: bool = True
    bounds: tuple = (6, 6, 3)  # B_w, B_s, T
    init_bits: tuple = (4.0, 4.0, 2.0)  # W, S, T
    input_bits: int = 8

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        object.__setattr__(self, "layers", tuple(
            l if isinstance(l, LayerSpec) else LayerSpec(**l) for l in self.layers))
        object.__setattr__(self, "bounds", tuple(int(v) for v in self.bounds))
        object.__setattr__(self, "init_bits", tuple(float(v) for v in self.init_bits))
        if not self.layers:
            raise InvalidArgument("model needs at least one spiking layer")
        if min(self.bounds) < 1:
            raise InvalidArgument("bit bounds must be >= 1")
        if self.tau < 1:
            raise InvalidArgument("tau must be >= 1")
        self.shapes()  # chain compatibility

    def shapes(self):
        """Output shape (per sample) of every spiking layer."""
        from .ops import conv_out_size

        shape = self.input_shape
        out = []
        for i, l in enumerate(self.layers):
            if l.kind == "conv2d":
                if len(shape) != 3:
                    raise InvalidArgument(f"layer {i}: conv2d after a dense layer")
                c, h, w = shape
                ho = conv_out_size(h, l.kernel, l.stride, l.padding)
                wo = conv_out_size(w, l.kernel, l.stride, l.padding)
                if ho < 1 or wo < 1:
                    raise InvalidArgument(f"layer {i}: spatial size collapses to {ho}x{wo}")
                shape = (l.out, ho, wo)
            else:
                shape = (l.out,)
            out.append(shape)
        return out

    def to_dict(self):
        d = asdict(self)
        d["input_shape"] = list(self.input_shape)
        d["bounds"] = list(self.bounds)
        d["init_bits"] = list(self.init_bits)
        d["layers"] = [asdict(l) for l in self.layers]
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["layers"] = tuple(LayerSpec(**l) for l in d.get("layers", []))
        return cls(**d)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 64
    learning_rate: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 0.0
    targets: RegulatingTargets = field(default_factory=RegulatingTargets)
    renewal: str = "act-only"
    renewal_latch: bool = True
    grid: GridSearchConfig = field(default_factory=GridSearchConfig)
    learn_bits: bool = True
    grad_scale: bool = True
    seed: int = 0
    train_path: str = ""
    test_path: str = ""
    data_format: str = "idx"

    def __post_init__(self):
        if self.epochs < 1:
            raise InvalidArgument(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise InvalidArgument(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.learning_rate > 0:
            raise InvalidArgument(f"learning_rate must be positive, got {self.learning_rate}")
        if self.renewal not in RENEWAL_MODES:
            raise InvalidArgument(f"renewal must be one of {RENEWAL_MODES}, got {self.renewal!r}")
        if self.data_format not in ("idx", "csv"):
            raise InvalidArgument(f"unknown data format {self.data_format!r}")

    @property
    def renew_weights(self) -> bool:
        return self.renewal in ("weight-only", "bilateral")

    @property
    def renew_spikes(self) -> bool:
        return self.renewal in ("act-only", "bilateral")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["targets"] = RegulatingTargets(**d.get("targets", {}))
        d["grid"] = GridSearchConfig(**d.get("grid", {}))
        return cls(**d)


# section -> {key: (owner, attribute)}; owner is "model", "train", "targets" or "grid"
_KEYS = {
    "model": {k: ("model", k) for k in
              ("input_shape", "num_classes", "tau", "shift_enabled", "bidirectional_first", "input_bits")},
    "bit_allocation": {
        "B_w_bound": ("bound", 0), "B_s_bound": ("bound", 1), "T_bound": ("bound", 2),
        "init_W": ("init", 0), "init_S": ("init", 1), "init_T": ("init", 2),
        "B_w_tar": ("targets", "B_w_tar"), "B_s_tar": ("targets", "B_s_tar"), "T_tar": ("targets", "T_tar"),
        "lambda1": ("targets", "lambda1"), "lambda2": ("targets", "lambda2"), "lambda3": ("targets", "lambda3"),
        "learn_bits": ("train", "learn_bits"), "grad_scale": ("train", "grad_scale"),
    },
    "step_renewal": {
        "mode": ("train", "renewal"), "latch": ("train", "renewal_latch"),
        "K": ("grid", "K"), "pow": ("grid", "pow"),
    },
    "train": {k: ("train", k) for k in
              ("epochs", "batch_size", "learning_rate", "momentum", "weight_decay", "seed")},
    "data": {"train_path": ("train", "train_path"), "test_path": ("train", "test_path"),
             "format": ("train", "data_format")},
}


def config_keys():
    """All (section, key, default) triples, for help output."""
    model, train = ModelSpec(), TrainConfig()
    out = []
    for section, keys in _KEYS.items():
        for key, (owner, attr) in keys.items():
            if owner == "model":
                val = getattr(model, attr)
            elif owner == "bound":
                val = model.bounds[attr]
            elif owner == "init":
                val = model.init_bits[attr]
            elif owner == "targets":
                val = getattr(train.targets, attr)
            elif owner == "grid":
                val = getattr(train.grid, attr)
            else:
                val = getattr(train, attr)
            out.append((section, key, val))
    out.append(("model", "layers", "[[model.layers]] tables: kind, out, kernel, stride, padding, batch_norm"))
    return out


def _check_type(section, key, val, default):
    if isinstance(default, bool):
        ok = isinstance(val, bool)
    elif isinstance(default, (int, float)):
        # ints are accepted where floats are expected, never the reverse
        ok = isinstance(val, (int, float)) and not isinstance(val, bool)
        ok = ok and (isinstance(default, float) or isinstance(val, int))
    elif isinstance(default, tuple):
        ok = isinstance(val, (list, tuple))
    else:
        ok = isinstance(val, type(default))
    if not ok:
        raise InvalidArgument(f"{section}.{key}: expected {type(default).__name__}, got {val!r}")


def build_config(doc: dict) -> tuple[ModelSpec, TrainConfig]:
    defaults = {(s, k): v for s, k, v in config_keys()}
    model_kw, train_kw, tar_kw, grid_kw = {}, {}, {}, {}
    bounds, init = list(ModelSpec().bounds), list(ModelSpec().init_bits)
    layers = None
    for section, body in doc.items():
        if section not in _KEYS:
            raise InvalidArgument(f"unknown config section [{section}]")
        for key, val in body.items():
            if section == "model" and key == "layers":
                layers = tuple(LayerSpec(**l) for l in val)
                continue
            if key not in _KEYS[section]:
                raise InvalidArgument(f"unknown config key {section}.{key}")
            _check_type(section, key, val, defaults[(section, key)])
            owner, attr = _KEYS[section][key]
            if owner == "model":
                model_kw[attr] = val
            elif owner == "bound":
                bounds[attr] = val
            elif owner == "init":
                init[attr] = val
            elif owner == "targets":
                tar_kw[attr] = val
            elif owner == "grid":
                grid_kw[attr] = val
            else:
                train_kw[attr] = val
    if layers is not None:
        model_kw["layers"] = layers
    try:
        spec = ModelSpec(bounds=tuple(bounds), init_bits=tuple(init), **model_kw)
        cfg = TrainConfig(targets=RegulatingTargets(**tar_kw), grid=GridSearchConfig(**grid_kw), **train_kw)
    except TypeError as e:
        raise InvalidArgument(str(e)) from e
    return spec, cfg


def load_config(path) -> tuple[ModelSpec, TrainConfig]:
    with open(path, "rb") as f:
        try:
            doc = tomllib.load(f)
        except tomllib.TOMLDecodeError as e:
            raise InvalidArgument(f"{path}: {e}") from e
    return build_config(doc)


def config_hash(spec: ModelSpec, cfg: TrainConfig) -> str:
    blob = json.dumps({"model": spec.to_dict(), "train": cfg.to_dict()}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()


def with_overrides(cfg: TrainConfig, **kw) -> TrainConfig:
    return replace(cfg, **{k: v for k, v in kw.items() if v is not None})

