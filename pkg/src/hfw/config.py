"""Flat key=value run configuration shared by the command-line verbs.

One file drives a whole run: model, training, data, stylization, and
metric knobs all live in a single namespace so an experiment is
reproducible from one artifact. Unknown keys are hard errors with line
numbers; silent typo-tolerance has burned enough people.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace

from .data import DatasetSpec
from .metrics import StyleLossConfig
from .model import PRESETS, SKIP_VARIANTS, model_config
from .stylize import GUIDE_SOURCES, POSTPROCESS_MODES, StylizeOptions
from .training import STRATEGIES, TrainPlan
from .zca import ZcaOptions


class ConfigError(ValueError):
    """A config file or override the run cannot proceed with."""


@dataclass
class RunConfig:
    # model
    preset: str = "tiny"
    depth: int = 4
    skip_variant: str = "hf_residual"
    precision: str = "double"
    # training
    strategy: str = "blockwise_inward"
    epochs: int = 20
    batch_size: int = 1
    lr: float = 2e-3
    lr_per_level: tuple = (2e-3, 2e-3, 2e-3, 1e-3)
    beta1: float = 0.9
    beta2: float = 0.9
    adam_eps: float = 1e-8
    lambda_perceptual: float = 1.0
    tail_average: float = 0.25
    # data ("synthetic" or a directory of images)
    data_source: str = "synthetic"
    data_count: int = 64
    data_resize: int = 64
    data_crop: int = 64
    # stylization
    levels: tuple = (4, 3, 2, 1)
    zca_alpha: float = 1.0
    zca_eps_clamp: float = 1e-8
    postprocess: str = "guided"
    radius: int = 0  # 0 = scale with image size
    eps: float = 4e-4
    guide_source: str = "content"
    cascade: bool = False
    # style metrics
    beta_gram: tuple = (0.2, 0.2, 0.2, 0.2, 0.2)
    lambda_reg: float = 100.0
    matting_eps: float = 1e-7
    reg_max_side: int = 64
    deep_tap: bool = True
    # run
    seed: int = 0
    out_dir: str = "runs"

    def to_model_config(self):
        return model_config(preset=self.preset, depth=self.depth,
                            skip_variant=self.skip_variant,
                            precision=self.precision)

    def to_train_plan(self):
        lpl = self.lr_per_level if self.lr_per_level else None
        return TrainPlan(strategy=self.strategy, epochs=self.epochs,
                         batch_size=self.batch_size, lr=self.lr,
                         lr_per_level=lpl, beta1=self.beta1, beta2=self.beta2,
                         adam_eps=self.adam_eps,
                         lambda_perceptual=self.lambda_perceptual,
                         tail_average=self.tail_average, seed=self.seed)

    def to_dataset_spec(self):
        return DatasetSpec(source=self.data_source, count=self.data_count,
                           resize=self.data_resize, crop=self.data_crop,
                           seed=self.seed)

    def to_stylize_options(self, content_labels=None, style_labels=None):
        return StylizeOptions(
            levels_enabled=frozenset(self.levels),
            zca=ZcaOptions(eps_clamp=self.zca_eps_clamp, alpha=self.zca_alpha),
            content_labels=content_labels, style_labels=style_labels,
            postprocess=self.postprocess,
            radius=self.radius if self.radius > 0 else None,
            eps=self.eps, guide_source=self.guide_source,
            cascade_mode=self.cascade)

    def to_style_loss_config(self):
        return StyleLossConfig(beta=self.beta_gram, lambda_reg=self.lambda_reg,
                               matting_eps=self.matting_eps,
                               regularizer_max_side=self.reg_max_side)


def _parse_bool(text):
    low = text.lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError("expected a boolean, got %r" % text)


def _parse_ints(text):
    return tuple(int(v) for v in text.split(",") if v.strip())


def _parse_floats(text):
    return tuple(float(v) for v in text.split(",") if v.strip())


_CHOICES = {
    "preset": PRESETS,
    "skip_variant": SKIP_VARIANTS,
    "precision": ("double", "single"),
    "strategy": STRATEGIES,
    "postprocess": POSTPROCESS_MODES,
    "guide_source": GUIDE_SOURCES,
}

_PARSERS = {
    bool: _parse_bool,
    int: int,
    float: float,
    str: str,
    tuple: None,  # per-field below
}

_TUPLE_PARSERS = {
    "lr_per_level": _parse_floats,
    "levels": _parse_ints,
    "beta_gram": _parse_floats,
}

_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}
_TYPE_NAMES = {"bool": bool, "int": int, "float": float, "str": str,
               "tuple": tuple}


def parse_value(key, text, where=""):
    """One typed value from its config-file text."""
    if key not in _FIELD_TYPES:
        raise ConfigError("%sunknown key %r (see `hfw params --defaults` "
                          "for the full list)" % (where, key))
    ftype = _TYPE_NAMES[_FIELD_TYPES[key]]
    parser = _TUPLE_PARSERS.get(key) or _PARSERS[ftype]
    try:
        value = parser(text)
    except ValueError as e:
        raise ConfigError("%sbad value for %s: %s" % (where, key, e)) from None
    if key in _CHOICES and value not in _CHOICES[key]:
        raise ConfigError("%s%s must be one of %s, got %r"
                          % (where, key, ", ".join(_CHOICES[key]), value))
    return value


def load_config(path):
    """Parse a key=value file into a RunConfig.

    Syntax: one `key = value` per line, `#` starts a comment, blank lines
    ignored. Every key is optional; missing keys keep their defaults.
    """
    values = {}
    try:
        with open(path, encoding="utf-8") as f:
            lines = f.readlines()
    except OSError as e:
        raise ConfigError("cannot read config %s: %s" % (path, e)) from None
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("%s:%d: expected key=value, got %r"
                              % (path, lineno, raw.strip()))
        key, text = (part.strip() for part in line.split("=", 1))
        where = "%s:%d: " % (path, lineno)
        if key in values:
            raise ConfigError("%sduplicate key %r" % (where, key))
        values[key] = parse_value(key, text, where)
    return RunConfig(**values)


def apply_overrides(cfg, pairs):
    """Apply (key, text-value) overrides, e.g. from command-line flags."""
    updates = {}
    for key, text in pairs:
        updates[key] = parse_value(key, text)
    return replace(cfg, **updates)


def config_defaults_text():
    """The documented default for every key, as config-file text."""
    out = []
    for f in fields(RunConfig):
        default = getattr(RunConfig(), f.name)
        if isinstance(default, tuple):
            default = ",".join(str(v) for v in default)
        elif isinstance(default, bool):
            default = "true" if default else "false"
        out.append("%s = %s" % (f.name, default))
    return "\n".join(out) + "\n"
