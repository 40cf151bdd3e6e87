"""Experiment configuration: one YAML file, optional ``key.path=value`` overrides."""

import copy
import os
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path

import yaml

from . import __version__, storage
from .adversary import AdversaryConfig
from .dataset import ColumnSpec
from .errors import ConfigError
from .trainer import TrainConfig


class _Loader(yaml.SafeLoader):
    """Safe loader that also reads exponent-only floats such as ``1e-3``."""


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"^[-+]?(?:[0-9][0-9_]*)(?:\.[0-9_]*)?[eE][-+]?[0-9]+$"),
    list("-+0123456789"),
)


def load_yaml(text):
    return yaml.load(text, Loader=_Loader)

# mode flags per variant: (adaptive_epsilon, adaptive_lambda, decay, adversary on)
VARIANTS = {
    "fm": (False, False, False, False),
    "advfm": (False, False, False, True),
    "aafm-lambda": (False, True, False, True),
    "aafm-epsilon": (True, False, False, True),
    "aafm": (True, True, False, True),
    "d-aafm": (True, True, True, True),
}


def variant_adversary(variant, base):
    """Adversary settings for ``variant`` starting from the configured values."""
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}; choose from {sorted(VARIANTS)}")
    eps_on, lam_on, decay, active = VARIANTS[variant]
    cfg = AdversaryConfig(**asdict(base))
    cfg.adaptive_epsilon = eps_on
    cfg.adaptive_lambda = lam_on
    cfg.decay = decay
    if not active:
        cfg.base_epsilon = 0.0
        cfg.lambda_fixed = 0.0
    return cfg


@dataclass
class DataConfig:
    interactions: str
    domains: list
    user_domain: str
    item_domain: str
    user_column: str = None
    item_column: str = None
    delimiter: str = "\t"
    header: bool = True
    columns: list = None
    timestamp_column: str = None
    user_table: dict = None
    item_table: dict = None
    bins: dict = field(default_factory=dict)
    na_values: list = field(default_factory=list)
    max_error_fraction: float = 0.0
    min_user_interactions: int = None
    max_user_interactions: int = None
    encoding: str = "utf-8"

    def column_spec(self):
        return ColumnSpec(self.domains, self.user_domain, self.item_domain, self.timestamp_column)

    def resolve(self, base_dir):
        """Relative paths are taken relative to the config file's directory."""
        def fix(p):
            return str((Path(base_dir) / p).resolve()) if p and not Path(p).is_absolute() else p

        self.interactions = fix(self.interactions)
        for side in ("user_table", "item_table"):
            tbl = getattr(self, side)
            if tbl:
                tbl["path"] = fix(tbl["path"])


@dataclass
class EvalConfig:
    probe_levels: list = field(default_factory=list)
    probe_trials: int = 1
    probe_mode: str = "adversarial"
    group_domains: list = field(default_factory=list)

    def __post_init__(self):
        if self.probe_mode not in ("adversarial", "random", "sample-adversarial"):
            raise ConfigError(f"probe_mode must be adversarial, random or sample-adversarial, got {self.probe_mode!r}")
        if any(float(x) < 0 for x in self.probe_levels):
            raise ConfigError("probe levels must be non-negative")


@dataclass
class ExperimentConfig:
    data: DataConfig
    train: TrainConfig
    variant: str = "aafm"
    output_dir: str = "runs/default"
    seed: int = 0
    include_id_domains: bool = True
    eval: EvalConfig = field(default_factory=EvalConfig)
    t_values: list = field(default_factory=lambda: [50, 100, 200])
    figures: bool = True

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; choose from {sorted(VARIANTS)}")
        self.train.seed = self.seed
        self.adversary_base = AdversaryConfig(**asdict(self.train.adversary))
        self.train.adversary = variant_adversary(self.variant, self.adversary_base)

    def to_dict(self):
        train = self.train.to_dict()
        train["adversary"] = asdict(self.adversary_base)
        return {
            "data": asdict(self.data),
            "train": train,
            "variant": self.variant,
            "seed": self.seed,
            "include_id_domains": self.include_id_domains,
            "eval": asdict(self.eval),
            "t_values": list(self.t_values),
        }

    def digest(self):
        return storage.digest(self.to_dict())

    def data_digest(self):
        return storage.digest({"data": asdict(self.data)})

    def output_path(self):
        root = os.environ.get("AAFM_OUTPUT_ROOT")
        out = Path(self.output_dir)
        if root and not out.is_absolute():
            out = Path(root) / out
        return out

    def with_overrides(self, **changes):
        raw = self.to_dict()
        raw["output_dir"] = self.output_dir
        raw["figures"] = self.figures
        for key, value in changes.items():
            _set_path(raw, key, value)
        return from_dict(raw)

    def stamp(self, data_hash=None):
        """Provenance lines embedded at the top of every output file."""
        lines = [
            f"config_hash={self.digest()}",
            f"seed={self.seed}",
            f"code_version={__version__}",
            f"variant={self.variant}",
        ]
        if data_hash:
            lines.append(f"data_hash={data_hash}")
        adv = self.train.adversary
        lines.append(
            "adversary="
            + ("off" if not adv.active else
               f"eps={'adaptive' if adv.adaptive_epsilon else adv.base_epsilon},"
               f"lambda={'adaptive(t=%g)' % adv.t if adv.adaptive_lambda else adv.lambda_fixed},"
               f"decay={'on(alpha=%g)' % adv.anneal_alpha if adv.decay else 'off'}")
        )
        return lines


def _set_path(raw, dotted, value):
    keys = dotted.split(".")
    node = raw
    for k in keys[:-1]:
        if k not in node or not isinstance(node[k], dict):
            node[k] = {}
        node = node[k]
    node[keys[-1]] = value


def parse_override(text):
    if "=" not in text:
        raise ConfigError(f"override must look like key.path=value, got {text!r}")
    key, raw = text.split("=", 1)
    return key.strip(), load_yaml(raw)


def from_dict(raw, base_dir=None):
    raw = copy.deepcopy(raw)
    try:
        data = DataConfig(**raw.pop("data"))
        train_raw = dict(raw.pop("train", {}) or {})
        adv_raw = train_raw.pop("adversary", None) or raw.pop("adversary", None) or {}
        train_cfg = TrainConfig(**train_raw, adversary=AdversaryConfig(**adv_raw))
        eval_cfg = EvalConfig(**(raw.pop("eval", None) or {}))
        cfg = ExperimentConfig(data=data, train=train_cfg, eval=eval_cfg, **raw)
    except KeyError as exc:
        raise ConfigError(f"missing config section {exc}") from exc
    except TypeError as exc:
        raise ConfigError(f"bad config: {exc}") from exc
    if base_dir is not None:
        cfg.data.resolve(base_dir)
    return cfg


def load_config(path, overrides=()):
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = load_yaml(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    for text in overrides:
        key, value = parse_override(text)
        _set_path(raw, key, value)
    return from_dict(raw, base_dir=path.parent)
