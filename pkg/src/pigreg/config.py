"""Experiment configuration: dataclasses plus an INI reader/writer.

Every field has a default, so an empty file is a valid config. Unknown
sections or keys are rejected with the offending line number.
"""

import configparser
import hashlib
import json
import re
from dataclasses import asdict, dataclass, field, fields, replace

from .density import GmmConfig
from .pig import PigConfig

VALID_VARIANTS = ("d-vv", "vv", "vv-no-prior", "mvn")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DataConfig:
    name: str = "toy"  # toy, bump, a manifest name, or csv
    train_fraction: float = 0.9
    toy_n: int = 500
    toy_low: float = 0.0
    toy_high: float = 10.0
    bump_s: float = 1.0
    csv_path: str = ""
    csv_delimiter: str = ","
    csv_targets: str = "0"
    csv_features: str = "1"
    csv_skip_rows: int = 1


@dataclass(frozen=True)
class TrainConfig:
    hidden: int = 50
    layers: int = 1
    batch_size: int = 64
    stage1_epochs: int = 300
    stage1_lr: float = 3e-3
    stage2_epochs: int = 300
    stage2_lr: float = 1e-3
    mvn_epochs: int = 300
    mvn_lr: float = 1e-3
    freeze_mean: bool = True
    pig_per_epoch: bool = False
    head_init: str = "glorot"  # glorot, or prior: start the uncertainty heads at the prior


@dataclass(frozen=True)
class OodConfig:
    source: str = "pig"  # pig, far (training points plus noise), none
    far_sigma: float = 15.0


@dataclass(frozen=True)
class EvalConfig:
    probe_k: int = 64
    probe_far_sigma: float = 3.0
    outside_min: float = 3.0  # toy probes: distance beyond the data range, in input std
    outside_max: float = 5.0
    outside_n: int = 100


@dataclass(frozen=True)
class PriorConfig:
    mode: str = "empirical"  # empirical, toy, or fixed (uses shape and rate below)
    shape: float = 0.0
    rate: float = 0.0


@dataclass(frozen=True)
class ExperimentConfig:
    data: DataConfig = DataConfig()
    train: TrainConfig = TrainConfig()
    pig: PigConfig = PigConfig()
    density: GmmConfig = GmmConfig()
    ood: OodConfig = OodConfig()
    eval: EvalConfig = EvalConfig()
    prior: PriorConfig = PriorConfig()
    variants: tuple = ("d-vv", "vv")
    seeds: tuple = (0,)
    shift: str = "none"  # none, only, both
    datasets: tuple = ()  # benchmark: datasets to sweep; empty means data.name only
    n_trials: int = 1  # benchmark: trials per cell, seeded from seeds[0]
    density_k: int = 0  # 0 means min(N, batch_size)
    out_dir: str = "runs/default"

    def validate(self):
        for v in self.variants:
            if v not in VALID_VARIANTS:
                raise ConfigError(f"variants: unknown variant {v!r}; expected {VALID_VARIANTS}")
        if not self.variants:
            raise ConfigError("variants: need at least one variant")
        if self.prior.mode not in ("empirical", "toy", "fixed"):
            raise ConfigError(f"prior.mode: expected empirical, toy or fixed, got {self.prior.mode!r}")
        if self.prior.mode == "fixed" and not self.prior.shape > 0:
            raise ConfigError(f"prior.shape: must be > 0 for a fixed prior, got {self.prior.shape}")
        if self.prior.mode == "fixed" and not self.prior.rate > 0:
            raise ConfigError(f"prior.rate: must be > 0 for a fixed prior, got {self.prior.rate}")
        if self.prior.shape < 0 or self.prior.rate < 0:
            raise ConfigError("prior.shape and prior.rate must not be negative")
        if self.shift not in ("none", "only", "both"):
            raise ConfigError(f"shift: expected none, only or both, got {self.shift!r}")
        if self.ood.source not in ("pig", "far", "none"):
            raise ConfigError(f"ood.source: expected pig, far or none, got {self.ood.source!r}")
        if self.train.head_init not in ("glorot", "prior"):
            raise ConfigError(f"train.head_init: expected glorot or prior, got {self.train.head_init!r}")
        if self.train.batch_size < 1 or self.train.hidden < 1 or self.train.layers < 1:
            raise ConfigError("train: batch_size, hidden and layers must be >= 1")
        if not 0.0 < self.data.train_fraction < 1.0:
            raise ConfigError("data.train_fraction must lie in (0, 1)")
        if not self.seeds:
            raise ConfigError("seeds: need at least one seed")
        if self.n_trials < 1:
            raise ConfigError("n_trials must be >= 1")
        return self

    def to_dict(self):
        return asdict(self)

    def hash(self):
        """Short stable hash of every setting except the output directory."""
        d = self.to_dict()
        d.pop("out_dir")
        blob = json.dumps(d, sort_keys=True, default=list).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


_SECTIONS = {"data": DataConfig, "train": TrainConfig, "pig": PigConfig, "density": GmmConfig, "ood": OodConfig, "eval": EvalConfig, "prior": PriorConfig}
_TOP_TUPLES = {"variants": str, "seeds": int, "datasets": str}


def _convert(raw, like, where):
    try:
        if isinstance(like, bool):
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if isinstance(like, int):
            return int(raw)
        if isinstance(like, float):
            return float(raw)
        return raw.strip()
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _line_of(text, section, key):
    current = None
    for i, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        m = re.match(r"\[(.+)\]", s)
        if m:
            current = m.group(1).strip()
        elif current == section and re.match(rf"{re.escape(key)}\s*[=:]", s):
            return i
    return 0


def parse_config(text, source="<config>") -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    top, parts = {}, {}
    for section in cp.sections():
        for key, raw in cp.items(section, raw=True):
            where = f"{source}:{_line_of(text, section, key)} [{section}] {key}"
            if section == "experiment":
                names = {f.name for f in fields(ExperimentConfig)} - set(_SECTIONS)
                if key not in names:
                    raise ConfigError(f"{where}: unknown key")
                if key in _TOP_TUPLES:
                    items = [t.strip() for t in raw.split(",") if t.strip()]
                    try:
                        top[key] = tuple(_TOP_TUPLES[key](t) for t in items)
                    except ValueError as exc:
                        raise ConfigError(f"{where}: {exc}") from None
                else:
                    top[key] = _convert(raw, getattr(ExperimentConfig, key), where)
            elif section in _SECTIONS:
                cls = _SECTIONS[section]
                known = {f.name: f for f in fields(cls)}
                if key not in known:
                    raise ConfigError(f"{where}: unknown key")
                parts.setdefault(section, {})[key] = _convert(raw, getattr(cls(), key), where)
            else:
                raise ConfigError(f"{source}:{_line_of_section(text, section)}: unknown section [{section}]")
    kwargs = dict(top)
    for section, cls in _SECTIONS.items():
        try:
            kwargs[section] = cls(**parts.get(section, {}))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{source} [{section}]: {exc}") from None
    return ExperimentConfig(**kwargs).validate()


def _line_of_section(text, section):
    for i, line in enumerate(text.splitlines(), start=1):
        if line.strip() == f"[{section}]":
            return i
    return 0


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, source=str(path))


def dump_config(cfg: ExperimentConfig) -> str:
    lines = ["[experiment]"]
    for f in fields(ExperimentConfig):
        if f.name in _SECTIONS:
            continue
        v = getattr(cfg, f.name)
        lines.append(f"{f.name} = {', '.join(map(str, v)) if isinstance(v, tuple) else v}")
    for section in _SECTIONS:
        lines.append("")
        lines.append(f"[{section}]")
        sub = getattr(cfg, section)
        for f in fields(sub):
            lines.append(f"{f.name} = {getattr(sub, f.name)}")
    return "\n".join(lines) + "\n"


def with_overrides(cfg: ExperimentConfig, seed=None, out_dir=None):
    kw = {}
    if seed is not None:
        kw["seeds"] = (int(seed),)
    if out_dir is not None:
        kw["out_dir"] = out_dir
    return replace(cfg, **kw) if kw else cfg
