"""Training configuration, dataset presets and the ``key = value`` config file.

Config file keys (one ``key = value`` per line, ``#`` starts a comment)::

    preset             dataset preset tag (see PRESETS)
    P, Q               max graph powers of the first / second modality
    fusion_form        full_matrix | outer_product | product
    lambda             regularizer penalty (>= 0)
    alpha              degree mask cut-off in [0, 1]
    k                  number of top degrees kept from the abnormal graph
    learning_rate      positive real
    epochs             positive integer
    batch_bags         bags per optimisation step
    seed               integer
    optimizer          adam | sgd
    modality_sampling  pairwise-random | fixed-pair
    fixed_pair         two modality names, comma separated
    relationship       cosine | clamped-cosine | gaussian
    gamma              gaussian kernel width (> 0)
    normalize_features true | false
    normalization      raw | row-stochastic
    bag_size           snippets per bag

Precedence when merging: command-line flags > config file > preset > defaults.
``fusion_form = product`` is the fixed element-wise product baseline
``G = R_a * R_b`` (P = Q = 1, untrained weights).
"""

import dataclasses
from dataclasses import dataclass

from lego_fusion.errors import DataError, ParseError, UnknownPreset
from lego_fusion.graph_build import KINDS
from lego_fusion.power_fusion import NORMALIZATIONS

FUSION_FORMS = ("full_matrix", "outer_product", "product")
OPTIMIZERS = ("adam", "sgd")
SAMPLING = ("pairwise-random", "fixed-pair")


@dataclass(frozen=True)
class TrainConfig:
    P: int = 2
    Q: int = 3
    fusion_form: str = "full_matrix"
    lam: float = 1.0
    alpha: float = 0.5
    k: int = 10
    learning_rate: float = 1e-3
    epochs: int = 30
    batch_bags: int = 32
    seed: int = 0
    optimizer: str = "adam"
    modality_sampling: str = "pairwise-random"
    fixed_pair: tuple = None
    relationship: str = "clamped-cosine"
    gamma: float = 1.0
    normalize_features: bool = True
    normalization: str = "raw"
    bag_size: int = 32

    def __post_init__(self):
        for name in ("P", "Q"):
            if int(getattr(self, name)) != getattr(self, name) or getattr(self, name) < 0:
                raise DataError(f"{name} must be a non-negative integer")
        for name in ("k", "epochs", "batch_bags", "bag_size"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise DataError(f"{name} must be a positive integer, got {v}")
        if self.fusion_form not in FUSION_FORMS:
            raise DataError(f"fusion_form must be one of {FUSION_FORMS}")
        if self.optimizer not in OPTIMIZERS:
            raise DataError(f"optimizer must be one of {OPTIMIZERS}")
        if self.modality_sampling not in SAMPLING:
            raise DataError(f"modality_sampling must be one of {SAMPLING}")
        if self.modality_sampling == "fixed-pair" and (not self.fixed_pair or len(self.fixed_pair) != 2):
            raise DataError("fixed-pair sampling needs fixed_pair with two modality names")
        if self.relationship not in KINDS:
            raise DataError(f"relationship must be one of {KINDS}")
        if self.normalization not in NORMALIZATIONS:
            raise DataError(f"normalization must be one of {NORMALIZATIONS}")
        if not self.learning_rate >= 0:
            raise DataError("learning_rate must be >= 0")
        if not self.lam >= 0:
            raise DataError("lambda must be >= 0")
        if not 0.0 <= self.alpha <= 1.0:
            raise DataError("alpha must lie in [0, 1]")
        if self.gamma <= 0:
            raise DataError("gamma must be > 0")
        if self.k > self.bag_size:
            raise DataError(f"k={self.k} exceeds bag_size={self.bag_size}")

    @property
    def powers(self):
        """(P, Q) actually used; the product baseline always fuses first powers."""
        return (1, 1) if self.fusion_form == "product" else (self.P, self.Q)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


# Tuned settings per dataset; the (m, n) power pair maps to (P, Q).
PRESETS = {
    "avenue": dict(fusion_form="outer_product", P=2, Q=7, lam=1.0, alpha=0.5, k=10),
    "shanghaitech": dict(fusion_form="full_matrix", P=2, Q=3, lam=1.0, alpha=0.5, k=10),
    "ped2": dict(fusion_form="full_matrix", P=4, Q=3, lam=1.0, alpha=0.5, k=10),
    "street": dict(fusion_form="full_matrix", P=4, Q=3, lam=1.0, alpha=0.5, k=10),
    "combined": dict(fusion_form="full_matrix", P=4, Q=4, lam=0.001, alpha=0.5, k=10, epochs=50),
}

ALIASES = {
    "sht": "shanghaitech",
    "shanghai": "shanghaitech",
    "ucsd-ped2": "ped2",
    "cuhk-avenue": "avenue",
    "street-scene": "street",
    "sht+ped2": "combined",
}


def load_presets(name):
    """TrainConfig for a dataset tag (defaults for everything the preset leaves open)."""
    tag = ALIASES.get(name.lower(), name.lower())
    if tag not in PRESETS:
        raise UnknownPreset(f"unknown preset {name!r}; known: {', '.join(sorted(PRESETS))}")
    return TrainConfig(**PRESETS[tag])


def describe(cfg):
    """One-line summary, e.g. ``P=2 Q=3 λ=1 α=0.5 k=10 full-matrix``."""
    form = cfg.fusion_form.replace("_", "-")
    return f"P={cfg.P} Q={cfg.Q} λ={cfg.lam:g} α={cfg.alpha:g} k={cfg.k} {form}"


# -- config file --------------------------------------------------------------

_FILE_KEYS = {
    "preset": ("preset", str),
    "P": ("P", int),
    "Q": ("Q", int),
    "fusion_form": ("fusion_form", str),
    "lambda": ("lam", float),
    "alpha": ("alpha", float),
    "k": ("k", int),
    "learning_rate": ("learning_rate", float),
    "epochs": ("epochs", int),
    "batch_bags": ("batch_bags", int),
    "seed": ("seed", int),
    "optimizer": ("optimizer", str),
    "modality_sampling": ("modality_sampling", str),
    "fixed_pair": ("fixed_pair", "pair"),
    "relationship": ("relationship", str),
    "gamma": ("gamma", float),
    "normalize_features": ("normalize_features", bool),
    "normalization": ("normalization", str),
    "bag_size": ("bag_size", int),
}

CONFIG_KEYS = tuple(_FILE_KEYS)


def _convert(raw, kind, lineno, path):
    try:
        if kind is bool:
            low = raw.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        if kind == "pair":
            parts = tuple(p.strip() for p in raw.split(",") if p.strip())
            if len(parts) != 2:
                raise ValueError(raw)
            return parts
        if kind is str:
            return raw.strip().strip('"').strip("'")
        return kind(raw)
    except ValueError:
        raise ParseError(lineno, f"invalid value {raw!r}", path) from None


def parse_config_text(text, path=None):
    """Parse ``key = value`` lines into a dict of TrainConfig field values."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(lineno, "expected 'key = value'", path)
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in _FILE_KEYS:
            raise ParseError(lineno, f"unknown key {key!r}", path)
        field_name, kind = _FILE_KEYS[key]
        values[field_name] = _convert(raw, kind, lineno, path)
    return values


def read_config_file(path):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise DataError(f"cannot read config file {path}: {exc}") from exc
    return parse_config_text(text, path)


def write_config_file(cfg, path):
    inverse = {field_name: key for key, (field_name, _) in _FILE_KEYS.items()}
    with open(path, "w", encoding="utf-8") as fh:
        for f in dataclasses.fields(cfg):
            v = getattr(cfg, f.name)
            if v is None:
                continue
            if isinstance(v, tuple):
                v = ",".join(v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            fh.write(f"{inverse[f.name]} = {v}\n")


def resolve_config(flags=None, file_values=None, preset=None):
    """Merge settings with precedence flags > file > preset > defaults."""
    merged = {}
    file_values = dict(file_values or {})
    flags = {k: v for k, v in (flags or {}).items() if v is not None}
    preset = flags.pop("preset", None) or file_values.pop("preset", None) or preset
    file_values.pop("preset", None)
    if preset:
        tag = ALIASES.get(preset.lower(), preset.lower())
        if tag not in PRESETS:
            raise UnknownPreset(f"unknown preset {preset!r}; known: {', '.join(sorted(PRESETS))}")
        merged.update(PRESETS[tag])
    merged.update(file_values)
    merged.update(flags)
    return TrainConfig(**merged)
