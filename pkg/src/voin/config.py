"""Flat key = value configuration files.

One key per line, '#' starts a comment, values are coerced to the target
dataclass field's type. Unknown keys are hard errors so typos never pass
silently.
"""

from dataclasses import dataclass, fields

from .data import HyperParams, ValidationError

_TRUE = ("1", "true", "yes", "on")
_FALSE = ("0", "false", "no", "off")


def parse_kv(path):
    """Read a flat key = value file to a dict of strings."""
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError("%s:%d: expected key = value, got %r"
                                 % (path, lineno, line))
            key, _, value = line.partition("=")
            out[key.strip()] = value.strip()
    return out


def _coerce(text, kind):
    if kind is bool:
        low = str(text).strip().lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise ValueError("cannot read %r as a boolean" % (text,))
    if kind is tuple:
        # patch scales: "1x1,2x2,4x4,8x8"
        pairs = []
        for part in str(text).split(","):
            a, _, b = part.strip().partition("x")
            pairs.append((int(a), int(b)))
        return tuple(pairs)
    return kind(text)


def build_config(cls, mapping=None, overrides=None):
    """Instantiate a config dataclass from string maps; unknown keys error."""
    known = {f.name: f.type for f in fields(cls)}
    values = {}
    for source in (mapping or {}), (overrides or {}):
        unknown = sorted(set(source) - set(known))
        if unknown:
            raise ValueError("unknown config keys: %s (known: %s)"
                             % (", ".join(unknown), ", ".join(sorted(known))))
        for key, val in source.items():
            if val is None:
                continue
            kind = known[key]
            if isinstance(kind, str):
                kind = {"int": int, "float": float, "bool": bool,
                        "str": str, "tuple": tuple}[kind]
            values[key] = val if isinstance(val, kind) and kind is not bool \
                else _coerce(val, kind)
    return cls(**values)


def load_config(cls, path=None, overrides=None):
    mapping = parse_kv(path) if path else {}
    return build_config(cls, mapping, overrides)


@dataclass
class RunConfig:
    """Everything one training or evaluation run needs."""

    # loss weights and architecture constants
    lam1: float = 1.0
    lam2: float = 0.5
    lam3: float = 1.0
    lam4: float = 0.1
    lam5: float = 1.0
    lam6: float = 10.0
    lam_flow: float = 1.0
    lam_app: float = 0.1
    patch_scales: tuple = ((1, 1), (2, 2), (4, 4), (8, 8))
    d_k: int = 16
    d_e: int = 16
    layers: int = 8
    temporal_field: int = 2
    tau: float = 5.0
    max_sweeps: int = 8
    # component toggles (ablation rows)
    og: bool = True
    tp: bool = True
    md: bool = True
    stam: bool = True
    f: bool = True
    # secondary wiring toggles
    use_class: bool = True
    use_amodal: bool = True
    use_pos: bool = True
    # optimizer and schedule
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    steps: int = 200
    batch: int = 1
    seed: int = 0
    warm_frac: float = 0.2
    # model widths
    classes: int = 4
    shape_channels: int = 32
    flow_base: int = 16
    gen_base: int = 32
    disc_base: int = 16
    # paths
    data_dir: str = ""
    out_dir: str = ""

    def __post_init__(self):
        if self.stam and not self.md:
            raise ValidationError("STAM requires the multi-class discriminator")
        if not 0.0 <= self.warm_frac < 1.0:
            raise ValidationError("warm_frac must be in [0, 1)")
        if self.steps < 1 or self.batch < 1:
            raise ValidationError("steps and batch must be positive")

    def hyper(self):
        return HyperParams(
            lam1=self.lam1, lam2=self.lam2, lam3=self.lam3, lam4=self.lam4,
            lam5=self.lam5, lam6=self.lam6, lam_flow=self.lam_flow,
            lam_app=self.lam_app, heads=len(self.patch_scales),
            patch_scales=self.patch_scales, d_k=self.d_k, d_e=self.d_e,
            layers=self.layers, temporal_field=self.temporal_field,
            tau=self.tau)
