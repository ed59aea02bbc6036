"""Run configuration and the flat ``key = value`` config file format.

Every checkpoint and metrics file embeds the exact serialized form of
the configuration that produced it.
"""

import dataclasses
from dataclasses import dataclass


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # data
    train_path: str = ""
    valid_path: str = ""
    test_path: str = ""
    level: str = "word"            # word | char
    char_bytes: bool = False       # char level: tokenize raw bytes
    min_count: int = 1             # word level: frequency cutoff
    # model
    layer_dims: tuple = (1150, 1150, 400)
    emb_dim: int = 400
    tied: bool = True
    # batching / windows
    batch_size: int = 80
    eval_batch_size: int = 10
    window: int = 70               # base BPTT length
    window_randomized: bool = True
    eval_window: int = 70
    # dropout
    p_word: float = 0.0
    p_embed: float = 0.0
    p_layer: float = 0.0
    p_out: float = 0.0
    p_wdrop: float = 0.0
    # regularization
    lambda_pdr: float = 0.001
    pdr_enabled: bool = True
    alpha: float = 0.0
    beta: float = 0.0
    weight_decay: float = 1.2e-6
    # optimizer
    lr: float = 30.0
    clip: float = 0.25
    nonmono: int = 5
    epochs: int = 8
    finetune: bool = True
    finetune_epochs: int = 0
    # misc
    seed: int = 1111
    # cache evaluation
    cache_size: int = 500
    cache_theta: float = 0.3
    cache_lambda: float = 0.1

    def validate(self):
        if self.level not in ("word", "char"):
            raise ConfigError(f"level must be word or char, got {self.level!r}")
        if not self.layer_dims or any(n <= 0 for n in self.layer_dims):
            raise ConfigError(f"bad layer_dims {self.layer_dims}")
        if self.layer_dims[-1] != self.emb_dim:
            raise ConfigError(
                f"last layer width {self.layer_dims[-1]} must equal emb_dim "
                f"{self.emb_dim}")
        if self.batch_size < 1 or self.eval_batch_size < 1:
            raise ConfigError("batch sizes must be positive")
        if self.window < 1 or self.eval_window < 1:
            raise ConfigError("window lengths must be positive")
        if self.epochs < 0 or self.finetune_epochs < 0:
            raise ConfigError("epoch counts must be >= 0")
        return self


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _parse_value(field, raw, where):
    raw = raw.strip()
    try:
        if field.type is bool or isinstance(field.default, bool):
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if isinstance(field.default, tuple):
            return tuple(int(x) for x in raw.split(",") if x.strip())
        if isinstance(field.default, int):
            return int(raw)
        if isinstance(field.default, float):
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"{where}: bad value for {field.name}: {raw!r}") \
            from exc


def parse_config(text, where="<config>"):
    """Parse the flat key = value format; '#' starts a comment."""
    values = {}
    for lineno, line in enumerate(text.split("\n"), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{where}:{lineno}: expected 'key = value'")
        key, raw = line.split("=", 1)
        key = key.strip()
        field = _FIELDS.get(key)
        if field is None:
            raise ConfigError(f"{where}:{lineno}: unknown key {key!r}")
        values[key] = _parse_value(field, raw, f"{where}:{lineno}")
    return RunConfig(**values)


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), where=str(path))


def config_text(config):
    """Serialize in field order; parse_config(config_text(c)) == c."""
    lines = []
    for f in dataclasses.fields(RunConfig):
        v = getattr(config, f.name)
        if isinstance(v, tuple):
            v = ",".join(str(int(x)) for x in v)
        elif isinstance(v, bool):
            v = "true" if v else "false"
        elif isinstance(v, float):
            v = repr(v)
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"


def config_diff(base, other):
    """Keys whose values differ, as {key: (base_value, other_value)}."""
    out = {}
    for f in dataclasses.fields(RunConfig):
        a, b = getattr(base, f.name), getattr(other, f.name)
        if a != b:
            out[f.name] = (a, b)
    return out
