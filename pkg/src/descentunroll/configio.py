"""Flat key-value config files for dataset generation and training.

The format is one ``key=value`` per line; blank lines and ``#`` comments are
ignored. Unknown keys are rejected with every offending key named, and the
effective config (file plus CLI overrides) is echoed into run manifests.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

from .errors import ConfigError
from .training import AdamConfig, TrainConfig


@dataclass(frozen=True)
class DataConfig:
    """Generation settings consumed by the `gen` command."""

    kind: str = "lasso"
    p: int = 32
    d: int = 64
    n: int = 2000
    sparsity: int = 8
    noise_std: float = 0.05
    alpha: float = 0.5
    oracle_iters: int = 5000
    oracle_tol: float = 1e-8
    train_frac: float = 0.8
    val_frac: float = 0.1
    test_frac: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("lasso", "quadratic"):
            raise ConfigError(f"kind must be lasso or quadratic, got {self.kind!r}")
        if abs(self.train_frac + self.val_frac + self.test_frac - 1.0) > 1e-9:
            raise ConfigError("split fractions must sum to 1")


def read_kv(path) -> dict[str, str]:
    """Parse a flat key=value file; duplicate keys are an error."""
    out: dict[str, str] = {}
    with open(path) as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, value = line.split("=", 1)
            key = key.strip()
            if key in out:
                raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
            out[key] = value.strip()
    return out


def _parse_value(key: str, text: str, target_type: type):
    try:
        if target_type is bool:
            lowered = text.lower()
            if lowered in ("true", "1", "on", "yes"):
                return True
            if lowered in ("false", "0", "off", "no"):
                return False
            raise ValueError(text)
        if target_type is int:
            return int(text)
        if target_type is float:
            return float(text)
        return text
    except ValueError:
        raise ConfigError(f"key {key!r}: cannot parse {text!r} as {target_type.__name__}") from None


def _build_from_kv(kv: dict[str, str], known: dict[str, type], what: str) -> dict:
    unknown = sorted(set(kv) - set(known))
    if unknown:
        raise ConfigError(f"unknown {what} config keys: {', '.join(unknown)}")
    return {key: _parse_value(key, kv[key], known[key]) for key in kv}


_DATA_KEYS: dict[str, type] = {
    "kind": str,
    "p": int,
    "d": int,
    "n": int,
    "sparsity": int,
    "noise_std": float,
    "alpha": float,
    "oracle_iters": int,
    "oracle_tol": float,
    "train_frac": float,
    "val_frac": float,
    "test_frac": float,
    "seed": int,
}

# TrainConfig flattens its nested ADAM settings into adam_* keys.
_TRAIN_KEYS: dict[str, type] = {
    "arch": str,
    "num_layers": int,
    "hidden_width": int,
    "epochs": int,
    "batch_size": int,
    "mu_w": float,
    "mu_lambda": float,
    "epsilon": float,
    "constraint": str,
    "noise_mode": str,
    "sigma_hat": float,
    "constraints_enabled": bool,
    "noise_enabled": bool,
    "skip_first_layer_constraint": bool,
    "seed": int,
    "adam_beta1": float,
    "adam_beta2": float,
    "adam_eps_stab": float,
    "divergence_factor": float,
    "dual_slack_source": str,
    "y0_mode": str,
    "y0_scale": float,
}


def parse_data_config(kv: dict[str, str]) -> DataConfig:
    values = _build_from_kv(kv, _DATA_KEYS, "dataset")
    try:
        return DataConfig(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def parse_train_config(kv: dict[str, str]) -> TrainConfig:
    values = _build_from_kv(kv, _TRAIN_KEYS, "training")
    adam_kwargs = {}
    for short in ("beta1", "beta2", "eps_stab"):
        key = f"adam_{short}"
        if key in values:
            adam_kwargs[short] = values.pop(key)
    try:
        adam = AdamConfig(**adam_kwargs)
        return TrainConfig(adam=adam, **values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def format_data_config(config: DataConfig) -> list[str]:
    return [f"{f.name}={getattr(config, f.name)}" for f in fields(DataConfig)]


def format_train_config(config: TrainConfig) -> list[str]:
    lines = []
    for key in _TRAIN_KEYS:
        if key.startswith("adam_"):
            value = getattr(config.adam, key.removeprefix("adam_"))
        else:
            value = getattr(config, key)
        if isinstance(value, bool):
            value = "true" if value else "false"
        elif hasattr(value, "value"):
            value = value.value
        lines.append(f"{key}={value}")
    return lines
