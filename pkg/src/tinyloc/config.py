"""INI-style run configuration.

Sections ``[data] [model] [train] [quantize] [distill] [report]``; a
single top-level ``seed`` key (before any section) drives all randomness.
Unknown sections or keys are rejected.
"""
from __future__ import annotations

import configparser
import re

from .models.base import DEFAULT_KERNELS


class ConfigError(ValueError):
    pass


def _kernels(text):
    text = str(text).strip().strip("{}[]()")
    return tuple(int(k) for k in re.split(r"[,\s]+", text) if k)


def _str_list(text):
    # commas inside a bracketed kernel set do not split
    return re.findall(r"[^,;\s\[]+(?:\[[^\]]*\])?", str(text))


def _bool(text):
    v = str(text).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


SCHEMA = {
    "data": {
        "source": (str, "synthetic"),
        "rooms": (int, 3),
        "aps": (int, 4),
        "samples_per_room": (int, 400),
        "test_samples_per_room": (int, 200),
        "noise_std": (float, 3.0),
        "dropout": (float, 0.05),
        "window_len": (int, 20),
        "stride": (int, 10),
        "rate_hz": (float, 5.0),
        "horizon": (float, 1.0),
        "train_fraction": (float, 0.75),
        "fingerprint": (_str_list, []),
        "free_living": (_str_list, []),
        "label_column": (str, "label"),
        "uji_train": (str, ""),
        "uji_test": (str, ""),
        "cell_size": (float, 50.0),
        "path": (str, ""),
    },
    "model": {
        "family": (str, "mamba"),
        "hidden_size": (int, 8),
        "layers": (str, "1"),
        "state_dim": (int, 16),
        "conv_width": (int, 4),
        "expand": (int, 2),
        "ffn_mult": (int, 16),
    },
    "train": {
        "epochs": (int, 50),
        "batch_size": (int, 32),
        "lr": (float, 1e-2),
        "patience": (int, 0),
    },
    "quantize": {
        "scheme": (str, "static"),
        "tau": (float, 6.0),
        "signed": (_bool, False),
    },
    "distill": {
        "alpha": (float, 0.1),
        "mode": (str, "hard_viterbi"),
        "teacher": (str, ""),
        "hybrid": (_bool, False),
    },
    "report": {
        "format": (str, "md"),
        "models": (_str_list, ["mamba:H8L1"]),
        "variants": (_str_list, ["baseline", "static_quant", "dynamic_quant"]),
    },
}
GLOBAL_KEYS = {"seed": (int, 0)}


class RunConfig:
    """Typed view of a parsed config; ``cfg["train"]["epochs"]``, ``cfg.seed``."""

    def __init__(self, sections=None, seed=0):
        self.sections = {name: {k: d for k, (_, d) in keys.items()} for name, keys in SCHEMA.items()}
        for name, vals in (sections or {}).items():
            self.sections[name].update(vals)
        self.seed = seed

    def __getitem__(self, section):
        return self.sections[section]

    def to_dict(self):
        out = {"seed": self.seed}
        out.update({k: dict(v) for k, v in self.sections.items()})
        return out

    def model_config(self, input_dim, num_classes, seed=None):
        from .models import ModelConfig
        m = self.sections["model"]
        layers = _kernels(m["layers"]) if m["family"] == "mdcsa" else int(m["layers"])
        if m["family"] == "mdcsa" and len(layers) == 1 and str(m["layers"]).strip().isdigit():
            # a bare count means the shorthand kernel set, "3" -> {1,4,7}
            n = int(m["layers"])
            layers = DEFAULT_KERNELS.get(n, layers)
        return ModelConfig(m["family"], m["hidden_size"], layers, input_dim, num_classes,
                           state_dim=m["state_dim"], conv_width=m["conv_width"],
                           expand=m["expand"], ffn_mult=m["ffn_mult"],
                           seed=self.seed if seed is None else seed)


def parse_config(text, source="<config>") -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, default_section="__global__")
    parser.optionxform = str
    try:
        parser.read_string("[__global__]\n" + text, source=source)
    except configparser.Error as exc:
        # undo the shift from the injected section header
        msg = re.sub(r"\[line\s+(\d+)\]", lambda m: f"[line {int(m.group(1)) - 1}]", str(exc))
        raise ConfigError(msg) from None
    seed = 0
    for key, raw in parser.defaults().items():
        if key not in GLOBAL_KEYS:
            raise ConfigError(f"unknown top-level key {key!r}")
        seed = _convert("", key, raw, GLOBAL_KEYS[key][0])
    sections = {}
    for name in parser.sections():
        if name not in SCHEMA:
            raise ConfigError(f"unknown section [{name}]")
        vals = {}
        for key, raw in parser.items(name, raw=True):
            if key in parser.defaults():
                continue
            if key not in SCHEMA[name]:
                raise ConfigError(f"unknown key {key!r} in [{name}]")
            vals[key] = _convert(name, key, raw, SCHEMA[name][key][0])
        sections[name] = vals
    return RunConfig(sections, seed)


def _convert(section, key, raw, typ):
    try:
        return typ(raw)
    except ValueError as exc:
        where = f"[{section}] {key}" if section else key
        raise ConfigError(f"{where}: {exc}") from None


def load_config(path) -> RunConfig:
    with open(path) as fh:
        return parse_config(fh.read(), str(path))


_NAME = re.compile(r"^(mamba|mdcsa):H(\d+)L(\d+)(?:\[([\d,\s]+)\])?$")


def parse_model_name(text):
    """``"mamba:H8L1"`` or ``"mdcsa:H16L3"`` / ``"mdcsa:H16L1[4]"`` -> (family, H, layers)."""
    m = _NAME.match(text.strip())
    if not m:
        raise ConfigError(f"bad model name {text!r}; expected e.g. mamba:H8L1 or mdcsa:H16L3")
    family, hidden, n, ks = m.group(1), int(m.group(2)), int(m.group(3)), m.group(4)
    if family == "mamba":
        if ks:
            raise ConfigError("mamba names take no kernel set")
        return family, hidden, n
    if ks:
        kernels = _kernels(ks)
        if len(kernels) != n:
            raise ConfigError(f"{text!r}: L{n} but {len(kernels)} kernels")
        return family, hidden, kernels
    if n not in DEFAULT_KERNELS:
        raise ConfigError(f"{text!r}: no default kernel set for L{n}; give one as [k1,k2,...]")
    return family, hidden, DEFAULT_KERNELS[n]
