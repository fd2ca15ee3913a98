"""Pipeline configuration: typed defaults, INI files, env vars and flags.

Resolution order is defaults < profile < config file < environment <
command-line overrides; later sources win.  Every key lives in a section
named after the stage that uses it, and unknown sections or keys are
rejected so typos fail loudly.

Environment overrides use ``NNGEC_<SECTION>_<KEY>``, e.g.
``NNGEC_DECODER_BEAM_SIZE=50``.
"""

import configparser
import json
import os
from dataclasses import dataclass

ENV_PREFIX = "NNGEC_"


@dataclass(frozen=True)
class Option:
    default: object
    kind: type
    help: str = ""


# Full-size defaults are the large-scale reference settings where known; the
# rest are common SMT practice.
SCHEMA = {
    "general": {
        "seed": Option(0, int, "master seed; every stage derives its own from it"),
        "jobs": Option(1, int, "worker processes for sentence-parallel stages"),
        "profile": Option("full", str, "full or desk"),
    },
    "data": {
        "train_source": Option("", str, "training source file (empty: synthesize)"),
        "train_target": Option("", str),
        "dev_source": Option("", str),
        "dev_gold": Option("", str, "dev M2 file"),
        "test_source": Option("", str),
        "test_gold": Option("", str, "test M2 file"),
        "lm_corpus": Option("", str, "extra target-language text for the second LM"),
        "synthetic_pairs": Option(5000, int),
        "dev_size": Option(300, int),
        "test_size": Option(300, int),
        "lm_sentences": Option(20000, int, "size of the synthetic second-LM corpus"),
    },
    "align": {
        "mode": Option("edit-distance", str, "edit-distance or ibm1"),
        "ibm_iterations": Option(10, int),
        "max_phrase_length": Option(7, int),
    },
    "lm": {
        "order": Option(5, int),
        "second_lm": Option(True, bool),
    },
    "nnglm": {
        "source_vocab": Option(10000, int),
        "target_vocab": Option(10000, int),
        "hidden_size": Option(2000, int),
        "learning_rate": Option(10.0, float),
        "mini_batch_size": Option(100, int),
        "epochs": Option(45, int),
        "average_gradient": Option(True, bool),
        "l2": Option(1e-4, float, "rescaler L2 penalty"),
    },
    "nnjm": {
        "source_vocab": Option(16000, int),
        "target_vocab": Option(32000, int),
        "source_window": Option(5, int),
        "order": Option(5, int, "target n-gram order (order-1 history words)"),
        "embed_dim": Option(192, int),
        "hidden_size": Option(512, int),
        "noise_samples": Option(100, int),
        "learning_rate": Option(0.1, float),
        "mini_batch_size": Option(128, int),
        "epochs": Option(30, int),
        "average_gradient": Option(True, bool),
    },
    "decoder": {
        "beam_size": Option(100, int),
        "table_limit": Option(20, int),
    },
    "mert": {
        "iterations": Option(10, int),
        "restarts": Option(20, int),
        "nbest": Option(100, int),
    },
    "eval": {
        "beta": Option(0.5, float),
        "bootstrap_samples": Option(100, int),
    },
}

PROFILES = {
    "full": {},
    "desk": {
        "nnglm": {"source_vocab": 2000, "target_vocab": 2000, "hidden_size": 64, "epochs": 10},
        "nnjm": {
            "source_vocab": 2000,
            "target_vocab": 2000,
            "embed_dim": 16,
            "hidden_size": 64,
            "epochs": 5,
        },
        "align": {"max_phrase_length": 4},
        "decoder": {"beam_size": 20},
        "mert": {"iterations": 5, "restarts": 5, "nbest": 30},
    },
}


class ConfigError(ValueError):
    pass


def _parse(kind, raw, where):
    if not isinstance(raw, str):
        value = raw
    elif kind is bool:
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{where}: expected a boolean, got {raw!r}")
    else:
        try:
            value = kind(raw.strip()) if kind is not str else raw
        except ValueError:
            raise ConfigError(f"{where}: expected {kind.__name__}, got {raw!r}") from None
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if not isinstance(value, kind):
        raise ConfigError(f"{where}: expected {kind.__name__}, got {value!r}")
    return value


class PipelineConfig:
    """Resolved settings, addressed as ``cfg["section"]["key"]`` or ``cfg.get``."""

    def __init__(self, values=None):
        self.values = {s: {k: o.default for k, o in opts.items()} for s, opts in SCHEMA.items()}
        if values:
            self.update(values, "<dict>")

    def update(self, values, where):
        for section, items in values.items():
            if section not in SCHEMA:
                raise ConfigError(f"{where}: unknown section [{section}]")
            for key, raw in items.items():
                if key not in SCHEMA[section]:
                    raise ConfigError(f"{where}: unknown key {section}.{key}")
                self.values[section][key] = _parse(SCHEMA[section][key].kind, raw, f"{where} {section}.{key}")
        self.validate()

    def validate(self):
        v = self.values
        if v["general"]["profile"] not in PROFILES:
            raise ConfigError(f"unknown profile {v['general']['profile']!r}")
        if v["general"]["jobs"] < 1:
            raise ConfigError("general.jobs must be >= 1")
        if v["align"]["mode"] not in ("edit-distance", "ibm1"):
            raise ConfigError(f"align.mode must be edit-distance or ibm1, got {v['align']['mode']!r}")
        if v["nnjm"]["source_window"] % 2 != 1:
            raise ConfigError("nnjm.source_window must be odd")
        positive = [
            ("data", "synthetic_pairs"), ("align", "max_phrase_length"), ("lm", "order"),
            ("nnglm", "hidden_size"), ("nnglm", "mini_batch_size"), ("nnjm", "embed_dim"),
            ("nnjm", "hidden_size"), ("nnjm", "noise_samples"), ("nnjm", "mini_batch_size"),
            ("decoder", "beam_size"), ("mert", "nbest"),
        ]
        for s, k in positive:
            if v[s][k] < 1:
                raise ConfigError(f"{s}.{k} must be >= 1")
        if v["nnjm"]["order"] < 2:
            raise ConfigError("nnjm.order must be >= 2")

    def __getitem__(self, section):
        return self.values[section]

    def get(self, section, key):
        return self.values[section][key]

    def to_dict(self):
        return {s: dict(sorted(items.items())) for s, items in sorted(self.values.items())}

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    def __eq__(self, other):
        return isinstance(other, PipelineConfig) and self.values == other.values

    def to_ini(self):
        cp = configparser.ConfigParser(interpolation=None)
        for section, items in self.to_dict().items():
            cp[section] = {k: str(v) for k, v in items.items()}
        lines = []
        for section in cp.sections():
            lines.append(f"[{section}]")
            lines += [f"{k} = {v}" for k, v in cp[section].items()]
            lines.append("")
        return "\n".join(lines)


def read_config_file(path):
    cp = configparser.ConfigParser(interpolation=None)
    with open(path, encoding="utf-8") as f:
        cp.read_file(f)
    return {s: dict(cp[s]) for s in cp.sections()}


def env_overrides(environ=None):
    environ = os.environ if environ is None else environ
    out = {}
    for name, raw in environ.items():
        if not name.startswith(ENV_PREFIX):
            continue
        rest = name[len(ENV_PREFIX) :].lower()
        for section in SCHEMA:
            if rest.startswith(section + "_"):
                out.setdefault(section, {})[rest[len(section) + 1 :]] = raw
                break
        else:
            raise ConfigError(f"environment: {name} does not name a config section")
    return out


def parse_assignments(items):
    """``section.key=value`` strings to a nested dict."""
    out = {}
    for item in items or ():
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override must look like section.key=value, got {item!r}")
        lhs, value = item.split("=", 1)
        section, key = lhs.strip().split(".", 1)
        out.setdefault(section, {})[key] = value
    return out


def resolve_config(path=None, overrides=None, environ=None, profile=None):
    """Merge every configuration source into a validated PipelineConfig."""
    layers = []
    if path:
        layers.append((read_config_file(path), str(path)))
    layers.append((env_overrides(environ), "environment"))
    if overrides:
        layers.append((overrides, "command line"))
    # the profile must be known before its values can sit under the other layers
    chosen = profile
    for values, _ in layers:
        chosen = values.get("general", {}).get("profile", chosen)
    cfg = PipelineConfig()
    if chosen:
        cfg.update({"general": {"profile": chosen}}, "profile")
        cfg.update(PROFILES[chosen], f"profile {chosen}")
    for values, where in layers:
        cfg.update(values, where)
    return cfg
