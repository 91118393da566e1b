"""Flat ``key = value`` experiment configuration.

One entry per line, ``#`` starts a comment. Unknown keys are rejected.
Command-line overrides use the same ``key=value`` syntax and win over the
file.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from gflowlab.hypergrid import GridSpec, HideMode, HidingMask, ModeRegion, length_mask, mode_cells, sample_hidden_states
from gflowlab.objectives import HiddenFlow
from gflowlab.policy import Encoding, Parametrization
from gflowlab.trainer import TrainConfig


class ConfigError(ValueError):
    pass


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def _int_list(text: str) -> tuple:
    out = []
    for part in text.replace(" ", "").split(","):
        if not part:
            continue
        if "-" in part[1:]:
            lo, hi = part.split("-", 1) if not part.startswith("-") else (part, part)
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(part))
    return tuple(out)


def _str_list(text: str) -> tuple:
    return tuple(p.strip() for p in text.split(",") if p.strip())


def _modes(text: str):
    t = text.strip().lower()
    if t in ("default", ""):
        return "default"
    if t == "none":
        return ()
    regions = []
    for part in text.split(";"):
        bits = [int(v) for v in part.strip().split(":")]
        if len(bits) != 4:
            raise ConfigError(f"mode region must be a_lo:a_hi:b_lo:b_hi, got {part!r}")
        regions.append(ModeRegion(*bits))
    return tuple(regions)


def _format_modes(modes) -> str:
    if modes == "default":
        return "default"
    if not modes:
        return "none"
    return ";".join(f"{m.a_lo}:{m.a_hi}:{m.b_lo}:{m.b_hi}" for m in modes)


@dataclass
class ExperimentConfig:
    side: int = 8
    modes: object = "default"
    losses: tuple = ("TB", "DB", "FL-DB")
    loss: str = "DB"
    compare_masked: bool = True
    hidden_count: int = 48
    mask_seed: int = 0
    mask_mode: str = "skip-trajectory"
    exclude_modes: bool = False
    length_threshold: int = 7
    hidden_flow: str = "omit"
    lr: float = 1e-3
    lr_log_z: float = 1e-1
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    iterations: int = 2000
    batch_size: int = 16
    seeds: tuple = (0, 1, 2, 3, 4, 5, 6)
    eval_every: int = 50
    eps_unif: float = 0.0
    width: int = 64
    layers: int = 2
    encoding: str = "onehot"
    learn_backward: bool = False
    out: str = ""

    def __post_init__(self):
        try:
            self.grid()
            Parametrization(self.loss)
            for k in self.losses:
                Parametrization(k)
            HideMode(self.mask_mode)
            HiddenFlow(self.hidden_flow)
            Encoding(self.encoding)
            self.train_config(Parametrization(self.loss), HidingMask())
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.hidden_count < 0:
            raise ConfigError("hidden_count must be >= 0")

    def grid(self) -> GridSpec:
        return GridSpec(self.side, None if self.modes == "default" else self.modes)

    def random_mask(self) -> HidingMask:
        spec = self.grid()
        if self.hidden_count == 0:
            return HidingMask(frozenset(), self.mask_mode)
        exclude = mode_cells(spec) if self.exclude_modes else ()
        return sample_hidden_states(spec, self.hidden_count, self.mask_seed, self.mask_mode, exclude)

    def length_mask(self) -> HidingMask:
        return length_mask(self.grid(), self.length_threshold, HideMode.FORBID_TERMINATE)

    def train_config(self, loss, mask: HidingMask) -> TrainConfig:
        return TrainConfig(
            grid=self.grid(),
            loss=loss,
            mask=mask,
            lr=self.lr,
            lr_log_z=self.lr_log_z,
            optimizer=self.optimizer,
            betas=(self.beta1, self.beta2),
            adam_eps=self.adam_eps,
            iterations=self.iterations,
            batch_size=self.batch_size,
            seeds=self.seeds,
            eval_every=self.eval_every,
            eps_unif=self.eps_unif,
            hidden=self.width,
            layers=self.layers,
            encoding=self.encoding,
            learn_backward=self.learn_backward,
            hidden_flow=self.hidden_flow,
        )

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "modes":
                v = _format_modes(v)
            elif isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"


_PARSERS = {
    "modes": _modes,
    "losses": _str_list,
    "seeds": _int_list,
}


def _convert(name: str, text: str):
    field = {f.name: f for f in fields(ExperimentConfig)}.get(name)
    if field is None:
        raise ConfigError(f"unknown config key {name!r}")
    if name in _PARSERS:
        return _PARSERS[name](text)
    default = field.default
    try:
        if isinstance(default, bool):
            return _bool(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
    except ValueError:
        raise ConfigError(f"bad value for {name}: {text!r}") from None
    return text.strip()


def parse_pairs(lines, source="<config>") -> dict:
    out = {}
    for n, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{n}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = _convert(key, value)
    return out


def load_config(path=None, overrides=(), **extra) -> ExperimentConfig:
    values = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        values.update(parse_pairs(p.read_text().splitlines(), str(p)))
    values.update(parse_pairs(overrides, "<overrides>"))
    values.update({k: v for k, v in extra.items() if v is not None})
    return ExperimentConfig(**values)


def replace(cfg: ExperimentConfig, **changes) -> ExperimentConfig:
    return dataclasses.replace(cfg, **changes)
