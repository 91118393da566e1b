"""Plain-text parameter checkpoints.

Format (one record per line, whitespace separated)::

    gflow-lab-checkpoint 1
    meta <key> <value>              # zero or more
    param <name> <shape> <v1> <v2> ...

``shape`` is dimensions joined by ``x`` (``-`` for a scalar). Values are
written with 17 significant digits so a round trip is exact. The policy
architecture is stored as ``meta`` records (side, hidden, layers, encoding,
parametrization, learn_backward); everything else in ``meta`` is free-form.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from gflowlab.policy import PolicyConfig, PolicyParams

MAGIC = "gflow-lab-checkpoint"
VERSION = 1

_ARCH_KEYS = ("side", "hidden", "layers", "encoding", "parametrization", "learn_backward")


def save_checkpoint(params: PolicyParams, path, meta: dict | None = None) -> Path:
    cfg = params.config
    lines = [f"{MAGIC} {VERSION}"]
    arch = {
        "side": cfg.side,
        "hidden": cfg.hidden,
        "layers": cfg.layers,
        "encoding": cfg.encoding.value,
        "parametrization": cfg.parametrization.value,
        "learn_backward": int(cfg.learn_backward),
    }
    for k, v in {**arch, **(meta or {})}.items():
        v = str(v)
        if not v or any(ch.isspace() for ch in v) or any(ch.isspace() for ch in str(k)):
            raise ValueError(f"meta entries must be non-empty and whitespace free: {k}={v!r}")
        lines.append(f"meta {k} {v}")
    for name in params.names:
        arr = np.atleast_1d(params[name])
        shape = "x".join(str(d) for d in params[name].shape) or "-"
        lines.append(f"param {name} {shape} " + " ".join(f"{x:.17g}" for x in arr.ravel()))
    path = Path(path)
    path.write_text("\n".join(lines) + "\n")
    return path


def load_checkpoint(path) -> tuple[PolicyParams, dict]:
    lines = Path(path).read_text().splitlines()
    head = lines[0].split()
    if head[:1] != [MAGIC] or int(head[1]) != VERSION:
        raise ValueError(f"{path}: not a version-{VERSION} checkpoint")
    meta, values = {}, {}
    for line in lines[1:]:
        if not line.strip():
            continue
        kind, rest = line.split(None, 1)
        if kind == "meta":
            k, v = rest.split(None, 1)
            meta[k] = v.strip()
        elif kind == "param":
            name, shape, *nums = rest.split()
            dims = () if shape == "-" else tuple(int(d) for d in shape.split("x"))
            values[name] = np.array([float(x) for x in nums]).reshape(dims)
        else:
            raise ValueError(f"{path}: unknown record {kind!r}")
    cfg = PolicyConfig(
        side=int(meta["side"]),
        hidden=int(meta["hidden"]),
        layers=int(meta["layers"]),
        encoding=meta["encoding"],
        parametrization=meta["parametrization"],
        learn_backward=bool(int(meta["learn_backward"])),
    )
    params = PolicyParams(cfg, np.zeros(sum(int(np.prod(s)) if s else 1 for _, s in cfg.layout())))
    if set(values) != set(params.names):
        raise ValueError(f"{path}: parameter names do not match the stored architecture")
    for name, v in values.items():
        params[name] = v
    return params, {k: v for k, v in meta.items() if k not in _ARCH_KEYS}
