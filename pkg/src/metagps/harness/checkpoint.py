"""JSON checkpoints of a meta-learner state.

Floats are written with Python's shortest round-trip repr, so load followed
by save reproduces the file byte for byte.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict

import numpy as np

from .. import adcore as ad
from ..metalearner.model import Ablation, HyperParams, MetaState

FORMAT = "metagps-checkpoint"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _pack(params: ad.ParamSet) -> list:
    return [
        {"name": k, "shape": list(v.shape), "values": [float(x) for x in np.ravel(v.value)]}
        for k, v in params.items()
    ]


def _unpack(entries) -> ad.ParamSet:
    out = []
    for e in entries:
        shape = tuple(int(s) for s in e["shape"])
        values = np.array(e["values"], dtype=np.float64)
        if values.size != int(np.prod(shape)):
            raise CheckpointError(f"parameter {e['name']}: {values.size} values for shape {shape}")
        out.append((e["name"], values.reshape(shape)))
    return ad.ParamSet(out)


def state_to_dict(state: MetaState, rng: dict | None = None, meta: dict | None = None) -> dict:
    return {
        "format": FORMAT,
        "version": VERSION,
        "n_way": state.n_way,
        "hyper": asdict(state.hyper),
        "ablation": asdict(state.ablation),
        "theta": _pack(state.theta),
        "psi": _pack(state.psi),
        "rng": rng or {},
        "meta": meta or {},
    }


def dumps(state: MetaState, rng: dict | None = None, meta: dict | None = None) -> str:
    return json.dumps(state_to_dict(state, rng, meta), sort_keys=True, separators=(",", ":")) + "\n"


def save_checkpoint(path: str, state: MetaState, rng: dict | None = None,
                    meta: dict | None = None) -> None:
    d = os.path.dirname(path)
    if d:
        os.makedirs(d, exist_ok=True)
    with open(path, "w") as fh:
        fh.write(dumps(state, rng, meta))


def loads(text: str) -> tuple[MetaState, dict, dict]:
    try:
        d = json.loads(text)
    except json.JSONDecodeError as e:
        raise CheckpointError(f"checkpoint is not valid JSON: {e}") from None
    if not isinstance(d, dict) or d.get("format") != FORMAT:
        raise CheckpointError("not a metagps checkpoint")
    if d.get("version") != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {d.get('version')!r}")
    try:
        state = MetaState(
            theta=_unpack(d["theta"]),
            psi=_unpack(d["psi"]),
            hyper=HyperParams(**d["hyper"]),
            ablation=Ablation(**d["ablation"]),
            n_way=int(d["n_way"]),
        )
    except (KeyError, TypeError) as e:
        raise CheckpointError(f"malformed checkpoint: {e}") from None
    return state, d.get("rng", {}), d.get("meta", {})


def load_checkpoint(path: str) -> tuple[MetaState, dict, dict]:
    """Returns ``(state, rng, meta)``."""
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e.strerror}") from None
    return loads(text)
