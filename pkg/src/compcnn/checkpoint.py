"""Versioned JSON checkpoints for backbones and comparator banks.

Floats are written with ``repr`` precision by the json module, so a load
reproduces every parameter bit for bit.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

from .comparators import BinaryComparator, ComparatorBank
from .multitask import HeadSplit
from .nn import Backbone, ShapeError

FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def _layer(p):
    return {"name": p.name, "shape": list(p.shape), "values": p.value.ravel().tolist()}


def _restore(param, entry):
    if entry.get("name") != param.name:
        raise CheckpointError(f"expected layer {param.name!r}, found {entry.get('name')!r}")
    shape = tuple(entry["shape"])
    if shape != param.shape:
        raise CheckpointError(f"layer {param.name}: shape {shape} does not match {param.shape}")
    values = np.asarray(entry["values"], dtype=np.float64)
    if values.size != param.value.size:
        raise CheckpointError(f"layer {param.name}: {values.size} values for shape {shape}")
    param.value[...] = values.reshape(shape)


def _check_version(doc):
    if doc.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format_version {doc.get('format_version')!r}")


def backbone_to_dict(bb: Backbone):
    return {
        "format_version": FORMAT_VERSION,
        "embedding_dim": bb.embedding_dim,
        "input_shape": list(bb.input_shape),
        "conv_channels": bb.conv_channels,
        "hidden": list(bb.hidden),
        "seed": bb.seed,
        "layers": [_layer(p) for p in bb.params()],
    }


def backbone_from_dict(doc):
    _check_version(doc)
    try:
        bb = Backbone(doc["input_shape"], doc["conv_channels"], doc["hidden"],
                      doc["embedding_dim"], seed=doc["seed"])
        params = bb.params()
        if len(doc["layers"]) != len(params):
            raise CheckpointError(f"expected {len(params)} layers, found {len(doc['layers'])}")
        for p, entry in zip(params, doc["layers"]):
            _restore(p, entry)
    except (KeyError, TypeError, ShapeError) as exc:
        raise CheckpointError(f"malformed backbone checkpoint: {exc!r}") from None
    return bb


def bank_to_dict(bank: ComparatorBank):
    comps = []
    for i, c in enumerate(bank.comparators):
        entry = {"threshold": c.threshold, "head_dim": c.head_dim,
                 "head": [_layer(p) for p in c.head_params()]}
        if not bank.shared or i == 0:
            entry["backbone"] = backbone_to_dict(c.backbone)
        comps.append(entry)
    return {
        "format_version": FORMAT_VERSION,
        "kind": "comparator_bank",
        "K": bank.K,
        "class_ages": bank.class_ages,
        "decoder": bank.decoder,
        "shared_backbone": bank.shared,
        "split": None if bank.split is None else [bank.split.age_dim, bank.split.gender_dim],
        "gender_prototypes": None if bank.prototypes is None else bank.prototypes.tolist(),
        "trained": bank.trained,
        "run_config": bank.run_config,
        "comparators": comps,
    }


def bank_from_dict(doc):
    _check_version(doc)
    try:
        if doc["kind"] != "comparator_bank":
            raise CheckpointError(f"not a comparator bank checkpoint (kind={doc['kind']!r})")
        entries = doc["comparators"]
        if len(entries) != doc["K"]:
            raise CheckpointError(f"K={doc['K']} but {len(entries)} comparators stored")
        comps = []
        shared_bb = None
        for entry in entries:
            if doc["shared_backbone"]:
                shared_bb = shared_bb or backbone_from_dict(entry["backbone"])
                bb = shared_bb
            else:
                bb = backbone_from_dict(entry["backbone"])
            c = BinaryComparator(bb, entry["threshold"], entry["head_dim"])
            for p, layer in zip(c.head_params(), entry["head"]):
                _restore(p, layer)
            comps.append(c)
        split = HeadSplit(*doc["split"]) if doc["split"] else None
        if split:
            split.check(comps[0].backbone.embedding_dim)
        bank = ComparatorBank(comps, doc["class_ages"], shared=doc["shared_backbone"], split=split,
                              prototypes=doc["gender_prototypes"], decoder=doc["decoder"],
                              trained=doc["trained"])
        bank.run_config = doc.get("run_config")
        return bank
    except (KeyError, TypeError, ShapeError) as exc:
        raise CheckpointError(f"malformed bank checkpoint: {exc!r}") from None
    except ValueError as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"invalid bank checkpoint: {exc}") from None


def _dumps(doc):
    return json.dumps(doc, separators=(",", ":"), allow_nan=False) + "\n"


def checkpoint_save(model, path):
    """Write a bank or backbone atomically (temp file + rename)."""
    doc = bank_to_dict(model) if isinstance(model, ComparatorBank) else backbone_to_dict(model)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(_dumps(doc))
    os.replace(tmp, path)


def checkpoint_load(path, expect_K=None):
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"corrupt checkpoint {path}: {exc}") from None
    if not isinstance(doc, dict):
        raise CheckpointError(f"corrupt checkpoint {path}: top level is not an object")
    if "kind" in doc:
        model = bank_from_dict(doc)
        if expect_K is not None and model.K != expect_K:
            raise CheckpointError(f"checkpoint holds K={model.K} comparators, expected K={expect_K}")
        return model
    return backbone_from_dict(doc)
