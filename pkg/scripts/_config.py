"""Command-line overrides for dataclass experiment configs."""

import argparse
import dataclasses
import json
from pathlib import Path


def _parse_tuple(text):
    return tuple(x.strip() for x in text.split(",") if x.strip())


def parse_config(cls, argv=None):
    """Build ``cls`` from its defaults, overridden by ``--field value`` flags."""
    p = argparse.ArgumentParser(description=cls.__doc__)
    for f in dataclasses.fields(cls):
        default = f.default if f.default is not dataclasses.MISSING else f.default_factory()
        if isinstance(default, bool):
            p.add_argument(f"--{f.name.replace('_', '-')}", action=argparse.BooleanOptionalAction, default=default)
        elif isinstance(default, tuple):
            p.add_argument(f"--{f.name.replace('_', '-')}", type=_parse_tuple, default=default,
                           help="comma-separated list")
        else:
            p.add_argument(f"--{f.name.replace('_', '-')}", type=type(default), default=default)
    ns = p.parse_args(argv)
    return cls(**vars(ns))


def save_json(cfg, results, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps({"config": dataclasses.asdict(cfg), "results": results}, indent=2, sort_keys=True,
                               default=str) + "\n")
    print(f"wrote {path}")
