import os
import sys
import json
import logging
import argparse
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import dotenv

from hmm_icl.utils.errors import ConfigValidationError
from hmm_icl.utils.schema import ExperimentConfig, parse_experiment
from hmm_icl.utils.utils import import_from_json, random_string as gen_id

dotenv.load_dotenv(dotenv_path=".env", override=False)

COMMANDS = ("gen-hmm", "gen-mixture", "build-stack", "verify", "measure", "sweep")


class GlobalConfig:
    """
    Singleton storage for run-wide settings. Holds the parsed command line so
    deeper layers can look up options without threading them through calls.
    """
    _singleton: Optional['GlobalConfig'] = None
    _payload: Dict[str, Any]

    def __new__(cls) -> 'GlobalConfig':
        if cls._singleton is None:
            cls._singleton = super().__new__(cls)
            cls._singleton._payload = {}
        return cls._singleton

    @classmethod
    def bind(cls, parsed: argparse.Namespace) -> None:
        """Bind parsed command-line arguments into the config instance."""
        obj = cls()
        obj._payload = vars(parsed)

    @classmethod
    def fetch(cls, key: str, fallback: Any = None) -> Any:
        """Safely retrieve a config entry by key with an optional fallback."""
        return cls()._payload.get(key, fallback)

    @classmethod
    def assign(cls, key: str, value: Any) -> None:
        """Update a specific configuration parameter."""
        cls()._payload[key] = value


def _add_experiment_options(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("Experiment")
    group.add_argument("--config", type=str, default=None, help="JSON experiment file")
    group.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="KEY=VALUE", help="dotted override, e.g. layout.n=40")
    group.add_argument("--seed", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    cli = argparse.ArgumentParser(
        prog="hmm-icl",
        description="Explicit Transformer construction for in-context learning of low-rank HMMs",
    )

    # Logging
    logs = cli.add_argument_group("Logging")
    logs.add_argument("--log_folder", type=str, default=os.getenv("HMM_ICL_LOG_DIR", "log"))
    logs.add_argument("--log_file", type=str, default="run.log")
    logs.add_argument("--log_tag", type=str, default=gen_id(16))
    logs.add_argument("--log_level", type=str, default=os.getenv("HMM_ICL_LOG_LEVEL", "INFO"),
                      choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    logs.add_argument("--quiet", action="store_true", help="disable progress bars")

    commands = cli.add_subparsers(dest="command")

    gen_hmm = commands.add_parser("gen-hmm", help="generate one low-rank HMM")
    hmm_group = gen_hmm.add_argument_group("HMM")
    hmm_group.add_argument("--num_hidden", type=int, default=4)
    hmm_group.add_argument("--num_obs", type=int, default=3)
    hmm_group.add_argument("--rank", type=int, default=2)
    hmm_group.add_argument("--concentration", type=float, default=1.0)
    hmm_group.add_argument("--seed", type=int, default=0)
    hmm_group.add_argument("--out", type=str, default="hmm.json")

    gen_mix = commands.add_parser("gen-mixture", help="generate a task mixture")
    mix_group = gen_mix.add_argument_group("Mixture")
    mix_group.add_argument("--num_tasks", type=int, default=8)
    mix_group.add_argument("--hidden_per_task", type=int, default=8)
    mix_group.add_argument("--vocab", type=int, default=4)
    mix_group.add_argument("--rank", type=int, default=2)
    mix_group.add_argument("--concentration", type=float, default=1.0)
    mix_group.add_argument("--full_scale", action="store_true")
    mix_group.add_argument("--seed", type=int, default=0)
    mix_group.add_argument("--out", type=str, default="mixture.json")

    build = commands.add_parser("build-stack", help="assemble the Transformer for a layout")
    _add_experiment_options(build)
    dump = build.add_argument_group("Dumps")
    dump.add_argument("--dump-stack", dest="dump_stack", type=str, default=None)
    dump.add_argument("--trace-layers", dest="trace_layers", type=str, default=None,
                      help="directory receiving one CSV per residual-stream state")

    verify = commands.add_parser("verify", help="run the oracle-equivalence suite")
    _add_experiment_options(verify)
    checks = verify.add_argument_group("Checks")
    checks.add_argument("--num_configs", type=int, default=20)
    checks.add_argument("--permutations", type=int, default=10)
    checks.add_argument("--out", type=str, default=None, help="optional JSON report")

    measure = commands.add_parser("measure", help="measure the error decomposition")
    _add_experiment_options(measure)
    measure.add_argument("--out", type=str, default=None)

    sweep = commands.add_parser("sweep", help="measure over a parameter grid")
    _add_experiment_options(sweep)
    grid = sweep.add_argument_group("Grid")
    grid.add_argument("--n", type=int, nargs="*", default=[])
    grid.add_argument("--L", type=int, nargs="*", default=[])
    grid.add_argument("--T", type=int, nargs="*", default=[])
    grid.add_argument("--k", type=int, nargs="*", default=[])
    grid.add_argument("--out", type=str, default="sweep.csv")
    grid.add_argument("--workers", type=int, default=1, help="grid cells measured concurrently")

    return cli


def configure_runtime(argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
    """
    Parses startup options and prepares global config and log environment.
    """
    cli = build_parser()
    if argv is None and "pytest" in sys.modules:
        argv = []
    args = cli.parse_args(argv)

    GlobalConfig.bind(args)

    log_base = Path(args.log_folder)
    log_base.mkdir(parents=True, exist_ok=True)

    logging.basicConfig(
        filename=log_base / args.log_file,
        level=getattr(logging, args.log_level),
        format=f"[{args.log_tag}] %(asctime)s - %(levelname)s - %(message)s",
        encoding="utf-8"
    )

    return args


def _coerce(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(raw: Dict[str, Any], overrides: List[str]) -> Dict[str, Any]:
    """
    Merge ``key.sub=value`` strings into a nested dictionary in place.

    Values are parsed as JSON when possible, so ``layout.n=40`` gives an int and
    ``construction.beta1=hardmax`` stays a string.
    """
    for item in overrides:
        if "=" not in item:
            raise ConfigValidationError(f"Override '{item}' is not of the form key=value")
        key, value = item.split("=", 1)
        node = raw
        parts = key.strip().split(".")
        for part in parts[:-1]:
            child = node.get(part)
            if child is None:
                child = node[part] = {}
            elif not isinstance(child, dict):
                raise ConfigValidationError(f"Override '{key}' descends into non-object '{part}'")
            node = child
        node[parts[-1]] = _coerce(value.strip())
    return raw


def load_experiment(args: argparse.Namespace) -> ExperimentConfig:
    """Read the JSON file named by ``--config``, apply ``--set`` and ``--seed``, validate."""
    raw: Dict[str, Any] = {}
    if getattr(args, "config", None):
        loaded = import_from_json(args.config)
        if not isinstance(loaded, dict):
            raise ConfigValidationError(f"{args.config} must hold a JSON object")
        raw = loaded
    apply_overrides(raw, list(getattr(args, "overrides", None) or []))
    if getattr(args, "seed", None) is not None:
        raw["seed"] = args.seed
    config = parse_experiment(raw)
    logging.info(f"Experiment config: {config.model_dump_json()}")
    return config


def run_summary(args: argparse.Namespace) -> str:
    """
    Prints and logs a one-line description of the requested command.
    """
    lines = [f"Command: {args.command}"]
    if getattr(args, "config", None):
        lines.append(f"Config file: {args.config}")
    if getattr(args, "overrides", None):
        lines.append(f"Overrides: {', '.join(args.overrides)}")

    summary = "\n".join(lines)
    print(summary)
    logging.info(summary)
    return summary
