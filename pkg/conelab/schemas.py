"""
JSON schemas and validation for conelab run configurations.

A run config is a JSON object with a problem block and exactly one of a seed
block (integrate, sweep, verify) or a target block (shoot):

    {
      "problem": {"d": [2, 1], "mu": [1, 0], "eps": 1.0},
      "seed": {"fbar": [1.0], "C": -1.0},
      "integrator": {"rel_tol": 1e-10, "floor": 1e-2},
      "output": {"dir": "runs/example", "stride": 1}
    }
"""

import json
from pathlib import Path
from typing import Any, Dict, Optional, Type

import jsonschema

from conelab.config import Config
from conelab.config import config as profiles
from conelab.errors import ConfigError, ConeLabError
from conelab.integrator import MODES, IntegratorConfig
from conelab.models import ConeSpec, ProblemSpec, RunConfig, SeedParams, TrajectoryOptions
from conelab.seed import SEED_ORDERS, validate_seed_regime

POSITIVE_NUMBER = {"type": "number", "exclusiveMinimum": 0}

PROBLEM_SCHEMA = {
    "type": "object",
    "properties": {
        "d": {
            "type": "array",
            "items": {"type": "integer", "minimum": 1},
            "minItems": 2,
            "description": "Factor dimensions d1..dr"
        },
        "mu": {
            "type": "array",
            "items": {"type": "number"},
            "minItems": 2,
            "description": "Einstein constants; mu[0] must equal d[0] - 1"
        },
        "eps": POSITIVE_NUMBER
    },
    "required": ["d", "mu"],
    "additionalProperties": False
}

SEED_SCHEMA = {
    "type": "object",
    "properties": {
        "fbar": {"type": "array", "items": POSITIVE_NUMBER, "minItems": 1},
        "C": {
            "type": "number",
            "maximum": 0,
            "description": "C > 0 is excluded by the scalar curvature bound of complete expanders"
        }
    },
    "required": ["fbar", "C"],
    "additionalProperties": False
}

TARGET_SCHEMA = {
    "type": "object",
    "properties": {
        "sigma": {"type": "array", "items": POSITIVE_NUMBER, "minItems": 2},
        "fbar": {
            "type": "array",
            "items": POSITIVE_NUMBER,
            "description": "Starting fbar for the sigma1 solve (default all ones)"
        },
        "tol": {"type": "number", "exclusiveMinimum": 0, "maximum": 0.1},
        "max_evaluations": {"type": "integer", "minimum": 2}
    },
    "required": ["sigma"],
    "additionalProperties": False
}

INTEGRATOR_SCHEMA = {
    "type": "object",
    "properties": {
        "mode": {"type": "string", "enum": list(MODES)},
        "rel_tol": POSITIVE_NUMBER,
        "abs_tol": POSITIVE_NUMBER,
        "max_step": POSITIVE_NUMBER,
        "min_step": POSITIVE_NUMBER,
        "max_steps": {"type": "integer", "minimum": 1},
        "fixed_step": POSITIVE_NUMBER,
        "floor": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "ctol": POSITIVE_NUMBER,
        "einstein_tol": POSITIVE_NUMBER,
        "order": {"type": "integer", "enum": list(SEED_ORDERS)},
        "t0": POSITIVE_NUMBER,
        "project_seed": {"type": "boolean"},
        "s_horizon": POSITIVE_NUMBER,
        "t_horizon": POSITIVE_NUMBER
    },
    "additionalProperties": False
}

OUTPUT_SCHEMA = {
    "type": "object",
    "properties": {
        "dir": {"type": "string", "minLength": 1},
        "stride": {"type": "integer", "minimum": 1}
    },
    "additionalProperties": False
}

SWEEP_SCHEMA = {
    "type": "object",
    "properties": {
        "C": {
            "type": "array",
            "items": {"type": "number", "exclusiveMaximum": 0},
            "minItems": 1
        }
    },
    "required": ["C"],
    "additionalProperties": False
}

RUN_CONFIG_SCHEMA = {
    "type": "object",
    "properties": {
        "problem": PROBLEM_SCHEMA,
        "seed": SEED_SCHEMA,
        "target": TARGET_SCHEMA,
        "integrator": INTEGRATOR_SCHEMA,
        "output": OUTPUT_SCHEMA,
        "sweep": SWEEP_SCHEMA,
        "profile": {"type": "string"}
    },
    "required": ["problem"],
    "oneOf": [
        {"required": ["seed"], "not": {"required": ["target"]}},
        {"required": ["target"], "not": {"required": ["seed"]}}
    ],
    "additionalProperties": False
}


def _first_error(cfg: Dict[str, Any]) -> Optional[jsonschema.ValidationError]:
    validator = jsonschema.Draft7Validator(RUN_CONFIG_SCHEMA)
    errors = list(validator.iter_errors(cfg))
    if not errors:
        return None
    # field errors first; the seed/target exclusivity message only when nothing else is wrong
    return min(errors, key=lambda e: (e.validator == 'oneOf', [str(p) for p in e.absolute_path]))


def _error_field(error: jsonschema.ValidationError) -> str:
    path = '.'.join(str(p) for p in error.absolute_path)
    if error.validator == 'oneOf' and not path:
        return 'seed|target'
    return path or '<root>'


def validate_run_config(cfg: Dict[str, Any]) -> tuple[bool, Optional[str]]:
    """
    Validate a run configuration against the JSON schema.

    Args:
        cfg: Parsed configuration dictionary

    Returns:
        tuple: (is_valid: bool, error_message: str if invalid)
    """
    if not cfg:
        return False, "Config cannot be empty"

    if not isinstance(cfg, dict):
        return False, "Config must be a JSON object"

    error = _first_error(cfg)
    if error is None:
        return True, None
    if error.validator == 'oneOf' and not error.absolute_path:
        return False, "Config must contain exactly one of 'seed' or 'target'"
    return False, f"{_error_field(error)}: {error.message}"


def build_options(cfg: Dict[str, Any], profile: Type[Config] = Config) -> TrajectoryOptions:
    """TrajectoryOptions from a profile overlaid with the integrator block."""
    block = dict(cfg.get('integrator', {}))
    options = TrajectoryOptions.from_config(profile)
    integ = options.integrator.to_dict()
    for key in ('mode', 'rel_tol', 'abs_tol', 'max_step', 'min_step', 'max_steps', 'fixed_step'):
        if key in block:
            integ[key] = block.pop(key)
    options.integrator = IntegratorConfig(**integ)
    for key in ('floor', 'ctol', 'einstein_tol', 'order', 't0', 'project_seed',
                's_horizon', 't_horizon'):
        if key in block:
            setattr(options, key, block.pop(key))
    return options


def parse_run_config(cfg: Dict[str, Any], profile: Optional[Type[Config]] = None) -> RunConfig:
    """
    Validate a configuration dictionary and build the RunConfig.

    Args:
        cfg: Parsed configuration dictionary
        profile: Config class supplying defaults (default: cfg['profile'] or Config)

    Returns:
        RunConfig

    Raises:
        ConfigError: Schema or domain validation failure; the message names the field
    """
    is_valid, message = validate_run_config(cfg)
    if not is_valid:
        error = _first_error(cfg) if isinstance(cfg, dict) and cfg else None
        raise ConfigError(f"Invalid config: {message}",
                          _error_field(error) if error is not None else '<root>')

    if profile is None:
        name = cfg.get('profile', 'default')
        if name not in profiles:
            raise ConfigError(f"Unknown profile '{name}'", 'profile')
        profile = profiles[name]

    try:
        problem = ProblemSpec.from_dict({'eps': 1.0, **cfg['problem']})
    except ConeLabError as e:
        raise ConfigError(f"Invalid problem: {e.message}", 'problem') from e

    seed = target = target_fbar = None
    if 'seed' in cfg:
        seed = SeedParams(fbar=cfg['seed']['fbar'], C=cfg['seed']['C'])
        classification, reason = validate_seed_regime(problem, seed)
        if classification == 'rejected':
            raise ConfigError(f"Invalid seed: {reason}", 'seed')
    else:
        block = cfg['target']
        if len(block['sigma']) != problem.r:
            raise ConfigError(f"target.sigma needs {problem.r} entries, got {len(block['sigma'])}",
                              'target.sigma')
        target = ConeSpec.for_problem(problem, block['sigma'])
        target_fbar = tuple(block.get('fbar', [1.0] * (problem.r - 1)))
        if len(target_fbar) != problem.r - 1:
            raise ConfigError(f"target.fbar needs {problem.r - 1} entries", 'target.fbar')

    options = build_options(cfg, profile)
    output = cfg.get('output', {})
    sweep = cfg.get('sweep')
    if sweep is not None and seed is None:
        raise ConfigError("A sweep needs a seed block for fbar", 'sweep')

    return RunConfig(
        problem=problem,
        seed=seed,
        target=target,
        target_fbar=target_fbar,
        options=options,
        output_dir=output.get('dir'),
        stride=output.get('stride', 1),
        sweep_grid=list(sweep['C']) if sweep else None,
        shoot_tol=cfg.get('target', {}).get('tol', profile.SHOOT_TOL),
        raw=cfg,
    )


def load_run_config(path, profile: Optional[Type[Config]] = None) -> RunConfig:
    """
    Read and validate a JSON run configuration file.

    Raises:
        ConfigError: Unreadable file, invalid JSON or invalid content
    """
    path = Path(path)
    try:
        cfg = json.loads(path.read_text())
    except OSError as e:
        raise ConfigError(f"Cannot read config {path}: {e}", 'config') from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"Invalid JSON in {path}: {e}", 'config') from e
    return parse_run_config(cfg, profile)
