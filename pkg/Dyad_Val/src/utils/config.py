"""Configuration module."""
import copy
import hashlib
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Dict, List, Optional

from .errors import InvalidArgumentError
from .logging import CONSOLE_FORMAT, attach_file_handlers

# Constants
PACKAGE_DIR = os.path.dirname(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
CONFIG_FILE = os.path.join(PACKAGE_DIR, 'config.json')
OUTPUT_DIR = os.path.join(PACKAGE_DIR, 'output')
CODE_VERSION = "dyad-validation 1.0.0"
LOGGER_NAME = "dyad_validation"


def setup_logging():
    """Create the package logger with its console handler.

    File handlers are attached later by :func:`configure_logging`, once the
    output directory of a run is known.
    """
    logger = logging.getLogger(LOGGER_NAME)
    if not logger.handlers:
        logger.setLevel(logging.DEBUG)  # Capture all levels

        # Console handler - for basic output
        console_handler = logging.StreamHandler(sys.stdout)
        console_handler.setLevel(logging.INFO)
        console_handler.setFormatter(logging.Formatter(CONSOLE_FORMAT))
        logger.addHandler(console_handler)
        logger.propagate = False
    return logger


def configure_logging(output_dir, settings=None):
    """Attach rotating debug/error files under ``<output_dir>/logs``.

    Args:
        output_dir: Run output directory
        settings: ``logging`` section of the run configuration
    """
    settings = settings or {}
    level = getattr(logging, str(settings.get('level', 'DEBUG')).upper(), logging.DEBUG)
    log_dir = os.path.join(output_dir, 'logs')
    attach_file_handlers(logger, log_dir, level=level)
    return log_dir


# Initialize logging
logger = setup_logging()


# Default configuration
DEFAULT_CONFIG = {
    "groups": [
        {"group_id": "synthetic", "backend": "synthetic", "provider_id": "synthetic",
         "model_id": "synthetic-human-v1", "profile": "synthetic_profile.json"}
    ],
    "agent": {
        "temperature": 0.7,
        "top_p": 0.95,
        "max_retries": 5,
        "backoff_base": 1.0,
        "max_concurrency": 4,
        "requests_per_minute": 60,
        "timeout": 120.0,
        "reprompt_reminder": (
            "Your previous answer could not be read. Reply again using exactly "
            "the labeled lines requested above, one per line."
        )
    },
    "providers": {
        "openai": {"base_url": None, "api_key_env": "OPENAI_API_KEY"},
        "anthropic": {"base_url": None, "api_key_env": "ANTHROPIC_API_KEY"},
        "mistral": {"base_url": "https://api.mistral.ai/v1", "api_key_env": "MISTRAL_API_KEY"}
    },
    "design": {
        "replications": None,
        "pilot_sd": 2.79,
        "half_width": 1.0,
        "z_quantile": 1.96
    },
    "master_seed": 42,
    "price": 30.00,
    "initial_tip": 9.00,
    "vignettes": "vignettes.json",
    "analysis": {
        "margin_factor": 0.2,
        "alpha": 0.05,
        "tost_se": "welch",
        "levene_center": "mean",
        "bootstrap_B": 5000,
        "bootstrap_jobs": 1,
        "bootstrap_failure_limit": 0.01,
        "se_convention": "ml",
        "baseline_group": "human"
    },
    "centering_scope": "pooled_all_groups",
    "coding": {
        "service_outcome_codes": {"fails": 1, "below": 2, "meets": 3, "exceeds": 4},
        "adjustability_codes": {"false": 0, "true": 1},
        "visibility_codes": {"after": 0, "before": 1},
        "center_service_outcome": True,
        "center_adjustability": False,
        "center_visibility": False,
        "intercept": False
    },
    "human_dataset": None,
    "summary_input": None,
    "paths_input": None,
    "thresholds": {
        "min_measures": 0,
        "min_fidelity": 0
    },
    "output_dir": "output",
    "logging": {
        "level": "DEBUG"
    }
}

# Keys that do not change results and are therefore left out of the config hash
UNHASHED_KEYS = ("output_dir", "logging")


def deep_merge(base, override):
    """Merge ``override`` into a copy of ``base``.

    Nested dicts are merged key by key; every other value replaces the base
    value outright (lists included).

    Args:
        base: Default dictionary
        override: User settings

    Returns:
        dict: Merged configuration
    """
    result = copy.deepcopy(base)
    for key, value in (override or {}).items():
        if isinstance(value, dict) and isinstance(result.get(key), dict):
            result[key] = deep_merge(result[key], value)
        else:
            result[key] = copy.deepcopy(value)
    return result


def load_config(path=None):
    """Load configuration from config.json and an optional user file.

    Args:
        path: Optional user configuration file, merged last

    Returns:
        dict: Configuration dictionary
    """
    merged = copy.deepcopy(DEFAULT_CONFIG)
    for source in (CONFIG_FILE, path):
        if not source:
            continue
        try:
            with open(source, 'r', encoding='utf-8') as f:
                merged = deep_merge(merged, json.load(f))
        except FileNotFoundError:
            if source == path:
                logger.error(f"Config file not found: {source}")
                raise
            logger.warning(f"Default config {source} missing, using built-in defaults")
        except json.JSONDecodeError as e:
            logger.error(f"Failed to load config {source}: {str(e)}")
            raise InvalidArgumentError(f"{source}: invalid JSON at line {e.lineno} column {e.colno}") from e
    return merged


def resolve_path(path, base_dir=None):
    """Resolve a relative path against cwd first, then ``base_dir``/package dir."""
    if path is None or os.path.isabs(path) or os.path.exists(path):
        return path
    for root in (base_dir, PACKAGE_DIR):
        if root:
            candidate = os.path.join(root, path)
            if os.path.exists(candidate):
                return candidate
    return path


def canonical_json(obj) -> str:
    """Serialise ``obj`` to canonical JSON (sorted keys, compact separators)."""
    return json.dumps(obj, sort_keys=True, separators=(',', ':'), ensure_ascii=True)


@dataclass
class RunConfig:
    """Complete configuration of one experiment run and its analysis."""

    groups: List[Dict[str, Any]] = field(default_factory=lambda: copy.deepcopy(DEFAULT_CONFIG["groups"]))
    agent: Dict[str, Any] = field(default_factory=lambda: copy.deepcopy(DEFAULT_CONFIG["agent"]))
    providers: Dict[str, Any] = field(default_factory=lambda: copy.deepcopy(DEFAULT_CONFIG["providers"]))
    design: Dict[str, Any] = field(default_factory=lambda: copy.deepcopy(DEFAULT_CONFIG["design"]))
    master_seed: int = DEFAULT_CONFIG["master_seed"]
    price: float = DEFAULT_CONFIG["price"]
    initial_tip: float = DEFAULT_CONFIG["initial_tip"]
    vignettes: str = DEFAULT_CONFIG["vignettes"]
    analysis: Dict[str, Any] = field(default_factory=lambda: copy.deepcopy(DEFAULT_CONFIG["analysis"]))
    centering_scope: str = DEFAULT_CONFIG["centering_scope"]
    coding: Dict[str, Any] = field(default_factory=lambda: copy.deepcopy(DEFAULT_CONFIG["coding"]))
    human_dataset: Optional[str] = None
    summary_input: Optional[str] = None
    paths_input: Optional[str] = None
    thresholds: Dict[str, Any] = field(default_factory=lambda: copy.deepcopy(DEFAULT_CONFIG["thresholds"]))
    output_dir: str = DEFAULT_CONFIG["output_dir"]
    logging: Dict[str, Any] = field(default_factory=lambda: copy.deepcopy(DEFAULT_CONFIG["logging"]))

    def __post_init__(self):
        agent = self.agent
        if not 0 <= float(agent["temperature"]) <= 2:
            raise InvalidArgumentError(f"temperature must lie in [0, 2], got {agent['temperature']}")
        if not 0 < float(agent["top_p"]) <= 1:
            raise InvalidArgumentError(f"top_p must lie in (0, 1], got {agent['top_p']}")
        if int(agent["max_retries"]) < 0:
            raise InvalidArgumentError("max_retries must be >= 0")
        if int(agent["max_concurrency"]) < 1:
            raise InvalidArgumentError("max_concurrency must be >= 1")
        if self.centering_scope not in ("pooled_all_groups", "per_group"):
            raise InvalidArgumentError(f"unknown centering scope {self.centering_scope!r}")
        if float(self.price) <= 0 or float(self.initial_tip) < 0:
            raise InvalidArgumentError("price must be > 0 and initial_tip >= 0")
        group_ids = [g["group_id"] for g in self.groups]
        if len(set(group_ids)) != len(group_ids):
            raise InvalidArgumentError(f"duplicate group ids in {group_ids}")

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RunConfig":
        """Build a RunConfig from a (partial) dictionary merged over defaults."""
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise InvalidArgumentError(f"unknown configuration keys: {unknown}")
        merged = deep_merge(DEFAULT_CONFIG, data)
        return cls(**{name: merged.get(name) for name in known})

    @classmethod
    def load(cls, path=None) -> "RunConfig":
        """Load defaults, ``config.json`` and an optional user file."""
        return cls.from_dict(load_config(path))

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def hashed_dict(self) -> Dict[str, Any]:
        data = self.to_dict()
        for key in UNHASHED_KEYS:
            data.pop(key, None)
        return data

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(canonical_json(self.hashed_dict()).encode('utf-8')).hexdigest()

    @property
    def run_id(self) -> str:
        return f"run-{self.config_hash[:12]}"

    @property
    def margin_factor(self) -> float:
        return float(self.analysis["margin_factor"])

    @property
    def alpha(self) -> float:
        return float(self.analysis["alpha"])

    @property
    def bootstrap_B(self) -> int:
        return int(self.analysis["bootstrap_B"])

    def provenance(self) -> Dict[str, Any]:
        """Fields stamped into every artifact header."""
        return {
            "config_hash": self.config_hash,
            "master_seed": int(self.master_seed),
            "code_version": CODE_VERSION,
        }
