"""Experiment configuration: JSON documents validated against the shipped schema."""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import jsonschema

from .choiceprob import IntegrationSpec
from .distributions import Heterogeneity, eta_from_dict, noise_from_dict
from .errors import ConfigurationError
from .estimate import KernelConfig
from .model import UtilityModel, model_from_dict
from .report import config_hash

CHECKS = ("thm1", "thm2", "cor3", "hessian", "index", "thm4", "berry", "wavg",
          "thm5", "cor6", "lar", "thm7", "thm8", "thm9", "thm10", "thm11")

PACKAGE_DIR = Path(__file__).resolve().parent
DEFAULT_TOL_REL = 0.01
DEFAULT_K_SE = 3.0
DEFAULT_K_GAP = 5.0


@lru_cache(maxsize=1)
def load_schema() -> dict:
    return json.loads((PACKAGE_DIR / "schema" / "experiment.schema.json").read_text())


def reference_config_path(name: str) -> Path:
    """Path of a shipped reference configuration (``ref_binary`` or ``ref_binary.json``)."""
    if not name.endswith(".json"):
        name += ".json"
    path = PACKAGE_DIR / "configs" / name
    if not path.exists():
        raise ConfigurationError(f"no shipped configuration named {name!r}")
    return path


def _field_path(err: jsonschema.ValidationError) -> str:
    return "$" + "".join(f"[{p}]" if isinstance(p, int) else f".{p}" for p in err.absolute_path)


def validate(doc: dict) -> None:
    """Raise ``ConfigurationError`` naming the offending field when ``doc`` breaks the schema."""
    validator = jsonschema.Draft202012Validator(load_schema())
    errors = sorted(validator.iter_errors(doc), key=lambda e: (list(e.absolute_path), e.message))
    if errors:
        err = errors[0]
        raise ConfigurationError(f"config field {_field_path(err)}: {err.message}")


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    """A validated experiment document plus accessors that build library objects."""

    doc: dict

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        validate(doc)
        return cls(copy.deepcopy(doc))

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        path = Path(path)
        if not path.is_file():
            try:
                path = reference_config_path(path.name)
            except ConfigurationError:
                raise ConfigurationError(f"config file not found: {path}") from None
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{path}: not valid JSON ({exc})") from exc
        except OSError as exc:
            raise ConfigurationError(f"cannot read {path}: {exc}") from exc
        return cls.from_dict(doc)

    def with_overrides(self, seed: int | None = None, draws: int | None = None,
                       checks: list[str] | None = None, tolerance: float | None = None) -> "ExperimentConfig":
        doc = copy.deepcopy(self.doc)
        if seed is not None:
            doc["seed"] = int(seed)
        if draws is not None:
            doc.setdefault("integration", {})["n_draws"] = int(draws)
            for opt in doc.get("check_options", {}).values():
                if "integration" in opt:
                    opt["integration"]["n_draws"] = int(draws)
        if checks is not None:
            doc["checks"] = list(checks)
        if tolerance is not None:
            doc.setdefault("tolerances", {})["rel"] = float(tolerance)
        return ExperimentConfig.from_dict(doc)

    # ------------------------------------------------------------ accessors
    @property
    def name(self) -> str:
        return self.doc["name"]

    @property
    def seed(self) -> int:
        return int(self.doc["seed"])

    @property
    def checks(self) -> list[str]:
        return list(self.doc["checks"])

    @property
    def hash(self) -> str:
        return config_hash(self.doc)

    @property
    def tol_rel(self) -> float:
        return float(self.doc.get("tolerances", {}).get("rel", DEFAULT_TOL_REL))

    @property
    def k_se(self) -> float:
        return float(self.doc.get("tolerances", {}).get("k_se", DEFAULT_K_SE))

    @property
    def k_gap(self) -> float:
        return float(self.doc.get("tolerances", {}).get("k_gap", DEFAULT_K_GAP))

    @property
    def tol_abs(self) -> float | None:
        value = self.doc.get("tolerances", {}).get("abs")
        return None if value is None else float(value)

    @property
    def output_dir(self) -> str | None:
        return self.doc.get("output_dir")

    def options(self, check: str) -> dict:
        return self.doc.get("check_options", {}).get(check, {})

    def section(self, key: str, check: str | None = None, required: bool = True):
        """Check-specific override of a top-level section, falling back to the top level."""
        if check is not None and key in self.options(check):
            return self.options(check)[key]
        if key in self.doc:
            return self.doc[key]
        if required:
            where = f" (needed by {check})" if check else ""
            raise ConfigurationError(f"config has no {key!r} section{where}")
        return None

    def model(self, check: str | None = None, opt: dict | None = None) -> UtilityModel:
        doc = (opt or {}).get("model") or self.section("model", check)
        return model_from_dict(doc)

    def dists(self, check: str | None = None, opt: dict | None = None) -> Heterogeneity:
        opt = opt or {}
        eta = opt.get("eta") or self.section("eta", check)
        noise = opt.get("noise") or self.section("noise", check)
        return Heterogeneity(eta_from_dict(eta), noise_from_dict(noise))

    def integration(self, check: str | None = None, rhs: bool = False) -> IntegrationSpec:
        key = "rhs_integration" if rhs else "integration"
        doc = self.section(key, check, required=False)
        if doc is None:
            if rhs:
                return self.integration(check)
            doc = {}
        return IntegrationSpec(
            method=doc.get("method", "monte_carlo"),
            n_draws=int(doc.get("n_draws", 100_000)),
            nodes_per_dim=int(doc.get("nodes_per_dim", 20)),
            seed=self.seed,
        )

    def grid(self, key: str, check: str | None = None):
        opt = self.options(check) if check else {}
        if key in opt:
            return opt[key]
        return self.doc.get("grids", {}).get(key)

    def kernel(self) -> KernelConfig:
        doc = self.doc.get("kernel", {})
        bw = doc.get("bandwidth", "derivative")
        return KernelConfig(doc.get("kernel", "gaussian"), bw if isinstance(bw, str) else tuple(bw),
                            int(doc.get("order", 1)), float(doc.get("constant", 1.06)))

    def estimation(self) -> dict:
        if "estimation" not in self.doc:
            raise ConfigurationError("config has no 'estimation' section")
        return self.doc["estimation"]


def load_config(path) -> ExperimentConfig:
    return ExperimentConfig.from_file(path)
