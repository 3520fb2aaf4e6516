"""Experiment configuration files: loading, validation, presets and digests."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

import jsonschema

from .design import LinearDesign, LyapunovCertificate, solve_lyapunov
from .simulate import SignalModel, SimulationGrid, TdConfig, canonical_digest

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "PRESETS",
    "load_config",
    "load_schema",
    "preset_path",
]

PRESETS = ("fig1_linear_r30", "fig2_nonlinear_r30", "fig3_nonlinear_r15", "zero_noise_baseline")

DEFAULT_ENSEMBLE = {"paths": 200, "base_seed": 0, "workers": 1}
DEFAULT_BOUNDS = {"theta": 0.5, "mu": 1.0, "T": 2.0}


class ConfigError(ValueError):
    pass


def load_schema() -> dict:
    return json.loads(resources.files("stochtd").joinpath("experiment.schema.json").read_text())


def preset_path(name: str) -> Path:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    return Path(str(resources.files("stochtd").joinpath("presets", f"{name}.json")))


@dataclass
class ExperimentConfig:
    td: TdConfig
    signal: SignalModel
    grid: SimulationGrid
    ensemble: dict = field(default_factory=lambda: dict(DEFAULT_ENSEMBLE))
    bounds: dict = field(default_factory=lambda: dict(DEFAULT_BOUNDS))
    certificate: object = "auto"
    gendiff: Optional[dict] = None
    outputs: str = "out"
    name: str = ""

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        try:
            jsonschema.validate(data, load_schema())
        except jsonschema.ValidationError as exc:
            where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
            raise ConfigError(f"invalid config at {where}: {exc.message}") from None
        try:
            td = TdConfig.from_dict(data["td"])
            signal = SignalModel.from_dict(data["signal"])
            grid = SimulationGrid(**data["grid"])
            bounds = dict(DEFAULT_BOUNDS, **data.get("bounds", {}))
            cert = data.get("certificate", "auto")
            if isinstance(cert, dict):
                cert = LyapunovCertificate.from_dict(dict(cert, theta=bounds["theta"]))
            gendiff = data.get("gendiff")
            if gendiff is not None:
                gendiff = dict(gendiff)
                gendiff.setdefault("orders", [2])
        except (ValueError, KeyError) as exc:
            raise ConfigError(f"invalid config: {exc}") from None
        return cls(td=td, signal=signal, grid=grid,
                   ensemble=dict(DEFAULT_ENSEMBLE, **data.get("ensemble", {})),
                   bounds=bounds, certificate=cert, gendiff=gendiff,
                   outputs=data.get("outputs", "out"), name=data.get("name", ""))

    def to_dict(self) -> dict:
        cert = self.certificate
        if isinstance(cert, LyapunovCertificate):
            cert = cert.to_dict()
        out = {
            "name": self.name,
            "td": self.td.to_dict(),
            "signal": self.signal.to_dict(),
            "grid": self.grid.to_dict(),
            "ensemble": dict(self.ensemble),
            "bounds": dict(self.bounds),
            "certificate": cert,
            "outputs": self.outputs,
        }
        if self.gendiff is not None:
            out["gendiff"] = dict(self.gendiff)
        return out

    @property
    def digest(self) -> str:
        return canonical_digest(self.to_dict())

    def resolve_certificate(self):
        """Return ``(certificate, Q)``; ``Q`` only for auto-built linear certificates.

        ``(None, None)`` when no certificate is available (nonlinear design
        without an explicit certificate).
        """
        theta = self.bounds["theta"]
        if isinstance(self.certificate, LyapunovCertificate):
            return self.certificate.with_theta(theta), None
        if self.certificate == "auto" and self.td.f.kind == "linear":
            Q, cert = solve_lyapunov(LinearDesign(self.td.f.coefficients), theta=theta)
            return cert, Q
        return None, None


def load_config(source) -> ExperimentConfig:
    """Load a config from a JSON file path or a bundled preset name."""
    path = Path(source)
    if not path.exists() and str(source) in PRESETS:
        path = preset_path(str(source))
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file {source} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {source} is not valid JSON: {exc}") from None
    return ExperimentConfig.from_dict(data)
