"""Certify, simulate and analyze an experiment configuration."""

from __future__ import annotations

from .analysis import StabilityReport, analyze
from .bounds import BoundSet, GainCertificate, certify, compute_bounds
from .config import ExperimentConfig
from .sim import SimTrace, run


def certify_config(cfg: ExperimentConfig) -> tuple[BoundSet, GainCertificate]:
    bounds = compute_bounds(cfg.robot, cfg.envelope, cfg.disturbance, use_b_c=cfg.certify.use_b_c)
    return bounds, certify(bounds, cfg.pi_gains, cfg.certify.epsilon)


def simulate_config(cfg: ExperimentConfig) -> SimTrace:
    return run(cfg.sim, cfg.trajectory, cfg.kin_gains, cfg.pi_gains, cfg.disturbance, cfg.robot)


def analyze_config(cfg: ExperimentConfig, trace: SimTrace) -> StabilityReport:
    bounds, cert = certify_config(cfg)
    report = analyze(trace, cfg.pi_gains, bounds, cert, cfg.robot, cfg.envelope, cfg.analysis.t_start)
    report.diagnostics["bounds"] = bounds.to_dict()
    report.diagnostics["certificate"] = cert.to_dict()
    return report
