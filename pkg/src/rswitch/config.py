"""Run configuration read from a YAML file.

Schema (every section optional except ``model``)::

    model:
      family: [negbin, negbin]     # one entry for a single-state model
      outcomes: 3                  # MNL only
      restrictions:                # slot -> free | zero | -inf | tie:<slot>
        beta0[2]: zero
    layout:
      kind: weekly                 # annual | weekly | severity | intervals
      boundaries: [1, 14, 45, 301] # intervals only
      tie: {3: 1}                  # intervals only, counted from 1
      restricted: true             # intervals only
    prior:
      mu: {beta1[0]: 0.5}
      sigma2: {beta1[0]: 4.0}
      transition: [1, 1, 1, 1]     # upsilon0, nu0, upsilon1, nu1
    sampler:                       # fields of SamplerConfig
      G: 20000
      G_bi: 2000
      thin: 3
      tau_block: 10
      n_chains: 8
      seed: 0
      label_swap: true             # exchange-the-labels Metropolis step
    analysis:
      delta: 5.0
      level: 0.05
      bootstrap_draws: 100000
      subsample_fraction: 0.01
      gof_replicates: 10000
    simulate:                      # read by ``rswitch simulate`` only
      T: 200                       # periods
      N: 20                        # units per period
      K: 3                         # covariates including the intercept
      free: [...]                  # true free coefficients, in free_names order
      p01: 0.1
      p10: 0.4
      per_unit: true               # covariates vary by unit as well as period
      design_seed: 0               # defaults to the sampler seed

Families: poisson, negbin, zip_tau, zip_gamma, zinb_tau, zinb_gamma, mnl and
zero_only. A ``-inf`` restriction on the state-0 intercept makes state 0
zero_only.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .baseline_mle import baseline_spec, fit_mle
from .data import Dataset
from .errors import SpecificationError
from .model_core import Family, ModelSpec
from .priors import PriorSpec, TransitionPrior, prior_from_estimates
from .sampler import SamplerConfig
from .switching import (SwitchingLayout, build_annual_layout, build_interval_layout,
                        build_weekly_layout)

LAYOUT_KINDS = ("annual", "weekly", "severity", "intervals")


@dataclass
class AnalysisOptions:
    delta: float = 5.0
    level: float = 0.05
    bootstrap_draws: int = 100_000
    subsample_fraction: float = 0.01
    gof_replicates: int = 10_000


@dataclass
class RunConfig:
    """Parsed run configuration.

    ``raw`` keeps the mapping the object was built from. :meth:`digest`
    hashes the normalized form, so defaults spelled out or omitted give the
    same hash.
    """

    families: list[str]
    outcomes: int | None = None
    restrictions: dict[str, str] = field(default_factory=dict)
    layout_kind: str = "weekly"
    boundaries: list[int] | None = None
    tie: dict[int, int] = field(default_factory=dict)
    restricted: bool = True
    prior_mu: dict[str, float] = field(default_factory=dict)
    prior_sigma2: dict[str, float] = field(default_factory=dict)
    transition_prior: list[float] = field(default_factory=lambda: [1.0, 1.0, 1.0, 1.0])
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    analysis: AnalysisOptions = field(default_factory=AnalysisOptions)
    raw: dict = field(default_factory=dict, repr=False)

    # ------------------------------------------------------------ building
    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "RunConfig":
        d = dict(d or {})
        # a 'simulate' section is read by the simulate command only
        unknown = set(d) - {"model", "layout", "prior", "sampler", "analysis", "simulate"}
        if unknown:
            raise SpecificationError(f"unknown config sections {sorted(unknown)}")
        model = d.get("model") or {}
        fams = model.get("family")
        if fams is None:
            raise SpecificationError("model.family is required")
        fams = [fams] if isinstance(fams, str) else list(fams)
        if not 1 <= len(fams) <= 2:
            raise SpecificationError("model.family takes one or two families")
        lay = d.get("layout") or {}
        kind = str(lay.get("kind", "weekly"))
        if kind not in LAYOUT_KINDS:
            raise SpecificationError(f"layout.kind must be one of {LAYOUT_KINDS}")
        prior = d.get("prior") or {}
        trans = [float(v) for v in prior.get("transition", [1, 1, 1, 1])]
        if len(trans) != 4:
            raise SpecificationError("prior.transition takes four Beta shapes")
        try:
            sampler = SamplerConfig(**(d.get("sampler") or {}))
            analysis = AnalysisOptions(**(d.get("analysis") or {}))
        except TypeError as exc:
            raise SpecificationError(str(exc)) from None
        cfg = cls(
            families=[str(f) for f in fams],
            outcomes=model.get("outcomes"),
            restrictions={str(k): str(v) for k, v in (model.get("restrictions") or {}).items()},
            layout_kind=kind,
            boundaries=lay.get("boundaries"),
            tie={int(k): int(v) for k, v in (lay.get("tie") or {}).items()},
            restricted=bool(lay.get("restricted", True)),
            prior_mu={str(k): float(v) for k, v in (prior.get("mu") or {}).items()},
            prior_sigma2={str(k): float(v) for k, v in (prior.get("sigma2") or {}).items()},
            transition_prior=trans,
            sampler=sampler,
            analysis=analysis,
            raw=d,
        )
        for f in cfg.families:
            Family(f)
        if kind == "intervals" and not cfg.boundaries:
            raise SpecificationError("interval layouts need layout.boundaries")
        return cfg

    def to_dict(self) -> dict:
        model = {"family": list(self.families), "restrictions": dict(self.restrictions)}
        if self.outcomes is not None:
            model["outcomes"] = int(self.outcomes)
        lay = {"kind": self.layout_kind}
        if self.layout_kind == "intervals":
            lay.update(boundaries=list(self.boundaries), tie=dict(self.tie),
                       restricted=self.restricted)
        return {"model": model, "layout": lay,
                "prior": {"mu": dict(self.prior_mu), "sigma2": dict(self.prior_sigma2),
                          "transition": list(self.transition_prior)},
                "sampler": dataclasses.asdict(self.sampler),
                "analysis": dataclasses.asdict(self.analysis)}

    # ------------------------------------------------------------- derived
    def spec(self, covariate_count: int) -> ModelSpec:
        """Model spec for data with ``covariate_count`` columns (intercept included)."""
        f1 = self.families[1] if len(self.families) == 2 else None
        return ModelSpec(self.families[0], f1, covariate_count, self.restrictions,
                         self.outcomes)

    def layout(self, data: Dataset) -> SwitchingLayout | None:
        """Layout matching the data, or ``None`` for single-state models."""
        if len(self.families) == 1:
            return None
        if self.layout_kind == "annual":
            return build_annual_layout(data.T, data.N)
        counts = np.bincount(data.t - 1, minlength=data.T)
        if self.layout_kind in ("weekly", "severity"):
            return build_weekly_layout(data.T, counts)
        return build_interval_layout(self.boundaries, self.tie, self.restricted, counts)

    def prior(self, spec: ModelSpec, data: Dataset) -> PriorSpec:
        """Prior derived from a single-state maximum-likelihood fit plus overrides."""
        state = 1 if spec.switching else 0
        fit = fit_mle(baseline_spec(spec, state), data)
        est, var = fit.as_dicts()
        return prior_from_estimates(spec, est, var,
                                    {"mu": self.prior_mu, "sigma2": self.prior_sigma2},
                                    TransitionPrior(*self.transition_prior))

    def digest(self) -> str:
        """SHA-256 of the canonical JSON form of the configuration."""
        text = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()


def load_config(path: str | Path) -> RunConfig:
    with Path(path).open(encoding="utf-8") as fh:
        return RunConfig.from_dict(yaml.safe_load(fh) or {})


def save_config(cfg: RunConfig, path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        yaml.safe_dump(cfg.to_dict(), fh, sort_keys=False)
