"""Plant parameter sets and their YAML configuration.

Every physical constant of the ship-engine system and the capture plant lives
here. The truth simulator and the imperfect first-principles model share one
code path and differ only through :class:`ClosureParams`.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields, replace
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np
import yaml

R_GAS = 8.314  # kJ/(kmol K)

# component order used by every concentration block
COMPONENTS = ("N2", "CO2", "MEA", "H2O")
N2, CO2, MEA, H2O = range(4)


class ParameterError(ValueError):
    """A parameter set violates one of its invariants."""


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ParameterError(msg)


def _all_positive(obj, prefix: str) -> None:
    for f in fields(obj):
        v = getattr(obj, f.name)
        if isinstance(v, (int, float)) and not isinstance(v, bool):
            _require(np.isfinite(v) and v > 0, f"{prefix}.{f.name} must be positive, got {v}")


@dataclass(frozen=True)
class EngineParams:
    Q_E: float = 10800.0  # kW per engine at full load
    W_SFOC: float = 0.1775  # kg/kWh
    q_fuel_C: float = 0.8486
    r_C: float = 12.01
    r_CO2: float = 44.01
    q_flue_CO2: float = 0.05462
    rho_flue: float = 1.0  # kg/m3
    cp_flue: float = 1.1  # kJ/(kg K)
    T_rec_in: float = 633.15
    T_rec_out: float = 423.15
    eta_fuel: float = 42700.0  # kJ/kg
    h_steam: float = 2763.0  # kJ/kg, saturated at 6 barG
    h_water: float = 697.0
    n_engines: int = 2

    def validate(self) -> None:
        _all_positive(self, "engine")
        _require(self.T_rec_in > self.T_rec_out, "engine.T_rec_in must exceed T_rec_out")
        _require(self.h_steam > self.h_water, "engine.h_steam must exceed h_water")
        _require(0 < self.q_flue_CO2 < 1, "engine.q_flue_CO2 must lie in (0, 1)")
        _require(0 < self.q_fuel_C < 1, "engine.q_fuel_C must lie in (0, 1)")


@dataclass(frozen=True)
class ColumnParams:
    kind: str
    D_c: float
    l: float = 12.5
    a_I: float = 143.9
    n_layers: int = 5
    # molar heat capacities, kJ/(kmol K), order N2, CO2, MEA, H2O
    cp_liquid: tuple[float, ...] = (29.1, 40.0, 165.0, 75.3)
    cp_gas: tuple[float, ...] = (29.1, 37.1, 100.0, 33.6)

    @property
    def area(self) -> float:
        return float(np.pi * self.D_c**2 / 4.0)

    def validate(self) -> None:
        _require(self.kind in ("absorber", "desorber"), f"unknown column kind {self.kind!r}")
        _require(self.D_c > 0 and self.l > 0 and self.a_I > 0, f"{self.kind}: geometry must be positive")
        _require(self.n_layers == 5, f"{self.kind}: n_layers must be 5")
        _require(len(self.cp_liquid) == 4 and len(self.cp_gas) == 4, f"{self.kind}: need 4 heat capacities")
        _require(min(self.cp_liquid) > 0 and min(self.cp_gas) > 0, f"{self.kind}: heat capacities must be positive")


@dataclass(frozen=True)
class ClosureParams:
    """Mass- and heat-transfer closure constants.

    The first four fields are the ones perturbed in the imperfect model; the
    rest shape the surrogate correlations and are shared by both variants.
    """

    k_G_const: float = 5.23
    k_L_const: float = 0.0051
    h_int_scale: float = 1.0
    E_des_scale: float = 1.0
    # film coefficients (m/s): k = const * coef * (u / u_ref) ** exponent
    kG_coef: float = 3.1e-4
    kL_coef: float = 0.0133
    uG_ref: float = 1.0
    uL_ref: float = 1.0e-3
    kG_exponent: float = 0.7
    kL_exponent: float = 0.5
    # gas/liquid distribution slope for CO2 and enhancement factors
    m_CO2: float = 1.0
    E0_abs: float = 30.0
    E0_des: float = 5.0
    free_amine_floor: float = 0.05
    # CO2 over loaded MEA: C* = K_ref exp(-dH/R (1/T - 1/T_ref)) theta exp(kappa theta)
    K_eq_ref: float = 8.4e-8
    T_eq_ref: float = 313.15
    dH_eq_over_R: float = 10000.0
    kappa_loading: float = 21.0
    # Clausius-Clapeyron vapour pressures for H2O and MEA
    Tb_H2O: float = 373.15
    dHv_over_R_H2O: float = 4890.0
    Tb_MEA: float = 443.0
    dHv_over_R_MEA: float = 6590.0
    # interfacial heat transfer (kW/(m2 K)) and heats released in the liquid (kJ/kmol)
    h0: float = 0.05
    dH_abs_CO2: float = 85000.0
    dH_vap_H2O: float = 40650.0
    dH_vap_MEA: float = 54800.0

    def validate(self) -> None:
        _all_positive(self, "closure")


@dataclass(frozen=True)
class HxParams:
    V_tube: float = 0.0155
    V_shell: float = 0.4172
    U: float = 1899.949  # kW/K
    T_sw_in: float = 308.0
    T_sw_out: float = 323.0
    cp_sw: float = 4.18
    cp_sol: float = 3.9
    rho_sw: float = 1000.0
    rho_sol: float = 1000.0

    def validate(self) -> None:
        _all_positive(self, "hx")
        _require(self.T_sw_out > self.T_sw_in, "hx: T_sw_out must exceed T_sw_in")
        _require(self.rho_sw == self.rho_sol, "hx: seawater and solvent densities must be equal")


@dataclass(frozen=True)
class ReboilerParams:
    V_reb: float = 0.145  # m3
    rho_reb: float = 45.5  # kmol/m3
    cp_reb: float = 88.0  # kJ/(kmol K)
    # affine enthalpies: H_L = cp_L (T - T_ref), H_V = cp_V (T - T_ref) + sum_i y_i latent_i,
    # with the CO2 entry the heat needed to break the CO2-MEA bond
    cp_L: float = 88.0
    cp_V: float = 34.0
    latent: tuple[float, ...] = (1.0, 85000.0, 54800.0, 40650.0)
    T_ref: float = 298.15
    P_reb: float = 190.0  # kPa
    # relative volatilities (N2, CO2, MEA, H2O) at the 120 C reference
    alpha: tuple[float, ...] = (100.0, 8.0, 0.05, 1.0)
    # boil-up curve q_reb = q_max / (1 + exp(-(T - T_boil) / tau))
    q_max: float = 0.9
    T_boil: float = 405.4
    tau: float = 25.0
    # lean MEA mole fraction held by solvent make-up (30 wt% MEA)
    x_MEA_lean: float = 0.112

    def validate(self) -> None:
        _all_positive(self, "reboiler")
        _require(len(self.alpha) == 4 and min(self.alpha) > 0, "reboiler: need 4 positive volatilities")
        _require(len(self.latent) == 4 and min(self.latent) > 0, "reboiler: need 4 positive latent heats")
        _require(self.q_max <= 1, "reboiler: q_max must lie in (0, 1]")
        _require(self.x_MEA_lean < 1, "reboiler: x_MEA_lean must lie in (0, 1)")


@dataclass(frozen=True)
class FeedParams:
    """Absorber gas-inlet conditions after the flue-gas cooler."""

    T_gas_in: float = 313.15
    P_gas: float = 101.325  # kPa
    y_H2O: float = 0.08

    def validate(self) -> None:
        _require(self.T_gas_in > 0 and self.P_gas > 0, "feed: T and P must be positive")
        _require(0 <= self.y_H2O < 1, "feed: y_H2O must lie in [0, 1)")


@dataclass(frozen=True)
class PlantParams:
    engine: EngineParams = field(default_factory=EngineParams)
    absorber: ColumnParams = field(default_factory=lambda: ColumnParams("absorber", 4.2))
    desorber: ColumnParams = field(default_factory=lambda: ColumnParams("desorber", 4.9))
    closure: ClosureParams = field(default_factory=ClosureParams)
    hx: HxParams = field(default_factory=HxParams)
    reboiler: ReboilerParams = field(default_factory=ReboilerParams)
    feed: FeedParams = field(default_factory=FeedParams)
    name: str = "truth"

    def validate(self) -> "PlantParams":
        for part in (self.engine, self.absorber, self.desorber, self.closure, self.hx, self.reboiler, self.feed):
            part.validate()
        return self

    @property
    def is_imperfect(self) -> bool:
        return self.name == "imperfect"

    def with_closure(self, name: str | None = None, **changes: float) -> "PlantParams":
        return replace(self, closure=replace(self.closure, **changes), name=name or self.name)


# the four constants that define the imperfect model: absolute values for the
# film constants, multipliers for the two scales
IMPERFECT_CLOSURE = {"k_G_const": 3.08, "k_L_const": 0.0031, "h_int_scale": 0.8, "E_des_scale": 1.05}
_ABSOLUTE = ("k_G_const", "k_L_const")


def imperfect_from(truth: PlantParams, strength: float = 1.0, spec: dict | None = None) -> PlantParams:
    """Imperfect variant of ``truth``.

    ``strength`` interpolates each perturbation geometrically between the truth
    value (0) and the full imperfect value (1); used for perturbation sweeps.
    """
    spec = {**IMPERFECT_CLOSURE, **(spec or {})}
    c = truth.closure
    changes = {}
    for key, value in spec.items():
        base = getattr(c, key)
        target = value if key in _ABSOLUTE else base * value
        changes[key] = base if strength == 0 else (target if strength == 1 else base * (target / base) ** strength)
    return truth.with_closure(name="imperfect", **changes).validate()


def _build(cls, data: dict[str, Any] | None, **defaults):
    data = dict(data or {})
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ParameterError(f"unknown keys for {cls.__name__}: {sorted(unknown)}")
    for k, v in data.items():
        if isinstance(v, list):
            data[k] = tuple(float(e) for e in v)
    return cls(**{**defaults, **data})


def params_from_dict(cfg: dict[str, Any], param_set: str = "truth") -> PlantParams:
    """Build a validated parameter set from a parsed config mapping."""
    if param_set not in ("truth", "imperfect"):
        raise ParameterError(f"param_set must be 'truth' or 'imperfect', got {param_set!r}")
    allowed = {"engine", "absorber", "desorber", "closure", "hx", "reboiler", "feed", "imperfect"}
    unknown = set(cfg) - allowed
    if unknown:
        raise ParameterError(f"unknown plant sections: {sorted(unknown)}")
    truth = PlantParams(
        engine=_build(EngineParams, cfg.get("engine")),
        absorber=_build(ColumnParams, cfg.get("absorber"), kind="absorber", D_c=4.2),
        desorber=_build(ColumnParams, cfg.get("desorber"), kind="desorber", D_c=4.9),
        closure=_build(ClosureParams, cfg.get("closure")),
        hx=_build(HxParams, cfg.get("hx")),
        reboiler=_build(ReboilerParams, cfg.get("reboiler")),
        feed=_build(FeedParams, cfg.get("feed")),
    ).validate()
    if param_set == "truth":
        return truth
    overrides = cfg.get("imperfect") or {}
    unknown = set(overrides) - set(IMPERFECT_CLOSURE)
    if unknown:
        raise ParameterError(f"imperfect section may only set {sorted(IMPERFECT_CLOSURE)}, got {sorted(unknown)}")
    return imperfect_from(truth, spec=overrides)


def default_config() -> dict[str, Any]:
    text = resources.files("shippcc.data").joinpath("plant.yaml").read_text()
    return yaml.safe_load(text) or {}


def load_params(path: str | Path | None = None, param_set: str = "truth") -> PlantParams:
    """Load a parameter set from a YAML file (the packaged defaults when ``path`` is None).

    The file may hold the plant sections at top level or under a ``plant`` key.
    """
    if path is None:
        cfg = default_config()
    else:
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"parameter file not found: {path}")
        cfg = yaml.safe_load(path.read_text()) or {}
        cfg = cfg.get("plant", cfg)
    return params_from_dict(cfg, param_set)


def param_diff(a: PlantParams, b: PlantParams) -> dict[str, tuple[Any, Any]]:
    """Every scalar that differs between two parameter sets, keyed by dotted path."""
    out = {}
    da, db = dataclasses.asdict(a), dataclasses.asdict(b)
    for section, va in da.items():
        vb = db[section]
        if isinstance(va, dict):
            for k in va:
                if va[k] != vb[k]:
                    out[f"{section}.{k}"] = (va[k], vb[k])
    return out
