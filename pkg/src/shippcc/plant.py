"""Right-hand side and algebraic residuals of the ship-engine + capture plant DAE.

All functions are pure and vectorised over any number of leading batch
dimensions. Concentration blocks are laid out as ``(..., 4, n_layers)`` in the
component order N2, CO2, MEA, H2O; layer 0 is the top of a column.

Differential state (103):
    0-49    absorber: liquid C (N2, CO2, MEA, H2O) x 5 layers, T_L x 5,
            gas C x 5 layers, T_G x 5
    50-99   desorber, same layout
    100     lean-rich exchanger tube temperature (rich side)
    101     lean-rich exchanger shell temperature (lean side)
    102     reboiler temperature
Algebraic state (7): reboiler liquid C (N2, CO2, MEA, H2O), vapour fraction,
liquid CO2 mole fraction, vapour volumetric flow.
"""
from __future__ import annotations

import numpy as np

from .params import (
    CO2, H2O, MEA, N2, R_GAS,
    ClosureParams, ColumnParams, EngineParams, HxParams, PlantParams, ReboilerParams,
)

NX, NZ, NU, NY = 103, 7, 3, 2
N_LAYERS = 5
ABS, DES = 0, 50
I_T_TUBE, I_T_SHELL, I_T_REB = 100, 101, 102

U_LOWER = np.array([0.02, 0.194, 0.02])
U_UPPER = np.array([0.04, 0.333, 0.04])
U_NOMINAL = 0.5 * (U_LOWER + U_UPPER)
P_NOMINAL = 0.55

T_MIN, T_MAX = 273.0, 473.0
FLOW_FLOOR = 1e-9
_EPS = 1e-12


class InputDomainError(ValueError):
    """An argument lies outside the domain an equation is defined on."""


class SingularInputError(ValueError):
    """An argument makes an equation singular (e.g. a zero divisor flow)."""


class UndefinedRateError(ValueError):
    """A ratio is requested where its denominator vanishes."""


# ---------------------------------------------------------------- state layout

def column_slice(kind: str) -> slice:
    off = ABS if kind == "absorber" else DES
    return slice(off, off + 50)


def unpack_column(xc: np.ndarray):
    """Split a 50-wide column block into (C_L, T_L, C_G, T_G)."""
    C_L = xc[..., 0:20].reshape(xc.shape[:-1] + (4, N_LAYERS))
    T_L = xc[..., 20:25]
    C_G = xc[..., 25:45].reshape(xc.shape[:-1] + (4, N_LAYERS))
    T_G = xc[..., 45:50]
    return C_L, T_L, C_G, T_G


def pack_column(C_L, T_L, C_G, T_G) -> np.ndarray:
    lead = T_L.shape[:-1]
    return np.concatenate(
        [C_L.reshape(lead + (20,)), T_L, C_G.reshape(lead + (20,)), T_G], axis=-1
    )


def temperature_indices() -> np.ndarray:
    idx = [ABS + 20 + n for n in range(5)] + [ABS + 45 + n for n in range(5)]
    idx += [DES + 20 + n for n in range(5)] + [DES + 45 + n for n in range(5)]
    return np.array(idx + [I_T_TUBE, I_T_SHELL, I_T_REB])


def concentration_indices() -> np.ndarray:
    mask = np.ones(NX, bool)
    mask[temperature_indices()] = False
    return np.flatnonzero(mask)


# ---------------------------------------------------------------- engine side

def _check_finite(name: str, v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if not np.all(np.isfinite(v)):
        raise InputDomainError(f"{name} must be finite")
    return v


def flue_gas_rates(phi_E, ep: EngineParams):
    """CO2 mass flow (kg/s) and flue-gas volumetric flow (m3/s) at engine load ``phi_E``."""
    phi = _check_finite("phi_E", phi_E)
    if np.any(phi < 0) or np.any(phi > 1):
        raise InputDomainError(f"phi_E must lie in [0, 1], got {phi}")
    co2_rate = ep.r_CO2 / (3600.0 * ep.r_C) * ep.q_fuel_C * phi * ep.n_engines * ep.Q_E * ep.W_SFOC
    F_G = co2_rate / (ep.q_flue_CO2 * ep.rho_flue)
    return {"co2_rate": co2_rate, "F_G": F_G}


def heat_supply(F_G, F_fuel, ep: EngineParams):
    """Recovered waste heat, turbine heat and total reboiler duty, all in kW."""
    F_G = _check_finite("F_G", F_G)
    F_fuel = _check_finite("F_fuel", F_fuel)
    if np.any(F_G < 0) or np.any(F_fuel < 0):
        raise InputDomainError("flows must be non-negative")
    Q_rec = ep.rho_flue * ep.cp_flue * F_G * (ep.T_rec_in - ep.T_rec_out)
    Q_turbine = ep.eta_fuel * F_fuel * (ep.h_steam - ep.h_water) / ep.h_steam
    return {"Q_rec": Q_rec, "Q_turbine": Q_turbine, "Q_reb": Q_rec + Q_turbine}


def flue_gas_inlet(phi_E, params: PlantParams):
    """Absorber gas-inlet concentrations (..., 4) and temperature.

    The CO2 concentration is fixed so that ``r_CO2 * C_CO2 * F_G`` equals the
    CO2 mass flow, which keeps the capture rate zero when nothing is absorbed.
    """
    ep, fd = params.engine, params.feed
    phi = np.asarray(phi_E, dtype=float)
    c_tot = fd.P_gas / (R_GAS * fd.T_gas_in)
    c_co2 = ep.q_flue_CO2 * ep.rho_flue / ep.r_CO2
    c_h2o = fd.y_H2O * c_tot
    C = np.empty(phi.shape + (4,))
    C[..., N2] = c_tot - c_co2 - c_h2o
    C[..., CO2] = c_co2
    C[..., MEA] = 0.0
    C[..., H2O] = c_h2o
    return C, np.full(phi.shape, fd.T_gas_in)


# ---------------------------------------------------------------- closures

def co2_equilibrium(C_CO2, C_MEA, T, cp: ClosureParams):
    """Gas-phase CO2 concentration (kmol/m3) in equilibrium with loaded MEA."""
    theta = C_CO2 / np.maximum(C_MEA, 1e-6)
    K = cp.K_eq_ref * np.exp(-cp.dH_eq_over_R * (1.0 / T - 1.0 / cp.T_eq_ref))
    return K * theta * np.exp(cp.kappa_loading * theta)


def vapour_pressure(T, Tb, dHv_over_R):
    """Clausius-Clapeyron vapour pressure in kPa, anchored at 101.325 kPa at ``Tb``."""
    return 101.325 * np.exp(dHv_over_R * (1.0 / Tb - 1.0 / T))


def film_coefficients(F_L, F_G, col: ColumnParams, cp: ClosureParams):
    """Gas- and liquid-film mass-transfer coefficients (m/s)."""
    uG = np.maximum(np.asarray(F_G, float), FLOW_FLOOR) / col.area
    uL = np.maximum(np.asarray(F_L, float), FLOW_FLOOR) / col.area
    k_G = cp.k_G_const * cp.kG_coef * (uG / cp.uG_ref) ** cp.kG_exponent
    k_L = cp.k_L_const * cp.kL_coef * (uL / cp.uL_ref) ** cp.kL_exponent
    return k_G, k_L


def transfer_closures(C_L, C_G, T_L, T_G, F_L, F_G, cp: ClosureParams, col: ColumnParams):
    """Interfacial fluxes for a stack of layers.

    ``C_L``, ``C_G`` have shape (..., 4, n); temperatures (..., n); flows are
    broadcastable to the leading shape. Returns the molar flux ``N`` (positive
    from gas into liquid, kmol/(m2 s)), the sensible heat fluxes ``Q_L`` and
    ``Q_G`` (kW/m2, zero when the phases share a temperature) and ``Q_phase``,
    the heat released into the liquid by absorption and condensation.
    """
    k_G, k_L = film_coefficients(F_L, F_G, col, cp)
    k_G = np.asarray(k_G)[..., None]
    k_L = np.asarray(k_L)[..., None]

    c_liq = np.maximum(C_L.sum(axis=-2), _EPS)
    x = C_L / c_liq[..., None, :]
    theta = C_L[..., CO2, :] / np.maximum(C_L[..., MEA, :], 1e-6)

    if col.kind == "absorber":
        E = cp.E0_abs * np.maximum(1.0 - 2.0 * theta, cp.free_amine_floor)
    else:
        E = cp.E_des_scale * cp.E0_des * np.ones_like(theta)
    K_co2 = 1.0 / (1.0 / k_G + cp.m_CO2 / (E * k_L))

    N = np.zeros(C_L.shape)
    N[..., CO2, :] = K_co2 * (C_G[..., CO2, :] - co2_equilibrium(C_L[..., CO2, :], C_L[..., MEA, :], T_L, cp))
    RT = R_GAS * T_L
    N[..., H2O, :] = k_G * (C_G[..., H2O, :] - x[..., H2O, :] * vapour_pressure(T_L, cp.Tb_H2O, cp.dHv_over_R_H2O) / RT)
    N[..., MEA, :] = k_G * (C_G[..., MEA, :] - x[..., MEA, :] * vapour_pressure(T_L, cp.Tb_MEA, cp.dHv_over_R_MEA) / RT)

    h = cp.h_int_scale * cp.h0
    Q_G = h * (T_L - T_G)
    Q_L = -Q_G
    Q_phase = cp.dH_abs_CO2 * N[..., CO2, :] + cp.dH_vap_H2O * N[..., H2O, :] + cp.dH_vap_MEA * N[..., MEA, :]
    return {"N": N, "Q_L": Q_L, "Q_G": Q_G, "Q_phase": Q_phase}


# ---------------------------------------------------------------- units

def column_derivatives(col: ColumnParams, C_L, T_L, C_G, T_G, liquid_inlet, gas_inlet,
                       F_L, F_G, cp: ClosureParams, transfer: bool = True, fluxes=None):
    """Time derivatives of one packed section discretised by first-order upwinding.

    Liquid enters layer 0 and flows down; gas enters the last layer and flows
    up. ``liquid_inlet``/``gas_inlet`` are ``(C (..., 4), T (...))`` pairs.
    ``transfer=False`` switches every interfacial flux off; ``fluxes`` may
    supply precomputed closure output instead.
    """
    n = T_L.shape[-1]
    dl = col.l / n
    F_L = np.asarray(F_L, float)
    F_G = np.asarray(F_G, float)
    vL = (4.0 * F_L / (np.pi * col.D_c**2) / dl)[..., None]
    vG = (4.0 * F_G / (np.pi * col.D_c**2) / dl)[..., None]

    CLin, TLin = liquid_inlet
    CGin, TGin = gas_inlet
    CL_up = np.concatenate([np.asarray(CLin)[..., :, None], C_L[..., :, :-1]], axis=-1)
    TL_up = np.concatenate([np.asarray(TLin)[..., None], T_L[..., :-1]], axis=-1)
    CG_up = np.concatenate([C_G[..., :, 1:], np.asarray(CGin)[..., :, None]], axis=-1)
    TG_up = np.concatenate([T_G[..., 1:], np.asarray(TGin)[..., None]], axis=-1)

    dC_L = vL[..., None, :] * (CL_up - C_L)
    dC_G = vG[..., None, :] * (CG_up - C_G)
    dT_L = vL * (TL_up - T_L)
    dT_G = vG * (TG_up - T_G)

    if transfer:
        fl = fluxes if fluxes is not None else transfer_closures(C_L, C_G, T_L, T_G, F_L, F_G, cp, col)
        a = col.a_I
        cpL = np.asarray(col.cp_liquid)[:, None]
        cpG = np.asarray(col.cp_gas)[:, None]
        heat_L = np.maximum((C_L * cpL).sum(axis=-2), 1.0)
        heat_G = np.maximum((C_G * cpG).sum(axis=-2), 1e-3)
        dC_L = dC_L + fl["N"] * a
        dC_G = dC_G - fl["N"] * a
        dT_L = dT_L + (fl["Q_L"] + fl["Q_phase"]) * a / heat_L
        dT_G = dT_G + fl["Q_G"] * a / heat_G
    return dC_L, dT_L, dC_G, dT_G


def seawater_hx_outlet(T_sol_in, F_sw, F_L, hx: HxParams):
    """Lean-solvent temperature after the seawater cooler (K)."""
    F_L = np.asarray(F_L, float)
    if np.any(F_L == 0):
        raise SingularInputError("solvent flow F_L must be non-zero in the seawater exchanger")
    ratio = (hx.rho_sw * np.asarray(F_sw, float) * hx.cp_sw) / (hx.rho_sol * F_L * hx.cp_sol)
    return np.asarray(T_sol_in, float) + ratio * (hx.T_sw_in - hx.T_sw_out)


def lean_rich_hx_derivatives(T_tube, T_shell, T_rich_in, T_lean_in, F_rich, F_lean, hx: HxParams):
    """Two lumped volumes coupled by ``U``: rich solvent in the tube, lean in the shell."""
    rc = hx.rho_sol * hx.cp_sol
    dT_tube = (rc * F_rich * (T_rich_in - T_tube) + hx.U * (T_shell - T_tube)) / (rc * hx.V_tube)
    dT_shell = (rc * F_lean * (T_lean_in - T_shell) - hx.U * (T_shell - T_tube)) / (rc * hx.V_shell)
    return dT_tube, dT_shell


def boilup_fraction(T, rp: ReboilerParams):
    return rp.q_max / (1.0 + np.exp(-(T - rp.T_boil) / rp.tau))


def vapour_composition(m, rp: ReboilerParams):
    am = np.asarray(rp.alpha) * m
    return am / np.maximum(am.sum(axis=-1, keepdims=True), _EPS)


def reboiler_residuals(T_reb, z, C_in, T_in, F_L, Q_reb, rp: ReboilerParams):
    """Reboiler balances with no vapour or liquid holdup.

    Returns ``dM`` (component accumulation, kmol/s; zero for N2 and CO2 when the
    flash closure holds, the make-up rate with opposite sign for MEA and H2O),
    ``dT`` (K/s) and the 7 algebraic residuals ``g``:

        g0, g1  flash balances for N2 and CO2
        g2      lean MEA mole fraction held by solvent make-up
        g3      liquid molar density
        g4      boil-up fraction curve
        g5      liquid CO2 mole fraction
        g6      vapour volumetric flow at reboiler pressure
    """
    C_in = np.asarray(C_in, float)
    c_in = np.maximum(C_in.sum(axis=-1), _EPS)
    m_in = C_in / c_in[..., None]
    F_in = np.asarray(F_L, float) * c_in  # kmol/s
    c = z[..., 0:4]
    q = z[..., 4]
    c_tot = np.maximum(c.sum(axis=-1), _EPS)
    m = c / c_tot[..., None]
    y = vapour_composition(m, rp)

    flash = m_in - q[..., None] * y - (1.0 - q[..., None]) * m
    g = np.empty(z.shape)
    g[..., 0] = flash[..., N2]
    g[..., 1] = flash[..., CO2]
    g[..., 2] = m[..., MEA] - rp.x_MEA_lean
    g[..., 3] = c_tot / rp.rho_reb - 1.0
    g[..., 4] = q - boilup_fraction(T_reb, rp)
    g[..., 5] = z[..., 5] - m[..., CO2]
    g[..., 6] = z[..., 6] - q * F_in * R_GAS * T_reb / rp.P_reb

    H_L_in = rp.cp_L * (T_in - rp.T_ref)
    H_L = rp.cp_L * (T_reb - rp.T_ref)
    H_V = rp.cp_V * (T_reb - rp.T_ref) + (y * np.asarray(rp.latent)).sum(axis=-1)
    F_V = q * F_in
    F_Lo = (1.0 - q) * F_in
    dT = (F_in * H_L_in - F_V * H_V - F_Lo * H_L + Q_reb) / (rp.rho_reb * rp.cp_reb * rp.V_reb)
    dM = F_in[..., None] * flash
    return {"dM": dM, "dT": dT, "g": g, "y": y, "F_in": F_in}


# ---------------------------------------------------------------- assembly

def plant_dae(x, z, u, p, params: PlantParams, transfer: bool = True):
    """Full semi-explicit DAE: returns ``(xdot, g)`` with shapes (..., 103), (..., 7)."""
    x = np.asarray(x, float)
    z = np.asarray(z, float)
    u = np.asarray(u, float)
    p = np.asarray(p, float)
    F_L, F_fuel, F_sw = u[..., 0], u[..., 1], u[..., 2]
    rates = flue_gas_rates(p, params.engine)
    F_G = rates["F_G"]
    Q_reb = heat_supply(F_G, F_fuel, params.engine)["Q_reb"]
    hx, rp, cp = params.hx, params.reboiler, params.closure

    T_tube, T_shell, T_reb = x[..., I_T_TUBE], x[..., I_T_SHELL], x[..., I_T_REB]
    aCL, aTL, aCG, aTG = unpack_column(x[..., ABS:ABS + 50])
    dCL, dTL, dCG, dTG = unpack_column(x[..., DES:DES + 50])

    # reboiler, fed by the desorber bottom liquid
    reb = reboiler_residuals(T_reb, z, dCL[..., :, -1], dTL[..., -1], F_L, Q_reb, rp)

    # absorber: lean solvent from the reboiler via both exchangers; flue gas at the bottom
    T_lean = seawater_hx_outlet(T_shell, F_sw, F_L, hx)
    gas_in = flue_gas_inlet(p, params)
    a_der = column_derivatives(params.absorber, aCL, aTL, aCG, aTG,
                               (z[..., 0:4], T_lean), gas_in, F_L, F_G, cp, transfer)

    # desorber: rich solvent through the exchanger tube; reboiler vapour at the bottom
    c_vap = reb["y"] * (rp.P_reb / (R_GAS * T_reb))[..., None]
    d_der = column_derivatives(params.desorber, dCL, dTL, dCG, dTG,
                               (aCL[..., :, -1], T_tube), (c_vap, T_reb), F_L, z[..., 6], cp, transfer)

    dT_tube, dT_shell = lean_rich_hx_derivatives(T_tube, T_shell, aTL[..., -1], T_reb, F_L, F_L, hx)

    xdot = np.empty(x.shape)
    xdot[..., ABS:ABS + 50] = pack_column(*a_der)
    xdot[..., DES:DES + 50] = pack_column(*d_der)
    xdot[..., I_T_TUBE] = dT_tube
    xdot[..., I_T_SHELL] = dT_shell
    xdot[..., I_T_REB] = reb["dT"]
    return xdot, reb["g"]


def outputs(x, p, ep: EngineParams):
    """Controlled outputs ``[F_CO2_out (kg/s), T_reb (K)]``."""
    x = np.asarray(x, float)
    F_G = flue_gas_rates(p, ep)["F_G"]
    y = np.empty(x.shape[:-1] + (NY,))
    y[..., 0] = ep.r_CO2 * x[..., ABS + 25 + 5 * CO2] * F_G
    y[..., 1] = x[..., I_T_REB]
    return y


def capture_rate(y, p, ep: EngineParams):
    """Fraction of the inlet CO2 that is not released with the treated gas."""
    co2 = flue_gas_rates(p, ep)["co2_rate"]
    if np.any(np.asarray(co2) <= 0):
        raise UndefinedRateError("capture rate is undefined at zero CO2 inflow")
    return (co2 - np.asarray(y)[..., 0]) / co2


def is_diverged(x) -> np.ndarray:
    """True where any temperature leaves (273, 473) K or a value is non-finite."""
    x = np.asarray(x)
    T = x[..., temperature_indices()]
    bad = (T <= T_MIN) | (T >= T_MAX)
    return np.any(bad, axis=-1) | ~np.all(np.isfinite(x), axis=-1)
