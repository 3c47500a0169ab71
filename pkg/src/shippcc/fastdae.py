"""Compiled batch evaluation of the plant DAE.

Same equations as :func:`shippcc.plant.plant_dae`, fused into one loop per
sample so the integrator can evaluate large batches cheaply. The numpy
functions in ``plant`` remain the reference; tests check agreement.
"""
from __future__ import annotations

import math

import numba as nb
import numpy as np

from .params import R_GAS, PlantParams
from .plant import flue_gas_inlet, flue_gas_rates

# slot layout of the packed constant vector
_NAMES = (
    # engine-derived per-unit-load factors
    "fg_per_load", "q_rec_per_fg", "q_turb_per_fuel",
    # feed gas
    "cg_in_n2", "cg_in_co2", "cg_in_mea", "cg_in_h2o", "tg_in",
    # closures
    "kG_pre", "kL_pre", "uG_ref", "uL_ref", "kG_exp", "kL_exp", "m_co2",
    "E0_abs", "E_des", "amine_floor", "K_eq_ref", "T_eq_ref", "dH_eq", "kappa",
    "Tb_h2o", "dHv_h2o", "Tb_mea", "dHv_mea", "h", "dH_abs", "dH_h2o", "dH_mea",
    # columns
    "abs_D", "abs_l", "abs_a", "des_D", "des_l", "des_a",
    "cpl0", "cpl1", "cpl2", "cpl3", "cpg0", "cpg1", "cpg2", "cpg3",
    "dcpl0", "dcpl1", "dcpl2", "dcpl3", "dcpg0", "dcpg1", "dcpg2", "dcpg3",
    # exchangers
    "V_tube", "V_shell", "U", "rc_sol", "sw_ratio", "T_sw_in", "T_sw_out",
    # reboiler
    "V_reb", "rho_reb", "cp_reb", "cp_L", "cp_V", "lat0", "lat1", "lat2", "lat3",
    "T_ref", "P_reb", "al0", "al1", "al2", "al3", "q_max", "T_boil", "tau", "x_mea",
    "R",
)
_SLOT = {n: i for i, n in enumerate(_NAMES)}


def pack_constants(params: PlantParams) -> np.ndarray:
    ep, cp, hx, rp = params.engine, params.closure, params.hx, params.reboiler
    a, d = params.absorber, params.desorber
    C_in, T_in = flue_gas_inlet(np.array(1.0), params)
    v = {
        "fg_per_load": float(flue_gas_rates(np.array(1.0), ep)["F_G"]),
        "q_rec_per_fg": ep.rho_flue * ep.cp_flue * (ep.T_rec_in - ep.T_rec_out),
        "q_turb_per_fuel": ep.eta_fuel * (ep.h_steam - ep.h_water) / ep.h_steam,
        "cg_in_n2": C_in[0], "cg_in_co2": C_in[1], "cg_in_mea": C_in[2], "cg_in_h2o": C_in[3],
        "tg_in": float(T_in),
        "kG_pre": cp.k_G_const * cp.kG_coef, "kL_pre": cp.k_L_const * cp.kL_coef,
        "uG_ref": cp.uG_ref, "uL_ref": cp.uL_ref, "kG_exp": cp.kG_exponent, "kL_exp": cp.kL_exponent,
        "m_co2": cp.m_CO2, "E0_abs": cp.E0_abs, "E_des": cp.E_des_scale * cp.E0_des,
        "amine_floor": cp.free_amine_floor, "K_eq_ref": cp.K_eq_ref, "T_eq_ref": cp.T_eq_ref,
        "dH_eq": cp.dH_eq_over_R, "kappa": cp.kappa_loading,
        "Tb_h2o": cp.Tb_H2O, "dHv_h2o": cp.dHv_over_R_H2O, "Tb_mea": cp.Tb_MEA, "dHv_mea": cp.dHv_over_R_MEA,
        "h": cp.h_int_scale * cp.h0, "dH_abs": cp.dH_abs_CO2, "dH_h2o": cp.dH_vap_H2O, "dH_mea": cp.dH_vap_MEA,
        "abs_D": a.D_c, "abs_l": a.l, "abs_a": a.a_I, "des_D": d.D_c, "des_l": d.l, "des_a": d.a_I,
        "V_tube": hx.V_tube, "V_shell": hx.V_shell, "U": hx.U, "rc_sol": hx.rho_sol * hx.cp_sol,
        "sw_ratio": hx.rho_sw * hx.cp_sw / (hx.rho_sol * hx.cp_sol),
        "T_sw_in": hx.T_sw_in, "T_sw_out": hx.T_sw_out,
        "V_reb": rp.V_reb, "rho_reb": rp.rho_reb, "cp_reb": rp.cp_reb, "cp_L": rp.cp_L, "cp_V": rp.cp_V,
        "T_ref": rp.T_ref, "P_reb": rp.P_reb, "q_max": rp.q_max, "T_boil": rp.T_boil, "tau": rp.tau,
        "x_mea": rp.x_MEA_lean, "R": R_GAS,
    }
    for i in range(4):
        v[f"cpl{i}"], v[f"cpg{i}"] = a.cp_liquid[i], a.cp_gas[i]
        v[f"dcpl{i}"], v[f"dcpg{i}"] = d.cp_liquid[i], d.cp_gas[i]
        v[f"lat{i}"], v[f"al{i}"] = rp.latent[i], rp.alpha[i]
    out = np.empty(len(_NAMES))
    for k, i in _SLOT.items():
        out[i] = v[k]
    return out


# slot indices, frozen into the compiled kernel as constants
_FG, _QREC, _QTURB, _CGIN, _TGIN = (_SLOT[k] for k in ("fg_per_load", "q_rec_per_fg", "q_turb_per_fuel", "cg_in_n2", "tg_in"))
_KGP, _KLP, _UGR, _ULR, _KGE, _KLE, _MCO2 = (_SLOT[k] for k in ("kG_pre", "kL_pre", "uG_ref", "uL_ref", "kG_exp", "kL_exp", "m_co2"))
_E0A, _EDES, _FLOOR, _KEQ, _TEQ, _DHEQ, _KAPPA = (_SLOT[k] for k in ("E0_abs", "E_des", "amine_floor", "K_eq_ref", "T_eq_ref", "dH_eq", "kappa"))
_TBW, _DHVW, _TBM, _DHVM, _H, _DHA, _DHW, _DHM = (_SLOT[k] for k in ("Tb_h2o", "dHv_h2o", "Tb_mea", "dHv_mea", "h", "dH_abs", "dH_h2o", "dH_mea"))
_AD, _AL, _AA, _DD, _DL, _DA = (_SLOT[k] for k in ("abs_D", "abs_l", "abs_a", "des_D", "des_l", "des_a"))
_ACPL, _ACPG, _DCPL, _DCPG = (_SLOT[k] for k in ("cpl0", "cpg0", "dcpl0", "dcpg0"))
_VT, _VS, _U, _RC, _SWR, _TSWI, _TSWO = (_SLOT[k] for k in ("V_tube", "V_shell", "U", "rc_sol", "sw_ratio", "T_sw_in", "T_sw_out"))
_VR, _RHOR, _CPR, _CPLR, _CPVR, _LAT, _TREF, _PREB = (_SLOT[k] for k in ("V_reb", "rho_reb", "cp_reb", "cp_L", "cp_V", "lat0", "T_ref", "P_reb"))
_ALPHA, _QMAX, _TBOIL, _TAU, _XMEA, _R = (_SLOT[k] for k in ("al0", "q_max", "T_boil", "tau", "x_mea", "R"))


@nb.njit(cache=True)
def _column(x, off, f, cL_in, TL_in, cG_in, TG_in, F_L, F_G, c, is_abs):
    if is_abs:
        D, l, a, cpl, cpg = c[_AD], c[_AL], c[_AA], _ACPL, _ACPG
    else:
        D, l, a, cpl, cpg = c[_DD], c[_DL], c[_DA], _DCPL, _DCPG
    area = math.pi * D * D / 4.0
    dl = l / 5.0
    vL = 4.0 * F_L / (math.pi * D * D) / dl
    vG = 4.0 * F_G / (math.pi * D * D) / dl
    uG = max(F_G, 1e-9) / area
    uL = max(F_L, 1e-9) / area
    kG = c[_KGP] * (uG / c[_UGR]) ** c[_KGE]
    kL = c[_KLP] * (uL / c[_ULR]) ** c[_KLE]
    R = c[_R]
    h = c[_H]
    for n in range(5):
        CL0 = x[off + n]
        CL1 = x[off + 5 + n]
        CL2 = x[off + 10 + n]
        CL3 = x[off + 15 + n]
        TL = x[off + 20 + n]
        CG0 = x[off + 25 + n]
        CG1 = x[off + 30 + n]
        CG2 = x[off + 35 + n]
        CG3 = x[off + 40 + n]
        TG = x[off + 45 + n]
        # upstream liquid comes from above, upstream gas from below
        if n == 0:
            u0, u1, u2, u3, uT = cL_in[0], cL_in[1], cL_in[2], cL_in[3], TL_in
        else:
            u0, u1, u2, u3, uT = x[off + n - 1], x[off + 4 + n], x[off + 9 + n], x[off + 14 + n], x[off + 19 + n]
        if n == 4:
            w0, w1, w2, w3, wT = cG_in[0], cG_in[1], cG_in[2], cG_in[3], TG_in
        else:
            w0, w1, w2, w3, wT = x[off + 26 + n], x[off + 31 + n], x[off + 36 + n], x[off + 41 + n], x[off + 46 + n]

        c_liq = max(CL0 + CL1 + CL2 + CL3, 1e-12)
        theta = CL1 / max(CL2, 1e-6)
        if is_abs:
            E = c[_E0A] * max(1.0 - 2.0 * theta, c[_FLOOR])
        else:
            E = c[_EDES]
        K = 1.0 / (1.0 / kG + c[_MCO2] / (E * kL))
        Keq = c[_KEQ] * math.exp(-c[_DHEQ] * (1.0 / TL - 1.0 / c[_TEQ]))
        Ceq = Keq * theta * math.exp(c[_KAPPA] * theta)
        N1 = K * (CG1 - Ceq)
        RT = R * TL
        p_h2o = 101.325 * math.exp(c[_DHVW] * (1.0 / c[_TBW] - 1.0 / TL))
        p_mea = 101.325 * math.exp(c[_DHVM] * (1.0 / c[_TBM] - 1.0 / TL))
        N3 = kG * (CG3 - (CL3 / c_liq) * p_h2o / RT)
        N2 = kG * (CG2 - (CL2 / c_liq) * p_mea / RT)
        Q_G = h * (TL - TG)
        Q_phase = c[_DHA] * N1 + c[_DHW] * N3 + c[_DHM] * N2
        heat_L = max(CL0 * c[cpl] + CL1 * c[cpl + 1] + CL2 * c[cpl + 2] + CL3 * c[cpl + 3], 1.0)
        heat_G = max(CG0 * c[cpg] + CG1 * c[cpg + 1] + CG2 * c[cpg + 2] + CG3 * c[cpg + 3], 1e-3)

        f[off + n] = vL * (u0 - CL0)
        f[off + 5 + n] = vL * (u1 - CL1) + N1 * a
        f[off + 10 + n] = vL * (u2 - CL2) + N2 * a
        f[off + 15 + n] = vL * (u3 - CL3) + N3 * a
        f[off + 20 + n] = vL * (uT - TL) + (-Q_G + Q_phase) * a / heat_L
        f[off + 25 + n] = vG * (w0 - CG0)
        f[off + 30 + n] = vG * (w1 - CG1) - N1 * a
        f[off + 35 + n] = vG * (w2 - CG2) - N2 * a
        f[off + 40 + n] = vG * (w3 - CG3) - N3 * a
        f[off + 45 + n] = vG * (wT - TG) + Q_G * a / heat_G


@nb.njit(cache=True)
def dae_batch(x, z, u, p, c, f, g):
    """Fill ``f`` (B, 103) and ``g`` (B, 7) for batches of states and inputs."""
    B = x.shape[0]
    m = np.empty(4)
    y = np.empty(4)
    m_in = np.empty(4)
    cL = np.empty(4)
    cG = np.empty(4)
    cv = np.empty(4)
    for i in range(4):
        cG[i] = c[_CGIN + i]
    for b in range(B):
        xb = x[b]
        zb = z[b]
        fb = f[b]
        F_L, F_fuel, F_sw = u[b, 0], u[b, 1], u[b, 2]
        F_G = c[_FG] * p[b]
        Q_reb = c[_QREC] * F_G + c[_QTURB] * F_fuel
        T_tube, T_shell, T_reb = xb[100], xb[101], xb[102]

        # reboiler fed by the desorber bottom liquid
        ci = 0.0
        for i in range(4):
            ci += xb[54 + 5 * i]
        c_in = max(ci, 1e-12)
        for i in range(4):
            m_in[i] = xb[54 + 5 * i] / c_in
        F_in = F_L * c_in
        c_tot = max(zb[0] + zb[1] + zb[2] + zb[3], 1e-12)
        sa = 0.0
        for i in range(4):
            m[i] = zb[i] / c_tot
            y[i] = c[_ALPHA + i] * m[i]
            sa += y[i]
        sa = max(sa, 1e-12)
        hv = 0.0
        for i in range(4):
            y[i] = y[i] / sa
            hv += y[i] * c[_LAT + i]
        q = zb[4]
        g[b, 0] = m_in[0] - q * y[0] - (1.0 - q) * m[0]
        g[b, 1] = m_in[1] - q * y[1] - (1.0 - q) * m[1]
        g[b, 2] = m[2] - c[_XMEA]
        g[b, 3] = c_tot / c[_RHOR] - 1.0
        g[b, 4] = q - c[_QMAX] / (1.0 + math.exp(-(T_reb - c[_TBOIL]) / c[_TAU]))
        g[b, 5] = zb[5] - m[1]
        g[b, 6] = zb[6] - q * F_in * c[_R] * T_reb / c[_PREB]
        H_L_in = c[_CPLR] * (xb[74] - c[_TREF])
        H_L = c[_CPLR] * (T_reb - c[_TREF])
        H_V = c[_CPVR] * (T_reb - c[_TREF]) + hv
        fb[102] = (F_in * H_L_in - q * F_in * H_V - (1.0 - q) * F_in * H_L + Q_reb) / (c[_RHOR] * c[_CPR] * c[_VR])

        # absorber: lean solvent after the seawater cooler, flue gas at the bottom
        T_lean = T_shell + c[_SWR] * F_sw / F_L * (c[_TSWI] - c[_TSWO])
        for i in range(4):
            cL[i] = zb[i]
        _column(xb, 0, fb, cL, T_lean, cG, c[_TGIN], F_L, F_G, c, True)

        # desorber: rich solvent from the exchanger tube, reboiler vapour at the bottom
        cvap = c[_PREB] / (c[_R] * T_reb)
        for i in range(4):
            cL[i] = xb[4 + 5 * i]
            cv[i] = y[i] * cvap
        _column(xb, 50, fb, cL, T_tube, cv, T_reb, F_L, zb[6], c, False)

        rc = c[_RC]
        fb[100] = (rc * F_L * (xb[24] - T_tube) + c[_U] * (T_shell - T_tube)) / (rc * c[_VT])
        fb[101] = (rc * F_L * (T_reb - T_shell) - c[_U] * (T_shell - T_tube)) / (rc * c[_VS])


class FastDae:
    """Callable ``(x, z, u, p) -> (xdot, g)`` backed by the compiled kernel."""

    def __init__(self, params: PlantParams):
        self.consts = pack_constants(params)

    def __call__(self, x, z, u, p):
        x = np.ascontiguousarray(x, dtype=float)
        lead = x.shape[:-1]
        B = int(np.prod(lead)) if lead else 1
        xb = x.reshape(B, -1)
        zb = np.ascontiguousarray(np.broadcast_to(z, lead + (7,)), dtype=float).reshape(B, 7)
        ub = np.ascontiguousarray(np.broadcast_to(u, lead + (3,)), dtype=float).reshape(B, 3)
        pb = np.ascontiguousarray(np.broadcast_to(p, lead), dtype=float).reshape(B)
        f = np.empty((B, 103))
        g = np.empty((B, 7))
        dae_batch(xb, zb, ub, pb, self.consts, f, g)
        return f.reshape(lead + (103,)), g.reshape(lead + (7,))
