"""
SI <-> per-unit conversion

Per-unit conventions:
    power        p_pu = P / S_base
    DC voltage   v_pu = V / V_dc_base
    capacitance  C_pu = C V_dc_base^2 / S_base         (seconds)
    conductance  G_pu = G V_dc_base^2 / S_base
    AC reactance x_pu = X / Z_base,  Z_base = V_ac_base^2 / S_base
    ILC ratio    m_pu = m V_dc_base    (rad/s per per-unit volt)
    inertia      M = 2 H / omega_base  (omega in rad/s deviation)
"""

import math
from dataclasses import dataclass

from errors import ConfigError


@dataclass(frozen=True)
class PerUnitBases:
    """Base quantities for one study"""

    s_base_va: float
    v_dc_base_v: float
    v_ac_base_v: float = 1.0
    f_base_hz: float = 50.0

    def __post_init__(self):
        for name in ("s_base_va", "v_dc_base_v", "v_ac_base_v", "f_base_hz"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"base {name} must be > 0")

    @property
    def omega_base(self) -> float:
        return 2.0 * math.pi * self.f_base_hz

    @property
    def z_ac_base(self) -> float:
        return self.v_ac_base_v ** 2 / self.s_base_va

    @property
    def z_dc_base(self) -> float:
        return self.v_dc_base_v ** 2 / self.s_base_va

    # Power -----------------------------------------------------------------

    def power_to_pu(self, watts: float) -> float:
        return watts / self.s_base_va

    def power_from_pu(self, p_pu: float) -> float:
        return p_pu * self.s_base_va

    # DC quantities ---------------------------------------------------------

    def dc_voltage_to_pu(self, volts: float) -> float:
        return volts / self.v_dc_base_v

    def dc_voltage_from_pu(self, v_pu: float) -> float:
        return v_pu * self.v_dc_base_v

    def capacitance_to_pu(self, farads: float) -> float:
        return farads * self.z_dc_base

    def capacitance_from_pu(self, c_pu: float) -> float:
        return c_pu / self.z_dc_base

    def conductance_to_pu(self, siemens: float) -> float:
        return siemens * self.z_dc_base

    def conductance_from_pu(self, g_pu: float) -> float:
        return g_pu / self.z_dc_base

    def resistance_to_conductance_pu(self, ohms: float) -> float:
        if not ohms > 0:
            raise ConfigError("line resistance must be > 0")
        return self.conductance_to_pu(1.0 / ohms)

    def dc_load_to_pu(self, ohms: float) -> float:
        """Power drawn by a resistive DC load at rated voltage"""
        return self.power_to_pu(self.v_dc_base_v ** 2 / ohms)

    # AC quantities ---------------------------------------------------------

    def reactance_to_pu(self, ohms: float) -> float:
        return ohms / self.z_ac_base

    def reactance_from_pu(self, x_pu: float) -> float:
        return x_pu * self.z_ac_base

    def susceptance_from_reactance_pu(self, x_pu: float) -> float:
        if not x_pu > 0:
            raise ConfigError("line reactance must be > 0")
        return 1.0 / x_pu

    def ac_load_to_pu(self, ohms: float) -> float:
        """Power drawn by a resistive AC load at rated line voltage"""
        return self.power_to_pu(self.v_ac_base_v ** 2 / ohms)

    # Controller gains ------------------------------------------------------

    def ilc_ratio_to_pu(self, rad_per_s_per_volt: float) -> float:
        return rad_per_s_per_volt * self.v_dc_base_v

    def ilc_ratio_from_pu(self, m_pu: float) -> float:
        return m_pu / self.v_dc_base_v

    def dc_droop_to_pu(self, watts_per_volt: float) -> float:
        """DC droop slope dP/dV to per-unit power per per-unit volt (q m)"""
        return watts_per_volt * self.v_dc_base_v / self.s_base_va

    def dc_droop_from_pu(self, slope_pu: float) -> float:
        return slope_pu * self.s_base_va / self.v_dc_base_v

    def ac_droop_to_pu(self, watts_per_rad_s: float) -> float:
        """AC droop slope dP/domega to per-unit power per rad/s (q)"""
        return watts_per_rad_s / self.s_base_va

    def ac_droop_from_pu(self, q_pu: float) -> float:
        return q_pu * self.s_base_va

    def inertia_to_m(self, h_seconds: float) -> float:
        return 2.0 * h_seconds / self.omega_base

    def inertia_from_m(self, m_pu: float) -> float:
        return m_pu * self.omega_base / 2.0
