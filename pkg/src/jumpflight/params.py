"""Domain types, canonical units and parameter validation.

Canonical internal units, used by every module:

* time in microseconds (us)
* angular frequencies, Rabi amplitudes, detunings and dispersive shifts
  in rad/us (lab values quoted as ``x/2pi`` in MHz are multiplied by 2*pi
  exactly once, at the config boundary)
* event rates (decay, leakage, click rates) in 1/us -- never multiplied
  by 2*pi

hbar = 1 throughout; Hamiltonians are angular-frequency operators.
"""

from __future__ import annotations

import configparser
import io
import math
from dataclasses import dataclass, fields, replace

TWO_PI = 2.0 * math.pi

CONFIG_SCHEMA = "jumpflight-config-v1"


class ParamsError(ValueError):
    """Raised when a parameter set violates its invariants."""


@dataclass(frozen=True)
class SystemParams:
    """Every physical rate, frequency, drive amplitude and efficiency of the device.

    All values are in canonical units (see module docstring).  Instances are
    immutable; share freely across worker processes.
    """

    # readout cavity
    omega_c: float          # rad/us, bookkeeping only (dynamics are rotating-frame)
    chi_b: float            # rad/us
    chi_d: float            # rad/us
    kappa: float            # rad/us
    kappa_filter: float     # rad/us, amplifier-chain filter bandwidth
    eta: float              # heterodyne quantum efficiency, in (0, 1]
    t_int: float            # us, record integration time
    nbar: float             # steady-state photons on resonance
    delta_r: float          # rad/us, readout tone detuning
    nth_c: float            # cavity thermal occupation

    # BG transition
    omega_b0: float         # rad/us
    omega_b1: float         # rad/us
    delta_b1: float         # rad/us
    gamma_b: float          # 1/us, energy relaxation (1/T1)
    gamma_b_phi: float      # 1/us, pure dephasing
    nth_b: float

    # DG transition
    omega_dg: float         # rad/us
    delta_dg: float         # rad/us
    gamma_d: float          # 1/us
    gamma_d_phi: float      # 1/us
    nth_d: float

    # leakage to/from the catch-all higher excited state F
    gamma_fg: float         # 1/us, G -> F
    gamma_fd: float         # 1/us, D -> F
    gamma_gf: float         # 1/us, F -> G
    gamma_df: float         # 1/us, F -> D

    # effective measured rates (reference values, not fed back into dynamics)
    gamma_bg_click: float   # 1/us, average click rate on the BG transition
    gamma_gd: float         # 1/us, D -> G detection rate
    tau_b: float            # us, mean dwell time in B

    n_fock: int = 20

    # unused anharmonicity metadata (recorded, never evolved)
    alpha_b: float | None = None
    alpha_d: float | None = None
    chi_db: float | None = None

    @property
    def t1_b(self) -> float:
        return 1.0 / self.gamma_b

    @property
    def t1_d(self) -> float:
        return 1.0 / self.gamma_d

    @property
    def dim(self) -> int:
        """Hilbert-space dimension of the atom-cavity ket, 4 * n_fock."""
        return 4 * self.n_fock


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ParamsError(msg)


def validate(p: SystemParams) -> SystemParams:
    """Check every SystemParams invariant; return the checked instance.

    Rejects eta outside (0, 1], negative rates or occupations, and a Fock
    truncation too small for the drive strength (rule: n_fock >= nbar +
    6*sqrt(nbar), which keeps the coherent-state tail below the truncation
    guard).
    """
    _require(p.kappa > 0, f"kappa must be > 0, got {p.kappa}")
    _require(p.kappa_filter > 0, f"kappa_filter must be > 0, got {p.kappa_filter}")
    _require(p.t_int > 0, f"t_int must be > 0, got {p.t_int}")
    _require(0.0 < p.eta <= 1.0, f"eta must be in (0, 1], got {p.eta}")
    _require(p.nbar >= 0, f"nbar must be >= 0, got {p.nbar}")
    _require(p.n_fock >= 1, f"n_fock must be >= 1, got {p.n_fock}")
    for name in ("gamma_b", "gamma_d", "gamma_b_phi", "gamma_d_phi",
                 "gamma_fg", "gamma_fd", "gamma_gf", "gamma_df",
                 "gamma_bg_click", "gamma_gd", "nth_b", "nth_d", "nth_c"):
        _require(getattr(p, name) >= 0, f"{name} must be >= 0, got {getattr(p, name)}")
    _require(p.tau_b > 0, f"tau_b must be > 0, got {p.tau_b}")
    min_fock = p.nbar + 6.0 * math.sqrt(p.nbar)
    _require(p.n_fock >= min_fock,
             f"n_fock={p.n_fock} too small for nbar={p.nbar}: need >= {min_fock:.1f}")
    return p


def dephasing_rate(t1: float, t2r: float) -> float:
    """Pure dephasing rate 1/T2R - 1/(2 T1); rejects unphysical T2R > 2 T1."""
    rate = 1.0 / t2r - 0.5 / t1
    if rate < -1e-12:
        raise ParamsError(f"T2R={t2r} exceeds 2*T1={2 * t1}: negative pure dephasing")
    return max(rate, 0.0)


# Leakage rate sets used to bring the trajectory ensemble into agreement with
# the observed long-time Z asymptote.  One set applies when the DG drive stays
# on for the whole no-click interval, the other when it is shut off early.
LEAKAGE_DRIVE_ON = {
    "gamma_fg": TWO_PI * 0.38e-3,
    "gamma_fd": TWO_PI * 0.38e-3,
    "gamma_gf": TWO_PI * 11.24e-3,
    "gamma_df": TWO_PI * 11.24e-3,
}
LEAKAGE_DRIVE_OFF = {
    "gamma_fg": TWO_PI * 0.217e-3,
    "gamma_fd": TWO_PI * 4.34e-3,
    "gamma_gf": TWO_PI * 11.08e-3,
    "gamma_df": TWO_PI * 15.88e-3,
}


def simulation_params(**overrides) -> SystemParams:
    """Simulation parameter set (driven-readout regime).

    T1 values are the reduced, readout-on values rather than the idle-atom
    ones, since the strong readout drive degrades the bright-state lifetime.
    Leakage defaults to the drive-on set.
    """
    base = dict(
        omega_c=TWO_PI * 8979.64,
        chi_b=TWO_PI * -5.08,
        chi_d=TWO_PI * -0.33,
        kappa=TWO_PI * 3.62,
        kappa_filter=10.0 * TWO_PI * 3.62,
        eta=0.33,
        t_int=0.26,
        nbar=5.0,
        delta_r=TWO_PI * -5.08,
        nth_c=0.0,
        omega_b0=TWO_PI * 1.2,
        omega_b1=TWO_PI * 0.6,
        delta_b1=TWO_PI * -30.0,
        gamma_b=1.0 / 15.0,
        gamma_b_phi=dephasing_rate(15.0, 18.0),
        nth_b=0.01,
        omega_dg=TWO_PI * 21.6e-3,
        delta_dg=TWO_PI * -274.5e-3,
        gamma_d=1.0 / 105.0,
        gamma_d_phi=dephasing_rate(105.0, 120.0),
        nth_d=0.05,
        gamma_bg_click=1.0 / 0.99,
        gamma_gd=1.0 / 30.8,
        tau_b=4.2,
        n_fock=20,
        alpha_b=TWO_PI * 195.0,
        alpha_d=TWO_PI * 152.0,
        chi_db=TWO_PI * 61.0,
        **LEAKAGE_DRIVE_ON,
    )
    base.update(overrides)
    return validate(SystemParams(**base))


def experiment_params(**overrides) -> SystemParams:
    """Experimental characterization values (idle-atom coherences)."""
    return simulation_params(
        gamma_b=1.0 / 28.0,
        gamma_b_phi=dephasing_rate(28.0, 18.0),
        gamma_d=1.0 / 116.0,
        gamma_d_phi=dephasing_rate(116.0, 120.0),
        nth_c=0.0017,
        omega_dg=TWO_PI * 20e-3,
        delta_dg=TWO_PI * -275e-3,
        **overrides,
    )


@dataclass(frozen=True)
class ProtocolConfig:
    """Feedback-protocol settings: catch window split, intervention pulse, thresholds."""

    dt_on: float = 0.0        # us with the DG drive on; 0 in free-run mode
    dt_off: float = 0.0       # us with the DG drive off (dt_catch = dt_on + dt_off)
    theta_i: float = 0.0      # intervention pulse polar angle, rad
    phi_i: float = 0.5 * math.pi  # intervention pulse azimuth, rad
    mode: str = "FreeRun"     # Catch | Reverse | FreeRun
    thresholds: tuple[float, float, float] | None = None  # (i_b, i_bbar, q_b), record units

    def __post_init__(self):
        if self.dt_on < 0 or self.dt_off < 0:
            raise ParamsError("dt_on and dt_off must be >= 0")
        if self.mode not in ("Catch", "Reverse", "FreeRun"):
            raise ParamsError(f"unknown protocol mode {self.mode!r}")
        if self.thresholds is not None:
            i_b, i_bbar, _ = self.thresholds
            if not i_bbar <= i_b:
                raise ParamsError(f"thresholds require i_bbar <= i_b, got {self.thresholds}")

    @property
    def dt_catch(self) -> float:
        return self.dt_on + self.dt_off


# Config file I/O.  On input both lab-unit keys (kappa_over_2pi_mhz, t1_b_us)
# and canonical keys (kappa_rad_per_us, gamma_b_per_us) are accepted; the
# writer emits canonical keys only, so that a write/read round trip is
# bit-exact (no 2*pi or reciprocal re-conversion on the way back in).

_LAB_KEYS = {
    # field -> (section, lab key, scale applied on read)
    "omega_c": ("cavity", "omega_c_over_2pi_mhz", TWO_PI),
    "kappa": ("cavity", "kappa_over_2pi_mhz", TWO_PI),
    "kappa_filter": ("cavity", "kappa_filter_over_2pi_mhz", TWO_PI),
    "eta": ("cavity", "eta", 1.0),
    "t_int": ("cavity", "t_int_us", 1.0),
    "nbar": ("cavity", "nbar", 1.0),
    "delta_r": ("cavity", "delta_r_over_2pi_mhz", TWO_PI),
    "nth_c": ("cavity", "nth_c", 1.0),
    "chi_b": ("bg", "chi_b_over_2pi_mhz", TWO_PI),
    "omega_b0": ("bg", "omega_b0_over_2pi_mhz", TWO_PI),
    "omega_b1": ("bg", "omega_b1_over_2pi_mhz", TWO_PI),
    "delta_b1": ("bg", "delta_b1_over_2pi_mhz", TWO_PI),
    "nth_b": ("bg", "nth_b", 1.0),
    "tau_b": ("bg", "tau_b_us", 1.0),
    "gamma_bg_click": ("bg", "gamma_bg_click_per_us", 1.0),
    "alpha_b": ("bg", "alpha_b_over_2pi_mhz", TWO_PI),
    "chi_d": ("dg", "chi_d_over_2pi_mhz", TWO_PI),
    "omega_dg": ("dg", "omega_dg_over_2pi_khz", TWO_PI * 1e-3),
    "delta_dg": ("dg", "delta_dg_over_2pi_khz", TWO_PI * 1e-3),
    "nth_d": ("dg", "nth_d", 1.0),
    "gamma_gd": ("dg", "gamma_gd_per_us", 1.0),
    "alpha_d": ("dg", "alpha_d_over_2pi_mhz", TWO_PI),
    "chi_db": ("dg", "chi_db_over_2pi_mhz", TWO_PI),
    "gamma_fg": ("leakage", "gamma_fg_over_2pi_khz", TWO_PI * 1e-3),
    "gamma_fd": ("leakage", "gamma_fd_over_2pi_khz", TWO_PI * 1e-3),
    "gamma_gf": ("leakage", "gamma_gf_over_2pi_khz", TWO_PI * 1e-3),
    "gamma_df": ("leakage", "gamma_df_over_2pi_khz", TWO_PI * 1e-3),
}

# canonical-unit key per field, grouped into the same sections
_CANONICAL_SECTION = {
    "omega_c": "cavity", "kappa": "cavity", "kappa_filter": "cavity",
    "eta": "cavity", "t_int": "cavity", "nbar": "cavity", "delta_r": "cavity",
    "nth_c": "cavity", "n_fock": "cavity",
    "chi_b": "bg", "omega_b0": "bg", "omega_b1": "bg", "delta_b1": "bg",
    "gamma_b": "bg", "gamma_b_phi": "bg", "nth_b": "bg", "tau_b": "bg",
    "gamma_bg_click": "bg", "alpha_b": "bg",
    "chi_d": "dg", "omega_dg": "dg", "delta_dg": "dg", "gamma_d": "dg",
    "gamma_d_phi": "dg", "nth_d": "dg", "gamma_gd": "dg", "alpha_d": "dg",
    "chi_db": "dg",
    "gamma_fg": "leakage", "gamma_fd": "leakage",
    "gamma_gf": "leakage", "gamma_df": "leakage",
}


def _canonical_key(field: str) -> str:
    if field in ("eta", "nbar", "nth_b", "nth_d", "nth_c", "n_fock"):
        return field
    if field in ("t_int", "tau_b"):
        return field + "_us"
    if field.startswith(("gamma",)):
        return field + "_per_us"
    return field + "_rad_per_us"


def _split_schema(text: str) -> str:
    """Verify the leading schema line and return the remaining config text."""
    lines = text.splitlines()
    for i, line in enumerate(lines):
        stripped = line.strip()
        if not stripped or stripped.startswith(("#", ";")):
            continue
        if stripped.replace(" ", "") != f"schema={CONFIG_SCHEMA}":
            raise ParamsError(
                f"config must start with 'schema = {CONFIG_SCHEMA}', got {stripped!r}")
        return "\n".join(lines[i + 1:])
    raise ParamsError("empty config file")


def loads_config(text: str) -> tuple[SystemParams, ProtocolConfig]:
    """Parse a config string into checked (SystemParams, ProtocolConfig)."""
    body = _split_schema(text)
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.read_string(body)

    values: dict[str, float | int | None] = {}
    for f in fields(SystemParams):
        name = f.name
        section = _CANONICAL_SECTION[name]
        if not cp.has_section(section):
            raise ParamsError(f"missing config section [{section}]")
        sec = cp[section]
        canon = _canonical_key(name)
        if canon in sec:
            raw = sec[canon]
            scale = 1.0
        elif name in _LAB_KEYS and _LAB_KEYS[name][1] in sec:
            raw = sec[_LAB_KEYS[name][1]]
            scale = _LAB_KEYS[name][2]
        elif name == "gamma_b" and "t1_b_us" in sec:
            values[name] = 1.0 / float(sec["t1_b_us"])
            continue
        elif name == "gamma_d" and "t1_d_us" in sec:
            values[name] = 1.0 / float(sec["t1_d_us"])
            continue
        elif name == "gamma_b_phi" and "t2r_b_us" in sec:
            values[name] = dephasing_rate(1.0 / values["gamma_b"], float(sec["t2r_b_us"]))
            continue
        elif name == "gamma_d_phi" and "t2r_d_us" in sec:
            values[name] = dephasing_rate(1.0 / values["gamma_d"], float(sec["t2r_d_us"]))
            continue
        elif name in ("alpha_b", "alpha_d", "chi_db"):
            values[name] = None
            continue
        else:
            raise ParamsError(f"missing config key for field {name!r} in [{section}]")
        if name == "n_fock":
            values[name] = int(raw)
        else:
            values[name] = float(raw) * scale if scale != 1.0 else float(raw)

    params = validate(SystemParams(**values))

    protocol = ProtocolConfig()
    if cp.has_section("protocol"):
        sec = cp["protocol"]
        thresholds = None
        if "i_b" in sec:
            thresholds = (float(sec["i_b"]), float(sec["i_bbar"]), float(sec["q_b"]))
        protocol = ProtocolConfig(
            dt_on=float(sec.get("dt_on_us", 0.0)),
            dt_off=float(sec.get("dt_off_us", 0.0)),
            theta_i=float(sec.get("theta_i_rad", 0.0)),
            phi_i=float(sec.get("phi_i_rad", 0.5 * math.pi)),
            mode=sec.get("mode", "FreeRun"),
            thresholds=thresholds,
        )
    return params, protocol


def load_config(path) -> tuple[SystemParams, ProtocolConfig]:
    with open(path, "r", encoding="utf-8") as fh:
        return loads_config(fh.read())


def dumps_config(p: SystemParams, protocol: ProtocolConfig | None = None) -> str:
    """Serialize to the canonical config format (bit-exact round trip)."""
    out = io.StringIO()
    out.write(f"schema = {CONFIG_SCHEMA}\n")
    for section in ("cavity", "bg", "dg", "leakage"):
        out.write(f"\n[{section}]\n")
        for f in fields(SystemParams):
            if _CANONICAL_SECTION[f.name] != section:
                continue
            val = getattr(p, f.name)
            if val is None:
                continue
            out.write(f"{_canonical_key(f.name)} = {val!r}\n")
    if protocol is not None:
        out.write("\n[protocol]\n")
        out.write(f"dt_on_us = {protocol.dt_on!r}\n")
        out.write(f"dt_off_us = {protocol.dt_off!r}\n")
        out.write(f"theta_i_rad = {protocol.theta_i!r}\n")
        out.write(f"phi_i_rad = {protocol.phi_i!r}\n")
        out.write(f"mode = {protocol.mode}\n")
        if protocol.thresholds is not None:
            i_b, i_bbar, q_b = protocol.thresholds
            out.write(f"i_b = {i_b!r}\ni_bbar = {i_bbar!r}\nq_b = {q_b!r}\n")
    return out.getvalue()


def save_config(path, p: SystemParams, protocol: ProtocolConfig | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_config(p, protocol))


def disable_channels(p: SystemParams, names: set[str]) -> SystemParams:
    """Zero the rates of individual imperfection channels (error-budget knobs).

    Recognized names: relax_b, relax_d, excite_b, excite_d, dephase_b,
    dephase_d, thermal (both excitations), leakage, all_imperfections.
    """
    updates: dict[str, float] = {}
    for name in names:
        if name == "relax_b":
            updates["gamma_b"] = 0.0
        elif name == "relax_d":
            updates["gamma_d"] = 0.0
        elif name == "excite_b":
            updates["nth_b"] = 0.0
        elif name == "excite_d":
            updates["nth_d"] = 0.0
        elif name == "dephase_b":
            updates["gamma_b_phi"] = 0.0
        elif name == "dephase_d":
            updates["gamma_d_phi"] = 0.0
        elif name == "thermal":
            updates["nth_b"] = 0.0
            updates["nth_d"] = 0.0
        elif name == "leakage":
            updates.update(gamma_fg=0.0, gamma_fd=0.0, gamma_gf=0.0, gamma_df=0.0)
        elif name == "all_imperfections":
            updates.update(gamma_b=0.0, gamma_d=0.0, gamma_b_phi=0.0, gamma_d_phi=0.0,
                           nth_b=0.0, nth_d=0.0,
                           gamma_fg=0.0, gamma_fd=0.0, gamma_gf=0.0, gamma_df=0.0)
        else:
            raise ParamsError(f"unknown channel name {name!r}")
    return replace(p, **updates)
