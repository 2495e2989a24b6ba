"""Scenario definition and the strict text format that feeds the CLI.

A scenario file is line-oriented: ``[section]`` headers, ``key = value``
pairs, ``#`` comments.  Sections are ``[system]``, ``[inverter.N]`` and
``[load.N]`` (numbered from 1), and ``[sim]``.  Unknown sections, unknown
keys, duplicates, and malformed numbers are all hard errors that name
the offending file:line, because a silently ignored typo in a gain name
would invalidate an experiment.

Gains omitted from an ``[inverter.N]`` section are filled from the
sizing rule in :func:`droopsim.droop.default_gains`; ``delta0_rad`` and
``e0_v`` default to 0 and the nominal peak amplitude and are normally
overwritten by calibration before a run.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from droopsim.droop import (
    DroopGains,
    Setpoints,
    default_gains,
    nominal_peak_amplitude,
)
from droopsim.errors import ConfigurationError, ScenarioParseError
from droopsim.powerflow import LineModel, LoadModel

MODES = ("islanded", "grid_connected")
PHASE_ORDERS = ("acb", "abc")

DEFAULT_GRID_X_OHM = 0.01

_GAIN_KEYS = {
    "k_pf_hz_per_w": "k_pf",
    "k_qv_v_per_var": "k_qv",
    "k_fp_w_per_hz": "k_fp",
    "k_vq_var_per_v": "k_vq",
    "k_pdelta_rad_per_w": "k_pdelta",
    "k_qe_v_per_var": "k_qe",
}

_INVERTER_REQUIRED = ("p0_w", "q0_var", "p_rated_w", "q_rated_var",
                      "line_r_ohm", "line_x_ohm")
_INVERTER_OPTIONAL = ("delta0_rad", "e0_v") + tuple(_GAIN_KEYS)
_LOAD_REQUIRED = ("t_start_s", "p_w", "q_var")
_LOAD_OPTIONAL = ("v_ref_ll",)
_SYSTEM_REQUIRED = ("v_nominal_ll", "frequency")
_SIM_REQUIRED = ("dt_s", "t_end_s", "tau_s", "mode")
_SIM_OPTIONAL = ("log_decimation", "calibrate", "grid_x_ohm", "phase_order")


@dataclass(frozen=True)
class InverterConfig:
    """One inverter: setpoints, gains, and the line tying it to the PCC."""

    setpoints: Setpoints
    gains: DroopGains
    line: LineModel
    p_rated_w: float
    q_rated_var: float


@dataclass(frozen=True)
class Scenario:
    """Everything a run needs, fully resolved (no pending defaults)."""

    v_nominal_ll: float
    frequency: float
    inverters: tuple
    schedule: tuple          # ((t_start_s, LoadModel), ...) strictly increasing
    mode: str
    dt_s: float
    t_end_s: float
    tau_s: float
    log_decimation: int = 1
    calibrate: bool = True
    grid_x_ohm: float = DEFAULT_GRID_X_OHM
    phase_order: str = "acb"


def validate_scenario(sc: Scenario) -> Scenario:
    """Check every cross-field invariant; returns the scenario unchanged."""
    if sc.v_nominal_ll <= 0.0:
        raise ConfigurationError(
            f"v_nominal_ll must be positive, got {sc.v_nominal_ll}")
    if sc.frequency <= 0.0:
        raise ConfigurationError(
            f"frequency must be positive, got {sc.frequency}")
    if len(sc.inverters) == 0:
        raise ConfigurationError("scenario needs at least one inverter")
    if sc.mode not in MODES:
        raise ConfigurationError(
            f"mode must be one of {MODES}, got {sc.mode!r}")
    if sc.phase_order not in PHASE_ORDERS:
        raise ConfigurationError(
            f"phase_order must be one of {PHASE_ORDERS}, got "
            f"{sc.phase_order!r}")
    if sc.dt_s <= 0.0:
        raise ConfigurationError(f"dt_s must be positive, got {sc.dt_s}")
    if sc.t_end_s < 0.0:
        raise ConfigurationError(
            f"t_end_s must be non-negative, got {sc.t_end_s}")
    if sc.dt_s >= sc.tau_s:
        raise ConfigurationError(
            f"dt_s = {sc.dt_s} must be smaller than tau_s = {sc.tau_s} "
            "(explicit-Euler stability guard on the measurement filters)")
    if sc.log_decimation < 1:
        raise ConfigurationError(
            f"log_decimation must be >= 1, got {sc.log_decimation}")
    if sc.grid_x_ohm <= 0.0:
        raise ConfigurationError(
            f"grid_x_ohm must be positive, got {sc.grid_x_ohm}")
    if len(sc.schedule) == 0:
        raise ConfigurationError("scenario needs at least one load entry")
    if sc.schedule[0][0] != 0.0:
        raise ConfigurationError(
            f"first load entry must start at t = 0, got {sc.schedule[0][0]}")
    last = None
    for t_start, _load in sc.schedule:
        if last is not None and t_start <= last:
            raise ConfigurationError(
                f"load start times must be strictly increasing, got "
                f"{t_start} after {last}")
        last = t_start
    return sc


class _RawSection:
    def __init__(self, name: str, lineno: int):
        self.name = name
        self.lineno = lineno
        self.pairs = {}      # key -> (value string, lineno)

    def take(self, key: str, path: str):
        if key not in self.pairs:
            raise ScenarioParseError(
                f"{path}:{self.lineno}: section [{self.name}] is missing "
                f"required key '{key}'")
        return self.pairs.pop(key)


def _parse_float(raw, key: str, path: str) -> float:
    value, lineno = raw
    try:
        return float(value)
    except ValueError:
        raise ScenarioParseError(
            f"{path}:{lineno}: key '{key}' needs a number, got {value!r}")


def _parse_int(raw, key: str, path: str) -> int:
    value, lineno = raw
    try:
        return int(value)
    except ValueError:
        raise ScenarioParseError(
            f"{path}:{lineno}: key '{key}' needs an integer, got {value!r}")


def _parse_bool(raw, key: str, path: str) -> bool:
    value, lineno = raw
    if value == "true":
        return True
    if value == "false":
        return False
    raise ScenarioParseError(
        f"{path}:{lineno}: key '{key}' needs true or false, got {value!r}")


def _read_sections(text: str, path: str):
    sections = []
    current = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if stripped.startswith("[") and stripped.endswith("]"):
            current = _RawSection(stripped[1:-1].strip(), lineno)
            sections.append(current)
            continue
        if "=" not in stripped:
            raise ScenarioParseError(
                f"{path}:{lineno}: expected 'key = value' or '[section]', "
                f"got {stripped!r}")
        if current is None:
            raise ScenarioParseError(
                f"{path}:{lineno}: key/value pair before any [section] header")
        key, _, value = stripped.partition("=")
        key = key.strip()
        value = value.strip()
        if key in current.pairs:
            raise ScenarioParseError(
                f"{path}:{lineno}: duplicate key '{key}' in section "
                f"[{current.name}]")
        current.pairs[key] = (value, lineno)
    return sections


def _check_no_leftovers(sec: _RawSection, allowed, path: str):
    for key, (_value, lineno) in sec.pairs.items():
        raise ScenarioParseError(
            f"{path}:{lineno}: unknown key '{key}' in section [{sec.name}] "
            f"(known keys: {', '.join(sorted(allowed))})")


def _numbered(sections, prefix: str, path: str):
    """Collect [prefix.N] sections and demand contiguous numbering from 1."""
    found = {}
    for sec in sections:
        if not sec.name.startswith(prefix + "."):
            continue
        suffix = sec.name[len(prefix) + 1:]
        try:
            idx = int(suffix)
        except ValueError:
            raise ScenarioParseError(
                f"{path}:{sec.lineno}: bad section name [{sec.name}], "
                f"expected [{prefix}.N] with integer N")
        if idx in found:
            raise ScenarioParseError(
                f"{path}:{sec.lineno}: duplicate section [{sec.name}]")
        found[idx] = sec
    for i in range(1, len(found) + 1):
        if i not in found:
            raise ScenarioParseError(
                f"{path}: sections [{prefix}.N] must be numbered "
                f"contiguously from 1; missing [{prefix}.{i}]")
    return [found[i] for i in range(1, len(found) + 1)]


def parse_scenario_text(text: str, path: str = "<string>") -> Scenario:
    sections = _read_sections(text, path)

    by_name = {}
    for sec in sections:
        if sec.name in ("system", "sim"):
            if sec.name in by_name:
                raise ScenarioParseError(
                    f"{path}:{sec.lineno}: duplicate section [{sec.name}]")
            by_name[sec.name] = sec
        elif sec.name.startswith("inverter.") or sec.name.startswith("load."):
            pass
        else:
            raise ScenarioParseError(
                f"{path}:{sec.lineno}: unknown section [{sec.name}]")

    inverter_secs = _numbered(sections, "inverter", path)
    load_secs = _numbered(sections, "load", path)

    missing = [name for name, present in (
        ("[system]", "system" in by_name),
        ("[inverter.1]", len(inverter_secs) > 0),
        ("[load.1]", len(load_secs) > 0),
        ("[sim]", "sim" in by_name),
    ) if not present]
    if missing:
        raise ScenarioParseError(
            f"{path}: missing required sections: {', '.join(missing)}")

    sys_sec = by_name["system"]
    v_nominal = _parse_float(sys_sec.take("v_nominal_ll", path),
                             "v_nominal_ll", path)
    frequency = _parse_float(sys_sec.take("frequency", path),
                             "frequency", path)
    _check_no_leftovers(sys_sec, _SYSTEM_REQUIRED, path)

    inverters = []
    for sec in inverter_secs:
        values = {}
        for key in _INVERTER_REQUIRED:
            values[key] = _parse_float(sec.take(key, path), key, path)
        optional = {}
        for key in _INVERTER_OPTIONAL:
            if key in sec.pairs:
                optional[key] = _parse_float(sec.pairs.pop(key), key, path)
        _check_no_leftovers(
            sec, _INVERTER_REQUIRED + _INVERTER_OPTIONAL, path)

        line = LineModel(r_ohm=values["line_r_ohm"],
                         x_ohm=values["line_x_ohm"])
        explicit = {name: optional[k] for k, name in _GAIN_KEYS.items()
                    if k in optional}
        if len(explicit) == len(_GAIN_KEYS):
            gains = DroopGains(**explicit)
        elif explicit:
            base = default_gains(values["p_rated_w"], values["q_rated_var"],
                                 v_nominal, line.x_ohm)
            gains = replace(base, **explicit)
        else:
            gains = default_gains(values["p_rated_w"], values["q_rated_var"],
                                  v_nominal, line.x_ohm)
        sp = Setpoints(
            f0=frequency,
            v0=v_nominal,
            p0=values["p0_w"],
            q0=values["q0_var"],
            delta0=optional.get("delta0_rad", 0.0),
            e0=optional.get("e0_v", nominal_peak_amplitude(v_nominal)),
        )
        inverters.append(InverterConfig(
            setpoints=sp, gains=gains, line=line,
            p_rated_w=values["p_rated_w"],
            q_rated_var=values["q_rated_var"]))

    schedule = []
    for sec in load_secs:
        values = {}
        for key in _LOAD_REQUIRED:
            values[key] = _parse_float(sec.take(key, path), key, path)
        v_ref = v_nominal
        if "v_ref_ll" in sec.pairs:
            v_ref = _parse_float(sec.pairs.pop("v_ref_ll"), "v_ref_ll", path)
        _check_no_leftovers(sec, _LOAD_REQUIRED + _LOAD_OPTIONAL, path)
        schedule.append((values["t_start_s"],
                         LoadModel(p_rated_w=values["p_w"],
                                   q_rated_var=values["q_var"],
                                   v_ref_ll=v_ref)))

    sim_sec = by_name["sim"]
    dt_s = _parse_float(sim_sec.take("dt_s", path), "dt_s", path)
    t_end_s = _parse_float(sim_sec.take("t_end_s", path), "t_end_s", path)
    tau_s = _parse_float(sim_sec.take("tau_s", path), "tau_s", path)
    mode_value, mode_line = sim_sec.take("mode", path)
    if mode_value not in MODES:
        raise ScenarioParseError(
            f"{path}:{mode_line}: mode must be one of {', '.join(MODES)}, "
            f"got {mode_value!r}")
    log_decimation = 1
    if "log_decimation" in sim_sec.pairs:
        log_decimation = _parse_int(sim_sec.pairs.pop("log_decimation"),
                                    "log_decimation", path)
    calibrate = True
    if "calibrate" in sim_sec.pairs:
        calibrate = _parse_bool(sim_sec.pairs.pop("calibrate"),
                                "calibrate", path)
    grid_x_ohm = DEFAULT_GRID_X_OHM
    if "grid_x_ohm" in sim_sec.pairs:
        grid_x_ohm = _parse_float(sim_sec.pairs.pop("grid_x_ohm"),
                                  "grid_x_ohm", path)
    phase_order = "acb"
    if "phase_order" in sim_sec.pairs:
        phase_order, po_line = sim_sec.pairs.pop("phase_order")
        if phase_order not in PHASE_ORDERS:
            raise ScenarioParseError(
                f"{path}:{po_line}: phase_order must be one of "
                f"{', '.join(PHASE_ORDERS)}, got {phase_order!r}")
    _check_no_leftovers(sim_sec, _SIM_REQUIRED + _SIM_OPTIONAL, path)

    sc = Scenario(
        v_nominal_ll=v_nominal,
        frequency=frequency,
        inverters=tuple(inverters),
        schedule=tuple(schedule),
        mode=mode_value,
        dt_s=dt_s,
        t_end_s=t_end_s,
        tau_s=tau_s,
        log_decimation=log_decimation,
        calibrate=calibrate,
        grid_x_ohm=grid_x_ohm,
        phase_order=phase_order,
    )
    return validate_scenario(sc)


def parse_scenario(path: str) -> Scenario:
    """Read and validate a scenario file."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ScenarioParseError(f"{path}: cannot read scenario: {exc}")
    return parse_scenario_text(text, path)


def format_scenario(sc: Scenario) -> str:
    """Render a scenario back to file form, all values fully explicit.

    parse_scenario on the output reproduces the scenario exactly, which
    is what makes calibrated setpoints portable between commands.
    """
    out = []
    out.append("[system]")
    out.append(f"v_nominal_ll = {sc.v_nominal_ll!r}")
    out.append(f"frequency = {sc.frequency!r}")
    for i, inv in enumerate(sc.inverters, start=1):
        out.append("")
        out.append(f"[inverter.{i}]")
        out.append(f"p0_w = {inv.setpoints.p0!r}")
        out.append(f"q0_var = {inv.setpoints.q0!r}")
        out.append(f"p_rated_w = {inv.p_rated_w!r}")
        out.append(f"q_rated_var = {inv.q_rated_var!r}")
        out.append(f"line_r_ohm = {inv.line.r_ohm!r}")
        out.append(f"line_x_ohm = {inv.line.x_ohm!r}")
        out.append(f"delta0_rad = {inv.setpoints.delta0!r}")
        out.append(f"e0_v = {inv.setpoints.e0!r}")
        for key, name in _GAIN_KEYS.items():
            out.append(f"{key} = {getattr(inv.gains, name)!r}")
    for i, (t_start, load) in enumerate(sc.schedule, start=1):
        out.append("")
        out.append(f"[load.{i}]")
        out.append(f"t_start_s = {t_start!r}")
        out.append(f"p_w = {load.p_rated_w!r}")
        out.append(f"q_var = {load.q_rated_var!r}")
        out.append(f"v_ref_ll = {load.v_ref_ll!r}")
    out.append("")
    out.append("[sim]")
    out.append(f"dt_s = {sc.dt_s!r}")
    out.append(f"t_end_s = {sc.t_end_s!r}")
    out.append(f"tau_s = {sc.tau_s!r}")
    out.append(f"mode = {sc.mode}")
    out.append(f"log_decimation = {sc.log_decimation}")
    out.append(f"calibrate = {'true' if sc.calibrate else 'false'}")
    out.append(f"grid_x_ohm = {sc.grid_x_ohm!r}")
    out.append(f"phase_order = {sc.phase_order}")
    out.append("")
    return "\n".join(out)
