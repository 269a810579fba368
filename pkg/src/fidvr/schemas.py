"""JSON schemas for every input and output document; unknown keys are rejected."""
from __future__ import annotations

import jsonschema


class SchemaError(ValueError):
    """A document does not match its schema; the message names the offending field."""


_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_nonneg = {"type": "number", "minimum": 0}
_frac = {"type": "number", "minimum": 0, "maximum": 1}
_int = {"type": "integer"}
_version = {"type": "integer", "const": 1}


def _obj(props: dict, required=()) -> dict:
    return {"type": "object", "properties": props, "required": list(required), "additionalProperties": False}


MOTOR1 = _obj({k: _num for k in ("v_stall", "t_stall", "r_stall", "x_stall", "t_th", "theta1", "theta2",
                                 "p_nom", "q_nom")})
MOTOR3 = _obj({k: _num for k in ("r_s", "x_ls", "x_m", "r_r", "x_lr", "h", "load_torque_exponent", "loading",
                                 "r_r2", "x_lr2")})
ZIP = _obj({k: _num for k in ("p_z0", "p_i0", "p_p0", "q_z0", "q_i0", "q_p0", "q_sh0", "pf")})
PV = _obj({"p_pv": _nonneg, "s_rating": _nonneg, "q_max_frac": _frac})
FEEDER = _obj({"r_pu": _num, "x_pu": _num, "b_pu": _num, "n_r": _pos}, ["r_pu", "x_pu"])

NETWORK = _obj(
    {
        "format_version": _version,
        "base_mva": _pos,
        "buses": {"type": "array", "minItems": 1, "items": _obj(
            {"id": _int, "base_kv": _pos, "is_source": {"type": "boolean"}}, ["id"])},
        "branches": {"type": "array", "items": _obj(
            {"from": _int, "to": _int, "r_pu": _num, "x_pu": _num, "b_pu": _num}, ["from", "to", "r_pu", "x_pu"])},
        "source": _obj({"emf_pu": _pos, "r_pu": _num, "x_pu": _num}, ["emf_pu", "r_pu", "x_pu"]),
    },
    ["base_mva", "buses", "branches", "source"],
)

AREA = _obj(
    {
        "id": {"type": "string", "minLength": 1},
        "root": _int,
        "first_buses": {"type": "array", "minItems": 1, "items": _int},
        "loads": {"type": "array", "items": _obj({"bus": _int, "p_kw": _nonneg}, ["bus", "p_kw"])},
        "f_s": _frac, "f_el": _frac, "f_m1": _frac, "f_m3": _frac, "f_pv": _frac,
        "q_max_frac": _frac,
        "motor1": MOTOR1, "motor3": MOTOR3, "zip": ZIP,
    },
    ["id", "root", "first_buses", "loads", "f_s", "f_m1", "f_m3"],
)

AREAS = _obj({"format_version": _version, "areas": {"type": "array", "items": AREA}}, ["areas"])

AREA_OVERRIDE = _obj(
    {"id": {"type": "string"}, "f_s": _frac, "f_el": _frac, "f_m1": _frac, "f_m3": _frac, "f_pv": _frac,
     "motor1": MOTOR1, "motor3": MOTOR3, "zip": ZIP},
    ["id"],
)

FAULT = _obj({"bus": _int, "start_s": _nonneg, "duration_s": _pos, "g_shunt_pu": _num, "b_shunt_pu": _num},
             ["bus", "start_s", "duration_s", "g_shunt_pu", "b_shunt_pu"])
SIM = _obj({"dt_s": _pos, "horizon_s": _pos, "seed": _int, "report_hz": _pos})

SCENARIO = _obj(
    {"format_version": _version, "fault": {"oneOf": [FAULT, {"type": "null"}]}, "sim": SIM,
     "areas": {"type": "array", "items": AREA_OVERRIDE}},
    ["sim"],
)

SUBMODEL = _obj(
    {
        "root": _int,
        "p_load_kw": _nonneg,
        "f_s": _frac, "f_m1": _frac, "f_m3": _frac, "f_el": _frac, "f_pv": _frac,
        "feeder": FEEDER, "zip": ZIP, "motor3": MOTOR3, "motor1": MOTOR1, "pv": PV,
    },
    ["root", "p_load_kw", "f_s", "f_m1", "f_m3", "feeder", "motor1"],
)

SUBMODELS = _obj(
    {"format_version": _version,
     "areas": {"type": "object", "additionalProperties": SUBMODEL, "minProperties": 1},
     "provenance": {"type": "object"}},
    ["areas"],
)

SHUNT = {"type": "array", "items": _num, "minItems": 2, "maxItems": 2}

SWEEP = _obj(
    {
        "format_version": _version,
        "fault_buses": {"type": "array", "minItems": 1, "items": _int},
        "durations_s": {"type": "array", "minItems": 1, "items": _pos},
        "shunts": {"type": "array", "minItems": 1, "items": SHUNT},
        "seed": _int,
        "start_s": _nonneg,
        "horizon_s": _pos,
        "dt_s": _pos,
        "load_scales": {"type": "array", "items": _pos},
        "include_no_fault": {"type": "boolean"},
        "starts": {"type": "integer", "minimum": 1},
        "max_iter": {"type": "integer", "minimum": 1},
        "held_out": {"type": "array", "items": _obj({"bus": _int, "duration_s": _pos, "shunt": SHUNT},
                                                   ["bus", "duration_s"])},
    },
    ["fault_buses", "durations_s", "shunts"],
)

CRITERION = _obj({"v_rec": _frac, "t_max_s": _pos})

CONTROL_CASE = _obj(
    {
        "name": {"type": "string"},
        "kind": {"enum": ["uniform", "area", "lp", "pv_q"]},
        "fraction": _frac,
        "area": {"type": "string"},
        "required_dt_s": {"type": "number", "maximum": 0},
        "match_uniform": _frac,
        "use_pv": {"type": "boolean"},
    },
    ["name", "kind"],
)

SUITE = _obj(
    {
        "format_version": _version,
        "sim": SIM,
        "scenarios": {"type": "array", "items": _obj({"name": {"type": "string"}, "fault": FAULT}, ["fault"])},
        "control_scenario": FAULT,
        "control_cases": {"type": "array", "items": CONTROL_CASE},
        "criterion": CRITERION,
        "delay_s": _nonneg,
    },
    [],
)

MONITOR_REPORT = _obj(
    {
        "event": {"oneOf": [{"type": "null"}, _obj({"t_detect": _num, "areas": {"type": "array"}},
                                                   ["t_detect", "areas"])]},
        "estimates": {"type": "object"},
        "t_total": {"type": ["number", "null"]},
        "flags": {"type": "array"},
        "knee_times": {"type": "object"},
        "v_l": {"type": "object"},
        "manifest": {"type": "string"},
    },
    ["event", "estimates", "flags"],
)

REGISTRY = {
    "network": NETWORK,
    "areas": AREAS,
    "scenario": SCENARIO,
    "submodels": SUBMODELS,
    "sweep": SWEEP,
    "suite": SUITE,
    "monitor_report": MONITOR_REPORT,
}


def validate(data, kind: str) -> None:
    """Validate ``data`` against the named schema, raising :class:`SchemaError`."""
    try:
        schema = REGISTRY[kind]
    except KeyError:
        raise ValueError(f"unknown schema {kind!r}") from None
    try:
        jsonschema.validate(data, schema)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise SchemaError(f"{kind} document, field {where}: {exc.message}") from None
