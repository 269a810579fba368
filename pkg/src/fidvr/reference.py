"""Balanced equivalent of the IEEE 37-node test feeder with six load areas.

The checked-in JSON files under ``fidvr/data`` are generated by
:func:`build_reference_files` and are what the CLI and tests load.
"""
from __future__ import annotations

import json
from importlib import resources
from pathlib import Path

from fidvr import dynamics as dyn
from fidvr.grid import Branch, Bus, FeederNetwork, TheveninSource
from fidvr.simulation import AreaSpec, FaultScenario, SimConfig

V_BASE_KV = 4.8
BASE_MVA = 1.0
Z_BASE = V_BASE_KV ** 2 / BASE_MVA
FT_PER_MILE = 5280.0

# positive-sequence series impedance (ohm/mile) and charging (uS/mile)
LINE_CONFIGS = {
    721: (0.2253 + 0.2341j, 159.79),
    722: (0.3122 + 0.3465j, 127.84),
    723: (0.8065 + 0.4602j, 74.81),
    724: (1.5748 + 0.5020j, 60.29),
}

# (from, to, length ft, config)
SEGMENTS = [
    (799, 701, 1850, 721), (701, 702, 960, 722), (702, 705, 400, 724), (702, 713, 360, 723),
    (702, 703, 1320, 722), (703, 727, 240, 724), (703, 730, 600, 723), (704, 714, 80, 724),
    (704, 720, 800, 723), (705, 742, 320, 724), (705, 712, 240, 724), (706, 725, 280, 724),
    (707, 724, 760, 724), (707, 722, 120, 724), (708, 733, 320, 723), (708, 732, 320, 724),
    (709, 731, 600, 723), (709, 708, 320, 723), (710, 735, 200, 724), (710, 736, 1280, 724),
    (711, 741, 400, 723), (711, 740, 200, 724), (713, 704, 520, 723), (714, 718, 520, 724),
    (720, 707, 920, 724), (720, 706, 600, 723), (727, 744, 280, 723), (730, 709, 200, 723),
    (733, 734, 560, 723), (734, 737, 640, 723), (734, 710, 520, 724), (737, 738, 400, 723),
    (738, 711, 400, 723), (744, 728, 200, 724), (744, 729, 280, 724),
]
# in-line substation-to-775 transformer, 500 kVA, 0.09 + j1.81 % on its own base
XFM_775 = (709, 775, (0.0009 + 0.0181j) / 0.5)

# total three-phase spot loads (kW)
SPOT_LOADS = {
    701: 630, 712: 85, 713: 85, 714: 38, 718: 85, 720: 85, 722: 161, 724: 42, 725: 42, 727: 42,
    728: 126, 729: 42, 730: 85, 731: 85, 732: 42, 733: 85, 734: 42, 735: 85, 736: 42, 737: 140,
    738: 126, 740: 85, 741: 42, 742: 93, 744: 42,
}

SERVICE_OFFSET = 1000

# area id -> (root, first bus below the root, P_load kW, F_s, F_m1, F_m3,
#             R_stall, X_stall, T_th, theta1, theta2)
AREA_TABLE = {
    "A1": (702, 705, 178, 0.61, 0.39, 0.00, 0.061, 0.073, 14.00, 0.714, 3.025),
    "A2": (702, 713, 538, 0.46, 0.54, 0.00, 0.092, 0.112, 12.00, 0.452, 1.949),
    "A3": (703, 727, 245, 0.49, 0.29, 0.22, 0.057, 0.058, 15.14, 0.450, 3.750),
    "A4": (709, 731, 160, 0.49, 0.51, 0.00, 0.074, 0.077, 13.99, 0.653, 3.222),
    "A5": (709, 708, 684, 0.47, 0.53, 0.00, 0.072, 0.091, 13.62, 0.739, 2.615),
    "A6": (701, 701 + SERVICE_OFFSET, 420, 0.20, 0.10, 0.70, 0.080, 0.090, 11.00, 0.800, 3.000),
}

F_PV = 0.25

# calibration of the balanced equivalent; pre-fault root voltage is about 0.89 p.u.
SOURCE_EMF = 1.02
SOURCE_Z = 0.01 + 0.06j
SERVICE_Z_PU_OWN = 0.012 + 0.035j  # on the service transformer's own kVA base
SERVICE_KVA_PER_KW = 1.25 / 0.9
NOMINAL_FAULT_SHUNT = 40.0 - 40.0j


def _line_pu(length_ft: float, config: int) -> tuple[complex, float]:
    z, b_us = LINE_CONFIGS[config]
    miles = length_ft / FT_PER_MILE
    return z * miles / Z_BASE, b_us * 1e-6 * miles * Z_BASE


def service_impedance(p_kw: float) -> complex:
    kva = max(p_kw * SERVICE_KVA_PER_KW, 1.0)
    return SERVICE_Z_PU_OWN * (BASE_MVA * 1e3 / kva)


def _area_loads() -> dict[str, list[tuple[int, float]]]:
    """Spot loads grouped per area, scaled to the tabulated area totals."""
    from collections import defaultdict

    segs = {(a, b) for a, b, _, _ in SEGMENTS}
    children = defaultdict(list)
    for a, b in segs:
        children[a].append(b)
    out = {}
    for aid, (root, first, p_area, *_rest) in AREA_TABLE.items():
        if first > SERVICE_OFFSET:
            buses = [root]
        else:
            buses, stack = [], [first]
            while stack:
                x = stack.pop()
                buses.append(x)
                stack.extend(children[x])
        raw = {b: SPOT_LOADS[b] for b in sorted(buses) if b in SPOT_LOADS}
        tot = sum(raw.values())
        out[aid] = [(b, p_area * p / tot) for b, p in raw.items()]
    return out


def build_network(emf: float = SOURCE_EMF, z_source: complex = SOURCE_Z) -> FeederNetwork:
    buses = {799: Bus(799, V_BASE_KV, True)}
    branches = []
    for a, b, ft, cfg in SEGMENTS:
        z, bsh = _line_pu(ft, cfg)
        buses.setdefault(a, Bus(a, V_BASE_KV))
        buses.setdefault(b, Bus(b, V_BASE_KV))
        branches.append(Branch(a, b, z, bsh))
    a, b, z = XFM_775
    buses[b] = Bus(b, 0.48)
    branches.append(Branch(a, b, z, 0.0))
    for loads in _area_loads().values():
        for node, kw in loads:
            sb = node + SERVICE_OFFSET
            buses[sb] = Bus(sb, 0.24)
            branches.append(Branch(node, sb, service_impedance(kw), 0.0))
    return FeederNetwork(sorted(buses.values(), key=lambda x: x.id), branches,
                         TheveninSource(complex(emf, 0.0), z_source), BASE_MVA)


def build_areas() -> list[AreaSpec]:
    loads = _area_loads()
    areas = []
    for aid, (root, first, _p, fs, fm1, fm3, r, x, tth, th1, th2) in AREA_TABLE.items():
        areas.append(AreaSpec(
            id=aid,
            root=root,
            first_buses=(first,),
            loads=tuple((b + SERVICE_OFFSET, kw) for b, kw in loads[aid]),
            f_s=fs, f_m1=fm1, f_m3=fm3, f_el=0.0, f_pv=F_PV,
            motor1=dyn.Motor1PhaseParameters(r_stall=r, x_stall=x, t_th=tth, theta1=th1, theta2=th2),
        ))
    return areas


def reference_scenario(bus: int = 701, duration: float = 0.080, start: float = 1.0,
                       shunt: complex = NOMINAL_FAULT_SHUNT) -> FaultScenario:
    return FaultScenario(bus=bus, start=start, duration=duration, fault_shunt=shunt)


# --------------------------------------------------------------------------
# file round trip


def _params_dict(p) -> dict:
    from dataclasses import asdict

    return {k: v for k, v in asdict(p).items() if v is not None}


def area_to_dict(a: AreaSpec) -> dict:
    return {
        "id": a.id,
        "root": a.root,
        "first_buses": list(a.first_buses),
        "loads": [{"bus": b, "p_kw": kw} for b, kw in a.loads],
        "f_s": a.f_s, "f_el": a.f_el, "f_m1": a.f_m1, "f_m3": a.f_m3, "f_pv": a.f_pv,
        "q_max_frac": a.q_max_frac,
        "motor1": _params_dict(a.motor1),
        "motor3": _params_dict(a.motor3),
        "zip": _params_dict(a.zip),
    }


def area_from_dict(d: dict) -> AreaSpec:
    return AreaSpec(
        id=d["id"], root=int(d["root"]), first_buses=tuple(int(b) for b in d["first_buses"]),
        loads=tuple((int(x["bus"]), float(x["p_kw"])) for x in d["loads"]),
        f_s=d["f_s"], f_el=d.get("f_el", 0.0), f_m1=d["f_m1"], f_m3=d["f_m3"], f_pv=d.get("f_pv", 0.0),
        q_max_frac=d.get("q_max_frac", 0.44),
        motor1=dyn.Motor1PhaseParameters(**d.get("motor1", {})),
        motor3=dyn.Motor3PhaseParameters(**d.get("motor3", {})),
        zip=dyn.ZipParameters(**d.get("zip", {})),
    )


def areas_to_dict(areas) -> dict:
    return {"format_version": 1, "areas": [area_to_dict(a) for a in areas]}


def load_areas(path) -> list[AreaSpec]:
    from fidvr import schemas

    data = json.loads(Path(path).read_text())
    schemas.validate(data, "areas")
    return [area_from_dict(d) for d in data["areas"]]


def scenario_to_dict(sc: FaultScenario | None, cfg: SimConfig) -> dict:
    out = {"format_version": 1,
           "sim": {"dt_s": cfg.dt, "horizon_s": cfg.horizon, "seed": cfg.seed, "report_hz": cfg.report_hz}}
    if sc is not None:
        out["fault"] = {"bus": sc.bus, "start_s": sc.start, "duration_s": sc.duration,
                        "g_shunt_pu": sc.fault_shunt.real, "b_shunt_pu": -sc.fault_shunt.imag}
    return out


def scenario_from_dict(d: dict) -> tuple[FaultScenario | None, SimConfig, list]:
    """Parse a scenario document into (fault, config, per-area overrides)."""
    from fidvr import schemas

    schemas.validate(d, "scenario")
    s = d.get("sim", {})
    cfg = SimConfig(dt=s.get("dt_s", 0.005), horizon=s.get("horizon_s", 25.0), seed=s.get("seed", 0),
                    report_hz=s.get("report_hz", 100.0))
    f = d.get("fault")
    sc = None
    if f is not None:
        sc = FaultScenario(bus=int(f["bus"]), start=float(f["start_s"]), duration=float(f["duration_s"]),
                           fault_shunt=complex(f["g_shunt_pu"], -f["b_shunt_pu"]))
    return sc, cfg, d.get("areas", [])


def apply_area_overrides(areas, overrides) -> list[AreaSpec]:
    """Replace composition fractions or motor parameters of listed areas."""
    from dataclasses import replace

    by_id = {o["id"]: o for o in overrides}
    unknown = set(by_id) - {a.id for a in areas}
    if unknown:
        raise ValueError(f"overrides name unknown areas: {sorted(unknown)}")
    out = []
    for a in areas:
        o = by_id.get(a.id)
        if o is None:
            out.append(a)
            continue
        kw = {k: o[k] for k in ("f_s", "f_el", "f_m1", "f_m3", "f_pv") if k in o}
        for key in ("motor1", "motor3", "zip"):
            if key in o:
                kw[key] = replace(getattr(a, key), **o[key])
        out.append(replace(a, **kw))
    return out


def data_path(name: str) -> Path:
    return Path(str(resources.files("fidvr") / "data" / name))


def build_reference_files(directory=None) -> None:
    """Write the network, areas and reference-scenario JSON files."""
    directory = Path(directory) if directory is not None else data_path("")
    directory.mkdir(parents=True, exist_ok=True)
    build_network().save(directory / "ieee37_network.json")
    (directory / "ieee37_areas.json").write_text(json.dumps(areas_to_dict(build_areas()), indent=2) + "\n")
    (directory / "scenario_701_80ms.json").write_text(
        json.dumps(scenario_to_dict(reference_scenario(), SimConfig()), indent=2) + "\n")
