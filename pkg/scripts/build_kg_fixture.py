"""Regenerate the bundled FMEA knowledge graph fixture.

    python3 scripts/build_kg_fixture.py src/asseteqa/data/fmea_kg.jsonl

Output is deterministic: a fixed seed drives the padding edges, and the
file is written through ``dump_kg`` (sorted records).
"""

from __future__ import annotations

import random
import sys

from asseteqa.kg import KgEntity, KgRelation, KnowledgeGraph, dump_kg, validate_kg

TARGET_RELATIONS = 1004

CATEGORIES = [
    ("drilling_equipment", "drilling equipment"),
    ("marine_equipment", "marine equipment"),
    ("electrical_systems", "electrical systems"),
    ("mechanical_systems", "mechanical systems"),
    ("rotating_equipment", "rotating machinery"),
    ("safety_and_control", "safety and control"),
    ("subsea_equipment", "subsea equipment"),
    ("well_completion", "well completion"),
    ("well_intervention", "well intervention"),
]

# (id, name, category, class type, components)
ASSET_CLASSES = [
    ("model1", "model1", "rotating_equipment", "electric_motor_driven_rotating_machine", ["rotor", "bearings", "coupling", "power_supply"]),
    ("model2", "model2", "rotating_equipment", "electric_motor_driven_rotating_machine", ["rotor", "bearings", "coupling", "shaft", "power_supply"]),
    ("model3", "model3", "rotating_equipment", "electric_motor_driven_rotating_machine", ["rotor", "bearings", "drive_motor", "power_supply"]),
    ("model4", "model4", "rotating_equipment", "electric_motor_driven_rotating_machine", ["process_path", "discharge_line", "valves", "seals", "drive_motor", "power_supply"]),
    ("centrifugal_pump", "centrifugal pump", "rotating_equipment", "pump", ["impeller", "casing", "seals", "bearings"]),
    ("compressor", "compressor", "rotating_equipment", "compressor", ["impeller", "casing", "lubrication_system"]),
    ("gas_turbine", "gas turbine", "rotating_equipment", "turbine", ["combustor", "turbine_blades", "lubrication_system"]),
    ("electric_motor", "electric motor", "rotating_equipment", "motor", ["stator", "windings", "cooling_system"]),
    ("top_drive", "top drive", "drilling_equipment", "drilling_machine", ["gearbox", "brake"]),
    ("drawworks", "drawworks", "drilling_equipment", "hoisting_machine", ["wire_rope", "brake", "sheave"]),
    ("mud_pump", "mud pump", "drilling_equipment", "pump", ["packing", "valve_seat"]),
    ("winch", "winch", "marine_equipment", "deck_machinery", ["wire_rope", "hydraulic_cylinder"]),
    ("crane", "crane", "marine_equipment", "lifting_appliance", ["sheave", "hydraulic_cylinder"]),
    ("anchor_windlass", "anchor windlass", "marine_equipment", "deck_machinery", ["gearbox"]),
    ("transformer", "transformer", "electrical_systems", "power_transformer", ["windings", "insulation"]),
    ("switchgear", "switchgear", "electrical_systems", "switchgear", ["cable", "connector"]),
    ("frequency_converter", "frequency converter", "electrical_systems", "power_electronics", ["control_panel", "cooling_system"]),
    ("heat_exchanger", "heat exchanger", "mechanical_systems", "static_equipment", ["heat_exchanger_tubes", "flange"]),
    ("pressure_vessel", "pressure vessel", "mechanical_systems", "static_equipment", ["pressure_relief_valve", "flange"]),
    ("piping_system", "piping system", "mechanical_systems", "static_equipment", ["piping"]),
    ("fire_gas_detector", "fire and gas detector", "safety_and_control", "detector", ["sensor_element"]),
    ("esd_valve", "emergency shutdown valve", "safety_and_control", "valve", ["actuator", "valve_seat"]),
    ("control_logic_unit", "control logic unit", "safety_and_control", "control_system", ["logic_solver", "instrument"]),
    ("subsea_pipeline", "subsea pipeline", "subsea_equipment", "pipeline", ["riser"]),
    ("subsea_wellhead", "subsea wellhead", "subsea_equipment", "wellhead", ["wellhead_connector"]),
    ("umbilical", "umbilical", "subsea_equipment", "umbilical", ["cable"]),
    ("downhole_safety_valve", "downhole safety valve", "well_completion", "valve", ["tubing_hanger", "actuator"]),
    ("packer", "packer", "well_completion", "completion_tool", ["seals"]),
    ("coiled_tubing_unit", "coiled tubing unit", "well_intervention", "intervention_unit", ["hydraulic_cylinder"]),
    ("wireline_unit", "wireline unit", "well_intervention", "intervention_unit", ["wire_rope"]),
]

COMPONENTS = [
    "rotor", "bearings", "coupling", "shaft", "power_supply", "drive_motor", "process_path",
    "discharge_line", "valves", "seals", "impeller", "casing", "stator", "windings", "gearbox",
    "lubrication_system", "cooling_system", "combustor", "turbine_blades", "control_panel",
    "instrument", "actuator", "valve_seat", "packing", "piping", "flange", "heat_exchanger_tubes",
    "pressure_relief_valve", "cable", "connector", "insulation", "hydraulic_cylinder", "wire_rope",
    "brake", "sheave", "sensor_element", "logic_solver", "riser", "wellhead_connector", "tubing_hanger",
]

SENSORS = [
    ("volt", "Sensors used to monitor the voltage supplied to the machine; sags and spikes point to supply or winding problems."),
    ("rotate", "Speed sensors track rotational speed; drops or oscillations reflect drive, load, or coupling problems."),
    ("pressure", "Monitors the pressure of the process medium; sustained deviations indicate restrictions or leakage."),
    ("vibration", "Vibration sensors monitor machinery for abnormal vibrations, which can indicate issues like misalignment, imbalance, or wear."),
    ("temperature", "Temperature probes detect overheating of bearings, windings, and process fluids."),
    ("flow", "Flow meters measure throughput of the process medium."),
    ("current", "Current transducers measure electrical load on motors and feeders."),
    ("speed", "Tachometers report shaft speed for drive trains."),
    ("level", "Level transmitters monitor liquid inventory in tanks and vessels."),
    ("acoustic", "Acoustic emission sensors pick up cracking, cavitation, and leakage noise."),
    ("oil_debris", "Oil debris monitors count wear particles in lubrication circuits."),
    ("gas_detector", "Gas detectors sense hydrocarbon or toxic gas releases."),
    ("displacement", "Proximity probes measure shaft displacement and axial position."),
    ("strain", "Strain gauges measure structural load and deformation."),
    ("humidity", "Humidity sensors detect moisture ingress in enclosures."),
    ("torque", "Torque sensors measure transmitted shaft torque."),
    ("position", "Position transmitters report valve and actuator travel."),
    ("power", "Power meters measure active and reactive power draw."),
    ("frequency", "Frequency monitors track electrical supply frequency."),
    ("corrosion_probe", "Corrosion probes estimate metal loss rate in piping and vessels."),
]

# PdM-specific failure modes; their profiles are pinned (no padding edges).
PDM_MODES = [
    {
        "label": "comp1", "name": "Supply voltage instability", "severity": "medium",
        "description": "Electrical supply irregularities or winding degradation producing unstable voltage at the drive.",
        "sensors": ["volt"], "components": ["power_supply"],
        "indicators": {"volt_std": "elevated relative to healthy baseline", "volt_min": "deep sags"},
        "actions": ["inspect power supply connections and terminals", "check winding insulation resistance", "review supply voltage logs"],
    },
    {
        "label": "comp2", "name": "Drive speed instability", "severity": "high",
        "description": "Drive-train or load problems causing rotational speed to drop or oscillate.",
        "sensors": ["rotate"], "components": ["drive_motor", "shaft"],
        "indicators": {"rotate_mean": "below nominal speed", "rotate_std": "elevated"},
        "actions": ["inspect drive motor and controller", "check load conditions and belts", "verify speed controller tuning"],
    },
    {
        "label": "comp3", "name": "Rotor / bearing vibration fault", "severity": "very_high",
        "description": "Mechanical wear, misalignment, or unbalance in the rotor or bearings that raises vibration levels.",
        "sensors": ["vibration"], "components": ["rotor", "bearings"],
        "indicators": {"vibration_mean": "significantly above healthy baseline", "vibration_max": "high peaks"},
        "actions": ["perform vibration analysis and balancing", "inspect bearings, lubrication, and alignment", "check coupling condition and soft-foot or foundation issues"],
    },
    {
        "label": "comp4", "name": "Rotor / bearing vibration fault", "severity": "very_high",
        "description": "Mechanical wear, misalignment, or unbalance in the rotor, bearings, or coupling that disturbs speed and vibration.",
        "sensors": ["vibration", "rotate"], "components": ["rotor", "coupling"],
        "indicators": {"vibration_mean": "significantly above healthy baseline", "vibration_max": "high peaks"},
        "actions": ["perform vibration analysis and balancing", "inspect bearings, lubrication, and alignment", "check coupling condition and soft-foot or foundation issues"],
    },
]

ISO_MODES = [
    ("AIR", "Abnormal instrument reading"), ("BRD", "Breakdown"), ("DOP", "Delayed operation"),
    ("ELF", "External leakage - fuel"), ("ELP", "External leakage - process medium"),
    ("ELU", "External leakage - utility medium"), ("ERO", "Erratic output"),
    ("FTC", "Fail to close on demand"), ("FTF", "Fail to function on demand"),
    ("FTI", "Fail to function as intended"), ("FTL", "Fail to lock or unlock"),
    ("FTO", "Fail to open on demand"), ("FTR", "Fail to regulate"), ("FTS", "Fail to start on demand"),
    ("HIO", "High output"), ("IHT", "Insufficient heat transfer"), ("INL", "Internal leakage"),
    ("LBP", "Low oil supply pressure"), ("LCP", "Leakage in closed position"), ("LOA", "Load drop"),
    ("LOO", "Low output"), ("NOI", "Noise"), ("NOO", "No output"), ("OHE", "Overheating"),
    ("OTH", "Other"), ("PDE", "Parameter deviation"), ("PLU", "Plugged or choked"),
    ("POW", "Insufficient power"), ("SER", "Minor in-service problems"), ("SET", "Failed set or retrieve"),
    ("SLP", "Slippage"), ("SPO", "Spurious operation"), ("STD", "Structural deficiency"),
    ("STP", "Fail to stop on demand"), ("STU", "Stuck"), ("UNK", "Unknown"), ("UST", "Spurious stop"),
    ("VIB", "Vibration"), ("FCO", "Failure to connect"), ("FDC", "Failure to disconnect"),
    ("FRO", "Failure to rotate"), ("FWR", "Failure while running"), ("HTF", "Heating failure"),
    ("CLW", "Control line or wiring failure"), ("LOC", "Loss of communication"), ("LOP", "Loss of position"),
    ("ABR", "Abrasion or erosion"), ("COR", "Corrosion"), ("CRK", "Cracking"), ("FAT", "Fatigue"),
    ("SEA", "Seal failure"), ("BLO", "Blockage of flow line"), ("PRL", "Pressure loss"),
    ("OVP", "Overpressure"), ("ISO", "Insulation failure"), ("SHC", "Short circuit"),
    ("OPC", "Open circuit"), ("EAR", "Earth fault"), ("CAV", "Cavitation"),
]

GENERIC_ACTIONS = [
    "recalibrate instrument", "replace faulty sensor", "tighten flanges and replace gaskets",
    "replace seals", "overhaul valve internals", "lubricate moving parts", "replace bearings",
    "clean heat exchanger tubes", "flush and clean flow lines", "repair insulation",
    "replace damaged cable", "restore communication link", "inspect for corrosion and apply coating",
    "perform non-destructive testing for cracks", "reduce load and inspect structure",
    "adjust control setpoints", "function test on demand", "replace actuator", "repair hydraulic cylinder",
    "replace wire rope", "adjust brake", "clean filters and strainers", "check power supply",
    "perform thermographic inspection", "balance rotating assembly", "realign shaft",
    "replace impeller", "inspect combustor", "verify earthing and bonding", "stop and isolate equipment",
    "notify operations and log incident", "inspect mooring and positioning system",
    "replace turbine blades", "replace packing", "replace valve seat", "service gearbox",
    "test pressure relief valve", "inspect riser and supports", "retrieve and redress wellhead connector",
]


def build() -> KnowledgeGraph:
    rng = random.Random(20240607)
    entities: list[KgEntity] = []
    relations: list[KgRelation] = []

    def entity(eid: str, kind: str, name: str, description: str, **attrs: str) -> None:
        attrs["description"] = description
        entities.append(KgEntity(eid, kind, name, tuple(sorted(attrs.items()))))
        relations.append(KgRelation(eid, "description", description))

    for key, name in CATEGORIES:
        entity(f"cat:{key}", "asset_category", name, f"Asset category: {name}.")
    for cid, name, cat, ctype, comps in ASSET_CLASSES:
        entity(f"class:{cid}", "asset_class", name, f"Equipment class {name} ({ctype}).",
               equipment_category=cat, equipment_class_type=ctype)
        relations.append(KgRelation(f"cat:{cat}", "involves", f"class:{cid}"))
        for comp in comps:
            relations.append(KgRelation(f"comp:{comp}", "component_of", f"class:{cid}"))
    for comp in COMPONENTS:
        entity(f"comp:{comp}", "component", comp.replace("_", " "), f"Subunit or maintainable item: {comp.replace('_', ' ')}.")
    for name, desc in SENSORS:
        entity(f"sensor:{name}", "sensor", name, desc)

    action_ids: dict[str, str] = {}

    def action(text: str) -> str:
        if text not in action_ids:
            aid = f"action:{len(action_ids) + 1:02d}"
            action_ids[text] = aid
            entity(aid, "action", text, f"Maintenance action: {text}.")
        return action_ids[text]

    pinned: set[str] = set()
    for m in PDM_MODES:
        fid = f"fm:{m['label']}"
        pinned.add(fid)
        attrs = {f"indicator:{k}": v for k, v in m["indicators"].items()}
        entity(fid, "failure_mode", m["name"], m["description"], failure_label=m["label"],
               severity=m["severity"], equipment_category="rotating_equipment", **attrs)
        for s in m["sensors"]:
            relations.append(KgRelation(fid, "indicated_by", f"sensor:{s}"))
        for c in m["components"]:
            relations.append(KgRelation(fid, "affects", f"comp:{c}"))
        for a in m["actions"]:
            relations.append(KgRelation(fid, "mitigated_by", action(a)))
    for a in GENERIC_ACTIONS:
        action(a)

    sensor_ids = [f"sensor:{s}" for s, _ in SENSORS]
    comp_ids = [f"comp:{c}" for c in COMPONENTS]
    cat_keys = [k for k, _ in CATEGORIES]
    all_actions = sorted(action_ids.values())
    for code, name in ISO_MODES:
        fid = f"fm:{code}"
        cat = rng.choice(cat_keys)
        entity(fid, "failure_mode", name, f"{name} failure mode as classified in FMEA practice.",
               failure_label=code, severity=rng.choice(["low", "medium", "high", "very_high"]),
               equipment_category=cat)
        for s in rng.sample(sensor_ids, rng.randint(1, 3)):
            relations.append(KgRelation(fid, "indicated_by", s))
        for c in rng.sample(comp_ids, rng.randint(1, 3)):
            relations.append(KgRelation(fid, "affects", c))
        for a in rng.sample(all_actions, rng.randint(2, 3)):
            relations.append(KgRelation(fid, "mitigated_by", a))

    existing = set(relations)
    iso_ids = [f"fm:{code}" for code, _ in ISO_MODES]
    pool = [KgRelation(f, "affects", c) for f in iso_ids for c in comp_ids]
    pool += [KgRelation(f, "indicated_by", s) for f in iso_ids for s in sensor_ids]
    pool = [r for r in pool if r not in existing]
    rng.shuffle(pool)
    need = TARGET_RELATIONS - len(relations)
    if need < 0:
        raise SystemExit(f"base graph already has {len(relations)} relations")
    relations.extend(pool[:need])
    return KnowledgeGraph(entities, relations)


def main(argv: list[str]) -> int:
    kg = build()
    report = validate_kg(kg)
    print(report.n_entities, "entities,", report.n_relations, "relations,", report.entities_by_kind)
    assert report.ok and not report.cycle_warnings
    dump_kg(kg, argv[1] if len(argv) > 1 else "src/asseteqa/data/fmea_kg.jsonl")
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv))
