//! Case documents: network data plus device parameter blocks.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::devices::{AvrParams, GeneratorParams, GovernorParams, LtcParams, OxlParams, RecoveryLoadParams};
use crate::error::{InputError, Issue};
use crate::network::{Branch, Bus, BusKind};

fn default_base() -> f64 {
    100.0
}

fn default_frequency() -> f64 {
    60.0
}

fn default_omega_max() -> f64 {
    0.2
}

fn default_v_min() -> f64 {
    0.3
}

fn default_v_max() -> f64 {
    2.0
}

/// Variable bounds of the study region. Leaving them marks the run as
/// short-term unstable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyRegion {
    /// Largest admissible |ω| (pu speed deviation).
    #[serde(default = "default_omega_max")]
    pub omega_max: f64,
    #[serde(default = "default_v_min")]
    pub v_min: f64,
    #[serde(default = "default_v_max")]
    pub v_max: f64,
}

impl Default for StudyRegion {
    fn default() -> Self {
        Self {
            omega_max: default_omega_max(),
            v_min: default_v_min(),
            v_max: default_v_max(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Case {
    pub name: String,
    #[serde(default = "default_base")]
    pub base_mva: f64,
    #[serde(default = "default_frequency")]
    pub frequency_hz: f64,
    #[serde(default)]
    pub bounds: StudyRegion,
    pub buses: Vec<Bus>,
    #[serde(default)]
    pub branches: Vec<Branch>,
    #[serde(default)]
    pub generators: Vec<GeneratorParams>,
    #[serde(default)]
    pub avrs: Vec<AvrParams>,
    #[serde(default)]
    pub oxls: Vec<OxlParams>,
    #[serde(default)]
    pub governors: Vec<GovernorParams>,
    #[serde(default)]
    pub recovery_loads: Vec<RecoveryLoadParams>,
    #[serde(default)]
    pub ltcs: Vec<LtcParams>,
    /// Free-form notes on where tuned parameter values came from.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub provenance: BTreeMap<String, String>,
}

const SECTIONS: &[&str] = &[
    "name",
    "base_mva",
    "frequency_hz",
    "bounds",
    "buses",
    "branches",
    "generators",
    "avrs",
    "oxls",
    "governors",
    "recovery_loads",
    "ltcs",
    "provenance",
];

impl Case {
    pub fn branch_index(&self, id: &str) -> Option<usize> {
        self.branches.iter().position(|b| b.id == id)
    }

    pub fn generator_index(&self, id: &str) -> Option<usize> {
        self.generators.iter().position(|g| g.id == id)
    }

    pub fn bus(&self, id: u32) -> Option<&Bus> {
        self.buses.iter().find(|b| b.id == id)
    }

    /// Referential and physical checks; every problem is reported.
    pub fn validate(&self) -> Vec<Issue> {
        let mut out = Vec::new();
        let mut push = |path: String, msg: String| out.push(Issue::new(path, msg));

        if !(self.base_mva > 0.0) {
            push("base_mva".into(), "must be positive".into());
        }
        if !(self.frequency_hz > 0.0) {
            push("frequency_hz".into(), "must be positive".into());
        }
        let b = &self.bounds;
        if !(b.omega_max > 0.0 && b.v_min >= 0.0 && b.v_max > b.v_min) {
            push("bounds".into(), "need omega_max > 0 and 0 <= v_min < v_max".into());
        }

        let mut bus_ids = BTreeSet::new();
        let mut slack = 0;
        for (i, bus) in self.buses.iter().enumerate() {
            if !bus_ids.insert(bus.id) {
                push(format!("buses[{i}].id"), format!("duplicate bus id {}", bus.id));
            }
            if bus.kind == BusKind::Slack {
                slack += 1;
            }
            if !(bus.v > 0.0) {
                push(format!("buses[{i}].v"), "must be positive".into());
            }
        }
        if slack != 1 {
            push("buses".into(), format!("expected exactly one slack bus, found {slack}"));
        }

        let mut branch_ids = BTreeSet::new();
        for (i, br) in self.branches.iter().enumerate() {
            if !branch_ids.insert(br.id.as_str()) {
                push(format!("branches[{i}].id"), format!("duplicate branch id {}", br.id));
            }
            for (end, bus) in [("from", br.from), ("to", br.to)] {
                if !bus_ids.contains(&bus) {
                    push(format!("branches[{i}].{end}"), format!("unknown bus {bus}"));
                }
            }
            if br.from == br.to {
                push(format!("branches[{i}]"), "branch connects a bus to itself".into());
            }
            if br.x == 0.0 || !br.x.is_finite() {
                push(format!("branches[{i}].x"), "reactance must be nonzero".into());
            }
            if !(br.tap > 0.0) {
                push(format!("branches[{i}].tap"), "must be positive".into());
            }
        }

        let mut gen_ids = BTreeSet::new();
        let mut gen_buses = BTreeSet::new();
        for (i, g) in self.generators.iter().enumerate() {
            if !gen_ids.insert(g.id.as_str()) {
                push(format!("generators[{i}].id"), format!("duplicate generator id {}", g.id));
            }
            match self.bus(g.bus) {
                None => push(format!("generators[{i}].bus"), format!("unknown bus {}", g.bus)),
                Some(b) if b.kind != BusKind::Generator => push(
                    format!("generators[{i}].bus"),
                    format!("bus {} is not a generator bus", g.bus),
                ),
                Some(_) => {}
            }
            if !gen_buses.insert(g.bus) {
                push(format!("generators[{i}].bus"), format!("second generator on bus {}", g.bus));
            }
            if !(g.v_set > 0.0) {
                push(format!("generators[{i}].v_set"), "must be positive".into());
            }
            for m in g.validate() {
                push(format!("generators[{i}]"), m);
            }
        }
        for (i, bus) in self.buses.iter().enumerate() {
            if bus.kind == BusKind::Generator && !gen_buses.contains(&bus.id) {
                push(format!("buses[{i}].kind"), format!("generator bus {} hosts no generator", bus.id));
            }
        }

        let gen_ref = |section: &str, items: &mut dyn Iterator<Item = &str>, out: &mut Vec<Issue>| {
            let mut seen = BTreeSet::new();
            for (i, gen) in items.enumerate() {
                if !gen_ids.contains(gen) {
                    out.push(Issue::new(format!("{section}[{i}].generator"), format!("unknown generator {gen}")));
                } else if !seen.insert(gen.to_string()) {
                    out.push(Issue::new(format!("{section}[{i}].generator"), format!("second {section} entry for {gen}")));
                }
            }
        };
        gen_ref("avrs", &mut self.avrs.iter().map(|a| a.generator.as_str()), &mut out);
        gen_ref("oxls", &mut self.oxls.iter().map(|a| a.generator.as_str()), &mut out);
        gen_ref("governors", &mut self.governors.iter().map(|a| a.generator.as_str()), &mut out);

        let avr_gens: BTreeSet<&str> = self.avrs.iter().map(|a| a.generator.as_str()).collect();
        for (i, a) in self.avrs.iter().enumerate() {
            for m in a.validate() {
                out.push(Issue::new(format!("avrs[{i}]"), m));
            }
        }
        for (i, o) in self.oxls.iter().enumerate() {
            if !avr_gens.contains(o.generator.as_str()) {
                out.push(Issue::new(format!("oxls[{i}].generator"), "limiter needs a voltage regulator on the same generator"));
            }
            for m in o.validate() {
                out.push(Issue::new(format!("oxls[{i}]"), m));
            }
        }
        for (i, g) in self.governors.iter().enumerate() {
            for m in g.validate() {
                out.push(Issue::new(format!("governors[{i}]"), m));
            }
        }

        let mut load_ids = BTreeSet::new();
        for (i, l) in self.recovery_loads.iter().enumerate() {
            if !load_ids.insert(l.id.as_str()) {
                out.push(Issue::new(format!("recovery_loads[{i}].id"), format!("duplicate load id {}", l.id)));
            }
            match self.bus(l.bus) {
                None => out.push(Issue::new(format!("recovery_loads[{i}].bus"), format!("unknown bus {}", l.bus))),
                Some(b) if b.kind == BusKind::Slack => {
                    out.push(Issue::new(format!("recovery_loads[{i}].bus"), "loads on the slack bus are not modelled"))
                }
                Some(_) => {}
            }
            for m in l.validate() {
                out.push(Issue::new(format!("recovery_loads[{i}]"), m));
            }
        }

        let mut ltc_ids = BTreeSet::new();
        let mut ltc_branches = BTreeSet::new();
        for (i, t) in self.ltcs.iter().enumerate() {
            if !ltc_ids.insert(t.id.as_str()) {
                out.push(Issue::new(format!("ltcs[{i}].id"), format!("duplicate changer id {}", t.id)));
            }
            if !ltc_branches.insert(t.branch.as_str()) {
                out.push(Issue::new(format!("ltcs[{i}].branch"), format!("branch {} already has a changer", t.branch)));
            }
            match self.branch_index(&t.branch) {
                None => out.push(Issue::new(format!("ltcs[{i}].branch"), format!("unknown branch {}", t.branch))),
                Some(k) => {
                    let tap = self.branches[k].tap;
                    if t.validate().is_empty() && !t.on_grid(tap) {
                        out.push(Issue::new(
                            format!("ltcs[{i}].branch"),
                            format!("initial tap {tap} of branch {} is not on the changer grid", t.branch),
                        ));
                    }
                }
            }
            if !bus_ids.contains(&t.controlled_bus) {
                out.push(Issue::new(format!("ltcs[{i}].controlled_bus"), format!("unknown bus {}", t.controlled_bus)));
            }
            for m in t.validate() {
                out.push(Issue::new(format!("ltcs[{i}]"), m));
            }
        }
        out
    }
}

fn check_section<T: for<'de> Deserialize<'de>>(obj: &serde_json::Map<String, Value>, key: &str, issues: &mut Vec<Issue>) {
    if let Some(v) = obj.get(key) {
        if let Err(e) = serde_json::from_value::<T>(v.clone()) {
            issues.push(Issue::new(key, e.to_string()));
        }
    }
}

/// Parses and validates a case document. Buses come back sorted by id.
pub fn parse_case(text: &str) -> Result<Case, InputError> {
    let doc: Value = serde_json::from_str(text).map_err(|e| InputError::Syntax(e.to_string()))?;
    let Value::Object(obj) = doc else {
        return Err(InputError::Syntax("case document must be a JSON object".into()));
    };
    let mut issues = Vec::new();
    for key in obj.keys() {
        if !SECTIONS.contains(&key.as_str()) {
            issues.push(Issue::new(key.clone(), "unknown device type or section"));
        }
    }
    for key in ["name", "buses"] {
        if !obj.contains_key(key) {
            issues.push(Issue::new(key, "missing"));
        }
    }
    // each section separately, so one bad block doesn't hide the others
    check_section::<String>(&obj, "name", &mut issues);
    check_section::<f64>(&obj, "base_mva", &mut issues);
    check_section::<f64>(&obj, "frequency_hz", &mut issues);
    check_section::<StudyRegion>(&obj, "bounds", &mut issues);
    check_section::<Vec<Bus>>(&obj, "buses", &mut issues);
    check_section::<Vec<Branch>>(&obj, "branches", &mut issues);
    check_section::<Vec<GeneratorParams>>(&obj, "generators", &mut issues);
    check_section::<Vec<AvrParams>>(&obj, "avrs", &mut issues);
    check_section::<Vec<OxlParams>>(&obj, "oxls", &mut issues);
    check_section::<Vec<GovernorParams>>(&obj, "governors", &mut issues);
    check_section::<Vec<RecoveryLoadParams>>(&obj, "recovery_loads", &mut issues);
    check_section::<Vec<LtcParams>>(&obj, "ltcs", &mut issues);
    check_section::<BTreeMap<String, String>>(&obj, "provenance", &mut issues);
    if !issues.is_empty() {
        return Err(InputError::Invalid(issues));
    }
    let mut case: Case = serde_json::from_value(Value::Object(obj)).map_err(|e| InputError::Invalid(vec![Issue::new("", e.to_string())]))?;
    case.buses.sort_by_key(|b| b.id);
    let issues = case.validate();
    if issues.is_empty() {
        Ok(case)
    } else {
        Err(InputError::Invalid(issues))
    }
}

pub fn serialize_case(case: &Case) -> String {
    serde_json::to_string_pretty(case).expect("case serializes")
}

pub fn load_case(path: &std::path::Path) -> Result<Case, InputError> {
    parse_case(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_BUS: &str = r#"{
        "name": "two-bus",
        "buses": [
            {"id": 2, "kind": "load", "p_load": 0.5, "q_load": 0.1},
            {"id": 1, "kind": "slack"}
        ],
        "branches": [{"id": "1-2", "from": 1, "to": 2, "x": 0.1}]
    }"#;

    #[test]
    fn minimal_case_round_trips() {
        let case = parse_case(TWO_BUS).unwrap();
        assert_eq!(case.buses[0].id, 1);
        assert_eq!(case.base_mva, 100.0);
        let again = parse_case(&serialize_case(&case)).unwrap();
        assert_eq!(again, case);
    }

    #[test]
    fn unknown_section_is_reported() {
        let text = TWO_BUS.replacen("\"name\"", "\"statcoms\": [], \"name\"", 1);
        let err = parse_case(&text).unwrap_err();
        assert!(err.issues().iter().any(|i| i.path == "statcoms"));
    }

    #[test]
    fn problems_are_aggregated() {
        let text = r#"{
            "name": "bad",
            "buses": [{"id": 1, "kind": "slack"}, {"id": 2, "kind": "load"}],
            "branches": [{"id": "a", "from": 1, "to": 7, "x": 0.0}],
            "recovery_loads": [{"id": "L", "bus": 2, "p0": 1, "q0": 0, "tp": -1, "tq": 10,
                                "alpha_s": 0, "alpha_t": 2, "beta_s": 0, "beta_t": 2}]
        }"#;
        let err = parse_case(text).unwrap_err();
        let paths: Vec<&str> = err.issues().iter().map(|i| i.path.as_str()).collect();
        assert!(paths.contains(&"branches[0].to"), "{paths:?}");
        assert!(paths.contains(&"branches[0].x"));
        assert!(paths.contains(&"recovery_loads[0]"));
    }

    #[test]
    fn malformed_json_is_a_syntax_error() {
        assert!(matches!(parse_case("{"), Err(InputError::Syntax(_))));
        assert!(matches!(parse_case("[]"), Err(InputError::Syntax(_))));
    }
}
