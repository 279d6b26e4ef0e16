//! Scenarios bundled with the library.

use crate::sim::scenario::Scenario;

pub const SCALAR: &str = include_str!("../scenarios/scalar.toml");
pub const THERMOFLUID: &str = include_str!("../scenarios/thermofluid.toml");
pub const CUBE: &str = include_str!("../scenarios/cube.toml");
pub const CUBE_UNSTABLE: &str = include_str!("../scenarios/cube_unstable.toml");

pub const NAMES: [&str; 4] = ["scalar", "thermofluid", "cube", "cube_unstable"];

pub fn source(name: &str) -> Option<&'static str> {
    match name {
        "scalar" => Some(SCALAR),
        "thermofluid" => Some(THERMOFLUID),
        "cube" => Some(CUBE),
        "cube_unstable" => Some(CUBE_UNSTABLE),
        _ => None,
    }
}

/// Parses a bundled scenario; bundled files are always valid.
pub fn load(name: &str) -> Option<Scenario> {
    source(name).map(|text| Scenario::from_toml(text).expect("bundled scenario is valid"))
}

pub fn all() -> Vec<Scenario> {
    NAMES.iter().filter_map(|n| load(n)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::check_assumptions;

    #[test]
    fn bundled_scenarios_parse_and_satisfy_assumptions() {
        for s in all() {
            let report = check_assumptions(&s.plant, &s.gains).unwrap();
            assert!(report.a1 && report.a2, "{}: {report:?}", s.source.name);
        }
    }
}
