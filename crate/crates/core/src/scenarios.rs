//! Scenario files shipped with the crate.

use crate::error::ConfigError;
use crate::simnet::WorldConfig;

pub const BUNDLED: [(&str, &str); 5] = [
    ("two_agents_contact", include_str!("../scenarios/two_agents_contact.toml")),
    ("planted_alert", include_str!("../scenarios/planted_alert.toml")),
    ("security_table", include_str!("../scenarios/security_table.toml")),
    ("desk_scale", include_str!("../scenarios/desk_scale.toml")),
    ("battleship", include_str!("../scenarios/battleship.toml")),
];

pub fn names() -> impl Iterator<Item = &'static str> {
    BUNDLED.iter().map(|(n, _)| *n)
}

pub fn source(name: &str) -> Option<&'static str> {
    BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

pub fn load(name: &str) -> Option<Result<WorldConfig, ConfigError>> {
    source(name).map(WorldConfig::from_toml)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_bundled_scenario_parses() {
        for name in names() {
            let cfg = load(name).unwrap().unwrap_or_else(|e| panic!("{name}: {e}"));
            assert!(cfg.duration_slots > 0, "{name}");
        }
        assert_eq!(load("desk_scale").unwrap().unwrap().agents.len(), 200);
        assert!(load("missing").is_none());
    }
}
