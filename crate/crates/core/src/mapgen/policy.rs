use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::geometry::Label;

/// SemanticKITTI category IDs used by the default policy.
pub mod semantic_kitti {
    use crate::geometry::Label;

    pub const UNLABELED: Label = 0;
    pub const CAR: Label = 10;
    pub const PERSON: Label = 30;
    pub const ROAD: Label = 40;
    pub const SIDEWALK: Label = 48;
    pub const BUILDING: Label = 50;
    pub const FENCE: Label = 51;
    pub const VEGETATION: Label = 70;
    pub const TRUNK: Label = 71;
    pub const TERRAIN: Label = 72;
    pub const POLE: Label = 80;
    pub const TRAFFIC_SIGN: Label = 81;
}

/// Which semantic categories survive into the maps, which count as
/// stick-like features, and which one is "building".
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SemanticPolicy {
    pub long_lasting_ids: BTreeSet<Label>,
    pub stick_ids: BTreeSet<Label>,
    pub building_id: Label,
}

impl Default for SemanticPolicy {
    fn default() -> Self {
        use semantic_kitti::*;
        Self {
            long_lasting_ids: [ROAD, SIDEWALK, BUILDING, TRUNK, TERRAIN, POLE, TRAFFIC_SIGN]
                .into_iter()
                .collect(),
            stick_ids: [POLE, TRAFFIC_SIGN].into_iter().collect(),
            building_id: BUILDING,
        }
    }
}

impl SemanticPolicy {
    pub fn validate(&self) -> Result<()> {
        if !self.stick_ids.is_subset(&self.long_lasting_ids) {
            return Err(Error::invalid("stick_ids must be a subset of long_lasting_ids"));
        }
        if !self.long_lasting_ids.contains(&self.building_id) {
            return Err(Error::invalid("building_id must be one of long_lasting_ids"));
        }
        Ok(())
    }

    pub fn is_long_lasting(&self, label: Label) -> bool {
        self.long_lasting_ids.contains(&label)
    }

    pub fn is_stick(&self, label: Label) -> bool {
        self.stick_ids.contains(&label)
    }

    pub fn is_building(&self, label: Label) -> bool {
        label == self.building_id
    }

    /// Reads `long_lasting_ids`, `stick_ids` and `building_id` from
    /// `key = value` text (comma-separated ID lists, `#` comments). Missing
    /// keys keep their defaults.
    pub fn from_config_str(text: &str) -> Result<Self> {
        let mut policy = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("policy line {}: expected key = value", n + 1)))?;
            let parse_list = |v: &str| -> Result<BTreeSet<Label>> {
                v.split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| {
                        s.parse::<Label>()
                            .map_err(|e| Error::invalid(format!("policy line {}: bad label '{s}': {e}", n + 1)))
                    })
                    .collect()
            };
            match key.trim() {
                "long_lasting_ids" => policy.long_lasting_ids = parse_list(value)?,
                "stick_ids" => policy.stick_ids = parse_list(value)?,
                "building_id" => {
                    policy.building_id = value
                        .trim()
                        .parse()
                        .map_err(|e| Error::invalid(format!("policy line {}: bad building_id: {e}", n + 1)))?
                }
                other => return Err(Error::invalid(format!("policy line {}: unknown key '{other}'", n + 1))),
            }
        }
        policy.validate()?;
        Ok(policy)
    }

    pub fn to_config_string(&self) -> String {
        let join = |s: &BTreeSet<Label>| s.iter().map(|l| l.to_string()).collect::<Vec<_>>().join(",");
        format!(
            "long_lasting_ids = {}\nstick_ids = {}\nbuilding_id = {}\n",
            join(&self.long_lasting_ids),
            join(&self.stick_ids),
            self.building_id
        )
    }
}
