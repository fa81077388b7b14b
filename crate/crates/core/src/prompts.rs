//! Role prompts for the three cognitive roles.
//!
//! Defaults are compiled in from `assets/prompts/`; a directory of override
//! files with the same names can replace any of them, so the templates stay
//! editable without rebuilding.

use std::collections::BTreeSet;
use std::io;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::types::ModalityKind;

pub const DEFAULT_PLANNER_PROMPT: &str = include_str!("../assets/prompts/planner.txt");
pub const DEFAULT_REASONER_PROMPT: &str = include_str!("../assets/prompts/reasoner.txt");
pub const DEFAULT_DECIDER_OPEN_PROMPT: &str = include_str!("../assets/prompts/decider_open.txt");
pub const DEFAULT_DECIDER_MC_PROMPT: &str = include_str!("../assets/prompts/decider_mc.txt");

/// Which decision template to use. Both ship as editable assets and are
/// selectable per run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DecideTemplate {
    #[default]
    Open,
    #[serde(rename = "mc", alias = "multiple-choice")]
    MultipleChoice,
}

impl FromStr for DecideTemplate {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "open" => Ok(DecideTemplate::Open),
            "mc" | "multiple-choice" => Ok(DecideTemplate::MultipleChoice),
            other => Err(format!("unknown template {other:?} (expected open|mc)")),
        }
    }
}

/// The three role prompts used to reconfigure one backend into planner,
/// reasoner, and decider.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptSet {
    pub plan: String,
    pub reason: String,
    pub decide_open: String,
    pub decide_mc: String,
}

impl Default for PromptSet {
    fn default() -> Self {
        PromptSet {
            plan: DEFAULT_PLANNER_PROMPT.to_string(),
            reason: DEFAULT_REASONER_PROMPT.to_string(),
            decide_open: DEFAULT_DECIDER_OPEN_PROMPT.to_string(),
            decide_mc: DEFAULT_DECIDER_MC_PROMPT.to_string(),
        }
    }
}

impl PromptSet {
    /// Replace any default whose override file exists in `dir`
    /// (`planner.txt`, `reasoner.txt`, `decider_open.txt`, `decider_mc.txt`).
    pub fn load_dir(dir: &Path) -> io::Result<Self> {
        let mut set = PromptSet::default();
        for (name, slot) in [
            ("planner.txt", &mut set.plan),
            ("reasoner.txt", &mut set.reason),
            ("decider_open.txt", &mut set.decide_open),
            ("decider_mc.txt", &mut set.decide_mc),
        ] {
            let path = dir.join(name);
            if path.exists() {
                *slot = std::fs::read_to_string(path)?;
            }
        }
        Ok(set)
    }

    /// Render the planning role prompt for a concrete available-modality set.
    /// Only available modality names are inserted.
    pub fn plan_role(&self, available: &BTreeSet<ModalityKind>) -> String {
        let names = available.iter().map(ModalityKind::as_str).collect::<Vec<_>>().join(", ");
        self.plan.replace("{{available}}", &names)
    }

    pub fn decide(&self, template: DecideTemplate) -> &str {
        match template {
            DecideTemplate::Open => &self.decide_open,
            DecideTemplate::MultipleChoice => &self.decide_mc,
        }
    }
}
