use std::fmt;

use serde::{Deserialize, Serialize};

/// Feature channels of the encoder. The first three are heuristic features;
/// `Avg` is their consensus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Lig,
    Dom,
    Sen,
    Avg,
}

impl Channel {
    pub const FEATURES: [Channel; 3] = [Channel::Lig, Channel::Dom, Channel::Sen];
    pub const ALL: [Channel; 4] = [Channel::Lig, Channel::Dom, Channel::Sen, Channel::Avg];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Channel::Lig => "lig",
            Channel::Dom => "dom",
            Channel::Sen => "sen",
            Channel::Avg => "avg",
        }
    }

    pub fn parse(s: &str) -> Option<Channel> {
        Channel::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(s.trim()))
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}
