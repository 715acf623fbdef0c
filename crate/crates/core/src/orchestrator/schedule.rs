use serde::{Deserialize, Serialize};

/// Capital mobility for episode `episode`: a linear ramp saturating at 1, or
/// full mobility from the start when the curriculum is off.
pub fn curriculum_phi(episode: usize, rate: f64, enabled: bool) -> f64 {
    if enabled {
        (rate * episode as f64).min(1.0)
    } else {
        1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Target {
    Group(usize),
    All,
}

impl Target {
    pub fn includes(&self, group: usize) -> bool {
        match *self {
            Target::Group(g) => g == group,
            Target::All => true,
        }
    }

    /// Group index, or -1 for all groups.
    pub fn as_index(&self) -> i64 {
        match *self {
            Target::Group(g) => g as i64,
            Target::All => -1,
        }
    }
}

/// Round-robin choice of the single group trained in episode `k`.
pub fn select_target_group(k: usize, groups: usize, sequential: bool) -> Target {
    if sequential {
        Target::Group(k % groups.max(1))
    } else {
        Target::All
    }
}
