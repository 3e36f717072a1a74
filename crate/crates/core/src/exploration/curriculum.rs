//! Candidate scoring: `S = w_b·B + w_d·D + w_u·U + w_i·I`.

use serde::{Deserialize, Serialize};

use super::tree::SkillTree;
use crate::config::{ExplorationConfig, WeightsConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurriculumWeights {
    pub w_b: f64,
    pub w_d: f64,
    pub w_u: f64,
    pub w_i: f64,
}

impl Default for CurriculumWeights {
    fn default() -> Self {
        WeightsConfig::default().into()
    }
}

impl From<WeightsConfig> for CurriculumWeights {
    fn from(w: WeightsConfig) -> Self {
        Self {
            w_b: w.breadth,
            w_d: w.depth,
            w_u: w.utility,
            w_i: w.innovation,
        }
    }
}

impl CurriculumWeights {
    pub fn as_array(&self) -> [f64; 4] {
        [self.w_b, self.w_d, self.w_u, self.w_i]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self {
            w_b: a[0],
            w_d: a[1],
            w_u: a[2],
            w_i: a[3],
        }
    }

    pub fn sum(&self) -> f64 {
        self.as_array().iter().sum()
    }

    pub fn normalized(&self) -> Self {
        let s = self.sum();
        Self::from_array(self.as_array().map(|w| w / s))
    }
}

/// Per-dimension values of one candidate, each in `[0, 10]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreBreakdown {
    pub breadth: f64,
    pub depth: f64,
    pub utility: f64,
    pub innovation: f64,
}

impl ScoreBreakdown {
    pub fn as_array(&self) -> [f64; 4] {
        [self.breadth, self.depth, self.utility, self.innovation]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dimension {
    Breadth,
    Depth,
    Utility,
    Innovation,
}

const DIMENSIONS: [Dimension; 4] = [Dimension::Breadth, Dimension::Depth, Dimension::Utility, Dimension::Innovation];

/// `B = 10 · max(0, 1 − |S_c| / (S̄ + 1))`. `S̄` is the mean skill count over
/// registered categories, empty ones included; a category not yet in the
/// tree has `|S_c| = 0`.
pub fn breadth(category: &str, tree: &SkillTree) -> f64 {
    let n = tree.categories.len();
    let mean = if n == 0 {
        0.0
    } else {
        tree.categories.values().map(Vec::len).sum::<usize>() as f64 / n as f64
    };
    let count = tree.categories.get(category).map_or(0, Vec::len) as f64;
    10.0 * (1.0 - count / (mean + 1.0)).max(0.0)
}

/// `D = 10 · u / (u_max + 1)`; zero for a skill that does not exist yet.
pub fn depth(category: &str, skill: Option<&str>, tree: &SkillTree) -> f64 {
    let Some(skill) = skill.and_then(|name| tree.skill(category, name)) else {
        return 0.0;
    };
    let u_max = tree.skills().map(|(_, s)| s.usage_count).max().unwrap_or(0);
    10.0 * skill.usage_count as f64 / (u_max as f64 + 1.0)
}

pub fn score(b: &ScoreBreakdown, w: &CurriculumWeights) -> f64 {
    w.w_b * b.breadth + w.w_d * b.depth + w.w_u * b.utility + w.w_i * b.innovation
}

/// Largest weighted contribution; ties go to the earlier of b, d, u, i.
pub fn dominant_dimension(b: &ScoreBreakdown, w: &CurriculumWeights) -> Dimension {
    let contrib: Vec<f64> = w.as_array().iter().zip(b.as_array()).map(|(w, x)| w * x).collect();
    let mut best = 0;
    for i in 1..4 {
        if contrib[i] > contrib[best] {
            best = i;
        }
    }
    DIMENSIONS[best]
}

/// One finished exploration task as seen by the adaptation rule.
#[derive(Debug, Clone, PartialEq)]
pub struct CompletedTask {
    pub skill: String,
    pub score: f64,
    pub breakdown: Option<ScoreBreakdown>,
    pub usage: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adaptation {
    pub weights: CurriculumWeights,
    /// `(skill, dimension, factor)` for every adjustment made.
    pub applied: Vec<(String, Dimension, f64)>,
    pub skipped: Vec<String>,
}

/// Over-predicted skills (high score, little use) shrink their dominant
/// weight by 10%; under-predicted ones (low score, heavy use) grow it by 10%.
/// Weights are renormalized once at the end.
pub fn adapt_weights(weights: &CurriculumWeights, tasks: &[CompletedTask], cfg: &ExplorationConfig) -> Adaptation {
    let mut w = weights.as_array();
    let mut applied = Vec::new();
    let mut skipped = Vec::new();
    for t in tasks {
        let Some(b) = &t.breakdown else {
            tracing::info!(skill = %t.skill, "no score breakdown; skipped in weight adaptation");
            skipped.push(t.skill.clone());
            continue;
        };
        let factor = if t.score > cfg.high_score && t.usage < cfg.low_usage {
            0.9
        } else if t.score < cfg.low_score && t.usage > cfg.high_usage {
            1.1
        } else {
            continue;
        };
        let dim = dominant_dimension(b, weights);
        let idx = DIMENSIONS.iter().position(|d| *d == dim).unwrap();
        w[idx] *= factor;
        applied.push((t.skill.clone(), dim, factor));
    }
    let weights = if applied.is_empty() {
        *weights
    } else {
        CurriculumWeights::from_array(w).normalized()
    };
    Adaptation {
        weights,
        applied,
        skipped,
    }
}
