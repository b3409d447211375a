//! The five-case interaction ablation: train and evaluate each switch
//! combination with shared data seeds and emit a machine-readable table.

use super::train::{evaluate_episode, train};
use super::{InteractionSwitches, RunConfig};
use crate::error::Result;
use crate::synthdata::{generate_episode, Episode, WorldSpec};
use serde::{Deserialize, Serialize};

/// One ablation case: its table number and the switch settings.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationCase {
    pub case_no: u8,
    pub switches: InteractionSwitches,
}

/// The five canonical cases in table order.
pub fn table_cases() -> Vec<AblationCase> {
    (1..=5)
        .map(|case_no| AblationCase {
            case_no,
            switches: InteractionSwitches::case(case_no).expect("1..=5"),
        })
        .collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AblationRow {
    pub case_no: u8,
    pub seed: u64,
    pub detection_accuracy: f64,
    pub anticipation_accuracy: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AblationMedian {
    pub case_no: u8,
    pub detection_accuracy: f64,
    pub anticipation_accuracy: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
    pub medians: Vec<AblationMedian>,
}

impl AblationTable {
    pub fn median(&self, case_no: u8) -> Option<&AblationMedian> {
        self.medians.iter().find(|m| m.case_no == case_no)
    }

    /// CSV rendering with a reproducibility header (`#`-prefixed lines).
    pub fn to_csv(&self, config: &RunConfig) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "# config: {}\n# seed: {}\n",
            serde_json::to_string(config).expect("config serializes"),
            config.seed
        ));
        out.push_str("kind,case,seed,detection_accuracy,anticipation_accuracy\n");
        for row in &self.rows {
            out.push_str(&format!(
                "run,{},{},{:.6},{:.6}\n",
                row.case_no, row.seed, row.detection_accuracy, row.anticipation_accuracy
            ));
        }
        for m in &self.medians {
            out.push_str(&format!(
                "median,{},,{:.6},{:.6}\n",
                m.case_no, m.detection_accuracy, m.anticipation_accuracy
            ));
        }
        out
    }
}

fn median(mut values: Vec<f64>) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite accuracies"));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Trains and evaluates every case over the given seeds. Data is generated
/// from the world once per seed and shared across all cases, so rows differ
/// only in the interaction switches.
pub fn run_ablation(
    base: &RunConfig,
    world: &WorldSpec,
    seeds: &[u64],
    train_frames: usize,
    eval_frames: usize,
) -> Result<AblationTable> {
    base.validate()?;
    world.validate()?;
    let mut rows = Vec::new();
    let mut datasets: Vec<(Episode, Episode)> = Vec::new();
    for &seed in seeds {
        let train_ep = generate_episode(world, train_frames, base.horizon, seed.wrapping_mul(2) + 1)?;
        let eval_ep = generate_episode(world, eval_frames, base.horizon, seed.wrapping_mul(2) + 2)?;
        datasets.push((train_ep, eval_ep));
    }
    for case in table_cases() {
        for (&seed, (train_ep, eval_ep)) in seeds.iter().zip(&datasets) {
            let config = RunConfig {
                interactions: case.switches,
                seed,
                ..base.clone()
            };
            let trained = train(&config, std::slice::from_ref(train_ep))?;
            let eval = evaluate_episode(&trained.model, eval_ep)?;
            rows.push(AblationRow {
                case_no: case.case_no,
                seed,
                detection_accuracy: eval.detection_accuracy,
                anticipation_accuracy: eval.anticipation_accuracy,
            });
        }
    }
    let medians = table_cases()
        .iter()
        .map(|case| AblationMedian {
            case_no: case.case_no,
            detection_accuracy: median(
                rows.iter()
                    .filter(|r| r.case_no == case.case_no)
                    .map(|r| r.detection_accuracy)
                    .collect(),
            ),
            anticipation_accuracy: median(
                rows.iter()
                    .filter(|r| r.case_no == case.case_no)
                    .map(|r| r.anticipation_accuracy)
                    .collect(),
            ),
        })
        .collect();
    Ok(AblationTable { rows, medians })
}
