//! Metric rows over sets of clips, and their CSV / markdown forms.

use std::fmt::Write as _;
use std::path::Path;

use cospeech_core::align::AlignSpace;
use cospeech_core::data::{BodyPart, Clip};
use cospeech_core::eval::{beat_consistency, diversity, fgd, mm_dist, r_precision, FeatureSet, Provenance};
use cospeech_core::persist::io::write_atomic;
use cospeech_core::persist::seed;
use cospeech_core::{Error, Result};
use serde::{Deserialize, Serialize};

/// Distractors must differ from the query prompt by more than this.
pub const DISTRACTOR_SIMILARITY: f64 = 0.8;
pub const RETRIEVAL_BATCH: usize = 32;
pub const RETRIEVAL_REPETITIONS: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Fgd,
    Bc,
    Diversity,
    Rprecision,
    Mmdist,
}

impl Metric {
    pub const ALL: [Metric; 5] = [Metric::Fgd, Metric::Bc, Metric::Diversity, Metric::Rprecision, Metric::Mmdist];
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub system: String,
    pub metric: String,
    pub value: f64,
    pub seed: u64,
}

fn features(space: &AlignSpace, clips: &[Clip]) -> Result<Vec<Vec<f64>>> {
    clips.iter().map(|c| Ok(space.encode_motion(&c.motion.frames)?.mu.into_data())).collect()
}

/// Rows for `gen` (FGD against `real`); metrics a clip set cannot support are skipped.
pub fn clip_metrics(space: &AlignSpace, real: &[Clip], gen: &[Clip], which: &[Metric], system: &str, run_seed: u64) -> Result<Vec<MetricRow>> {
    if gen.is_empty() {
        return Err(Error::Empty("no generated clips to evaluate".into()));
    }
    let gen_feats = features(space, gen)?;
    let mut rows = Vec::new();
    let mut push = |metric: &str, value: f64| {
        rows.push(MetricRow {
            system: system.to_string(),
            metric: metric.to_string(),
            value,
            seed: run_seed,
        })
    };
    for &m in which {
        match m {
            Metric::Fgd => {
                if real.is_empty() {
                    return Err(Error::Empty("FGD needs real clips".into()));
                }
                let r = FeatureSet::new(features(space, real)?, Provenance::Real)?;
                let g = FeatureSet::new(gen_feats.clone(), Provenance::Generated)?;
                push("fgd", fgd(&r, &g)?);
            }
            Metric::Bc => {
                let scores: Vec<f64> = gen
                    .iter()
                    .filter_map(|c| c.audio.as_ref().map(|a| (c, a)))
                    .filter(|(_, a)| !a.beat_times.is_empty())
                    .map(|(c, a)| beat_consistency(&c.motion.part(BodyPart::Upper), &a.beat_times))
                    .collect::<Result<_>>()?;
                if !scores.is_empty() {
                    push("bc", scores.iter().sum::<f64>() / scores.len() as f64);
                }
            }
            Metric::Diversity => {
                if gen.len() >= 2 {
                    push("diversity", diversity(&FeatureSet::new(gen_feats.clone(), Provenance::Generated)?)?);
                }
            }
            Metric::Rprecision | Metric::Mmdist => {
                let prompted: Vec<usize> = (0..gen.len()).filter(|&i| gen[i].prompt.is_some()).collect();
                if prompted.is_empty() {
                    continue;
                }
                let text: Vec<Vec<f64>> = prompted
                    .iter()
                    .map(|&i| Ok(space.encode_text(gen[i].prompt.as_ref().expect("prompted"))?.mu.into_data()))
                    .collect::<Result<_>>()?;
                let motion: Vec<Vec<f64>> = prompted.iter().map(|&i| gen_feats[i].clone()).collect();
                if m == Metric::Mmdist {
                    push("mm_dist", mm_dist(&text, &motion)?);
                    continue;
                }
                let prompt = |k: usize| gen[prompted[k]].prompt.as_ref().expect("prompted");
                let eligible = |q: usize, j: usize| prompt(q).similarity(prompt(j)) <= DISTRACTOR_SIMILARITY;
                let smallest_pool = (0..prompted.len())
                    .map(|q| (0..prompted.len()).filter(|&j| j != q && eligible(q, j)).count())
                    .min()
                    .unwrap_or(0);
                let batch = RETRIEVAL_BATCH.min(smallest_pool + 1);
                if batch < 2 {
                    continue;
                }
                let mut rng = seed::stream(run_seed, "eval-retrieval");
                let r = r_precision(&text, &motion, eligible, batch, RETRIEVAL_REPETITIONS, &mut rng)?;
                push("r_precision_top1", r.top1);
                push("r_precision_top2", r.top2);
                push("r_precision_top3", r.top3);
            }
        }
    }
    Ok(rows)
}

pub fn to_csv(rows: &[MetricRow]) -> String {
    let mut out = String::from("system,metric,value,seed\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{}", r.system, r.metric, r.value, r.seed);
    }
    out
}

pub fn to_markdown(rows: &[MetricRow]) -> String {
    let mut out = String::from("| system | metric | value | seed |\n|---|---|---|---|\n");
    for r in rows {
        let _ = writeln!(out, "| {} | {} | {:.4} | {} |", r.system, r.metric, r.value, r.seed);
    }
    out
}

/// Writes `path` (CSV) and a markdown table next to it.
pub fn write_metrics(path: &Path, rows: &[MetricRow]) -> Result<()> {
    write_atomic(path, to_csv(rows).as_bytes())?;
    write_atomic(&path.with_extension("md"), to_markdown(rows).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout() {
        let rows = vec![MetricRow {
            system: "gen".into(),
            metric: "fgd".into(),
            value: 0.25,
            seed: 3,
        }];
        assert_eq!(to_csv(&rows), "system,metric,value,seed\ngen,fgd,0.25,3\n");
        assert!(to_markdown(&rows).contains("| gen | fgd | 0.2500 | 3 |"));
    }
}
