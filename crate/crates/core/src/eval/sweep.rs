use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{csv_err, evaluate_model, EvalReport};
use crate::corpus::{TestSample, TrainingSample};
use crate::error::{Error, Result};
use crate::kg::Kg;
use crate::model::{InferenceModel, ModelConfig};
use crate::trainer::{train, Providers, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    Alpha,
    SubstitutionRate,
    AugmentationRate,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Alpha => "alpha",
            SweepParam::SubstitutionRate => "substitution_rate",
            SweepParam::AugmentationRate => "augmentation_rate",
        }
    }

    fn apply(self, config: &mut TrainConfig, value: f64) {
        match self {
            SweepParam::Alpha => config.alpha = value,
            SweepParam::SubstitutionRate => config.substitution_rate = value,
            SweepParam::AugmentationRate => config.augmentation_rate = value,
        }
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "alpha" => Ok(SweepParam::Alpha),
            "substitution_rate" | "substitution" => Ok(SweepParam::SubstitutionRate),
            "augmentation_rate" | "augmentation" => Ok(SweepParam::AugmentationRate),
            other => Err(Error::Argument(format!(
                "unknown sweep parameter {other:?} (expected alpha, substitution_rate or augmentation_rate)"
            ))),
        }
    }
}

/// Everything a sweep point needs besides the swept value.
#[derive(Clone, Copy)]
pub struct SweepSetup<'a> {
    pub kg: &'a Kg,
    pub model_config: ModelConfig,
    pub base: &'a TrainConfig,
    pub train_samples: &'a [TrainingSample],
    pub test_samples: &'a [TestSample],
    pub providers: Providers<'a>,
    pub ks: &'a [usize],
    pub runs_per_point: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    pub runs: Vec<EvalReport>,
    /// Recall per k averaged over the runs.
    pub mean_recall: BTreeMap<usize, f64>,
    /// Set when a run failed; the sweep continues with the next point.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub param: SweepParam,
    pub grid: Vec<f64>,
    pub runs_per_point: usize,
    pub points: Vec<SweepPoint>,
}

/// Seed of run `run` at grid position `point`.
pub fn derived_seed(base: u64, point: usize, run: usize) -> u64 {
    base.wrapping_add(point as u64 * 1000).wrapping_add(run as u64)
}

fn run_point(setup: &SweepSetup<'_>, param: SweepParam, value: f64, point: usize) -> Result<Vec<EvalReport>> {
    let mut reports = Vec::with_capacity(setup.runs_per_point);
    for run in 0..setup.runs_per_point {
        let mut config = setup.base.clone();
        param.apply(&mut config, value);
        config.seed = derived_seed(setup.base.seed, point, run);
        let model_config = ModelConfig { seed: config.seed, ..setup.model_config };
        let outcome = train(setup.train_samples, setup.kg, &model_config, &config, setup.providers)?;
        let model = InferenceModel::new(model_config, outcome.checkpoint.params_f64(), setup.kg)?;
        reports.push(evaluate_model(&model, setup.test_samples, setup.kg, setup.providers.encoder, setup.ks)?);
    }
    Ok(reports)
}

/// Trains and evaluates `runs_per_point` models per grid value.
pub fn sweep(param: SweepParam, grid: &[f64], setup: &SweepSetup<'_>) -> Result<SweepResult> {
    if grid.is_empty() {
        return Err(Error::Argument("sweep grid is empty".into()));
    }
    if setup.runs_per_point == 0 {
        return Err(Error::Argument("runs per point must be at least 1".into()));
    }
    for &v in grid {
        let mut probe = setup.base.clone();
        param.apply(&mut probe, v);
        probe.validate()?;
    }
    let mut points = Vec::with_capacity(grid.len());
    for (i, &value) in grid.iter().enumerate() {
        let point = match run_point(setup, param, value, i) {
            Ok(runs) => {
                let mut mean_recall = BTreeMap::new();
                for r in &runs {
                    for (&k, &v) in &r.recall_at {
                        *mean_recall.entry(k).or_insert(0.0) += v / runs.len() as f64;
                    }
                }
                SweepPoint { value, runs, mean_recall, error: None }
            }
            Err(e) => {
                log::warn!("sweep point {param}={value} failed: {e}");
                SweepPoint { value, runs: Vec::new(), mean_recall: BTreeMap::new(), error: Some(e.to_string()) }
            }
        };
        points.push(point);
    }
    Ok(SweepResult {
        param,
        grid: grid.to_vec(),
        runs_per_point: setup.runs_per_point,
        points,
    })
}

impl SweepResult {
    fn ks(&self) -> Vec<usize> {
        let mut ks: Vec<usize> = self.points.iter().flat_map(|p| p.mean_recall.keys().copied()).collect();
        ks.sort_unstable();
        ks.dedup();
        ks
    }

    pub fn to_table(&self) -> String {
        let ks = self.ks();
        let mut out = format!("{:<18}", self.param.name());
        for k in &ks {
            out.push_str(&format!(" {:>10}", format!("recall@{k}")));
        }
        out.push('\n');
        for p in &self.points {
            out.push_str(&format!("{:<18}", p.value));
            match &p.error {
                Some(e) => out.push_str(&format!(" failed: {e}")),
                None => {
                    for k in &ks {
                        out.push_str(&format!(" {:>10.4}", p.mean_recall.get(k).copied().unwrap_or(f64::NAN)));
                    }
                }
            }
            out.push('\n');
        }
        out
    }

    /// One `param,value,run,k,recall` record per metric; run `mean` holds averages.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["param", "value", "run", "k", "recall"]).map_err(csv_err)?;
        for p in &self.points {
            for (run, r) in p.runs.iter().enumerate() {
                for (k, v) in &r.recall_at {
                    w.write_record([self.param.name(), &p.value.to_string(), &run.to_string(), &k.to_string(), &v.to_string()])
                        .map_err(csv_err)?;
                }
            }
            for (k, v) in &p.mean_recall {
                w.write_record([self.param.name(), &p.value.to_string(), "mean", &k.to_string(), &v.to_string()])
                    .map_err(csv_err)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}
