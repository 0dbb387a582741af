use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::censoring::CensorModel;
use crate::error::{Error, Result};
use crate::plot::{line_chart, Series};
use crate::sigkernel::KernelConfig;

use super::{Dataset, EvalConfig};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Relative margin inside which a score counts as a tie with the best.
pub const TIE_MARGIN: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ScoreName {
    #[serde(rename = "QL")]
    Ql,
    #[serde(rename = "CRPS")]
    Crps,
    #[serde(rename = "ES")]
    Es,
    #[serde(rename = "VS")]
    Vs,
    #[serde(rename = "Sig")]
    Sig,
    #[serde(rename = "CSig")]
    Csig,
}

impl ScoreName {
    pub fn label(self) -> &'static str {
        match self {
            ScoreName::Ql => "QL",
            ScoreName::Crps => "CRPS",
            ScoreName::Es => "ES",
            ScoreName::Vs => "VS",
            ScoreName::Sig => "Sig",
            ScoreName::Csig => "CSig",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Win,
    Tie,
    Loss,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    pub wins: usize,
    pub ties: usize,
    pub losses: usize,
}

impl Tally {
    fn add(&mut self, o: Outcome) {
        match o {
            Outcome::Win => self.wins += 1,
            Outcome::Tie => self.ties += 1,
            Outcome::Loss => self.losses += 1,
        }
    }
}

/// Lower is better. A unique minimum wins; anything within 1% of the minimum
/// (including a shared minimum) ties; the rest lose.
pub fn classify(scores: &[f64]) -> Vec<Outcome> {
    let best = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let at_best = scores.iter().filter(|&&s| s == best).count();
    let limit = best + TIE_MARGIN * best.abs();
    scores
        .iter()
        .map(|&s| {
            if s == best && at_best == 1 {
                Outcome::Win
            } else if s <= limit {
                Outcome::Tie
            } else {
                Outcome::Loss
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowScores {
    pub window_id: String,
    pub model: String,
    pub scores: BTreeMap<ScoreName, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub quantile: f64,
    pub model: String,
    pub sig: f64,
    pub csig: f64,
    pub abs_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CensorSummary {
    pub quantile: f64,
    pub threshold: f64,
    pub distance_scale: f64,
    pub beta: f64,
    pub sig_depth: usize,
    pub pca_components: Option<usize>,
    pub train_windows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub schema_version: u32,
    pub tool_version: String,
    pub dataset_name: String,
    pub config: EvalConfig,
    /// Kernel actually used, with the resolved bandwidth.
    pub kernel: KernelConfig,
    pub censor: CensorSummary,
    /// Aggregation conventions behind the numbers.
    pub conventions: Vec<String>,
    pub models: Vec<String>,
    pub windows: Vec<String>,
    pub scores: BTreeMap<String, BTreeMap<ScoreName, f64>>,
    pub outcomes: BTreeMap<ScoreName, BTreeMap<String, Outcome>>,
    pub tallies: BTreeMap<ScoreName, Tally>,
    pub model_tallies: BTreeMap<String, Tally>,
    pub per_window: Vec<WindowScores>,
    pub sweep: Vec<SweepPoint>,
}

fn conventions(config: &EvalConfig, dim: usize) -> Vec<String> {
    let mut out = vec![
        format!("QL: mean pinball loss over levels {:?}, all steps and variates", config.ql_levels),
        "CRPS: sample estimator per step and variate, averaged".to_string(),
        "ES: computed once on the flattened horizon".to_string(),
    ];
    if dim >= 2 {
        out.push(format!("VS: order {} per step over variate pairs, uniform weights, averaged over steps", config.vs_p));
    } else {
        out.push("VS: omitted for univariate data".to_string());
    }
    if config.pool_windows {
        out.push("Sig/CSig: all samples against all truth windows in one biased two-sample estimate".to_string());
    } else {
        out.push("Sig/CSig: biased estimate of S samples against the single truth path, averaged over windows".to_string());
    }
    out.push(format!(
        "outcomes: unique lowest score wins, scores within {}% of the lowest tie",
        TIE_MARGIN * 100.0
    ));
    out
}

impl ScoreReport {
    #[allow(clippy::too_many_arguments)]
    pub(super) fn assemble(
        data: &Dataset,
        config: &EvalConfig,
        kernel: KernelConfig,
        model: &CensorModel,
        windows: Vec<String>,
        scores: BTreeMap<String, BTreeMap<ScoreName, f64>>,
        per_window: Vec<WindowScores>,
        sweep: Vec<SweepPoint>,
    ) -> Self {
        let models: Vec<String> = data.models.iter().map(|m| m.name.clone()).collect();
        let mut outcomes: BTreeMap<ScoreName, BTreeMap<String, Outcome>> = BTreeMap::new();
        let mut tallies: BTreeMap<ScoreName, Tally> = BTreeMap::new();
        let mut model_tallies: BTreeMap<String, Tally> = models.iter().map(|m| (m.clone(), Tally::default())).collect();
        let metrics: Vec<ScoreName> = scores.values().next().map(|m| m.keys().copied().collect()).unwrap_or_default();
        for metric in metrics {
            let values: Vec<f64> = models.iter().map(|m| scores[m][&metric]).collect();
            let result = classify(&values);
            let tally = tallies.entry(metric).or_default();
            let map = outcomes.entry(metric).or_default();
            for (name, o) in models.iter().zip(result) {
                tally.add(o);
                model_tallies.get_mut(name).expect("known model").add(o);
                map.insert(name.clone(), o);
            }
        }
        Self {
            schema_version: REPORT_SCHEMA_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            dataset_name: data.name.clone(),
            config: config.clone(),
            kernel,
            censor: CensorSummary {
                quantile: model.quantile,
                threshold: model.threshold_c,
                distance_scale: model.distance_scale,
                beta: model.beta,
                sig_depth: model.sig_depth,
                pca_components: model.pca.as_ref().map(|p| p.components),
                train_windows: data.train.len(),
            },
            conventions: conventions(config, data.dim()),
            models,
            windows,
            scores,
            outcomes,
            tallies,
            model_tallies,
            per_window,
            sweep,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        Ok(text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let report: Self = serde_json::from_str(text)?;
        if report.schema_version != REPORT_SCHEMA_VERSION {
            return Err(Error::InvalidInput(format!(
                "report schema {} is not supported (expected {REPORT_SCHEMA_VERSION})",
                report.schema_version
            )));
        }
        Ok(report)
    }

    /// `model,metric,value`, one row per model and metric.
    pub fn scores_csv(&self) -> String {
        let mut out = String::from("model,metric,value,outcome\n");
        for m in &self.models {
            for (metric, v) in &self.scores[m] {
                let o = self.outcomes[metric][m];
                out.push_str(&format!("{m},{},{v},{}\n", metric.label(), outcome_label(o)));
            }
        }
        out
    }

    pub fn windows_csv(&self) -> String {
        let mut out = String::from("window_id,model,metric,value\n");
        for row in &self.per_window {
            for (metric, v) in &row.scores {
                out.push_str(&format!("{},{},{},{v}\n", row.window_id, row.model, metric.label()));
            }
        }
        out
    }

    pub fn sweep_csv(&self) -> String {
        let mut out = String::from("quantile,model,sig,csig,abs_gap\n");
        for p in &self.sweep {
            out.push_str(&format!("{},{},{},{},{}\n", p.quantile, p.model, p.sig, p.csig, p.abs_gap));
        }
        out
    }

    pub fn sweep_svg(&self) -> String {
        let series: Vec<Series> = self
            .models
            .iter()
            .map(|m| Series {
                label: m.clone(),
                points: self
                    .sweep
                    .iter()
                    .filter(|p| &p.model == m)
                    .map(|p| (p.quantile, p.abs_gap))
                    .collect(),
            })
            .collect();
        line_chart(
            &format!("{}: |CSig - Sig| across censoring quantiles", self.dataset_name),
            "censoring quantile",
            "|CSig - Sig|",
            &series,
        )
    }
}

fn outcome_label(o: Outcome) -> &'static str {
    match o {
        Outcome::Win => "win",
        Outcome::Tie => "tie",
        Outcome::Loss => "loss",
    }
}

fn write(path: PathBuf, text: &str, written: &mut Vec<PathBuf>) -> Result<()> {
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    written.push(path);
    Ok(())
}

/// Writes `report.json`, `scores.csv`, `windows.csv` and, when a sweep was
/// run, `sweep.csv` and `sweep.svg`. Returns the written paths.
pub fn emit_report(report: &ScoreReport, out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();
    write(out_dir.join("report.json"), &report.to_json()?, &mut written)?;
    write(out_dir.join("scores.csv"), &report.scores_csv(), &mut written)?;
    write(out_dir.join("windows.csv"), &report.windows_csv(), &mut written)?;
    if !report.sweep.is_empty() {
        write(out_dir.join("sweep.csv"), &report.sweep_csv(), &mut written)?;
        write(out_dir.join("sweep.svg"), &report.sweep_svg(), &mut written)?;
    }
    Ok(written)
}
