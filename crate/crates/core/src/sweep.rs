//! One-axis hyperparameter sweeps over GRU width, GRU dropout rate and MLP
//! block count, each point trained from the same seed and scored on the same
//! held-out split.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradcam::{capture_bundle, gradcam};
use crate::heatmap::HeatmapStack;
use crate::metrics::{compute_metrics, MetricsRow, CSV_HEADER};
use crate::model::{build_model, predict, train, ModelConfig, TrainOptions};
use crate::video::{Dataset, VideoSequence, NORMAL_CLASS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    /// GRU units.
    Neurons,
    /// GRU dropout rate, in percent.
    Dropout,
    /// Number of dense + dropout blocks.
    Blocks,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Neurons => "neurons",
            SweepAxis::Dropout => "dropout",
            SweepAxis::Blocks => "blocks",
        }
    }

    /// Default grid for the axis.
    pub fn default_values(self) -> Vec<u32> {
        match self {
            SweepAxis::Neurons => vec![8, 16, 32, 64, 128, 256, 512, 1024, 2048],
            SweepAxis::Dropout => vec![0, 25, 50, 75],
            SweepAxis::Blocks => vec![2, 3, 4],
        }
    }

    /// `base` with this axis set to `value`.
    pub fn apply(self, base: &ModelConfig, value: u32) -> ModelConfig {
        let mut c = base.clone();
        match self {
            SweepAxis::Neurons => c.gru_units = value as usize,
            SweepAxis::Dropout => c.gru_dropout = value as f64 / 100.0,
            SweepAxis::Blocks => c.mlp_blocks = value as usize,
        }
        c
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "neurons" => Ok(SweepAxis::Neurons),
            "dropout" => Ok(SweepAxis::Dropout),
            "blocks" => Ok(SweepAxis::Blocks),
            other => Err(Error::Argument(format!(
                "unknown sweep axis {other:?} (expected neurons, dropout or blocks)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<u32>,
    pub base_config: ModelConfig,
    pub train: TrainOptions,
    /// Seeds model initialization, dropout and the train/test split.
    pub seed: u64,
    pub train_fraction: f64,
}

impl SweepSpec {
    pub fn new(axis: SweepAxis, base_config: ModelConfig) -> Self {
        Self {
            axis,
            values: axis.default_values(),
            base_config,
            train: TrainOptions::default(),
            seed: 0,
            train_fraction: 0.8,
        }
    }

    pub fn config_for(&self, value: u32) -> ModelConfig {
        ModelConfig {
            seed: self.seed,
            ..self.axis.apply(&self.base_config, value)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub value: u32,
    /// Metrics on the test split, or the reason training failed.
    pub outcome: std::result::Result<MetricsRow, String>,
    /// Grad-CAM maps of the probe sequence under this configuration.
    pub probe: Option<HeatmapStack>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub axis: SweepAxis,
    pub points: Vec<SweepPoint>,
    /// The held-out sequence re-explained at every point.
    pub probe: Option<VideoSequence>,
}

impl SweepReport {
    /// CSV with one row per requested value, in request order. Failed points
    /// carry `failed` in every metric column.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for p in &self.points {
            match &p.outcome {
                Ok(row) => out.push_str(&row.to_csv_line()),
                Err(_) => out.push_str(&format!("{},failed,failed,failed,failed", p.value)),
            }
            out.push('\n');
        }
        out
    }

    pub fn rows(&self) -> Vec<&MetricsRow> {
        self.points.iter().filter_map(|p| p.outcome.as_ref().ok()).collect()
    }
}

/// Trains and scores one model per value. Points run in parallel; results
/// keep the order of `spec.values`.
pub fn run_sweep(spec: &SweepSpec, dataset: &Dataset) -> Result<SweepReport> {
    if spec.values.is_empty() {
        return Err(Error::Argument("sweep needs at least one value".into()));
    }
    let configs: Vec<ModelConfig> = spec.values.iter().map(|&v| spec.config_for(v)).collect();
    for c in &configs {
        c.validate()?;
        if c.classes != dataset.classes {
            return Err(Error::Config(format!(
                "model classes {:?} differ from dataset classes {:?}",
                c.classes, dataset.classes
            )));
        }
    }
    let (train_set, test_set) = dataset.split(spec.train_fraction, spec.seed)?;
    if train_set.sequences.is_empty() || test_set.sequences.is_empty() {
        return Err(Error::Argument("train/test split left an empty side".into()));
    }
    let labels = test_set
        .sequences
        .iter()
        .map(|s| dataset.class_index(s))
        .collect::<Result<Vec<_>>>()?;
    let probe = test_set
        .sequences
        .iter()
        .find(|s| s.label() != NORMAL_CLASS)
        .or_else(|| test_set.sequences.first())
        .cloned();

    let points = spec
        .values
        .par_iter()
        .zip(configs.par_iter())
        .map(|(&value, config)| -> Result<SweepPoint> {
            let model = build_model(config)?;
            let model = match train(model, &train_set, &spec.train) {
                Ok(m) => m,
                Err(e @ Error::Training { .. }) => {
                    return Ok(SweepPoint {
                        value,
                        outcome: Err(e.to_string()),
                        probe: None,
                    })
                }
                Err(e) => return Err(e),
            };
            let predictions = predict(&model, &test_set)?;
            let row = compute_metrics(value.to_string(), &predictions, &labels, config.classes.len())?;
            let probe_maps = match &probe {
                Some(seq) => {
                    let class = config.class_index(seq.label())?;
                    match capture_bundle(&model, seq, class) {
                        Ok(bundle) => Some(gradcam(&bundle, (seq.height(), seq.width()))?),
                        Err(Error::UnsupportedArchitecture(_)) => None,
                        Err(e) => return Err(e),
                    }
                }
                None => None,
            };
            Ok(SweepPoint {
                value,
                outcome: Ok(row),
                probe: probe_maps,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(SweepReport {
        axis: spec.axis,
        points,
        probe,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_application() {
        let base = ModelConfig::default();
        assert_eq!(SweepAxis::Neurons.apply(&base, 64).gru_units, 64);
        assert_eq!(SweepAxis::Dropout.apply(&base, 25).gru_dropout, 0.25);
        assert_eq!(SweepAxis::Blocks.apply(&base, 4).mlp_blocks, 4);
        assert!(matches!("width".parse::<SweepAxis>(), Err(Error::Argument(_))));
    }

    #[test]
    fn default_grids() {
        assert_eq!(SweepAxis::Neurons.default_values().len(), 9);
        assert_eq!(SweepAxis::Dropout.default_values(), vec![0, 25, 50, 75]);
        assert_eq!(SweepAxis::Blocks.default_values(), vec![2, 3, 4]);
    }

    #[test]
    fn failed_points_keep_their_row() {
        let report = SweepReport {
            axis: SweepAxis::Blocks,
            points: vec![
                SweepPoint {
                    value: 2,
                    outcome: Ok(MetricsRow::from_percentages("2", 90.0, 91.0, 90.0)),
                    probe: None,
                },
                SweepPoint {
                    value: 3,
                    outcome: Err("diverged".into()),
                    probe: None,
                },
            ],
            probe: None,
        };
        assert_eq!(
            report.to_csv(),
            "config_key,accuracy,precision,recall,f1\n2,90.0,91.0,90.0,90.5\n3,failed,failed,failed,failed\n"
        );
    }
}
