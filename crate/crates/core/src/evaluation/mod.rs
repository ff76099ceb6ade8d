//! Metrics, confidence intervals, the factorial experiment grid and
//! cross-configuration evaluation.

mod cross;
mod metrics;

pub use cross::{cross_config_eval, CrossCell, CrossConfigReport, OOD_OVERLAPS, OOD_SEG_LENS};
pub use metrics::{
    accuracy, bootstrap_ci, confusion_matrix, per_class_metrics, weighted_f1, ClassMetrics, ConfidenceInterval,
};

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::spectral::Method;
use crate::training::Example;
use crate::vit::{forward, VitModel};
use crate::{Error, Real, Result};

pub const METHODS: [Method; 2] = [Method::Stft, Method::Cwt];
pub const RESOLUTIONS: [usize; 3] = [16, 32, 64];
pub const SEG_LENS: [usize; 2] = [100, 500];
pub const OVERLAPS: [f64; 2] = [0.0, 0.5];

/// One cell of the factorial design.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub method: Method,
    pub resolution: usize,
    pub seg_len: usize,
    pub overlap: f64,
}

impl fmt::Display for ExperimentConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} R={} L={} p={}",
            self.method, self.resolution, self.seg_len, self.overlap
        )
    }
}

/// The 24 configurations, ordered by method, resolution, segment length,
/// overlap, each ascending.
pub fn enumerate_configs() -> Vec<ExperimentConfig> {
    let mut out = Vec::with_capacity(24);
    for method in METHODS {
        for resolution in RESOLUTIONS {
            for seg_len in SEG_LENS {
                for overlap in OVERLAPS {
                    out.push(ExperimentConfig {
                        method,
                        resolution,
                        seg_len,
                        overlap,
                    });
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalOptions {
    pub resamples: usize,
    pub level: f64,
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            resamples: 1000,
            level: 0.95,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub accuracy_pct: f64,
    pub weighted_f1: f64,
    pub ci: ConfidenceInterval,
    pub per_class: Vec<ClassMetrics>,
    /// Rows are true classes.
    pub confusion: Vec<Vec<usize>>,
    pub n_test: usize,
}

impl EvalReport {
    pub fn from_predictions(
        preds: &[usize],
        labels: &[usize],
        num_classes: usize,
        opts: &EvalOptions,
    ) -> Result<Self> {
        let confusion = confusion_matrix(preds, labels, num_classes)?;
        let per_class = per_class_metrics(&confusion);
        Ok(Self {
            accuracy_pct: accuracy(preds, labels)?,
            weighted_f1: metrics::weighted_f1_from(&per_class),
            ci: bootstrap_ci(preds, labels, opts.resamples, opts.level, opts.seed)?,
            per_class,
            confusion,
            n_test: preds.len(),
        })
    }

    pub fn write_summary_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "accuracy_pct,weighted_f1,ci_low,ci_high,ci_width_pct,n_test")?;
        writeln!(
            out,
            "{},{},{},{},{},{}",
            self.accuracy_pct, self.weighted_f1, self.ci.low, self.ci.high, self.ci.width, self.n_test
        )
    }

    pub fn write_per_class_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "class,precision,recall,f1,support")?;
        for (c, m) in self.per_class.iter().enumerate() {
            writeln!(out, "{c},{},{},{},{}", m.precision, m.recall, m.f1, m.support)?;
        }
        Ok(())
    }

    pub fn write_confusion_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let k = self.confusion.len();
        let head: Vec<String> = (0..k).map(|c| c.to_string()).collect();
        writeln!(out, "true\\pred,{}", head.join(","))?;
        for (c, row) in self.confusion.iter().enumerate() {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(out, "{c},{}", cells.join(","))?;
        }
        Ok(())
    }
}

/// Predicted classes for each example.
pub fn predict<T: Real>(model: &VitModel<T>, examples: &[Example<T>]) -> Result<Vec<usize>> {
    examples.iter().map(|e| forward(&e.input, model).map(|p| p.predicted)).collect()
}

pub fn evaluate<T: Real>(model: &VitModel<T>, test: &[Example<T>], opts: &EvalOptions) -> Result<EvalReport> {
    if test.is_empty() {
        return Err(Error::InsufficientData("empty test set".into()));
    }
    let preds = predict(model, test)?;
    let labels: Vec<usize> = test.iter().map(|e| e.label).collect();
    EvalReport::from_predictions(&preds, &labels, model.config.num_classes, opts)
}

/// One row of the configuration sweep table.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub config: ExperimentConfig,
    pub train_acc: f64,
    pub val_acc: f64,
    pub test_acc: f64,
    pub weighted_f1: f64,
    pub ci_width: f64,
}

pub const SWEEP_HEADER: &str = "method,resolution,seg_len,overlap,train_acc,val_acc,test_acc,weighted_f1,ci_width";

impl SweepRow {
    pub fn csv_line(&self) -> String {
        let c = &self.config;
        format!(
            "{},{},{},{},{},{},{},{},{}",
            c.method, c.resolution, c.seg_len, c.overlap, self.train_acc, self.val_acc, self.test_acc, self.weighted_f1,
            self.ci_width
        )
    }
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{SWEEP_HEADER}")?;
    for r in rows {
        writeln!(out, "{}", r.csv_line())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vit::VitConfig;

    #[test]
    fn factorial_grid() {
        let cs = enumerate_configs();
        assert_eq!(cs.len(), 24);
        assert_eq!(
            cs[0],
            ExperimentConfig { method: Method::Stft, resolution: 16, seg_len: 100, overlap: 0.0 }
        );
        assert_eq!(cs[23].method, Method::Cwt);
        for (i, a) in cs.iter().enumerate() {
            for b in &cs[i + 1..] {
                assert_ne!(a, b);
            }
        }
        // Every declared level combination appears.
        for m in METHODS {
            for r in RESOLUTIONS {
                for l in SEG_LENS {
                    for o in OVERLAPS {
                        assert!(cs.contains(&ExperimentConfig { method: m, resolution: r, seg_len: l, overlap: o }));
                    }
                }
            }
        }
    }

    #[test]
    fn report_is_internally_consistent() {
        let labels = [0, 1, 2, 2, 1, 0, 0, 2];
        let preds = [0, 1, 1, 2, 1, 2, 0, 2];
        let r = EvalReport::from_predictions(&preds, &labels, 3, &EvalOptions::default()).unwrap();
        let trace: usize = (0..3).map(|c| r.confusion[c][c]).sum();
        assert_eq!(100.0 * trace as f64 / r.n_test as f64, r.accuracy_pct);
        for (c, m) in r.per_class.iter().enumerate() {
            assert_eq!(r.confusion[c].iter().sum::<usize>(), m.support);
        }
        assert!(r.ci.low <= r.accuracy_pct && r.accuracy_pct <= r.ci.high);
        let mut buf = Vec::new();
        r.write_confusion_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "true\\pred,0,1,2\n0,2,0,1\n1,0,2,0\n2,0,1,2\n");
    }

    #[test]
    fn perfect_classifier_report() {
        let cfg = VitConfig::tiny(32, 8, 1, 2, 3);
        let mut model = VitModel::<f64>::zeros(cfg).unwrap();
        // Head bias alone decides; every example of class 1.
        model.head_b.data = vec![0.0, 5.0, 0.0];
        let test: Vec<Example<f64>> = (0..10).map(|_| Example { input: vec![0.0; cfg.input_len()], label: 1 }).collect();
        let r = evaluate(&model, &test, &EvalOptions::default()).unwrap();
        assert_eq!((r.accuracy_pct, r.weighted_f1, r.ci.width), (100.0, 1.0, 0.0));
        assert_eq!(r.confusion[1][1], 10);
        assert!(evaluate(&model, &[], &EvalOptions::default()).is_err());
        let mut buf = Vec::new();
        r.write_summary_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "accuracy_pct,weighted_f1,ci_low,ci_high,ci_width_pct,n_test\n100,1,100,100,0,10\n"
        );
    }

    #[test]
    fn sweep_csv_shape() {
        let rows: Vec<SweepRow> = enumerate_configs()
            .into_iter()
            .map(|config| SweepRow { config, train_acc: 1.0, val_acc: 2.0, test_acc: 3.0, weighted_f1: 0.5, ci_width: 4.0 })
            .collect();
        let mut buf = Vec::new();
        write_sweep_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 25);
        assert_eq!(text.lines().nth(1).unwrap(), "STFT,16,100,0,1,2,3,0.5,4");
    }
}
