use std::fmt::Write as _;

use super::{evaluate_split, train, TrainConfig};
use crate::error::Result;
use crate::io::cameras::Split;
use crate::metrics::two_sample_t_test;
use crate::synth::{perturbed_init, SceneDataset};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AblationVariant {
    Baseline,
    Sag,
    SagIjg,
    Full,
}

impl AblationVariant {
    pub const ALL: [AblationVariant; 4] = [
        AblationVariant::Baseline,
        AblationVariant::Sag,
        AblationVariant::SagIjg,
        AblationVariant::Full,
    ];

    pub fn label(self) -> &'static str {
        match self {
            AblationVariant::Baseline => "baseline",
            AblationVariant::Sag => "+SAG",
            AblationVariant::SagIjg => "+SAG+IJG",
            AblationVariant::Full => "full",
        }
    }

    /// The base config with the disabled components switched off.
    pub fn configure(self, base: &TrainConfig) -> TrainConfig {
        let mut c = base.clone();
        match self {
            AblationVariant::Baseline => {
                c.lambda_semantic = 0.0;
                c.lambda_topology = 0.0;
                c.surface_disentangle = false;
            }
            AblationVariant::Sag => {
                c.lambda_topology = 0.0;
                c.surface_disentangle = false;
            }
            AblationVariant::SagIjg => c.surface_disentangle = false,
            AblationVariant::Full => {}
        }
        c
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunResult {
    pub seed: u64,
    pub train_psnr: f64,
    pub test_psnr: f64,
    pub test_ssim: f64,
    pub test_iou: f64,
    pub points: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub variant: AblationVariant,
    pub runs: Vec<RunResult>,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

impl AblationReport {
    pub fn row(&self, variant: AblationVariant) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == variant)
    }

    /// Seeds on which `a` reaches at least the held-out PSNR of `b`.
    pub fn wins(&self, a: AblationVariant, b: AblationVariant) -> usize {
        let (Some(ra), Some(rb)) = (self.row(a), self.row(b)) else {
            return 0;
        };
        ra.runs
            .iter()
            .filter(|x| {
                rb.runs
                    .iter()
                    .any(|y| y.seed == x.seed && x.test_psnr >= y.test_psnr)
            })
            .count()
    }

    /// One row per variant with mean metrics, then the full-vs-baseline
    /// comparison.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<10} {:>5} {:>11} {:>11} {:>8} {:>8} {:>8}",
            "method", "runs", "train PSNR", "test PSNR", "SSIM", "IoU", "points"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<10} {:>5} {:>11.3} {:>11.3} {:>8.4} {:>8.4} {:>8.0}",
                r.variant.label(),
                r.runs.len(),
                mean(r.runs.iter().map(|x| x.train_psnr)),
                mean(r.runs.iter().map(|x| x.test_psnr)),
                mean(r.runs.iter().map(|x| x.test_ssim)),
                mean(r.runs.iter().map(|x| x.test_iou)),
                mean(r.runs.iter().map(|x| x.points as f64)),
            );
        }
        if let (Some(full), Some(base)) = (
            self.row(AblationVariant::Full),
            self.row(AblationVariant::Baseline),
        ) {
            let _ = writeln!(
                s,
                "full >= baseline (test PSNR): {} of {}",
                self.wins(AblationVariant::Full, AblationVariant::Baseline),
                full.runs.len()
            );
            let xs: Vec<f64> = full.runs.iter().map(|x| x.test_psnr).collect();
            let ys: Vec<f64> = base.runs.iter().map(|x| x.test_psnr).collect();
            if let Ok(t) = two_sample_t_test(&xs, &ys) {
                let _ = writeln!(s, "t = {:.4}, df = {}, p = {:.4e}", t.t, t.df, t.p);
            }
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("variant,seed,train_psnr,test_psnr,test_ssim,test_iou,points\n");
        for r in &self.rows {
            for x in &r.runs {
                let _ = writeln!(
                    s,
                    "{},{},{:.6},{:.6},{:.6},{:.6},{}",
                    r.variant.label(),
                    x.seed,
                    x.train_psnr,
                    x.test_psnr,
                    x.test_ssim,
                    x.test_iou,
                    x.points
                );
            }
        }
        s
    }
}

/// Trains every variant once per seed from a perturbed template init
/// (`init_sigma` × body height) and scores train and held-out views.
pub fn run_ablation(
    dataset: &SceneDataset,
    base: &TrainConfig,
    seeds: &[u64],
    init_sigma: f64,
) -> Result<AblationReport> {
    let mut report = AblationReport::default();
    for variant in AblationVariant::ALL {
        let mut runs = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let mut config = variant.configure(base);
            config.seed = seed;
            let init = perturbed_init(&dataset.template, init_sigma, seed);
            let state = train(dataset, init, &config)?;
            let train_report = evaluate_split(&state.cloud, &state.lineage, dataset, Split::Train)?;
            let test_report = evaluate_split(&state.cloud, &state.lineage, dataset, Split::Test)?;
            runs.push(RunResult {
                seed,
                train_psnr: train_report.mean_psnr(),
                test_psnr: test_report.mean_psnr(),
                test_ssim: test_report.mean_ssim(),
                test_iou: test_report.mean_iou(),
                points: state.cloud.len(),
            });
        }
        report.rows.push(AblationRow { variant, runs });
    }
    Ok(report)
}
