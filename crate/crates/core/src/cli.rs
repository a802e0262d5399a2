//! Command-line pipeline: ingest, inverse filter, estimate, featurize,
//! evaluate, export.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adles::{estimate, synthetic_flow, AdlesError, FlowObjective, OptimizerConfig};
use crate::classify::{evaluate, make_cv_plan, speaker_labels, ClassifierConfig, ClassifyError, EvalReport};
use crate::features::{featurize, read_features, write_csv, SegmentFeatures, SegmentMeta};
use crate::glottal::{inverse_filter, InverseFilterConfig};
use crate::signal::{
    is_voiced, load_clip, load_entry, load_manifest, segment_clip, window_lengths, Label, Segment, Vowel,
};
use crate::vfmodel::{
    closed_orbit, integrate_forward, model_step, phase_portrait, portrait_to_csv, BoundaryConditions,
    ModelParams, PhysicalConstants, Side,
};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Numerical(String),
    #[error("{0}")]
    Selftest(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 1,
            CliError::Numerical(_) => 2,
            CliError::Selftest(_) => 3,
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Input(format!("{}: {e}", path.display()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmentationConfig {
    /// Rate every clip is brought to on load.
    pub sample_rate: u32,
    pub win_s: f64,
    pub hop_s: f64,
    /// Voicing gate: minimum segment RMS as a fraction of clip RMS.
    pub energy_floor: f64,
    /// Voicing gate: maximum zero-crossing rate.
    pub zcr_ceiling: f64,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        Self {
            sample_rate: 8000,
            win_s: 0.05,
            hop_s: 0.025,
            energy_floor: 0.1,
            zcr_ceiling: 0.3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Nominal phonation frequency fixing the model time scale.
    pub nominal_hz: f64,
    pub constants: PhysicalConstants,
    pub boundary: BoundaryConditions,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            nominal_hz: 150.0,
            constants: PhysicalConstants::default(),
            boundary: BoundaryConditions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhaseConfig {
    /// Model steps integrated for a portrait.
    pub steps: usize,
    /// Closed-curve tolerance as a fraction of the orbit diameter.
    pub closed_tolerance: f64,
}

impl Default for PhaseConfig {
    fn default() -> Self {
        Self {
            steps: 4000,
            closed_tolerance: 0.02,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Seed for cross-validation shuffling and the self-test draws.
    pub seed: u64,
    pub segmentation: SegmentationConfig,
    pub inverse_filter: InverseFilterConfig,
    pub model: ModelConfig,
    pub optimizer: OptimizerConfig,
    pub classifier: ClassifierConfig,
    pub phase: PhaseConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            segmentation: SegmentationConfig::default(),
            inverse_filter: InverseFilterConfig::default(),
            model: ModelConfig::default(),
            // With equal initial displacements the energy is even in delta,
            // so an exactly symmetric start would never move it.
            optimizer: OptimizerConfig {
                init: ModelParams::new(0.25, 0.32, 0.05),
                ..OptimizerConfig::default()
            },
            classifier: ClassifierConfig::default(),
            phase: PhaseConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Input(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        Self::from_toml(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Input(format!("config: {m}")));
        let seg = &self.segmentation;
        if seg.sample_rate == 0 {
            return bad("segmentation.sample_rate must be > 0".into());
        }
        let (win, _) = match window_lengths(seg.sample_rate, seg.win_s, seg.hop_s) {
            Ok(w) => w,
            Err(e) => return bad(e.to_string()),
        };
        if !(seg.energy_floor >= 0.0 && seg.energy_floor.is_finite()) {
            return bad(format!("segmentation.energy_floor must be >= 0, got {}", seg.energy_floor));
        }
        if !(0.0..=1.0).contains(&seg.zcr_ceiling) {
            return bad(format!("segmentation.zcr_ceiling must lie in [0, 1], got {}", seg.zcr_ceiling));
        }
        if let Err(e) = self.inverse_filter.validate(win) {
            return bad(e.to_string());
        }
        if !(self.model.nominal_hz > 0.0 && self.model.nominal_hz.is_finite()) {
            return bad(format!("model.nominal_hz must be > 0, got {}", self.model.nominal_hz));
        }
        if let Err(e) = self.model.constants.validate() {
            return bad(e);
        }
        let bc = self.model.boundary;
        if !(bc.cl.is_finite() && bc.cr.is_finite()) {
            return bad("model.boundary must be finite".into());
        }
        if let Err(e) = self.optimizer.validate() {
            return bad(e.to_string());
        }
        if let Err(e) = self.classifier.validate() {
            return bad(e);
        }
        if self.phase.steps == 0 {
            return bad("phase.steps must be >= 1".into());
        }
        if !(self.phase.closed_tolerance > 0.0) {
            return bad("phase.closed_tolerance must be > 0".into());
        }
        Ok(())
    }

    /// Model time per audio sample.
    pub fn model_step(&self) -> f64 {
        model_step(self.segmentation.sample_rate as f64, self.model.nominal_hz)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VowelFilter {
    A,
    I,
    U,
    Ai,
    Au,
    Iu,
    All,
}

impl VowelFilter {
    pub fn admits(self, v: Vowel) -> bool {
        match self {
            VowelFilter::All => true,
            VowelFilter::A => v == Vowel::A,
            VowelFilter::I => v == Vowel::I,
            VowelFilter::U => v == Vowel::U,
            VowelFilter::Ai => matches!(v, Vowel::A | Vowel::I),
            VowelFilter::Au => matches!(v, Vowel::A | Vowel::U),
            VowelFilter::Iu => matches!(v, Vowel::I | Vowel::U),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "vocalfold", version, about = "Vocal fold parameter estimation from speech")]
pub struct Cli {
    /// Pipeline configuration (TOML); defaults apply when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Worker threads; 0 uses all cores.
    #[arg(long, global = true, value_name = "N")]
    pub jobs: Option<usize>,
    /// Print the full default configuration and exit.
    #[arg(long)]
    pub print_default_config: bool,
    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate (alpha, beta, delta) for every voiced segment in a manifest.
    Estimate {
        #[arg(long, value_name = "PATH")]
        manifest: PathBuf,
        /// JSONL output; stdout when omitted.
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
        /// Also write the feature table as CSV.
        #[arg(long, value_name = "PATH")]
        features: Option<PathBuf>,
    },
    /// Write phase portraits for the parameters estimated on one segment.
    Phase {
        #[arg(long, value_name = "PATH")]
        clip: PathBuf,
        #[arg(long, default_value_t = 0)]
        segment: usize,
        /// Output prefix: PREFIX.left.csv, PREFIX.right.csv, PREFIX.trajectory.csv.
        #[arg(long, value_name = "PREFIX")]
        out: PathBuf,
        /// Overrides phase.steps.
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Cross-validated logistic regression on a feature table.
    Eval {
        /// Feature CSV or estimate JSONL.
        #[arg(long, value_name = "PATH")]
        features: PathBuf,
        #[arg(long, value_enum, default_value_t = VowelFilter::All)]
        vowel: VowelFilter,
        /// Overrides classifier.folds.
        #[arg(long)]
        folds: Option<usize>,
        /// Report path; stdout when omitted.
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
    /// Gradient oracle and synthetic recovery checks.
    Selftest,
}

/// One line of `estimate` output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRecord {
    pub segment_id: String,
    pub speaker_id: String,
    pub vowel: Vowel,
    pub label: Option<Label>,
    pub alpha: f64,
    pub beta: f64,
    pub delta: f64,
    pub residual_energy: f64,
    pub residual_mean_abs: f64,
    pub residual_max_abs: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct EstimateSummary {
    pub clips: usize,
    pub segments: usize,
    pub voiced: usize,
    pub converged: usize,
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    if cli.print_default_config {
        print!("{}", PipelineConfig::default().to_toml());
        return Ok(());
    }
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Input(format!("thread pool: {e}")))?;
    let Some(command) = cli.command else {
        return Err(CliError::Input("no subcommand given (see --help)".into()));
    };
    pool.install(|| match command {
        Command::Estimate { manifest, out, features } => {
            let (records, summary) = cmd_estimate(&cfg, &manifest)?;
            let mut jsonl = String::new();
            for r in &records {
                jsonl.push_str(&serde_json::to_string(r).expect("record serializes"));
                jsonl.push('\n');
            }
            write_output(out.as_deref(), jsonl.as_bytes())?;
            if let Some(path) = features {
                let feats: Vec<SegmentFeatures> = records.iter().map(record_features).collect();
                let mut buf = Vec::new();
                write_csv(&mut buf, &feats).map_err(|e| CliError::Input(e.to_string()))?;
                fs::write(&path, buf).map_err(|e| io_err(&path, e))?;
            }
            eprintln!(
                "estimate: {} clips, {} segments, {} voiced, {} records, {} converged",
                summary.clips, summary.segments, summary.voiced, records.len(), summary.converged
            );
            Ok(())
        }
        Command::Phase { clip, segment, out, steps } => {
            if let Some(s) = steps {
                cfg.phase.steps = s;
            }
            cfg.validate()?;
            let summary = cmd_phase(&cfg, &clip, segment, &out)?;
            println!("{}", serde_json::to_string(&summary).expect("summary serializes"));
            Ok(())
        }
        Command::Eval { features, vowel, folds, out } => {
            if let Some(k) = folds {
                cfg.classifier.folds = k;
            }
            cfg.validate()?;
            let report = cmd_eval(&cfg, &features, vowel)?;
            let mut text = serde_json::to_string_pretty(&report).expect("report serializes");
            text.push('\n');
            write_output(out.as_deref(), text.as_bytes())
        }
        Command::Selftest => {
            let report = cmd_selftest(&cfg);
            for c in &report.checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            if report.passed() {
                println!("selftest: all {} checks passed", report.checks.len());
                Ok(())
            } else {
                Err(CliError::Selftest(format!(
                    "selftest: {} of {} checks failed",
                    report.checks.iter().filter(|c| !c.passed).count(),
                    report.checks.len()
                )))
            }
        }
    })
}

fn write_output(path: Option<&Path>, bytes: &[u8]) -> Result<(), CliError> {
    match path {
        Some(p) => fs::write(p, bytes).map_err(|e| io_err(p, e)),
        None => io::stdout()
            .lock()
            .write_all(bytes)
            .map_err(|e| CliError::Input(format!("stdout: {e}"))),
    }
}

fn record_features(r: &SegmentRecord) -> SegmentFeatures {
    SegmentFeatures {
        segment_id: r.segment_id.clone(),
        speaker_id: r.speaker_id.clone(),
        vowel: r.vowel,
        label: r.label,
        alpha: r.alpha,
        beta: r.beta,
        delta: r.delta,
        res_energy: r.residual_energy,
        res_mean_abs: r.residual_mean_abs,
        res_max_abs: r.residual_max_abs,
        converged: r.converged,
    }
}

fn segment_id(seg: &Segment) -> String {
    format!("{}/{}/{}", seg.source.speaker_id, seg.source.name, seg.index)
}

/// Inverse filter and fit one segment.
fn fit_segment(cfg: &PipelineConfig, seg: &Segment) -> Result<(SegmentRecord, crate::adles::EstimationResult), CliError> {
    let id = segment_id(seg);
    let u0m = inverse_filter(seg, &cfg.inverse_filter)
        .map_err(|e| CliError::Numerical(format!("segment {id}: inverse filter: {e}")))?;
    let result = estimate(&u0m, &cfg.model.boundary, &cfg.model.constants, cfg.model_step(), &cfg.optimizer)
        .map_err(|e| match e {
            AdlesError::InvalidConfig(m) => CliError::Input(format!("segment {id}: {m}")),
            other => CliError::Numerical(format!("segment {id}: {other}")),
        })?;
    let meta = SegmentMeta {
        segment_id: id,
        speaker_id: seg.source.speaker_id.clone(),
        vowel: seg.source.vowel,
        label: seg.source.label,
    };
    let f = featurize(&result, &meta).map_err(|e| CliError::Numerical(format!("segment {}: {e}", meta.segment_id)))?;
    let record = SegmentRecord {
        segment_id: f.segment_id,
        speaker_id: f.speaker_id,
        vowel: f.vowel,
        label: f.label,
        alpha: f.alpha,
        beta: f.beta,
        delta: f.delta,
        residual_energy: f.res_energy,
        residual_mean_abs: f.res_mean_abs,
        residual_max_abs: f.res_max_abs,
        iterations: result.iterations,
        converged: f.converged,
    };
    Ok((record, result))
}

/// Records for every voiced segment of every clip, in manifest order.
pub fn cmd_estimate(cfg: &PipelineConfig, manifest: &Path) -> Result<(Vec<SegmentRecord>, EstimateSummary), CliError> {
    cfg.validate()?;
    let entries = load_manifest(manifest).map_err(|e| CliError::Input(e.to_string()))?;
    if entries.is_empty() {
        return Err(CliError::Input(format!("{}: manifest lists no clips", manifest.display())));
    }
    let seg_cfg = &cfg.segmentation;
    let mut segments = 0;
    let mut voiced = Vec::new();
    for entry in &entries {
        let clip = load_entry(entry, seg_cfg.sample_rate).map_err(|e| CliError::Input(e.to_string()))?;
        let segs = segment_clip(&clip, seg_cfg.win_s, seg_cfg.hop_s)
            .map_err(|e| CliError::Input(format!("{}: {e}", entry.path.display())))?;
        segments += segs.len();
        voiced.extend(
            segs.into_iter()
                .filter(|s| is_voiced(s, seg_cfg.energy_floor, seg_cfg.zcr_ceiling)),
        );
    }
    let results: Vec<Result<SegmentRecord, CliError>> = voiced
        .par_iter()
        .map(|seg| fit_segment(cfg, seg).map(|(r, _)| r))
        .collect();
    let records = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    let summary = EstimateSummary {
        clips: entries.len(),
        segments,
        voiced: voiced.len(),
        converged: records.iter().filter(|r| r.converged).count(),
    };
    Ok((records, summary))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhaseSummary {
    pub segment_id: String,
    pub alpha: f64,
    pub beta: f64,
    pub delta: f64,
    pub rows: usize,
    pub left_closed: Option<bool>,
    pub right_closed: Option<bool>,
}

/// Estimate on one segment of a clip, integrate the fitted model and write
/// both fold portraits plus the full trajectory.
pub fn cmd_phase(cfg: &PipelineConfig, clip: &Path, segment: usize, prefix: &Path) -> Result<PhaseSummary, CliError> {
    let seg_cfg = &cfg.segmentation;
    let mut audio = load_clip(clip, seg_cfg.sample_rate).map_err(|e| CliError::Input(e.to_string()))?;
    if audio.speaker_id.is_empty() {
        audio.speaker_id = "clip".into();
    }
    let segs = segment_clip(&audio, seg_cfg.win_s, seg_cfg.hop_s)
        .map_err(|e| CliError::Input(format!("{}: {e}", clip.display())))?;
    let seg = segs.get(segment).ok_or_else(|| {
        CliError::Input(format!("segment {segment} out of range: {} has {} segments", clip.display(), segs.len()))
    })?;
    if !is_voiced(seg, seg_cfg.energy_floor, seg_cfg.zcr_ceiling) {
        return Err(CliError::Input(format!("segment {segment} of {} is not voiced", clip.display())));
    }
    let (record, result) = fit_segment(cfg, seg)?;
    let traj = integrate_forward(&result.params, &cfg.model.boundary, cfg.phase.steps, cfg.model_step())
        .map_err(|e| CliError::Numerical(format!("segment {}: {e}", record.segment_id)))?;
    let left = phase_portrait(&traj, Side::Left);
    let right = phase_portrait(&traj, Side::Right);
    let with_suffix = |s: &str| {
        let mut p = prefix.as_os_str().to_owned();
        p.push(s);
        PathBuf::from(p)
    };
    for (suffix, text) in [
        (".left.csv", portrait_to_csv(&left)),
        (".right.csv", portrait_to_csv(&right)),
        (".trajectory.csv", traj.to_csv()),
    ] {
        let path = with_suffix(suffix);
        fs::write(&path, text).map_err(|e| io_err(&path, e))?;
    }
    let tol = cfg.phase.closed_tolerance;
    Ok(PhaseSummary {
        segment_id: record.segment_id,
        alpha: record.alpha,
        beta: record.beta,
        delta: record.delta,
        rows: traj.len(),
        left_closed: closed_orbit(&left, tol).map(|c| c.closed),
        right_closed: closed_orbit(&right, tol).map(|c| c.closed),
    })
}

pub fn cmd_eval(cfg: &PipelineConfig, features: &Path, vowel: VowelFilter) -> Result<EvalReport, CliError> {
    let file = fs::File::open(features).map_err(|e| io_err(features, e))?;
    let all = read_features(io::BufReader::new(file)).map_err(|e| io_err(features, e))?;
    let subset: Vec<SegmentFeatures> = all.into_iter().filter(|f| vowel.admits(f.vowel)).collect();
    if subset.is_empty() {
        let name = vowel.to_possible_value().map(|v| v.get_name().to_string()).unwrap_or_default();
        return Err(CliError::Input(format!("vowel filter '{name}' leaves no segments")));
    }
    let input = |e: ClassifyError| CliError::Input(e.to_string());
    let speakers = speaker_labels(&subset).map_err(input)?;
    let plan = make_cv_plan(&speakers, cfg.classifier.folds, cfg.seed).map_err(input)?;
    evaluate(&subset, &plan, &cfg.classifier).map_err(|e| match e {
        ClassifyError::AllFoldsDegenerate | ClassifyError::NonFiniteScore => CliError::Numerical(e.to_string()),
        other => CliError::Input(other.to_string()),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelftestReport {
    pub checks: Vec<Check>,
}

impl SelftestReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

const SELFTEST_SAMPLES: usize = 400;

/// Adjoint gradients against central differences at random points, then
/// recovery of known parameters from perturbed starts.
pub fn cmd_selftest(cfg: &PipelineConfig) -> SelftestReport {
    let rate = cfg.segmentation.sample_rate as f64;
    let h = cfg.model_step();
    let bc = cfg.model.boundary;
    let consts = cfg.model.constants;
    let substeps = cfg.optimizer.substeps;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut checks = Vec::new();

    let target = ModelParams::new(0.3, 0.25, 0.2);
    let grad = synthetic_flow(&target, &bc, &consts, SELFTEST_SAMPLES, rate, h, substeps)
        .map_err(|e| e.to_string())
        .and_then(|u| {
            let obj = FlowObjective::new(u.samples(), bc, consts, h, 0)
                .map_err(|e| e.to_string())?
                .with_substeps(substeps);
            let mut worst: f64 = 0.0;
            for _ in 0..20 {
                let p = ModelParams::new(rng.gen_range(0.0..0.6), rng.gen_range(0.05..0.8), rng.gen_range(-0.5..0.5));
                let (g, fd) = gradient_pair(&obj, &p).map_err(|e| e.to_string())?;
                for (a, b) in g.iter().zip(&fd) {
                    let err = if b.abs() < 1e-5 && a.abs() < 1e-5 {
                        if (a - b).abs() <= 1e-8 { 0.0 } else { f64::INFINITY }
                    } else {
                        (a - b).abs() / b.abs().max(a.abs())
                    };
                    worst = worst.max(err);
                }
            }
            Ok(worst)
        });
    checks.push(match grad {
        Ok(worst) => Check {
            name: "gradient".into(),
            passed: worst <= 1e-3,
            detail: format!("20 points, worst relative error {worst:.2e} (limit 1e-3)"),
        },
        Err(e) => Check {
            name: "gradient".into(),
            passed: false,
            detail: e,
        },
    });

    let mut truths = vec![ModelParams::normal_voice()];
    while truths.len() < 3 {
        let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let p = ModelParams::new(rng.gen_range(0.2..0.5), rng.gen_range(0.15..0.5), sign * rng.gen_range(0.1..0.3));
        if 2.0 * p.alpha - p.beta >= 0.15 {
            truths.push(p);
        }
    }
    let opt = recovery_config(&cfg.optimizer);
    for truth in truths {
        let init = ModelParams::new(truth.alpha * 1.2, truth.beta * 1.2, truth.delta * 1.2);
        let name = format!("recovery ({:.3}, {:.3}, {:.3})", truth.alpha, truth.beta, truth.delta);
        let outcome = synthetic_flow(&truth, &bc, &consts, SELFTEST_SAMPLES, rate, h, substeps)
            .map_err(|e| e.to_string())
            .and_then(|u| {
                estimate(&u, &bc, &consts, h, &OptimizerConfig { init, ..opt }).map_err(|e| e.to_string())
            });
        checks.push(match outcome {
            Ok(r) => {
                let worst = truth
                    .to_array()
                    .iter()
                    .zip(r.params.to_array())
                    .map(|(t, e)| if *t == 0.0 { e.abs() } else { (e - t).abs() / t.abs() })
                    .fold(0.0, f64::max);
                let reduction = if r.energy() > 0.0 { r.initial_energy / r.energy() } else { f64::INFINITY };
                Check {
                    name,
                    passed: worst <= 0.05 && reduction >= 1e4,
                    detail: format!(
                        "worst coordinate error {:.2}%, energy reduced {reduction:.1e}x in {} iterations",
                        100.0 * worst,
                        r.iterations
                    ),
                }
            }
            Err(e) => Check {
                name,
                passed: false,
                detail: e,
            },
        });
    }
    SelftestReport { checks }
}

/// Optimizer settings for driving a synthetic fit to machine-level energy.
pub fn recovery_config(base: &OptimizerConfig) -> OptimizerConfig {
    OptimizerConfig {
        step_growth: 2.0,
        max_iters: 20_000,
        rel_tol: 1e-14,
        ..*base
    }
}

/// Adjoint gradient and central finite differences of the energy at `p`.
pub fn gradient_pair(obj: &FlowObjective, p: &ModelParams) -> Result<([f64; 3], [f64; 3]), crate::vfmodel::ModelError> {
    let ev = obj.evaluate(p)?;
    let g = obj.gradient(&ev)?.to_array();
    let th = p.to_array();
    let mut fd = [0.0; 3];
    for k in 0..3 {
        let eps = 1e-5 * th[k].abs().max(1.0);
        let mut up = th;
        up[k] += eps;
        let mut down = th;
        down[k] -= eps;
        let e_up = obj.evaluate(&ModelParams::from_array(up))?.energy();
        let e_down = obj.evaluate(&ModelParams::from_array(down))?.energy();
        fd[k] = (e_up - e_down) / (2.0 * eps);
    }
    Ok((g, fd))
}
