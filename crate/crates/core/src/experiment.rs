//! Configuration-driven experiment orchestration: phantom -> synthesize ->
//! reconstruct -> diagnose -> report, plus convergence and noise-stability
//! sweeps. Runs are deterministic for a fixed configuration: all randomness
//! flows from the single named seed, and iteration orders are fixed.

use crate::algebraic2d::{reconstruct_sigma_2d, Mode2d};
use crate::elliptic::{
    build_w, estimate_pw_norm, sigma_from_solutions, solve_coupled, EllipticSettings,
};
use crate::error::{Error, Result};
use crate::forward::{
    bundle_distance_w1inf, check_positivity, perturb, synthesize, SyntheticTruth,
};
use crate::frame::{derived_fields, DerivedFields, TransitionMethod};
use crate::grid::{Grid, NormKind, ScalarField};
use crate::io;
use crate::ode::{reconstruct_sigma_ode, seed_from_truth, FrameConvention};
use crate::phantom::{IlluminationSet, Phantom};
use crate::report::{h1_diff, masked_linf_diff, masked_w1inf_diff, relative, ReconReport};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

/// Reconstruction methods exposed by the runner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    OdeS,
    OdeR,
    Elliptic,
    Theta2d,
    Algebraic2d,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::OdeS => "ode_s",
            Method::OdeR => "ode_r",
            Method::Elliptic => "elliptic",
            Method::Theta2d => "theta2d",
            Method::Algebraic2d => "algebraic2d",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "ode_s" => Ok(Method::OdeS),
            "ode_r" => Ok(Method::OdeR),
            "elliptic" => Ok(Method::Elliptic),
            "theta2d" => Ok(Method::Theta2d),
            "algebraic2d" => Ok(Method::Algebraic2d),
            other => Err(Error::Config(format!("unknown method '{other}'"))),
        }
    }

    pub const ALL: [Method; 5] = [
        Method::OdeS,
        Method::OdeR,
        Method::Elliptic,
        Method::Theta2d,
        Method::Algebraic2d,
    ];
}

/// Noise-sweep settings.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    #[serde(default)]
    pub levels: Vec<f64>,
    #[serde(default = "default_smooth_radius")]
    pub smooth_radius: f64,
    /// Seed-point errors injected into the perturbed transport runs.
    #[serde(default)]
    pub seed_errors: Vec<f64>,
}

fn default_smooth_radius() -> f64 {
    0.05
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            levels: vec![1e-4, 1e-3, 1e-2],
            smooth_radius: default_smooth_radius(),
            seed_errors: vec![0.0],
        }
    }
}

/// Elliptic solver keys (elliptic.tol, elliptic.max_iter).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct EllipticConfig {
    #[serde(default = "default_tol")]
    pub tol: f64,
    /// None means 20 * nx.
    #[serde(default)]
    pub max_iter: Option<usize>,
}

fn default_tol() -> f64 {
    1e-10
}

impl Default for EllipticConfig {
    fn default() -> Self {
        EllipticConfig {
            tol: default_tol(),
            max_iter: None,
        }
    }
}

/// One experiment: phantom, grid, exponent, method and knobs. Unknown keys
/// are rejected so sweep typos fail loudly.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub phantom: String,
    pub grid: usize,
    pub alpha: f64,
    pub method: Method,
    /// "default" (adapted when closed forms exist) or "axes".
    #[serde(default = "default_illuminations")]
    pub illuminations: String,
    /// Use closed-form solution gradients when the phantom provides them.
    #[serde(default = "default_true")]
    pub analytic_data: bool,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub elliptic: EllipticConfig,
    /// Relative degeneracy floor of the pointwise inversion.
    #[serde(default = "default_floor")]
    pub degeneracy_floor: f64,
    /// "gram_schmidt" or "inv_sqrt".
    #[serde(default = "default_t_method")]
    pub t_method: String,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn default_illuminations() -> String {
    "default".to_string()
}

fn default_true() -> bool {
    true
}

fn default_seed() -> u64 {
    42
}

fn default_floor() -> f64 {
    crate::algebraic2d::DEFAULT_DEGENERACY_FLOOR
}

fn default_t_method() -> String {
    "gram_schmidt".to_string()
}

impl ExperimentConfig {
    pub fn new(phantom: &str, grid: usize, alpha: f64, method: Method) -> Self {
        ExperimentConfig {
            phantom: phantom.to_string(),
            grid,
            alpha,
            method,
            illuminations: default_illuminations(),
            analytic_data: true,
            noise: NoiseConfig::default(),
            seed: default_seed(),
            elliptic: EllipticConfig::default(),
            degeneracy_floor: default_floor(),
            t_method: default_t_method(),
            output_dir: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.method == Method::Algebraic2d && (self.alpha - 0.5).abs() < 1e-12 {
            return Err(Error::Config(
                "the algebraic2d method requires alpha != 1/2".into(),
            ));
        }
        if (0.0f64 * self.alpha + 1.0).abs() < 1e-14 {
            return Err(Error::ExcludedAlpha {
                n: 2,
                alpha: self.alpha,
            });
        }
        if !matches!(self.illuminations.as_str(), "default" | "axes") {
            return Err(Error::Config(format!(
                "unknown illumination set '{}'",
                self.illuminations
            )));
        }
        self.transition_method()?;
        Ok(())
    }

    pub fn transition_method(&self) -> Result<TransitionMethod> {
        match self.t_method.as_str() {
            "gram_schmidt" => Ok(TransitionMethod::GramSchmidt),
            "inv_sqrt" => Ok(TransitionMethod::InvSqrt),
            other => Err(Error::Config(format!(
                "unknown transition method '{other}'"
            ))),
        }
    }

    /// Hash of the canonical JSON serialization; carried by every report
    /// and CSV row.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        hex_prefix(&digest, 16)
    }

    pub fn elliptic_settings(&self) -> EllipticSettings {
        EllipticSettings {
            tol: self.elliptic.tol,
            max_iter: self.elliptic.max_iter,
            cross_check: true,
        }
    }
}

fn hex_prefix(bytes: &[u8], len: usize) -> String {
    bytes
        .iter()
        .take(len / 2)
        .map(|b| format!("{b:02x}"))
        .collect()
}

// ---------------------------------------------------------------------------
// Single run
// ---------------------------------------------------------------------------

/// Everything a run produces in memory.
pub struct RunOutput {
    pub report: ReconReport,
    pub log_sigma: ScalarField,
    pub sigma: ScalarField,
    /// The reconstructed source term, when the method produces one.
    pub f: Option<crate::grid::VectorField>,
    /// The transported frame (transport methods only).
    pub frame: Option<crate::grid::FrameField>,
    pub truth: SyntheticTruth,
    pub mask: Option<Vec<bool>>,
}

pub fn prepare(
    config: &ExperimentConfig,
) -> Result<(
    Phantom,
    IlluminationSet,
    crate::forward::DataBundle,
    SyntheticTruth,
)> {
    let grid = Grid::new(config.grid, config.grid)?;
    let phantom = Phantom::by_name(&config.phantom, grid)?;
    let illums = match config.illuminations.as_str() {
        "axes" => IlluminationSet::axes(grid),
        _ => IlluminationSet::default_for(&phantom),
    };
    let (bundle, truth) = synthesize(&phantom, config.alpha, &illums, config.analytic_data)?;
    Ok((phantom, illums, bundle, truth))
}

/// Run one reconstruction described by the configuration and assemble the
/// report; artifacts are written when `output_dir` is set.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunOutput> {
    config.validate()?;
    let started = Instant::now();
    let (_phantom, illums, bundle, truth) = prepare(config)?;
    let derived = derived_fields(&bundle, config.transition_method()?)?;
    let settings = config.elliptic_settings();
    let grid = bundle.grid;

    let mut residual_norms = BTreeMap::new();
    #[allow(unused_assignments)]
    let mut path_dependence = 0.0f64;
    let mut frame_consistency = 0.0f64;
    let mut degenerate_fraction = 0.0f64;
    let mut mask: Option<Vec<bool>> = None;
    let f_out: Option<crate::grid::VectorField>;
    let mut frame_out: Option<crate::grid::FrameField> = None;

    let (log_sigma, sigma) = match config.method {
        Method::OdeS | Method::OdeR => {
            let convention = if config.method == Method::OdeS {
                FrameConvention::S
            } else {
                FrameConvention::R
            };
            let seed = seed_from_truth(&derived, &truth, config.alpha, grid.center(), convention);
            let rec = reconstruct_sigma_ode(&derived, &seed)?;
            path_dependence = rec.path_dependence;
            frame_consistency = rec.frame_defect;
            residual_norms.insert("reortho_correction".into(), rec.stats.reortho_correction);
            residual_norms.insert("max_skew_defect".into(), rec.stats.max_skew_defect);
            f_out = Some(rec.f);
            frame_out = Some(rec.frame);
            (rec.log_sigma, rec.sigma)
        }
        Method::Elliptic => {
            let sol = solve_coupled(&derived, &illums, &settings)?;
            if let Some(dev) = sol.cross_check_deviation {
                residual_norms.insert("nondivergence_deviation".into(), dev);
            }
            let truth_potential = potential_truth(&truth, config.alpha);
            let rec =
                sigma_from_solutions(&derived, &sol.u, config.alpha, &truth_potential, &settings)?;
            path_dependence = rec.path_dependence;
            residual_norms.insert(
                "potential_curl_residual".into(),
                rec.curl_residual.norm(NormKind::Linf),
            );
            residual_norms.insert("potential_route_deviation".into(), rec.route_deviation);
            residual_norms.insert("clamped_fraction".into(), rec.clamped_fraction);
            f_out = Some(rec.rhs);
            let log_sigma = rec.sigma.map(f64::ln);
            (log_sigma, rec.sigma)
        }
        Method::Theta2d | Method::Algebraic2d => {
            let mode = if config.method == Method::Theta2d {
                Mode2d::Theta
            } else {
                Mode2d::Algebraic
            };
            let rec = reconstruct_sigma_2d(
                &derived,
                mode,
                &truth,
                config.degeneracy_floor,
                settings.tol,
                settings.max_iter.unwrap_or(20 * grid.nx),
            )?;
            path_dependence = rec.path_dependence;
            degenerate_fraction = rec.degenerate_fraction;
            residual_norms.insert(
                "consistency_residual_sup".into(),
                rec.consistency_residual_sup,
            );
            residual_norms.insert("potential_route_deviation".into(), rec.route_deviation);
            mask = rec.mask;
            f_out = Some(rec.f);
            (rec.log_sigma, rec.sigma)
        }
    };

    // error metrics against the synthetic truth
    let err_linf = relative(
        masked_linf_diff(&log_sigma, &truth.log_sigma, mask.as_deref()),
        truth.log_sigma.norm(NormKind::Linf),
    );
    let err_w1inf = relative(
        masked_w1inf_diff(&log_sigma, &truth.log_sigma, mask.as_deref()),
        truth.log_sigma.norm(NormKind::W1inf),
    );
    let pot_rec = potential_of(&log_sigma, config.alpha);
    let pot_truth = potential_truth(&truth, config.alpha);
    let err_h1 = relative(h1_diff(&pot_rec, &pot_truth), pot_truth.norm(NormKind::H1));

    let report = ReconReport {
        method: config.method.name().to_string(),
        phantom: config.phantom.clone(),
        alpha: config.alpha,
        grid: config.grid,
        err_logsigma_linf: err_linf,
        err_logsigma_w1inf: err_w1inf,
        err_sigma_pow_h1: err_h1,
        path_dependence,
        frame_consistency,
        min_det: check_positivity(&bundle, 0.0).min_det,
        degenerate_fraction,
        residual_norms,
        runtime_s: started.elapsed().as_secs_f64(),
        config_hash: config.hash(),
    };

    if let Some(dir) = &config.output_dir {
        write_artifacts(
            dir,
            &report,
            &log_sigma,
            &sigma,
            f_out.as_ref(),
            frame_out.as_ref(),
            mask.as_deref(),
        )?;
    }

    Ok(RunOutput {
        report,
        log_sigma,
        sigma,
        f: f_out,
        frame: frame_out,
        truth,
        mask,
    })
}

/// sigma^{-2 alpha} as a field, or log sigma when alpha = 0.
fn potential_of(log_sigma: &ScalarField, alpha: f64) -> ScalarField {
    if alpha == 0.0 {
        log_sigma.clone()
    } else {
        log_sigma.map(|v| (-2.0 * alpha * v).exp())
    }
}

fn potential_truth(truth: &SyntheticTruth, alpha: f64) -> ScalarField {
    potential_of(&truth.log_sigma, alpha)
}

fn write_artifacts(
    dir: &Path,
    report: &ReconReport,
    log_sigma: &ScalarField,
    sigma: &ScalarField,
    f: Option<&crate::grid::VectorField>,
    frame: Option<&crate::grid::FrameField>,
    mask: Option<&[bool]>,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(report)?,
    )?;
    io::write_scalar(dir, "sigma", sigma)?;
    io::write_scalar(dir, "log_sigma", log_sigma)?;
    io::write_scalar_csv(&dir.join("sigma.csv"), sigma, "sigma")?;
    if let Some(field) = f {
        io::write_vector(dir, "F", field)?;
    }
    if let Some(fr) = frame {
        for (c, col) in fr.columns.iter().enumerate() {
            io::write_vector(dir, &format!("frame_{}", c + 1), col)?;
        }
    }
    if let Some(m) = mask {
        let field = ScalarField {
            grid: sigma.grid,
            values: m.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        };
        io::write_scalar(dir, "mask", &field)?;
    }
    append_csv_row(&dir.join("metrics.csv"), report)?;
    Ok(())
}

fn append_csv_row(path: &Path, report: &ReconReport) -> Result<()> {
    let new = !path.exists();
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)?;
    if new {
        writeln!(f, "{}", ReconReport::csv_header())?;
    }
    writeln!(f, "{}", report.csv_row())?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Convergence study
// ---------------------------------------------------------------------------

/// One grid level of a convergence table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub grid: usize,
    pub h: f64,
    pub err_logsigma_linf: f64,
    /// log2 error ratio against the previous (coarser) level.
    pub order: Option<f64>,
    /// "ok", "floor" (error at solver tolerance), or "unreliable"
    /// (non-monotone sequence).
    pub quality: String,
}

/// Run the configured experiment on every grid and report observed orders.
pub fn convergence_study(
    config: &ExperimentConfig,
    grids: &[usize],
) -> Result<Vec<ConvergenceRow>> {
    if grids.len() < 3 {
        return Err(Error::Config("a convergence study needs >= 3 grids".into()));
    }
    let mut rows: Vec<ConvergenceRow> = Vec::new();
    for &n in grids {
        let mut cfg = config.clone();
        cfg.grid = n;
        cfg.output_dir = None;
        let out = run_experiment(&cfg)?;
        let err = out.report.err_logsigma_linf;
        let (order, quality) = match rows.last() {
            None => (None, "ok".to_string()),
            Some(prev) => {
                if err < 1e-8 || prev.err_logsigma_linf < 1e-8 {
                    (None, "floor".to_string())
                } else if err >= prev.err_logsigma_linf {
                    (
                        Some((prev.err_logsigma_linf / err).log2()),
                        "unreliable".to_string(),
                    )
                } else {
                    (
                        Some((prev.err_logsigma_linf / err).log2()),
                        "ok".to_string(),
                    )
                }
            }
        };
        rows.push(ConvergenceRow {
            grid: n,
            h: 1.0 / (n - 1) as f64,
            err_logsigma_linf: err,
            order,
            quality,
        });
    }
    if let Some(dir) = &config.output_dir {
        std::fs::create_dir_all(dir)?;
        let mut f = std::fs::File::create(dir.join("convergence.csv"))?;
        writeln!(f, "grid,h,err_logsigma_linf,order,quality,config_hash")?;
        let hash = config.hash();
        for r in &rows {
            writeln!(
                f,
                "{},{:e},{:e},{},{},{}",
                r.grid,
                r.h,
                r.err_logsigma_linf,
                r.order.map_or("".to_string(), |o| format!("{o:.3}")),
                r.quality,
                hash
            )?;
        }
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Stability sweep
// ---------------------------------------------------------------------------

/// One perturbation level of a stability sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StabilityRow {
    pub level: f64,
    pub seed_error: f64,
    pub measured_distance: f64,
    /// |log s - log s'|_W1inf / (eps0 + delta) - the transport-stability shape.
    pub ratio_w1inf: f64,
    /// |s^{-2a} - s'^{-2a}|_H1 / delta - the elliptic-stability shape.
    pub ratio_h1: f64,
}

/// Reconstruct from clean and perturbed bundles and report the stability
/// ratios. The perturbed transport seeds carry the configured seed errors
/// (log offset plus frame rotation of the same magnitude).
pub fn stability_sweep(config: &ExperimentConfig) -> Result<Vec<StabilityRow>> {
    config.validate()?;
    let (_phantom, illums, bundle, truth) = prepare(config)?;
    let t_method = config.transition_method()?;
    let derived = derived_fields(&bundle, t_method)?;
    let settings = config.elliptic_settings();
    let alpha = config.alpha;

    // clean reference run
    let clean =
        reconstruct_for_stability(config, &derived, &illums, &truth, alpha, 0.0, &settings)?;

    let mut rows = Vec::new();
    for (k, &level) in config.noise.levels.iter().enumerate() {
        let noisy_bundle = perturb(
            &bundle,
            level,
            config.noise.smooth_radius,
            config.seed.wrapping_add(k as u64),
        )?;
        let measured = bundle_distance_w1inf(&bundle, &noisy_bundle);
        let noisy_derived = derived_fields(&noisy_bundle, t_method)?;
        for &eps0 in &config.noise.seed_errors {
            let noisy = reconstruct_for_stability(
                config,
                &noisy_derived,
                &illums,
                &truth,
                alpha,
                eps0,
                &settings,
            )?;
            let dist_w1 = masked_w1inf_diff(&clean.0, &noisy.0, None);
            let dist_h1 = h1_diff(&clean.1, &noisy.1);
            rows.push(StabilityRow {
                level,
                seed_error: eps0,
                measured_distance: measured,
                ratio_w1inf: dist_w1 / (eps0 + measured),
                ratio_h1: dist_h1 / measured,
            });
        }
    }

    if let Some(dir) = &config.output_dir {
        std::fs::create_dir_all(dir)?;
        let mut f = std::fs::File::create(dir.join("stability.csv"))?;
        writeln!(
            f,
            "level,seed_error,measured_distance,ratio_w1inf,ratio_h1,config_hash"
        )?;
        let hash = config.hash();
        for r in &rows {
            writeln!(
                f,
                "{:e},{:e},{:e},{:e},{:e},{}",
                r.level, r.seed_error, r.measured_distance, r.ratio_w1inf, r.ratio_h1, hash
            )?;
        }
    }
    Ok(rows)
}

/// (log sigma, sigma^{-2a} potential) for the stability harness.
fn reconstruct_for_stability(
    config: &ExperimentConfig,
    derived: &DerivedFields,
    illums: &IlluminationSet,
    truth: &SyntheticTruth,
    alpha: f64,
    eps0: f64,
    settings: &EllipticSettings,
) -> Result<(ScalarField, ScalarField)> {
    let grid = derived.grid;
    let log_sigma = match config.method {
        Method::OdeS | Method::OdeR => {
            let convention = if config.method == Method::OdeS {
                FrameConvention::S
            } else {
                FrameConvention::R
            };
            // the seed frame must match the (possibly perturbed) data at x0;
            // the truth contributes only the orientation and the log value
            let mut seed =
                crate::ode::seed_reconciled(derived, truth, alpha, grid.center(), convention)?;
            if eps0 != 0.0 {
                seed.log_sigma0 += 0.5 * eps0;
                let rot = crate::linalg::SmallMat::from_rows(
                    2,
                    &[
                        [(0.5 * eps0).cos(), -(0.5 * eps0).sin(), 0.0],
                        [(0.5 * eps0).sin(), (0.5 * eps0).cos(), 0.0],
                    ],
                );
                seed.frame0 = rot.mul(&seed.frame0);
            }
            reconstruct_sigma_ode(derived, &seed)?.log_sigma
        }
        Method::Elliptic => {
            let sol = solve_coupled(derived, illums, settings)?;
            let truth_potential = potential_truth(truth, alpha);
            let rec = sigma_from_solutions(derived, &sol.u, alpha, &truth_potential, settings)?;
            rec.sigma.map(f64::ln)
        }
        Method::Theta2d | Method::Algebraic2d => {
            let mode = if config.method == Method::Theta2d {
                Mode2d::Theta
            } else {
                Mode2d::Algebraic
            };
            reconstruct_sigma_2d(
                derived,
                mode,
                truth,
                config.degeneracy_floor,
                settings.tol,
                settings.max_iter.unwrap_or(20 * grid.nx),
            )?
            .log_sigma
        }
    };
    let potential = potential_of(&log_sigma, alpha);
    Ok((log_sigma, potential))
}

// ---------------------------------------------------------------------------
// Diagnostics run
// ---------------------------------------------------------------------------

/// Residual norms of the range test, with convergence orders when a refined
/// grid is supplied.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiagnoseReport {
    pub grid: usize,
    pub residual_sup: BTreeMap<String, f64>,
    pub residual_l2: BTreeMap<String, f64>,
    pub refined_grid: Option<usize>,
    /// Observed order of each sup norm between the two grids.
    pub orders: BTreeMap<String, f64>,
    pub config_hash: String,
}

pub fn run_diagnose(
    config: &ExperimentConfig,
    refined_grid: Option<usize>,
    corrupt_amplitude: Option<f64>,
) -> Result<DiagnoseReport> {
    let fields_at = |n: usize| -> Result<crate::diagnostics::RangeTestFields> {
        let mut cfg = config.clone();
        cfg.grid = n;
        let (_phantom, _illum, mut bundle, truth) = prepare(&cfg)?;
        if let Some(a) = corrupt_amplitude {
            bundle = crate::forward::corrupt_default(&bundle, a);
        }
        let derived = derived_fields(&bundle, cfg.transition_method()?)?;
        crate::diagnostics::range_test_fields(
            &derived,
            &truth,
            cfg.elliptic.tol,
            cfg.elliptic.max_iter.unwrap_or(20 * n),
        )
    };
    let family_sups = |fields: &crate::diagnostics::RangeTestFields| -> BTreeMap<String, f64> {
        let r = fields.report();
        let mut map = BTreeMap::new();
        map.insert("curl_f".to_string(), r.curl_f_sup);
        map.insert("curvature".to_string(), r.curvature_sup);
        map.insert("grad_theta".to_string(), r.grad_theta_sup);
        map.insert("compat_g".to_string(), r.compat_g_sup);
        map.insert("compat_f".to_string(), r.compat_f_sup);
        if let Some(v) = r.alpha_half_sup {
            map.insert("alpha_half".to_string(), v);
        }
        map
    };

    let base_fields = fields_at(config.grid)?;
    let base = family_sups(&base_fields);
    let mut residual_l2 = BTreeMap::new();
    for (name, _sup, l2) in base_fields.norms() {
        residual_l2.insert(name, l2);
    }
    let mut orders = BTreeMap::new();
    if let Some(refined) = refined_grid {
        let fine = family_sups(&fields_at(refined)?);
        for (name, &coarse_val) in &base {
            if let Some(&fine_val) = fine.get(name) {
                if coarse_val > 0.0 && fine_val > 0.0 {
                    orders.insert(name.clone(), (coarse_val / fine_val).log2());
                }
            }
        }
    }
    let report = DiagnoseReport {
        grid: config.grid,
        residual_sup: base,
        residual_l2,
        refined_grid,
        orders,
        config_hash: config.hash(),
    };
    if let Some(dir) = &config.output_dir {
        std::fs::create_dir_all(dir)?;
        std::fs::write(
            dir.join("diagnose.json"),
            serde_json::to_string_pretty(&report)?,
        )?;
        base_fields.export(dir)?;
    }
    Ok(report)
}

/// Drift-operator norm report for a configured bundle.
pub fn run_pw_estimate(config: &ExperimentConfig) -> Result<crate::elliptic::PwEstimate> {
    let (_phantom, _illums, bundle, _truth) = prepare(config)?;
    let derived = derived_fields(&bundle, config.transition_method()?)?;
    let w = build_w(&derived)?;
    estimate_pw_norm(&derived, &w, config.seed, &config.elliptic_settings())
}

/// Write a gnuplot script next to a CSV produced by the sweeps.
pub fn emit_gnuplot(csv: &Path, x_col: &str, y_col: &str) -> Result<PathBuf> {
    let gp = csv.with_extension("gp");
    let script = format!(
        "set datafile separator ','\n\
         set key autotitle columnhead\n\
         set logscale xy\n\
         set xlabel '{x_col}'\n\
         set ylabel '{y_col}'\n\
         plot '{}' using '{x_col}':'{y_col}' with linespoints\n",
        csv.display()
    );
    std::fs::write(&gp, script)?;
    Ok(gp)
}
