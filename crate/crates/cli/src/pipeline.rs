//! Stage execution: config validation, cached block artifacts, and the
//! five pipeline stages.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use attractor_forge::boxgrid::{BoxSet, Grid};
use attractor_forge::conley::{
    build_stable_block, compute_delta, compute_gamma_t, compute_gt, BlockParams, BlockValidation, ConleyError,
    SliceOptions, StableBlock,
};
use attractor_forge::dynamics::{AutonomousFlow, FlowConfig};
use attractor_forge::fieldlang::{parse, parse_scalar, FieldAst};
use attractor_forge::perturb::{
    admissible_eps, check_with_delta, curve_monotone, semicontinuity_curve, ssing_diagnostic, BaseSampling,
    PerturbError, PerturbationFamily, VerdictOptions,
};
use attractor_forge::rds::{admissible_rho, persistence_stats, NoiseError, NoiseSpec, RdsOptions};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{BlockMode, ExperimentConfig, Region, RhoSetting, SamplingKind};
use crate::error::RunError;
use crate::report::{sha256_hex, Report, Warning};

/// Samples per box axis for every set computation.
const SAMPLES: usize = 2;
/// Bisection steps of the admissible amplitude and noise bound.
const BISECT_ITERS: usize = 12;
/// Random block points of the semi-singularity diagnostic.
const SSING_POINTS: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Gset,
    Block,
    Verdict,
    Curve,
    Rds,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Gset => "gset",
            Stage::Block => "block",
            Stage::Verdict => "verdict",
            Stage::Curve => "curve",
            Stage::Rds => "rds",
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Overrides `output.directory`.
    pub out: Option<PathBuf>,
    /// Overrides `rds.seed0`; applied before the config is hashed.
    pub seed: Option<u64>,
    /// Ignore cached artifacts and recompute missing upstream stages.
    pub recompute: bool,
    /// Overrides `horizons.T_list`.
    pub horizons: Option<Vec<f64>>,
}

/// A validated configuration with every expression parsed and every time
/// rounded to the step mesh.
pub struct Prepared {
    pub config: ExperimentConfig,
    pub grid: Arc<Grid>,
    pub flow: FlowConfig,
    pub f0: FieldAst,
    pub ntilde: BoxSet,
    pub horizon: f64,
    pub t_list: Vec<f64>,
    pub family: Option<PerturbationFamily>,
    pub noise: Option<NoiseSpec>,
    pub rds_horizon: Option<f64>,
    pub warnings: Vec<Warning>,
}

fn cfg_err(key: &str, msg: impl std::fmt::Display) -> RunError {
    RunError::config("config", key, msg)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig, RunError> {
    let text = fs::read_to_string(path).map_err(|e| cfg_err("--config", format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| cfg_err("<document>", e))
}

impl Prepared {
    pub fn new(config: ExperimentConfig) -> Result<Self, RunError> {
        let mut warnings = Vec::new();
        let g = &config.grid;
        let grid = Grid::new(g.lo.clone(), g.hi.clone(), g.res.clone()).map_err(|e| cfg_err("grid", e))?;
        let grid = Arc::new(grid);
        let dim = grid.dim();
        let flow = FlowConfig::new(config.flow.step, config.flow.blowup_bound).map_err(|e| cfg_err("flow", e))?;
        if g.lo.iter().chain(&g.hi).any(|v| v.abs() >= flow.blowup_bound) {
            return Err(cfg_err("grid", "grid extends beyond flow.blowup_bound"));
        }
        let f0 = parse(&config.field.f0, dim).map_err(|e| cfg_err("field.f0", e))?;
        let ntilde = region(&config.block.ntilde, &grid)?;
        if ntilde.is_empty() {
            return Err(cfg_err("block.ntilde", "region contains no box"));
        }
        let mut round = |key: &str, t: f64| -> Result<f64, RunError> {
            if !(t > 0.0 && t.is_finite()) {
                return Err(cfg_err(key, format!("horizon must be positive, got {t}")));
            }
            let r = flow.round_time(t);
            if r <= 0.0 {
                return Err(cfg_err(key, format!("horizon {t} rounds to zero steps")));
            }
            if !flow.is_step_multiple(t) {
                warnings.push(Warning {
                    stage: "config".into(),
                    key: key.into(),
                    message: format!("{t} is not a multiple of the step {}; rounded to {r}", flow.step),
                });
            }
            Ok(r)
        };
        let horizon = round("horizons.T", config.horizons.T)?;
        let t_list = if config.horizons.T_list.is_empty() {
            vec![horizon]
        } else {
            config
                .horizons
                .T_list
                .iter()
                .map(|&t| round("horizons.T_list", t))
                .collect::<Result<_, _>>()?
        };
        let rds_horizon = config.rds.as_ref().map(|r| round("rds.T", r.T)).transpose()?;

        let family = match (&config.perturbation, &config.field.family) {
            (None, _) => None,
            (Some(_), None) => {
                return Err(cfg_err(
                    "field.fn",
                    "a perturbation section needs the perturbed family `fn`",
                ))
            }
            (Some(p), Some(src)) => {
                if !(config.field.period > 0.0 && config.field.period.is_finite()) {
                    return Err(cfg_err("field.period", "period must be positive"));
                }
                let sampling = match p.sampling {
                    SamplingKind::Periodic => BaseSampling::periodic(config.field.period),
                    SamplingKind::QuasiRandom => BaseSampling::quasi_random(p.t_max),
                };
                if p.depth.is_nan() || p.depth < 0.0 {
                    return Err(cfg_err("perturbation.depth", "depth must be nonnegative"));
                }
                if p.eps_max.is_nan() || p.eps_max <= 0.0 {
                    return Err(cfg_err("perturbation.eps_max", "eps_max must be positive"));
                }
                let fam = PerturbationFamily::parse(&config.field.f0, src, dim, p.eps_values.clone(), sampling)
                    .map_err(|e| {
                        let key = match e {
                            PerturbError::BadEpsValues => "perturbation.eps_values",
                            _ => "field.fn",
                        };
                        cfg_err(key, e)
                    })?;
                Some(fam)
            }
        };

        let noise = match &config.rds {
            None => None,
            Some(r) => {
                let m = r.m.unwrap_or(dim);
                let coupling = match &r.coupling {
                    Some(c) => c.clone(),
                    None if m == dim => (1..=dim).map(|j| format!("u{j}")).collect::<Vec<_>>().join("; "),
                    None => {
                        return Err(cfg_err(
                            "rds.coupling",
                            "needed when rds.m differs from the state dimension",
                        ))
                    }
                };
                let rho = match r.rho {
                    RhoSetting::Value(v) => v,
                    RhoSetting::Auto(_) => r.rho_max,
                };
                if r.n_paths == 0 {
                    return Err(cfg_err("rds.n_paths", "at least one path is needed"));
                }
                let spec = NoiseSpec::parse(r.kind, rho, r.mesh, m, &coupling, dim).map_err(|e| {
                    let key = match e {
                        NoiseError::Parse(_) => "rds.coupling",
                        NoiseError::Rho(_) => "rds.rho",
                        NoiseError::Mesh(_) => "rds.mesh",
                    };
                    cfg_err(key, e)
                })?;
                Some(spec)
            }
        };

        Ok(Prepared {
            config,
            grid,
            flow,
            f0,
            ntilde,
            horizon,
            t_list,
            family,
            noise,
            rds_horizon,
            warnings,
        })
    }

    fn block_params(&self) -> BlockParams {
        let b = &self.config.block;
        BlockParams {
            epsilon: b.epsilon,
            alpha_scale: b.alpha_scale,
            horizon_cap: b.horizon_cap,
            invariance_horizon: b.invariance_horizon,
            samples: SAMPLES,
            ..BlockParams::default()
        }
    }

    /// Content hash of everything the block artifact depends on.
    fn block_key(&self) -> String {
        let c = &self.config;
        let v = json!({
            "version": env!("CARGO_PKG_VERSION"),
            "f0": c.field.f0,
            "grid": c.grid,
            "flow": c.flow,
            "block": c.block,
            "T": self.horizon,
        });
        sha256_hex(v.to_string().as_bytes())
    }

    pub fn config_hash(&self) -> String {
        sha256_hex(
            serde_json::to_string(&self.config)
                .expect("config serializes")
                .as_bytes(),
        )
    }
}

fn region(r: &Region, grid: &Arc<Grid>) -> Result<BoxSet, RunError> {
    match r {
        Region::Predicate(src) => {
            let p = parse_scalar(src, grid.dim()).map_err(|e| cfg_err("block.ntilde.predicate", e))?;
            let bad = std::cell::OnceCell::new();
            let set = BoxSet::from_centers(grid.clone(), |x| match p.eval(0.0, x) {
                Ok(v) => v <= 0.0,
                Err(e) => {
                    bad.get_or_init(|| e);
                    false
                }
            });
            match bad.into_inner() {
                Some(e) => Err(cfg_err("block.ntilde.predicate", e)),
                None => Ok(set),
            }
        }
        Region::Boxes(list) => {
            let mut set = BoxSet::empty(grid.clone());
            for idx in list {
                if idx.len() != grid.dim() || idx.iter().zip(grid.res()).any(|(i, r)| i >= r) {
                    return Err(cfg_err(
                        "block.ntilde.boxes",
                        format!("{idx:?} is not a box of the grid"),
                    ));
                }
                set.insert(grid.ravel(idx));
            }
            Ok(set)
        }
    }
}

/// Per-axis `[lo, hi]` of the union of member boxes.
fn extent(set: &BoxSet) -> Option<Vec<[f64; 2]>> {
    let grid = set.grid();
    let mut ext: Option<Vec<[f64; 2]>> = None;
    for b in set.iter() {
        let (lo, hi) = grid.bounds(b);
        let e = ext.get_or_insert_with(|| lo.iter().zip(&hi).map(|(a, c)| [*a, *c]).collect());
        for (k, slot) in e.iter_mut().enumerate() {
            slot[0] = slot[0].min(lo[k]);
            slot[1] = slot[1].max(hi[k]);
        }
    }
    ext
}

/// File-name fragment for a horizon: `1`, `0.5`, `2.25`.
fn time_tag(t: f64) -> String {
    format!("{t}")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct BlockArtifact {
    key: String,
    level: Option<f64>,
    delta: Option<f64>,
    delta_error: Option<String>,
    block: Vec<usize>,
    attractor: Vec<usize>,
    g_values: Vec<(usize, f64)>,
    attractor_in_interior: bool,
    forward_invariant: bool,
    touches_domain_edge: bool,
}

impl BlockArtifact {
    fn into_block(self, grid: &Arc<Grid>) -> (StableBlock, Option<f64>, Option<String>) {
        let b = StableBlock {
            block: BoxSet::from_indices(grid.clone(), self.block),
            level: self.level,
            g_values: self.g_values,
            attractor: BoxSet::from_indices(grid.clone(), self.attractor),
            validation: BlockValidation {
                attractor_in_interior: self.attractor_in_interior,
                forward_invariant: self.forward_invariant,
                touches_domain_edge: self.touches_domain_edge,
            },
        };
        (b, self.delta, self.delta_error)
    }
}

fn conley_err(stage: Stage, key: &str, e: ConleyError) -> RunError {
    RunError::validation(stage.name(), key, e)
}

fn write(out: &Path, name: &str, text: &str, stage: Stage) -> Result<(), RunError> {
    fs::write(out.join(name), text)
        .map_err(|e| RunError::validation(stage.name(), "output.directory", format!("{name}: {e}")))
}

/// One invocation: the prepared config, the output directory and the
/// report being assembled.
pub struct Runner {
    pub prepared: Prepared,
    pub out: PathBuf,
    pub opts: RunOptions,
    pub report: Report,
    block: Option<(StableBlock, Option<f64>, Option<String>)>,
}

impl Runner {
    pub fn new(prepared: Prepared, opts: RunOptions, fresh: bool) -> Result<Self, RunError> {
        let out = opts
            .out
            .clone()
            .unwrap_or_else(|| PathBuf::from(&prepared.config.output.directory));
        fs::create_dir_all(out.join("cache"))
            .map_err(|e| RunError::config("config", "output.directory", format!("{}: {e}", out.display())))?;
        let hash = prepared.config_hash();
        let echo = serde_json::to_value(&prepared.config).expect("config serializes");
        let mut report = match fresh {
            true => None,
            false => Report::load_matching(&out.join("report.json"), &hash),
        }
        .unwrap_or_else(|| Report::new(echo, hash));
        report.clear_stage("config");
        report.warnings.extend(prepared.warnings.iter().cloned());
        Ok(Runner {
            prepared,
            out,
            opts,
            report,
            block: None,
        })
    }

    pub fn run_stage(&mut self, stage: Stage, upstream_allowed: bool) -> Result<(), RunError> {
        let start = Instant::now();
        self.report.clear_stage(stage.name());
        let section = match stage {
            Stage::Gset => self.gset()?,
            Stage::Block => {
                self.ensure_block(true)?;
                self.block_section()
            }
            Stage::Verdict => self.verdict(upstream_allowed)?,
            Stage::Curve => self.curve(upstream_allowed)?,
            Stage::Rds => self.rds(upstream_allowed)?,
        };
        self.report.stages.insert(stage.name().into(), section);
        self.report
            .timing
            .insert(stage.name().into(), start.elapsed().as_secs_f64());
        Ok(())
    }

    pub fn write_report(&mut self) -> Result<PathBuf, RunError> {
        let path = self.out.join("report.json");
        let text = self.report.to_json();
        fs::write(&path, text).map_err(|e| RunError::validation("report", "output.directory", e))?;
        Ok(path)
    }

    fn warn(&mut self, stage: Stage, key: &str, message: impl Into<String>) {
        self.report.warnings.push(Warning {
            stage: stage.name().into(),
            key: key.into(),
            message: message.into(),
        });
    }

    fn gset(&mut self) -> Result<Value, RunError> {
        let p = &self.prepared;
        let dynamics = AutonomousFlow::new(&p.f0).map_err(|e| RunError::validation("gset", "field.f0", e))?;
        let mut sets = Vec::new();
        for &t in &p.t_list {
            let g = compute_gt(&p.ntilde, &dynamics, 0.0, t, &p.flow, SAMPLES)
                .map_err(|e| conley_err(Stage::Gset, "horizons.T_list", e))?;
            let gamma = compute_gamma_t(&p.ntilde, &dynamics, 0.0, t, &p.flow, SAMPLES)
                .map_err(|e| conley_err(Stage::Gset, "horizons.T_list", e))?;
            let csv = format!("gset_T{}.csv", time_tag(t));
            let gamma_csv = format!("gamma_T{}.csv", time_tag(t));
            write(&self.out, &csv, &g.to_csv(), Stage::Gset)?;
            write(&self.out, &gamma_csv, &gamma.to_csv(), Stage::Gset)?;
            sets.push(json!({
                "T": t,
                "boxes": g.len(),
                "extent": extent(&g),
                "gamma_boxes": gamma.len(),
                "gamma_empty": gamma.is_empty(),
                "csv": csv,
                "gamma_csv": gamma_csv,
            }));
        }
        Ok(json!({
            "ntilde_boxes": p.ntilde.len(),
            "sets": sets,
        }))
    }

    /// Load the block artifact, or compute it when `allowed`.
    fn ensure_block(&mut self, allowed: bool) -> Result<(), RunError> {
        if self.block.is_some() {
            return Ok(());
        }
        let p = &self.prepared;
        let key = p.block_key();
        let path = self.out.join("cache").join(format!("block-{key}.json"));
        if !self.opts.recompute {
            if let Some(a) = fs::read_to_string(&path)
                .ok()
                .and_then(|t| serde_json::from_str::<BlockArtifact>(&t).ok())
            {
                if a.key == key {
                    eprintln!("block: reusing cached artifact {} (hash match)", &key[..16]);
                    self.block = Some(a.into_block(&p.grid));
                    return Ok(());
                }
            }
        }
        if !allowed {
            return Err(RunError::validation(
                "block",
                "block",
                "missing upstream block artifact; run the `block` stage first or pass --recompute",
            ));
        }
        let params = p.block_params();
        let block = match p.config.block.mode {
            BlockMode::Construct => build_stable_block(&p.ntilde, &p.f0, &params, &p.flow),
            BlockMode::Explicit => StableBlock::from_explicit(p.ntilde.clone(), &p.f0, &params, &p.flow),
        }
        .map_err(|e| {
            let key = match e {
                ConleyError::EpsilonOutOfRange { .. } | ConleyError::EpsilonTooLarge { .. } => "block.epsilon",
                _ => "block.ntilde",
            };
            conley_err(Stage::Block, key, e)
        })?;
        let dynamics = AutonomousFlow::new(&p.f0).map_err(|e| RunError::validation("block", "field.f0", e))?;
        let (delta, delta_error) = match compute_delta(&block.block, &dynamics, p.horizon, &p.flow, SAMPLES) {
            Ok(d) => (Some(d), None),
            Err(e @ ConleyError::GridTooCoarse { .. }) => (None, Some(e.to_string())),
            Err(e) => return Err(conley_err(Stage::Block, "horizons.T", e)),
        };
        let artifact = BlockArtifact {
            key,
            level: block.level,
            delta,
            delta_error,
            block: block.block.indices(),
            attractor: block.attractor.indices(),
            g_values: block.g_values.clone(),
            attractor_in_interior: block.validation.attractor_in_interior,
            forward_invariant: block.validation.forward_invariant,
            touches_domain_edge: block.validation.touches_domain_edge,
        };
        let text = serde_json::to_string(&artifact).expect("artifact serializes");
        fs::write(&path, text).map_err(|e| RunError::validation("block", "output.directory", e))?;
        self.block = Some(artifact.into_block(&p.grid));
        Ok(())
    }

    fn block_section(&mut self) -> Value {
        let (b, delta, delta_error) = self.block.clone().expect("block loaded");
        if b.validation.touches_domain_edge {
            self.warn(Stage::Block, "grid", "the block touches the edge of the grid");
        }
        if let Some(e) = &delta_error {
            self.warn(Stage::Block, "horizons.T", e.clone());
        }
        let out = &self.out;
        let csv_ok = write(out, "block.csv", &b.block.to_csv(), Stage::Block)
            .and_then(|_| write(out, "attractor.csv", &b.attractor.to_csv(), Stage::Block));
        if let Err(e) = csv_ok {
            self.warn(Stage::Block, &e.key, e.message);
        }
        let p = &self.prepared;
        json!({
            "key": p.block_key(),
            "mode": p.config.block.mode,
            "epsilon": p.config.block.epsilon,
            "level": b.level,
            "T": p.horizon,
            "delta": delta,
            "delta_error": delta_error,
            "grid": *p.grid,
            "boxes": b.block.len(),
            "extent": extent(&b.block),
            "attractor_boxes": b.attractor.len(),
            "attractor_extent": extent(&b.attractor),
            "validation": b.validation,
            "csv": "block.csv",
            "attractor_csv": "attractor.csv",
        })
    }

    /// The block for a downstream stage; also records the block section.
    fn downstream_block(&mut self, allowed: bool) -> Result<(StableBlock, Option<f64>), RunError> {
        self.ensure_block(allowed || self.opts.recompute)?;
        if !self.report.stages.contains_key("block") {
            self.report.clear_stage("block");
            let s = self.block_section();
            self.report.stages.insert("block".into(), s);
        }
        let (b, d, _) = self.block.clone().expect("block loaded");
        Ok((b, d))
    }

    fn family(&self, stage: Stage) -> Result<&PerturbationFamily, RunError> {
        self.prepared
            .family
            .as_ref()
            .ok_or_else(|| RunError::config(stage.name(), "perturbation", "this stage needs a perturbation section"))
    }

    fn slice_options(&self) -> SliceOptions {
        let depth = self.prepared.config.perturbation.as_ref().map_or(20.0, |p| p.depth);
        SliceOptions {
            horizon: self.prepared.horizon,
            depth,
            tau: 1.0,
            samples: SAMPLES,
        }
    }

    fn verdict(&mut self, allowed: bool) -> Result<Value, RunError> {
        let (block, delta) = self.downstream_block(allowed)?;
        let delta = delta.ok_or_else(|| {
            RunError::validation("verdict", "horizons.T", "no δ for this horizon (see block.delta_error)")
        })?;
        let opts = VerdictOptions {
            samples: SAMPLES,
            slices: self.slice_options(),
            ..VerdictOptions::default()
        };
        let p = &self.prepared;
        let fam = self.family(Stage::Verdict)?;
        let pc = p.config.perturbation.as_ref().expect("family implies section");
        let admissible = admissible_eps(
            fam,
            &block,
            p.horizon,
            delta,
            pc.eps_max,
            &p.flow,
            &opts.deviation,
            BISECT_ITERS,
        )
        .map_err(|e| conley_err(Stage::Verdict, "perturbation.eps_max", e))?;
        let eps_list: Vec<f64> = match &pc.verdict_eps {
            Some(v) => v.clone(),
            None => pc.verdict_scales.iter().map(|s| s * admissible).collect(),
        };
        if eps_list.iter().any(|e| !(*e >= 0.0 && e.is_finite())) {
            return Err(RunError::config(
                "verdict",
                "perturbation.verdict_eps",
                "amplitudes must be finite and nonnegative",
            ));
        }
        let mut verdicts = Vec::new();
        let mut degenerate = Vec::new();
        for (i, &eps) in eps_list.iter().enumerate() {
            let check = check_with_delta(fam, eps, &block, p.horizon, delta, &p.flow, &opts)
                .map_err(|e| conley_err(Stage::Verdict, "perturbation", e))?;
            let csv = format!("slices_{i}.csv");
            write(&self.out, &csv, &check.slices.to_csv(), Stage::Verdict)?;
            if !check.slices.all_nonempty() {
                degenerate.push(eps);
            }
            let v = check.verdict;
            let mut entry = serde_json::to_value(v).expect("verdict serializes");
            entry["conclusion_holds"] = json!(v.conclusion_holds());
            entry["consistent"] = json!(v.consistent());
            entry["slice_times"] = json!(check.slices.times);
            entry["csv"] = json!(csv);
            verdicts.push(entry);
        }
        let all_consistent = verdicts.iter().all(|v| v["consistent"] == json!(true));
        let ssing = match pc.shifts.is_empty() {
            true => Value::Null,
            false => {
                let seed = p.config.rds.as_ref().map_or(0, |r| r.seed0);
                let eps = fam.eps_values()[0];
                let r = ssing_diagnostic(fam, eps, &block, &p.flow, &pc.shifts, pc.t_max, SSING_POINTS, seed)
                    .map_err(|e| conley_err(Stage::Verdict, "perturbation.shifts", e))?;
                serde_json::to_value(r).expect("report serializes")
            }
        };
        for eps in degenerate {
            self.warn(
                Stage::Verdict,
                "perturbation",
                format!("pullback slices degenerate at eps = {eps}"),
            );
        }
        Ok(json!({
            "T": self.prepared.horizon,
            "delta": delta,
            "admissible_eps": admissible,
            "depth": opts.slices.depth,
            "verdicts": verdicts,
            "all_consistent": all_consistent,
            "ssing": ssing,
        }))
    }

    fn curve(&mut self, allowed: bool) -> Result<Value, RunError> {
        let (block, _) = self.downstream_block(allowed)?;
        let opts = self.slice_options();
        let p = &self.prepared;
        let fam = self.family(Stage::Curve)?;
        let points = semicontinuity_curve(fam, &block, &p.flow, &opts)
            .map_err(|e| conley_err(Stage::Curve, "perturbation.eps_values", e))?;
        let mut csv = String::from("eps,semidist\n");
        for c in &points {
            csv.push_str(&format!(
                "{},{}\n",
                c.eps,
                c.semidist.map(|d| d.to_string()).unwrap_or_default()
            ));
        }
        write(&self.out, "curve.csv", &csv, Stage::Curve)?;
        let monotone = curve_monotone(&points, 0.0);
        let degenerate: Vec<f64> = points.iter().filter(|c| c.semidist.is_none()).map(|c| c.eps).collect();
        for eps in degenerate {
            self.warn(
                Stage::Curve,
                "perturbation.eps_values",
                format!("pullback slices degenerate at eps = {eps}"),
            );
        }
        Ok(json!({
            "T": self.prepared.horizon,
            "depth": opts.depth,
            "points": points,
            "monotone": monotone,
            "csv": "curve.csv",
        }))
    }

    fn rds(&mut self, allowed: bool) -> Result<Value, RunError> {
        let (block, delta) = self.downstream_block(allowed)?;
        let p = &self.prepared;
        let (Some(rc), Some(spec), Some(horizon)) = (&p.config.rds, &p.noise, p.rds_horizon) else {
            return Err(RunError::config("rds", "rds", "this stage needs an rds section"));
        };
        let seed0 = rc.seed0;
        let (spec, mode) = match rc.rho {
            RhoSetting::Value(_) => (spec.clone(), "fixed"),
            RhoSetting::Auto(_) => {
                let delta = delta.ok_or_else(|| {
                    RunError::validation("rds", "rds.rho", "automatic rho needs δ (see block.delta_error)")
                })?;
                let rho = admissible_rho(
                    spec,
                    &p.f0,
                    &block,
                    p.horizon,
                    delta,
                    rc.rho_max,
                    &p.flow,
                    rc.n_paths,
                    seed0,
                    BISECT_ITERS,
                )
                .map_err(|e| conley_err(Stage::Rds, "rds.rho_max", e))?;
                (
                    spec.with_rho(rho)
                        .map_err(|e| RunError::validation("rds", "rds.rho", e))?,
                    "auto",
                )
            }
        };
        let r = persistence_stats(
            &spec,
            &p.f0,
            &block,
            horizon,
            &p.flow,
            rc.n_paths,
            seed0,
            &RdsOptions::default(),
        )
        .map_err(|e| conley_err(Stage::Rds, "rds", e))?;
        write(&self.out, "rds_paths.csv", &r.to_csv(), Stage::Rds)?;
        if r.fraction_nonempty < 1.0 {
            self.warn(
                Stage::Rds,
                "rds.rho",
                format!("D is empty on {:.0}% of paths", 100.0 * (1.0 - r.fraction_nonempty)),
            );
        }
        Ok(json!({
            "rho": r.rho,
            "rho_mode": mode,
            "T": r.horizon,
            "mesh": spec.mesh,
            "kind": spec.kind,
            "n_paths": r.n_paths,
            "seed0": seed0,
            "fraction_nonempty": r.fraction_nonempty,
            "fraction_contained": r.fraction_contained,
            "max_semidist": r.max_semidist,
            "csv": "rds_paths.csv",
        }))
    }
}
