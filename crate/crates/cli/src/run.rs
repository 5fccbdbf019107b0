//! Subcommand implementations. Each returns the process exit code; hard
//! failures propagate as errors and map to exit 1 in `main`.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use gi_helmholtz::greens::build_kernel;
use gi_helmholtz::grid::{background_on_grid, ComplexField, Medium, SourceSpec};
use gi_helmholtz::io::{read_field, write_field, FieldFile};
use gi_helmholtz::iterative::{
    born_iterate_with_rho, estimate_sigma_max, landweber_iterate, solve_direct, IterationStatus, IterationTrace,
    TraceRecord,
};
use gi_helmholtz::operator::LinearSystemView;
use gi_helmholtz::training::{train, training_pool, TrainSetup};
use gi_helmholtz::Error;

use crate::config::{ReferenceConfig, RunConfig, SolverMethod};
use crate::manifest::{index_outputs, input_hash, unix_now, RunManifest};
use crate::render::{render, Part};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_DIVERGED: i32 = 2;
pub const EXIT_NON_FINITE: i32 = 3;

pub const SOLUTION_FILE: &str = "solution.gihf";
pub const TRACE_FILE: &str = "trace.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.ginn";
pub const DIAGNOSTIC_FILE: &str = "diagnostic.ginn";
pub const LOSS_FILE: &str = "loss.csv";
pub const NMSE_FILE: &str = "nmse.csv";
pub const PREDICTION_FILE: &str = "prediction.gihf";
pub const KERNEL_FILE: &str = "kernel.gihf";
pub const POOL_FILE: &str = "pool.csv";
pub const CONFIG_FILE: &str = "config.json";

/// State shared by the config-driven commands.
pub struct Run {
    command: &'static str,
    config: RunConfig,
    snapshot: serde_json::Value,
    out_dir: PathBuf,
    started: f64,
    outputs: Vec<String>,
}

impl Run {
    pub fn new(
        command: &'static str,
        config_path: &Path,
        out_dir: &Path,
        seed: Option<u64>,
        epochs: Option<usize>,
    ) -> anyhow::Result<Self> {
        let mut config = RunConfig::load(config_path)?;
        config.apply_overrides(seed, epochs);
        let snapshot = serde_json::to_value(&config)?;
        std::fs::create_dir_all(out_dir).with_context(|| format!("cannot create {}", out_dir.display()))?;
        let mut run = Self {
            command,
            config,
            snapshot,
            out_dir: out_dir.to_path_buf(),
            started: unix_now(),
            outputs: Vec::new(),
        };
        let text = serde_json::to_string_pretty(&run.snapshot)? + "\n";
        run.write_bytes(CONFIG_FILE, text.as_bytes())?;
        Ok(run)
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> anyhow::Result<()> {
        let p = self.path(name);
        std::fs::write(&p, bytes).with_context(|| format!("cannot write {}", p.display()))?;
        self.outputs.push(name.to_string());
        Ok(())
    }

    fn write_field(&mut self, name: &str, field: &ComplexField) -> anyhow::Result<()> {
        write_field(&self.path(name), field)?;
        self.outputs.push(name.to_string());
        Ok(())
    }

    fn finish(self, status: &str, exit_code: i32) -> anyhow::Result<i32> {
        let manifest = RunManifest {
            tool: "gihelm".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: self.command.into(),
            seed: self.config.train.as_ref().map(|t| t.seed),
            input_sha256: input_hash(&self.snapshot, &self.config.input_files())?,
            config: self.snapshot,
            started_unix: self.started,
            finished_unix: unix_now(),
            status: status.into(),
            exit_code,
            outputs: index_outputs(&self.out_dir, &self.outputs)?,
        };
        manifest.write(&self.out_dir)?;
        Ok(exit_code)
    }

    fn problem(&self) -> anyhow::Result<(Medium, SourceSpec)> {
        let medium = self.config.build_medium()?;
        let source = self.config.build_source(medium.grid())?;
        Ok((medium, source))
    }
}

pub fn solve(mut run: Run) -> anyhow::Result<i32> {
    let solver = run.config.solver()?;
    let (medium, source) = run.problem()?;
    let mode = run.config.self_term;
    let kernel = build_kernel(medium.grid(), medium.k0(), mode)?;
    let u0 = background_on_grid(&medium, &source, mode)?;
    let view = LinearSystemView::new(&kernel, &medium, &u0)?;
    let (us, trace) = match solver.method {
        SolverMethod::Direct => {
            let t = std::time::Instant::now();
            let us = solve_direct(&view, solver.dense_cap)?;
            let r = view.residual_values(&us);
            let trace = IterationTrace {
                records: vec![TraceRecord {
                    step: 0,
                    residual_norm: r.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt(),
                    elapsed_ms: t.elapsed().as_secs_f64() * 1e3,
                }],
                status: IterationStatus::Converged,
                rho_estimate: None,
            };
            (us, trace)
        }
        SolverMethod::Born => born_iterate_with_rho(&view, solver.max_iters, solver.tol, solver.power_iters)?,
        SolverMethod::Landweber => {
            let eta = match solver.eta {
                Some(e) => e,
                None => {
                    let s = estimate_sigma_max(&view, solver.power_iters)?;
                    if s == 0.0 {
                        bail!("system operator is zero; Landweber step undefined");
                    }
                    1.0 / (s * s)
                }
            };
            landweber_iterate(&view, eta, solver.max_iters, solver.tol)?
        }
    };
    let field = ComplexField::new(*medium.grid(), us).map_err(|e| {
        anyhow::anyhow!(
            "solver produced an invalid field ({e}); status {}",
            trace.status.as_str()
        )
    })?;
    run.write_field(SOLUTION_FILE, &field)?;
    let mut csv = Vec::new();
    trace.write_csv(&mut csv)?;
    run.write_bytes(TRACE_FILE, &csv)?;
    let code = match trace.status {
        IterationStatus::Diverged => EXIT_DIVERGED,
        IterationStatus::Converged | IterationStatus::MaxIters => EXIT_OK,
    };
    eprintln!(
        "{}: {} after {} steps, final residual {:e}",
        run.command,
        trace.status.as_str(),
        trace.iterations(),
        trace.final_residual()
    );
    run.finish(trace.status.as_str(), code)
}

pub fn train_cmd(mut run: Run) -> anyhow::Result<i32> {
    let cfg = run.config.train()?;
    let (medium, source) = run.problem()?;
    let mode = run.config.self_term;
    let kernel = build_kernel(medium.grid(), medium.k0(), mode)?;
    let u0 = background_on_grid(&medium, &source, mode)?;
    let reference = match &run.config.reference {
        None => None,
        Some(ReferenceConfig::Direct { dense_cap }) => {
            let view = LinearSystemView::new(&kernel, &medium, &u0)?;
            Some(ComplexField::new(*medium.grid(), solve_direct(&view, *dense_cap)?)?)
        }
        Some(ReferenceConfig::File { path }) => {
            Some(read_field(path).with_context(|| format!("cannot load reference {}", path.display()))?)
        }
    };
    let setup = TrainSetup {
        medium: &medium,
        kernel: &kernel,
        source: &source,
        u0: &u0,
        reference: reference.as_ref(),
    };
    let outcome = match train(&cfg, &setup) {
        Ok(o) => o,
        Err(Error::NonFiniteLoss { epoch, field }) => {
            let p = run.path(DIAGNOSTIC_FILE);
            field.save(&p)?;
            run.outputs.push(DIAGNOSTIC_FILE.into());
            eprintln!(
                "train: non-finite loss at epoch {epoch}; parameters saved to {}",
                p.display()
            );
            return run.finish("non_finite", EXIT_NON_FINITE);
        }
        Err(e) => return Err(e.into()),
    };
    outcome.field.save(&run.path(CHECKPOINT_FILE))?;
    run.outputs.push(CHECKPOINT_FILE.into());
    let mut csv = Vec::new();
    outcome.report.write_loss_csv(&mut csv)?;
    run.write_bytes(LOSS_FILE, &csv)?;
    let mut csv = Vec::new();
    outcome.report.write_eval_csv(&mut csv)?;
    run.write_bytes(NMSE_FILE, &csv)?;
    run.write_field(PREDICTION_FILE, &outcome.prediction)?;
    match outcome.report.nmse {
        Some(n) => eprintln!("train: {} epochs, final NMSE {n:e}", cfg.epochs),
        None => eprintln!("train: {} epochs (no reference)", cfg.epochs),
    }
    run.finish("complete", EXIT_OK)
}

pub fn kernel_dump(mut run: Run) -> anyhow::Result<i32> {
    let (medium, _) = run.problem()?;
    let kernel = build_kernel(medium.grid(), medium.k0(), run.config.self_term)?;
    run.write_field(KERNEL_FILE, kernel.samples())?;
    run.finish("complete", EXIT_OK)
}

pub fn pool_dump(mut run: Run) -> anyhow::Result<i32> {
    let cfg = run.config.train()?;
    let (medium, source) = run.problem()?;
    let pool = training_pool(&cfg, &medium, &source)?;
    let mut csv = Vec::new();
    pool.write_csv(&mut csv)?;
    run.write_bytes(POOL_FILE, &csv)?;
    run.finish("complete", EXIT_OK)
}

pub fn render_cmd(field: &Path, out: &Path, part: Part) -> anyhow::Result<i32> {
    let bytes = std::fs::read(field).with_context(|| format!("cannot read {}", field.display()))?;
    let f = FieldFile::from_bytes(&bytes)
        .and_then(|f| f.to_field())
        .with_context(|| format!("cannot decode {}", field.display()))?;
    let png = out.extension().is_some_and(|e| e.eq_ignore_ascii_case("png"));
    let img = render(&f, part, png)?;
    std::fs::write(out, img).with_context(|| format!("cannot write {}", out.display()))?;
    Ok(EXIT_OK)
}
