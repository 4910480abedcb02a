//! Pipeline stages. Each stage reads its inputs from the output directory and
//! writes its artifacts back there.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use prefinfer_core::agent::{rollout, train_dwmorl, AgentMeta, QAgent};
use prefinfer_core::datahub::{align, hourly_average, parse_csv, slice_days, slice_window, synthesize, DataWindow};
use prefinfer_core::dwpi::{build_dataset, infer, read_dataset, train_dwpi, weight_grid, write_dataset, DwpiModel};
use prefinfer_core::env::{PreferenceWeights, RewardVector, WindowStats};
use prefinfer_core::experiments::{
    run_comparison, run_validation, ComparisonReport, FullReport, Report, ReportFormat, ValidationReport,
    EVAL_DAYS, REPORT_SCHEMA_VERSION,
};
use prefinfer_core::scenarios::{demo_features, Schedule};

use crate::config::{DataSource, RunConfig};
use crate::error::CliError;

/// Prefix of the stderr line reporting weight-conditioned training time.
pub const TRAINED_IN: &str = "agent trained in ";

/// Artifact paths under the output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.json")
    }

    pub fn train_window(&self) -> PathBuf {
        self.root.join("data/train_window.json")
    }

    pub fn eval_window(&self) -> PathBuf {
        self.root.join("data/eval_window.json")
    }

    pub fn agent_model(&self) -> PathBuf {
        self.root.join("agent/dwmorl.model.json")
    }

    pub fn agent_meta(&self) -> PathBuf {
        self.root.join("agent/dwmorl.meta.json")
    }

    pub fn demos(&self) -> PathBuf {
        self.root.join("demos/demos.csv")
    }

    pub fn dwpi_model(&self) -> PathBuf {
        self.root.join("dwpi/dwpi.model.json")
    }

    pub fn dwpi_meta(&self) -> PathBuf {
        self.root.join("dwpi/dwpi.meta.json")
    }

    pub fn report(&self, name: &str, format: ReportFormat) -> PathBuf {
        self.root.join("reports").join(format!("{name}.{}", format.extension()))
    }
}

pub struct Pipeline {
    pub config: RunConfig,
    pub layout: Layout,
    pub force: bool,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::IoFailure {
        path: path.to_owned(),
        source,
    }
}

fn require(path: &Path, hint: &'static str) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::ArtifactMissing {
            path: path.to_owned(),
            hint,
        })
    }
}

fn log(msg: &str) {
    eprintln!("prefinfer: {msg}");
}

impl Pipeline {
    pub fn new(config: RunConfig, root: impl Into<PathBuf>, force: bool) -> Self {
        Self {
            config,
            layout: Layout::new(root),
            force,
        }
    }

    /// Checks every output of a stage before anything is written, then
    /// creates parent directories.
    fn claim(&self, outputs: &[PathBuf]) -> Result<(), CliError> {
        if !self.force {
            if let Some(p) = outputs.iter().find(|p| p.exists()) {
                return Err(CliError::ArtifactExists(p.clone()));
            }
        }
        for p in outputs {
            if let Some(dir) = p.parent() {
                fs::create_dir_all(dir).map_err(io_err(dir))?;
            }
        }
        Ok(())
    }

    fn write(&self, path: &Path, contents: &str) -> Result<(), CliError> {
        fs::write(path, contents).map_err(io_err(path))
    }

    pub fn config_init(&self, path: &Path) -> Result<(), CliError> {
        self.claim(&[path.to_owned()])?;
        self.write(path, &self.config.to_json())
    }

    pub fn data_prepare(&self) -> Result<(DataWindow, DataWindow), CliError> {
        let outputs = [self.layout.train_window(), self.layout.eval_window()];
        self.claim(&outputs)?;
        let (train, eval) = match &self.config.data {
            DataSource::Synthetic { train_seed, eval_seed } => {
                (synthesize(*train_seed, 1), synthesize(*eval_seed, EVAL_DAYS))
            }
            DataSource::Csv {
                price,
                renewable,
                background,
                columns,
                train_day,
                eval_start_day,
            } => {
                let load = |p: &Path| -> Result<_, CliError> {
                    let points = parse_csv(p, columns).map_err(|e| CliError::Runtime(format!("{}: {e}", p.display())))?;
                    hourly_average(&points).map_err(|e| CliError::Runtime(format!("{}: {e}", p.display())))
                };
                let full = align(&load(price)?, &load(renewable)?, &load(background)?).map_err(CliError::runtime)?;
                let train = slice_window(&full, *train_day).map_err(CliError::runtime)?;
                let eval = slice_days(&full, *eval_start_day, EVAL_DAYS).map_err(CliError::runtime)?;
                (train, eval)
            }
        };
        train.save(&outputs[0]).map_err(CliError::runtime)?;
        eval.save(&outputs[1]).map_err(CliError::runtime)?;
        log(&format!("wrote {} and {}", outputs[0].display(), outputs[1].display()));
        Ok((train, eval))
    }

    fn load_window(&self, path: PathBuf) -> Result<DataWindow, CliError> {
        require(&path, "run `prefinfer data prepare` first")?;
        DataWindow::load(&path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
    }

    fn load_agent(&self) -> Result<QAgent, CliError> {
        let (model, meta) = (self.layout.agent_model(), self.layout.agent_meta());
        require(&model, "run `prefinfer train-agent` first")?;
        require(&meta, "run `prefinfer train-agent` first")?;
        let (agent, _) = QAgent::load(&model, &meta).map_err(CliError::runtime)?;
        Ok(agent)
    }

    fn load_dwpi(&self) -> Result<DwpiModel, CliError> {
        let (model, meta) = (self.layout.dwpi_model(), self.layout.dwpi_meta());
        require(&model, "run `prefinfer train-dwpi` first")?;
        require(&meta, "run `prefinfer train-dwpi` first")?;
        let (m, _) = DwpiModel::load(&model, &meta).map_err(CliError::runtime)?;
        Ok(m)
    }

    pub fn train_agent(&self) -> Result<(), CliError> {
        let train = self.load_window(self.layout.train_window())?;
        let outputs = [self.layout.agent_model(), self.layout.agent_meta()];
        self.claim(&outputs)?;
        let hyper = &self.config.agent;
        log(&format!("training weight-conditioned agent ({} episodes)", hyper.episodes));
        let started = Instant::now();
        let agent = train_dwmorl(&train, &self.config.env, hyper, self.config.seed).map_err(CliError::runtime)?;
        log(&format!("{TRAINED_IN}{:.1}s", started.elapsed().as_secs_f64()));
        let meta = AgentMeta::new(hyper, self.config.seed, WindowStats::from_window(&train), None);
        agent.save(&outputs[0], &outputs[1], &meta).map_err(CliError::runtime)?;
        log(&format!("wrote {}", outputs[0].display()));
        Ok(())
    }

    pub fn gen_demos(&self) -> Result<usize, CliError> {
        let train = self.load_window(self.layout.train_window())?;
        let agent = self.load_agent()?;
        let out = self.layout.demos();
        self.claim(std::slice::from_ref(&out))?;
        let grid = weight_grid(self.config.grid_step).map_err(CliError::runtime)?;
        let records = build_dataset(&agent, &train, &self.config.env, &grid).map_err(CliError::runtime)?;
        write_dataset(&out, &records).map_err(CliError::runtime)?;
        log(&format!("wrote {} demonstrations to {}", records.len(), out.display()));
        Ok(records.len())
    }

    pub fn train_dwpi(&self) -> Result<f64, CliError> {
        let demos = self.layout.demos();
        require(&demos, "run `prefinfer train-agent` and `prefinfer gen-demos` first")?;
        let records = read_dataset(&demos).map_err(CliError::runtime)?;
        let outputs = [self.layout.dwpi_model(), self.layout.dwpi_meta()];
        self.claim(&outputs)?;
        let model = train_dwpi(&records, &self.config.dwpi, self.config.seed).map_err(CliError::runtime)?;
        model
            .save(&outputs[0], &outputs[1], &self.config.dwpi, self.config.seed)
            .map_err(CliError::runtime)?;
        log(&format!("inference model training mse {:.5}", model.training_mse));
        Ok(model.training_mse)
    }

    pub fn infer_schedule(&self, schedule: &Schedule) -> Result<(RewardVector, PreferenceWeights), CliError> {
        let model = self.load_dwpi()?;
        let train = self.load_window(self.layout.train_window())?;
        schedule.validate_for(&self.config.env).map_err(|e| CliError::Usage(e.to_string()))?;
        let features = demo_features(schedule, &train, &self.config.env).map_err(CliError::runtime)?;
        Ok((features, infer(&model, features).map_err(CliError::runtime)?))
    }

    /// Lets the trained agent demonstrate under `weights`, then infers them
    /// back from the demonstration.
    pub fn infer_round_trip(&self, weights: PreferenceWeights) -> Result<(RewardVector, PreferenceWeights), CliError> {
        let model = self.load_dwpi()?;
        let agent = self.load_agent()?;
        let train = self.load_window(self.layout.train_window())?;
        let features = rollout(&agent, weights, &train, &self.config.env, true, 0)
            .map_err(CliError::runtime)?
            .reward;
        Ok((features, infer(&model, features).map_err(CliError::runtime)?))
    }

    fn write_report<R: Report>(&self, name: &str, report: &R) -> Result<(), CliError> {
        let outputs = [
            self.layout.report(name, ReportFormat::Json),
            self.layout.report(name, ReportFormat::Markdown),
        ];
        self.claim(&outputs)?;
        for (path, fmt) in outputs.iter().zip([ReportFormat::Json, ReportFormat::Markdown]) {
            self.write(path, &report.render(fmt))?;
        }
        log(&format!("wrote {}", outputs[0].display()));
        Ok(())
    }

    pub fn validate(&self) -> Result<ValidationReport, CliError> {
        let model = self.load_dwpi()?;
        let train = self.load_window(self.layout.train_window())?;
        let report = run_validation(&model, &train, &self.config.env, &[]).map_err(CliError::runtime)?;
        self.write_report("validation", &report)?;
        Ok(report)
    }

    pub fn validation_from_disk(&self) -> Result<ValidationReport, CliError> {
        let path = self.layout.report("validation", ReportFormat::Json);
        require(&path, "run `prefinfer validate` first")?;
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        serde_json::from_str(&text).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
    }

    pub fn compare(&self) -> Result<ComparisonReport, CliError> {
        let validation = self.validation_from_disk()?;
        let inferred: Vec<(Schedule, PreferenceWeights)> = validation
            .rows
            .iter()
            .map(|r| (r.schedule.clone(), r.inferred))
            .collect();
        let report = self.comparison_for(&inferred)?;
        self.write_report("comparison", &report)?;
        Ok(report)
    }

    /// Comparison for arbitrary schedules; nothing is written.
    pub fn comparison_for(&self, inferred: &[(Schedule, PreferenceWeights)]) -> Result<ComparisonReport, CliError> {
        let train = self.load_window(self.layout.train_window())?;
        let eval = self.load_window(self.layout.eval_window())?;
        for (s, _) in inferred {
            s.validate_for(&self.config.env).map_err(|e| CliError::Usage(e.to_string()))?;
        }
        log(&format!("training {} fixed-weight agents", inferred.len()));
        run_comparison(
            inferred,
            &train,
            &eval,
            &self.config.env,
            &self.config.agent,
            self.config.seed,
        )
        .map_err(CliError::runtime)
    }

    pub fn comparison_from_disk(&self) -> Result<ComparisonReport, CliError> {
        let path = self.layout.report("comparison", ReportFormat::Json);
        require(&path, "run `prefinfer compare` first")?;
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        serde_json::from_str(&text).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
    }

    pub fn report(&self, format: ReportFormat) -> Result<(PathBuf, String), CliError> {
        let validation = self.validation_from_disk()?;
        let comparison = if self.layout.report("comparison", ReportFormat::Json).exists() {
            Some(self.comparison_from_disk()?)
        } else {
            None
        };
        let full = FullReport {
            schema_version: REPORT_SCHEMA_VERSION,
            seed: self.config.seed,
            validation,
            comparison,
        };
        let out = self.layout.report("report", format);
        self.claim(std::slice::from_ref(&out))?;
        let text = full.render(format);
        self.write(&out, &text)?;
        Ok((out, text))
    }

    pub fn run_all(&self, format: ReportFormat) -> Result<(PathBuf, String), CliError> {
        self.data_prepare()?;
        self.train_agent()?;
        self.gen_demos()?;
        self.train_dwpi()?;
        self.validate()?;
        self.compare()?;
        self.report(format)
    }
}
