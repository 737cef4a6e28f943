//! Single runs and grids of runs, with their on-disk artifacts.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::admm::{finalize, init_admm, run_admm_finetune, Aborted, FinetuneOutcome, RunSetup};
use crate::analytics::{decay_report, format_f64, Method, PresenceHistogram};
use crate::autodiff::{Adam, AdamConfig};
use crate::baselines::{asp_prune, run_dense_finetune, run_masked_finetune};
use crate::error::{Error, Result};
use crate::experiment::config::RunConfig;
use crate::model::{
    build_policy, evaluate, generate_task, load_checkpoint, pretrain_dense, save_checkpoint,
    LayerPolicy, Network,
};
use crate::nxm::{compress, SparsityPattern};

pub const CONFIG_FILE: &str = "config.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const RESIDUALS_FILE: &str = "residuals.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const DECAY_FILE: &str = "decay.json";
pub const FINAL_CHECKPOINT: &str = "final.nxmw";
pub const PRETRAINED_CHECKPOINT: &str = "pretrained.nxmw";
pub const COMPRESSED_DIR: &str = "compressed";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub method: Method,
    pub seed: u64,
    pub rho: Option<f64>,
    pub lr: f64,
    /// Lowest epoch-end validation loss.
    pub best_val_loss: Option<f64>,
    /// Validation loss of the model as saved, after finalization.
    pub final_val_loss: Option<f64>,
    pub mean_similarity: Option<f64>,
    /// Mean similarity without the first iteration.
    pub mean_similarity_after_first: Option<f64>,
    pub final_residual: Option<f64>,
    pub iterations: usize,
    pub steps: usize,
    pub epochs: usize,
    /// Every constrained layer satisfies the pattern.
    pub compliant: bool,
    pub error: Option<String>,
}

impl RunSummary {
    fn new(cfg: &RunConfig) -> Self {
        Self {
            method: cfg.method,
            seed: cfg.seed,
            rho: cfg.effective_rho(),
            lr: cfg.lr,
            best_val_loss: None,
            final_val_loss: None,
            mean_similarity: None,
            mean_similarity_after_first: None,
            final_residual: None,
            iterations: 0,
            steps: 0,
            epochs: 0,
            compliant: false,
            error: None,
        }
    }

    fn record(&mut self, out: &FinetuneOutcome) {
        let sims = out.log.similarities();
        let mean = |s: &[f64]| (!s.is_empty()).then(|| s.iter().sum::<f64>() / s.len() as f64);
        self.best_val_loss = out.log.best_val_loss();
        self.mean_similarity = mean(&sims);
        self.mean_similarity_after_first = sims.get(1..).and_then(mean);
        self.final_residual = out.residuals.last().map(|r| r.max_rel);
        self.iterations = out.residuals.len();
        self.steps = out.steps;
        self.epochs = out.epochs;
    }
}

/// Everything a run produces, also written below `output_dir`.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub summary: RunSummary,
    pub outcome: FinetuneOutcome,
    pub initial: Network,
    pub network: Network,
    pub policy: LayerPolicy,
    pub decay: Option<PresenceHistogram>,
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write(path, text)
}

/// Loads `cfg.checkpoint`, or pretrains and stores the result in the run
/// directory.
pub fn starting_point(cfg: &RunConfig) -> Result<Network> {
    match &cfg.checkpoint {
        Some(path) => Network::from_params(cfg.model.clone(), load_checkpoint(path)?),
        None => {
            let pre = pretrain_dense(&cfg.task, &cfg.model, &cfg.pretrain)?;
            fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::io(&cfg.output_dir, e))?;
            save_checkpoint(
                &cfg.output_dir.join(PRETRAINED_CHECKPOINT),
                pre.network.params(),
            )?;
            Ok(pre.network)
        }
    }
}

fn residual_csv(out: &FinetuneOutcome) -> String {
    let mut text = String::from("k,layer,abs,rel\n");
    for r in &out.residuals {
        for l in &r.layers {
            text.push_str(&format!(
                "{},{},{},{}\n",
                r.k,
                l.name,
                format_f64(l.abs),
                format_f64(l.rel)
            ));
        }
    }
    text
}

/// Packs every constrained layer of `net` that satisfies `pattern`.
/// Returns the names written.
pub fn export_compressed(
    net: &Network,
    policy: &LayerPolicy,
    pattern: SparsityPattern,
    dir: &Path,
) -> Result<Vec<String>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for name in policy.constrained() {
        let w = net
            .params()
            .get(name)
            .ok_or_else(|| Error::UnknownTensor(name.into()))?;
        let packed = compress(w, pattern)?;
        write(&dir.join(format!("{name}.nxmc")), packed.to_bytes())?;
        written.push(name.to_string());
    }
    Ok(written)
}

/// Runs one configuration end to end and writes its artifacts:
/// config echo, metric CSV, residuals (ADMM), final checkpoint, compressed
/// export (when compliant), decay report (ADMM) and summary.
///
/// On divergence the partial metrics and a summary carrying the error are
/// still written before the error is returned.
pub fn run_experiment(cfg: &RunConfig) -> Result<RunArtifacts> {
    cfg.validate()?;
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_json(&dir.join(CONFIG_FILE), cfg)?;

    let initial = starting_point(cfg)?;
    let data = generate_task(&cfg.task, &cfg.model)?;
    let policy = build_policy(&initial, &cfg.layers)?;
    let mut net = initial.clone();
    let mut adam = Adam::new(AdamConfig::with_lr(cfg.lr), net.params())?;
    let setup = RunSetup {
        method: cfg.method,
        seed: cfg.seed,
        batch_size: cfg.batch_size,
    };
    let schedule = cfg.schedule();
    let mut summary = RunSummary::new(cfg);

    let mut decay = None;
    let result = match cfg.method {
        Method::AdmmNxm | Method::AdmmUnstructured => {
            let projection = cfg.projection().expect("ADMM methods project");
            let rho = cfg.effective_rho().expect("ADMM methods carry rho");
            let mut state = init_admm(&net, &policy, projection, rho)?;
            run_admm_finetune(&mut net, &mut state, &schedule, &data, &mut adam, setup).and_then(
                |out| {
                    let report = finalize(&mut net, &state, cfg.finalize_adopt_z).and_then(|_| {
                        decay_report(
                            initial.params(),
                            net.params(),
                            &state.layer_names(),
                            &out.mask_history,
                        )
                    });
                    match report {
                        Ok(h) => {
                            decay = Some(h);
                            Ok(out)
                        }
                        Err(error) => Err(Box::new(Aborted {
                            error,
                            partial: out,
                        })),
                    }
                },
            )
        }
        Method::Asp => {
            let mask = asp_prune(&mut net, &policy, cfg.pattern)?;
            run_masked_finetune(&mut net, &mask, &schedule, &data, &mut adam, setup)
        }
        Method::Dense => run_dense_finetune(&mut net, &schedule, &data, &mut adam, setup),
    };

    let outcome = match result {
        Ok(out) => out,
        Err(aborted) => {
            let Aborted { error, partial } = *aborted;
            summary.record(&partial);
            summary.error = Some(error.to_string());
            write(&dir.join(METRICS_FILE), partial.log.to_csv())?;
            write_json(&dir.join(SUMMARY_FILE), &summary)?;
            return Err(error);
        }
    };
    summary.record(&outcome);
    let final_val = evaluate(&net, &data.validation)?;
    summary.final_val_loss = Some(final_val);

    write(&dir.join(METRICS_FILE), outcome.log.to_csv())?;
    if cfg.method.is_admm() {
        write(&dir.join(RESIDUALS_FILE), residual_csv(&outcome))?;
    }
    if let Some(h) = &decay {
        write_json(&dir.join(DECAY_FILE), h)?;
    }
    save_checkpoint(&dir.join(FINAL_CHECKPOINT), net.params())?;

    let projection = cfg.projection();
    summary.compliant = match projection {
        Some(p) => policy
            .constrained()
            .iter()
            .map(|n| p.is_compliant(net.params().get(n).expect("policy names exist")))
            .collect::<Result<Vec<bool>, _>>()?
            .into_iter()
            .all(|c| c),
        None => false,
    };
    if summary.compliant && matches!(cfg.method, Method::AdmmNxm | Method::Asp) {
        export_compressed(&net, &policy, cfg.pattern, &dir.join(COMPRESSED_DIR))?;
    }
    write_json(&dir.join(SUMMARY_FILE), &summary)?;

    Ok(RunArtifacts {
        summary,
        outcome,
        initial,
        network: net,
        policy,
        decay,
    })
}

/// A grid over ρ, learning rate and seed around a base configuration.
/// Empty axes take the base value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    pub base: RunConfig,
    pub rho: Vec<f64>,
    pub lr: Vec<f64>,
    pub seed: Vec<u64>,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            base: RunConfig::default(),
            rho: Vec::new(),
            lr: Vec::new(),
            seed: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub name: String,
    pub output_dir: PathBuf,
    pub rho: Option<f64>,
    pub lr: f64,
    pub seed: u64,
    pub summary: Option<RunSummary>,
    pub error: Option<String>,
}

impl SweepCell {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }
}

impl SweepSpec {
    /// One configuration per grid cell, each with its own output directory.
    pub fn cells(&self) -> Result<Vec<(String, RunConfig)>> {
        if !self.rho.is_empty() && !self.base.method.is_admm() {
            return Err(Error::Config("a rho axis needs an ADMM method".into()));
        }
        let rhos: Vec<Option<f64>> = if self.rho.is_empty() {
            vec![self.base.rho]
        } else {
            self.rho.iter().copied().map(Some).collect()
        };
        let lrs = if self.lr.is_empty() {
            vec![self.base.lr]
        } else {
            self.lr.clone()
        };
        let seeds = if self.seed.is_empty() {
            vec![self.base.seed]
        } else {
            self.seed.clone()
        };
        let mut cells = Vec::new();
        for &rho in &rhos {
            for &lr in &lrs {
                for &seed in &seeds {
                    let name = match rho {
                        Some(r) => format!("rho={r:e}_lr={lr:e}_seed={seed}"),
                        None => format!("lr={lr:e}_seed={seed}"),
                    };
                    let mut cfg = self.base.clone();
                    cfg.rho = rho;
                    cfg.lr = lr;
                    cfg.seed = seed;
                    cfg.task.seed = seed;
                    cfg.output_dir = self.base.output_dir.join(&name);
                    cells.push((name, cfg));
                }
            }
        }
        Ok(cells)
    }
}

pub const SWEEP_SUMMARY_CSV: &str = "sweep.csv";
pub const SWEEP_SUMMARY_JSON: &str = "sweep.json";

/// Runs every cell, isolating failures. Pretraining happens once and the
/// checkpoint is shared across cells unless the base names one. The report
/// is sorted by best validation loss with failed cells last.
pub fn sweep(spec: &SweepSpec) -> Result<Vec<SweepCell>> {
    let cells = spec.cells()?;
    if cells.is_empty() {
        return Err(Error::Config("empty sweep grid".into()));
    }
    let root = &spec.base.output_dir;
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let checkpoint = match &spec.base.checkpoint {
        Some(p) => p.clone(),
        None => {
            let pre = pretrain_dense(&spec.base.task, &spec.base.model, &spec.base.pretrain)?;
            let path = root.join(PRETRAINED_CHECKPOINT);
            save_checkpoint(&path, pre.network.params())?;
            path
        }
    };
    let mut report = Vec::new();
    for (name, mut cfg) in cells {
        cfg.checkpoint = Some(checkpoint.clone());
        let mut cell = SweepCell {
            name,
            output_dir: cfg.output_dir.clone(),
            rho: cfg.effective_rho(),
            lr: cfg.lr,
            seed: cfg.seed,
            summary: None,
            error: None,
        };
        match run_experiment(&cfg) {
            Ok(a) => cell.summary = Some(a.summary),
            Err(e) => cell.error = Some(e.to_string()),
        }
        report.push(cell);
    }
    let key = |c: &SweepCell| {
        c.summary
            .as_ref()
            .and_then(|s| s.best_val_loss)
            .unwrap_or(f64::INFINITY)
    };
    report.sort_by(|a, b| key(a).total_cmp(&key(b)).then_with(|| a.name.cmp(&b.name)));
    write(&root.join(SWEEP_SUMMARY_CSV), sweep_csv(&report))?;
    write_json(&root.join(SWEEP_SUMMARY_JSON), &report)?;
    Ok(report)
}

pub fn sweep_csv(report: &[SweepCell]) -> String {
    let opt = |v: Option<f64>| v.map(format_f64).unwrap_or_default();
    let mut text = String::from(
        "cell,rho,lr,seed,status,best_val_loss,final_val_loss,mean_similarity,mean_similarity_after_first,final_residual\n",
    );
    for c in report {
        let s = c.summary.as_ref();
        text.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            c.name,
            opt(c.rho),
            format_f64(c.lr),
            c.seed,
            if c.failed() { "failed" } else { "ok" },
            opt(s.and_then(|s| s.best_val_loss)),
            opt(s.and_then(|s| s.final_val_loss)),
            opt(s.and_then(|s| s.mean_similarity)),
            opt(s.and_then(|s| s.mean_similarity_after_first)),
            opt(s.and_then(|s| s.final_residual)),
        ));
    }
    text
}
