//! Command implementations behind the `weakhoi` binary.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use weakhoi::data::{generate, rare_split, Dataset, GenSpec};
use weakhoi::encoder::ToyTextEncoder;
use weakhoi::eval::{evaluate, Protocol};
use weakhoi::learning::{train, write_metrics, Checkpoint, GradcheckSuite, TrainConfig};
use weakhoi::model::{detect, init_params, write_detections, DetectionRecord, InferenceMode, Network};
use weakhoi::nn::ParamId;
use weakhoi::{Error, ModelConfig, Vocabulary};

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self { code: EXIT_USAGE, message: message.into() }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        Self { code: EXIT_RUNTIME, message: message.into() }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Diverged { .. } | Error::Image(_) => CliError::runtime(e.to_string()),
            _ => CliError::usage(e.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Everything a command may need, read from one JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub vocab: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    /// Training set used for the rare/non-rare split during evaluation.
    pub train_dataset: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub detections: Option<PathBuf>,
    /// Per-class precision/recall points written by `eval`.
    pub pr_csv: Option<PathBuf>,
    pub generate: GenSpec,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub protocol: Protocol,
    pub mode: InferenceMode,
    pub gradcheck: GradcheckSuite,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            vocab: None,
            dataset: None,
            train_dataset: None,
            checkpoint: None,
            detections: None,
            pr_csv: None,
            generate: GenSpec::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            protocol: Protocol::Correct,
            mode: InferenceMode::Full,
            gradcheck: GradcheckSuite::default(),
        }
    }
}

impl RunConfig {
    /// Reads a config; relative paths inside it are taken relative to its directory.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut cfg.vocab,
            &mut cfg.dataset,
            &mut cfg.train_dataset,
            &mut cfg.checkpoint,
            &mut cfg.detections,
            &mut cfg.pr_csv,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub protocol: Option<Protocol>,
    pub mode: Option<InferenceMode>,
}

fn required<'a>(value: &'a Option<PathBuf>, what: &str) -> CliResult<&'a Path> {
    value
        .as_deref()
        .ok_or_else(|| CliError::usage(format!("config does not name a {what} file")))
}

fn out_path(ov: &Overrides) -> CliResult<&Path> {
    ov.out.as_deref().ok_or_else(|| CliError::usage("--out is required"))
}

fn existing_dir(path: &Path) -> CliResult<()> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(CliError::usage(format!("output directory {} does not exist", path.display())))
    }
}

fn parent_exists(path: &Path) -> CliResult<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => existing_dir(p),
        _ => Ok(()),
    }
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    parent_exists(path)?;
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let mut f = create(path)?;
    f.write_all(bytes)
        .and_then(|_| f.flush())
        .map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))
}

fn io_runtime(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::runtime(format!("{}: {e}", path.display()))
}

/// Writes `dataset.jsonl`, `vocab.json` and `manifest.json` into the output directory.
pub fn cmd_gen_data(cfg: &RunConfig, ov: &Overrides) -> CliResult<String> {
    let out = out_path(ov)?;
    existing_dir(out)?;
    let mut spec = cfg.generate.clone();
    if let Some(seed) = ov.seed {
        spec.seed = seed;
    }
    let (vocab, data) = generate(&spec)?;
    let mut buf = Vec::new();
    data.write_jsonl(&mut buf)?;
    write_file(&out.join("dataset.jsonl"), &buf)?;
    write_file(&out.join("vocab.json"), vocab.to_json().as_bytes())?;
    let instances: usize = data.scenes.iter().map(|s| s.gt_instances.len()).sum();
    let manifest = serde_json::json!({
        "spec": spec,
        "images": data.len(),
        "gt_instances": instances,
        "files": ["dataset.jsonl", "vocab.json"],
    });
    write_file(&out.join("manifest.json"), serde_json::to_string_pretty(&manifest).unwrap_or_default().as_bytes())?;
    Ok(format!("wrote {} scenes ({instances} interactions) to {}", data.len(), out.display()))
}

fn load_vocab_and_data(cfg: &RunConfig) -> CliResult<(Vocabulary, Dataset)> {
    let vocab = Vocabulary::load(required(&cfg.vocab, "vocab")?)?;
    let data = Dataset::load(required(&cfg.dataset, "dataset")?)?;
    data.validate(&vocab)?;
    Ok((vocab, data))
}

/// Trains from a fresh initialization; writes `checkpoint.json` and `metrics.csv`.
pub fn cmd_train(cfg: &RunConfig, ov: &Overrides) -> CliResult<String> {
    let out = out_path(ov)?;
    existing_dir(out)?;
    let (vocab, data) = load_vocab_and_data(cfg)?;
    let mut tc = cfg.train.clone();
    if let Some(seed) = ov.seed {
        tc.seed = seed;
    }
    tc.validate()?;
    let params = init_params(&cfg.model, &vocab, &ToyTextEncoder::new(cfg.model.dim), tc.seed)?;
    let result = train(&cfg.model, &tc, &vocab, &data, params)?;
    let ckpt = Checkpoint::new(&cfg.model, &tc, tc.iterations, &vocab, &result.params);
    write_file(&out.join("checkpoint.json"), ckpt.to_json()?.as_bytes())?;
    let metrics = out.join("metrics.csv");
    let mut f = create(&metrics)?;
    write_metrics(&result.metrics, &mut f)
        .and_then(|_| f.flush())
        .map_err(io_runtime(&metrics))?;
    let last = result.metrics.last().map_or(f64::NAN, |m| m.loss.total);
    Ok(format!("trained {} iterations, final loss {last:.4}; wrote {}", tc.iterations, out.display()))
}

fn load_checkpoint(cfg: &RunConfig, vocab: &Vocabulary) -> CliResult<(Checkpoint, weakhoi::nn::ParameterStore)> {
    let ckpt = Checkpoint::load(required(&cfg.checkpoint, "checkpoint")?)?;
    let params = ckpt.params(vocab)?;
    Ok((ckpt, params))
}

/// Writes detections for every scene, in dataset order, each scene sorted by score.
pub fn cmd_infer(cfg: &RunConfig, ov: &Overrides) -> CliResult<String> {
    let out = out_path(ov)?;
    let (vocab, data) = load_vocab_and_data(cfg)?;
    let (ckpt, params) = load_checkpoint(cfg, &vocab)?;
    let mode = ov.mode.unwrap_or(cfg.mode);
    let net = Network::new(&params, &ckpt.model);
    let mut f = create(out)?;
    let mut count = 0;
    for scene in &data.scenes {
        let dets = detect(&net, &vocab, scene, mode)?;
        count += dets.len();
        write_detections(&dets, &mut f)?;
    }
    f.flush().map_err(io_runtime(out))?;
    Ok(format!("wrote {count} detections for {} scenes to {}", data.len(), out.display()))
}

pub fn read_detections(path: &Path) -> CliResult<Vec<DetectionRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| CliError::usage(format!("{}: line {}: {e}", path.display(), i + 1)))
        })
        .collect()
}

/// Prints the AP table; writes the JSON report to `--out` when given.
pub fn cmd_eval(cfg: &RunConfig, ov: &Overrides) -> CliResult<String> {
    let (vocab, data) = load_vocab_and_data(cfg)?;
    let dets = read_detections(required(&cfg.detections, "detections")?)?;
    let train_set = match &cfg.train_dataset {
        Some(p) => Dataset::load(p)?,
        None => data.clone(),
    };
    let split = rare_split(&train_set, &vocab)?;
    let protocol = ov.protocol.unwrap_or(cfg.protocol);
    let result = evaluate(&dets, &data, &vocab, &split, protocol)?;
    if let Some(out) = &ov.out {
        let json = serde_json::to_string_pretty(&result).map_err(|e| CliError::runtime(e.to_string()))?;
        write_file(out, json.as_bytes())?;
    }
    if let Some(path) = &cfg.pr_csv {
        let mut f = create(path)?;
        result.write_pr_csv(&mut f).and_then(|_| f.flush()).map_err(io_runtime(path))?;
    }
    Ok(result.table(&vocab))
}

/// Runs the finite-difference sweep; fails with the runtime code when any scene
/// exceeds the tolerance.
pub fn cmd_gradcheck(cfg: &RunConfig, ov: &Overrides) -> CliResult<String> {
    let mut suite = cfg.gradcheck.clone();
    if let Some(seed) = ov.seed {
        suite.seed = seed;
    }
    let reports = suite.run()?;
    let mut text = String::new();
    let mut passed = true;
    for (i, r) in reports.iter().enumerate() {
        passed &= r.passed;
        text.push_str(&format!(
            "scene {i}: {} max rel error {:.3e} at {}\n",
            if r.passed { "pass" } else { "FAIL" },
            r.max_rel_error,
            r.worst
        ));
    }
    let worst = reports
        .iter()
        .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
        .expect("at least one scene");
    text.push_str(&format!(
        "worst parameter: {} ({:.3e}, tolerance {:.0e})",
        worst.worst, worst.max_rel_error, worst.tolerance
    ));
    if let Some(out) = &ov.out {
        let json = serde_json::to_string_pretty(&reports).map_err(|e| CliError::runtime(e.to_string()))?;
        write_file(out, json.as_bytes())?;
    }
    if passed {
        Ok(text)
    } else {
        Err(CliError::runtime(text))
    }
}

/// CSV of every pair's transferred feature followed by every bank row.
pub fn cmd_export_embeddings(cfg: &RunConfig, ov: &Overrides) -> CliResult<String> {
    let out = out_path(ov)?;
    let (vocab, data) = load_vocab_and_data(cfg)?;
    let (ckpt, params) = load_checkpoint(cfg, &vocab)?;
    let net = Network::new(&params, &ckpt.model);
    let d = ckpt.model.dim;
    let mut f = create(out)?;
    let row = |f: &mut BufWriter<File>, label: &str, v: &[f64]| -> std::io::Result<()> {
        write!(f, "{label}")?;
        for x in v {
            write!(f, ",{x}")?;
        }
        writeln!(f)
    };
    let header: Vec<String> = (0..d).map(|i| format!("d{i}")).collect();
    writeln!(f, "label,{}", header.join(",")).map_err(io_runtime(out))?;
    let mut pairs = 0;
    for scene in &data.scenes {
        let fwd = net.forward(&scene.image()?, &scene.proposals, None)?;
        for (m, p) in fwd.pairs.iter().enumerate() {
            row(&mut f, &format!("pair:{}:{m}", scene.image_id), &p.v_hat).map_err(io_runtime(out))?;
            pairs += 1;
        }
    }
    let bank = params.get(ParamId::Bank);
    for hoi in 0..vocab.num_combos() {
        row(&mut f, &format!("bank:{hoi}"), &bank[hoi * d..(hoi + 1) * d]).map_err(io_runtime(out))?;
    }
    f.flush().map_err(io_runtime(out))?;
    Ok(format!("wrote {pairs} pair rows and {} bank rows to {}", vocab.num_combos(), out.display()))
}
