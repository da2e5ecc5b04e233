//! The `smish` subcommands.

use std::ffi::OsString;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use super::*;
use crate::baselines::{evaluate_baseline, train_logreg, train_naive_bayes};
use crate::text::Preprocessor;
use crate::training::{
    cross_validate, evaluate, stratified_split, train_with_validation, EpochTrace, EvalReport, Fold,
};

#[derive(Debug, Parser)]
#[command(name = "smish", version, about = "Hybrid transformer + char-CNN SMS classifier")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every subcommand. They override the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub lr: Option<f64>,
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BaselineKind {
    Nb,
    Logreg,
    All,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the hybrid model on a stratified holdout split.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        /// Labelled CSV with `label` and `text` columns.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Score a checkpoint of any model kind on a labelled file.
    Evaluate {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Stratified k-fold cross-validation of the hybrid model.
    Crossval {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        folds: Option<usize>,
    },
    /// Classify messages, one per line, from a file or stdin.
    Predict {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Train and score the bag-of-words baselines on the holdout split.
    Baseline {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "all")]
        kind: BaselineKind,
    },
    /// Write one encoder attention map as a token-labelled CSV matrix.
    ExportAttention {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        text: String,
        #[arg(long, default_value_t = 0)]
        layer: usize,
        #[arg(long, default_value_t = 0)]
        head: usize,
    },
    /// Write the seeded synthetic corpus.
    GenSynthetic {
        #[command(flatten)]
        common: CommonArgs,
        /// Normal, Promo and Smish counts.
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_COUNTS)]
        counts: Vec<usize>,
        #[arg(long, default_value_t = DEFAULT_HARD_FRACTION)]
        hard_fraction: f64,
    },
}

impl Command {
    fn common(&self) -> &CommonArgs {
        match self {
            Command::Train { common, .. }
            | Command::Evaluate { common, .. }
            | Command::Crossval { common, .. }
            | Command::Predict { common, .. }
            | Command::Baseline { common, .. }
            | Command::ExportAttention { common, .. }
            | Command::GenSynthetic { common, .. } => common,
        }
    }

    fn data(&self) -> Option<PathBuf> {
        match self {
            Command::Train { data, .. }
            | Command::Evaluate { data, .. }
            | Command::Crossval { data, .. }
            | Command::Baseline { data, .. } => data.clone(),
            _ => None,
        }
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Errors go to `stderr`.
pub fn run<I, T>(args: I, stdin: &mut dyn Read, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let target: &mut dyn Write = if e.use_stderr() { stderr } else { stdout };
            let _ = write!(target, "{}", e.render());
            return code;
        }
    };
    match execute(&cli.command, stdin, stdout) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            1
        }
    }
}

fn resolve_config(cmd: &Command) -> Result<RunConfig, IoError> {
    let common = cmd.common();
    let base = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    Ok(base.apply(&Overrides {
        seed: common.seed,
        learning_rate: common.lr,
        epochs: common.epochs,
        out: common.out.clone(),
        data: cmd.data(),
    }))
}

fn require_data(cfg: &RunConfig) -> Result<&Path, IoError> {
    cfg.data
        .as_deref()
        .ok_or_else(|| IoError::Usage("no dataset given (use --data or `data` in the config file)".into()))
}

fn load_with_summary(cfg: &RunConfig, stdout: &mut dyn Write) -> Result<Vec<DatasetRecord>, IoError> {
    let path = require_data(cfg)?;
    let (records, counts) = load_dataset(path)?;
    out(stdout, format!("loaded {}: {counts}", path.display()))?;
    Ok(records)
}

fn out(stdout: &mut dyn Write, line: impl AsRef<str>) -> Result<(), IoError> {
    writeln!(stdout, "{}", line.as_ref()).map_err(|e| IoError::io(Path::new("<stdout>"), e))
}

fn write_text(path: &Path, text: &str) -> Result<(), IoError> {
    dataset::write_file(path, text.as_bytes())
}

fn write_report_files(dir: &Path, prefix: &str, report: &EvalReport) -> Result<(), IoError> {
    write_text(&dir.join(format!("{prefix}report.txt")), &format_report(report))?;
    write_text(&dir.join(format!("{prefix}report.json")), &report_json(report)?)?;
    write_text(&dir.join(format!("{prefix}confusion_matrix.csv")), &confusion_csv(&report.confusion)?)
}

/// A stratified holdout split with vocabularies fitted on the training side.
#[derive(Debug, Clone)]
pub struct Holdout {
    pub split: Fold,
    pub pre: Preprocessor,
    pub train: Vec<EncodedSample>,
    pub val: Vec<EncodedSample>,
}

pub fn prepare_holdout(records: &[DatasetRecord], cfg: &RunConfig) -> Result<Holdout, IoError> {
    let labels: Vec<Label> = records.iter().map(|r| r.label).collect();
    let split = stratified_split(&labels, cfg.train.train_fraction, cfg.seed)?;
    let pick = |idx: &[usize]| idx.iter().map(|&i| records[i].clone()).collect::<Vec<_>>();
    let (train_records, val_records) = (pick(&split.train), pick(&split.val));
    let m = &cfg.model;
    let pre = Preprocessor::fit(
        &cleaned_texts(&train_records),
        m.subword_vocab_size,
        m.max_subword_len,
        m.max_char_len,
    )?;
    Ok(Holdout {
        train: encode_records(&pre, &train_records),
        val: encode_records(&pre, &val_records),
        split,
        pre,
    })
}

/// Result of [`train_hybrid`].
#[derive(Debug, Clone)]
pub struct HybridRun {
    pub pipeline: HybridPipeline,
    pub trace: EpochTrace,
    pub holdout_report: EvalReport,
    pub split: Fold,
}

/// The `train` workflow without file output.
pub fn train_hybrid(records: &[DatasetRecord], cfg: &RunConfig) -> Result<HybridRun, IoError> {
    let holdout = prepare_holdout(records, cfg)?;
    let model_cfg = cfg.model.model_config(holdout.pre.subwords.len(), holdout.pre.chars.len());
    let mut model = HybridModel::init(model_cfg, cfg.seed)?;
    let trace = train_with_validation(&mut model, &holdout.train, &holdout.val, &cfg.train_config())?;
    let holdout_report = evaluate(&model, &holdout.val)?;
    Ok(HybridRun {
        pipeline: HybridPipeline {
            model,
            pre: holdout.pre,
        },
        trace,
        holdout_report,
        split: holdout.split,
    })
}

/// Holdout reports of both baselines, trained on the same split as
/// [`train_hybrid`] with the same seed.
#[derive(Debug, Clone)]
pub struct BaselineRun {
    pub naive_bayes: Option<(crate::baselines::NaiveBayesModel, EvalReport)>,
    pub logreg: Option<(crate::baselines::LogRegModel, EvalReport)>,
    pub split: Fold,
}

pub fn train_baselines(records: &[DatasetRecord], cfg: &RunConfig, kind: BaselineKind) -> Result<BaselineRun, IoError> {
    let labels: Vec<Label> = records.iter().map(|r| r.label).collect();
    let split = stratified_split(&labels, cfg.train.train_fraction, cfg.seed)?;
    let texts = labeled_texts(records);
    let pick = |idx: &[usize]| idx.iter().map(|&i| texts[i].clone()).collect::<Vec<_>>();
    let (train, val) = (pick(&split.train), pick(&split.val));
    let naive_bayes = match kind {
        BaselineKind::Nb | BaselineKind::All => {
            let m = train_naive_bayes(&train)?;
            let r = evaluate_baseline(&m, &val);
            Some((m, r))
        }
        BaselineKind::Logreg => None,
    };
    let logreg = match kind {
        BaselineKind::Logreg | BaselineKind::All => {
            let (m, _) = train_logreg(&train, &cfg.logreg_config())?;
            let r = evaluate_baseline(&m, &val);
            Some((m, r))
        }
        BaselineKind::Nb => None,
    };
    Ok(BaselineRun {
        naive_bayes,
        logreg,
        split,
    })
}

fn execute(cmd: &Command, stdin: &mut dyn Read, stdout: &mut dyn Write) -> Result<(), IoError> {
    let cfg = resolve_config(cmd)?;
    let dir = cfg.out_dir();
    match cmd {
        Command::Train { .. } => {
            let records = load_with_summary(&cfg, stdout)?;
            let run = train_hybrid(&records, &cfg)?;
            let t = cfg.train_config();
            let metadata = TrainingMetadata {
                seed: cfg.seed,
                epochs: t.epochs,
                train_samples: run.split.train.len(),
                final_train_loss: run.trace.train_loss.last().copied(),
                final_val_loss: run.trace.val_loss.last().copied(),
            };
            let ck = Checkpoint::from_hybrid(&run.pipeline.model, &run.pipeline.pre, metadata)?;
            ck.save(&dir.join("model.ckpt"))?;
            write_text(&dir.join("loss_curve.csv"), &loss_curve_csv(&run.trace)?)?;
            write_report_files(&dir, "holdout_", &run.holdout_report)?;
            for (i, (tl, vl)) in run.trace.train_loss.iter().zip(&run.trace.val_loss).enumerate() {
                out(stdout, format!("epoch {}: train_loss {tl:.4} val_loss {vl:.4}", i + 1))?;
            }
            out(stdout, format!("holdout accuracy {:.4}", run.holdout_report.accuracy))?;
            out(stdout, format!("wrote {}", dir.join("model.ckpt").display()))
        }
        Command::Evaluate { model, .. } => {
            let records = load_with_summary(&cfg, stdout)?;
            let ck = Checkpoint::load(model)?;
            let report = match ck.kind {
                ModelKind::Hybrid => {
                    let (model, pre) = ck.to_hybrid()?;
                    evaluate(&model, &encode_records(&pre, &records))?
                }
                ModelKind::NaiveBayes => evaluate_baseline(&ck.to_naive_bayes()?, &labeled_texts(&records)),
                ModelKind::LogisticRegression => evaluate_baseline(&ck.to_logreg()?, &labeled_texts(&records)),
            };
            write_report_files(&dir, "", &report)?;
            out(stdout, format_report(&report))
        }
        Command::Crossval { folds, .. } => {
            let records = load_with_summary(&cfg, stdout)?;
            let k = folds.unwrap_or(cfg.train.folds);
            let m = &cfg.model;
            let pre = Preprocessor::fit(
                &cleaned_texts(&records),
                m.subword_vocab_size,
                m.max_subword_len,
                m.max_char_len,
            )?;
            let data = encode_records(&pre, &records);
            let model_cfg = m.model_config(pre.subwords.len(), pre.chars.len());
            let cv = cross_validate(&data, &model_cfg, &cfg.train_config(), k)?;
            let mut text = String::new();
            for f in &cv.folds {
                text.push_str(&format!("fold {}\n{}\n", f.fold + 1, format_report(&f.report)));
            }
            text.push_str(&format!("mean accuracy {:.4}\n", cv.mean_accuracy));
            write_text(&dir.join("crossval.csv"), &crossval_csv(&cv)?)?;
            write_text(&dir.join("crossval_report.txt"), &text)?;
            for f in &cv.folds {
                out(stdout, format!("fold {}: accuracy {:.4}", f.fold + 1, f.report.accuracy))?;
            }
            out(stdout, format!("mean accuracy {:.4}", cv.mean_accuracy))
        }
        Command::Predict { model, input, .. } => {
            let (model, pre) = Checkpoint::load(model)?.to_hybrid()?;
            let text = match input {
                Some(path) => std::fs::read_to_string(path).map_err(|e| IoError::io(path, e))?,
                None => {
                    let mut s = String::new();
                    stdin
                        .read_to_string(&mut s)
                        .map_err(|e| IoError::io(Path::new("<stdin>"), e))?;
                    s
                }
            };
            let mut lines = Vec::new();
            for msg in read_lines(&text) {
                let o = model.forward(&pre.encode(&msg), false)?;
                let label = Label::from_index(crate::model::argmax(o.logits.data())).expect("three classes");
                lines.push(prediction_line(label, o.probs.data()));
            }
            if cmd.common().out.is_some() {
                let body: String = lines.iter().map(|l| format!("{l}\n")).collect();
                write_text(&dir.join("predictions.csv"), &body)?;
            }
            lines.iter().try_for_each(|l| out(stdout, l))
        }
        Command::Baseline { kind, .. } => {
            let records = load_with_summary(&cfg, stdout)?;
            let run = train_baselines(&records, &cfg, *kind)?;
            let metadata = TrainingMetadata {
                seed: cfg.seed,
                epochs: cfg.baseline.logreg_epochs,
                train_samples: run.split.train.len(),
                ..TrainingMetadata::default()
            };
            let mut table = String::from("model,accuracy,macro_f1,weighted_f1\n");
            if let Some((m, r)) = &run.naive_bayes {
                Checkpoint::from_naive_bayes(m, TrainingMetadata { epochs: 0, ..metadata.clone() })
                    .save(&dir.join("naive_bayes.ckpt"))?;
                write_report_files(&dir, "naive_bayes_", r)?;
                table.push_str(&format!("naive_bayes,{},{},{}\n", r.accuracy, r.macro_avg.f1, r.weighted_avg.f1));
                out(stdout, format!("naive Bayes holdout accuracy {:.4}", r.accuracy))?;
            }
            if let Some((m, r)) = &run.logreg {
                Checkpoint::from_logreg(m, metadata.clone()).save(&dir.join("logreg.ckpt"))?;
                write_report_files(&dir, "logreg_", r)?;
                table.push_str(&format!(
                    "logistic_regression,{},{},{}\n",
                    r.accuracy, r.macro_avg.f1, r.weighted_avg.f1
                ));
                out(stdout, format!("logistic regression holdout accuracy {:.4}", r.accuracy))?;
            }
            write_text(&dir.join("baselines.csv"), &table)
        }
        Command::ExportAttention { model, text, layer, head, .. } => {
            let (model, pre) = Checkpoint::load(model)?.to_hybrid()?;
            let rec = model.export_attention_map(&pre.encode(text), &pre.subwords, *layer, *head)?;
            let path = dir.join(format!("attention_layer{layer}_head{head}.csv"));
            write_text(&path, &attention_csv(&rec)?)?;
            out(stdout, format!("wrote {} ({} tokens)", path.display(), rec.tokens.len()))
        }
        Command::GenSynthetic { counts, hard_fraction, .. } => {
            if !(0.0..=1.0).contains(hard_fraction) {
                return Err(IoError::Usage(format!("hard fraction must be in [0, 1], got {hard_fraction}")));
            }
            let counts: [usize; Label::COUNT] = counts
                .as_slice()
                .try_into()
                .map_err(|_| IoError::Usage("--counts takes exactly three values".into()))?;
            let records = generate_synthetic(counts, *hard_fraction, cfg.seed);
            let path = dir.join("synthetic.csv");
            dataset::write_file(&path, &dataset_to_csv(&records)?)?;
            let summary = ClassCounts::of(records.iter().map(|r| &r.label));
            out(stdout, format!("wrote {}: {summary}", path.display()))
        }
    }
}
