//! `subseg`: command-line front end for subtitle segmentation corpora,
//! segmenters, metrics and toy model training.

use std::collections::HashSet;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use subseg::corpus::{Corpus, CorpusError, FeatureMatrix, ParseMode, Utterance};
use subseg::datapipe::{self, PipelineError, PipelineStats};
use subseg::metrics::{self, MetricsError};
use subseg::neural::{
    average_checkpoints, batch_loss, gradient_check, train, Checkpoint, Example, LossOptions, Mode, Model, NeuralError,
    TrainConfig, TrainState,
};
use subseg::rulebased::{CountCharsConfig, SegmentError};
use subseg::synth::{self, experiment, NeuralSegmenter, Segmenter, SpeechConfig, SynthError};
use subseg::Execution;

#[derive(Parser, Debug)]
#[command(name = "subseg", version, about = "Subtitle segmentation toolkit")]
struct Cli {
    /// Seed for every random choice; required by randomized subcommands.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (1 runs sequentially).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    format: Format,
    /// File of `key = value` lines read as `--key value` flags. Flags given
    /// on the command line take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output file (standard output when absent).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum SegMode {
    CountChars,
    Neural,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum GradMode {
    Textual,
    Multimodal,
    SpeechOnly,
    All,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ExperimentKind {
    Copy,
    ZeroShot,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Insert subtitle breaks into unsegmented text.
    Segment(SegmentArgs),
    /// Score segmented hypotheses against references.
    Eval(EvalArgs),
    /// Keep sentences whose lines all fit the character limit.
    Filter(FilterArgs),
    /// Turn eligible <eob> breaks into <eol> with a fixed probability.
    Substitute(SubstituteArgs),
    /// Pair every multi-subtitle sentence with a sampled single-subtitle one.
    Balance(InputArgs),
    /// Remove every break.
    Unsegment(InputArgs),
    /// Train a toy model from a dataset manifest.
    Train(TrainArgs),
    /// Decode a dataset manifest with a trained model.
    Decode(DecodeArgs),
    /// Average the parameters of several checkpoints.
    AvgCkpt(AvgArgs),
    /// Paired bootstrap significance test over BLEU.
    Significance(SignificanceArgs),
    /// Generate synthetic speech for segmented sentences.
    SynthSpeech(SynthSpeechArgs),
    /// Pair transcripts, features and segmented targets into a dataset.
    BuildDataset(BuildDatasetArgs),
    /// Share of breaks after punctuation and before function words.
    PatternStats(PatternArgs),
    /// Finite-difference check of the model gradients.
    Gradcheck(GradcheckArgs),
    /// Run a desk-scale segmentation experiment on toy languages.
    Experiment(ExperimentArgs),
}

#[derive(Args, Debug)]
struct InputArgs {
    #[arg(long)]
    input: PathBuf,
    /// File receiving pipeline statistics as JSON (standard error otherwise).
    #[arg(long)]
    stats: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SegmentArgs {
    #[arg(long, value_enum)]
    mode: SegMode,
    /// Unsegmented text, one sentence per line.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Dataset manifest providing transcripts and features.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long, default_value_t = 42)]
    limit: usize,
    #[arg(long, default_value_t = 0.25)]
    eol_prob: f64,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    beam: usize,
    /// Prefix language token; defaults to the closest training language.
    #[arg(long)]
    language_token: Option<String>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    hyp: PathBuf,
    #[arg(long = "ref")]
    reference: PathBuf,
    #[arg(long, default_value_t = 42)]
    limit: usize,
    /// Language of the bundled function-word list for pattern statistics.
    #[arg(long)]
    lang: Option<String>,
    /// Function-word list, one word per line.
    #[arg(long)]
    function_words: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct FilterArgs {
    #[command(flatten)]
    io: InputArgs,
    #[arg(long, default_value_t = 42)]
    limit: usize,
}

#[derive(Args, Debug)]
struct SubstituteArgs {
    #[command(flatten)]
    io: InputArgs,
    #[arg(long, default_value_t = 0.25)]
    prob: f64,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// TOML file with `[model]` and `[train]` tables.
    #[arg(long)]
    train_config: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Validation manifest; its loss is stored in every checkpoint.
    #[arg(long)]
    valid: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
    /// Language of manifest records that carry none.
    #[arg(long, default_value = "und")]
    lang: String,
}

#[derive(Args, Debug)]
struct DecodeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value_t = 5)]
    beam: usize,
    #[arg(long)]
    language_token: Option<String>,
}

#[derive(Args, Debug)]
struct AvgArgs {
    #[arg(long, num_args = 1.., required = true)]
    inputs: Vec<PathBuf>,
    /// Accept a number of checkpoints other than 7.
    #[arg(long)]
    any_count: bool,
}

#[derive(Args, Debug)]
struct SignificanceArgs {
    #[arg(long)]
    hyp_a: PathBuf,
    #[arg(long)]
    hyp_b: PathBuf,
    #[arg(long = "ref")]
    reference: PathBuf,
    #[arg(long, default_value_t = metrics::DEFAULT_SAMPLES)]
    samples: usize,
}

#[derive(Args, Debug)]
struct SynthSpeechArgs {
    /// Segmented sentences, one per line.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value = "und")]
    lang: String,
    #[arg(long, default_value_t = 8)]
    pause_frames: usize,
    #[arg(long, default_value_t = 16)]
    feature_dims: usize,
    #[arg(long, default_value_t = 6)]
    frames_per_char: usize,
}

#[derive(Args, Debug)]
struct BuildDatasetArgs {
    /// Manifest giving ids, features and source transcripts.
    #[arg(long)]
    manifest: PathBuf,
    /// Segmented targets aligned with the manifest records.
    #[arg(long)]
    segmented: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Target language of the segmented text.
    #[arg(long, default_value = "und")]
    lang: String,
}

#[derive(Args, Debug)]
struct PatternArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    lang: Option<String>,
    #[arg(long)]
    function_words: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, value_enum, default_value_t = GradMode::All)]
    mode: GradMode,
}

#[derive(Args, Debug)]
struct ExperimentArgs {
    #[arg(long, value_enum)]
    kind: ExperimentKind,
    /// Training steps per model.
    #[arg(long, default_value_t = 2000)]
    steps: usize,
    /// Training sentences per language.
    #[arg(long)]
    sentences: Option<usize>,
    #[arg(long, default_value_t = 1)]
    beam: usize,
}

#[derive(Debug)]
enum CliError {
    Validation(String),
    Io(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Io(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "error: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

fn invalid(m: impl std::fmt::Display) -> CliError {
    CliError::Validation(m.to_string())
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        invalid(e)
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        invalid(e)
    }
}

impl From<SegmentError> for CliError {
    fn from(e: SegmentError) -> Self {
        invalid(e)
    }
}

impl From<NeuralError> for CliError {
    fn from(e: NeuralError) -> Self {
        match e {
            NeuralError::Io(m) => CliError::Io(m),
            other => invalid(other),
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::Io(m) => CliError::Io(m),
            SynthError::Neural(n) => n.into(),
            other => invalid(other),
        }
    }
}

struct Ctx {
    seed: Option<u64>,
    format: Format,
    out: Option<PathBuf>,
    exec: Execution,
}

impl Ctx {
    fn seed(&self, cmd: &str) -> Result<u64, CliError> {
        self.seed.ok_or_else(|| invalid(format!("`{cmd}` is randomized and needs an explicit --seed")))
    }

    fn emit(&self, data: &str) -> Result<(), CliError> {
        match &self.out {
            Some(p) => std::fs::write(p, data)?,
            None => std::io::stdout().lock().write_all(data.as_bytes())?,
        }
        Ok(())
    }

    /// Emits `value` as JSON or, in text mode, through `text`.
    fn report<T: serde::Serialize>(&self, value: &T, text: impl FnOnce(&T) -> String) -> Result<(), CliError> {
        match self.format {
            Format::Json => self.emit(&(serde_json::to_string_pretty(value).expect("serializable") + "\n")),
            Format::Text => self.emit(&text(value)),
        }
    }
}

fn read_text(p: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))
}

fn read_corpus(p: &Path, lang: &str, mode: ParseMode) -> Result<Corpus, CliError> {
    Ok(Corpus::parse(p.display().to_string(), lang, &read_text(p)?, mode)?)
}

fn emit_stats(stats: &PipelineStats, to: Option<&Path>) -> Result<(), CliError> {
    let text = serde_json::to_string(stats).expect("serializable") + "\n";
    match to {
        Some(p) => std::fs::write(p, text)?,
        None => eprint!("{text}"),
    }
    Ok(())
}

fn function_words(lang: Option<&str>, file: Option<&Path>) -> Result<Option<HashSet<String>>, CliError> {
    if let Some(f) = file {
        return Ok(Some(metrics::parse_word_list(&read_text(f)?)));
    }
    match lang {
        Some(l) => metrics::function_words(l)
            .map(Some)
            .ok_or_else(|| invalid(format!("no bundled function-word list for {l:?}; pass --function-words"))),
        None => Ok(None),
    }
}

fn features_of(utts: &[Utterance]) -> Vec<Arc<FeatureMatrix>> {
    utts.iter().map(|u| u.features.clone()).collect()
}

fn cmd_segment(ctx: &Ctx, a: &SegmentArgs) -> Result<(), CliError> {
    let (unseg, features) = match (&a.input, &a.manifest) {
        (Some(p), None) => (read_corpus(p, "und", ParseMode::Lenient)?, None),
        (None, Some(m)) => {
            let utts = synth::read_dataset(m, "und")?;
            let lang = utts.first().map_or("und".to_string(), |u| u.target_language.clone());
            let c = Corpus::new(m.display().to_string(), lang, utts.iter().map(|u| u.source_text.clone()).collect());
            (c, Some(features_of(&utts)))
        }
        _ => return Err(invalid("give exactly one of --input and --manifest")),
    };
    let segmenter = match a.mode {
        SegMode::CountChars => {
            let cfg = CountCharsConfig {
                limit: a.limit,
                eol_prob: a.eol_prob,
                seed: ctx.seed("segment")?,
            };
            cfg.validate()?;
            Segmenter::CountChars(cfg)
        }
        SegMode::Neural => {
            let path = a.checkpoint.as_ref().ok_or_else(|| invalid("--mode neural needs --checkpoint"))?;
            let ckpt = Checkpoint::load(path)?;
            let seg = NeuralSegmenter::from_checkpoint(ckpt, a.language_token.as_deref(), a.beam, &unseg)?;
            if let Some(l) = seg.language() {
                log::info!("decoding with language token {l}");
            }
            Segmenter::Neural(Box::new(seg))
        }
    };
    let out = synth::segment_corpus(&unseg, features.as_deref(), &segmenter, ctx.exec)?;
    for f in &out.failures {
        eprintln!("sentence {}: fell back to a single <eob> ({})", f.index + 1, f.reason);
    }
    ctx.emit(&out.corpus.to_text())
}

fn cmd_eval(ctx: &Ctx, a: &EvalArgs) -> Result<(), CliError> {
    let hyp = read_corpus(&a.hyp, "und", ParseMode::Lenient)?;
    let reference = read_corpus(&a.reference, "und", ParseMode::Lenient)?;
    let fw = function_words(a.lang.as_deref(), a.function_words.as_deref())?;
    let report = metrics::evaluate(&hyp.sentences, &reference.sentences, a.limit, fw.as_ref())?;
    ctx.report(&report, |r| r.to_text())
}

fn cmd_filter(ctx: &Ctx, a: &FilterArgs) -> Result<(), CliError> {
    let c = read_corpus(&a.io.input, "und", ParseMode::Lenient)?;
    let (out, stats) = datapipe::filter_conformant(&c, a.limit);
    emit_stats(&stats, a.io.stats.as_deref())?;
    ctx.emit(&out.to_text())
}

fn cmd_substitute(ctx: &Ctx, a: &SubstituteArgs) -> Result<(), CliError> {
    if !(0.0..=1.0).contains(&a.prob) {
        return Err(invalid("--prob must lie in [0, 1]"));
    }
    let c = read_corpus(&a.io.input, "und", ParseMode::Strict)?;
    let (out, stats) = datapipe::eob_to_eol_substitution(&c, a.prob, ctx.seed("substitute")?, ctx.exec);
    emit_stats(&stats, a.io.stats.as_deref())?;
    ctx.emit(&out.to_text())
}

fn cmd_balance(ctx: &Ctx, a: &InputArgs) -> Result<(), CliError> {
    let c = read_corpus(&a.input, "und", ParseMode::Lenient)?;
    match datapipe::balance_single_multi(&c, ctx.seed("balance")?) {
        Ok((out, stats)) => {
            emit_stats(&stats, a.stats.as_deref())?;
            ctx.emit(&out.to_text())
        }
        Err(e @ PipelineError::InsufficientSingles { .. }) => {
            let PipelineError::InsufficientSingles { partial, .. } = &e;
            emit_stats(&partial.1, a.stats.as_deref())?;
            ctx.emit(&partial.0.to_text())?;
            Err(invalid(e))
        }
    }
}

fn cmd_unsegment(ctx: &Ctx, a: &InputArgs) -> Result<(), CliError> {
    let c = read_corpus(&a.input, "und", ParseMode::Lenient)?;
    ctx.emit(&datapipe::make_unsegmented(&c).to_text())
}

fn examples_for(model: &Model, utts: &[Utterance]) -> Result<Vec<Example>, CliError> {
    utts.iter()
        .map(|u| Example::from_utterance(u, model).map_err(|e| invalid(format!("{}: {e}", u.id))))
        .collect()
}

fn cmd_train(ctx: &Ctx, a: &TrainArgs) -> Result<(), CliError> {
    let seed = ctx.seed("train")?;
    let cfg = TrainConfig::from_toml(&read_text(&a.train_config)?)?;
    let utts = synth::read_dataset(&a.manifest, &a.lang)?;
    if utts.is_empty() {
        return Err(invalid("empty training manifest"));
    }
    if cfg.model.mode.uses_speech() {
        if let Some(u) = utts.iter().find(|u| u.features.dims() != cfg.model.feature_dims) {
            return Err(invalid(format!(
                "{} has {}-dimensional features, config expects {}",
                u.id,
                u.features.dims(),
                cfg.model.feature_dims
            )));
        }
    }
    let model_cfg = cfg.model.clone().with_vocab(&experiment::vocab_for(&utts));
    let model = Model::new(model_cfg.clone())?;
    let examples = examples_for(&model, &utts)?;
    let valid = match &a.valid {
        Some(p) => Some(examples_for(&model, &synth::read_dataset(p, &a.lang)?)?),
        None => None,
    };
    let meta = experiment::language_profiles(&utts);
    std::fs::create_dir_all(&a.out_dir)?;
    let mut log_file = std::fs::File::create(a.out_dir.join("train.jsonl"))?;
    let mut params = model.init_params::<f32>(seed);
    let mut state = TrainState::new(&params, &cfg.train, seed);
    let opts = cfg.train.clone();
    let loss_opts = LossOptions::from(&opts);
    let exec = ctx.exec;
    let save = |step: u64, params: &subseg::neural::Parameters<f32>, name: &str| -> Result<(), NeuralError> {
        let val_loss = match &valid {
            Some(v) => {
                let batch: Vec<&Example> = v.iter().collect();
                Some(batch_loss(&model, params, &batch, &loss_opts, exec, false, None)?.0.total)
            }
            None => None,
        };
        let ckpt = Checkpoint {
            config: model_cfg.clone(),
            params: params.clone(),
            step,
            val_loss,
            meta: meta.clone(),
        };
        ckpt.save(&a.out_dir.join(name))?;
        log::info!("step {step}: saved {name} (validation loss {val_loss:?})");
        Ok(())
    };
    train(&model, &mut params, &mut state, &examples, &opts, exec, |rec, p| {
        if opts.log_every > 0 && rec.step % opts.log_every as u64 == 0 {
            writeln!(log_file, "{}", serde_json::to_string(rec).expect("serializable"))?;
            eprintln!("step {} loss {:.4} lr {:.2e}", rec.step, rec.loss, rec.lr);
        }
        if opts.checkpoint_every > 0 && rec.step % opts.checkpoint_every as u64 == 0 {
            save(rec.step, p, &format!("ckpt-{:06}.ssck", rec.step))?;
        }
        Ok(())
    })?;
    save(state.step, &params, "last.ssck")?;
    Ok(())
}

fn cmd_decode(ctx: &Ctx, a: &DecodeArgs) -> Result<(), CliError> {
    let utts = synth::read_dataset(&a.manifest, "und")?;
    let lang = utts.first().map_or("und".to_string(), |u| u.target_language.clone());
    let unseg = Corpus::new("decode", lang, utts.iter().map(|u| u.source_text.clone()).collect());
    let seg = NeuralSegmenter::from_checkpoint(Checkpoint::load(&a.checkpoint)?, a.language_token.as_deref(), a.beam, &unseg)?;
    let outputs = ctx.exec.map(&utts, |u| {
        let words: Vec<&str> = u.source_text.words().collect();
        seg.segment(&words, Some(&u.features))
    });
    let mut text = String::new();
    for (u, o) in utts.iter().zip(outputs) {
        match o? {
            Some(s) => text.push_str(&s.to_string()),
            None => eprintln!("{}: empty output", u.id),
        }
        text.push('\n');
    }
    ctx.emit(&text)
}

fn cmd_avg(ctx: &Ctx, a: &AvgArgs) -> Result<(), CliError> {
    let out = ctx.out.as_ref().ok_or_else(|| invalid("avg-ckpt needs --out"))?;
    let ckpts = a.inputs.iter().map(|p| Checkpoint::load(p)).collect::<Result<Vec<_>, _>>()?;
    let params = average_checkpoints(&ckpts, a.any_count)?;
    let last = ckpts.iter().max_by_key(|c| c.step).expect("at least one checkpoint");
    Checkpoint {
        params,
        val_loss: None,
        ..last.clone()
    }
    .save(out)?;
    Ok(())
}

fn cmd_significance(ctx: &Ctx, a: &SignificanceArgs) -> Result<(), CliError> {
    let plain = |p: &Path| -> Result<Vec<String>, CliError> {
        let c = read_corpus(p, "und", ParseMode::Lenient)?;
        Ok(c.sentences.iter().map(|s| s.strip_breaks().to_string()).collect())
    };
    let (ha, hb, r) = (plain(&a.hyp_a)?, plain(&a.hyp_b)?, plain(&a.reference)?);
    let res = metrics::paired_bootstrap(&ha, &hb, &r, a.samples, ctx.seed("significance")?, ctx.exec)?;
    let value = json!({
        "bleu_a": res.bleu_a,
        "bleu_b": res.bleu_b,
        "win_rate_a": res.win_rate_a,
        "win_rate_b": res.win_rate_b,
        "p_value": res.p_value,
        "samples": res.samples,
        "significant": res.significant(),
    });
    ctx.report(&value, |_| {
        format!(
            "BLEU A {:.2}  BLEU B {:.2}  p = {:.4}  {}\n",
            res.bleu_a,
            res.bleu_b,
            res.p_value,
            if res.significant() { "significant" } else { "not significant (*)" }
        )
    })
}

fn cmd_synth_speech(ctx: &Ctx, a: &SynthSpeechArgs) -> Result<(), CliError> {
    let seed = ctx.seed("synth-speech")?;
    if a.pause_frames < 1 || a.feature_dims < 1 || a.frames_per_char < 1 {
        return Err(invalid("--pause-frames, --feature-dims and --frames-per-char must be at least 1"));
    }
    let c = read_corpus(&a.input, &a.lang, ParseMode::Strict)?;
    let cfg = SpeechConfig {
        pause_frames: a.pause_frames,
        feature_dims: a.feature_dims,
        frames_per_char: a.frames_per_char,
        ..SpeechConfig::default()
    };
    let feats = synth::synthesize_corpus(&c, &cfg, seed, ctx.exec);
    let utts: Vec<Utterance> = c
        .sentences
        .iter()
        .zip(feats)
        .enumerate()
        .map(|(i, (s, f))| Utterance {
            id: format!("{:06}", i + 1),
            features: Arc::new(f),
            source_text: s.strip_breaks(),
            target: s.clone(),
            target_language: a.lang.clone(),
        })
        .collect();
    let path = synth::write_dataset(&a.out_dir, &utts)?;
    eprintln!("wrote {} utterances to {}", utts.len(), path.display());
    Ok(())
}

fn cmd_build_dataset(a: &BuildDatasetArgs) -> Result<(), CliError> {
    let src = synth::read_dataset(&a.manifest, &a.lang)?;
    let segmented = read_corpus(&a.segmented, &a.lang, ParseMode::Lenient)?;
    let ids: Vec<String> = src.iter().map(|u| u.id.clone()).collect();
    let unseg = Corpus::new("source", a.lang.clone(), src.iter().map(|u| u.source_text.clone()).collect());
    let utts = synth::build_subst_dataset(&ids, &unseg, &features_of(&src), &segmented)?;
    let path = synth::write_dataset(&a.out_dir, &utts)?;
    eprintln!("wrote {} utterances to {}", utts.len(), path.display());
    Ok(())
}

fn cmd_pattern_stats(ctx: &Ctx, a: &PatternArgs) -> Result<(), CliError> {
    let c = read_corpus(&a.input, "und", ParseMode::Lenient)?;
    let fw = function_words(a.lang.as_deref(), a.function_words.as_deref())?
        .ok_or_else(|| invalid("pattern-stats needs --lang or --function-words"))?;
    let stats = metrics::break_pattern_stats(&c.sentences, &fw)?;
    ctx.report(&stats.to_map(), |m| {
        let mut s = String::new();
        for (kind, k) in m {
            match k {
                Some(k) => s.push_str(&format!(
                    "{kind}: {} breaks, {:.1}% after punctuation, {}\n",
                    k.breaks,
                    k.after_punctuation,
                    k.before_function_word
                        .map_or("n/a before function words".to_string(), |v| format!("{v:.1}% before function words"))
                )),
                None => s.push_str(&format!("{kind}: no breaks\n")),
            }
        }
        s
    })
}

fn cmd_gradcheck(ctx: &Ctx, a: &GradcheckArgs) -> Result<(), CliError> {
    let seed = ctx.seed("gradcheck")?;
    let modes = match a.mode {
        GradMode::Textual => vec![Mode::Textual],
        GradMode::Multimodal => vec![Mode::Multimodal],
        GradMode::SpeechOnly => vec![Mode::SpeechOnly],
        GradMode::All => vec![Mode::Textual, Mode::Multimodal, Mode::SpeechOnly],
    };
    let reports = modes.into_iter().map(|m| gradient_check(m, seed)).collect::<Result<Vec<_>, _>>()?;
    let failed = reports.iter().any(|r| r.max_rel_error >= 1e-4);
    ctx.report(&reports, |rs| {
        rs.iter()
            .map(|r| {
                format!(
                    "{:?}: {} entries, max relative error {:.2e} at {}[{}]\n",
                    r.mode, r.checked, r.max_rel_error, r.worst.0, r.worst.1
                )
            })
            .collect()
    })?;
    if failed {
        return Err(invalid("relative error above 1e-4"));
    }
    Ok(())
}

fn cmd_experiment(ctx: &Ctx, a: &ExperimentArgs) -> Result<(), CliError> {
    let seed = ctx.seed("experiment")?;
    let mut cfg = match a.kind {
        ExperimentKind::Copy => experiment::ExperimentConfig::default(),
        ExperimentKind::ZeroShot => experiment::ExperimentConfig::zero_shot(),
    };
    cfg.train.steps = a.steps;
    cfg.beam = a.beam;
    if let Some(n) = a.sentences {
        cfg.corpus.sentences = n;
    }
    let scores_text = |name: &str, s: &experiment::SegmentationScores| {
        format!(
            "{name}: EOB F1 {:.1}  EOL F1 {:.1}  exact breaks {:.1}  text kept {:.1}%\n",
            s.eob_f1, s.eol_f1, s.exact_break_f1, s.text_preserved
        )
    };
    match a.kind {
        ExperimentKind::Copy => {
            let r = experiment::copy_experiment(&cfg, seed, ctx.exec)?;
            ctx.report(&r, |r| scores_text("multimodal (training set)", &r.scores))
        }
        ExperimentKind::ZeroShot => {
            let r = experiment::zero_shot_experiment(&cfg, seed, ctx.exec)?;
            ctx.report(&r, |r| {
                format!(
                    "held-out {} (prefix {})\n{}{}",
                    r.held_out,
                    r.language_token,
                    scores_text("textual", &r.textual),
                    scores_text("multimodal", &r.multimodal)
                )
            })
        }
    }
}

/// Appends `--key value` for every `key = value` line of the config file
/// whose flag is not already present.
fn apply_config_file(mut args: Vec<String>) -> Result<Vec<String>, CliError> {
    let pos = args.iter().position(|a| a == "--config" || a.starts_with("--config="));
    let Some(pos) = pos else { return Ok(args) };
    let path = match args[pos].strip_prefix("--config=") {
        Some(p) => p.to_string(),
        None => args.get(pos + 1).cloned().ok_or_else(|| invalid("--config needs a file"))?,
    };
    let text = read_text(Path::new(&path))?;
    let mut extra = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| invalid(format!("{path}:{}: expected key = value", n + 1)))?;
        let flag = format!("--{}", k.trim().replace('_', "-"));
        let v = v.trim().trim_matches('"');
        if args.iter().any(|a| *a == flag || a.starts_with(&format!("{flag}="))) {
            continue;
        }
        match v {
            "true" => extra.push(flag),
            "false" => {}
            _ => {
                extra.push(flag);
                extra.push(v.to_string());
            }
        }
    }
    args.extend(extra);
    Ok(args)
}

fn run(args: Vec<String>) -> Result<(), CliError> {
    let args = apply_config_file(args)?;
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            if code == 0 {
                return Ok(());
            }
            return Err(CliError::Validation("invalid arguments".into()));
        }
    };
    let exec = match cli.threads {
        Some(0) => return Err(invalid("--threads must be at least 1")),
        Some(1) => Execution::Sequential,
        Some(n) => {
            #[cfg(feature = "parallel")]
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| invalid(e))?;
            let _ = n;
            Execution::default()
        }
        None => Execution::default(),
    };
    let ctx = Ctx {
        seed: cli.seed,
        format: cli.format,
        out: cli.out.clone(),
        exec,
    };
    match &cli.command {
        Command::Segment(a) => cmd_segment(&ctx, a),
        Command::Eval(a) => cmd_eval(&ctx, a),
        Command::Filter(a) => cmd_filter(&ctx, a),
        Command::Substitute(a) => cmd_substitute(&ctx, a),
        Command::Balance(a) => cmd_balance(&ctx, a),
        Command::Unsegment(a) => cmd_unsegment(&ctx, a),
        Command::Train(a) => cmd_train(&ctx, a),
        Command::Decode(a) => cmd_decode(&ctx, a),
        Command::AvgCkpt(a) => cmd_avg(&ctx, a),
        Command::Significance(a) => cmd_significance(&ctx, a),
        Command::SynthSpeech(a) => cmd_synth_speech(&ctx, a),
        Command::BuildDataset(a) => cmd_build_dataset(a),
        Command::PatternStats(a) => cmd_pattern_stats(&ctx, a),
        Command::Gradcheck(a) => cmd_gradcheck(&ctx, a),
        Command::Experiment(a) => cmd_experiment(&ctx, a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(std::env::args().collect()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
