//! `valign` command line: corpus synthesis, BPE, training, alignment,
//! symmetrization and evaluation, glued into reproducible runs.
//!
//! Every run resolves its settings from an optional `key = value` config
//! file plus flags (flags win), then writes a manifest with the resolved
//! values and the SHA-256 of each output, so results are re-derivable.
//! Exit codes: 0 success, 1 usage error, 2 data/format error.

mod config;
mod model_io;

use anyhow::{anyhow, Result};
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use config::{ConfigFile, Manifest, UsageError};
use std::path::{Path, PathBuf};
use valign_core::corpus::alignment::{read_alignment, write_alignment, AlignmentSet};
use valign_core::corpus::{bpe, LoadOptions};
use valign_core::error::CoreError;
use valign_core::eval;
use valign_core::synth;

#[derive(Parser)]
#[command(name = "valign", version, about = "Generative word alignment toolkit")]
struct Cli {
    /// Worker threads for the parallel-pure stages (decoding, evaluation).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
#[allow(clippy::large_enum_variant)]
enum Command {
    /// Generate a synthetic dictionary corpus with gold alignments.
    Synth(SynthArgs),
    /// Learn a BPE merge table from a text file.
    BpeTrain(BpeTrainArgs),
    /// Apply a BPE model to a text file.
    BpeApply(BpeApplyArgs),
    /// Train an aligner.
    Train(TrainArgs),
    /// Align a parallel corpus with a trained model.
    Align(AlignArgs),
    /// Combine two directional alignments.
    Symmetrize(SymmetrizeArgs),
    /// Score a hypothesis alignment against a reference.
    Evaluate(EvaluateArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    vocab_size: Option<usize>,
    #[arg(long)]
    pairs: Option<usize>,
    #[arg(long)]
    min_len: Option<usize>,
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long)]
    reorder_k: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct BpeTrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    merges: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    marker: Option<String>,
}

#[derive(Args)]
struct BpeApplyArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FamilyArg {
    #[value(name = "ibm1-count")]
    Ibm1Count,
    #[value(name = "hmm-count")]
    HmmCount,
    #[value(name = "ibm1-nn")]
    Ibm1Nn,
    #[value(name = "hmm-nn")]
    HmmNn,
    #[value(name = "ibm1-vae")]
    Ibm1Vae,
    #[value(name = "hmm-vae")]
    HmmVae,
}

impl FamilyArg {
    fn as_str(self) -> &'static str {
        match self {
            FamilyArg::Ibm1Count => "ibm1-count",
            FamilyArg::HmmCount => "hmm-count",
            FamilyArg::Ibm1Nn => "ibm1-nn",
            FamilyArg::HmmNn => "hmm-nn",
            FamilyArg::Ibm1Vae => "ibm1-vae",
            FamilyArg::HmmVae => "hmm-vae",
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    src: Option<PathBuf>,
    #[arg(long)]
    tgt: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long, value_enum)]
    family: Option<FamilyArg>,
    /// Share language decoders and train both directions jointly (+SP).
    #[arg(long)]
    sp: bool,
    /// Add the posterior agreement cost (+AC; implies a +SP model).
    #[arg(long)]
    ac: bool,
    /// Monolingual data in the target language (+Mono).
    #[arg(long)]
    mono_tgt: Option<PathBuf>,
    /// Monolingual data in the source language (+Mono, +SP models only).
    #[arg(long)]
    mono_src: Option<PathBuf>,
    /// Add the denoising objective on the monolingual data (+Noise).
    #[arg(long)]
    noise: bool,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Keep only training pairs with both sides shorter than this; 0 turns
    /// the filter off.
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    lowercase: bool,
    /// BPE continuation marker of the input corpora (enables word spans).
    #[arg(long)]
    marker: Option<String>,
    /// Adam steps per M-step (NN families).
    #[arg(long)]
    m_steps: Option<usize>,
    /// IBM-1 warm-up sweeps for the count HMM.
    #[arg(long)]
    init_iters: Option<usize>,
    #[arg(long)]
    p_drop: Option<f64>,
    #[arg(long)]
    shuffle_k: Option<usize>,
    #[arg(long)]
    emb_dim: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    latent: Option<usize>,
}

#[derive(Args)]
struct AlignArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    model_dir: Option<PathBuf>,
    #[arg(long)]
    src: Option<PathBuf>,
    #[arg(long)]
    tgt: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// fwd aligns source words to target positions; rev needs a +SP model.
    #[arg(long)]
    direction: Option<String>,
    /// Decode HMM models by posterior argmax instead of Viterbi.
    #[arg(long)]
    posterior_argmax: bool,
    /// Keep subword positions instead of projecting to word level.
    #[arg(long)]
    raw: bool,
    /// Report the reconstruction accuracy of the encoded side (VAE only).
    #[arg(long)]
    r_acc: bool,
}

#[derive(Args)]
struct SymmetrizeArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Forward alignment file, (source, target) orientation.
    #[arg(long)]
    fwd: Option<PathBuf>,
    /// Reverse alignment file in its native (target, source) orientation;
    /// transposed at load time.
    #[arg(long)]
    rev: Option<PathBuf>,
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    hyp: Option<PathBuf>,
    #[arg(long = "ref")]
    reference: Option<PathBuf>,
    /// Reverse-direction hypothesis for agreement statistics (native
    /// orientation; transposed at load).
    #[arg(long)]
    rev: Option<PathBuf>,
    /// Corpora fixing the true sentence lengths.
    #[arg(long)]
    src: Option<PathBuf>,
    #[arg(long)]
    tgt: Option<PathBuf>,
    /// Where to write report.tsv and per_sentence.tsv.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Some(n) = cli.threads {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let result = match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::BpeTrain(a) => cmd_bpe_train(a),
        Command::BpeApply(a) => cmd_bpe_apply(a),
        Command::Train(a) => model_io::cmd_train(a),
        Command::Align(a) => model_io::cmd_align(a),
        Command::Symmetrize(a) => cmd_symmetrize(a),
        Command::Evaluate(a) => cmd_evaluate(a),
    };
    if let Err(e) = result {
        eprintln!("valign: {:#}", e);
        std::process::exit(classify(&e));
    }
}

fn classify(e: &anyhow::Error) -> i32 {
    if e.downcast_ref::<UsageError>().is_some() {
        return 1;
    }
    if let Some(ce) = e.downcast_ref::<CoreError>() {
        return match ce {
            CoreError::Config(_) => 1,
            _ => 2,
        };
    }
    2
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(UsageError(msg.into()))
}

fn load_config(path: &Option<PathBuf>, keys: &[&str]) -> Result<ConfigFile> {
    match path {
        Some(p) => ConfigFile::load(p, keys),
        None => Ok(ConfigFile::default()),
    }
}

/// The only environment variable the tool reads: a default output directory
/// for commands whose `out_dir` is not given by flag or config.
pub(crate) const OUT_DIR_ENV: &str = "VALIGN_OUT_DIR";

fn required<T: std::str::FromStr + Clone>(
    cfg: &ConfigFile,
    key: &str,
    flag: Option<T>,
) -> Result<T>
where
    <T as std::str::FromStr>::Err: std::fmt::Display,
{
    match flag {
        Some(v) => Ok(v),
        None => match cfg.get(key) {
            Some(raw) => raw
                .parse::<T>()
                .map_err(|e| usage(format!("config key {:?}: {}", key, e))),
            None => {
                if key == "out_dir" {
                    if let Ok(dir) = std::env::var(OUT_DIR_ENV) {
                        return dir
                            .parse::<T>()
                            .map_err(|e| usage(format!("{}: {}", OUT_DIR_ENV, e)));
                    }
                }
                Err(usage(format!(
                    "missing required option --{}",
                    key.replace('_', "-")
                )))
            }
        },
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| anyhow!(CoreError::io(dir, e)))
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    const KEYS: &[&str] = &[
        "out_dir",
        "vocab_size",
        "pairs",
        "min_len",
        "max_len",
        "reorder_k",
        "seed",
    ];
    let cfg = load_config(&a.config, KEYS)?;
    let out_dir: PathBuf = required(&cfg, "out_dir", a.out_dir)?;
    let sc = synth::SynthConfig {
        vocab_size: cfg.resolve("vocab_size", a.vocab_size, 50)?,
        pairs: cfg.resolve("pairs", a.pairs, 2000)?,
        min_len: cfg.resolve("min_len", a.min_len, 3)?,
        max_len: cfg.resolve("max_len", a.max_len, 10)?,
        reorder_k: cfg.resolve("reorder_k", a.reorder_k, 2)?,
        seed: cfg.resolve("seed", a.seed, 1)?,
    };
    ensure_dir(&out_dir)?;
    let corpus = synth::generate(&sc);
    let src_path = out_dir.join("src.txt");
    let tgt_path = out_dir.join("tgt.txt");
    let gold_path = out_dir.join("gold.aln");
    std::fs::write(&src_path, corpus.src_lines.join("\n") + "\n")
        .map_err(|e| anyhow!(CoreError::io(&src_path, e)))?;
    std::fs::write(&tgt_path, corpus.tgt_lines.join("\n") + "\n")
        .map_err(|e| anyhow!(CoreError::io(&tgt_path, e)))?;
    write_alignment(&gold_path, &corpus.gold)?;

    let mut m = Manifest::new("synth");
    m.set("vocab_size", sc.vocab_size);
    m.set("pairs", sc.pairs);
    m.set("min_len", sc.min_len);
    m.set("max_len", sc.max_len);
    m.set("reorder_k", sc.reorder_k);
    m.set("seed", sc.seed);
    for p in [&src_path, &tgt_path, &gold_path] {
        m.add_output(p)?;
    }
    m.write(&out_dir.join("manifest.txt"))?;
    println!("synth: {} pairs -> {}", sc.pairs, out_dir.display());
    Ok(())
}

fn cmd_bpe_train(a: BpeTrainArgs) -> Result<()> {
    const KEYS: &[&str] = &["input", "merges", "out", "marker"];
    let cfg = load_config(&a.config, KEYS)?;
    let input: PathBuf = required(&cfg, "input", a.input)?;
    let merges: usize = required(&cfg, "merges", a.merges)?;
    let out: PathBuf = required(&cfg, "out", a.out)?;
    let marker: String = cfg.resolve("marker", a.marker, bpe::DEFAULT_MARKER.to_string())?;

    let text = std::fs::read_to_string(&input).map_err(|e| anyhow!(CoreError::io(&input, e)))?;
    let lines: Vec<&str> = text.lines().collect();
    let model = bpe::train(&lines, merges, &marker)?;
    model.save(&out)?;

    let mut m = Manifest::new("bpe-train");
    m.set("input", input.display());
    m.set("merges", merges);
    m.set("marker", &marker);
    m.add_output(&out)?;
    m.write(&out.with_extension("manifest"))?;
    println!("bpe-train: {} merges -> {}", model.merges().len(), out.display());
    Ok(())
}

fn cmd_bpe_apply(a: BpeApplyArgs) -> Result<()> {
    const KEYS: &[&str] = &["model", "input", "out"];
    let cfg = load_config(&a.config, KEYS)?;
    let model_path: PathBuf = required(&cfg, "model", a.model)?;
    let input: PathBuf = required(&cfg, "input", a.input)?;
    let out: PathBuf = required(&cfg, "out", a.out)?;

    let model = bpe::BpeModel::load(&model_path)?;
    let text = std::fs::read_to_string(&input).map_err(|e| anyhow!(CoreError::io(&input, e)))?;
    let mut body = String::new();
    for line in text.lines() {
        let (tokens, _) = model.apply_line(line);
        body.push_str(&tokens.join(" "));
        body.push('\n');
    }
    std::fs::write(&out, body).map_err(|e| anyhow!(CoreError::io(&out, e)))?;

    let mut m = Manifest::new("bpe-apply");
    m.set("model", model_path.display());
    m.set("input", input.display());
    m.add_output(&out)?;
    m.write(&out.with_extension("manifest"))?;
    Ok(())
}

fn parse_method(s: &str) -> Result<fn(&AlignmentSet, &AlignmentSet) -> AlignmentSet> {
    match s {
        "intersect" => Ok(eval::intersect),
        "union" => Ok(eval::union_links),
        "gdf" => Ok(eval::grow_diag_final),
        other => Err(usage(format!(
            "unknown method {:?}; expected intersect, union or gdf",
            other
        ))),
    }
}

fn cmd_symmetrize(a: SymmetrizeArgs) -> Result<()> {
    const KEYS: &[&str] = &["fwd", "rev", "method", "out"];
    let cfg = load_config(&a.config, KEYS)?;
    let fwd_path: PathBuf = required(&cfg, "fwd", a.fwd)?;
    let rev_path: PathBuf = required(&cfg, "rev", a.rev)?;
    let method_name: String = cfg.resolve("method", a.method, "gdf".to_string())?;
    let out: PathBuf = required(&cfg, "out", a.out)?;
    let method = parse_method(&method_name)?;

    let fwd = read_alignment(&fwd_path)?;
    let rev: Vec<AlignmentSet> = read_alignment(&rev_path)?
        .iter()
        .map(|s| s.transposed())
        .collect();
    if fwd.len() != rev.len() {
        return Err(anyhow!(CoreError::Data(format!(
            "direction files disagree: {} vs {} lines",
            fwd.len(),
            rev.len()
        ))));
    }
    let combined: Vec<AlignmentSet> = fwd.iter().zip(&rev).map(|(f, r)| method(f, r)).collect();
    write_alignment(&out, &combined)?;

    let mut m = Manifest::new("symmetrize");
    m.set("fwd", fwd_path.display());
    m.set("rev", rev_path.display());
    m.set("method", &method_name);
    m.add_output(&out)?;
    m.write(&out.with_extension("manifest"))?;
    Ok(())
}

fn line_lengths(path: &Path) -> Result<Vec<u32>> {
    let text = std::fs::read_to_string(path).map_err(|e| anyhow!(CoreError::io(path, e)))?;
    Ok(text
        .lines()
        .map(|l| l.split_whitespace().count() as u32)
        .collect())
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<()> {
    const KEYS: &[&str] = &["hyp", "ref", "rev", "src", "tgt", "out_dir"];
    let cfg = load_config(&a.config, KEYS)?;
    let hyp_path: PathBuf = required(&cfg, "hyp", a.hyp)?;
    let ref_path: PathBuf = required(&cfg, "ref", a.reference)?;
    let rev_path: Option<PathBuf> = match (&a.rev, cfg.get("rev")) {
        (Some(p), _) => Some(p.clone()),
        (None, Some(s)) => Some(PathBuf::from(s)),
        _ => None,
    };
    let src_path: Option<PathBuf> = match (&a.src, cfg.get("src")) {
        (Some(p), _) => Some(p.clone()),
        (None, Some(s)) => Some(PathBuf::from(s)),
        _ => None,
    };
    let tgt_path: Option<PathBuf> = match (&a.tgt, cfg.get("tgt")) {
        (Some(p), _) => Some(p.clone()),
        (None, Some(s)) => Some(PathBuf::from(s)),
        _ => None,
    };
    let out_dir: Option<PathBuf> = match (&a.out_dir, cfg.get("out_dir")) {
        (Some(p), _) => Some(p.clone()),
        (None, Some(s)) => Some(PathBuf::from(s)),
        _ => None,
    };

    let mut hyps = read_alignment(&hyp_path)?;
    let mut refs = read_alignment(&ref_path)?;
    if hyps.len() != refs.len() {
        return Err(anyhow!(CoreError::Data(format!(
            "hypothesis has {} lines, reference {}",
            hyps.len(),
            refs.len()
        ))));
    }
    let mut rev = match &rev_path {
        Some(p) => {
            let sets: Vec<AlignmentSet> =
                read_alignment(p)?.iter().map(|s| s.transposed()).collect();
            if sets.len() != hyps.len() {
                return Err(anyhow!(CoreError::Data(
                    "reverse hypothesis line count mismatch".to_string()
                )));
            }
            Some(sets)
        }
        None => None,
    };

    // Pin lengths from the corpora when given, otherwise harmonize per line.
    match (&src_path, &tgt_path) {
        (Some(sp), Some(tp)) => {
            let sl = line_lengths(sp)?;
            let tl = line_lengths(tp)?;
            if sl.len() != hyps.len() {
                return Err(anyhow!(CoreError::Data(
                    "corpus line count does not match alignments".to_string()
                )));
            }
            for (n, (h, r)) in hyps.iter_mut().zip(refs.iter_mut()).enumerate() {
                h.set_lengths(sl[n], tl[n])?;
                r.set_lengths(sl[n], tl[n])?;
                if let Some(rv) = &mut rev {
                    rv[n].set_lengths(sl[n], tl[n])?;
                }
            }
        }
        (None, None) => {
            for n in 0..hyps.len() {
                let mut sl = hyps[n].source_len.max(refs[n].source_len);
                let mut tl = hyps[n].target_len.max(refs[n].target_len);
                if let Some(rv) = &rev {
                    sl = sl.max(rv[n].source_len);
                    tl = tl.max(rv[n].target_len);
                }
                hyps[n].set_lengths(sl, tl)?;
                refs[n].set_lengths(sl, tl)?;
                if let Some(rv) = &mut rev {
                    rv[n].set_lengths(sl, tl)?;
                }
            }
        }
        _ => {
            return Err(usage("--src and --tgt must be given together"));
        }
    }

    let mut report = eval::evaluate(&hyps, &refs)?;
    if let Some(rv) = &rev {
        report.agreement = Some(eval::agreement_report(&hyps, rv, &refs)?);
    }

    println!("aer = {:.4}", report.metrics.aer);
    println!("precision = {:.4}", report.metrics.precision);
    println!("recall = {:.4}", report.metrics.recall);
    println!("f_measure = {:.4}", report.metrics.f_measure);
    println!("accuracy = {:.4}", report.nulls.accuracy());
    if let Some(agree) = &report.agreement {
        println!("agree_links = {}", agree.num_agree);
        println!("intersection_aer = {:.4}", agree.intersection_aer);
    }

    if let Some(dir) = out_dir {
        ensure_dir(&dir)?;
        let report_path = dir.join("report.tsv");
        let breakdown_path = dir.join("per_sentence.tsv");
        std::fs::write(&report_path, report.to_tsv())
            .map_err(|e| anyhow!(CoreError::io(&report_path, e)))?;
        std::fs::write(
            &breakdown_path,
            eval::EvalReport::per_sentence_tsv(&hyps, &refs)?,
        )
        .map_err(|e| anyhow!(CoreError::io(&breakdown_path, e)))?;
        let mut m = Manifest::new("evaluate");
        m.set("hyp", hyp_path.display());
        m.set("ref", ref_path.display());
        if let Some(p) = &rev_path {
            m.set("rev", p.display());
        }
        m.add_output(&report_path)?;
        m.add_output(&breakdown_path)?;
        m.write(&dir.join("manifest.txt"))?;
    }
    Ok(())
}

pub(crate) fn load_options(lowercase: bool, max_len: usize, marker: &Option<String>) -> LoadOptions {
    LoadOptions {
        max_len: if max_len == 0 { None } else { Some(max_len) },
        lowercase,
        marker: marker.clone(),
    }
}
