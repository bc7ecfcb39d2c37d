//! `train` and `align`: model directories hold the checkpoint, the two
//! vocabularies, a metadata sidecar, the training log and the manifest.

use crate::config::{meta_get, read_meta, write_meta, Manifest, UsageError};
use crate::{ensure_dir, load_config, load_options, required, AlignArgs, FamilyArg, TrainArgs};
use anyhow::{anyhow, Result};
use rayon::prelude::*;
use std::path::{Path, PathBuf};
use valign_core::classic::{self, HmmDecode, HmmParams, Ibm1Table};
use valign_core::corpus::alignment::{project_to_words, write_alignment, AlignmentSet};
use valign_core::corpus::{
    load_mono, load_parallel, load_parallel_with_vocabs, Sentence, Vocabulary,
};
use valign_core::error::CoreError;
use valign_core::neural::neural_em::{neural_em_train, EmissionNet, NeuralEmConfig, NeuralEmModel};
use valign_core::neural::train::{reconstruction_accuracy, vae_align, vae_train, TrainConfig};
use valign_core::neural::{
    Direction, Family, NoiseConfig, ObjectiveWeights, VaeConfig, VaeModel,
};
use valign_core::tensor::adam::AdamConfig;
use valign_core::tensor::checkpoint;
use valign_core::tensor::params::ParamSet;

fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(UsageError(msg.into()))
}

const TRAIN_KEYS: &[&str] = &[
    "src", "tgt", "out_dir", "family", "sp", "ac", "mono_tgt", "mono_src", "noise", "alpha",
    "beta", "gamma", "delta", "mu", "epochs", "batch_size", "max_len", "seed", "lr", "lowercase",
    "marker", "m_steps", "init_iters", "p_drop", "shuffle_k", "emb_dim", "hidden", "latent",
];

pub(crate) fn cmd_train(a: TrainArgs) -> Result<()> {
    let cfg = load_config(&a.config, TRAIN_KEYS)?;
    let src: PathBuf = required(&cfg, "src", a.src)?;
    let tgt: PathBuf = required(&cfg, "tgt", a.tgt)?;
    let out_dir: PathBuf = required(&cfg, "out_dir", a.out_dir)?;
    let family: FamilyArg = match a.family {
        Some(f) => f,
        None => match cfg.get("family") {
            Some("ibm1-count") => FamilyArg::Ibm1Count,
            Some("hmm-count") => FamilyArg::HmmCount,
            Some("ibm1-nn") => FamilyArg::Ibm1Nn,
            Some("hmm-nn") => FamilyArg::HmmNn,
            Some("ibm1-vae") => FamilyArg::Ibm1Vae,
            Some("hmm-vae") => FamilyArg::HmmVae,
            Some(other) => return Err(usage(format!("unknown family {:?}", other))),
            None => return Err(usage("missing required option --family")),
        },
    };
    let sp = cfg.resolve_flag("sp", a.sp)?;
    let ac = cfg.resolve_flag("ac", a.ac)?;
    let noise = cfg.resolve_flag("noise", a.noise)?;
    let lowercase = cfg.resolve_flag("lowercase", a.lowercase)?;
    let mono_tgt: Option<PathBuf> = match (&a.mono_tgt, cfg.get("mono_tgt")) {
        (Some(p), _) => Some(p.clone()),
        (None, Some(s)) => Some(PathBuf::from(s)),
        _ => None,
    };
    let mono_src: Option<PathBuf> = match (&a.mono_src, cfg.get("mono_src")) {
        (Some(p), _) => Some(p.clone()),
        (None, Some(s)) => Some(PathBuf::from(s)),
        _ => None,
    };
    let marker: Option<String> = match (&a.marker, cfg.get("marker")) {
        (Some(m), _) => Some(m.clone()),
        (None, Some(s)) => Some(s.to_string()),
        _ => None,
    };
    let weights = ObjectiveWeights {
        alpha: cfg.resolve("alpha", a.alpha, 10.0)?,
        beta: cfg.resolve("beta", a.beta, 50.0)?,
        gamma: cfg.resolve("gamma", a.gamma, 0.5)?,
        delta: cfg.resolve("delta", a.delta, 1.0)?,
        mu: cfg.resolve("mu", a.mu, 1.0)?,
    };
    let epochs = cfg.resolve("epochs", a.epochs, 10)?;
    let batch_size = cfg.resolve("batch_size", a.batch_size, 100)?;
    let max_len = cfg.resolve("max_len", a.max_len, 50)?;
    let seed = cfg.resolve("seed", a.seed, 1)?;
    let lr = cfg.resolve("lr", a.lr, 0.001)?;
    let m_steps = cfg.resolve("m_steps", a.m_steps, 50)?;
    let init_iters = cfg.resolve("init_iters", a.init_iters, 3)?;
    let p_drop = cfg.resolve("p_drop", a.p_drop, 0.1)?;
    let shuffle_k = cfg.resolve("shuffle_k", a.shuffle_k, 3)?;
    let emb_dim = cfg.resolve("emb_dim", a.emb_dim, 128)?;
    let hidden = cfg.resolve("hidden", a.hidden, 64)?;
    let latent = cfg.resolve("latent", a.latent, 64)?;

    let is_vae = matches!(family, FamilyArg::Ibm1Vae | FamilyArg::HmmVae);
    if (sp || ac) && !is_vae {
        return Err(usage("--sp/--ac apply to the VAE families only"));
    }
    if ac && !sp {
        return Err(usage("--ac requires --sp"));
    }
    if mono_src.is_some() && !sp {
        return Err(usage("--mono-src needs the +SP model (reverse encoder)"));
    }
    let have_mono = mono_tgt.is_some() || mono_src.is_some();
    if noise && !have_mono {
        return Err(usage("--noise requires monolingual data (--mono-tgt/--mono-src)"));
    }
    if have_mono && !is_vae {
        return Err(usage("monolingual objectives apply to the VAE families only"));
    }

    ensure_dir(&out_dir)?;
    let opts = load_options(lowercase, max_len, &marker);
    let mut corpus = load_parallel(&src, &tgt, &opts)?;
    let mut mono: Vec<(Direction, Sentence)> = Vec::new();
    if let Some(p) = &mono_tgt {
        for s in load_mono(p, &mut corpus.tgt_vocab, &opts)? {
            mono.push((Direction::Forward, s));
        }
    }
    if let Some(p) = &mono_src {
        for s in load_mono(p, &mut corpus.src_vocab, &opts)? {
            mono.push((Direction::Reverse, s));
        }
    }
    if corpus.pairs.is_empty() {
        return Err(anyhow!(CoreError::Data(
            "no training pairs survive the length filter".to_string()
        )));
    }

    let adam = AdamConfig {
        lr,
        ..Default::default()
    };
    let ckpt_path = out_dir.join("model.ckpt");
    let log_path = out_dir.join("log.tsv");

    match family {
        FamilyArg::Ibm1Count => {
            let (table, trace) = classic::train_ibm1(
                &corpus.pairs,
                corpus.tgt_vocab.len(),
                corpus.src_vocab.len(),
                epochs,
            );
            let mut ps = ParamSet::new();
            ps.add("t", table.t);
            checkpoint::save(&ps, &ckpt_path)?;
            write_ll_log(&log_path, &trace)?;
        }
        FamilyArg::HmmCount => {
            let (params, trace) = classic::train_hmm(
                &corpus.pairs,
                corpus.tgt_vocab.len(),
                corpus.src_vocab.len(),
                init_iters,
                epochs,
            );
            let mut ps = ParamSet::new();
            ps.add("t", params.emission);
            ps.add("jump", params.jump);
            checkpoint::save(&ps, &ckpt_path)?;
            write_ll_log(&log_path, &trace)?;
        }
        FamilyArg::Ibm1Nn | FamilyArg::HmmNn => {
            let nn_cfg = NeuralEmConfig {
                family: if family == FamilyArg::Ibm1Nn {
                    Family::Ibm1
                } else {
                    Family::Hmm
                },
                iterations: epochs,
                m_steps,
                adam,
                emb_dim,
                hidden,
                seed,
            };
            let (model, trace) = neural_em_train(
                &corpus.pairs,
                corpus.tgt_vocab.len(),
                corpus.src_vocab.len(),
                &nn_cfg,
            )?;
            let mut ps = model.net.params.clone();
            if let Some(j) = &model.jump {
                ps.add("jump", j.clone());
            }
            checkpoint::save(&ps, &ckpt_path)?;
            let mut body = String::from("iteration\tloglik\tcdll_first\tcdll_last\n");
            for (n, it) in trace.iter().enumerate() {
                body.push_str(&format!(
                    "{}\t{:.6}\t{:.6}\t{:.6}\n",
                    n + 1,
                    it.loglik,
                    it.cdll_first,
                    it.cdll_last
                ));
            }
            std::fs::write(&log_path, body).map_err(|e| anyhow!(CoreError::io(&log_path, e)))?;
        }
        FamilyArg::Ibm1Vae | FamilyArg::HmmVae => {
            let mut vae_cfg = VaeConfig::new(
                if family == FamilyArg::Ibm1Vae {
                    Family::Ibm1
                } else {
                    Family::Hmm
                },
                corpus.src_vocab.len(),
                corpus.tgt_vocab.len(),
            );
            vae_cfg.emb_dim = emb_dim;
            vae_cfg.hidden = hidden;
            vae_cfg.latent = latent;
            vae_cfg.shared = sp;
            let mut model = VaeModel::seeded(vae_cfg, seed);
            let tc = TrainConfig {
                epochs,
                batch_size,
                adam,
                seed,
                weights,
                agreement: ac,
                mono: have_mono,
                mono_noise: noise.then_some(NoiseConfig {
                    p_drop,
                    shuffle_k,
                }),
                grad_clip: 5.0,
            };
            let stats = vae_train(&mut model, &corpus.pairs, &mono, &tc)?;
            checkpoint::save(&model.params, &ckpt_path)?;
            let mut body =
                valign_core::neural::train::EpochStats::tsv_header().to_owned() + "\n";
            for s in &stats {
                body.push_str(&s.to_tsv_row());
                body.push('\n');
            }
            std::fs::write(&log_path, body).map_err(|e| anyhow!(CoreError::io(&log_path, e)))?;
        }
    }

    let src_vocab_path = out_dir.join("src.vocab");
    let tgt_vocab_path = out_dir.join("tgt.vocab");
    corpus.src_vocab.save(&src_vocab_path)?;
    corpus.tgt_vocab.save(&tgt_vocab_path)?;
    let meta_path = out_dir.join("model.meta");
    write_meta(
        &meta_path,
        &[
            ("kind", family.as_str().to_string()),
            ("src_vocab", corpus.src_vocab.len().to_string()),
            ("tgt_vocab", corpus.tgt_vocab.len().to_string()),
            ("emb_dim", emb_dim.to_string()),
            ("hidden", hidden.to_string()),
            ("latent", latent.to_string()),
            ("shared", sp.to_string()),
            ("marker", marker.clone().unwrap_or_default()),
            ("lowercase", lowercase.to_string()),
            ("seed", seed.to_string()),
        ],
    )?;

    let mut m = Manifest::new("train");
    m.set("family", family.as_str());
    m.set("src", src.display());
    m.set("tgt", tgt.display());
    m.set("sp", sp);
    m.set("ac", ac);
    m.set("mono", have_mono);
    m.set("noise", noise);
    m.set("alpha", weights.alpha);
    m.set("beta", weights.beta);
    m.set("gamma", weights.gamma);
    m.set("delta", weights.delta);
    m.set("mu", weights.mu);
    m.set("epochs", epochs);
    m.set("batch_size", batch_size);
    m.set("max_len", max_len);
    m.set("seed", seed);
    m.set("lr", lr);
    m.set("pairs", corpus.pairs.len());
    for p in [&ckpt_path, &log_path, &src_vocab_path, &tgt_vocab_path, &meta_path] {
        m.add_output(p)?;
    }
    m.write(&out_dir.join("manifest.txt"))?;
    println!(
        "train: {} on {} pairs -> {}",
        family.as_str(),
        corpus.pairs.len(),
        out_dir.display()
    );
    Ok(())
}

enum LoadedModel {
    Ibm1(Ibm1Table),
    Hmm(HmmParams),
    Nn(NeuralEmModel),
    Vae(Box<VaeModel>),
}

fn load_model(dir: &Path) -> Result<(LoadedModel, Vocabulary, Vocabulary, Option<String>)> {
    let meta = read_meta(&dir.join("model.meta"))?;
    let kind = meta_get(&meta, "kind")?.to_string();
    let src_vocab = Vocabulary::load(dir.join("src.vocab"))?;
    let tgt_vocab = Vocabulary::load(dir.join("tgt.vocab"))?;
    let marker = match meta_get(&meta, "marker")? {
        "" => None,
        m => Some(m.to_string()),
    };
    let params = checkpoint::load(dir.join("model.ckpt"))?;
    let missing = |name: &str| CoreError::Data(format!("checkpoint is missing tensor {name:?}"));
    let model = match kind.as_str() {
        "ibm1-count" => LoadedModel::Ibm1(Ibm1Table {
            t: params.by_name("t").ok_or_else(|| missing("t"))?.clone(),
        }),
        "hmm-count" => LoadedModel::Hmm(HmmParams::new(
            params.by_name("t").ok_or_else(|| missing("t"))?.clone(),
            params.by_name("jump").ok_or_else(|| missing("jump"))?.clone(),
        )),
        "ibm1-nn" | "hmm-nn" => {
            let jump = params.by_name("jump").cloned();
            let net = EmissionNet::from_params(params)?;
            LoadedModel::Nn(NeuralEmModel {
                net,
                family: if kind == "ibm1-nn" {
                    Family::Ibm1
                } else {
                    Family::Hmm
                },
                jump,
            })
        }
        "ibm1-vae" | "hmm-vae" => {
            let mut cfg = VaeConfig::new(
                if kind == "ibm1-vae" {
                    Family::Ibm1
                } else {
                    Family::Hmm
                },
                meta_get(&meta, "src_vocab")?.parse()?,
                meta_get(&meta, "tgt_vocab")?.parse()?,
            );
            cfg.emb_dim = meta_get(&meta, "emb_dim")?.parse()?;
            cfg.hidden = meta_get(&meta, "hidden")?.parse()?;
            cfg.latent = meta_get(&meta, "latent")?.parse()?;
            cfg.shared = meta_get(&meta, "shared")?.parse()?;
            LoadedModel::Vae(Box::new(VaeModel::from_params(cfg, params)?))
        }
        other => {
            return Err(anyhow!(CoreError::Data(format!(
                "unknown model kind {:?}",
                other
            ))))
        }
    };
    Ok((model, src_vocab, tgt_vocab, marker))
}

pub(crate) fn cmd_align(a: AlignArgs) -> Result<()> {
    const KEYS: &[&str] = &[
        "model_dir",
        "src",
        "tgt",
        "out",
        "direction",
        "posterior_argmax",
        "raw",
        "r_acc",
    ];
    let cfg = load_config(&a.config, KEYS)?;
    let model_dir: PathBuf = required(&cfg, "model_dir", a.model_dir)?;
    let src: PathBuf = required(&cfg, "src", a.src)?;
    let tgt: PathBuf = required(&cfg, "tgt", a.tgt)?;
    let out: PathBuf = required(&cfg, "out", a.out)?;
    let direction: String = cfg.resolve("direction", a.direction, "fwd".to_string())?;
    let posterior_argmax = cfg.resolve_flag("posterior_argmax", a.posterior_argmax)?;
    let raw = cfg.resolve_flag("raw", a.raw)?;
    let want_r_acc = cfg.resolve_flag("r_acc", a.r_acc)?;

    let dir = match direction.as_str() {
        "fwd" => Direction::Forward,
        "rev" => Direction::Reverse,
        other => return Err(usage(format!("--direction must be fwd or rev, got {:?}", other))),
    };

    let (model, src_vocab, tgt_vocab, marker) = load_model(&model_dir)?;
    let meta = read_meta(&model_dir.join("model.meta"))?;
    let lowercase: bool = meta_get(&meta, "lowercase")?.parse().unwrap_or(false);
    let opts = load_options(lowercase, 0, &marker);
    let pairs = load_parallel_with_vocabs(&src, &tgt, &src_vocab, &tgt_vocab, &opts)?;

    if dir == Direction::Reverse && !matches!(model, LoadedModel::Vae(_)) {
        return Err(usage(
            "--direction rev needs a +SP VAE model; train directional models on swapped files instead",
        ));
    }

    let mode = if posterior_argmax {
        HmmDecode::PosteriorArgmax
    } else {
        HmmDecode::Viterbi
    };
    let sets: Vec<AlignmentSet> = match &model {
        LoadedModel::Ibm1(table) => pairs
            .par_iter()
            .map(|(s, t)| classic::decode_ibm1(table, s, t))
            .collect(),
        LoadedModel::Hmm(params) => pairs
            .par_iter()
            .map(|(s, t)| classic::decode_hmm(params, s, t, mode))
            .collect(),
        LoadedModel::Nn(nn) => {
            // Materialize the table once; decoding is then embarrassingly
            // parallel like the count-based models.
            let table = nn.net.table();
            match nn.family {
                Family::Ibm1 => pairs
                    .par_iter()
                    .map(|(s, t)| classic::decode_ibm1(&table, s, t))
                    .collect(),
                Family::Hmm => {
                    let params =
                        HmmParams::new(table.t, nn.jump.clone().expect("hmm-nn without jump"));
                    pairs
                        .par_iter()
                        .map(|(s, t)| classic::decode_hmm(&params, s, t, mode))
                        .collect()
                }
            }
        }
        LoadedModel::Vae(vm) => {
            let results: Vec<_> = pairs
                .par_iter()
                .map(|(s, t)| vae_align(vm, dir, s, t))
                .collect();
            results.into_iter().collect::<Result<Vec<_>, _>>()?
        }
    };

    // Subword models report word-level links unless --raw is given.
    let sets = if marker.is_some() && !raw {
        let mut projected = Vec::with_capacity(sets.len());
        for (set, (s, t)) in sets.iter().zip(&pairs) {
            // In the reverse direction the hypothesis "source" side is the
            // target language.
            let (a_spans, b_spans) = match dir {
                Direction::Forward => (&s.word_spans, &t.word_spans),
                Direction::Reverse => (&t.word_spans, &s.word_spans),
            };
            projected.push(project_to_words(set, a_spans, b_spans)?);
        }
        projected
    } else {
        sets
    };

    write_alignment(&out, &sets)?;
    let mut m = Manifest::new("align");
    m.set("model_dir", model_dir.display());
    m.set("src", src.display());
    m.set("tgt", tgt.display());
    m.set("direction", &direction);
    m.set("posterior_argmax", posterior_argmax);
    m.set("raw", raw);

    if want_r_acc {
        let LoadedModel::Vae(vm) = &model else {
            return Err(usage("--r-acc applies to VAE models only"));
        };
        let encoded: Vec<&Sentence> = pairs
            .iter()
            .map(|(s, t)| match dir {
                Direction::Forward => t,
                Direction::Reverse => s,
            })
            .collect();
        let r = reconstruction_accuracy(vm, dir, &encoded)?;
        println!("r_acc = {:.4}", r);
        m.set("r_acc", format!("{:.6}", r));
    }
    m.add_output(&out)?;
    m.write(&out.with_extension("manifest"))?;
    Ok(())
}

fn write_ll_log(path: &Path, trace: &[f64]) -> Result<()> {
    let mut body = String::from("iteration\tloglik\n");
    for (n, ll) in trace.iter().enumerate() {
        body.push_str(&format!("{}\t{:.6}\n", n + 1, ll));
    }
    std::fs::write(path, body).map_err(|e| anyhow!(CoreError::io(path, e)))
}
