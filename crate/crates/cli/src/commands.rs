//! The four commands: synthetic data generation, subject-specific
//! training, subject-adaptive (federated) training, and the Riemannian
//! baselines. All outputs are deterministic for a fixed config + seed.

use crate::config::Config;
use anyhow::{bail, Context, Result};
use ftl_core::baselines::{mdm_predict, mdm_train, tsm_predict, tsm_train};
use ftl_core::data::{
    load_trials, make_folds, save_trials, select_channels, synth_generate, FoldAssignment,
    SynthSpec, TrialSet,
};
use ftl_core::federated::{run_federated_training, ClientState, FedConfig, ServerState};
use ftl_core::layers::{DenseLayer, ModelParams};
use ftl_core::losses::LossWeights;
use ftl_core::optim::{evaluate, train, Schedule, StopReason};
use ftl_core::spd::{covariance_with, spd_exp};
use ftl_core::{Matrix, SpdMat, SymMat};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

/// Independent RNG stream per (seed, purpose) pair.
fn sub_seed(seed: u64, stream: u64) -> u64 {
    seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15).rotate_left(17)
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Restrict a trial set to the channel count the layer chain expects.
/// Explicit indices win; otherwise a wider recording is cut down to its
/// first `want` channels with a warning.
fn prepare_channels(
    set: &TrialSet,
    explicit: Option<&[usize]>,
    want: usize,
) -> Result<TrialSet> {
    if let Some(indices) = explicit {
        let selected = select_channels(set, indices)?;
        if selected.channels() != want {
            bail!(
                "data.channels selects {} channels but the layer chain expects {want}",
                selected.channels()
            );
        }
        return Ok(selected);
    }
    if set.channels() == want {
        return Ok(set.clone());
    }
    if set.channels() > want {
        eprintln!(
            "warning: subject '{}' has {} channels, chain expects {want}; \
             using the first {want} (set data.channels to override)",
            set.subject,
            set.channels()
        );
        let indices: Vec<usize> = (0..want).collect();
        return Ok(select_channels(set, &indices)?);
    }
    bail!(
        "subject '{}' has {} channels but the layer chain expects {want}",
        set.subject,
        set.channels()
    );
}

/// Shrinkage-regularized spatial covariance of every trial.
fn covariances(set: &TrialSet, shrinkage: f64) -> Result<Vec<(SpdMat, usize)>> {
    set.trials
        .iter()
        .map(|t| Ok((covariance_with(&t.signal, shrinkage)?, t.label)))
        .collect()
}

fn fold_file(out: &Path) -> std::path::PathBuf {
    out.join("folds.csv")
}

/// Load a persisted fold assignment if present (so every algorithm in a
/// comparison run uses identical splits), otherwise create and save one.
fn load_or_make_folds(out: &Path, set: &TrialSet, config: &Config, seed: u64) -> Result<FoldAssignment> {
    let path = fold_file(out);
    if path.exists() {
        let text = std::fs::read_to_string(&path)
            .with_context(|| format!("reading {}", path.display()))?;
        let mut assignment = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if i == 0 {
                if line != "trial,fold" {
                    bail!("{}: unexpected header {line:?}", path.display());
                }
                continue;
            }
            let (trial, fold) = line
                .split_once(',')
                .with_context(|| format!("{} line {}: malformed row", path.display(), i + 1))?;
            let trial: usize = trial.parse()?;
            if trial != i - 1 {
                bail!("{} line {}: rows out of order", path.display(), i + 1);
            }
            assignment.push(fold.trim().parse::<usize>()?);
        }
        if assignment.len() != set.len() {
            bail!(
                "{} describes {} trials but the data has {}",
                path.display(),
                assignment.len(),
                set.len()
            );
        }
        return Ok(FoldAssignment {
            assignment,
            n_folds: config.cv.folds,
            seed,
        });
    }
    let folds = make_folds(set, config.cv.folds, seed, config.cv.stratified)?;
    let mut text = String::from("trial,fold\n");
    for (trial, fold) in folds.assignment.iter().enumerate() {
        writeln!(text, "{trial},{fold}").unwrap();
    }
    std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(folds)
}

fn schedule_of(config: &Config) -> Result<Schedule> {
    Ok(Schedule::new(
        config.train.lr0,
        config.train.decay_rate,
        config.train.decay_start_epoch,
        config.train.max_epochs,
        config.train.stop_loss,
    )?)
}

fn write_out(out: &Path, name: &str, text: &str) -> Result<()> {
    let path = out.join(name);
    std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn subset(covs: &[(SpdMat, usize)], indices: &[usize]) -> Vec<(SpdMat, usize)> {
    indices.iter().map(|&i| covs[i].clone()).collect()
}

pub fn cmd_synth(config: &Config, seed: u64, out: &Path) -> Result<()> {
    let s = &config.synth;
    let base_seed = s.base_seed.unwrap_or(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(base_seed, 1));
    let class_bases: Vec<SpdMat> = (0..s.n_classes)
        .map(|_| {
            let g = Matrix::from_fn(s.channels, s.channels, |_, _| {
                rng.sample::<f64, _>(StandardNormal) * s.separation
            });
            Ok(spd_exp(&SymMat::new(g)?)?)
        })
        .collect::<Result<_>>()?;
    let spec = SynthSpec {
        class_bases,
        spread: s.spread,
        trials_per_class: s.trials_per_class,
        samples: s.samples,
    };
    let mut set = synth_generate(&spec, &s.subject, sub_seed(seed, 2))?;
    if let Some(keep) = s.keep_channels {
        if keep == 0 || keep > s.channels {
            bail!("synth.keep_channels must be in 1..={}", s.channels);
        }
        let indices: Vec<usize> = (0..keep).collect();
        set = select_channels(&set, &indices)?;
    }
    let path = out.join(format!("{}.eeg", s.subject));
    save_trials(&set, &path)?;
    println!(
        "wrote {} ({} trials, {} channels, {} classes)",
        path.display(),
        set.len(),
        set.channels(),
        set.n_classes
    );
    Ok(())
}

pub fn cmd_train_specific(config: &Config, seed: u64, out: &Path) -> Result<()> {
    let started = Instant::now();
    let path = config
        .data
        .subject
        .as_ref()
        .context("train-specific requires data.subject")?;
    let raw = load_trials(path)?;
    let set = prepare_channels(&raw, config.data.channels.as_deref(), config.model.chain[0])?;
    let covs = covariances(&set, config.train.shrinkage)?;
    let folds = load_or_make_folds(out, &set, config, seed)?;
    let schedule = schedule_of(config)?;
    let run = format!("specific-{seed}");

    let mut csv = String::from("run,subject,fold,epoch,lr,loss,accuracy\n");
    let mut fold_accs = Vec::new();
    for fold in 0..folds.n_folds {
        let train_data = subset(&covs, &folds.train_indices(fold));
        let test_data = subset(&covs, &folds.test_indices(fold));
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, 100 + fold as u64));
        let mut params =
            ModelParams::init(&config.model.chain, config.model.n_classes, &mut rng)?;
        params.clamp_eps = config.model.clamp_eps;
        let report = train(
            &mut params,
            &train_data,
            config.model.n_classes,
            &schedule,
            config.model.stiefel,
        )?;
        for r in &report.epochs {
            writeln!(
                csv,
                "{run},{},{fold},{},{},{},{}",
                set.subject, r.epoch, r.lr, r.loss, r.accuracy
            )
            .unwrap();
        }
        if report.stop == StopReason::MaxEpochs {
            eprintln!(
                "warning: fold {fold} hit the epoch cap at loss {:.6}",
                report.final_loss()
            );
        }
        let acc = evaluate(&params, &test_data)?;
        fold_accs.push(acc);
    }
    write_out(out, "specific_metrics.csv", &csv)?;

    let (mean, std) = mean_std(&fold_accs);
    let mut summary = format!("run {run}\nsubject {}\nfolds {}\n", set.subject, folds.n_folds);
    for (fold, acc) in fold_accs.iter().enumerate() {
        writeln!(summary, "fold {fold} accuracy {acc:.6}").unwrap();
    }
    writeln!(summary, "mean {mean:.6}\nstd {std:.6}").unwrap();
    write_out(out, "specific_summary.txt", &summary)?;
    println!(
        "subject-specific CV accuracy {mean:.4} ± {std:.4} ({:.2?})",
        started.elapsed()
    );
    Ok(())
}

pub fn cmd_train_adaptive(config: &Config, seed: u64, out: &Path) -> Result<()> {
    let started = Instant::now();
    let source_path = config
        .data
        .source
        .as_ref()
        .context("train-adaptive requires data.source")?;
    let target_path = config
        .data
        .target
        .as_ref()
        .context("train-adaptive requires data.target")?;
    let source_chain = &config.model.source_chain;
    let target_chain = &config.model.target_chain;
    if source_chain.last() != target_chain.last() {
        bail!(
            "incompatible common-space dims: source chain ends at {}, target at {}",
            source_chain.last().unwrap(),
            target_chain.last().unwrap()
        );
    }
    let source_raw = load_trials(source_path)?;
    let target_raw = load_trials(target_path)?;
    let source = prepare_channels(&source_raw, config.data.channels.as_deref(), source_chain[0])?;
    let target = prepare_channels(&target_raw, None, target_chain[0])?;
    if source.n_classes != target.n_classes || source.n_classes != config.model.n_classes {
        bail!("source, target, and model.n_classes must agree");
    }
    let n_classes = config.model.n_classes;
    let common = *source_chain.last().unwrap();
    let source_covs = covariances(&source, config.train.shrinkage)?;
    let target_covs = covariances(&target, config.train.shrinkage)?;
    let folds = load_or_make_folds(out, &target, config, seed)?;
    let schedule = schedule_of(config)?;
    let weights = LossWeights::uniform(2, n_classes, config.federated.lambda)?;
    let fed = FedConfig {
        local_epochs: config.federated.local_epochs,
        max_rounds: config.federated.max_rounds,
        stop_loss: config.federated.stop_loss,
        weights,
        sigma: config.federated.sigma,
    };
    let run = format!("adaptive-{seed}");

    let mut csv = String::from("run,fold,round,client,loss,accuracy\n");
    let mut fold_accs = Vec::new();
    for fold in 0..folds.n_folds {
        let target_train = subset(&target_covs, &folds.train_indices(fold));
        let target_test = subset(&target_covs, &folds.test_indices(fold));

        let base = 1000 + 10 * fold as u64;
        let mut rng_s = ChaCha8Rng::seed_from_u64(sub_seed(seed, base));
        let mut rng_t = ChaCha8Rng::seed_from_u64(sub_seed(seed, base + 1));
        let mut rng_g = ChaCha8Rng::seed_from_u64(sub_seed(seed, base + 2));
        let mut params_s = ModelParams::init(source_chain, n_classes, &mut rng_s)?;
        let mut params_t = ModelParams::init(target_chain, n_classes, &mut rng_t)?;
        params_s.clamp_eps = config.model.clamp_eps;
        params_t.clamp_eps = config.model.clamp_eps;
        let global = DenseLayer::init_small(n_classes, common * common, &mut rng_g);

        let mut clients = vec![
            ClientState::new(
                0,
                source_covs.clone(),
                n_classes,
                params_s,
                schedule.clone(),
                config.model.stiefel,
            )?,
            ClientState::new(
                1,
                target_train,
                n_classes,
                params_t,
                schedule.clone(),
                config.model.stiefel,
            )?,
        ];
        let mut server = ServerState::new(global, vec![0, 1])?;
        let history = run_federated_training(&mut server, &mut clients, &fed)?;
        for report in &history {
            for c in &report.clients {
                writeln!(
                    csv,
                    "{run},{fold},{},{},{},{}",
                    report.round, c.client_id, c.loss, c.accuracy
                )
                .unwrap();
            }
        }
        let acc = evaluate(&clients[1].params, &target_test)?;
        fold_accs.push(acc);
    }
    write_out(out, "adaptive_metrics.csv", &csv)?;

    let (mean, std) = mean_std(&fold_accs);
    let mut summary = format!(
        "run {run}\nsource {}\ntarget {}\nfolds {}\n",
        source.subject, target.subject, folds.n_folds
    );
    for (fold, acc) in fold_accs.iter().enumerate() {
        writeln!(summary, "fold {fold} accuracy {acc:.6}").unwrap();
    }
    writeln!(summary, "mean {mean:.6}\nstd {std:.6}").unwrap();
    write_out(out, "adaptive_summary.txt", &summary)?;
    println!(
        "subject-adaptive target CV accuracy {mean:.4} ± {std:.4} ({:.2?})",
        started.elapsed()
    );
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Baseline {
    Mdm,
    Tsm,
}

impl Baseline {
    pub fn name(self) -> &'static str {
        match self {
            Baseline::Mdm => "mdm",
            Baseline::Tsm => "tsm",
        }
    }
}

pub fn cmd_baseline(config: &Config, algorithm: Baseline, seed: u64, out: &Path) -> Result<()> {
    let started = Instant::now();
    let path = config
        .data
        .subject
        .as_ref()
        .context("baseline requires data.subject")?;
    let raw = load_trials(path)?;
    let set = prepare_channels(&raw, config.data.channels.as_deref(), config.model.chain[0])?;
    let covs = covariances(&set, config.train.shrinkage)?;
    let folds = load_or_make_folds(out, &set, config, seed)?;
    let n_classes = config.model.n_classes;
    let run = format!("{}-{seed}", algorithm.name());

    let mut csv = String::from("run,subject,fold,accuracy\n");
    let mut fold_accs = Vec::new();
    for fold in 0..folds.n_folds {
        let train_data = subset(&covs, &folds.train_indices(fold));
        let test_data = subset(&covs, &folds.test_indices(fold));
        let (train_covs, train_labels): (Vec<SpdMat>, Vec<usize>) =
            train_data.into_iter().unzip();
        let correct: usize = match algorithm {
            Baseline::Mdm => {
                let model = mdm_train(&train_covs, &train_labels, n_classes)?;
                test_data
                    .iter()
                    .map(|(c, l)| Ok(usize::from(mdm_predict(&model, c)? == *l)))
                    .sum::<Result<usize>>()?
            }
            Baseline::Tsm => {
                let model = tsm_train(&train_covs, &train_labels, n_classes)?;
                test_data
                    .iter()
                    .map(|(c, l)| Ok(usize::from(tsm_predict(&model, c)? == *l)))
                    .sum::<Result<usize>>()?
            }
        };
        let acc = correct as f64 / test_data.len() as f64;
        writeln!(csv, "{run},{},{fold},{acc}", set.subject).unwrap();
        fold_accs.push(acc);
    }
    write_out(out, &format!("baseline_{}_metrics.csv", algorithm.name()), &csv)?;

    let (mean, std) = mean_std(&fold_accs);
    let mut summary = format!(
        "run {run}\nsubject {}\nfolds {}\n",
        set.subject, folds.n_folds
    );
    for (fold, acc) in fold_accs.iter().enumerate() {
        writeln!(summary, "fold {fold} accuracy {acc:.6}").unwrap();
    }
    writeln!(summary, "mean {mean:.6}\nstd {std:.6}").unwrap();
    write_out(
        out,
        &format!("baseline_{}_summary.txt", algorithm.name()),
        &summary,
    )?;
    println!(
        "{} CV accuracy {mean:.4} ± {std:.4} ({:.2?})",
        algorithm.name(),
        started.elapsed()
    );
    Ok(())
}
