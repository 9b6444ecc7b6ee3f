//! Trial ingestion from the `EEGTRIALS v1` flat file format, channel
//! selection, fold management, and synthetic SPD/EEG data generation.
//!
//! Format: line 1 `EEGTRIALS v1`, line 2
//! `subject=<id> trials=<N> channels=<E> samples=<D> classes=<K>`,
//! then N records of (u16 label, E·D little-endian f64 row-major).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::spd::{spd_log, spd_sqrt_pair};
use crate::{Matrix, SpdMat, SymMat};

const MAGIC_LINE: &str = "EEGTRIALS v1";

/// One short-time segment trial: E channels × D samples plus a label.
#[derive(Debug, Clone, PartialEq)]
pub struct EegTrial {
    pub signal: Matrix,
    pub label: usize,
}

impl EegTrial {
    pub fn channels(&self) -> usize {
        self.signal.rows()
    }

    pub fn samples(&self) -> usize {
        self.signal.cols()
    }
}

/// A subject's trials with a common channel count and class count.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialSet {
    pub subject: String,
    pub trials: Vec<EegTrial>,
    pub n_classes: usize,
}

impl TrialSet {
    pub fn new(subject: String, trials: Vec<EegTrial>, n_classes: usize) -> Result<Self> {
        if trials.is_empty() {
            return Err(Error::EmptyInput("trial set".into()));
        }
        let e = trials[0].channels();
        for (i, t) in trials.iter().enumerate() {
            if t.channels() != e {
                return Err(Error::Format {
                    location: format!("trial {i}"),
                    message: format!("channel count {} differs from {}", t.channels(), e),
                });
            }
            if t.channels() < 1 || t.samples() < 2 {
                return Err(Error::Format {
                    location: format!("trial {i}"),
                    message: "need E >= 1 and D >= 2".into(),
                });
            }
            if !t.signal.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("trial {i} signal"),
                });
            }
            if t.label >= n_classes {
                return Err(Error::LabelOutOfRange {
                    label: t.label,
                    classes: n_classes,
                });
            }
        }
        Ok(TrialSet {
            subject,
            trials,
            n_classes,
        })
    }

    pub fn channels(&self) -> usize {
        self.trials[0].channels()
    }

    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }
}

/// Read a trial set from the v1 format, validating all invariants.
pub fn load_trials(path: &Path) -> Result<TrialSet> {
    let file = File::open(path)?;
    let mut reader = BufReader::new(file);

    let line1 = read_line(&mut reader, "line 1")?;
    if line1 != MAGIC_LINE {
        return Err(Error::Format {
            location: "line 1".into(),
            message: format!("expected `{MAGIC_LINE}`, got `{line1}`"),
        });
    }
    let line2 = read_line(&mut reader, "line 2")?;
    let mut subject = None;
    let mut n_trials = None;
    let mut channels = None;
    let mut samples = None;
    let mut classes = None;
    for token in line2.split_whitespace() {
        let (key, value) = token.split_once('=').ok_or_else(|| Error::Format {
            location: "line 2".into(),
            message: format!("expected key=value, got `{token}`"),
        })?;
        match key {
            "subject" => subject = Some(value.to_string()),
            "trials" => n_trials = Some(parse_usize(value, "trials")?),
            "channels" => channels = Some(parse_usize(value, "channels")?),
            "samples" => samples = Some(parse_usize(value, "samples")?),
            "classes" => classes = Some(parse_usize(value, "classes")?),
            other => {
                return Err(Error::Format {
                    location: "line 2".into(),
                    message: format!("unknown header key `{other}`"),
                })
            }
        }
    }
    let missing = |name: &str| Error::Format {
        location: "line 2".into(),
        message: format!("missing header key `{name}`"),
    };
    let subject = subject.ok_or_else(|| missing("subject"))?;
    let n_trials = n_trials.ok_or_else(|| missing("trials"))?;
    let e = channels.ok_or_else(|| missing("channels"))?;
    let d = samples.ok_or_else(|| missing("samples"))?;
    let k = classes.ok_or_else(|| missing("classes"))?;

    let mut trials = Vec::with_capacity(n_trials);
    for rec in 0..n_trials {
        let mut label_buf = [0u8; 2];
        reader.read_exact(&mut label_buf).map_err(|_| Error::Format {
            location: format!("record {rec}"),
            message: "truncated label".into(),
        })?;
        let label = u16::from_le_bytes(label_buf) as usize;
        if label >= k {
            return Err(Error::LabelOutOfRange { label, classes: k });
        }
        let mut values = vec![0.0f64; e * d];
        for (offset, v) in values.iter_mut().enumerate() {
            let mut buf = [0u8; 8];
            reader.read_exact(&mut buf).map_err(|_| Error::Format {
                location: format!("record {rec}, value {offset}"),
                message: "truncated sample data".into(),
            })?;
            *v = f64::from_le_bytes(buf);
            if !v.is_finite() {
                return Err(Error::Format {
                    location: format!("record {rec}, value {offset}"),
                    message: format!("non-finite sample {v}"),
                });
            }
        }
        trials.push(EegTrial {
            signal: Matrix::from_vec(e, d, values),
            label,
        });
    }
    TrialSet::new(subject, trials, k)
}

/// Write a trial set in the v1 format; `load_trials` restores it bitwise.
pub fn save_trials(set: &TrialSet, path: &Path) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    writeln!(w, "{MAGIC_LINE}")?;
    writeln!(
        w,
        "subject={} trials={} channels={} samples={} classes={}",
        set.subject,
        set.len(),
        set.channels(),
        set.trials[0].samples(),
        set.n_classes
    )?;
    for t in &set.trials {
        w.write_all(&(t.label as u16).to_le_bytes())?;
        for v in t.signal.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_line(reader: &mut impl Read, location: &str) -> Result<String> {
    let mut line = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        match reader.read_exact(&mut byte) {
            Ok(()) if byte[0] == b'\n' => break,
            Ok(()) => line.push(byte[0]),
            Err(_) => {
                return Err(Error::Format {
                    location: location.into(),
                    message: "unexpected end of file".into(),
                })
            }
        }
    }
    String::from_utf8(line).map_err(|_| Error::Format {
        location: location.into(),
        message: "header is not valid UTF-8".into(),
    })
}

fn parse_usize(value: &str, key: &str) -> Result<usize> {
    value.parse().map_err(|_| Error::Format {
        location: "line 2".into(),
        message: format!("invalid {key} value `{value}`"),
    })
}

/// Restrict and reorder trial rows to the given channel indices.
pub fn select_channels(set: &TrialSet, indices: &[usize]) -> Result<TrialSet> {
    let e = set.channels();
    let mut seen = vec![false; e];
    for &idx in indices {
        if idx >= e {
            return Err(Error::Domain(format!(
                "channel index {idx} out of range for {e} channels"
            )));
        }
        if seen[idx] {
            return Err(Error::Domain(format!("duplicate channel index {idx}")));
        }
        seen[idx] = true;
    }
    let trials = set
        .trials
        .iter()
        .map(|t| EegTrial {
            signal: Matrix::from_fn(indices.len(), t.samples(), |i, j| {
                t.signal[(indices[i], j)]
            }),
            label: t.label,
        })
        .collect();
    TrialSet::new(set.subject.clone(), trials, set.n_classes)
}

/// Fold index per trial plus the seed that produced the assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldAssignment {
    pub assignment: Vec<usize>,
    pub n_folds: usize,
    pub seed: u64,
}

impl FoldAssignment {
    /// Trial indices outside fold `k` (the training split).
    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignment.len())
            .filter(|&i| self.assignment[i] != fold)
            .collect()
    }

    /// Trial indices inside fold `k` (the held-out split).
    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignment.len())
            .filter(|&i| self.assignment[i] == fold)
            .collect()
    }
}

/// Seeded shuffle then round-robin assignment, stratified by class so
/// each fold sees every class where counts allow.
pub fn make_folds(
    set: &TrialSet,
    n_folds: usize,
    seed: u64,
    stratified: bool,
) -> Result<FoldAssignment> {
    if set.len() < n_folds {
        return Err(Error::Domain(format!(
            "cannot split {} trials into {} folds",
            set.len(),
            n_folds
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![0usize; set.len()];
    let mut counter = 0usize;
    if stratified {
        for class in 0..set.n_classes {
            let mut indices: Vec<usize> = (0..set.len())
                .filter(|&i| set.trials[i].label == class)
                .collect();
            shuffle(&mut indices, &mut rng);
            for i in indices {
                assignment[i] = counter % n_folds;
                counter += 1;
            }
        }
    } else {
        let mut indices: Vec<usize> = (0..set.len()).collect();
        shuffle(&mut indices, &mut rng);
        for i in indices {
            assignment[i] = counter % n_folds;
            counter += 1;
        }
    }
    Ok(FoldAssignment {
        assignment,
        n_folds,
        seed,
    })
}

/// Fisher-Yates with a fixed draw order.
fn shuffle(indices: &mut [usize], rng: &mut ChaCha8Rng) {
    for i in (1..indices.len()).rev() {
        let j = rng.gen_range(0..=i);
        indices.swap(i, j);
    }
}

/// Per-class generator description for synthetic trials.
#[derive(Debug, Clone)]
pub struct SynthSpec {
    /// Ground-truth covariance of each class.
    pub class_bases: Vec<SpdMat>,
    /// Scale of the symmetric Gaussian perturbation in log-space.
    pub spread: f64,
    pub trials_per_class: usize,
    /// Samples per trial (D).
    pub samples: usize,
}

/// Per trial: sample C = exp(log(base) + spread·SymGaussian), then draw
/// D columns with covariance C via C^{1/2}·g. Bitwise reproducible for
/// a fixed seed.
pub fn synth_generate(spec: &SynthSpec, subject: &str, seed: u64) -> Result<TrialSet> {
    if spec.class_bases.is_empty() || spec.trials_per_class == 0 || spec.samples < 2 {
        return Err(Error::Domain("invalid synthetic data spec".into()));
    }
    let e = spec.class_bases[0].dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let log_bases: Vec<SymMat> = spec
        .class_bases
        .iter()
        .map(spd_log)
        .collect::<Result<_>>()?;

    let mut trials = Vec::with_capacity(spec.class_bases.len() * spec.trials_per_class);
    for (class, log_base) in log_bases.iter().enumerate() {
        for _ in 0..spec.trials_per_class {
            let noise = Matrix::from_fn(e, e, |_, _| {
                rng.sample::<f64, _>(StandardNormal) * spec.spread
            });
            let log_cov = SymMat::new(log_base.mat().add(&noise))?;
            let cov = crate::spd::spd_exp(&log_cov)?;
            let (sqrt, _) = spd_sqrt_pair(&cov)?;
            let mut signal = Matrix::zeros(e, spec.samples);
            for t in 0..spec.samples {
                let g: Vec<f64> = (0..e).map(|_| rng.sample(StandardNormal)).collect();
                let col = sqrt.mat().matvec(&g);
                for (i, v) in col.iter().enumerate() {
                    signal[(i, t)] = *v;
                }
            }
            trials.push(EegTrial {
                signal,
                label: class,
            });
        }
    }
    TrialSet::new(subject.to_string(), trials, spec.class_bases.len())
}
