//! Acceptance gate: one test per criterion, each printing a PASS/FAIL
//! line. Run with `cargo test --test acceptance -- --nocapture` to see
//! every line; any FAIL also fails the test.

use ftl_core::baselines::{mdm_predict, mdm_train, tsm_features, tsm_train};
use ftl_core::federated::{
    fedavg, run_federated_training, run_round, ClientState, FedConfig, ServerState,
};
use ftl_core::layers::{
    bimap_backward, dense_softmax_backward, dense_softmax_forward, logeig_backward,
    logeig_forward, network_backward, network_forward, BiMapLayer, DenseLayer, ModelParams,
};
use ftl_core::losses::{cross_entropy, mmd2, LossWeights};
use ftl_core::optim::Schedule;
use ftl_core::spd::{frechet_mean, geodesic_distance, spd_exp, spd_log, sym_eig};
use ftl_core::{Matrix, SpdMat, SymMat};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

fn criterion(name: &str, body: impl FnOnce() + std::panic::UnwindSafe) {
    let result = std::panic::catch_unwind(body);
    match &result {
        Ok(()) => println!("ACCEPTANCE: {name} ... PASS"),
        Err(_) => println!("ACCEPTANCE: {name} ... FAIL"),
    }
    if let Err(e) = result {
        std::panic::resume_unwind(e);
    }
}

fn random_mat(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

fn random_spd(dim: usize, rng: &mut ChaCha8Rng) -> SpdMat {
    let a = random_mat(dim, dim, rng);
    let m = a
        .matmul(&a.transpose())
        .scale(1.0 / dim as f64)
        .add(&Matrix::identity(dim).scale(0.5));
    SpdMat::from_mat(m).unwrap()
}

fn random_sym(dim: usize, rng: &mut ChaCha8Rng) -> SymMat {
    SymMat::new(random_mat(dim, dim, rng)).unwrap()
}

fn rel_err(fd: &[f64], analytic: &[f64]) -> f64 {
    let diff: f64 = fd
        .iter()
        .zip(analytic)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let scale: f64 = fd.iter().map(|a| a * a).sum::<f64>().sqrt();
    diff / scale.max(1e-10)
}

fn central(f: impl Fn(f64) -> f64, h: f64) -> f64 {
    (f(h) - f(-h)) / (2.0 * h)
}

fn sym_dirs(dim: usize) -> Vec<(usize, usize)> {
    (0..dim)
        .flat_map(|i| (i..dim).map(move |j| (i, j)))
        .collect()
}

fn perturb_sym(m: &Matrix, i: usize, j: usize, h: f64) -> Matrix {
    let mut out = m.clone();
    out[(i, j)] += h;
    if i != j {
        out[(j, i)] += h;
    }
    out
}

#[test]
fn acceptance_gradient_suite() {
    criterion(
        "gradient suite (per-layer 1e-5, end-to-end 1e-4, 20 seeds, <60s)",
        || {
            let started = Instant::now();
            // Per-layer: bilinear reduction.
            for seed in 0..20u64 {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let (d_in, d_out) = (32, 4);
                let s = random_spd(d_in, &mut rng);
                let layer = BiMapLayer::init_orthonormal(d_out, d_in, &mut rng).unwrap();
                let c = random_sym(d_out, &mut rng);
                let loss = |w: &Matrix| {
                    let out = w.matmul(s.mat()).matmul(&w.transpose());
                    (0..d_out)
                        .flat_map(|i| (0..d_out).map(move |j| (i, j)))
                        .map(|(i, j)| c.mat()[(i, j)] * out[(i, j)])
                        .sum::<f64>()
                };
                let (dw, _) = bimap_backward(&layer, &s, &c).unwrap();
                let mut fd = Vec::new();
                let mut an = Vec::new();
                for i in 0..d_out {
                    for j in 0..d_in {
                        fd.push(central(
                            |h| {
                                let mut w = layer.weight.clone();
                                w[(i, j)] += h;
                                loss(&w)
                            },
                            1e-6,
                        ));
                        an.push(dw[(i, j)]);
                    }
                }
                assert!(rel_err(&fd, &an) < 1e-5, "bimap seed {seed}");
            }
            // Per-layer: tangent projection.
            for seed in 0..20u64 {
                let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
                let dim = 4;
                let p = random_spd(dim, &mut rng);
                let c = random_sym(dim, &mut rng);
                let loss = |m: &Matrix| {
                    let (t, _) =
                        logeig_forward(&SpdMat::from_mat(m.clone()).unwrap(), 1e-6).unwrap();
                    (0..dim)
                        .flat_map(|i| (0..dim).map(move |j| (i, j)))
                        .map(|(i, j)| c.mat()[(i, j)] * t.mat()[(i, j)])
                        .sum::<f64>()
                };
                let (_, tape) = logeig_forward(&p, 1e-6).unwrap();
                let g = logeig_backward(&tape, &c).unwrap();
                let mut fd = Vec::new();
                let mut an = Vec::new();
                for (i, j) in sym_dirs(dim) {
                    fd.push(central(|h| loss(&perturb_sym(p.mat(), i, j, h)), 1e-6));
                    an.push(if i == j {
                        g.mat()[(i, i)]
                    } else {
                        2.0 * g.mat()[(i, j)]
                    });
                }
                assert!(rel_err(&fd, &an) < 1e-5, "logeig seed {seed}");
            }
            // Per-layer: classifier.
            for seed in 0..20u64 {
                let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
                let (n_in, n_out) = (16, 2);
                let layer = DenseLayer::init_small(n_out, n_in, &mut rng);
                let x: Vec<f64> = (0..n_in).map(|_| rng.sample(StandardNormal)).collect();
                let label = rng.gen_range(0..n_out);
                let probs = dense_softmax_forward(&layer, &x).unwrap();
                let (dw, db, _) = dense_softmax_backward(&layer, &x, &probs, label).unwrap();
                let mut fd = Vec::new();
                let mut an = Vec::new();
                for i in 0..n_out {
                    for j in 0..n_in {
                        fd.push(central(
                            |h| {
                                let mut l = layer.clone();
                                l.weight[(i, j)] += h;
                                cross_entropy(&dense_softmax_forward(&l, &x).unwrap(), label)
                                    .unwrap()
                            },
                            1e-6,
                        ));
                        an.push(dw[(i, j)]);
                    }
                    fd.push(central(
                        |h| {
                            let mut l = layer.clone();
                            l.bias[i] += h;
                            cross_entropy(&dense_softmax_forward(&l, &x).unwrap(), label).unwrap()
                        },
                        1e-6,
                    ));
                    an.push(db[i]);
                }
                assert!(rel_err(&fd, &an) < 1e-5, "dense seed {seed}");
            }
            // End-to-end network at the subject-specific dimensions.
            for seed in 0..20u64 {
                let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
                let chain = [32usize, 4, 4];
                let params = ModelParams::init(&chain, 2, &mut rng).unwrap();
                let s = random_spd(chain[0], &mut rng);
                let label = rng.gen_range(0..2);
                let loss = |p: &ModelParams| {
                    let (probs, _) = network_forward(p, &s).unwrap();
                    cross_entropy(&probs, label).unwrap()
                };
                let (_, tape) = network_forward(&params, &s).unwrap();
                let grads = network_backward(&params, &tape, label).unwrap();
                let mut fd = Vec::new();
                let mut an = Vec::new();
                for (k, layer) in params.bimaps.iter().enumerate() {
                    for i in 0..layer.d_out() {
                        for j in 0..layer.d_in() {
                            fd.push(central(
                                |h| {
                                    let mut p = params.clone();
                                    p.bimaps[k].weight[(i, j)] += h;
                                    loss(&p)
                                },
                                1e-5,
                            ));
                            an.push(grads.bimaps[k][(i, j)]);
                        }
                    }
                }
                for i in 0..params.dense.n_out() {
                    for j in 0..params.dense.n_in() {
                        fd.push(central(
                            |h| {
                                let mut p = params.clone();
                                p.dense.weight[(i, j)] += h;
                                loss(&p)
                            },
                            1e-5,
                        ));
                        an.push(grads.dense_weight[(i, j)]);
                    }
                    fd.push(central(
                        |h| {
                            let mut p = params.clone();
                            p.dense.bias[i] += h;
                            loss(&p)
                        },
                        1e-5,
                    ));
                    an.push(grads.dense_bias[i]);
                }
                assert!(rel_err(&fd, &an) < 1e-4, "network seed {seed}");
            }
            assert!(
                started.elapsed().as_secs() < 60,
                "gradient suite took {:?}",
                started.elapsed()
            );
        },
    );
}

#[test]
fn acceptance_spd_algebra_suite() {
    criterion(
        "SPD algebra suite (round-trip 1e-10, congruence 1e-9, Fréchet 1e-8)",
        || {
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            // log/exp round-trip and eigendecomposition reconstruction.
            for &dim in &[2usize, 4, 8, 16, 32] {
                let q = ftl_core::layers::orthonormalize_rows(&random_mat(dim, dim, &mut rng));
                let lambda: Vec<f64> = (0..dim)
                    .map(|i| {
                        1e-3 * (1e6f64).powf(i as f64 / (dim.max(2) - 1) as f64)
                    })
                    .collect();
                let diag = Matrix::from_fn(dim, dim, |i, j| if i == j { lambda[i] } else { 0.0 });
                let p = SpdMat::from_mat(q.transpose().matmul(&diag).matmul(&q)).unwrap();
                let back = spd_exp(&spd_log(&p).unwrap()).unwrap();
                let rel = back.mat().sub(p.mat()).frobenius_norm() / p.mat().frobenius_norm();
                assert!(rel < 1e-10, "round-trip dim {dim}: {rel:e}");
                let eig = sym_eig(p.sym()).unwrap();
                let rec = eig.reconstruct_with(|l| l);
                let rel = rec.sub(p.mat()).frobenius_norm() / p.mat().frobenius_norm();
                assert!(rel < 1e-10, "reconstruction dim {dim}: {rel:e}");
            }
            // Congruence invariance of the geodesic distance.
            for case in 0..100 {
                let dim = 2 + case % 5;
                let p = random_spd(dim, &mut rng);
                let q = random_spd(dim, &mut rng);
                let a = random_mat(dim, dim, &mut rng).add(&Matrix::identity(dim).scale(2.0));
                let map =
                    |m: &SpdMat| SpdMat::from_mat(a.matmul(m.mat()).matmul(&a.transpose())).unwrap();
                let d0 = geodesic_distance(&p, &q).unwrap();
                let d1 = geodesic_distance(&map(&p), &map(&q)).unwrap();
                assert!((d0 - d1).abs() < 1e-9, "congruence case {case}");
            }
            // Fréchet mean of commuting matrices: geometric mean.
            let diag = |v: &[f64]| {
                SpdMat::from_mat(Matrix::from_fn(v.len(), v.len(), |i, j| {
                    if i == j {
                        v[i]
                    } else {
                        0.0
                    }
                }))
                .unwrap()
            };
            let mean = frechet_mean(
                &[diag(&[1.0, 2.0]), diag(&[4.0, 2.0]), diag(&[2.0, 16.0])],
                1e-12,
                200,
            )
            .unwrap();
            assert!((mean.mat()[(0, 0)] - 2.0).abs() < 1e-8);
            assert!((mean.mat()[(1, 1)] - 4.0).abs() < 1e-8);
        },
    );
}

#[test]
fn acceptance_mmd_suite() {
    criterion(
        "MMD suite (self-MMD 1e-12, bitwise oracle, singleton closed form)",
        || {
            let mut rng = ChaCha8Rng::seed_from_u64(2);
            // Self-MMD.
            let a: Vec<SpdMat> = (0..5).map(|_| random_spd(3, &mut rng)).collect();
            assert!(mmd2(&a, &a.clone(), 2.0).unwrap().abs() <= 1e-12);
            // Bitwise agreement with a naive double-loop oracle.
            let oracle = |a: &[SpdMat], b: &[SpdMat], sigma: f64| {
                let k = |x: &SpdMat, y: &SpdMat| {
                    let d2: f64 = x
                        .mat()
                        .data()
                        .iter()
                        .zip(y.mat().data())
                        .map(|(p, q)| (p - q) * (p - q))
                        .sum();
                    (-d2 / (2.0 * sigma * sigma)).exp()
                };
                let (n, m) = (a.len() as f64, b.len() as f64);
                let mut kaa = 0.0;
                for x in a {
                    for y in a {
                        kaa += k(x, y);
                    }
                }
                let mut kbb = 0.0;
                for x in b {
                    for y in b {
                        kbb += k(x, y);
                    }
                }
                let mut kab = 0.0;
                for x in a {
                    for y in b {
                        kab += k(x, y);
                    }
                }
                kaa / (n * n) + kbb / (m * m) - 2.0 * kab / (n * m)
            };
            for case in 0..20 {
                let n = 1 + case % 10;
                let m = 1 + (case * 3) % 10;
                let a: Vec<SpdMat> = (0..n).map(|_| random_spd(3, &mut rng)).collect();
                let b: Vec<SpdMat> = (0..m).map(|_| random_spd(3, &mut rng)).collect();
                let got = mmd2(&a, &b, 2.0).unwrap();
                assert_eq!(got.to_bits(), oracle(&a, &b, 2.0).to_bits(), "case {case}");
            }
            // Singleton closed form at Frobenius distance 2, σ = 2.
            let x = SpdMat::identity(2);
            let y = SpdMat::from_mat(Matrix::from_vec(2, 2, vec![3.0, 0.0, 0.0, 1.0])).unwrap();
            let got = mmd2(std::slice::from_ref(&x), std::slice::from_ref(&y), 2.0).unwrap();
            let want = 2.0 - 2.0 * (-0.5f64).exp();
            assert!((got - want).abs() < 1e-12);
            assert!((got - 0.786939).abs() < 1e-6);
        },
    );
}

fn make_client(id: u32, seed: u64, n: usize) -> ClientState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<(SpdMat, usize)> = (0..n).map(|i| (random_spd(4, &mut rng), i % 2)).collect();
    let params = ModelParams::init(&[4, 4], 2, &mut rng).unwrap();
    let schedule = Schedule::new(0.1, 0.02, 50, 100, 0.0).unwrap();
    ClientState::new(id, data, 2, params, schedule, false).unwrap()
}

#[test]
fn acceptance_fedavg_suite() {
    criterion(
        "FedAvg suite (oracle exact, broadcast bitwise, idempotence, permutation)",
        || {
            // Known-vector averaging oracle, exact.
            let dense = |w: &[f64], b: &[f64]| {
                DenseLayer::new(Matrix::from_vec(b.len(), w.len() / b.len(), w.to_vec()), b.to_vec())
                    .unwrap()
            };
            let avg = fedavg(&[
                dense(&[1.0, 3.0], &[2.0]),
                dense(&[3.0, 5.0], &[4.0]),
                dense(&[5.0, 1.0], &[0.0]),
            ])
            .unwrap();
            assert_eq!(avg.weight.data(), &[3.0, 3.0]);
            assert_eq!(avg.bias, vec![2.0]);
            // m = 1 idempotence.
            let single = dense(&[0.25, -0.75], &[0.125]);
            assert_eq!(fedavg(std::slice::from_ref(&single)).unwrap(), single);

            // Post-broadcast equality: after federated training every
            // client holds the global classifier, bitwise.
            let mut clients = vec![make_client(0, 10, 6), make_client(1, 11, 6)];
            let global = DenseLayer::init_small(2, 16, &mut ChaCha8Rng::seed_from_u64(12));
            let mut server = ServerState::new(global.clone(), vec![0, 1]).unwrap();
            let config = FedConfig {
                local_epochs: 1,
                max_rounds: 3,
                stop_loss: 0.0,
                weights: LossWeights::uniform(2, 2, 0.1).unwrap(),
                sigma: 2.0,
            };
            run_federated_training(&mut server, &mut clients, &config).unwrap();
            for c in &clients {
                assert_eq!(c.params.dense, server.global);
            }

            // Permutation invariance: client order in the round call
            // does not change the aggregate (uploads sort by id).
            let mut forward = vec![make_client(0, 10, 6), make_client(1, 11, 6)];
            let mut backward = vec![make_client(1, 11, 6), make_client(0, 10, 6)];
            let mut s1 = ServerState::new(global.clone(), vec![0, 1]).unwrap();
            let mut s2 = ServerState::new(global, vec![0, 1]).unwrap();
            run_round(&mut s1, &mut forward, &config).unwrap();
            run_round(&mut s2, &mut backward, &config).unwrap();
            assert_eq!(s1.global, s2.global);
        },
    );
}

fn ftl(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_ftl"))
        .args(args)
        .output()
        .expect("failed to launch ftl")
}

fn ftl_ok(args: &[&str]) {
    let out = ftl(args);
    assert!(
        out.status.success(),
        "ftl {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn summary_mean(path: &Path) -> f64 {
    let text = std::fs::read_to_string(path).unwrap();
    text.lines()
        .find_map(|l| l.strip_prefix("mean "))
        .unwrap_or_else(|| panic!("no mean line in {}", path.display()))
        .trim()
        .parse()
        .unwrap()
}

const SEPARABLE_SYNTH: &str = "\
[data]
subject = \"OUT/synth.eeg\"

[model]
chain = [8, 4, 4]

[train]
stop_loss = 0.1
max_epochs = 500

[cv]
folds = 5

[synth]
channels = 8
trials_per_class = 40
samples = 128
separation = 1.0
spread = 0.25
";

fn write_config(dir: &Path, name: &str, template: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, template.replace("OUT", dir.to_str().unwrap())).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn acceptance_end_to_end_subject_specific() {
    criterion(
        "end-to-end subject-specific (≥95% CV, stop loss 0.1 within 500 epochs, <5min)",
        || {
            let started = Instant::now();
            let dir = tempfile::tempdir().unwrap();
            let config = write_config(dir.path(), "config.toml", SEPARABLE_SYNTH);
            let out = dir.path().to_str().unwrap();
            ftl_ok(&["synth", "--config", &config, "--seed", "7", "--out", out]);
            ftl_ok(&["train-specific", "--config", &config, "--seed", "7", "--out", out]);

            let mean = summary_mean(&dir.path().join("specific_summary.txt"));
            assert!(mean >= 0.95, "mean CV accuracy {mean}");

            // Every fold must hit the stop loss within the epoch cap.
            let csv = std::fs::read_to_string(dir.path().join("specific_metrics.csv")).unwrap();
            let mut last: std::collections::BTreeMap<usize, (usize, f64)> = Default::default();
            for line in csv.lines().skip(1) {
                let f: Vec<&str> = line.split(',').collect();
                let fold: usize = f[2].parse().unwrap();
                let epoch: usize = f[3].parse().unwrap();
                let loss: f64 = f[5].parse().unwrap();
                last.insert(fold, (epoch, loss));
            }
            assert_eq!(last.len(), 5);
            for (fold, (epoch, loss)) in &last {
                assert!(
                    *epoch <= 500 && *loss < 0.1,
                    "fold {fold}: epoch {epoch}, final loss {loss}"
                );
            }
            assert!(started.elapsed().as_secs() < 300, "{:?}", started.elapsed());
        },
    );
}

#[test]
fn acceptance_end_to_end_subject_adaptive() {
    criterion(
        "end-to-end subject-adaptive (10 seeds, mean transfer ≥ target-only, <15min)",
        || {
            let started = Instant::now();
            let mut transfer_sum = 0.0;
            let mut alone_sum = 0.0;
            for seed in 1..=10u64 {
                let dir = tempfile::tempdir().unwrap();
                let out = dir.path().to_str().unwrap();
                let src = write_config(
                    dir.path(),
                    "src.toml",
                    &format!(
                        "[synth]\nsubject = \"source\"\nchannels = 8\ntrials_per_class = 40\n\
                         samples = 64\nseparation = 0.5\nspread = 0.3\nbase_seed = {}\n",
                        9000 + seed
                    ),
                );
                let tgt = write_config(
                    dir.path(),
                    "tgt.toml",
                    &format!(
                        "[synth]\nsubject = \"target\"\nchannels = 8\nkeep_channels = 4\n\
                         trials_per_class = 8\nsamples = 8\nseparation = 0.5\nspread = 0.8\n\
                         base_seed = {}\n",
                        9000 + seed
                    ),
                );
                let adaptive = write_config(
                    dir.path(),
                    "adaptive.toml",
                    "[data]\nsource = \"OUT/source.eeg\"\ntarget = \"OUT/target.eeg\"\n\n\
                     [model]\nsource_chain = [8, 4, 4]\ntarget_chain = [4, 4]\n\n\
                     [federated]\nlocal_epochs = 2\nmax_rounds = 600\nstop_loss = 0.05\n\
                     lambda = 0.1\nsigma = 1.0\n\n[cv]\nfolds = 4\n",
                );
                let alone = write_config(
                    dir.path(),
                    "alone.toml",
                    "[data]\nsubject = \"OUT/target.eeg\"\n\n[model]\nchain = [4, 4]\n\n\
                     [train]\nstop_loss = 0.1\nmax_epochs = 500\n\n[cv]\nfolds = 4\n",
                );
                let s = seed.to_string();
                let src_seed = (100 + seed).to_string();
                let tgt_seed = (200 + seed).to_string();
                ftl_ok(&["synth", "--config", &src, "--seed", &src_seed, "--out", out]);
                ftl_ok(&["synth", "--config", &tgt, "--seed", &tgt_seed, "--out", out]);
                ftl_ok(&["train-adaptive", "--config", &adaptive, "--seed", &s, "--out", out]);
                // The target-only run reuses the persisted fold file,
                // so both arms see identical splits.
                ftl_ok(&["train-specific", "--config", &alone, "--seed", &s, "--out", out]);
                transfer_sum += summary_mean(&dir.path().join("adaptive_summary.txt"));
                alone_sum += summary_mean(&dir.path().join("specific_summary.txt"));
            }
            let (transfer, alone) = (transfer_sum / 10.0, alone_sum / 10.0);
            println!("  transfer mean {transfer:.4}, target-only mean {alone:.4}");
            assert!(
                transfer >= alone,
                "transfer {transfer} < target-only {alone}"
            );
            assert!(started.elapsed().as_secs() < 900, "{:?}", started.elapsed());
        },
    );
}

#[test]
fn acceptance_baseline_suite() {
    criterion(
        "baseline suite (MDM ≥95%, TSM zero reference feature, affine invariance 1e-9)",
        || {
            // MDM on the separable synthetic set, through the CLI.
            let dir = tempfile::tempdir().unwrap();
            let config = write_config(dir.path(), "config.toml", SEPARABLE_SYNTH);
            let out = dir.path().to_str().unwrap();
            ftl_ok(&["synth", "--config", &config, "--seed", "7", "--out", out]);
            ftl_ok(&[
                "baseline", "--config", &config, "--seed", "7", "--out", out,
                "--algorithm", "mdm",
            ]);
            let mean = summary_mean(&dir.path().join("baseline_mdm_summary.txt"));
            assert!(mean >= 0.95, "MDM CV accuracy {mean}");

            // TSM features vanish exactly at the reference point.
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let covs: Vec<SpdMat> = (0..8).map(|_| random_spd(4, &mut rng)).collect();
            let labels: Vec<usize> = (0..8).map(|i| i % 2).collect();
            let tsm = tsm_train(&covs, &labels, 2).unwrap();
            let f = tsm_features(&tsm, &tsm.reference.clone()).unwrap();
            assert!(f.iter().all(|v| v.abs() < 1e-12));

            // MDM affine invariance: congruence-transform the data and
            // the class means move with it; distances and predictions
            // are unchanged.
            let mdm = mdm_train(&covs, &labels, 2).unwrap();
            let a = random_mat(4, 4, &mut rng).add(&Matrix::identity(4).scale(2.0));
            let map = |m: &SpdMat| {
                SpdMat::from_mat(a.matmul(m.mat()).matmul(&a.transpose())).unwrap()
            };
            let mapped_covs: Vec<SpdMat> = covs.iter().map(&map).collect();
            let mapped_mdm = mdm_train(&mapped_covs, &labels, 2).unwrap();
            for (c, mc) in covs.iter().zip(&mapped_covs) {
                for class in 0..2 {
                    let d0 = geodesic_distance(&mdm.class_means[class], c).unwrap();
                    let d1 = geodesic_distance(&mapped_mdm.class_means[class], mc).unwrap();
                    assert!((d0 - d1).abs() < 1e-9, "|{d0} - {d1}|");
                }
                assert_eq!(
                    mdm_predict(&mdm, c).unwrap(),
                    mdm_predict(&mapped_mdm, mc).unwrap()
                );
            }
        },
    );
}

#[test]
fn acceptance_determinism() {
    criterion(
        "determinism (every command byte-for-byte reproducible)",
        || {
            let adaptive_template = "\
[data]
source = \"OUT/source.eeg\"
target = \"OUT/target.eeg\"

[model]
source_chain = [8, 4, 4]
target_chain = [4, 4]

[federated]
local_epochs = 1
max_rounds = 20
stop_loss = 0.05

[cv]
folds = 3
";
            let tgt_template = "\
[synth]
subject = \"target\"
channels = 4
trials_per_class = 8
samples = 16
separation = 0.8
spread = 0.4
";
            let src_template = "\
[synth]
subject = \"source\"
channels = 8
trials_per_class = 10
samples = 32
separation = 0.8
spread = 0.4
";
            // One out dir per dataset: the fold file is shared within a
            // comparison run, so the adaptive pair gets its own dir.
            let run_all = |dir: &Path| {
                let spec = dir.join("spec");
                let adapt = dir.join("adapt");
                let spec_out = spec.to_str().unwrap().to_string();
                let adapt_out = adapt.to_str().unwrap().to_string();
                std::fs::create_dir_all(&spec).unwrap();
                std::fs::create_dir_all(&adapt).unwrap();
                let cfg = write_config(&spec, "config.toml", SEPARABLE_SYNTH);
                let src = write_config(&adapt, "src.toml", src_template);
                let tgt = write_config(&adapt, "tgt.toml", tgt_template);
                let adp = write_config(&adapt, "adaptive.toml", adaptive_template);
                ftl_ok(&["synth", "--config", &cfg, "--seed", "5", "--out", &spec_out]);
                ftl_ok(&["synth", "--config", &src, "--seed", "6", "--out", &adapt_out]);
                ftl_ok(&["synth", "--config", &tgt, "--seed", "7", "--out", &adapt_out]);
                ftl_ok(&["train-specific", "--config", &cfg, "--seed", "5", "--out", &spec_out]);
                ftl_ok(&[
                    "baseline", "--config", &cfg, "--seed", "5", "--out", &spec_out,
                    "--algorithm", "mdm",
                ]);
                ftl_ok(&[
                    "baseline", "--config", &cfg, "--seed", "5", "--out", &spec_out,
                    "--algorithm", "tsm",
                ]);
                ftl_ok(&["train-adaptive", "--config", &adp, "--seed", "5", "--out", &adapt_out]);
            };
            let d1 = tempfile::tempdir().unwrap();
            let d2 = tempfile::tempdir().unwrap();
            run_all(d1.path());
            run_all(d2.path());
            let outputs = [
                "spec/synth.eeg",
                "adapt/source.eeg",
                "adapt/target.eeg",
                "spec/folds.csv",
                "adapt/folds.csv",
                "spec/specific_metrics.csv",
                "spec/specific_summary.txt",
                "spec/baseline_mdm_metrics.csv",
                "spec/baseline_mdm_summary.txt",
                "spec/baseline_tsm_metrics.csv",
                "spec/baseline_tsm_summary.txt",
                "adapt/adaptive_metrics.csv",
                "adapt/adaptive_summary.txt",
            ];
            for name in outputs {
                let a = std::fs::read(d1.path().join(name)).unwrap();
                let b = std::fs::read(d2.path().join(name)).unwrap();
                assert!(a == b, "{name} differs between identical reruns");
            }
        },
    );
}

#[test]
fn acceptance_physionet_note() {
    criterion(
        "PhysioNet subject-specific check — SKIPPED, manual (see ignored test)",
        || {
            // Requires externally converted PhysioNet motor-imagery data;
            // run `cargo test --test acceptance physionet_manual -- --ignored`
            // with FTL_PHYSIONET_DIR pointing at EEGTRIALS v1 files.
        },
    );
}

/// Manual integration test against real data: set FTL_PHYSIONET_DIR to
/// a directory of EEGTRIALS v1 files (one per subject, 64-channel
/// motor-imagery trials, 2 classes) and run with `-- --ignored`. Checks
/// that mean subject-specific CV accuracy over up to 10 subjects falls
/// within ±0.08 of 0.633.
#[test]
#[ignore]
fn physionet_manual() {
    let dir = std::env::var("FTL_PHYSIONET_DIR").expect("set FTL_PHYSIONET_DIR");
    let mut files: Vec<_> = std::fs::read_dir(&dir)
        .unwrap()
        .filter_map(|e| {
            let p = e.unwrap().path();
            (p.extension().map(|x| x == "eeg").unwrap_or(false)).then_some(p)
        })
        .collect();
    files.sort();
    files.truncate(10);
    assert!(!files.is_empty(), "no .eeg files in {dir}");
    let mut sum = 0.0;
    for file in &files {
        let tmp = tempfile::tempdir().unwrap();
        let config = tmp.path().join("config.toml");
        std::fs::write(
            &config,
            format!("[data]\nsubject = \"{}\"\n", file.display()),
        )
        .unwrap();
        ftl_ok(&[
            "train-specific",
            "--config",
            config.to_str().unwrap(),
            "--seed",
            "1",
            "--out",
            tmp.path().to_str().unwrap(),
        ]);
        sum += summary_mean(&tmp.path().join("specific_summary.txt"));
    }
    let mean = sum / files.len() as f64;
    assert!(
        (mean - 0.633).abs() <= 0.08,
        "mean CV accuracy {mean} outside 0.633 ± 0.08"
    );
}
