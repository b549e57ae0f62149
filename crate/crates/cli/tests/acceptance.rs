//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each
//! and exits nonzero if any failed. Numeric arguments select criteria:
//! `cargo test -p kernsne-cli --test acceptance -- 2 5`.

mod common;

use std::collections::HashSet;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use kernsne_cli::pipeline::read_layout;
use kernsne_cli::{cmd_embed, RunConfig};
use kernsne_core::eval::{angles_about_centroid, circular_rank_correlation, iterations_to_fraction};
use kernsne_core::featurize::Alphabet;
use kernsne_core::init::InitKind;
use kernsne_core::kernels::gaussian_conditionals;
use kernsne_core::{
    approximate_kernel, build_feature_matrix, gaussian_joint, generate_circle, gradient, isolation_kernel,
    kernel_to_joint, kl_divergence, knn_table, laplacian_kernel, low_dim_affinities, parse_fasta, quality_curve,
    r_of_k, random_init, rescale_init, run_tsne, Embedding, JointDistribution, JointMode, KernelKind, OptimizerParams,
    Provenance, SequenceRecord,
};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

struct Outcome {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn gaussian(n: usize, d: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_simple_fn((n, d), || {
        // Box-Muller keeps this independent of the library's samplers
        let (u, v): (f64, f64) = (rng.random_range(1e-12..1.0), rng.random());
        (-2.0 * u.ln()).sqrt() * (std::f64::consts::TAU * v).cos()
    })
}

fn random_joint(n: usize, rng: &mut ChaCha8Rng) -> JointDistribution {
    let mut m = Array2::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            let v: f64 = rng.random_range(0.01..1.0);
            m[[i, j]] = v;
            m[[j, i]] = v;
        }
    }
    let total = m.sum();
    JointDistribution::new(m / total).unwrap()
}

fn kl_at(p: &JointDistribution, y: &Array2<f64>) -> f64 {
    let e = Embedding::new(y.clone(), Provenance::Random).unwrap();
    kl_divergence(p, &low_dim_affinities(&e).unwrap()).unwrap()
}

fn gradient_matches_finite_differences() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for instance in 0..10 {
        let p = random_joint(20, &mut rng);
        let y = gaussian(20, 2, 100 + instance);
        let g = gradient(&p, &Embedding::new(y.clone(), Provenance::Random).unwrap()).unwrap();
        for i in 0..20 {
            for d in 0..2 {
                let (mut plus, mut minus) = (y.clone(), y.clone());
                plus[[i, d]] += h;
                minus[[i, d]] -= h;
                let fd = (kl_at(&p, &plus) - kl_at(&p, &minus)) / (2.0 * h);
                worst = worst.max((fd - g[[i, d]]).abs() / g[[i, d]].abs());
            }
        }
    }
    verdict(worst < 1e-4, format!("max relative error {worst:.2e} over 10 x 40 entries (< 1e-4)"))
}

fn perplexity_calibration() -> Outcome {
    let x = gaussian(500, 10, 2);
    let cal = gaussian_conditionals(&x, 250.0).unwrap();
    let mut worst: f64 = 0.0;
    for row in cal.conditionals.outer_iter() {
        let bits: f64 = row.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.log2()).sum();
        worst = worst.max((bits.exp2() - 250.0).abs());
    }
    verdict(worst <= 0.01, format!("max |2^H - 250| = {worst:.2e} over 500 rows (<= 0.01)"))
}

fn sequence_records(n_per_class: usize, classes: usize, seed: u64) -> Vec<SequenceRecord> {
    let text = common::clustered_fasta(n_per_class, classes, 60, "ACDEFGHIKLMNPQRSTVWY", seed);
    parse_fasta(text.as_bytes()).unwrap()
}

fn joint_invariants() -> Outcome {
    let records = sequence_records(50, 4, 3);
    let x = build_feature_matrix(&records, 3, None).unwrap();
    let joints = [
        ("gaussian", gaussian_joint(&x, 30.0).unwrap()),
        (
            "isolation",
            kernel_to_joint(&isolation_kernel(&x, 16, 200, 3).unwrap(), JointMode::RowNormalize).unwrap(),
        ),
        (
            "laplacian",
            kernel_to_joint(
                &laplacian_kernel(&x, kernsne_core::kernels::default_laplacian_sigma(&x).unwrap()).unwrap(),
                JointMode::RowNormalize,
            )
            .unwrap(),
        ),
        (
            "approximate",
            kernel_to_joint(
                &approximate_kernel(&records, 3, 0, Default::default()).unwrap(),
                JointMode::RowNormalize,
            )
            .unwrap(),
        ),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, p) in &joints {
        let v = p.values();
        let n = v.nrows();
        let mut asym: f64 = 0.0;
        let mut min = f64::INFINITY;
        let mut diag: f64 = 0.0;
        for i in 0..n {
            diag = diag.max(v[[i, i]].abs());
            for j in 0..n {
                asym = asym.max((v[[i, j]] - v[[j, i]]).abs());
                min = min.min(v[[i, j]]);
            }
        }
        let sum_err = (v.sum() - 1.0).abs();
        let ok = n == 200 && asym < 1e-12 && diag == 0.0 && min >= 0.0 && sum_err <= 1e-9;
        pass &= ok;
        parts.push(format!("{name}: asym {asym:.1e} |sum-1| {sum_err:.1e}"));
    }
    verdict(pass, parts.join("; "))
}

fn naive_neighbors(m: &Array2<f64>, k: usize) -> Vec<Vec<usize>> {
    let n = m.nrows();
    (0..n)
        .map(|i| {
            let dist = |j: usize| -> f64 { m.row(i).iter().zip(m.row(j)).map(|(a, b)| (a - b) * (a - b)).sum() };
            let mut left: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            let mut picked = Vec::new();
            // selection: repeatedly take the closest remaining, lowest index first
            while picked.len() < k {
                let mut best = 0;
                for c in 1..left.len() {
                    let (dc, db) = (dist(left[c]), dist(left[best]));
                    if dc < db || (dc == db && left[c] < left[best]) {
                        best = c;
                    }
                }
                picked.push(left.remove(best));
            }
            picked
        })
        .collect()
}

fn metric_oracle() -> Outcome {
    let mut worst: f64 = 0.0;
    for s in 0..10 {
        let x = gaussian(20, 6, 40 + s);
        let y = gaussian(20, 2, 80 + s);
        let curve = quality_curve(&x, &y, 10).unwrap();
        let (hd, ld) = (naive_neighbors(&x, 10), naive_neighbors(&y, 10));
        let (mut num, mut den) = (0.0, 0.0);
        for k in 1..=10usize {
            let mut shared = 0usize;
            for i in 0..20 {
                for a in &hd[i][..k] {
                    for b in &ld[i][..k] {
                        if a == b {
                            shared += 1;
                        }
                    }
                }
            }
            let q = shared as f64 / (20 * k) as f64;
            let r = (19.0 * q - k as f64) / (19.0 - k as f64);
            worst = worst.max((curve.r_values[k - 1] - r).abs());
            num += r / k as f64;
            den += 1.0 / k as f64;
        }
        worst = worst.max((curve.auc_rnx - num / den).abs());
    }
    let x = gaussian(60, 2, 7);
    let same = quality_curve(&x, &x, 20).unwrap();
    let identical = same.auc_rnx == 1.0 && same.r_values.iter().all(|&r| r == 1.0);

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut identity_err: f64 = 0.0;
    for _ in 0..100 {
        let n: usize = rng.random_range(4..5000);
        let k = rng.random_range(1..=n - 2);
        let q = k as f64 / (n - 1) as f64;
        identity_err = identity_err.max(r_of_k(q, n, k).unwrap().abs());
    }
    verdict(
        worst <= 1e-12 && identical && identity_err <= 1e-12,
        format!(
            "oracle max diff {worst:.1e}; identical layout AUC = {}; max |R| at chance = {identity_err:.1e}",
            same.auc_rnx
        ),
    )
}

fn knn_oracle() -> Outcome {
    let m = gaussian(100, 5, 5);
    let table = knn_table(&m, 99).unwrap();
    let oracle = naive_neighbors(&m, 99);
    let random_ok = (0..100).all(|i| table.indices().row(i).to_vec() == oracle[i]);
    let line = Array2::from_shape_vec((3, 1), vec![0.0, 1.0, 2.0]).unwrap();
    let ties = knn_table(&line, 2).unwrap();
    let tie_ok = ties.indices().row(1).to_vec() == vec![0, 2] && naive_neighbors(&line, 2)[1] == vec![0, 2];
    verdict(
        random_ok && tie_ok,
        format!("100 x 99 table equal to oracle: {random_ok}; collinear tie-break [0, 2]: {tie_ok}"),
    )
}

fn two_cluster_fixture() -> Array2<f64> {
    let offsets = [(0.0, 0.0), (0.9, 0.2), (0.3, 1.1), (-0.7, 0.5), (0.4, -0.8), (-0.2, -0.6)];
    let mut x = Array2::zeros((12, 2));
    for (i, &(dx, dy)) in offsets.iter().enumerate() {
        x[[i, 0]] = dx;
        x[[i, 1]] = dy;
        x[[i + 6, 0]] = 20.0 + dy * 1.3;
        x[[i + 6, 1]] = 5.0 + dx * 0.7;
    }
    x
}

fn exact_isolation_psi2(x: &Array2<f64>) -> Array2<f64> {
    let n = x.nrows();
    let d2 = |a: usize, b: usize| -> f64 { (0..x.ncols()).map(|c| (x[[a, c]] - x[[b, c]]).powi(2)).sum() };
    let mut k = Array2::zeros((n, n));
    let mut pairs = 0.0;
    for a in 0..n {
        for b in (a + 1)..n {
            pairs += 1.0;
            // ties go to the lower-indexed center
            let cell: Vec<usize> = (0..n).map(|i| if d2(i, b) < d2(i, a) { b } else { a }).collect();
            for i in 0..n {
                for j in 0..n {
                    if cell[i] == cell[j] {
                        k[[i, j]] += 1.0;
                    }
                }
            }
        }
    }
    k / pairs
}

fn isolation_expectation() -> Outcome {
    let x = two_cluster_fixture();
    let t = 10_000;
    let mc = isolation_kernel(&x, 2, t, 12).unwrap().values;
    let exact = exact_isolation_psi2(&x);
    let mut worst_z: f64 = 0.0;
    let mut pass = true;
    for i in 0..12 {
        for j in (i + 1)..12 {
            let p = exact[[i, j]];
            let se = (p * (1.0 - p) / t as f64).sqrt();
            let diff = (mc[[i, j]] - p).abs();
            if se == 0.0 {
                pass &= diff == 0.0;
            } else {
                worst_z = worst_z.max(diff / se);
                pass &= diff <= 3.0 * se;
            }
        }
    }
    verdict(pass, format!("66 entries, max |MC - exact| = {worst_z:.2} standard errors (<= 3)"))
}

struct CircleRuns {
    auc: Vec<(InitKind, Vec<(usize, f64)>)>,
    spearman_pca: f64,
    elapsed: Duration,
}

fn circle_runs() -> &'static CircleRuns {
    static RUNS: std::sync::OnceLock<CircleRuns> = std::sync::OnceLock::new();
    RUNS.get_or_init(|| {
        let start = Instant::now();
        let tmp = TempDir::new().unwrap();
        let base = RunConfig {
            data: Some("circle:1000".into()),
            kernel: KernelKind::Laplacian,
            iters: 2000,
            checkpoint_every: 100,
            ..RunConfig::default()
        };
        let mut auc = Vec::new();
        let mut spearman_pca = f64::NAN;
        for init in [InitKind::Random, InitKind::Pca, InitKind::Ensemble] {
            let cfg = RunConfig {
                init,
                out: tmp.path().join(init.to_string()),
                ..base.clone()
            };
            let run = cmd_embed(&cfg).unwrap();
            if init == InitKind::Pca {
                let data = generate_circle(1000, 1.0, 0.05, cfg.seed).unwrap();
                let last = read_layout(&cfg.out.join("checkpoints/iter_02000.csv")).unwrap();
                spearman_pca = circular_rank_correlation(
                    &angles_about_centroid(&data.points),
                    &angles_about_centroid(&last.coords),
                );
            }
            auc.push((init, run.auc_series()));
        }
        CircleRuns {
            auc,
            spearman_pca,
            elapsed: start.elapsed(),
        }
    })
}

fn series(runs: &CircleRuns, init: InitKind) -> &[(usize, f64)] {
    &runs.auc.iter().find(|(i, _)| *i == init).unwrap().1
}

fn circle_experiment() -> Outcome {
    let runs = circle_runs();
    let last = |i| series(runs, i).last().unwrap().1;
    let (random, pca, ensemble) = (last(InitKind::Random), last(InitKind::Pca), last(InitKind::Ensemble));
    let checks = [
        pca > random,
        ensemble >= random,
        runs.spearman_pca.abs() > 0.95,
        runs.elapsed < Duration::from_secs(600),
        series(runs, InitKind::Pca).len() == 20,
    ];
    verdict(
        checks.iter().all(|&c| c),
        format!(
            "final AUC random {random:.6} pca {pca:.6} ensemble {ensemble:.6}; pca > random: {}; \
             ensemble >= random: {}; pca circular Spearman {:.4}; 3 runs in {:.0} s",
            checks[0],
            checks[1],
            runs.spearman_pca,
            runs.elapsed.as_secs_f64()
        ),
    )
}

fn convergence_speed() -> Outcome {
    let runs = circle_runs();
    let it = |i| iterations_to_fraction(series(runs, i), 0.95).unwrap();
    let (ens, rnd) = (it(InitKind::Ensemble), it(InitKind::Random));
    verdict(ens <= rnd, format!("iterations to 95% of final AUC: ensemble {ens}, random {rnd}"))
}

fn monotone_descent() -> Outcome {
    let mut x = gaussian(60, 5, 9);
    for i in 30..60 {
        x[[i, 0]] += 8.0;
    }
    let p = gaussian_joint(&x, 10.0).unwrap();
    let init = rescale_init(&random_init(60, 9).unwrap(), 1.0).unwrap();
    let params = OptimizerParams {
        learning_rate: 1e-2,
        momentum_early: 0.0,
        momentum_late: 0.0,
        early_exaggeration_factor: 1.0,
        max_iters: 500,
        checkpoint_every: 1,
        ..OptimizerParams::default()
    };
    let traj = run_tsne(&p, &init, &params).unwrap();
    let start = kl_divergence(&p, &low_dim_affinities(&init).unwrap()).unwrap();
    let mut prev = start;
    let mut worst_rise = f64::NEG_INFINITY;
    for cp in &traj.checkpoints {
        worst_rise = worst_rise.max(cp.kl - prev);
        prev = cp.kl;
    }
    verdict(
        traj.checkpoints.len() == 500 && worst_rise <= 1e-12,
        format!("KL {start:.6} -> {prev:.6} over 500 steps, largest step change {worst_rise:.2e} (<= 1e-12)"),
    )
}

fn checkpoint_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir.join("checkpoints"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    files.sort();
    files
        .into_iter()
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect()
}

fn determinism() -> Outcome {
    let tmp = TempDir::new().unwrap();
    let base = RunConfig {
        data: Some("circle:300".into()),
        kernel: KernelKind::Isolation,
        init: InitKind::Ensemble,
        iters: 400,
        kmax: 20,
        seed: 5,
        ..RunConfig::default()
    };
    let mut outputs = Vec::new();
    for jobs in [1, 4, 8] {
        for rep in 0..2 {
            let cfg = RunConfig {
                jobs,
                out: tmp.path().join(format!("j{jobs}-{rep}")),
                ..base.clone()
            };
            cmd_embed(&cfg).unwrap();
            outputs.push(((jobs, rep), checkpoint_bytes(&cfg.out)));
        }
    }
    let reference = &outputs[0].1;
    let mismatched: Vec<String> = outputs
        .iter()
        .filter(|(_, o)| o != reference)
        .map(|((j, r), _)| format!("jobs={j} run {r}"))
        .collect();
    verdict(
        mismatched.is_empty() && reference.len() == 4,
        if mismatched.is_empty() {
            format!("{} checkpoint files identical across 2 runs at 1, 4 and 8 threads", reference.len())
        } else {
            format!("differs: {}", mismatched.join(", "))
        },
    )
}

fn dimensional_fidelity() -> Outcome {
    let records = |alphabet: &str| -> Vec<SequenceRecord> {
        let symbols: Vec<char> = alphabet.chars().collect();
        (0..3)
            .map(|r| SequenceRecord {
                id: format!("r{r}"),
                sequence: symbols.iter().cycle().skip(r).take(symbols.len() + 5).collect(),
                label: "x".into(),
            })
            .collect()
    };
    let dim24 = build_feature_matrix(&records("ACDEFGHIKLMNPQRSTVWYBZXU"), 3, None).unwrap().ncols();
    let dim20 = build_feature_matrix(&records("ACDEFGHIKLMNPQRSTVWY"), 3, None).unwrap().ncols();
    let direct = Alphabet::new("ACDEFGHIKLMNPQRSTVWYBZXU".chars())
        .unwrap()
        .spectrum_len(3)
        .unwrap();
    verdict(
        dim24 == 13824 && dim20 == 8000 && direct == 13824,
        format!("24 symbols, k=3: {dim24}; 20 symbols, k=3: {dim20}"),
    )
}

type Criterion = (u32, &'static str, fn() -> Outcome, Option<Duration>);

fn main() {
    let selected: HashSet<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria: [Criterion; 11] = [
        (1, "gradient matches finite differences", gradient_matches_finite_differences, Some(Duration::from_secs(10))),
        (2, "perplexity calibration at 250", perplexity_calibration, Some(Duration::from_secs(5))),
        (3, "joint distribution invariants, four kernels", joint_invariants, None),
        (4, "quality metric against naive oracle", metric_oracle, None),
        (5, "kNN against double-loop oracle", knn_oracle, None),
        (6, "isolation kernel expectation", isolation_expectation, None),
        (7, "circle: informed vs random initialization", circle_experiment, Some(Duration::from_secs(600))),
        (8, "circle: convergence speed", convergence_speed, None),
        (9, "monotone plain gradient descent", monotone_descent, None),
        (10, "byte-identical reruns at 1/4/8 threads", determinism, None),
        (11, "feature dimension", dimensional_fidelity, None),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = Vec::new();
    for (id, name, run, limit) in criteria {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            verdict(false, format!("panicked: {msg}"))
        });
        let took = start.elapsed();
        let in_time = limit.is_none_or(|l| took <= l);
        let pass = outcome.pass && in_time;
        let budget = limit.map_or_else(String::new, |l| format!(", limit {} s", l.as_secs()));
        println!(
            "criterion {id:>2} {}: {name}: {} ({:.2} s{budget})",
            if pass { "PASS" } else { "FAIL" },
            outcome.detail,
            took.as_secs_f64()
        );
        if !pass {
            failed.push(id);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all selected criteria passed");
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
