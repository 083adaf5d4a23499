//! Acceptance run: one PASS/FAIL line per criterion.
//! Runs without the libtest harness so the lines print on success too.
//!
//! `ACCEPTANCE_ONLY=1,6` restricts the run to the listed criteria.
//! `ACCEPTANCE_STRICT=1` exits nonzero when any criterion fails.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use gdce::checkpoint;
use gdce::config::RunConfig;
use gdce::pipeline::{self, AblationInputs, GdceInputs, Scanner, Split, TrainOptions};
use gdce_core::curve::{fit_curve_to_target, CurveCoefficients};
use gdce_core::gradcheck;
use gdce_core::image::Normalization;
use gdce_core::metrics::{roc_auc_binary, ConfusionMatrix};
use gdce_core::rng;
use gdce_core::synth::ShiftProfile;
use rand::Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn secs(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}

fn curve_cases<T>(rng: &mut impl Rng, cases: usize, cast: impl Fn(f64) -> T) -> usize
where
    T: gdce_core::Scalar,
{
    let mut failures = 0;
    for _ in 0..cases {
        let n = rng.gen_range(1..=8);
        let alphas: Vec<T> = (0..n)
            .map(|_| match rng.gen_range(0..10) {
                0 => cast(1.0),
                1 => cast(-1.0),
                _ => cast(rng.gen_range(-1.0..=1.0)),
            })
            .collect();
        let c = CurveCoefficients::new(alphas).expect("valid coefficients");
        let mut xs: Vec<T> = (0..32).map(|_| cast(rng.gen::<f64>())).collect();
        xs.extend([T::zero(), T::one()]);
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let ys: Vec<T> = xs.iter().map(|&x| c.map(x)).collect();
        let in_range = ys.iter().all(|&y| y >= T::zero() && y <= T::one());
        let fixed = c.map(T::zero()) == T::zero() && c.map(T::one()) == T::one();
        let monotone = ys.windows(2).all(|w| w[0] <= w[1]);
        failures += usize::from(!(in_range && fixed && monotone));
    }
    failures
}

fn criterion_1() -> Verdict {
    let t = Instant::now();
    let mut rng = rng::stream(1, &[]);
    let f64_fail = curve_cases(&mut rng, 10_000, |v| v);
    let f32_fail = curve_cases(&mut rng, 10_000, |v| v as f32);
    let dt = t.elapsed();
    verdict(
        f64_fail == 0 && f32_fail == 0 && dt < Duration::from_secs(5),
        format!("10000 cases each in f64/f32, failures {f64_fail}/{f32_fail}, {}", secs(dt)),
    )
}

fn criterion_2() -> Verdict {
    let t = Instant::now();
    let checks = match gradcheck::run_all(0, 1000) {
        Ok(c) => c,
        Err(e) => return verdict(false, format!("gradient check errored: {e}")),
    };
    let dt = t.elapsed();
    let worst: Vec<String> = checks.iter().map(|c| format!("{} {:.1e}", c.op, c.max_rel_error)).collect();
    let pass = checks.iter().all(|c| c.passed()) && dt < Duration::from_secs(60);
    verdict(pass, format!("{}; {}", worst.join(", "), secs(dt)))
}

fn criterion_3() -> Verdict {
    let t = Instant::now();
    let grid: Vec<f64> = (0..1024).map(|i| i as f64 / 1023.0).collect();
    let mut errors = Vec::new();
    for gamma in [0.5, 0.75, 1.5, 2.0] {
        let target: Vec<f64> = grid.iter().map(|x: &f64| x.powf(gamma)).collect();
        match fit_curve_to_target(&target, 8) {
            Ok(fit) => errors.push((gamma, fit.max_error)),
            Err(e) => return verdict(false, format!("gamma {gamma}: {e}")),
        }
    }
    let dt = t.elapsed();
    let pass = errors.iter().all(|&(_, e)| e <= 0.02) && dt < Duration::from_secs(30);
    let detail: Vec<String> = errors.iter().map(|(g, e)| format!("gamma {g}: {e:.4}")).collect();
    verdict(pass, format!("max grid error {}; {}", detail.join(", "), secs(dt)))
}

/// Shared data of criteria 4 and 5.
struct Workspace {
    root: PathBuf,
    cfg: RunConfig,
}

impl Workspace {
    fn path(&self, p: &str) -> PathBuf {
        self.root.join(p)
    }

    fn manifest(&self, dir: &str) -> PathBuf {
        self.path(dir).join(pipeline::MANIFEST)
    }

    fn gdce_inputs(&self) -> GdceInputs {
        GdceInputs {
            shifted: self.manifest("shifted_train"),
            reference: self.manifest("reference_train"),
            discriminator: self.path("clf").join(pipeline::DISCRIMINATOR),
        }
    }
}

fn eval(
    ws: &Workspace,
    cfg: &RunConfig,
    clf: &str,
    gdce: Option<&Path>,
    set: &str,
) -> pipeline::Result<gdce_core::MetricsReport> {
    let disc = ws.path(clf).join(pipeline::DISCRIMINATOR);
    Ok(pipeline::eval(cfg, &disc, gdce, &ws.manifest(set))?.metrics)
}

fn per_class(r: &gdce_core::MetricsReport) -> String {
    let v: Vec<String> = r.per_class_accuracy.iter().map(|a| a.map_or("-".into(), |a| format!("{a:.2}"))).collect();
    format!("[{}]", v.join(" "))
}

fn criterion_4(ws: &Workspace) -> pipeline::Result<Vec<(String, Verdict)>> {
    let t = Instant::now();
    let cfg = &ws.cfg;
    for (dir, scanner, split) in [
        ("reference_train", Scanner::Reference, Split::Train),
        ("reference_test", Scanner::Reference, Split::Test),
        ("shifted_train", Scanner::Shifted, Split::Train),
        ("shifted_test", Scanner::Shifted, Split::Test),
    ] {
        pipeline::gen_data(cfg, scanner, split, &ws.path(dir), false)?;
    }
    // Control: the reference test draw through the identity acquisition.
    pipeline::shift_dataset(
        &ws.manifest("reference_test"),
        &ShiftProfile::identity(),
        &ws.path("identity_test"),
        false,
    )?;

    pipeline::train_clf(cfg, &ws.manifest("reference_train"), &ws.path("clf"), TrainOptions::default())?;
    let reference = eval(ws, cfg, "clf", None, "reference_test")?;
    let shifted = eval(ws, cfg, "clf", None, "shifted_test")?;
    let control = eval(ws, cfg, "clf", None, "identity_test")?;

    let g = pipeline::train_gdce(cfg, &ws.gdce_inputs(), &ws.path("gdce"), TrainOptions::default())?;
    let gdce_ckpt = g.checkpoint.clone().expect("complete run");
    let enhanced = eval(ws, cfg, "clf", Some(&gdce_ckpt), "shifted_test")?;

    let mut z = cfg.clone();
    z.normalization = Normalization::ZScore.name().into();
    pipeline::train_clf(&z, &ws.manifest("reference_train"), &ws.path("clf_zscore"), TrainOptions::default())?;
    let z_ref = eval(ws, &z, "clf_zscore", None, "reference_test")?;
    let z_shift = eval(ws, &z, "clf_zscore", None, "shifted_test")?;
    let dt = t.elapsed();

    let r = reference.worst_group_accuracy;
    let s = shifted.worst_group_accuracy;
    let e = enhanced.worst_group_accuracy;
    let drop = r - s;
    let mut out = vec![
        (
            "4a".into(),
            verdict(r >= 0.90, format!("reference worst-group {r:.3} per class {}", per_class(&reference))),
        ),
        (
            "4b".into(),
            verdict(
                drop >= 0.20,
                format!(
                    "shifted worst-group {s:.3} per class {}, drop {:.1} points (identity-profile control: accuracy drop {:.1} points)",
                    per_class(&shifted),
                    100.0 * drop,
                    100.0 * (reference.accuracy - control.accuracy)
                ),
            ),
        ),
        (
            "4c".into(),
            verdict(
                e >= 0.85 * r && g.epochs_completed <= 30,
                format!(
                    "enhanced worst-group {e:.3} per class {} = {:.3} x reference after {} epochs (best epoch {})",
                    per_class(&enhanced),
                    e / r,
                    g.epochs_completed,
                    g.best_epoch.unwrap_or(0)
                ),
            ),
        ),
    ];
    let (ae, af, az) = (enhanced.roc_auc.macro_auc, shifted.roc_auc.macro_auc, z_shift.roc_auc.macro_auc);
    out.push((
        "4d".into(),
        verdict(
            ae > af && ae > az && dt <= Duration::from_secs(30 * 60),
            format!(
                "shifted ROC-AUC gdce {ae:.3} vs full-range {af:.3} vs z-score {az:.3} (z-score reference worst-group {:.3}); {}",
                z_ref.worst_group_accuracy,
                secs(dt)
            ),
        ),
    ));
    Ok(out)
}

fn criterion_5(ws: &Workspace) -> pipeline::Result<Verdict> {
    let t = Instant::now();
    let mut cfg = ws.cfg.clone();
    cfg.gdce.drop_classes = vec![0, 3];
    cfg.ablation.layers = vec![2, 12];
    cfg.ablation.iterations = vec![8];
    let inputs = AblationInputs { gdce: ws.gdce_inputs(), test: ws.manifest("shifted_test") };
    let grid = pipeline::ablate(&cfg, &inputs, &ws.path("ablation"), false)?;
    let cells = grid.validation.iter().flatten().count() + grid.test.iter().flatten().count();
    Ok(verdict(
        cells == 4,
        format!(
            "classes A,D dropped: L=2 validation {:.3} test {:.3}; L=12 validation {:.3} test {:.3} (recorded, direction not asserted); {}",
            grid.validation[0][0],
            grid.test[0][0],
            grid.validation[1][0],
            grid.test[1][0],
            secs(t.elapsed())
        ),
    ))
}

/// Brute-force AUC: wins plus half ties over all positive/negative pairs.
fn pairwise_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &pi) in positive.iter().enumerate() {
        for (j, &pj) in positive.iter().enumerate() {
            if pi && !pj {
                pairs += 1.0;
                wins += match scores[i].partial_cmp(&scores[j]).unwrap() {
                    std::cmp::Ordering::Greater => 1.0,
                    std::cmp::Ordering::Equal => 0.5,
                    std::cmp::Ordering::Less => 0.0,
                };
            }
        }
    }
    (pairs > 0.0).then(|| wins / pairs)
}

fn criterion_6() -> Verdict {
    const GRID: [f64; 3] = [0.1, 0.5, 0.9];
    let mut checked = 0u64;
    let mut mismatches = 0u64;
    for n in 1..=8u32 {
        let patterns = 3usize.pow(n);
        for labels in 0..(1u32 << n) {
            let positive: Vec<bool> = (0..n).map(|i| labels >> i & 1 == 1).collect();
            for code in 0..patterns {
                let mut c = code;
                let scores: Vec<f64> = (0..n)
                    .map(|_| {
                        let v = GRID[c % 3];
                        c /= 3;
                        v
                    })
                    .collect();
                let fast = roc_auc_binary(&scores, &positive).expect("valid input");
                let slow = pairwise_auc(&scores, &positive);
                checked += 1;
                let same = match (fast, slow) {
                    (Some(a), Some(b)) => (a - b).abs() <= 1e-12,
                    (None, None) => true,
                    _ => false,
                };
                mismatches += u64::from(!same);
            }
        }
    }
    let mut rng = rng::stream(6, &[]);
    let mut pr_checked = 0u64;
    let mut pr_mismatch = 0u64;
    for _ in 0..2000 {
        let classes = rng.gen_range(2..6);
        let n = rng.gen_range(1..40);
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..classes)).collect();
        let preds: Vec<usize> = (0..n).map(|_| rng.gen_range(0..classes)).collect();
        let cm = ConfusionMatrix::new(&preds, &labels, classes).unwrap();
        for c in 0..classes {
            let direct = gdce_core::metrics::precision_recall(&preds, &labels, c).unwrap();
            pr_checked += 1;
            pr_mismatch += u64::from(direct != cm.precision_recall(c));
        }
        let direct_acc = preds.iter().zip(&labels).filter(|(p, l)| p == l).count() as f64 / n as f64;
        pr_mismatch += u64::from(direct_acc != cm.accuracy());
    }
    verdict(
        mismatches == 0 && pr_mismatch == 0,
        format!(
            "AUC vs pairwise oracle: {checked} datasets, {mismatches} mismatches; precision/recall vs confusion matrix: {pr_checked} checks, {pr_mismatch} mismatches"
        ),
    )
}

fn cli(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_gdce"))
        .current_dir(dir)
        .args(args)
        .env_remove("GDCE_SEED")
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("gdce {}: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)));
    }
    Ok(())
}

const SMALL_RUN: &str = "seed = 11
[data]
per_class = 40
test_per_class = 20
image_size = 32
[model]
image_size = 32
[classifier]
epochs = 3
[gdce]
epochs = 3
";

fn end_to_end(dir: &Path) -> Result<Vec<(String, String)>, String> {
    std::fs::create_dir_all(dir).map_err(|e| e.to_string())?;
    std::fs::write(dir.join("run.toml"), SMALL_RUN).map_err(|e| e.to_string())?;
    let c = ["--config", "run.toml"];
    let steps: [&[&str]; 6] = [
        &["gen-data", "--out", "ref"],
        &["gen-data", "--scanner", "shifted", "--out", "shift"],
        &["gen-data", "--scanner", "shifted", "--split", "test", "--out", "shift_test"],
        &["train-clf", "--manifest", "ref/manifest.json", "--out", "clf"],
        &[
            "train-gdce",
            "--shifted",
            "shift/manifest.json",
            "--reference",
            "ref/manifest.json",
            "--discriminator",
            "clf/discriminator.ckpt",
            "--out",
            "gdce",
        ],
        &[
            "eval",
            "--discriminator",
            "clf/discriminator.ckpt",
            "--gdce",
            "gdce/gdce.ckpt",
            "--manifest",
            "shift_test/manifest.json",
            "--out",
            "eval",
        ],
    ];
    for s in steps {
        cli(dir, &[&c[..], s].concat())?;
    }
    ["clf/discriminator.ckpt", "gdce/gdce.ckpt", "eval/report.json", "eval/report.txt"]
        .iter()
        .map(|f| checkpoint::sha256_file(&dir.join(f)).map(|h| (f.to_string(), h)).map_err(|e| e.to_string()))
        .collect()
}

fn criterion_7(root: &Path) -> Verdict {
    let a = end_to_end(&root.join("run_a"));
    let b = end_to_end(&root.join("run_b"));
    match (a, b) {
        (Ok(a), Ok(b)) => {
            let differing: Vec<&str> =
                a.iter().zip(&b).filter(|(x, y)| x.1 != y.1).map(|(x, _)| x.0.as_str()).collect();
            let detail = if differing.is_empty() {
                format!("{} artifacts identical across two seeded runs", a.len())
            } else {
                format!("differing artifacts: {}", differing.join(", "))
            };
            verdict(differing.is_empty(), detail)
        }
        (Err(e), _) | (_, Err(e)) => verdict(false, e),
    }
}

fn selected() -> Vec<u32> {
    match std::env::var("ACCEPTANCE_ONLY") {
        Ok(s) => s.split(',').filter_map(|v| v.trim().parse().ok()).collect(),
        Err(_) => (1..=7).collect(),
    }
}

fn main() {
    let only = selected();
    let tmp = tempfile::tempdir().expect("temporary directory");
    let ws = Workspace { root: tmp.path().to_owned(), cfg: RunConfig::default() };
    let mut failed = 0;
    let mut report = |name: &str, v: Verdict| {
        println!("criterion {name}: {} {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        failed += usize::from(!v.pass);
    };
    let on = |n: u32| only.contains(&n);
    if on(1) {
        report("1", criterion_1());
    }
    if on(2) {
        report("2", criterion_2());
    }
    if on(3) {
        report("3", criterion_3());
    }
    if on(6) {
        report("6", criterion_6());
    }
    if on(7) {
        report("7", criterion_7(tmp.path()));
    }
    if on(4) || on(5) {
        match criterion_4(&ws) {
            Ok(vs) => {
                for (name, v) in vs {
                    report(&name, v);
                }
                if on(5) {
                    match criterion_5(&ws) {
                        Ok(v) => report("5", v),
                        Err(e) => report("5", verdict(false, e.to_string())),
                    }
                }
            }
            Err(e) => report("4", verdict(false, format!("pipeline error: {e}"))),
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        // the report is the product; set ACCEPTANCE_STRICT=1 to fail the run too
        if std::env::var_os("ACCEPTANCE_STRICT").is_some() {
            std::process::exit(1);
        }
    }
}
