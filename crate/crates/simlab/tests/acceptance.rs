//! Acceptance suite: one `[PASS]`/`[FAIL]` line per criterion, nonzero exit
//! if any criterion fails.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use simlab_core::attack::{attack_size_bound, targeted_attack, AttackStatus};
use simlab_core::codebook::build_codebook;
use simlab_core::compressor::sample_compressor;
use simlab_core::detection::guarantee_sweep;
use simlab_core::nonlinear::{
    build_map, finite_difference_jacobian, fragility_ratio, jacobian_agreement, probe_point, secant_rate, MapKind, DEFAULT_FD_STEP,
};
use simlab_core::pipeline::{run_pipeline, PipelineConfig};
use simlab_core::rng::{derive_seed, stream_rng, trial_rng, unit_vector};
use simlab_core::robustness::{estimate_robustness, misdirection_radius_bound, misdirection_rate, projection_tail_check};
use simlab_core::scenario::{draw_near_codeword, draw_other_label, Scenario, ScenarioConfig};
use simlab_core::stats::{binomial_std_err, mean_ci};
use simlab_core::{Classifier, Codebook, CodebookConfig, DMatrix, DVector, Label, Outcome};

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: String) -> Verdict {
    Verdict { passed, detail }
}

fn projector_laws() -> Verdict {
    let start = Instant::now();
    let mut failures = Vec::new();
    let (mut worst_sym, mut worst_idem) = (0.0f64, 0.0f64);
    for (shape, (m, n)) in [(10, 100), (50, 1000), (100, 1000)].into_iter().enumerate() {
        for k in 0..100 {
            let lc = sample_compressor(m, n, derive_seed(shape as u64, k)).unwrap();
            let d = lc.diagnostics();
            worst_sym = worst_sym.max(d.symmetry_error);
            worst_idem = worst_idem.max(d.idempotence_error);
            if d.symmetry_error > 1e-9 || d.idempotence_error > 1e-8 || d.rank != m {
                failures.push(format!("({m},{n}) #{k}"));
            }
        }
    }
    let elapsed = start.elapsed();
    verdict(
        failures.is_empty() && elapsed < Duration::from_secs(30),
        format!(
            "300 compressors, max symmetry {worst_sym:.1e}, max idempotence {worst_idem:.1e}, failures {:?}, {:.1} s (limit 30 s)",
            failures,
            elapsed.as_secs_f64()
        ),
    )
}

fn projection_concentration() -> Verdict {
    let start = Instant::now();
    let r = projection_tail_check(100, 1000, 0.5, 100_000, 2).unwrap();
    let elapsed = start.elapsed();
    let median_ok = (r.median_ratio / 0.1f64.sqrt() - 1.0).abs() <= 0.02;
    verdict(
        r.lower_ok() && r.upper_ok() && median_ok && elapsed < Duration::from_secs(300),
        format!(
            "lower tail {:.2e} <= {:.2e} + {:.1e}, upper tail {:.2e} <= {:.3} + {:.1e}, median {:.5} vs {:.5}, {:.0} s (limit 300 s)",
            r.empirical_lower_tail,
            r.bound_lower,
            r.allowance(r.bound_lower),
            r.empirical_upper_tail,
            r.bound_upper,
            r.allowance(r.bound_upper),
            r.median_ratio,
            0.1f64.sqrt(),
            elapsed.as_secs_f64()
        ),
    )
}

fn targeted_attack_scaling() -> Verdict {
    // The claim is over the draw of the compressor, so every trial gets its
    // own world. Labels sit far apart so that the compressed distance, not
    // the sphere radius, sets the attack size.
    let trials = 500u64;
    let (m, n, eps) = (50.0f64, 1000.0f64, 0.3);
    let (mut feasible, mut succeeded, mut over) = (0usize, 0usize, 0usize);
    let mut ratios = Vec::new();
    for k in 0..trials {
        let s = Scenario::build(&ScenarioConfig::far(derive_seed(3, k))).unwrap();
        let clf = s.classifier();
        let mut rng = trial_rng(3, k);
        let d = s.draw_input(&mut rng);
        let target = s.draw_target(d.label, &mut rng);
        let p = targeted_attack(&clf, &d.x, target, 0.99).unwrap();
        if p.status != AttackStatus::Constructed {
            continue;
        }
        feasible += 1;
        succeeded += usize::from(clf.classify(&(&d.x + &p.w)).unwrap().outcome == Outcome::Label(target));
        ratios.push(p.norm / p.ambient_distance);
        over += usize::from(p.norm > attack_size_bound(&clf, &d.x, target, eps).unwrap());
    }
    let (mean, _) = mean_ci(&ratios);
    let expected = (m / n).sqrt();
    let allowed = (-m * eps * eps / 12.0).exp();
    let limit = allowed + 3.0 * binomial_std_err(allowed, trials as usize);
    let over_frac = over as f64 / trials as f64;
    verdict(
        feasible > 0 && succeeded == feasible && (0.9 * expected..=1.1 * expected).contains(&mean) && over_frac <= limit,
        format!(
            "{succeeded}/{feasible} feasible attacks succeed, mean ratio {mean:.4} in [{:.4}, {:.4}], above bound {over_frac:.3} <= {limit:.3}",
            0.9 * expected,
            1.1 * expected
        ),
    )
}

fn robustness_gap() -> Verdict {
    let start = Instant::now();
    let s = Scenario::build(&ScenarioConfig::near(4)).unwrap();
    let clf = s.classifier();
    let r = s.codebook().radius();
    let norms: Vec<f64> = (0..500)
        .map(|k| {
            let mut rng = trial_rng(40, k);
            let d = s.draw_input(&mut rng);
            let target = s.draw_target(d.label, &mut rng);
            targeted_attack(&clf, &d.x, target, 0.99).unwrap().norm
        })
        .collect();
    let (mean_attack, _) = mean_ci(&norms);
    let l = 3.0 * mean_attack;
    // 10 inputs x 1000 perturbations each for both halves.
    let (mut survived, mut misdirected, mut total, mut below_total) = (0usize, 0usize, 0usize, 0usize);
    let mut thresholds = Vec::new();
    for k in 0..10 {
        let mut rng = trial_rng(41, k);
        let d = s.draw_input(&mut rng);
        let target = s.draw_target(d.label, &mut rng);
        let est = estimate_robustness(&clf, &d.x, l, 1000, derive_seed(42, k)).unwrap();
        survived += (est.survive_fraction * 1000.0).round() as usize;
        total += 1000;
        let (_, dist) = s.codebook().nearest_codeword(&d.x, target).unwrap();
        let threshold = misdirection_radius_bound(0.2, 50, 1000, r, dist);
        thresholds.push(threshold);
        if threshold > 0.0 {
            let rate = misdirection_rate(&clf, &d.x, target, 0.99 * threshold, 1000, derive_seed(43, k)).unwrap();
            misdirected += rate.successes;
            below_total += 1000;
        }
    }
    let elapsed = start.elapsed();
    let survive = survived as f64 / total as f64;
    let misdirect = if below_total == 0 { f64::NAN } else { misdirected as f64 / below_total as f64 };
    let min_t = thresholds.iter().copied().fold(f64::INFINITY, f64::min);
    verdict(
        survive >= 0.99 && below_total == total && misdirect <= 0.01 && elapsed < Duration::from_secs(600),
        format!(
            "l = 3 x {mean_attack:.4}: survive {survive:.4} of {total}; misdirection below threshold (min {min_t:.3}) {misdirect:.4} of {below_total}, {:.1} s",
            elapsed.as_secs_f64()
        ),
    )
}

fn detection_guarantee() -> Verdict {
    let s = Scenario::build(&ScenarioConfig::near(5)).unwrap();
    let sweep = guarantee_sweep(&s.classifier(), 0.5, 0.99, 1000, 50_000, 5).unwrap();
    verdict(
        sweep.eligible == 1000 && sweep.missed() == 0,
        format!(
            "{}/{} attacks inside the guarantee radius flagged at threshold r ({} attempts)",
            sweep.detected, sweep.eligible, sweep.attempts
        ),
    )
}

fn gain_ratio() -> Verdict {
    let (n, m) = (2000, 50);
    let floor = 0.9 * (((n + m) as f64) / m as f64).sqrt();
    let mut passing = 0;
    let mut min_ratio = f64::INFINITY;
    for seed in 0..100 {
        let map = build_map(MapKind::Linear, n, m, seed).unwrap();
        let r = fragility_ratio(map.as_ref(), &DVector::zeros(n), 1000, seed).unwrap();
        min_ratio = min_ratio.min(r.ratio);
        passing += usize::from(r.ratio >= floor);
    }

    // Secant along random directions at a unit-norm point.
    let map = build_map(MapKind::Linear, n, m, 7).unwrap();
    let x = probe_point(n, 1.0 / (n as f64).sqrt(), 7);
    let j = map.jacobian_at(&x).unwrap();
    let mut rng = stream_rng(7, 0);
    let mut secant_err = 0.0f64;
    for _ in 0..20 {
        let o = unit_vector(n, &mut rng);
        let exact = (&j * &o).norm();
        secant_err = secant_err.max((secant_rate(map.as_ref(), &x, &o, 1e-4).unwrap() - exact).abs() / exact);
    }

    let mut fd_err = 0.0f64;
    for (kind, n, m) in [(MapKind::Linear, 2000, 50), (MapKind::Tanh, 200, 20), (MapKind::TwoLayer, 200, 20)] {
        let map = build_map(kind, n, m, 9).unwrap();
        let x = probe_point(n, 1.0, 9);
        let analytic = map.analytic_jacobian(&x).unwrap().unwrap();
        let fd = finite_difference_jacobian(map.as_ref(), &x, DEFAULT_FD_STEP).unwrap();
        fd_err = fd_err.max(jacobian_agreement(&analytic, &fd));
    }
    verdict(
        passing >= 95 && secant_err <= 1e-9 && fd_err <= 1e-4,
        format!(
            "{passing}/100 seeds >= {floor:.3} (min {min_ratio:.3}), linear secant error {secant_err:.1e}, FD agreement {fd_err:.1e}"
        ),
    )
}

fn pipeline_separation() -> Verdict {
    let start = Instant::now();
    let cfg = PipelineConfig::default();
    let run = run_pipeline(&cfg).unwrap();
    let elapsed = start.elapsed();
    let s = run.summary;
    let attacked_ok = run.trials.iter().filter(|t| t.attacked && t.feasible).all(|t| t.rho_max < cfg.correlation_threshold);
    let clean_ok = run
        .trials
        .iter()
        .filter(|t| !t.attacked && t.decoded == Some(t.sentence_id))
        .all(|t| !t.flagged);
    verdict(
        s.attacked_feasible > 0 && s.clean_correct > 0 && attacked_ok && clean_ok && s.separation >= 0.2 && elapsed < Duration::from_secs(120),
        format!(
            "{} feasible attacks all flagged: {attacked_ok}, {} correct clean decodes all unflagged: {clean_ok}, separation {:.4}, {:.1} s",
            s.attacked_feasible,
            s.clean_correct,
            s.separation,
            elapsed.as_secs_f64()
        ),
    )
}

fn cli_csv(dir: &Path, name: &str, args: &[&str], threads: &str) -> Result<Vec<u8>, String> {
    let path = dir.join(name);
    let out = Command::new(env!("CARGO_BIN_EXE_simlab"))
        .args(args)
        .args(["--threads", threads, "--out", path.to_str().unwrap()])
        .env_remove("SIMLAB_SEED")
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)));
    }
    std::fs::read(&path).map_err(|e| e.to_string())
}

fn reproducibility() -> Verdict {
    let dir = tempfile::TempDir::new().unwrap();
    let cases: &[&[&str]] = &[
        &["codebook", "gen", "--n", "100", "--seed", "1"],
        &["compressor", "gen", "--m", "10", "--n", "100", "--count", "20", "--seed", "1"],
        &["attack", "targeted", "--trials", "100", "--seed", "1"],
        &["attack", "untargeted", "--trials", "100", "--seed", "1"],
        &["robustness", "sweep", "--trials", "500", "--steps", "4", "--seed", "1"],
        &["concentration", "check", "--eps", "0.3,0.5", "--trials", "2000", "--seed", "1"],
        &["ratio", "--seeds", "3", "--n", "400", "--m", "20", "--fd-check", "--seed", "1"],
        &["ratio", "--map", "twolayer", "--seeds", "2", "--n", "200", "--m", "10", "--seed", "1"],
        &["detect", "run", "--trials", "200", "--seed", "1"],
        &["detect", "roc", "--trials", "200", "--seed", "1"],
        &["pipeline", "run", "--seed", "1"],
    ];
    let mut mismatched = Vec::new();
    for (i, args) in cases.iter().enumerate() {
        let runs = ["1", "1", "4"]
            .iter()
            .enumerate()
            .map(|(j, t)| cli_csv(dir.path(), &format!("{i}-{j}.csv"), args, t))
            .collect::<Result<Vec<_>, _>>();
        match runs {
            Ok(r) if r[0] == r[1] && r[1] == r[2] => {}
            Ok(_) => mismatched.push(args.join(" ")),
            Err(e) => mismatched.push(e),
        }
    }
    verdict(
        mismatched.is_empty(),
        format!("{} commands, each run twice on 1 thread and once on 4: mismatches {:?}", cases.len(), mismatched),
    )
}

/// Projected gradient on `min ||w||²` subject to `||P(x + w - c)|| <= rho`,
/// for every codeword `c` of `target`, with `P = A⁺A` from the SVD.
fn projected_gradient_min(a: &DMatrix<f64>, x: &DVector<f64>, cb: &Codebook, target: Label, rho: f64) -> f64 {
    let p = a.clone().pseudo_inverse(1e-12).unwrap() * a;
    let mut best = f64::INFINITY;
    for c in cb.codewords(target).unwrap() {
        let b = &p * (&c.signal - x);
        let project = |q: &DVector<f64>| -> DVector<f64> {
            let pq = &p * q;
            let null = q - &pq;
            let off = &pq - &b;
            let norm = off.norm();
            let inside = if norm <= rho { pq } else { &b + off * (rho / norm) };
            null + inside
        };
        let mut w = project(&DVector::from_element(x.len(), 1.0));
        for _ in 0..5000 {
            let next = project(&(&w * 0.9));
            if (&next - &w).norm() < 1e-15 {
                break;
            }
            w = next;
        }
        best = best.min(w.norm());
    }
    best
}

fn small_instance_oracle() -> Verdict {
    // Instances where another label's sphere forces a deeper landing are
    // not covered by the single-constraint oracle and are skipped.
    let (mut checked, mut skipped, mut worst) = (0, 0, 0.0f64);
    let mut k = 0u64;
    while checked < 50 && k < 5000 {
        k += 1;
        let n = 6 + (k % 7) as usize;
        let m = 1 + (k % 4) as usize;
        let cb = build_codebook(&CodebookConfig { dimension: n, labels: 3, nuisances: 2, seed: 900 + k, ..Default::default() }).unwrap();
        let lc = sample_compressor(m, n, 900 + k).unwrap();
        let clf = Classifier::new(&lc, &cb).unwrap();
        let mut rng = trial_rng(900 + k, 0);
        let d = draw_near_codeword(&cb, 0.5 * cb.radius(), &mut rng);
        let target = draw_other_label(&cb, d.label, &mut rng);
        let attack = targeted_attack(&clf, &d.x, target, 0.99).unwrap();
        if attack.status != AttackStatus::Constructed || attack.landing_radius != 0.99 * cb.radius() {
            skipped += 1;
            continue;
        }
        let oracle = projected_gradient_min(lc.matrix(), &d.x, &cb, target, 0.99 * cb.radius());
        worst = worst.max((attack.norm - oracle).abs() / oracle);
        checked += 1;
    }
    verdict(
        checked == 50 && worst <= 1e-3,
        format!("{checked} instances (N <= 12, M <= 4, {skipped} skipped for interference), worst relative gap {worst:.1e}"),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Verdict); 9] = [
        ("projector laws", projector_laws),
        ("projection concentration", projection_concentration),
        ("targeted attack scaling", targeted_attack_scaling),
        ("robustness gap", robustness_gap),
        ("detection guarantee", detection_guarantee),
        ("gain ratio", gain_ratio),
        ("pipeline separation", pipeline_separation),
        ("reproducibility", reproducibility),
        ("small-instance oracle", small_instance_oracle),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let v = check();
        failed += usize::from(!v.passed);
        println!(
            "[{}] {} {name}: {} ({:.1} s)",
            if v.passed { "PASS" } else { "FAIL" },
            i + 1,
            v.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {}/{} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
