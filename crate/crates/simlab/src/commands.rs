//! Experiment runners. Each takes fully resolved parameters and returns the
//! CSV table plus a summary; nothing here touches the filesystem.

use rayon::prelude::*;
use simlab_core::attack::{attack_size_bound, targeted_attack, untargeted_attack, untargeted_bound, AttackStatus};
use simlab_core::codebook::build_codebook;
use simlab_core::compressor::sample_compressor;
use simlab_core::detection::{detection_roc, guarantee_sweep_at, RocConfig};
use simlab_core::nonlinear::{build_map, finite_difference_jacobian, fragility_ratio_with, jacobian_agreement, probe_point, DEFAULT_FD_STEP};
use simlab_core::pipeline::{run_pipeline, PipelineConfig};
use simlab_core::rng::{derive_seed, trial_rng};
use simlab_core::robustness::{
    estimate_robustness, misdirection_radius_bound, misdirection_rate, projection_ratios, survival_radius_bound, tail_report,
};
use simlab_core::scenario::Scenario;
use simlab_core::stats::{binomial_std_err, mean_ci};
use simlab_core::{DVector, Label, Outcome};

use crate::config::{
    scenario_config, AttackParams, CodebookParams, CompressorParams, ConcentrationParams, DetectParams, RatioParams, RobustnessParams,
    WorldParams,
};
use crate::output::{num, Header, RunOutput, Table};
use crate::CliError;

fn bool_str(b: bool) -> String {
    b.to_string()
}

pub fn codebook_gen(p: &CodebookParams, seed: u64) -> Result<RunOutput, CliError> {
    // Codewords are regenerated from the header, so only their geometry is
    // tabulated.
    let cb = build_codebook(&p.to_core(seed))?;
    let mut table = Table::new(["label", "nuisance", "norm", "nearest_same", "nearest_other"]);
    for c in cb.iter() {
        let nearest = |same: bool| {
            cb.iter()
                .filter(|o| if same { o.label == c.label && o.nuisance != c.nuisance } else { o.label != c.label })
                .map(|o| (&o.signal - &c.signal).norm())
                .fold(f64::INFINITY, f64::min)
        };
        table.push(vec![c.label.get().to_string(), c.nuisance.get().to_string(), num(c.signal.norm()), num(nearest(true)), num(nearest(false))]);
    }
    let summary = vec![
        format!("{} codewords ({} labels x {} nuisances) in dimension {}", cb.num_codewords(), p.labels, p.nuisances, p.n),
        format!("r0 = {}, r = {}, min cross-label distance = {:.6}", cb.r0(), cb.radius(), cb.min_cross_distance()),
        format!("synthesis attempts: {}", cb.attempts()),
    ];
    Ok(RunOutput { header: Header::new("codebook gen", Some(seed))?.section("codebook", p)?, table, summary })
}

pub fn compressor_gen(p: &CompressorParams, seed: u64) -> Result<RunOutput, CliError> {
    if p.count == 0 {
        return Err(CliError::InvalidParams("count must be positive".into()));
    }
    let rows = (0..p.count as u64)
        .into_par_iter()
        .map(|k| {
            let s = derive_seed(seed, k);
            let lc = sample_compressor(p.m, p.n, s)?;
            Ok((k, s, lc.diagnostics()))
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let mut table = Table::new(["index", "seed", "symmetry_error", "idempotence_error", "trace", "rank", "spectrum_clean", "method"]);
    let mut passing = 0;
    for (k, s, d) in rows {
        if d.symmetry_error <= 1e-9 && d.idempotence_error <= 1e-8 && d.rank == p.m {
            passing += 1;
        }
        table.push(vec![
            k.to_string(),
            s.to_string(),
            num(d.symmetry_error),
            num(d.idempotence_error),
            num(d.trace),
            d.rank.to_string(),
            bool_str(d.spectrum_clean),
            format!("{:?}", d.method),
        ]);
    }
    let summary = vec![format!(
        "{passing}/{} compressors ({} x {}) satisfy symmetry <= 1e-9, idempotence <= 1e-8, rank = {}",
        p.count, p.m, p.n, p.m
    )];
    Ok(RunOutput { header: Header::new("compressor gen", Some(seed))?.section("compressor", p)?, table, summary })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttackMode {
    Targeted,
    Untargeted,
}

pub fn attack(mode: AttackMode, cb: &CodebookParams, world: &WorldParams, p: &AttackParams, seed: u64) -> Result<RunOutput, CliError> {
    if p.trials == 0 {
        return Err(CliError::InvalidParams("trials must be positive".into()));
    }
    let margin = p.margin.unwrap_or(match mode {
        AttackMode::Targeted => simlab_core::attack::DEFAULT_TARGETED_MARGIN,
        AttackMode::Untargeted => simlab_core::attack::DEFAULT_UNTARGETED_MARGIN,
    });
    if let Some(t) = p.target {
        if mode == AttackMode::Untargeted {
            return Err(CliError::InvalidParams("--target only applies to targeted attacks".into()));
        }
        if t == 0 || t > cb.labels {
            return Err(CliError::InvalidParams(format!("target label {t} outside 1..={}", cb.labels)));
        }
    }
    let shared = if p.fresh_world { None } else { Some(Scenario::build(&scenario_config(cb, world, seed))?) };
    let (m, n) = (world.m, cb.n);
    let rows = (0..p.trials as u64)
        .into_par_iter()
        .map(|k| {
            let fresh;
            let world_seed = if shared.is_some() { seed } else { derive_seed(seed, k) };
            let s = match &shared {
                Some(s) => s,
                None => {
                    fresh = Scenario::build(&scenario_config(cb, world, world_seed))?;
                    &fresh
                }
            };
            let clf = s.classifier();
            let mut rng = trial_rng(seed, k);
            let mut d = s.draw_input(&mut rng);
            while p.target == Some(d.label.get()) {
                d = s.draw_input(&mut rng);
            }
            match mode {
                AttackMode::Targeted => {
                    let target = match p.target {
                        Some(t) => Label(t),
                        None => s.draw_target(d.label, &mut rng),
                    };
                    let a = targeted_attack(&clf, &d.x, target, margin)?;
                    let success = clf.classify(&(&d.x + &a.w))?.outcome == Outcome::Label(target);
                    let bound = attack_size_bound(&clf, &d.x, target, p.epsilon)?;
                    Ok((k, world_seed, d.label.get(), Some(target.get()), a, success, bound))
                }
                AttackMode::Untargeted => {
                    let a = untargeted_attack(&clf, &d.x, margin)?;
                    let success = clf.classify(&(&d.x + &a.w))?.outcome != Outcome::Label(d.label);
                    let bound = untargeted_bound(p.epsilon, m, n, a.ambient_distance, s.codebook().radius());
                    Ok((k, world_seed, d.label.get(), None, a, success, bound))
                }
            }
        })
        .collect::<Result<Vec<_>, CliError>>()?;

    let mut table = Table::new([
        "trial",
        "seed",
        "source",
        "target",
        "status",
        "success",
        "norm",
        "ambient_distance",
        "projected_distance",
        "norm_ratio",
        "bound",
        "within_bound",
    ]);
    let (mut constructed, mut succeeded, mut within) = (0usize, 0usize, 0usize);
    let mut ratios = Vec::new();
    for (k, world_seed, source, target, a, success, bound) in &rows {
        let is_constructed = a.status == AttackStatus::Constructed;
        let ratio = a.norm / a.ambient_distance;
        if is_constructed {
            constructed += 1;
            succeeded += usize::from(*success);
            ratios.push(ratio);
        }
        within += usize::from(a.norm <= *bound);
        table.push(vec![
            k.to_string(),
            world_seed.to_string(),
            source.to_string(),
            target.map(|t| t.to_string()).unwrap_or_default(),
            format!("{:?}", a.status),
            bool_str(*success),
            num(a.norm),
            num(a.ambient_distance),
            num(a.projected_distance),
            num(ratio),
            num(*bound),
            bool_str(a.norm <= *bound),
        ]);
    }
    let (mean_ratio, ci) = mean_ci(&ratios);
    let mut summary = vec![
        format!("{constructed}/{} attacks constructed, {succeeded} of them reach their goal", p.trials),
        format!("mean ||w|| / ||c - x|| = {mean_ratio:.4} +- {ci:.4} (sqrt(M/N) = {:.4})", (m as f64 / n as f64).sqrt()),
        format!("{within}/{} norms within the bound at epsilon = {}", p.trials, p.epsilon),
    ];
    if mode == AttackMode::Targeted {
        let allowed = (-(m as f64) * p.epsilon * p.epsilon / 12.0).exp();
        summary.push(format!(
            "allowed fraction above the bound: {allowed:.4} + 3 SE = {:.4}",
            allowed + 3.0 * binomial_std_err(allowed, p.trials)
        ));
    }
    let name = match mode {
        AttackMode::Targeted => "attack targeted",
        AttackMode::Untargeted => "attack untargeted",
    };
    let mut recorded = p.clone();
    recorded.margin = Some(margin);
    let header = Header::new(name, Some(seed))?.section("codebook", cb)?.section("world", world)?.section("attack", &recorded)?;
    Ok(RunOutput { header, table, summary })
}

pub fn robustness_sweep(cb: &CodebookParams, world: &WorldParams, p: &RobustnessParams, seed: u64) -> Result<RunOutput, CliError> {
    let s = Scenario::build(&scenario_config(cb, world, seed))?;
    let clf = s.classifier();
    let mut rng = trial_rng(seed, 0);
    let d = s.draw_input(&mut rng);
    let target = s.draw_target(d.label, &mut rng);
    let attack = targeted_attack(&clf, &d.x, target, simlab_core::attack::DEFAULT_TARGETED_MARGIN)?;
    let radii: Vec<f64> = if p.radii.is_empty() {
        if p.steps == 0 || !(p.max_factor > 0.0) {
            return Err(CliError::InvalidParams("need steps >= 1 and max_factor > 0 for the automatic radius grid".into()));
        }
        (1..=p.steps).map(|i| p.max_factor * attack.norm * i as f64 / p.steps as f64).collect()
    } else {
        p.radii.clone()
    };
    let r = s.codebook().radius();
    let (_, dist_own) = s.codebook().nearest_codeword(&d.x, d.label)?;
    let (_, dist_target) = s.codebook().nearest_codeword(&d.x, target)?;
    let survival = survival_radius_bound(p.epsilon, world.m, cb.n, r, dist_own);
    let misdirection = misdirection_radius_bound(p.epsilon, world.m, cb.n, r, dist_target);

    let mut table = Table::new([
        "radius",
        "radius_over_attack",
        "survive_fraction",
        "survive_halfwidth",
        "misdirect_fraction",
        "misdirect_halfwidth",
    ]);
    // The same perturbation directions at every radius.
    let (keep_seed, miss_seed) = (derive_seed(seed, 1), derive_seed(seed, 2));
    for &l in &radii {
        let est = estimate_robustness(&clf, &d.x, l, p.trials, keep_seed)?;
        let mis = misdirection_rate(&clf, &d.x, target, l, p.trials, miss_seed)?;
        table.push(vec![
            num(l),
            num(l / attack.norm),
            num(est.survive_fraction),
            num(est.confidence_halfwidth),
            num(mis.fraction()),
            num(mis.halfwidth95()),
        ]);
    }
    let summary = vec![
        format!("input of label {} attacked toward label {}: minimal attack norm {:.4}", d.label, target, attack.norm),
        format!("survival radius bound at epsilon {}: {:.4}", p.epsilon, survival),
        format!("misdirection radius bound at epsilon {}: {:.4}", p.epsilon, misdirection),
    ];
    let header = Header::new("robustness sweep", Some(seed))?.section("codebook", cb)?.section("world", world)?.section("robustness", p)?;
    Ok(RunOutput { header, table, summary })
}

pub fn concentration_check(p: &ConcentrationParams, seed: u64) -> Result<RunOutput, CliError> {
    if p.eps.is_empty() || p.eps.iter().any(|&e| !(e > 0.0 && e < 1.0)) {
        return Err(CliError::InvalidParams(format!("every eps must lie in (0, 1), got {:?}", p.eps)));
    }
    if p.trials == 0 {
        return Err(CliError::InvalidParams("trials must be positive".into()));
    }
    let ratios = projection_ratios(p.m, p.n, p.trials, seed)?;
    let mut table = Table::new([
        "epsilon",
        "empirical_lower",
        "bound_lower",
        "allowance_lower",
        "lower_ok",
        "empirical_upper",
        "bound_upper",
        "allowance_upper",
        "upper_ok",
        "bound_upper_alt",
        "upper_alt_ok",
        "median_ratio",
        "expected_ratio",
    ]);
    let mut summary = Vec::new();
    for &eps in &p.eps {
        let t = tail_report(p.m, p.n, eps, &ratios);
        table.push(vec![
            num(eps),
            num(t.empirical_lower_tail),
            num(t.bound_lower),
            num(t.allowance(t.bound_lower)),
            bool_str(t.lower_ok()),
            num(t.empirical_upper_tail),
            num(t.bound_upper),
            num(t.allowance(t.bound_upper)),
            bool_str(t.upper_ok()),
            num(t.bound_upper_alt),
            bool_str(t.upper_alt_ok()),
            num(t.median_ratio),
            num(t.expected_ratio()),
        ]);
        summary.push(format!(
            "eps {eps}: lower tail {:.3e} (bound {:.3e}), upper tail {:.3e} (bound {:.3e}), median ratio {:.5} vs {:.5}",
            t.empirical_lower_tail,
            t.bound_lower,
            t.empirical_upper_tail,
            t.bound_upper,
            t.median_ratio,
            t.expected_ratio()
        ));
    }
    Ok(RunOutput { header: Header::new("concentration check", Some(seed))?.section("concentration", p)?, table, summary })
}

pub fn ratio(p: &RatioParams, seed: u64) -> Result<RunOutput, CliError> {
    if p.seeds == 0 {
        return Err(CliError::InvalidParams("seeds must be positive".into()));
    }
    let mut table = Table::new([
        "index",
        "ratio",
        "alpha_rate",
        "beta_rate_mean",
        "beta_ci",
        "floor_general",
        "floor_gaussian",
        "passes_general",
        "passes_gaussian",
        "secant_worst",
        "fd_agreement",
    ]);
    let (mut general, mut gaussian) = (0, 0);
    let mut ratios = Vec::new();
    for k in 0..p.seeds as u64 {
        let s = derive_seed(seed, k);
        let map = build_map(p.map, p.n, p.m, s)?;
        let x = if p.scale == 0.0 { DVector::zeros(p.n) } else { probe_point(p.n, p.scale, s) };
        let r = fragility_ratio_with(map.as_ref(), &x, p.trials, s, p.delta)?;
        let fd = match (p.fd_check, map.analytic_jacobian(&x)) {
            (true, Some(j)) => num(jacobian_agreement(&j?, &finite_difference_jacobian(map.as_ref(), &x, DEFAULT_FD_STEP)?)),
            _ => String::new(),
        };
        general += usize::from(r.passes_general);
        gaussian += usize::from(r.passes_gaussian);
        ratios.push(r.ratio);
        table.push(vec![
            k.to_string(),
            num(r.ratio),
            num(r.alpha_rate),
            num(r.beta_rate_mean),
            num(r.beta_ci),
            num(r.floor_general),
            num(r.floor_gaussian),
            bool_str(r.passes_general),
            bool_str(r.passes_gaussian),
            num(r.secant_worst),
            fd,
        ]);
    }
    let (mean, ci) = mean_ci(&ratios);
    let summary = vec![
        format!("{} map, N = {}, M = {}: mean ratio {mean:.4} +- {ci:.4}", p.map, p.n, p.m),
        format!("{general}/{} seeds clear sqrt(N/M) - 1, {gaussian}/{} clear (1 - {}) sqrt((N+M)/M)", p.seeds, p.seeds, p.delta),
    ];
    Ok(RunOutput { header: Header::new("ratio", Some(seed))?.section("ratio", p)?, table, summary })
}

pub fn detect_run(cb: &CodebookParams, world: &WorldParams, p: &DetectParams, seed: u64) -> Result<RunOutput, CliError> {
    let s = Scenario::build(&scenario_config(cb, world, seed))?;
    let threshold = p.threshold.unwrap_or(s.codebook().radius());
    let sweep = guarantee_sweep_at(&s.classifier(), threshold, world.offset_fraction, p.margin, p.trials, p.max_attempts, seed)?;
    let rate = if sweep.eligible == 0 { f64::NAN } else { sweep.detected as f64 / sweep.eligible as f64 };
    let mut table = Table::new(["threshold", "eligible", "detected", "missed", "detection_rate", "outside", "outside_detected", "attempts"]);
    table.push(vec![
        num(threshold),
        sweep.eligible.to_string(),
        sweep.detected.to_string(),
        sweep.missed().to_string(),
        num(rate),
        sweep.outside.to_string(),
        sweep.outside_detected.to_string(),
        sweep.attempts.to_string(),
    ]);
    let summary = vec![
        format!("{}/{} attacks inside the guarantee radius flagged at threshold {threshold} (r = {})", sweep.detected, sweep.eligible, s.codebook().radius()),
        format!("{} further attacks outside the radius, {} of them flagged", sweep.outside, sweep.outside_detected),
    ];
    let header = Header::new("detect run", Some(seed))?.section("codebook", cb)?.section("world", world)?.section("detect", p)?;
    Ok(RunOutput { header, table, summary })
}

pub fn detect_roc(cb: &CodebookParams, world: &WorldParams, p: &DetectParams, seed: u64) -> Result<RunOutput, CliError> {
    let s = Scenario::build(&scenario_config(cb, world, seed))?;
    let cfg = RocConfig { offset_fraction: world.offset_fraction, clean_noise: p.clean_noise, margin: p.margin, grid: p.grid };
    let roc = detection_roc(s.compressor(), s.codebook(), &cfg, p.trials, seed)?;
    let mut table = Table::new(["threshold", "tpr", "fpr"]);
    for pt in &roc.points {
        table.push(vec![num(pt.threshold), num(pt.tpr), num(pt.fpr)]);
    }
    let r = s.codebook().radius();
    let summary = vec![
        format!("{} clean trials kept ({} dropped), {} successful attacks ({} failed)", roc.clean.len(), roc.clean_dropped, roc.attacked.len(), roc.attacks_failed),
        match roc.guaranteed_tpr(r) {
            Some(t) => format!("detection rate at threshold r = {r} among attacks inside the guarantee radius: {t}"),
            None => "no attack fell inside the guarantee radius".into(),
        },
    ];
    let header = Header::new("detect roc", Some(seed))?.section("codebook", cb)?.section("world", world)?.section("detect", p)?;
    Ok(RunOutput { header, table, summary })
}

pub fn pipeline_run(p: &PipelineConfig) -> Result<RunOutput, CliError> {
    let run = run_pipeline(p)?;
    let mut table = Table::new([
        "sentence_id",
        "attacked",
        "feasible",
        "decoded",
        "rho_max",
        "flagged",
        "snr_measured",
        "attack_ratio_db",
    ]);
    for t in &run.trials {
        table.push(vec![
            t.sentence_id.to_string(),
            bool_str(t.attacked),
            bool_str(t.feasible),
            t.decoded.map(|d| d.to_string()).unwrap_or_default(),
            num(t.rho_max),
            bool_str(t.flagged),
            num(t.snr_measured),
            t.attack_ratio_db.map(num).unwrap_or_default(),
        ]);
    }
    let s = run.summary;
    let summary = vec![
        format!("clean: {}/{} decoded correctly, {} of those unflagged", s.clean_correct, s.clean_trials, s.clean_correct_unflagged),
        format!(
            "attacked: {} feasible, {} decoded as the target sentence {}, {} flagged",
            s.attacked_feasible,
            s.attacked_on_target,
            p.target_sentence(),
            s.attacked_flagged
        ),
        format!(
            "min clean rho {:.4}, max attacked rho {:.4}, separation {:.4} (threshold {})",
            s.min_clean_rho, s.max_attacked_rho, s.separation, p.correlation_threshold
        ),
    ];
    Ok(RunOutput { header: Header::new("pipeline run", Some(p.seed))?.section("pipeline", p)?, table, summary })
}
