use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use super::costs::compare_costs;
use super::spec::{ExperimentId, ExperimentSpec};
use super::stats::{t_test_one_tailed, Histogram};
use crate::attacks::{
    blindfold_topq_attack, data_ordering_probe, infinitesimal_attack, infinitesimal_min_steps,
    interp_perturb_attack, rna_attack, second_order_convention_cost, synthesis_probe,
    BlindfoldParams, InfinitesimalParams, InterpParams, NetSynthesis, RnaParams, SynthesisParams,
};
use crate::bounds::alpha_for_angle;
use crate::error::{Error, Result};
use crate::proofchain::Proof;
use crate::tinytrain::{
    gen_dataset, init_model, train, CostLedger, Dataset, ModelState, NoiseModel, TrainConfig,
    TrainRun,
};
use crate::verifier::{
    distance, estimate_min_threshold, honest_update_sampler, reference_distance, selected_steps,
    update_norms, verify, Metric, ReferenceDistance, ThresholdMode, VerificationPolicy,
    VerificationReport,
};

/// A named pass/fail check recorded in the summary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self {
            name: name.to_string(),
            passed,
            detail,
        }
    }
}

/// What one repeat (or one whole experiment) produced.
#[derive(Debug, Clone, Default)]
pub struct Output {
    /// `(file name, csv text)`
    pub tables: Vec<(String, String)>,
    pub summary: Value,
    pub checks: Vec<Check>,
}

/// Seeds for repeat `r`.
fn repeat_config(spec: &ExperimentSpec, repeat: usize) -> TrainConfig {
    let mut c = spec.train.clone();
    c.seed = spec.train.seed.wrapping_add(repeat as u64);
    c
}

fn attack_rng(spec: &ExperimentSpec, repeat: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(spec.train.seed.wrapping_add(repeat as u64) ^ 0xa77a_c4ed_5eed_0001)
}

/// The honest side of every experiment: data, a training run, its proof, a
/// calibrated threshold and the reference distance.
#[derive(Debug, Clone)]
pub struct HonestSetup {
    pub data: Dataset,
    pub config: TrainConfig,
    pub run: TrainRun,
    pub proof: Proof,
    pub delta_hat: f64,
    pub rd: ReferenceDistance,
    pub policy: VerificationPolicy,
}

/// `delta_hat(tau)` for the updates of `proof` under `noise`.
pub fn calibrate_delta(
    proof: &Proof,
    data: &Dataset,
    noise: NoiseModel,
    metric: Metric,
    tau: f64,
    trials: usize,
    seed: u64,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sampler = honest_update_sampler(proof, data, noise)?;
    estimate_min_threshold(sampler, metric, tau, trials, &mut rng)
}

pub fn honest_setup(spec: &ExperimentSpec, repeat: usize) -> Result<HonestSetup> {
    let data = gen_dataset(spec.data.seed, &spec.data.spec)?;
    let config = repeat_config(spec, repeat);
    let run = train(&config, &data)?;
    let proof = Proof::from_run(&run, &data, spec.k)?;
    let delta_hat = calibrate_delta(
        &proof,
        &data,
        spec.policy.noise,
        spec.policy.metric,
        spec.tau,
        spec.threshold_trials,
        config.seed ^ 0xca1_1b7a7e,
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x7d_0000);
    let rd = reference_distance(&config, &data, spec.rd_trials, &mut rng)?;
    let mut policy = spec.policy.clone();
    policy.noise_seed = spec.policy.noise_seed.wrapping_add(repeat as u64);
    if spec.calibrate_delta {
        if let ThresholdMode::Static { delta } = &mut policy.threshold {
            *delta = if delta_hat > 0.0 { delta_hat } else { *delta };
        }
    }
    Ok(HonestSetup {
        data,
        config,
        run,
        proof,
        delta_hat,
        rd,
        policy,
    })
}

/// FP totals must equal the weighted operation counts.
fn ledger_check(ledgers: &[&CostLedger]) -> Check {
    let bad = ledgers.iter().filter(|l| !l.is_consistent()).count();
    Check::new(
        "FP ledgers consistent",
        bad == 0,
        format!("{bad} of {} inconsistent", ledgers.len()),
    )
}

fn endpoint_check(spoof: &Proof, w_t: &ModelState) -> Check {
    Check::new(
        "spoof ends exactly at W_T",
        spoof.final_state().bit_eq(w_t),
        String::new(),
    )
}

fn rd_value(rd: &ReferenceDistance) -> Option<f64> {
    (!rd.degenerate).then_some(rd.rd)
}

fn static_delta(policy: &VerificationPolicy) -> Option<f64> {
    match policy.threshold {
        ThresholdMode::Static { delta } => Some(delta),
        _ => None,
    }
}

fn report_json(r: &VerificationReport) -> Value {
    json!({
        "overall": r.overall,
        "verified": r.verdicts.len(),
        "rejected": r.rejected_steps(),
        "commitment_failures": r.commitment_failures,
        "max_distance": r.max_distance(),
        "max_normalized_error": r.max_normalized_error(),
        "init_final_distance": r.init_final_distance,
        "ledger": r.ledger,
    })
}

fn baseline(spec: &ExperimentSpec, repeat: usize) -> Result<Output> {
    let h = honest_setup(spec, repeat)?;
    let report = verify(&h.proof, &h.policy, &h.data, rd_value(&h.rd))?;
    let mut csv = String::from("t,eps_repr,delta\n");
    for v in &report.verdicts {
        let _ = writeln!(csv, "{},{:e},{:e}", v.step, v.distance, v.threshold_used);
    }
    let checks = vec![
        Check::new(
            "honest proof accepted",
            report.is_valid(),
            format!("acceptance rate {}", report.acceptance_rate()),
        ),
        ledger_check(&[&h.run.ledger, &report.ledger]),
    ];
    Ok(Output {
        tables: vec![
            (format!("eps_repr_r{repeat}.csv"), csv),
            (format!("report_r{repeat}.csv"), report.to_csv()),
        ],
        summary: json!({
            "delta_hat": h.delta_hat,
            "rd": h.rd.rd,
            "acceptance_rate": report.acceptance_rate(),
            "report": report_json(&report),
            "training_ledger": h.run.ledger,
        }),
        checks,
    })
}

fn nre_csv(report: &VerificationReport) -> String {
    let mut csv = String::from("t,nre\n");
    if let Some(e) = &report.normalized_errors {
        for (v, n) in report.verdicts.iter().zip(e) {
            let _ = writeln!(csv, "{},{:e}", v.step, n);
        }
    }
    csv
}

fn infinitesimal(spec: &ExperimentSpec, repeat: usize) -> Result<Output> {
    let h = honest_setup(spec, repeat)?;
    let delta = static_delta(&h.policy)
        .ok_or_else(|| Error::Config("infinitesimal experiment needs a static threshold".into()))?;
    let w_t = h.proof.final_state();
    let w0 = init_model(
        *w_t.arch(),
        h.config.init_seed() ^ 0x5f00f,
        h.config.init_scale,
    )?;
    let t = infinitesimal_min_steps(w_t, &w0, spec.k, delta, spec.attack.spacing_margin)?;
    if t > spec.attack.max_spoof_steps {
        return Err(Error::Config(format!(
            "the spoof needs {t} steps, above max_spoof_steps = {}",
            spec.attack.max_spoof_steps
        )));
    }
    let mut params = InfinitesimalParams::new(t, spec.k, delta, h.config.batch_size);
    params.margin = spec.attack.spacing_margin;
    let spoof = infinitesimal_attack(w_t, &w0, &params, &h.data, &mut attack_rng(spec, repeat))?;
    let rd = rd_value(&h.rd);
    let honest = verify(&h.proof, &h.policy, &h.data, rd)?;
    let forged = verify(&spoof.proof, &h.policy, &spoof.store, rd)?;
    let costs = compare_costs(
        &h.run.ledger,
        h.proof.total_steps() / h.proof.k(),
        &spoof.ledger,
        spoof.proof.total_steps() / spoof.proof.k(),
    )?;
    let max_h = honest.max_distance();
    let max_s = forged.max_distance();
    let checks = vec![
        Check::new(
            "spoof accepted",
            forged.is_valid(),
            format!("{:?}", forged.overall),
        ),
        Check::new(
            "spoof error below a fifth of honest error",
            max_s < 0.2 * max_h,
            format!("max spoof distance {max_s:e}, max honest distance {max_h:e}"),
        ),
        Check::new(
            "spoof/honest cost per update below 0.05",
            costs.ratio_per_update < 0.05,
            format!("ratio {}", costs.ratio_per_update),
        ),
        Check::new(
            "cost within 1 FP per update of 1 FP",
            (costs.spoof_per_update - 1.0).abs() <= 1.0,
            format!("{} FP per update", costs.spoof_per_update),
        ),
        endpoint_check(&spoof.proof, w_t),
        ledger_check(&[&h.run.ledger, &spoof.ledger, &honest.ledger, &forged.ledger]),
    ];
    Ok(Output {
        tables: vec![
            (format!("nre_honest_r{repeat}.csv"), nre_csv(&honest)),
            (format!("nre_spoof_r{repeat}.csv"), nre_csv(&forged)),
        ],
        summary: json!({
            "delta": delta,
            "rd": h.rd.rd,
            "spoof_steps": t,
            "honest": report_json(&honest),
            "spoof": report_json(&forged),
            "costs": costs,
            "params": spoof.params,
        }),
        checks,
    })
}

fn blindfold(spec: &ExperimentSpec, repeat: usize) -> Result<Output> {
    let h = honest_setup(spec, repeat)?;
    let b = &spec.attack.blindfold;
    let params = BlindfoldParams {
        q: b.q,
        k: b.k.unwrap_or(spec.k),
        s: b.s,
        epochs: b.epochs,
        eta_large: b.eta_large,
        batch_size: h.config.batch_size,
    };
    let w_t = h.proof.final_state();
    let w0 = init_model(
        *w_t.arch(),
        h.config.init_seed() ^ 0x5f00f,
        h.config.init_scale,
    )?;
    let spoof = blindfold_topq_attack(w_t, &w0, &params, &h.data, &mut attack_rng(spec, repeat))?;
    let alpha = alpha_for_angle(b.theta)?;
    let base = VerificationPolicy::adaptive(alpha).with_noise(h.policy.noise, h.policy.noise_seed);
    let at_q = verify(&spoof.proof, &base.clone().with_q(b.q), &spoof.store, None)?;
    let above_q = verify(
        &spoof.proof,
        &base.clone().with_q(b.q + 1),
        &spoof.store,
        None,
    )?;
    let sel_q = selected_steps(&spoof.proof, &base.clone().with_q(b.q))?;
    let sel_q1 = selected_steps(&spoof.proof, &base.clone().with_q(b.q + 1))?;
    let norms = update_norms(&spoof.proof, Metric::L2)?;
    let mut csv = String::from("t,norm,selected_q,selected_q_plus_1\n");
    for (t, n) in &norms {
        let _ = writeln!(
            csv,
            "{t},{n:e},{},{}",
            sel_q.contains(t) as u8,
            sel_q1.contains(t) as u8
        );
    }
    let per_update = spoof.cost_per_update();
    let expected = params.expected_cost_per_update();
    let checks = vec![
        Check::new(
            "top-Q selects exactly the planted updates",
            sel_q == spoof.genuine_steps,
            format!("selected {sel_q:?}"),
        ),
        Check::new(
            "top-Q verification accepts",
            at_q.is_valid(),
            format!("{:?}", at_q.overall),
        ),
        Check::new(
            "top-(Q+1) verification rejects",
            !above_q.rejected_steps().is_empty(),
            format!("rejected {:?}", above_q.rejected_steps()),
        ),
        Check::new(
            "cost within 1 FP of 3kQ/s + 1",
            (per_update - expected).abs() <= 1.0,
            format!("measured {per_update}, formula {expected}"),
        ),
        endpoint_check(&spoof.proof, w_t),
        ledger_check(&[&spoof.ledger, &at_q.ledger, &above_q.ledger]),
    ];
    Ok(Output {
        tables: vec![(format!("updates_r{repeat}.csv"), csv)],
        summary: json!({
            "alpha": alpha,
            "q": report_json(&at_q),
            "q_plus_1": report_json(&above_q),
            "cost_per_update": per_update,
            "expected_cost_per_update": expected,
            "params": spoof.params,
        }),
        checks,
    })
}

fn interp(spec: &ExperimentSpec, repeat: usize) -> Result<Output> {
    let h = honest_setup(spec, repeat)?;
    let delta = static_delta(&h.policy).unwrap_or(h.delta_hat);
    let w_t = h.proof.final_state();
    let w0 = init_model(
        *w_t.arch(),
        h.config.init_seed() ^ 0x5f00f,
        h.config.init_scale,
    )?;
    let params = InterpParams {
        total_steps: spec.attack.interp_updates * spec.k,
        k: spec.k,
        delta,
        n_iter: spec.attack.interp_iters,
        batch_size: h.config.batch_size,
        lr: h.config.lr,
        input_lr: spec.attack.interp_input_lr,
    };
    let spoof = interp_perturb_attack(w_t, &w0, &params, &h.data, &mut attack_rng(spec, repeat))?;
    let report = verify(&spoof.proof, &h.policy, &spoof.store, None)?;
    let mut csv = String::from("t,residual,delta\n");
    for (i, r) in spoof.residuals.iter().enumerate() {
        let _ = writeln!(csv, "{},{r:e},{delta:e}", i * spec.k);
    }
    let convention = second_order_convention_cost(spec.attack.interp_iters, spec.k);
    Ok(Output {
        tables: vec![(format!("residuals_r{repeat}.csv"), csv)],
        summary: json!({
            "delta": delta,
            "failed_steps": spoof.failed_steps,
            "cost_per_update": spoof.cost_per_update(),
            "convention_cost_per_update": convention,
            "honest_cost_per_update": 3.0 * spec.k as f64,
            "verification": report_json(&report),
        }),
        checks: vec![
            endpoint_check(&spoof.proof, w_t),
            ledger_check(&[&spoof.ledger, &report.ledger]),
        ],
    })
}

fn ordering(spec: &ExperimentSpec, repeat: usize) -> Result<Output> {
    let h = honest_setup(spec, repeat)?;
    let w_t = h.proof.final_state();
    let w_hat = init_model(
        *w_t.arch(),
        h.config.init_seed() ^ 0x5f00f,
        h.config.init_scale,
    )?;
    let probe = data_ordering_probe(w_t, &w_hat, &h.data, spec.attack.ordering_eta)?;
    let deltas = probe.get("delta_dist").unwrap_or_default();
    let mut csv = String::from("point,delta_dist\n");
    for (i, d) in deltas.iter().enumerate() {
        let _ = writeln!(csv, "{i},{d:e}");
    }
    let hist = Histogram::freedman_diaconis(deltas)?;
    let positive = deltas.iter().filter(|d| **d > 0.0).count() as f64 / deltas.len() as f64;
    Ok(Output {
        tables: vec![
            (format!("delta_dist_r{repeat}.csv"), csv),
            (format!("delta_dist_hist_r{repeat}.csv"), hist.to_csv()),
        ],
        summary: json!({ "fraction_helpful": positive, "histogram": hist }),
        checks: vec![ledger_check(&[&probe.ledger])],
    })
}

fn synthesis(spec: &ExperimentSpec, repeat: usize) -> Result<Output> {
    let h = honest_setup(spec, repeat)?;
    let w_t = h.proof.final_state();
    let w_hat = init_model(
        *w_t.arch(),
        h.config.init_seed() ^ 0x5f00f,
        h.config.init_scale,
    )?;
    let mut rng = attack_rng(spec, repeat);
    let rows = rand::seq::index::sample(
        &mut rng,
        h.data.len(),
        h.config.batch_size.min(h.data.len()),
    )
    .into_vec();
    let batch = h.data.batch(&rows)?;
    let objective = NetSynthesis {
        arch: *w_t.arch(),
        labels: batch.labels.clone(),
    };
    let params = SynthesisParams {
        iters: spec.attack.synthesis_iters,
        data_lr: spec.attack.synthesis_data_lr,
        model_lr: spec.attack.synthesis_model_lr,
    };
    let probe = synthesis_probe(
        &objective,
        w_t.weights(),
        w_hat.weights(),
        &batch.features,
        &params,
    )?;
    let d = probe.get("dist_loss").unwrap_or_default();
    let l = probe.get("train_loss").unwrap_or_default();
    let mut csv = String::from("iter,dist_loss,train_loss\n");
    for i in 0..d.len() {
        let _ = writeln!(csv, "{i},{:e},{:e}", d[i], l[i]);
    }
    Ok(Output {
        tables: vec![(format!("synthesis_r{repeat}.csv"), csv)],
        summary: json!({
            "diverged": probe.diverged,
            "dist_raw": probe.get("dist_raw"),
            "train_raw": probe.get("train_raw"),
        }),
        checks: vec![ledger_check(&[&probe.ledger])],
    })
}

fn rna(spec: &ExperimentSpec, repeat: usize) -> Result<Output> {
    let h = honest_setup(spec, repeat)?;
    let w_t = h.proof.final_state();
    let w0 = init_model(
        *w_t.arch(),
        h.config.init_seed() ^ 0x5f00f,
        h.config.init_scale,
    )?;
    let m = spec.attack.rna_m;
    let budget = h.run.ledger.fp_units();
    let rounds = RnaParams::rounds_for_budget(budget, m).max(1);
    let params = RnaParams {
        rounds,
        m,
        lr: h.config.lr,
        batch_size: h.config.batch_size,
    };
    let result = rna_attack(w_t, &w0, &params, &h.data, &mut attack_rng(spec, repeat))?;
    let mut csv = String::from("round,distance\n");
    for (i, d) in result.distance_curve.iter().enumerate() {
        let _ = writeln!(csv, "{i},{d:e}");
    }
    let nonincreasing = result.distance_curve.windows(2).all(|w| w[1] <= w[0]);
    let far = result.final_distance() > 100.0 * h.delta_hat;
    let checks = vec![
        Check::new("distance nonincreasing", nonincreasing, String::new()),
        Check::new(
            "no valid spoof at honest budget",
            far,
            format!(
                "final distance {:e}, delta_hat {:e}",
                result.final_distance(),
                h.delta_hat
            ),
        ),
        Check::new(
            "spent within the honest budget",
            result.ledger.fp_units() <= budget,
            format!("spent {}, budget {budget}", result.ledger.fp_units()),
        ),
        ledger_check(&[&h.run.ledger, &result.ledger]),
    ];
    Ok(Output {
        tables: vec![(format!("rna_r{repeat}.csv"), csv)],
        summary: json!({
            "rounds": rounds,
            "budget": budget,
            "spent": result.ledger.fp_units(),
            "final_distance": result.final_distance(),
            "delta_hat": h.delta_hat,
            "ridge_rounds": result.ridge_rounds,
            "fallback_rounds": result.fallback_rounds,
        }),
        checks,
    })
}

/// Final weights of `n` runs that differ only in their seeds, the pairwise
/// distances between them and the noise-only reference distance.
pub struct IndependentRuns {
    pub pairwise: Vec<(usize, usize, f64)>,
    pub rd: ReferenceDistance,
}

pub fn independent_runs_distances(spec: &ExperimentSpec) -> Result<IndependentRuns> {
    let data = gen_dataset(spec.data.seed, &spec.data.spec)?;
    let finals = (0..spec.repeats)
        .into_par_iter()
        .map(|r| train(&repeat_config(spec, r), &data).map(|run| run.final_state().clone()))
        .collect::<Result<Vec<_>>>()?;
    let mut pairwise = Vec::new();
    for i in 0..finals.len() {
        for j in i + 1..finals.len() {
            pairwise.push((i, j, distance(Metric::L2, &finals[i], &finals[j])?));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.train.seed ^ 0x7d_0000);
    let rd = reference_distance(&spec.train, &data, spec.rd_trials, &mut rng)?;
    Ok(IndependentRuns { pairwise, rd })
}

fn independent(spec: &ExperimentSpec) -> Result<Output> {
    let runs = independent_runs_distances(spec)?;
    let d: Vec<f64> = runs.pairwise.iter().map(|p| p.2).collect();
    let test = t_test_one_tailed(&d)?;
    let mut csv = String::from("i,j,distance\n");
    for (i, j, x) in &runs.pairwise {
        let _ = writeln!(csv, "{i},{j},{x:e}");
    }
    let checks = vec![
        Check::new(
            "zero distance rejected",
            test.p_one_tailed < 1e-6,
            format!("p = {:e}", test.p_one_tailed),
        ),
        Check::new(
            "independent distance far above rd",
            test.mean > 50.0 * runs.rd.rd,
            format!("mean {:e}, rd {:e}", test.mean, runs.rd.rd),
        ),
    ];
    Ok(Output {
        tables: vec![("pairwise.csv".into(), csv)],
        summary: json!({ "t_test": test, "rd": runs.rd.rd }),
        checks,
    })
}

fn threshold_curve(spec: &ExperimentSpec, repeat: usize) -> Result<Output> {
    let h = honest_setup(spec, repeat)?;
    let mut csv = String::from("tau,delta_hat,acceptance\n");
    let mut deltas = Vec::new();
    for &tau in &spec.attack.threshold_taus {
        let d = calibrate_delta(
            &h.proof,
            &h.data,
            spec.policy.noise,
            spec.policy.metric,
            tau,
            spec.threshold_trials,
            h.config.seed ^ 0xca1_1b7a7e,
        )?;
        let mut policy = h.policy.clone();
        policy.threshold = ThresholdMode::Static {
            delta: d.max(f64::MIN_POSITIVE),
        };
        let acc = verify(&h.proof, &policy, &h.data, None)?.acceptance_rate();
        let _ = writeln!(csv, "{tau},{d:e},{acc}");
        deltas.push(d);
    }
    let monotone = deltas.windows(2).all(|w| w[0] <= w[1]);
    Ok(Output {
        tables: vec![(format!("threshold_curve_r{repeat}.csv"), csv)],
        summary: json!({ "taus": spec.attack.threshold_taus, "delta_hat": deltas }),
        checks: vec![Check::new(
            "threshold monotone in tau",
            monotone,
            String::new(),
        )],
    })
}

/// Runs the experiment and collects everything `run` writes to disk.
pub fn execute(spec: &ExperimentSpec) -> Result<Output> {
    spec.validate()?;
    if spec.id == ExperimentId::IndependentRuns {
        return independent(spec);
    }
    let f = match spec.id {
        ExperimentId::BaselineHonest => baseline,
        ExperimentId::AttackInfinitesimal => infinitesimal,
        ExperimentId::AttackBlindfold => blindfold,
        ExperimentId::AttackInterp => interp,
        ExperimentId::ProbeOrdering => ordering,
        ExperimentId::ProbeSynthesis => synthesis,
        ExperimentId::AttackRna => rna,
        ExperimentId::ThresholdCurve => threshold_curve,
        ExperimentId::IndependentRuns => unreachable!("handled above"),
    };
    let outputs = (0..spec.repeats)
        .into_par_iter()
        .map(|r| {
            f(spec, r).map_err(|e| Error::Config(format!("{} repeat {r}: {e}", spec.id.name())))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut merged = Output::default();
    let mut repeats = Vec::new();
    for (r, o) in outputs.into_iter().enumerate() {
        merged.tables.extend(o.tables);
        merged.checks.extend(o.checks.into_iter().map(|mut c| {
            c.name = format!("repeat {r}: {}", c.name);
            c
        }));
        repeats.push(o.summary);
    }
    merged.summary = json!({ "repeats": repeats });
    Ok(merged)
}
