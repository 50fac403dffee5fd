//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

use std::f64::consts::{FRAC_PI_3, FRAC_PI_4, FRAC_PI_6};
use std::process::ExitCode;
use std::time::Instant;

use polforge::attacks::{
    blindfold_topq_attack, infinitesimal_attack, infinitesimal_min_steps, rna_attack,
    BlindfoldParams, InfinitesimalParams, RnaParams, SpoofResult,
};
use polforge::bounds::{
    mc_validate_tail, query_lower_bound, stability_zeta, tail_grid, QueryBound,
};
use polforge::harness::{
    honest_setup, independent_runs_distances, t_test_one_tailed, ExperimentId, ExperimentSpec,
    HonestSetup,
};
use polforge::proofchain::{deserialize, serialize, CommitmentLedger, Proof};
use polforge::tinytrain::{
    forward, gen_dataset, init_model, loss_and_grad, train, Activation, Arch, Batch, CostLedger,
    Dataset, DatasetProvider, DatasetSpec, ModelState, NoiseModel, TrainConfig,
};
use polforge::verifier::{
    estimate_min_threshold, select_top_q, verify, verify_step, Decision, Metric, StepRule,
    VerificationPolicy,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ChiSquared, ContinuousCDF};

const REPEATS: usize = 5;

type Outcome = Result<(bool, String), Box<dyn std::error::Error>>;
type Criterion = (&'static str, fn() -> Outcome);

fn desk(id: ExperimentId) -> ExperimentSpec {
    ExperimentSpec::desk_default(id)
}

fn attacker_init(h: &HonestSetup) -> polforge::Result<ModelState> {
    init_model(
        *h.proof.final_state().arch(),
        h.config.init_seed() ^ 0x5f00f,
        h.config.init_scale,
    )
}

fn rd(h: &HonestSetup) -> Option<f64> {
    (!h.rd.degenerate).then_some(h.rd.rd)
}

fn infinitesimal_spoof(h: &HonestSetup, delta: f64, seed: u64) -> polforge::Result<SpoofResult> {
    let w_t = h.proof.final_state();
    let w0 = attacker_init(h)?;
    let k = h.proof.k();
    let t = infinitesimal_min_steps(w_t, &w0, k, delta, 10.0)?;
    let params = InfinitesimalParams::new(t, k, delta, h.config.batch_size);
    infinitesimal_attack(
        w_t,
        &w0,
        &params,
        &h.data,
        &mut ChaCha8Rng::seed_from_u64(seed),
    )
}

fn static_delta(h: &HonestSetup) -> f64 {
    match h.policy.threshold {
        polforge::verifier::ThresholdMode::Static { delta } => delta,
        _ => unreachable!("desk policies are static"),
    }
}

fn honest_acceptance() -> Outcome {
    let start = Instant::now();
    let spec = desk(ExperimentId::BaselineHonest);
    let (mut accepted, mut total, mut valid) = (0usize, 0usize, 0usize);
    for r in 0..REPEATS {
        let h = honest_setup(&spec, r)?;
        let noise = NoiseModel::relative_isotropic(1e-3);
        if h.policy.noise != noise
            || h.config.noise != noise
            || static_delta(&h) != h.delta_hat
            || spec.tau != 0.999
        {
            return Err("desk setup does not match the honest-acceptance protocol".into());
        }
        let report = verify(&h.proof, &h.policy, &h.data, rd(&h))?;
        valid += report.is_valid() as usize;
        total += report.verdicts.len();
        accepted += report
            .verdicts
            .iter()
            .filter(|v| v.decision == Decision::Accept)
            .count();
    }
    let rate = accepted as f64 / total as f64;
    let secs = start.elapsed().as_secs_f64();
    Ok((
        valid == REPEATS && rate >= 0.99 && secs < 30.0,
        format!("{valid}/{REPEATS} VALID, per-step acceptance {rate:.4} over {total} updates, {secs:.1}s"),
    ))
}

fn infinitesimal() -> Outcome {
    let start = Instant::now();
    let h = honest_setup(&desk(ExperimentId::AttackInfinitesimal), 0)?;
    let spoof = infinitesimal_spoof(&h, static_delta(&h), 11)?;
    let rd = rd(&h).ok_or("degenerate reference distance")?;
    let honest = verify(&h.proof, &h.policy, &h.data, Some(rd))?;
    let forged = verify(&spoof.proof, &h.policy, &spoof.store, Some(rd))?;
    let nre_h = honest.max_normalized_error().ok_or("no normalized error")?;
    let nre_s = forged.max_normalized_error().ok_or("no normalized error")?;
    let k = h.proof.k() as f64;
    let honest_per_update = h.run.ledger.fp_units() / (h.proof.total_steps() as f64 / k);
    let spoof_per_update = spoof.cost_per_update();
    let ratio = spoof_per_update / honest_per_update;
    let secs = start.elapsed().as_secs_f64();
    let pass = forged.is_valid()
        && nre_s < 0.2 * nre_h
        && ratio < 0.05
        && (spoof_per_update - 1.0).abs() <= 1.0
        && h.proof.k() == 10
        && secs < 60.0;
    Ok((
        pass,
        format!(
            "{:?} over {} updates, max NRE {nre_s:.3} vs honest {nre_h:.3}, cost {spoof_per_update} vs {honest_per_update} FP/update (ratio {ratio:.4}), {secs:.1}s",
            forged.overall,
            forged.verdicts.len()
        ),
    ))
}

fn adaptive_defense() -> Outcome {
    let alpha = FRAC_PI_6.sin();
    let spec = desk(ExperimentId::AttackInfinitesimal);
    let mut detail = Vec::new();
    let mut pass = true;
    for r in 0..REPEATS {
        let h = honest_setup(&spec, r)?;
        let policy =
            VerificationPolicy::adaptive(alpha).with_noise(h.policy.noise, h.policy.noise_seed);
        let honest = verify(&h.proof, &policy, &h.data, None)?;
        let spoof = infinitesimal_spoof(&h, static_delta(&h), 11 + r as u64)?;
        let forged = verify(&spoof.proof, &policy, &spoof.store, None)?;
        let rejects = forged.rejected_steps().len();
        pass &= honest.is_valid() && rejects >= 1;
        detail.push(format!(
            "r{r}: honest {:?}, spoof {rejects} rejects",
            honest.overall
        ));
    }
    Ok((pass, detail.join("; ")))
}

fn blindfold() -> Outcome {
    let spec = desk(ExperimentId::AttackBlindfold);
    let h = honest_setup(&spec, 0)?;
    let w_t = h.proof.final_state();
    let w0 = attacker_init(&h)?;
    let params = BlindfoldParams {
        q: 5,
        k: 10,
        s: 100,
        epochs: 2,
        eta_large: 1.0,
        batch_size: h.config.batch_size,
    };
    let spoof = blindfold_topq_attack(
        w_t,
        &w0,
        &params,
        &h.data,
        &mut ChaCha8Rng::seed_from_u64(5),
    )?;
    let base = VerificationPolicy::adaptive(FRAC_PI_6.sin())
        .with_noise(h.policy.noise, h.policy.noise_seed);
    let mut selected = Vec::new();
    for e in 0..spoof.proof.epoch_count() {
        selected.extend(select_top_q(&spoof.proof, e, 5, Metric::L2)?);
    }
    let at5 = verify(&spoof.proof, &base.clone().with_q(5), &spoof.store, None)?;
    let at6 = verify(&spoof.proof, &base.with_q(6), &spoof.store, None)?;
    // 3kQ/s + 1 from the per-update case split
    let formula = 3.0 * 10.0 * 5.0 / 100.0 + 1.0;
    let measured = spoof.cost_per_update();
    let pass = selected == spoof.genuine_steps
        && selected.len() == 10
        && at5.is_valid()
        && at5.rejected_steps().is_empty()
        && !at6.rejected_steps().is_empty()
        && (measured - formula).abs() <= 1.0;
    Ok((
        pass,
        format!(
            "Q=5 selects planted: {}, Q=5 {:?}, Q=6 rejects {:?}, cost {measured} vs {formula} FP/update",
            selected == spoof.genuine_steps,
            at5.overall,
            at6.rejected_steps()
        ),
    ))
}

fn min_threshold() -> Outcome {
    let sigma = 0.01;
    let n = 100;
    let trials = 100_000;
    let sampler = |rng: &mut ChaCha8Rng| -> polforge::Result<(Vec<f64>, Vec<f64>)> {
        let g = vec![0.0; n];
        let gp = (0..n)
            .map(|_| sigma * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Ok((g, gp))
    };
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut at = |tau: f64| estimate_min_threshold(sampler, Metric::L2, tau, trials, &mut rng);
    let (d50, d90, d99) = (at(0.5)?, at(0.9)?, at(0.99)?);
    let exact = sigma * ChiSquared::new(n as f64)?.inverse_cdf(0.9).sqrt();
    let rel = (d90 - exact).abs() / exact;
    let reported_rel = (d90 - 0.1089).abs() / 0.1089;
    Ok((
        rel < 0.05 && reported_rel < 0.05 && d50 <= d90 && d90 <= d99,
        format!("delta_hat(0.9) = {d90:.5}, chi quantile {exact:.5}, rel err {rel:.2e}; 0.5/0.9/0.99 = {d50:.4}/{d90:.4}/{d99:.4}"),
    ))
}

fn angle_bound() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let dim = 8;
    let mut worst = Vec::new();
    let mut violations = 0usize;
    for theta in [FRAC_PI_6 / 2.0, FRAC_PI_6, FRAC_PI_4, FRAC_PI_3] {
        let alpha = theta.sin();
        let (mut accepted, mut max_angle) = (0usize, 0.0f64);
        while accepted < 100_000 {
            let g: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            let ng = g.iter().map(|x| x * x).sum::<f64>().sqrt();
            let scale = rng.random_range(0.0..1.5) * alpha * ng / (dim as f64).sqrt();
            let gp: Vec<f64> = g
                .iter()
                .map(|x| x + scale * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let ngp = gp.iter().map(|x| x * x).sum::<f64>().sqrt();
            let d = g
                .iter()
                .zip(&gp)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            if verify_step(0, d, ng, ngp, StepRule::Adaptive(alpha))?.decision != Decision::Accept {
                continue;
            }
            accepted += 1;
            let cos = g.iter().zip(&gp).map(|(a, b)| a * b).sum::<f64>() / (ng * ngp);
            let angle = cos.clamp(-1.0, 1.0).acos();
            max_angle = max_angle.max(angle);
            violations += (angle > theta) as usize;
        }
        worst.push(format!("{:.4}/{:.4}", max_angle, theta));
    }
    Ok((
        violations == 0,
        format!(
            "{violations} violations, max angle/theta {}",
            worst.join(" ")
        ),
    ))
}

fn bounds() -> Outcome {
    let zeta = stability_zeta(4.0, 10.0, 0.5, 3.0)?;
    let q = query_lower_bound(1.0, 10.0, 0.5)?;
    let (n, p) = match q {
        QueryBound::Finite { n, p } => (n, p),
        other => return Ok((false, format!("unexpected {other:?}"))),
    };
    let closed = (1.0f64 / 3.0).ln() / (1.0f64 - 0.04).ln();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let grid = tail_grid()?;
    let mut held = 0;
    for (_, c, _, dist) in &grid {
        held += mc_validate_tail(dist, *c, 100_000, &mut rng)?.holds as usize;
    }
    let pass = zeta.zeta == 0.0625
        && zeta.a == 3.0
        && p == 0.04
        && (n - closed).abs() < 1e-6
        && held == grid.len();
    Ok((
        pass,
        format!(
            "zeta {}, P {p}, N {n:.6} (closed form {closed:.6}), tail bound held {held}/{}",
            zeta.zeta,
            grid.len()
        ),
    ))
}

fn independent_runs() -> Outcome {
    let spec = desk(ExperimentId::IndependentRuns);
    let runs = independent_runs_distances(&spec)?;
    let d: Vec<f64> = runs.pairwise.iter().map(|p| p.2).collect();
    let mean = d.iter().sum::<f64>() / d.len() as f64;
    let t = t_test_one_tailed(&d)?;
    let rd = runs.rd.rd;
    Ok((
        spec.repeats == 10 && d.len() == 45 && mean > 50.0 * rd && t.p_one_tailed < 1e-6,
        format!(
            "10 runs, mean pairwise {mean:.4} vs rd {rd:.3e}, p = {:.3e}",
            t.p_one_tailed
        ),
    ))
}

fn rna() -> Outcome {
    let spec = desk(ExperimentId::AttackRna);
    let mut pass = true;
    let mut detail = Vec::new();
    for r in 0..REPEATS {
        let h = honest_setup(&spec, r)?;
        let w_t = h.proof.final_state();
        let w0 = attacker_init(&h)?;
        let m = 10;
        let rounds = RnaParams::rounds_for_budget(h.run.ledger.fp_units(), m);
        let params = RnaParams {
            rounds,
            m,
            lr: h.config.lr,
            batch_size: h.config.batch_size,
        };
        let res = rna_attack(
            w_t,
            &w0,
            &params,
            &h.data,
            &mut ChaCha8Rng::seed_from_u64(100 + r as u64),
        )?;
        let monotone = res.distance_curve.windows(2).all(|w| w[1] <= w[0]);
        let within_budget = res.ledger.fp_units() <= h.run.ledger.fp_units();
        let far = res.final_distance() > 100.0 * h.delta_hat;
        pass &= monotone && within_budget && far && rounds >= 1;
        detail.push(format!(
            "r{r}: {rounds} rounds, final {:.3} vs 100*delta {:.3}",
            res.final_distance(),
            100.0 * h.delta_hat
        ));
    }
    Ok((pass, detail.join("; ")))
}

/// Serves every batch honestly except the one whose indices match `target`,
/// in which a single bit is flipped.
struct Tamper<'a> {
    inner: &'a Dataset,
    target: Vec<usize>,
    element: usize,
    bit: u32,
}

impl DatasetProvider for Tamper<'_> {
    fn fetch(&self, indices: &[usize]) -> polforge::Result<Batch> {
        let mut b = self.inner.fetch(indices)?;
        if indices == self.target.as_slice() {
            let x = &mut b.features[self.element];
            *x = f64::from_bits(x.to_bits() ^ (1u64 << self.bit));
        }
        Ok(b)
    }
}

fn commitment_integrity() -> Outcome {
    let spec = desk(ExperimentId::BaselineHonest);
    let data = gen_dataset(spec.data.seed, &spec.data.spec)?;
    let run = train(&spec.train, &data)?;
    let proof = Proof::from_run(&run, &data, spec.k)?;
    let policy = VerificationPolicy::static_l2(1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut exact = 0;
    for _ in 0..100 {
        let step = rng.random_range(0..proof.total_steps());
        let target = proof.record(step)?.batch_indices.clone();
        let duplicates = proof
            .records()
            .iter()
            .filter(|r| r.batch_indices == target)
            .count();
        if duplicates != 1 {
            return Err(format!("step {step} shares its batch indices with another step").into());
        }
        let provider = Tamper {
            inner: &data,
            element: rng.random_range(0..target.len() * data.dim),
            bit: rng.random_range(0..64),
            target,
        };
        let report = verify(&proof, &policy, &provider, None)?;
        let hit = report.commitment_failures.len() == 1
            && report.commitment_failures[0].step == step
            && report.commitment_failures[0]
                .reason
                .starts_with("commitment violation")
            && !report.is_valid();
        exact += hit as usize;
    }
    let mut ledger = CommitmentLedger::new();
    let fresh = !ledger.detect_replay(&proof);
    ledger.commit(&proof, 1_700_000_000, "honest")?;
    let replayed = ledger.detect_replay(&proof);
    Ok((
        exact == 100 && fresh && replayed,
        format!("{exact}/100 flips caught at the tampered step, replay detected: {replayed}"),
    ))
}

fn numerics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut worst = 0.0f64;
    for i in 0..20 {
        let dim = rng.random_range(2..6);
        let classes = rng.random_range(2..5);
        let hidden = if i % 4 == 0 {
            0
        } else {
            rng.random_range(1..8)
        };
        let arch = Arch::new(dim, hidden, classes, Activation::Tanh);
        let model = init_model(arch, rng.random(), 1.0)?;
        let rows = rng.random_range(1..6);
        let features: Vec<f64> = (0..rows * dim)
            .map(|_| rng.sample(StandardNormal))
            .collect();
        let labels: Vec<usize> = (0..rows).map(|_| rng.random_range(0..classes)).collect();
        let batch =
            Dataset::new(dim, classes, features, labels)?.batch(&(0..rows).collect::<Vec<_>>())?;
        let mut ledger = CostLedger::new();
        let (_, grad) = loss_and_grad(&model, &batch, &mut ledger)?;
        let h = 1e-5;
        for j in 0..model.len() {
            let mut plus = model.weights().to_vec();
            let mut minus = plus.clone();
            plus[j] += h;
            minus[j] -= h;
            let fp = forward(&ModelState::new(arch, plus)?, &batch, &mut ledger)?;
            let fm = forward(&ModelState::new(arch, minus)?, &batch, &mut ledger)?;
            worst = worst.max(((fp - fm) / (2.0 * h) - grad[j]).abs());
        }
    }
    let mut identical = 0;
    for i in 0..50u64 {
        let spec = DatasetSpec::new(
            rng.random_range(2..4),
            rng.random_range(4..10),
            rng.random_range(2..5),
        );
        let data = gen_dataset(i, &spec)?;
        let batch = rng.random_range(1..data.len().min(6));
        let noise = if i % 2 == 0 {
            NoiseModel::none()
        } else {
            NoiseModel::relative_isotropic(1e-3)
        };
        let config = TrainConfig::new(
            rng.random_range(0..5),
            rng.random_range(1..3),
            batch,
            0.1,
            i,
        )
        .with_noise(noise);
        let run = train(&config, &data)?;
        let divisors: Vec<usize> = (1..=4).filter(|d| run.total_steps() % d == 0).collect();
        let k = divisors[rng.random_range(0..divisors.len())];
        let proof = Proof::from_run(&run, &data, k)?;
        let bytes = serialize(&proof);
        let back = deserialize(&bytes)?;
        identical += (back == proof && serialize(&back) == bytes) as usize;
    }
    Ok((
        worst < 1e-5 && identical == 50,
        format!("max |fd - grad| {worst:.2e} over 20 configs, {identical}/50 proofs round-trip"),
    ))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 11] = [
        ("honest acceptance", honest_acceptance),
        ("infinitesimal spoof passes static threshold", infinitesimal),
        (
            "adaptive threshold rejects infinitesimal spoof",
            adaptive_defense,
        ),
        ("blindfold top-Q", blindfold),
        ("minimal threshold estimator", min_threshold),
        ("angle bound", angle_bound),
        ("cost bound calculators", bounds),
        ("independent runs", independent_runs),
        ("rna attack stays far", rna),
        ("commitment integrity", commitment_integrity),
        ("numerics", numerics),
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let label = format!("criterion {:>2}: {name}", i + 1);
        if !filter.is_empty() && !filter.iter().any(|p| label.contains(p.as_str())) {
            continue;
        }
        let start = Instant::now();
        let (pass, detail) = match f() {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        failed += !pass as usize;
        println!(
            "{} {label} ({:.1}s) {detail}",
            if pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    }
}
