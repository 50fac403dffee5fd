use polforge::attacks::{
    blindfold_topq_attack, infinitesimal_attack, interp_perturb_attack, rna_attack,
    BlindfoldParams, InfinitesimalParams, InterpParams, RnaParams,
};
use polforge::proofchain::Proof;
use polforge::tinytrain::{
    gen_dataset, init_model, Activation, Arch, Dataset, DatasetSpec, ModelState,
};
use polforge::verifier::{select_top_q, Metric};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn endpoints(seed: u64, hidden: usize) -> (ModelState, ModelState, Dataset) {
    let data = gen_dataset(seed, &DatasetSpec::new(3, 20, 4)).unwrap();
    let arch = if hidden == 0 {
        Arch::linear(4, 3)
    } else {
        Arch::new(4, hidden, 3, Activation::Tanh)
    };
    let w0 = init_model(arch, seed, 1.0).unwrap();
    let wt = init_model(arch, seed.wrapping_add(1), 1.0).unwrap();
    (w0, wt, data)
}

fn last_checkpoint(proof: &Proof) -> &ModelState {
    proof.checkpoint(proof.total_steps()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn infinitesimal_checkpoints_are_evenly_spaced(seed in any::<u64>(), k in 1usize..4, delta in 0.05f64..0.5) {
        let (w0, wt, data) = endpoints(seed, 0);
        let span = l2(w0.weights(), wt.weights());
        let updates = (span * 10.0 / delta).ceil() as usize;
        let params = InfinitesimalParams::new(updates * k, k, delta, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spoof = infinitesimal_attack(&wt, &w0, &params, &data, &mut rng).unwrap();
        prop_assert!(last_checkpoint(&spoof.proof).bit_eq(&wt));
        prop_assert!(spoof.proof.checkpoint(0).unwrap().bit_eq(&w0));
        let expected = span / updates as f64;
        for t in spoof.proof.update_starts() {
            let a = spoof.proof.checkpoint(t).unwrap();
            let b = spoof.proof.checkpoint(t + k).unwrap();
            let gap = l2(a.weights(), b.weights());
            prop_assert!((gap - expected).abs() < 1e-12, "gap {} vs {}", gap, expected);
            prop_assert!(gap < delta);
        }
        prop_assert!(spoof.ledger.is_consistent());
    }
}

#[test]
fn infinitesimal_rejects_too_few_steps() {
    let (w0, wt, data) = endpoints(1, 0);
    let params = InfinitesimalParams::new(4, 2, 1e-3, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(infinitesimal_attack(&wt, &w0, &params, &data, &mut rng).is_err());
}

#[test]
fn interpolation_spoof_ends_at_the_target() {
    let (w0, wt, data) = endpoints(3, 4);
    let params = InterpParams {
        total_steps: 12,
        k: 3,
        delta: 0.01,
        n_iter: 2,
        batch_size: 4,
        lr: 0.1,
        input_lr: 0.5,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let spoof = interp_perturb_attack(&wt, &w0, &params, &data, &mut rng).unwrap();
    assert!(last_checkpoint(&spoof.proof).bit_eq(&wt));
    assert_eq!(spoof.proof.total_steps(), 12);
    let per_update = 1.0 + (3 * (11 * 2 + 3)) as f64;
    assert!(
        (spoof.cost_per_update() - per_update).abs() < 1e-9,
        "{}",
        spoof.cost_per_update()
    );
}

#[test]
fn rna_distance_never_increases() {
    for seed in 0..4 {
        let (w0, wt, data) = endpoints(seed, 4);
        let params = RnaParams {
            rounds: 8,
            m: 5,
            lr: 0.1,
            batch_size: 6,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = rna_attack(&wt, &w0, &params, &data, &mut rng).unwrap();
        assert_eq!(r.distance_curve.len(), 9);
        assert!(
            r.distance_curve.windows(2).all(|w| w[1] <= w[0]),
            "{:?}",
            r.distance_curve
        );
        assert_eq!(r.distance_curve[0], l2(w0.weights(), wt.weights()));
        assert!((r.ledger.fp_units() - 8.0 * RnaParams::round_cost(5)).abs() < 1e-9);
        assert_eq!(RnaParams::rounds_for_budget(r.ledger.fp_units(), 5), 8);
    }
}

#[test]
fn blindfold_cost_tracks_the_formula() {
    let data = gen_dataset(8, &DatasetSpec::new(4, 25, 6)).unwrap();
    let arch = Arch::new(6, 8, 4, Activation::Tanh);
    let w0 = init_model(arch, 1, 1.0).unwrap();
    let wt = init_model(arch, 2, 1.0).unwrap();
    let params = BlindfoldParams {
        q: 2,
        k: 4,
        s: 20,
        epochs: 2,
        eta_large: 1.0,
        batch_size: 5,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let spoof = blindfold_topq_attack(&wt, &w0, &params, &data, &mut rng).unwrap();
    assert!(last_checkpoint(&spoof.proof).bit_eq(&wt));
    let formula = params.expected_cost_per_update();
    assert!(
        (spoof.cost_per_update() - formula).abs() <= 1.0,
        "{} vs {formula}",
        spoof.cost_per_update()
    );
    let mut selected = Vec::new();
    for epoch in 0..spoof.proof.epoch_count() {
        selected.extend(select_top_q(&spoof.proof, epoch, 2, Metric::L2).unwrap());
    }
    assert_eq!(selected, spoof.genuine_steps);
}
