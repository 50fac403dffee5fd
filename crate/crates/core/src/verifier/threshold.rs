use rand::Rng;

use super::metric::{distance, Metric};
use crate::error::{Error, Result};
use crate::proofchain::{fetch_and_check_batch, Proof};
use crate::tinytrain::{
    train, update_k, CostLedger, Dataset, DatasetProvider, NoiseModel, TrainConfig,
};

/// Mean pairwise final-weight distance between re-runs of one training
/// configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceDistance {
    pub rd: f64,
    pub trials: usize,
    /// `rd == 0`: every re-run landed on the same weights, so normalized
    /// errors are undefined.
    pub degenerate: bool,
}

/// Re-trains `config` `trials` times with fresh noise seeds drawn from
/// `rng`. Initialisation and data order stay fixed, so `rd` measures the
/// spread caused by reproduction noise alone.
pub fn reference_distance<R: Rng + ?Sized>(
    config: &TrainConfig,
    dataset: &Dataset,
    trials: usize,
    rng: &mut R,
) -> Result<ReferenceDistance> {
    if trials < 2 {
        return Err(Error::Config(
            "reference distance needs at least 2 trials".into(),
        ));
    }
    let mut finals = Vec::with_capacity(trials);
    for _ in 0..trials {
        let mut c = config.clone();
        c.init_seed = Some(config.init_seed());
        c.sampling_seed = Some(config.sampling_seed());
        c.noise_seed = Some(rng.random());
        finals.push(train(&c, dataset)?.final_state().clone());
    }
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for i in 0..trials {
        for j in i + 1..trials {
            sum += distance(Metric::L2, &finals[i], &finals[j])?;
            pairs += 1;
        }
    }
    let rd = sum / pairs as f64;
    Ok(ReferenceDistance {
        rd,
        trials,
        degenerate: rd == 0.0,
    })
}

/// Empirical `tau`-quantile of `d(g, g')` over `trials` draws of `sampler`.
///
/// Each draw returns two noisy realisations of the same update; the
/// quantile is taken around the observed update rather than its unknown
/// mean.
pub fn estimate_min_threshold<R, F>(
    mut sampler: F,
    metric: Metric,
    tau: f64,
    trials: usize,
    rng: &mut R,
) -> Result<f64>
where
    R: Rng + ?Sized,
    F: FnMut(&mut R) -> Result<(Vec<f64>, Vec<f64>)>,
{
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::Config(format!("tau must lie in (0, 1), got {tau}")));
    }
    if trials == 0 {
        return Err(Error::Config("need at least one trial".into()));
    }
    let mut d = Vec::with_capacity(trials);
    for _ in 0..trials {
        let (g, gp) = sampler(rng)?;
        d.push(metric.between(&g, &gp)?);
    }
    Ok(empirical_quantile(&mut d, tau))
}

/// Smallest sample `x` with at least `ceil(tau * n)` samples `<= x`.
pub(crate) fn empirical_quantile(samples: &mut [f64], tau: f64) -> f64 {
    samples.sort_by(f64::total_cmp);
    let n = samples.len();
    let idx = ((tau * n as f64).ceil() as usize).clamp(1, n) - 1;
    samples[idx]
}

type UpdatePair = (Vec<f64>, Vec<f64>);

/// Sampler for [`estimate_min_threshold`] built from an honest proof: each
/// draw picks a random checkpoint and replays its `k` steps twice under
/// `noise`, returning both resulting updates.
pub fn honest_update_sampler<'a, R, P>(
    proof: &'a Proof,
    provider: &'a P,
    noise: NoiseModel,
) -> Result<impl FnMut(&mut R) -> Result<UpdatePair> + 'a>
where
    R: Rng + ?Sized,
    P: DatasetProvider + ?Sized,
{
    noise.validate()?;
    let k = proof.k();
    let starts: Vec<usize> = proof.update_starts().collect();
    let mut cache: Vec<Option<Vec<crate::tinytrain::Batch>>> = vec![None; starts.len()];
    Ok(move |rng: &mut R| {
        let i = rng.random_range(0..starts.len());
        let t = starts[i];
        if cache[i].is_none() {
            let b = (t..t + k)
                .map(|s| fetch_and_check_batch(proof, s, provider))
                .collect::<Result<Vec<_>>>()?;
            cache[i] = Some(b);
        }
        let batches = cache[i].as_ref().expect("filled above");
        let meta = proof.record(t)?.metadata;
        let w = proof.checkpoint(t)?;
        let mut ledger = CostLedger::new();
        let a = update_k(w, batches, &meta, k, &noise, rng, &mut ledger)?;
        let b = update_k(w, batches, &meta, k, &noise, rng, &mut ledger)?;
        let delta = |x: &crate::tinytrain::ModelState| -> Vec<f64> {
            x.weights()
                .iter()
                .zip(w.weights())
                .map(|(p, q)| p - q)
                .collect()
        };
        Ok((delta(&a), delta(&b)))
    })
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::tinytrain::{gen_dataset, DatasetSpec};

    #[test]
    fn zero_noise_gives_zero_threshold() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let sampler = |_: &mut ChaCha8Rng| Ok((vec![1.0, 2.0], vec![1.0, 2.0]));
        for tau in [0.1, 0.5, 0.999] {
            assert_eq!(
                estimate_min_threshold(sampler, Metric::L2, tau, 100, &mut rng).unwrap(),
                0.0
            );
        }
    }

    #[test]
    fn tau_domain() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let sampler = |_: &mut ChaCha8Rng| Ok((vec![0.0], vec![0.0]));
        for tau in [0.0, 1.0, -0.5, f64::NAN] {
            let r = estimate_min_threshold(sampler, Metric::L2, tau, 10, &mut rng);
            assert!(matches!(r, Err(Error::Config(_))), "{tau}");
        }
    }

    #[test]
    fn quantile_indexing() {
        let mut s = vec![5.0, 1.0, 4.0, 2.0, 3.0];
        assert_eq!(empirical_quantile(&mut s, 0.5), 3.0);
        assert_eq!(empirical_quantile(&mut s, 0.2), 1.0);
        assert_eq!(empirical_quantile(&mut s, 0.21), 2.0);
        assert_eq!(empirical_quantile(&mut s, 0.99), 5.0);
    }

    #[test]
    fn noiseless_reference_distance_is_degenerate() {
        let data = gen_dataset(1, &DatasetSpec::new(2, 10, 3)).unwrap();
        let cfg = TrainConfig::new(4, 1, 5, 0.1, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let rd = reference_distance(&cfg, &data, 3, &mut rng).unwrap();
        assert!(rd.degenerate);
        assert_eq!(rd.rd, 0.0);
        assert!(matches!(
            reference_distance(&cfg, &data, 1, &mut rng),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn noisy_reference_distance_is_positive() {
        let data = gen_dataset(1, &DatasetSpec::new(2, 10, 3)).unwrap();
        let cfg = TrainConfig::new(4, 1, 5, 0.1, 2).with_noise(NoiseModel::isotropic(1e-3));
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let rd = reference_distance(&cfg, &data, 4, &mut rng).unwrap();
        assert!(!rd.degenerate && rd.rd > 0.0);
    }
}
