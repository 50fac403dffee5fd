use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{assemble_proof, random_rows};
use crate::error::{Error, Result};
use crate::proofchain::Proof;
use crate::tinytrain::{
    dot, sgd_step, CostLedger, Dataset, ModelState, NoiseModel, OpKind, StepMetadata,
};
use crate::verifier::l2;

/// Relative ridge added to a Gram matrix that is not numerically positive
/// definite.
pub const RIDGE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RnaParams {
    pub rounds: usize,
    /// SGD steps per round, at most 32.
    pub m: usize,
    pub lr: f64,
    pub batch_size: usize,
}

impl RnaParams {
    /// Measured FP cost of one round: `m` SGD steps, the normal equations
    /// (one unit per inner product) and `m` weight additions.
    pub fn round_cost(m: usize) -> f64 {
        (3 * m + m * (m + 1) / 2 + m + m) as f64
    }

    /// Largest round count whose total cost stays within `budget` FP.
    pub fn rounds_for_budget(budget: f64, m: usize) -> usize {
        (budget / Self::round_cost(m)).floor() as usize
    }
}

#[derive(Debug, Clone)]
pub struct RnaResult {
    /// Proof whose checkpoints are the round bases; it ends at the last
    /// base, not at `W_T`.
    pub candidate: Proof,
    pub store: Dataset,
    /// Distance to `W_T` at the initial base and after every round.
    pub distance_curve: Vec<f64>,
    pub ledger: CostLedger,
    /// Rounds whose Gram matrix needed the ridge term.
    pub ridge_rounds: Vec<usize>,
    /// Rounds where the solved combination did not improve and `c = 0` was kept.
    pub fallback_rounds: Vec<usize>,
}

impl RnaResult {
    pub fn final_distance(&self) -> f64 {
        *self
            .distance_curve
            .last()
            .expect("curve holds the initial distance")
    }
}

fn cholesky_solve(a: &[f64], b: &[f64], m: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; m * m];
    for i in 0..m {
        for j in 0..=i {
            let s: f64 = (0..j).map(|p| l[i * m + p] * l[j * m + p]).sum();
            if i == j {
                let d = a[i * m + i] - s;
                if !(d > 0.0) || !d.is_finite() {
                    return None;
                }
                l[i * m + i] = d.sqrt();
            } else {
                l[i * m + j] = (a[i * m + j] - s) / l[j * m + j];
            }
        }
    }
    let mut y = vec![0.0; m];
    for i in 0..m {
        let s: f64 = (0..i).map(|p| l[i * m + p] * y[p]).sum();
        y[i] = (b[i] - s) / l[i * m + i];
    }
    let mut x = vec![0.0; m];
    for i in (0..m).rev() {
        let s: f64 = (i + 1..m).map(|p| l[p * m + i] * x[p]).sum();
        x[i] = (y[i] - s) / l[i * m + i];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// `argmin_c ||r - sum_i c_i g_i||` via the normal equations and a Cholesky
/// factorisation. Returns the coefficients and whether the ridge was needed.
pub fn least_squares(
    g: &[Vec<f64>],
    r: &[f64],
    ledger: &mut CostLedger,
) -> Result<(Vec<f64>, bool)> {
    let m = g.len();
    if m == 0 || m > 32 {
        return Err(Error::Config(format!(
            "least squares over {m} directions; need 1..=32"
        )));
    }
    if g.iter().any(|v| v.len() != r.len()) {
        return Err(Error::Shape("direction and target lengths differ".into()));
    }
    let mut gram = vec![0.0; m * m];
    for i in 0..m {
        for j in 0..=i {
            let v = dot(&g[i], &g[j]);
            gram[i * m + j] = v;
            gram[j * m + i] = v;
        }
    }
    let rhs: Vec<f64> = g.iter().map(|v| dot(v, r)).collect();
    ledger.record_n(OpKind::LsqSolve, (m * (m + 1) / 2 + m) as u64);
    if let Some(c) = cholesky_solve(&gram, &rhs, m) {
        return Ok((c, false));
    }
    let scale = (0..m).map(|i| gram[i * m + i]).sum::<f64>() / m as f64;
    let lambda = RIDGE * if scale > 0.0 { scale } else { 1.0 };
    for i in 0..m {
        gram[i * m + i] += lambda;
    }
    match cholesky_solve(&gram, &rhs, m) {
        Some(c) => Ok((c, true)),
        None => Ok((vec![0.0; m], true)),
    }
}

/// Repeatedly takes `m` SGD steps from the current base and jumps to the
/// best linear combination of the recorded updates, `base + sum c_i g_i`.
pub fn rna_attack<R: Rng + ?Sized>(
    w_t: &ModelState,
    w0: &ModelState,
    params: &RnaParams,
    data: &Dataset,
    rng: &mut R,
) -> Result<RnaResult> {
    w_t.same_arch(w0)?;
    let RnaParams {
        rounds,
        m,
        lr,
        batch_size,
    } = *params;
    if rounds == 0 || m == 0 || m > 32 {
        return Err(Error::Config(format!(
            "need rounds >= 1 and 1 <= m <= 32, got {rounds} and {m}"
        )));
    }
    let meta = StepMetadata::sgd(lr, batch_size, 0, 0);
    meta.validate()?;
    let mut no_noise_rng = ChaCha8Rng::seed_from_u64(0);
    let mut ledger = CostLedger::new();
    let mut base = w0.clone();
    let mut checkpoints = vec![base.clone()];
    let mut batches = Vec::with_capacity(rounds * m);
    let mut metadata = Vec::with_capacity(rounds * m);
    let mut curve = vec![l2(w_t.weights(), base.weights())];
    let (mut ridge_rounds, mut fallback_rounds) = (Vec::new(), Vec::new());

    for round in 0..rounds {
        let mut w = base.clone();
        let mut updates = Vec::with_capacity(m);
        for j in 0..m {
            let rows = random_rows(rng, data.len(), batch_size)?;
            let before = w.clone();
            sgd_step(
                &mut w,
                &data.batch(&rows)?,
                &meta,
                &NoiseModel::none(),
                &mut no_noise_rng,
                &mut ledger,
            )?;
            updates.push(
                w.weights()
                    .iter()
                    .zip(before.weights())
                    .map(|(a, b)| a - b)
                    .collect::<Vec<_>>(),
            );
            batches.push(rows);
            metadata.push(StepMetadata {
                step_index: (round * m + j) as u64,
                ..meta
            });
        }
        let residual: Vec<f64> = w_t
            .weights()
            .iter()
            .zip(base.weights())
            .map(|(t, b)| t - b)
            .collect();
        let (c, ridged) = least_squares(&updates, &residual, &mut ledger)?;
        if ridged {
            ridge_rounds.push(round);
        }
        let mut next = base.weights().to_vec();
        for (ci, g) in c.iter().zip(&updates) {
            for (x, gi) in next.iter_mut().zip(g) {
                *x += ci * gi;
            }
        }
        ledger.record_n(OpKind::WeightAdd, m as u64);
        let before = *curve.last().expect("nonempty");
        let after = l2(w_t.weights(), &next);
        if after.is_finite() && after <= before {
            base = ModelState::new(*base.arch(), next)?;
            curve.push(after);
        } else {
            fallback_rounds.push(round);
            curve.push(before);
        }
        checkpoints.push(base.clone());
    }

    let spe = (data.len() / batch_size).max(1);
    let candidate = assemble_proof(*w0.arch(), m, spe, checkpoints, batches, metadata, data)?;
    Ok(RnaResult {
        candidate,
        store: data.clone(),
        distance_curve: curve,
        ledger,
        ridge_rounds,
        fallback_rounds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tinytrain::{gen_dataset, init_model, Activation, Arch, DatasetSpec};

    #[test]
    fn one_dimensional_span() {
        let mut l = CostLedger::new();
        let (c, ridged) = least_squares(&[vec![1.0]], &[5.0], &mut l).unwrap();
        assert_eq!(c, vec![5.0]);
        assert!(!ridged);
        assert_eq!(l.count(OpKind::LsqSolve), 2);
    }

    #[test]
    fn orthogonal_direction_gives_zero() {
        let mut l = CostLedger::new();
        let (c, _) = least_squares(&[vec![0.0, 1.0]], &[3.0, 0.0], &mut l).unwrap();
        assert_eq!(c, vec![0.0]);
    }

    #[test]
    fn duplicate_directions_need_ridge() {
        let mut l = CostLedger::new();
        let g = vec![vec![1.0, 2.0], vec![1.0, 2.0]];
        let (c, ridged) = least_squares(&g, &[2.0, 4.0], &mut l).unwrap();
        assert!(ridged);
        assert!((c[0] + c[1] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn normal_equations_match_projection() {
        let g = vec![vec![1.0, 0.0, 1.0], vec![0.0, 1.0, 1.0]];
        let r = [1.0, 2.0, 3.0];
        let (c, _) = least_squares(&g, &r, &mut CostLedger::new()).unwrap();
        // residual orthogonal to both directions
        let res: Vec<f64> = (0..3)
            .map(|i| r[i] - c[0] * g[0][i] - c[1] * g[1][i])
            .collect();
        assert!(dot(&res, &g[0]).abs() < 1e-12 && dot(&res, &g[1]).abs() < 1e-12);
    }

    #[test]
    fn curve_is_nonincreasing_and_cost_measured() {
        let data = gen_dataset(5, &DatasetSpec::new(3, 20, 4)).unwrap();
        let arch = Arch::new(4, 5, 3, Activation::Tanh);
        let w0 = init_model(arch, 1, 1.0).unwrap();
        let wt = init_model(arch, 2, 1.0).unwrap();
        let p = RnaParams {
            rounds: 6,
            m: 4,
            lr: 0.2,
            batch_size: 5,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let r = rna_attack(&wt, &w0, &p, &data, &mut rng).unwrap();
        assert_eq!(r.distance_curve.len(), 7);
        assert!(r.distance_curve.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(r.ledger.fp_units(), 6.0 * RnaParams::round_cost(4));
        assert_eq!(r.candidate.total_steps(), 24);
    }
}
