use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::mixed_input_grad;
use crate::error::{Error, Result};
use crate::tinytrain::{evaluate, loss_and_grad, Arch, CostLedger, Dataset, ModelState, OpKind};
use crate::verifier::l2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeId {
    DataOrdering,
    Synthesis,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeResult {
    pub probe: ProbeId,
    pub series: BTreeMap<String, Vec<f64>>,
    /// The probe stopped early on a non-finite value.
    pub diverged: bool,
    pub ledger: CostLedger,
}

impl ProbeResult {
    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.series.get(name).map(Vec::as_slice)
    }
}

/// For every row `i`, how much one SGD step on that row alone moves `w_hat`
/// toward `w_t`: `||W_T - w_hat|| - ||W_T - (w_hat - eta grad L_i)||`.
/// Positive entries help. Series `delta_dist`.
pub fn data_ordering_probe(
    w_t: &ModelState,
    w_hat: &ModelState,
    data: &Dataset,
    eta: f64,
) -> Result<ProbeResult> {
    w_t.same_arch(w_hat)?;
    let mut ledger = CostLedger::new();
    let base = l2(w_t.weights(), w_hat.weights());
    let mut deltas = Vec::with_capacity(data.len());
    for i in 0..data.len() {
        let (_, g) = loss_and_grad(w_hat, &data.batch(&[i])?, &mut ledger)?;
        let after: f64 = w_t
            .weights()
            .iter()
            .zip(w_hat.weights())
            .zip(&g)
            .map(|((t, w), g)| {
                let d = t - (w - eta * g);
                d * d
            })
            .sum::<f64>()
            .sqrt();
        deltas.push(base - after);
    }
    Ok(ProbeResult {
        probe: ProbeId::DataOrdering,
        series: BTreeMap::from([("delta_dist".to_string(), deltas)]),
        diverged: false,
        ledger,
    })
}

/// A model whose training data is itself a free parameter.
pub trait SynthesisObjective {
    /// Training loss on `data` and its gradient with respect to `w`.
    fn loss_and_weight_grad(
        &self,
        w: &[f64],
        data: &[f64],
        ledger: &mut CostLedger,
    ) -> Result<(f64, Vec<f64>)>;

    /// `grad_data (r . grad_w L(w, data))` for a fixed `r`.
    fn mixed_grad(
        &self,
        w: &[f64],
        data: &[f64],
        r: &[f64],
        ledger: &mut CostLedger,
    ) -> Result<Vec<f64>>;
}

/// The dense classifier with fixed labels and free input features.
#[derive(Debug, Clone)]
pub struct NetSynthesis {
    pub arch: Arch,
    pub labels: Vec<usize>,
}

impl SynthesisObjective for NetSynthesis {
    fn loss_and_weight_grad(
        &self,
        w: &[f64],
        data: &[f64],
        ledger: &mut CostLedger,
    ) -> Result<(f64, Vec<f64>)> {
        let e = evaluate(&self.arch, w, data, &self.labels, true, false)?;
        ledger.record(OpKind::Forward);
        ledger.record(OpKind::Backward);
        Ok((e.loss, e.weight_grad.expect("requested")))
    }

    fn mixed_grad(
        &self,
        w: &[f64],
        data: &[f64],
        r: &[f64],
        ledger: &mut CostLedger,
    ) -> Result<Vec<f64>> {
        mixed_input_grad(&self.arch, w, data, &self.labels, r, ledger)
    }
}

/// One weight, one data value, `L(w, d) = (w - d)^2 / 2`.
#[derive(Debug, Clone, Copy, Default)]
pub struct QuadraticToy;

impl SynthesisObjective for QuadraticToy {
    fn loss_and_weight_grad(
        &self,
        w: &[f64],
        data: &[f64],
        _: &mut CostLedger,
    ) -> Result<(f64, Vec<f64>)> {
        let d = w[0] - data[0];
        Ok((0.5 * d * d, vec![d]))
    }

    fn mixed_grad(&self, _: &[f64], _: &[f64], r: &[f64], _: &mut CostLedger) -> Result<Vec<f64>> {
        Ok(vec![-r[0]])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthesisParams {
    pub iters: usize,
    pub data_lr: f64,
    pub model_lr: f64,
}

/// Scales `v` onto `[0, 1]`; a constant series maps to zeros.
pub fn min_max_normalize(v: &[f64]) -> Vec<f64> {
    let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![0.0; v.len()];
    }
    v.iter().map(|x| (x - lo) / (hi - lo)).collect()
}

/// Alternates a data step, which moves the synthetic data so that one
/// unrolled SGD step lands closer to `w_t`, with an ordinary SGD step on the
/// model. Each iteration records, before updating, the distance to `w_t`
/// and the training loss.
///
/// Series: `dist_loss` and `train_loss` (min-max normalised) plus the raw
/// `dist_raw` and `train_raw`.
pub fn synthesis_probe<O: SynthesisObjective>(
    objective: &O,
    w_t: &[f64],
    w_init: &[f64],
    data_init: &[f64],
    params: &SynthesisParams,
) -> Result<ProbeResult> {
    if params.iters == 0 {
        return Err(Error::Config(
            "synthesis probe needs at least one iteration".into(),
        ));
    }
    if w_t.len() != w_init.len() {
        return Err(Error::Shape(
            "target and initial weights differ in length".into(),
        ));
    }
    let mut ledger = CostLedger::new();
    let mut w = w_init.to_vec();
    let mut data = data_init.to_vec();
    let (mut dist, mut train) = (Vec::new(), Vec::new());
    let mut diverged = false;
    for _ in 0..params.iters {
        let step = |w: &mut Vec<f64>,
                    data: &mut Vec<f64>,
                    ledger: &mut CostLedger|
         -> Result<(f64, f64)> {
            let (loss, g) = objective.loss_and_weight_grad(w, data, ledger)?;
            let d = l2(w_t, w);
            // r = W_T - (w - lr g); the data gradient of |r|^2 / 2 is lr * grad_data(r . g)
            let r: Vec<f64> = w_t
                .iter()
                .zip(w.iter())
                .zip(&g)
                .map(|((t, w), g)| t - (w - params.model_lr * g))
                .collect();
            let gd = objective.mixed_grad(w, data, &r, ledger)?;
            for (x, g) in data.iter_mut().zip(&gd) {
                *x -= params.data_lr * params.model_lr * g;
            }
            let (_, g) = objective.loss_and_weight_grad(w, data, ledger)?;
            for (wi, gi) in w.iter_mut().zip(&g) {
                *wi -= params.model_lr * gi;
            }
            ledger.record(OpKind::WeightAdd);
            Ok((d, loss))
        };
        match step(&mut w, &mut data, &mut ledger) {
            Ok((d, loss)) if d.is_finite() && loss.is_finite() => {
                dist.push(d);
                train.push(loss);
            }
            Ok(_) | Err(Error::Domain(_)) => {
                diverged = true;
                break;
            }
            Err(e) => return Err(e),
        }
        if w.iter().chain(&data).any(|x| !x.is_finite()) {
            diverged = true;
            break;
        }
    }
    let series = BTreeMap::from([
        ("dist_loss".to_string(), min_max_normalize(&dist)),
        ("train_loss".to_string(), min_max_normalize(&train)),
        ("dist_raw".to_string(), dist),
        ("train_raw".to_string(), train),
    ]);
    Ok(ProbeResult {
        probe: ProbeId::Synthesis,
        series,
        diverged,
        ledger,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tinytrain::{gen_dataset, init_model, DatasetSpec};

    #[test]
    fn at_optimum_every_step_hurts() {
        let data = gen_dataset(1, &DatasetSpec::new(2, 5, 3)).unwrap();
        let w = init_model(Arch::linear(3, 2), 4, 1.0).unwrap();
        let p = data_ordering_probe(&w, &w, &data, 0.1).unwrap();
        let d = p.get("delta_dist").unwrap();
        assert_eq!(d.len(), data.len());
        for (i, &x) in d.iter().enumerate() {
            let (_, g) =
                loss_and_grad(&w, &data.batch(&[i]).unwrap(), &mut CostLedger::new()).unwrap();
            let gn = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((x + 0.1 * gn).abs() < 1e-12);
            assert!(x < 0.0);
        }
    }

    #[test]
    fn toy_objectives_trade_off() {
        let p = SynthesisParams {
            iters: 30,
            data_lr: 0.5,
            model_lr: 0.5,
        };
        let r = synthesis_probe(&QuadraticToy, &[5.0], &[0.0], &[0.0], &p).unwrap();
        assert!(!r.diverged);
        let dist = r.get("dist_raw").unwrap();
        let train = r.get("train_raw").unwrap();
        assert_eq!(dist.len(), 30);
        assert!(dist[29] < dist[0]);
        assert!(train[29] > train[0]);
        for name in ["dist_loss", "train_loss"] {
            let c = r.get(name).unwrap();
            assert_eq!(c.iter().cloned().fold(f64::INFINITY, f64::min), 0.0);
            assert_eq!(c.iter().cloned().fold(f64::NEG_INFINITY, f64::max), 1.0);
        }
    }

    #[test]
    fn divergence_is_flagged() {
        let p = SynthesisParams {
            iters: 2000,
            data_lr: 50.0,
            model_lr: 3.0,
        };
        let r = synthesis_probe(&QuadraticToy, &[5.0], &[0.0], &[0.0], &p).unwrap();
        assert!(r.diverged);
        assert!(r.get("dist_raw").unwrap().len() < 2000);
    }
}
