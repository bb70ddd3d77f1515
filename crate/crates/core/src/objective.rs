//! Composite objective: per-pair binary cross-entropy over the three classes
//! plus a per-group similarity term over inclusion and exclusion criteria.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const PROB_CLAMP: f64 = 1e-7;
const SIM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ContrastiveForm {
    /// prod(1 - s_incl) * prod(max(0, s_excl - eps))
    #[default]
    Product,
    /// sum(1 - s_incl) + sum(max(0, s_excl - eps))
    SumLog,
}

/// Which criteria of a (patient, trial) group enter the similarity term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ContrastiveScope {
    /// Inclusion criteria labeled match and exclusion criteria labeled mismatch.
    #[default]
    GoldConditioned,
    /// Every labeled criterion of the group; unknown pairs never enter.
    Unconditional,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub alpha: f64,
    pub epsilon: f64,
    pub contrastive_form: ContrastiveForm,
    pub contrastive_scope: ContrastiveScope,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            epsilon: 0.01,
            contrastive_form: ContrastiveForm::Product,
            contrastive_scope: ContrastiveScope::GoldConditioned,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), LossError> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(LossError::Config(format!(
                "alpha {} outside [0, 1]",
                self.alpha
            )));
        }
        if !(self.epsilon >= 0.0) {
            return Err(LossError::Config(format!(
                "epsilon {} is negative",
                self.epsilon
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("target {0:?} is not one-hot")]
    NotOneHot([f64; 3]),
    #[error("similarity {0} outside [-1, 1]")]
    SimOutOfRange(f64),
    #[error("loss config: {0}")]
    Config(String),
}

fn check_one_hot(y: [f64; 3]) -> Result<(), LossError> {
    let ones = y.iter().filter(|v| **v == 1.0).count();
    let zeros = y.iter().filter(|v| **v == 0.0).count();
    if ones == 1 && zeros == 2 {
        Ok(())
    } else {
        Err(LossError::NotOneHot(y))
    }
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// `-y.log(p) - (1-y).log(1-p)` summed over the three components.
pub fn classification_loss(y_hat: [f64; 3], y: [f64; 3]) -> Result<f64, LossError> {
    check_one_hot(y)?;
    Ok((0..3)
        .map(|k| {
            let p = clamp_prob(y_hat[k]);
            -y[k] * p.ln() - (1.0 - y[k]) * (1.0 - p).ln()
        })
        .sum())
}

/// d loss / d y_hat. Components pinned by the clamp get zero.
pub fn classification_grad(y_hat: [f64; 3], y: [f64; 3]) -> [f64; 3] {
    let mut g = [0.0; 3];
    for k in 0..3 {
        if y_hat[k] <= PROB_CLAMP || y_hat[k] >= 1.0 - PROB_CLAMP {
            continue;
        }
        g[k] = -y[k] / y_hat[k] + (1.0 - y[k]) / (1.0 - y_hat[k]);
    }
    g
}

fn check_sims(sims: &[f64]) -> Result<(), LossError> {
    match sims.iter().find(|s| !(s.abs() <= 1.0 + SIM_TOLERANCE)) {
        Some(s) => Err(LossError::SimOutOfRange(*s)),
        None => Ok(()),
    }
}

fn factors(incl: &[f64], excl: &[f64], epsilon: f64) -> Vec<f64> {
    incl.iter()
        .map(|s| (1.0 - s).max(0.0))
        .chain(excl.iter().map(|s| (s - epsilon).max(0.0)))
        .collect()
}

pub fn contrastive_loss(
    incl: &[f64],
    excl: &[f64],
    epsilon: f64,
    form: ContrastiveForm,
) -> Result<f64, LossError> {
    check_sims(incl)?;
    check_sims(excl)?;
    let f = factors(incl, excl, epsilon);
    Ok(match form {
        ContrastiveForm::Product => f.iter().product(),
        ContrastiveForm::SumLog => f.iter().sum(),
    })
}

/// Gradients with respect to each inclusion and exclusion similarity.
pub fn contrastive_grad(
    incl: &[f64],
    excl: &[f64],
    epsilon: f64,
    form: ContrastiveForm,
) -> (Vec<f64>, Vec<f64>) {
    let f = factors(incl, excl, epsilon);
    // d factor / d s
    let local: Vec<f64> = incl
        .iter()
        .map(|s| if 1.0 - s > 0.0 { -1.0 } else { 0.0 })
        .chain(
            excl.iter()
                .map(|s| if s - epsilon > 0.0 { 1.0 } else { 0.0 }),
        )
        .collect();
    let n = f.len();
    let others: Vec<f64> = match form {
        ContrastiveForm::SumLog => vec![1.0; n],
        ContrastiveForm::Product => {
            let mut prefix = vec![1.0; n + 1];
            for k in 0..n {
                prefix[k + 1] = prefix[k] * f[k];
            }
            let mut suffix = vec![1.0; n + 1];
            for k in (0..n).rev() {
                suffix[k] = suffix[k + 1] * f[k];
            }
            (0..n).map(|k| prefix[k] * suffix[k + 1]).collect()
        }
    };
    let g: Vec<f64> = (0..n).map(|k| local[k] * others[k]).collect();
    let (gi, ge) = g.split_at(incl.len());
    (gi.to_vec(), ge.to_vec())
}

pub fn total_loss(l_cla: f64, l_con: f64, alpha: f64) -> f64 {
    alpha * l_cla + (1.0 - alpha) * l_con
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn perfect_prediction_is_near_zero() {
        let l = classification_loss([1.0, 0.0, 0.0], [1.0, 0.0, 0.0]).unwrap();
        assert!((0.0..=3.001e-7).contains(&l), "{l}");
    }

    #[test]
    fn uniform_prediction_hand_value() {
        let third = 1.0 / 3.0;
        let l = classification_loss([third; 3], [1.0, 0.0, 0.0]).unwrap();
        let oracle = -(third.ln()) - 2.0 * (2.0f64 / 3.0).ln();
        assert!((l - oracle).abs() < 1e-12);
        assert!((l - 1.9095).abs() < 1e-4);
    }

    #[test]
    fn non_one_hot_rejected() {
        assert!(classification_loss([0.3; 3], [0.5, 0.5, 0.0]).is_err());
        assert!(classification_loss([0.3; 3], [1.0, 1.0, 0.0]).is_err());
    }

    #[test]
    fn contrastive_hand_values() {
        let l = contrastive_loss(&[0.5], &[0.51], 0.01, ContrastiveForm::Product).unwrap();
        assert!((l - 0.25).abs() < 1e-9);
        assert_eq!(
            contrastive_loss(&[1.0, 0.2], &[0.9], 0.01, ContrastiveForm::Product).unwrap(),
            0.0
        );
        assert_eq!(
            contrastive_loss(&[], &[0.0, 0.01, -0.4], 0.01, ContrastiveForm::Product).unwrap(),
            0.0
        );
        assert_eq!(
            contrastive_loss(&[], &[], 0.01, ContrastiveForm::Product).unwrap(),
            1.0
        );
        let s = contrastive_loss(&[0.5, 0.25], &[0.51], 0.01, ContrastiveForm::SumLog).unwrap();
        assert!((s - 1.75).abs() < 1e-12);
        assert!(contrastive_loss(&[1.5], &[], 0.01, ContrastiveForm::Product).is_err());
    }

    #[test]
    fn total_endpoints() {
        assert_eq!(total_loss(2.0, 1.0, 1.0), 2.0);
        assert_eq!(total_loss(2.0, 1.0, 0.0), 1.0);
        assert_eq!(total_loss(2.0, 1.0, 0.5), 1.5);
    }

    #[test]
    fn product_gradient_matches_closed_form() {
        let incl = [0.3, -0.2, 0.6];
        let excl = [0.4, 0.7];
        let eps = 0.01;
        let (gi, ge) = contrastive_grad(&incl, &excl, eps, ContrastiveForm::Product);
        let hinge: f64 = excl.iter().map(|s| s - eps).product();
        for a in 0..3 {
            let others: f64 = (0..3).filter(|&k| k != a).map(|k| 1.0 - incl[k]).product();
            assert!((gi[a] + others * hinge).abs() < 1e-12);
        }
        for b in 0..2 {
            let num = |d: f64| {
                let mut e = excl;
                e[b] += d;
                contrastive_loss(&incl, &e, eps, ContrastiveForm::Product).unwrap()
            };
            let fd = (num(1e-6) - num(-1e-6)) / 2e-6;
            assert!((ge[b] - fd).abs() < 1e-8);
        }
    }

    proptest! {
        #[test]
        fn classification_is_permutation_equivariant(
            raw in prop::collection::vec(0.01f64..1.0, 3),
            class in 0usize..3,
            perm in 0usize..6,
        ) {
            let sum: f64 = raw.iter().sum();
            let p = [raw[0] / sum, raw[1] / sum, raw[2] / sum];
            let mut y = [0.0; 3];
            y[class] = 1.0;
            let orders = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
            let o = orders[perm];
            let pp = [p[o[0]], p[o[1]], p[o[2]]];
            let yy = [y[o[0]], y[o[1]], y[o[2]]];
            let a = classification_loss(p, y).unwrap();
            let b = classification_loss(pp, yy).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn total_is_monotone(l1 in 0.0f64..10.0, l2 in 0.0f64..10.0, d in 0.0f64..5.0, alpha in 0.01f64..0.99) {
            prop_assert!(total_loss(l1 + d, l2, alpha) >= total_loss(l1, l2, alpha));
            prop_assert!(total_loss(l1, l2 + d, alpha) >= total_loss(l1, l2, alpha));
        }

        #[test]
        fn any_satisfied_inclusion_zeroes_product(
            incl in prop::collection::vec(-1.0f64..1.0, 0..4),
            excl in prop::collection::vec(-1.0f64..1.0, 0..4),
        ) {
            let mut incl = incl;
            incl.push(1.0);
            prop_assert_eq!(contrastive_loss(&incl, &excl, 0.01, ContrastiveForm::Product).unwrap(), 0.0);
        }
    }
}
