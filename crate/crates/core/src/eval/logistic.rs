//! L2-regularized logistic regression fit by batch gradient descent.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogisticConfig {
    pub learning_rate: f64,
    pub iterations: usize,
    pub l2: f64,
    /// Standardize columns with training statistics before fitting.
    pub standardize: bool,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.5,
            iterations: 2000,
            l2: 1e-3,
            standardize: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    /// Weights on the (possibly standardized) inputs.
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
    pub config: LogisticConfig,
    /// Set when training saw a single class; the model is then constant.
    pub degenerate: bool,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Mean log-loss plus `l2/2 * |w|^2`, with its gradient in `w` and `b`.
pub fn loss_and_gradient(
    w: &[f64],
    b: f64,
    x: &[Vec<f64>],
    y: &[f64],
    l2: f64,
) -> (f64, Vec<f64>, f64) {
    let n = x.len().max(1) as f64;
    let mut loss = 0.0;
    let mut gw = vec![0.0; w.len()];
    let mut gb = 0.0;
    for (row, &t) in x.iter().zip(y) {
        let z = b + row.iter().zip(w).map(|(a, c)| a * c).sum::<f64>();
        // log(1 + e^z) - t*z, computed stably
        loss += z.max(0.0) + (-z.abs()).exp().ln_1p() - t * z;
        let d = sigmoid(z) - t;
        gb += d;
        for (g, a) in gw.iter_mut().zip(row) {
            *g += d * a;
        }
    }
    loss /= n;
    gb /= n;
    for (g, wi) in gw.iter_mut().zip(w) {
        *g = *g / n + l2 * wi;
    }
    loss += 0.5 * l2 * w.iter().map(|v| v * v).sum::<f64>();
    (loss, gw, gb)
}

fn column_stats(x: &[Vec<f64>], p: usize) -> (Vec<f64>, Vec<f64>) {
    let n = x.len().max(1) as f64;
    let mut means = vec![0.0; p];
    for row in x {
        for (m, v) in means.iter_mut().zip(row) {
            *m += v / n;
        }
    }
    let mut sds = vec![0.0; p];
    for row in x {
        for ((s, v), m) in sds.iter_mut().zip(row).zip(&means) {
            *s += (v - m).powi(2) / n;
        }
    }
    for s in &mut sds {
        *s = s.sqrt();
    }
    (means, sds)
}

impl LogisticModel {
    fn transform(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .enumerate()
            .map(|(j, v)| {
                let sd = self.sds.get(j).copied().unwrap_or(1.0);
                let m = self.means.get(j).copied().unwrap_or(0.0);
                if sd > 0.0 {
                    (v - m) / sd
                } else {
                    0.0
                }
            })
            .collect()
    }

    pub fn probability(&self, row: &[f64]) -> f64 {
        let z = self.transform(row);
        sigmoid(self.intercept + z.iter().zip(&self.weights).map(|(a, b)| a * b).sum::<f64>())
    }

    pub fn predict(&self, row: &[f64]) -> bool {
        self.probability(row) >= 0.5
    }
}

/// Deterministic given the data and config: weights start at zero and every
/// step uses the full batch. A single-class training set yields a constant
/// predictor and a warning.
pub fn fit_logistic(x: &[Vec<f64>], y: &[bool], config: &LogisticConfig) -> LogisticModel {
    let p = x.first().map_or(0, Vec::len);
    let (means, sds) = if config.standardize {
        column_stats(x, p)
    } else {
        (vec![0.0; p], vec![1.0; p])
    };
    let mut model = LogisticModel {
        weights: vec![0.0; p],
        intercept: 0.0,
        means,
        sds,
        config: *config,
        degenerate: false,
    };
    let n_true = y.iter().filter(|&&v| v).count();
    if n_true == 0 || n_true == y.len() {
        log::warn!("logistic fit on a single class; using a constant predictor");
        model.degenerate = true;
        model.intercept = if n_true == 0 { -10.0 } else { 10.0 };
        return model;
    }
    let z: Vec<Vec<f64>> = x.iter().map(|r| model.transform(r)).collect();
    let t: Vec<f64> = y.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect();
    for _ in 0..config.iterations {
        let (_, gw, gb) = loss_and_gradient(&model.weights, model.intercept, &z, &t, config.l2);
        for (w, g) in model.weights.iter_mut().zip(&gw) {
            *w -= config.learning_rate * g;
        }
        model.intercept -= config.learning_rate * gb;
    }
    model
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separable_fixture_fits_exactly() {
        let x: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64, (i % 3) as f64]).collect();
        let y: Vec<bool> = (0..20).map(|i| i >= 10).collect();
        let m = fit_logistic(&x, &y, &LogisticConfig::default());
        assert!(x.iter().zip(&y).all(|(r, &l)| m.predict(r) == l));
        assert!(m.weights.iter().all(|w| w.is_finite()));
    }

    #[test]
    fn constant_column_gets_no_weight() {
        let x: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, 1.0]).collect();
        let y: Vec<bool> = (0..10).map(|i| i >= 5).collect();
        let m = fit_logistic(&x, &y, &LogisticConfig::default());
        assert!(m.weights[1].abs() < 1e-12);
        assert!(m.weights[0].abs() > 0.5);
    }

    #[test]
    fn single_class_is_constant() {
        let x = vec![vec![1.0], vec![2.0]];
        let m = fit_logistic(&x, &[true, true], &LogisticConfig::default());
        assert!(m.degenerate);
        assert!(m.predict(&[0.0]) && m.predict(&[100.0]));
    }
}
