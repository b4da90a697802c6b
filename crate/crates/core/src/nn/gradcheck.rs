//! Central finite-difference gradient checks.

use rand::Rng;

use super::network::Network;
use crate::error::Result;
use crate::tensor::Tensor;

/// Denominator floor for relative errors, so that gradients that are
/// analytically zero compare against finite-difference noise sensibly.
pub const RELATIVE_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

/// Outcome of a gradient check.
#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub max_param_error: f64,
    pub max_input_error: f64,
    /// Number of scalar entries compared.
    pub compared: usize,
}

impl GradCheckReport {
    pub fn max_error(&self) -> f64 {
        self.max_param_error.max(self.max_input_error)
    }

    pub fn merge(&mut self, other: &GradCheckReport) {
        self.max_param_error = self.max_param_error.max(other.max_param_error);
        self.max_input_error = self.max_input_error.max(other.max_input_error);
        self.compared += other.compared;
    }
}

/// Compare `backward` against central differences of the scalar loss
/// `sum(weights * network(input))`, with random fixed `weights`.
pub fn check_network(net: &mut Network, input: &Tensor, h: f64, rng: &mut impl Rng) -> Result<GradCheckReport> {
    net.set_input_gradient(true);
    let out = net.forward(input)?;
    let weights = Tensor::from_fn(out.shape(), |_| rng.random_range(-1.0..1.0));
    let grads = net.backward(&weights)?;
    let loss = |net: &mut Network, x: &Tensor| -> Result<f64> {
        let y = net.forward(x)?;
        Ok(y.data().iter().zip(weights.data()).map(|(a, b)| a * b).sum())
    };
    let mut report = GradCheckReport::default();
    for p in 0..net.store().len() {
        for i in 0..net.store().get(p).value.len() {
            let orig = net.store().get(p).value.data()[i];
            net.store_mut().get_mut(p).value.data_mut()[i] = orig + h;
            let plus = loss(net, input)?;
            net.store_mut().get_mut(p).value.data_mut()[i] = orig - h;
            let minus = loss(net, input)?;
            net.store_mut().get_mut(p).value.data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let err = relative_error(grads.params[p].data()[i], numeric);
            report.max_param_error = report.max_param_error.max(err);
            report.compared += 1;
        }
    }
    let analytic_input = grads.input.expect("input gradient enabled");
    let mut x = input.clone();
    for i in 0..x.len() {
        let orig = x.data()[i];
        x.data_mut()[i] = orig + h;
        let plus = loss(net, &x)?;
        x.data_mut()[i] = orig - h;
        let minus = loss(net, &x)?;
        x.data_mut()[i] = orig;
        let numeric = (plus - minus) / (2.0 * h);
        let err = relative_error(analytic_input.data()[i], numeric);
        report.max_input_error = report.max_input_error.max(err);
        report.compared += 1;
    }
    Ok(report)
}
