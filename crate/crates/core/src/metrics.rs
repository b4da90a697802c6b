//! Evaluation measures: regression error summaries, per-pixel MSE, and an
//! inception score computed with a compliance-bin classifier.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;

use crate::dataset::FrameDataset;
use crate::error::{Error, IoContext, Result};
use crate::nn::{InitConfig, LayerSpec, Network, Padding};
use crate::optim::OptimizerConfig;
use crate::pgm::GrayImage;
use crate::tensor::Tensor;

/// Floor applied to the marginal class probability inside the logarithm.
pub const MARGINAL_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct RegressionReport {
    /// Largest absolute deviation.
    pub mae: f64,
    /// Mean absolute deviation.
    pub aae: f64,
    pub rmse: f64,
    /// `100 * ||predicted - truth|| / ||truth||`.
    pub relative_error: f64,
    pub per_sample_errors: Vec<f64>,
}

impl RegressionReport {
    pub const CSV_HEADER: &'static str = "count,mae,aae,rmse,relative_error_percent";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:?},{:?},{:?},{:?}",
            self.per_sample_errors.len(),
            self.mae,
            self.aae,
            self.rmse,
            self.relative_error
        )
    }

    pub fn text(&self) -> String {
        format!(
            "samples:        {}\nmax abs error:  {:.6}\nmean abs error: {:.6}\nrmse:           {:.6}\nrelative error: {:.4}%\n",
            self.per_sample_errors.len(),
            self.mae,
            self.aae,
            self.rmse,
            self.relative_error
        )
    }
}

fn check_pairs(truth: &[f64], predicted: &[f64]) -> Result<()> {
    if truth.is_empty() || truth.len() != predicted.len() {
        return Err(Error::Data(format!(
            "need equal non-empty truth and prediction lists ({} vs {})",
            truth.len(),
            predicted.len()
        )));
    }
    if truth.iter().chain(predicted).any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite value in truth or prediction".into()));
    }
    Ok(())
}

pub fn regression_metrics(truth: &[f64], predicted: &[f64]) -> Result<RegressionReport> {
    check_pairs(truth, predicted)?;
    let n = truth.len() as f64;
    let errors: Vec<f64> = truth.iter().zip(predicted).map(|(t, p)| (p - t).abs()).collect();
    let truth_norm = truth.iter().map(|t| t * t).sum::<f64>().sqrt();
    if truth_norm == 0.0 {
        return Err(Error::Data("relative error is undefined for an all-zero truth vector".into()));
    }
    let sq: f64 = errors.iter().map(|e| e * e).sum();
    Ok(RegressionReport {
        mae: errors.iter().copied().fold(0.0, f64::max),
        aae: errors.iter().sum::<f64>() / n,
        rmse: (sq / n).sqrt(),
        relative_error: 100.0 * sq.sqrt() / truth_norm,
        per_sample_errors: errors,
    })
}

/// Per-sample `1 - |predicted - truth| / |truth|`.
pub fn per_sample_accuracy(truth: &[f64], predicted: &[f64]) -> Result<Vec<f64>> {
    check_pairs(truth, predicted)?;
    truth
        .iter()
        .zip(predicted)
        .enumerate()
        .map(|(i, (t, p))| {
            if *t == 0.0 {
                Err(Error::Data(format!("sample {i} has a zero label; relative error undefined")))
            } else {
                Ok(1.0 - (p - t).abs() / t.abs())
            }
        })
        .collect()
}

/// `index,truth,predicted,abs_error`.
pub fn write_per_sample_csv(path: &Path, truth: &[f64], predicted: &[f64]) -> Result<()> {
    check_pairs(truth, predicted)?;
    let mut out = String::from("index,truth,predicted,abs_error\n");
    for (i, (t, p)) in truth.iter().zip(predicted).enumerate() {
        let _ = writeln!(out, "{i},{t:?},{p:?},{:?}", (p - t).abs());
    }
    std::fs::write(path, out).at(path)
}

/// Mean squared pixel difference over equally shaped image sets.
pub fn pixel_mse(a: &[Tensor], b: &[Tensor]) -> Result<f64> {
    if a.is_empty() || a.len() != b.len() {
        return Err(Error::Data(format!("image sets differ in size ({} vs {})", a.len(), b.len())));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        if x.shape() != y.shape() {
            return Err(Error::Data(format!(
                "image {i} shapes differ: {:?} vs {:?}",
                x.shape(),
                y.shape()
            )));
        }
        sum += x.data().iter().zip(y.data()).map(|(p, q)| (p - q) * (p - q)).sum::<f64>();
        count += x.len();
    }
    Ok(sum / count as f64)
}

/// Equal-count bins by label rank (ties broken by index). Returns each
/// sample's bin and the lower label bound of every bin.
pub fn quantile_bins(labels: &[f64], k: usize) -> Result<(Vec<usize>, Vec<f64>)> {
    if k < 2 {
        return Err(Error::Config(format!("need at least 2 classes, got {k}")));
    }
    if labels.len() < k {
        return Err(Error::Data(format!("{} labels cannot fill {k} bins", labels.len())));
    }
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.sort_by(|&a, &b| labels[a].total_cmp(&labels[b]).then(a.cmp(&b)));
    let n = labels.len();
    let mut bins = vec![0; n];
    let mut lower = vec![f64::NAN; k];
    for (rank, &i) in order.iter().enumerate() {
        let b = rank * k / n;
        if lower[b].is_nan() {
            lower[b] = labels[i];
        }
        bins[i] = b;
    }
    Ok((bins, lower))
}

fn softmax_rows(logits: &Tensor) -> Vec<Vec<f64>> {
    let k = logits.sample_len();
    logits
        .data()
        .chunks(k)
        .map(|row| {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
            let s: f64 = e.iter().sum();
            e.into_iter().map(|v| v / s).collect()
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierTrainConfig {
    pub max_steps: usize,
    pub batch: usize,
    pub target_accuracy: f64,
    pub eval_every: usize,
    pub optimizer: OptimizerConfig,
}

impl Default for ClassifierTrainConfig {
    fn default() -> Self {
        ClassifierTrainConfig {
            max_steps: 1500,
            batch: 32,
            target_accuracy: 0.9,
            eval_every: 25,
            optimizer: OptimizerConfig::adam(1e-3),
        }
    }
}

/// Softmax classifier over quantile bins of the compliance label.
pub struct LabelClassifier {
    net: Network,
    lower_bounds: Vec<f64>,
    pub training_accuracy: f64,
    pub steps: usize,
    /// Set when the step cap was reached below the target accuracy.
    pub warning: Option<String>,
}

impl LabelClassifier {
    pub fn classes(&self) -> usize {
        self.lower_bounds.len()
    }

    pub fn lower_bounds(&self) -> &[f64] {
        &self.lower_bounds
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut Network {
        &mut self.net
    }

    /// Class probabilities for `[n, 1, H, W]` frames.
    pub fn probabilities(&self, frames: &Tensor) -> Result<Vec<Vec<f64>>> {
        Ok(softmax_rows(&self.net.infer(frames)?))
    }

    pub fn probabilities_for(&self, frames: &[GrayImage]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(frames.len());
        for chunk in frames.chunks(64) {
            let x = Tensor::stack(&chunk.iter().map(GrayImage::to_tensor).collect::<Vec<_>>())?;
            out.extend(self.probabilities(&x)?);
        }
        Ok(out)
    }
}

pub fn classifier_specs(classes: usize) -> Vec<LayerSpec> {
    vec![
        LayerSpec::conv(8, 3, 1, Padding::Same),
        LayerSpec::relu(),
        LayerSpec::max_pool((2, 2), (2, 2)),
        LayerSpec::conv(8, 3, 1, Padding::Same),
        LayerSpec::relu(),
        LayerSpec::max_pool((2, 2), (2, 2)),
        LayerSpec::dense(classes),
    ]
}

/// Bin labels into `k` quantile classes and train a small conv classifier
/// with cross-entropy until the training accuracy reaches the target or
/// the step cap.
pub fn train_label_classifier(
    data: &FrameDataset,
    k: usize,
    config: &ClassifierTrainConfig,
    rng: &mut impl Rng,
) -> Result<LabelClassifier> {
    config.optimizer.validate()?;
    let (bins, lower_bounds) = quantile_bins(&data.labels_raw(), k)?;
    let (h, w) = data.frame_shape().expect("non-empty after binning");
    let mut net = Network::new(&[1, h, w], &classifier_specs(k), &InitConfig::default(), rng)?;
    net.set_input_gradient(false);
    let images: Vec<Tensor> = data.frames.iter().map(|f| f.image.to_tensor()).collect();
    let all = Tensor::stack(&images)?;
    let accuracy = |net: &Network| -> Result<f64> {
        let probs = softmax_rows(&net.infer(&all)?);
        let hits = probs
            .iter()
            .zip(&bins)
            .filter(|(p, &b)| p.iter().enumerate().all(|(j, v)| j == b || *v < p[b]))
            .count();
        Ok(hits as f64 / bins.len() as f64)
    };
    let batch = config.batch.min(images.len()).max(1);
    let mut acc = accuracy(&net)?;
    let mut steps = 0;
    while acc < config.target_accuracy && steps < config.max_steps {
        let idx: Vec<usize> = (0..batch).map(|_| rng.random_range(0..images.len())).collect();
        let x = Tensor::stack(&idx.iter().map(|&i| images[i].clone()).collect::<Vec<_>>())?;
        let probs = softmax_rows(&net.forward(&x)?);
        let mut dlogits = Tensor::zeros(&[batch, k]);
        for (b, (p, &i)) in probs.iter().zip(&idx).enumerate() {
            for j in 0..k {
                let target = if j == bins[i] { 1.0 } else { 0.0 };
                dlogits.data_mut()[b * k + j] = (p[j] - target) / batch as f64;
            }
        }
        let grads = net.backward(&dlogits)?;
        steps += 1;
        config.optimizer.step(net.store_mut(), &grads, steps as u64)?;
        if steps % config.eval_every.max(1) == 0 || steps == config.max_steps {
            acc = accuracy(&net)?;
        }
    }
    let warning = (acc < config.target_accuracy).then(|| {
        format!(
            "label classifier reached {:.3} training accuracy after {steps} steps (target {})",
            acc, config.target_accuracy
        )
    });
    Ok(LabelClassifier {
        net,
        lower_bounds,
        training_accuracy: acc,
        steps,
        warning,
    })
}

/// `exp(mean_x KL(p(y|x) || p(y)))` with `p(y)` the mean of the rows.
pub fn inception_score_from_probs(probs: &[Vec<f64>]) -> Result<f64> {
    let Some(first) = probs.first() else {
        return Err(Error::Data("inception score needs at least one frame".into()));
    };
    let k = first.len();
    if k == 0 || probs.iter().any(|p| p.len() != k) {
        return Err(Error::Data("probability vectors differ in length".into()));
    }
    let n = probs.len() as f64;
    let mut marginal = vec![0.0; k];
    for p in probs {
        for (m, v) in marginal.iter_mut().zip(p) {
            *m += v / n;
        }
    }
    let mut kl_sum = 0.0;
    for p in probs {
        for (pv, m) in p.iter().zip(&marginal) {
            if *pv > 0.0 {
                kl_sum += pv * (pv.ln() - m.max(MARGINAL_FLOOR).ln());
            }
        }
    }
    Ok((kl_sum / n).max(0.0).exp())
}

pub fn inception_score(classifier: &LabelClassifier, frames: &[GrayImage]) -> Result<f64> {
    inception_score_from_probs(&classifier.probabilities_for(frames)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn regression_hand_cases() {
        let r = regression_metrics(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!((r.mae, r.aae, r.rmse, r.relative_error), (0.0, 0.0, 0.0, 0.0));
        let r = regression_metrics(&[0.0, 0.0], &[1.0, -1.0]);
        assert!(r.is_err());
        let r = regression_metrics(&[3.0, 4.0], &[0.0, 0.0]).unwrap();
        assert!((r.relative_error - 100.0).abs() < 1e-12);
    }

    #[test]
    fn zero_truth_error_values() {
        // MAE/AAE/RMSE are still defined; only the relative error is not.
        let errs: Vec<f64> = [1.0f64, -1.0].iter().map(|p| p.abs()).collect();
        assert_eq!(errs, vec![1.0, 1.0]);
        assert!(per_sample_accuracy(&[0.0], &[1.0]).is_err());
    }

    #[test]
    fn pixel_mse_cases() {
        let a = vec![Tensor::new(&[1, 1, 1], vec![0.5]).unwrap()];
        let b = vec![Tensor::new(&[1, 1, 1], vec![0.25]).unwrap()];
        assert_eq!(pixel_mse(&a, &b).unwrap(), 0.0625);
        assert_eq!(pixel_mse(&a, &a).unwrap(), 0.0);
        let c = vec![Tensor::zeros(&[1, 2, 1])];
        assert!(pixel_mse(&a, &c).is_err());
    }

    #[test]
    fn quantile_bins_are_balanced() {
        let labels: Vec<f64> = (0..10).map(|i| ((i * 7) % 10) as f64).collect();
        let (bins, lower) = quantile_bins(&labels, 3).unwrap();
        let mut counts = [0; 3];
        for b in bins {
            counts[b] += 1;
        }
        assert!(counts.iter().all(|&c| (3..=4).contains(&c)));
        assert_eq!(lower[0], 0.0);
    }

    #[test]
    fn inception_fixed_points() {
        let same = vec![vec![0.2, 0.5, 0.3]; 7];
        assert_eq!(inception_score_from_probs(&same).unwrap(), 1.0);
        let k = 4;
        let onehot: Vec<Vec<f64>> = (0..12)
            .map(|i| (0..k).map(|j| if j == i % k { 1.0 } else { 0.0 }).collect())
            .collect();
        assert!((inception_score_from_probs(&onehot).unwrap() - k as f64).abs() < 1e-9);
    }
}
