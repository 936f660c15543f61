use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    embed_triple, fuse_traced, AlignmentError, EmbeddingProvider, FusionDims, FusionParams,
    ProviderError, TripleRecord,
};
use crate::linalg::{self, check_len};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AlignmentTrace {
    /// Alignment loss before training and after each epoch.
    pub losses: Vec<f64>,
}

#[derive(Debug, thiserror::Error)]
pub enum FusionTrainError {
    #[error("alignment training needs at least 2 samples, got {0}")]
    DatasetTooSmall(usize),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Alignment(#[from] AlignmentError),
    #[error("alignment loss diverged at epoch {epoch}")]
    Divergence {
        epoch: usize,
        last_finite: Box<FusionParams>,
        trace: AlignmentTrace,
    },
}

/// Alignment loss through the fusion layer, with its analytic
/// gradient with respect to every fusion parameter. `batch` holds raw
/// provider vectors paired with metadata embeddings.
pub fn alignment_objective(
    batch: &[(Vec<f64>, Vec<f64>)],
    params: &FusionParams,
) -> Result<(f64, FusionParams), AlignmentError> {
    if batch.is_empty() {
        return Err(AlignmentError::EmptyBatch);
    }
    let d = params.dims();
    let mut grad = FusionParams::zeros(d);
    let mut loss = 0.0;
    for (g, m) in batch {
        check_len(d.d_g, g.len())?;
        check_len(d.d_m, m.len())?;
        let tr = fuse_traced(g, m, params);
        let r = linalg::sub(&params.phi.matvec(&tr.output), &params.psi.matvec(m));
        loss += linalg::dot(&r, &r);
        let dr: Vec<f64> = r.iter().map(|x| 2.0 * x).collect();
        grad.phi.add_outer(1.0, &dr, &tr.output);
        grad.psi.add_outer(-1.0, &dr, m);
        let dv = params.phi.t_matvec(&dr);
        for k in 0..d.d_s {
            grad.gain[k] += dv[k] * tr.normalized[k];
            grad.bias[k] += dv[k];
        }
        let dxhat: Vec<f64> = dv.iter().zip(&params.gain).map(|(a, b)| a * b).collect();
        let n = d.d_s as f64;
        let mean_d = dxhat.iter().sum::<f64>() / n;
        let mean_dx = if tr.floored {
            0.0
        } else {
            dxhat.iter().zip(&tr.normalized).map(|(a, b)| a * b).sum::<f64>() / n
        };
        let dpre: Vec<f64> = dxhat
            .iter()
            .zip(&tr.normalized)
            .map(|(dx, xh)| tr.inv_std * (dx - mean_d - xh * mean_dx))
            .collect();
        grad.w_g.add_outer(1.0, &dpre, g);
        grad.w_m.add_outer(1.0, &dpre, m);
    }
    Ok((loss, grad))
}

/// Full-batch gradient descent on the mean alignment loss starting from
/// `params`. Returns the lowest-loss parameters seen, so the final loss is
/// never above the initial one.
pub fn fit_alignment(
    params: FusionParams,
    samples: &[(Vec<f64>, Vec<f64>)],
    lr: f64,
    epochs: usize,
) -> Result<(FusionParams, AlignmentTrace), FusionTrainError> {
    if samples.len() < 2 {
        return Err(FusionTrainError::DatasetTooSmall(samples.len()));
    }
    let scale = lr / samples.len() as f64;
    let mut current = params;
    let (mut loss, mut grad) = alignment_objective(samples, &current)?;
    let mut trace = AlignmentTrace { losses: vec![loss] };
    let mut best = (loss, current.clone());
    for epoch in 1..=epochs {
        if lr == 0.0 {
            trace.losses.push(loss);
            continue;
        }
        let prev = current.clone();
        current.axpy(-scale, &grad);
        let (l, gr) = alignment_objective(samples, &current)?;
        if !l.is_finite() || !current.is_finite() {
            return Err(FusionTrainError::Divergence {
                epoch,
                last_finite: Box::new(prev),
                trace,
            });
        }
        loss = l;
        grad = gr;
        trace.losses.push(loss);
        if loss < best.0 {
            best = (loss, current.clone());
        }
    }
    Ok((best.1, trace))
}

/// Embeds every triple once with `provider`, initializes fusion parameters
/// from `seed` and trains them against the alignment loss.
pub fn train_alignment(
    dataset: &[(TripleRecord, Vec<f64>)],
    provider: &mut dyn EmbeddingProvider,
    dims: FusionDims,
    lr: f64,
    epochs: usize,
    seed: u64,
) -> Result<(FusionParams, AlignmentTrace), FusionTrainError> {
    if dataset.len() < 2 {
        return Err(FusionTrainError::DatasetTooSmall(dataset.len()));
    }
    let dims = FusionDims {
        d_g: provider.dim(),
        ..dims
    };
    let samples = dataset
        .iter()
        .map(|(t, m)| embed_triple(provider, t).map(|r| (r.vector, m.clone())))
        .collect::<Result<Vec<_>, _>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = FusionParams::init(dims, &mut rng);
    fit_alignment(params, &samples, lr, epochs)
}

#[cfg(test)]
mod tests {
    use rand::Rng;

    use super::*;
    use crate::fusion::StubProvider;
    use crate::linalg::Matrix;

    fn toy(seed: u64, n: usize) -> (FusionParams, Vec<(Vec<f64>, Vec<f64>)>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = FusionDims { d_g: 4, d_m: 3, d_s: 6, d_a: 5 };
        let p = FusionParams::init(dims, &mut rng);
        let batch = (0..n)
            .map(|_| {
                let g = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
                let m = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
                (g, m)
            })
            .collect();
        (p, batch)
    }

    #[test]
    fn gradient_matches_central_differences() {
        for seed in 0..5 {
            let (p, batch) = toy(10 + seed, 4);
            let (_, g) = alignment_objective(&batch, &p).unwrap();
            let analytic = g.flatten();
            for k in 0..analytic.len() {
                let h = 1e-5;
                let mut plus = p.clone();
                *plus.flat_mut()[k] += h;
                let mut minus = p.clone();
                *minus.flat_mut()[k] -= h;
                let fd = (alignment_objective(&batch, &plus).unwrap().0
                    - alignment_objective(&batch, &minus).unwrap().0)
                    / (2.0 * h);
                let err = (fd - analytic[k]).abs() / fd.abs().max(analytic[k].abs()).max(1e-6);
                assert!(err < 1e-4, "param {k}: fd {fd} analytic {}", analytic[k]);
            }
        }
    }

    #[test]
    fn zero_learning_rate_keeps_params() {
        let (p, batch) = toy(1, 6);
        let (out, trace) = fit_alignment(p.clone(), &batch, 0.0, 5).unwrap();
        assert_eq!(out, p);
        assert_eq!(trace.losses.len(), 6);
    }

    #[test]
    fn loss_decreases_monotonically_on_convex_subcase() {
        // Only psi moves when phi·v is fixed: the problem is a least-squares
        // fit of psi, convex, so small steps decrease the loss every epoch.
        let (mut p, batch) = toy(2, 8);
        p.w_g = Matrix::zeros(6, 4);
        let (mut current, mut last) = (p.clone(), f64::INFINITY);
        for _ in 0..50 {
            let (l, g) = alignment_objective(&batch, &current).unwrap();
            assert!(l <= last + 1e-12, "{l} > {last}");
            last = l;
            current.psi.axpy(-0.01, &g.psi);
        }
    }

    #[test]
    fn training_never_ends_above_start() {
        let (p, batch) = toy(3, 10);
        let (start, _) = alignment_objective(&batch, &p).unwrap();
        let (out, trace) = fit_alignment(p, &batch, 0.05, 40).unwrap();
        let (end, _) = alignment_objective(&batch, &out).unwrap();
        assert!(end <= start);
        assert_eq!(trace.losses[0], start);
    }

    #[test]
    fn huge_learning_rate_signals_divergence() {
        let (p, batch) = toy(4, 10);
        match fit_alignment(p, &batch, 1e6, 200) {
            Err(FusionTrainError::Divergence { last_finite, .. }) => assert!(last_finite.is_finite()),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn train_alignment_is_seed_deterministic() {
        let data: Vec<(TripleRecord, Vec<f64>)> = (0..5)
            .map(|i| (TripleRecord::new(&format!("e{i}"), "is-a", "pump"), vec![i as f64 * 0.1; 3]))
            .collect();
        let dims = FusionDims { d_g: 8, d_m: 3, d_s: 4, d_a: 4 };
        let run = || {
            let mut prov = StubProvider::new(9, 8);
            train_alignment(&data, &mut prov, dims, 0.01, 10, 42).unwrap()
        };
        assert_eq!(run().0, run().0);
        let mut prov = StubProvider::new(9, 8);
        assert!(matches!(
            train_alignment(&data[..1], &mut prov, dims, 0.01, 10, 42),
            Err(FusionTrainError::DatasetTooSmall(1))
        ));
    }
}
