//! Encoder pretraining: the alignment objective applied per node between
//! the joint embedding and the node's metadata, `mean_i ‖φ H_i − ψ m_i‖²`,
//! with a hand-written backward pass through the gated and attention
//! layers.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{aggregation_weights, gate, Aggregation, GnnError, GnnParams, Topology};
use crate::linalg::{self, Matrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainHead {
    /// d_a × 2·d_r
    pub phi: Matrix,
    /// d_a × d_m
    pub psi: Matrix,
}

impl PretrainHead {
    pub fn init<R: Rng + ?Sized>(d_a: usize, d_r: usize, d_m: usize, rng: &mut R) -> Self {
        Self {
            phi: Matrix::init_uniform(d_a, 2 * d_r, rng),
            psi: Matrix::init_uniform(d_a, d_m, rng),
        }
    }

    fn zeros_like(&self) -> Self {
        Self {
            phi: Matrix::zeros(self.phi.rows(), self.phi.cols()),
            psi: Matrix::zeros(self.psi.rows(), self.psi.cols()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PretrainTrace {
    pub losses: Vec<f64>,
}

struct LayerTrace {
    input: Vec<Vec<f64>>,
    z: Vec<Vec<f64>>,
    weights: Vec<Vec<f64>>,
    concat: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

fn forward_layer(
    topo: &Topology,
    h: Vec<Vec<f64>>,
    layer: &super::RuleLayer,
    aggregation: Aggregation,
) -> (Vec<Vec<f64>>, LayerTrace) {
    let z: Vec<Vec<f64>> = h.iter().map(|x| layer.w.matvec(x)).collect();
    let weights = aggregation_weights(topo, &h, layer, aggregation);
    let mut concat = Vec::with_capacity(h.len());
    let mut pre = Vec::with_capacity(h.len());
    let mut out = Vec::with_capacity(h.len());
    for (i, nbrs) in topo.rule.iter().enumerate() {
        let mut agg = vec![0.0; h[i].len()];
        for (&j, &w) in nbrs.iter().zip(&weights[i]) {
            linalg::axpy(&mut agg, w, &h[j]);
        }
        let x = linalg::concat(&h[i], &agg);
        let p = layer.w_rule.matvec(&x);
        out.push(p.iter().map(|v| v.max(0.0)).collect());
        concat.push(x);
        pre.push(p);
    }
    (
        out,
        LayerTrace {
            input: h,
            z,
            weights,
            concat,
            pre,
        },
    )
}

/// Backpropagates `d_out` through one rule layer, accumulating parameter
/// gradients into `grad` and returning the gradient on the layer input.
fn backward_layer(
    topo: &Topology,
    tr: &LayerTrace,
    layer: &super::RuleLayer,
    grad: &mut super::RuleLayer,
    aggregation: Aggregation,
    d_out: &[Vec<f64>],
) -> Vec<Vec<f64>> {
    let n = tr.input.len();
    let d_in = layer.d_in();
    let d_h = layer.w.rows();
    let mut dh = vec![vec![0.0; d_in]; n];
    let mut dz = vec![vec![0.0; d_h]; n];
    let mut ds = vec![0.0; n];
    let mut dt = vec![0.0; n];
    for (i, nbrs) in topo.rule.iter().enumerate() {
        let dp: Vec<f64> = d_out[i]
            .iter()
            .zip(&tr.pre[i])
            .map(|(d, p)| if *p > 0.0 { *d } else { 0.0 })
            .collect();
        grad.w_rule.add_outer(1.0, &dp, &tr.concat[i]);
        let dx = layer.w_rule.t_matvec(&dp);
        linalg::axpy(&mut dh[i], 1.0, &dx[..d_in]);
        let dc = &dx[d_in..];
        let w = &tr.weights[i];
        let mut dw = Vec::with_capacity(nbrs.len());
        for (&j, &a) in nbrs.iter().zip(w) {
            linalg::axpy(&mut dh[j], a, dc);
            dw.push(linalg::dot(dc, &tr.input[j]));
        }
        if aggregation == Aggregation::Attn {
            let inner: f64 = w.iter().zip(&dw).map(|(a, d)| a * d).sum();
            for (k, &j) in nbrs.iter().enumerate() {
                let de = w[k] * (dw[k] - inner);
                ds[i] += de;
                dt[j] += de;
            }
        }
    }
    if aggregation == Aggregation::Attn {
        let (a1, a2) = layer.a.split_at(d_h);
        for i in 0..n {
            for k in 0..d_h {
                grad.a[k] += ds[i] * tr.z[i][k];
                grad.a[d_h + k] += dt[i] * tr.z[i][k];
                dz[i][k] = ds[i] * a1[k] + dt[i] * a2[k];
            }
            grad.w.add_outer(1.0, &dz[i], &tr.input[i]);
            linalg::axpy(&mut dh[i], 1.0, &layer.w.t_matvec(&dz[i]));
        }
    }
    dh
}

/// Loss and gradients of the per-node alignment objective.
pub fn pretrain_objective(
    topo: &Topology,
    h0: &[Vec<f64>],
    metadata: &[Vec<f64>],
    params: &GnnParams,
    head: &PretrainHead,
) -> Result<(f64, GnnParams, PretrainHead), GnnError> {
    if topo.is_empty() {
        return Err(GnnError::EmptyGraph);
    }
    params.validate()?;
    let n = topo.len();
    let d_r = params.d_r();
    if head.phi.cols() != 2 * d_r || metadata.len() != n || metadata.iter().any(|m| m.len() != head.psi.cols()) {
        return Err(GnnError::Shape("pretraining head does not match encoder".into()));
    }
    let mut traces = Vec::with_capacity(params.layers.len());
    let mut h = h0.to_vec();
    for layer in &params.layers {
        let (out, tr) = forward_layer(topo, h, layer, params.aggregation);
        traces.push(tr);
        h = out;
    }
    let h_rule = h;
    let h_dyn = super::dynamic_layer_topo(topo, &h_rule, params);

    let mut grad = params.zeros_like();
    let mut ghead = head.zeros_like();
    let scale = 2.0 / n as f64;
    let mut loss = 0.0;
    let mut dh_rule = vec![vec![0.0; d_r]; n];
    let mut dh_dyn = vec![vec![0.0; d_r]; n];
    for i in 0..n {
        let hj = linalg::concat(&h_rule[i], &h_dyn[i]);
        let r = linalg::sub(&head.phi.matvec(&hj), &head.psi.matvec(&metadata[i]));
        loss += linalg::dot(&r, &r) / n as f64;
        ghead.phi.add_outer(scale, &r, &hj);
        ghead.psi.add_outer(-scale, &r, &metadata[i]);
        let dj = head.phi.t_matvec(&r);
        linalg::axpy(&mut dh_rule[i], scale, &dj[..d_r]);
        linalg::axpy(&mut dh_dyn[i], scale, &dj[d_r..]);
    }

    // gated semantic layer
    for (i, nbrs) in topo.dynamic.iter().enumerate() {
        let dd = dh_dyn[i].clone();
        linalg::axpy(&mut dh_rule[i], 1.0, &dd);
        if nbrs.is_empty() {
            continue;
        }
        let mean_sim = nbrs.iter().map(|&(_, s)| s).sum::<f64>() / nbrs.len() as f64;
        let mut msg = vec![0.0; d_r];
        for &(q, s) in nbrs {
            linalg::axpy(&mut msg, s, &h_rule[q]);
        }
        let g = gate(&params.u, &h_rule[i], mean_sim);
        for &(q, s) in nbrs {
            linalg::axpy(&mut dh_rule[q], params.beta * g * s, &dd);
        }
        let dlogit = params.beta * linalg::dot(&dd, &msg) * g * (1.0 - g);
        linalg::axpy(&mut grad.u[..d_r], dlogit, &h_rule[i]);
        grad.u[d_r] += dlogit * mean_sim;
        linalg::axpy(&mut dh_rule[i], dlogit, &params.u[..d_r]);
    }

    let mut d = dh_rule;
    for (k, tr) in traces.iter().enumerate().rev() {
        d = backward_layer(topo, tr, &params.layers[k], &mut grad.layers[k], params.aggregation, &d);
    }
    Ok((loss, grad, ghead))
}

/// Plain gradient descent on the pretraining objective; returns the best
/// parameters seen along with the loss trace.
pub fn pretrain(
    topo: &Topology,
    h0: &[Vec<f64>],
    metadata: &[Vec<f64>],
    mut params: GnnParams,
    mut head: PretrainHead,
    lr: f64,
    epochs: usize,
) -> Result<(GnnParams, PretrainHead, PretrainTrace), GnnError> {
    let mut trace = PretrainTrace::default();
    let mut best: Option<(f64, GnnParams, PretrainHead)> = None;
    for _ in 0..=epochs {
        let (loss, g, gh) = pretrain_objective(topo, h0, metadata, &params, &head)?;
        if !loss.is_finite() {
            break;
        }
        trace.losses.push(loss);
        if best.as_ref().is_none_or(|b| loss < b.0) {
            best = Some((loss, params.clone(), head.clone()));
        }
        params.axpy(-lr, &g);
        head.phi.axpy(-lr, &gh.phi);
        head.psi.axpy(-lr, &gh.psi);
        if !params.is_finite() {
            break;
        }
    }
    let (_, p, h) = best.ok_or_else(|| GnnError::InvalidParams("pretraining diverged at start".into()))?;
    Ok((p, h, trace))
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::gnn::GnnDims;

    fn instance(agg: Aggregation, seed: u64) -> (Topology, Vec<Vec<f64>>, Vec<Vec<f64>>, GnnParams, PretrainHead) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 6;
        let rule = vec![vec![0, 1, 2], vec![0, 1], vec![0, 2, 3], vec![2, 3], vec![4], vec![5]];
        let dynamic = vec![
            vec![(4, 0.8)],
            vec![],
            vec![(5, 0.75)],
            vec![],
            vec![(0, 0.8), (5, 0.9)],
            vec![(2, 0.75), (4, 0.9)],
        ];
        let topo = Topology { rule, dynamic };
        let d_m = 2;
        let dims = GnnDims { d_in: 3, d_h: 2, d_r: 3, layers: 2 };
        let mut p = GnnParams::init(dims, agg, &mut rng);
        for l in &mut p.layers {
            l.a.iter_mut().for_each(|x| *x = rng.random_range(-1.0..1.0));
        }
        let h0 = (0..n).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let m = (0..n).map(|_| (0..d_m).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let head = PretrainHead::init(2, 3, d_m, &mut rng);
        (topo, h0, m, p, head)
    }

    #[test]
    fn gradient_matches_central_differences() {
        for agg in [Aggregation::Attn, Aggregation::Mean, Aggregation::Sum] {
            for seed in 0..4 {
                let (topo, h0, m, p, head) = instance(agg, seed);
                let (_, g, _) = pretrain_objective(&topo, &h0, &m, &p, &head).unwrap();
                let analytic = g.flatten();
                let h = 1e-5;
                let n_params = analytic.len();
                for k in 0..n_params {
                    let mut plus = p.clone();
                    *plus.flat_mut()[k] += h;
                    let mut minus = p.clone();
                    *minus.flat_mut()[k] -= h;
                    let lp = pretrain_objective(&topo, &h0, &m, &plus, &head).unwrap().0;
                    let lm = pretrain_objective(&topo, &h0, &m, &minus, &head).unwrap().0;
                    let fd = (lp - lm) / (2.0 * h);
                    let err = (fd - analytic[k]).abs() / fd.abs().max(analytic[k].abs()).max(1e-6);
                    assert!(err < 1e-4, "{agg:?} seed {seed} param {k}: fd {fd} vs {}", analytic[k]);
                }
            }
        }
    }

    #[test]
    fn pretraining_does_not_increase_loss() {
        let (topo, h0, m, p, head) = instance(Aggregation::Attn, 9);
        let (p2, head2, trace) = pretrain(&topo, &h0, &m, p, head, 0.05, 30).unwrap();
        let end = pretrain_objective(&topo, &h0, &m, &p2, &head2).unwrap().0;
        assert!(end <= trace.losses[0]);
    }
}
