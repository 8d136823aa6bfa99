//! Batched Deep-Set encoding and Q evaluation with exact gradients.

use ndarray::{s, Array2, ArrayView2};

use super::Pooling;
use crate::error::Result;
use crate::neural::{ForwardCache, Mlp, QNetwork, EMBED_DIM};
use crate::observe::Observation;

/// Rows each observation contributes to the encoder input, after its downstream rows.
const FIXED_ROWS: usize = 4;
pub(crate) const STATE_DIM: usize = 5 * EMBED_DIM;

struct Segment {
    start: usize,
    weights: Vec<f64>,
}

/// One forward pass of encoder and Q head over a batch of observations, kept for backprop.
pub struct BatchForward {
    segments: Vec<Segment>,
    phi_cache: ForwardCache,
    rho_cache: ForwardCache,
    /// Concatenated state encodings, one row per observation.
    pub states: Array2<f64>,
    /// Q values, one row per observation.
    pub q: Array2<f64>,
}

fn stack_rows(batch: &[&Observation], pooling: Pooling) -> (Array2<f64>, Vec<Segment>) {
    let total: usize = batch.iter().map(|o| o.downstream.len() + FIXED_ROWS).sum();
    let mut rows = Array2::<f64>::zeros((total, 3));
    let mut segments = Vec::with_capacity(batch.len());
    let mut r = 0;
    for obs in batch {
        let start = r;
        let dx: Vec<f64> = obs.downstream.iter().map(|row| row[0]).collect();
        for row in obs.downstream.iter().chain(&obs.local).chain(std::iter::once(&obs.cav)) {
            rows.row_mut(r).assign(&ndarray::aview1(row));
            r += 1;
        }
        segments.push(Segment {
            start,
            weights: pooling.weights(&dx),
        });
    }
    (rows, segments)
}

/// Pools each observation's embedding rows into a `batch × 160` state matrix.
fn pool(embeddings: ArrayView2<f64>, segments: &[Segment]) -> Array2<f64> {
    let mut states = Array2::<f64>::zeros((segments.len(), STATE_DIM));
    for (b, seg) in segments.iter().enumerate() {
        let n = seg.weights.len();
        let mut state = states.row_mut(b);
        {
            let mut fd = state.slice_mut(s![0..EMBED_DIM]);
            for (i, &w) in seg.weights.iter().enumerate() {
                fd.scaled_add(w, &embeddings.row(seg.start + i));
            }
        }
        for k in 0..FIXED_ROWS {
            state
                .slice_mut(s![(k + 1) * EMBED_DIM..(k + 2) * EMBED_DIM])
                .assign(&embeddings.row(seg.start + n + k));
        }
    }
    states
}

/// Inverse of [`pool`]: spreads state gradients back onto embedding rows.
fn unpool(state_grad: ArrayView2<f64>, segments: &[Segment], rows: usize) -> Array2<f64> {
    let mut grad = Array2::<f64>::zeros((rows, EMBED_DIM));
    for (b, seg) in segments.iter().enumerate() {
        let n = seg.weights.len();
        let g = state_grad.row(b);
        let fd = g.slice(s![0..EMBED_DIM]);
        for (i, &w) in seg.weights.iter().enumerate() {
            grad.row_mut(seg.start + i).scaled_add(w, &fd);
        }
        for k in 0..FIXED_ROWS {
            grad.row_mut(seg.start + n + k)
                .assign(&g.slice(s![(k + 1) * EMBED_DIM..(k + 2) * EMBED_DIM]));
        }
    }
    grad
}

impl BatchForward {
    pub fn run(net: &QNetwork, batch: &[&Observation], pooling: Pooling) -> Result<Self> {
        let (rows, segments) = stack_rows(batch, pooling);
        let (embeddings, phi_cache) = net.phi.forward_batch(rows.view())?;
        let states = pool(embeddings.view(), &segments);
        let (q, rho_cache) = net.rho.forward_batch(states.view())?;
        Ok(Self {
            segments,
            phi_cache,
            rho_cache,
            states,
            q,
        })
    }

    /// Parameter gradients of φ and ρ for the given gradient w.r.t. the Q outputs.
    ///
    /// Pooling weights are constants; gradients reach φ through every pooled embedding.
    pub fn backward(&self, net: &QNetwork, q_grad: ArrayView2<f64>) -> Result<QNetwork> {
        let (rho, state_grad) = net.rho.backward(&self.rho_cache, q_grad)?;
        let embed_grad = unpool(state_grad.view(), &self.segments, self.phi_cache.batch_size());
        let (phi, _) = net.phi.backward(&self.phi_cache, embed_grad.view())?;
        Ok(QNetwork { phi, rho })
    }
}

/// Q values for a batch of observations without keeping gradients.
pub fn q_values_batch(net: &QNetwork, batch: &[&Observation], pooling: Pooling) -> Result<Array2<f64>> {
    let (rows, segments) = stack_rows(batch, pooling);
    let embeddings = net.phi.predict_batch(rows.view())?;
    let states = pool(embeddings.view(), &segments);
    net.rho.predict_batch(states.view())
}

/// Pooled downstream embedding `F_d = Σ wᵢ φ(rowᵢ)`; zero when there are no rows.
pub fn embed_downstream(downstream: &[[f64; 3]], phi: &Mlp, pooling: Pooling) -> Result<Vec<f64>> {
    let mut fd = vec![0.0; phi.output_dim()];
    if downstream.is_empty() {
        return Ok(fd);
    }
    let rows = Array2::from_shape_fn((downstream.len(), 3), |(i, j)| downstream[i][j]);
    let embeddings = phi.predict_batch(rows.view())?;
    let dx: Vec<f64> = downstream.iter().map(|r| r[0]).collect();
    for (w, e) in pooling.weights(&dx).iter().zip(embeddings.outer_iter()) {
        for (f, x) in fd.iter_mut().zip(e) {
            *f += w * x;
        }
    }
    Ok(fd)
}

/// `[F_d ; φ(left) ; φ(current) ; φ(right) ; φ(cav)]`, 160 wide.
pub fn encode_state(obs: &Observation, phi: &Mlp, pooling: Pooling) -> Result<Vec<f64>> {
    let (rows, segments) = stack_rows(&[obs], pooling);
    let embeddings = phi.predict_batch(rows.view())?;
    Ok(pool(embeddings.view(), &segments).into_raw_vec_and_offset().0)
}

pub fn q_values(obs: &Observation, net: &QNetwork, pooling: Pooling) -> Result<[f64; 3]> {
    let q = q_values_batch(net, &[obs], pooling)?;
    Ok([q[[0, 0]], q[[0, 1]], q[[0, 2]]])
}
