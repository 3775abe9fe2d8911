//! Attention-based message passing.
//!
//! Node embeddings update as
//! `h_i' = W1 h_i + sum_{j in N(i)} alpha_ij (W2 h_j + W5 h_ij) + b`,
//! with attention coefficients from the scaled dot product of the query
//! `W3 h_i` against the keys `W4 h_j + W5 h_ij`, softmaxed over the
//! neighborhood. An isolated node keeps only its W1 self-term (plus bias).

use crate::mat::Mat;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// One attention layer's weights bound to a tape.
pub struct AttentionTensors<F: Scalar> {
    pub w1: Tensor<F>,
    pub w2: Tensor<F>,
    pub w3: Tensor<F>,
    pub w4: Tensor<F>,
    pub w5: Option<Tensor<F>>,
    pub bias: Tensor<F>,
}

impl<F: Scalar> AttentionTensors<F> {
    pub fn out_dim(&self) -> usize {
        self.w1.shape()[1]
    }
}

/// Applies one attention message-passing layer.
///
/// `mask` is the row-major N x N neighbor mask (true where an edge exists);
/// `edge_weights`, when present together with W5, supplies the scalar edge
/// feature of each pair.
pub fn attention_layer<F: Scalar>(
    node_in: &Tensor<F>,
    mask: &[bool],
    edge_weights: Option<&Mat<F>>,
    weights: &AttentionTensors<F>,
) -> Tensor<F> {
    let shape = node_in.shape();
    assert_eq!(shape.len(), 2, "attention_layer: node input must be rank-2");
    let n = shape[0];
    assert_eq!(
        mask.len(),
        n * n,
        "attention_layer: mask length {} does not match {n} nodes",
        mask.len()
    );
    let out_dim = weights.out_dim();
    let self_term = node_in.matmul(&weights.w1);
    let messages = node_in.matmul(&weights.w2);
    let queries = node_in.matmul(&weights.w3);
    let keys = node_in.matmul(&weights.w4);

    let mut scores = queries.matmul_nt(&keys);
    let edge = match (edge_weights, &weights.w5) {
        (Some(c), Some(w5)) => {
            assert_eq!(c.rows(), n, "attention_layer: edge feature shape mismatch");
            let tape = node_in.tape();
            Some((tape.constant(&[n, n], c.as_slice().to_vec()), w5))
        }
        _ => None,
    };
    if let Some((c, w5)) = &edge {
        // q_i . (W5 c_ij) = (q . w5^T)_i * c_ij, a column-broadcast product.
        let u = queries.matmul_nt(w5);
        scores = scores.add(&u.mul(c));
    }
    let scale = F::of(1.0 / (out_dim as f64).sqrt());
    let alpha = scores.masked_softmax_rows_scaled(mask, scale, true);

    let mut aggregated = alpha.matmul(&messages);
    if let Some((c, w5)) = &edge {
        // sum_j alpha_ij c_ij scales the shared W5 row per node.
        let s = alpha.mul(c).row_sums();
        aggregated = aggregated.add(&s.matmul(w5));
    }
    self_term.add(&aggregated).add(&weights.bias)
}
