//! Gated fusion of encoder states: a sigmoid gate blending the parser
//! encoder with one tagger encoder, and its softmax generalization over n
//! tagger encoders. All operations act element-wise on `(d, b)` column
//! batches and run on the tape, so gradients flow through the gates.

use rand::Rng;

use crate::nn::init;
use crate::nn::store::ParameterStore;
use crate::nn::tape::{NodeId, Tape};

/// Register the 2-stream gate: `w (d, 2d)`, `b (d, 1)`.
pub fn init_gate2_params<R: Rng>(store: &mut ParameterStore, prefix: &str, d: usize, rng: &mut R) {
    store.insert(&format!("{prefix}w"), init::glorot(rng, d, 2 * d));
    store.insert(&format!("{prefix}b"), ndarray::Array2::zeros((d, 1)));
}

/// Register the n-stream gate: per output stream `i = 1..n+1`,
/// `w.{i} (d, (n+1)d)` and `b.{i} (d, 1)`.
pub fn init_gate_n_params<R: Rng>(
    store: &mut ParameterStore,
    prefix: &str,
    d: usize,
    n: usize,
    rng: &mut R,
) {
    assert!(n >= 1, "gate_n needs at least one tagger stream");
    for i in 1..=n + 1 {
        store.insert(&format!("{prefix}w.{i}"), init::glorot(rng, d, (n + 1) * d));
        store.insert(&format!("{prefix}b.{i}"), ndarray::Array2::zeros((d, 1)));
    }
}

/// Sigmoid gate: `a = σ(w [h_p; h_t] + b)`, `g = a ⊙ h_p + (1−a) ⊙ h_t`.
pub fn gate2(
    tape: &mut Tape,
    store: &ParameterStore,
    prefix: &str,
    h_parser: NodeId,
    h_tagger: NodeId,
) -> NodeId {
    let w_name = format!("{prefix}w");
    let b_name = format!("{prefix}b");
    let w = tape.param(&w_name, store.get(&w_name).clone());
    let b = tape.param(&b_name, store.get(&b_name).clone());
    let both = tape.concat_rows(&[h_parser, h_tagger]);
    let pre = tape.affine(w, both, b);
    let a = tape.sigmoid(pre);
    let diff = tape.sub(h_parser, h_tagger);
    let scaled = tape.mul(a, diff);
    tape.add(scaled, h_tagger)
}

/// Softmax gate over `n + 1` streams (parser first). Returns the fused
/// state and the per-stream weights (each `(d, b)`, summing to one per
/// entry).
pub fn gate_n_with_weights(
    tape: &mut Tape,
    store: &ParameterStore,
    prefix: &str,
    h_parser: NodeId,
    h_taggers: &[NodeId],
) -> (NodeId, Vec<NodeId>) {
    let n = h_taggers.len();
    assert!(n >= 1, "gate_n needs at least one tagger stream");
    let mut streams = vec![h_parser];
    streams.extend_from_slice(h_taggers);
    let all = tape.concat_rows(&streams);

    let scores: Vec<NodeId> = (1..=n + 1)
        .map(|i| {
            let w_name = format!("{prefix}w.{i}");
            let b_name = format!("{prefix}b.{i}");
            let w = tape.param(&w_name, store.get(&w_name).clone());
            let b = tape.param(&b_name, store.get(&b_name).clone());
            tape.affine(w, all, b)
        })
        .collect();

    // Element-wise softmax over streams, stabilized by the running maximum.
    let mut max = scores[0];
    for &s in &scores[1..] {
        max = tape.max_pair(max, s);
    }
    let exps: Vec<NodeId> = scores
        .iter()
        .map(|&s| {
            let shifted = tape.sub(s, max);
            tape.exp(shifted)
        })
        .collect();
    let mut z = exps[0];
    for &e in &exps[1..] {
        z = tape.add(z, e);
    }
    let weights: Vec<NodeId> = exps.iter().map(|&e| tape.div(e, z)).collect();

    let mut fused = tape.mul(weights[0], streams[0]);
    for i in 1..streams.len() {
        let part = tape.mul(weights[i], streams[i]);
        fused = tape.add(fused, part);
    }
    (fused, weights)
}

pub fn gate_n(
    tape: &mut Tape,
    store: &ParameterStore,
    prefix: &str,
    h_parser: NodeId,
    h_taggers: &[NodeId],
) -> NodeId {
    gate_n_with_weights(tape, store, prefix, h_parser, h_taggers).0
}
