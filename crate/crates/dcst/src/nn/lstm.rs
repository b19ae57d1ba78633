//! Stacked bidirectional LSTM encoder.
//!
//! Weights for each direction of each layer are a single stacked matrix
//! `w: (4h, in + h)` applied to `[x_t; h_prev]`, with gate order
//! input / forget / candidate / output. The forward and backward passes of a
//! layer run independently; their hidden states are concatenated per time
//! step, so the layer output dimension is `2h`.

use ndarray::Array2;
use rand::Rng;

use super::init;
use super::store::ParameterStore;
use super::tape::{NodeId, Tape};

/// One LSTM cell update for a batch column matrix `x: (in, b)`.
///
/// `w` is `(4h, in+h)` and `b` is `(4h, 1)`.
pub fn lstm_step(
    tape: &mut Tape,
    x: NodeId,
    h_prev: NodeId,
    c_prev: NodeId,
    w: NodeId,
    b: NodeId,
    hidden: usize,
) -> (NodeId, NodeId) {
    let xh = tape.concat_rows(&[x, h_prev]);
    let z = tape.affine(w, xh, b);
    let zi = tape.slice_rows(z, 0, hidden);
    let zf = tape.slice_rows(z, hidden, 2 * hidden);
    let zg = tape.slice_rows(z, 2 * hidden, 3 * hidden);
    let zo = tape.slice_rows(z, 3 * hidden, 4 * hidden);
    let i = tape.sigmoid(zi);
    let f = tape.sigmoid(zf);
    let g = tape.tanh(zg);
    let o = tape.sigmoid(zo);
    let fc = tape.mul(f, c_prev);
    let ig = tape.mul(i, g);
    let c = tape.add(fc, ig);
    let tc = tape.tanh(c);
    let h = tape.mul(o, tc);
    (h, c)
}

/// Configuration and parameter naming for one stacked BiLSTM.
#[derive(Debug, Clone)]
pub struct BiLstmSpec {
    pub prefix: String,
    pub in_dim: usize,
    pub hidden: usize,
    pub layers: usize,
}

impl BiLstmSpec {
    pub fn new(prefix: &str, in_dim: usize, hidden: usize, layers: usize) -> Self {
        assert!(layers >= 1);
        BiLstmSpec { prefix: prefix.to_string(), in_dim, hidden, layers }
    }

    pub fn out_dim(&self) -> usize {
        2 * self.hidden
    }

    fn layer_in(&self, layer: usize) -> usize {
        if layer == 0 {
            self.in_dim
        } else {
            2 * self.hidden
        }
    }

    fn w_name(&self, layer: usize, dir: &str) -> String {
        format!("{}.l{}.{}.w", self.prefix, layer, dir)
    }

    fn b_name(&self, layer: usize, dir: &str) -> String {
        format!("{}.l{}.{}.b", self.prefix, layer, dir)
    }

    /// Register freshly initialized parameters: weights uniform
    /// ±sqrt(1/hidden), biases zero except the forget gate at +1.
    pub fn init<R: Rng>(&self, store: &mut ParameterStore, rng: &mut R) {
        let bound = (1.0 / self.hidden as f64).sqrt();
        for layer in 0..self.layers {
            let in_dim = self.layer_in(layer);
            for dir in ["fwd", "bwd"] {
                let w = init::uniform(rng, 4 * self.hidden, in_dim + self.hidden, bound);
                let mut b = Array2::zeros((4 * self.hidden, 1));
                for r in self.hidden..2 * self.hidden {
                    b[(r, 0)] = 1.0;
                }
                store.insert(&self.w_name(layer, dir), w);
                store.insert(&self.b_name(layer, dir), b);
            }
        }
    }

    fn run_direction(
        &self,
        tape: &mut Tape,
        inputs: &[NodeId],
        w: NodeId,
        b: NodeId,
        batch: usize,
        reverse: bool,
    ) -> Vec<NodeId> {
        let mut h = tape.zeros(self.hidden, batch);
        let mut c = tape.zeros(self.hidden, batch);
        let order: Vec<usize> = if reverse {
            (0..inputs.len()).rev().collect()
        } else {
            (0..inputs.len()).collect()
        };
        let mut out = vec![0; inputs.len()];
        for t in order {
            let (nh, nc) = lstm_step(tape, inputs[t], h, c, w, b, self.hidden);
            h = nh;
            c = nc;
            out[t] = h;
        }
        out
    }

    /// Encode a sequence of `(in, b)` column matrices into `(2h, b)` states.
    pub fn encode(&self, tape: &mut Tape, store: &ParameterStore, inputs: &[NodeId]) -> Vec<NodeId> {
        assert!(!inputs.is_empty(), "bilstm_encode on empty sequence");
        let batch = tape.shape(inputs[0]).1;
        let mut seq: Vec<NodeId> = inputs.to_vec();
        for layer in 0..self.layers {
            let wf_name = self.w_name(layer, "fwd");
            let wf = tape.param(&wf_name, store.get(&wf_name).clone());
            let bf_name = self.b_name(layer, "fwd");
            let bf = tape.param(&bf_name, store.get(&bf_name).clone());
            let wb_name = self.w_name(layer, "bwd");
            let wb = tape.param(&wb_name, store.get(&wb_name).clone());
            let bb_name = self.b_name(layer, "bwd");
            let bb = tape.param(&bb_name, store.get(&bb_name).clone());
            let fwd = self.run_direction(tape, &seq, wf, bf, batch, false);
            let bwd = self.run_direction(tape, &seq, wb, bb, batch, true);
            seq = fwd
                .iter()
                .zip(&bwd)
                .map(|(&f, &b)| tape.concat_rows(&[f, b]))
                .collect();
        }
        seq
    }

    /// Like `encode`, but also returns the final layer's forward-only and
    /// backward-only halves per time step (used by the LM objective).
    pub fn encode_split(
        &self,
        tape: &mut Tape,
        store: &ParameterStore,
        inputs: &[NodeId],
    ) -> (Vec<NodeId>, Vec<NodeId>, Vec<NodeId>) {
        let full = self.encode(tape, store, inputs);
        let h = self.hidden;
        let fwd = full.iter().map(|&n| tape.slice_rows(n, 0, h)).collect();
        let bwd = full.iter().map(|&n| tape.slice_rows(n, h, 2 * h)).collect();
        (full, fwd, bwd)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::Array2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zero_spec(in_dim: usize, hidden: usize) -> (BiLstmSpec, ParameterStore) {
        let spec = BiLstmSpec::new("e", in_dim, hidden, 1);
        let mut store = ParameterStore::new();
        for layer in 0..spec.layers {
            let li = spec.layer_in(layer);
            for dir in ["fwd", "bwd"] {
                store.insert(&spec.w_name(layer, dir), Array2::zeros((4 * hidden, li + hidden)));
                store.insert(&spec.b_name(layer, dir), Array2::zeros((4 * hidden, 1)));
            }
        }
        (spec, store)
    }

    #[test]
    fn zero_weights_zero_input_fixed_point() {
        let (spec, store) = zero_spec(3, 4);
        let mut tape = Tape::new();
        let xs: Vec<_> = (0..3).map(|_| tape.zeros(3, 1)).collect();
        let out = spec.encode(&mut tape, &store, &xs);
        for o in out {
            assert!(tape.value(o).iter().all(|&v| v == 0.0));
            assert_eq!(tape.shape(o), (8, 1));
        }
    }

    #[test]
    fn length_one_sequence_runs_both_directions() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = BiLstmSpec::new("e", 3, 4, 2);
        let mut store = ParameterStore::new();
        spec.init(&mut store, &mut rng);
        let mut tape = Tape::new();
        let x = tape.leaf(Array2::from_shape_fn((3, 1), |_| 0.3));
        let out = spec.encode(&mut tape, &store, &[x]);
        assert_eq!(out.len(), 1);
        assert_eq!(tape.shape(out[0]), (8, 1));
        assert!(tape.value(out[0]).iter().all(|v| v.is_finite()));
    }

    #[test]
    fn reversing_input_swaps_direction_halves() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let spec = BiLstmSpec::new("e", 3, 4, 1);
        let mut store = ParameterStore::new();
        spec.init(&mut store, &mut rng);
        // Tie the two directions' weights so the swap is exact.
        let w = store.get("e.l0.fwd.w").clone();
        let b = store.get("e.l0.fwd.b").clone();
        store.set("e.l0.bwd.w", w);
        store.set("e.l0.bwd.b", b);

        let xs_data: Vec<Array2<f64>> = (0..4)
            .map(|t| Array2::from_shape_fn((3, 1), |(i, _)| (t as f64 * 0.3 - i as f64 * 0.1).sin()))
            .collect();

        let mut tape = Tape::new();
        let xs: Vec<_> = xs_data.iter().map(|x| tape.leaf(x.clone())).collect();
        let out = spec.encode(&mut tape, &store, &xs);

        let mut tape_r = Tape::new();
        let xs_r: Vec<_> = xs_data.iter().rev().map(|x| tape_r.leaf(x.clone())).collect();
        let out_r = spec.encode(&mut tape_r, &store, &xs_r);

        for t in 0..4 {
            let orig = tape.value(out[t]);
            let swapped = tape_r.value(out_r[3 - t]);
            for i in 0..4 {
                assert_abs_diff_eq!(orig[(i, 0)], swapped[(i + 4, 0)], epsilon = 1e-12);
                assert_abs_diff_eq!(orig[(i + 4, 0)], swapped[(i, 0)], epsilon = 1e-12);
            }
        }
    }

    #[test]
    #[should_panic(expected = "empty sequence")]
    fn empty_sequence_panics() {
        let (spec, store) = zero_spec(3, 4);
        let mut tape = Tape::new();
        spec.encode(&mut tape, &store, &[]);
    }
}
