use super::graph::{Graph, Var};
use super::{Float, Result};

/// Trainable scalars of one LSTM cell: a `[input + hidden, 4·hidden]`
/// weight and a `4·hidden` bias.
pub fn lstm_param_count(input: usize, hidden: usize) -> usize {
    4 * ((input + hidden) * hidden + hidden)
}

impl<T: Float> Graph<T> {
    /// One step of a standard LSTM cell on a batch.
    ///
    /// `x` is `[batch, input]`, `h` and `c` are `[batch, hidden]`, `weight`
    /// is `[input + hidden, 4·hidden]` with gate blocks in the order
    /// input, forget, candidate, output. Returns `(h', c')`.
    pub fn lstm_cell(&mut self, x: Var, h: Var, c: Var, weight: Var, bias: Var) -> Result<(Var, Var)> {
        let hidden = self.shape(h)[1];
        let xh = self.concat(&[x, h], 1)?;
        let pre = self.matmul(xh, weight)?;
        let pre = self.add(pre, bias)?;
        let gate = |g: &mut Self, k: usize| g.slice(pre, 1, k * hidden, (k + 1) * hidden);
        let i = gate(self, 0)?;
        let i = self.sigmoid(i)?;
        let f = gate(self, 1)?;
        let f = self.sigmoid(f)?;
        let cand = gate(self, 2)?;
        let cand = self.tanh(cand)?;
        let o = gate(self, 3)?;
        let o = self.sigmoid(o)?;
        let keep = self.mul(f, c)?;
        let write = self.mul(i, cand)?;
        let c_next = self.add(keep, write)?;
        let squashed = self.tanh(c_next)?;
        let h_next = self.mul(o, squashed)?;
        Ok((h_next, c_next))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{ArrayD, IxDyn};

    #[test]
    fn full_size_cell_sizes() {
        assert_eq!(lstm_param_count(104, 1024), 4_624_384);
        assert_eq!(lstm_param_count(1024, 1024), 8_392_704);
    }

    #[test]
    fn zero_weights_give_zero_hidden() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(ArrayD::from_elem(IxDyn(&[2, 3]), 0.7)).unwrap();
        let h = g.constant(ArrayD::zeros(IxDyn(&[2, 4]))).unwrap();
        let c = g.constant(ArrayD::from_elem(IxDyn(&[2, 4]), 0.4)).unwrap();
        let w = g.constant(ArrayD::zeros(IxDyn(&[7, 16]))).unwrap();
        let b = g.constant(ArrayD::zeros(IxDyn(&[16]))).unwrap();
        let (h1, c1) = g.lstm_cell(x, h, c, w, b).unwrap();
        // c' = 0.5·c, h' = 0.5·tanh(c')
        assert!(g.value(c1).iter().all(|&v| (v - 0.2).abs() < 1e-15));
        assert!(g.value(h1).iter().all(|&v| (v - 0.5 * 0.2f64.tanh()).abs() < 1e-15));

        let c = g.constant(ArrayD::zeros(IxDyn(&[2, 4]))).unwrap();
        let (h1, _) = g.lstm_cell(x, h, c, w, b).unwrap();
        assert!(g.value(h1).iter().all(|&v| v == 0.0));
    }
}
