use rand::Rng;

use super::OptimizerNetError;
use crate::autodiff::{NodeId, Tape, Tensor};
use crate::rng::rng_from_seed;

/// Hidden width of both LSTM layers.
pub const HIDDEN_SIZE: usize = 20;
/// Default gradient preprocessing constant `p`.
pub const DEFAULT_PREPROCESS_P: f64 = 10.0;
/// Default multiplier applied to the head output.
pub const DEFAULT_OUTPUT_SCALE: f64 = 0.1;

/// Weights of one LSTM cell.
///
/// `weight` has shape `(input + hidden) x 4 hidden` and acts on the row
/// `[x, h]`. Its column blocks are the input, forget, candidate and output
/// gates, in that order, and `bias` follows the same layout.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmCellWeights {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl LstmCellWeights {
    fn init(rng: &mut impl Rng, input: usize, hidden: usize) -> Self {
        let fan_in = input + hidden;
        let bound = 1.0 / (fan_in as f64).sqrt();
        let data = (0..fan_in * 4 * hidden).map(|_| rng.random_range(-bound..bound)).collect();
        let mut bias = vec![0.0; 4 * hidden];
        bias[hidden..2 * hidden].iter_mut().for_each(|b| *b = 1.0);
        LstmCellWeights {
            weight: Tensor::new(vec![fan_in, 4 * hidden], data).expect("weight shape"),
            bias: Tensor::vector(bias),
        }
    }

    pub fn input_width(&self) -> usize {
        self.weight.shape()[0] - self.hidden()
    }

    pub fn hidden(&self) -> usize {
        self.weight.shape()[1] / 4
    }
}

/// Shared parameters of the coordinatewise two-layer LSTM optimizer.
///
/// With `rank = 0` the first layer sees only the two preprocessed gradient
/// features, which is the plain learned-optimizer baseline.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmOptimizerParams {
    pub rank: usize,
    pub layer1: LstmCellWeights,
    pub layer2: LstmCellWeights,
    /// hidden x 1
    pub head_weight: Tensor,
    /// shape [1]
    pub head_bias: Tensor,
    pub output_scale: f64,
    pub preprocess_p: f64,
}

/// Leaf nodes holding the parameters on one tape, in flattening order.
#[derive(Clone, Copy, Debug)]
pub struct BoundParams {
    pub w1: NodeId,
    pub b1: NodeId,
    pub w2: NodeId,
    pub b2: NodeId,
    pub head_w: NodeId,
    pub head_b: NodeId,
    output_scale: f64,
}

impl BoundParams {
    pub fn nodes(&self) -> [NodeId; 6] {
        [self.w1, self.b1, self.w2, self.b2, self.head_w, self.head_b]
    }
}

impl LstmOptimizerParams {
    /// Width of the first layer's input: 2 gradient features plus `2R`.
    pub fn input_width(rank: usize) -> usize {
        2 + 2 * rank
    }

    /// Uniform weights in `(-1/sqrt(fan_in), 1/sqrt(fan_in))`, zero biases
    /// except a forget-gate bias of one, and a zero head so the first
    /// updates are exactly zero.
    pub fn init(seed: u64, rank: usize) -> Self {
        let mut rng = rng_from_seed(seed);
        let h = HIDDEN_SIZE;
        let layer1 = LstmCellWeights::init(&mut rng, Self::input_width(rank), h);
        let layer2 = LstmCellWeights::init(&mut rng, h, h);
        LstmOptimizerParams {
            rank,
            layer1,
            layer2,
            head_weight: Tensor::zeros(&[h, 1]),
            head_bias: Tensor::zeros(&[1]),
            output_scale: DEFAULT_OUTPUT_SCALE,
            preprocess_p: DEFAULT_PREPROCESS_P,
        }
    }

    pub fn hidden(&self) -> usize {
        self.layer2.hidden()
    }

    fn arrays(&self) -> [&Tensor; 6] {
        [
            &self.layer1.weight,
            &self.layer1.bias,
            &self.layer2.weight,
            &self.layer2.bias,
            &self.head_weight,
            &self.head_bias,
        ]
    }

    fn arrays_mut(&mut self) -> [&mut Tensor; 6] {
        [
            &mut self.layer1.weight,
            &mut self.layer1.bias,
            &mut self.layer2.weight,
            &mut self.layer2.bias,
            &mut self.head_weight,
            &mut self.head_bias,
        ]
    }

    /// Named arrays in flattening order, as stored in checkpoints.
    pub fn named_arrays(&self) -> Vec<(&'static str, &Tensor)> {
        ARRAY_NAMES.iter().copied().zip(self.arrays()).collect()
    }

    pub fn named_arrays_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        ARRAY_NAMES.iter().copied().zip(self.arrays_mut()).collect()
    }

    pub fn param_count(&self) -> usize {
        self.arrays().iter().map(|t| t.len()).sum()
    }

    /// All trainable values concatenated in flattening order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.param_count());
        for t in self.arrays() {
            flat.extend_from_slice(t.data());
        }
        flat
    }

    pub fn set_from_flat(&mut self, flat: &[f64]) -> Result<(), OptimizerNetError> {
        let expected = self.param_count();
        if flat.len() != expected {
            return Err(OptimizerNetError::FlatLength { expected, got: flat.len() });
        }
        let mut offset = 0;
        for t in self.arrays_mut() {
            let len = t.len();
            t.data_mut().copy_from_slice(&flat[offset..offset + len]);
            offset += len;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.arrays().iter().all(|t| t.is_finite()) && self.output_scale.is_finite()
    }

    /// Places the parameters on `tape` as leaves.
    pub fn bind(&self, tape: &mut Tape) -> Result<BoundParams, OptimizerNetError> {
        Ok(BoundParams {
            w1: tape.leaf(self.layer1.weight.clone())?,
            b1: tape.leaf(self.layer1.bias.clone())?,
            w2: tape.leaf(self.layer2.weight.clone())?,
            b2: tape.leaf(self.layer2.bias.clone())?,
            head_w: tape.leaf(self.head_weight.clone())?,
            head_b: tape.leaf(self.head_bias.clone())?,
            output_scale: self.output_scale,
        })
    }
}

pub(crate) const ARRAY_NAMES: [&str; 6] = [
    "layer1.weight",
    "layer1.bias",
    "layer2.weight",
    "layer2.bias",
    "head.weight",
    "head.bias",
];

/// Per-coordinate recurrent state as tape nodes, each `n x hidden`.
#[derive(Clone, Copy, Debug)]
pub struct CoordStates {
    pub h1: NodeId,
    pub c1: NodeId,
    pub h2: NodeId,
    pub c2: NodeId,
}

/// Per-coordinate recurrent state as plain values, each `n x hidden`.
#[derive(Clone, Debug, PartialEq)]
pub struct CoordValues {
    pub h1: Tensor,
    pub c1: Tensor,
    pub h2: Tensor,
    pub c2: Tensor,
}

impl CoordValues {
    pub fn zeros(coords: usize, hidden: usize) -> Self {
        let z = Tensor::zeros(&[coords, hidden]);
        CoordValues {
            h1: z.clone(),
            c1: z.clone(),
            h2: z.clone(),
            c2: z,
        }
    }

    pub fn coords(&self) -> usize {
        self.h1.shape()[0]
    }

    /// Places the state on `tape` as parentless leaves.
    pub fn bind(&self, tape: &mut Tape) -> Result<CoordStates, OptimizerNetError> {
        Ok(CoordStates {
            h1: tape.leaf(self.h1.clone())?,
            c1: tape.leaf(self.c1.clone())?,
            h2: tape.leaf(self.h2.clone())?,
            c2: tape.leaf(self.c2.clone())?,
        })
    }

    pub fn read(tape: &Tape, states: &CoordStates) -> Self {
        CoordValues {
            h1: tape.value(states.h1).clone(),
            c1: tape.value(states.c1).clone(),
            h2: tape.value(states.h2).clone(),
            c2: tape.value(states.c2).clone(),
        }
    }
}

/// Optimizer input for one step.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerInput {
    /// n x 2 preprocessed gradient.
    pub grad_features: Tensor,
    /// 2R DMD features shared by every coordinate.
    pub dmd_features: Vec<f64>,
}

impl OptimizerInput {
    pub fn new(grad_features: Tensor, dmd_features: Vec<f64>) -> Self {
        OptimizerInput {
            grad_features,
            dmd_features,
        }
    }

    pub fn coords(&self) -> usize {
        self.grad_features.shape().first().copied().unwrap_or(0)
    }

    /// The full n x (2 + 2R) input block with DMD features repeated per row.
    pub fn assemble(&self) -> Tensor {
        let n = self.coords();
        let width = 2 + self.dmd_features.len();
        let mut data = Vec::with_capacity(n * width);
        for row in self.grad_features.data().chunks(2) {
            data.extend_from_slice(row);
            data.extend_from_slice(&self.dmd_features);
        }
        Tensor::new(vec![n, width], data).expect("input block shape")
    }
}

/// Maps raw gradients to `n x 2` features: `(ln|g| / p, sign g)` when
/// `|g| >= e^-p`, otherwise `(-1, e^p g)`.
pub fn preprocess_gradient(grad: &[f64], p: f64) -> Tensor {
    let threshold = (-p).exp();
    let amplify = p.exp();
    let mut data = Vec::with_capacity(2 * grad.len());
    for &g in grad {
        if g.abs() >= threshold {
            data.push(g.abs().ln() / p);
            data.push(g.signum());
        } else {
            data.push(-1.0);
            data.push(amplify * g);
        }
    }
    Tensor::new(vec![grad.len(), 2], data).expect("feature shape")
}

fn lstm_cell(
    tape: &mut Tape,
    x: NodeId,
    h: NodeId,
    c: NodeId,
    weight: NodeId,
    bias: NodeId,
    hidden: usize,
) -> Result<(NodeId, NodeId), OptimizerNetError> {
    let xh = tape.concat(x, h)?;
    let z = tape.matmul(xh, weight)?;
    let z = tape.add_row_bias(z, bias)?;
    let zi = tape.slice_cols(z, 0, hidden)?;
    let zf = tape.slice_cols(z, hidden, hidden)?;
    let zg = tape.slice_cols(z, 2 * hidden, hidden)?;
    let zo = tape.slice_cols(z, 3 * hidden, hidden)?;
    let i = tape.sigmoid(zi)?;
    let f = tape.sigmoid(zf)?;
    let g = tape.tanh(zg)?;
    let o = tape.sigmoid(zo)?;
    let keep = tape.mul(f, c)?;
    let write = tape.mul(i, g)?;
    let c_new = tape.add(keep, write)?;
    let squashed = tape.tanh(c_new)?;
    let h_new = tape.mul(o, squashed)?;
    Ok((h_new, c_new))
}

/// One step of the coordinatewise optimizer.
///
/// Every row of the input and state is processed by the same shared cells.
/// Returns the update vector `g_t` (shape `[n]`) on the tape together with
/// the next state. The input block enters as a constant leaf.
pub fn optimizer_step(
    tape: &mut Tape,
    params: &BoundParams,
    input: &OptimizerInput,
    states: &CoordStates,
) -> Result<(NodeId, CoordStates), OptimizerNetError> {
    let expected = tape.value(params.w1).shape()[0] - tape.value(params.w2).shape()[1] / 4;
    let got = 2 + input.dmd_features.len();
    if input.grad_features.shape().len() != 2 || input.grad_features.shape()[1] != 2 || expected != got {
        return Err(OptimizerNetError::InputWidth { expected, got });
    }
    let n = input.coords();
    let hidden = tape.value(params.w2).shape()[1] / 4;
    for id in [states.h1, states.c1, states.h2, states.c2] {
        if tape.value(id).shape() != [n, hidden] {
            return Err(OptimizerNetError::StateShape {
                coords: n,
                hidden,
                got: tape.value(id).shape().to_vec(),
            });
        }
    }
    let x = tape.leaf(input.assemble())?;
    let (h1, c1) = lstm_cell(tape, x, states.h1, states.c1, params.w1, params.b1, hidden)?;
    let (h2, c2) = lstm_cell(tape, h1, states.h2, states.c2, params.w2, params.b2, hidden)?;
    let out = tape.matmul(h2, params.head_w)?;
    let out = tape.add_row_bias(out, params.head_b)?;
    let out = tape.scale(out, params.output_scale)?;
    let update = tape.view(out, 0, &[n])?;
    Ok((update, CoordStates { h1, c1, h2, c2 }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_step(params: &LstmOptimizerParams, input: &OptimizerInput, state: &CoordValues) -> (Vec<f64>, CoordValues) {
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape).unwrap();
        let s = state.bind(&mut tape).unwrap();
        let (u, next) = optimizer_step(&mut tape, &bound, input, &s).unwrap();
        (tape.value(u).data().to_vec(), CoordValues::read(&tape, &next))
    }

    #[test]
    fn preprocess_examples() {
        let f = preprocess_gradient(&[1.0, 0.0, -(-5.0f64).exp()], 10.0);
        let d = f.data();
        assert_eq!(&d[0..4], &[0.0, 1.0, -1.0, 0.0]);
        assert!((d[4] + 0.5).abs() < 1e-15 && d[5] == -1.0);
    }

    #[test]
    fn preprocess_small_branch_is_linear() {
        let g = 1e-6;
        let f = preprocess_gradient(&[g], 10.0);
        assert_eq!(f.data()[0], -1.0);
        assert!((f.data()[1] - 10f64.exp() * g).abs() < 1e-15);
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let a = LstmOptimizerParams::init(5, 1);
        assert_eq!(a, LstmOptimizerParams::init(5, 1));
        assert_ne!(a, LstmOptimizerParams::init(6, 1));
        let b1 = 1.0 / ((4 + 20) as f64).sqrt();
        assert!(a.layer1.weight.data().iter().all(|w| w.abs() <= b1));
        let b2 = 1.0 / 40f64.sqrt();
        assert!(a.layer2.weight.data().iter().all(|w| w.abs() <= b2));
        assert_eq!(a.layer1.weight.shape(), &[24, 80]);
        assert_eq!(a.layer1.bias.data()[20..40], [1.0; 20]);
        assert_eq!(a.layer1.bias.data()[0..20], [0.0; 20]);
        assert_eq!(a.output_scale, 0.1);
    }

    #[test]
    fn first_step_after_init_is_zero() {
        let params = LstmOptimizerParams::init(1, 2);
        let input = OptimizerInput::new(preprocess_gradient(&[0.3, -2.0, 1e-9], 10.0), vec![0.9, 0.1, 0.5, -0.1]);
        let (u, next) = run_step(&params, &input, &CoordValues::zeros(3, 20));
        assert_eq!(u, vec![0.0; 3]);
        assert!(next.h1.data().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn all_zero_params_give_zero_update() {
        let mut params = LstmOptimizerParams::init(1, 1);
        let zeros = vec![0.0; params.param_count()];
        params.set_from_flat(&zeros).unwrap();
        let input = OptimizerInput::new(preprocess_gradient(&[1.0, 2.0], 10.0), vec![0.5, 0.5]);
        let (u, next) = run_step(&params, &input, &CoordValues::zeros(2, 20));
        assert_eq!(u, vec![0.0; 2]);
        assert!(next.h2.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identical_rows_give_identical_updates() {
        let mut params = LstmOptimizerParams::init(3, 1);
        params.head_weight.data_mut().iter_mut().enumerate().for_each(|(i, w)| *w = 0.1 * i as f64 - 0.5);
        let input = OptimizerInput::new(preprocess_gradient(&[0.7, 0.7, -0.2], 10.0), vec![0.9, 0.0]);
        let (u, _) = run_step(&params, &input, &CoordValues::zeros(3, 20));
        assert_eq!(u[0], u[1]);
        assert_ne!(u[0], u[2]);
    }

    #[test]
    fn rank_zero_has_two_inputs() {
        let params = LstmOptimizerParams::init(0, 0);
        assert_eq!(params.layer1.input_width(), 2);
        let input = OptimizerInput::new(preprocess_gradient(&[0.1], 10.0), vec![]);
        assert!(run_step(&params, &input, &CoordValues::zeros(1, 20)).0[0] == 0.0);
    }

    #[test]
    fn width_mismatch_is_rejected() {
        let params = LstmOptimizerParams::init(0, 1);
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape).unwrap();
        let s = CoordValues::zeros(1, 20).bind(&mut tape).unwrap();
        let input = OptimizerInput::new(preprocess_gradient(&[0.1], 10.0), vec![]);
        assert!(matches!(
            optimizer_step(&mut tape, &bound, &input, &s),
            Err(OptimizerNetError::InputWidth { expected: 4, got: 2 })
        ));
        let wrong_rows = CoordValues::zeros(2, 20).bind(&mut tape).unwrap();
        let input = OptimizerInput::new(preprocess_gradient(&[0.1], 10.0), vec![0.0, 0.0]);
        assert!(matches!(
            optimizer_step(&mut tape, &bound, &input, &wrong_rows),
            Err(OptimizerNetError::StateShape { .. })
        ));
    }

    #[test]
    fn flatten_round_trip() {
        let mut params = LstmOptimizerParams::init(9, 2);
        let flat = params.flatten();
        assert_eq!(flat.len(), 26 * 80 + 80 + 40 * 80 + 80 + 20 + 1);
        let shifted: Vec<f64> = flat.iter().map(|v| v + 1.0).collect();
        params.set_from_flat(&shifted).unwrap();
        assert_eq!(params.flatten(), shifted);
        assert!(params.set_from_flat(&flat[1..]).is_err());
    }
}
