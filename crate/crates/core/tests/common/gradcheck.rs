//! Finite-difference gradient checks shared by the gradient tests and the
//! acceptance suite. Each check returns its worst [`fd_ratio`]; a value at
//! most one passes.

use dmd_l2o::autodiff::{NodeId, Tape, Tensor};
use dmd_l2o::datasets::Batch;
use dmd_l2o::dmd::DmdConfig;
use dmd_l2o::meta_train::{unroll_segment, RolloutState, TrajectoryLog};
use dmd_l2o::optimizee::{Activation, MlpSpec, Optimizee, QuadraticTask, StepData};
use dmd_l2o::optimizer_net::{optimizer_step, CoordValues, LstmOptimizerParams, OptimizerInput, HIDDEN_SIZE};
use dmd_l2o::rng::{rng_from_seed, Rng64};
use dmd_l2o::tasks::{registry, TaskKind};
use rand::Rng;

use super::{central_diff, mlp_forward, quadratic_loss, scalar_lstm_step, worst_ratio, ScalarState};

type Build = dyn Fn(&mut Tape, &[NodeId]) -> NodeId;

/// Checks `sum(r * build(inputs))` against central differences in every
/// input entry, for fixed random weights `r`.
fn check_op(rng: &mut impl Rng, inputs: &[Tensor], build: &Build) -> f64 {
    let eval = |values: &[Tensor], weights: Option<&Tensor>| -> (f64, Vec<Tensor>, Tensor) {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = values.iter().map(|t| tape.leaf(t.clone()).unwrap()).collect();
        let y = build(&mut tape, &ids);
        let shape = tape.value(y).shape().to_vec();
        let r = weights.cloned().unwrap_or_else(|| Tensor::zeros(&shape));
        let r_id = tape.leaf(r.clone()).unwrap();
        let prod = tape.mul(y, r_id).unwrap();
        let total = tape.sum(prod).unwrap();
        let grads = tape.gradients(total, &ids).unwrap();
        (tape.value(total).data()[0], grads, r)
    };
    let (_, _, zeros) = eval(inputs, None);
    let weights = Tensor::new(
        zeros.shape().to_vec(),
        (0..zeros.len()).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap();
    let (value, grads, _) = eval(inputs, Some(&weights));
    let mut worst = 0.0f64;
    for (k, input) in inputs.iter().enumerate() {
        let coords: Vec<usize> = (0..input.len()).collect();
        let numeric = central_diff(
            |x| {
                let mut probe = inputs.to_vec();
                probe[k] = Tensor::new(input.shape().to_vec(), x.to_vec()).unwrap();
                eval(&probe, Some(&weights)).0
            },
            input.data(),
            &coords,
        );
        worst = worst.max(worst_ratio(grads[k].data(), &numeric, value));
    }
    worst
}

fn random_tensor(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.5..1.5)).collect()).unwrap()
}

/// Entries bounded away from zero so that relu is smooth nearby.
fn off_kink_tensor(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v: f64 = rng.random_range(0.1..1.5);
            if rng.random_bool(0.5) { v } else { -v }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Worst ratio per smooth primitive for one seed.
pub fn primitive_checks(seed: u64) -> Vec<(&'static str, f64)> {
    let mut rng = rng_from_seed(seed);
    let (r, k, c) = (rng.random_range(1..5), rng.random_range(1..5), rng.random_range(1..5));
    let mut out = Vec::new();
    let mut run = |name: &'static str, rng: &mut Rng64, inputs: Vec<Tensor>, build: &Build| {
        out.push((name, check_op(rng, &inputs, build)));
    };
    let (a, b) = (random_tensor(&mut rng, &[r, k]), random_tensor(&mut rng, &[k, c]));
    run("matmul", &mut rng, vec![a, b], &|t, x| t.matmul(x[0], x[1]).unwrap());
    let v = random_tensor(&mut rng, &[k, 1]);
    let m = random_tensor(&mut rng, &[r, k]);
    run("matmul_vector", &mut rng, vec![m, v], &|t, x| t.matmul(x[0], x[1]).unwrap());
    let (a, b) = (random_tensor(&mut rng, &[r, c]), random_tensor(&mut rng, &[r, c]));
    run("add", &mut rng, vec![a.clone(), b.clone()], &|t, x| t.add(x[0], x[1]).unwrap());
    run("sub", &mut rng, vec![a.clone(), b.clone()], &|t, x| t.sub(x[0], x[1]).unwrap());
    run("mul", &mut rng, vec![a.clone(), b], &|t, x| t.mul(x[0], x[1]).unwrap());
    let self_mul = a.clone();
    run("mul_shared", &mut rng, vec![self_mul], &|t, x| t.mul(x[0], x[0]).unwrap());
    let bias = random_tensor(&mut rng, &[c]);
    run("add_row_bias", &mut rng, vec![a.clone(), bias], &|t, x| t.add_row_bias(x[0], x[1]).unwrap());
    run("sigmoid", &mut rng, vec![a.clone()], &|t, x| t.sigmoid(x[0]).unwrap());
    run("tanh", &mut rng, vec![a.clone()], &|t, x| t.tanh(x[0]).unwrap());
    let away = off_kink_tensor(&mut rng, &[r, c]);
    run("relu", &mut rng, vec![away], &|t, x| t.relu(x[0]).unwrap());
    let factor = rng.random_range(-2.0..2.0);
    run("scale", &mut rng, vec![a.clone()], &move |t, x| t.scale(x[0], factor).unwrap());
    let right = random_tensor(&mut rng, &[r, k]);
    run("concat", &mut rng, vec![a.clone(), right], &|t, x| t.concat(x[0], x[1]).unwrap());
    let wide = random_tensor(&mut rng, &[r, c + 3]);
    run("slice_cols", &mut rng, vec![wide], &|t, x| t.slice_cols(x[0], 1, 2).unwrap());
    let flat = random_tensor(&mut rng, &[r * c + 2]);
    run("view", &mut rng, vec![flat], &move |t, x| t.view(x[0], 1, &[r, c]).unwrap());
    run("sum", &mut rng, vec![a.clone()], &|t, x| t.sum(x[0]).unwrap());
    run("mean", &mut rng, vec![a.clone()], &|t, x| t.mean(x[0]).unwrap());
    let labels: Vec<usize> = (0..r).map(|_| rng.random_range(0..c)).collect();
    run("softmax_cross_entropy", &mut rng, vec![a.clone()], &move |t, x| {
        t.softmax_cross_entropy(x[0], &labels).unwrap()
    });
    let (p, q) = (random_tensor(&mut rng, &[r, c]), random_tensor(&mut rng, &[r, c]));
    run("composite", &mut rng, vec![p, q], &|t, x| {
        let s = t.sigmoid(x[0]).unwrap();
        let h = t.tanh(x[1]).unwrap();
        let prod = t.mul(s, h).unwrap();
        let twice = t.scale(x[1], 2.0).unwrap();
        t.add(prod, twice).unwrap()
    });
    out
}

/// Worst ratio for each registered MLP loss on a random three-example
/// batch, checked at 40 random parameter coordinates. Also asserts that the
/// tape forward pass matches the loop oracle.
pub fn mlp_checks(seed: u64) -> Vec<(String, f64)> {
    let mut rng = rng_from_seed(seed);
    let mut out = Vec::new();
    for task in registry() {
        let TaskKind::Mlp { spec, .. } = &task.kind else {
            continue;
        };
        let small = MlpSpec::new(spec.layer_sizes.clone(), spec.activation, 3);
        let relu = spec.activation == Activation::Relu;
        let sizes = &small.layer_sizes;
        let (theta, images, labels) = loop {
            let theta = small.init_theta(rng.random());
            let images: Vec<f64> = (0..3 * sizes[0]).map(|_| rng.random_range(0.0..1.0)).collect();
            let labels: Vec<usize> = (0..3).map(|_| rng.random_range(0..sizes[sizes.len() - 1])).collect();
            let (_, pre) = mlp_forward(sizes, relu, &theta, &images, &labels);
            if !relu || pre.iter().all(|v| v.abs() > 1e-3) {
                break (theta, images, labels);
            }
        };
        let batch = StepData::Batch(Batch {
            images: Tensor::new(vec![3, sizes[0]], images.clone()).unwrap(),
            labels: labels.clone(),
        });
        let mut tape = Tape::new();
        let theta_id = tape.leaf(Tensor::vector(theta.clone())).unwrap();
        let loss = small.loss_node(&mut tape, theta_id, &batch).unwrap();
        let value = tape.value(loss).data()[0];
        let grad = tape.gradients(loss, &[theta_id]).unwrap().remove(0);
        let (oracle_value, _) = mlp_forward(sizes, relu, &theta, &images, &labels);
        assert!(
            (value - oracle_value).abs() <= 1e-12 * oracle_value.abs().max(1.0),
            "{}: tape loss {value} vs loop oracle {oracle_value}",
            task.name
        );
        let coords: Vec<usize> = (0..40).map(|_| rng.random_range(0..theta.len())).collect();
        let numeric = central_diff(|x| mlp_forward(sizes, relu, x, &images, &labels).0, &theta, &coords);
        let analytic: Vec<f64> = coords.iter().map(|&i| grad.data()[i]).collect();
        out.push((task.name.to_string(), worst_ratio(&analytic, &numeric, value)));
    }
    out
}

/// Parameters with every entry uniform in `[-0.5, 0.5]`.
pub fn random_params(seed: u64, rank: usize) -> LstmOptimizerParams {
    let mut params = LstmOptimizerParams::init(seed, rank);
    let mut rng = rng_from_seed(seed ^ 0x5eed);
    let flat: Vec<f64> = (0..params.param_count()).map(|_| rng.random_range(-0.5..0.5)).collect();
    params.set_from_flat(&flat).unwrap();
    params
}

/// Gradient of a random projection of the update with respect to the
/// flattened optimizer parameters on a three-coordinate input with nonzero
/// states. The finite differences run through the scalar LSTM oracle.
pub fn lstm_step_check(seed: u64) -> f64 {
    let rank = 1;
    let n = 3;
    let mut rng = rng_from_seed(seed);
    let params = random_params(seed, rank);
    let grad_features = random_tensor(&mut rng, &[n, 2]);
    let dmd: Vec<f64> = (0..2 * rank).map(|_| rng.random_range(-1.0..1.0)).collect();
    let input = OptimizerInput::new(grad_features, dmd);
    let h = HIDDEN_SIZE;
    let states = CoordValues {
        h1: random_tensor(&mut rng, &[n, h]),
        c1: random_tensor(&mut rng, &[n, h]),
        h2: random_tensor(&mut rng, &[n, h]),
        c2: random_tensor(&mut rng, &[n, h]),
    };
    let r: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();

    let mut tape = Tape::new();
    let bound = params.bind(&mut tape).unwrap();
    let coords = states.bind(&mut tape).unwrap();
    let (update, _) = optimizer_step(&mut tape, &bound, &input, &coords).unwrap();
    let r_id = tape.leaf(Tensor::vector(r.clone())).unwrap();
    let prod = tape.mul(update, r_id).unwrap();
    let total = tape.sum(prod).unwrap();
    let value = tape.value(total).data()[0];
    let analytic: Vec<f64> = tape
        .gradients(total, &bound.nodes())
        .unwrap()
        .into_iter()
        .flat_map(|g| g.into_data())
        .collect();

    let rows = input.assemble();
    let width = rows.shape()[1];
    let oracle = |flat: &[f64]| {
        let mut p = params.clone();
        p.set_from_flat(flat).unwrap();
        (0..n)
            .map(|j| {
                let mut s = ScalarState {
                    h1: states.h1.data()[j * h..(j + 1) * h].to_vec(),
                    c1: states.c1.data()[j * h..(j + 1) * h].to_vec(),
                    h2: states.h2.data()[j * h..(j + 1) * h].to_vec(),
                    c2: states.c2.data()[j * h..(j + 1) * h].to_vec(),
                };
                r[j] * scalar_lstm_step(&p, &rows.data()[j * width..(j + 1) * width], &mut s)
            })
            .sum::<f64>()
    };
    let flat = params.flatten();
    assert!((oracle(&flat) - value).abs() <= 1e-12 * value.abs().max(1.0), "LSTM forward disagrees with the scalar oracle");
    let coords: Vec<usize> = (0..flat.len()).collect();
    let numeric = central_diff(oracle, &flat, &coords);
    worst_ratio(&analytic, &numeric, value)
}

/// Meta-gradient of an unroll of `len >= 2` steps on a quadratic with DMD
/// features active from the second step, against central differences of
/// the same unroll with the recorded optimizer inputs held fixed.
pub fn meta_loss_check(seed: u64, len: usize) -> f64 {
    let k = 4;
    let mut task = QuadraticTask::sample(seed, k);
    let theta0 = task.init_theta(seed.wrapping_add(1));
    let params = random_params(seed, 1);
    let dmd = DmdConfig::new(1, 1).unwrap();
    let weights: Vec<f64> = (0..len).map(|t| 1.0 - 0.3 * t as f64 / len as f64).collect();
    let mut state = RolloutState::new(theta0.clone(), HIDDEN_SIZE, 1);
    let mut log = TrajectoryLog::new();
    let outcome = unroll_segment(&params, Some(&dmd), &mut task, &mut state, len, &weights, &mut log).unwrap();
    assert!(outcome.inputs[0].dmd_features.iter().all(|&v| v == 0.0));
    assert!(outcome.inputs[1].dmd_features.iter().any(|&v| v != 0.0), "features must be live at step 2");

    let (w, y) = (task.w.data().to_vec(), task.y.data().to_vec());
    let rows: Vec<Tensor> = outcome.inputs.iter().map(|i| i.assemble()).collect();
    let oracle = |flat: &[f64]| {
        let mut p = params.clone();
        p.set_from_flat(flat).unwrap();
        let mut theta = theta0.clone();
        let mut states = vec![ScalarState::zeros(HIDDEN_SIZE); k];
        let mut meta = 0.0;
        for (t, x) in rows.iter().enumerate() {
            meta += weights[t] * quadratic_loss(&w, &y, &theta);
            let width = x.shape()[1];
            for j in 0..k {
                theta[j] += scalar_lstm_step(&p, &x.data()[j * width..(j + 1) * width], &mut states[j]);
            }
        }
        meta
    };
    let flat = params.flatten();
    let value = oracle(&flat);
    assert!(
        (value - outcome.meta_loss).abs() <= 1e-12 * value.abs().max(1.0),
        "meta-loss {} vs oracle {value}",
        outcome.meta_loss
    );
    let coords: Vec<usize> = (0..flat.len()).collect();
    let numeric = central_diff(oracle, &flat, &coords);
    worst_ratio(&outcome.grads, &numeric, value)
}
