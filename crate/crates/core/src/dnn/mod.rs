//! Joint-state posterior network: a sigmoid feed-forward stack whose last
//! layer has one unit per joint state `(sᵃ, sᵇ)`, followed by a fixed
//! marginalization layer of row and column sums.

mod io;
mod rbm;
mod train;

pub use io::{read_net, read_training_log, write_net, write_training_log};
pub use rbm::{rbm_train_pcd, reconstruction_cross_entropy, RbmHyper, RbmLayer, VisibleKind};
pub use train::{
    init_labels_vts, train_finetune_phase, train_init_phase, EpochLog, SgdHyper, TrainSet,
};

use ndarray::{Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{check_dim, Error, Result};
use crate::features::{compose_dnn_matrix, DnnInputSpec, FeatureSequence, Standardization};
use crate::jointlik::JointStateTensor;
use crate::numeric::sigmoid;

/// Hidden sizes of the desk preset; the top layer is wider than the 121-unit joint layer.
pub const DESK_HIDDEN: [usize; 3] = [64, 64, 256];
/// Generative-phase hidden sizes of the full-size configuration.
pub const FULL_HIDDEN: [usize; 4] = [2025, 2500, 3600, 5625];
/// States per chain in the full-size configuration (40 × 40 = 1600 joint units).
pub const FULL_STATES_PER_CHAIN: usize = 40;

/// One affine sigmoid layer; `weights` is inputs × outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Layer {
    pub fn n_in(&self) -> usize {
        self.weights.nrows()
    }

    pub fn n_out(&self) -> usize {
        self.weights.ncols()
    }

    fn activate(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut z = x.dot(&self.weights);
        z += &self.bias;
        z.mapv_inplace(sigmoid);
        z
    }
}

/// How far through generative → init → finetune a net has been trained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Generative,
    Init,
    Finetune,
}

impl Stage {
    pub fn as_str(&self) -> &'static str {
        match self {
            Stage::Generative => "generative",
            Stage::Init => "init",
            Stage::Finetune => "finetune",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "generative" => Some(Stage::Generative),
            "init" => Some(Stage::Init),
            "finetune" => Some(Stage::Finetune),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointPosteriorNet {
    pub layers: Vec<Layer>,
    /// `(|sᵃ|, |sᵇ|)`; outputs are row-major with rows indexed by `sᵃ`.
    pub joint_shape: (usize, usize),
    pub input_spec: DnnInputSpec,
    pub standardization: Standardization,
    pub stage: Stage,
}

/// Sigmoid stack of pre-trained weights and hidden biases; visible biases are dropped.
pub fn stack_dbn(rbms: &[RbmLayer]) -> Result<Vec<Layer>> {
    if rbms.is_empty() {
        return Err(Error::Argument("no layers to stack".into()));
    }
    for w in rbms.windows(2) {
        if w[0].n_hidden() != w[1].n_visible() {
            return Err(Error::Argument(format!(
                "layer with {} hidden units cannot feed {} visible units",
                w[0].n_hidden(),
                w[1].n_visible()
            )));
        }
    }
    Ok(rbms
        .iter()
        .map(|r| Layer {
            weights: r.weights.clone(),
            bias: r.hidden_bias.clone(),
        })
        .collect())
}

impl JointPosteriorNet {
    /// Puts a randomly initialized joint-state layer on top of a pre-trained stack.
    /// Its biases start at `logit(1/n_joint)`.
    pub fn from_stack(
        stack: Vec<Layer>,
        joint_shape: (usize, usize),
        input_spec: DnnInputSpec,
        standardization: Standardization,
        seed: u64,
    ) -> Result<Self> {
        let n_in = stack.first().map_or(input_spec.dim(), Layer::n_in);
        check_dim("network input", input_spec.dim(), n_in)?;
        check_dim("standardization", input_spec.continuous_dim(), standardization.mean.len())?;
        let top = stack.last().map_or(n_in, Layer::n_out);
        let n_joint = joint_shape.0 * joint_shape.1;
        if n_joint == 0 {
            return Err(Error::Argument("empty joint state space".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 0.01).expect("valid std");
        // outputs start near the uniform posterior 1/n_joint rather than 1/2
        let prior = 1.0 / n_joint as f64;
        let mut layers = stack;
        layers.push(Layer {
            weights: Array2::from_shape_simple_fn((top, n_joint), || normal.sample(&mut rng)),
            bias: Array1::from_elem(n_joint, (prior / (1.0 - prior).max(f64::EPSILON)).ln()),
        });
        let net = Self {
            layers,
            joint_shape,
            input_spec,
            standardization,
            stage: Stage::Generative,
        };
        net.validate()?;
        Ok(net)
    }

    pub fn validate(&self) -> Result<()> {
        let Some(first) = self.layers.first() else {
            return Err(Error::Argument("network has no layers".into()));
        };
        check_dim("network input", self.input_spec.dim(), first.n_in())?;
        for w in self.layers.windows(2) {
            check_dim("layer chaining", w[0].n_out(), w[1].n_in())?;
        }
        for l in &self.layers {
            check_dim("bias", l.n_out(), l.bias.len())?;
            if !l.weights.iter().chain(l.bias.iter()).all(|v| v.is_finite()) {
                return Err(Error::Argument("non-finite network parameter".into()));
            }
        }
        check_dim(
            "joint layer",
            self.joint_shape.0 * self.joint_shape.1,
            self.layers.last().expect("non-empty").n_out(),
        )
    }

    pub fn n_joint(&self) -> usize {
        self.joint_shape.0 * self.joint_shape.1
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Layer-L outputs for a batch of input rows (one row of `|sᵃ|·|sᵇ|` per input row).
    pub fn forward_batch(&self, inputs: &Array2<f64>) -> Result<Array2<f64>> {
        check_dim("network input", self.layers[0].n_in(), inputs.ncols())?;
        let mut a = self.layers[0].activate(inputs);
        for l in &self.layers[1..] {
            a = l.activate(&a);
        }
        Ok(a)
    }

    /// Every layer's activations, input first.
    pub(crate) fn activations(&self, inputs: &Array2<f64>) -> Vec<Array2<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(inputs.clone());
        for l in &self.layers {
            let next = l.activate(acts.last().expect("non-empty"));
            acts.push(next);
        }
        acts
    }
}

impl JointPosteriorNet {
    /// A net with N(0, `std`²) weights and biases and no pre-training, for tests and checks.
    pub fn random(
        input_spec: DnnInputSpec,
        hidden: &[usize],
        joint_shape: (usize, usize),
        std: f64,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, std).map_err(|e| Error::Argument(e.to_string()))?;
        let mut dims = vec![input_spec.dim()];
        dims.extend_from_slice(hidden);
        dims.push(joint_shape.0 * joint_shape.1);
        let layers = dims
            .windows(2)
            .map(|w| Layer {
                weights: Array2::from_shape_simple_fn((w[0], w[1]), || normal.sample(&mut rng)),
                bias: Array1::from_shape_simple_fn(w[1], || normal.sample(&mut rng)),
            })
            .collect();
        let standardization = Standardization::identity(input_spec.continuous_dim());
        let net = Self {
            layers,
            joint_shape,
            input_spec,
            standardization,
            stage: Stage::Generative,
        };
        net.validate()?;
        Ok(net)
    }
}

/// Largest relative error between back-propagated parameter gradients and
/// five-point central differences of the loss returned by `objective`.
///
/// Relative error is `|g − ĝ| / max(|g|, |ĝ|, 1e-8)`.
pub fn gradient_check<F>(net: &JointPosteriorNet, inputs: &Array2<f64>, objective: F, step: f64) -> Result<f64>
where
    F: Fn(&Array2<f64>) -> Result<(f64, Array2<f64>)>,
{
    let (_, grads) = backprop(net, inputs, &objective)?;
    let loss_at = |n: &JointPosteriorNet| -> Result<f64> { Ok(objective(&n.forward_batch(inputs)?)?.0) };
    let mut probe = net.clone();
    let mut worst: f64 = 0.0;
    for l in 0..net.layers.len() {
        let n_w = net.layers[l].weights.len();
        for p in 0..n_w + net.layers[l].bias.len() {
            let analytic = if p < n_w {
                grads[l].weights.as_slice().expect("standard layout")[p]
            } else {
                grads[l].bias[p - n_w]
            };
            let mut at = |delta: f64| -> Result<f64> {
                let layer = &mut probe.layers[l];
                let slot = if p < n_w {
                    &mut layer.weights.as_slice_mut().expect("standard layout")[p]
                } else {
                    &mut layer.bias[p - n_w]
                };
                let orig = *slot;
                *slot = orig + delta;
                let v = loss_at(&probe);
                let layer = &mut probe.layers[l];
                if p < n_w {
                    layer.weights.as_slice_mut().expect("standard layout")[p] = orig;
                } else {
                    layer.bias[p - n_w] = orig;
                }
                v
            };
            let numeric = (-at(2.0 * step)? + 8.0 * at(step)? - 8.0 * at(-step)? + at(-2.0 * step)?) / (12.0 * step);
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

/// X for one input vector, `|sᵃ| × |sᵇ|`.
pub fn forward(net: &JointPosteriorNet, input: &[f64]) -> Result<Array2<f64>> {
    let x = Array2::from_shape_vec((1, input.len()), input.to_vec()).expect("one row");
    let out = net.forward_batch(&x)?;
    Ok(out
        .into_shape_with_order(net.joint_shape)
        .expect("joint layer matches joint shape"))
}

/// Row sums and column sums.
pub fn marginalize(x: &Array2<f64>) -> (Array1<f64>, Array1<f64>) {
    (x.sum_axis(Axis(1)), x.sum_axis(Axis(0)))
}

fn check_marginal_shapes(x: &Array2<f64>, dm_a: &[f64], dm_b: &[f64]) -> Result<()> {
    check_dim("target marginal a", x.nrows(), dm_a.len())?;
    check_dim("target marginal b", x.ncols(), dm_b.len())
}

/// `½(‖mᵃ−dmᵃ‖² + ‖mᵇ−dmᵇ‖²)` with `(mᵃ, mᵇ) = marginalize(X)`.
pub fn finetune_loss(x: &Array2<f64>, dm_a: &[f64], dm_b: &[f64]) -> Result<f64> {
    check_marginal_shapes(x, dm_a, dm_b)?;
    let (ma, mb) = marginalize(x);
    let ea: f64 = ma.iter().zip(dm_a).map(|(m, d)| (m - d).powi(2)).sum();
    let eb: f64 = mb.iter().zip(dm_b).map(|(m, d)| (m - d).powi(2)).sum();
    Ok(0.5 * (ea + eb))
}

/// `∂J/∂X(i,j) = (mᵃ(i)−dmᵃ(i)) + (mᵇ(j)−dmᵇ(j))`.
pub fn finetune_output_grad(x: &Array2<f64>, dm_a: &[f64], dm_b: &[f64]) -> Result<Array2<f64>> {
    check_marginal_shapes(x, dm_a, dm_b)?;
    let (ma, mb) = marginalize(x);
    Ok(Array2::from_shape_fn(x.dim(), |(i, j)| (ma[i] - dm_a[i]) + (mb[j] - dm_b[j])))
}

/// `½‖X − D‖²_F`.
pub fn init_loss(x: &Array2<f64>, d: &Array2<f64>) -> Result<f64> {
    check_dim("label rows", x.nrows(), d.nrows())?;
    check_dim("label columns", x.ncols(), d.ncols())?;
    Ok(0.5 * x.iter().zip(d).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
}

/// Parameter gradient of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Summed loss and parameter gradients over a batch.
///
/// `output_grad` maps the batch's layer-L outputs (one row per input) to the
/// summed loss and `∂loss/∂X` of the same shape.
pub fn backprop<F>(net: &JointPosteriorNet, inputs: &Array2<f64>, output_grad: F) -> Result<(f64, Vec<LayerGrad>)>
where
    F: FnOnce(&Array2<f64>) -> Result<(f64, Array2<f64>)>,
{
    check_dim("network input", net.layers[0].n_in(), inputs.ncols())?;
    let acts = net.activations(inputs);
    let out = acts.last().expect("non-empty");
    let (loss, g) = output_grad(out)?;
    check_dim("output gradient rows", out.nrows(), g.nrows())?;
    check_dim("output gradient columns", out.ncols(), g.ncols())?;
    let mut delta = g * &out.mapv(|a| a * (1.0 - a));
    let mut grads = Vec::with_capacity(net.layers.len());
    for l in (0..net.layers.len()).rev() {
        let below = &acts[l];
        grads.push(LayerGrad {
            weights: below.t().dot(&delta),
            bias: delta.sum_axis(Axis(0)),
        });
        if l > 0 {
            let back = delta.dot(&net.layers[l].weights.t());
            delta = back * &below.mapv(|a| a * (1.0 - a));
        }
    }
    grads.reverse();
    Ok((loss, grads))
}

/// Loss and `∂/∂X` of the init objective for a batch of flattened labels.
pub fn init_batch_objective(out: &Array2<f64>, labels: &Array2<f64>) -> Result<(f64, Array2<f64>)> {
    let loss = init_loss(out, labels)?;
    Ok((loss, out - labels))
}

/// Loss and `∂/∂X` of the marginal objective for a batch, with `grad` the per-sample output gradient.
pub fn finetune_batch_objective_with(
    out: &Array2<f64>,
    joint_shape: (usize, usize),
    dm_a: &Array2<f64>,
    dm_b: &Array2<f64>,
    grad: fn(&Array2<f64>, &[f64], &[f64]) -> Result<Array2<f64>>,
) -> Result<(f64, Array2<f64>)> {
    check_dim("marginal label rows", out.nrows(), dm_a.nrows())?;
    check_dim("marginal label rows", out.nrows(), dm_b.nrows())?;
    let mut g = Array2::zeros(out.dim());
    let mut loss = 0.0;
    for (k, row) in out.outer_iter().enumerate() {
        let x = row.to_owned().into_shape_with_order(joint_shape).map_err(|_| Error::Dimension {
            context: "joint layer",
            expected: joint_shape.0 * joint_shape.1,
            got: out.ncols(),
        })?;
        let a = dm_a.row(k).to_vec();
        let b = dm_b.row(k).to_vec();
        loss += finetune_loss(&x, &a, &b)?;
        let gx = grad(&x, &a, &b)?;
        g.row_mut(k).assign(&Array1::from_iter(gx.iter().copied()));
    }
    Ok((loss, g))
}

/// [`finetune_batch_objective_with`] using [`finetune_output_grad`].
pub fn finetune_batch_objective(
    out: &Array2<f64>,
    joint_shape: (usize, usize),
    dm_a: &Array2<f64>,
    dm_b: &Array2<f64>,
) -> Result<(f64, Array2<f64>)> {
    finetune_batch_objective_with(out, joint_shape, dm_a, dm_b, finetune_output_grad)
}

/// Posterior tensor for an utterance: forward every frame, renormalize each slice.
pub fn infer_joint_tensor(
    net: &JointPosteriorNet,
    mixed: &FeatureSequence,
    speaker_pair: (usize, usize),
    gain_db: f64,
) -> Result<JointStateTensor> {
    let inputs = compose_dnn_matrix(mixed, &net.input_spec, speaker_pair, gain_db, &net.standardization)?;
    let out = net.forward_batch(&inputs)?;
    let (a, b) = net.joint_shape;
    JointStateTensor::from_unnormalized(out.nrows(), a, b, out.into_raw_vec_and_offset().0)
}

#[cfg(test)]
mod tests;
