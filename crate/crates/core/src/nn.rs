//! Fully connected tanh networks with exact input derivatives.
//!
//! Two evaluation paths share the same parameters:
//!
//! * [`Network::evaluate`] pushes `(value, Jacobian, Hessian)` triples through
//!   the layers for a single input and returns full derivative tensors.
//! * [`Network::forward_jets`] / [`Network::backward_jets`] work on a batch in
//!   Taylor mode: for every point and every requested direction `v` it carries
//!   the value, `Du·v` and `vᵀ D²u v`, and back-propagates adjoints of all of
//!   them to the parameters. Each layer is one matrix product over the stacked
//!   channels, which is what keeps PINN training affordable.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, ArrayView2, ArrayViewMut2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("network needs an input layer, at least one hidden layer and an output layer; got sizes {0:?}")]
    InvalidSizes(Vec<usize>),
    #[error("input has length {got}, network expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("parameter vector has length {got}, network expects {expected}")]
    ParameterMismatch { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
}

/// Parameter layout: for each layer, the `n_out x n_in` weight matrix in
/// row-major order followed by the `n_out` biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    layer_sizes: Vec<usize>,
    activation: Activation,
    seed: u64,
    parameters: Vec<f64>,
}

/// Output of [`Network::evaluate`]. `jacobian[i][j] = d u_i / d x_j`,
/// `hessians[i][j][k] = d² u_i / d x_j d x_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalBundle {
    pub value: Vec<f64>,
    pub jacobian: Option<Vec<Vec<f64>>>,
    pub hessians: Option<Vec<Vec<Vec<f64>>>>,
}

/// Batched Taylor-mode quantities, one column per point:
/// `value` is `n_out x B`, `first[k]` and `second[k]` hold the first and second
/// directional derivatives along direction `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Jets {
    pub value: Array2<f64>,
    pub first: Vec<Array2<f64>>,
    pub second: Vec<Array2<f64>>,
}

impl Jets {
    pub fn zeros_like(other: &Jets) -> Jets {
        let z = |a: &Array2<f64>| Array2::zeros(a.raw_dim());
        Jets {
            value: z(&other.value),
            first: other.first.iter().map(z).collect(),
            second: other.second.iter().map(z).collect(),
        }
    }

    pub fn batch(&self) -> usize {
        self.value.ncols()
    }
}

/// Intermediate state kept by [`Network::forward_jets`] for the backward pass.
#[derive(Debug, Clone)]
pub struct JetTape {
    batch: usize,
    n_dir: usize,
    second: bool,
    /// Stacked input of each layer (`n_in x C*B`).
    inputs: Vec<Array2<f64>>,
    /// Stacked pre-activations of each hidden layer.
    pre: Vec<Array2<f64>>,
    /// tanh derivatives 1..3 at the value channel of each hidden layer (`n x B`).
    derivs: Vec<[Array2<f64>; 3]>,
}

impl Network {
    pub fn new(layer_sizes: &[usize], seed: u64) -> Result<Self, NnError> {
        if layer_sizes.len() < 3 || layer_sizes.contains(&0) {
            return Err(NnError::InvalidSizes(layer_sizes.to_vec()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut parameters = Vec::with_capacity(param_count(layer_sizes));
        for w in layer_sizes.windows(2) {
            let (n_in, n_out) = (w[0], w[1]);
            let bound = (6.0 / (n_in + n_out) as f64).sqrt();
            parameters.extend((0..n_in * n_out).map(|_| rng.random_range(-bound..bound)));
            parameters.extend(std::iter::repeat_n(0.0, n_out));
        }
        Ok(Network {
            layer_sizes: layer_sizes.to_vec(),
            activation: Activation::Tanh,
            seed,
            parameters,
        })
    }

    pub fn from_parts(layer_sizes: &[usize], seed: u64, parameters: Vec<f64>) -> Result<Self, NnError> {
        if layer_sizes.len() < 3 || layer_sizes.contains(&0) {
            return Err(NnError::InvalidSizes(layer_sizes.to_vec()));
        }
        let expected = param_count(layer_sizes);
        if parameters.len() != expected {
            return Err(NnError::ParameterMismatch {
                expected,
                got: parameters.len(),
            });
        }
        Ok(Network {
            layer_sizes: layer_sizes.to_vec(),
            activation: Activation::Tanh,
            seed,
            parameters,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn n_inputs(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn n_outputs(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn n_params(&self) -> usize {
        self.parameters.len()
    }

    pub fn parameters(&self) -> &[f64] {
        &self.parameters
    }

    pub fn parameters_mut(&mut self) -> &mut [f64] {
        &mut self.parameters
    }

    pub fn set_parameters(&mut self, p: &[f64]) {
        self.parameters.copy_from_slice(p);
    }

    /// `(weight offset, bias offset)` of each layer in the flat vector.
    pub fn layer_offsets(&self) -> Vec<(usize, usize)> {
        let mut off = 0;
        self.layer_sizes
            .windows(2)
            .map(|w| {
                let wo = off;
                off += w[0] * w[1];
                let bo = off;
                off += w[1];
                (wo, bo)
            })
            .collect()
    }

    fn weights(&self, layer: usize) -> ArrayView2<'_, f64> {
        let (n_in, n_out) = (self.layer_sizes[layer], self.layer_sizes[layer + 1]);
        let (wo, _) = self.layer_offsets()[layer];
        ArrayView2::from_shape((n_out, n_in), &self.parameters[wo..wo + n_in * n_out]).unwrap()
    }

    fn biases(&self, layer: usize) -> &[f64] {
        let n_out = self.layer_sizes[layer + 1];
        let (_, bo) = self.layer_offsets()[layer];
        &self.parameters[bo..bo + n_out]
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("network serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        let net: Network = serde_json::from_str(text)?;
        if net.parameters.len() != param_count(&net.layer_sizes) {
            return Err(serde::de::Error::custom("parameter count does not match layer sizes"));
        }
        Ok(net)
    }

    /// Evaluate one input. `order` 0 gives the value, 1 adds the input
    /// Jacobian, 2 adds the input Hessians.
    pub fn evaluate(&self, input: &[f64], order: u8) -> Result<EvalBundle, NnError> {
        let n_in = self.n_inputs();
        if input.len() != n_in {
            return Err(NnError::DimensionMismatch {
                expected: n_in,
                got: input.len(),
            });
        }
        let order = order.min(2);
        let mut h = input.to_vec();
        let mut jac: Vec<Vec<f64>> = (0..n_in)
            .map(|i| (0..n_in).map(|j| f64::from(u8::from(i == j))).collect())
            .collect();
        let mut hess: Vec<Vec<Vec<f64>>> = vec![vec![vec![0.0; n_in]; n_in]; n_in];
        let n_layers = self.layer_sizes.len() - 1;
        for l in 0..n_layers {
            let w = self.weights(l);
            let b = self.biases(l);
            let n_out = b.len();
            let mut a = b.to_vec();
            let mut ja = vec![vec![0.0; n_in]; n_out];
            let mut ha = vec![vec![vec![0.0; n_in]; n_in]; n_out];
            for o in 0..n_out {
                for (i, &wi) in w.row(o).iter().enumerate() {
                    a[o] += wi * h[i];
                    if order >= 1 {
                        for p in 0..n_in {
                            ja[o][p] += wi * jac[i][p];
                        }
                    }
                    if order >= 2 {
                        for p in 0..n_in {
                            for q in p..n_in {
                                ha[o][p][q] += wi * hess[i][p][q];
                            }
                        }
                    }
                }
            }
            if l + 1 == n_layers {
                h = a;
                jac = ja;
                hess = ha;
                break;
            }
            h = Vec::with_capacity(n_out);
            jac = vec![vec![0.0; n_in]; n_out];
            hess = vec![vec![vec![0.0; n_in]; n_in]; n_out];
            for o in 0..n_out {
                let t = a[o].tanh();
                let s1 = 1.0 - t * t;
                let s2 = -2.0 * t * s1;
                h.push(t);
                if order >= 1 {
                    for p in 0..n_in {
                        jac[o][p] = s1 * ja[o][p];
                    }
                }
                if order >= 2 {
                    for p in 0..n_in {
                        for q in p..n_in {
                            hess[o][p][q] = s2 * ja[o][p] * ja[o][q] + s1 * ha[o][p][q];
                        }
                    }
                }
            }
        }
        if order >= 2 {
            for m in &mut hess {
                for p in 0..n_in {
                    for q in 0..p {
                        m[p][q] = m[q][p];
                    }
                }
            }
        }
        Ok(EvalBundle {
            value: h,
            jacobian: (order >= 1).then_some(jac),
            hessians: (order >= 2).then_some(hess),
        })
    }

    /// Batched Taylor-mode forward pass. `inputs` is `n_in x B`; each entry of
    /// `directions` is `n_in x B` (one direction per point). Second directional
    /// derivatives are carried when `second` is set.
    pub fn forward_jets(
        &self,
        inputs: ArrayView2<'_, f64>,
        directions: &[ArrayView2<'_, f64>],
        second: bool,
    ) -> (Jets, JetTape) {
        let n_in = self.n_inputs();
        let batch = inputs.ncols();
        let nd = directions.len();
        assert_eq!(inputs.nrows(), n_in, "input rows must equal the network input size");
        let channels = 1 + nd + if second { nd } else { 0 };

        let mut h = Array2::<f64>::zeros((n_in, channels * batch));
        h.slice_mut(s![.., 0..batch]).assign(&inputs);
        for (k, d) in directions.iter().enumerate() {
            assert_eq!(d.dim(), (n_in, batch), "direction shape must match inputs");
            h.slice_mut(s![.., (1 + k) * batch..(2 + k) * batch]).assign(d);
        }

        let n_layers = self.layer_sizes.len() - 1;
        let mut tape = JetTape {
            batch,
            n_dir: nd,
            second,
            inputs: Vec::with_capacity(n_layers),
            pre: Vec::with_capacity(n_layers - 1),
            derivs: Vec::with_capacity(n_layers - 1),
        };
        for l in 0..n_layers {
            let w = self.weights(l);
            let b = self.biases(l);
            let n_out = b.len();
            let mut a = w.dot(&h);
            for (o, mut row) in a.axis_iter_mut(Axis(0)).enumerate() {
                row.slice_mut(s![0..batch]).mapv_inplace(|v| v + b[o]);
            }
            tape.inputs.push(h);
            if l + 1 == n_layers {
                let block = |c: usize| a.slice(s![.., c * batch..(c + 1) * batch]).to_owned();
                let jets = Jets {
                    value: block(0),
                    first: (0..nd).map(|k| block(1 + k)).collect(),
                    second: if second {
                        (0..nd).map(|k| block(1 + nd + k)).collect()
                    } else {
                        Vec::new()
                    },
                };
                return (jets, tape);
            }
            let cb = channels * batch;
            let mut s1 = Array2::<f64>::zeros((n_out, batch));
            let mut s2 = Array2::<f64>::zeros((n_out, batch));
            let mut s3 = Array2::<f64>::zeros((n_out, batch));
            let mut hn = Array2::<f64>::zeros((n_out, cb));
            {
                let a_s = a.as_slice().unwrap();
                let hn_s = hn.as_slice_mut().unwrap();
                let (s1_s, s2_s, s3_s) = (
                    s1.as_slice_mut().unwrap(),
                    s2.as_slice_mut().unwrap(),
                    s3.as_slice_mut().unwrap(),
                );
                for o in 0..n_out {
                    let row = o * cb;
                    for p in 0..batch {
                        let t = a_s[row + p].tanh();
                        let d1 = 1.0 - t * t;
                        let d2 = -2.0 * t * d1;
                        let d3 = -2.0 * d1 * d1 + 4.0 * t * t * d1;
                        let q = o * batch + p;
                        s1_s[q] = d1;
                        s2_s[q] = d2;
                        s3_s[q] = d3;
                        hn_s[row + p] = t;
                        for k in 0..nd {
                            let f = row + (1 + k) * batch + p;
                            hn_s[f] = d1 * a_s[f];
                            if second {
                                let sc = row + (1 + nd + k) * batch + p;
                                hn_s[sc] = d2 * a_s[f] * a_s[f] + d1 * a_s[sc];
                            }
                        }
                    }
                }
            }
            tape.pre.push(a);
            tape.derivs.push([s1, s2, s3]);
            h = hn;
        }
        unreachable!("network has an output layer")
    }

    /// Accumulate into `grad` the parameter gradient of a scalar loss whose
    /// derivatives with respect to the jets of the forward pass are `adjoint`.
    pub fn backward_jets(&self, tape: &JetTape, adjoint: &Jets, grad: &mut [f64]) {
        assert_eq!(grad.len(), self.n_params());
        let batch = tape.batch;
        let nd = tape.n_dir;
        let second = tape.second;
        let channels = 1 + nd + if second { nd } else { 0 };
        let cb = channels * batch;
        let n_out = self.n_outputs();

        let mut abar = Array2::<f64>::zeros((n_out, cb));
        abar.slice_mut(s![.., 0..batch]).assign(&adjoint.value);
        for k in 0..nd {
            abar.slice_mut(s![.., (1 + k) * batch..(2 + k) * batch])
                .assign(&adjoint.first[k]);
            if second {
                abar.slice_mut(s![.., (1 + nd + k) * batch..(2 + nd + k) * batch])
                    .assign(&adjoint.second[k]);
            }
        }

        let offsets = self.layer_offsets();
        let n_layers = self.layer_sizes.len() - 1;
        for l in (0..n_layers).rev() {
            let (n_in_l, n_out_l) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let (wo, bo) = offsets[l];
            {
                let gw = &mut grad[wo..wo + n_in_l * n_out_l];
                let mut gw = ArrayViewMut2::from_shape((n_out_l, n_in_l), gw).unwrap();
                general_mat_mul(1.0, &abar, &tape.inputs[l].t(), 1.0, &mut gw);
            }
            for (o, row) in abar.axis_iter(Axis(0)).enumerate() {
                grad[bo + o] += row.slice(s![0..batch]).sum();
            }
            if l == 0 {
                break;
            }
            let hbar = self.weights(l).t().dot(&abar);
            // Through the activation of layer l-1.
            let pre = &tape.pre[l - 1];
            let [s1, s2, s3] = &tape.derivs[l - 1];
            let n = n_in_l;
            let mut prev = Array2::<f64>::zeros((n, cb));
            {
                let hb = hbar.as_slice().unwrap();
                let a = pre.as_slice().unwrap();
                let (s1, s2, s3) = (s1.as_slice().unwrap(), s2.as_slice().unwrap(), s3.as_slice().unwrap());
                let out = prev.as_slice_mut().unwrap();
                for o in 0..n {
                    let row = o * cb;
                    for p in 0..batch {
                        let q = o * batch + p;
                        let (d1, d2, d3) = (s1[q], s2[q], s3[q]);
                        let mut v = hb[row + p] * d1;
                        for k in 0..nd {
                            let f = row + (1 + k) * batch + p;
                            v += hb[f] * d2 * a[f];
                            let mut fb = hb[f] * d1;
                            if second {
                                let sc = row + (1 + nd + k) * batch + p;
                                v += hb[sc] * (d3 * a[f] * a[f] + d2 * a[sc]);
                                fb += hb[sc] * 2.0 * d2 * a[f];
                                out[sc] = hb[sc] * d1;
                            }
                            out[f] = fb;
                        }
                        out[row + p] = v;
                    }
                }
            }
            abar = prev;
        }
    }

    /// Value and parameter gradient of a scalar loss of the batch jets.
    /// `loss` receives the jets and returns the loss value with its adjoint.
    pub fn loss_gradient<F>(
        &self,
        inputs: ArrayView2<'_, f64>,
        directions: &[ArrayView2<'_, f64>],
        second: bool,
        loss: F,
    ) -> (f64, Vec<f64>)
    where
        F: FnOnce(&Jets) -> (f64, Jets),
    {
        let (jets, tape) = self.forward_jets(inputs, directions, second);
        let (value, adjoint) = loss(&jets);
        let mut grad = vec![0.0; self.n_params()];
        self.backward_jets(&tape, &adjoint, &mut grad);
        (value, grad)
    }
}

pub fn param_count(layer_sizes: &[usize]) -> usize {
    layer_sizes.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
}
