use super::{Architecture, OmegaMatrix, ParamSet, Theta};
use crate::error::{Error, Result};
use crate::numerics::{matmul_into, matmul_t_into, Matrix};

/// Per-layer quantities of one forward pass over a single input.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace {
    pub preactivations: Vec<Vec<f64>>,
    pub activations: Vec<Vec<f64>>,
    pub layer_outputs: Vec<Vec<f64>>,
    pub output: Vec<f64>,
}

/// Forward pass over a batch; row `i` of every matrix belongs to input `i`.
#[derive(Clone, Debug)]
pub struct BatchTrace {
    pub inputs: Matrix,
    pub preactivations: Vec<Matrix>,
    pub activations: Vec<Matrix>,
    pub layer_outputs: Vec<Matrix>,
    pub output: Matrix,
}

impl BatchTrace {
    fn example(&self, i: usize) -> ForwardTrace {
        ForwardTrace {
            preactivations: self.preactivations.iter().map(|m| m.row(i).to_vec()).collect(),
            activations: self.activations.iter().map(|m| m.row(i).to_vec()).collect(),
            layer_outputs: self.layer_outputs.iter().map(|m| m.row(i).to_vec()).collect(),
            output: self.output.row(i).to_vec(),
        }
    }
}

/// Hidden-layer recursion and per-layer readouts for a batch, without the Ω
/// combination.
pub(crate) fn hidden_pass(theta: &Theta, arch: &Architecture, x: &Matrix) -> Result<BatchTrace> {
    if x.cols() != arch.input_dim {
        return Err(Error::shape(
            "forward",
            format!("input has {} features, expected {}", x.cols(), arch.input_dim),
        ));
    }
    theta.check_shape(arch)?;
    let batch = x.rows();
    let n = arch.width;
    let bias_scale = arch.bias_scale();
    let readout_scale = arch.readout_scale();
    let mut pre = Vec::with_capacity(arch.depth);
    let mut act: Vec<Matrix> = Vec::with_capacity(arch.depth);
    let mut outs = Vec::with_capacity(arch.depth);
    for l in 0..arch.depth {
        let input = if l == 0 { x } else { &act[l - 1] };
        let mut g = Matrix::zeros(batch, n);
        matmul_into(input, &theta.weights[l], &mut g);
        let w_scale = arch.weight_scale(l);
        let bias = &theta.biases[l];
        for r in 0..batch {
            for (v, &b) in g.row_mut(r).iter_mut().zip(bias) {
                *v = w_scale * *v + bias_scale * b;
            }
        }
        let h = g.map(|v| arch.activation.apply(v));
        let mut f = Matrix::zeros(batch, arch.output_dim);
        matmul_into(&h, &theta.readouts[l], &mut f);
        if readout_scale != 1.0 {
            f.as_mut_slice().iter_mut().for_each(|v| *v *= readout_scale);
        }
        pre.push(g);
        act.push(h);
        outs.push(f);
    }
    Ok(BatchTrace {
        inputs: x.clone(),
        preactivations: pre,
        activations: act,
        layer_outputs: outs,
        output: Matrix::zeros(batch, arch.output_dim),
    })
}

/// Batched forward pass including the Ω-weighted combination.
pub fn forward_batch(
    theta: &Theta,
    arch: &Architecture,
    omega: &OmegaMatrix,
    x: &Matrix,
) -> Result<BatchTrace> {
    omega.check_shape(arch)?;
    let mut trace = hidden_pass(theta, arch, x)?;
    trace.output = combine_batch(&trace.layer_outputs, omega)?;
    Ok(trace)
}

/// Forward pass for one input vector.
pub fn forward(
    params: &ParamSet,
    arch: &Architecture,
    omega: &OmegaMatrix,
    x: &[f64],
) -> Result<ForwardTrace> {
    let xm = Matrix::from_vec(1, x.len(), x.to_vec())?;
    Ok(forward_batch(&params.theta, arch, omega, &xm)?.example(0))
}

/// Network outputs for every row of `x`.
pub fn predict(theta: &Theta, arch: &Architecture, omega: &OmegaMatrix, x: &Matrix) -> Result<Matrix> {
    Ok(forward_batch(theta, arch, omega, x)?.output)
}

/// Plain MLP output `V^(L) h^(L)(x)`: the readout of the last layer only.
pub fn mlp_output(params: &ParamSet, arch: &Architecture, x: &[f64]) -> Result<Vec<f64>> {
    let xm = Matrix::from_vec(1, x.len(), x.to_vec())?;
    let trace = hidden_pass(&params.theta, arch, &xm)?;
    Ok(trace.layer_outputs[arch.depth - 1].row(0).to_vec())
}

/// `output[c] = Σ_ℓ Ω[c, ℓ] · layer_outputs[ℓ][c]`, summed in layer order.
pub fn combine(layer_outputs: &[Vec<f64>], omega: &OmegaMatrix) -> Result<Vec<f64>> {
    if layer_outputs.len() != omega.depth() {
        return Err(Error::shape(
            "combine",
            format!("{} layer outputs for omega with {} layers", layer_outputs.len(), omega.depth()),
        ));
    }
    let d = omega.classes();
    if let Some(bad) = layer_outputs.iter().find(|f| f.len() != d) {
        return Err(Error::shape(
            "combine",
            format!("layer output of length {}, expected {d}", bad.len()),
        ));
    }
    Ok((0..d)
        .map(|c| {
            layer_outputs
                .iter()
                .enumerate()
                .fold(0.0, |acc, (l, f)| acc + omega.get(c, l) * f[c])
        })
        .collect())
}

fn combine_batch(layer_outputs: &[Matrix], omega: &OmegaMatrix) -> Result<Matrix> {
    let batch = layer_outputs[0].rows();
    let d = omega.classes();
    let mut out = Matrix::zeros(batch, d);
    for i in 0..batch {
        for c in 0..d {
            let mut acc = 0.0;
            for (l, f) in layer_outputs.iter().enumerate() {
                acc += omega.get(c, l) * f[(i, c)];
            }
            out[(i, c)] = acc;
        }
    }
    Ok(out)
}

/// Gradients of the batch loss.
#[derive(Clone, Debug)]
pub struct Gradients {
    pub theta: Theta,
    pub omega: Matrix,
    pub loss: f64,
    /// Network outputs for the batch, before the update.
    pub outputs: Matrix,
}

/// Gradients of the hidden-layer preactivations, `∂(·)/∂g^(ℓ)` per layer.
pub(crate) struct Deltas {
    pub preact: Vec<Matrix>,
}

/// Backpropagates upstream gradients `∂(·)/∂f^(ℓ)` (one `batch × d` matrix
/// per layer) down to every preactivation.
pub(crate) fn backprop_deltas(
    theta: &Theta,
    arch: &Architecture,
    trace: &BatchTrace,
    upstream: &[Matrix],
) -> Deltas {
    let depth = arch.depth;
    let batch = trace.inputs.rows();
    let n = arch.width;
    let readout_scale = arch.readout_scale();
    let mut preact: Vec<Matrix> = (0..depth).map(|_| Matrix::zeros(0, 0)).collect();
    let mut carry: Option<Matrix> = None;
    let mut tmp = Matrix::zeros(batch, n);
    for l in (0..depth).rev() {
        // ∂/∂h^(ℓ) from this layer's readout
        matmul_t_into(&upstream[l], &theta.readouts[l], &mut tmp);
        let mut dh = tmp.scale(readout_scale);
        if let Some(c) = carry.take() {
            for (a, b) in dh.as_mut_slice().iter_mut().zip(c.as_slice()) {
                *a += b;
            }
        }
        let g = &trace.preactivations[l];
        for (v, &gv) in dh.as_mut_slice().iter_mut().zip(g.as_slice()) {
            *v *= arch.activation.derivative(gv);
        }
        if l > 0 {
            let mut below = Matrix::zeros(batch, arch.fan_in(l));
            matmul_t_into(&dh, &theta.weights[l], &mut below);
            let s = arch.weight_scale(l);
            below.as_mut_slice().iter_mut().for_each(|v| *v *= s);
            carry = Some(below);
        }
        preact[l] = dh;
    }
    Deltas { preact }
}

/// Assembles θ-gradients from preactivation deltas and readout upstreams.
pub(crate) fn assemble_theta_grad(
    arch: &Architecture,
    trace: &BatchTrace,
    deltas: &Deltas,
    upstream: &[Matrix],
) -> Theta {
    let mut grad = Theta::zeros(arch);
    let bias_scale = arch.bias_scale();
    let readout_scale = arch.readout_scale();
    for l in 0..arch.depth {
        let input = if l == 0 { &trace.inputs } else { &trace.activations[l - 1] };
        let dg = &deltas.preact[l];
        let input_t = input.transpose();
        matmul_into(&input_t, dg, &mut grad.weights[l]);
        let s = arch.weight_scale(l);
        if s != 1.0 {
            grad.weights[l].as_mut_slice().iter_mut().for_each(|v| *v *= s);
        }
        grad.biases[l] = dg.column_sums().into_iter().map(|v| v * bias_scale).collect();
        let h_t = trace.activations[l].transpose();
        matmul_into(&h_t, &upstream[l], &mut grad.readouts[l]);
        if readout_scale != 1.0 {
            grad.readouts[l].as_mut_slice().iter_mut().for_each(|v| *v *= readout_scale);
        }
    }
    grad
}

/// Mean squared error `(1/B) Σ ‖f(x) − y‖²` over the batch and its exact
/// gradients with respect to θ and Ω (data term only).
pub fn backward(
    theta: &Theta,
    arch: &Architecture,
    omega: &OmegaMatrix,
    x: &Matrix,
    y: &Matrix,
) -> Result<Gradients> {
    if x.rows() == 0 {
        return Err(Error::Argument("empty batch".into()));
    }
    if y.shape() != (x.rows(), arch.output_dim) {
        return Err(Error::shape(
            "backward",
            format!("labels are {}x{}, expected {}x{}", y.rows(), y.cols(), x.rows(), arch.output_dim),
        ));
    }
    let trace = forward_batch(theta, arch, omega, x)?;
    let batch = x.rows();
    let d = arch.output_dim;
    let inv = 1.0 / batch as f64;

    let mut loss = 0.0;
    // residual gradient ∂loss/∂f = (2/B)(f − y)
    let mut df = Matrix::zeros(batch, d);
    for i in 0..batch {
        for c in 0..d {
            let r = trace.output[(i, c)] - y[(i, c)];
            loss += r * r;
            df[(i, c)] = 2.0 * inv * r;
        }
    }
    loss *= inv;

    let mut grad_omega = Matrix::zeros(d, arch.depth);
    for (l, f_l) in trace.layer_outputs.iter().enumerate() {
        for c in 0..d {
            let mut acc = 0.0;
            for i in 0..batch {
                acc += df[(i, c)] * f_l[(i, c)];
            }
            grad_omega[(c, l)] = acc;
        }
    }

    let upstream: Vec<Matrix> = (0..arch.depth)
        .map(|l| {
            let mut u = df.clone();
            for i in 0..batch {
                for c in 0..d {
                    u[(i, c)] *= omega.get(c, l);
                }
            }
            u
        })
        .collect();
    let deltas = backprop_deltas(theta, arch, &trace, &upstream);
    let grad_theta = assemble_theta_grad(arch, &trace, &deltas, &upstream);
    Ok(Gradients {
        theta: grad_theta,
        omega: grad_omega,
        loss,
        outputs: trace.output,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, Activation, InitScheme};
    use crate::numerics::Rng;

    fn identity_net(n: usize, depth: usize) -> (Architecture, ParamSet) {
        let arch = Architecture::standard(n, n, depth, n, Activation::Identity);
        let mut theta = Theta::zeros(&arch);
        for l in 0..depth {
            theta.weights[l] = Matrix::identity(n);
            theta.readouts[l] = Matrix::identity(n);
        }
        (arch, ParamSet::new(theta))
    }

    #[test]
    fn linear_telescope() {
        let (arch, p) = identity_net(3, 4);
        let omega = OmegaMatrix::filled(3, 4, 1.0).unwrap();
        let t = forward(&p, &arch, &omega, &[1.0, -2.0, 0.5]).unwrap();
        assert_eq!(t.output, vec![4.0, -8.0, 2.0]);
    }

    #[test]
    fn relu_zero_input_propagates_zero() {
        let arch = Architecture::standard(3, 5, 3, 2, Activation::Relu);
        let p = init_params(&arch, &mut Rng::new(3), InitScheme::XavierNormal).unwrap();
        let omega = OmegaMatrix::uniform(2, 3);
        let t = forward(&p, &arch, &omega, &[0.0; 3]).unwrap();
        assert!(t.layer_outputs.iter().flatten().all(|&v| v == 0.0));
        assert!(t.output.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hand_computed_two_layer_trace() {
        let arch = Architecture::standard(2, 2, 2, 1, Activation::Relu);
        let theta = Theta {
            weights: vec![
                Matrix::from_rows(&[[1.0, -1.0], [2.0, 0.5]]).unwrap(),
                Matrix::from_rows(&[[1.0, 2.0], [-1.0, 1.0]]).unwrap(),
            ],
            biases: vec![vec![0.5, 0.0], vec![0.0, -1.0]],
            readouts: vec![
                Matrix::from_rows(&[[1.0], [1.0]]).unwrap(),
                Matrix::from_rows(&[[2.0], [-1.0]]).unwrap(),
            ],
        };
        let p = ParamSet::new(theta);
        let omega = OmegaMatrix::new(Matrix::from_rows(&[[0.5, 2.0]]).unwrap()).unwrap();
        let t = forward(&p, &arch, &omega, &[1.0, 1.0]).unwrap();
        // g1 = (1+2+0.5, -1+0.5+0) = (3.5, -0.5); h1 = (3.5, 0)
        assert_eq!(t.preactivations[0], vec![3.5, -0.5]);
        assert_eq!(t.activations[0], vec![3.5, 0.0]);
        // f1 = 3.5
        assert_eq!(t.layer_outputs[0], vec![3.5]);
        // g2 = (3.5, 7 - 1) = (3.5, 6); h2 = (3.5, 6); f2 = 7 - 6 = 1
        assert_eq!(t.preactivations[1], vec![3.5, 6.0]);
        assert_eq!(t.layer_outputs[1], vec![1.0]);
        // f = 0.5 * 3.5 + 2 * 1
        assert_eq!(t.output, vec![3.75]);
    }

    #[test]
    fn combine_examples() {
        let f = vec![vec![1.0, 2.0], vec![3.0, 4.0]];
        let omega = OmegaMatrix::new(Matrix::from_rows(&[[1.0, 0.5], [0.0, 2.0]]).unwrap()).unwrap();
        assert_eq!(combine(&f, &omega).unwrap(), vec![2.5, 8.0]);
        let zero = OmegaMatrix::filled(2, 2, 0.0).unwrap();
        assert_eq!(combine(&f, &zero).unwrap(), vec![0.0, 0.0]);
        let last = OmegaMatrix::one_hot_layer(2, 2, 1);
        assert_eq!(combine(&f, &last).unwrap(), f[1]);
        assert!(combine(&f[..1], &omega).is_err());
    }

    #[test]
    fn one_hot_last_layer_is_plain_mlp() {
        let arch = Architecture::standard(4, 6, 3, 3, Activation::Relu);
        let p = init_params(&arch, &mut Rng::new(12), InitScheme::XavierNormal).unwrap();
        let omega = OmegaMatrix::one_hot_layer(3, 3, 2);
        let x = [0.3, -1.2, 0.8, 2.0];
        let t = forward(&p, &arch, &omega, &x).unwrap();
        assert_eq!(t.output, mlp_output(&p, &arch, &x).unwrap());
    }

    #[test]
    fn zero_loss_at_optimum() {
        let arch = Architecture::standard(2, 3, 2, 2, Activation::Relu);
        let p = init_params(&arch, &mut Rng::new(1), InitScheme::XavierNormal).unwrap();
        let omega = OmegaMatrix::uniform(2, 2);
        let x = Matrix::from_rows(&[[0.2, 0.1], [-0.4, 0.9]]).unwrap();
        let y = predict(&p.theta, &arch, &omega, &x).unwrap();
        let g = backward(&p.theta, &arch, &omega, &x, &y).unwrap();
        assert_eq!(g.loss, 0.0);
        assert!(g.omega.as_slice().iter().all(|&v| v == 0.0));
        g.theta.for_each(|v| assert_eq!(v, 0.0));
    }

    #[test]
    fn doubling_omega_quadruples_loss_at_zero_labels() {
        let arch = Architecture::standard(2, 3, 2, 2, Activation::Identity);
        let p = init_params(&arch, &mut Rng::new(6), InitScheme::XavierNormal).unwrap();
        let x = Matrix::from_rows(&[[0.7, -0.1], [0.3, 0.9]]).unwrap();
        let y = Matrix::zeros(2, 2);
        let o1 = OmegaMatrix::filled(2, 2, 0.75).unwrap();
        let o2 = OmegaMatrix::filled(2, 2, 1.5).unwrap();
        let l1 = backward(&p.theta, &arch, &o1, &x, &y).unwrap().loss;
        let l2 = backward(&p.theta, &arch, &o2, &x, &y).unwrap().loss;
        assert!((l2 - 4.0 * l1).abs() < 1e-12 * l2);
    }

    #[test]
    fn empty_batch_rejected() {
        let arch = Architecture::standard(2, 3, 1, 1, Activation::Relu);
        let p = init_params(&arch, &mut Rng::new(0), InitScheme::XavierNormal).unwrap();
        let omega = OmegaMatrix::uniform(1, 1);
        let r = backward(&p.theta, &arch, &omega, &Matrix::zeros(0, 2), &Matrix::zeros(0, 1));
        assert!(matches!(r, Err(Error::Argument(_))));
    }

    #[test]
    fn wrong_input_width_is_shape_error() {
        let arch = Architecture::standard(2, 3, 1, 1, Activation::Relu);
        let p = init_params(&arch, &mut Rng::new(0), InitScheme::XavierNormal).unwrap();
        let omega = OmegaMatrix::uniform(1, 1);
        assert!(matches!(forward(&p, &arch, &omega, &[1.0]), Err(Error::Shape { .. })));
    }
}
