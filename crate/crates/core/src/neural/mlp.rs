use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::Rng;

use super::{check_finite, softmax_rows, train_with, Head, NeuralError, Targets, TrainConfig, TrainReport, Trainable};
use crate::seed::{rng_for, streams};

/// Affine layer `z = W x + b` with `W` stored `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Dense {
    pub fn zeros(d_in: usize, d_out: usize) -> Self {
        Self {
            w: Array2::zeros((d_out, d_in)),
            b: Array1::zeros(d_out),
        }
    }

    /// Uniform init with the given half-width, zero bias.
    pub fn uniform(d_in: usize, d_out: usize, limit: f64, rng: &mut impl Rng) -> Self {
        let w = Array2::from_shape_fn((d_out, d_in), |_| rng.random_range(-limit..=limit));
        Self {
            w,
            b: Array1::zeros(d_out),
        }
    }

    pub fn d_in(&self) -> usize {
        self.w.ncols()
    }

    pub fn d_out(&self) -> usize {
        self.w.nrows()
    }

    /// Batch rows in, batch rows out.
    pub fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.w.t()) + &self.b
    }

    pub(crate) fn slices(&self) -> [&[f64]; 2] {
        [
            self.w.as_slice().expect("standard layout"),
            self.b.as_slice().expect("standard layout"),
        ]
    }

    pub(crate) fn slices_mut(&mut self) -> [&mut [f64]; 2] {
        [
            self.w.as_slice_mut().expect("standard layout"),
            self.b.as_slice_mut().expect("standard layout"),
        ]
    }

    /// Accumulates `dW += dzᵀ x`, `db += Σ dz` and returns `dx = dz W`.
    pub(crate) fn backward(&self, x: &Array2<f64>, dz: &Array2<f64>, grad: &mut Dense) -> Array2<f64> {
        grad.w += &dz.t().dot(x);
        grad.b += &dz.sum_axis(Axis(0));
        dz.dot(&self.w)
    }
}

/// Fully connected network with rectifier hidden layers.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub layers: Vec<Dense>,
    pub head: Head,
    pub seed: u64,
}

impl MlpModel {
    /// He-uniform hidden layers and a Glorot-uniform output layer.
    pub fn new(dims: &[usize], head: Head, seed: u64) -> Result<Self, NeuralError> {
        Self::check_dims(dims)?;
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|l| {
                let mut rng = rng_for(seed, streams::INIT, l as u64);
                let (i, o) = (dims[l], dims[l + 1]);
                let limit = if l + 1 < n {
                    (6.0 / i as f64).sqrt()
                } else {
                    (6.0 / (i + o) as f64).sqrt()
                };
                Dense::uniform(i, o, limit, &mut rng)
            })
            .collect();
        Ok(Self { layers, head, seed })
    }

    pub fn zeros(dims: &[usize], head: Head) -> Result<Self, NeuralError> {
        Self::check_dims(dims)?;
        let layers = dims.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect();
        Ok(Self { layers, head, seed: 0 })
    }

    fn check_dims(dims: &[usize]) -> Result<(), NeuralError> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(NeuralError::Config(format!("invalid layer dims {dims:?}")));
        }
        Ok(())
    }

    pub fn layer_dims(&self) -> Vec<usize> {
        let mut d = vec![self.layers[0].d_in()];
        d.extend(self.layers.iter().map(|l| l.d_out()));
        d
    }

    pub fn d_in(&self) -> usize {
        self.layers[0].d_in()
    }

    pub fn d_out(&self) -> usize {
        self.layers.last().map_or(0, |l| l.d_out())
    }

    /// Pre-activations of every layer for a batch.
    fn forward_cache(&self, x: &Array2<f64>) -> Vec<Array2<f64>> {
        let mut zs: Vec<Array2<f64>> = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let z = if l == 0 {
                layer.apply(x)
            } else {
                layer.apply(&zs[l - 1].mapv(relu))
            };
            zs.push(z);
        }
        zs
    }

    fn check_input(&self, x: &Array2<f64>) -> Result<(), NeuralError> {
        if x.ncols() != self.d_in() {
            return Err(NeuralError::InputDim {
                expected: self.d_in(),
                got: x.ncols(),
            });
        }
        if x.nrows() == 0 {
            return Err(NeuralError::EmptyBatch);
        }
        check_finite(x.view())
    }
}

fn relu(v: f64) -> f64 {
    v.max(0.0)
}

impl Trainable for MlpModel {
    fn param_slices(&self) -> Vec<&[f64]> {
        self.layers.iter().flat_map(|l| l.slices()).collect()
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers.iter_mut().flat_map(|l| l.slices_mut()).collect()
    }
}

/// Output rows for a batch: class probabilities or a nonnegative spectrum.
pub fn mlp_forward_batch(model: &MlpModel, x: &Array2<f64>) -> Result<Array2<f64>, NeuralError> {
    model.check_input(x)?;
    let mut z = model.forward_cache(x).pop().expect("at least one layer");
    match model.head {
        Head::Softmax => softmax_rows(&mut z),
        Head::LogSpectrum => z.mapv_inplace(f64::exp),
    }
    Ok(z)
}

pub fn mlp_forward(model: &MlpModel, x: &[f64]) -> Result<Vec<f64>, NeuralError> {
    let m = ArrayView1::from(x).insert_axis(Axis(0)).to_owned();
    Ok(mlp_forward_batch(model, &m)?.row(0).to_vec())
}

/// Mean loss and its gradient for an output pre-activation batch.
///
/// Softmax head: mean cross-entropy. Spectrum head: mean squared error
/// between the linear output and the log target, averaged over all entries.
pub(crate) fn head_loss_grad(
    head: Head,
    z: &Array2<f64>,
    targets: &Targets,
    scale: f64,
) -> Result<(f64, Array2<f64>, Array2<f64>), NeuralError> {
    let (b, k) = z.dim();
    match (head, targets) {
        (Head::Softmax, Targets::Labels(labels)) => {
            if labels.len() != b {
                return Err(NeuralError::TargetShape(format!("{} labels for {b} rows", labels.len())));
            }
            let mut p = z.clone();
            softmax_rows(&mut p);
            let mut loss = 0.0;
            let mut dz = p.clone();
            for (i, &y) in labels.iter().enumerate() {
                if y >= k {
                    return Err(NeuralError::LabelOutOfRange { label: y, classes: k });
                }
                let row = z.row(i);
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                loss += lse - z[(i, y)];
                dz[(i, y)] -= 1.0;
            }
            dz.mapv_inplace(|v| v * scale);
            Ok((loss * scale, dz, p))
        }
        (Head::LogSpectrum, Targets::LogValues(t)) => {
            if t.dim() != (b, k) {
                return Err(NeuralError::TargetShape(format!("target {:?} vs output {:?}", t.dim(), (b, k))));
            }
            check_finite(t.view())?;
            let diff = z - t;
            let s = scale / k as f64;
            let loss = diff.iter().map(|d| d * d).sum::<f64>() * s;
            Ok((loss, diff.mapv(|d| 2.0 * d * s), z.clone()))
        }
        _ => Err(NeuralError::TargetShape("target kind does not match the output head".into())),
    }
}

/// Parameter-shaped gradient set of an [`MlpModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGradients {
    pub layers: Vec<Dense>,
}

impl MlpGradients {
    pub fn into_flat(self) -> Vec<Vec<f64>> {
        self.layers
            .into_iter()
            .flat_map(|l| [l.w.into_raw_vec_and_offset().0, l.b.to_vec()])
            .collect()
    }

    pub fn norm(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.w.iter().chain(l.b.iter()))
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

/// Mean batch loss and exact gradients by backpropagation.
pub fn mlp_gradients(model: &MlpModel, x: &Array2<f64>, targets: &Targets) -> Result<(f64, MlpGradients), NeuralError> {
    model.check_input(x)?;
    if targets.len() != x.nrows() {
        return Err(NeuralError::TargetShape(format!("{} targets for {} rows", targets.len(), x.nrows())));
    }
    let zs = model.forward_cache(x);
    let scale = 1.0 / x.nrows() as f64;
    let (loss, mut dz, _) = head_loss_grad(model.head, zs.last().expect("layer"), targets, scale)?;
    let mut grads: Vec<Dense> = model.layers.iter().map(|l| Dense::zeros(l.d_in(), l.d_out())).collect();
    for l in (0..model.layers.len()).rev() {
        let input = if l == 0 { x.clone() } else { zs[l - 1].mapv(relu) };
        let dx = model.layers[l].backward(&input, &dz, &mut grads[l]);
        if l > 0 {
            dz = dx;
            dz.zip_mut_with(&zs[l - 1], |d, &z| {
                if z <= 0.0 {
                    *d = 0.0
                }
            });
        }
    }
    Ok((loss, MlpGradients { layers: grads }))
}

pub fn mlp_loss(model: &MlpModel, x: &Array2<f64>, targets: &Targets) -> Result<f64, NeuralError> {
    model.check_input(x)?;
    let z = model.forward_cache(x).pop().expect("layer");
    Ok(head_loss_grad(model.head, &z, targets, 1.0 / x.nrows() as f64)?.0)
}

impl MlpModel {
    /// Mini-batch training; with a validation set the best epoch is kept.
    pub fn train(
        &mut self,
        x: &Array2<f64>,
        targets: &Targets,
        validation: Option<(&Array2<f64>, &Targets)>,
        cfg: &TrainConfig,
    ) -> Result<TrainReport, NeuralError> {
        if targets.len() != x.nrows() {
            return Err(NeuralError::TargetShape(format!("{} targets for {} rows", targets.len(), x.nrows())));
        }
        let grad = |m: &MlpModel, idx: &[usize]| {
            let xb = x.select(Axis(0), idx);
            let tb = targets.select(idx);
            let (loss, g) = mlp_gradients(m, &xb, &tb)?;
            Ok((loss, g.into_flat()))
        };
        let val = validation.map(|(vx, vt)| move |m: &MlpModel| mlp_loss(m, vx, vt));
        train_with(self, x.nrows(), grad, val, cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{predict_topk, OptimizerKind};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random_batch(n: usize, d: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((n, d), |_| StandardNormal.sample(&mut rng))
    }

    #[test]
    fn test_zero_model_is_uniform() {
        let m = MlpModel::zeros(&[5, 100, 100, 100, 8], Head::Softmax).unwrap();
        let p = mlp_forward(&m, &[1.0, -2.0, 0.5, 3.0, 0.0]).unwrap();
        for v in p {
            assert_eq!(v, 0.125);
        }
    }

    #[test]
    fn test_outputs_on_simplex() {
        let m = MlpModel::new(&[6, 100, 100, 100, 20], Head::Softmax, 3).unwrap();
        let x = random_batch(50, 6, 1) * 30.0;
        let p = mlp_forward_batch(&m, &x).unwrap();
        for r in p.rows() {
            assert!((r.sum() - 1.0).abs() < 1e-9);
            assert!(r.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn test_hand_sized_network() {
        // 2 -> 1 -> 2: h = relu(0.5 x0 - x1 + 0.25), z = [2h, -h + 1]
        let mut m = MlpModel::zeros(&[2, 1, 2], Head::Softmax).unwrap();
        m.layers[0].w = Array2::from_shape_vec((1, 2), vec![0.5, -1.0]).unwrap();
        m.layers[0].b[0] = 0.25;
        m.layers[1].w = Array2::from_shape_vec((2, 1), vec![2.0, -1.0]).unwrap();
        m.layers[1].b[1] = 1.0;
        let p = mlp_forward(&m, &[3.0, 0.5]).unwrap();
        let h = 1.25_f64;
        let (z0, z1) = (2.0 * h, 1.0 - h);
        let e = (z0.exp(), z1.exp());
        assert!((p[0] - e.0 / (e.0 + e.1)).abs() < 1e-15);
        assert!((p[1] - e.1 / (e.0 + e.1)).abs() < 1e-15);
        // negative pre-activation: hidden unit is off, output is softmax([0, 1])
        let p = mlp_forward(&m, &[0.0, 1.0]).unwrap();
        assert!((p[1] - 1f64.exp() / (1.0 + 1f64.exp())).abs() < 1e-15);
    }

    #[test]
    fn test_rejects_non_finite_and_wrong_dim() {
        let m = MlpModel::new(&[3, 4, 2], Head::Softmax, 0).unwrap();
        assert_eq!(mlp_forward(&m, &[1.0, f64::NAN, 0.0]), Err(NeuralError::NonFiniteInput));
        assert!(matches!(mlp_forward(&m, &[1.0]), Err(NeuralError::InputDim { .. })));
    }

    #[test]
    fn test_label_out_of_range() {
        let m = MlpModel::new(&[3, 4, 2], Head::Softmax, 0).unwrap();
        let x = random_batch(2, 3, 0);
        assert!(matches!(
            mlp_gradients(&m, &x, &Targets::Labels(vec![0, 2])),
            Err(NeuralError::LabelOutOfRange { label: 2, classes: 2 })
        ));
    }

    fn finite_difference_check(model: &MlpModel, x: &Array2<f64>, t: &Targets, coords: usize, seed: u64) -> f64 {
        let (_, g) = mlp_gradients(model, x, t).unwrap();
        let g = g.into_flat().concat();
        let base = model.params_flat();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = 1e-5;
        let mut worst = 0.0_f64;
        for _ in 0..coords {
            let i = rng.random_range(0..base.len());
            let mut m = model.clone();
            let mut p = base.clone();
            p[i] = base[i] + h;
            m.set_params_flat(&p);
            let lp = mlp_loss(&m, x, t).unwrap();
            p[i] = base[i] - h;
            m.set_params_flat(&p);
            let lm = mlp_loss(&m, x, t).unwrap();
            let fd = (lp - lm) / (2.0 * h);
            let err = (fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-6);
            worst = worst.max(err);
        }
        worst
    }

    #[test]
    fn test_gradients_match_finite_differences() {
        let m = MlpModel::new(&[8, 16, 16, 16, 5], Head::Softmax, 11).unwrap();
        let x = random_batch(6, 8, 2);
        let t = Targets::Labels(vec![0, 1, 2, 3, 4, 0]);
        let worst = finite_difference_check(&m, &x, &t, 1000, 5);
        assert!(worst <= 1e-4, "{worst}");
    }

    #[test]
    fn test_spectrum_gradients_match_finite_differences() {
        let m = MlpModel::new(&[6, 12, 12, 9], Head::LogSpectrum, 4).unwrap();
        let x = random_batch(5, 6, 3);
        let t = Targets::LogValues(random_batch(5, 9, 4));
        let worst = finite_difference_check(&m, &x, &t, 1000, 6);
        assert!(worst <= 1e-4, "{worst}");
    }

    #[test]
    fn test_duplicated_batch_same_gradient() {
        let m = MlpModel::new(&[4, 10, 3], Head::Softmax, 1).unwrap();
        let x = random_batch(3, 4, 8);
        let t = Targets::Labels(vec![2, 0, 1]);
        let x2 = ndarray::concatenate(Axis(0), &[x.view(), x.view()]).unwrap();
        let t2 = Targets::Labels(vec![2, 0, 1, 2, 0, 1]);
        let (l1, g1) = mlp_gradients(&m, &x, &t).unwrap();
        let (l2, g2) = mlp_gradients(&m, &x2, &t2).unwrap();
        assert!((l1 - l2).abs() < 1e-12);
        for (a, b) in g1.into_flat().concat().iter().zip(g2.into_flat().concat()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn test_confident_correct_prediction_has_no_gradient() {
        let mut m = MlpModel::zeros(&[2, 3], Head::Softmax).unwrap();
        m.layers[0].b[1] = 60.0;
        let x = random_batch(4, 2, 0);
        let (loss, g) = mlp_gradients(&m, &x, &Targets::Labels(vec![1; 4])).unwrap();
        assert!(loss < 1e-20);
        assert!(g.norm() < 1e-8);
    }

    fn blobs(n: usize, seed: u64) -> (Array2<f64>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Array2::zeros((n, 2));
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            let c = i % 2;
            let mu = if c == 0 { -2.0 } else { 2.0 };
            x[(i, 0)] = { let e: f64 = StandardNormal.sample(&mut rng); mu + 0.5 * e };
            x[(i, 1)] = { let e: f64 = StandardNormal.sample(&mut rng); mu + 0.5 * e };
            y.push(c);
        }
        (x, y)
    }

    fn accuracy(m: &MlpModel, x: &Array2<f64>, y: &[usize]) -> f64 {
        let p = mlp_forward_batch(m, x).unwrap();
        let hits = p
            .rows()
            .into_iter()
            .zip(y)
            .filter(|(r, &c)| predict_topk(r.as_slice().unwrap(), 1).unwrap()[0] == c)
            .count();
        hits as f64 / y.len() as f64
    }

    #[test]
    fn test_separable_blobs_reach_full_accuracy() {
        let (x, y) = blobs(200, 9);
        let mut m = MlpModel::new(&[2, 100, 100, 100, 2], Head::Softmax, 2).unwrap();
        let cfg = TrainConfig {
            epochs: 200,
            batch_size: 32,
            seed: 1,
            patience: 0,
            ..Default::default()
        };
        let report = m.train(&x, &Targets::Labels(y.clone()), None, &cfg).unwrap();
        assert!(accuracy(&m, &x, &y) >= 0.99);
        assert!(report.loss_trace.last().unwrap() < &report.loss_trace[0]);
    }

    #[test]
    fn test_zero_learning_rate_keeps_parameters() {
        let (x, y) = blobs(40, 1);
        let mut m = MlpModel::new(&[2, 8, 2], Head::Softmax, 2).unwrap();
        let before = m.clone();
        for kind in [OptimizerKind::Sgd, OptimizerKind::Adam] {
            let cfg = TrainConfig {
                learning_rate: 0.0,
                optimizer: kind,
                epochs: 3,
                ..Default::default()
            };
            m.train(&x, &Targets::Labels(y.clone()), None, &cfg).unwrap();
            assert_eq!(m, before);
        }
    }

    #[test]
    fn test_training_is_deterministic() {
        let (x, y) = blobs(60, 2);
        let cfg = TrainConfig {
            epochs: 5,
            batch_size: 7,
            seed: 42,
            ..Default::default()
        };
        let run = || {
            let mut m = MlpModel::new(&[2, 16, 16, 2], Head::Softmax, 5).unwrap();
            m.train(&x, &Targets::Labels(y.clone()), None, &cfg).unwrap();
            m.params_flat()
        };
        let (a, b) = (run(), run());
        assert!(a.iter().zip(&b).all(|(u, v)| u.to_bits() == v.to_bits()));
    }

    #[test]
    fn test_divergence_is_reported() {
        let x = random_batch(40, 2, 3);
        let t = Targets::LogValues(random_batch(40, 3, 4) * 100.0);
        let mut m = MlpModel::new(&[2, 8, 3], Head::LogSpectrum, 2).unwrap();
        let cfg = TrainConfig {
            learning_rate: 10.0,
            optimizer: OptimizerKind::Sgd,
            epochs: 20,
            ..Default::default()
        };
        match m.train(&x, &t, None, &cfg) {
            Err(NeuralError::Diverged { trace, .. }) => assert!(!trace.is_empty()),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn test_label_permutation_leaves_accuracy() {
        let (x, y) = blobs(100, 4);
        let cfg = TrainConfig {
            epochs: 10,
            seed: 3,
            ..Default::default()
        };
        let mut a = MlpModel::new(&[2, 16, 2], Head::Softmax, 1).unwrap();
        a.train(&x, &Targets::Labels(y.clone()), None, &cfg).unwrap();
        let perm = |c: usize| 1 - c;
        let yp: Vec<usize> = y.iter().map(|&c| perm(c)).collect();
        let mut b = MlpModel::new(&[2, 16, 2], Head::Softmax, 1).unwrap();
        b.train(&x, &Targets::Labels(yp.clone()), None, &cfg).unwrap();
        assert_eq!(accuracy(&a, &x, &y), accuracy(&b, &x, &yp));
    }
}
