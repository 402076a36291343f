use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use rand::Rng;

use super::mlp::head_loss_grad;
use super::{check_finite, softmax_rows, train_with, Dense, Head, NeuralError, Targets, TrainConfig, TrainReport, Trainable};
use crate::seed::{rng_for, streams};

/// Gated recurrent cell with gates stacked as `[update; reset; candidate]`.
///
/// `z = σ(Wz x + Uz h + bz)`, `r = σ(Wr x + Ur h + br)`,
/// `n = tanh(Wn x + Un (r ⊙ h) + bn)`, `h' = (1 − z) ⊙ n + z ⊙ h`.
#[derive(Debug, Clone, PartialEq)]
pub struct GruCell {
    pub wx: Array2<f64>,
    pub wh: Array2<f64>,
    pub b: Array1<f64>,
}

struct StepCache {
    x: Array2<f64>,
    hp: Array2<f64>,
    z: Array2<f64>,
    r: Array2<f64>,
    n: Array2<f64>,
    q: Array2<f64>,
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

impl GruCell {
    pub fn zeros(d_in: usize, hidden: usize) -> Self {
        Self {
            wx: Array2::zeros((3 * hidden, d_in)),
            wh: Array2::zeros((3 * hidden, hidden)),
            b: Array1::zeros(3 * hidden),
        }
    }

    fn uniform(d_in: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let k = 1.0 / (hidden as f64).sqrt();
        let mut draw = |r, c| Array2::from_shape_fn((r, c), |_| rng.random_range(-k..=k));
        let wx = draw(3 * hidden, d_in);
        let wh = draw(3 * hidden, hidden);
        Self {
            wx,
            wh,
            b: Array1::zeros(3 * hidden),
        }
    }

    pub fn hidden(&self) -> usize {
        self.wh.ncols()
    }

    pub fn d_in(&self) -> usize {
        self.wx.ncols()
    }

    fn step(&self, x: &Array2<f64>, hp: &Array2<f64>) -> (Array2<f64>, StepCache) {
        let hd = self.hidden();
        let a = x.dot(&self.wx.t()) + &self.b;
        let u = hp.dot(&self.wh.slice(s![..2 * hd, ..]).t());
        let z = (&a.slice(s![.., ..hd]) + &u.slice(s![.., ..hd])).mapv(sigmoid);
        let r = (&a.slice(s![.., hd..2 * hd]) + &u.slice(s![.., hd..])).mapv(sigmoid);
        let q = &r * hp;
        let n = (&a.slice(s![.., 2 * hd..]) + &q.dot(&self.wh.slice(s![2 * hd.., ..]).t())).mapv(f64::tanh);
        let h = &n + &(&z * &(hp - &n));
        let cache = StepCache {
            x: x.clone(),
            hp: hp.clone(),
            z,
            r,
            n,
            q,
        };
        (h, cache)
    }

    /// Accumulates parameter gradients; returns `(dx, dh_prev)`.
    fn backward(&self, c: &StepCache, dh: &Array2<f64>, g: &mut GruCell) -> (Array2<f64>, Array2<f64>) {
        let hd = self.hidden();
        let (bsz, _) = dh.dim();
        let mut da = Array2::zeros((bsz, 3 * hd));
        let da_n = dh * &c.z.mapv(|z| 1.0 - z) * &c.n.mapv(|n| 1.0 - n * n);
        let wh_n = self.wh.slice(s![2 * hd.., ..]);
        let dq = da_n.dot(&wh_n);
        let da_r = &dq * &c.hp * &c.r.mapv(|r| r * (1.0 - r));
        let da_z = dh * &(&c.hp - &c.n) * &c.z.mapv(|z| z * (1.0 - z));
        da.slice_mut(s![.., ..hd]).assign(&da_z);
        da.slice_mut(s![.., hd..2 * hd]).assign(&da_r);
        da.slice_mut(s![.., 2 * hd..]).assign(&da_n);

        g.wx += &da.t().dot(&c.x);
        g.b += &da.sum_axis(Axis(0));
        let da_zr = da.slice(s![.., ..2 * hd]);
        g.wh.slice_mut(s![..2 * hd, ..]).scaled_add(1.0, &da_zr.t().dot(&c.hp));
        g.wh.slice_mut(s![2 * hd.., ..]).scaled_add(1.0, &da_n.t().dot(&c.q));

        let dx = da.dot(&self.wx);
        let dhp = dh * &c.z + &dq * &c.r + da_zr.dot(&self.wh.slice(s![..2 * hd, ..]));
        (dx, dhp)
    }

    fn slices(&self) -> [&[f64]; 3] {
        [
            self.wx.as_slice().expect("standard layout"),
            self.wh.as_slice().expect("standard layout"),
            self.b.as_slice().expect("standard layout"),
        ]
    }

    fn slices_mut(&mut self) -> [&mut [f64]; 3] {
        [
            self.wx.as_slice_mut().expect("standard layout"),
            self.wh.as_slice_mut().expect("standard layout"),
            self.b.as_slice_mut().expect("standard layout"),
        ]
    }
}

/// Encoder-decoder recurrent model.
///
/// The decoder starts from the encoder's final state with a zero input and
/// feeds back its previous output (probabilities for the softmax head, the
/// log spectrum for the spectrum head).
#[derive(Debug, Clone, PartialEq)]
pub struct GruSeq2Seq {
    pub encoder: GruCell,
    pub decoder: GruCell,
    pub out: Dense,
    pub head: Head,
    pub seed: u64,
}

impl GruSeq2Seq {
    pub fn new(d_in: usize, hidden: usize, d_out: usize, head: Head, seed: u64) -> Result<Self, NeuralError> {
        Self::check_dims(d_in, hidden, d_out)?;
        let encoder = GruCell::uniform(d_in, hidden, &mut rng_for(seed, streams::INIT, 0));
        let decoder = GruCell::uniform(d_out, hidden, &mut rng_for(seed, streams::INIT, 1));
        let limit = (6.0 / (hidden + d_out) as f64).sqrt();
        let out = Dense::uniform(hidden, d_out, limit, &mut rng_for(seed, streams::INIT, 2));
        Ok(Self {
            encoder,
            decoder,
            out,
            head,
            seed,
        })
    }

    pub fn zeros(d_in: usize, hidden: usize, d_out: usize, head: Head) -> Result<Self, NeuralError> {
        Self::check_dims(d_in, hidden, d_out)?;
        Ok(Self {
            encoder: GruCell::zeros(d_in, hidden),
            decoder: GruCell::zeros(d_out, hidden),
            out: Dense::zeros(hidden, d_out),
            head,
            seed: 0,
        })
    }

    fn check_dims(d_in: usize, hidden: usize, d_out: usize) -> Result<(), NeuralError> {
        if d_in == 0 || hidden == 0 || d_out == 0 {
            return Err(NeuralError::Config(format!("invalid dims ({d_in}, {hidden}, {d_out})")));
        }
        Ok(())
    }

    pub fn d_in(&self) -> usize {
        self.encoder.d_in()
    }

    pub fn hidden(&self) -> usize {
        self.encoder.hidden()
    }

    pub fn d_out(&self) -> usize {
        self.out.d_out()
    }

    fn feedback(&self, o: &Array2<f64>) -> Array2<f64> {
        let mut f = o.clone();
        if self.head == Head::Softmax {
            softmax_rows(&mut f);
        }
        f
    }

    fn check_inputs(&self, inputs: &[Array2<f64>], horizon: usize) -> Result<usize, NeuralError> {
        if inputs.is_empty() || horizon == 0 {
            return Err(NeuralError::Config("sequence lengths must be at least 1".into()));
        }
        let b = inputs[0].nrows();
        if b == 0 {
            return Err(NeuralError::EmptyBatch);
        }
        for x in inputs {
            if x.ncols() != self.d_in() {
                return Err(NeuralError::InputDim {
                    expected: self.d_in(),
                    got: x.ncols(),
                });
            }
            if x.nrows() != b {
                return Err(NeuralError::TargetShape("ragged input batch".into()));
            }
            check_finite(x.view())?;
        }
        Ok(b)
    }

    /// Output pre-activations per decoder step plus all caches.
    fn unroll(&self, inputs: &[Array2<f64>], horizon: usize, b: usize) -> Unrolled {
        let hd = self.hidden();
        let mut h = Array2::zeros((b, hd));
        let mut enc = Vec::with_capacity(inputs.len());
        for x in inputs {
            let (hn, c) = self.encoder.step(x, &h);
            enc.push(c);
            h = hn;
        }
        let mut dec = Vec::with_capacity(horizon);
        let mut hs = Vec::with_capacity(horizon);
        let mut outs = Vec::with_capacity(horizon);
        let mut fb = Array2::zeros((b, self.d_out()));
        for _ in 0..horizon {
            let (hn, c) = self.decoder.step(&fb, &h);
            dec.push(c);
            h = hn;
            let o = self.out.apply(&h);
            fb = self.feedback(&o);
            hs.push(h.clone());
            outs.push(o);
        }
        Unrolled { enc, dec, hs, outs }
    }
}

struct Unrolled {
    enc: Vec<StepCache>,
    dec: Vec<StepCache>,
    hs: Vec<Array2<f64>>,
    outs: Vec<Array2<f64>>,
}

impl Trainable for GruSeq2Seq {
    fn param_slices(&self) -> Vec<&[f64]> {
        let mut v: Vec<&[f64]> = self.encoder.slices().into();
        v.extend(self.decoder.slices());
        v.extend(self.out.slices());
        v
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v: Vec<&mut [f64]> = self.encoder.slices_mut().into();
        v.extend(self.decoder.slices_mut());
        v.extend(self.out.slices_mut());
        v
    }
}

/// Batched forward pass: one output matrix (batch × K or × G) per future step.
pub fn gru_forward_batch(
    model: &GruSeq2Seq,
    inputs: &[Array2<f64>],
    horizon: usize,
) -> Result<Vec<Array2<f64>>, NeuralError> {
    let b = model.check_inputs(inputs, horizon)?;
    let u = model.unroll(inputs, horizon, b);
    Ok(u
        .outs
        .into_iter()
        .map(|mut o| {
            match model.head {
                Head::Softmax => softmax_rows(&mut o),
                Head::LogSpectrum => o.mapv_inplace(f64::exp),
            }
            o
        })
        .collect())
}

/// Forward pass for one input sequence.
pub fn gru_forward(model: &GruSeq2Seq, sequence: &[Vec<f64>], horizon: usize) -> Result<Vec<Vec<f64>>, NeuralError> {
    let inputs: Vec<Array2<f64>> = sequence
        .iter()
        .map(|x| ArrayView1::from(x.as_slice()).insert_axis(Axis(0)).to_owned())
        .collect();
    Ok(gru_forward_batch(model, &inputs, horizon)?
        .into_iter()
        .map(|o| o.row(0).to_vec())
        .collect())
}

/// Time-major batch: `inputs[t]` is `batch × d_in`, `targets[k]` holds the
/// supervision of decoder step `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceBatch {
    pub inputs: Vec<Array2<f64>>,
    pub targets: Vec<Targets>,
}

impl SequenceBatch {
    pub fn len(&self) -> usize {
        self.inputs.first().map_or(0, |x| x.nrows())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn horizon(&self) -> usize {
        self.targets.len()
    }

    pub fn select(&self, rows: &[usize]) -> SequenceBatch {
        SequenceBatch {
            inputs: self.inputs.iter().map(|x| x.select(Axis(0), rows)).collect(),
            targets: self.targets.iter().map(|t| t.select(rows)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GruGradients {
    pub encoder: GruCell,
    pub decoder: GruCell,
    pub out: Dense,
}

impl GruGradients {
    pub fn into_flat(self) -> Vec<Vec<f64>> {
        let mut v = Vec::with_capacity(8);
        for c in [self.encoder, self.decoder] {
            v.push(c.wx.into_raw_vec_and_offset().0);
            v.push(c.wh.into_raw_vec_and_offset().0);
            v.push(c.b.to_vec());
        }
        v.push(self.out.w.into_raw_vec_and_offset().0);
        v.push(self.out.b.to_vec());
        v
    }

    pub fn norm(&self) -> f64 {
        let cells = [&self.encoder, &self.decoder];
        cells
            .iter()
            .flat_map(|c| c.wx.iter().chain(c.wh.iter()).chain(c.b.iter()))
            .chain(self.out.w.iter().chain(self.out.b.iter()))
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

fn check_batch(model: &GruSeq2Seq, batch: &SequenceBatch) -> Result<usize, NeuralError> {
    let b = model.check_inputs(&batch.inputs, batch.horizon())?;
    if batch.targets.iter().any(|t| t.len() != b) {
        return Err(NeuralError::TargetShape("targets do not match batch size".into()));
    }
    Ok(b)
}

/// Mean per-step loss over the batch.
pub fn gru_loss(model: &GruSeq2Seq, batch: &SequenceBatch) -> Result<f64, NeuralError> {
    let b = check_batch(model, batch)?;
    let u = model.unroll(&batch.inputs, batch.horizon(), b);
    let scale = 1.0 / (b * batch.horizon()) as f64;
    let mut loss = 0.0;
    for (o, t) in u.outs.iter().zip(&batch.targets) {
        loss += head_loss_grad(model.head, o, t, scale)?.0;
    }
    Ok(loss)
}

/// Mean per-step loss and exact gradients by backpropagation through time,
/// including the path through the decoder's fed-back outputs.
pub fn gru_gradients(model: &GruSeq2Seq, batch: &SequenceBatch) -> Result<(f64, GruGradients), NeuralError> {
    let b = check_batch(model, batch)?;
    let horizon = batch.horizon();
    let u = model.unroll(&batch.inputs, horizon, b);
    let scale = 1.0 / (b * horizon) as f64;
    let hd = model.hidden();
    let mut g = GruGradients {
        encoder: GruCell::zeros(model.d_in(), hd),
        decoder: GruCell::zeros(model.d_out(), hd),
        out: Dense::zeros(hd, model.d_out()),
    };
    let mut loss = 0.0;
    let mut dos = Vec::with_capacity(horizon);
    for (o, t) in u.outs.iter().zip(&batch.targets) {
        let (l, d, _) = head_loss_grad(model.head, o, t, scale)?;
        loss += l;
        dos.push(d);
    }

    let mut dh = Array2::zeros((b, hd));
    let mut dfb: Option<Array2<f64>> = None;
    for k in (0..horizon).rev() {
        let mut d_o = dos[k].clone();
        if let Some(df) = dfb.take() {
            match model.head {
                Head::Softmax => {
                    let mut p = u.outs[k].clone();
                    softmax_rows(&mut p);
                    let dots = (&df * &p).sum_axis(Axis(1)).insert_axis(Axis(1));
                    d_o += &(&p * &(&df - &dots));
                }
                Head::LogSpectrum => d_o += &df,
            }
        }
        dh += &model.out.backward(&u.hs[k], &d_o, &mut g.out);
        let (dx, dhp) = model.decoder.backward(&u.dec[k], &dh, &mut g.decoder);
        dh = dhp;
        dfb = Some(dx);
    }
    for c in u.enc.iter().rev() {
        let (_, dhp) = model.encoder.backward(c, &dh, &mut g.encoder);
        dh = dhp;
    }
    Ok((loss, g))
}

impl GruSeq2Seq {
    pub fn train(
        &mut self,
        data: &SequenceBatch,
        validation: Option<&SequenceBatch>,
        cfg: &TrainConfig,
    ) -> Result<TrainReport, NeuralError> {
        check_batch(self, data)?;
        let grad = |m: &GruSeq2Seq, idx: &[usize]| {
            let (loss, g) = gru_gradients(m, &data.select(idx))?;
            Ok((loss, g.into_flat()))
        };
        let val = validation.map(|v| move |m: &GruSeq2Seq| gru_loss(m, v));
        train_with(self, data.len(), grad, val, cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn randn(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
        Array2::from_shape_fn((r, c), |_| StandardNormal.sample(rng))
    }

    fn label_batch(seed: u64, b: usize, d: usize, l_in: usize, l_out: usize, k: usize) -> SequenceBatch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        SequenceBatch {
            inputs: (0..l_in).map(|_| randn(&mut rng, b, d)).collect(),
            targets: (0..l_out)
                .map(|_| Targets::Labels((0..b).map(|_| rng.random_range(0..k)).collect()))
                .collect(),
        }
    }

    #[test]
    fn test_zero_parameters_give_constant_outputs() {
        let m = GruSeq2Seq::zeros(3, 4, 5, Head::Softmax).unwrap();
        let seq = vec![vec![1.0, -2.0, 0.3]; 3];
        let out = gru_forward(&m, &seq, 4).unwrap();
        for step in &out {
            assert_eq!(step, &out[0]);
            for &v in step {
                assert_eq!(v, 0.2);
            }
        }
    }

    #[test]
    fn test_causal_decoding() {
        let m = GruSeq2Seq::new(3, 6, 4, Head::Softmax, 9).unwrap();
        let seq = vec![vec![0.1, 0.2, 0.3], vec![-1.0, 0.5, 2.0]];
        let one = gru_forward(&m, &seq, 1).unwrap();
        let two = gru_forward(&m, &seq, 2).unwrap();
        assert_eq!(one[0], two[0]);
        assert_eq!(two.len(), 2);
    }

    #[test]
    fn test_single_unit_cell_matches_gate_equations() {
        let mut m = GruSeq2Seq::zeros(1, 1, 1, Head::LogSpectrum).unwrap();
        let enc = &mut m.encoder;
        enc.wx = Array2::from_shape_vec((3, 1), vec![0.5, -0.3, 0.8]).unwrap();
        enc.wh = Array2::from_shape_vec((3, 1), vec![0.2, 0.4, -0.6]).unwrap();
        enc.b = Array1::from(vec![0.1, 0.0, -0.2]);
        m.out.w[(0, 0)] = 1.5;
        m.out.b[0] = 0.25;
        let x = [0.7, -1.1];
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let mut h = 0.0_f64;
        for &xt in &x {
            let z = sig(0.5 * xt + 0.2 * h + 0.1);
            let r = sig(-0.3 * xt + 0.4 * h);
            let n = (0.8 * xt - 0.6 * (r * h) - 0.2).tanh();
            h = (1.0 - z) * n + z * h;
        }
        // decoder is all zero: z = r = 1/2, n = 0, so h halves once
        let expect = (1.5 * (0.5 * h) + 0.25).exp();
        let out = gru_forward(&m, &[vec![x[0]], vec![x[1]]], 1).unwrap();
        assert!((out[0][0] - expect).abs() < 1e-14, "{} vs {expect}", out[0][0]);
    }

    #[test]
    fn test_gates_in_unit_interval() {
        let m = GruSeq2Seq::new(2, 5, 3, Head::Softmax, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = randn(&mut rng, 4, 2) * 50.0;
        let (_, c) = m.encoder.step(&x, &Array2::zeros((4, 5)));
        assert!(c.z.iter().chain(c.r.iter()).all(|&g| (0.0..=1.0).contains(&g)));
    }

    fn fd_check(model: &GruSeq2Seq, batch: &SequenceBatch, coords: usize, seed: u64) -> f64 {
        let (_, g) = gru_gradients(model, batch).unwrap();
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
            let lp = gru_loss(&m, batch).unwrap();
            p[i] = base[i] - h;
            m.set_params_flat(&p);
            let lm = gru_loss(&m, batch).unwrap();
            let fd = (lp - lm) / (2.0 * h);
            let err = (fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-6);
            worst = worst.max(err);
        }
        worst
    }

    #[test]
    fn test_index_head_gradients_match_finite_differences() {
        let m = GruSeq2Seq::new(4, 3, 5, Head::Softmax, 3).unwrap();
        let batch = label_batch(1, 3, 4, 4, 4, 5);
        let worst = fd_check(&m, &batch, 1000, 7);
        assert!(worst <= 1e-4, "{worst}");
    }

    #[test]
    fn test_spectrum_head_gradients_match_finite_differences() {
        let m = GruSeq2Seq::new(4, 3, 6, Head::LogSpectrum, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let batch = SequenceBatch {
            inputs: (0..4).map(|_| randn(&mut rng, 3, 4)).collect(),
            targets: (0..4).map(|_| Targets::LogValues(randn(&mut rng, 3, 6))).collect(),
        };
        let worst = fd_check(&m, &batch, 1000, 8);
        assert!(worst <= 1e-4, "{worst}");
    }

    #[test]
    fn test_duplicated_batch_same_gradient() {
        let m = GruSeq2Seq::new(3, 4, 4, Head::Softmax, 5).unwrap();
        let batch = label_batch(2, 3, 3, 2, 3, 4);
        let doubled = batch.select(&[0, 1, 2, 0, 1, 2]);
        let (l1, g1) = gru_gradients(&m, &batch).unwrap();
        let (l2, g2) = gru_gradients(&m, &doubled).unwrap();
        assert!((l1 - l2).abs() < 1e-12);
        for (a, b) in g1.into_flat().concat().iter().zip(g2.into_flat().concat()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn test_perfect_prediction_has_no_gradient() {
        let mut m = GruSeq2Seq::new(2, 3, 4, Head::Softmax, 6).unwrap();
        m.out.w.fill(0.0);
        m.out.b[2] = 60.0;
        let mut batch = label_batch(3, 5, 2, 3, 3, 4);
        batch.targets = vec![Targets::Labels(vec![2; 5]); 3];
        let (loss, g) = gru_gradients(&m, &batch).unwrap();
        assert!(loss < 1e-20);
        assert!(g.norm() < 1e-8, "{}", g.norm());
    }

    #[test]
    fn test_learns_to_copy_last_label() {
        // the input at the last slot is a one-hot label repeated on every output step
        let k = 4;
        let n = 400;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let noise = randn(&mut rng, n, k) * 0.1;
        let mut last = noise.clone();
        for (i, &y) in labels.iter().enumerate() {
            last[(i, y)] += 1.0;
        }
        let data = SequenceBatch {
            inputs: vec![noise, last],
            targets: vec![Targets::Labels(labels.clone()); 2],
        };
        let mut m = GruSeq2Seq::new(k, 8, k, Head::Softmax, 2).unwrap();
        let cfg = TrainConfig {
            learning_rate: 1e-2,
            epochs: 30,
            batch_size: 32,
            seed: 4,
            ..Default::default()
        };
        m.train(&data, None, &cfg).unwrap();
        let out = gru_forward_batch(&m, &data.inputs, 2).unwrap();
        for step in out {
            let hits = step
                .rows()
                .into_iter()
                .zip(&labels)
                .filter(|(r, &y)| crate::neural::predict_topk(r.as_slice().unwrap(), 1).unwrap()[0] == y)
                .count();
            assert!(hits as f64 / n as f64 > 0.95);
        }
    }
}
