//! Residual MLP policy network: fully-connected layers with batch
//! normalization before each ReLU, two identity-shortcut blocks, and a
//! softmax head over the ten access/MCS classes.

mod adam;
mod io;
mod train;

use std::fmt::Debug;

use ndarray::{Array1, Array2, ArrayView2, Axis, NdFloat};
use num_traits::{FromPrimitive, ToPrimitive};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub use adam::{adam_step, AdamConfig, AdamState};
pub use io::{load_model, save_model, MODEL_MAGIC, MODEL_VERSION};
pub use train::{evaluate, train, EpochRecord, History, TrainConfig};

use crate::dataset::{label_to_class, Normalization, NUM_CLASSES};
use crate::error::{Error, Result};

/// Floating-point type the network can run in.
pub trait Real: NdFloat + FromPrimitive + ToPrimitive + Default + Debug + Send + Sync {
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("representable")
    }
}

impl Real for f32 {}
impl Real for f64 {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in every BN layer.
    Train,
    /// Running statistics in every BN layer.
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub input_dim: usize,
    pub stem_widths: Vec<usize>,
    pub block_width: usize,
    pub n_blocks: usize,
    pub tail_widths: Vec<usize>,
    pub output_dim: usize,
    pub bn_eps: f64,
}

impl ModelSpec {
    /// 512/256 stem, two 256-wide residual blocks, 128/64 tail, 10 outputs.
    pub fn standard(input_dim: usize) -> Self {
        Self {
            input_dim,
            stem_widths: vec![512, 256],
            block_width: 256,
            n_blocks: 2,
            tail_widths: vec![128, 64],
            output_dim: NUM_CLASSES,
            bn_eps: 1e-5,
        }
    }

    /// Same topology with every hidden width divided by `divisor`.
    pub fn scaled(input_dim: usize, divisor: usize) -> Self {
        let mut s = Self::standard(input_dim);
        s.stem_widths.iter_mut().for_each(|w| *w /= divisor);
        s.block_width /= divisor;
        s.tail_widths.iter_mut().for_each(|w| *w /= divisor);
        s
    }

    pub fn hidden_layers(&self) -> usize {
        self.stem_widths.len() + 2 * self.n_blocks + self.tail_widths.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("model spec: {m}")));
        if self.input_dim == 0 {
            return bad("input_dim must be > 0");
        }
        if self.stem_widths.is_empty() || self.stem_widths.contains(&0) {
            return bad("stem widths must be non-empty and positive");
        }
        if self.tail_widths.contains(&0) || self.block_width == 0 {
            return bad("widths must be positive");
        }
        if self.n_blocks > 0 && self.stem_widths.last() != Some(&self.block_width) {
            return bad("block width must equal the last stem width (identity shortcut)");
        }
        if self.output_dim != NUM_CLASSES {
            return bad("output_dim must be 10");
        }
        if !(self.bn_eps > 0.0) {
            return bad("bn_eps must be > 0");
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of every hidden unit in forward order.
    fn unit_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::new();
        let mut prev = self.input_dim;
        for &w in &self.stem_widths {
            shapes.push((prev, w));
            prev = w;
        }
        for _ in 0..self.n_blocks {
            shapes.push((prev, self.block_width));
            shapes.push((self.block_width, self.block_width));
            prev = self.block_width;
        }
        for &w in &self.tail_widths {
            shapes.push((prev, w));
            prev = w;
        }
        shapes
    }

    fn last_hidden(&self) -> usize {
        self.tail_widths
            .last()
            .copied()
            .unwrap_or(if self.n_blocks > 0 {
                self.block_width
            } else {
                *self.stem_widths.last().unwrap()
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense<F> {
    /// `[fan_in, fan_out]`.
    pub w: Array2<F>,
    pub b: Array1<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm<F> {
    pub gamma: Array1<F>,
    pub beta: Array1<F>,
    pub running_mean: Array1<F>,
    pub running_var: Array1<F>,
}

/// One composite hidden layer: FC followed by BN (activation applied by the
/// caller so the block shortcut can be added first).
#[derive(Debug, Clone, PartialEq)]
pub struct Unit<F> {
    pub dense: Dense<F>,
    pub bn: BatchNorm<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyModel<F = f32> {
    pub spec: ModelSpec,
    pub units: Vec<Unit<F>>,
    pub output: Dense<F>,
    pub normalization: Normalization,
}

/// Gradients shaped like the trainable parameters of a [`PolicyModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<F> {
    pub units: Vec<UnitGrad<F>>,
    pub output: (Array2<F>, Array1<F>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnitGrad<F> {
    pub w: Array2<F>,
    pub b: Array1<F>,
    pub gamma: Array1<F>,
    pub beta: Array1<F>,
}

impl<F: Real> Gradients<F> {
    /// Flat views in the canonical parameter order of [`PolicyModel::params_mut`].
    pub fn slices(&self) -> Vec<&[F]> {
        let mut out = Vec::with_capacity(self.units.len() * 4 + 2);
        for u in &self.units {
            out.push(u.w.as_slice().unwrap());
            out.push(u.b.as_slice().unwrap());
            out.push(u.gamma.as_slice().unwrap());
            out.push(u.beta.as_slice().unwrap());
        }
        out.push(self.output.0.as_slice().unwrap());
        out.push(self.output.1.as_slice().unwrap());
        out
    }
}

struct UnitCache<F> {
    input: Array2<F>,
    xhat: Array2<F>,
    inv_std: Array1<F>,
    mean: Array1<F>,
    var: Array1<F>,
    /// Value the ReLU was applied to (BN output, plus shortcut for the
    /// second layer of a block).
    pre_act: Array2<F>,
}

struct ForwardCache<F> {
    units: Vec<UnitCache<F>>,
    last_hidden: Array2<F>,
    probs: Array2<F>,
}

/// Per-layer batch statistics observed in a train-mode pass.
pub(crate) struct BatchStats<F> {
    pub(crate) mean: Vec<Array1<F>>,
    pub(crate) var: Vec<Array1<F>>,
    pub(crate) batch: usize,
}

fn relu<F: Real>(x: &Array2<F>) -> Array2<F> {
    x.mapv(|v| if v > F::zero() { v } else { F::zero() })
}

fn softmax_rows<F: Real>(logits: &mut Array2<F>) {
    for mut row in logits.rows_mut() {
        let max = row.fold(F::neg_infinity(), |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

impl<F: Real> PolicyModel<F> {
    /// He-scaled Gaussian weights, zero biases, BN scale 1 / shift 0, running
    /// statistics 0 / 1.
    pub fn init(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut dense = |fan_in: usize, fan_out: usize| {
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).unwrap();
            let w = Array2::from_shape_fn((fan_in, fan_out), |_| F::lit(normal.sample(&mut rng)));
            Dense {
                w,
                b: Array1::zeros(fan_out),
            }
        };
        let units = spec
            .unit_shapes()
            .into_iter()
            .map(|(i, o)| Unit {
                dense: dense(i, o),
                bn: BatchNorm {
                    gamma: Array1::ones(o),
                    beta: Array1::zeros(o),
                    running_mean: Array1::zeros(o),
                    running_var: Array1::ones(o),
                },
            })
            .collect();
        let output = dense(spec.last_hidden(), spec.output_dim);
        Ok(Self {
            spec,
            units,
            output,
            normalization: Normalization::default(),
        })
    }

    pub fn param_count(&self) -> usize {
        self.units
            .iter()
            .map(|u| u.dense.w.len() + u.dense.b.len() + 2 * u.bn.gamma.len())
            .sum::<usize>()
            + self.output.w.len()
            + self.output.b.len()
    }

    /// Trainable parameters as flat mutable slices: per unit `w, b, gamma,
    /// beta`, then the output `w, b`.
    pub fn params_mut(&mut self) -> Vec<&mut [F]> {
        let mut out = Vec::with_capacity(self.units.len() * 4 + 2);
        for u in &mut self.units {
            out.push(u.dense.w.as_slice_mut().unwrap());
            out.push(u.dense.b.as_slice_mut().unwrap());
            out.push(u.bn.gamma.as_slice_mut().unwrap());
            out.push(u.bn.beta.as_slice_mut().unwrap());
        }
        out.push(self.output.w.as_slice_mut().unwrap());
        out.push(self.output.b.as_slice_mut().unwrap());
        out
    }

    pub fn cast<G: Real>(&self) -> PolicyModel<G> {
        let c1 = |a: &Array1<F>| a.mapv(|v| G::lit(v.to_f64().unwrap()));
        let c2 = |a: &Array2<F>| a.mapv(|v| G::lit(v.to_f64().unwrap()));
        PolicyModel {
            spec: self.spec.clone(),
            units: self
                .units
                .iter()
                .map(|u| Unit {
                    dense: Dense {
                        w: c2(&u.dense.w),
                        b: c1(&u.dense.b),
                    },
                    bn: BatchNorm {
                        gamma: c1(&u.bn.gamma),
                        beta: c1(&u.bn.beta),
                        running_mean: c1(&u.bn.running_mean),
                        running_var: c1(&u.bn.running_var),
                    },
                })
                .collect(),
            output: Dense {
                w: c2(&self.output.w),
                b: c1(&self.output.b),
            },
            normalization: self.normalization,
        }
    }

    fn check_batch(&self, batch: &ArrayView2<F>, mode: Mode) -> Result<()> {
        if batch.ncols() != self.spec.input_dim {
            return Err(Error::ShapeMismatch {
                expected: self.spec.input_dim,
                got: batch.ncols(),
            });
        }
        if batch.nrows() == 0 {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        if mode == Mode::Train && batch.nrows() < 2 {
            return Err(Error::InvalidArgument(
                "train-mode forward needs at least 2 examples for batch statistics".into(),
            ));
        }
        Ok(())
    }

    /// Class probabilities for a batch of already-normalized inputs.
    pub fn forward(&self, batch: ArrayView2<F>, mode: Mode) -> Result<Array2<F>> {
        self.check_batch(&batch, mode)?;
        Ok(self.forward_cached(batch, mode).probs)
    }

    fn unit_forward(&self, k: usize, x: Array2<F>, mode: Mode) -> (Array2<F>, UnitCache<F>) {
        let unit = &self.units[k];
        let eps = F::lit(self.spec.bn_eps);
        let z = x.dot(&unit.dense.w) + &unit.dense.b;
        let (mean, var) = match mode {
            Mode::Train => {
                let mean = z.mean_axis(Axis(0)).unwrap();
                let var = z.var_axis(Axis(0), F::zero());
                (mean, var)
            }
            Mode::Eval => (unit.bn.running_mean.clone(), unit.bn.running_var.clone()),
        };
        let inv_std = var.mapv(|v| F::one() / (v + eps).sqrt());
        let xhat = (z - &mean) * &inv_std;
        let y = &xhat * &unit.bn.gamma + &unit.bn.beta;
        (
            y,
            UnitCache {
                input: x,
                xhat,
                inv_std,
                mean,
                var,
                pre_act: Array2::zeros((0, 0)),
            },
        )
    }

    fn forward_cached(&self, batch: ArrayView2<F>, mode: Mode) -> ForwardCache<F> {
        let mut caches = Vec::with_capacity(self.units.len());
        let mut x = batch.to_owned();
        let n_stem = self.spec.stem_widths.len();
        let mut k = 0;
        let plain = |k: usize, x: Array2<F>, caches: &mut Vec<UnitCache<F>>| {
            let (y, mut c) = self.unit_forward(k, x, mode);
            let a = relu(&y);
            c.pre_act = y;
            caches.push(c);
            a
        };
        for _ in 0..n_stem {
            x = plain(k, x, &mut caches);
            k += 1;
        }
        for _ in 0..self.spec.n_blocks {
            let shortcut = x.clone();
            x = plain(k, x, &mut caches);
            k += 1;
            let (y, mut c) = self.unit_forward(k, x, mode);
            let s = y + &shortcut;
            x = relu(&s);
            c.pre_act = s;
            caches.push(c);
            k += 1;
        }
        for _ in 0..self.spec.tail_widths.len() {
            x = plain(k, x, &mut caches);
            k += 1;
        }
        let mut probs = x.dot(&self.output.w) + &self.output.b;
        softmax_rows(&mut probs);
        ForwardCache {
            units: caches,
            last_hidden: x,
            probs,
        }
    }

    /// Weighted mean cross-entropy and its gradient with respect to every
    /// trainable parameter. `labels` are MCS labels in -1..=8;
    /// `class_weights` (indexed by class id) default to 1.
    pub fn loss_and_gradients(
        &self,
        batch: ArrayView2<F>,
        labels: &[i8],
        class_weights: Option<&[f64; NUM_CLASSES]>,
        mode: Mode,
    ) -> Result<(F, Gradients<F>)> {
        let (loss, grads, _) = self.loss_grad_stats(batch, labels, class_weights, mode)?;
        Ok((loss, grads))
    }

    pub(crate) fn loss_grad_stats(
        &self,
        batch: ArrayView2<F>,
        labels: &[i8],
        class_weights: Option<&[f64; NUM_CLASSES]>,
        mode: Mode,
    ) -> Result<(F, Gradients<F>, (BatchStats<F>, Array2<F>))> {
        self.check_batch(&batch, mode)?;
        if labels.len() != batch.nrows() {
            return Err(Error::ShapeMismatch {
                expected: batch.nrows(),
                got: labels.len(),
            });
        }
        let classes = labels
            .iter()
            .map(|&l| label_to_class(l))
            .collect::<Result<Vec<_>>>()?;
        let n = batch.nrows();
        let cache = self.forward_cached(batch, mode);

        let weights: Vec<F> = classes
            .iter()
            .map(|&c| F::lit(class_weights.map_or(1.0, |w| w[c])))
            .collect();
        let total_w = weights.iter().fold(F::zero(), |a, &w| a + w);
        let tiny = F::lit(1e-300_f64.max(F::min_positive_value().to_f64().unwrap()));
        let mut loss = F::zero();
        let mut d = cache.probs.clone();
        for (i, (&c, &w)) in classes.iter().zip(&weights).enumerate() {
            if total_w > F::zero() {
                loss = loss - w * cache.probs[[i, c]].max(tiny).ln();
                d[[i, c]] = d[[i, c]] - F::one();
                let scale = w / total_w;
                d.row_mut(i).mapv_inplace(|v| v * scale);
            } else {
                d.row_mut(i).fill(F::zero());
            }
        }
        if total_w > F::zero() {
            loss = loss / total_w;
        }

        let out_w = cache.last_hidden.t().dot(&d);
        let out_b = d.sum_axis(Axis(0));
        let mut up = d.dot(&self.output.w.t());

        let mut unit_grads: Vec<Option<UnitGrad<F>>> = vec![None; self.units.len()];
        let n_stem = self.spec.stem_widths.len();
        let n_tail = self.spec.tail_widths.len();
        let total = self.units.len();

        for k in (total - n_tail..total).rev() {
            let (dx, g) = self.unit_backward(k, &cache.units[k], relu_mask(&up, &cache.units[k].pre_act), mode);
            unit_grads[k] = Some(g);
            up = dx;
        }
        for blk in (0..self.spec.n_blocks).rev() {
            let k1 = n_stem + 2 * blk;
            let k2 = k1 + 1;
            let ds = relu_mask(&up, &cache.units[k2].pre_act);
            let (da1, g2) = self.unit_backward(k2, &cache.units[k2], ds.clone(), mode);
            let (dx, g1) = self.unit_backward(k1, &cache.units[k1], relu_mask(&da1, &cache.units[k1].pre_act), mode);
            unit_grads[k2] = Some(g2);
            unit_grads[k1] = Some(g1);
            up = dx + &ds;
        }
        for k in (0..n_stem).rev() {
            let (dx, g) = self.unit_backward(k, &cache.units[k], relu_mask(&up, &cache.units[k].pre_act), mode);
            unit_grads[k] = Some(g);
            up = dx;
        }

        let stats = BatchStats {
            mean: cache.units.iter().map(|c| c.mean.clone()).collect(),
            var: cache.units.iter().map(|c| c.var.clone()).collect(),
            batch: n,
        };
        Ok((
            loss,
            Gradients {
                units: unit_grads.into_iter().map(Option::unwrap).collect(),
                output: (out_w, out_b),
            },
            (stats, cache.probs),
        ))
    }

    /// Backward through BN and FC given the gradient at the BN output.
    fn unit_backward(&self, k: usize, c: &UnitCache<F>, dy: Array2<F>, mode: Mode) -> (Array2<F>, UnitGrad<F>) {
        let unit = &self.units[k];
        let dgamma = (&dy * &c.xhat).sum_axis(Axis(0));
        let dbeta = dy.sum_axis(Axis(0));
        let dxhat = dy * &unit.bn.gamma;
        let dz = match mode {
            Mode::Eval => dxhat * &c.inv_std,
            Mode::Train => {
                let n = F::lit(c.xhat.nrows() as f64);
                let sum_dxhat = dxhat.sum_axis(Axis(0));
                let sum_dxhat_xhat = (&dxhat * &c.xhat).sum_axis(Axis(0));
                let mut dz = dxhat * n - &sum_dxhat - &(&c.xhat * &sum_dxhat_xhat);
                dz *= &c.inv_std.mapv(|s| s / n);
                dz
            }
        };
        let dw = c.input.t().dot(&dz);
        let db = dz.sum_axis(Axis(0));
        let dx = dz.dot(&unit.dense.w.t());
        (
            dx,
            UnitGrad {
                w: dw,
                b: db,
                gamma: dgamma,
                beta: dbeta,
            },
        )
    }

    /// Folds train-mode batch statistics into the running averages.
    pub(crate) fn update_running_stats(&mut self, stats: &BatchStats<F>, momentum: f64) {
        let m = F::lit(momentum);
        let keep = F::one() - m;
        let n = stats.batch as f64;
        let unbias = F::lit(if n > 1.0 { n / (n - 1.0) } else { 1.0 });
        for (u, (mean, var)) in self.units.iter_mut().zip(stats.mean.iter().zip(&stats.var)) {
            u.bn.running_mean = &u.bn.running_mean * keep + &(mean * m);
            u.bn.running_var = &u.bn.running_var * keep + &(var * (m * unbias));
        }
    }

    /// Sets every BN layer's running statistics to the batch statistics of
    /// `batch`, layer by layer, so an eval-mode pass reproduces the train-mode
    /// normalization of that batch.
    pub fn freeze_bn_to_batch(&mut self, batch: ArrayView2<F>) -> Result<()> {
        self.check_batch(&batch, Mode::Train)?;
        let cache = self.forward_cached(batch, Mode::Train);
        for (u, c) in self.units.iter_mut().zip(cache.units) {
            u.bn.running_mean = c.mean;
            u.bn.running_var = c.var;
        }
        Ok(())
    }

    /// Standardizes raw dBm windows with the stored normalization.
    pub fn normalize_windows<'a>(&self, windows: impl IntoIterator<Item = &'a [f32]>) -> Result<Array2<F>> {
        let d = self.spec.input_dim;
        let mut flat = Vec::new();
        let mut rows = 0;
        for w in windows {
            if w.len() != d {
                return Err(Error::ShapeMismatch {
                    expected: d,
                    got: w.len(),
                });
            }
            flat.extend(w.iter().map(|&v| F::lit(self.normalization.apply(v))));
            rows += 1;
        }
        Ok(Array2::from_shape_vec((rows, d), flat).unwrap())
    }

    /// Eval-mode class probabilities for raw dBm windows.
    pub fn predict_windows<'a>(&self, windows: impl IntoIterator<Item = &'a [f32]>) -> Result<Array2<F>> {
        let x = self.normalize_windows(windows)?;
        self.forward(x.view(), Mode::Eval)
    }
}

fn relu_mask<F: Real>(grad: &Array2<F>, pre_act: &Array2<F>) -> Array2<F> {
    let mut g = grad.clone();
    g.zip_mut_with(pre_act, |g, &p| {
        if p <= F::zero() {
            *g = F::zero();
        }
    });
    g
}

/// Index of the largest entry; ties go to the lower index.
pub fn argmax<F: Real>(row: ndarray::ArrayView1<F>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Eval-mode inference specialised for one window at a time: BN is folded
/// into the preceding FC layer and every product is a row-major accumulate.
#[derive(Debug, Clone)]
pub struct InferenceNet {
    input_dim: usize,
    n_stem: usize,
    n_blocks: usize,
    layers: Vec<(Vec<f32>, Vec<f32>, usize)>,
    normalization: Normalization,
}

impl InferenceNet {
    pub fn new<F: Real>(model: &PolicyModel<F>) -> Self {
        let eps = model.spec.bn_eps;
        let f = |v: F| v.to_f64().unwrap();
        let mut layers = Vec::with_capacity(model.units.len() + 1);
        for u in &model.units {
            let (fan_in, fan_out) = u.dense.w.dim();
            let scale: Vec<f64> = (0..fan_out)
                .map(|j| f(u.bn.gamma[j]) / (f(u.bn.running_var[j]) + eps).sqrt())
                .collect();
            let mut w = Vec::with_capacity(fan_in * fan_out);
            for i in 0..fan_in {
                for j in 0..fan_out {
                    w.push((f(u.dense.w[[i, j]]) * scale[j]) as f32);
                }
            }
            let b = (0..fan_out)
                .map(|j| ((f(u.dense.b[j]) - f(u.bn.running_mean[j])) * scale[j] + f(u.bn.beta[j])) as f32)
                .collect();
            layers.push((w, b, fan_out));
        }
        let (fan_in, fan_out) = model.output.w.dim();
        let mut w = Vec::with_capacity(fan_in * fan_out);
        for i in 0..fan_in {
            for j in 0..fan_out {
                w.push(f(model.output.w[[i, j]]) as f32);
            }
        }
        layers.push((w, model.output.b.iter().map(|&v| f(v) as f32).collect(), fan_out));
        Self {
            input_dim: model.spec.input_dim,
            n_stem: model.spec.stem_widths.len(),
            n_blocks: model.spec.n_blocks,
            layers,
            normalization: model.normalization,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn affine(&self, k: usize, x: &[f32]) -> Vec<f32> {
        let (w, b, out) = &self.layers[k];
        let mut y = b.clone();
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let row = &w[i * out..(i + 1) * out];
            for (yj, &wj) in y.iter_mut().zip(row) {
                *yj += xi * wj;
            }
        }
        y
    }

    /// Logits for one raw dBm window.
    pub fn logits(&self, window: &[f32]) -> Result<Vec<f32>> {
        if window.len() != self.input_dim {
            return Err(Error::ShapeMismatch {
                expected: self.input_dim,
                got: window.len(),
            });
        }
        let relu = |v: &mut Vec<f32>| v.iter_mut().for_each(|x| *x = x.max(0.0));
        let mut x: Vec<f32> = window
            .iter()
            .map(|&v| self.normalization.apply(v) as f32)
            .collect();
        let mut k = 0;
        for _ in 0..self.n_stem {
            x = self.affine(k, &x);
            relu(&mut x);
            k += 1;
        }
        for _ in 0..self.n_blocks {
            let mut h = self.affine(k, &x);
            relu(&mut h);
            let mut y = self.affine(k + 1, &h);
            y.iter_mut().zip(&x).for_each(|(a, &b)| *a += b);
            relu(&mut y);
            x = y;
            k += 2;
        }
        while k < self.layers.len() - 1 {
            x = self.affine(k, &x);
            relu(&mut x);
            k += 1;
        }
        Ok(self.affine(k, &x))
    }

    /// Predicted class (ties toward the lower class id).
    pub fn predict_class(&self, window: &[f32]) -> Result<usize> {
        let logits = self.logits(window)?;
        Ok(argmax(ndarray::ArrayView1::from(&logits[..])))
    }
}

#[cfg(test)]
mod tests;
