//! The distributed autoencoder: `m` sigmoid encoders `W_j` (n x l) feeding one
//! shared sigmoid decoder `Ŵ` ((m*l) x n). User `j`'s reconstruction only reads
//! rows `j*l .. (j+1)*l` of the decoder.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut2};
use rand::Rng;

use crate::dp_mech::Dataset;
use crate::error::{shape_err, Error, Result};
use crate::rng::{self, Purpose};
use crate::scalar::{sigmoid, Scalar};

#[derive(Debug, Clone, PartialEq)]
pub struct DaParams<T> {
    encoders: Vec<Array2<T>>,
    decoder: Array2<T>,
}

/// Encoder output `h_j = σ(W_jᵀ x)`; every entry lies in (0, 1).
#[derive(Debug, Clone, PartialEq)]
pub struct Encoding<T>(Array1<T>);

impl<T: Scalar> Encoding<T> {
    pub fn new(h: Array1<T>) -> Result<Self> {
        if let Some(v) = h.iter().find(|&&v| !(v > T::zero() && v < T::one())) {
            return Err(Error::Validation(format!("encoding entry {v} outside (0, 1)")));
        }
        Ok(Self(h))
    }

    pub fn as_array(&self) -> &Array1<T> {
        &self.0
    }

    pub fn view(&self) -> ArrayView1<'_, T> {
        self.0.view()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn sum(&self) -> T {
        self.0.sum()
    }
}

impl<T: Scalar> DaParams<T> {
    pub fn new(encoders: Vec<Array2<T>>, decoder: Array2<T>) -> Result<Self> {
        let first = encoders
            .first()
            .ok_or_else(|| Error::Config("at least one encoder is required".into()))?;
        let (n, l) = first.dim();
        if l == 0 || l > n {
            return Err(Error::Config(format!("latent size l={l} must satisfy 1 <= l <= n={n}")));
        }
        if let Some(bad) = encoders.iter().find(|w| w.dim() != (n, l)) {
            return Err(shape_err(format!("encoder {n}x{l}"), format!("{:?}", bad.dim())));
        }
        let m = encoders.len();
        if decoder.dim() != (m * l, n) {
            return Err(shape_err(format!("decoder {}x{n}", m * l), format!("{:?}", decoder.dim())));
        }
        Ok(Self { encoders, decoder })
    }

    /// Glorot-uniform initialization: every entry uniform on `±sqrt(6/(n+l))`.
    pub fn init(n: usize, l: usize, m: usize, seed: u64) -> Result<Self> {
        if l == 0 || l > n || m == 0 {
            return Err(Error::Config(format!("invalid sizes n={n}, l={l}, m={m} (need 1 <= l <= n, m >= 1)")));
        }
        let bound = (6.0 / (n + l) as f64).sqrt();
        let mut r = rng::stream(seed, Purpose::Init, &[]);
        let mut draw = |rows, cols| {
            Array2::from_shape_simple_fn((rows, cols), || T::lit(r.random_range(-bound..=bound)))
        };
        let encoders = (0..m).map(|_| draw(n, l)).collect();
        let decoder = draw(m * l, n);
        Self::new(encoders, decoder)
    }

    pub fn n(&self) -> usize {
        self.decoder.ncols()
    }

    pub fn l(&self) -> usize {
        self.encoders[0].ncols()
    }

    pub fn m(&self) -> usize {
        self.encoders.len()
    }

    pub fn encoder(&self, j: usize) -> Result<ArrayView2<'_, T>> {
        self.check_user(j)?;
        Ok(self.encoders[j].view())
    }

    pub fn decoder(&self) -> ArrayView2<'_, T> {
        self.decoder.view()
    }

    /// Rows `j*l .. (j+1)*l` of the decoder: the l x n block user `j` decodes with.
    pub fn decoder_block(&self, j: usize) -> Result<ArrayView2<'_, T>> {
        self.check_user(j)?;
        let l = self.l();
        Ok(self.decoder.slice(s![j * l..(j + 1) * l, ..]))
    }

    /// Sub-column `Ŵ_{(:i[j])}` of length l.
    pub fn decoder_sub_column(&self, j: usize, i: usize) -> Result<ArrayView1<'_, T>> {
        self.check_user(j)?;
        self.check_feature(i)?;
        let l = self.l();
        Ok(self.decoder.slice(s![j * l..(j + 1) * l, i]))
    }

    pub(crate) fn parts_mut(&mut self, j: usize) -> (ArrayViewMut2<'_, T>, ArrayViewMut2<'_, T>) {
        let l = self.l();
        (
            self.encoders[j].view_mut(),
            self.decoder.slice_mut(s![j * l..(j + 1) * l, ..]),
        )
    }

    pub(crate) fn decoder_mut(&mut self) -> &mut Array2<T> {
        &mut self.decoder
    }

    pub fn encode(&self, j: usize, x: ArrayView1<'_, T>) -> Result<Encoding<T>> {
        self.check_user(j)?;
        if x.len() != self.n() {
            return Err(shape_err(self.n(), x.len()));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("encoder input must be finite".into()));
        }
        let pre = self.encoders[j].t().dot(&x);
        Ok(Encoding(pre.mapv(sigmoid)))
    }

    fn check_encoding(&self, h: &Encoding<T>) -> Result<()> {
        if h.len() != self.l() {
            return Err(shape_err(self.l(), h.len()));
        }
        Ok(())
    }

    /// `z_{j,i} = Ŵ_{(:i[j])}ᵀ h_j`.
    pub fn z_value(&self, j: usize, i: usize, h: &Encoding<T>) -> Result<T> {
        self.check_encoding(h)?;
        Ok(self.decoder_sub_column(j, i)?.dot(&h.0))
    }

    /// All `n` decoder pre-activations for user `j`.
    pub fn z_values(&self, j: usize, h: &Encoding<T>) -> Result<Array1<T>> {
        self.check_encoding(h)?;
        Ok(self.decoder_block(j)?.t().dot(&h.0))
    }

    /// `x̂_i = σ(z_{j,i})` for every feature.
    pub fn reconstruct(&self, j: usize, h: &Encoding<T>) -> Result<Array1<T>> {
        Ok(self.z_values(j, h)?.mapv(sigmoid))
    }

    /// Encodes and decodes every user row of `data`.
    pub fn reconstruct_dataset(&self, data: &Dataset<T>) -> Result<Dataset<T>> {
        if data.m() != self.m() || data.n() != self.n() {
            return Err(shape_err(
                format!("{}x{}", self.m(), self.n()),
                format!("{}x{}", data.m(), data.n()),
            ));
        }
        let mut out = Array2::zeros((data.m(), data.n()));
        for (j, x) in data.rows().enumerate() {
            let h = self.encode(j, x)?;
            out.row_mut(j).assign(&self.reconstruct(j, &h)?);
        }
        Dataset::new(out)
    }

    /// Adds `shift` to every decoder entry, folding a loss-stabilization
    /// constant into the weights.
    pub fn shift_decoder(&mut self, shift: T) {
        self.decoder.mapv_inplace(|w| w + shift);
    }

    pub fn is_finite(&self) -> bool {
        self.decoder.iter().chain(self.encoders.iter().flatten()).all(|v| v.is_finite())
    }

    fn check_user(&self, j: usize) -> Result<()> {
        if j >= self.m() {
            return Err(Error::Index { index: j, len: self.m() });
        }
        Ok(())
    }

    fn check_feature(&self, i: usize) -> Result<()> {
        if i >= self.n() {
            return Err(Error::Index { index: i, len: self.n() });
        }
        Ok(())
    }
}

/// Reconstruction accuracy in percent: `100 * (1 - mean |x - x̂|)`.
pub fn accuracy<T: Scalar>(original: &Dataset<T>, reconstructed: &Dataset<T>) -> Result<T> {
    let (a, b) = (original.as_array(), reconstructed.as_array());
    if a.dim() != b.dim() {
        return Err(shape_err(format!("{:?}", a.dim()), format!("{:?}", b.dim())));
    }
    let mae = (a - b).mapv(T::abs).mean().unwrap_or_else(T::zero);
    Ok(T::lit(100.0) * (T::one() - mae))
}

/// Accuracy pooled over a sequence of batches.
pub fn corpus_accuracy<T: Scalar>(params: &DaParams<T>, batches: &[Dataset<T>]) -> Result<T> {
    let mut total = T::zero();
    let mut count = 0usize;
    for batch in batches {
        let rec = params.reconstruct_dataset(batch)?;
        total = total + (batch.as_array() - rec.as_array()).mapv(T::abs).sum();
        count += batch.m() * batch.n();
    }
    if count == 0 {
        return Err(Error::Validation("no batches to evaluate".into()));
    }
    Ok(T::lit(100.0) * (T::one() - total / T::from_count(count)))
}
