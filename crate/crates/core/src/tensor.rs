//! Real signal containers, the multidimensional DFT and the convolutional
//! operators shared by every solver.
//!
//! Convolutions are circular. The forward DFT is unnormalized and the inverse
//! carries the `1/N` factor, so `inverse(forward(a)) == a`.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

pub type C64 = Complex64;

/// Spatial extent of a 1-D or 2-D signal, row-major.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Frame {
    dims: Vec<usize>,
}

impl Frame {
    pub fn new(dims: &[usize]) -> Result<Self> {
        if dims.is_empty() || dims.len() > 2 {
            return Err(Error::Shape(format!(
                "only 1-D and 2-D frames are supported, got {} dimensions",
                dims.len()
            )));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::Shape(format!("zero-sized dimension in {dims:?}")));
        }
        if dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d)).is_none() {
            return Err(Error::Shape(format!("frame {dims:?} overflows")));
        }
        Ok(Frame { dims: dims.to_vec() })
    }

    pub fn d1(n: usize) -> Result<Self> {
        Self::new(&[n])
    }

    pub fn d2(rows: usize, cols: usize) -> Result<Self> {
        Self::new(&[rows, cols])
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Number of rows; a 1-D frame is a single row.
    pub fn rows(&self) -> usize {
        if self.dims.len() == 2 {
            self.dims[0]
        } else {
            1
        }
    }

    pub fn cols(&self) -> usize {
        *self.dims.last().expect("frame has at least one dimension")
    }

    /// True when `self` has the same rank as `outer` and is no larger in any dimension.
    pub fn fits_within(&self, outer: &Frame) -> bool {
        self.ndim() == outer.ndim() && self.dims.iter().zip(&outer.dims).all(|(a, b)| a <= b)
    }
}

impl TryFrom<Vec<usize>> for Frame {
    type Error = Error;
    fn try_from(dims: Vec<usize>) -> Result<Self> {
        Frame::new(&dims)
    }
}

impl From<Frame> for Vec<usize> {
    fn from(f: Frame) -> Self {
        f.dims
    }
}

impl fmt::Display for Frame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.dims.iter().map(|d| d.to_string()).collect();
        f.write_str(&parts.join("x"))
    }
}

/// Embed `values` (shaped `inner`) at the origin of a zero `outer` frame.
pub fn zero_pad(values: &[f64], inner: &Frame, outer: &Frame) -> Result<Vec<f64>> {
    if values.len() != inner.len() {
        return Err(Error::Shape(format!(
            "{} values do not fill a {inner} frame",
            values.len()
        )));
    }
    if !inner.fits_within(outer) {
        return Err(Error::Shape(format!("{inner} does not fit inside {outer}")));
    }
    let mut out = vec![0.0; outer.len()];
    for r in 0..inner.rows() {
        let src = &values[r * inner.cols()..(r + 1) * inner.cols()];
        out[r * outer.cols()..r * outer.cols() + inner.cols()].copy_from_slice(src);
    }
    Ok(out)
}

/// Inverse of [`zero_pad`]: keep the `inner` region at the origin.
pub fn crop(values: &[f64], outer: &Frame, inner: &Frame) -> Result<Vec<f64>> {
    if values.len() != outer.len() {
        return Err(Error::Shape(format!(
            "{} values do not fill a {outer} frame",
            values.len()
        )));
    }
    if !inner.fits_within(outer) {
        return Err(Error::Shape(format!("{inner} does not fit inside {outer}")));
    }
    let mut out = Vec::with_capacity(inner.len());
    for r in 0..inner.rows() {
        out.extend_from_slice(&values[r * outer.cols()..r * outer.cols() + inner.cols()]);
    }
    Ok(out)
}

/// K real signals sharing one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct SignalSet {
    frame: Frame,
    data: Vec<f64>,
}

impl SignalSet {
    pub fn new(frame: Frame, data: Vec<f64>) -> Result<Self> {
        let n = frame.len();
        if data.is_empty() || data.len() % n != 0 {
            return Err(Error::Shape(format!(
                "{} values are not a whole number of {frame} signals",
                data.len()
            )));
        }
        ensure_finite(&data, "signal set")?;
        Ok(SignalSet { frame, data })
    }

    pub fn from_signals(frame: Frame, signals: Vec<Vec<f64>>) -> Result<Self> {
        if let Some(bad) = signals.iter().find(|s| s.len() != frame.len()) {
            return Err(Error::Shape(format!(
                "signal of length {} does not match frame {frame}",
                bad.len()
            )));
        }
        Self::new(frame, signals.concat())
    }

    pub fn frame(&self) -> &Frame {
        &self.frame
    }

    pub fn count(&self) -> usize {
        self.data.len() / self.frame.len()
    }

    pub fn signal(&self, k: usize) -> &[f64] {
        let n = self.frame.len();
        &self.data[k * n..(k + 1) * n]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.frame.len())
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// A new set holding the signals at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.count()) {
            return Err(Error::Shape(format!(
                "signal index {bad} out of range for {} signals",
                self.count()
            )));
        }
        let data = indices
            .iter()
            .flat_map(|&i| self.signal(i).iter().copied())
            .collect();
        Self::new(self.frame.clone(), data)
    }
}

/// M filters with a small support, embedded in a full-size circular frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Dictionary {
    support: Frame,
    frame: Frame,
    filters: Vec<f64>,
}

impl Dictionary {
    pub fn new(support: Frame, frame: Frame, filters: Vec<f64>) -> Result<Self> {
        if !support.fits_within(&frame) {
            return Err(Error::Shape(format!(
                "filter support {support} does not fit inside frame {frame}"
            )));
        }
        let s = support.len();
        if filters.is_empty() || filters.len() % s != 0 {
            return Err(Error::Shape(format!(
                "{} values are not a whole number of {support} filters",
                filters.len()
            )));
        }
        ensure_finite(&filters, "dictionary")?;
        Ok(Dictionary {
            support,
            frame,
            filters,
        })
    }

    /// Build from filters already padded to the full frame, discarding the
    /// region outside `support`.
    pub fn from_padded(support: Frame, frame: Frame, padded: &[f64]) -> Result<Self> {
        let n = frame.len();
        if padded.is_empty() || padded.len() % n != 0 {
            return Err(Error::Shape(format!(
                "{} values are not a whole number of {frame} frames",
                padded.len()
            )));
        }
        let mut filters = Vec::with_capacity(padded.len() / n * support.len());
        for f in padded.chunks_exact(n) {
            filters.extend(crop(f, &frame, &support)?);
        }
        Self::new(support, frame, filters)
    }

    pub fn m_count(&self) -> usize {
        self.filters.len() / self.support.len()
    }

    pub fn support(&self) -> &Frame {
        &self.support
    }

    pub fn frame(&self) -> &Frame {
        &self.frame
    }

    pub fn filters(&self) -> &[f64] {
        &self.filters
    }

    pub fn filter(&self, m: usize) -> &[f64] {
        let s = self.support.len();
        &self.filters[m * s..(m + 1) * s]
    }

    /// All filters zero-padded to the frame, stacked filter after filter.
    pub fn padded(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.m_count() * self.frame.len());
        for m in 0..self.m_count() {
            out.extend(zero_pad(self.filter(m), &self.support, &self.frame).expect("validated shapes"));
        }
        out
    }

    /// Same filters, re-embedded in a different frame.
    pub fn with_frame(&self, frame: Frame) -> Result<Self> {
        Self::new(self.support.clone(), frame, self.filters.clone())
    }
}

/// Coefficient maps `x[k][m]`, each the size of the frame.
#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientMaps {
    k_count: usize,
    m_count: usize,
    frame: Frame,
    data: Vec<f64>,
}

impl CoefficientMaps {
    pub fn zeros(k_count: usize, m_count: usize, frame: Frame) -> Self {
        let len = k_count * m_count * frame.len();
        CoefficientMaps {
            k_count,
            m_count,
            frame,
            data: vec![0.0; len],
        }
    }

    pub fn new(k_count: usize, m_count: usize, frame: Frame, data: Vec<f64>) -> Result<Self> {
        if k_count == 0 || m_count == 0 {
            return Err(Error::Shape("coefficient maps need K, M > 0".into()));
        }
        if data.len() != k_count * m_count * frame.len() {
            return Err(Error::Shape(format!(
                "{} values do not match {k_count}x{m_count} maps of {frame}",
                data.len()
            )));
        }
        ensure_finite(&data, "coefficient maps")?;
        Ok(CoefficientMaps {
            k_count,
            m_count,
            frame,
            data,
        })
    }

    pub fn k_count(&self) -> usize {
        self.k_count
    }

    pub fn m_count(&self) -> usize {
        self.m_count
    }

    pub fn frame(&self) -> &Frame {
        &self.frame
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// All M maps of signal `k`, stacked.
    pub fn image(&self, k: usize) -> &[f64] {
        let w = self.m_count * self.frame.len();
        &self.data[k * w..(k + 1) * w]
    }

    pub fn image_mut(&mut self, k: usize) -> &mut [f64] {
        let w = self.m_count * self.frame.len();
        &mut self.data[k * w..(k + 1) * w]
    }

    pub fn map(&self, k: usize, m: usize) -> &[f64] {
        let n = self.frame.len();
        &self.image(k)[m * n..(m + 1) * n]
    }
}

/// Counters for the work done by the frequency-domain solvers.
#[derive(Debug, Default)]
pub struct OpCounter {
    ffts: AtomicU64,
    bin_solves: AtomicU64,
    bin_products: AtomicU64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct OpCounts {
    /// Single-frame forward or inverse transforms.
    pub ffts: u64,
    /// Per-bin M x M linear solves.
    pub bin_solves: u64,
    /// Per-bin length-M inner products or scaled updates.
    pub bin_products: u64,
}

impl OpCounter {
    pub fn snapshot(&self) -> OpCounts {
        OpCounts {
            ffts: self.ffts.load(Ordering::Relaxed),
            bin_solves: self.bin_solves.load(Ordering::Relaxed),
            bin_products: self.bin_products.load(Ordering::Relaxed),
        }
    }

    pub fn reset(&self) {
        self.ffts.store(0, Ordering::Relaxed);
        self.bin_solves.store(0, Ordering::Relaxed);
        self.bin_products.store(0, Ordering::Relaxed);
    }

    pub(crate) fn add_ffts(&self, n: u64) {
        self.ffts.fetch_add(n, Ordering::Relaxed);
    }

    pub(crate) fn add_bin_solves(&self, n: u64) {
        self.bin_solves.fetch_add(n, Ordering::Relaxed);
    }

    pub(crate) fn add_bin_products(&self, n: u64) {
        self.bin_products.fetch_add(n, Ordering::Relaxed);
    }
}

impl OpCounts {
    pub fn since(&self, earlier: &OpCounts) -> OpCounts {
        OpCounts {
            ffts: self.ffts - earlier.ffts,
            bin_solves: self.bin_solves - earlier.bin_solves,
            bin_products: self.bin_products - earlier.bin_products,
        }
    }
}

/// Frequency-domain data organized per bin: bin `n` holds a contiguous
/// length-`width` vector (one entry per filter or map).
#[derive(Clone, Debug, PartialEq)]
pub struct FreqBlock {
    bins: usize,
    width: usize,
    data: Vec<C64>,
}

impl FreqBlock {
    pub fn zeros(bins: usize, width: usize) -> Self {
        FreqBlock {
            bins,
            width,
            data: vec![C64::new(0.0, 0.0); bins * width],
        }
    }

    pub fn from_data(bins: usize, width: usize, data: Vec<C64>) -> Result<Self> {
        if data.len() != bins * width {
            return Err(Error::Shape(format!(
                "{} coefficients do not fill {bins} bins of width {width}",
                data.len()
            )));
        }
        Ok(FreqBlock { bins, width, data })
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bin(&self, n: usize) -> &[C64] {
        &self.data[n * self.width..(n + 1) * self.width]
    }

    pub fn bin_mut(&mut self, n: usize) -> &mut [C64] {
        &mut self.data[n * self.width..(n + 1) * self.width]
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [C64] {
        &mut self.data
    }

    /// Interleaved (re, im) view, for inner products over the real field.
    pub fn as_real(&self) -> &[f64] {
        bytemuck::cast_slice(&self.data)
    }

    pub fn as_real_mut(&mut self) -> &mut [f64] {
        bytemuck::cast_slice_mut(&mut self.data)
    }

    /// Entry `m` of every bin, i.e. the spectrum of one filter or map.
    pub fn column(&self, m: usize) -> Vec<C64> {
        (0..self.bins).map(|n| self.data[n * self.width + m]).collect()
    }

    fn check_conformable(&self, other: &FreqBlock, what: &str) -> Result<()> {
        if self.bins != other.bins || self.width != other.width {
            return Err(Error::Shape(format!(
                "{what}: {}x{} block against {}x{} block",
                self.bins, self.width, other.bins, other.width
            )));
        }
        Ok(())
    }
}

/// Cached FFT plans for one frame.
pub struct Fourier {
    frame: Frame,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
    scratch_len: usize,
    counter: Arc<OpCounter>,
}

impl fmt::Debug for Fourier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Fourier").field("frame", &self.frame).finish()
    }
}

impl Fourier {
    pub fn new(frame: &Frame) -> Self {
        Self::with_counter(frame, Arc::new(OpCounter::default()))
    }

    pub fn with_counter(frame: &Frame, counter: Arc<OpCounter>) -> Self {
        let mut planner = FftPlanner::new();
        let row_fwd = planner.plan_fft_forward(frame.cols());
        let row_inv = planner.plan_fft_inverse(frame.cols());
        let col_fwd = planner.plan_fft_forward(frame.rows());
        let col_inv = planner.plan_fft_inverse(frame.rows());
        let scratch_len = [&row_fwd, &row_inv, &col_fwd, &col_inv]
            .iter()
            .map(|p| p.get_inplace_scratch_len())
            .max()
            .unwrap_or(0);
        Fourier {
            frame: frame.clone(),
            row_fwd,
            row_inv,
            col_fwd,
            col_inv,
            scratch_len,
            counter,
        }
    }

    pub fn frame(&self) -> &Frame {
        &self.frame
    }

    /// Number of frequency bins (equal to the number of samples).
    pub fn bins(&self) -> usize {
        self.frame.len()
    }

    pub fn counter(&self) -> &Arc<OpCounter> {
        &self.counter
    }

    fn transform(&self, buf: &mut [C64], forward: bool) {
        debug_assert_eq!(buf.len(), self.frame.len());
        let (rows, cols) = (self.frame.rows(), self.frame.cols());
        let mut scratch = vec![C64::new(0.0, 0.0); self.scratch_len];
        let (row_plan, col_plan) = if forward {
            (&self.row_fwd, &self.col_fwd)
        } else {
            (&self.row_inv, &self.col_inv)
        };
        for row in buf.chunks_exact_mut(cols) {
            row_plan.process_with_scratch(row, &mut scratch);
        }
        if rows > 1 {
            let mut column = vec![C64::new(0.0, 0.0); rows];
            for c in 0..cols {
                for r in 0..rows {
                    column[r] = buf[r * cols + c];
                }
                col_plan.process_with_scratch(&mut column, &mut scratch);
                for r in 0..rows {
                    buf[r * cols + c] = column[r];
                }
            }
        }
        self.counter.add_ffts(1);
    }

    /// Unnormalized forward DFT of a real frame.
    pub fn forward(&self, real: &[f64]) -> Vec<C64> {
        let mut buf: Vec<C64> = real.iter().map(|&v| C64::new(v, 0.0)).collect();
        self.transform(&mut buf, true);
        buf
    }

    pub fn forward_in_place(&self, buf: &mut [C64]) {
        self.transform(buf, true);
    }

    /// Inverse DFT including the `1/N` factor.
    pub fn inverse_in_place(&self, buf: &mut [C64]) {
        self.transform(buf, false);
        let scale = 1.0 / buf.len() as f64;
        buf.iter_mut().for_each(|v| *v *= scale);
    }

    /// Real part of the inverse DFT.
    pub fn inverse_real(&self, spectrum: &[C64]) -> Vec<f64> {
        let mut buf = spectrum.to_vec();
        self.inverse_in_place(&mut buf);
        buf.into_iter().map(|v| v.re).collect()
    }

    /// Transform a stack of frames into a bin-major block of width `stack.len() / N`.
    pub fn forward_stack(&self, stack: &[f64]) -> FreqBlock {
        let n = self.bins();
        debug_assert_eq!(stack.len() % n, 0);
        let width = stack.len() / n;
        let mut block = FreqBlock::zeros(n, width);
        for (m, frame) in stack.chunks_exact(n).enumerate() {
            let spec = self.forward(frame);
            for (bin, v) in spec.into_iter().enumerate() {
                block.data[bin * width + m] = v;
            }
        }
        block
    }

    /// Inverse of [`Fourier::forward_stack`], keeping real parts.
    pub fn inverse_stack(&self, block: &FreqBlock) -> Vec<f64> {
        let n = self.bins();
        debug_assert_eq!(block.bins, n);
        let mut out = Vec::with_capacity(n * block.width);
        for m in 0..block.width {
            let mut col = block.column(m);
            self.inverse_in_place(&mut col);
            out.extend(col.into_iter().map(|v| v.re));
        }
        out
    }
}

/// Zero-pad `a` (shaped `shape`) to `frame` and take its unnormalized DFT.
pub fn dft_forward(a: &[f64], shape: &Frame, frame: &Frame) -> Result<Vec<C64>> {
    ensure_finite(a, "DFT input")?;
    let padded = zero_pad(a, shape, frame)?;
    Ok(Fourier::new(frame).forward(&padded))
}

/// Inverse DFT with `1/N` scaling.
pub fn dft_inverse(spectrum: &[C64], frame: &Frame) -> Result<Vec<C64>> {
    if spectrum.len() != frame.len() {
        return Err(Error::Shape(format!(
            "{} bins do not match frame {frame}",
            spectrum.len()
        )));
    }
    if spectrum.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(Error::NonFinite("DFT input"));
    }
    let mut buf = spectrum.to_vec();
    Fourier::new(frame).inverse_in_place(&mut buf);
    Ok(buf)
}

/// Per-bin `sum_m op[n][m] * var[n][m]`: the spectrum of `sum_m op_m * var_m`.
pub fn synthesize(op: &FreqBlock, var: &FreqBlock) -> Result<Vec<C64>> {
    op.check_conformable(var, "synthesis")?;
    Ok((0..op.bins)
        .map(|n| {
            op.bin(n)
                .iter()
                .zip(var.bin(n))
                .fold(C64::new(0.0, 0.0), |acc, (a, b)| acc + a * b)
        })
        .collect())
}

/// `sum_m d_m * x_{k,m}` for signal `k`, via the DFT.
pub fn conv_sum(dict: &Dictionary, maps: &CoefficientMaps, k: usize) -> Result<Vec<f64>> {
    if dict.frame() != maps.frame() {
        return Err(Error::Shape(format!(
            "dictionary frame {} differs from map frame {}",
            dict.frame(),
            maps.frame()
        )));
    }
    if dict.m_count() != maps.m_count() {
        return Err(Error::Shape(format!(
            "{} filters against {} maps per signal",
            dict.m_count(),
            maps.m_count()
        )));
    }
    if k >= maps.k_count() {
        return Err(Error::Shape(format!(
            "signal index {k} out of range for {} signals",
            maps.k_count()
        )));
    }
    let fourier = Fourier::new(dict.frame());
    let dhat = fourier.forward_stack(&dict.padded());
    let xhat = fourier.forward_stack(maps.image(k));
    Ok(fourier.inverse_real(&synthesize(&dhat, &xhat)?))
}

/// Per bin: `conj(op_n) * (op_n . var_n - target_n)`, the spectrum of the
/// gradient of `1/2 || op var - target ||^2` with respect to `var`.
fn normal_residual(op: &FreqBlock, var: &FreqBlock, target: &[C64]) -> Result<FreqBlock> {
    op.check_conformable(var, "gradient")?;
    if target.len() != op.bins {
        return Err(Error::Shape(format!(
            "target has {} bins, operator has {}",
            target.len(),
            op.bins
        )));
    }
    let mut out = FreqBlock::zeros(op.bins, op.width);
    for n in 0..op.bins {
        let a = op.bin(n);
        let r = a
            .iter()
            .zip(var.bin(n))
            .fold(C64::new(0.0, 0.0), |acc, (p, q)| acc + p * q)
            - target[n];
        for (g, p) in out.bin_mut(n).iter_mut().zip(a) {
            *g = p.conj() * r;
        }
    }
    Ok(out)
}

/// Spectrum of the gradient of `1/2 ||D X_k - s_k||^2` with respect to `X_k`.
pub fn freq_gradient_csc(dhat: &FreqBlock, xhat: &FreqBlock, shat: &[C64]) -> Result<FreqBlock> {
    normal_residual(dhat, xhat, shat)
}

/// Spectrum of the gradient of `1/2 ||X_k D - s_k||^2` with respect to `D`.
pub fn freq_gradient_dict(xhat_k: &FreqBlock, dhat: &FreqBlock, shat_k: &[C64]) -> Result<FreqBlock> {
    normal_residual(xhat_k, dhat, shat_k)
}
