//! Pseudogradient codecs, error feedback and the simulated collective.
//!
//! Values travel through the simulator in `f64`; wire sizes are accounted
//! as if values were fp32. Logical sizes are in bits because top-k indices
//! are not byte aligned.
//!
//! Serialized layout of an [`EncodedDelta`] (little-endian):
//!
//! ```text
//! kind u8 | bits u8 | scheme u8 | granularity u8 | rows u32 | cols u32
//! none : rows*cols f64
//! topk : count u32, then count x (index u32, value f64)
//! quant: codebooks u32, per codebook (levels u32, levels x f64),
//!        then rows*cols level indices as u8
//! ```

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{LinalgError, Matrix};
use crate::outer_optim::{mean_matrices, OuterError};

use QuantScheme as Scheme;

/// Bits per transmitted value.
pub const VALUE_BITS: u64 = 32;

/// Iteration cap of the Lloyd-Max quantizer.
pub const LLOYD_MAX_ITERS: usize = 50;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CompressError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("invalid compressor spec: {0}")]
    InvalidSpec(String),
    #[error("malformed encoded delta: {0}")]
    Decode(String),
    #[error("collective needs at least one payload")]
    NoPayloads,
}

impl From<OuterError> for CompressError {
    fn from(e: OuterError) -> Self {
        match e {
            OuterError::Linalg(l) => Self::Linalg(l),
            OuterError::NoWorkers => Self::NoPayloads,
            OuterError::InvalidConfig(s) => Self::InvalidSpec(s),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuantScheme {
    Linear,
    Statistical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    Global,
    Rowwise,
}

/// The codec half of a compressor spec.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Codec {
    None,
    Topk {
        k_pct: f64,
    },
    Quant {
        bits: u8,
        scheme: QuantScheme,
        granularity: Granularity,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompressorSpec {
    pub codec: Codec,
    #[serde(default)]
    pub error_feedback: bool,
    #[serde(default = "default_ef_beta")]
    pub ef_beta: f64,
}

fn default_ef_beta() -> f64 {
    1.0
}

impl Default for CompressorSpec {
    fn default() -> Self {
        Self::none()
    }
}

impl CompressorSpec {
    pub fn none() -> Self {
        Self {
            codec: Codec::None,
            error_feedback: false,
            ef_beta: 1.0,
        }
    }

    pub fn topk(k_pct: f64) -> Self {
        Self {
            codec: Codec::Topk { k_pct },
            ..Self::none()
        }
    }

    pub fn quant(bits: u8, scheme: QuantScheme, granularity: Granularity) -> Self {
        Self {
            codec: Codec::Quant {
                bits,
                scheme,
                granularity,
            },
            ..Self::none()
        }
    }

    pub fn with_error_feedback(mut self, beta: f64) -> Self {
        self.error_feedback = true;
        self.ef_beta = beta;
        self
    }

    pub fn validate(&self) -> Result<(), CompressError> {
        match self.codec {
            Codec::None => {}
            Codec::Topk { k_pct } => {
                if !(k_pct > 0.0 && k_pct <= 100.0) {
                    return Err(CompressError::InvalidSpec(format!(
                        "k_pct must lie in (0, 100], got {k_pct}"
                    )));
                }
            }
            Codec::Quant { bits, .. } => {
                if !(1..=8).contains(&bits) {
                    return Err(CompressError::InvalidSpec(format!(
                        "bits must lie in 1..=8, got {bits}"
                    )));
                }
            }
        }
        if !(0.0..=1.0).contains(&self.ef_beta) {
            return Err(CompressError::InvalidSpec("ef_beta must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Whether decode(encode(x)) == x bitwise for every x.
    pub fn is_lossless(&self) -> bool {
        match self.codec {
            Codec::None => true,
            Codec::Topk { k_pct } => k_pct >= 100.0,
            Codec::Quant { .. } => false,
        }
    }

    /// The collective this codec is modeled with.
    pub fn collective(&self) -> Collective {
        match self.codec {
            Codec::None => Collective::RingAllreduce,
            Codec::Topk { .. } => Collective::Allgather,
            Codec::Quant { .. } => Collective::A2aRsThenAg,
        }
    }

    /// Quantize/dequantize stages applied by the collective.
    pub fn stages(&self) -> u32 {
        match self.codec {
            Codec::Quant { .. } => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Collective {
    RingAllreduce,
    A2aRsThenAg,
    Allgather,
}

impl Collective {
    /// Bytes each worker sends (and receives) per byte of its own payload.
    pub fn volume_factor(&self, workers: usize) -> f64 {
        let k = workers as f64;
        match self {
            Self::RingAllreduce | Self::A2aRsThenAg => 2.0 * (k - 1.0) / k,
            Self::Allgather => k - 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Payload {
    Dense(Vec<f64>),
    Topk {
        indices: Vec<u32>,
        values: Vec<f64>,
    },
    Quant {
        bits: u8,
        scheme: QuantScheme,
        granularity: Granularity,
        /// One codebook for global granularity, one per row otherwise.
        codebooks: Vec<Vec<f64>>,
        levels: Vec<u8>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedDelta {
    pub rows: usize,
    pub cols: usize,
    pub payload: Payload,
}

/// Closed-form wire size of one encoded matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct WireSize {
    pub value_bits: u64,
    pub index_bits: u64,
    pub metadata_bits: u64,
}

impl WireSize {
    pub fn total_bits(&self) -> u64 {
        self.value_bits + self.index_bits + self.metadata_bits
    }

    pub fn total_bytes(&self) -> f64 {
        self.total_bits() as f64 / 8.0
    }
}

/// `ceil(log2(n))`, 0 for n <= 1.
pub fn index_width(n: usize) -> u64 {
    if n <= 1 {
        0
    } else {
        u64::from(usize::BITS - (n - 1).leading_zeros())
    }
}

pub fn topk_count(k_pct: f64, numel: usize) -> usize {
    let k = (k_pct / 100.0 * numel as f64).round() as usize;
    k.clamp(1, numel)
}

/// Per-worker payload size for one `rows x cols` matrix. Collective
/// volume factors are applied separately (see [`Collective`]).
pub fn comm_bytes(spec: &CompressorSpec, rows: usize, cols: usize) -> WireSize {
    let n = (rows * cols) as u64;
    match spec.codec {
        Codec::None => WireSize {
            value_bits: VALUE_BITS * n,
            ..WireSize::default()
        },
        Codec::Topk { k_pct } => {
            let kept = topk_count(k_pct, rows * cols) as u64;
            WireSize {
                value_bits: VALUE_BITS * kept,
                index_bits: index_width(rows * cols) * kept,
                metadata_bits: 0,
            }
        }
        Codec::Quant {
            bits,
            scheme,
            granularity,
        } => {
            let books = match granularity {
                Granularity::Global => 1,
                Granularity::Rowwise => rows as u64,
            };
            let per_book = match scheme {
                Scheme::Linear => 2,
                Scheme::Statistical => 1u64 << bits,
            };
            WireSize {
                value_bits: u64::from(bits) * n,
                index_bits: 0,
                metadata_bits: books * per_book * VALUE_BITS,
            }
        }
    }
}

impl EncodedDelta {
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    /// Wire size implied by the payload.
    pub fn logical_size(&self) -> WireSize {
        let n = (self.rows * self.cols) as u64;
        match &self.payload {
            Payload::Dense(_) => WireSize {
                value_bits: VALUE_BITS * n,
                ..WireSize::default()
            },
            Payload::Topk { indices, .. } => WireSize {
                value_bits: VALUE_BITS * indices.len() as u64,
                index_bits: index_width(self.rows * self.cols) * indices.len() as u64,
                metadata_bits: 0,
            },
            Payload::Quant {
                bits,
                scheme,
                codebooks,
                ..
            } => {
                // Degenerate codebooks are stored deduplicated but the wire
                // format is fixed-size.
                let per_book = match scheme {
                    Scheme::Linear => 2,
                    Scheme::Statistical => 1u64 << bits,
                };
                WireSize {
                    value_bits: u64::from(*bits) * n,
                    index_bits: 0,
                    metadata_bits: codebooks.len() as u64 * per_book * VALUE_BITS,
                }
            }
        }
    }

    pub fn logical_bytes(&self) -> f64 {
        self.logical_size().total_bytes()
    }

    pub fn decode(&self) -> Result<Matrix, CompressError> {
        let n = self.rows * self.cols;
        let data = match &self.payload {
            Payload::Dense(v) => {
                if v.len() != n {
                    return Err(CompressError::Decode("dense length".into()));
                }
                v.clone()
            }
            Payload::Topk { indices, values } => {
                if indices.len() != values.len() {
                    return Err(CompressError::Decode("topk index/value count".into()));
                }
                let mut out = vec![0.0; n];
                for (&i, &v) in indices.iter().zip(values) {
                    let slot = out
                        .get_mut(i as usize)
                        .ok_or_else(|| CompressError::Decode(format!("index {i} out of range")))?;
                    *slot = v;
                }
                out
            }
            Payload::Quant {
                granularity,
                codebooks,
                levels,
                ..
            } => {
                if levels.len() != n {
                    return Err(CompressError::Decode("level count".into()));
                }
                let mut out = Vec::with_capacity(n);
                for (i, &l) in levels.iter().enumerate() {
                    let book = match granularity {
                        Granularity::Global => codebooks.first(),
                        Granularity::Rowwise => codebooks.get(i / self.cols),
                    }
                    .ok_or_else(|| CompressError::Decode("missing codebook".into()))?;
                    let v = book
                        .get(l as usize)
                        .ok_or_else(|| CompressError::Decode(format!("level {l} out of range")))?;
                    out.push(*v);
                }
                out
            }
        };
        Ok(Matrix::new(self.rows, self.cols, data)?)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let (kind, bits, scheme, gran) = match &self.payload {
            Payload::Dense(_) => (0u8, 0u8, 0u8, 0u8),
            Payload::Topk { .. } => (1, 0, 0, 0),
            Payload::Quant {
                bits,
                scheme,
                granularity,
                ..
            } => (
                2,
                *bits,
                match scheme {
                    Scheme::Linear => 0,
                    Scheme::Statistical => 1,
                },
                match granularity {
                    Granularity::Global => 0,
                    Granularity::Rowwise => 1,
                },
            ),
        };
        let mut out = vec![kind, bits, scheme, gran];
        out.extend_from_slice(&(self.rows as u32).to_le_bytes());
        out.extend_from_slice(&(self.cols as u32).to_le_bytes());
        match &self.payload {
            Payload::Dense(v) => {
                for x in v {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
            Payload::Topk { indices, values } => {
                out.extend_from_slice(&(indices.len() as u32).to_le_bytes());
                for (i, v) in indices.iter().zip(values) {
                    out.extend_from_slice(&i.to_le_bytes());
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
            Payload::Quant {
                codebooks, levels, ..
            } => {
                out.extend_from_slice(&(codebooks.len() as u32).to_le_bytes());
                for book in codebooks {
                    out.extend_from_slice(&(book.len() as u32).to_le_bytes());
                    for x in book {
                        out.extend_from_slice(&x.to_le_bytes());
                    }
                }
                out.extend_from_slice(levels);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CompressError> {
        let mut r = Reader { bytes, pos: 0 };
        let kind = r.u8()?;
        let bits = r.u8()?;
        let scheme = r.u8()?;
        let gran = r.u8()?;
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let n = rows * cols;
        let payload = match kind {
            0 => Payload::Dense((0..n).map(|_| r.f64()).collect::<Result<_, _>>()?),
            1 => {
                let count = r.u32()? as usize;
                let mut indices = Vec::with_capacity(count);
                let mut values = Vec::with_capacity(count);
                for _ in 0..count {
                    indices.push(r.u32()?);
                    values.push(r.f64()?);
                }
                Payload::Topk { indices, values }
            }
            2 => {
                let scheme = match scheme {
                    0 => Scheme::Linear,
                    1 => Scheme::Statistical,
                    s => return Err(CompressError::Decode(format!("scheme tag {s}"))),
                };
                let granularity = match gran {
                    0 => Granularity::Global,
                    1 => Granularity::Rowwise,
                    g => return Err(CompressError::Decode(format!("granularity tag {g}"))),
                };
                let books = r.u32()? as usize;
                let mut codebooks = Vec::with_capacity(books);
                for _ in 0..books {
                    let len = r.u32()? as usize;
                    codebooks.push((0..len).map(|_| r.f64()).collect::<Result<_, _>>()?);
                }
                let levels = r.take(n)?.to_vec();
                Payload::Quant {
                    bits,
                    scheme,
                    granularity,
                    codebooks,
                    levels,
                }
            }
            k => return Err(CompressError::Decode(format!("kind tag {k}"))),
        };
        if r.pos != bytes.len() {
            return Err(CompressError::Decode("trailing bytes".into()));
        }
        Ok(Self {
            rows,
            cols,
            payload,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CompressError> {
        let end = self.pos + n;
        let s = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| CompressError::Decode("truncated".into()))?;
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, CompressError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32, CompressError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64, CompressError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn dense_encode(w: &Matrix) -> EncodedDelta {
    EncodedDelta {
        rows: w.rows(),
        cols: w.cols(),
        payload: Payload::Dense(w.data().to_vec()),
    }
}

/// Keeps the `max(1, round(k% * n))` largest-magnitude entries; ties go to
/// the lowest flat index. Kept values are copied bit-exactly.
pub fn topk_encode(w: &Matrix, k_pct: f64) -> EncodedDelta {
    let n = w.len();
    let k = topk_count(k_pct, n);
    let data = w.data();
    let mut order: Vec<u32> = (0..n as u32).collect();
    if k < n {
        order.sort_by(|&a, &b| {
            data[b as usize]
                .abs()
                .total_cmp(&data[a as usize].abs())
                .then(a.cmp(&b))
        });
        order.truncate(k);
        order.sort_unstable();
    }
    let values = order.iter().map(|&i| data[i as usize]).collect();
    EncodedDelta {
        rows: w.rows(),
        cols: w.cols(),
        payload: Payload::Topk {
            indices: order,
            values,
        },
    }
}

pub fn topk_decode(e: &EncodedDelta) -> Result<Matrix, CompressError> {
    e.decode()
}

/// `2^bits` uniform levels over `[lo, hi]`; the top level is exactly `hi`.
fn linear_levels(lo: f64, hi: f64, bits: u8) -> Vec<f64> {
    let count = 1usize << bits;
    if lo == hi {
        return vec![lo];
    }
    let step = (hi - lo) / (count - 1) as f64;
    (0..count)
        .map(|i| if i == count - 1 { hi } else { lo + i as f64 * step })
        .collect()
}

/// Nearest level in a sorted codebook; ties go to the lower index.
fn nearest_level(levels: &[f64], x: f64) -> usize {
    let pos = levels.partition_point(|&l| l < x);
    if pos == 0 {
        return 0;
    }
    if pos == levels.len() {
        return levels.len() - 1;
    }
    if x - levels[pos - 1] <= levels[pos] - x {
        pos - 1
    } else {
        pos
    }
}

fn linear_index(levels: &[f64], lo: f64, hi: f64, x: f64) -> usize {
    if levels.len() == 1 {
        return 0;
    }
    let last = levels.len() - 1;
    let t = (x - lo) / (hi - lo) * last as f64;
    let mut idx = (t.round_ties_even().max(0.0) as usize).min(last);
    // Guard against rounding in the scaled coordinate.
    loop {
        let here = (x - levels[idx]).abs();
        if idx > 0 && (x - levels[idx - 1]).abs() < here {
            idx -= 1;
        } else if idx < last && (x - levels[idx + 1]).abs() < here {
            idx += 1;
        } else {
            return idx;
        }
    }
}

fn sum_sq_error(values: &[f64], levels: &[f64], assign: &[usize]) -> f64 {
    values
        .iter()
        .zip(assign)
        .map(|(&x, &a)| (x - levels[a]) * (x - levels[a]))
        .sum()
}

/// Lloyd-Max iterations from `init`. Returns the best codebook seen and
/// its assignment (iterates are tracked so the result never loses to
/// its own starting point).
fn lloyd_max(values: &[f64], init: Vec<f64>) -> (Vec<f64>, Vec<usize>, f64) {
    let mut levels = init;
    let mut assign: Vec<usize> = values.iter().map(|&x| nearest_level(&levels, x)).collect();
    let mut best = (levels.clone(), assign.clone(), sum_sq_error(values, &levels, &assign));
    for _ in 0..LLOYD_MAX_ITERS {
        let mut sums = vec![0.0; levels.len()];
        let mut counts = vec![0usize; levels.len()];
        for (&x, &a) in values.iter().zip(&assign) {
            sums[a] += x;
            counts[a] += 1;
        }
        for j in 0..levels.len() {
            if counts[j] > 0 {
                levels[j] = sums[j] / counts[j] as f64;
            }
        }
        // Centroids of ordered clusters stay ordered, but keep the codebook
        // sorted explicitly for the nearest-level search.
        levels.sort_by(f64::total_cmp);
        let next: Vec<usize> = values.iter().map(|&x| nearest_level(&levels, x)).collect();
        let err = sum_sq_error(values, &levels, &next);
        if err < best.2 {
            best = (levels.clone(), next.clone(), err);
        }
        if next == assign {
            break;
        }
        assign = next;
    }
    best
}

fn quantile_init(values: &[f64], count: usize) -> Vec<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    (0..count)
        .map(|j| {
            let q = ((j as f64 + 0.5) / count as f64 * n as f64).floor() as usize;
            sorted[q.min(n - 1)]
        })
        .collect()
}

/// Codebook and level indices for one group of values.
fn quantize_group(values: &[f64], bits: u8, scheme: QuantScheme) -> (Vec<f64>, Vec<u8>) {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        return (vec![lo], vec![0; values.len()]);
    }
    match scheme {
        Scheme::Linear => {
            let levels = linear_levels(lo, hi, bits);
            let idx = values
                .iter()
                .map(|&x| linear_index(&levels, lo, hi, x) as u8)
                .collect();
            (levels, idx)
        }
        Scheme::Statistical => {
            let count = 1usize << bits;
            let from_quantiles = lloyd_max(values, quantile_init(values, count));
            let from_grid = lloyd_max(values, linear_levels(lo, hi, bits));
            let (levels, assign, _) = if from_grid.2 < from_quantiles.2 {
                from_grid
            } else {
                from_quantiles
            };
            // Drop duplicate levels and remap.
            let mut book: Vec<f64> = Vec::with_capacity(levels.len());
            let mut remap = Vec::with_capacity(levels.len());
            for &l in &levels {
                if book.last().is_none_or(|&b: &f64| b.to_bits() != l.to_bits()) {
                    book.push(l);
                }
                remap.push((book.len() - 1) as u8);
            }
            let idx = assign.iter().map(|&a| remap[a]).collect();
            (book, idx)
        }
    }
}

pub fn quant_encode(
    w: &Matrix,
    bits: u8,
    scheme: QuantScheme,
    granularity: Granularity,
) -> EncodedDelta {
    let (codebooks, levels) = match granularity {
        Granularity::Global => {
            let (book, idx) = quantize_group(w.data(), bits, scheme);
            (vec![book], idx)
        }
        Granularity::Rowwise => {
            let mut books = Vec::with_capacity(w.rows());
            let mut idx = Vec::with_capacity(w.len());
            for r in 0..w.rows() {
                let (book, i) = quantize_group(w.row(r), bits, scheme);
                books.push(book);
                idx.extend(i);
            }
            (books, idx)
        }
    };
    EncodedDelta {
        rows: w.rows(),
        cols: w.cols(),
        payload: Payload::Quant {
            bits,
            scheme,
            granularity,
            codebooks,
            levels,
        },
    }
}

pub fn quant_decode(e: &EncodedDelta) -> Result<Matrix, CompressError> {
    e.decode()
}

/// Encodes with the codec of `spec` (error feedback not applied).
pub fn encode(w: &Matrix, spec: &CompressorSpec) -> EncodedDelta {
    match spec.codec {
        Codec::None => dense_encode(w),
        Codec::Topk { k_pct } => topk_encode(w, k_pct),
        Codec::Quant {
            bits,
            scheme,
            granularity,
        } => quant_encode(w, bits, scheme, granularity),
    }
}

/// Error feedback around an arbitrary codec: `acc = beta * e + delta`,
/// emit `C(acc)`, new residual `acc - decode(C(acc))`.
pub fn ef_wrap_with(
    delta: &Matrix,
    residual: &Matrix,
    beta: f64,
    codec: impl Fn(&Matrix) -> EncodedDelta,
) -> Result<(EncodedDelta, Matrix), CompressError> {
    delta.check_same_shape(residual)?;
    // A zero residual contributes nothing; skipping the add keeps the
    // accumulator bit-identical to the delta (including signed zeros).
    let acc = residual.zip_map(delta, |e, d| if e == 0.0 { d } else { beta * e + d })?;
    let emitted = codec(&acc);
    let next = acc.sub(&emitted.decode()?)?;
    Ok((emitted, next))
}

pub fn ef_wrap(
    delta: &Matrix,
    residual: &Matrix,
    spec: &CompressorSpec,
) -> Result<(EncodedDelta, Matrix), CompressError> {
    ef_wrap_with(delta, residual, spec.ef_beta, |m| encode(m, spec))
}

/// Per-worker traffic of one collective call.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CommStats {
    /// Encoded payload per worker, summed over stages.
    pub payload_bits: u64,
    pub sent_bits: f64,
    pub received_bits: f64,
}

impl CommStats {
    pub fn merge(&mut self, other: &CommStats) {
        self.payload_bits += other.payload_bits;
        self.sent_bits += other.sent_bits;
        self.received_bits += other.received_bits;
    }

    pub fn sent_bytes(&self) -> f64 {
        self.sent_bits / 8.0
    }
}

/// Traffic of one collective over a `rows x cols` matrix with `workers`.
pub fn collective_stats(spec: &CompressorSpec, rows: usize, cols: usize, workers: usize) -> CommStats {
    let size = comm_bytes(spec, rows, cols).total_bits();
    // For quantized payloads: reduce-scatter of the stage-1 payload plus
    // all-gather of the re-quantized stage-2 payload, (K-1)/K each.
    let wire = spec.collective().volume_factor(workers) * size as f64;
    CommStats {
        payload_bits: size * u64::from(spec.stages()),
        sent_bits: wire,
        received_bits: wire,
    }
}

/// Simulated collective average of the workers' encoded deltas.
///
/// Quantized payloads are decoded, averaged in full precision, quantized
/// again with the same spec and decoded (two stages). Other codecs are
/// decoded and averaged once.
pub fn collective_reduce(
    encoded: &[EncodedDelta],
    spec: &CompressorSpec,
) -> Result<(Matrix, CommStats), CompressError> {
    let first = encoded.first().ok_or(CompressError::NoPayloads)?;
    let decoded = encoded
        .iter()
        .map(EncodedDelta::decode)
        .collect::<Result<Vec<_>, _>>()?;
    for d in &decoded {
        decoded[0].check_same_shape(d)?;
    }
    let refs: Vec<&Matrix> = decoded.iter().collect();
    let mean = mean_matrices(&refs)?;
    let out = match spec.codec {
        Codec::Quant { .. } => encode(&mean, spec).decode()?,
        _ => mean,
    };
    let stats = collective_stats(spec, first.rows, first.cols, encoded.len());
    Ok((out, stats))
}
