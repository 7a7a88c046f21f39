//! Synthetic compositional regression world.
//!
//! A task holds a base map `W0` plus per-content maps `T_c` and per-style
//! maps `S_s`, all m×n. The composed target operator for the pair (c, s) is
//! additive: `Y(c, s) = W0 + T_c + S_s`. Batches pair i.i.d. standard-normal
//! inputs `Z` with noiseless targets `X = Y(c, s) · Z`, so with isotropic
//! inputs the expected squared prediction error of any candidate operator
//! equals its squared Frobenius distance to `Y(c, s)`.
//!
//! All stored matrices are quantized to a 2^-40 grid at generation. Entries
//! stay well under 2^13 in magnitude, so sums and differences of a few task
//! matrices are exact in f64; the additive identities above hold bit-for-bit,
//! not just approximately.

mod oracle;

pub use oracle::{oracle_best_fit, singular_values, truncated_svd, OracleFit, OracleStructure};

use crate::error::{Error, Result};
use crate::matcore::{gaussian, Matrix, SeededRng};

const W0_STREAM: u64 = 0;
const QUANT_SCALE: f64 = 1099511627776.0; // 2^40

fn quantize(m: &Matrix) -> Matrix {
    let data = m
        .data()
        .iter()
        .map(|x| (x * QUANT_SCALE).round() / QUANT_SCALE)
        .collect();
    Matrix::from_vec(m.rows(), m.cols(), data).expect("shape unchanged")
}

/// Generated content-style regression task.
#[derive(Debug, Clone)]
pub struct SynthTask {
    m: usize,
    n: usize,
    w0: Matrix,
    contents: Vec<Matrix>,
    styles: Vec<Matrix>,
    gt_rank: usize,
    seed: u64,
}

/// One sampled batch: inputs `z` (n×batch) and exact targets `x` (m×batch).
#[derive(Debug, Clone)]
pub struct Batch {
    pub z: Matrix,
    pub x: Matrix,
    pub content_id: usize,
    pub style_id: usize,
}

impl SynthTask {
    /// Deterministically generates a task from its parameters.
    ///
    /// `W0` is a dense Gaussian map; each `T_c` and `S_s` is a rank-`gt_rank`
    /// product `U·V` of Gaussian factors with per-factor stddev
    /// `1/sqrt(gt_rank)`. Regenerating with the same arguments reproduces the
    /// task bit-exactly.
    pub fn generate(
        m: usize,
        n: usize,
        num_contents: usize,
        num_styles: usize,
        gt_rank: usize,
        seed: u64,
    ) -> Result<SynthTask> {
        if m == 0 || n == 0 {
            return Err(Error::InvalidArgument {
                what: "task dims",
                details: format!("m={m}, n={n} must be positive"),
            });
        }
        if num_contents == 0 || num_styles == 0 {
            return Err(Error::InvalidArgument {
                what: "task counts",
                details: format!(
                    "num_contents={num_contents}, num_styles={num_styles} must be positive"
                ),
            });
        }
        if gt_rank == 0 {
            return Err(Error::InvalidArgument {
                what: "gt_rank",
                details: "ground-truth rank must be positive".to_string(),
            });
        }
        if gt_rank > m.min(n) / 2 {
            log::warn!(
                "gt_rank {gt_rank} above min(m, n)/2 = {}; composed targets may not be \
                 representable by modest-rank adapters",
                m.min(n) / 2
            );
        }
        let stddev = 1.0 / (gt_rank as f64).sqrt();
        let w0 = quantize(&gaussian(
            m,
            n,
            &mut SeededRng::substream(seed, W0_STREAM),
            stddev,
        )?);
        let low_rank_map = |stream: u64| -> Result<Matrix> {
            let mut rng = SeededRng::substream(seed, stream);
            let u = gaussian(m, gt_rank, &mut rng, stddev)?;
            let v = gaussian(gt_rank, n, &mut rng, stddev)?;
            Ok(quantize(&u.matmul(&v)?))
        };
        let contents = (0..num_contents)
            .map(|c| low_rank_map(1 + c as u64))
            .collect::<Result<Vec<_>>>()?;
        let styles = (0..num_styles)
            .map(|s| low_rank_map(1 + num_contents as u64 + s as u64))
            .collect::<Result<Vec<_>>>()?;
        Ok(SynthTask {
            m,
            n,
            w0,
            contents,
            styles,
            gt_rank,
            seed,
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn num_contents(&self) -> usize {
        self.contents.len()
    }

    pub fn num_styles(&self) -> usize {
        self.styles.len()
    }

    pub fn gt_rank(&self) -> usize {
        self.gt_rank
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn w0(&self) -> &Matrix {
        &self.w0
    }

    pub fn content_map(&self, content_id: usize) -> Result<&Matrix> {
        self.contents
            .get(content_id)
            .ok_or(Error::IdOutOfRange {
                what: "content",
                id: content_id,
                count: self.contents.len(),
            })
    }

    pub fn style_map(&self, style_id: usize) -> Result<&Matrix> {
        self.styles.get(style_id).ok_or(Error::IdOutOfRange {
            what: "style",
            id: style_id,
            count: self.styles.len(),
        })
    }

    /// Composed target operator `Y(c, s) = (W0 + T_c) + S_s`, exact.
    pub fn composed_target(&self, content_id: usize, style_id: usize) -> Result<Matrix> {
        let t = self.content_map(content_id)?;
        let s = self.style_map(style_id)?;
        self.w0.add(t)?.add(s)
    }

    /// `W0 + T_c`, the content-alone reference operator.
    pub fn content_only_target(&self, content_id: usize) -> Result<Matrix> {
        self.w0.add(self.content_map(content_id)?)
    }

    /// `W0 + S_s`, the style-alone reference operator.
    pub fn style_only_target(&self, style_id: usize) -> Result<Matrix> {
        self.w0.add(self.style_map(style_id)?)
    }

    /// `T_c + S_s`, the adapter-space fitting target.
    pub fn delta_target(&self, content_id: usize, style_id: usize) -> Result<Matrix> {
        self.content_map(content_id)?.add(self.style_map(style_id)?)
    }

    /// Draws `Z` from `rng` and returns the exact pair (Z, Y(c, s)·Z).
    pub fn sample_batch(
        &self,
        content_id: usize,
        style_id: usize,
        batch_size: usize,
        rng: &mut SeededRng,
    ) -> Result<Batch> {
        if batch_size == 0 {
            return Err(Error::InvalidArgument {
                what: "batch_size",
                details: "batch size must be at least 1".to_string(),
            });
        }
        let z = gaussian(self.n, batch_size, rng, 1.0)?;
        self.batch_from_inputs(content_id, style_id, z)
    }

    /// Batch with caller-provided inputs (e.g. identity columns for debugging).
    pub fn batch_from_inputs(
        &self,
        content_id: usize,
        style_id: usize,
        z: Matrix,
    ) -> Result<Batch> {
        let y = self.composed_target(content_id, style_id)?;
        let x = y.matmul(&z)?;
        Ok(Batch {
            z,
            x,
            content_id,
            style_id,
        })
    }

    /// Batch whose targets use the content-alone operator `W0 + T_c`.
    pub fn sample_content_only_batch(
        &self,
        content_id: usize,
        batch_size: usize,
        rng: &mut SeededRng,
    ) -> Result<Batch> {
        let y = self.content_only_target(content_id)?;
        let z = gaussian(self.n, batch_size, rng, 1.0)?;
        let x = y.matmul(&z)?;
        Ok(Batch {
            z,
            x,
            content_id,
            style_id: usize::MAX,
        })
    }

    /// Batch whose targets use the style-alone operator `W0 + S_s`.
    pub fn sample_style_only_batch(
        &self,
        style_id: usize,
        batch_size: usize,
        rng: &mut SeededRng,
    ) -> Result<Batch> {
        let y = self.style_only_target(style_id)?;
        let z = gaussian(self.n, batch_size, rng, 1.0)?;
        let x = y.matmul(&z)?;
        Ok(Batch {
            z,
            x,
            content_id: usize::MAX,
            style_id,
        })
    }

    /// FNV-1a hash of W0's little-endian bytes; task files store this.
    pub fn w0_checksum(&self) -> u64 {
        let mut hash: u64 = 0xcbf29ce484222325;
        for value in self.w0.data() {
            for byte in value.to_le_bytes() {
                hash ^= byte as u64;
                hash = hash.wrapping_mul(0x100000001b3);
            }
        }
        hash
    }
}
