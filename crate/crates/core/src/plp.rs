//! Partitioned low-rank adapters.
//!
//! An adapter holds `ΔW = W_up · W_down` with `W_up = [A; B]` (A: d×r on top
//! of B: (m−d)×r) and `W_down = [C, D]` (C: r×d left of D: r×(n−d)). A and C
//! are frozen and regenerable from a seed; B and D train. By partitioned
//! multiplication,
//!
//! ```text
//! ΔW = [ AC  AD ]
//!      [ BC  BD ]
//! ```
//!
//! In exact-disjoint mode A uses only rank indices `[0, r/2)` and C only
//! `[r/2, r)`, so every term of each AC entry is exactly zero and the
//! top-left block vanishes identically. The approximate-random mode keeps
//! dense Gaussian frozen blocks whose AC leakage is bounded by a recorded
//! `eps_orth`.

use crate::error::{Error, Result};
use crate::matcore::{gaussian, orthonormal_columns, Matrix, SeededRng};

/// Stddev for Gaussian-initialized trainable blocks.
pub const TRAINABLE_INIT_STDDEV: f64 = 0.02;

/// Scale of the default orthogonality bound `eps = ORTH_EPS_SCALE / sqrt(r)`.
///
/// Fixed from a 20-seed measurement of ‖AC‖/(‖A‖·‖C‖) at d=32, r=8 (max
/// 0.3632, i.e. 1.027/sqrt(8)) with 2x headroom.
pub const ORTH_EPS_SCALE: f64 = 2.055;

/// Default orthogonality bound for approximate-random frozen blocks.
pub fn default_orth_eps(rank: usize) -> f64 {
    ORTH_EPS_SCALE / (rank as f64).sqrt()
}

/// Default frozen feature dimension: half the output features.
pub fn default_frozen_dim(out_dim: usize) -> usize {
    (out_dim / 2).max(1)
}

const FROZEN_A_STREAM: u64 = 0xA;
const FROZEN_C_STREAM: u64 = 0xC;

/// How the frozen blocks A and C are constructed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitMode {
    /// A lives on rank indices `[0, r/2)`, C on `[r/2, r)`; live columns of A
    /// and live rows of C are orthonormal. AC is exactly zero.
    ExactDisjoint,
    /// A and C are dense Gaussian draws scaled by 1/sqrt(r); AC is only
    /// approximately zero, with the leakage ratio bounded by `eps_orth`.
    ApproximateRandom,
}

/// Initialization of the trainable blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainableInit {
    /// B Gaussian (stddev 0.02), D zero: the trainable contribution to ΔW
    /// starts in the BC block only. Default.
    ZeroD,
    /// B zero, D Gaussian.
    ZeroB,
    /// Both blocks Gaussian.
    GaussianBoth,
}

/// Structural parameters of a partitioned adapter, minus the feature dims.
#[derive(Debug, Clone, Copy)]
pub struct PlpSpec {
    pub rank: usize,
    pub frozen_dim: usize,
    pub init_mode: InitMode,
    pub trainable_init: TrainableInit,
}

impl PlpSpec {
    pub fn exact(rank: usize, frozen_dim: usize) -> PlpSpec {
        PlpSpec {
            rank,
            frozen_dim,
            init_mode: InitMode::ExactDisjoint,
            trainable_init: TrainableInit::ZeroD,
        }
    }
}

/// Frobenius norms of the four ΔW blocks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockProfile {
    pub norm_ul: f64,
    pub norm_ur: f64,
    pub norm_dl: f64,
    pub norm_dr: f64,
}

/// Common surface of partitioned and plain adapters.
pub trait Adapter {
    fn out_dim(&self) -> usize;
    fn in_dim(&self) -> usize;
    fn rank(&self) -> usize;
    fn tag(&self) -> &str;

    /// Materialized up-projection factor, `out_dim x rank`.
    fn w_up(&self) -> Matrix;
    /// Materialized down-projection factor, `rank x in_dim`.
    fn w_down(&self) -> Matrix;

    /// Materialized `ΔW = W_up · W_down`.
    fn delta_w(&self) -> Matrix {
        self.w_up()
            .matmul(&self.w_down())
            .expect("factor shapes agree by construction")
    }

    /// Count of trainable entries.
    fn trainable_params(&self) -> usize;

    /// `W0·Z + W_up·(W_down·Z)` as two rank-r products; ΔW is never formed.
    fn forward(&self, w0: &Matrix, z: &Matrix) -> Result<Matrix> {
        if w0.rows() != self.out_dim() || w0.cols() != self.in_dim() {
            return Err(Error::DimMismatch {
                op: "forward (base weight)",
                lhs_rows: self.out_dim(),
                lhs_cols: self.in_dim(),
                rhs_rows: w0.rows(),
                rhs_cols: w0.cols(),
            });
        }
        if z.rows() != self.in_dim() {
            return Err(Error::DimMismatch {
                op: "forward (input)",
                lhs_rows: self.out_dim(),
                lhs_cols: self.in_dim(),
                rhs_rows: z.rows(),
                rhs_cols: z.cols(),
            });
        }
        let base = w0.matmul(z)?;
        let low = self.w_up().matmul(&self.w_down().matmul(z)?)?;
        base.add(&low)
    }
}

/// Partitioned adapter with frozen A, C and trainable B, D.
#[derive(Debug, Clone)]
pub struct PlpAdapter {
    out_dim: usize,
    in_dim: usize,
    rank: usize,
    frozen_dim: usize,
    a: Matrix,
    b: Matrix,
    c: Matrix,
    d: Matrix,
    init_mode: InitMode,
    frozen_seed: u64,
    eps_orth: f64,
    tag: String,
}

impl PlpAdapter {
    /// Build a fresh adapter. A and C come deterministically from
    /// `frozen_seed`; trainable blocks use the caller's `rng`.
    pub fn new(
        out_dim: usize,
        in_dim: usize,
        spec: &PlpSpec,
        frozen_seed: u64,
        rng: &mut SeededRng,
    ) -> Result<PlpAdapter> {
        let (a, c) = regenerate_frozen(
            out_dim,
            in_dim,
            spec.rank,
            spec.frozen_dim,
            spec.init_mode,
            frozen_seed,
        )?;
        let (m, n, r, d) = (out_dim, in_dim, spec.rank, spec.frozen_dim);
        if r > d.min(m - d).min(n - d) {
            log::warn!(
                "rank {r} exceeds min(d, m-d, n-d) = {}; block capacity is uneven",
                d.min(m - d).min(n - d)
            );
        }
        let (b, dblk) = match spec.trainable_init {
            TrainableInit::ZeroD => (
                gaussian(m - d, r, rng, TRAINABLE_INIT_STDDEV)?,
                Matrix::zeros(r, n - d),
            ),
            TrainableInit::ZeroB => (
                Matrix::zeros(m - d, r),
                gaussian(r, n - d, rng, TRAINABLE_INIT_STDDEV)?,
            ),
            TrainableInit::GaussianBoth => (
                gaussian(m - d, r, rng, TRAINABLE_INIT_STDDEV)?,
                gaussian(r, n - d, rng, TRAINABLE_INIT_STDDEV)?,
            ),
        };
        let eps_orth = match spec.init_mode {
            InitMode::ExactDisjoint => 0.0,
            InitMode::ApproximateRandom => default_orth_eps(r),
        };
        let adapter = PlpAdapter {
            out_dim: m,
            in_dim: n,
            rank: r,
            frozen_dim: d,
            a,
            b,
            c,
            d: dblk,
            init_mode: spec.init_mode,
            frozen_seed,
            eps_orth,
            tag: String::new(),
        };
        adapter.check_orth_invariant()?;
        Ok(adapter)
    }

    /// Reassemble an adapter from stored parts, re-validating every invariant
    /// the constructor guarantees. Used by the file loader.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        a: Matrix,
        b: Matrix,
        c: Matrix,
        d: Matrix,
        init_mode: InitMode,
        frozen_seed: u64,
        eps_orth: f64,
        tag: String,
    ) -> Result<PlpAdapter> {
        let frozen_dim = a.rows();
        let rank = a.cols();
        let out_dim = frozen_dim + b.rows();
        let in_dim = frozen_dim + d.cols();
        if c.shape() != (rank, frozen_dim) || b.cols() != rank || d.rows() != rank {
            return Err(Error::InvalidArgument {
                what: "adapter blocks",
                details: format!(
                    "inconsistent block shapes: A {:?}, B {:?}, C {:?}, D {:?}",
                    a.shape(),
                    b.shape(),
                    c.shape(),
                    d.shape()
                ),
            });
        }
        let adapter = PlpAdapter {
            out_dim,
            in_dim,
            rank,
            frozen_dim,
            a,
            b,
            c,
            d,
            init_mode,
            frozen_seed,
            eps_orth,
            tag,
        };
        adapter.check_orth_invariant()?;
        adapter.verify_frozen()?;
        Ok(adapter)
    }

    pub fn with_tag(mut self, tag: impl Into<String>) -> PlpAdapter {
        self.tag = tag.into();
        self
    }

    pub fn set_tag(&mut self, tag: impl Into<String>) {
        self.tag = tag.into();
    }

    pub fn frozen_dim(&self) -> usize {
        self.frozen_dim
    }

    pub fn init_mode(&self) -> InitMode {
        self.init_mode
    }

    pub fn frozen_seed(&self) -> u64 {
        self.frozen_seed
    }

    pub fn eps_orth(&self) -> f64 {
        self.eps_orth
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn b(&self) -> &Matrix {
        &self.b
    }

    pub fn c(&self) -> &Matrix {
        &self.c
    }

    pub fn d(&self) -> &Matrix {
        &self.d
    }

    pub(crate) fn b_mut(&mut self) -> &mut Matrix {
        &mut self.b
    }

    pub(crate) fn d_mut(&mut self) -> &mut Matrix {
        &mut self.d
    }

    /// Measured ‖AC‖ / (‖A‖·‖C‖); zero when AC is exactly zero.
    pub fn orth_ratio(&self) -> f64 {
        let num = self
            .a
            .matmul(&self.c)
            .expect("A, C shapes agree")
            .frobenius_norm();
        let den = self.a.frobenius_norm() * self.c.frobenius_norm();
        if den == 0.0 {
            return if num == 0.0 { 0.0 } else { f64::INFINITY };
        }
        num / den
    }

    /// Checks the mode's orthogonality contract on the current blocks.
    pub fn check_orth_invariant(&self) -> Result<()> {
        match self.init_mode {
            InitMode::ExactDisjoint => {
                let norm = self.a.matmul(&self.c)?.frobenius_norm();
                if norm != 0.0 {
                    return Err(Error::OrthBound {
                        measured: norm,
                        bound: 0.0,
                    });
                }
            }
            InitMode::ApproximateRandom => {
                let ratio = self.orth_ratio();
                if ratio > self.eps_orth {
                    return Err(Error::OrthBound {
                        measured: ratio,
                        bound: self.eps_orth,
                    });
                }
            }
        }
        Ok(())
    }

    /// Confirms A and C are bit-identical to their seed regeneration.
    pub fn verify_frozen(&self) -> Result<()> {
        let (a, c) = regenerate_frozen(
            self.out_dim,
            self.in_dim,
            self.rank,
            self.frozen_dim,
            self.init_mode,
            self.frozen_seed,
        )?;
        if !self.a.bits_eq(&a) || !self.c.bits_eq(&c) {
            return Err(Error::FrozenTamper(format!(
                "blocks differ from regeneration of seed {}",
                self.frozen_seed
            )));
        }
        Ok(())
    }

    /// Frobenius norms of the four ΔW blocks.
    pub fn block_profile(&self) -> BlockProfile {
        BlockProfile {
            norm_ul: self
                .a
                .matmul(&self.c)
                .expect("shapes agree")
                .frobenius_norm(),
            norm_ur: self
                .a
                .matmul(&self.d)
                .expect("shapes agree")
                .frobenius_norm(),
            norm_dl: self
                .b
                .matmul(&self.c)
                .expect("shapes agree")
                .frobenius_norm(),
            norm_dr: self
                .b
                .matmul(&self.d)
                .expect("shapes agree")
                .frobenius_norm(),
        }
    }

    /// Splits into an up half (A, B) and a down half (C, D). Lossless:
    /// [`make_adapter`] on the two halves reproduces the adapter bit-exactly.
    pub fn break_adapter(&self) -> (UpHalf, DownHalf) {
        let up = UpHalf {
            out_dim: self.out_dim,
            in_dim: self.in_dim,
            rank: self.rank,
            frozen_dim: self.frozen_dim,
            init_mode: self.init_mode,
            frozen_seed: self.frozen_seed,
            eps_orth: self.eps_orth,
            a: self.a.clone(),
            b: self.b.clone(),
            tag: self.tag.clone(),
        };
        let down = DownHalf {
            out_dim: self.out_dim,
            in_dim: self.in_dim,
            rank: self.rank,
            frozen_dim: self.frozen_dim,
            init_mode: self.init_mode,
            frozen_seed: self.frozen_seed,
            eps_orth: self.eps_orth,
            c: self.c.clone(),
            d: self.d.clone(),
            tag: self.tag.clone(),
        };
        (up, down)
    }
}

impl Adapter for PlpAdapter {
    fn out_dim(&self) -> usize {
        self.out_dim
    }

    fn in_dim(&self) -> usize {
        self.in_dim
    }

    fn rank(&self) -> usize {
        self.rank
    }

    fn tag(&self) -> &str {
        &self.tag
    }

    fn w_up(&self) -> Matrix {
        self.a.vconcat(&self.b).expect("column counts agree")
    }

    fn w_down(&self) -> Matrix {
        self.c.hconcat(&self.d).expect("row counts agree")
    }

    /// 2x2 block assembly [[AC, AD], [BC, BD]]. Each block accumulates over
    /// the same rank index order as the full product, so this equals
    /// `w_up() · w_down()` bit-for-bit.
    fn delta_w(&self) -> Matrix {
        let ac = self.a.matmul(&self.c).expect("shapes agree");
        let ad = self.a.matmul(&self.d).expect("shapes agree");
        let bc = self.b.matmul(&self.c).expect("shapes agree");
        let bd = self.b.matmul(&self.d).expect("shapes agree");
        let mut out = Matrix::zeros(self.out_dim, self.in_dim);
        out.write_block(0, 0, &ac);
        out.write_block(0, self.frozen_dim, &ad);
        out.write_block(self.frozen_dim, 0, &bc);
        out.write_block(self.frozen_dim, self.frozen_dim, &bd);
        out
    }

    fn trainable_params(&self) -> usize {
        (self.out_dim - self.frozen_dim) * self.rank + self.rank * (self.in_dim - self.frozen_dim)
    }
}

/// Regenerates the frozen blocks (A, C) for the given construction.
pub fn regenerate_frozen(
    out_dim: usize,
    in_dim: usize,
    rank: usize,
    frozen_dim: usize,
    init_mode: InitMode,
    frozen_seed: u64,
) -> Result<(Matrix, Matrix)> {
    if out_dim < 2 || in_dim < 2 {
        return Err(Error::InvalidArgument {
            what: "adapter dims",
            details: format!("out_dim={out_dim}, in_dim={in_dim} must be at least 2"),
        });
    }
    if frozen_dim == 0 || frozen_dim >= out_dim.min(in_dim) {
        return Err(Error::InvalidArgument {
            what: "frozen_dim",
            details: format!(
                "frozen_dim={frozen_dim} must satisfy 1 <= d < min(m, n) = {}",
                out_dim.min(in_dim)
            ),
        });
    }
    if rank == 0 {
        return Err(Error::InvalidArgument {
            what: "rank",
            details: "rank must be positive".to_string(),
        });
    }
    match init_mode {
        InitMode::ExactDisjoint => {
            if rank % 2 != 0 {
                return Err(Error::OddRank(rank));
            }
            let live = rank / 2;
            if live > frozen_dim {
                return Err(Error::InvalidArgument {
                    what: "rank",
                    details: format!(
                        "exact-disjoint needs r/2 = {live} <= frozen_dim = {frozen_dim} \
                         for orthonormal live blocks"
                    ),
                });
            }
            let a_live = orthonormal_columns(
                frozen_dim,
                live,
                &mut SeededRng::substream(frozen_seed, FROZEN_A_STREAM),
            )?;
            let a = a_live.hconcat(&Matrix::zeros(frozen_dim, live))?;
            let c_live = orthonormal_columns(
                frozen_dim,
                live,
                &mut SeededRng::substream(frozen_seed, FROZEN_C_STREAM),
            )?
            .transpose();
            let c = Matrix::zeros(live, frozen_dim).vconcat(&c_live)?;
            Ok((a, c))
        }
        InitMode::ApproximateRandom => {
            let scale = 1.0 / (rank as f64).sqrt();
            let a = gaussian(
                frozen_dim,
                rank,
                &mut SeededRng::substream(frozen_seed, FROZEN_A_STREAM),
                scale,
            )?;
            let c = gaussian(
                rank,
                frozen_dim,
                &mut SeededRng::substream(frozen_seed, FROZEN_C_STREAM),
                scale,
            )?;
            Ok((a, c))
        }
    }
}

/// The up-projection half of a broken adapter: frozen A plus trainable B.
#[derive(Debug, Clone)]
pub struct UpHalf {
    pub out_dim: usize,
    pub in_dim: usize,
    pub rank: usize,
    pub frozen_dim: usize,
    pub init_mode: InitMode,
    pub frozen_seed: u64,
    pub eps_orth: f64,
    pub a: Matrix,
    pub b: Matrix,
    pub tag: String,
}

/// The down-projection half of a broken adapter: frozen C plus trainable D.
#[derive(Debug, Clone)]
pub struct DownHalf {
    pub out_dim: usize,
    pub in_dim: usize,
    pub rank: usize,
    pub frozen_dim: usize,
    pub init_mode: InitMode,
    pub frozen_seed: u64,
    pub eps_orth: f64,
    pub c: Matrix,
    pub d: Matrix,
    pub tag: String,
}

impl UpHalf {
    /// Bit-compares the stored frozen block against seed regeneration.
    pub fn verify_frozen(&self) -> Result<()> {
        let (a, _) = regenerate_frozen(
            self.out_dim,
            self.in_dim,
            self.rank,
            self.frozen_dim,
            self.init_mode,
            self.frozen_seed,
        )?;
        if !self.a.bits_eq(&a) {
            return Err(Error::FrozenTamper(format!(
                "up-half A differs from regeneration of seed {}",
                self.frozen_seed
            )));
        }
        Ok(())
    }
}

impl DownHalf {
    pub fn verify_frozen(&self) -> Result<()> {
        let (_, c) = regenerate_frozen(
            self.out_dim,
            self.in_dim,
            self.rank,
            self.frozen_dim,
            self.init_mode,
            self.frozen_seed,
        )?;
        if !self.c.bits_eq(&c) {
            return Err(Error::FrozenTamper(format!(
                "down-half C differs from regeneration of seed {}",
                self.frozen_seed
            )));
        }
        Ok(())
    }
}

/// Fuses an up half with a down half into a new adapter.
///
/// Both halves must come from the same frozen construction: equal dims and
/// mode, equal `frozen_seed`, and frozen blocks bit-identical to that seed's
/// regeneration. This is what keeps the zero-block (or bounded-leakage)
/// property true on the combination without retraining.
pub fn make_adapter(up: &UpHalf, down: &DownHalf) -> Result<PlpAdapter> {
    if (up.out_dim, up.in_dim, up.rank, up.frozen_dim)
        != (down.out_dim, down.in_dim, down.rank, down.frozen_dim)
    {
        return Err(Error::InvalidArgument {
            what: "make_adapter",
            details: format!(
                "halves disagree on dims: up ({}, {}, r={}, d={}) vs down ({}, {}, r={}, d={})",
                up.out_dim,
                up.in_dim,
                up.rank,
                up.frozen_dim,
                down.out_dim,
                down.in_dim,
                down.rank,
                down.frozen_dim
            ),
        });
    }
    if up.init_mode != down.init_mode {
        return Err(Error::FrozenMismatch(format!(
            "init modes differ: {:?} vs {:?}",
            up.init_mode, down.init_mode
        )));
    }
    if up.frozen_seed != down.frozen_seed {
        return Err(Error::FrozenMismatch(format!(
            "frozen seeds differ: {} vs {}",
            up.frozen_seed, down.frozen_seed
        )));
    }
    up.verify_frozen()?;
    down.verify_frozen()?;
    let tag = format!("combined({},{})", up.tag, down.tag);
    let adapter = PlpAdapter {
        out_dim: up.out_dim,
        in_dim: up.in_dim,
        rank: up.rank,
        frozen_dim: up.frozen_dim,
        a: up.a.clone(),
        b: up.b.clone(),
        c: down.c.clone(),
        d: down.d.clone(),
        init_mode: up.init_mode,
        frozen_seed: up.frozen_seed,
        eps_orth: up.eps_orth.max(down.eps_orth),
        tag,
    };
    adapter.check_orth_invariant()?;
    Ok(adapter)
}

/// Plain unpartitioned low-rank adapter, the baseline structure.
#[derive(Debug, Clone)]
pub struct PlainLoraAdapter {
    out_dim: usize,
    in_dim: usize,
    rank: usize,
    w_up: Matrix,
    w_down: Matrix,
    tag: String,
}

impl PlainLoraAdapter {
    /// `ZeroD` zero-initializes the down factor (standard low-rank init),
    /// `ZeroB` the up factor; `GaussianBoth` draws both.
    pub fn new(
        out_dim: usize,
        in_dim: usize,
        rank: usize,
        init: TrainableInit,
        rng: &mut SeededRng,
    ) -> Result<PlainLoraAdapter> {
        if out_dim == 0 || in_dim == 0 || rank == 0 {
            return Err(Error::InvalidArgument {
                what: "plain adapter dims",
                details: format!("m={out_dim}, n={in_dim}, r={rank} must be positive"),
            });
        }
        let (w_up, w_down) = match init {
            TrainableInit::ZeroD => (
                gaussian(out_dim, rank, rng, TRAINABLE_INIT_STDDEV)?,
                Matrix::zeros(rank, in_dim),
            ),
            TrainableInit::ZeroB => (
                Matrix::zeros(out_dim, rank),
                gaussian(rank, in_dim, rng, TRAINABLE_INIT_STDDEV)?,
            ),
            TrainableInit::GaussianBoth => (
                gaussian(out_dim, rank, rng, TRAINABLE_INIT_STDDEV)?,
                gaussian(rank, in_dim, rng, TRAINABLE_INIT_STDDEV)?,
            ),
        };
        Ok(PlainLoraAdapter {
            out_dim,
            in_dim,
            rank,
            w_up,
            w_down,
            tag: String::new(),
        })
    }

    pub fn from_parts(w_up: Matrix, w_down: Matrix, tag: String) -> Result<PlainLoraAdapter> {
        if w_up.cols() != w_down.rows() {
            return Err(Error::DimMismatch {
                op: "plain adapter factors",
                lhs_rows: w_up.rows(),
                lhs_cols: w_up.cols(),
                rhs_rows: w_down.rows(),
                rhs_cols: w_down.cols(),
            });
        }
        Ok(PlainLoraAdapter {
            out_dim: w_up.rows(),
            in_dim: w_down.cols(),
            rank: w_up.cols(),
            w_up,
            w_down,
            tag,
        })
    }

    pub fn with_tag(mut self, tag: impl Into<String>) -> PlainLoraAdapter {
        self.tag = tag.into();
        self
    }

    pub fn set_tag(&mut self, tag: impl Into<String>) {
        self.tag = tag.into();
    }

    pub fn w_up_ref(&self) -> &Matrix {
        &self.w_up
    }

    pub fn w_down_ref(&self) -> &Matrix {
        &self.w_down
    }

    pub(crate) fn w_up_mut(&mut self) -> &mut Matrix {
        &mut self.w_up
    }

    pub(crate) fn w_down_mut(&mut self) -> &mut Matrix {
        &mut self.w_down
    }
}

impl Adapter for PlainLoraAdapter {
    fn out_dim(&self) -> usize {
        self.out_dim
    }

    fn in_dim(&self) -> usize {
        self.in_dim
    }

    fn rank(&self) -> usize {
        self.rank
    }

    fn tag(&self) -> &str {
        &self.tag
    }

    fn w_up(&self) -> Matrix {
        self.w_up.clone()
    }

    fn w_down(&self) -> Matrix {
        self.w_down.clone()
    }

    fn trainable_params(&self) -> usize {
        self.out_dim * self.rank + self.rank * self.in_dim
    }
}

/// `W0 + Σ λ_i · ΔW_i`. The weighted deltas are summed first (in list
/// order), then added to the base once.
pub fn merge_into_base(w0: &Matrix, adapters: &[&dyn Adapter], lambdas: &[f64]) -> Result<Matrix> {
    if adapters.len() != lambdas.len() {
        return Err(Error::LengthMismatch {
            what: "merge lambdas",
            got: lambdas.len(),
            expected: adapters.len(),
        });
    }
    let mut acc = Matrix::zeros(w0.rows(), w0.cols());
    for (adapter, &lambda) in adapters.iter().zip(lambdas.iter()) {
        if adapter.out_dim() != w0.rows() || adapter.in_dim() != w0.cols() {
            return Err(Error::DimMismatch {
                op: "merge_into_base",
                lhs_rows: w0.rows(),
                lhs_cols: w0.cols(),
                rhs_rows: adapter.out_dim(),
                rhs_cols: adapter.in_dim(),
            });
        }
        acc.add_scaled_in_place(&adapter.delta_w(), lambda)?;
    }
    w0.add(&acc)
}
