//! Alignment metrics, parameter-distribution projections, and method
//! comparison.
//!
//! Metrics are computed on operators, not sampled batches: with isotropic
//! inputs the relative Frobenius error of `W0 + ΔW` against a reference
//! operator is the exact population prediction error, so reports carry no
//! sampling noise.

use crate::error::{Error, Result};
use crate::matcore::{Matrix, SeededRng};
use crate::plp::{
    make_adapter, merge_into_base, Adapter, BlockProfile, InitMode, PlainLoraAdapter, PlpAdapter,
    PlpSpec,
};
use crate::synth::{oracle_best_fit, OracleStructure, SynthTask};
use crate::train::{
    finetune_combined, train_content, train_joint, train_style, JointAdapterKind, TrainConfig,
    TrainedJoint,
};

const PCA_SEED: u64 = 0x2d50_4341; // "-PCA"
const PCA_MAX_ITERS: usize = 5_000;
const PCA_TOL: f64 = 1e-13;

/// Operator-space alignment report for one adapter (or merged weight).
#[derive(Debug, Clone)]
pub struct MetricsReport {
    pub tag: String,
    /// Relative error of `W0 + ΔW` against the content-alone operator.
    pub content_err: f64,
    /// Relative error against the style-alone operator.
    pub style_err: f64,
    /// Relative error against the composed target `Y(c, s)`.
    pub combined_err: f64,
    /// Best-achievable combined error of the matching structure class,
    /// same normalization as `combined_err`.
    pub oracle_residual: f64,
    /// `combined_err − oracle_residual`; negative values beyond tolerance
    /// indicate an oracle bug.
    pub oracle_gap: f64,
    pub oracle_converged: bool,
    pub block_profile: Option<BlockProfile>,
}

/// What to evaluate.
#[derive(Clone, Copy)]
pub enum EvalTarget<'a> {
    Plp(&'a PlpAdapter),
    Plain(&'a PlainLoraAdapter),
    /// A fully merged weight `W0 + Σ λ·ΔW`; `rank_class` bounds the rank of
    /// the merged delta for the oracle guard.
    Merged { w: &'a Matrix, rank_class: usize },
}

fn relative_err(w_total: &Matrix, reference: &Matrix) -> f64 {
    let num = w_total.sub(reference).expect("shapes agree").frobenius_norm();
    let den = reference.frobenius_norm();
    if den == 0.0 {
        return if num == 0.0 { 0.0 } else { f64::INFINITY };
    }
    num / den
}

/// Deterministic operator-space evaluation of an adapter against the pair
/// (content_id, style_id), including the matching-class oracle residual.
pub fn evaluate(
    task: &SynthTask,
    content_id: usize,
    style_id: usize,
    target: EvalTarget,
) -> Result<MetricsReport> {
    let composed = task.composed_target(content_id, style_id)?;
    let content_ref = task.content_only_target(content_id)?;
    let style_ref = task.style_only_target(style_id)?;

    let (w_total, tag, structure, block_profile) = match target {
        EvalTarget::Plp(adapter) => (
            task.w0().add(&adapter.delta_w())?,
            adapter.tag().to_string(),
            OracleStructure::Plp {
                rank: adapter.rank(),
                frozen_dim: adapter.frozen_dim(),
                init_mode: adapter.init_mode(),
                frozen_seed: adapter.frozen_seed(),
            },
            Some(adapter.block_profile()),
        ),
        EvalTarget::Plain(adapter) => (
            task.w0().add(&adapter.delta_w())?,
            adapter.tag().to_string(),
            OracleStructure::PlainRank(adapter.rank()),
            None,
        ),
        EvalTarget::Merged { w, rank_class } => (
            w.clone(),
            "merged".to_string(),
            OracleStructure::PlainRank(rank_class),
            None,
        ),
    };

    let fit = oracle_best_fit(task, content_id, style_id, structure)?;
    let denom = composed.frobenius_norm();
    let oracle_residual = if denom == 0.0 { 0.0 } else { fit.residual / denom };
    let combined_err = relative_err(&w_total, &composed);
    Ok(MetricsReport {
        tag,
        content_err: relative_err(&w_total, &content_ref),
        style_err: relative_err(&w_total, &style_ref),
        combined_err,
        oracle_residual,
        oracle_gap: combined_err - oracle_residual,
        oracle_converged: fit.converged,
        block_profile,
    })
}

/// Which block a projected parameter direction came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockTag {
    A,
    B,
    C,
    D,
}

impl std::fmt::Display for BlockTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            BlockTag::A => "A",
            BlockTag::B => "B",
            BlockTag::C => "C",
            BlockTag::D => "D",
        };
        write!(f, "{s}")
    }
}

/// One projected parameter direction.
#[derive(Debug, Clone)]
pub struct ParamPoint {
    pub adapter_tag: String,
    pub block: BlockTag,
    pub x: f64,
    pub y: f64,
}

/// Deterministic 2D projection of pooled block directions.
#[derive(Debug, Clone)]
pub struct Params2d {
    pub points: Vec<ParamPoint>,
    /// Fraction of pooled variance captured by the two components, in [0, 1].
    pub variance_captured: f64,
}

fn block_vectors(adapter: &PlpAdapter) -> Vec<(BlockTag, Vec<f64>)> {
    let mut out = Vec::new();
    let col = |m: &Matrix, j: usize| (0..m.rows()).map(|i| m.get(i, j)).collect::<Vec<_>>();
    for j in 0..adapter.a().cols() {
        out.push((BlockTag::A, col(adapter.a(), j)));
    }
    for j in 0..adapter.b().cols() {
        out.push((BlockTag::B, col(adapter.b(), j)));
    }
    for j in 0..adapter.c().cols() {
        out.push((BlockTag::C, col(adapter.c(), j)));
    }
    // D contributes its row directions, i.e. the columns of D^T.
    let dt = adapter.d().transpose();
    for j in 0..dt.cols() {
        out.push((BlockTag::D, col(&dt, j)));
    }
    out
}

/// Symmetric power iteration with deflation for the top eigenpairs of a
/// small covariance matrix.
fn top_eigen(cov: &Matrix, count: usize) -> Vec<(f64, Vec<f64>)> {
    let dim = cov.rows();
    let mut work = cov.clone();
    let mut rng = SeededRng::substream(PCA_SEED, 0);
    let mut out = Vec::new();
    for _ in 0..count.min(dim) {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
        let mut norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        for x in &mut v {
            *x /= norm;
        }
        let mut lambda = 0.0;
        for _ in 0..PCA_MAX_ITERS {
            let mut next = vec![0.0; dim];
            for i in 0..dim {
                let mut acc = 0.0;
                for j in 0..dim {
                    acc += work.get(i, j) * v[j];
                }
                next[i] = acc;
            }
            norm = next.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm < 1e-250 {
                lambda = 0.0;
                break;
            }
            for x in &mut next {
                *x /= norm;
            }
            let drift = next
                .iter()
                .zip(v.iter())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            v = next;
            lambda = norm;
            if drift < PCA_TOL {
                break;
            }
        }
        // Deflate: work -= lambda v v^T.
        for i in 0..dim {
            for j in 0..dim {
                work.set(i, j, work.get(i, j) - lambda * v[i] * v[j]);
            }
        }
        out.push((lambda, v));
    }
    out
}

/// Projects every block direction of every adapter onto the top-2 principal
/// directions of the pooled set.
///
/// All pooled vectors must share one length, which at the default half-split
/// (d = m−d = n−d = r) holds for every block. Accumulation for the mean and
/// covariance runs over a canonically sorted copy of the pool, so the
/// projection is invariant to adapter list order.
pub fn export_params_2d(adapters: &[&PlpAdapter]) -> Result<Params2d> {
    let mut tagged: Vec<(String, BlockTag, Vec<f64>)> = Vec::new();
    for adapter in adapters {
        for (block, v) in block_vectors(adapter) {
            tagged.push((adapter.tag().to_string(), block, v));
        }
    }
    if tagged.len() < 3 {
        return Err(Error::InvalidArgument {
            what: "export_params_2d",
            details: format!("need at least 3 pooled directions, got {}", tagged.len()),
        });
    }
    let dim = tagged[0].2.len();
    if tagged.iter().any(|(_, _, v)| v.len() != dim) {
        return Err(Error::InvalidArgument {
            what: "export_params_2d",
            details: "pooled block directions have mixed lengths; use adapters with \
                      d == m-d == n-d == r"
                .to_string(),
        });
    }

    let mut pool: Vec<&Vec<f64>> = tagged.iter().map(|(_, _, v)| v).collect();
    pool.sort_by(|a, b| {
        for (x, y) in a.iter().zip(b.iter()) {
            match x.total_cmp(y) {
                std::cmp::Ordering::Equal => continue,
                other => return other,
            }
        }
        std::cmp::Ordering::Equal
    });

    let count = pool.len() as f64;
    let mut mean = vec![0.0; dim];
    for v in &pool {
        for (m, x) in mean.iter_mut().zip(v.iter()) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m /= count;
    }
    let mut cov = Matrix::zeros(dim, dim);
    for v in &pool {
        let centered: Vec<f64> = v.iter().zip(mean.iter()).map(|(x, m)| x - m).collect();
        for i in 0..dim {
            for j in 0..dim {
                cov.set(i, j, cov.get(i, j) + centered[i] * centered[j]);
            }
        }
    }
    cov = cov.scale(1.0 / count);

    let trace: f64 = (0..dim).map(|i| cov.get(i, i)).sum();
    let eigen = top_eigen(&cov, 2);
    let variance_captured = if trace > 0.0 {
        ((eigen[0].0 + eigen.get(1).map(|e| e.0).unwrap_or(0.0)) / trace).clamp(0.0, 1.0)
    } else {
        0.0
    };

    let project = |v: &[f64], axis: &[f64]| -> f64 {
        v.iter()
            .zip(mean.iter())
            .zip(axis.iter())
            .map(|((x, m), a)| (x - m) * a)
            .sum()
    };
    let e1 = &eigen[0].1;
    let zero_axis = vec![0.0; dim];
    let e2 = eigen.get(1).map(|e| e.1.as_slice()).unwrap_or(&zero_axis);
    let points = tagged
        .iter()
        .map(|(tag, block, v)| ParamPoint {
            adapter_tag: tag.clone(),
            block: *block,
            x: project(v, e1),
            y: project(v, e2),
        })
        .collect();
    Ok(Params2d {
        points,
        variance_captured,
    })
}

/// Mean inter-centroid distance between two block clusters divided by their
/// mean intra-cluster spread. `None` when either cluster is empty.
pub fn separation_ratio(params: &Params2d, first: BlockTag, second: BlockTag) -> Option<f64> {
    let cluster = |tag: BlockTag| -> Vec<(f64, f64)> {
        params
            .points
            .iter()
            .filter(|p| p.block == tag)
            .map(|p| (p.x, p.y))
            .collect()
    };
    let a = cluster(first);
    let b = cluster(second);
    if a.is_empty() || b.is_empty() {
        return None;
    }
    let centroid = |pts: &[(f64, f64)]| {
        let n = pts.len() as f64;
        (
            pts.iter().map(|p| p.0).sum::<f64>() / n,
            pts.iter().map(|p| p.1).sum::<f64>() / n,
        )
    };
    let spread = |pts: &[(f64, f64)], c: (f64, f64)| {
        pts.iter()
            .map(|p| ((p.0 - c.0).powi(2) + (p.1 - c.1).powi(2)).sqrt())
            .sum::<f64>()
            / pts.len() as f64
    };
    let ca = centroid(&a);
    let cb = centroid(&b);
    let inter = ((ca.0 - cb.0).powi(2) + (ca.1 - cb.1).powi(2)).sqrt();
    let intra = 0.5 * (spread(&a, ca) + spread(&b, cb));
    if intra == 0.0 {
        return Some(if inter == 0.0 { 0.0 } else { f64::INFINITY });
    }
    Some(inter / intra)
}

/// The three methods compared by [`compare_methods`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MethodId {
    /// One adapter trained on the composed pair.
    JointTraining,
    /// Two one-to-one adapters merged with unit weights.
    NaiveMerge,
    /// Multi-correspondence stage one, break/combine, short fine-tune.
    BreakMake,
}

impl std::fmt::Display for MethodId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            MethodId::JointTraining => "joint",
            MethodId::NaiveMerge => "naive-merge",
            MethodId::BreakMake => "break-make",
        };
        write!(f, "{s}")
    }
}

/// Settings shared by the rows of a method comparison.
#[derive(Debug, Clone)]
pub struct CompareConfig {
    pub rank: usize,
    pub frozen_dim: usize,
    pub init_mode: InitMode,
    pub frozen_seed: u64,
    pub train: TrainConfig,
    pub finetune_steps: usize,
    pub finetune_lr: f64,
}

impl CompareConfig {
    pub fn desk_default(rank: usize, frozen_dim: usize, frozen_seed: u64) -> CompareConfig {
        CompareConfig {
            rank,
            frozen_dim,
            init_mode: InitMode::ExactDisjoint,
            frozen_seed,
            train: TrainConfig::default(),
            finetune_steps: 50,
            finetune_lr: 1e-2,
        }
    }

    fn plp_spec(&self) -> PlpSpec {
        PlpSpec {
            rank: self.rank,
            frozen_dim: self.frozen_dim,
            init_mode: self.init_mode,
            trainable_init: crate::plp::TrainableInit::ZeroD,
        }
    }
}

/// First id different from `avoid`; falls back to `avoid` when it is the
/// only id. Used to pick the inherent partner of a reference set: content
/// references come rendered in some style, style references depict some
/// content, and for a demonstrative baseline those partners are off-target.
pub fn first_other_id(count: usize, avoid: usize) -> usize {
    (0..count).find(|&i| i != avoid).unwrap_or(avoid)
}

/// Runs the pipeline of [`MethodId::BreakMake`]: stage-one multi-
/// correspondence trainings, break and combine, short fine-tune.
pub fn run_break_make(
    task: &SynthTask,
    content_id: usize,
    style_id: usize,
    cfg: &CompareConfig,
) -> Result<PlpAdapter> {
    let spec = cfg.plp_spec();
    let mut content_cfg = cfg.train.clone();
    content_cfg.seed = cfg.train.seed;
    let (content, _) = train_content(task, content_id, &spec, &content_cfg, cfg.frozen_seed)?;
    let mut style_cfg = cfg.train.clone();
    style_cfg.seed = cfg.train.seed.wrapping_add(1000);
    let (style, _) = train_style(task, style_id, &spec, &style_cfg, cfg.frozen_seed)?;
    let combined = make_adapter(&content.break_adapter().0, &style.break_adapter().1)?;
    let (tuned, _) = finetune_combined(
        combined,
        task,
        content_id,
        style_id,
        cfg.finetune_steps,
        cfg.finetune_lr,
        cfg.train.seed.wrapping_add(2000),
    )?;
    Ok(tuned)
}

/// Runs the naive-merge baseline: plain adapters trained one-to-one on their
/// reference pairs (content with its inherent off-target style, style with
/// its inherent off-target content), merged with unit weights.
pub fn run_naive_merge(
    task: &SynthTask,
    content_id: usize,
    style_id: usize,
    cfg: &CompareConfig,
) -> Result<(Matrix, usize)> {
    let inherent_style = first_other_id(task.num_styles(), style_id);
    let inherent_content = first_other_id(task.num_contents(), content_id);
    let mut content_cfg = cfg.train.clone();
    content_cfg.seed = cfg.train.seed.wrapping_add(3000);
    let (content, _) = train_joint(
        task,
        content_id,
        inherent_style,
        &content_cfg,
        &JointAdapterKind::Plain { rank: cfg.rank },
    )?;
    let mut style_cfg = cfg.train.clone();
    style_cfg.seed = cfg.train.seed.wrapping_add(4000);
    let (style, _) = train_joint(
        task,
        inherent_content,
        style_id,
        &style_cfg,
        &JointAdapterKind::Plain { rank: cfg.rank },
    )?;
    let (content, style) = match (content, style) {
        (TrainedJoint::Plain(c), TrainedJoint::Plain(s)) => (c, s),
        _ => unreachable!("plain kind requested"),
    };
    let merged = merge_into_base(task.w0(), &[&content, &style], &[1.0, 1.0])?;
    Ok((merged, 2 * cfg.rank))
}

/// Runs all three methods on one pair and reports metrics per method.
pub fn compare_methods(
    task: &SynthTask,
    content_id: usize,
    style_id: usize,
    cfg: &CompareConfig,
) -> Result<Vec<(MethodId, MetricsReport)>> {
    let mut rows = Vec::with_capacity(3);

    let mut joint_cfg = cfg.train.clone();
    joint_cfg.seed = cfg.train.seed.wrapping_add(5000);
    let (joint, _) = train_joint(
        task,
        content_id,
        style_id,
        &joint_cfg,
        &JointAdapterKind::Plain { rank: cfg.rank },
    )?;
    let joint_report = match &joint {
        TrainedJoint::Plain(a) => evaluate(task, content_id, style_id, EvalTarget::Plain(a))?,
        TrainedJoint::Plp(a) => evaluate(task, content_id, style_id, EvalTarget::Plp(a))?,
    };
    rows.push((MethodId::JointTraining, joint_report));

    let (merged, rank_class) = run_naive_merge(task, content_id, style_id, cfg)?;
    rows.push((
        MethodId::NaiveMerge,
        evaluate(
            task,
            content_id,
            style_id,
            EvalTarget::Merged {
                w: &merged,
                rank_class,
            },
        )?,
    ));

    let tuned = run_break_make(task, content_id, style_id, cfg)?;
    rows.push((
        MethodId::BreakMake,
        evaluate(task, content_id, style_id, EvalTarget::Plp(&tuned))?,
    ));

    Ok(rows)
}
