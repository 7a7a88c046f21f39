//! Losses, routed analytic gradients, and training procedures.
//!
//! Gradient routing is per-sample-type masking: when an adapter trains for a
//! particular content, primary batches update only B (the content block) and
//! auxiliary batches with varied styles update only D, and vice versa for
//! style training. The frozen blocks A and C never receive updates anywhere
//! in this module.
//!
//! With residual `R = forward(Z) − X` (m×batch) and `G = (2/batch)·R·Zᵀ`,
//! the factored-loss gradients are `dW_up = G·W_downᵀ` and
//! `dW_down = W_upᵀ·G`; the trainable-block gradients are the bottom rows of
//! `dW_up` (for B) and the right columns of `dW_down` (for D).

use crate::error::{Error, Result};
use crate::matcore::{Matrix, SeededRng};
use crate::plp::{Adapter, BlockProfile, PlainLoraAdapter, PlpAdapter, PlpSpec};
use crate::synth::{Batch, SynthTask};

const INIT_STREAM: u64 = 1;
const BATCH_STREAM: u64 = 2;
const PROBE_STREAM: u64 = 3;

/// Optimizer choice; plain SGD by default.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Optimizer {
    Sgd,
    /// Heavy-ball momentum with coefficient beta (typically 0.9).
    SgdMomentum(f64),
}

/// How batches are produced and gradients routed during stage-one training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Routing {
    /// Primary batches route to the adapter's own block; auxiliary batches
    /// with varied partners route to the other block.
    Mcp,
    /// Multi-correspondence sampling, but every batch updates both blocks.
    McpBoth,
    /// One designated partner, single batch per step, both blocks updated;
    /// the trace has no auxiliary term.
    OneToOne,
}

/// Knobs shared by the training procedures.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub optimizer: Optimizer,
    pub seed: u64,
    /// Auxiliary partner count (the `n` of the multi-correspondence loss);
    /// `None` uses every partner the task offers.
    pub n_aux: Option<usize>,
    pub routing: Routing,
    /// Weights of the (content, style) terms in the joint loss.
    pub loss_weights: (f64, f64),
    /// Designated partner id for one-to-one routing.
    pub partner_id: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 500,
            batch_size: 8,
            lr: 1e-2,
            optimizer: Optimizer::Sgd,
            seed: 1,
            n_aux: None,
            routing: Routing::Mcp,
            loss_weights: (1.0, 1.0),
            partner_id: None,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidArgument {
                what: "steps",
                details: "step count must be at least 1".to_string(),
            });
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument {
                what: "batch_size",
                details: "batch size must be at least 1".to_string(),
            });
        }
        if !(self.lr > 0.0) {
            return Err(Error::InvalidArgument {
                what: "lr",
                details: format!("learning rate {} must be positive", self.lr),
            });
        }
        if let Some(0) = self.n_aux {
            return Err(Error::EmptyAux);
        }
        Ok(())
    }
}

/// Gradients for the trainable blocks of a partitioned adapter.
#[derive(Debug, Clone)]
pub struct Grads {
    pub db: Matrix,
    pub dd: Matrix,
    /// Batch loss at the point the gradient was taken.
    pub loss: f64,
}

/// Gradients for both factors of a plain adapter.
#[derive(Debug, Clone)]
pub struct PlainGrads {
    pub d_up: Matrix,
    pub d_down: Matrix,
    pub loss: f64,
}

/// Which trainable blocks a batch is allowed to update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradRoute {
    BOnly,
    DOnly,
    Both,
}

/// One per-step trace line.
#[derive(Debug, Clone)]
pub struct TraceRecord {
    pub step: usize,
    /// The stochastic objective value optimized this step.
    pub loss: f64,
    /// Content-side term, when this step had one.
    pub content_term: Option<f64>,
    /// Style-side term, when this step had one.
    pub style_term: Option<f64>,
    /// Same objective evaluated on batches fixed at step 0.
    pub probe_loss: f64,
    /// Block norms after the step (partitioned adapters only).
    pub block_profile: Option<BlockProfile>,
}

/// Mean squared error `(1/batch)·‖forward(Z) − X‖²_F`.
pub fn mse_loss(adapter: &dyn Adapter, w0: &Matrix, batch: &Batch) -> Result<f64> {
    let pred = adapter.forward(w0, &batch.z)?;
    let residual = pred.sub(&batch.x)?;
    Ok(residual.frobenius_norm_sq() / batch.z.cols() as f64)
}

/// Weighted two-term loss `w_c·mse(content) + w_s·mse(style)`.
pub fn loss_joint(
    adapter: &dyn Adapter,
    w0: &Matrix,
    content_batch: &Batch,
    style_batch: &Batch,
    weights: (f64, f64),
) -> Result<f64> {
    let content = mse_loss(adapter, w0, content_batch)?;
    let style = mse_loss(adapter, w0, style_batch)?;
    Ok(weights.0 * content + weights.1 * style)
}

/// Multi-correspondence loss `mse(primary) + (1/n)·Σ mse(aux_i)`.
pub fn loss_mcp(
    adapter: &dyn Adapter,
    w0: &Matrix,
    primary: &Batch,
    aux: &[Batch],
) -> Result<f64> {
    if aux.is_empty() {
        return Err(Error::EmptyAux);
    }
    let primary_term = mse_loss(adapter, w0, primary)?;
    let mut aux_sum = 0.0;
    for batch in aux {
        aux_sum += mse_loss(adapter, w0, batch)?;
    }
    Ok(primary_term + aux_sum / aux.len() as f64)
}

fn scaled_residual_outer(
    adapter: &dyn Adapter,
    w0: &Matrix,
    batch: &Batch,
) -> Result<(Matrix, f64)> {
    let pred = adapter.forward(w0, &batch.z)?;
    let residual = pred.sub(&batch.x)?;
    let loss = residual.frobenius_norm_sq() / batch.z.cols() as f64;
    let g = residual
        .matmul(&batch.z.transpose())?
        .scale(2.0 / batch.z.cols() as f64);
    Ok((g, loss))
}

/// Analytic gradients for the trainable blocks of a partitioned adapter,
/// masked by `route`. A and C gradients are always discarded.
pub fn grad_plp(
    adapter: &PlpAdapter,
    w0: &Matrix,
    batch: &Batch,
    route: GradRoute,
) -> Result<Grads> {
    let (g, loss) = scaled_residual_outer(adapter, w0, batch)?;
    let d = adapter.frozen_dim();
    let db = if route == GradRoute::DOnly {
        Matrix::zeros(adapter.out_dim() - d, adapter.rank())
    } else {
        let d_up = g.matmul(&adapter.w_down().transpose())?;
        d_up.vslice(d)?.1
    };
    let dd = if route == GradRoute::BOnly {
        Matrix::zeros(adapter.rank(), adapter.in_dim() - d)
    } else {
        let d_down = adapter.w_up().transpose().matmul(&g)?;
        d_down.hslice(d)?.1
    };
    if !db.all_finite() || !dd.all_finite() {
        return Err(Error::NonFinite("grad_plp"));
    }
    Ok(Grads { db, dd, loss })
}

/// Analytic gradients for both factors of a plain adapter.
pub fn grad_plain(adapter: &PlainLoraAdapter, w0: &Matrix, batch: &Batch) -> Result<PlainGrads> {
    let (g, loss) = scaled_residual_outer(adapter, w0, batch)?;
    let d_up = g.matmul(&adapter.w_down_ref().transpose())?;
    let d_down = adapter.w_up_ref().transpose().matmul(&g)?;
    if !d_up.all_finite() || !d_down.all_finite() {
        return Err(Error::NonFinite("grad_plain"));
    }
    Ok(PlainGrads { d_up, d_down, loss })
}

/// SGD with optional heavy-ball momentum for one parameter block.
struct BlockOptimizer {
    momentum: Option<f64>,
    velocity: Option<Matrix>,
}

impl BlockOptimizer {
    fn new(optimizer: Optimizer) -> BlockOptimizer {
        BlockOptimizer {
            momentum: match optimizer {
                Optimizer::Sgd => None,
                Optimizer::SgdMomentum(beta) => Some(beta),
            },
            velocity: None,
        }
    }

    fn apply(&mut self, param: &mut Matrix, grad: &Matrix, lr: f64) -> Result<()> {
        match self.momentum {
            None => param.add_scaled_in_place(grad, -lr),
            Some(beta) => {
                let velocity = self
                    .velocity
                    .get_or_insert_with(|| Matrix::zeros(grad.rows(), grad.cols()));
                *velocity = velocity.scale(beta).add(grad)?;
                param.add_scaled_in_place(velocity, -lr)
            }
        }
    }
}

/// Which side of a pair an adapter is being trained for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Side {
    Content,
    Style,
}

/// Trains a content adapter: primary batches carry the target content with a
/// cycling partner style and update B; auxiliary batches (one per partner
/// style) update D. Returns the trained adapter tagged `content:<id>`.
pub fn train_content(
    task: &SynthTask,
    content_id: usize,
    spec: &PlpSpec,
    cfg: &TrainConfig,
    frozen_seed: u64,
) -> Result<(PlpAdapter, Vec<TraceRecord>)> {
    task.content_map(content_id)?;
    train_side(task, Side::Content, content_id, spec, cfg, frozen_seed)
}

/// Mirror of [`train_content`]: primary batches carry the target style with a
/// cycling partner content and update D; auxiliary batches update B.
pub fn train_style(
    task: &SynthTask,
    style_id: usize,
    spec: &PlpSpec,
    cfg: &TrainConfig,
    frozen_seed: u64,
) -> Result<(PlpAdapter, Vec<TraceRecord>)> {
    task.style_map(style_id)?;
    train_side(task, Side::Style, style_id, spec, cfg, frozen_seed)
}

fn train_side(
    task: &SynthTask,
    side: Side,
    target_id: usize,
    spec: &PlpSpec,
    cfg: &TrainConfig,
    frozen_seed: u64,
) -> Result<(PlpAdapter, Vec<TraceRecord>)> {
    cfg.validate()?;
    let available = match side {
        Side::Content => task.num_styles(),
        Side::Style => task.num_contents(),
    };
    let partner_kind = match side {
        Side::Content => "styles",
        Side::Style => "contents",
    };
    let partners: Vec<usize> = match cfg.routing {
        Routing::Mcp | Routing::McpBoth => {
            let n = cfg.n_aux.unwrap_or(available);
            if n > available {
                return Err(Error::NotEnoughPartners {
                    what: partner_kind,
                    needed: n,
                    available,
                });
            }
            (0..n).collect()
        }
        Routing::OneToOne => {
            let partner = cfg.partner_id.unwrap_or(0);
            if partner >= available {
                return Err(Error::IdOutOfRange {
                    what: match side {
                        Side::Content => "style",
                        Side::Style => "content",
                    },
                    id: partner,
                    count: available,
                });
            }
            vec![partner]
        }
    };

    let mut init_rng = SeededRng::substream(cfg.seed, INIT_STREAM);
    let tag = match side {
        Side::Content => format!("content:{target_id}"),
        Side::Style => format!("style:{target_id}"),
    };
    let mut adapter =
        PlpAdapter::new(task.m(), task.n(), spec, frozen_seed, &mut init_rng)?.with_tag(tag);

    // Sampling order per step is fixed: primary batch first, then one aux
    // batch per partner in index order.
    let sample = |rng: &mut SeededRng, partner: usize| -> Result<Batch> {
        match side {
            Side::Content => task.sample_batch(target_id, partner, cfg.batch_size, rng),
            Side::Style => task.sample_batch(partner, target_id, cfg.batch_size, rng),
        }
    };

    let mut probe_rng = SeededRng::substream(cfg.seed, PROBE_STREAM);
    let probe_primary = sample(&mut probe_rng, partners[0])?;
    let probe_aux: Vec<Batch> = partners
        .iter()
        .map(|&p| sample(&mut probe_rng, p))
        .collect::<Result<_>>()?;

    let mut batch_rng = SeededRng::substream(cfg.seed, BATCH_STREAM);
    let mut opt_b = BlockOptimizer::new(cfg.optimizer);
    let mut opt_d = BlockOptimizer::new(cfg.optimizer);
    let n_aux = partners.len() as f64;
    let (primary_route, aux_route) = match side {
        Side::Content => (GradRoute::BOnly, GradRoute::DOnly),
        Side::Style => (GradRoute::DOnly, GradRoute::BOnly),
    };

    let mut traces = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let (loss, primary_term, aux_term) = match cfg.routing {
            Routing::Mcp | Routing::McpBoth => {
                let both = cfg.routing == Routing::McpBoth;
                let primary = sample(&mut batch_rng, partners[step % partners.len()])?;
                let g_primary = grad_plp(
                    &adapter,
                    task.w0(),
                    &primary,
                    if both { GradRoute::Both } else { primary_route },
                )?;
                let mut db_acc = Matrix::zeros(g_primary.db.rows(), g_primary.db.cols());
                let mut dd_acc = Matrix::zeros(g_primary.dd.rows(), g_primary.dd.cols());
                let mut aux_loss_sum = 0.0;
                for &partner in &partners {
                    let aux = sample(&mut batch_rng, partner)?;
                    let g_aux = grad_plp(
                        &adapter,
                        task.w0(),
                        &aux,
                        if both { GradRoute::Both } else { aux_route },
                    )?;
                    aux_loss_sum += g_aux.loss;
                    db_acc.add_scaled_in_place(&g_aux.db, 1.0)?;
                    dd_acc.add_scaled_in_place(&g_aux.dd, 1.0)?;
                }
                let db = g_primary.db.add(&db_acc.scale(1.0 / n_aux))?;
                let dd = g_primary.dd.add(&dd_acc.scale(1.0 / n_aux))?;
                opt_b.apply(adapter.b_mut(), &db, cfg.lr)?;
                opt_d.apply(adapter.d_mut(), &dd, cfg.lr)?;
                let aux_mean = aux_loss_sum / n_aux;
                (g_primary.loss + aux_mean, g_primary.loss, Some(aux_mean))
            }
            Routing::OneToOne => {
                let batch = sample(&mut batch_rng, partners[0])?;
                let g = grad_plp(&adapter, task.w0(), &batch, GradRoute::Both)?;
                opt_b.apply(adapter.b_mut(), &g.db, cfg.lr)?;
                opt_d.apply(adapter.d_mut(), &g.dd, cfg.lr)?;
                (g.loss, g.loss, None)
            }
        };
        let probe_loss = match cfg.routing {
            Routing::OneToOne => mse_loss(&adapter, task.w0(), &probe_primary)?,
            _ => loss_mcp(&adapter, task.w0(), &probe_primary, &probe_aux)?,
        };
        let (content_term, style_term) = match side {
            Side::Content => (Some(primary_term), aux_term),
            Side::Style => (aux_term, Some(primary_term)),
        };
        traces.push(TraceRecord {
            step,
            loss,
            content_term,
            style_term,
            probe_loss,
            block_profile: Some(adapter.block_profile()),
        });
    }
    Ok((adapter, traces))
}

/// Adapter kind for the joint-training baseline.
#[derive(Debug, Clone)]
pub enum JointAdapterKind {
    Plain { rank: usize },
    PlpBothRoutes { spec: PlpSpec, frozen_seed: u64 },
}

/// A jointly trained adapter of either kind.
#[derive(Debug, Clone)]
pub enum TrainedJoint {
    Plain(PlainLoraAdapter),
    Plp(PlpAdapter),
}

impl TrainedJoint {
    pub fn as_adapter(&self) -> &dyn Adapter {
        match self {
            TrainedJoint::Plain(a) => a,
            TrainedJoint::Plp(a) => a,
        }
    }
}

/// Joint baseline: one adapter trained on the composed pair, alternating a
/// content-labelled step with a style-labelled step, all trainable parameters
/// updated every step.
pub fn train_joint(
    task: &SynthTask,
    content_id: usize,
    style_id: usize,
    cfg: &TrainConfig,
    kind: &JointAdapterKind,
) -> Result<(TrainedJoint, Vec<TraceRecord>)> {
    cfg.validate()?;
    task.content_map(content_id)?;
    task.style_map(style_id)?;
    let mut init_rng = SeededRng::substream(cfg.seed, INIT_STREAM);
    let tag = format!("joint({content_id},{style_id})");
    let mut trained = match kind {
        JointAdapterKind::Plain { rank } => TrainedJoint::Plain(
            PlainLoraAdapter::new(
                task.m(),
                task.n(),
                *rank,
                crate::plp::TrainableInit::ZeroD,
                &mut init_rng,
            )?
            .with_tag(tag),
        ),
        JointAdapterKind::PlpBothRoutes { spec, frozen_seed } => TrainedJoint::Plp(
            PlpAdapter::new(task.m(), task.n(), spec, *frozen_seed, &mut init_rng)?.with_tag(tag),
        ),
    };

    let mut probe_rng = SeededRng::substream(cfg.seed, PROBE_STREAM);
    let probe = task.sample_batch(content_id, style_id, cfg.batch_size, &mut probe_rng)?;

    let mut batch_rng = SeededRng::substream(cfg.seed, BATCH_STREAM);
    let mut opt_up = BlockOptimizer::new(cfg.optimizer);
    let mut opt_down = BlockOptimizer::new(cfg.optimizer);
    let mut traces = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let batch = task.sample_batch(content_id, style_id, cfg.batch_size, &mut batch_rng)?;
        let loss = match &mut trained {
            TrainedJoint::Plain(adapter) => {
                let g = grad_plain(adapter, task.w0(), &batch)?;
                opt_up.apply(adapter.w_up_mut(), &g.d_up, cfg.lr)?;
                opt_down.apply(adapter.w_down_mut(), &g.d_down, cfg.lr)?;
                g.loss
            }
            TrainedJoint::Plp(adapter) => {
                let g = grad_plp(adapter, task.w0(), &batch, GradRoute::Both)?;
                opt_up.apply(adapter.b_mut(), &g.db, cfg.lr)?;
                opt_down.apply(adapter.d_mut(), &g.dd, cfg.lr)?;
                g.loss
            }
        };
        let probe_loss = mse_loss(trained.as_adapter(), task.w0(), &probe)?;
        let content_phase = step % 2 == 0;
        traces.push(TraceRecord {
            step,
            loss,
            content_term: content_phase.then_some(loss),
            style_term: (!content_phase).then_some(loss),
            probe_loss,
            block_profile: match &trained {
                TrainedJoint::Plp(adapter) => Some(adapter.block_profile()),
                TrainedJoint::Plain(_) => None,
            },
        });
    }
    Ok((trained, traces))
}

/// Short stage-two fine-tune of a combined adapter on the composed pair.
/// Updates B and D jointly; A and C stay untouched. `steps == 0` returns the
/// adapter unchanged.
pub fn finetune_combined(
    adapter: PlpAdapter,
    task: &SynthTask,
    content_id: usize,
    style_id: usize,
    steps: usize,
    lr: f64,
    seed: u64,
) -> Result<(PlpAdapter, Vec<TraceRecord>)> {
    task.content_map(content_id)?;
    task.style_map(style_id)?;
    if !adapter.tag().starts_with("combined") {
        log::warn!(
            "fine-tuning an adapter tagged {:?}, not a combined one",
            adapter.tag()
        );
    }
    if steps == 0 {
        return Ok((adapter, Vec::new()));
    }
    if !(lr > 0.0) {
        return Err(Error::InvalidArgument {
            what: "lr",
            details: format!("learning rate {lr} must be positive"),
        });
    }
    let mut adapter = adapter;
    let mut probe_rng = SeededRng::substream(seed, PROBE_STREAM);
    let probe = task.sample_batch(content_id, style_id, 8, &mut probe_rng)?;
    let mut batch_rng = SeededRng::substream(seed, BATCH_STREAM);
    let mut opt_b = BlockOptimizer::new(Optimizer::Sgd);
    let mut opt_d = BlockOptimizer::new(Optimizer::Sgd);
    let mut traces = Vec::with_capacity(steps);
    for step in 0..steps {
        let batch = task.sample_batch(content_id, style_id, 8, &mut batch_rng)?;
        let g = grad_plp(&adapter, task.w0(), &batch, GradRoute::Both)?;
        opt_b.apply(adapter.b_mut(), &g.db, lr)?;
        opt_d.apply(adapter.d_mut(), &g.dd, lr)?;
        let probe_loss = mse_loss(&adapter, task.w0(), &probe)?;
        traces.push(TraceRecord {
            step,
            loss: g.loss,
            content_term: Some(g.loss),
            style_term: Some(g.loss),
            probe_loss,
            block_profile: Some(adapter.block_profile()),
        });
    }
    Ok((adapter, traces))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matcore::gaussian;
    use crate::plp::{make_adapter, InitMode, TrainableInit};

    fn test_spec() -> PlpSpec {
        PlpSpec::exact(4, 4)
    }

    fn planted_batch(adapter: &PlpAdapter, w0: &Matrix, seed: u64, batch: usize) -> Batch {
        let z = gaussian(adapter.in_dim(), batch, &mut SeededRng::new(seed), 1.0).unwrap();
        let x = adapter.forward(w0, &z).unwrap();
        Batch {
            z,
            x,
            content_id: 0,
            style_id: 0,
        }
    }

    #[test]
    fn mse_zero_at_planted_solution() {
        let adapter = PlpAdapter::new(8, 8, &test_spec(), 3, &mut SeededRng::new(4)).unwrap();
        let w0 = gaussian(8, 8, &mut SeededRng::new(5), 1.0).unwrap();
        let batch = planted_batch(&adapter, &w0, 6, 5);
        let loss = mse_loss(&adapter, &w0, &batch).unwrap();
        assert!(loss <= 1e-16, "loss {loss}");
    }

    #[test]
    fn mse_hand_computed_value() {
        // Zero base, zero adapter, identity inputs, targets equal to inputs:
        // loss = ||I||_F^2 / batch = m / batch = 1.
        let mut adapter = PlpAdapter::new(4, 4, &PlpSpec::exact(2, 2), 1, &mut SeededRng::new(2)).unwrap();
        *adapter.b_mut() = Matrix::zeros(2, 2);
        let w0 = Matrix::zeros(4, 4);
        let z = Matrix::identity(4);
        let batch = Batch {
            x: z.clone(),
            z,
            content_id: 0,
            style_id: 0,
        };
        assert_eq!(mse_loss(&adapter, &w0, &batch).unwrap(), 1.0);
    }

    #[test]
    fn mse_matches_scalar_loop_oracle() {
        let adapter = PlpAdapter::new(
            8,
            6,
            &PlpSpec {
                rank: 4,
                frozen_dim: 4,
                init_mode: InitMode::ApproximateRandom,
                trainable_init: TrainableInit::GaussianBoth,
            },
            7,
            &mut SeededRng::new(8),
        )
        .unwrap();
        let w0 = gaussian(8, 6, &mut SeededRng::new(9), 1.0).unwrap();
        let z = gaussian(6, 5, &mut SeededRng::new(10), 1.0).unwrap();
        let x = gaussian(8, 5, &mut SeededRng::new(11), 1.0).unwrap();
        let batch = Batch {
            z: z.clone(),
            x: x.clone(),
            content_id: 0,
            style_id: 0,
        };
        let loss = mse_loss(&adapter, &w0, &batch).unwrap();

        // Oracle: materialize W0 + ΔW, predict entry by entry, accumulate.
        let full = w0.add(&adapter.delta_w()).unwrap();
        let mut acc = 0.0;
        for col in 0..5 {
            for row in 0..8 {
                let mut pred = 0.0;
                for k in 0..6 {
                    pred += full.get(row, k) * z.get(k, col);
                }
                let diff = pred - x.get(row, col);
                acc += diff * diff;
            }
        }
        let oracle = acc / 5.0;
        assert!((loss - oracle).abs() <= 1e-12 * oracle.max(1.0));
    }

    #[test]
    fn joint_loss_weight_behavior() {
        let adapter = PlpAdapter::new(8, 8, &test_spec(), 3, &mut SeededRng::new(4)).unwrap();
        let w0 = gaussian(8, 8, &mut SeededRng::new(5), 1.0).unwrap();
        let task = SynthTask::generate(8, 8, 2, 2, 2, 12).unwrap();
        let content = task.sample_batch(0, 0, 4, &mut SeededRng::new(13)).unwrap();
        let style = task.sample_batch(1, 1, 4, &mut SeededRng::new(14)).unwrap();

        let content_only = loss_joint(&adapter, &w0, &content, &style, (1.0, 0.0)).unwrap();
        assert_eq!(content_only, mse_loss(&adapter, &w0, &content).unwrap());

        let doubled = loss_joint(&adapter, &w0, &content, &content, (1.0, 1.0)).unwrap();
        assert_eq!(doubled, 2.0 * mse_loss(&adapter, &w0, &content).unwrap());

        let sum = loss_joint(&adapter, &w0, &content, &style, (1.0, 1.0)).unwrap();
        assert_eq!(
            sum,
            mse_loss(&adapter, &w0, &content).unwrap() + mse_loss(&adapter, &w0, &style).unwrap()
        );
    }

    #[test]
    fn mcp_loss_reduces_to_joint_at_n_one() {
        let adapter = PlpAdapter::new(8, 8, &test_spec(), 3, &mut SeededRng::new(4)).unwrap();
        let w0 = gaussian(8, 8, &mut SeededRng::new(5), 1.0).unwrap();
        let task = SynthTask::generate(8, 8, 2, 2, 2, 12).unwrap();
        let primary = task.sample_batch(0, 0, 4, &mut SeededRng::new(15)).unwrap();
        let aux = task.sample_batch(0, 1, 4, &mut SeededRng::new(16)).unwrap();
        let mcp = loss_mcp(&adapter, &w0, &primary, std::slice::from_ref(&aux)).unwrap();
        let joint = loss_joint(&adapter, &w0, &primary, &aux, (1.0, 1.0)).unwrap();
        assert_eq!(mcp.to_bits(), joint.to_bits());
    }

    #[test]
    fn mcp_identical_aux_batches_average_to_single_term() {
        let adapter = PlpAdapter::new(8, 8, &test_spec(), 3, &mut SeededRng::new(4)).unwrap();
        let w0 = gaussian(8, 8, &mut SeededRng::new(5), 1.0).unwrap();
        let task = SynthTask::generate(8, 8, 2, 2, 2, 12).unwrap();
        let primary = task.sample_batch(0, 0, 4, &mut SeededRng::new(17)).unwrap();
        let aux = task.sample_batch(0, 1, 4, &mut SeededRng::new(18)).unwrap();
        let single = mse_loss(&adapter, &w0, &aux).unwrap();
        let mcp = loss_mcp(&adapter, &w0, &primary, &[aux.clone(), aux]).unwrap();
        let primary_term = mse_loss(&adapter, &w0, &primary).unwrap();
        assert_eq!(mcp, primary_term + single);
    }

    #[test]
    fn mcp_matches_hand_rolled_sum() {
        let adapter = PlpAdapter::new(8, 8, &test_spec(), 3, &mut SeededRng::new(4)).unwrap();
        let w0 = gaussian(8, 8, &mut SeededRng::new(5), 1.0).unwrap();
        let task = SynthTask::generate(8, 8, 2, 3, 2, 12).unwrap();
        let primary = task.sample_batch(0, 0, 4, &mut SeededRng::new(19)).unwrap();
        let aux: Vec<Batch> = (0..3)
            .map(|s| task.sample_batch(0, s, 4, &mut SeededRng::new(20 + s as u64)).unwrap())
            .collect();
        let mcp = loss_mcp(&adapter, &w0, &primary, &aux).unwrap();
        let mut hand = mse_loss(&adapter, &w0, &primary).unwrap();
        let mut aux_sum = 0.0;
        for batch in &aux {
            aux_sum += mse_loss(&adapter, &w0, batch).unwrap();
        }
        hand += aux_sum / 3.0;
        assert!((mcp - hand).abs() <= 1e-12 * hand.max(1.0));
        assert!(matches!(
            loss_mcp(&adapter, &w0, &primary, &[]),
            Err(Error::EmptyAux)
        ));
    }

    #[test]
    fn gradients_vanish_at_planted_optimum() {
        let adapter = PlpAdapter::new(8, 8, &test_spec(), 3, &mut SeededRng::new(4)).unwrap();
        let w0 = gaussian(8, 8, &mut SeededRng::new(5), 1.0).unwrap();
        let batch = planted_batch(&adapter, &w0, 6, 4);
        let g = grad_plp(&adapter, &w0, &batch, GradRoute::Both).unwrap();
        assert!(g.db.frobenius_norm() <= 1e-10);
        assert!(g.dd.frobenius_norm() <= 1e-10);
    }

    #[test]
    fn route_masks_zero_the_other_block() {
        let task = SynthTask::generate(8, 8, 2, 2, 2, 30).unwrap();
        let adapter = PlpAdapter::new(8, 8, &test_spec(), 3, &mut SeededRng::new(4)).unwrap();
        let batch = task.sample_batch(0, 1, 4, &mut SeededRng::new(31)).unwrap();
        let g_b = grad_plp(&adapter, task.w0(), &batch, GradRoute::BOnly).unwrap();
        assert!(g_b.dd.bits_eq(&Matrix::zeros(4, 4)));
        assert!(g_b.db.frobenius_norm() > 0.0);
        let g_d = grad_plp(&adapter, task.w0(), &batch, GradRoute::DOnly).unwrap();
        assert!(g_d.db.bits_eq(&Matrix::zeros(4, 4)));
    }

    /// Central finite differences over every trainable entry.
    fn fd_check_plp(adapter: &PlpAdapter, w0: &Matrix, batch: &Batch) {
        let h = 1e-5;
        let analytic = grad_plp(adapter, w0, batch, GradRoute::Both).unwrap();
        let mut checked = 0usize;
        for (block, grad) in [(true, &analytic.db), (false, &analytic.dd)] {
            for i in 0..grad.rows() {
                for j in 0..grad.cols() {
                    let mut plus = adapter.clone();
                    let mut minus = adapter.clone();
                    if block {
                        plus.b_mut().set(i, j, adapter.b().get(i, j) + h);
                        minus.b_mut().set(i, j, adapter.b().get(i, j) - h);
                    } else {
                        plus.d_mut().set(i, j, adapter.d().get(i, j) + h);
                        minus.d_mut().set(i, j, adapter.d().get(i, j) - h);
                    }
                    let fd = (mse_loss(&plus, w0, batch).unwrap()
                        - mse_loss(&minus, w0, batch).unwrap())
                        / (2.0 * h);
                    if fd.abs() > 1e-8 {
                        let rel = (grad.get(i, j) - fd).abs() / fd.abs();
                        assert!(
                            rel <= 1e-6,
                            "block {} entry ({i},{j}): analytic {} vs fd {fd}, rel {rel}",
                            if block { "B" } else { "D" },
                            grad.get(i, j)
                        );
                        checked += 1;
                    }
                }
            }
        }
        assert!(checked > 0, "finite-difference check exercised no entries");
    }

    #[test]
    fn plp_gradients_match_finite_differences() {
        let spec = PlpSpec {
            rank: 4,
            frozen_dim: 4,
            init_mode: InitMode::ExactDisjoint,
            trainable_init: TrainableInit::GaussianBoth,
        };
        let adapter = PlpAdapter::new(8, 6, &spec, 40, &mut SeededRng::new(41)).unwrap();
        let task = SynthTask::generate(8, 6, 2, 2, 2, 42).unwrap();
        let batch = task.sample_batch(0, 1, 3, &mut SeededRng::new(43)).unwrap();
        fd_check_plp(&adapter, task.w0(), &batch);
    }

    #[test]
    fn plain_gradients_match_finite_differences() {
        let adapter =
            PlainLoraAdapter::new(6, 5, 3, TrainableInit::GaussianBoth, &mut SeededRng::new(50))
                .unwrap();
        let task = SynthTask::generate(6, 5, 2, 2, 2, 51).unwrap();
        let batch = task.sample_batch(0, 0, 3, &mut SeededRng::new(52)).unwrap();
        let h = 1e-5;
        let analytic = grad_plain(&adapter, task.w0(), &batch).unwrap();
        for (up, grad) in [(true, &analytic.d_up), (false, &analytic.d_down)] {
            for i in 0..grad.rows() {
                for j in 0..grad.cols() {
                    let mut plus = adapter.clone();
                    let mut minus = adapter.clone();
                    if up {
                        plus.w_up_mut().set(i, j, adapter.w_up_ref().get(i, j) + h);
                        minus.w_up_mut().set(i, j, adapter.w_up_ref().get(i, j) - h);
                    } else {
                        plus.w_down_mut()
                            .set(i, j, adapter.w_down_ref().get(i, j) + h);
                        minus
                            .w_down_mut()
                            .set(i, j, adapter.w_down_ref().get(i, j) - h);
                    }
                    let fd = (mse_loss(&plus, task.w0(), &batch).unwrap()
                        - mse_loss(&minus, task.w0(), &batch).unwrap())
                        / (2.0 * h);
                    if fd.abs() > 1e-8 {
                        let rel = (grad.get(i, j) - fd).abs() / fd.abs();
                        assert!(rel <= 1e-6, "entry ({i},{j}): rel {rel}");
                    }
                }
            }
        }
    }

    #[test]
    fn plain_grad_up_zero_when_down_zero() {
        let adapter =
            PlainLoraAdapter::new(6, 5, 3, TrainableInit::ZeroD, &mut SeededRng::new(53)).unwrap();
        let task = SynthTask::generate(6, 5, 2, 2, 2, 54).unwrap();
        let batch = task.sample_batch(0, 0, 3, &mut SeededRng::new(55)).unwrap();
        let g = grad_plain(&adapter, task.w0(), &batch).unwrap();
        assert!(g.d_up.bits_eq(&Matrix::zeros(6, 3)));
        assert!(g.d_down.frobenius_norm() > 0.0);

        let planted = planted_batch_plain(&adapter, task.w0(), 56, 4);
        let g = grad_plain(&adapter, task.w0(), &planted).unwrap();
        assert!(g.d_up.frobenius_norm() <= 1e-10);
        assert!(g.d_down.frobenius_norm() <= 1e-10);
    }

    fn planted_batch_plain(adapter: &PlainLoraAdapter, w0: &Matrix, seed: u64, batch: usize) -> Batch {
        let z = gaussian(adapter.in_dim(), batch, &mut SeededRng::new(seed), 1.0).unwrap();
        let x = adapter.forward(w0, &z).unwrap();
        Batch {
            z,
            x,
            content_id: 0,
            style_id: 0,
        }
    }

    #[test]
    fn train_content_first_step_moves_b_and_keeps_frozen() {
        let task = SynthTask::generate(16, 16, 1, 3, 2, 60).unwrap();
        let cfg = TrainConfig {
            steps: 1,
            ..TrainConfig::default()
        };
        let spec = PlpSpec::exact(4, 8);
        let (adapter, traces) = train_content(&task, 0, &spec, &cfg, 7).unwrap();
        assert_eq!(traces.len(), 1);
        adapter.verify_frozen().unwrap();
        let fresh = PlpAdapter::new(
            16,
            16,
            &spec,
            7,
            &mut SeededRng::substream(cfg.seed, INIT_STREAM),
        )
        .unwrap();
        assert!(!adapter.b().bits_eq(fresh.b()), "B unchanged after a step");
    }

    #[test]
    fn zero_steps_rejected() {
        let task = SynthTask::generate(8, 8, 1, 2, 2, 61).unwrap();
        let cfg = TrainConfig {
            steps: 0,
            ..TrainConfig::default()
        };
        assert!(train_content(&task, 0, &PlpSpec::exact(4, 4), &cfg, 7).is_err());
    }

    #[test]
    fn too_many_aux_partners_rejected() {
        let task = SynthTask::generate(8, 8, 1, 2, 2, 62).unwrap();
        let cfg = TrainConfig {
            n_aux: Some(5),
            ..TrainConfig::default()
        };
        assert!(matches!(
            train_content(&task, 0, &PlpSpec::exact(4, 4), &cfg, 7),
            Err(Error::NotEnoughPartners { .. })
        ));
    }

    #[test]
    fn one_to_one_trace_has_no_aux_term() {
        let task = SynthTask::generate(16, 16, 1, 3, 2, 63).unwrap();
        let cfg = TrainConfig {
            steps: 3,
            routing: Routing::OneToOne,
            partner_id: Some(1),
            ..TrainConfig::default()
        };
        let (_, traces) = train_content(&task, 0, &PlpSpec::exact(4, 8), &cfg, 7).unwrap();
        assert!(traces.iter().all(|t| t.style_term.is_none()));
        assert!(traces.iter().all(|t| t.content_term.is_some()));
    }

    #[test]
    fn training_is_bit_deterministic() {
        let task = SynthTask::generate(16, 16, 2, 3, 2, 64).unwrap();
        let cfg = TrainConfig {
            steps: 25,
            ..TrainConfig::default()
        };
        let spec = PlpSpec::exact(4, 8);
        let (a, _) = train_content(&task, 1, &spec, &cfg, 9).unwrap();
        let (b, _) = train_content(&task, 1, &spec, &cfg, 9).unwrap();
        assert!(a.b().bits_eq(b.b()));
        assert!(a.d().bits_eq(b.d()));
    }

    #[test]
    fn routing_exclusivity_over_one_step() {
        // A single MCP step: B's update comes only from the primary batch,
        // D's only from the aux batches; repeating the step with the same
        // batches reproduces both updates bitwise.
        let task = SynthTask::generate(16, 16, 1, 2, 2, 65).unwrap();
        let cfg = TrainConfig {
            steps: 1,
            ..TrainConfig::default()
        };
        let spec = PlpSpec::exact(4, 8);
        let (after, _) = train_content(&task, 0, &spec, &cfg, 11).unwrap();
        let before = PlpAdapter::new(
            16,
            16,
            &spec,
            11,
            &mut SeededRng::substream(cfg.seed, INIT_STREAM),
        )
        .unwrap();
        // D started at zero and only aux (D-routed) batches touched it.
        assert!(!after.d().bits_eq(before.d()));
        assert!(!after.b().bits_eq(before.b()));
        // Frozen blocks untouched in both.
        assert!(after.a().bits_eq(before.a()));
        assert!(after.c().bits_eq(before.c()));
    }

    #[test]
    fn momentum_optimizer_changes_trajectory_deterministically() {
        let task = SynthTask::generate(16, 16, 1, 2, 2, 66).unwrap();
        let base = TrainConfig {
            steps: 10,
            ..TrainConfig::default()
        };
        let momentum = TrainConfig {
            optimizer: Optimizer::SgdMomentum(0.9),
            ..base.clone()
        };
        let spec = PlpSpec::exact(4, 8);
        let (a, _) = train_content(&task, 0, &spec, &base, 7).unwrap();
        let (b, _) = train_content(&task, 0, &spec, &momentum, 7).unwrap();
        let (b2, _) = train_content(&task, 0, &spec, &momentum, 7).unwrap();
        assert!(!a.b().bits_eq(b.b()));
        assert!(b.b().bits_eq(b2.b()));
    }

    #[test]
    fn finetune_zero_steps_is_identity() {
        let task = SynthTask::generate(16, 16, 1, 2, 2, 67).unwrap();
        let spec = PlpSpec::exact(4, 8);
        let cfg = TrainConfig {
            steps: 5,
            ..TrainConfig::default()
        };
        let (content, _) = train_content(&task, 0, &spec, &cfg, 7).unwrap();
        let (style, _) = train_style(&task, 0, &spec, &cfg, 7).unwrap();
        let combined = make_adapter(&content.break_adapter().0, &style.break_adapter().1).unwrap();
        let (after, traces) =
            finetune_combined(combined.clone(), &task, 0, 0, 0, 1e-2, 1).unwrap();
        assert!(traces.is_empty());
        assert!(after.b().bits_eq(combined.b()));
        assert!(after.d().bits_eq(combined.d()));
    }

    #[test]
    fn finetune_keeps_frozen_blocks() {
        let task = SynthTask::generate(16, 16, 1, 2, 2, 68).unwrap();
        let spec = PlpSpec::exact(4, 8);
        let cfg = TrainConfig {
            steps: 5,
            ..TrainConfig::default()
        };
        let (content, _) = train_content(&task, 0, &spec, &cfg, 7).unwrap();
        let (style, _) = train_style(&task, 1, &spec, &cfg, 7).unwrap();
        let combined = make_adapter(&content.break_adapter().0, &style.break_adapter().1).unwrap();
        let (after, traces) = finetune_combined(combined.clone(), &task, 0, 1, 20, 1e-2, 1).unwrap();
        assert_eq!(traces.len(), 20);
        assert!(after.a().bits_eq(combined.a()));
        assert!(after.c().bits_eq(combined.c()));
        after.verify_frozen().unwrap();
        assert!(!after.b().bits_eq(combined.b()));
    }

    #[test]
    fn joint_training_counts_trainable_parameters() {
        let task = SynthTask::generate(16, 16, 1, 1, 2, 69).unwrap();
        let cfg = TrainConfig {
            steps: 1,
            ..TrainConfig::default()
        };
        let (plain, _) =
            train_joint(&task, 0, 0, &cfg, &JointAdapterKind::Plain { rank: 8 }).unwrap();
        assert_eq!(plain.as_adapter().trainable_params(), 16 * 8 + 8 * 16);
        let (plp, _) = train_joint(
            &task,
            0,
            0,
            &cfg,
            &JointAdapterKind::PlpBothRoutes {
                spec: PlpSpec::exact(8, 8),
                frozen_seed: 7,
            },
        )
        .unwrap();
        assert_eq!(
            plp.as_adapter().trainable_params(),
            (16 - 8) * 8 + 8 * (16 - 8)
        );
    }
}
