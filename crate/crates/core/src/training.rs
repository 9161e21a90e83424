//! Charbonnier loss, Adam and the training loop.

use std::path::PathBuf;

use log::{debug, info};
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::autodiff::{Tape, Var};
use crate::checkpoint;
use crate::error::{contract_err, Error, Result};
use crate::network::{Bound, DehazeModel, FusionOutputs, Mode};
use crate::tensor::{Element, Tensor};
use crate::tucker;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch: usize,
    pub steps: usize,
    pub eps_charb: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Weight of the Tucker regulariser; only used when the model has Tucker enabled.
    pub tucker_lambda: f64,
    /// Also regularise `K` towards its own Tucker reconstruction.
    pub tucker_on_k: bool,
    pub seed: u64,
    /// Write a checkpoint every this many steps (0 disables periodic saves).
    pub checkpoint_every: usize,
    pub checkpoint_path: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            batch: 1,
            steps: 500,
            eps_charb: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            tucker_lambda: 0.1,
            tucker_on_k: false,
            seed: 1,
            checkpoint_every: 0,
            checkpoint_path: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr.is_nan() || self.lr <= 0.0 {
            return Err(contract_err!("lr must be > 0, got {}", self.lr));
        }
        if self.steps == 0 {
            return Err(contract_err!("steps must be >= 1"));
        }
        if self.batch == 0 {
            return Err(contract_err!("batch must be >= 1"));
        }
        if self.eps_charb.is_nan() || self.eps_charb <= 0.0 {
            return Err(contract_err!("charbonnier eps must be > 0, got {}", self.eps_charb));
        }
        if self.tucker_lambda < 0.0 {
            return Err(contract_err!("tucker lambda must be >= 0"));
        }
        Ok(())
    }
}

/// `mean(sqrt((pred − target)² + eps²))`.
pub fn charbonnier<T: Element>(tape: &mut Tape<T>, pred: Var, target: Var, eps: f64) -> Result<Var> {
    if tape.value(pred).shape() != tape.value(target).shape() {
        return Err(crate::error::dim_err!(
            "charbonnier: {:?} vs {:?}",
            tape.value(pred).shape(),
            tape.value(target).shape()
        ));
    }
    let diff = tape.sub(pred, target)?;
    let sq = tape.square(diff)?;
    let shifted = tape.add_scalar(sq, T::of(eps * eps))?;
    let root = tape.sqrt(shifted)?;
    tape.mean(root)
}

#[derive(Debug, Clone)]
pub struct LossParts {
    pub outputs: FusionOutputs,
    pub data: Var,
    /// `λ ·` regulariser, when active.
    pub reg: Option<Var>,
    pub total: Var,
}

/// Data term on the fused output plus, when Tucker is enabled, the weighted
/// distance of `j_out` to its (constant) low-rank reconstruction.
pub fn total_loss<T: Element>(
    model: &DehazeModel<T>,
    tape: &mut Tape<T>,
    bound: &Bound,
    hazy: &Tensor<T>,
    clean: &Tensor<T>,
    cfg: &TrainConfig,
) -> Result<LossParts> {
    let outputs = model.forward(tape, bound, hazy, Mode::Train, None)?;
    let target = tape.constant(clean.clone())?;
    let data = charbonnier(tape, outputs.fused, target, cfg.eps_charb)?;
    if !model.config.tucker_enabled {
        return Ok(LossParts {
            outputs,
            data,
            reg: None,
            total: data,
        });
    }
    let mut reg = tucker_term(tape, outputs.j_out, model, cfg)?;
    if cfg.tucker_on_k {
        let k_term = tucker_term(tape, outputs.k_base, model, cfg)?;
        reg = tape.add(reg, k_term)?;
    }
    let weighted = tape.scale(reg, T::of(cfg.tucker_lambda))?;
    let total = tape.add(data, weighted)?;
    Ok(LossParts {
        outputs,
        data,
        reg: Some(weighted),
        total,
    })
}

fn tucker_term<T: Element>(tape: &mut Tape<T>, x: Var, model: &DehazeModel<T>, cfg: &TrainConfig) -> Result<Var> {
    let target = tucker::denoise_nchw(tape.value(x), &model.config.tucker)?;
    let target = tape.constant(target)?;
    charbonnier(tape, x, target, cfg.eps_charb)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T: Element = f32> {
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Element> AdamState<T> {
    pub fn new(shapes: impl IntoIterator<Item = Vec<usize>>) -> Self {
        let (m, v) = shapes
            .into_iter()
            .map(|s| (Tensor::zeros(s.clone()), Tensor::zeros(s)))
            .unzip();
        Self { step: 0, m, v }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl From<&TrainConfig> for AdamHyper {
    fn from(c: &TrainConfig) -> Self {
        Self {
            lr: c.lr,
            beta1: c.beta1,
            beta2: c.beta2,
            eps: c.adam_eps,
        }
    }
}

/// One bias-corrected Adam update. Non-finite gradients abort the step
/// before anything is modified.
pub fn adam_step<T: Element>(
    params: &mut [&mut Tensor<T>],
    grads: &[Tensor<T>],
    names: &[String],
    state: &mut AdamState<T>,
    hp: AdamHyper,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(contract_err!(
            "adam: {} params, {} grads, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        ));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || state.m[i].shape() != p.shape() {
            return Err(contract_err!(
                "adam: shape mismatch for '{}'",
                names.get(i).map_or("?", |s| s)
            ));
        }
        if !g.all_finite() {
            return Err(Error::Numeric(format!(
                "non-finite gradient for parameter '{}'",
                names.get(i).map_or("?", |s| s)
            )));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::of(hp.beta1), T::of(hp.beta2));
    let one = T::one();
    let c1 = T::of(1.0 - hp.beta1.powi(t));
    let c2 = T::of(1.0 - hp.beta2.powi(t));
    let lr = T::of(hp.lr);
    let eps = T::of(hp.eps);
    for (i, p) in params.iter_mut().enumerate() {
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (((pv, &gv), mv), vv) in p.data_mut().iter_mut().zip(grads[i].data()).zip(m).zip(v) {
            *mv = b1 * *mv + (one - b1) * gv;
            *vv = b2 * *vv + (one - b2) * gv * gv;
            let m_hat = *mv / c1;
            let v_hat = *vv / c2;
            *pv -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pair<T: Element = f32> {
    pub name: String,
    pub hazy: Tensor<T>,
    pub clean: Tensor<T>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRow {
    pub step: usize,
    pub data_loss: f64,
    pub reg_loss: f64,
    pub total: f64,
}

impl LossRow {
    pub const CSV_HEADER: &'static str = "step,data_loss,reg_loss,total";

    pub fn to_csv(&self) -> String {
        format!(
            "{},{:.9e},{:.9e},{:.9e}",
            self.step, self.data_loss, self.reg_loss, self.total
        )
    }
}

pub fn loss_curve_csv(rows: &[LossRow]) -> String {
    let mut s = String::from(LossRow::CSV_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.to_csv());
        s.push('\n');
    }
    s
}

/// Gradients and loss values for one sample.
pub struct StepEval<T: Element> {
    pub grads: Vec<Tensor<T>>,
    pub row: LossRow,
}

/// Loss and parameter gradients for one (hazy, clean) pair.
pub fn evaluate_step<T: Element>(
    model: &DehazeModel<T>,
    hazy: &Tensor<T>,
    clean: &Tensor<T>,
    cfg: &TrainConfig,
) -> Result<StepEval<T>> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, true)?;
    let parts = total_loss(model, &mut tape, &bound, hazy, clean, cfg)?;
    let row = LossRow {
        step: 0,
        data_loss: tape.value(parts.data).data()[0].as_f64(),
        reg_loss: parts.reg.map_or(0.0, |r| tape.value(r).data()[0].as_f64()),
        total: tape.value(parts.total).data()[0].as_f64(),
    };
    let vars: Vec<Var> = bound.all().collect();
    let shapes: Vec<Vec<usize>> = vars.iter().map(|&v| tape.value(v).shape().to_vec()).collect();
    let mut g = tape.backward(parts.total)?;
    let grads = vars
        .iter()
        .zip(shapes)
        .map(|(&v, s)| g.take(v).unwrap_or_else(|| Tensor::zeros(s)))
        .collect();
    Ok(StepEval { grads, row })
}

#[derive(Debug, Clone)]
pub struct TrainReport<T: Element = f32> {
    pub curve: Vec<LossRow>,
    pub optimizer: AdamState<T>,
}

/// Run `cfg.steps` Adam steps, sampling `cfg.batch` pairs per step with a
/// seeded generator. Fully deterministic for a given seed.
pub fn train<T: Element>(model: &mut DehazeModel<T>, dataset: &[Pair<T>], cfg: &TrainConfig) -> Result<TrainReport<T>> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(contract_err!("training needs at least one pair"));
    }
    let names: Vec<String> = model.named_params().into_iter().map(|(n, _)| n).collect();
    let mut state = AdamState::new(model.named_params().into_iter().map(|(_, t)| t.shape().to_vec()));
    let hp = AdamHyper::from(cfg);
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(cfg.seed);
    let mut curve = Vec::with_capacity(cfg.steps);
    let inv_batch = T::of(1.0 / cfg.batch as f64);
    for step in 1..=cfg.steps {
        let mut acc: Option<Vec<Tensor<T>>> = None;
        let mut row = LossRow {
            step,
            data_loss: 0.0,
            reg_loss: 0.0,
            total: 0.0,
        };
        for _ in 0..cfg.batch {
            let pair = &dataset[rng.random_range(0..dataset.len())];
            let eval = evaluate_step(model, &pair.hazy, &pair.clean, cfg)?;
            row.data_loss += eval.row.data_loss / cfg.batch as f64;
            row.reg_loss += eval.row.reg_loss / cfg.batch as f64;
            row.total += eval.row.total / cfg.batch as f64;
            match &mut acc {
                None => acc = Some(eval.grads),
                Some(a) => {
                    for (x, g) in a.iter_mut().zip(&eval.grads) {
                        x.add_assign(g)?;
                    }
                }
            }
        }
        if !row.total.is_finite() {
            return Err(Error::Numeric(format!("loss became non-finite at step {step}")));
        }
        let mut grads = acc.expect("batch >= 1");
        if cfg.batch > 1 {
            grads.iter_mut().for_each(|g| *g = g.scale(inv_batch));
        }
        adam_step(&mut model.params_mut(), &grads, &names, &mut state, hp)?;
        debug!("step {step}: total {:.6}", row.total);
        curve.push(row);
        if cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 {
            if let Some(path) = &cfg.checkpoint_path {
                checkpoint::save(path, model, Some(&state))?;
                info!("checkpoint at step {step} -> {}", path.display());
            }
        }
    }
    Ok(TrainReport {
        curve,
        optimizer: state,
    })
}
