//! The row-attention in-context-learning backbone.
//!
//! Rows are a set: context rows carry features plus an embedded label,
//! query rows carry features only, and there is no positional encoding.
//! Attention is masked so context rows attend to all context rows while
//! each query row attends to the context and to itself, never to other
//! queries. Blocks are pre-layernorm with a GELU feedforward; both output
//! heads (`c_max` class logits and a scalar) are evaluated on every forward
//! pass and the episode's head kind selects which one feeds the loss.

use crate::episode::{
    preprocess_features, standardize_targets, ClassRemap, Episode, EpisodeTargets,
};
use crate::error::CoreError;
use crate::rng;
use crate::table::Table;
use crate::tape::{mask_value, Tape};
use crate::task::HeadKind;
use crate::tensor::{Scalar, Tensor};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Layernorm epsilon.
pub const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub f_max: usize,
    pub c_max: usize,
    /// Kept for completeness; 0 at desk scale (no dropout is applied).
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embed_dim: 128,
            layers: 4,
            heads: 4,
            ff_dim: 256,
            f_max: 32,
            c_max: 10,
            dropout: 0.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), CoreError> {
        if self.embed_dim == 0 || self.embed_dim % self.heads != 0 {
            return Err(CoreError::InvalidInput(format!(
                "embed_dim {} must be a positive multiple of heads {}",
                self.embed_dim, self.heads
            )));
        }
        if self.f_max == 0 || self.c_max == 0 || self.layers == 0 || self.ff_dim == 0 {
            return Err(CoreError::InvalidInput(
                "model dimensions must be >= 1".into(),
            ));
        }
        Ok(())
    }

    /// A small configuration for quick tests.
    pub fn tiny() -> Self {
        ModelConfig {
            embed_dim: 16,
            layers: 1,
            heads: 2,
            ff_dim: 32,
            f_max: 4,
            c_max: 4,
            dropout: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Init {
    Xavier,
    Zero,
    One,
}

/// Name, shape and initializer of every weight array, in canonical order.
/// This single listing drives initialization, flattening and checkpointing.
fn array_specs(cfg: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
    let d = cfg.embed_dim;
    let mut specs = vec![
        ("feature_proj".into(), vec![cfg.f_max, d], Init::Xavier),
        ("feature_bias".into(), vec![d], Init::Zero),
        ("class_embed".into(), vec![cfg.c_max, d], Init::Xavier),
        ("reg_label_proj".into(), vec![1, d], Init::Xavier),
    ];
    for l in 0..cfg.layers {
        let p = |field: &str| format!("layers.{l}.{field}");
        specs.push((p("ln1_gamma"), vec![d], Init::One));
        specs.push((p("ln1_beta"), vec![d], Init::Zero));
        for proj in ["wq", "wk", "wv", "wo"] {
            specs.push((p(proj), vec![d, d], Init::Xavier));
            specs.push((p(&proj.replace('w', "b")), vec![d], Init::Zero));
        }
        specs.push((p("ln2_gamma"), vec![d], Init::One));
        specs.push((p("ln2_beta"), vec![d], Init::Zero));
        specs.push((p("ff_w1"), vec![d, cfg.ff_dim], Init::Xavier));
        specs.push((p("ff_b1"), vec![cfg.ff_dim], Init::Zero));
        specs.push((p("ff_w2"), vec![cfg.ff_dim, d], Init::Xavier));
        specs.push((p("ff_b2"), vec![d], Init::Zero));
    }
    specs.push(("final_ln_gamma".into(), vec![d], Init::One));
    specs.push(("final_ln_beta".into(), vec![d], Init::Zero));
    // output heads start at zero: an untrained head yields uniform logits
    // (chance-level downstream scores) instead of a random readout bias
    specs.push(("cls_head_w".into(), vec![d, cfg.c_max], Init::Zero));
    specs.push(("cls_head_b".into(), vec![cfg.c_max], Init::Zero));
    specs.push(("reg_head_w".into(), vec![d, 1], Init::Zero));
    specs.push(("reg_head_b".into(), vec![1], Init::Zero));
    specs
}

/// All weight arrays of the backbone, in the canonical order of
/// [`array_specs`]. Shapes are determined solely by the [`ModelConfig`].
#[derive(Debug, Clone)]
pub struct Weights<T> {
    arrays: Vec<Tensor<T>>,
    names: Vec<String>,
    cfg: ModelConfig,
}

impl<T: Scalar> Weights<T> {
    /// Seeded initialization: Xavier-uniform matrices, zero biases, unit
    /// layernorm gains. Draws are made in f64 so f32 and f64 models start
    /// from the same values.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self, CoreError> {
        cfg.validate()?;
        let mut stream = rng::stream(seed, &[rng::tag("init")]);
        let specs = array_specs(cfg);
        let mut arrays = Vec::with_capacity(specs.len());
        let mut names = Vec::with_capacity(specs.len());
        for (name, shape, init) in specs {
            let n: usize = shape.iter().product();
            let data: Vec<T> = match init {
                Init::Zero => vec![T::zero(); n],
                Init::One => vec![T::one(); n],
                Init::Xavier => {
                    let (fan_in, fan_out) = (shape[0], shape[1]);
                    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    (0..n)
                        .map(|_| T::from_f64(stream.gen::<f64>() * 2.0 * a - a))
                        .collect()
                }
            };
            arrays.push(Tensor::from_vec(shape, data)?);
            names.push(name);
        }
        Ok(Weights {
            arrays,
            names,
            cfg: *cfg,
        })
    }

    /// Like [`Weights::init`] but with Xavier-initialized output heads
    /// instead of zeros. Invariance and gradient tests use this: with zero
    /// heads the logits are identically zero and such checks turn vacuous.
    pub fn init_with_random_heads(cfg: &ModelConfig, seed: u64) -> Result<Self, CoreError> {
        let base = Self::init(cfg, seed)?;
        let mut stream = rng::stream(seed, &[rng::tag("headinit")]);
        let arrays = base
            .named_arrays()
            .map(|(name, t)| {
                if name == "cls_head_w" || name == "reg_head_w" {
                    let (fan_in, fan_out) = (t.shape()[0], t.shape()[1]);
                    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    let vals: Vec<T> = (0..t.len())
                        .map(|_| T::from_f64(stream.gen::<f64>() * 2.0 * a - a))
                        .collect();
                    Tensor::from_vec(t.shape().to_vec(), vals)
                } else {
                    Ok(t.clone())
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        Weights::from_arrays(cfg, arrays)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn arrays(&self) -> &[Tensor<T>] {
        &self.arrays
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn named_arrays(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names
            .iter()
            .map(|s| s.as_str())
            .zip(self.arrays.iter())
    }

    /// Rebuilds weights from arrays in canonical order, validating shapes
    /// against the configuration.
    pub fn from_arrays(cfg: &ModelConfig, arrays: Vec<Tensor<T>>) -> Result<Self, CoreError> {
        cfg.validate()?;
        let specs = array_specs(cfg);
        if arrays.len() != specs.len() {
            return Err(CoreError::InvalidInput(format!(
                "expected {} weight arrays, got {}",
                specs.len(),
                arrays.len()
            )));
        }
        let mut names = Vec::with_capacity(specs.len());
        for ((name, shape, _), arr) in specs.into_iter().zip(&arrays) {
            if arr.shape() != shape.as_slice() {
                return Err(CoreError::ShapeMismatch {
                    op: "weights",
                    lhs: shape,
                    rhs: arr.shape().to_vec(),
                });
            }
            names.push(name);
        }
        Ok(Weights {
            arrays,
            names,
            cfg: *cfg,
        })
    }

    /// Replaces the arrays with updated ones (after an optimizer step).
    pub fn replace_arrays(&mut self, arrays: Vec<Tensor<T>>) -> Result<(), CoreError> {
        let rebuilt = Weights::from_arrays(&self.cfg, arrays)?;
        self.arrays = rebuilt.arrays;
        Ok(())
    }

    fn get(&self, name: &str) -> &Tensor<T> {
        let idx = self
            .names
            .iter()
            .position(|n| n == name)
            .unwrap_or_else(|| panic!("unknown weight array '{name}'"));
        &self.arrays[idx]
    }

    /// Registers every array as a differentiable leaf on `tape`.
    pub fn bind(&self, tape: &mut Tape<T>) -> Weights<T> {
        Weights {
            arrays: self.arrays.iter().map(|a| tape.leaf(a)).collect(),
            names: self.names.clone(),
            cfg: self.cfg,
        }
    }

    pub fn cast<U: Scalar>(&self) -> Weights<U> {
        Weights {
            arrays: self.arrays.iter().map(|a| a.cast()).collect(),
            names: self.names.clone(),
            cfg: self.cfg,
        }
    }

    pub fn bitwise_eq(&self, other: &Self) -> bool {
        self.arrays.len() == other.arrays.len()
            && self
                .arrays
                .iter()
                .zip(&other.arrays)
                .all(|(a, b)| a.bitwise_eq(b))
    }
}

/// Both heads, evaluated on the query rows.
#[derive(Debug, Clone)]
pub struct Predictions<T> {
    /// `[qry_rows, c_max]`
    pub cls_logits: Tensor<T>,
    /// `[qry_rows]`
    pub reg_out: Tensor<T>,
}

/// Additive attention mask: context rows see all context rows; query rows
/// see the context and themselves only.
pub fn attention_mask<T: Scalar>(ctx_rows: usize, total_rows: usize) -> Tensor<T> {
    let neg = mask_value::<T>();
    let n = total_rows;
    let mut data = vec![T::zero(); n * n];
    for i in 0..n {
        for j in 0..n {
            let allowed = if i < ctx_rows { j < ctx_rows } else { j < ctx_rows || j == i };
            if !allowed {
                data[i * n + j] = neg;
            }
        }
    }
    Tensor::from_vec(vec![n, n], data).expect("mask dims")
}

/// Full forward pass over one episode.
pub fn forward<T: Scalar>(
    tape: &mut Tape<T>,
    w: &Weights<T>,
    cfg: &ModelConfig,
    ep: &Episode<T>,
) -> Result<Predictions<T>, CoreError> {
    cfg.validate()?;
    if ep.ctx_x.shape()[1] != cfg.f_max || ep.qry_x.shape()[1] != cfg.f_max {
        return Err(CoreError::ShapeMismatch {
            op: "forward",
            lhs: ep.ctx_x.shape().to_vec(),
            rhs: vec![cfg.f_max],
        });
    }
    let ctx = ep.ctx_rows();
    let qry = ep.qry_rows();
    let n = ctx + qry;
    let d = cfg.embed_dim;

    let x_all = tape.concat_rows(&[&ep.ctx_x, &ep.qry_x])?;
    let projected = tape.matmul(&x_all, w.get("feature_proj"))?;
    let mut x = tape.add_bias(&projected, w.get("feature_bias"))?;

    // context rows additionally carry their label embedding
    let label_ctx = match &ep.ctx_y {
        EpisodeTargets::Classes(codes) => {
            if let Some(&bad) = codes.iter().find(|&&c| c >= cfg.c_max) {
                return Err(CoreError::InvalidInput(format!(
                    "class code {bad} exceeds c_max {}",
                    cfg.c_max
                )));
            }
            tape.embed_lookup(w.get("class_embed"), codes)?
        }
        EpisodeTargets::Reals(vals) => {
            let y = Tensor::from_vec(vec![ctx, 1], vals.clone())?;
            tape.matmul(&y, w.get("reg_label_proj"))?
        }
    };
    let zeros_qry = Tensor::zeros(vec![qry, d]);
    let label_all = tape.concat_rows(&[&label_ctx, &zeros_qry])?;
    x = tape.add(&x, &label_all)?;

    let mask = attention_mask::<T>(ctx, n);
    let head_dim = d / cfg.heads;
    let scale = T::from_f64(1.0 / (head_dim as f64).sqrt());

    for l in 0..cfg.layers {
        let p = |field: &str| format!("layers.{l}.{field}");
        let h = tape.layernorm_lastdim(
            &x,
            w.get(&p("ln1_gamma")),
            w.get(&p("ln1_beta")),
            T::from_f64(LN_EPS),
        )?;
        let q_all = {
            let m = tape.matmul(&h, w.get(&p("wq")))?;
            tape.add_bias(&m, w.get(&p("bq")))?
        };
        let k_all = {
            let m = tape.matmul(&h, w.get(&p("wk")))?;
            tape.add_bias(&m, w.get(&p("bk")))?
        };
        let v_all = {
            let m = tape.matmul(&h, w.get(&p("wv")))?;
            tape.add_bias(&m, w.get(&p("bv")))?
        };

        let mut head_outputs = Vec::with_capacity(cfg.heads);
        for hd in 0..cfg.heads {
            let (lo, hi) = (hd * head_dim, (hd + 1) * head_dim);
            let qh = tape.slice_cols(&q_all, lo, hi)?;
            let kh = tape.slice_cols(&k_all, lo, hi)?;
            let vh = tape.slice_cols(&v_all, lo, hi)?;
            let scores = tape.matmul_nt(&qh, &kh)?;
            let scaled = tape.scale(&scores, scale)?;
            let masked = tape.add(&scaled, &mask)?;
            let probs = tape.softmax_lastdim(&masked)?;
            head_outputs.push(tape.matmul(&probs, &vh)?);
        }
        let refs: Vec<&Tensor<T>> = head_outputs.iter().collect();
        let attn = tape.concat_cols(&refs)?;
        let proj = {
            let m = tape.matmul(&attn, w.get(&p("wo")))?;
            tape.add_bias(&m, w.get(&p("bo")))?
        };
        x = tape.add(&x, &proj)?;

        let h2 = tape.layernorm_lastdim(
            &x,
            w.get(&p("ln2_gamma")),
            w.get(&p("ln2_beta")),
            T::from_f64(LN_EPS),
        )?;
        let f1 = {
            let m = tape.matmul(&h2, w.get(&p("ff_w1")))?;
            tape.add_bias(&m, w.get(&p("ff_b1")))?
        };
        let act = tape.gelu(&f1)?;
        let f2 = {
            let m = tape.matmul(&act, w.get(&p("ff_w2")))?;
            tape.add_bias(&m, w.get(&p("ff_b2")))?
        };
        x = tape.add(&x, &f2)?;
    }

    let final_h = tape.layernorm_lastdim(
        &x,
        w.get("final_ln_gamma"),
        w.get("final_ln_beta"),
        T::from_f64(LN_EPS),
    )?;
    let qry_h = tape.slice_rows(&final_h, ctx, n)?;

    let cls_logits = {
        let m = tape.matmul(&qry_h, w.get("cls_head_w"))?;
        tape.add_bias(&m, w.get("cls_head_b"))?
    };
    let reg_mat = {
        let m = tape.matmul(&qry_h, w.get("reg_head_w"))?;
        tape.add_bias(&m, w.get("reg_head_b"))?
    };
    let reg_out = tape.reshape(&reg_mat, vec![qry])?;

    Ok(Predictions { cls_logits, reg_out })
}

/// Episode loss: mean cross-entropy over query rows (classification, over
/// the episode's observed classes) or mean squared error on standardized
/// targets (regression).
pub fn loss<T: Scalar>(
    tape: &mut Tape<T>,
    preds: &Predictions<T>,
    ep: &Episode<T>,
) -> Result<Tensor<T>, CoreError> {
    match (&ep.qry_y, ep.head) {
        (EpisodeTargets::Classes(codes), HeadKind::Classification) => {
            let live = tape.slice_cols(&preds.cls_logits, 0, ep.n_classes)?;
            let ce = tape.cross_entropy(&live, codes)?;
            tape.mean(&ce)
        }
        (EpisodeTargets::Reals(vals), HeadKind::Regression) => {
            let target = Tensor::from_vec(vec![vals.len()], vals.clone())?;
            let se = tape.squared_error(&preds.reg_out, &target)?;
            tape.mean(&se)
        }
        _ => Err(CoreError::InvalidInput(
            "episode head kind does not match its targets".into(),
        )),
    }
}

/// Labeled context for frozen-weight inference.
#[derive(Debug, Clone)]
pub enum DownstreamTargets {
    /// Original class codes plus the table's full cardinality.
    Classes { codes: Vec<usize>, cardinality: usize },
    Reals(Vec<f64>),
}

#[derive(Debug, Clone)]
pub enum DownstreamOutput {
    /// Per query: probabilities over the original class codes; classes
    /// absent from the context get exactly zero mass.
    ClassProbs(Vec<Vec<f64>>),
    /// Per query: de-standardized real predictions.
    Reals(Vec<f64>),
}

/// Frozen-weight prediction on raw (unpreprocessed) rows. Preprocessing is
/// identical to episode construction and uses context statistics only.
pub fn predict_downstream<T: Scalar>(
    w: &Weights<T>,
    cfg: &ModelConfig,
    ctx_x: &[Vec<f64>],
    ctx_y: &DownstreamTargets,
    qry_x: &[Vec<f64>],
) -> Result<DownstreamOutput, CoreError> {
    if ctx_x.is_empty() {
        return Err(CoreError::InvalidInput("empty context".into()));
    }
    let (ctx_buf, qry_buf, active) = preprocess_features(ctx_x, qry_x, cfg.f_max)?;
    let to_tensor = |buf: Vec<f64>, rows: usize| -> Tensor<T> {
        Tensor::from_vec(
            vec![rows, cfg.f_max],
            buf.into_iter().map(T::from_f64).collect(),
        )
        .expect("matrix dims")
    };
    let ctx_t = to_tensor(ctx_buf, ctx_x.len());
    let qry_t = to_tensor(qry_buf, qry_x.len());

    match ctx_y {
        DownstreamTargets::Classes { codes, cardinality } => {
            if codes.len() != ctx_x.len() {
                return Err(CoreError::InvalidInput(
                    "context labels misaligned with context rows".into(),
                ));
            }
            let remap = ClassRemap::from_context(codes, cfg.c_max);
            let dense: Vec<usize> = codes
                .iter()
                .map(|c| remap.dense(*c).expect("context code was just ranked"))
                .collect();
            let ep = Episode {
                head: HeadKind::Classification,
                ctx_x: ctx_t,
                qry_x: qry_t,
                ctx_y: EpisodeTargets::Classes(dense),
                qry_y: EpisodeTargets::Classes(vec![0; qry_x.len()]),
                active_features: active,
                n_classes: remap.n_classes(),
                target_mean: 0.0,
                target_std: 1.0,
            };
            let mut tape = Tape::inference();
            let preds = forward(&mut tape, w, cfg, &ep)?;
            // softmax over observed classes only; unobserved classes keep
            // exactly zero probability
            let mut out = Vec::with_capacity(qry_x.len());
            let kept = remap.n_classes();
            for row in preds.cls_logits.values().chunks(cfg.c_max) {
                let live = &row[..kept];
                let max = live
                    .iter()
                    .map(|v| v.as_f64())
                    .fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = live.iter().map(|v| (v.as_f64() - max).exp()).collect();
                let denom: f64 = exps.iter().sum();
                let mut probs = vec![0.0; *cardinality];
                for (dense_idx, e) in exps.iter().enumerate() {
                    probs[remap.kept[dense_idx]] = e / denom;
                }
                out.push(probs);
            }
            Ok(DownstreamOutput::ClassProbs(out))
        }
        DownstreamTargets::Reals(vals) => {
            if vals.len() != ctx_x.len() {
                return Err(CoreError::InvalidInput(
                    "context targets misaligned with context rows".into(),
                ));
            }
            let (mean, std) = standardize_targets(vals).map_err(CoreError::EpisodeRejected)?;
            let std_y: Vec<T> = vals.iter().map(|&v| T::from_f64((v - mean) / std)).collect();
            let ep = Episode {
                head: HeadKind::Regression,
                ctx_x: ctx_t,
                qry_x: qry_t,
                ctx_y: EpisodeTargets::Reals(std_y),
                qry_y: EpisodeTargets::Reals(vec![T::zero(); qry_x.len()]),
                active_features: active,
                n_classes: 0,
                target_mean: mean,
                target_std: std,
            };
            let mut tape = Tape::inference();
            let preds = forward(&mut tape, w, cfg, &ep)?;
            Ok(DownstreamOutput::Reals(
                preds
                    .reg_out
                    .values()
                    .iter()
                    .map(|v| v.as_f64() * std + mean)
                    .collect(),
            ))
        }
    }
}

/// Convenience: pulls raw feature rows and target labels for the given rows
/// and columns out of a table, for downstream evaluation.
pub fn gather_raw_rows(table: &Table, rows: &[usize], feature_cols: &[usize]) -> Vec<Vec<f64>> {
    rows.iter()
        .map(|&r| {
            feature_cols
                .iter()
                .map(|&c| table.column(c).feature_value(r))
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::episode::EpisodeTargets;

    fn manual_episode(
        ctx_x: Vec<Vec<f64>>,
        qry_x: Vec<Vec<f64>>,
        ctx_y: EpisodeTargets<f64>,
        qry_y: EpisodeTargets<f64>,
        head: HeadKind,
        f_max: usize,
        n_classes: usize,
    ) -> Episode<f64> {
        let ctx_rows = ctx_x.len();
        let qry_rows = qry_x.len();
        Episode {
            head,
            ctx_x: Tensor::from_rows(
                &ctx_x
                    .into_iter()
                    .map(|mut r| {
                        r.resize(f_max, 0.0);
                        r
                    })
                    .collect::<Vec<_>>(),
            )
            .unwrap(),
            qry_x: Tensor::from_rows(
                &qry_x
                    .into_iter()
                    .map(|mut r| {
                        r.resize(f_max, 0.0);
                        r
                    })
                    .collect::<Vec<_>>(),
            )
            .unwrap(),
            ctx_y,
            qry_y,
            active_features: f_max,
            n_classes,
            target_mean: 0.0,
            target_std: 1.0,
        }
        .tap(|e| {
            debug_assert_eq!(e.ctx_rows(), ctx_rows);
            debug_assert_eq!(e.qry_rows(), qry_rows);
        })
    }

    trait Tap: Sized {
        fn tap(self, f: impl FnOnce(&Self)) -> Self {
            f(&self);
            self
        }
    }
    impl<T> Tap for T {}

    fn tiny_cfg() -> ModelConfig {
        ModelConfig {
            embed_dim: 8,
            layers: 2,
            heads: 2,
            ff_dim: 16,
            f_max: 3,
            c_max: 4,
            dropout: 0.0,
        }
    }

    fn random_episode(seed: u64, cfg: &ModelConfig, ctx: usize, qry: usize) -> Episode<f64> {
        let mut stream = crate::rng::stream(seed, &[crate::rng::tag("mepisod")]);
        let row = |s: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
            (0..cfg.f_max).map(|_| s.gen::<f64>() * 2.0 - 1.0).collect()
        };
        let ctx_x: Vec<Vec<f64>> = (0..ctx).map(|_| row(&mut stream)).collect();
        let qry_x: Vec<Vec<f64>> = (0..qry).map(|_| row(&mut stream)).collect();
        let ctx_y: Vec<usize> = (0..ctx).map(|i| i % 2).collect();
        let qry_y: Vec<usize> = (0..qry).map(|i| i % 2).collect();
        manual_episode(
            ctx_x,
            qry_x,
            EpisodeTargets::Classes(ctx_y),
            EpisodeTargets::Classes(qry_y),
            HeadKind::Classification,
            cfg.f_max,
            2,
        )
    }

    #[test]
    fn duplicate_query_rows_get_identical_predictions() {
        let cfg = tiny_cfg();
        let w = Weights::<f64>::init_with_random_heads(&cfg, 3).unwrap();
        let mut ep = random_episode(1, &cfg, 6, 2);
        // make both query rows identical
        let first_row: Vec<f64> = ep.qry_x.values()[..cfg.f_max].to_vec();
        let doubled = [first_row.clone(), first_row].concat();
        ep.qry_x = Tensor::from_vec(vec![2, cfg.f_max], doubled).unwrap();

        let mut tape = Tape::inference();
        let preds = forward(&mut tape, &w, &cfg, &ep).unwrap();
        let logits = preds.cls_logits.values();
        for c in 0..cfg.c_max {
            assert_eq!(logits[c], logits[cfg.c_max + c]);
        }
        assert_eq!(preds.reg_out.values()[0], preds.reg_out.values()[1]);
    }

    #[test]
    fn context_permutation_leaves_query_predictions_unchanged() {
        let cfg = tiny_cfg();
        let w = Weights::<f64>::init_with_random_heads(&cfg, 7).unwrap();
        let ep = random_episode(2, &cfg, 8, 3);

        let mut tape = Tape::inference();
        let base = forward(&mut tape, &w, &cfg, &ep).unwrap();

        // reverse the context rows (and labels accordingly)
        let f = cfg.f_max;
        let mut rows: Vec<Vec<f64>> = ep.ctx_x.values().chunks(f).map(|c| c.to_vec()).collect();
        rows.reverse();
        let mut permuted = ep.clone();
        permuted.ctx_x = Tensor::from_rows(&rows).unwrap();
        permuted.ctx_y = match &ep.ctx_y {
            EpisodeTargets::Classes(c) => {
                let mut c = c.clone();
                c.reverse();
                EpisodeTargets::Classes(c)
            }
            EpisodeTargets::Reals(r) => {
                let mut r = r.clone();
                r.reverse();
                EpisodeTargets::Reals(r)
            }
        };
        let mut tape2 = Tape::inference();
        let shuffled = forward(&mut tape2, &w, &cfg, &permuted).unwrap();

        for (a, b) in base
            .cls_logits
            .values()
            .iter()
            .zip(shuffled.cls_logits.values())
        {
            assert!((a - b).abs() <= 1e-10, "|{a} - {b}|");
        }
        for (a, b) in base.reg_out.values().iter().zip(shuffled.reg_out.values()) {
            assert!((a - b).abs() <= 1e-10);
        }
    }

    #[test]
    fn removing_query_rows_leaves_others_unchanged() {
        let cfg = tiny_cfg();
        let w = Weights::<f64>::init_with_random_heads(&cfg, 11).unwrap();
        let ep = random_episode(3, &cfg, 8, 4);
        let mut tape = Tape::inference();
        let full = forward(&mut tape, &w, &cfg, &ep).unwrap();

        // drop query rows 1 and 3, keep 0 and 2
        let f = cfg.f_max;
        let rows: Vec<Vec<f64>> = ep.qry_x.values().chunks(f).map(|c| c.to_vec()).collect();
        let mut reduced = ep.clone();
        reduced.qry_x = Tensor::from_rows(&[rows[0].clone(), rows[2].clone()]).unwrap();
        reduced.qry_y = EpisodeTargets::Classes(vec![0, 0]);
        let mut tape2 = Tape::inference();
        let part = forward(&mut tape2, &w, &cfg, &reduced).unwrap();

        for (kept, orig) in [(0usize, 0usize), (1, 2)] {
            for c in 0..cfg.c_max {
                let a = part.cls_logits.values()[kept * cfg.c_max + c];
                let b = full.cls_logits.values()[orig * cfg.c_max + c];
                assert!((a - b).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn single_class_context_forces_probability_one() {
        let cfg = tiny_cfg();
        let w = Weights::<f64>::init_with_random_heads(&cfg, 5).unwrap();
        let ctx_x = vec![vec![0.5, -0.2, 0.1], vec![0.1, 0.3, -0.4]];
        let qry_x = vec![vec![0.0, 0.0, 0.2]];
        let out = predict_downstream(
            &w,
            &cfg,
            &ctx_x,
            &DownstreamTargets::Classes {
                codes: vec![2, 2],
                cardinality: 3,
            },
            &qry_x,
        )
        .unwrap();
        match out {
            DownstreamOutput::ClassProbs(p) => {
                assert_eq!(p.len(), 1);
                assert_eq!(p[0][2], 1.0);
                assert_eq!(p[0][0], 0.0);
                assert_eq!(p[0][1], 0.0);
            }
            _ => panic!("expected class probabilities"),
        }
    }

    #[test]
    fn constant_regression_context_is_rejected() {
        let cfg = tiny_cfg();
        let w = Weights::<f64>::init_with_random_heads(&cfg, 5).unwrap();
        let ctx_x = vec![vec![0.5, -0.2, 0.1], vec![0.1, 0.3, -0.4]];
        let qry_x = vec![vec![0.0, 0.0, 0.2]];
        let res = predict_downstream(
            &w,
            &cfg,
            &ctx_x,
            &DownstreamTargets::Reals(vec![4.0, 4.0]),
            &qry_x,
        );
        assert!(matches!(res, Err(CoreError::EpisodeRejected(_))));
    }

    #[test]
    fn mismatched_query_width_is_an_error() {
        let cfg = tiny_cfg();
        let w = Weights::<f64>::init_with_random_heads(&cfg, 5).unwrap();
        let ctx_x = vec![vec![0.5, -0.2, 0.1]; 3];
        let qry_x = vec![vec![0.0, 0.0]];
        let res = predict_downstream(
            &w,
            &cfg,
            &ctx_x,
            &DownstreamTargets::Reals(vec![1.0, 2.0, 3.0]),
            &qry_x,
        );
        assert!(res.is_err());
    }

    #[test]
    fn loss_oracle_values() {
        let cfg = tiny_cfg();
        // uniform logits over 4 classes -> CE = ln 4
        let ep = manual_episode(
            vec![vec![0.0; 3]; 4],
            vec![vec![0.0; 3]; 2],
            EpisodeTargets::Classes(vec![0, 1, 2, 3]),
            EpisodeTargets::Classes(vec![1, 3]),
            HeadKind::Classification,
            cfg.f_max,
            4,
        );
        let preds = Predictions {
            cls_logits: Tensor::from_vec(vec![2, 4], vec![0.25; 8]).unwrap(),
            reg_out: Tensor::from_vec(vec![2], vec![0.0, 0.0]).unwrap(),
        };
        let mut tape = Tape::inference();
        let l = loss(&mut tape, &preds, &ep).unwrap();
        assert!((l.item() - 4.0f64.ln()).abs() < 1e-12);

        // regression predictions equal to targets -> loss 0
        let ep2 = manual_episode(
            vec![vec![0.0; 3]; 4],
            vec![vec![0.0; 3]; 2],
            EpisodeTargets::Reals(vec![0.0; 4]),
            EpisodeTargets::Reals(vec![0.7, -0.7]),
            HeadKind::Regression,
            cfg.f_max,
            0,
        );
        let preds2 = Predictions {
            cls_logits: Tensor::from_vec(vec![2, 4], vec![0.0; 8]).unwrap(),
            reg_out: Tensor::from_vec(vec![2], vec![0.7, -0.7]).unwrap(),
        };
        let mut tape2 = Tape::inference();
        let l2 = loss(&mut tape2, &preds2, &ep2).unwrap();
        assert_eq!(l2.item(), 0.0);
    }
}
