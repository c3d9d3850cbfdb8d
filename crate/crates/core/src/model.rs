//! Per-view autoencoders, cross-view predictors and the training losses.
//!
//! Three terms make up the objective:
//! - reconstruction `L_Z`: squared error of each view's autoencoder;
//! - contrast `L_C`: a spectral contrastive loss on the leading `d0`
//!   latent coordinates (the sub-vectors) of aligned complete samples;
//! - prediction `L_R`: squared error of predictor `G(q->p)` mapping view
//!   `q`'s latent onto view `p`'s.
//!
//! The total is `w_z L_Z + lambda1 L_C + lambda2 L_R`, where `w_z` is 1
//! unless the reconstruction term is switched off for an ablation.

use std::fmt;

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{AdamConfig, Mlp, MlpGrads, ParamMut};
use crate::{Error, Result};

/// Which latent coordinates the contrastive loss sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContrastTarget {
    /// The sub-vectors `Z*` (columns `0..d0`).
    Sub,
    /// The full latent `Z`.
    Full,
    /// Both, summed.
    Both,
}

impl fmt::Display for ContrastTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ContrastTarget::Sub => "X-Z*",
            ContrastTarget::Full => "X-Z",
            ContrastTarget::Both => "X-Z,X-Z*",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Latent width `D` shared by all views.
    pub latent_dim: usize,
    /// Sub-vector width `d0`.
    pub sub_dim: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    /// Reconstruction switch; off only in ablations.
    pub use_recon: bool,
    pub contrast_target: ContrastTarget,
    /// Add cross-view negatives `(z_i^v . z_j^n)^2` to the uniformity term.
    pub cross_view_negatives: bool,
    /// Let the prediction loss update encoders, not just predictors.
    pub predictor_grad_to_encoders: bool,
    pub encoder_hidden: Vec<usize>,
    pub lr: f64,
    pub epochs_pretrain: usize,
    pub epochs_joint: usize,
    /// Samples per step; `None` means full batch up to 5000 samples, else 256.
    pub batch: Option<usize>,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            latent_dim: 64,
            sub_dim: 32,
            lambda1: 1.0,
            lambda2: 1.0,
            use_recon: true,
            contrast_target: ContrastTarget::Sub,
            cross_view_negatives: false,
            predictor_grad_to_encoders: true,
            encoder_hidden: vec![512, 256],
            lr: 1e-3,
            epochs_pretrain: 100,
            epochs_joint: 100,
            batch: None,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Smaller networks and a longer minibatch schedule for the desk-scale
    /// synthetic data (a few hundred samples, tens of features per view).
    /// The loss weights stay at their defaults. Also shipped as
    /// `configs/synthetic.json`.
    pub fn synthetic() -> Self {
        Self {
            latent_dim: 16,
            sub_dim: 8,
            encoder_hidden: vec![64, 32],
            epochs_pretrain: 300,
            epochs_joint: 300,
            batch: Some(32),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.latent_dim == 0 {
            return bad("latent_dim must be positive".into());
        }
        if self.sub_dim == 0 || self.sub_dim > self.latent_dim {
            return bad(format!(
                "sub_dim must be in [1, {}], got {}",
                self.latent_dim, self.sub_dim
            ));
        }
        for (name, l) in [("lambda1", self.lambda1), ("lambda2", self.lambda2)] {
            if !(l.is_finite() && l >= 0.0) {
                return bad(format!("{name} must be finite and nonnegative, got {l}"));
            }
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if self.encoder_hidden.contains(&0) {
            return bad("hidden widths must be positive".into());
        }
        if matches!(self.batch, Some(b) if b < 2) {
            return bad("batch must be at least 2".into());
        }
        if !self.use_recon && self.lambda1 == 0.0 && self.lambda2 == 0.0 {
            return bad("every loss term is disabled".into());
        }
        Ok(())
    }

    pub fn batch_size(&self, n: usize) -> usize {
        match self.batch {
            Some(b) => b.min(n),
            None if n <= 5000 => n,
            None => 256,
        }
    }

    pub fn recon_weight(&self) -> f64 {
        if self.use_recon {
            1.0
        } else {
            0.0
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            ..AdamConfig::default()
        }
    }
}

/// Loss-term switches for the ablation studies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablation {
    pub recon: bool,
    pub contrast: bool,
    pub predict: bool,
    pub target: ContrastTarget,
}

impl Ablation {
    pub const FULL: Ablation = Ablation {
        recon: true,
        contrast: true,
        predict: true,
        target: ContrastTarget::Sub,
    };

    /// The seven loss-term combinations, single terms first, full last.
    pub fn loss_study() -> Vec<Ablation> {
        let mk = |predict, contrast, recon| Ablation {
            recon,
            contrast,
            predict,
            target: ContrastTarget::Sub,
        };
        vec![
            mk(false, false, true),
            mk(true, false, false),
            mk(false, true, false),
            mk(true, false, true),
            mk(false, true, true),
            mk(true, true, false),
            mk(true, true, true),
        ]
    }

    /// Contrast on `Z`, on both `Z` and `Z*`, and on `Z*` alone.
    pub fn representation_study() -> Vec<Ablation> {
        [
            ContrastTarget::Full,
            ContrastTarget::Both,
            ContrastTarget::Sub,
        ]
        .into_iter()
        .map(|target| Ablation {
            target,
            ..Ablation::FULL
        })
        .collect()
    }

    pub fn is_single_term(&self) -> bool {
        [self.recon, self.contrast, self.predict]
            .iter()
            .filter(|&&b| b)
            .count()
            == 1
    }

    /// Label such as `Lz+Lc+Lr` or `Lz+Lc+Lr[X-Z]`.
    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if self.recon {
            parts.push("Lz");
        }
        if self.contrast {
            parts.push("Lc");
        }
        if self.predict {
            parts.push("Lr");
        }
        let mut s = parts.join("+");
        if self.target != ContrastTarget::Sub {
            s.push_str(&format!("[{}]", self.target));
        }
        s
    }

    /// Applies the switches to `base`: a disabled contrast or prediction
    /// term gets weight 0, a disabled reconstruction term is dropped.
    pub fn apply(&self, base: &ModelConfig) -> Result<ModelConfig> {
        if !(self.recon || self.contrast || self.predict) {
            return Err(Error::Param("ablation disables every loss term".into()));
        }
        let mut cfg = base.clone();
        cfg.use_recon = self.recon;
        if !self.contrast {
            cfg.lambda1 = 0.0;
        }
        if !self.predict {
            cfg.lambda2 = 0.0;
        }
        cfg.contrast_target = self.target;
        Ok(cfg)
    }
}

/// One view's encoder, decoder and outgoing predictors.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewModel {
    pub encoder: Mlp,
    pub decoder: Mlp,
    /// `predictors[p]` maps this view's latent to view `p`'s; `None` at the
    /// view's own index.
    pub predictors: Vec<Option<Mlp>>,
}

impl ViewModel {
    pub fn predictor(&self, target: usize) -> Option<&Mlp> {
        self.predictors.get(target).and_then(Option::as_ref)
    }
}

/// All views' networks.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiViewModel {
    pub views: Vec<ViewModel>,
    latent_dim: usize,
    sub_dim: usize,
}

/// Gradients mirroring [`ViewModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct ViewGrads {
    pub encoder: MlpGrads,
    pub decoder: MlpGrads,
    pub predictors: Vec<Option<MlpGrads>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads {
    pub views: Vec<ViewGrads>,
}

impl ModelGrads {
    pub fn zeros_like(model: &MultiViewModel) -> Self {
        Self {
            views: model
                .views
                .iter()
                .map(|vm| ViewGrads {
                    encoder: MlpGrads::zeros_like(&vm.encoder),
                    decoder: MlpGrads::zeros_like(&vm.decoder),
                    predictors: vm
                        .predictors
                        .iter()
                        .map(|p| p.as_ref().map(MlpGrads::zeros_like))
                        .collect(),
                })
                .collect(),
        }
    }

    /// Same tensor order as [`MultiViewModel::params_mut`].
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for vg in &self.views {
            out.extend(vg.encoder.slices());
            out.extend(vg.decoder.slices());
            for g in vg.predictors.iter().flatten() {
                out.extend(g.slices());
            }
        }
        out
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.slices().concat()
    }

    pub fn add_assign(&mut self, other: &ModelGrads) {
        for (a, b) in self.views.iter_mut().zip(&other.views) {
            a.encoder.add_assign(&b.encoder);
            a.decoder.add_assign(&b.decoder);
            for (pa, pb) in a.predictors.iter_mut().zip(&b.predictors) {
                if let (Some(pa), Some(pb)) = (pa, pb) {
                    pa.add_assign(pb);
                }
            }
        }
    }
}

impl MultiViewModel {
    /// Encoders `M_v -> hidden -> D`, mirrored decoders and `D -> D -> D`
    /// predictors for every ordered view pair, seeded from `cfg.seed`.
    pub fn new(view_dims: &[usize], cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        if view_dims.len() < 2 {
            return Err(Error::Config("need at least two views".into()));
        }
        let d = cfg.latent_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut decoder_hidden = cfg.encoder_hidden.clone();
        decoder_hidden.reverse();
        let n_views = view_dims.len();
        let views = view_dims
            .iter()
            .enumerate()
            .map(|(v, &m)| {
                let encoder = Mlp::build(m, &cfg.encoder_hidden, d, &mut rng);
                let decoder = Mlp::build(d, &decoder_hidden, m, &mut rng);
                let predictors = (0..n_views)
                    .map(|p| (p != v).then(|| Mlp::build(d, &[d], d, &mut rng)))
                    .collect();
                ViewModel {
                    encoder,
                    decoder,
                    predictors,
                }
            })
            .collect();
        Ok(Self {
            views,
            latent_dim: d,
            sub_dim: cfg.sub_dim,
        })
    }

    /// Assembles a model from existing networks, checking that every encoder
    /// emits `latent_dim` values and every predictor maps `D -> D`.
    pub fn from_parts(views: Vec<ViewModel>, latent_dim: usize, sub_dim: usize) -> Result<Self> {
        if sub_dim == 0 || sub_dim > latent_dim {
            return Err(Error::Contract(format!(
                "sub_dim {sub_dim} outside [1, {latent_dim}]"
            )));
        }
        let n_views = views.len();
        for (v, vm) in views.iter().enumerate() {
            if vm.encoder.out_dim() != latent_dim || vm.decoder.in_dim() != latent_dim {
                return Err(Error::Contract(format!("view {v}: latent width mismatch")));
            }
            if vm.decoder.out_dim() != vm.encoder.in_dim() {
                return Err(Error::Contract(format!(
                    "view {v}: decoder emits {} features, encoder takes {}",
                    vm.decoder.out_dim(),
                    vm.encoder.in_dim()
                )));
            }
            if vm.predictors.len() != n_views {
                return Err(Error::Contract(format!("view {v}: predictor table size")));
            }
            for (p, g) in vm.predictors.iter().enumerate() {
                match g {
                    Some(_) if p == v => {
                        return Err(Error::Contract(format!("view {v} predicts itself")))
                    }
                    None if p != v => {
                        return Err(Error::Contract(format!(
                            "view {v}: missing predictor to {p}"
                        )))
                    }
                    Some(g) if g.in_dim() != latent_dim || g.out_dim() != latent_dim => {
                        return Err(Error::Contract(format!(
                            "predictor {v}->{p} must map {latent_dim} -> {latent_dim}"
                        )))
                    }
                    _ => {}
                }
            }
        }
        Ok(Self {
            views,
            latent_dim,
            sub_dim,
        })
    }

    pub fn n_views(&self) -> usize {
        self.views.len()
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn sub_dim(&self) -> usize {
        self.sub_dim
    }

    /// Named networks in a fixed order: per view the encoder, decoder and
    /// predictors by target index.
    pub fn named_networks(&self) -> Vec<(String, &Mlp)> {
        let mut out = Vec::new();
        for (v, vm) in self.views.iter().enumerate() {
            out.push((format!("view{v}.encoder"), &vm.encoder));
            out.push((format!("view{v}.decoder"), &vm.decoder));
            for (p, g) in vm.predictors.iter().enumerate() {
                if let Some(g) = g {
                    out.push((format!("view{v}.predictor{p}"), g));
                }
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<ParamMut<'_>> {
        let mut out = Vec::new();
        for (v, vm) in self.views.iter_mut().enumerate() {
            out.extend(vm.encoder.params_mut(&format!("view{v}.encoder")));
            out.extend(vm.decoder.params_mut(&format!("view{v}.decoder")));
            for (p, g) in vm.predictors.iter_mut().enumerate() {
                if let Some(g) = g {
                    out.extend(g.params_mut(&format!("view{v}.predictor{p}")));
                }
            }
        }
        out
    }

    pub fn param_sizes(&self) -> Vec<usize> {
        self.named_networks()
            .iter()
            .flat_map(|(_, n)| n.param_sizes())
            .collect()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.named_networks()
            .iter()
            .flat_map(|(_, n)| n.flat_params())
            .collect()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        let total: usize = self.param_sizes().iter().sum();
        if flat.len() != total {
            return Err(Error::Contract(format!(
                "expected {total} parameters, got {}",
                flat.len()
            )));
        }
        let mut off = 0;
        for vm in &mut self.views {
            let nets = std::iter::once(&mut vm.encoder)
                .chain(std::iter::once(&mut vm.decoder))
                .chain(vm.predictors.iter_mut().flatten());
            for net in nets {
                let n = net.n_params();
                net.set_flat_params(&flat[off..off + n])?;
                off += n;
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.named_networks().iter().all(|(_, n)| n.is_finite())
    }

    /// Latents for the given rows of one view.
    pub fn encode(&self, v: usize, x: &Array2<f64>, rows: &[usize]) -> Result<Array2<f64>> {
        self.views[v]
            .encoder
            .predict(x.select(Axis(0), rows).view())
    }
}

/// Result of [`loss_recon`].
#[derive(Debug, Clone)]
pub struct ReconLoss {
    pub value: f64,
    pub encoder: MlpGrads,
    pub decoder: MlpGrads,
}

/// `sum_i ||x_i - dec(enc(x_i))||^2` over `rows`, with parameter gradients.
pub fn loss_recon(vm: &ViewModel, x: &Array2<f64>, rows: &[usize]) -> Result<ReconLoss> {
    if rows.is_empty() {
        return Ok(ReconLoss {
            value: 0.0,
            encoder: MlpGrads::zeros_like(&vm.encoder),
            decoder: MlpGrads::zeros_like(&vm.decoder),
        });
    }
    let xb = x.select(Axis(0), rows);
    let (z, enc_cache) = vm.encoder.forward(xb.view())?;
    let (xhat, dec_cache) = vm.decoder.forward(z.view())?;
    let diff = xhat - &xb;
    let value = diff.iter().map(|d| d * d).sum();
    let (decoder, gz) = vm.decoder.backward(&dec_cache, (diff * 2.0).view())?;
    let (encoder, _) = vm.encoder.backward(&enc_cache, gz.view())?;
    Ok(ReconLoss {
        value,
        encoder,
        decoder,
    })
}

/// Result of [`loss_contrastive`]; `grads[v]` matches `subs[v]` in shape.
#[derive(Debug, Clone)]
pub struct ContrastLoss {
    pub value: f64,
    pub grads: Vec<Array2<f64>>,
}

/// Spectral contrastive loss over aligned `B x d` matrices, one per view.
///
/// For every unordered view pair `(v, n)`:
///
/// ```text
/// -(2/B) sum_i <z_i^v, z_i^n>
///   + 1/2 [U(v) + U(n)],   U(v) = 1/(2 C(B,2)) sum_i sum_{j != i} <z_i^v, z_j^v>^2
/// ```
///
/// and with `cross_view_negatives` additionally
/// `1/(2 C(B,2)) sum_i sum_{j != i} <z_i^v, z_j^n>^2`.
pub fn loss_contrastive(
    subs: &[ArrayView2<'_, f64>],
    cross_view_negatives: bool,
) -> Result<ContrastLoss> {
    let v_count = subs.len();
    if v_count < 2 {
        return Err(Error::Param(format!(
            "need at least 2 views, got {v_count}"
        )));
    }
    let (b, d) = subs[0].dim();
    if let Some(v) = subs.iter().position(|m| m.dim() != (b, d)) {
        return Err(Error::Param(format!(
            "view {v} sub-vectors are {:?}, expected {:?}",
            subs[v].dim(),
            (b, d)
        )));
    }
    if b < 2 {
        return Err(Error::Param(format!(
            "contrastive loss needs at least 2 aligned samples, got {b}"
        )));
    }
    let bf = b as f64;
    // 1 / (2 C(B,2)) = 1 / (B (B - 1))
    let neg_scale = 1.0 / (bf * (bf - 1.0));
    let mut grads: Vec<Array2<f64>> = (0..v_count).map(|_| Array2::zeros((b, d))).collect();

    // same-view uniformity, computed once per view; each pair contributes half
    let mut uniform = Vec::with_capacity(v_count);
    for (v, z) in subs.iter().enumerate() {
        let mut gram = z.dot(&z.t());
        gram.diag_mut().fill(0.0);
        uniform.push(neg_scale * gram.iter().map(|s| s * s).sum::<f64>());
        let weight = 0.5 * (v_count - 1) as f64;
        grads[v].scaled_add(weight * 4.0 * neg_scale, &gram.dot(z));
    }

    let mut value = 0.0;
    for v in 0..v_count {
        for n in v + 1..v_count {
            let align: f64 = subs[v].iter().zip(subs[n].iter()).map(|(a, c)| a * c).sum();
            value += -2.0 / bf * align + 0.5 * (uniform[v] + uniform[n]);
            grads[v].scaled_add(-2.0 / bf, &subs[n]);
            grads[n].scaled_add(-2.0 / bf, &subs[v]);
            if cross_view_negatives {
                let mut cross = subs[v].dot(&subs[n].t());
                cross.diag_mut().fill(0.0);
                value += neg_scale * cross.iter().map(|s| s * s).sum::<f64>();
                grads[v].scaled_add(2.0 * neg_scale, &cross.dot(&subs[n]));
                grads[n].scaled_add(2.0 * neg_scale, &cross.t().dot(&subs[v]));
            }
        }
    }
    Ok(ContrastLoss { value, grads })
}

/// Per-anchor pair counts implied by the contrastive loss's summation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairCensus {
    pub positives: usize,
    pub negatives: usize,
}

impl PairCensus {
    pub fn total(&self) -> usize {
        self.positives + self.negatives
    }
}

/// Counts, for anchor `z_0^0`, the partners it is paired with by
/// [`loss_contrastive`]: cross-view same-sample positives and the squared
/// inner-product negatives.
pub fn pair_census(v_count: usize, b: usize, cross_view_negatives: bool) -> PairCensus {
    let (anchor_view, anchor_row) = (0, 0);
    let mut census = PairCensus {
        positives: 0,
        negatives: 0,
    };
    for v in 0..v_count {
        for n in v + 1..v_count {
            if v == anchor_view || n == anchor_view {
                census.positives += 1;
            }
            if cross_view_negatives && (v == anchor_view || n == anchor_view) {
                census.negatives += (0..b).filter(|&j| j != anchor_row).count();
            }
        }
    }
    census.negatives += (0..b).filter(|&j| j != anchor_row).count();
    census
}

/// Result of [`loss_predict`].
#[derive(Debug, Clone)]
pub struct PredictLoss {
    pub value: f64,
    /// `predictors[q][p]` is the gradient for `G(q->p)`.
    pub predictors: Vec<Vec<Option<MlpGrads>>>,
    /// Gradient w.r.t. each view's latent matrix (same shape as the input).
    pub latents: Vec<Array2<f64>>,
}

/// `sum_{q != p} (1/B) sum_i ||G(q->p)(z_i^q) - z_i^p||^2` over complete rows.
pub fn loss_predict(
    model: &MultiViewModel,
    latents: &[Array2<f64>],
    rows: &[usize],
) -> Result<PredictLoss> {
    if latents.len() != model.n_views() {
        return Err(Error::Contract(format!(
            "{} latent matrices for {} views",
            latents.len(),
            model.n_views()
        )));
    }
    let gathered: Vec<Array2<f64>> = latents.iter().map(|z| z.select(Axis(0), rows)).collect();
    let inner = predict_on_aligned(model, &gathered)?;
    let mut scattered: Vec<Array2<f64>> =
        latents.iter().map(|z| Array2::zeros(z.raw_dim())).collect();
    for (full, part) in scattered.iter_mut().zip(&inner.latents) {
        for (k, &i) in rows.iter().enumerate() {
            let mut row = full.row_mut(i);
            row += &part.row(k);
        }
    }
    Ok(PredictLoss {
        latents: scattered,
        ..inner
    })
}

/// Prediction loss on row-aligned latent matrices (all rows complete).
pub fn predict_on_aligned(model: &MultiViewModel, z: &[Array2<f64>]) -> Result<PredictLoss> {
    let v_count = model.n_views();
    let b = z.first().map_or(0, |m| m.nrows());
    let mut latents: Vec<Array2<f64>> = z.iter().map(|m| Array2::zeros(m.raw_dim())).collect();
    let mut predictors: Vec<Vec<Option<MlpGrads>>> = model
        .views
        .iter()
        .map(|vm| {
            vm.predictors
                .iter()
                .map(|p| p.as_ref().map(MlpGrads::zeros_like))
                .collect()
        })
        .collect();
    if b == 0 {
        return Ok(PredictLoss {
            value: 0.0,
            predictors,
            latents,
        });
    }
    let scale = 1.0 / b as f64;
    let mut value = 0.0;
    for q in 0..v_count {
        for p in 0..v_count {
            let Some(g) = model.views[q].predictor(p) else {
                continue;
            };
            let (pred, cache) = g.forward(z[q].view())?;
            let diff = pred - &z[p];
            value += scale * diff.iter().map(|x| x * x).sum::<f64>();
            let gout = &diff * (2.0 * scale);
            let (gp, gin) = g.backward(&cache, gout.view())?;
            predictors[q][p] = Some(gp);
            latents[q] += &gin;
            latents[p].scaled_add(-1.0, &gout);
        }
    }
    Ok(PredictLoss {
        value,
        predictors,
        latents,
    })
}

/// The three loss values of one evaluation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub lz: f64,
    pub lc: f64,
    pub lr: f64,
}

/// `w_z Lz + lambda1 Lc + lambda2 Lr`; fails if any part is non-finite.
pub fn total_loss(parts: LossParts, cfg: &ModelConfig) -> Result<f64> {
    for (name, v) in [("Lz", parts.lz), ("Lc", parts.lc), ("Lr", parts.lr)] {
        if !v.is_finite() {
            return Err(Error::Training(format!("loss part {name} is {v}")));
        }
    }
    Ok(cfg.recon_weight() * parts.lz + cfg.lambda1 * parts.lc + cfg.lambda2 * parts.lr)
}

/// Rows that enter one objective evaluation.
#[derive(Debug, Clone)]
pub struct BatchRows {
    /// Per view, ascending rows whose view is observed.
    pub observed: Vec<Vec<usize>>,
    /// Ascending rows with every view observed.
    pub complete: Vec<usize>,
}

/// Which terms to evaluate and with what weights.
#[derive(Debug, Clone, Copy)]
pub struct ObjectiveWeights {
    pub recon: f64,
    pub contrast: f64,
    pub predict: f64,
    /// Also report terms whose weight is zero.
    pub report_all: bool,
}

impl ObjectiveWeights {
    pub fn joint(cfg: &ModelConfig) -> Self {
        Self {
            recon: cfg.recon_weight(),
            contrast: cfg.lambda1,
            predict: cfg.lambda2,
            report_all: true,
        }
    }

    pub fn pretrain() -> Self {
        Self {
            recon: 1.0,
            contrast: 0.0,
            predict: 0.0,
            report_all: false,
        }
    }
}

/// Evaluates the training objective on one batch and returns the loss parts
/// together with gradients of the weighted total.
///
/// `Lz` is averaged over each view's observed rows and summed over views;
/// `Lc` and `Lr` use the complete rows only. Rows with a view missing never
/// reach that view's encoder.
pub fn objective(
    model: &MultiViewModel,
    x: &[Array2<f64>],
    rows: &BatchRows,
    cfg: &ModelConfig,
    w: ObjectiveWeights,
) -> Result<(LossParts, ModelGrads)> {
    let v_count = model.n_views();
    let d0 = model.sub_dim();
    let mut grads = ModelGrads::zeros_like(model);
    let mut parts = LossParts::default();

    let mut z = Vec::with_capacity(v_count);
    let mut enc_caches = Vec::with_capacity(v_count);
    let mut grad_z = Vec::with_capacity(v_count);
    for v in 0..v_count {
        let xb = x[v].select(Axis(0), &rows.observed[v]);
        let (zv, cache) = model.views[v].encoder.forward(xb.view())?;
        let mut gz = Array2::zeros(zv.raw_dim());
        if !rows.observed[v].is_empty() && (w.recon != 0.0 || w.report_all) {
            let vm = &model.views[v];
            let (xhat, dec_cache) = vm.decoder.forward(zv.view())?;
            let diff = xhat - &xb;
            let mean = 1.0 / rows.observed[v].len() as f64;
            parts.lz += mean * diff.iter().map(|d| d * d).sum::<f64>();
            if w.recon != 0.0 {
                let (gd, gzr) = vm
                    .decoder
                    .backward(&dec_cache, (diff * (2.0 * mean * w.recon)).view())?;
                grads.views[v].decoder = gd;
                gz += &gzr;
            }
        }
        z.push(zv);
        enc_caches.push(cache);
        grad_z.push(gz);
    }

    // position of each complete row inside every view's observed list
    let positions: Vec<Vec<usize>> = rows
        .observed
        .iter()
        .map(|obs| {
            rows.complete
                .iter()
                .map(|i| {
                    obs.binary_search(i)
                        .expect("complete rows are observed in every view")
                })
                .collect()
        })
        .collect();
    let zc: Vec<Array2<f64>> = z
        .iter()
        .zip(&positions)
        .map(|(zv, pos)| zv.select(Axis(0), pos))
        .collect();
    let b = rows.complete.len();

    if b >= 2 && (w.contrast != 0.0 || w.report_all) {
        let mut targets = Vec::new();
        if matches!(
            cfg.contrast_target,
            ContrastTarget::Sub | ContrastTarget::Both
        ) {
            targets.push(d0);
        }
        if matches!(
            cfg.contrast_target,
            ContrastTarget::Full | ContrastTarget::Both
        ) {
            targets.push(model.latent_dim());
        }
        for width in targets {
            let subs: Vec<ArrayView2<'_, f64>> =
                zc.iter().map(|m| m.slice(s![.., ..width])).collect();
            let c = loss_contrastive(&subs, cfg.cross_view_negatives)?;
            parts.lc += c.value;
            if w.contrast != 0.0 {
                for (v, g) in c.grads.iter().enumerate() {
                    for (k, &pos) in positions[v].iter().enumerate() {
                        let mut dst = grad_z[v].slice_mut(s![pos, ..width]);
                        dst.scaled_add(w.contrast, &g.row(k));
                    }
                }
            }
        }
    }

    if b >= 1 && (w.predict != 0.0 || w.report_all) {
        let p = predict_on_aligned(model, &zc)?;
        parts.lr = p.value;
        if w.predict != 0.0 {
            for (q, row) in p.predictors.into_iter().enumerate() {
                for (t, g) in row.into_iter().enumerate() {
                    if let Some(mut g) = g {
                        g.scale(w.predict);
                        grads.views[q].predictors[t] = Some(g);
                    }
                }
            }
            if cfg.predictor_grad_to_encoders {
                for (v, g) in p.latents.iter().enumerate() {
                    for (k, &pos) in positions[v].iter().enumerate() {
                        let mut dst = grad_z[v].row_mut(pos);
                        dst.scaled_add(w.predict, &g.row(k));
                    }
                }
            }
        }
    }

    for v in 0..v_count {
        if rows.observed[v].is_empty() {
            continue;
        }
        let (ge, _) = model.views[v]
            .encoder
            .backward(&enc_caches[v], grad_z[v].view())?;
        grads.views[v].encoder = ge;
    }
    Ok((parts, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, DenseLayer};
    use ndarray::{array, Array1};
    use rand::Rng;

    fn identity_mlp(d: usize) -> Mlp {
        Mlp::new(vec![DenseLayer::new(
            Array2::eye(d),
            Array1::zeros(d),
            Activation::Linear,
        )
        .unwrap()])
        .unwrap()
    }

    fn zero_mlp(input: usize, output: usize) -> Mlp {
        Mlp::new(vec![DenseLayer::new(
            Array2::zeros((output, input)),
            Array1::zeros(output),
            Activation::Linear,
        )
        .unwrap()])
        .unwrap()
    }

    fn tiny_cfg() -> ModelConfig {
        ModelConfig {
            latent_dim: 4,
            sub_dim: 2,
            encoder_hidden: vec![5],
            ..ModelConfig::default()
        }
    }

    /// Direct evaluation from the definition with explicit loops, independent of the
    /// matrix formulation used by `loss_contrastive`.
    fn contrastive_oracle(subs: &[Array2<f64>], cross: bool) -> f64 {
        let v_count = subs.len();
        let b = subs[0].nrows();
        let c2 = (b * (b - 1) / 2) as f64;
        let dot = |a: ndarray::ArrayView1<f64>, c: ndarray::ArrayView1<f64>| a.dot(&c);
        let uni = |z: &Array2<f64>| {
            let mut s = 0.0;
            for i in 0..b {
                for j in 0..b {
                    if i != j {
                        s += dot(z.row(i), z.row(j)).powi(2);
                    }
                }
            }
            s / (2.0 * c2)
        };
        let mut total = 0.0;
        for v in 0..v_count {
            for n in v + 1..v_count {
                let mut align = 0.0;
                for i in 0..b {
                    align += dot(subs[v].row(i), subs[n].row(i));
                }
                total += -2.0 / b as f64 * align + 0.5 * (uni(&subs[v]) + uni(&subs[n]));
                if cross {
                    let mut s = 0.0;
                    for i in 0..b {
                        for j in 0..b {
                            if i != j {
                                s += dot(subs[v].row(i), subs[n].row(j)).powi(2);
                            }
                        }
                    }
                    total += s / (2.0 * c2);
                }
            }
        }
        total
    }

    #[test]
    fn contrastive_examples() {
        let zero = Array2::<f64>::zeros((2, 2));
        let c = loss_contrastive(&[zero.view(), zero.view()], false).unwrap();
        assert_eq!(c.value, 0.0);

        let a = array![[1.0, 0.0], [0.0, 1.0]];
        let c = loss_contrastive(&[a.view(), a.view()], false).unwrap();
        assert_eq!(c.value, -2.0);
        assert_eq!(contrastive_oracle(&[a.clone(), a.clone()], false), -2.0);
    }

    #[test]
    fn contrastive_scaling_orders() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let z1 = Array2::from_shape_simple_fn((5, 3), || rng.random_range(-1.0..1.0));
        let z2 = Array2::from_shape_simple_fn((5, 3), || rng.random_range(-1.0..1.0));
        let parts = |c: f64| {
            let (a, b) = (&z1 * c, &z2 * c);
            let full = loss_contrastive(&[a.view(), b.view()], false)
                .unwrap()
                .value;
            let align = -2.0 / 5.0 * a.iter().zip(b.iter()).map(|(x, y)| x * y).sum::<f64>();
            (align, full - align)
        };
        let (a1, u1) = parts(1.0);
        let (a2, u2) = parts(2.0);
        assert!((a2 - 4.0 * a1).abs() < 1e-12);
        assert!((u2 - 16.0 * u1).abs() < 1e-10);
    }

    #[test]
    fn contrastive_rejects_single_sample() {
        let z = Array2::<f64>::zeros((1, 2));
        assert!(matches!(
            loss_contrastive(&[z.view(), z.view()], false),
            Err(Error::Param(_))
        ));
    }

    #[test]
    fn contrastive_matches_oracle_and_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &v_count in &[2usize, 3] {
            for &b in &[2usize, 4, 8] {
                for &d in &[2usize, 4] {
                    for cross in [false, true] {
                        let subs: Vec<Array2<f64>> = (0..v_count)
                            .map(|_| {
                                Array2::from_shape_simple_fn((b, d), || rng.random_range(-1.0..1.0))
                            })
                            .collect();
                        let views: Vec<_> = subs.iter().map(|m| m.view()).collect();
                        let c = loss_contrastive(&views, cross).unwrap();
                        let oracle = contrastive_oracle(&subs, cross);
                        assert!((c.value - oracle).abs() < 1e-12 * (1.0 + oracle.abs()));

                        let flat: Vec<f64> = subs.iter().flat_map(|m| m.iter().copied()).collect();
                        let analytic: Vec<f64> =
                            c.grads.iter().flat_map(|m| m.iter().copied()).collect();
                        let loss = |p: &[f64]| {
                            let ms: Vec<Array2<f64>> = p
                                .chunks(b * d)
                                .map(|ch| Array2::from_shape_vec((b, d), ch.to_vec()).unwrap())
                                .collect();
                            contrastive_oracle(&ms, cross)
                        };
                        let rep =
                            crate::nn::grad_check(loss, &flat, &analytic, 1e-5, 1e-5, None, 0)
                                .unwrap();
                        assert!(
                            rep.passed(),
                            "V={v_count} B={b} d={d} cross={cross}: {rep:?}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn contrastive_symmetric_under_view_swap() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = Array2::from_shape_simple_fn((6, 3), || rng.random_range(-2.0..2.0));
        let b = Array2::from_shape_simple_fn((6, 3), || rng.random_range(-2.0..2.0));
        for cross in [false, true] {
            let ab = loss_contrastive(&[a.view(), b.view()], cross)
                .unwrap()
                .value;
            let ba = loss_contrastive(&[b.view(), a.view()], cross)
                .unwrap()
                .value;
            assert_eq!(ab, ba);
        }
    }

    #[test]
    fn pair_counts() {
        for v in 2..5 {
            for b in 2..10 {
                assert_eq!(pair_census(v, b, false).positives, v - 1);
                assert_eq!(pair_census(v, b, false).negatives, b - 1);
                let full = pair_census(v, b, true);
                assert_eq!(full.positives, v - 1);
                assert_eq!(full.total(), v * b - 1);
                assert_eq!(full.negatives, v * (b - 1));
            }
        }
    }

    #[test]
    fn recon_examples() {
        let vm = ViewModel {
            encoder: identity_mlp(3),
            decoder: identity_mlp(3),
            predictors: vec![None],
        };
        let x = array![[0.3, -1.0, 2.0], [4.0, 5.0, 6.0]];
        assert_eq!(loss_recon(&vm, &x, &[0, 1]).unwrap().value, 0.0);
        let vm = ViewModel {
            encoder: identity_mlp(3),
            decoder: zero_mlp(3, 3),
            predictors: vec![None],
        };
        assert_eq!(
            loss_recon(&vm, &array![[0.0, 1.0, 0.0]], &[0])
                .unwrap()
                .value,
            1.0
        );
        let empty = loss_recon(&vm, &x, &[]).unwrap();
        assert_eq!(empty.value, 0.0);
        assert!(empty.encoder.flatten().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn recon_matches_naive() {
        let model = MultiViewModel::new(&[4, 3], &tiny_cfg()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Array2::from_shape_simple_fn((5, 4), || rng.random_range(0.0..1.0));
        let rows = [0, 2, 4];
        let r = loss_recon(&model.views[0], &x, &rows).unwrap();
        let mut naive = 0.0;
        for &i in &rows {
            let xi = x.row(i).insert_axis(Axis(0)).to_owned();
            let z = model.views[0].encoder.predict(xi.view()).unwrap();
            let xh = model.views[0].decoder.predict(z.view()).unwrap();
            for j in 0..4 {
                naive += (xi[[0, j]] - xh[[0, j]]).powi(2);
            }
        }
        assert!((r.value - naive).abs() < 1e-12);
    }

    fn two_view_identity_model(d: usize) -> MultiViewModel {
        let vm = |other: usize| ViewModel {
            encoder: identity_mlp(d),
            decoder: identity_mlp(d),
            predictors: (0..2)
                .map(|p| (p == other).then(|| identity_mlp(d)))
                .collect(),
        };
        MultiViewModel::from_parts(vec![vm(1), vm(0)], d, 1).unwrap()
    }

    #[test]
    fn predict_examples() {
        let model = two_view_identity_model(3);
        let z = array![[1.0, 2.0, 3.0], [0.5, -1.0, 0.0]];
        let p = loss_predict(&model, &[z.clone(), z.clone()], &[0, 1]).unwrap();
        assert_eq!(p.value, 0.0);
        assert_eq!(
            loss_predict(&model, &[z.clone(), z.clone()], &[])
                .unwrap()
                .value,
            0.0
        );

        let mut zeroed = model.clone();
        zeroed.views[0].predictors[1] = Some(zero_mlp(3, 3));
        zeroed.views[1].predictors[0] = Some(zero_mlp(3, 3));
        let unit = array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        let p = loss_predict(&zeroed, &[unit.clone(), unit.clone()], &[0, 1]).unwrap();
        // 1.0 per sample, batch-mean, two directions
        assert!((p.value - 2.0).abs() < 1e-15);
    }

    #[test]
    fn predict_matches_naive() {
        let model = MultiViewModel::new(&[3, 3], &tiny_cfg()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let z: Vec<Array2<f64>> = (0..2)
            .map(|_| Array2::from_shape_simple_fn((6, 4), || rng.random_range(-1.0..1.0)))
            .collect();
        let rows = [1, 3, 4];
        let p = loss_predict(&model, &z, &rows).unwrap();
        let mut naive = 0.0;
        for (q, tgt) in [(0, 1), (1, 0)] {
            for &i in &rows {
                let zi = z[q].row(i).insert_axis(Axis(0)).to_owned();
                let pred = model.views[q]
                    .predictor(tgt)
                    .unwrap()
                    .predict(zi.view())
                    .unwrap();
                for j in 0..4 {
                    naive += (pred[[0, j]] - z[tgt][[i, j]]).powi(2) / rows.len() as f64;
                }
            }
        }
        assert!((p.value - naive).abs() < 1e-12);
        // unselected rows get no gradient
        assert!(p.latents[0].row(0).iter().all(|&g| g == 0.0));
    }

    #[test]
    fn total_loss_examples() {
        let cfg = ModelConfig::default();
        let parts = LossParts {
            lz: 1.0,
            lc: 2.0,
            lr: 3.0,
        };
        assert_eq!(total_loss(parts, &cfg).unwrap(), 6.0);
        let recon_only = Ablation::loss_study()[0].apply(&cfg).unwrap();
        assert_eq!(total_loss(parts, &recon_only).unwrap(), 1.0);
        assert_eq!(total_loss(LossParts::default(), &cfg).unwrap(), 0.0);
        let err = total_loss(
            LossParts {
                lc: f64::NAN,
                ..parts
            },
            &cfg,
        )
        .unwrap_err();
        assert!(err.to_string().contains("Lc"));
    }

    #[test]
    fn ablation_tables() {
        let base = ModelConfig::default();
        let study = Ablation::loss_study();
        assert_eq!(study.len(), 7);
        assert_eq!(study[6], Ablation::FULL);
        assert_eq!(study[6].apply(&base).unwrap(), base);
        let lz = study[0].apply(&base).unwrap();
        assert!(lz.use_recon && lz.lambda1 == 0.0 && lz.lambda2 == 0.0);
        assert_eq!(study.iter().filter(|a| a.is_single_term()).count(), 3);
        let rep = Ablation::representation_study();
        assert_eq!(rep.len(), 3);
        assert_eq!(
            rep[0].apply(&base).unwrap().contrast_target,
            ContrastTarget::Full
        );
        assert_eq!(rep[0].label(), "Lz+Lc+Lr[X-Z]");
        let none = Ablation {
            recon: false,
            contrast: false,
            predict: false,
            target: ContrastTarget::Sub,
        };
        assert!(matches!(none.apply(&base), Err(Error::Param(_))));
    }

    #[test]
    fn config_validation_and_json() {
        let cfg = ModelConfig::default();
        cfg.validate().unwrap();
        let json = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<ModelConfig>(&json).unwrap(), cfg);
        assert!(ModelConfig {
            sub_dim: 65,
            ..cfg.clone()
        }
        .validate()
        .is_err());
        assert!(ModelConfig {
            lambda1: -1.0,
            ..cfg.clone()
        }
        .validate()
        .is_err());
        assert!(serde_json::from_str::<ModelConfig>("{\"latent_dim\": 3}").is_err());
    }

    #[test]
    fn shipped_synthetic_config_matches_preset() {
        let shipped: ModelConfig =
            serde_json::from_str(include_str!("../../../configs/synthetic.json")).unwrap();
        assert_eq!(shipped, ModelConfig::synthetic());
        shipped.validate().unwrap();
    }

    fn random_batch(
        model: &MultiViewModel,
        dims: &[usize],
        n: usize,
        seed: u64,
    ) -> (Vec<Array2<f64>>, BatchRows) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<Array2<f64>> = dims
            .iter()
            .map(|&m| Array2::from_shape_simple_fn((n, m), || rng.random_range(0.0..1.0)))
            .collect();
        let v = model.n_views();
        let mut observed = vec![Vec::new(); v];
        let mut complete = Vec::new();
        for i in 0..n {
            // first half complete, rest miss one view in rotation
            let missing = if i < n / 2 { None } else { Some(i % v) };
            for (view, obs) in observed.iter_mut().enumerate() {
                if Some(view) != missing {
                    obs.push(i);
                }
            }
            if missing.is_none() {
                complete.push(i);
            }
        }
        (x, BatchRows { observed, complete })
    }

    fn check_objective(cfg: &ModelConfig, dims: &[usize], seed: u64) {
        let model = MultiViewModel::new(dims, cfg).unwrap();
        let (x, rows) = random_batch(&model, dims, 8, seed);
        let w = ObjectiveWeights::joint(cfg);
        let (_, grads) = objective(&model, &x, &rows, cfg, w).unwrap();
        let loss = |p: &[f64]| {
            let mut m = model.clone();
            m.set_flat_params(p).unwrap();
            let (parts, _) = objective(&m, &x, &rows, cfg, w).unwrap();
            total_loss(parts, cfg).unwrap()
        };
        let rep = crate::nn::grad_check(
            loss,
            &model.flat_params(),
            &grads.flatten(),
            1e-5,
            1e-5,
            Some(300),
            seed,
        )
        .unwrap();
        assert!(rep.passed(), "{cfg:?}: {rep:?}");
    }

    #[test]
    fn objective_gradients_match_finite_differences() {
        let base = ModelConfig {
            latent_dim: 6,
            sub_dim: 3,
            encoder_hidden: vec![8],
            lambda1: 0.7,
            lambda2: 1.3,
            ..ModelConfig::default()
        };
        check_objective(&base, &[5, 4], 1);
        check_objective(&base, &[5, 4, 3], 2);
        check_objective(
            &ModelConfig {
                contrast_target: ContrastTarget::Both,
                cross_view_negatives: true,
                ..base.clone()
            },
            &[5, 4],
            3,
        );
        check_objective(
            &ModelConfig {
                use_recon: false,
                ..base.clone()
            },
            &[5, 4],
            4,
        );
    }

    #[test]
    fn stopped_prediction_gradient_spares_encoders() {
        let base = ModelConfig {
            latent_dim: 6,
            sub_dim: 3,
            encoder_hidden: vec![8],
            ..ModelConfig::default()
        };
        let stopped = ModelConfig {
            predictor_grad_to_encoders: false,
            ..base.clone()
        };
        let no_predict = ModelConfig {
            lambda2: 0.0,
            ..base.clone()
        };
        let model = MultiViewModel::new(&[5, 4], &base).unwrap();
        let (x, rows) = random_batch(&model, &[5, 4], 8, 5);
        let grads = |cfg: &ModelConfig| {
            objective(&model, &x, &rows, cfg, ObjectiveWeights::joint(cfg))
                .unwrap()
                .1
        };
        let (g_full, g_stop, g_none) = (grads(&base), grads(&stopped), grads(&no_predict));
        for v in 0..2 {
            // encoders see only reconstruction and contrast
            assert_eq!(g_stop.views[v].encoder, g_none.views[v].encoder);
            // predictors train exactly as in the coupled objective
            assert_eq!(g_stop.views[v].predictors, g_full.views[v].predictors);
        }
    }

    #[test]
    fn missing_rows_do_not_reach_encoders() {
        let cfg = tiny_cfg();
        let model = MultiViewModel::new(&[3, 3], &cfg).unwrap();
        let (x, rows) = random_batch(&model, &[3, 3], 8, 9);
        let w = ObjectiveWeights::joint(&cfg);
        let (_, g) = objective(&model, &x, &rows, &cfg, w).unwrap();
        // perturb the feature values of rows where view 0 is missing
        let mut x2 = x.clone();
        for i in 0..8 {
            if !rows.observed[0].contains(&i) {
                x2[0].row_mut(i).fill(1e6);
            }
        }
        let (_, g2) = objective(&model, &x2, &rows, &cfg, w).unwrap();
        assert_eq!(g, g2);
    }

    #[test]
    fn flat_params_round_trip() {
        let mut model = MultiViewModel::new(&[3, 2, 4], &tiny_cfg()).unwrap();
        let p = model.flat_params();
        assert_eq!(p.len(), model.param_sizes().iter().sum::<usize>());
        let doubled: Vec<f64> = p.iter().map(|x| 2.0 * x).collect();
        model.set_flat_params(&doubled).unwrap();
        assert_eq!(model.flat_params(), doubled);
        assert_eq!(ModelGrads::zeros_like(&model).flatten().len(), p.len());
    }
}
