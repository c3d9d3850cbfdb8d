//! Two-stage training (reconstruction pretraining, then the joint
//! objective), embedding, checkpoints and the end-to-end clustering
//! pipeline.

use std::path::Path;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cluster::{kmeans, KmeansOptions, KmeansResult};
use crate::data::{complete_index, MultiViewDataset, ObservationMask};
use crate::diagnostics::{spectrum, ConvergenceLog, SpectrumReport, TraceSummary};
use crate::io;
use crate::metrics::{score, Scores};
use crate::model::{
    objective, total_loss, BatchRows, LossParts, ModelConfig, MultiViewModel, ObjectiveWeights,
    ViewModel,
};
use crate::nn::{AdamState, Mlp};
use crate::recover::{fuse, recover_latents, FusedFeatures, Fusion, LatentBundle, Provenance};
use crate::{Error, Result};

/// Parameters at the lowest total joint loss seen so far.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// Joint epoch whose starting parameters these are; `epochs_joint`
    /// denotes the parameters after the last update.
    pub epoch: usize,
    pub total: f64,
    pub params: Vec<f64>,
}

/// Everything that evolves during training.
#[derive(Debug, Clone)]
pub struct RunState {
    pub model: MultiViewModel,
    pub cfg: ModelConfig,
    adam: AdamState,
    rng: ChaCha8Rng,
    pub pretrain_epochs: usize,
    pub joint_epochs: usize,
    pub pretrain_trace: ConvergenceLog,
    pub trace: ConvergenceLog,
    best: Option<Checkpoint>,
}

impl RunState {
    /// Fresh model and optimizer for `ds`, seeded from `cfg.seed`.
    pub fn new(ds: &MultiViewDataset, cfg: &ModelConfig) -> Result<Self> {
        let model = MultiViewModel::new(&ds.view_dims(), cfg)?;
        let adam = AdamState::new(cfg.adam(), &model.param_sizes());
        Ok(Self {
            model,
            cfg: cfg.clone(),
            adam,
            // batch shuffling draws from its own stream, separate from init
            rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5EED_BA7C),
            pretrain_epochs: 0,
            joint_epochs: 0,
            pretrain_trace: ConvergenceLog::new(),
            trace: ConvergenceLog::new(),
            best: None,
        })
    }

    pub fn best(&self) -> Option<&Checkpoint> {
        self.best.as_ref()
    }

    /// The model at the best checkpoint, or the current one if joint
    /// training never ran.
    pub fn best_model(&self) -> Result<MultiViewModel> {
        let mut m = self.model.clone();
        if let Some(b) = &self.best {
            m.set_flat_params(&b.params)?;
        }
        Ok(m)
    }

    fn consider(&mut self, epoch: usize, total: f64) {
        if self.best.as_ref().is_none_or(|b| total < b.total) {
            self.best = Some(Checkpoint {
                epoch,
                total,
                params: self.model.flat_params(),
            });
        }
    }
}

fn check_shapes(ds: &MultiViewDataset, mask: &ObservationMask) -> Result<()> {
    if mask.n_samples() != ds.n_samples() || mask.n_views() != ds.n_views() {
        return Err(Error::Contract(format!(
            "mask is {}x{}, dataset has {} samples and {} views",
            mask.n_samples(),
            mask.n_views(),
            ds.n_samples(),
            ds.n_views()
        )));
    }
    Ok(())
}

fn batch_rows(mask: &ObservationMask, mut rows: Vec<usize>) -> BatchRows {
    rows.sort_unstable();
    let observed = (0..mask.n_views())
        .map(|v| {
            rows.iter()
                .copied()
                .filter(|&i| mask.is_observed(i, v))
                .collect()
        })
        .collect();
    let complete = rows
        .iter()
        .copied()
        .filter(|&i| mask.is_complete(i))
        .collect();
    BatchRows { observed, complete }
}

#[derive(Clone, Copy, PartialEq)]
enum Stage {
    Pretrain,
    Joint,
}

impl Stage {
    fn name(self) -> &'static str {
        match self {
            Stage::Pretrain => "pretraining",
            Stage::Joint => "joint training",
        }
    }
}

fn stage_error(stage: Stage, epoch: usize, e: Error) -> Error {
    match e {
        Error::Training(msg) => Error::Training(format!("{} epoch {epoch}: {msg}", stage.name())),
        other => other,
    }
}

/// Loss of the current parameters over the whole dataset, batched as in
/// training but without updates.
fn evaluate(
    state: &RunState,
    ds: &MultiViewDataset,
    mask: &ObservationMask,
    w: ObjectiveWeights,
) -> Result<LossParts> {
    let n = ds.n_samples();
    let bs = state.cfg.batch_size(n);
    let mut acc = LossParts::default();
    let order: Vec<usize> = (0..n).collect();
    for chunk in order.chunks(bs) {
        let rows = batch_rows(mask, chunk.to_vec());
        let (p, _) = objective(&state.model, ds.views(), &rows, &state.cfg, w)?;
        let f = chunk.len() as f64 / n as f64;
        acc.lz += f * p.lz;
        acc.lc += f * p.lc;
        acc.lr += f * p.lr;
    }
    Ok(acc)
}

/// One pass over the data. Returns the batch-size weighted mean of the
/// losses seen before each update; with a single full batch this is exactly
/// the loss of the parameters at the start of the epoch.
fn run_epoch(
    state: &mut RunState,
    ds: &MultiViewDataset,
    mask: &ObservationMask,
    w: ObjectiveWeights,
) -> Result<LossParts> {
    let n = ds.n_samples();
    let bs = state.cfg.batch_size(n);
    let mut order: Vec<usize> = (0..n).collect();
    if bs < n {
        order.shuffle(&mut state.rng);
    }
    let mut acc = LossParts::default();
    for chunk in order.chunks(bs) {
        let rows = batch_rows(mask, chunk.to_vec());
        let (p, grads) = objective(&state.model, ds.views(), &rows, &state.cfg, w)?;
        total_loss(p, &state.cfg)?;
        let slices = grads.slices();
        let mut params = state.model.params_mut();
        state.adam.step(&mut params, &slices)?;
        let f = chunk.len() as f64 / n as f64;
        acc.lz += f * p.lz;
        acc.lc += f * p.lc;
        acc.lr += f * p.lr;
    }
    Ok(acc)
}

/// Scores of the current parameters, used for the per-epoch trace.
pub type Scorer<'a> = dyn Fn(&MultiViewModel) -> Result<Scores> + 'a;

/// Stage 1: reconstruction only, over every observed view entry. Skipped
/// (zero epochs) when the configuration switches reconstruction off.
pub fn pretrain(
    ds: &MultiViewDataset,
    mask: &ObservationMask,
    cfg: &ModelConfig,
) -> Result<RunState> {
    let mut state = RunState::new(ds, cfg)?;
    pretrain_state(&mut state, ds, mask, cfg.epochs_pretrain)?;
    Ok(state)
}

fn pretrain_state(
    state: &mut RunState,
    ds: &MultiViewDataset,
    mask: &ObservationMask,
    epochs: usize,
) -> Result<()> {
    check_shapes(ds, mask)?;
    if !state.cfg.use_recon {
        return Ok(());
    }
    for _ in 0..epochs {
        let e = state.pretrain_epochs;
        let p = run_epoch(state, ds, mask, ObjectiveWeights::pretrain())
            .map_err(|err| stage_error(Stage::Pretrain, e, err))?;
        if !p.lz.is_finite() {
            return Err(Error::Training(format!(
                "pretraining epoch {e}: Lz is {}",
                p.lz
            )));
        }
        state.pretrain_trace.push(
            e,
            LossParts {
                lz: p.lz,
                lc: 0.0,
                lr: 0.0,
            },
            p.lz,
            None,
        )?;
        state.pretrain_epochs += 1;
    }
    Ok(())
}

/// Stage 2: `epochs_joint` updates of the full objective. Each epoch logs
/// the loss at its starting parameters (plus scores when `scorer` is
/// given) and offers those parameters as the best checkpoint; the
/// parameters after the final update are offered too.
pub fn train_joint(
    mut state: RunState,
    ds: &MultiViewDataset,
    mask: &ObservationMask,
    scorer: Option<&Scorer<'_>>,
) -> Result<RunState> {
    check_shapes(ds, mask)?;
    let cfg = state.cfg.clone();
    let complete = complete_index(mask).len();
    if complete == 0 && cfg.lambda1 + cfg.lambda2 > 0.0 {
        return Err(Error::Config(
            "no complete samples: contrast and prediction terms are undefined".into(),
        ));
    }
    if complete < 2 && cfg.lambda1 > 0.0 {
        return Err(Error::Config(format!(
            "the contrastive term needs at least 2 complete samples, found {complete}"
        )));
    }
    let w = ObjectiveWeights::joint(&cfg);
    for _ in 0..cfg.epochs_joint {
        let e = state.joint_epochs;
        let scores = scorer.map(|f| f(&state.model)).transpose()?;
        let params_before = state.model.flat_params();
        let p =
            run_epoch(&mut state, ds, mask, w).map_err(|err| stage_error(Stage::Joint, e, err))?;
        let total = total_loss(p, &cfg).map_err(|err| stage_error(Stage::Joint, e, err))?;
        state.trace.push(e, p, total, scores)?;
        if state.best.as_ref().is_none_or(|b| total < b.total) {
            state.best = Some(Checkpoint {
                epoch: e,
                total,
                params: params_before,
            });
        }
        state.joint_epochs += 1;
    }
    if cfg.epochs_joint > 0 {
        let p = evaluate(&state, ds, mask, w)?;
        let total = total_loss(p, &cfg)
            .map_err(|err| stage_error(Stage::Joint, state.joint_epochs, err))?;
        state.consider(state.joint_epochs, total);
    }
    Ok(state)
}

/// Latents of every observed entry under `model`; missing entries are
/// zero and flagged absent.
pub fn embed_with(
    model: &MultiViewModel,
    ds: &MultiViewDataset,
    mask: &ObservationMask,
) -> Result<LatentBundle> {
    check_shapes(ds, mask)?;
    let n = ds.n_samples();
    let d = model.latent_dim();
    let mut z = Vec::with_capacity(ds.n_views());
    let mut prov = Array2::from_elem((n, ds.n_views()), Provenance::Absent);
    for v in 0..ds.n_views() {
        let rows = mask.observed_rows(v);
        let enc = model.encode(v, ds.view(v), &rows)?;
        let mut full = Array2::zeros((n, d));
        for (k, &i) in rows.iter().enumerate() {
            full.row_mut(i).assign(&enc.row(k));
            prov[[i, v]] = Provenance::Observed;
        }
        z.push(full);
    }
    LatentBundle::new(z, model.sub_dim(), prov)
}

/// [`embed_with`] using the best checkpoint.
pub fn embed(
    state: &RunState,
    ds: &MultiViewDataset,
    mask: &ObservationMask,
) -> Result<LatentBundle> {
    embed_with(&state.best_model()?, ds, mask)
}

/// Embed, recover, fuse and cluster with a given model.
pub fn cluster_with(
    model: &MultiViewModel,
    ds: &MultiViewDataset,
    mask: &ObservationMask,
    fusion: Fusion,
    kopts: KmeansOptions,
    seed: u64,
) -> Result<(LatentBundle, FusedFeatures, KmeansResult)> {
    let raw = embed_with(model, ds, mask)?;
    let bundle = recover_latents(model, &raw, mask)?;
    let fused = fuse(&bundle, fusion)?;
    if !fused.matrix.iter().all(|x| x.is_finite()) {
        return Err(Error::Evaluation(
            "fused features contain non-finite values".into(),
        ));
    }
    let km = kmeans(fused.matrix.view(), ds.k(), seed, kopts)
        .map_err(|e| Error::Evaluation(e.to_string()))?;
    Ok((bundle, fused, km))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineOptions {
    pub fusion: Fusion,
    pub kmeans: KmeansOptions,
    /// Run the reconstruction pretraining stage.
    pub pretrain: bool,
    /// Log ACC/NMI/ARI per joint epoch when labels exist.
    pub score_trace: bool,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self {
            fusion: Fusion::ConcatSub,
            kmeans: KmeansOptions::default(),
            pretrain: true,
            score_trace: true,
        }
    }
}

/// Outcome of one clustering run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub labels: Vec<usize>,
    pub scores: Option<Scores>,
    pub inertia: f64,
    pub kmeans_iterations: usize,
    pub best_epoch: Option<usize>,
    pub best_total: Option<f64>,
    /// Spectrum of the sub-vectors `Z*`, views stacked row-wise.
    pub spectrum_sub: SpectrumReport,
    /// Spectrum of the full latents `Z`, views stacked row-wise.
    pub spectrum_full: SpectrumReport,
    pub trace: Option<TraceSummary>,
    pub recovered_entries: usize,
}

/// Trained state plus every intermediate artifact of a run.
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub state: RunState,
    pub bundle: LatentBundle,
    pub fused: FusedFeatures,
    pub kmeans: KmeansResult,
    pub report: ClusterReport,
}

/// Spectra of the sub-vectors `Z*` and the full latents `Z`, each with the
/// views' rows stacked so that the spectrum describes how many directions
/// of the shared latent space are in use.
pub fn bundle_spectra(bundle: &LatentBundle) -> Result<(SpectrumReport, SpectrumReport)> {
    let subs: Vec<_> = (0..bundle.n_views()).map(|v| bundle.sub(v)).collect();
    let fulls: Vec<_> = (0..bundle.n_views()).map(|v| bundle.z(v).view()).collect();
    let stack = |parts: &[ndarray::ArrayView2<'_, f64>]| {
        ndarray::concatenate(Axis(0), parts).map_err(|e| Error::Contract(e.to_string()))
    };
    Ok((
        spectrum(stack(&subs)?.view())?,
        spectrum(stack(&fulls)?.view())?,
    ))
}

/// Train, embed with the best checkpoint, recover, fuse, cluster and score.
pub fn run_pipeline(
    ds: &MultiViewDataset,
    mask: &ObservationMask,
    cfg: &ModelConfig,
    opts: &PipelineOptions,
) -> Result<PipelineOutput> {
    check_shapes(ds, mask)?;
    let mut state = RunState::new(ds, cfg)?;
    if opts.pretrain {
        pretrain_state(&mut state, ds, mask, cfg.epochs_pretrain)?;
    }
    let scorer = |m: &MultiViewModel| -> Result<Scores> {
        let (_, _, km) = cluster_with(m, ds, mask, opts.fusion, opts.kmeans, cfg.seed)?;
        score(
            ds.labels().expect("scorer only built with labels"),
            &km.labels,
        )
    };
    let scorer_ref: Option<&Scorer<'_>> =
        (opts.score_trace && ds.labels().is_some()).then_some(&scorer);
    let state = train_joint(state, ds, mask, scorer_ref)?;

    let model = state.best_model()?;
    let (bundle, fused, km) = cluster_with(&model, ds, mask, opts.fusion, opts.kmeans, cfg.seed)?;
    let scores = match ds.labels() {
        Some(t) => Some(score(t, &km.labels).map_err(|e| Error::Evaluation(e.to_string()))?),
        None => None,
    };
    let (spectrum_sub, spectrum_full) =
        bundle_spectra(&bundle).map_err(|e| Error::Evaluation(e.to_string()))?;
    let report = ClusterReport {
        labels: km.labels.clone(),
        scores,
        inertia: km.inertia,
        kmeans_iterations: km.iterations,
        best_epoch: state.best().map(|b| b.epoch),
        best_total: state.best().map(|b| b.total),
        spectrum_sub,
        spectrum_full,
        trace: state.trace.summary(),
        recovered_entries: bundle.count(Provenance::Recovered),
    };
    Ok(PipelineOutput {
        state,
        bundle,
        fused,
        kmeans: km,
        report,
    })
}

/// How well the predictors impute views that were hidden during training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityReport {
    /// Hidden (sample, view) entries evaluated.
    pub entries: usize,
    /// Entries whose recovered latent lies within the view's radius.
    pub within: usize,
    pub fraction: f64,
    /// Per view: half the median pairwise distance between true latents.
    pub radius: Vec<f64>,
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n == 0 {
        return 0.0;
    }
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Hides each view in turn on the rows `mask` marks complete, recovers it
/// from the remaining views and compares the result with the encoding of
/// the hidden features. A recovered latent counts as faithful when it lies
/// within half the median pairwise distance between true latents of that
/// view.
pub fn recovery_fidelity(
    model: &MultiViewModel,
    ds: &MultiViewDataset,
    mask: &ObservationMask,
) -> Result<FidelityReport> {
    check_shapes(ds, mask)?;
    if model.n_views() != ds.n_views() {
        return Err(Error::Contract(
            "model and dataset disagree on the number of views".into(),
        ));
    }
    let n = ds.n_samples();
    let complete = complete_index(mask);
    let all: Vec<usize> = (0..n).collect();
    let mut entries = 0;
    let mut within = 0;
    let mut radius = Vec::with_capacity(ds.n_views());
    for v in 0..ds.n_views() {
        let truth = model.encode(v, ds.view(v), &all)?;
        let mut dists = Vec::with_capacity(n * (n - 1) / 2);
        for i in 0..n {
            for j in i + 1..n {
                let d = &truth.row(i) - &truth.row(j);
                dists.push(d.dot(&d).sqrt());
            }
        }
        let r = 0.5 * median(dists);
        radius.push(r);

        let mut hidden = mask.matrix().clone();
        for &i in &complete {
            hidden[[i, v]] = false;
        }
        let hidden = ObservationMask::from_matrix(hidden, mask.eta(), mask.seed())?;
        let rec = recover_latents(model, &embed_with(model, ds, &hidden)?, &hidden)?;
        for &i in &complete {
            let d = &rec.z(v).row(i) - &truth.row(i);
            entries += 1;
            if d.dot(&d).sqrt() <= r {
                within += 1;
            }
        }
    }
    Ok(FidelityReport {
        entries,
        within,
        fraction: if entries == 0 {
            1.0
        } else {
            within as f64 / entries as f64
        },
        radius,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct NetworkEntry {
    name: String,
    offset: usize,
    len: usize,
}

/// Sidecar describing the networks packed into `checkpoint.bin`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub n_views: usize,
    pub latent_dim: usize,
    pub sub_dim: usize,
    pub epoch: Option<usize>,
    pub total: Option<f64>,
    pub sha256: String,
    networks: Vec<NetworkEntry>,
}

/// Writes `model` as concatenated `MLP1` blobs plus a JSON manifest next to
/// it (`<path>` with extension `json`).
pub fn save_checkpoint(
    model: &MultiViewModel,
    best: Option<&Checkpoint>,
    path: &Path,
) -> Result<CheckpointManifest> {
    let mut bytes = Vec::new();
    let mut networks = Vec::new();
    for (name, net) in model.named_networks() {
        let blob = net.to_bytes()?;
        networks.push(NetworkEntry {
            name,
            offset: bytes.len(),
            len: blob.len(),
        });
        bytes.extend_from_slice(&blob);
    }
    let manifest = CheckpointManifest {
        n_views: model.n_views(),
        latent_dim: model.latent_dim(),
        sub_dim: model.sub_dim(),
        epoch: best.map(|b| b.epoch),
        total: best.map(|b| b.total),
        sha256: io::sha256_hex(&bytes),
        networks,
    };
    io::write_bytes(path, &bytes)?;
    io::write_string(
        &path.with_extension("json"),
        &serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(manifest)
}

pub fn load_checkpoint(path: &Path) -> Result<MultiViewModel> {
    let manifest_path = path.with_extension("json");
    let manifest: CheckpointManifest = serde_json::from_str(&io::read_to_string(&manifest_path)?)?;
    let bytes = io::read_bytes(path)?;
    let bad = |msg: String| Error::Format {
        path: path.to_path_buf(),
        msg,
    };
    if io::sha256_hex(&bytes) != manifest.sha256 {
        return Err(bad("checksum does not match manifest".into()));
    }
    let mut views: Vec<ViewModel> = Vec::with_capacity(manifest.n_views);
    let mut nets = manifest.networks.iter();
    let mut next = |want: &str| -> Result<Mlp> {
        let entry = nets
            .next()
            .ok_or_else(|| bad(format!("missing network {want}")))?;
        if entry.name != want {
            return Err(bad(format!(
                "expected network {want}, found {}",
                entry.name
            )));
        }
        let end = entry
            .offset
            .checked_add(entry.len)
            .filter(|&e| e <= bytes.len());
        let end = end.ok_or_else(|| bad(format!("network {want} overruns the file")))?;
        Mlp::from_bytes(&bytes[entry.offset..end], path)
    };
    for v in 0..manifest.n_views {
        let encoder = next(&format!("view{v}.encoder"))?;
        let decoder = next(&format!("view{v}.decoder"))?;
        let mut predictors = Vec::with_capacity(manifest.n_views);
        for p in 0..manifest.n_views {
            predictors.push(if p == v {
                None
            } else {
                Some(next(&format!("view{v}.predictor{p}"))?)
            });
        }
        views.push(ViewModel {
            encoder,
            decoder,
            predictors,
        });
    }
    if nets.next().is_some() {
        return Err(bad("manifest lists extra networks".into()));
    }
    MultiViewModel::from_parts(views, manifest.latent_dim, manifest.sub_dim)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_mask, synthetic, SynthParams};
    use crate::model::ContrastTarget;
    use crate::nn::{Activation, DenseLayer};
    use ndarray::Array1;

    fn small_cfg() -> ModelConfig {
        ModelConfig {
            latent_dim: 6,
            sub_dim: 3,
            lambda1: 1.0,
            lambda2: 1.0,
            use_recon: true,
            contrast_target: ContrastTarget::Sub,
            cross_view_negatives: false,
            predictor_grad_to_encoders: true,
            encoder_hidden: vec![12],
            lr: 1e-2,
            epochs_pretrain: 5,
            epochs_joint: 5,
            batch: None,
            seed: 3,
        }
    }

    fn small_data() -> MultiViewDataset {
        synthetic(SynthParams {
            n: 40,
            k: 2,
            v: 2,
            sep: 5.0,
            seed: 1,
        })
        .unwrap()
    }

    #[test]
    fn zero_pretrain_epochs_leave_init() {
        let ds = small_data();
        let mask = ObservationMask::complete(40, 2);
        let cfg = ModelConfig {
            epochs_pretrain: 0,
            ..small_cfg()
        };
        let st = pretrain(&ds, &mask, &cfg).unwrap();
        assert_eq!(
            st.model,
            MultiViewModel::new(&ds.view_dims(), &cfg).unwrap()
        );
        assert!(st.pretrain_trace.rows().is_empty());
    }

    #[test]
    fn linear_autoencoder_learns_subspace() {
        // two views living in a 2-dimensional subspace, linear nets of width 2
        let n = 50;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let basis = Array2::from_shape_fn((2, 5), |(i, j)| ((i * 5 + j) as f64 * 0.7).sin());
        let coeff: Array2<f64> =
            Array2::from_shape_simple_fn((n, 2), || rand::Rng::random_range(&mut rng, -1.0..1.0));
        let x = coeff.dot(&basis);
        let ds = MultiViewDataset::new("lin", vec![x.clone(), x], None, 1).unwrap();
        let cfg = ModelConfig {
            latent_dim: 2,
            sub_dim: 1,
            encoder_hidden: vec![],
            lr: 1e-2,
            epochs_pretrain: 3000,
            ..small_cfg()
        };
        let st = pretrain(&ds, &ObservationMask::complete(n, 2), &cfg).unwrap();
        let rows = st.pretrain_trace.rows();
        assert!(rows[0].losses.lz > 0.1);
        assert!(rows.last().unwrap().losses.lz < 1e-4, "{:?}", rows.last());
    }

    #[test]
    fn joint_with_zero_lambdas_continues_pretraining() {
        let ds = small_data();
        let mask = generate_mask(40, 2, 0.3, 2).unwrap();
        let long = pretrain(
            &ds,
            &mask,
            &ModelConfig {
                epochs_pretrain: 10,
                ..small_cfg()
            },
        )
        .unwrap();
        let cfg = ModelConfig {
            lambda1: 0.0,
            lambda2: 0.0,
            epochs_pretrain: 5,
            epochs_joint: 5,
            ..small_cfg()
        };
        let st = pretrain(&ds, &mask, &cfg).unwrap();
        let st = train_joint(st, &ds, &mask, None).unwrap();
        for (a, b) in long.pretrain_trace.rows()[5..].iter().zip(st.trace.rows()) {
            assert!((a.losses.lz - b.losses.lz).abs() < 1e-12);
        }
        // encoders and decoders match; predictors never move
        for v in 0..2 {
            assert_eq!(long.model.views[v].encoder, st.model.views[v].encoder);
            assert_eq!(long.model.views[v].decoder, st.model.views[v].decoder);
        }
    }

    #[test]
    fn joint_requires_complete_samples() {
        let ds = small_data();
        let mut m = Array2::from_elem((40, 2), true);
        for i in 0..40 {
            m[[i, i % 2]] = false;
        }
        let mask = ObservationMask::from_matrix(m, 1.0, 0).unwrap();
        let st = pretrain(&ds, &mask, &small_cfg()).unwrap();
        assert!(matches!(
            train_joint(st, &ds, &mask, None),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn best_checkpoint_is_trace_minimum() {
        let ds = small_data();
        let mask = generate_mask(40, 2, 0.5, 4).unwrap();
        let st = pretrain(&ds, &mask, &small_cfg()).unwrap();
        let st = train_joint(st, &ds, &mask, None).unwrap();
        let best = st.best().unwrap();
        let trace_min = st
            .trace
            .rows()
            .iter()
            .map(|r| r.total)
            .fold(f64::INFINITY, f64::min);
        assert!(best.total <= trace_min);
        let mut m = st.model.clone();
        m.set_flat_params(&best.params).unwrap();
        let check = RunState {
            model: m,
            ..st.clone()
        };
        let p = evaluate(&check, &ds, &mask, ObjectiveWeights::joint(&st.cfg)).unwrap();
        assert!((total_loss(p, &st.cfg).unwrap() - best.total).abs() < 1e-9);
    }

    #[test]
    fn embed_flags_absent_entries() {
        let ds = small_data();
        let mask = generate_mask(40, 2, 0.5, 0).unwrap();
        let st = pretrain(&ds, &mask, &small_cfg()).unwrap();
        let b = embed(&st, &ds, &mask).unwrap();
        assert_eq!(b.count(Provenance::Absent), mask.missing_entries());
        for v in 0..2 {
            assert_eq!(b.sub(v), b.z(v).slice(ndarray::s![.., ..3]));
        }
        let full = embed(&st, &ds, &ObservationMask::complete(40, 2)).unwrap();
        assert_eq!(full.count(Provenance::Absent), 0);
    }

    #[test]
    fn nan_input_reports_epoch() {
        let ds = small_data();
        let mask = ObservationMask::complete(40, 2);
        let mut st = RunState::new(&ds, &small_cfg()).unwrap();
        // a huge weight overflows the forward pass to infinity
        let layer = DenseLayer::new(
            Array2::from_elem((6, 16), 1e308),
            Array1::zeros(6),
            Activation::Linear,
        )
        .unwrap();
        st.model.views[0].encoder = Mlp::new(vec![layer]).unwrap();
        let err = pretrain_state(&mut st, &ds, &mask, 2).unwrap_err();
        assert!(
            matches!(&err, Error::Training(m) if m.contains("epoch 0")),
            "{err}"
        );
    }

    #[test]
    fn checkpoint_round_trip() {
        let ds = small_data();
        let st = RunState::new(&ds, &small_cfg()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("checkpoint.bin");
        save_checkpoint(&st.model, None, &path).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), st.model);
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[20] ^= 1;
        std::fs::write(&path, bytes).unwrap();
        assert!(load_checkpoint(&path).is_err());
    }
}
