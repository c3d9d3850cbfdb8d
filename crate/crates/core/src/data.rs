//! Multi-view datasets, observation masks and the synthetic generator.

use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, Axis};
use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::io::{self, LeReader};
use crate::{Error, Result};

const PACKED_MAGIC: &[u8; 4] = b"MVC1";

/// On-disk dataset layouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetFormat {
    /// `<prefix>.view<k>.csv` per view (k from 0) plus optional `<prefix>.labels.csv`.
    CsvPerView,
    /// Single little-endian file tagged `MVC1`.
    PackedBinary,
}

impl std::str::FromStr for DatasetFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv-per-view" | "csv" => Ok(Self::CsvPerView),
            "packed-binary" | "bin" => Ok(Self::PackedBinary),
            other => Err(Error::Param(format!("unknown dataset format {other:?}"))),
        }
    }
}

/// Aligned feature matrices for `V` views of the same `N` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiViewDataset {
    views: Vec<Array2<f64>>,
    labels: Option<Vec<usize>>,
    k: usize,
    name: String,
}

impl MultiViewDataset {
    /// Validates and wraps the given views. `k` is the cluster count; when
    /// labels are present every class in `0..k` must occur.
    pub fn new(
        name: impl Into<String>,
        views: Vec<Array2<f64>>,
        labels: Option<Vec<usize>>,
        k: usize,
    ) -> Result<Self> {
        if views.len() < 2 {
            return Err(Error::Structure(format!(
                "need at least 2 views, got {}",
                views.len()
            )));
        }
        let n = views[0].nrows();
        if let Some((v, m)) = views.iter().enumerate().find(|(_, m)| m.nrows() != n) {
            return Err(Error::Structure(format!(
                "row-count mismatch: view 0 has {n} rows but view {v} has {}",
                m.nrows()
            )));
        }
        if n < 2 {
            return Err(Error::Structure(format!(
                "need at least 2 samples, got {n}"
            )));
        }
        if let Some(v) = views.iter().position(|m| m.ncols() == 0) {
            return Err(Error::Structure(format!("view {v} has no features")));
        }
        for (v, m) in views.iter().enumerate() {
            if let Some(((r, c), _)) = m.indexed_iter().find(|(_, x)| !x.is_finite()) {
                return Err(Error::NonFinite {
                    file: format!("view {v}"),
                    row: r,
                    col: c,
                });
            }
        }
        if k == 0 {
            return Err(Error::Structure("cluster count K must be positive".into()));
        }
        if let Some(labels) = &labels {
            if labels.len() != n {
                return Err(Error::Structure(format!(
                    "label count {} does not match sample count {n}",
                    labels.len()
                )));
            }
            let mut seen = vec![false; k];
            for (i, &l) in labels.iter().enumerate() {
                if l >= k {
                    return Err(Error::Structure(format!(
                        "label {l} at row {i} outside [0, {k})"
                    )));
                }
                seen[l] = true;
            }
            if let Some(missing) = seen.iter().position(|s| !s) {
                return Err(Error::Structure(format!(
                    "label value {missing} never occurs (K = {k})"
                )));
            }
        }
        Ok(Self {
            views,
            labels,
            k,
            name: name.into(),
        })
    }

    pub fn n_samples(&self) -> usize {
        self.views[0].nrows()
    }

    pub fn n_views(&self) -> usize {
        self.views.len()
    }

    pub fn view(&self, v: usize) -> &Array2<f64> {
        &self.views[v]
    }

    pub fn views(&self) -> &[Array2<f64>] {
        &self.views
    }

    pub fn view_dims(&self) -> Vec<usize> {
        self.views.iter().map(|m| m.ncols()).collect()
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Writes the dataset in `format`; for CSV `path` is the file prefix.
    /// Returns the list of files written.
    pub fn save(&self, path: &Path, format: DatasetFormat) -> Result<Vec<PathBuf>> {
        match format {
            DatasetFormat::CsvPerView => {
                let mut written = Vec::new();
                for (v, m) in self.views.iter().enumerate() {
                    let p = view_csv_path(path, v);
                    io::write_string(&p, &io::matrix_to_csv(m))?;
                    written.push(p);
                }
                if let Some(labels) = &self.labels {
                    let p = labels_csv_path(path);
                    let text: String = labels.iter().map(|l| format!("{l}\n")).collect();
                    io::write_string(&p, &text)?;
                    written.push(p);
                }
                Ok(written)
            }
            DatasetFormat::PackedBinary => {
                let mut out = Vec::new();
                out.extend_from_slice(PACKED_MAGIC);
                io::put_u32(&mut out, io::to_u32(self.n_views(), "view count")?);
                io::put_u32(&mut out, io::to_u32(self.n_samples(), "sample count")?);
                for m in &self.views {
                    io::put_u32(&mut out, io::to_u32(m.ncols(), "feature count")?);
                }
                for m in &self.views {
                    for x in m.iter() {
                        io::put_f64(&mut out, *x);
                    }
                }
                if let Some(labels) = &self.labels {
                    for &l in labels {
                        io::put_u32(&mut out, io::to_u32(l, "label")?);
                    }
                }
                io::write_bytes(path, &out)?;
                Ok(vec![path.to_path_buf()])
            }
        }
    }

    /// Files that make up this dataset on disk, in a stable order.
    pub fn files_on_disk(path: &Path, format: DatasetFormat) -> Vec<PathBuf> {
        match format {
            DatasetFormat::PackedBinary => vec![path.to_path_buf()],
            DatasetFormat::CsvPerView => {
                let mut files: Vec<PathBuf> = (0..)
                    .map(|v| view_csv_path(path, v))
                    .take_while(|p| p.exists())
                    .collect();
                let labels = labels_csv_path(path);
                if labels.exists() {
                    files.push(labels);
                }
                files
            }
        }
    }
}

pub fn view_csv_path(prefix: &Path, v: usize) -> PathBuf {
    suffixed(prefix, &format!(".view{v}.csv"))
}

pub fn labels_csv_path(prefix: &Path) -> PathBuf {
    suffixed(prefix, ".labels.csv")
}

fn suffixed(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_os_string();
    s.push(suffix);
    PathBuf::from(s)
}

/// Loads a dataset. `k` is required when the files carry no labels; with
/// labels it defaults to `max(label) + 1` and, if given, must agree.
pub fn load_dataset(
    path: &Path,
    format: DatasetFormat,
    k: Option<usize>,
) -> Result<MultiViewDataset> {
    let name = path
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    let (views, labels) = match format {
        DatasetFormat::CsvPerView => load_csv_views(path)?,
        DatasetFormat::PackedBinary => load_packed(path)?,
    };
    let k = match (&labels, k) {
        (Some(l), given) => {
            let inferred = l.iter().copied().max().map_or(0, |m| m + 1);
            if let Some(g) = given {
                if g != inferred {
                    return Err(Error::Structure(format!(
                        "K = {g} given but labels span {inferred} classes"
                    )));
                }
            }
            inferred
        }
        (None, Some(g)) => g,
        (None, None) => {
            return Err(Error::Structure(
                "dataset has no labels; cluster count K must be supplied".into(),
            ))
        }
    };
    MultiViewDataset::new(name, views, labels, k)
}

type Loaded = (Vec<Array2<f64>>, Option<Vec<usize>>);

fn load_csv_views(prefix: &Path) -> Result<Loaded> {
    let mut views = Vec::new();
    loop {
        let p = view_csv_path(prefix, views.len());
        if !p.exists() {
            break;
        }
        views.push(io::parse_matrix_csv(&p)?);
    }
    if views.is_empty() {
        return Err(Error::io(
            view_csv_path(prefix, 0),
            std::io::Error::new(std::io::ErrorKind::NotFound, "no view files found"),
        ));
    }
    if let Some(v) = views.iter().position(|m| m.nrows() != views[0].nrows()) {
        return Err(Error::Structure(format!(
            "row-count mismatch: {} has {} rows but {} has {}",
            view_csv_path(prefix, 0).display(),
            views[0].nrows(),
            view_csv_path(prefix, v).display(),
            views[v].nrows()
        )));
    }
    let lp = labels_csv_path(prefix);
    let labels = if lp.exists() {
        let text = io::read_to_string(&lp)?;
        let file = lp.display().to_string();
        let mut labels = Vec::new();
        for (row, line) in text.lines().enumerate() {
            let cell = line.trim();
            if cell.is_empty() {
                return Err(Error::Structure(format!(
                    "{file}: missing label at row {row}"
                )));
            }
            labels.push(cell.parse::<usize>().map_err(|_| Error::Parse {
                file: file.clone(),
                row,
                col: 0,
                cell: cell.to_string(),
            })?);
        }
        // trailing empty lines are not labels
        if labels.len() != views[0].nrows() {
            return Err(Error::Structure(format!(
                "{file}: {} labels for {} samples",
                labels.len(),
                views[0].nrows()
            )));
        }
        Some(labels)
    } else {
        None
    };
    Ok((views, labels))
}

fn load_packed(path: &Path) -> Result<Loaded> {
    let bytes = io::read_bytes(path)?;
    let mut r = LeReader::new(&bytes, path);
    if r.take(4)? != PACKED_MAGIC {
        return Err(r.error("bad magic, expected MVC1"));
    }
    let v = r.u32()? as usize;
    let n = r.u32()? as usize;
    let dims: Vec<usize> = (0..v)
        .map(|_| r.u32().map(|d| d as usize))
        .collect::<Result<_>>()?;
    let mut views = Vec::with_capacity(v);
    for (vi, &m) in dims.iter().enumerate() {
        let mut data = Vec::with_capacity(n * m);
        for idx in 0..n * m {
            let x = r.f64()?;
            if !x.is_finite() {
                return Err(Error::NonFinite {
                    file: format!("{} view {vi}", path.display()),
                    row: idx / m.max(1),
                    col: idx % m.max(1),
                });
            }
            data.push(x);
        }
        views.push(Array2::from_shape_vec((n, m), data).map_err(|e| r.error(e.to_string()))?);
    }
    let labels = match r.remaining() {
        0 => None,
        rem if rem == 4 * n => Some(
            (0..n)
                .map(|_| r.u32().map(|l| l as usize))
                .collect::<Result<_>>()?,
        ),
        rem => {
            return Err(r.error(format!(
                "{rem} trailing bytes; expected 0 or {} for labels",
                4 * n
            )))
        }
    };
    Ok((views, labels))
}

/// Rescales every column of every view to `[0, 1]`; constant columns become 0.
pub fn normalize_minmax(ds: &MultiViewDataset) -> MultiViewDataset {
    let views = ds
        .views
        .iter()
        .map(|m| {
            let mut out = m.clone();
            for mut col in out.columns_mut() {
                let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let span = hi - lo;
                if span > 0.0 {
                    col.mapv_inplace(|x| ((x - lo) / span).clamp(0.0, 1.0));
                } else {
                    col.fill(0.0);
                }
            }
            out
        })
        .collect();
    MultiViewDataset {
        views,
        labels: ds.labels.clone(),
        k: ds.k,
        name: ds.name.clone(),
    }
}

/// Which views are observed for each sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationMask {
    mask: Array2<bool>,
    eta: f64,
    seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct MaskSidecar {
    eta: f64,
    seed: u64,
    n: usize,
    v: usize,
}

/// Number of complete rows for `n` samples at missing rate `eta`, rounding
/// halves up.
pub fn complete_count(n: usize, eta: f64) -> usize {
    (n as f64 * (1.0 - eta) + 0.5).floor() as usize
}

impl ObservationMask {
    /// Wraps an explicit mask, checking that no row is empty.
    pub fn from_matrix(mask: Array2<bool>, eta: f64, seed: u64) -> Result<Self> {
        if let Some(i) = mask.rows().into_iter().position(|r| !r.iter().any(|&b| b)) {
            return Err(Error::Data(format!("sample {i} has no observed views")));
        }
        Ok(Self { mask, eta, seed })
    }

    pub fn complete(n: usize, v: usize) -> Self {
        Self {
            mask: Array2::from_elem((n, v), true),
            eta: 0.0,
            seed: 0,
        }
    }

    pub fn n_samples(&self) -> usize {
        self.mask.nrows()
    }

    pub fn n_views(&self) -> usize {
        self.mask.ncols()
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn matrix(&self) -> &Array2<bool> {
        &self.mask
    }

    pub fn is_observed(&self, i: usize, v: usize) -> bool {
        self.mask[[i, v]]
    }

    pub fn is_complete(&self, i: usize) -> bool {
        self.mask.row(i).iter().all(|&b| b)
    }

    /// Rows in which view `v` is observed, ascending.
    pub fn observed_rows(&self, v: usize) -> Vec<usize> {
        (0..self.n_samples())
            .filter(|&i| self.mask[[i, v]])
            .collect()
    }

    pub fn missing_entries(&self) -> usize {
        self.mask.iter().filter(|&&b| !b).count()
    }

    pub fn save(&self, csv_path: &Path) -> Result<()> {
        let mut text = String::with_capacity(self.mask.len() * 2);
        for row in self.mask.rows() {
            let cells: Vec<&str> = row.iter().map(|&b| if b { "1" } else { "0" }).collect();
            text.push_str(&cells.join(","));
            text.push('\n');
        }
        io::write_string(csv_path, &text)?;
        let side = MaskSidecar {
            eta: self.eta,
            seed: self.seed,
            n: self.n_samples(),
            v: self.n_views(),
        };
        io::write_string(
            &csv_path.with_extension("json"),
            &serde_json::to_string_pretty(&side)?,
        )
    }

    pub fn load(csv_path: &Path) -> Result<Self> {
        let m = io::parse_matrix_csv(csv_path)?;
        let side: MaskSidecar =
            serde_json::from_str(&io::read_to_string(&csv_path.with_extension("json"))?)?;
        if m.dim() != (side.n, side.v) {
            return Err(Error::Format {
                path: csv_path.to_path_buf(),
                msg: format!(
                    "mask is {:?} but sidecar says {}x{}",
                    m.dim(),
                    side.n,
                    side.v
                ),
            });
        }
        if let Some(x) = m.iter().find(|&&x| x != 0.0 && x != 1.0) {
            return Err(Error::Format {
                path: csv_path.to_path_buf(),
                msg: format!("mask entries must be 0 or 1, found {x}"),
            });
        }
        Self::from_matrix(m.mapv(|x| x == 1.0), side.eta, side.seed)
    }
}

/// Draws a mask with `round(n(1-eta))` complete rows. Each incomplete row
/// keeps one view (two-view case) or a uniformly random nonempty proper
/// subset of views.
pub fn generate_mask(n: usize, v: usize, eta: f64, seed: u64) -> Result<ObservationMask> {
    if !(0.0..1.0).contains(&eta) {
        return Err(Error::Param(format!("missing rate {eta} outside [0, 1)")));
    }
    if v < 2 {
        return Err(Error::Param(format!("need at least 2 views, got {v}")));
    }
    if v > 63 {
        return Err(Error::Param(format!("at most 63 views supported, got {v}")));
    }
    let m = complete_count(n, eta);
    if m < 1 {
        return Err(Error::Param(format!(
            "n(1-eta) = {} leaves no complete sample",
            n as f64 * (1.0 - eta)
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mask = Array2::from_elem((n, v), false);
    let mut complete = vec![false; n];
    for i in index::sample(&mut rng, n, m) {
        complete[i] = true;
    }
    // proper nonempty subsets are bitmasks 1..=2^v-2
    let n_subsets = (1u64 << v) - 2;
    for (i, &is_complete) in complete.iter().enumerate() {
        if is_complete {
            mask.row_mut(i).fill(true);
        } else if v == 2 {
            mask[[i, rng.random_range(0..2)]] = true;
        } else {
            let bits = rng.random_range(1..=n_subsets);
            for j in 0..v {
                mask[[i, j]] = bits >> j & 1 == 1;
            }
        }
    }
    Ok(ObservationMask { mask, eta, seed })
}

/// Sorted indices of rows with every view observed.
pub fn complete_index(mask: &ObservationMask) -> Vec<usize> {
    (0..mask.n_samples())
        .filter(|&i| mask.is_complete(i))
        .collect()
}

/// Parameters for [`synthetic`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub n: usize,
    pub k: usize,
    pub v: usize,
    /// Distance between cluster centres in the shared latent space, in units
    /// of the within-cluster standard deviation.
    pub sep: f64,
    pub seed: u64,
}

/// Dimension of the shared latent space the synthetic views are drawn from.
pub const SYNTH_LATENT_DIM: usize = 8;
/// Standard deviation of each view's private perturbation of the shared
/// latent, relative to the within-cluster spread.
const SYNTH_VIEW_NOISE: f64 = 0.5;
/// Gain applied before the `tanh`.
const SYNTH_GAIN: f64 = 0.5;
const SYNTH_NOISE: f64 = 0.05;

/// Generates `k` Gaussian clusters in a shared latent space and pushes them
/// through a distinct random affine + tanh map per view. Each view sees the
/// shared latent through its own private Gaussian perturbation, so views
/// agree only on the shared part, and gets additive feature noise. Labels
/// are balanced and shuffled.
pub fn synthetic(p: SynthParams) -> Result<MultiViewDataset> {
    if p.k == 0 || p.n < 2 * p.k {
        return Err(Error::Param(format!(
            "need n >= 2k, got n = {}, k = {}",
            p.n, p.k
        )));
    }
    if p.sep.is_nan() || p.sep <= 0.0 {
        return Err(Error::Param(format!(
            "separation must be positive, got {}",
            p.sep
        )));
    }
    if p.v < 2 {
        return Err(Error::Param(format!("need at least 2 views, got {}", p.v)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let dim = SYNTH_LATENT_DIM.max(p.k);
    let centers = orthonormal_columns(&mut rng, dim, p.k) * (p.sep / std::f64::consts::SQRT_2);

    let mut labels: Vec<usize> = (0..p.n).map(|i| i % p.k).collect();
    labels.shuffle(&mut rng);
    let mut shared = Array2::<f64>::zeros((p.n, dim));
    for (i, &c) in labels.iter().enumerate() {
        for j in 0..dim {
            shared[[i, j]] = centers[[j, c]] + rng.sample::<f64, _>(StandardNormal);
        }
    }

    let mut views = Vec::with_capacity(p.v);
    for v in 0..p.v {
        let m = 16 + 8 * v;
        let private = &shared + &(gaussian(&mut rng, (p.n, dim)) * SYNTH_VIEW_NOISE);
        let a = gaussian(&mut rng, (dim, m)) / (dim as f64).sqrt();
        let bias: Array1<f64> = (0..m)
            .map(|_| 0.5 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let pre = private.dot(&a) * SYNTH_GAIN + &bias.insert_axis(Axis(0));
        let noise = gaussian(&mut rng, (p.n, m)) * SYNTH_NOISE;
        views.push(pre.mapv(f64::tanh) + noise);
    }
    MultiViewDataset::new(
        format!("synth_n{}_k{}_v{}_seed{}", p.n, p.k, p.v, p.seed),
        views,
        Some(labels),
        p.k,
    )
}

fn gaussian(rng: &mut ChaCha8Rng, shape: (usize, usize)) -> Array2<f64> {
    Array2::from_shape_simple_fn(shape, || rng.sample(StandardNormal))
}

/// `dim x k` matrix with orthonormal columns (modified Gram-Schmidt).
fn orthonormal_columns(rng: &mut ChaCha8Rng, dim: usize, k: usize) -> Array2<f64> {
    let mut q = gaussian(rng, (dim, k));
    for j in 0..k {
        for prev in 0..j {
            let proj = q.column(j).dot(&q.column(prev));
            let prev_col = q.column(prev).to_owned();
            q.column_mut(j).scaled_add(-proj, &prev_col);
        }
        let norm = q.column(j).dot(&q.column(j)).sqrt();
        q.column_mut(j).mapv_inplace(|x| x / norm);
    }
    q
}
