//! Latent bundles, missing-view imputation and view fusion.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{s, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::data::ObservationMask;
use crate::io;
use crate::model::MultiViewModel;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Observed,
    Recovered,
    Absent,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Observed => "observed",
            Provenance::Recovered => "recovered",
            Provenance::Absent => "absent",
        }
    }
}

/// Per-view latent matrices with a provenance flag per (sample, view).
/// Absent entries hold zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentBundle {
    z: Vec<Array2<f64>>,
    sub_dim: usize,
    provenance: Array2<Provenance>,
}

impl LatentBundle {
    pub fn new(
        z: Vec<Array2<f64>>,
        sub_dim: usize,
        provenance: Array2<Provenance>,
    ) -> Result<Self> {
        let (n, v) = provenance.dim();
        if z.len() != v {
            return Err(Error::Contract(format!(
                "{} latent matrices for {v} views",
                z.len()
            )));
        }
        let d = z.first().map_or(0, |m| m.ncols());
        if let Some(bad) = z.iter().position(|m| m.dim() != (n, d)) {
            return Err(Error::Contract(format!(
                "latent matrix {bad} is {:?}, expected {:?}",
                z[bad].dim(),
                (n, d)
            )));
        }
        if sub_dim == 0 || sub_dim > d {
            return Err(Error::Contract(format!(
                "sub_dim {sub_dim} outside [1, {d}]"
            )));
        }
        Ok(Self {
            z,
            sub_dim,
            provenance,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.provenance.nrows()
    }

    pub fn n_views(&self) -> usize {
        self.z.len()
    }

    pub fn latent_dim(&self) -> usize {
        self.z[0].ncols()
    }

    pub fn sub_dim(&self) -> usize {
        self.sub_dim
    }

    pub fn z(&self, v: usize) -> &Array2<f64> {
        &self.z[v]
    }

    /// The leading `sub_dim` columns of view `v`'s latents.
    pub fn sub(&self, v: usize) -> ArrayView2<'_, f64> {
        self.z[v].slice(s![.., ..self.sub_dim])
    }

    pub fn provenance(&self) -> &Array2<Provenance> {
        &self.provenance
    }

    pub fn count(&self, p: Provenance) -> usize {
        self.provenance.iter().filter(|&&x| x == p).count()
    }

    /// Writes `sample_id,view,dim0..dim{D-1},provenance`, one line per
    /// non-absent (sample, view) entry.
    pub fn to_csv(&self) -> String {
        let d = self.latent_dim();
        let mut out = String::from("sample_id,view");
        for j in 0..d {
            let _ = write!(out, ",dim{j}");
        }
        out.push_str(",provenance\n");
        for i in 0..self.n_samples() {
            for v in 0..self.n_views() {
                let p = self.provenance[[i, v]];
                if p == Provenance::Absent {
                    continue;
                }
                let _ = write!(out, "{i},{v}");
                for x in self.z[v].row(i) {
                    let _ = write!(out, ",{x}");
                }
                let _ = writeln!(out, ",{}", p.as_str());
            }
        }
        out
    }

    /// Parses the format written by [`LatentBundle::to_csv`].
    pub fn from_csv(path: &Path, n: usize, v: usize, sub_dim: usize) -> Result<Self> {
        let text = io::read_to_string(path)?;
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Format {
            path: path.to_path_buf(),
            msg: "empty file".into(),
        })?;
        let d = header.split(',').count().saturating_sub(3);
        let mut z = vec![Array2::zeros((n, d)); v];
        let mut provenance = Array2::from_elem((n, v), Provenance::Absent);
        let bad = |row: usize, msg: &str| Error::Format {
            path: path.to_path_buf(),
            msg: format!("line {}: {msg}", row + 2),
        };
        for (row, line) in lines.enumerate() {
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != d + 3 {
                return Err(bad(row, "wrong number of cells"));
            }
            let i: usize = cells[0].parse().map_err(|_| bad(row, "bad sample_id"))?;
            let view: usize = cells[1].parse().map_err(|_| bad(row, "bad view"))?;
            if i >= n || view >= v {
                return Err(bad(row, "index out of range"));
            }
            for j in 0..d {
                z[view][[i, j]] = cells[2 + j].parse().map_err(|_| bad(row, "bad value"))?;
            }
            provenance[[i, view]] = match cells[d + 2] {
                "observed" => Provenance::Observed,
                "recovered" => Provenance::Recovered,
                _ => return Err(bad(row, "bad provenance")),
            };
        }
        Self::new(z, sub_dim, provenance)
    }
}

/// Imputes every absent latent from the sample's observed views:
/// `z^p = G(q->p)(z^q)`, averaged over all observed sources `q`.
/// Observed entries are left bit-for-bit unchanged.
pub fn recover_latents(
    model: &MultiViewModel,
    bundle: &LatentBundle,
    mask: &ObservationMask,
) -> Result<LatentBundle> {
    let (n, v_count) = bundle.provenance.dim();
    if mask.n_samples() != n || mask.n_views() != v_count || model.n_views() != v_count {
        return Err(Error::Contract(
            "bundle, mask and model disagree on shape".into(),
        ));
    }
    for i in 0..n {
        if !(0..v_count).any(|v| bundle.provenance[[i, v]] == Provenance::Observed) {
            return Err(Error::Data(format!(
                "sample {i} has no observed view to recover from"
            )));
        }
    }
    let d = bundle.latent_dim();
    let mut out = bundle.clone();
    for p in 0..v_count {
        let targets: Vec<usize> = (0..n)
            .filter(|&i| bundle.provenance[[i, p]] == Provenance::Absent)
            .collect();
        if targets.is_empty() {
            continue;
        }
        let mut sum = Array2::<f64>::zeros((targets.len(), d));
        let mut count = vec![0usize; targets.len()];
        for q in (0..v_count).filter(|&q| q != p) {
            let (pos, src): (Vec<usize>, Vec<usize>) = targets
                .iter()
                .enumerate()
                .filter(|(_, &i)| bundle.provenance[[i, q]] == Provenance::Observed)
                .map(|(k, &i)| (k, i))
                .unzip();
            if src.is_empty() {
                continue;
            }
            let g = model.views[q]
                .predictor(p)
                .ok_or_else(|| Error::Contract(format!("no predictor {q}->{p}")))?;
            let pred = g.predict(bundle.z[q].select(Axis(0), &src).view())?;
            for (k, row) in pos.iter().zip(pred.rows()) {
                let mut acc = sum.row_mut(*k);
                acc += &row;
                count[*k] += 1;
            }
        }
        for (k, &i) in targets.iter().enumerate() {
            let c = count[k] as f64;
            out.z[p].row_mut(i).assign(&sum.row(k).mapv(|x| x / c));
            out.provenance[[i, p]] = Provenance::Recovered;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fusion {
    /// Concatenated sub-vectors, width `V * d0`.
    ConcatSub,
    /// Concatenated full latents, width `V * D`.
    ConcatFull,
}

impl std::str::FromStr for Fusion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "concat_sub" | "sub" => Ok(Fusion::ConcatSub),
            "concat_full" | "full" => Ok(Fusion::ConcatFull),
            other => Err(Error::Param(format!("unknown fusion mode {other:?}"))),
        }
    }
}

/// Clustering input built from a fully recovered bundle.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedFeatures {
    pub matrix: Array2<f64>,
    pub fusion: Fusion,
}

pub fn fuse(bundle: &LatentBundle, mode: Fusion) -> Result<FusedFeatures> {
    let absent = bundle.count(Provenance::Absent);
    if absent > 0 {
        return Err(Error::Contract(format!(
            "{absent} latent entries are still absent; recover before fusing"
        )));
    }
    let width = match mode {
        Fusion::ConcatSub => bundle.sub_dim,
        Fusion::ConcatFull => bundle.latent_dim(),
    };
    let parts: Vec<ArrayView2<'_, f64>> =
        bundle.z.iter().map(|m| m.slice(s![.., ..width])).collect();
    let matrix =
        ndarray::concatenate(Axis(1), &parts).map_err(|e| Error::Contract(e.to_string()))?;
    Ok(FusedFeatures {
        matrix,
        fusion: mode,
    })
}
