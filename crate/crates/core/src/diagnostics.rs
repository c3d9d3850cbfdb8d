//! Embedding spectra for detecting dimensional collapse, and per-epoch
//! convergence traces.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use ndarray::{ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::io;
use crate::metrics::Scores;
use crate::model::LossParts;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    /// Singular values of the column-centred embedding, descending.
    pub singular_values: Vec<f64>,
    /// `exp(-sum p_i ln p_i)` with `p_i = s_i / sum s`.
    pub effective_rank: f64,
    /// Fraction of dimensions needed to hold 99% of the squared spectrum.
    pub participation: f64,
}

/// Singular spectrum of `emb` after subtracting the column means.
pub fn spectrum(emb: ArrayView2<'_, f64>) -> Result<SpectrumReport> {
    let (n, d) = emb.dim();
    if n < 2 || d == 0 {
        return Err(Error::Param(format!(
            "spectrum needs at least 2 rows and 1 column, got {n}x{d}"
        )));
    }
    let mean = emb.mean_axis(Axis(0)).expect("nonempty");
    let centred = &emb - &mean.insert_axis(Axis(0));
    let m = DMatrix::from_fn(n, d, |i, j| centred[[i, j]]);
    let mut sv: Vec<f64> = m.singular_values().iter().map(|s| s.max(0.0)).collect();
    sv.sort_by(|a, b| b.total_cmp(a));

    let top = sv.first().copied().unwrap_or(0.0);
    // values at round-off level relative to the largest one carry no rank
    let floor = top * 1e-12 * (n.max(d) as f64);
    let kept: Vec<f64> = sv.iter().copied().filter(|&s| s > floor).collect();
    let sum: f64 = kept.iter().sum();
    let effective_rank = if sum > 0.0 {
        let h: f64 = kept
            .iter()
            .map(|&s| {
                let p = s / sum;
                -p * p.ln()
            })
            .sum();
        h.exp()
    } else {
        1.0
    };

    let energy: f64 = sv.iter().map(|s| s * s).sum();
    let participation = if energy > 0.0 {
        let mut acc = 0.0;
        let mut count = 0;
        for s in &sv {
            acc += s * s;
            count += 1;
            if acc >= 0.99 * energy {
                break;
            }
        }
        count as f64 / d as f64
    } else {
        0.0
    };
    Ok(SpectrumReport {
        singular_values: sv,
        effective_rank,
        participation,
    })
}

impl SpectrumReport {
    /// One singular value per line under a `singular_value` header.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("index,singular_value\n");
        for (i, v) in self.singular_values.iter().enumerate() {
            let _ = writeln!(s, "{i},{v}");
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub epoch: usize,
    pub losses: LossParts,
    pub total: f64,
    pub scores: Option<Scores>,
}

/// Append-only per-epoch record of losses and, when labels exist, scores.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceLog {
    rows: Vec<TraceRow>,
}

pub const TRACE_HEADER: &str = "epoch,Lz,Lc,Lr,total,acc,nmi,ari";

impl ConvergenceLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn rows(&self) -> &[TraceRow] {
        &self.rows
    }

    pub fn push(
        &mut self,
        epoch: usize,
        losses: LossParts,
        total: f64,
        scores: Option<Scores>,
    ) -> Result<()> {
        if let Some(last) = self.rows.last() {
            if epoch <= last.epoch {
                return Err(Error::Contract(format!(
                    "trace epoch {epoch} does not follow {}",
                    last.epoch
                )));
            }
        }
        self.rows.push(TraceRow {
            epoch,
            losses,
            total,
            scores,
        });
        Ok(())
    }

    /// CSV with the fixed header; score cells are empty when absent.
    pub fn to_csv(&self) -> String {
        let mut s = format!("{TRACE_HEADER}\n");
        for r in &self.rows {
            let _ = write!(
                s,
                "{},{},{},{},{}",
                r.epoch, r.losses.lz, r.losses.lc, r.losses.lr, r.total
            );
            match r.scores {
                Some(sc) => {
                    let _ = writeln!(s, ",{},{},{}", sc.acc, sc.nmi, sc.ari);
                }
                None => s.push_str(",,,\n"),
            }
        }
        s
    }

    pub fn from_csv(path: &Path) -> Result<Self> {
        let text = io::read_to_string(path)?;
        let bad = |msg: String| Error::Format {
            path: path.to_path_buf(),
            msg,
        };
        let mut lines = text.lines();
        if lines.next() != Some(TRACE_HEADER) {
            return Err(bad("unexpected trace header".into()));
        }
        let mut log = Self::new();
        for (k, line) in lines.enumerate() {
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != 8 {
                return Err(bad(format!("line {}: expected 8 cells", k + 2)));
            }
            let num = |i: usize| -> Result<f64> {
                cells[i]
                    .parse()
                    .map_err(|_| bad(format!("line {}: bad number {:?}", k + 2, cells[i])))
            };
            let epoch = cells[0]
                .parse()
                .map_err(|_| bad(format!("line {}: bad epoch", k + 2)))?;
            let scores = if cells[5].is_empty() {
                None
            } else {
                Some(Scores {
                    acc: num(5)?,
                    nmi: num(6)?,
                    ari: num(7)?,
                })
            };
            log.push(
                epoch,
                LossParts {
                    lz: num(1)?,
                    lc: num(2)?,
                    lr: num(3)?,
                },
                num(4)?,
                scores,
            )?;
        }
        Ok(log)
    }

    pub fn summary(&self) -> Option<TraceSummary> {
        let last = self.rows.last()?;
        let col = |f: &dyn Fn(&TraceRow) -> f64| ColumnSummary {
            min: self.rows.iter().map(f).fold(f64::INFINITY, f64::min),
            max: self.rows.iter().map(f).fold(f64::NEG_INFINITY, f64::max),
            first: f(&self.rows[0]),
            last: f(last),
        };
        Some(TraceSummary {
            epochs: self.rows.len(),
            lz: col(&|r| r.losses.lz),
            lc: col(&|r| r.losses.lc),
            lr: col(&|r| r.losses.lr),
            total: col(&|r| r.total),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnSummary {
    pub min: f64,
    pub max: f64,
    pub first: f64,
    pub last: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub epochs: usize,
    pub lz: ColumnSummary,
    pub lc: ColumnSummary,
    pub lr: ColumnSummary,
    pub total: ColumnSummary,
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn rank_one_matrix() {
        let dir = array![1.0, -2.0, 0.5];
        let emb = Array2::from_shape_fn((6, 3), |(i, j)| (i as f64 + 1.0) * dir[j]);
        let r = spectrum(emb.view()).unwrap();
        assert!((r.effective_rank - 1.0).abs() < 1e-9, "{r:?}");
    }

    #[test]
    fn two_equal_singular_values() {
        // centred rows +-e1, +-e2 give two equal singular values
        let emb = array![
            [1.0, 0.0, 0.0],
            [-1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, -1.0, 0.0]
        ];
        let r = spectrum(emb.view()).unwrap();
        assert!((r.effective_rank - 2.0).abs() < 1e-9, "{r:?}");
        assert!((r.participation - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn isotropic_gaussian_near_full_rank() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let emb = Array2::from_shape_simple_fn((1000, 8), || StandardNormal.sample(&mut rng));
        let r = spectrum(emb.view()).unwrap();
        assert!((r.effective_rank - 8.0).abs() < 0.5, "{r:?}");
        assert!(r.singular_values.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn invariant_to_permutation_and_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let emb = Array2::from_shape_simple_fn((30, 5), || StandardNormal.sample(&mut rng));
        let base = spectrum(emb.view()).unwrap();
        let mut perm: Vec<usize> = (0..30).collect();
        perm.reverse();
        let permuted = emb.select(Axis(0), &perm);
        let p = spectrum(permuted.view()).unwrap();
        for (a, b) in base.singular_values.iter().zip(&p.singular_values) {
            assert!((a - b).abs() < 1e-10);
        }
        let scaled = spectrum((&emb * 7.5).view()).unwrap();
        assert!((scaled.effective_rank - base.effective_rank).abs() < 1e-10);
    }

    #[test]
    fn trace_rows_and_order() {
        let mut log = ConvergenceLog::new();
        for e in 0..3 {
            log.push(
                e,
                LossParts {
                    lz: 3.0 - e as f64,
                    lc: -1.0,
                    lr: 0.5,
                },
                1.0,
                None,
            )
            .unwrap();
        }
        assert_eq!(log.rows().len(), 3);
        assert!(log.push(2, LossParts::default(), 0.0, None).is_err());
        let csv = log.to_csv();
        assert!(csv.starts_with(TRACE_HEADER));
        assert!(csv.lines().nth(1).unwrap().ends_with(",,,"));
        let s = log.summary().unwrap();
        assert_eq!((s.lz.min, s.lz.max, s.lz.last), (1.0, 3.0, 1.0));

        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("trace.csv");
        log.push(
            5,
            LossParts::default(),
            0.0,
            Some(Scores {
                acc: 0.9,
                nmi: 0.8,
                ari: 0.7,
            }),
        )
        .unwrap();
        std::fs::write(&p, log.to_csv()).unwrap();
        assert_eq!(ConvergenceLog::from_csv(&p).unwrap(), log);
    }
}
