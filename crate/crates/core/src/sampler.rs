//! Hierarchical sampling from a GMoE mixing measure and the dataset file format.
//!
//! Each row consumes its stream in this fixed order:
//! 1. one uniform `u ∈ [0, 1)` selecting the atom `Z` by inverse CDF over the weights,
//! 2. `d` standard normals `ε`, giving `X = c_Z + L_Z ε` with `Γ_Z = L_Z L_Zᵀ`,
//! 3. one standard normal `η`, giving `Y = a_Zᵀ X + b_Z + √ν_Z · η`.

use std::io::{Read, Write};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::model::MixingMeasure;
use crate::rng::stream;
use crate::{Error, Result, Scalar};

/// `n` i.i.d. pairs `(X_i, Y_i)`; `x` is row-major `n × d`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<T> {
    dim: usize,
    x: Vec<T>,
    y: Vec<T>,
    pub seed: u64,
    pub source_label: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub seed: u64,
    pub source_label: String,
    pub n: usize,
    pub d: usize,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(dim: usize, x: Vec<T>, y: Vec<T>, seed: u64, source_label: impl Into<String>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dataset dimension must be at least 1"));
        }
        if x.len() != y.len() * dim {
            return Err(Error::DimensionMismatch {
                what: "covariate rows vs responses",
                expected: y.len() * dim,
                got: x.len(),
            });
        }
        Ok(Self {
            dim,
            x,
            y,
            seed,
            source_label: source_label.into(),
        })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.y.len()
    }
    #[inline]
    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }
    #[inline]
    pub fn x_row(&self, i: usize) -> &[T] {
        &self.x[i * self.dim..(i + 1) * self.dim]
    }
    pub fn x(&self) -> &[T] {
        &self.x
    }
    pub fn y(&self) -> &[T] {
        &self.y
    }
    pub fn rows(&self) -> impl Iterator<Item = (&[T], T)> {
        self.x.chunks_exact(self.dim).zip(self.y.iter().copied())
    }

    pub fn meta(&self) -> DatasetMeta {
        DatasetMeta {
            seed: self.seed,
            source_label: self.source_label.clone(),
            n: self.len(),
            d: self.dim,
        }
    }

    /// CSV with header `x1,…,xd,y`; numbers in shortest round-trip form.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = (1..=self.dim).map(|i| format!("x{i}")).collect();
        header.push("y".into());
        w.write_record(&header)?;
        let mut record = Vec::with_capacity(self.dim + 1);
        for (x, y) in self.rows() {
            record.clear();
            record.extend(x.iter().map(|v| v.to_string()));
            record.push(y.to_string());
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(buf)
    }

    /// Reads the CSV format written by [`Dataset::write_csv`]; seed and label
    /// come from the sidecar when one is available.
    pub fn read_csv<R: Read>(reader: R, meta: Option<&DatasetMeta>) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let header = r.headers()?.clone();
        let cols = header.len();
        let well_formed = cols >= 2
            && header.get(cols - 1) == Some("y")
            && (0..cols - 1).all(|i| header.get(i) == Some(format!("x{}", i + 1).as_str()));
        if !well_formed {
            return Err(Error::Parse(format!("expected header x1..xd,y, got {header:?}")));
        }
        let dim = cols - 1;
        let mut x = Vec::new();
        let mut y = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            let parse = |s: &str| -> Result<T> {
                s.trim()
                    .parse::<f64>()
                    .map(T::lit)
                    .map_err(|e| Error::Parse(format!("row {}: {e}", line + 1)))
            };
            for i in 0..dim {
                x.push(parse(&rec[i])?);
            }
            y.push(parse(&rec[dim])?);
        }
        let (seed, label) = meta.map(|m| (m.seed, m.source_label.clone())).unwrap_or((0, String::new()));
        let ds = Self::new(dim, x, y, seed, label)?;
        if let Some(m) = meta {
            if m.n != ds.len() || m.d != ds.dim {
                return Err(Error::Parse(format!(
                    "sidecar says n={}, d={} but CSV has n={}, d={}",
                    m.n,
                    m.d,
                    ds.len(),
                    ds.dim
                )));
            }
        }
        Ok(ds)
    }
}

/// Draws `n` pairs from `g`; deterministic in `(g, n, seed)`.
pub fn sample<T: Scalar>(g: &MixingMeasure<T>, n: usize, seed: u64) -> Dataset<T> {
    sample_with_labels(g, n, seed).0
}

/// [`sample`] that also returns the latent atom index of every row.
pub fn sample_with_labels<T: Scalar>(g: &MixingMeasure<T>, n: usize, seed: u64) -> (Dataset<T>, Vec<usize>) {
    let d = g.dim();
    let mut rng = stream(seed);
    let mut cumulative = Vec::with_capacity(g.len());
    let mut acc = 0.0f64;
    for &w in g.weights() {
        acc += w.to_f64_lossy();
        cumulative.push(acc);
    }
    let last = g.len() - 1;
    let mut x = Vec::with_capacity(n * d);
    let mut y = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let mut eps = vec![T::zero(); d];
    for _ in 0..n {
        let u: f64 = rng.random::<f64>() * acc;
        let z = cumulative.iter().position(|&c| u < c).unwrap_or(last);
        let atom = &g.atoms()[z];
        for e in eps.iter_mut() {
            *e = T::lit(rng.sample::<f64, _>(StandardNormal));
        }
        let offset = atom.gate_cholesky().lower_mul(&eps);
        let row: Vec<T> = atom.c().iter().zip(&offset).map(|(&c, &o)| c + o).collect();
        let eta = T::lit(rng.sample::<f64, _>(StandardNormal));
        y.push(atom.expert_mean(&row) + atom.nu().sqrt() * eta);
        x.extend_from_slice(&row);
        labels.push(z);
    }
    let ds = Dataset {
        dim: d,
        x,
        y,
        seed,
        source_label: String::new(),
    };
    (ds, labels)
}
