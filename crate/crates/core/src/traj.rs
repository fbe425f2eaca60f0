//! Trajectory ensembles and the `MKV1` binary format.
//!
//! Layout (all little-endian):
//!
//! ```text
//! b"MKV1" | u32 d | u32 N | u32 n_steps | f64 T | u64 seed | N*(n_steps+1)*d f64
//! ```
//!
//! Values are particle-major: particle `i`, grid index `k`, coordinate `c`
//! lives at `(i * (n_steps + 1) + k) * d + c`.

use std::io::{Read, Write};
use std::path::Path;

use crate::model::{Cloud, TimeGrid};
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"MKV1";

/// `N` sampled paths in `R^d` on a uniform time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryEnsemble {
    dim: usize,
    n_particles: usize,
    grid: TimeGrid,
    seed: u64,
    data: Vec<f64>,
}

impl TrajectoryEnsemble {
    pub fn new(dim: usize, n_particles: usize, grid: TimeGrid, seed: u64, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || n_particles == 0 {
            return Err(Error::InvalidParameter("ensemble needs d >= 1 and N >= 1".into()));
        }
        let expected = n_particles * (grid.n_steps() + 1) * dim;
        if data.len() != expected {
            return Err(Error::Format(format!("expected {expected} values, got {}", data.len())));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("trajectory data"));
        }
        Ok(Self { dim, n_particles, grid, seed, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_particles(&self) -> usize {
        self.n_particles
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Position of particle `i` at grid index `k`.
    #[inline]
    pub fn position(&self, i: usize, k: usize) -> &[f64] {
        let start = (i * (self.grid.n_steps() + 1) + k) * self.dim;
        &self.data[start..start + self.dim]
    }

    /// Path of particle `i`, `(n_steps + 1) * d` values.
    pub fn path(&self, i: usize) -> &[f64] {
        let len = (self.grid.n_steps() + 1) * self.dim;
        &self.data[i * len..(i + 1) * len]
    }

    /// All positions at grid index `k`.
    pub fn column(&self, k: usize) -> Cloud {
        let mut coords = Vec::with_capacity(self.n_particles * self.dim);
        for i in 0..self.n_particles {
            coords.extend_from_slice(self.position(i, k));
        }
        Cloud::new(self.dim, coords).expect("ensemble dimension is positive")
    }

    /// The empirical measure at the grid time nearest to `t`.
    pub fn empirical_cloud(&self, t: f64) -> Result<Cloud> {
        Ok(self.column(self.grid.nearest_index(t)?))
    }

    /// Reorders particles so that new row `j` is old row `perm[j]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let len = (self.grid.n_steps() + 1) * self.dim;
        let mut data = Vec::with_capacity(self.data.len());
        for &p in perm {
            data.extend_from_slice(&self.data[p * len..(p + 1) * len]);
        }
        Self { data, ..self.clone() }
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let as_u32 = |v: usize, what: &str| {
            u32::try_from(v).map_err(|_| Error::Format(format!("{what} does not fit in u32")))
        };
        w.write_all(MAGIC)?;
        w.write_all(&as_u32(self.dim, "d")?.to_le_bytes())?;
        w.write_all(&as_u32(self.n_particles, "N")?.to_le_bytes())?;
        w.write_all(&as_u32(self.grid.n_steps(), "n_steps")?.to_le_bytes())?;
        w.write_all(&self.grid.t_end().to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.data.len() * 8);
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("bad magic, expected MKV1".into()));
        }
        let mut b4 = [0u8; 4];
        let mut b8 = [0u8; 8];
        let mut read_u32 = |r: &mut R| -> Result<usize> {
            r.read_exact(&mut b4)?;
            Ok(u32::from_le_bytes(b4) as usize)
        };
        let dim = read_u32(&mut r)?;
        let n = read_u32(&mut r)?;
        let n_steps = read_u32(&mut r)?;
        r.read_exact(&mut b8)?;
        let t_end = f64::from_le_bytes(b8);
        r.read_exact(&mut b8)?;
        let seed = u64::from_le_bytes(b8);
        let grid = TimeGrid::new(t_end, n_steps)?;
        let count = n
            .checked_mul(n_steps + 1)
            .and_then(|v| v.checked_mul(dim))
            .ok_or_else(|| Error::Format("header sizes overflow".into()))?;
        let mut raw = vec![0u8; count * 8];
        r.read_exact(&mut raw)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Self::new(dim, n, grid, seed, data)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f))
    }
}
