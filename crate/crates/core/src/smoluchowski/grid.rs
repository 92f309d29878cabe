use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{require_positive, Error, Result};

/// Geometric mass pivots `y_j = δ ρ^j`, `j = 0..bins`. Bin `j` covers
/// `[δ ρ^{j-1/2}, δ ρ^{j+1/2})`, so each pivot is its bin's geometric midpoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MassGrid {
    pub delta: f64,
    pub rho: f64,
    pub bins: usize,
}

impl MassGrid {
    pub fn new(delta: f64, rho: f64, bins: usize) -> Result<Self> {
        let g = Self { delta, rho, bins };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        require_positive("delta", self.delta)?;
        if !(self.rho > 1.0 && self.rho.is_finite()) {
            return Err(Error::config(
                "rho",
                format!("ratio must be > 1, got {}", self.rho),
            ));
        }
        if self.bins < 2 {
            return Err(Error::config("bins", "need at least two mass bins"));
        }
        Ok(())
    }

    #[inline]
    pub fn y(&self, j: usize) -> f64 {
        self.delta * self.rho.powi(j as i32)
    }

    pub fn masses(&self) -> Vec<f64> {
        (0..self.bins).map(|j| self.y(j)).collect()
    }
}

/// Periodic box `[0, L)^d` split into `n^d` equal cells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Torus {
    pub d: usize,
    pub length: f64,
    pub cells: usize,
}

impl Torus {
    pub fn new(d: usize, length: f64, cells: usize) -> Result<Self> {
        let t = Self { d, length, cells };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.d) {
            return Err(Error::config(
                "d",
                format!("solver supports d in 1..=3, got {}", self.d),
            ));
        }
        require_positive("length", self.length)?;
        if self.cells < 1 {
            return Err(Error::config("cells", "need at least one cell per side"));
        }
        Ok(())
    }

    pub fn n_cells(&self) -> usize {
        self.cells.pow(self.d as u32)
    }

    pub fn spacing(&self) -> f64 {
        self.length / self.cells as f64
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.d as i32)
    }

    /// Cell-centre coordinates; axis 0 varies fastest.
    pub fn centre(&self, cell: usize) -> [f64; 3] {
        let h = self.spacing();
        let mut out = [0.0; 3];
        let mut rest = cell;
        for o in out.iter_mut().take(self.d) {
            *o = ((rest % self.cells) as f64 + 0.5) * h;
            rest /= self.cells;
        }
        out
    }

    /// The theory needs `d >= 3`; smaller boxes are for cheap tests.
    pub fn off_theory(&self) -> bool {
        self.d < 3
    }
}

/// Spatial torus together with the mass grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverGrid {
    pub torus: Torus,
    pub mass: MassGrid,
}

impl SolverGrid {
    pub fn len(&self) -> usize {
        self.torus.n_cells() * self.mass.bins
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, cell: usize, bin: usize) -> usize {
        cell * self.mass.bins + bin
    }

    /// `‖⟨f, |μ|⟩‖₁ = Σ_cells vol Σ_j f_j |μ_j|`.
    pub fn weighted_l1(&self, values: &[f64], f: &[f64]) -> f64 {
        let vol = self.torus.cell_volume();
        values
            .chunks_exact(self.mass.bins)
            .map(|c| c.iter().zip(f).map(|(m, w)| w * m.abs()).sum::<f64>())
            .sum::<f64>()
            * vol
    }

    /// `‖⟨f, μ⟩‖_∞ = max over cells of Σ_j f_j μ_j`.
    pub fn weighted_sup(&self, values: &[f64], f: &[f64]) -> f64 {
        values
            .chunks_exact(self.mass.bins)
            .map(|c| c.iter().zip(f).map(|(m, w)| w * m).sum::<f64>())
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Per-cell `⟨f, μ⟩`.
    pub fn weighted_profile(&self, values: &[f64], f: &[f64]) -> Vec<f64> {
        values
            .chunks_exact(self.mass.bins)
            .map(|c| c.iter().zip(f).map(|(m, w)| w * m).sum::<f64>())
            .collect()
    }

    fn check_len(&self, values: &[f64]) -> Result<()> {
        if values.len() != self.len() {
            return Err(Error::config(
                "values",
                format!(
                    "expected {} values (cells × bins), got {}",
                    self.len(),
                    values.len()
                ),
            ));
        }
        Ok(())
    }
}

/// Particles that grew past the largest pivot.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Overflow {
    /// Spatially integrated number.
    pub number: f64,
    /// Spatially integrated mass.
    pub mass: f64,
}

/// Nonnegative number density per unit volume per mass bin, cell-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MassField {
    pub grid: SolverGrid,
    pub t: f64,
    pub values: Vec<f64>,
    pub overflow: Overflow,
}

impl MassField {
    pub fn zeros(grid: SolverGrid) -> Self {
        Self {
            grid,
            t: 0.0,
            values: vec![0.0; grid.len()],
            overflow: Overflow::default(),
        }
    }

    pub fn from_values(grid: SolverGrid, values: Vec<f64>) -> Result<Self> {
        grid.check_len(&values)?;
        if let Some(v) = values.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
            return Err(Error::domain(format!(
                "mass field entries must be finite and >= 0, found {v}"
            )));
        }
        Ok(Self {
            grid,
            t: 0.0,
            values,
            overflow: Overflow::default(),
        })
    }

    /// Same density `per_bin[j]` in every cell; missing bins are empty.
    pub fn uniform(grid: SolverGrid, per_bin: &[f64]) -> Result<Self> {
        Self::from_fn(grid, |_, j| per_bin.get(j).copied().unwrap_or(0.0))
    }

    pub fn from_fn<F: Fn(&[f64], usize) -> f64>(grid: SolverGrid, f: F) -> Result<Self> {
        let mut values = Vec::with_capacity(grid.len());
        for cell in 0..grid.torus.n_cells() {
            let x = grid.torus.centre(cell);
            for j in 0..grid.mass.bins {
                values.push(f(&x[..grid.torus.d], j));
            }
        }
        Self::from_values(grid, values)
    }

    pub fn masses(&self) -> Vec<f64> {
        self.grid.mass.masses()
    }

    /// `‖⟨y, μ⟩‖₁`, excluding the overflow.
    pub fn mass_l1(&self) -> f64 {
        self.grid.weighted_l1(&self.values, &self.masses())
    }

    pub fn number_l1(&self) -> f64 {
        self.grid
            .weighted_l1(&self.values, &vec![1.0; self.grid.mass.bins])
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Largest relative spread of any bin across cells.
    pub fn uniformity_defect(&self) -> f64 {
        let j = self.grid.mass.bins;
        (0..j)
            .map(|b| {
                let col = self.values.iter().skip(b).step_by(j);
                let (lo, hi) = col.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                    (lo.min(*v), hi.max(*v))
                });
                if hi > 0.0 {
                    (hi - lo) / hi
                } else {
                    0.0
                }
            })
            .fold(0.0, f64::max)
    }

    pub fn write_checkpoint(&self, path: &Path, kernel_id: &str) -> Result<()> {
        let ck = Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            d: self.grid.torus.d,
            length: self.grid.torus.length,
            cells: self.grid.torus.cells,
            delta: self.grid.mass.delta,
            rho: self.grid.mass.rho,
            bins: self.grid.mass.bins,
            kernel: kernel_id.into(),
            t: self.t,
            overflow: self.overflow,
            values: self.values.clone(),
        };
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(f, &ck)?;
        Ok(())
    }

    /// Returns the field and the kernel id it was written with.
    pub fn read_checkpoint(path: &Path) -> Result<(Self, String)> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        let ck: Checkpoint = serde_json::from_reader(f)?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::config(
                "format",
                format!("unknown checkpoint format {:?}", ck.format),
            ));
        }
        let grid = SolverGrid {
            torus: Torus::new(ck.d, ck.length, ck.cells)?,
            mass: MassGrid::new(ck.delta, ck.rho, ck.bins)?,
        };
        let mut field = Self::from_values(grid, ck.values)?;
        field.t = ck.t;
        field.overflow = ck.overflow;
        Ok((field, ck.kernel))
    }
}

/// Signed counterpart of [`MassField`], same layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignedMassField {
    pub grid: SolverGrid,
    pub t: f64,
    pub values: Vec<f64>,
    pub overflow: Overflow,
}

impl SignedMassField {
    pub fn from_values(grid: SolverGrid, values: Vec<f64>) -> Result<Self> {
        grid.check_len(&values)?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("signed field entry".into()));
        }
        Ok(Self {
            grid,
            t: 0.0,
            values,
            overflow: Overflow::default(),
        })
    }

    /// `‖⟨f, |q|⟩‖₁`.
    pub fn abs_weighted_l1(&self, f: &[f64]) -> f64 {
        self.grid.weighted_l1(&self.values, f)
    }
}

impl From<MassField> for SignedMassField {
    fn from(m: MassField) -> Self {
        Self {
            grid: m.grid,
            t: m.t,
            values: m.values,
            overflow: m.overflow,
        }
    }
}

const CHECKPOINT_FORMAT: &str = "coagdiff-field-v1";

/// JSON container: header then row-major `cell × bin` values.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Checkpoint {
    format: String,
    d: usize,
    length: f64,
    cells: usize,
    delta: f64,
    rho: f64,
    bins: usize,
    kernel: String,
    t: f64,
    overflow: Overflow,
    values: Vec<f64>,
}
