//! Uniform time grids and vector-valued functions sampled on them.

use crate::error::{Error, Result};

/// Uniform grid `t_i = i·h`, `i = 0..=N`, on `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    t_end: f64,
    n: usize,
}

impl Grid {
    pub fn new(t_end: f64, n: usize) -> Result<Self> {
        if !(t_end > 0.0 && t_end.is_finite()) {
            return Err(Error::InvalidParameter(format!("horizon T = {t_end} must be positive")));
        }
        if n < 2 {
            return Err(Error::InvalidParameter(format!("grid needs at least 2 cells, got {n}")));
        }
        Ok(Self { t_end, n })
    }

    /// Horizon `T`.
    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    /// Number of cells `N`.
    pub fn cells(&self) -> usize {
        self.n
    }

    /// Number of nodes, `N + 1`.
    pub fn len(&self) -> usize {
        self.n + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn step(&self) -> f64 {
        self.t_end / self.n as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        if i == self.n {
            self.t_end
        } else {
            i as f64 * self.step()
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.n).map(|i| self.node(i)).collect()
    }

    /// The grid on `[0, t_i]` formed by the first `i` cells.
    pub fn prefix(&self, cells: usize) -> Result<Grid> {
        if cells > self.n {
            return Err(Error::Shape(format!("prefix of {cells} cells exceeds N = {}", self.n)));
        }
        Ok(Grid {
            t_end: self.node(cells),
            n: cells,
        })
    }

    /// Same step, `extra` more cells.
    pub fn extend(&self, extra: usize) -> Grid {
        let n = self.n + extra;
        Grid {
            t_end: self.step() * n as f64,
            n,
        }
    }

    /// Equal when the step and cell count agree to rounding.
    pub fn same_as(&self, other: &Grid) -> bool {
        self.n == other.n && (self.t_end - other.t_end).abs() <= 1e-12 * self.t_end.max(other.t_end)
    }

    pub fn check_same(&self, other: &Grid) -> Result<()> {
        if self.same_as(other) {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "grid (T = {}, N = {}) does not match (T = {}, N = {})",
                self.t_end, self.n, other.t_end, other.n
            )))
        }
    }

    /// Index of the node nearest to `t`, if `t` lies on the grid within
    /// relative rounding.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let x = t / self.step();
        let i = x.round();
        if i < 0.0 || i > self.n as f64 || (x - i).abs() > 1e-9 * x.abs().max(1.0) {
            None
        } else {
            Some(i as usize)
        }
    }
}

/// Values of a function `[0, T] → ℝ^d` at the grid nodes, stored node-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    grid: Grid,
    dim: usize,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(grid: Grid, dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Shape("dimension must be at least 1".into()));
        }
        if values.len() != grid.len() * dim {
            return Err(Error::Shape(format!(
                "expected {} values for {} nodes of dimension {dim}, got {}",
                grid.len() * dim,
                grid.len(),
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Shape(format!("non-finite value at node {}", pos / dim)));
        }
        Ok(Self { grid, dim, values })
    }

    /// Scalar function from one value per node.
    pub fn scalar(grid: Grid, values: Vec<f64>) -> Result<Self> {
        Self::new(grid, 1, values)
    }

    pub fn constant(grid: Grid, value: &[f64]) -> Self {
        let values = value.iter().copied().cycle().take(grid.len() * value.len()).collect();
        Self {
            grid,
            dim: value.len().max(1),
            values,
        }
    }

    pub fn zeros(grid: Grid, dim: usize) -> Self {
        Self {
            grid,
            dim,
            values: vec![0.0; grid.len() * dim],
        }
    }

    pub fn from_fn(grid: Grid, f: impl Fn(f64) -> f64) -> Self {
        Self {
            grid,
            dim: 1,
            values: grid.nodes().into_iter().map(f).collect(),
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// State vector at node `i`.
    pub fn at(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn at_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.values[i * self.dim..(i + 1) * self.dim]
    }

    /// Scalar value at node `i` (first component).
    pub fn value(&self, i: usize) -> f64 {
        self.values[i * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn component(&self, c: usize) -> Vec<f64> {
        self.values.iter().skip(c).step_by(self.dim).copied().collect()
    }

    pub fn check_compatible(&self, other: &GridFunction) -> Result<()> {
        self.grid.check_same(&other.grid)?;
        if self.dim != other.dim {
            return Err(Error::Shape(format!("dimension {} vs {}", self.dim, other.dim)));
        }
        Ok(())
    }

    /// Pointwise Euclidean norm at each node.
    pub fn node_norms(&self) -> Vec<f64> {
        self.values
            .chunks(self.dim)
            .map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt())
            .collect()
    }

    pub fn sup_norm(&self) -> f64 {
        self.node_norms().into_iter().fold(0.0, f64::max)
    }

    /// Sup of `|f − g|` over nodes.
    pub fn sup_distance(&self, other: &GridFunction) -> Result<f64> {
        Ok(self.sub(other)?.sup_norm())
    }

    /// Bielecki norm `max_i |f(t_i)| e^{−τ t_i}`.
    pub fn bielecki_norm(&self, tau: f64) -> f64 {
        self.node_norms()
            .into_iter()
            .enumerate()
            .map(|(i, n)| n * (-tau * self.grid.node(i)).exp())
            .fold(0.0, f64::max)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> GridFunction {
        Self {
            grid: self.grid,
            dim: self.dim,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_with(&self, other: &GridFunction, f: impl Fn(f64, f64) -> f64) -> Result<GridFunction> {
        self.check_compatible(other)?;
        Ok(Self {
            grid: self.grid,
            dim: self.dim,
            values: self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn add(&self, other: &GridFunction) -> Result<GridFunction> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &GridFunction) -> Result<GridFunction> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, c: f64) -> GridFunction {
        self.map(|v| c * v)
    }

    /// Restriction to the first `cells` cells.
    pub fn truncate(&self, cells: usize) -> Result<GridFunction> {
        let grid = self.grid.prefix(cells)?;
        Ok(Self {
            grid,
            dim: self.dim,
            values: self.values[..grid.len() * self.dim].to_vec(),
        })
    }

    /// Every other node, giving the same function on the grid with `N/2` cells.
    pub fn coarsen(&self) -> Result<GridFunction> {
        if self.grid.cells() % 2 != 0 {
            return Err(Error::Shape(format!("cannot coarsen odd N = {}", self.grid.cells())));
        }
        let grid = Grid::new(self.grid.t_end(), self.grid.cells() / 2)?;
        let values = (0..grid.len()).flat_map(|i| self.at(2 * i).to_vec()).collect();
        Ok(Self {
            grid,
            dim: self.dim,
            values,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_nodes_hit_endpoints() {
        let g = Grid::new(1.0, 3).unwrap();
        assert_eq!(g.node(0), 0.0);
        assert_eq!(g.node(3), 1.0);
        assert_eq!(g.len(), 4);
        assert!(Grid::new(1.0, 1).is_err());
        assert!(Grid::new(0.0, 4).is_err());
    }

    #[test]
    fn index_lookup() {
        let g = Grid::new(1.0, 4096).unwrap();
        assert_eq!(g.index_of(0.125), Some(512));
        assert_eq!(g.index_of(1.0), Some(4096));
        assert_eq!(g.index_of(0.1), None);
    }

    #[test]
    fn grid_function_shapes() {
        let g = Grid::new(1.0, 2).unwrap();
        assert!(GridFunction::new(g, 2, vec![0.0; 5]).is_err());
        let f = GridFunction::new(g, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(f.at(1), &[3.0, 4.0]);
        assert_eq!(f.component(1), vec![2.0, 4.0, 6.0]);
        assert!(GridFunction::scalar(g, vec![0.0, f64::NAN, 1.0]).is_err());
    }

    #[test]
    fn norms() {
        let g = Grid::new(2.0, 2).unwrap();
        let f = GridFunction::scalar(g, vec![1.0, -3.0, 2.0]).unwrap();
        assert_eq!(f.sup_norm(), 3.0);
        assert!((f.bielecki_norm(1.0) - 3.0 * (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn coarsen_and_truncate() {
        let g = Grid::new(1.0, 4).unwrap();
        let f = GridFunction::from_fn(g, |t| t);
        let c = f.coarsen().unwrap();
        assert_eq!(c.as_slice(), &[0.0, 0.5, 1.0]);
        let p = f.truncate(2).unwrap();
        assert_eq!(p.grid().t_end(), 0.5);
        assert_eq!(p.len(), 3);
    }
}
