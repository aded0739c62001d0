//! Shared scenario builders for the benchmark targets.

use chemoctl_core::forward::{Control, ModelParams};
use chemoctl_core::grid::{build_grid, ControlBox, DriftScheme, Field, Grid, TimeGrid};

pub struct BenchScenario {
    pub grid: Grid,
    pub tg: TimeGrid,
    pub params: ModelParams,
    pub u0: Field,
    pub v0: Field,
    pub f: Control,
}

/// Smooth logistic scenario on an `n`-per-axis grid.
pub fn scenario(dim: usize, n: usize, steps: usize) -> BenchScenario {
    let pi = std::f64::consts::PI;
    let grid = build_grid(dim, &vec![1.0; dim], &vec![n; dim], &ControlBox::All).unwrap();
    let tg = TimeGrid::new(0.1, steps).unwrap();
    let params = ModelParams::with_logistic(2.0, 0.3, 0.5, DriftScheme::Upwind).unwrap();
    let u0 = grid.field_from_fn(|x| 1.0 + 0.3 * (pi * x[0]).cos());
    let v0 = grid.field_from_fn(|x| 0.8 + 0.2 * (pi * x[0]).cos());
    let f = Control::constant(&grid, tg.steps, 0.2);
    BenchScenario { grid, tg, params, u0, v0, f }
}
