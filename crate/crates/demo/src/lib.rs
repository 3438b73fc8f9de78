//! Browser demo over planar fields on the square `[-extent, extent]²`.
//!
//! Each operation returns a [`Picture`]: one byte per grid cell, row-major
//! from the bottom-left box, with small integer layer codes the page maps to
//! colours. The plain functions are what the native tests exercise; the
//! `#[wasm_bindgen]` wrappers only turn errors into JS exceptions.

use std::fmt::Write as _;
use std::sync::Arc;

use attractor_forge::boxgrid::{BoxSet, Grid};
use attractor_forge::conley::{build_stable_block, compute_gamma_t, compute_gt, BlockParams, StableBlock};
use attractor_forge::dynamics::{AutonomousFlow, FlowConfig};
use attractor_forge::fieldlang::{parse, parse_scalar, FieldAst};
use attractor_forge::rds::{pullback_slice_d, sample_path, NoiseKind, NoiseSpec, RdsOptions};
use wasm_bindgen::prelude::*;

const STEP: f64 = 0.01;
const MAX_RES: usize = 160;

#[wasm_bindgen]
#[derive(Debug, Clone)]
pub struct Picture {
    nx: usize,
    ny: usize,
    cells: Vec<u8>,
    summary: String,
}

#[wasm_bindgen]
impl Picture {
    #[wasm_bindgen(getter)]
    pub fn nx(&self) -> usize {
        self.nx
    }

    #[wasm_bindgen(getter)]
    pub fn ny(&self) -> usize {
        self.ny
    }

    /// Layer code per cell; copied out as a `Uint8Array`.
    #[wasm_bindgen(getter)]
    pub fn cells(&self) -> Vec<u8> {
        self.cells.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn summary(&self) -> String {
        self.summary.clone()
    }
}

impl Picture {
    /// Paint `layers` in order; later layers overwrite earlier ones.
    fn paint(grid: &Grid, layers: &[(&BoxSet, u8)], summary: String) -> Picture {
        let mut cells = vec![0u8; grid.num_boxes()];
        for (set, code) in layers {
            for b in set.iter() {
                cells[b] = *code;
            }
        }
        // flat index runs fastest along the last axis; the page wants rows of x
        let (nx, ny) = (grid.res()[0], grid.res()[1]);
        let mut rows = vec![0u8; cells.len()];
        for i in 0..nx {
            for j in 0..ny {
                rows[j * nx + i] = cells[grid.ravel(&[i, j])];
            }
        }
        Picture {
            nx,
            ny,
            cells: rows,
            summary,
        }
    }

    pub fn code_at(&self, i: usize, j: usize) -> u8 {
        self.cells[j * self.nx + i]
    }
}

struct Setup {
    grid: Arc<Grid>,
    f0: FieldAst,
    region: BoxSet,
    flow: FlowConfig,
}

fn setup(f0: &str, region: &str, extent: f64, res: usize) -> Result<Setup, String> {
    if !(extent > 0.0 && extent.is_finite()) {
        return Err(format!("extent must be positive, got {extent}"));
    }
    if !(4..=MAX_RES).contains(&res) {
        return Err(format!("resolution must lie in 4..={MAX_RES}, got {res}"));
    }
    let grid = Arc::new(Grid::new(vec![-extent; 2], vec![extent; 2], vec![res; 2]).map_err(|e| e.to_string())?);
    let f0 = parse(f0, 2).map_err(|e| format!("field: {e}"))?;
    let pred = parse_scalar(region, 2).map_err(|e| format!("region: {e}"))?;
    let region = BoxSet::from_centers(grid.clone(), |x| pred.eval(0.0, x).is_ok_and(|v| v <= 0.0));
    if region.is_empty() {
        return Err("region contains no box".into());
    }
    let flow = FlowConfig::new(STEP, 1e6).map_err(|e| e.to_string())?;
    Ok(Setup { grid, f0, region, flow })
}

/// Codes: 1 = N, 2 = `G^T(N)`, 3 = `Γ^T(N)` (boxes of G leaving through the rim).
pub fn gset_picture(f0: &str, region: &str, extent: f64, res: usize, horizon: f64) -> Result<Picture, String> {
    let s = setup(f0, region, extent, res)?;
    if !(horizon > 0.0 && horizon <= 20.0) {
        return Err(format!("horizon must lie in (0, 20], got {horizon}"));
    }
    let d = AutonomousFlow::new(&s.f0).map_err(|e| e.to_string())?;
    let t = s.flow.round_time(horizon);
    let g = compute_gt(&s.region, &d, 0.0, t, &s.flow, 2).map_err(|e| e.to_string())?;
    let gamma = compute_gamma_t(&s.region, &d, 0.0, t, &s.flow, 2).map_err(|e| e.to_string())?;
    let summary = format!(
        "T = {t}: N has {} boxes, G^T {} boxes, Γ^T {} boxes",
        s.region.len(),
        g.len(),
        gamma.len()
    );
    Ok(Picture::paint(
        &s.grid,
        &[(&s.region, 1), (&g, 2), (&gamma, 3)],
        summary,
    ))
}

fn block_for(s: &Setup, epsilon: f64) -> Result<StableBlock, String> {
    let params = BlockParams {
        epsilon,
        ..BlockParams::default()
    };
    build_stable_block(&s.region, &s.f0, &params, &s.flow).map_err(|e| e.to_string())
}

/// Codes: 1 = isolating neighbourhood, 2 = stable block `B_ε`, 3 = attractor.
pub fn block_picture(f0: &str, region: &str, extent: f64, res: usize, epsilon: f64) -> Result<Picture, String> {
    let s = setup(f0, region, extent, res)?;
    let b = block_for(&s, epsilon)?;
    let mut summary = format!(
        "ε = {epsilon}: block {} boxes, attractor {} boxes",
        b.block.len(),
        b.attractor.len()
    );
    if b.validation.touches_domain_edge {
        let _ = write!(summary, " (block touches the grid edge)");
    }
    Ok(Picture::paint(
        &s.grid,
        &[(&s.region, 1), (&b.block, 2), (&b.attractor, 3)],
        summary,
    ))
}

/// Codes: 1 = stable block, 2 = unperturbed attractor, 3 = `D(ω)` for one
/// bounded-noise path with additive forcing on both components.
#[allow(clippy::too_many_arguments)]
pub fn noise_picture(
    f0: &str,
    region: &str,
    extent: f64,
    res: usize,
    epsilon: f64,
    rho: f64,
    horizon: f64,
    seed: u64,
) -> Result<Picture, String> {
    let s = setup(f0, region, extent, res)?;
    if !(horizon > 0.0 && horizon <= 10.0) {
        return Err(format!("horizon must lie in (0, 10], got {horizon}"));
    }
    let b = block_for(&s, epsilon)?;
    let spec = NoiseSpec::parse(NoiseKind::PiecewiseConstant, rho, 0.05, 2, "u1; u2", 2).map_err(|e| e.to_string())?;
    let t = s.flow.round_time(horizon);
    let path = sample_path(&spec, seed, t + spec.mesh);
    let d = pullback_slice_d(&path, &s.f0, &b, t, 0.0, &s.flow, &RdsOptions::default()).map_err(|e| e.to_string())?;
    let summary = match d.is_empty() {
        true => format!("ρ = {rho}, seed {seed}: D is empty, the noise is too strong for this block"),
        false => format!(
            "ρ = {rho}, seed {seed}: D has {} boxes, semidistance to the attractor {:.4}",
            d.len(),
            d.semidist(&b.attractor).unwrap_or(f64::NAN)
        ),
    };
    Ok(Picture::paint(
        &s.grid,
        &[(&b.block, 1), (&b.attractor, 2), (&d, 3)],
        summary,
    ))
}

#[wasm_bindgen(js_name = gsetPicture)]
pub fn gset_picture_js(f0: &str, region: &str, extent: f64, res: usize, horizon: f64) -> Result<Picture, JsError> {
    gset_picture(f0, region, extent, res, horizon).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = blockPicture)]
pub fn block_picture_js(f0: &str, region: &str, extent: f64, res: usize, epsilon: f64) -> Result<Picture, JsError> {
    block_picture(f0, region, extent, res, epsilon).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = noisePicture)]
#[allow(clippy::too_many_arguments)]
pub fn noise_picture_js(
    f0: &str,
    region: &str,
    extent: f64,
    res: usize,
    epsilon: f64,
    rho: f64,
    horizon: f64,
    seed: u32,
) -> Result<Picture, JsError> {
    noise_picture(f0, region, extent, res, epsilon, rho, horizon, seed as u64).map_err(|e| JsError::new(&e))
}

#[cfg(test)]
mod tests {
    use super::*;

    const SADDLE_FREE: &str = "-x1; -2*x2";

    #[test]
    fn layout_is_rows_of_x() {
        let g = Grid::new(vec![-1.0; 2], vec![1.0; 2], vec![4, 4]).unwrap();
        let mut s = BoxSet::empty(Arc::new(g.clone()));
        s.insert(g.ravel(&[3, 0]));
        let p = Picture::paint(&g, &[(&s, 7)], String::new());
        assert_eq!(p.code_at(3, 0), 7);
        assert_eq!(p.cells.iter().filter(|&&c| c == 7).count(), 1);
        assert_eq!(p.cells[3], 7);
    }

    #[test]
    fn gset_of_node_is_centred() {
        let p = gset_picture(SADDLE_FREE, "x1^2 + x2^2 - 1", 1.25, 40, 1.0).unwrap();
        let mid = p.nx / 2;
        assert_eq!(p.code_at(mid, mid), 2);
        assert_eq!(p.code_at(0, 0), 0);
        assert!(!p.cells.contains(&3), "{}", p.summary);
    }

    #[test]
    fn bad_input_is_reported() {
        assert!(gset_picture("x1 +", "x1", 1.0, 16, 1.0)
            .unwrap_err()
            .starts_with("field"));
        assert!(gset_picture("-x1; -x2", "x1; x2", 1.0, 16, 1.0)
            .unwrap_err()
            .starts_with("region"));
        assert!(gset_picture("-x1; -x2", "x1^2 + x2^2 - 1", 1.0, 1000, 1.0).is_err());
        assert!(block_picture("-x1; -x2", "x1^2 + x2^2 - 1", 1.25, 32, 0.7).is_err());
    }
}
