use std::path::{Path, PathBuf};

use rand::Rng;

use crate::agent::TrajectoryRecord;
use crate::gridhouse::{
    render, topdown, write_ppm, ActionType, AgentPose, Frame, GridError, HouseMap, RenderConfig,
};
use crate::mind::{ImageryState, Mind};

use super::{HarnessError, Result};

/// Path colours, cycled when there are more trajectories.
pub const TRAJECTORY_COLORS: [[f32; 3]; 6] = [
    [0.90, 0.10, 0.10],
    [0.10, 0.35, 0.90],
    [0.10, 0.70, 0.20],
    [0.85, 0.45, 0.00],
    [0.60, 0.10, 0.75],
    [0.00, 0.65, 0.70],
];
const START_MARK: [f32; 3] = [0.0, 0.0, 0.0];
const STOP_MARK: [f32; 3] = [1.0, 0.85, 0.0];

fn line(f: &mut Frame, (y0, x0): (i64, i64), (y1, x1): (i64, i64), rgb: [f32; 3]) {
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    loop {
        f.set_pixel(y as usize, x as usize, rgb);
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

fn mark(f: &mut Frame, pose: AgentPose, scale: usize, rgb: [f32; 3]) {
    let r = (scale / 6).max(1);
    let (cy, cx) = (
        pose.cell.row * scale + scale / 2,
        pose.cell.col * scale + scale / 2,
    );
    for y in cy.saturating_sub(r)..=(cy + r).min(f.height - 1) {
        for x in cx.saturating_sub(r)..=(cx + r).min(f.width - 1) {
            f.set_pixel(y, x, rgb);
        }
    }
}

/// Top-down map with each pose sequence drawn as a coloured polyline
/// between cell centres, a black start mark and a yellow stop mark.
pub fn dump_topdown(house: &HouseMap, paths: &[Vec<AgentPose>], scale: usize) -> Result<Frame> {
    if scale == 0 {
        return Err(HarnessError::Input("scale must be positive".into()));
    }
    for p in paths.iter().flatten() {
        if p.cell.row >= house.rows || p.cell.col >= house.cols {
            return Err(GridError::InvalidPose(*p).into());
        }
    }
    let mut f = topdown(house, scale);
    let center = |p: &AgentPose| {
        (
            (p.cell.row * scale + scale / 2) as i64,
            (p.cell.col * scale + scale / 2) as i64,
        )
    };
    for (i, path) in paths.iter().enumerate() {
        let rgb = TRAJECTORY_COLORS[i % TRAJECTORY_COLORS.len()];
        for w in path.windows(2) {
            if w[0].cell != w[1].cell {
                line(&mut f, center(&w[0]), center(&w[1]), rgb);
            }
        }
        if let (Some(first), Some(last)) = (path.first(), path.last()) {
            mark(&mut f, *first, scale, START_MARK);
            mark(&mut f, *last, scale, STOP_MARK);
        }
    }
    Ok(f)
}

/// The real frame at planner step `step` of `traj`, followed by decoded
/// imagined frames for the next `horizon` planner actions. The imagery state
/// is rebuilt by replaying the trajectory up to `step`.
#[allow(clippy::too_many_arguments)]
pub fn dump_mental_rollout<R: Rng + ?Sized>(
    mind: &Mind,
    house: &HouseMap,
    traj: &TrajectoryRecord,
    step: usize,
    horizon: usize,
    render_cfg: &RenderConfig,
    rng: &mut R,
) -> Result<(Vec<Frame>, Vec<Vec<f32>>)> {
    if step >= traj.steps.len() {
        return Err(HarnessError::Input(format!(
            "step {step} out of range for a trajectory of {} planner steps",
            traj.steps.len()
        )));
    }
    let mut state = ImageryState::zeros(mind.imagery_hidden());
    for s in &traj.steps[..step] {
        state = mind
            .imagery
            .imagery_step(&mind.imagery_params, &s.feature, &state, s.action)?
            .1;
    }
    let here = &traj.steps[step];
    let mut frames = vec![render(house, here.pose, render_cfg).frame];
    let actions: Vec<ActionType> = traj.steps[step..]
        .iter()
        .map(|s| s.action)
        .filter(|&a| a != ActionType::Stop)
        .take(horizon)
        .collect();
    let mut latents = vec![here.feature.clone()];
    if actions.is_empty() {
        return Ok((frames, latents));
    }
    for (_, m) in
        mind.imagery
            .imagine_rollout(&mind.imagery_params, &here.feature, &state, &actions, rng)?
    {
        frames.push(mind.vae.decode(&mind.vae_params, &m)?);
        latents.push(m);
    }
    Ok((frames, latents))
}

/// Latents as a JSON array of arrays.
pub fn latent_trace(latents: &[Vec<f32>]) -> String {
    serde_json::to_string(latents).expect("latents serialize")
}

/// `<prefix>_000.ppm`, `<prefix>_001.ppm`, ... in `dir`.
pub fn write_frames(dir: impl AsRef<Path>, prefix: &str, frames: &[Frame]) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut out = Vec::with_capacity(frames.len());
    for (i, f) in frames.iter().enumerate() {
        let p = dir.join(format!("{prefix}_{i:03}.ppm"));
        write_ppm(&p, f)?;
        out.push(p);
    }
    Ok(out)
}
