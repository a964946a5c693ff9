//! Filling of occluded (UNFILLED) atlas texels: harmonic diffusion from the
//! filled boundary, exemplar synthesis in the PatchMatch style, or periodic
//! tiling of a supplied patch. FILLED and OUTSIDE_CHART texels are never
//! modified.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::texture::{TexelState, TextureImage, ValidityMask};

const PATCH_RADIUS: i64 = 3; // 7x7 patches
const PYRAMID_LEVELS: usize = 4;
const PATCHMATCH_ITERS: usize = 4;

#[derive(Debug, Error)]
pub enum InpaintError {
    #[error("an unfilled region touches no filled texel; diffusion has no boundary values")]
    NoBoundary,
    #[error("patch_tile mode requires a patch image")]
    MissingPatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InpaintMode {
    Diffusion,
    Exemplar,
    PatchTile,
}

/// Fill every UNFILLED texel of `img`. FILLED and OUTSIDE_CHART texels are
/// returned bit-unchanged.
pub fn inpaint(
    img: &TextureImage,
    mask: &ValidityMask,
    mode: InpaintMode,
    patch: Option<&image::RgbImage>,
) -> Result<TextureImage, InpaintError> {
    assert_eq!(img.resolution, mask.resolution);
    if !mask.flags.contains(&TexelState::Unfilled) {
        return Ok(img.clone());
    }
    match mode {
        InpaintMode::Diffusion => diffusion(img, mask),
        InpaintMode::Exemplar => Ok(exemplar(img, mask)),
        InpaintMode::PatchTile => {
            let patch = patch.ok_or(InpaintError::MissingPatch)?;
            Ok(patch_tile(img, mask, patch))
        }
    }
}

fn neighbors4(x: u32, y: u32, res: u32) -> impl Iterator<Item = (u32, u32)> {
    [(0i64, -1i64), (-1, 0), (1, 0), (0, 1)]
        .into_iter()
        .filter_map(move |(dx, dy)| {
            let (nx, ny) = (x as i64 + dx, y as i64 + dy);
            (nx >= 0 && ny >= 0 && nx < res as i64 && ny < res as i64)
                .then_some((nx as u32, ny as u32))
        })
}

/// Multi-source BFS from filled-adjacent texels through the unfilled region;
/// returns, per texel, the color of the nearest filled texel. Errors if some
/// unfilled texel is unreachable (its component touches no filled texel).
fn nearest_fill_init(
    img: &TextureImage,
    mask: &ValidityMask,
) -> Result<Vec<[f64; 3]>, InpaintError> {
    let res = img.resolution;
    let mut color: Vec<[f64; 3]> = img
        .rgb
        .iter()
        .map(|c| [c[0] as f64, c[1] as f64, c[2] as f64])
        .collect();
    let mut seen = vec![false; color.len()];
    let mut q = VecDeque::new();
    for y in 0..res {
        for x in 0..res {
            let i = img.idx(x, y);
            if mask.flags[i] != TexelState::Unfilled {
                continue;
            }
            if neighbors4(x, y, res)
                .any(|(nx, ny)| mask.flags[img.idx(nx, ny)] == TexelState::FilledFromPeelmap)
            {
                let (nx, ny) = neighbors4(x, y, res)
                    .find(|&(nx, ny)| mask.flags[img.idx(nx, ny)] == TexelState::FilledFromPeelmap)
                    .unwrap();
                color[i] = color[img.idx(nx, ny)];
                seen[i] = true;
                q.push_back((x, y));
            }
        }
    }
    while let Some((x, y)) = q.pop_front() {
        let i = img.idx(x, y);
        for (nx, ny) in neighbors4(x, y, res) {
            let j = img.idx(nx, ny);
            if mask.flags[j] == TexelState::Unfilled && !seen[j] {
                seen[j] = true;
                color[j] = color[i];
                q.push_back((nx, ny));
            }
        }
    }
    for (i, &f) in mask.flags.iter().enumerate() {
        if f == TexelState::Unfilled && !seen[i] {
            return Err(InpaintError::NoBoundary);
        }
    }
    Ok(color)
}

/// Discrete Laplace (harmonic) fill: Gauss–Seidel over the unfilled region
/// with filled texels as Dirichlet boundary. Outside-chart texels do not
/// participate in the stencil.
fn diffusion(img: &TextureImage, mask: &ValidityMask) -> Result<TextureImage, InpaintError> {
    let res = img.resolution;
    let mut color = nearest_fill_init(img, mask)?;
    let unfilled: Vec<(u32, u32)> = (0..res)
        .flat_map(|y| (0..res).map(move |x| (x, y)))
        .filter(|&(x, y)| mask.flags[img.idx(x, y)] == TexelState::Unfilled)
        .collect();
    let max_iters = 20_000usize;
    for _ in 0..max_iters {
        let mut max_delta: f64 = 0.0;
        for &(x, y) in &unfilled {
            let i = img.idx(x, y);
            let mut acc = [0.0f64; 3];
            let mut n = 0.0;
            for (nx, ny) in neighbors4(x, y, res) {
                let j = img.idx(nx, ny);
                if mask.flags[j] != TexelState::OutsideChart {
                    for k in 0..3 {
                        acc[k] += color[j][k];
                    }
                    n += 1.0;
                }
            }
            if n == 0.0 {
                continue;
            }
            for k in 0..3 {
                let v = acc[k] / n;
                max_delta = max_delta.max((v - color[i][k]).abs());
                color[i][k] = v;
            }
        }
        if max_delta < 1e-4 {
            break;
        }
    }
    let mut out = img.clone();
    for &(x, y) in &unfilled {
        let i = img.idx(x, y);
        out.rgb[i] = [
            color[i][0].round().clamp(0.0, 255.0) as u8,
            color[i][1].round().clamp(0.0, 255.0) as u8,
            color[i][2].round().clamp(0.0, 255.0) as u8,
        ];
    }
    Ok(out)
}

/// Periodic tiling of the patch over the unfilled texels, aligned to the
/// atlas origin: texel (x, y) takes patch color at (x mod w, y mod h).
fn patch_tile(img: &TextureImage, mask: &ValidityMask, patch: &image::RgbImage) -> TextureImage {
    let res = img.resolution;
    let (pw, ph) = (patch.width(), patch.height());
    let mut out = img.clone();
    for y in 0..res {
        for x in 0..res {
            let i = img.idx(x, y);
            if mask.flags[i] == TexelState::Unfilled {
                let p = patch.get_pixel(x % pw, y % ph);
                out.rgb[i] = [p[0], p[1], p[2]];
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Exemplar synthesis

#[derive(Clone)]
struct Level {
    res: u32,
    color: Vec<[f64; 3]>,
    state: Vec<TexelState>,
}

impl Level {
    fn idx(&self, x: u32, y: u32) -> usize {
        (y * self.res + x) as usize
    }
}

fn downsample(l: &Level) -> Level {
    let res = (l.res / 2).max(1);
    let mut color = vec![[0.0; 3]; (res * res) as usize];
    let mut state = vec![TexelState::OutsideChart; (res * res) as usize];
    for y in 0..res {
        for x in 0..res {
            let mut filled_acc = [0.0f64; 3];
            let mut any_acc = [0.0f64; 3];
            let (mut n_filled, mut n_any, mut n_unfilled) = (0.0, 0.0, 0);
            for dy in 0..2u32 {
                for dx in 0..2u32 {
                    let (cx, cy) = (2 * x + dx, 2 * y + dy);
                    if cx >= l.res || cy >= l.res {
                        continue;
                    }
                    let ci = l.idx(cx, cy);
                    match l.state[ci] {
                        TexelState::FilledFromPeelmap => {
                            for k in 0..3 {
                                filled_acc[k] += l.color[ci][k];
                            }
                            n_filled += 1.0;
                        }
                        TexelState::Unfilled => n_unfilled += 1,
                        TexelState::OutsideChart => continue,
                    }
                    for k in 0..3 {
                        any_acc[k] += l.color[ci][k];
                    }
                    n_any += 1.0;
                }
            }
            let i = (y * res + x) as usize;
            if n_filled > 0.0 {
                state[i] = TexelState::FilledFromPeelmap;
                for k in 0..3 {
                    color[i][k] = filled_acc[k] / n_filled;
                }
            } else if n_unfilled > 0 {
                state[i] = TexelState::Unfilled;
                if n_any > 0.0 {
                    for k in 0..3 {
                        color[i][k] = any_acc[k] / n_any;
                    }
                }
            }
        }
    }
    Level { res, color, state }
}

/// SSD patch distance between the window around target `t` and the window
/// around the filled source `s`, averaged over comparable offsets.
fn patch_distance(l: &Level, t: (u32, u32), s: (u32, u32)) -> f64 {
    let mut acc = 0.0;
    let mut n = 0.0;
    for dy in -PATCH_RADIUS..=PATCH_RADIUS {
        for dx in -PATCH_RADIUS..=PATCH_RADIUS {
            let (tx, ty) = (t.0 as i64 + dx, t.1 as i64 + dy);
            let (sx, sy) = (s.0 as i64 + dx, s.1 as i64 + dy);
            if tx < 0 || ty < 0 || tx >= l.res as i64 || ty >= l.res as i64 {
                continue;
            }
            if sx < 0 || sy < 0 || sx >= l.res as i64 || sy >= l.res as i64 {
                continue;
            }
            let ti = l.idx(tx as u32, ty as u32);
            let si = l.idx(sx as u32, sy as u32);
            if l.state[si] != TexelState::FilledFromPeelmap
                || l.state[ti] == TexelState::OutsideChart
            {
                continue;
            }
            for k in 0..3 {
                let d = l.color[ti][k] - l.color[si][k];
                acc += d * d;
            }
            n += 1.0;
        }
    }
    if n > 0.0 {
        acc / n
    } else {
        f64::INFINITY
    }
}

/// PatchMatch-style nearest-neighbour synthesis at one pyramid level. The
/// nearest-neighbour field is seeded from the nearest filled texel and
/// refined with the usual propagation + halving random-search schedule.
fn patchmatch_level(l: &mut Level, seed: u64) {
    let res = l.res;
    let unfilled: Vec<(u32, u32)> = (0..res)
        .flat_map(|y| (0..res).map(move |x| (x, y)))
        .filter(|&(x, y)| l.state[(y * res + x) as usize] == TexelState::Unfilled)
        .collect();
    if unfilled.is_empty() {
        return;
    }
    let filled: Vec<(u32, u32)> = (0..res)
        .flat_map(|y| (0..res).map(move |x| (x, y)))
        .filter(|&(x, y)| l.state[(y * res + x) as usize] == TexelState::FilledFromPeelmap)
        .collect();
    if filled.is_empty() {
        return;
    }
    // seed: nearest filled texel by BFS order
    let mut nnf: Vec<Option<(u32, u32)>> = vec![None; (res * res) as usize];
    {
        let mut q = VecDeque::new();
        let mut src: Vec<Option<(u32, u32)>> = vec![None; (res * res) as usize];
        for &(x, y) in &filled {
            src[l.idx(x, y)] = Some((x, y));
            q.push_back((x, y));
        }
        while let Some((x, y)) = q.pop_front() {
            let s = src[l.idx(x, y)].unwrap();
            for (nx, ny) in neighbors4(x, y, res) {
                let j = l.idx(nx, ny);
                if src[j].is_none() && l.state[j] != TexelState::OutsideChart {
                    src[j] = Some(s);
                    q.push_back((nx, ny));
                }
            }
        }
        for &(x, y) in &unfilled {
            let i = l.idx(x, y);
            nnf[i] = src[i].or(Some(filled[0]));
            let s = nnf[i].unwrap();
            l.color[i] = l.color[l.idx(s.0, s.1)];
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dist: Vec<f64> = vec![f64::INFINITY; (res * res) as usize];
    for &(x, y) in &unfilled {
        let i = l.idx(x, y);
        dist[i] = patch_distance(l, (x, y), nnf[i].unwrap());
    }
    let is_filled_center =
        |l: &Level, s: (u32, u32)| l.state[l.idx(s.0, s.1)] == TexelState::FilledFromPeelmap;
    for iter in 0..PATCHMATCH_ITERS {
        let order: Box<dyn Iterator<Item = &(u32, u32)>> = if iter % 2 == 0 {
            Box::new(unfilled.iter())
        } else {
            Box::new(unfilled.iter().rev())
        };
        let step: i64 = if iter % 2 == 0 { -1 } else { 1 };
        for &(x, y) in order {
            let i = l.idx(x, y);
            let try_candidate = |l: &Level, cand: (i64, i64), dist: &mut Vec<f64>, nnf: &mut Vec<Option<(u32, u32)>>| {
                if cand.0 < 0 || cand.1 < 0 || cand.0 >= res as i64 || cand.1 >= res as i64 {
                    return;
                }
                let s = (cand.0 as u32, cand.1 as u32);
                if !is_filled_center(l, s) {
                    return;
                }
                let d = patch_distance(l, (x, y), s);
                if d < dist[i] {
                    dist[i] = d;
                    nnf[i] = Some(s);
                }
            };
            // propagation from the already-visited neighbours
            for (px, py, ox, oy) in [
                (x as i64 + step, y as i64, -step, 0),
                (x as i64, y as i64 + step, 0, -step),
            ] {
                if px < 0 || py < 0 || px >= res as i64 || py >= res as i64 {
                    continue;
                }
                if let Some(s) = nnf[l.idx(px as u32, py as u32)] {
                    try_candidate(l, (s.0 as i64 + ox, s.1 as i64 + oy), &mut dist, &mut nnf);
                }
            }
            // random search around the current best
            let mut radius = res as i64 / 2;
            while radius >= 1 {
                let cur = nnf[i].unwrap();
                let cand = (
                    cur.0 as i64 + rng.gen_range(-radius..=radius),
                    cur.1 as i64 + rng.gen_range(-radius..=radius),
                );
                try_candidate(l, cand, &mut dist, &mut nnf);
                radius /= 2;
            }
        }
        // write back synthesized colors so later distance evaluations see them
        for &(x, y) in &unfilled {
            let i = l.idx(x, y);
            let s = nnf[i].unwrap();
            l.color[i] = l.color[l.idx(s.0, s.1)];
        }
    }
}

fn exemplar(img: &TextureImage, mask: &ValidityMask) -> TextureImage {
    let base = Level {
        res: img.resolution,
        color: img
            .rgb
            .iter()
            .map(|c| [c[0] as f64, c[1] as f64, c[2] as f64])
            .collect(),
        state: mask.flags.clone(),
    };
    let mut levels = vec![base];
    while levels.len() < PYRAMID_LEVELS && levels.last().unwrap().res >= 16 {
        levels.push(downsample(levels.last().unwrap()));
    }
    for li in (0..levels.len()).rev() {
        if li + 1 < levels.len() {
            // upsample the coarser synthesis as the initial guess
            let (fine, coarse) = {
                let (a, b) = levels.split_at_mut(li + 1);
                (&mut a[li], &b[0])
            };
            for y in 0..fine.res {
                for x in 0..fine.res {
                    let i = fine.idx(x, y);
                    if fine.state[i] == TexelState::Unfilled {
                        let (cx, cy) = ((x / 2).min(coarse.res - 1), (y / 2).min(coarse.res - 1));
                        fine.color[i] = coarse.color[coarse.idx(cx, cy)];
                    }
                }
            }
        }
        patchmatch_level(&mut levels[li], 0x9e3779b9 + li as u64);
    }
    let mut out = img.clone();
    for (i, &f) in mask.flags.iter().enumerate() {
        if f == TexelState::Unfilled {
            let c = levels[0].color[i];
            out.rgb[i] = [
                c[0].round().clamp(0.0, 255.0) as u8,
                c[1].round().clamp(0.0, 255.0) as u8,
                c[2].round().clamp(0.0, 255.0) as u8,
            ];
        }
    }
    out
}
