//! Independent reference implementations the acceptance run compares against.

use std::collections::BTreeMap;

use animate_core::mask::{MotionMask, Resolution};
use animate_core::nn::{build_model, parameter_gradients, DenoiserConfig, DenoiserModel};
use animate_core::schedule::NoiseSchedule;
use animate_core::strength::{strength, MotionStrength};
use animate_core::{LossReport, Rng, TrainBatch, VideoTensor};

/// A pixel moves if any consecutive pair differs by more than the threshold.
pub fn frame_diff(v: &VideoTensor, threshold: f64) -> Vec<bool> {
    let (h, w) = (v.height(), v.width());
    let mut out = vec![false; h * w];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = (1..v.frames()).any(|f| (v.get(f, 0, y, x) - v.get(f - 1, 0, y, x)).abs() > threshold);
        }
    }
    out
}

fn neighbours(i: usize, h: usize, w: usize, diagonal: bool) -> impl Iterator<Item = usize> {
    let (y, x) = ((i / w) as i64, (i % w) as i64);
    (-1i64..=1)
        .flat_map(move |dy| (-1i64..=1).map(move |dx| (dy, dx)))
        .filter(move |&(dy, dx)| (dy, dx) != (0, 0) && (diagonal || dy == 0 || dx == 0))
        .map(move |(dy, dx)| (y + dy, x + dx))
        .filter(move |&(ny, nx)| ny >= 0 && nx >= 0 && ny < h as i64 && nx < w as i64)
        .map(move |(ny, nx)| ny as usize * w + nx as usize)
}

/// Small 8-connected specks removed, then everything the border flood
/// (4-connected, through background) cannot reach is filled.
pub fn fill(m: &[bool], h: usize, w: usize) -> Vec<bool> {
    let mut kept = m.to_vec();
    let mut seen = vec![false; h * w];
    for start in 0..h * w {
        if !m[start] || seen[start] {
            continue;
        }
        let mut component = vec![start];
        seen[start] = true;
        let mut k = 0;
        while k < component.len() {
            for j in neighbours(component[k], h, w, true) {
                if m[j] && !seen[j] {
                    seen[j] = true;
                    component.push(j);
                }
            }
            k += 1;
        }
        if component.len() < 4 {
            component.iter().for_each(|&i| kept[i] = false);
        }
    }
    let mut outside = vec![false; h * w];
    let mut stack: Vec<usize> = (0..h * w)
        .filter(|&i| !kept[i] && (i / w == 0 || i % w == 0 || i / w == h - 1 || i % w == w - 1))
        .collect();
    while let Some(i) = stack.pop() {
        if outside[i] {
            continue;
        }
        outside[i] = true;
        stack.extend(neighbours(i, h, w, false).filter(|&j| !kept[j] && !outside[j]));
    }
    outside.iter().map(|&o| !o).collect()
}

const H: f64 = 1e-4;

fn reduced_model() -> DenoiserModel {
    let cfg = DenoiserConfig { base_width: 4, embed_dim: 8, latent_hw: 4, frames: 3, ..DenoiserConfig::default() };
    let mut rng = Rng::new(5);
    let mut m = build_model(cfg, &mut rng).unwrap();
    // Give the zero-initialized mask slice non-trivial values too.
    let mut r = rng.derive(99);
    for v in m.param_mut("input.weight").unwrap().iter_mut().filter(|v| **v == 0.0) {
        *v = 0.3 * r.gaussian();
    }
    m
}

fn reduced_batch(t: usize) -> TrainBatch {
    let mut r = Rng::new(11);
    let z0 = r.gaussian_like([3, 1, 4, 4]);
    let eps = r.gaussian_like([3, 1, 4, 4]);
    let s = strength(&z0).unwrap().0 * 0.5;
    TrainBatch {
        z0_prime: z0,
        mask: MotionMask::from_fn(4, 4, Resolution::Latent, |y, x| (y + x) % 3 != 0),
        t,
        eps,
        s_target: MotionStrength(s),
        class_id: 3,
        stride: 2,
    }
}

/// Worst relative error between `analytic` and central differences of `f`.
fn compare(m: &DenoiserModel, analytic: &BTreeMap<String, Vec<f64>>, f: &dyn Fn(&DenoiserModel) -> f64) -> f64 {
    let mut worst: f64 = 0.0;
    for name in m.params().keys() {
        for i in 0..m.param(name).len() {
            let mut plus = m.clone();
            plus.param_mut(name).unwrap()[i] += H;
            let mut minus = m.clone();
            minus.param_mut(name).unwrap()[i] -= H;
            let numeric = (f(&plus) - f(&minus)) / (2.0 * H);
            let a = analytic[name][i];
            worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6));
        }
    }
    worst
}

fn report(m: &DenoiserModel, b: &TrainBatch, sched: &NoiseSchedule, lambda: f64) -> LossReport {
    parameter_gradients(m, b, sched, lambda).unwrap().0
}

/// Gradient of the full loss at each timestep.
pub fn gradient_check(lambda: f64, timesteps: &[usize]) -> f64 {
    let sched = NoiseSchedule::linear(1000, 1e-4, 0.02).unwrap();
    let m = reduced_model();
    let mut worst: f64 = 0.0;
    for &t in timesteps {
        let b = reduced_batch(t);
        let analytic: BTreeMap<_, _> = parameter_gradients(&m, &b, &sched, lambda).unwrap().1.into_iter().collect();
        worst = worst.max(compare(&m, &analytic, &|p| report(p, &b, &sched, lambda).l));
    }
    worst
}

/// Gradient of the strength term alone, isolated as grad(λ=1) − grad(λ=0).
pub fn strength_gradient_check() -> f64 {
    let sched = NoiseSchedule::linear(1000, 1e-4, 0.02).unwrap();
    let m = reduced_model();
    let b = reduced_batch(300);
    let g1 = parameter_gradients(&m, &b, &sched, 1.0).unwrap().1;
    let g0: BTreeMap<_, _> = parameter_gradients(&m, &b, &sched, 0.0).unwrap().1.into_iter().collect();
    let analytic: BTreeMap<String, Vec<f64>> = g1
        .into_iter()
        .map(|(k, v)| {
            let d = v.iter().zip(&g0[&k]).map(|(a, b)| a - b).collect();
            (k, d)
        })
        .collect();
    compare(&m, &analytic, &|p| report(p, &b, &sched, 1.0).l_s)
}
