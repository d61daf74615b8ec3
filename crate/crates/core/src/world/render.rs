//! Flat-shaded pinhole rendering of gate frames into a grayscale frame.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::geometry::{dot, sub, GateSpec, Vec3};
use super::physics::DroneState;
use super::scenario::{PixelNoise, Scenario};
use crate::image::GrayImage;

pub const FRAME_WIDTH: usize = 320;
pub const FRAME_HEIGHT: usize = 320;
pub const BACKGROUND: u8 = 224;
pub const GATE_SHADE: u8 = 32;

const NEAR_PLANE_M: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub width: usize,
    pub height: usize,
    pub hfov_deg: f64,
}

impl CameraIntrinsics {
    pub fn new(hfov_deg: f64) -> Self {
        CameraIntrinsics {
            width: FRAME_WIDTH,
            height: FRAME_HEIGHT,
            hfov_deg,
        }
    }

    /// Focal length in pixels; square pixels, so it serves both axes.
    pub fn focal_px(&self) -> f64 {
        (self.width as f64 / 2.0) / (self.hfov_deg.to_radians() / 2.0).tan()
    }

    /// Projects a camera-frame point (right, up, forward) to continuous pixel
    /// coordinates. Forward must be positive.
    pub fn project(&self, cam: Vec3) -> (f64, f64) {
        let f = self.focal_px();
        (
            self.width as f64 / 2.0 + f * cam[0] / cam[2],
            self.height as f64 / 2.0 - f * cam[1] / cam[2],
        )
    }
}

/// World point expressed in the camera frame of a drone: (right, up, forward).
pub fn to_camera(state: &DroneState, p: Vec3) -> Vec3 {
    let (s, c) = state.heading_rad.sin_cos();
    let d = sub(p, state.position);
    [dot(d, [-s, c, 0.0]), d[2], dot(d, [c, s, 0.0])]
}

/// Clips a polygon to the half-space in front of the near plane.
fn clip_near(poly: &[Vec3]) -> Vec<Vec3> {
    let mut out = Vec::with_capacity(poly.len() + 2);
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        let a_in = a[2] >= NEAR_PLANE_M;
        let b_in = b[2] >= NEAR_PLANE_M;
        if a_in {
            out.push(a);
        }
        if a_in != b_in {
            let t = (NEAR_PLANE_M - a[2]) / (b[2] - a[2]);
            out.push([
                a[0] + t * (b[0] - a[0]),
                a[1] + t * (b[1] - a[1]),
                NEAR_PLANE_M,
            ]);
        }
    }
    out
}

/// Fills a convex polygon, sampling at pixel centers.
fn fill_convex(img: &mut GrayImage, pts: &[(f64, f64)], value: u8) {
    if pts.len() < 3 {
        return;
    }
    let (w, h) = (img.width() as f64, img.height() as f64);
    let min_x = pts.iter().map(|p| p.0).fold(f64::INFINITY, f64::min).max(0.0);
    let max_x = pts.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max).min(w);
    let min_y = pts.iter().map(|p| p.1).fold(f64::INFINITY, f64::min).max(0.0);
    let max_y = pts.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max).min(h);
    if min_x >= max_x || min_y >= max_y {
        return;
    }
    let area: f64 = (0..pts.len())
        .map(|i| {
            let (a, b) = (pts[i], pts[(i + 1) % pts.len()]);
            a.0 * b.1 - b.0 * a.1
        })
        .sum();
    let orient = if area >= 0.0 { 1.0 } else { -1.0 };
    let x0 = (min_x - 0.5).ceil().max(0.0) as usize;
    let x1 = ((max_x - 0.5).floor() as isize).min(img.width() as isize - 1);
    let y0 = (min_y - 0.5).ceil().max(0.0) as usize;
    let y1 = ((max_y - 0.5).floor() as isize).min(img.height() as isize - 1);
    if x1 < 0 || y1 < 0 {
        return;
    }
    for y in y0..=y1 as usize {
        let py = y as f64 + 0.5;
        // Intersect the scanline with every edge's half-plane to get a span.
        let mut lo = x0 as f64 + 0.5;
        let mut hi = x1 as f64 + 0.5;
        for i in 0..pts.len() {
            let (a, b) = (pts[i], pts[(i + 1) % pts.len()]);
            // inside iff orient * ((b - a) × (p - a)) >= 0
            let ex = b.0 - a.0;
            let ey = b.1 - a.1;
            let k = orient * -ey; // coefficient of px
            let c = orient * (ex * (py - a.1) + ey * a.0);
            if k > 0.0 {
                lo = lo.max(-c / k);
            } else if k < 0.0 {
                hi = hi.min(-c / k);
            } else if c < 0.0 {
                hi = f64::NEG_INFINITY;
            }
        }
        if lo > hi {
            continue;
        }
        let start = (lo - 0.5).ceil().max(x0 as f64) as usize;
        let end = (hi - 0.5).floor().min(x1 as f64);
        if end < start as f64 {
            continue;
        }
        let width = img.width();
        let line = &mut img.pixels_mut()[y * width..(y + 1) * width];
        for px in &mut line[start..=end as usize] {
            *px = value;
        }
    }
}

fn draw_gate(img: &mut GrayImage, intrinsics: &CameraIntrinsics, state: &DroneState, gate: &GateSpec) {
    for (lat, vert) in gate.frame_bars() {
        let corners = [
            gate.world_point(0.0, lat[0], vert[0]),
            gate.world_point(0.0, lat[1], vert[0]),
            gate.world_point(0.0, lat[1], vert[1]),
            gate.world_point(0.0, lat[0], vert[1]),
        ];
        let cam: Vec<Vec3> = corners.iter().map(|&p| to_camera(state, p)).collect();
        let clipped = clip_near(&cam);
        let projected: Vec<(f64, f64)> = clipped.iter().map(|&p| intrinsics.project(p)).collect();
        fill_convex(img, &projected, GATE_SHADE);
    }
}

fn pose_seed(seed: u64, state: &DroneState) -> u64 {
    let mut h = seed ^ 0x9e37_79b9_7f4a_7c15;
    for v in [state.position[0], state.position[1], state.position[2], state.heading_rad] {
        h ^= v.to_bits();
        h = h.wrapping_mul(0xbf58_476d_1ce4_e5b9);
        h ^= h >> 31;
    }
    h
}

fn add_noise(img: &mut GrayImage, noise: &PixelNoise, state: &DroneState) {
    let Ok(dist) = Normal::new(0.0, noise.sigma) else {
        return;
    };
    let mut rng = ChaCha8Rng::seed_from_u64(pose_seed(noise.seed, state));
    for p in img.pixels_mut() {
        let v = *p as f64 + dist.sample(&mut rng);
        *p = v.round().clamp(0.0, 255.0) as u8;
    }
}

/// Renders what the drone's forward camera sees. Depends only on the pose
/// and the scenario.
pub fn render_camera(state: &DroneState, scenario: &Scenario) -> GrayImage {
    let intrinsics = CameraIntrinsics::new(scenario.camera_fov_deg);
    let mut img = GrayImage::filled(intrinsics.width, intrinsics.height, BACKGROUND);
    for gate in &scenario.gates {
        draw_gate(&mut img, &intrinsics, state, gate);
    }
    if let Some(noise) = &scenario.noise {
        add_noise(&mut img, noise, state);
    }
    img
}
