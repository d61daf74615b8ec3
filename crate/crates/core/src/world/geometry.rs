use serde::{Deserialize, Serialize};

/// Half extents of the 9.2 × 9.2 × 2.9 cm airframe.
pub const DRONE_HALF_WIDTH_M: f64 = 0.046;
pub const DRONE_HALF_HEIGHT_M: f64 = 0.0145;

pub type Vec3 = [f64; 3];

pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

/// Square gate: a frame of side `frame_outer_m` around a square opening.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateSpec {
    /// Center of the opening.
    pub center: Vec3,
    #[serde(default = "default_opening")]
    pub opening_m: f64,
    #[serde(default = "default_outer")]
    pub frame_outer_m: f64,
    #[serde(default = "default_thickness")]
    pub thickness_m: f64,
    /// Heading of the traversal direction (the gate normal); 0 means +x.
    #[serde(default)]
    pub normal_heading_rad: f64,
}

fn default_opening() -> f64 {
    0.40
}
fn default_outer() -> f64 {
    0.60
}
fn default_thickness() -> f64 {
    0.03
}

/// Opening bottom edge above ground.
pub const GATE_OPENING_BOTTOM_M: f64 = 0.83;

impl GateSpec {
    /// A standard 40/60 cm gate whose opening starts 83 cm above ground.
    pub fn standard(x: f64, y: f64) -> Self {
        GateSpec {
            center: [x, y, GATE_OPENING_BOTTOM_M + default_opening() / 2.0],
            opening_m: default_opening(),
            frame_outer_m: default_outer(),
            thickness_m: default_thickness(),
            normal_heading_rad: 0.0,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.opening_m > 0.0 && self.opening_m < self.frame_outer_m && self.thickness_m >= 0.0
    }

    pub fn normal(&self) -> Vec3 {
        [self.normal_heading_rad.cos(), self.normal_heading_rad.sin(), 0.0]
    }

    /// Horizontal axis in the gate plane.
    pub fn lateral(&self) -> Vec3 {
        [-self.normal_heading_rad.sin(), self.normal_heading_rad.cos(), 0.0]
    }

    /// (along normal, lateral, vertical) offsets of `p` from the gate center.
    pub fn local(&self, p: Vec3) -> Vec3 {
        let d = sub(p, self.center);
        [dot(d, self.normal()), dot(d, self.lateral()), d[2]]
    }

    pub fn world_point(&self, along: f64, lateral: f64, vertical: f64) -> Vec3 {
        let n = self.normal();
        let l = self.lateral();
        [
            self.center[0] + along * n[0] + lateral * l[0],
            self.center[1] + along * n[1] + lateral * l[1],
            self.center[2] + vertical,
        ]
    }

    fn fits_opening(&self, lateral: f64, vertical: f64) -> bool {
        let half = self.opening_m / 2.0;
        lateral.abs() + DRONE_HALF_WIDTH_M <= half && vertical.abs() + DRONE_HALF_HEIGHT_M <= half
    }

    fn overlaps_frame(&self, lateral: f64, vertical: f64) -> bool {
        let half = self.frame_outer_m / 2.0;
        lateral.abs() - DRONE_HALF_WIDTH_M < half && vertical.abs() - DRONE_HALF_HEIGHT_M < half
    }

    /// The four frame bars as (lateral range, vertical range) rectangles.
    pub fn frame_bars(&self) -> [([f64; 2], [f64; 2]); 4] {
        let o = self.frame_outer_m / 2.0;
        let i = self.opening_m / 2.0;
        [
            ([-o, o], [i, o]),
            ([-o, o], [-o, -i]),
            ([-o, -i], [-i, i]),
            ([i, o], [-i, i]),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Traversal {
    None,
    Traversed,
    Collided,
}

/// Where a step segment pierced the gate's center plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneCrossing {
    pub lateral: f64,
    pub vertical: f64,
    pub forward: bool,
}

pub fn plane_crossing(prev: Vec3, new: Vec3, gate: &GateSpec) -> Option<PlaneCrossing> {
    let a = gate.local(prev);
    let b = gate.local(new);
    let forward = a[0] < 0.0 && b[0] >= 0.0;
    let backward = a[0] >= 0.0 && b[0] < 0.0;
    if !(forward || backward) {
        return None;
    }
    let t = a[0] / (a[0] - b[0]);
    Some(PlaneCrossing {
        lateral: a[1] + t * (b[1] - a[1]),
        vertical: a[2] + t * (b[2] - a[2]),
        forward,
    })
}

/// Classifies the motion `prev → new` against `gate`.
///
/// A forward crossing inside the opening (airframe included) is a traversal.
/// Crossing the plane where the airframe overlaps the frame, or reaching into
/// the frame's slab while overlapping it, is a collision.
pub fn check_traversal(prev: Vec3, new: Vec3, gate: &GateSpec) -> Traversal {
    if let Some(c) = plane_crossing(prev, new, gate) {
        if gate.fits_opening(c.lateral, c.vertical) {
            return if c.forward {
                Traversal::Traversed
            } else {
                Traversal::None
            };
        }
        if gate.overlaps_frame(c.lateral, c.vertical) {
            return Traversal::Collided;
        }
        return Traversal::None;
    }
    let b = gate.local(new);
    let slab = gate.thickness_m / 2.0 + DRONE_HALF_WIDTH_M;
    if b[0].abs() <= slab && !gate.fits_opening(b[1], b[2]) && gate.overlaps_frame(b[1], b[2]) {
        return Traversal::Collided;
    }
    Traversal::None
}
