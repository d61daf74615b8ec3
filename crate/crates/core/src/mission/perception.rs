use crate::image::GrayImage;

/// Side of the square network input.
pub const NET_INPUT: usize = 168;
/// Pixels darker than this count as gate.
pub const DARK_THRESHOLD: u8 = 128;

/// Source pixels overlapping each destination pixel, with overlap lengths.
fn box_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let lo = i as f64 * scale;
            let hi = lo + scale;
            let mut out = Vec::with_capacity(scale.ceil() as usize + 1);
            let mut j = lo.floor() as usize;
            while (j as f64) < hi && j < src {
                let w = (hi.min(j as f64 + 1.0) - lo.max(j as f64)).max(0.0);
                if w > 0.0 {
                    out.push((j, w / scale));
                }
                j += 1;
            }
            out
        })
        .collect()
}

/// Area-weighted resample to `width × height`.
pub fn resample(img: &GrayImage, width: usize, height: usize) -> GrayImage {
    let wx = box_weights(img.width(), width);
    let wy = box_weights(img.height(), height);
    let mut rows = vec![0f64; img.height() * width];
    for y in 0..img.height() {
        let src = img.row(y);
        let dst = &mut rows[y * width..(y + 1) * width];
        for (d, weights) in dst.iter_mut().zip(&wx) {
            *d = weights.iter().map(|&(j, w)| src[j] as f64 * w).sum();
        }
    }
    let mut out = GrayImage::filled(width, height, 0);
    for (oy, weights) in wy.iter().enumerate() {
        for ox in 0..width {
            let v: f64 = weights.iter().map(|&(j, w)| rows[j * width + ox] * w).sum();
            out.set(ox, oy, v.round().clamp(0.0, 255.0) as u8);
        }
    }
    out
}

/// Network input: the camera frame scaled to 168×168.
pub fn downsample(img: &GrayImage) -> Result<GrayImage, String> {
    if img.width() != 320 || img.height() != 320 {
        return Err(format!("expected 320x320 input, got {}x{}", img.width(), img.height()));
    }
    Ok(resample(img, NET_INPUT, NET_INPUT))
}

pub type InferenceHook = Box<dyn FnMut(&GrayImage) -> f64 + Send>;

pub enum PredictorMode {
    /// Steers towards the dark-pixel centroid: `k · (2u/168 − 1)`.
    GeometricOracle { gain: f64 },
    Plugin(InferenceHook),
}

/// Yaw-rate predictor standing in for the on-board network.
pub struct YawPredictor {
    mode: PredictorMode,
    last_nonzero: f64,
}

impl YawPredictor {
    pub fn geometric(gain: f64) -> Self {
        YawPredictor {
            mode: PredictorMode::GeometricOracle { gain },
            last_nonzero: 0.0,
        }
    }

    pub fn plugin(hook: InferenceHook) -> Self {
        YawPredictor {
            mode: PredictorMode::Plugin(hook),
            last_nonzero: 0.0,
        }
    }

    /// Yaw command in [-1, 1] for a 168×168 frame. With no gate in view the
    /// drone turns at full rate towards where the gate was last seen.
    pub fn predict(&mut self, img: &GrayImage) -> f64 {
        let raw = match &mut self.mode {
            PredictorMode::GeometricOracle { gain } => img.dark_centroid(DARK_THRESHOLD).map(|(u, _)| *gain * (2.0 * u / img.width() as f64 - 1.0)),
            PredictorMode::Plugin(hook) => Some(hook(img)),
        };
        let yaw = match raw {
            Some(y) if y.is_nan() => 0.0,
            Some(y) => y.clamp(-1.0, 1.0),
            None if self.last_nonzero != 0.0 => self.last_nonzero.signum(),
            None => 0.0,
        };
        if yaw != 0.0 {
            self.last_nonzero = yaw;
        }
        yaw
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn blob(width: usize, cx: usize, cy: usize, r: usize) -> GrayImage {
        let mut img = GrayImage::filled(width, width, 224);
        for y in cy - r..cy + r {
            for x in cx - r..cx + r {
                img.set(x, y, 32);
            }
        }
        img
    }

    #[test]
    fn uniform_stays_uniform() {
        for c in [0u8, 77, 224, 255] {
            let out = downsample(&GrayImage::filled(320, 320, c)).unwrap();
            assert_eq!((out.width(), out.height()), (168, 168));
            assert!(out.pixels().iter().all(|&p| p == c));
        }
    }

    #[test]
    fn rejects_wrong_shape() {
        assert!(downsample(&GrayImage::filled(100, 320, 0)).is_err());
    }

    #[test]
    fn weights_cover_each_output_once() {
        for w in box_weights(320, 168) {
            let s: f64 = w.iter().map(|p| p.1).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn centroid_survives_rescale() {
        for (cx, cy) in [(100, 60), (250, 200), (160, 160), (31, 290)] {
            let img = blob(320, cx, cy, 20);
            let (u0, v0) = img.dark_centroid(DARK_THRESHOLD).unwrap();
            let (u1, v1) = downsample(&img).unwrap().dark_centroid(DARK_THRESHOLD).unwrap();
            let s = 168.0 / 320.0;
            assert!((u1 - u0 * s).abs() <= 1.0, "{u1} vs {}", u0 * s);
            assert!((v1 - v0 * s).abs() <= 1.0);
        }
    }

    #[test]
    fn centered_gate_means_straight() {
        let mut p = YawPredictor::geometric(1.0);
        assert_eq!(p.predict(&blob(168, 84, 84, 10)), 0.0);
    }

    #[test]
    fn three_quarter_column_gives_half() {
        let mut img = GrayImage::filled(168, 168, 224);
        // Column 125 has continuous center 125.5; pair with 126 → 126.0.
        for y in 0..168 {
            img.set(125, y, 0);
            img.set(126, y, 0);
        }
        let mut p = YawPredictor::geometric(1.0);
        assert!((p.predict(&img) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn lost_gate_turns_back_to_last_sighting() {
        let mut p = YawPredictor::geometric(1.0);
        assert_eq!(p.predict(&GrayImage::filled(168, 168, 224)), 0.0);
        assert!(p.predict(&blob(168, 30, 84, 10)) < 0.0);
        assert_eq!(p.predict(&GrayImage::filled(168, 168, 224)), -1.0);
    }

    #[test]
    fn plugin_output_is_clamped() {
        let mut p = YawPredictor::plugin(Box::new(|_| 7.0));
        assert_eq!(p.predict(&GrayImage::filled(168, 168, 0)), 1.0);
        let mut p = YawPredictor::plugin(Box::new(|_| f64::NAN));
        assert_eq!(p.predict(&GrayImage::filled(168, 168, 0)), 0.0);
    }

    proptest! {
        #[test]
        fn prediction_always_in_range(
            pixels in proptest::collection::vec(any::<u8>(), 168 * 168),
            gain in 0.0f64..50.0,
        ) {
            let img = GrayImage::from_pixels(168, 168, pixels).unwrap();
            let y = YawPredictor::geometric(gain).predict(&img);
            prop_assert!((-1.0..=1.0).contains(&y));
        }
    }
}
