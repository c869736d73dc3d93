//! Synthetic phantom mammograms for desk-scale training and tests.
//!
//! Each phantom is a half-ellipse tissue region against an exactly-zero
//! background, with smooth band-limited texture, an optional near-white
//! calcification cluster, an optional bright circular marker outline, and
//! (MLO only) a brighter pectoral wedge in the top-left corner. Items at
//! indices `2k` (CC) and `2k+1` (MLO) share the same underlying anatomy.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::View;

use super::{GrayImage, LabeledImage};

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct PhantomConfig {
    pub height: usize,
    pub width: usize,
    pub seed: u64,
    /// Amplitude of the parenchyma-like texture.
    pub texture_strength: f32,
    /// Probability of a calcification dot cluster.
    pub calc_prob: f64,
    /// Probability of a circular skin-marker outline.
    pub marker_prob: f64,
    /// Added intensity of the MLO pectoral wedge.
    pub wedge_intensity: f32,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        PhantomConfig {
            height: 64,
            width: 64,
            seed: 0,
            texture_strength: 0.12,
            calc_prob: 0.3,
            marker_prob: 0.15,
            wedge_intensity: 0.3,
        }
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.height == 0 || self.width == 0 {
            return Err("phantom resolution must be positive".into());
        }
        for (name, p) in [("calc_prob", self.calc_prob), ("marker_prob", self.marker_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(format!("{name} = {p} outside [0, 1]"));
            }
        }
        Ok(())
    }

    /// Deterministic phantom for an index. The view alternates CC/MLO.
    pub fn generate(&self, index: u64) -> LabeledImage {
        let view = if index % 2 == 0 { View::Cc } else { View::Mlo };
        // anatomy is shared between the CC/MLO pair at indices 2k, 2k+1
        let anatomy = index / 2;
        let mut seed_bytes = [0u8; 32];
        seed_bytes[..8].copy_from_slice(&self.seed.to_le_bytes());
        seed_bytes[8..16].copy_from_slice(&anatomy.to_le_bytes());
        seed_bytes[16] = 0x5a;
        let mut rng = ChaCha8Rng::from_seed(seed_bytes);
        let img = self.render(&mut rng, view);
        LabeledImage { image: img, view, source_id: format!("phantom-{index}") }
    }

    fn render(&self, rng: &mut ChaCha8Rng, view: View) -> GrayImage {
        let (h, w) = (self.height, self.width);
        let hf = h as f32;
        let wf = w as f32;

        // breast half-ellipse anchored to the left edge
        let cy = hf * rng.gen_range(0.45..0.55);
        let ry = hf * rng.gen_range(0.36..0.48);
        let rx = wf * rng.gen_range(0.55..0.82);
        let base = rng.gen_range(0.38..0.5);

        let texture = self.value_noise(rng, h, w);

        // wedge geometry drawn for both views to keep the RNG stream of a
        // CC/MLO pair aligned; only MLO renders it
        let wedge_cut = rng.gen_range(0.42..0.58);
        let wedge_slope = rng.gen_range(0.8..1.2);

        let mut data = vec![0.0f32; h * w];
        for y in 0..h {
            for x in 0..w {
                let dy = (y as f32 - cy) / ry;
                let dx = x as f32 / rx;
                let d = dx * dx + dy * dy;
                let mut v = 0.0f32;
                if d < 1.0 {
                    // soft falloff toward the skin line
                    let falloff = ((1.0 - d) * 6.0).min(1.0);
                    v = (base + self.texture_strength * texture[y * w + x]) * falloff;
                }
                if view == View::Mlo {
                    let t = y as f32 / hf + wedge_slope * x as f32 / wf;
                    if t < wedge_cut {
                        let depth = (wedge_cut - t) / wedge_cut;
                        let wedge = base + self.wedge_intensity * (0.5 + 0.5 * depth);
                        v = v.max(wedge * (depth * 8.0).min(1.0));
                    }
                }
                data[y * w + x] = v.clamp(0.0, 1.0);
            }
        }
        let mut img = GrayImage::from_parts(h, w, data);

        if rng.gen_bool(self.calc_prob) {
            self.draw_calcifications(rng, &mut img, cy, ry, rx);
        }
        if rng.gen_bool(self.marker_prob) {
            self.draw_marker(rng, &mut img, cy, ry, rx);
        }
        img
    }

    /// Two-octave value noise in [-1, 1], bilinearly upsampled coarse grids.
    fn value_noise(&self, rng: &mut ChaCha8Rng, h: usize, w: usize) -> Vec<f32> {
        let mut out = vec![0.0f32; h * w];
        for (cells, amp) in [(4usize, 0.65f32), (8, 0.35)] {
            let gh = cells + 1;
            let gw = cells + 1;
            let grid: Vec<f32> = (0..gh * gw).map(|_| rng.gen_range(-1.0..1.0)).collect();
            for y in 0..h {
                let fy = y as f32 / h as f32 * cells as f32;
                let y0 = fy.floor() as usize;
                let ty = fy - y0 as f32;
                for x in 0..w {
                    let fx = x as f32 / w as f32 * cells as f32;
                    let x0 = fx.floor() as usize;
                    let tx = fx - x0 as f32;
                    let g = |yy: usize, xx: usize| grid[yy.min(cells) * gw + xx.min(cells)];
                    let top = g(y0, x0) * (1.0 - tx) + g(y0, x0 + 1) * tx;
                    let bot = g(y0 + 1, x0) * (1.0 - tx) + g(y0 + 1, x0 + 1) * tx;
                    out[y * w + x] += amp * (top * (1.0 - ty) + bot * ty);
                }
            }
        }
        out
    }

    fn draw_calcifications(
        &self,
        rng: &mut ChaCha8Rng,
        img: &mut GrayImage,
        cy: f32,
        ry: f32,
        rx: f32,
    ) {
        let (h, w) = (img.height(), img.width());
        // cluster center well inside the ellipse
        let ang = rng.gen_range(-0.9f32..0.9);
        let rad = rng.gen_range(0.2f32..0.55);
        let ccx = (rad * ang.cos() * rx).min(w as f32 - 3.0);
        let ccy = cy + rad * ang.sin() * ry;
        let dots = rng.gen_range(3..=7);
        for _ in 0..dots {
            let dx = rng.gen_range(-2.5f32..2.5);
            let dy = rng.gen_range(-2.5f32..2.5);
            let bright = rng.gen_range(0.93f32..1.0);
            let px = (ccx + dx).round() as isize;
            let py = (ccy + dy).round() as isize;
            if px >= 0 && py >= 0 && (px as usize) < w && (py as usize) < h {
                let idx = py as usize * w + px as usize;
                if img.data()[idx] > 0.0 {
                    img.data_mut()[idx] = bright;
                }
            }
        }
    }

    fn draw_marker(&self, rng: &mut ChaCha8Rng, img: &mut GrayImage, cy: f32, ry: f32, rx: f32) {
        let (h, w) = (img.height(), img.width());
        let ang = rng.gen_range(-0.7f32..0.7);
        let rad = rng.gen_range(0.15f32..0.45);
        let mx = rad * ang.cos() * rx;
        let my = cy + rad * ang.sin() * ry;
        let r = (w.min(h) as f32 * rng.gen_range(0.05..0.09)).max(2.0);
        for y in 0..h {
            for x in 0..w {
                let d = ((y as f32 - my).powi(2) + (x as f32 - mx).powi(2)).sqrt();
                if (d - r).abs() < 0.7 {
                    let idx = y * w + x;
                    if img.data()[idx] > 0.0 {
                        img.data_mut()[idx] = 0.96;
                    }
                }
            }
        }
    }
}
