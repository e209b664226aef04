//! Anti-aliased grayscale rasterizer. Pixel intensity is the coverage of a
//! half-pixel ramp around each shape's boundary, so images vary continuously
//! with the state.

use super::{EnvId, EnvState};

pub const IMAGE_SIZE: usize = 32;

/// Grayscale `IMAGE_SIZE x IMAGE_SIZE` image, row-major, row 0 at the top.
pub type Image = Vec<f64>;

struct Canvas {
    half_extent: f64,
    pixels: Image,
}

impl Canvas {
    fn new(half_extent: f64) -> Self {
        Canvas {
            half_extent,
            pixels: vec![0.0; IMAGE_SIZE * IMAGE_SIZE],
        }
    }

    fn px_per_unit(&self) -> f64 {
        IMAGE_SIZE as f64 / (2.0 * self.half_extent)
    }

    /// World coordinates of a pixel center.
    fn center(&self, row: usize, col: usize) -> (f64, f64) {
        let s = 1.0 / self.px_per_unit();
        let x = -self.half_extent + (col as f64 + 0.5) * s;
        let y = self.half_extent - (row as f64 + 0.5) * s;
        (x, y)
    }

    /// Paint with `intensity` where the signed distance (world units) is negative.
    fn paint(&mut self, intensity: f64, sdf: impl Fn(f64, f64) -> f64) {
        let k = self.px_per_unit();
        for row in 0..IMAGE_SIZE {
            for col in 0..IMAGE_SIZE {
                let (x, y) = self.center(row, col);
                let cover = (0.5 - sdf(x, y) * k).clamp(0.0, 1.0);
                let p = &mut self.pixels[row * IMAGE_SIZE + col];
                *p = p.max(cover * intensity);
            }
        }
    }
}

fn segment_distance(px: f64, py: f64, a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((px - a.0) * dx + (py - a.1) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (px - a.0 - t * dx).hypot(py - a.1 - t * dy)
}

pub fn render(id: EnvId, state: &EnvState) -> Image {
    let s = &state.values;
    match id {
        EnvId::PointMass2D => {
            let mut c = Canvas::new(3.0);
            // goal marker: a dim plus at the origin
            c.paint(0.4, |x, y| x.abs().max(y.abs() * 4.0) - 0.2);
            c.paint(0.4, |x, y| (x.abs() * 4.0).max(y.abs()) - 0.2);
            let (px, py) = (s[0], s[1]);
            c.paint(1.0, |x, y| (x - px).hypot(y - py) - 0.35);
            c.pixels
        }
        EnvId::PendulumSwingUp => {
            let mut c = Canvas::new(1.5);
            let tip = (s[0].sin(), s[0].cos());
            c.paint(1.0, |x, y| segment_distance(x, y, (0.0, 0.0), tip) - 0.08);
            c.paint(0.5, |x, y| x.hypot(y) - 0.1);
            c.pixels
        }
        EnvId::CartPole => {
            let mut c = Canvas::new(3.0);
            let (x0, th) = (s[0], s[2]);
            c.paint(0.6, |x, y| ((x - x0).abs() - 0.25).max((y + 0.1).abs() - 0.125));
            let base = (x0, 0.025);
            let tip = (x0 + th.sin(), 0.025 + th.cos());
            c.paint(1.0, |x, y| segment_distance(x, y, base, tip) - 0.06);
            c.pixels
        }
    }
}
