//! Synthetic eye-in-hand camera images.

use super::World;
use crate::kinematics::CartesianPoint;
use crate::segmentation::{Hsv, Illumination, SceneImage};

const SAND_CELL: f64 = 5e-4;
const NIR_DARK: Hsv = Hsv::new(0.0, 0.0, 0.04);
const NIR_BLACK: Hsv = Hsv::new(0.0, 0.0, 0.05);

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn unit(h: u64, k: u32) -> f64 {
    ((h >> (k * 16)) & 0xffff) as f64 / 65535.0
}

fn cell_hash(x: f64, y: f64, seed: u64) -> u64 {
    let ix = (x / SAND_CELL).floor() as i64 as u64;
    let iy = (y / SAND_CELL).floor() as i64 as u64;
    splitmix(splitmix(ix ^ seed.rotate_left(17)) ^ iy.wrapping_mul(0x2545_f491_4f6c_dd1d))
}

fn sand_color(x: f64, y: f64, seed: u64) -> Hsv {
    let h = cell_hash(x, y, seed);
    Hsv::new(
        40.0 + 15.0 * unit(h, 0),
        0.15 + 0.18 * unit(h, 1),
        0.55 + 0.25 * unit(h, 2),
    )
}

fn lit_color(x: f64, y: f64, seed: u64) -> Hsv {
    let h = cell_hash(x, y, seed);
    Hsv::new(25.0, 0.3, 0.80 + 0.10 * unit(h, 0))
}

struct ProjectedDisc {
    u: f64,
    v: f64,
    r: f64,
    color: Hsv,
    blue: bool,
}

impl World {
    /// Renders the current camera view. Ground is textured on the tangent
    /// plane below the camera; particles are discs projected from their
    /// true centres. Under the lamp, everything outside the NIR spot is
    /// dark and blue particles inside it render black.
    pub fn render(&self, illumination: Illumination) -> SceneImage {
        let cam = *self.intrinsics();
        let c = self.camera_position();
        let yaw = self.camera_yaw();
        let (sy, cy) = yaw.sin_cos();
        let h0 = self.scene.ground_height(c.x, c.y);
        let (gx, gy) = self.scene.terrain.gradient(c.x, c.y);
        let seed = self.scene.seed;

        let focus = self.focus_point();
        let defocus = focus.z - self.scene.ground_height(focus.x, focus.y);
        let spot_r = self.config().rig.spot_radius(defocus);

        let depth = c.z - h0;
        let half_view = (cam.width.max(cam.height) as f64 / cam.omega) * depth;
        let discs: Vec<ProjectedDisc> = self
            .scene
            .particles_near(c.x, c.y, half_view)
            .into_iter()
            .filter_map(|p| {
                let center = CartesianPoint::new(p.x, p.y, self.scene.ground_height(p.x, p.y));
                let px = self.project_world(center)?;
                Some(ProjectedDisc {
                    u: px.u,
                    v: px.v,
                    r: p.radius() * cam.omega / (c.z - center.z),
                    color: p.color.hsv(),
                    blue: p.color.is_blue(),
                })
            })
            .collect();

        let mut img = SceneImage::filled(cam.width, cam.height, NIR_DARK, illumination);
        let lamp = illumination == Illumination::NirLamp;
        let (mut u_range, mut v_range) = (0..cam.width, 0..cam.height);
        if lamp {
            // only the lit spot differs from the dark background
            let ground = CartesianPoint::new(focus.x, focus.y, focus.z - defocus);
            let Some(p) = self.project_world(ground) else {
                return img;
            };
            let r = 1.5 * spot_r * cam.omega / (c.z - ground.z).max(1e-3) + 3.0;
            let clip = |lo: f64, hi: f64, n: u32| {
                (lo.floor().clamp(0.0, n as f64) as u32)..(hi.ceil().clamp(0.0, n as f64) as u32)
            };
            u_range = clip(p.u - r, p.u + r, cam.width);
            v_range = clip(p.v - r, p.v + r, cam.height);
        }
        for v in v_range {
            let b = (v as f64 + 0.5 - cam.principal_point.v) / cam.omega;
            for u in u_range.clone() {
                let a = (u as f64 + 0.5 - cam.principal_point.u) / cam.omega;
                let dx = cy * a - sy * b;
                let dy = sy * a + cy * b;
                let t = depth / (1.0 + gx * dx + gy * dy);
                let (x, y) = (c.x + t * dx, c.y + t * dy);
                let in_spot = lamp && (x - focus.x).hypot(y - focus.y) <= spot_r;
                let (pu, pv) = (u as f64 + 0.5, v as f64 + 0.5);
                let disc = discs
                    .iter()
                    .rev()
                    .find(|d| (pu - d.u).hypot(pv - d.v) <= d.r);
                let color = match (lamp, in_spot, disc) {
                    (false, _, Some(d)) => d.color,
                    (false, _, None) => sand_color(x, y, seed),
                    (true, false, _) => NIR_DARK,
                    (true, true, Some(d)) if d.blue => NIR_BLACK,
                    (true, true, Some(d)) => Hsv::new(10.0, 0.5 * d.color.s, 0.85),
                    (true, true, None) => lit_color(x, y, seed),
                };
                img.set(u, v, color);
            }
        }
        img
    }
}
