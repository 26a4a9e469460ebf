use serde::{Deserialize, Serialize};

use super::*;
use crate::error::{Error, Result};

pub const IMAGE_SIZE: usize = 64;

/// Row-major `H x W x 3` image with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageTensor {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f32>,
}

impl ImageTensor {
    pub fn new(height: usize, width: usize, pixels: Vec<f32>) -> Result<Self> {
        if pixels.len() != height * width * 3 {
            return Err(Error::Shape(format!("{} values for a {height}x{width}x3 image", pixels.len())));
        }
        if pixels.iter().any(|p| !p.is_finite() || *p < 0.0 || *p > 1.0) {
            return Err(Error::Shape("pixel values must lie in [0, 1]".into()));
        }
        Ok(Self { height, width, pixels })
    }

    pub fn pixel(&self, row: usize, col: usize) -> [f32; 3] {
        let i = (row * self.width + col) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    /// Quantized to bytes; rendered images round-trip exactly.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.pixels.iter().map(|p| (p * 255.0).round() as u8).collect()
    }

    pub fn from_bytes(height: usize, width: usize, bytes: &[u8]) -> Result<Self> {
        Self::new(height, width, bytes.iter().map(|b| *b as f32 / 255.0).collect())
    }
}

const BACKGROUND: [u8; 3] = [200, 200, 200];
const ROBOT: [u8; 3] = [110, 110, 110];
const DRAWER_BODY: [u8; 3] = [140, 90, 50];
const DRAWER_CAVITY: [u8; 3] = [80, 50, 25];
const ROBOT_HALF: [f64; 2] = [0.08, 0.06];

fn color(kind: ObjectKind) -> [u8; 3] {
    match kind {
        ObjectKind::Apple => [200, 30, 30],
        ObjectKind::Lemon => [235, 210, 40],
        ObjectKind::Soap => [40, 80, 200],
    }
}

fn covers(kind: ObjectKind, center: [f64; 2], p: [f64; 2]) -> bool {
    let dx = p[0] - center[0];
    let dy = p[1] - center[1];
    match kind {
        ObjectKind::Apple => dx * dx + dy * dy <= 0.030 * 0.030,
        ObjectKind::Lemon => (dx / 0.035).powi(2) + (dy / 0.022).powi(2) <= 1.0,
        ObjectKind::Soap => dx.abs() <= 0.025 && dy.abs() <= 0.015,
    }
}

fn in_rect(center: [f64; 2], half: [f64; 2], p: [f64; 2]) -> bool {
    (p[0] - center[0]).abs() <= half[0] && (p[1] - center[1]).abs() <= half[1]
}

/// Orthographic top view of the workspace square. Rows run along `+x`
/// (away from the robot), columns along `+y`. Each pixel takes the color
/// of the topmost shape covering its center.
pub fn render_topview(scene: &SceneSpec) -> ImageTensor {
    render_sized(scene, IMAGE_SIZE)
}

pub(crate) fn render_sized(scene: &SceneSpec, size: usize) -> ImageTensor {
    let pitch = 2.0 * WORKSPACE_HALF / size as f64;
    let mut bytes = Vec::with_capacity(size * size * 3);
    for row in 0..size {
        for col in 0..size {
            let p = [-WORKSPACE_HALF + (row as f64 + 0.5) * pitch, -WORKSPACE_HALF + (col as f64 + 0.5) * pitch];
            let mut c = BACKGROUND;
            if let Some(d) = &scene.drawer {
                if in_rect(d.position, [DRAWER_HALF; 2], p) {
                    c = if d.open && d.cavity_contains(p) { DRAWER_CAVITY } else { DRAWER_BODY };
                }
            }
            if in_rect([BASE_X, scene.robot_base_y], ROBOT_HALF, p) {
                c = ROBOT;
            }
            for o in &scene.objects {
                if covers(o.kind, o.position, p) {
                    c = color(o.kind);
                }
            }
            bytes.extend_from_slice(&c);
        }
    }
    ImageTensor::from_bytes(size, size, &bytes).expect("palette values are in range")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scene_with(kind: ObjectKind, pos: [f64; 2]) -> SceneSpec {
        SceneSpec {
            objects: vec![SceneObject { kind, position: pos }],
            target_index: 0,
            robot_base_y: 0.0,
            drawer: None,
            task: Task::Reach,
            variability: Variability::Var2,
        }
    }

    #[test]
    fn shape_and_range() {
        let img = render_topview(&scene_with(ObjectKind::Apple, NOMINAL_TARGET));
        assert_eq!((img.height, img.width, img.pixels.len()), (64, 64, 64 * 64 * 3));
        assert!(img.pixels.iter().all(|p| (0.0..=1.0).contains(p)));
        assert_eq!(ImageTensor::from_bytes(64, 64, &img.to_bytes()).unwrap(), img);
    }

    #[test]
    fn displacement_changes_pixels() {
        for kind in ObjectKind::ALL {
            let a = render_topview(&scene_with(kind, [0.0, 0.1]));
            let b = render_topview(&scene_with(kind, [0.01, 0.1]));
            let c = render_topview(&scene_with(kind, [0.0, 0.11]));
            assert_ne!(a, b, "{kind:?}");
            assert_ne!(a, c, "{kind:?}");
            assert_eq!(a, render_topview(&scene_with(kind, [0.0, 0.1])));
        }
    }

    #[test]
    fn colors_identify_kinds() {
        let img = render_topview(&scene_with(ObjectKind::Lemon, [0.0, 0.0]));
        let centre = img.pixel(32, 32);
        assert_eq!(centre, [235.0 / 255.0, 210.0 / 255.0, 40.0 / 255.0]);
        let corner = img.pixel(63, 63);
        assert_eq!(corner, [200.0 / 255.0; 3]);
        // the robot base pokes into the near edge of the view
        assert_eq!(img.pixel(0, 32), [110.0 / 255.0; 3]);
    }

    #[test]
    fn open_drawer_shows_cavity() {
        let mut s = scene_with(ObjectKind::Soap, NOMINAL_TARGET);
        s.drawer = Some(Drawer { position: [0.0, -0.12], open: true });
        let open = render_topview(&s);
        s.drawer.as_mut().unwrap().open = false;
        let closed = render_topview(&s);
        assert_ne!(open, closed);
    }

    #[test]
    fn invalid_images_rejected() {
        assert!(ImageTensor::new(2, 2, vec![0.5; 11]).is_err());
        assert!(ImageTensor::new(1, 1, vec![0.5, 1.5, 0.0]).is_err());
    }
}
