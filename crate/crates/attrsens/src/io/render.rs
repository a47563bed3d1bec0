//! PNG rendering for attribution maps: a blue-white-red diverging map
//! for signed values in [-1, 1] and a black-to-white ramp for masks.

use std::path::Path;

use crate::error::{Error, Result};

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Map a signed value in [-1, 1] to the diverging palette:
/// -1 -> blue, 0 -> white, +1 -> red.
pub fn diverging_rgb(v: f64) -> [u8; 3] {
    let v = v.clamp(-1.0, 1.0);
    if v < 0.0 {
        let t = 1.0 + v; // 0 at -1, 1 at 0
        [to_byte(t), to_byte(t), 255]
    } else {
        let t = 1.0 - v;
        [255, to_byte(t), to_byte(t)]
    }
}

pub fn render_heatmap_png(values: &[f64], side: usize, path: &Path) -> Result<()> {
    check(values, side)?;
    let mut img = image::RgbImage::new(side as u32, side as u32);
    for y in 0..side {
        for x in 0..side {
            img.put_pixel(x as u32, y as u32, image::Rgb(diverging_rgb(values[y * side + x])));
        }
    }
    img.save(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

pub fn render_mask_png(values: &[f64], side: usize, path: &Path) -> Result<()> {
    check(values, side)?;
    let mut img = image::GrayImage::new(side as u32, side as u32);
    for y in 0..side {
        for x in 0..side {
            img.put_pixel(x as u32, y as u32, image::Luma([to_byte(values[y * side + x])]));
        }
    }
    img.save(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

fn check(values: &[f64], side: usize) -> Result<()> {
    if values.len() != side * side {
        return Err(Error::ShapeMismatch {
            expected: format!("{} values", side * side),
            got: format!("{}", values.len()),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn palette_endpoints_and_midpoint() {
        assert_eq!(diverging_rgb(-1.0), [0, 0, 255]);
        assert_eq!(diverging_rgb(0.0), [255, 255, 255]);
        assert_eq!(diverging_rgb(1.0), [255, 0, 0]);
        assert_eq!(diverging_rgb(-0.5), [128, 128, 255]);
        assert_eq!(diverging_rgb(0.5), [255, 128, 128]);
    }

    #[test]
    fn png_round_trips_pixel_values() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.png");
        let values = vec![-1.0, 0.0, 1.0, 0.5];
        render_heatmap_png(&values, 2, &p).unwrap();
        let img = image::open(&p).unwrap().to_rgb8();
        assert_eq!(img.get_pixel(0, 0).0, [0, 0, 255]);
        assert_eq!(img.get_pixel(1, 0).0, [255, 255, 255]);
        assert_eq!(img.get_pixel(0, 1).0, [255, 0, 0]);

        let mp = dir.path().join("g.png");
        render_mask_png(&[0.0, 1.0, 0.5, 0.25], 2, &mp).unwrap();
        let g = image::open(&mp).unwrap().to_luma8();
        assert_eq!(g.get_pixel(0, 0).0, [0]);
        assert_eq!(g.get_pixel(1, 0).0, [255]);
    }

    #[test]
    fn wrong_length_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(render_heatmap_png(&[0.0; 3], 2, &dir.path().join("x.png")).is_err());
    }
}
