//! SLIC superpixels: localized k-means in (L, a, b, x, y) space.

use super::dims3;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone)]
pub struct SuperpixelSegmentation {
    /// Row-major label per pixel, labels contiguous 0..count.
    pub labels: Vec<u32>,
    pub count: usize,
    pub height: usize,
    pub width: usize,
}

fn srgb_to_lab(r: f64, g: f64, b: f64) -> [f64; 3] {
    fn lin(u: f64) -> f64 {
        if u <= 0.04045 {
            u / 12.92
        } else {
            ((u + 0.055) / 1.055).powf(2.4)
        }
    }
    let (r, g, b) = (lin(r), lin(g), lin(b));
    let x = 0.4124564 * r + 0.3575761 * g + 0.1804375 * b;
    let y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b;
    let z = 0.0193339 * r + 0.1191920 * g + 0.9503041 * b;
    // D65 white point
    let (xn, yn, zn) = (0.95047, 1.0, 1.08883);
    fn f(t: f64) -> f64 {
        if t > 0.008856 {
            t.cbrt()
        } else {
            7.787 * t + 16.0 / 116.0
        }
    }
    let (fx, fy, fz) = (f(x / xn), f(y / yn), f(z / zn));
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

struct Cluster {
    l: f64,
    a: f64,
    b: f64,
    x: f64,
    y: f64,
}

/// SLIC with grid seeding, 10 k-means iterations, and connectivity
/// enforcement (orphan regions merged into their largest neighbor).
/// The algorithm is fully deterministic; `_seed` is accepted for
/// interface uniformity with the other seeded operations.
pub fn slic<T: Scalar>(
    image: &Tensor<T>,
    target_s: usize,
    compactness: f64,
    _seed: u64,
) -> Result<SuperpixelSegmentation> {
    let [h, w, c] = dims3(image)?;
    let n = h * w;
    if target_s < 1 || target_s > n {
        return Err(Error::InvalidArgument(format!(
            "target_S must be in [1, {n}], got {target_s}"
        )));
    }
    if target_s == 1 {
        return Ok(SuperpixelSegmentation { labels: vec![0; n], count: 1, height: h, width: w });
    }
    // per-pixel Lab
    let lab: Vec<[f64; 3]> = (0..n)
        .map(|i| {
            let (y, x) = (i / w, i % w);
            let px = |ch: usize| if ch < c { image.at3(y, x, ch).as_f64() } else { 0.0 };
            srgb_to_lab(px(0), px(1), px(2))
        })
        .collect();

    let step = ((n as f64) / (target_s as f64)).sqrt().max(1.0);
    let mut clusters: Vec<Cluster> = Vec::new();
    // grid dims chosen so ny * nx tracks the target count even when a
    // single step exceeds one image side
    let ny = ((target_s as f64 * h as f64 / w as f64).sqrt().round().max(1.0) as usize).min(h);
    let nx = (((target_s as f64) / ny as f64).round().max(1.0) as usize).min(w);
    for gy in 0..ny {
        for gx in 0..nx {
            let cy = (((gy as f64 + 0.5) * h as f64 / ny as f64) as usize).min(h - 1);
            let cx = (((gx as f64 + 0.5) * w as f64 / nx as f64) as usize).min(w - 1);
            let p = lab[cy * w + cx];
            clusters.push(Cluster { l: p[0], a: p[1], b: p[2], x: cx as f64, y: cy as f64 });
        }
    }

    let mut labels = vec![0u32; n];
    let inv_s2 = (compactness / step) * (compactness / step);
    for _ in 0..10 {
        let mut best = vec![f64::INFINITY; n];
        for (k, cl) in clusters.iter().enumerate() {
            let y0 = ((cl.y - 2.0 * step).floor().max(0.0)) as usize;
            let y1 = (((cl.y + 2.0 * step).ceil()) as usize).min(h - 1);
            let x0 = ((cl.x - 2.0 * step).floor().max(0.0)) as usize;
            let x1 = (((cl.x + 2.0 * step).ceil()) as usize).min(w - 1);
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let i = y * w + x;
                    let p = lab[i];
                    let dl = p[0] - cl.l;
                    let da = p[1] - cl.a;
                    let db = p[2] - cl.b;
                    let dx = x as f64 - cl.x;
                    let dy = y as f64 - cl.y;
                    let d = dl * dl + da * da + db * db + inv_s2 * (dx * dx + dy * dy);
                    if d < best[i] {
                        best[i] = d;
                        labels[i] = k as u32;
                    }
                }
            }
        }
        // any pixel outside every search window: nearest cluster by position
        for i in 0..n {
            if best[i].is_infinite() {
                let (y, x) = ((i / w) as f64, (i % w) as f64);
                let k = clusters
                    .iter()
                    .enumerate()
                    .min_by(|a, b| {
                        let da = (a.1.x - x).powi(2) + (a.1.y - y).powi(2);
                        let db = (b.1.x - x).powi(2) + (b.1.y - y).powi(2);
                        da.partial_cmp(&db).unwrap()
                    })
                    .unwrap()
                    .0;
                labels[i] = k as u32;
            }
        }
        // update means
        let mut acc = vec![[0.0f64; 6]; clusters.len()];
        for i in 0..n {
            let k = labels[i] as usize;
            let p = lab[i];
            acc[k][0] += p[0];
            acc[k][1] += p[1];
            acc[k][2] += p[2];
            acc[k][3] += (i % w) as f64;
            acc[k][4] += (i / w) as f64;
            acc[k][5] += 1.0;
        }
        for (cl, a) in clusters.iter_mut().zip(&acc) {
            if a[5] > 0.0 {
                cl.l = a[0] / a[5];
                cl.a = a[1] / a[5];
                cl.b = a[2] / a[5];
                cl.x = a[3] / a[5];
                cl.y = a[4] / a[5];
            }
        }
    }

    let labels = enforce_connectivity(&labels, h, w);
    let count = labels.iter().map(|&l| l as usize + 1).max().unwrap_or(1);
    Ok(SuperpixelSegmentation { labels, count, height: h, width: w })
}

/// 4-connected component cleanup: the largest component of each SLIC
/// label survives; every other component is merged into the adjacent
/// surviving region with the largest pixel count. Final labels are
/// renumbered contiguously in scan order.
fn enforce_connectivity(labels: &[u32], h: usize, w: usize) -> Vec<u32> {
    let n = h * w;
    let mut comp = vec![usize::MAX; n];
    let mut comp_label: Vec<u32> = Vec::new();
    let mut comp_pixels: Vec<Vec<usize>> = Vec::new();
    for start in 0..n {
        if comp[start] != usize::MAX {
            continue;
        }
        let id = comp_label.len();
        comp_label.push(labels[start]);
        let mut pixels = vec![start];
        comp[start] = id;
        let mut head = 0;
        while head < pixels.len() {
            let i = pixels[head];
            head += 1;
            let (y, x) = (i / w, i % w);
            let mut try_push = |j: usize| {
                if comp[j] == usize::MAX && labels[j] == labels[start] {
                    comp[j] = id;
                    pixels.push(j);
                }
            };
            if y > 0 {
                try_push(i - w);
            }
            if y + 1 < h {
                try_push(i + w);
            }
            if x > 0 {
                try_push(i - 1);
            }
            if x + 1 < w {
                try_push(i + 1);
            }
        }
        comp_pixels.push(pixels);
    }
    // largest component per label survives
    let mut largest: std::collections::HashMap<u32, usize> = std::collections::HashMap::new();
    for (id, pixels) in comp_pixels.iter().enumerate() {
        let e = largest.entry(comp_label[id]).or_insert(id);
        if comp_pixels[*e].len() < pixels.len() {
            *e = id;
        }
    }
    let survives: Vec<bool> =
        (0..comp_pixels.len()).map(|id| largest[&comp_label[id]] == id).collect();
    // final region id per pixel; orphans resolved iteratively
    let mut region = vec![usize::MAX; n];
    for (id, pixels) in comp_pixels.iter().enumerate() {
        if survives[id] {
            for &p in pixels {
                region[p] = id;
            }
        }
    }
    let mut region_size: Vec<usize> =
        comp_pixels.iter().enumerate().map(|(id, p)| if survives[id] { p.len() } else { 0 }).collect();
    let mut orphans: Vec<usize> =
        (0..comp_pixels.len()).filter(|&id| !survives[id]).collect();
    while !orphans.is_empty() {
        let mut progressed = false;
        let mut remaining = Vec::new();
        for id in orphans {
            // largest assigned neighbor region
            let mut best: Option<usize> = None;
            for &i in &comp_pixels[id] {
                let (y, x) = (i / w, i % w);
                let mut look = |j: usize| {
                    let r = region[j];
                    if r != usize::MAX && r != id {
                        match best {
                            Some(b) if region_size[b] >= region_size[r] => {}
                            _ => best = Some(r),
                        }
                    }
                };
                if y > 0 {
                    look(i - w);
                }
                if y + 1 < h {
                    look(i + w);
                }
                if x > 0 {
                    look(i - 1);
                }
                if x + 1 < w {
                    look(i + 1);
                }
            }
            if let Some(target) = best {
                for &p in &comp_pixels[id] {
                    region[p] = target;
                }
                region_size[target] += comp_pixels[id].len();
                progressed = true;
            } else {
                remaining.push(id);
            }
        }
        if !progressed {
            // no surviving region anywhere (cannot happen: at least one survives)
            break;
        }
        orphans = remaining;
    }
    // renumber contiguously in scan order
    let mut remap: std::collections::HashMap<usize, u32> = std::collections::HashMap::new();
    let mut out = vec![0u32; n];
    for i in 0..n {
        let next = remap.len() as u32;
        let lbl = *remap.entry(region[i]).or_insert(next);
        out[i] = lbl;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn noise_image(h: usize, w: usize, seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::new(vec![h, w, 3], (0..h * w * 3).map(|_| rng.gen_range(0.0..1.0)).collect())
            .unwrap()
    }

    #[test]
    fn single_segment_covers_image() {
        let img = noise_image(16, 16, 1);
        let seg = slic(&img, 1, 10.0, 0).unwrap();
        assert_eq!(seg.count, 1);
        assert!(seg.labels.iter().all(|&l| l == 0));
    }

    #[test]
    fn labels_form_contiguous_nonempty_partition() {
        let img = noise_image(32, 32, 2);
        let seg = slic(&img, 16, 10.0, 0).unwrap();
        let mut counts = vec![0usize; seg.count];
        for &l in &seg.labels {
            counts[l as usize] += 1;
        }
        assert!(counts.iter().all(|&c| c > 0));
        assert_eq!(seg.labels.len(), 32 * 32);
    }

    #[test]
    fn segment_count_near_target_on_noise_image() {
        let img = noise_image(64, 64, 3);
        let seg = slic(&img, 50, 10.0, 0).unwrap();
        let diff = (seg.count as f64 - 50.0).abs();
        assert!(diff <= 25.0, "count {}", seg.count);
    }

    #[test]
    fn high_contrast_edge_recovered_with_two_segments() {
        let mut img = Tensor::<f64>::zeros(&[32, 32, 3]);
        for y in 0..32 {
            for x in 16..32 {
                for c in 0..3 {
                    img.set3(y, x, c, 1.0);
                }
            }
        }
        let seg = slic(&img, 2, 10.0, 0).unwrap();
        assert_eq!(seg.count, 2);
        // boundary within one pixel column of x = 16
        for y in 0..32 {
            for x in 0..32 {
                let l = seg.labels[y * 32 + x];
                if x <= 14 {
                    assert_eq!(l, seg.labels[y * 32]);
                }
                if x >= 17 {
                    assert_eq!(l, seg.labels[y * 32 + 31]);
                }
            }
        }
    }

    #[test]
    fn rejects_oversized_target() {
        let img = noise_image(4, 4, 4);
        assert!(slic(&img, 17, 10.0, 0).is_err());
    }

    #[test]
    fn deterministic() {
        let img = noise_image(32, 32, 5);
        let a = slic(&img, 20, 10.0, 7).unwrap();
        let b = slic(&img, 20, 10.0, 7).unwrap();
        assert_eq!(a.labels, b.labels);
    }
}
