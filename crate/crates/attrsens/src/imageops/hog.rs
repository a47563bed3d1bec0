//! Histogram-of-oriented-gradients descriptor for single-channel maps.

#[derive(Debug, Clone, Copy)]
pub struct HogParams {
    pub cell_side: usize,
    pub orientations: usize,
}

impl Default for HogParams {
    fn default() -> Self {
        Self { cell_side: 8, orientations: 9 }
    }
}

/// HOG feature vector of a `side x side` map.
///
/// Central differences with replicated borders, unsigned orientations in
/// [0, pi) with soft (linear) binning, 2x2-cell blocks at stride 1,
/// L2 normalization with eps = 1e-6.
pub fn hog(map: &[f64], side: usize, params: HogParams) -> Vec<f64> {
    assert_eq!(map.len(), side * side);
    let cell = params.cell_side;
    let nbins = params.orientations;
    let cells = side / cell;
    if cells == 0 {
        return Vec::new();
    }
    let at = |y: isize, x: isize| -> f64 {
        let y = y.clamp(0, side as isize - 1) as usize;
        let x = x.clamp(0, side as isize - 1) as usize;
        map[y * side + x]
    };
    let mut hist = vec![0.0f64; cells * cells * nbins];
    for y in 0..(cells * cell) {
        for x in 0..(cells * cell) {
            let gx = (at(y as isize, x as isize + 1) - at(y as isize, x as isize - 1)) / 2.0;
            let gy = (at(y as isize + 1, x as isize) - at(y as isize - 1, x as isize)) / 2.0;
            let mag = (gx * gx + gy * gy).sqrt();
            if mag == 0.0 {
                continue;
            }
            let mut ang = gy.atan2(gx);
            if ang < 0.0 {
                ang += std::f64::consts::PI;
            }
            if ang >= std::f64::consts::PI {
                ang -= std::f64::consts::PI;
            }
            let pos = ang / std::f64::consts::PI * nbins as f64;
            let b0 = (pos.floor() as usize).min(nbins - 1);
            let frac = pos - b0 as f64;
            let b1 = (b0 + 1) % nbins;
            let ci = (y / cell) * cells + (x / cell);
            hist[ci * nbins + b0] += mag * (1.0 - frac);
            hist[ci * nbins + b1] += mag * frac;
        }
    }
    // 2x2 blocks, stride 1, L2 norm
    if cells == 1 {
        let norm = (hist.iter().map(|v| v * v).sum::<f64>() + 1e-6).sqrt();
        return hist.iter().map(|v| v / norm).collect();
    }
    let mut features = Vec::with_capacity((cells - 1) * (cells - 1) * 4 * nbins);
    for by in 0..cells - 1 {
        for bx in 0..cells - 1 {
            let mut block = Vec::with_capacity(4 * nbins);
            for dy in 0..2 {
                for dx in 0..2 {
                    let ci = (by + dy) * cells + (bx + dx);
                    block.extend_from_slice(&hist[ci * nbins..(ci + 1) * nbins]);
                }
            }
            let norm = (block.iter().map(|v| v * v).sum::<f64>() + 1e-6).sqrt();
            features.extend(block.iter().map(|v| v / norm));
        }
    }
    features
}
