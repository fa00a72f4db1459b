use std::path::Path;

use rand::Rng;

use super::image::{encode_png, RgbImage};
use super::{scan_dataset, DatasetIndex};
use crate::error::{Error, Result};
use crate::nn::{seeded_rng, SeededRng};

pub const SYNTH_PATIENTS: usize = 8;
pub const SYNTH_EXTENT: usize = 50;

const BACKGROUND: [f64; 3] = [226.0, 166.0, 204.0];
const NUCLEUS: [f64; 3] = [92.0, 48.0, 128.0];
const COARSE: usize = 6;

/// Writes `2·n_per_class` synthetic 50×50 patches under `root` in the public
/// `<patient>/<label>/<patient>_idx5_x<X>_y<Y>_class<C>.png` layout and
/// returns their index.
///
/// Class 0 is smooth pink noise; class 1 is the same kind of background with
/// 5–15 dark elliptical blobs. Patients alternate within each class so all
/// eight hold both labels.
pub fn synth_dataset(root: &Path, n_per_class: usize, seed: u64) -> Result<DatasetIndex> {
    if n_per_class == 0 {
        return Err(Error::Config(
            "synthetic dataset needs at least one patch per class".into(),
        ));
    }
    let mut rng = seeded_rng(seed);
    for label in 0..2 {
        for k in 0..n_per_class {
            let patient = format!("{}", 9000 + k % SYNTH_PATIENTS);
            let dir = root.join(&patient).join(label.to_string());
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            let (x, y) = ((k / SYNTH_PATIENTS) * SYNTH_EXTENT, label * 10_000);
            let img = synth_patch(label == 1, &mut rng);
            encode_png(
                &dir.join(format!("{patient}_idx5_x{x}_y{y}_class{label}.png")),
                &img,
            )?;
        }
    }
    Ok(scan_dataset(root)?.index)
}

/// One synthetic patch; `with_nuclei` adds the dark blobs.
pub fn synth_patch(with_nuclei: bool, rng: &mut SeededRng) -> RgbImage {
    let n = SYNTH_EXTENT;
    let mut img = vec![[0.0f64; 3]; n * n];

    // Low-frequency texture: bilinear upsampling of a coarse random grid.
    let grid: Vec<[f64; 3]> = (0..COARSE * COARSE)
        .map(|_| {
            let lum = rng.random_range(-18.0..18.0);
            std::array::from_fn(|_| lum + rng.random_range(-6.0..6.0))
        })
        .collect();
    let scale = (COARSE - 1) as f64 / (n - 1) as f64;
    for i in 0..n {
        for j in 0..n {
            let (gi, gj) = (i as f64 * scale, j as f64 * scale);
            let (i0, j0) = ((gi as usize).min(COARSE - 2), (gj as usize).min(COARSE - 2));
            let (ti, tj) = (gi - i0 as f64, gj - j0 as f64);
            let at = |a: usize, b: usize, c: usize| grid[a * COARSE + b][c];
            for (c, px) in img[i * n + j].iter_mut().enumerate() {
                let top = at(i0, j0, c) * (1.0 - tj) + at(i0, j0 + 1, c) * tj;
                let bottom = at(i0 + 1, j0, c) * (1.0 - tj) + at(i0 + 1, j0 + 1, c) * tj;
                *px = BACKGROUND[c] + top * (1.0 - ti) + bottom * ti + rng.random_range(-4.0..4.0);
            }
        }
    }

    if with_nuclei {
        for _ in 0..rng.random_range(5..=15) {
            let (ci, cj) = (rng.random_range(3.0..47.0), rng.random_range(3.0..47.0));
            let (ra, rb) = (rng.random_range(2.0..5.0), rng.random_range(1.5..3.5));
            let theta: f64 = rng.random_range(0.0..std::f64::consts::PI);
            let (s, c) = theta.sin_cos();
            let shade = rng.random_range(0.8..1.0);
            for i in 0..n {
                for j in 0..n {
                    let (di, dj) = (i as f64 - ci, j as f64 - cj);
                    let u = (di * c + dj * s) / ra;
                    let v = (-di * s + dj * c) / rb;
                    let r2 = u * u + v * v;
                    if r2 < 1.44 {
                        // Soft edge between radius 1 and 1.2.
                        let alpha = shade * ((1.2 - r2.sqrt()) / 0.2).clamp(0.0, 1.0);
                        for (ch, px) in img[i * n + j].iter_mut().enumerate() {
                            *px = *px * (1.0 - alpha) + NUCLEUS[ch] * alpha;
                        }
                    }
                }
            }
        }
    }

    RgbImage {
        width: n,
        height: n,
        pixels: img
            .iter()
            .flatten()
            .map(|v| v.round().clamp(0.0, 255.0) as u8)
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nuclei_darken_patches() {
        let mut rng = seeded_rng(3);
        let mean = |img: &RgbImage| {
            img.pixels.iter().map(|&p| p as f64).sum::<f64>() / img.pixels.len() as f64
        };
        let healthy: f64 = (0..20)
            .map(|_| mean(&synth_patch(false, &mut rng)))
            .sum::<f64>()
            / 20.0;
        let idc: f64 = (0..20)
            .map(|_| mean(&synth_patch(true, &mut rng)))
            .sum::<f64>()
            / 20.0;
        assert!(idc < healthy, "{idc} vs {healthy}");
    }
}
