use std::borrow::Cow;

use rand::Rng;
use rayon::prelude::*;

use super::image::{decode_png, normalize_pixel};
use super::DatasetIndex;
use crate::error::{Error, Result};
use crate::nn::SeededRng;
use crate::tensor::{Scalar, Tensor};

/// Random access to labelled 8-bit RGB patches of one fixed size.
pub trait PatchSource: Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn label(&self, i: usize) -> usize;

    /// `(height, width)` of every patch.
    fn extent(&self) -> (usize, usize);

    /// Interleaved RGB bytes of patch `i`, row-major.
    fn pixels(&self, i: usize) -> Result<Cow<'_, [u8]>>;

    fn labels(&self) -> Vec<usize> {
        (0..self.len()).map(|i| self.label(i)).collect()
    }
}

/// Every patch decoded up front; used when the set fits in memory.
#[derive(Debug, Clone)]
pub struct PatchSet {
    height: usize,
    width: usize,
    pixels: Vec<u8>,
    labels: Vec<usize>,
}

impl PatchSet {
    /// Decodes all files of `index` in parallel; any patch not `height×width` is an error.
    pub fn load(index: &DatasetIndex, height: usize, width: usize) -> Result<Self> {
        let decoded: Vec<Vec<u8>> = index
            .patches()
            .par_iter()
            .map(|p| decode_checked(&p.path, height, width))
            .collect::<Result<_>>()?;
        Ok(PatchSet {
            height,
            width,
            pixels: decoded.concat(),
            labels: index.labels(),
        })
    }

    pub fn from_pixels(
        height: usize,
        width: usize,
        pixels: Vec<u8>,
        labels: Vec<usize>,
    ) -> Result<Self> {
        if pixels.len() != labels.len() * height * width * 3 {
            return Err(Error::Data(format!(
                "{} bytes do not hold {} patches of {height}x{width}x3",
                pixels.len(),
                labels.len()
            )));
        }
        Ok(PatchSet {
            height,
            width,
            pixels,
            labels,
        })
    }
}

impl PatchSource for PatchSet {
    fn len(&self) -> usize {
        self.labels.len()
    }

    fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    fn extent(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    fn pixels(&self, i: usize) -> Result<Cow<'_, [u8]>> {
        let n = self.height * self.width * 3;
        Ok(Cow::Borrowed(&self.pixels[i * n..(i + 1) * n]))
    }
}

/// Decodes patches from disk on every access; for sets too large to hold.
#[derive(Debug, Clone)]
pub struct PatchFiles {
    index: DatasetIndex,
    height: usize,
    width: usize,
}

impl PatchFiles {
    pub fn new(index: DatasetIndex, height: usize, width: usize) -> Self {
        PatchFiles {
            index,
            height,
            width,
        }
    }
}

impl PatchSource for PatchFiles {
    fn len(&self) -> usize {
        self.index.len()
    }

    fn label(&self, i: usize) -> usize {
        self.index.patches()[i].label
    }

    fn extent(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    fn pixels(&self, i: usize) -> Result<Cow<'_, [u8]>> {
        decode_checked(&self.index.patches()[i].path, self.height, self.width).map(Cow::Owned)
    }
}

fn decode_checked(path: &std::path::Path, height: usize, width: usize) -> Result<Vec<u8>> {
    let img = decode_png(path)?;
    if (img.height, img.width) != (height, width) {
        return Err(Error::Decode {
            path: path.to_path_buf(),
            msg: format!(
                "expected {height}x{width} pixels, found {}x{}",
                img.height, img.width
            ),
        });
    }
    Ok(img.pixels)
}

/// Mirrors each row of a `[c, h, w]` image in place.
pub fn flip_horizontal<T: Copy>(img: &mut [T], c: usize, h: usize, w: usize) {
    for row in img[..c * h * w].chunks_exact_mut(w) {
        row.reverse();
    }
}

/// Swaps rows top-to-bottom of a `[c, h, w]` image in place.
pub fn flip_vertical<T: Copy>(img: &mut [T], c: usize, h: usize, w: usize) {
    for plane in img[..c * h * w].chunks_exact_mut(h * w) {
        for i in 0..h / 2 {
            let (top, bottom) = plane.split_at_mut((h - 1 - i) * w);
            top[i * w..(i + 1) * w].swap_with_slice(&mut bottom[..w]);
        }
    }
}

/// Normalized `[b, 3, h, w]` batch of the given patches and their labels.
///
/// With `augment`, each image is independently mirrored horizontally and
/// vertically with probability 1/2; flips are drawn in batch order so the
/// result depends only on the rng state.
pub fn load_batch<T: Scalar>(
    source: &dyn PatchSource,
    indices: &[usize],
    augment: bool,
    rng: &mut SeededRng,
) -> Result<(Tensor<T>, Vec<usize>)> {
    let (h, w) = source.extent();
    let flips: Vec<(bool, bool)> = indices
        .iter()
        .map(|_| {
            if augment {
                (rng.random_bool(0.5), rng.random_bool(0.5))
            } else {
                (false, false)
            }
        })
        .collect();
    let images: Vec<Vec<T>> = indices
        .par_iter()
        .zip(&flips)
        .map(|(&i, &(fh, fv))| {
            let px = source.pixels(i)?;
            let mut chw = vec![T::zero(); 3 * h * w];
            for (p, rgb) in px.chunks_exact(3).enumerate() {
                for (ch, &v) in rgb.iter().enumerate() {
                    chw[ch * h * w + p] = T::of(normalize_pixel(v));
                }
            }
            if fh {
                flip_horizontal(&mut chw, 3, h, w);
            }
            if fv {
                flip_vertical(&mut chw, 3, h, w);
            }
            Ok(chw)
        })
        .collect::<Result<_>>()?;
    let labels = indices.iter().map(|&i| source.label(i)).collect();
    Ok((
        Tensor::from_vec(images.concat(), &[indices.len(), 3, h, w])?,
        labels,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::seeded_rng;

    #[test]
    fn flips_are_involutions() {
        let orig: Vec<u32> = (0..2 * 3 * 4).collect();
        let mut img = orig.clone();
        flip_horizontal(&mut img, 2, 3, 4);
        assert_eq!(&img[..4], &[3, 2, 1, 0]);
        flip_horizontal(&mut img, 2, 3, 4);
        assert_eq!(img, orig);
        flip_vertical(&mut img, 2, 3, 4);
        assert_eq!(&img[..4], &[8, 9, 10, 11]);
        assert_eq!(&img[12..16], &[20, 21, 22, 23]);
        flip_vertical(&mut img, 2, 3, 4);
        assert_eq!(img, orig);
    }

    #[test]
    fn batches_are_normalized_and_deterministic() {
        let set = PatchSet::from_pixels(
            2,
            2,
            vec![0, 128, 255, 0, 0, 0, 255, 255, 255, 10, 20, 30],
            vec![1],
        )
        .unwrap();
        let mut rng = seeded_rng(0);
        let (a, y) = load_batch::<f32>(&set, &[0], false, &mut rng).unwrap();
        let (b, _) = load_batch::<f32>(&set, &[0], false, &mut rng).unwrap();
        assert_eq!(y, vec![1]);
        assert_eq!(a.shape(), &[1, 3, 2, 2]);
        assert_eq!(a.data(), b.data());
        assert_eq!(a.data()[0], -1.0);
        assert_eq!(a.data()[8], 1.0);
    }
}
