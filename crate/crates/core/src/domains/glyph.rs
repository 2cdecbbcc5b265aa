//! 16x16 grayscale glyph world for the trained pipeline.
//!
//! Base bitmaps are fixed and documented: a centered disk of radius 5, a
//! 10x10 square, an isoceles triangle of height 10 with base 10, and a plus
//! cross with arm length 10 and thickness 2. Rendering jitters the base by
//! at most one pixel per axis and adds clamped Gaussian intensity noise.

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::{Precision, Tensor};

pub const GLYPH_SIZE: usize = 16;

/// Concept vocabulary in lexicographic order (the classifier tie-break order).
pub const GLYPH_CONCEPTS: [&str; 4] = ["circle", "cross", "square", "triangle"];

#[derive(Clone, Debug)]
pub struct GlyphDomain {
    pub jitter_px: i64,
    pub noise_sigma: f64,
}

impl Default for GlyphDomain {
    fn default() -> Self {
        GlyphDomain { jitter_px: 1, noise_sigma: 0.05 }
    }
}

fn bitmap(concept: &str) -> Option<[f64; GLYPH_SIZE * GLYPH_SIZE]> {
    let mut img = [0.0f64; GLYPH_SIZE * GLYPH_SIZE];
    let center = (GLYPH_SIZE as f64 - 1.0) / 2.0; // 7.5
    match concept {
        "circle" => {
            for y in 0..GLYPH_SIZE {
                for x in 0..GLYPH_SIZE {
                    let d = ((x as f64 - center).powi(2) + (y as f64 - center).powi(2)).sqrt();
                    if d <= 5.0 {
                        img[y * GLYPH_SIZE + x] = 1.0;
                    }
                }
            }
        }
        "square" => {
            for y in 3..13 {
                for x in 3..13 {
                    img[y * GLYPH_SIZE + x] = 1.0;
                }
            }
        }
        "triangle" => {
            // apex at row 3, base (width 10) at row 12
            for y in 3..13 {
                let half_width = 0.5 + (y - 3) as f64 / 2.0;
                for x in 0..GLYPH_SIZE {
                    if (x as f64 - center).abs() <= half_width {
                        img[y * GLYPH_SIZE + x] = 1.0;
                    }
                }
            }
        }
        "cross" => {
            for y in 7..9 {
                for x in 3..13 {
                    img[y * GLYPH_SIZE + x] = 1.0;
                }
            }
            for y in 3..13 {
                for x in 7..9 {
                    img[y * GLYPH_SIZE + x] = 1.0;
                }
            }
        }
        _ => return None,
    }
    Some(img)
}

impl GlyphDomain {
    pub fn concepts(&self) -> Vec<&'static str> {
        GLYPH_CONCEPTS.to_vec()
    }

    /// Untranslated, noise-free base bitmap of a concept.
    pub fn base_bitmap(&self, concept: &str) -> Result<Tensor> {
        let img = bitmap(concept)
            .ok_or_else(|| Error::Lookup(format!("unknown glyph concept {concept:?}")))?;
        Tensor::from_vec(vec![GLYPH_SIZE, GLYPH_SIZE], img.to_vec(), Precision::F32)
    }

    /// Renders a jittered, noised glyph. Draw order is fixed: jitter dx,
    /// jitter dy (one u64 each), then one Gaussian per pixel in row-major
    /// order. Pixels are clamped to [0, 1].
    pub fn render(&self, concept: &str, stream: &mut RngStream) -> Result<Tensor> {
        let base = bitmap(concept)
            .ok_or_else(|| Error::Lookup(format!("unknown glyph concept {concept:?}")))?;
        let span = 2 * self.jitter_px as u64 + 1;
        let dx = stream.next_below(span) as i64 - self.jitter_px;
        let dy = stream.next_below(span) as i64 - self.jitter_px;
        let n = GLYPH_SIZE as i64;
        let mut img = vec![0.0f64; GLYPH_SIZE * GLYPH_SIZE];
        for y in 0..n {
            for x in 0..n {
                let (sx, sy) = (x - dx, y - dy);
                if (0..n).contains(&sx) && (0..n).contains(&sy) {
                    img[(y * n + x) as usize] = base[(sy * n + sx) as usize];
                }
            }
        }
        for v in &mut img {
            let noisy = *v + self.noise_sigma * stream.next_gaussian();
            *v = noisy.clamp(0.0, 1.0);
        }
        Tensor::from_vec(vec![GLYPH_SIZE, GLYPH_SIZE], img, Precision::F32)
    }

    /// Nearest base bitmap by pixel L2 distance.
    ///
    /// Margin is `(d2 - d1) / d2` over the two smallest distances (0 = tie,
    /// toward 1 = confident); exact ties resolve to the lexicographically
    /// smallest concept.
    pub fn centroid_classify(&self, image: &Tensor) -> Result<(String, f64)> {
        if image.len() != GLYPH_SIZE * GLYPH_SIZE {
            return Err(Error::Shape {
                op: "centroid_classify",
                detail: format!("expected 16x16 image, got {:?}", image.shape()),
            });
        }
        if !image.all_finite() {
            return Err(Error::Numeric("image contains non-finite pixels".into()));
        }
        let mut best: Option<(&str, f64)> = None;
        let mut second = f64::INFINITY;
        for concept in GLYPH_CONCEPTS {
            let b = bitmap(concept).expect("built-in concept");
            let d: f64 = image
                .data()
                .iter()
                .zip(b.iter())
                .map(|(&p, &q)| (p - q) * (p - q))
                .sum::<f64>()
                .sqrt();
            match best {
                None => best = Some((concept, d)),
                Some((_, d1)) if d < d1 => {
                    second = d1;
                    best = Some((concept, d));
                }
                Some(_) => {
                    if d < second {
                        second = d;
                    }
                }
            }
        }
        let (concept, d1) = best.expect("vocabulary is nonempty");
        let margin = if second > 0.0 { (second - d1) / second } else { 0.0 };
        Ok((concept.to_owned(), margin))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_stream;

    fn rotate90(img: &Tensor) -> Tensor {
        let n = GLYPH_SIZE;
        let mut out = vec![0.0; n * n];
        for y in 0..n {
            for x in 0..n {
                out[x * n + (n - 1 - y)] = img.data()[y * n + x];
            }
        }
        Tensor::from_vec(vec![n, n], out, Precision::F32).unwrap()
    }

    #[test]
    fn base_circle_is_rotation_symmetric() {
        let d = GlyphDomain::default();
        let c = d.base_bitmap("circle").unwrap();
        assert_eq!(rotate90(&c), c);
    }

    #[test]
    fn render_is_deterministic_and_clamped() {
        let d = GlyphDomain::default();
        let a = d.render("square", &mut derive_stream(5, "g").unwrap()).unwrap();
        let b = d.render("square", &mut derive_stream(5, "g").unwrap()).unwrap();
        assert_eq!(a, b);
        assert!(a.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn unknown_concept_is_lookup_error() {
        let d = GlyphDomain::default();
        let mut s = derive_stream(1, "u").unwrap();
        assert!(matches!(d.render("star", &mut s), Err(Error::Lookup(_))));
    }

    #[test]
    fn noiseless_bases_classify_to_themselves_with_margin() {
        let d = GlyphDomain::default();
        for concept in GLYPH_CONCEPTS {
            let img = d.base_bitmap(concept).unwrap();
            let (found, margin) = d.centroid_classify(&img).unwrap();
            assert_eq!(found, concept);
            assert!(margin > 0.2, "{concept} margin {margin}");
        }
    }

    #[test]
    fn all_zeros_image_classifies_deterministically() {
        // The cross has the smallest pixel mass (36 px), so the empty image
        // is nearest to it; triangle (60 px) is second.
        let d = GlyphDomain::default();
        let zeros = Tensor::zeros(vec![GLYPH_SIZE, GLYPH_SIZE], Precision::F32);
        let (found, margin) = d.centroid_classify(&zeros).unwrap();
        assert_eq!(found, "cross");
        let expected_margin = (60.0f64.sqrt() - 36.0f64.sqrt()) / 60.0f64.sqrt();
        assert!((margin - expected_margin).abs() < 1e-12, "margin {margin}");
    }

    #[test]
    fn exact_tie_breaks_lexicographically() {
        // Midpoint between circle and square bitmaps is equidistant to both.
        let d = GlyphDomain::default();
        let c = d.base_bitmap("circle").unwrap();
        let s = d.base_bitmap("square").unwrap();
        let mid: Vec<f64> = c
            .data()
            .iter()
            .zip(s.data())
            .map(|(&a, &b)| (a + b) / 2.0)
            .collect();
        let mid = Tensor::from_vec(vec![GLYPH_SIZE, GLYPH_SIZE], mid, Precision::F32).unwrap();
        let dc: f64 = mid.data().iter().zip(c.data()).map(|(&a, &b)| (a - b) * (a - b)).sum();
        let ds: f64 = mid.data().iter().zip(s.data()).map(|(&a, &b)| (a - b) * (a - b)).sum();
        assert!((dc - ds).abs() < 1e-12);
        let (found, _) = d.centroid_classify(&mid).unwrap();
        assert_eq!(found, "circle");
    }

    #[test]
    fn render_covers_all_jitters_eventually() {
        let mut seen = std::collections::HashSet::new();
        for i in 0..64 {
            let mut s = derive_stream(i, "jitter-scan").unwrap();
            let dx = s.next_below(3) as i64 - 1;
            let dy = s.next_below(3) as i64 - 1;
            seen.insert((dx, dy));
        }
        assert_eq!(seen.len(), 9, "all nine jitter offsets reachable");
    }
}
