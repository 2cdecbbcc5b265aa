//! Deterministic file renderers: binary PPM for glyph images, SVG scatter
//! plots for plane samples, and the CSV conventions shared by every data
//! file (header row, LF endings, '.' decimal separator, 9 significant
//! digits). No output embeds timestamps, so identical payloads produce
//! identical bytes.

use crate::domains::GLYPH_SIZE;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// 9 significant digits; integral values shed the exponent noise that
/// scientific notation would add.
pub fn format_float(v: f64) -> String {
    if v == v.trunc() && v.abs() < 1e15 {
        format!("{v:.1}")
    } else {
        format!("{v:.8e}")
    }
}

/// Binary P6 image, grayscale replicated to RGB. Pixels are [0,1].
pub fn render_ppm(image: &Tensor) -> Result<Vec<u8>> {
    if image.shape() != [GLYPH_SIZE, GLYPH_SIZE] {
        return Err(Error::Shape {
            op: "render_ppm",
            detail: format!("expected 16x16 image, got {:?}", image.shape()),
        });
    }
    let mut out = format!("P6\n{GLYPH_SIZE} {GLYPH_SIZE}\n255\n").into_bytes();
    for &v in image.data() {
        let byte = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        out.extend_from_slice(&[byte, byte, byte]);
    }
    Ok(out)
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// Scatter plot of 2-D samples colored by nearest concept, fixed viewport
/// [-10,10]^2 mapped onto a 400x400 canvas.
pub fn render_svg_scatter(
    samples: &[[f64; 2]],
    labels: &[String],
    concepts: &[String],
) -> Result<String> {
    if samples.len() != labels.len() {
        return Err(Error::Contract(format!(
            "{} samples but {} labels",
            samples.len(),
            labels.len()
        )));
    }
    let color_of = |label: &str| -> &str {
        concepts
            .iter()
            .position(|c| c == label)
            .map(|i| PALETTE[i % PALETTE.len()])
            .unwrap_or("#7f7f7f")
    };
    let mut svg = String::from(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 400 400\" width=\"400\" height=\"400\">\n\
         <rect width=\"400\" height=\"400\" fill=\"white\"/>\n\
         <line x1=\"0\" y1=\"200\" x2=\"400\" y2=\"200\" stroke=\"#dddddd\"/>\n\
         <line x1=\"200\" y1=\"0\" x2=\"200\" y2=\"400\" stroke=\"#dddddd\"/>\n",
    );
    for (p, label) in samples.iter().zip(labels) {
        let cx = (p[0].clamp(-10.0, 10.0) + 10.0) * 20.0;
        let cy = (10.0 - p[1].clamp(-10.0, 10.0)) * 20.0;
        svg.push_str(&format!(
            "<circle cx=\"{cx:.2}\" cy=\"{cy:.2}\" r=\"2\" fill=\"{}\" fill-opacity=\"0.7\"/>\n",
            color_of(label)
        ));
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// RFC-4180-style field quoting (only when needed; our ids never need it).
pub fn csv_field(s: &str) -> String {
    if s.contains(',') || s.contains('"') || s.contains('\n') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

/// Assembles a CSV with a header row and LF line endings.
pub fn csv_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        let fields: Vec<String> = row.iter().map(|f| csv_field(f)).collect();
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domains::GlyphDomain;

    #[test]
    fn ppm_header_and_size_are_fixed() {
        let d = GlyphDomain::default();
        let img = d.base_bitmap("circle").unwrap();
        let bytes = render_ppm(&img).unwrap();
        assert!(bytes.starts_with(b"P6\n16 16\n255\n"));
        assert_eq!(bytes.len(), 13 + 16 * 16 * 3);
        // identical payload, identical bytes
        assert_eq!(render_ppm(&img).unwrap(), bytes);
    }

    #[test]
    fn svg_is_deterministic_and_well_formed() {
        let samples = vec![[-4.0, 0.0], [4.0, 0.0], [0.0, 4.0]];
        let labels = vec!["A".to_owned(), "B".to_owned(), "C".to_owned()];
        let concepts = labels.clone();
        let svg = render_svg_scatter(&samples, &labels, &concepts).unwrap();
        assert!(svg.starts_with("<svg"));
        assert!(svg.ends_with("</svg>\n"));
        assert_eq!(svg.matches("<circle").count(), 3);
        assert_eq!(render_svg_scatter(&samples, &labels, &concepts).unwrap(), svg);
        // viewport mapping: (-4,0) -> x=120, y=200
        assert!(svg.contains("cx=\"120.00\" cy=\"200.00\""), "{svg}");
    }

    #[test]
    fn float_format_has_nine_significant_digits() {
        assert_eq!(format_float(1.0), "1.0");
        assert_eq!(format_float(0.5), "5.00000000e-1");
        let s = format_float(std::f64::consts::PI);
        assert_eq!(s, "3.14159265e0");
    }

    #[test]
    fn csv_quoting_round_trips_through_a_generic_reader() {
        let table = csv_table(
            &["name", "value"],
            &[
                vec!["plain".to_owned(), "1.5".to_owned()],
                vec!["with,comma".to_owned(), "2.0".to_owned()],
            ],
        );
        assert!(table.ends_with('\n'));
        assert!(!table.contains('\r'));
        // minimal reader: split honoring quotes
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[2], "\"with,comma\",2.0");
    }
}
