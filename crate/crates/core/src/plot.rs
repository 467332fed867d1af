//! Scatter exports: a CSV of real and generated samples for any
//! dimension, and for 2-D data an SVG with the decision boundary.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::warn;

use crate::classifier::AuxiliaryClassifier;
use crate::data::{Dataset, Label};
use crate::error::{Error, Result};
use crate::gan::Mapping;
use crate::pipeline::AugmentationArchive;

/// A segment of the zero-score curve.
pub type Segment = [[f64; 2]; 2];

/// Files written by [`export_scatter`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScatterOutput {
    pub csv: PathBuf,
    pub svg: Option<PathBuf>,
    pub rows: usize,
    pub boundary: Vec<Segment>,
}

/// Bisects the score along `a -> b`, which must straddle zero, until the
/// score magnitude drops below `tol`.
fn bisect(aux: &AuxiliaryClassifier, mut a: [f64; 2], mut b: [f64; 2], tol: f64) -> Result<[f64; 2]> {
    let mut sa = aux.score(&a)?;
    for _ in 0..200 {
        let mid = [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0];
        let sm = aux.score(&mid)?;
        if sm.abs() < tol || mid == a || mid == b {
            return Ok(mid);
        }
        if (sm > 0.0) == (sa > 0.0) {
            a = mid;
            sa = sm;
        } else {
            b = mid;
        }
    }
    Ok([(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0])
}

/// Marching squares over a `cells x cells` grid on `[lo, hi]`, with every
/// crossing refined on its grid edge until `|score| < tol`.
pub fn zero_contour(aux: &AuxiliaryClassifier, lo: [f64; 2], hi: [f64; 2], cells: usize, tol: f64) -> Result<Vec<Segment>> {
    if aux.dim() != 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            got: aux.dim(),
        });
    }
    let cells = cells.max(1);
    let at = |i: usize, j: usize| {
        [
            lo[0] + (hi[0] - lo[0]) * i as f64 / cells as f64,
            lo[1] + (hi[1] - lo[1]) * j as f64 / cells as f64,
        ]
    };
    let mut grid = vec![vec![0.0; cells + 1]; cells + 1];
    for (i, col) in grid.iter_mut().enumerate() {
        for (j, v) in col.iter_mut().enumerate() {
            *v = aux.score(&at(i, j))?;
        }
    }
    let mut segments = Vec::new();
    for i in 0..cells {
        for j in 0..cells {
            // corners counter-clockwise from the lower left
            let corners = [(i, j), (i + 1, j), (i + 1, j + 1), (i, j + 1)];
            let mut crossings = Vec::with_capacity(4);
            for e in 0..4 {
                let (p, q) = (corners[e], corners[(e + 1) % 4]);
                let (sp, sq) = (grid[p.0][p.1], grid[q.0][q.1]);
                if (sp > 0.0) != (sq > 0.0) {
                    crossings.push(bisect(aux, at(p.0, p.1), at(q.0, q.1), tol)?);
                }
            }
            match crossings.len() {
                2 => segments.push([crossings[0], crossings[1]]),
                4 => {
                    segments.push([crossings[0], crossings[1]]);
                    segments.push([crossings[2], crossings[3]]);
                }
                _ => {}
            }
        }
    }
    Ok(segments)
}

fn kind_colour(kind: Option<Mapping>, label: Label) -> &'static str {
    match (kind, label) {
        (None, Label::X) => "#1f77b4",
        (None, Label::Y) => "#d62728",
        (Some(Mapping::X2Y), _) => "#ff9896",
        (Some(Mapping::Y2X), _) => "#aec7e8",
        (Some(Mapping::X2X), _) => "#9467bd",
        (Some(Mapping::Y2Y), _) => "#ff7f0e",
    }
}

/// Writes `<stem>.csv` and, when the data are 2-D, `<stem>.svg`.
pub fn export_scatter(data: &Dataset, archive: &AugmentationArchive, aux: &AuxiliaryClassifier, stem: &Path) -> Result<ScatterOutput> {
    if archive.dim() != data.dim() {
        return Err(Error::DimensionMismatch {
            expected: data.dim(),
            got: archive.dim(),
        });
    }
    let mut points: Vec<(Option<Mapping>, &[f64], Label)> = data
        .samples()
        .iter()
        .map(|s| (None, s.features.as_slice(), s.label))
        .collect();
    points.extend(archive.entries().iter().map(|e| (Some(e.kind), e.features.as_slice(), e.label())));

    let mut csv = String::from("source");
    for d in 1..=data.dim() {
        let _ = write!(csv, ",f{d}");
    }
    csv.push_str(",label\n");
    for (kind, f, label) in &points {
        csv.push_str(kind.map_or("real", Mapping::name));
        for v in *f {
            let _ = write!(csv, ",{v}");
        }
        let _ = writeln!(csv, ",{}", label.value());
    }
    let csv_path = stem.with_extension("csv");
    std::fs::write(&csv_path, csv)?;

    if data.dim() != 2 {
        warn!("SVG scatter needs 2-D data, got D = {}; wrote CSV only", data.dim());
        return Ok(ScatterOutput {
            csv: csv_path,
            svg: None,
            rows: points.len(),
            boundary: Vec::new(),
        });
    }

    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for (_, f, _) in &points {
        for d in 0..2 {
            lo[d] = lo[d].min(f[d]);
            hi[d] = hi[d].max(f[d]);
        }
    }
    for d in 0..2 {
        let pad = ((hi[d] - lo[d]) * 0.05).max(0.5);
        lo[d] -= pad;
        hi[d] += pad;
    }
    let boundary = zero_contour(aux, lo, hi, 80, 1e-9)?;

    let size = 600.0;
    let sx = |x: f64| (x - lo[0]) / (hi[0] - lo[0]) * size;
    let sy = |y: f64| size - (y - lo[1]) / (hi[1] - lo[1]) * size;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<?xml version="1.0" encoding="UTF-8"?>
<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{size}" height="{size}" viewBox="0 0 {size} {size}">
<rect width="100%" height="100%" fill="white"/>"#
    );
    svg.push_str("<g id=\"boundary\" stroke=\"black\" stroke-width=\"1.5\">\n");
    for [a, b] in &boundary {
        let _ = writeln!(
            svg,
            r#"<line x1="{:.3}" y1="{:.3}" x2="{:.3}" y2="{:.3}"/>"#,
            sx(a[0]),
            sy(a[1]),
            sx(b[0]),
            sy(b[1])
        );
    }
    svg.push_str("</g>\n<g id=\"samples\">\n");
    for (kind, f, label) in &points {
        let shape = if kind.is_some() { "2.5" } else { "3.5" };
        let _ = writeln!(
            svg,
            r#"<circle cx="{:.3}" cy="{:.3}" r="{shape}" fill="{}" class="{}"/>"#,
            sx(f[0]),
            sy(f[1]),
            kind_colour(*kind, *label),
            kind.map_or("real", Mapping::name)
        );
    }
    svg.push_str("</g>\n</svg>\n");
    let svg_path = stem.with_extension("svg");
    std::fs::write(&svg_path, svg)?;

    Ok(ScatterOutput {
        csv: csv_path,
        svg: Some(svg_path),
        rows: points.len(),
        boundary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::{freeze, ClassifierNet};

    #[test]
    fn contour_of_a_line() {
        let aux = freeze(&ClassifierNet::linear(&[1.0, -2.0], 0.3).unwrap());
        let segs = zero_contour(&aux, [-3.0, -3.0], [3.0, 3.0], 10, 1e-9).unwrap();
        assert!(!segs.is_empty());
        for s in &segs {
            for p in s {
                assert!(aux.score(p).unwrap().abs() < 1e-6);
            }
        }
    }

    #[test]
    fn empty_archive_scatter() {
        let dir = tempfile::tempdir().unwrap();
        let aux = freeze(&ClassifierNet::linear(&[1.0, 0.0], 0.0).unwrap());
        let data = Dataset::from_domains(vec![vec![-1.0, 0.0]], vec![vec![1.0, 0.5]]).unwrap();
        let out = export_scatter(&data, &AugmentationArchive::new(2), &aux, &dir.path().join("s")).unwrap();
        assert_eq!(out.rows, 2);
        assert!(out.svg.is_some());
        let csv = std::fs::read_to_string(out.csv).unwrap();
        assert_eq!(csv.lines().count(), 3);
    }

    #[test]
    fn three_d_skips_svg() {
        let dir = tempfile::tempdir().unwrap();
        let aux = freeze(&ClassifierNet::linear(&[1.0, 0.0, 0.0], 0.0).unwrap());
        let data = Dataset::from_domains(vec![vec![-1.0, 0.0, 0.0]], vec![vec![1.0, 0.5, 0.0]]).unwrap();
        let out = export_scatter(&data, &AugmentationArchive::new(3), &aux, &dir.path().join("s")).unwrap();
        assert!(out.svg.is_none());
        assert!(out.csv.exists());
    }
}
