//! Nearest-subspace classification by centred reconstruction residual.

use rayon::prelude::*;

use crate::dataset::{ClassLabel, Image, LabeledFrame};
use crate::eigenbasis::EigenBasisLibrary;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualReport {
    /// One residual per library class, in library order.
    pub residuals: Vec<(ClassLabel, f64)>,
    pub predicted: ClassLabel,
}

/// Residual of `image` against every class basis; the smallest wins, lowest id on ties.
pub fn classify_residual(library: &EigenBasisLibrary, image: &Image) -> Result<ResidualReport> {
    if image.shape() != library.frame_shape {
        return Err(Error::Format(format!(
            "image is {:?} but the library expects {:?}",
            image.shape(),
            library.frame_shape
        )));
    }
    let mut residuals = Vec::with_capacity(library.bases.len());
    for basis in &library.bases {
        let centered = basis.centered(image)?;
        let residual = (&centered - basis.project_centered(&centered)).norm();
        residuals.push((basis.label.clone(), residual));
    }
    let (predicted, _) = residuals
        .iter()
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.id.cmp(&b.0.id)))
        .expect("library has at least one class");
    Ok(ResidualReport {
        predicted: predicted.clone(),
        residuals,
    })
}

/// Residual reports for every frame, in input order.
pub fn residual_reports(
    library: &EigenBasisLibrary,
    frames: &[LabeledFrame],
) -> Result<Vec<ResidualReport>> {
    frames
        .par_iter()
        .map(|f| classify_residual(library, &f.image))
        .collect()
}

/// `(true, predicted)` pairs for a partition, in input order.
pub fn classify_split(
    library: &EigenBasisLibrary,
    frames: &[LabeledFrame],
) -> Result<Vec<(ClassLabel, ClassLabel)>> {
    Ok(residual_reports(library, frames)?
        .into_iter()
        .zip(frames)
        .map(|(r, f)| (f.label.clone(), r.predicted))
        .collect())
}

/// `sample,true,predicted,res_<code>...` with one row per frame.
pub fn residual_csv(
    library: &EigenBasisLibrary,
    frames: &[LabeledFrame],
    reports: &[ResidualReport],
) -> String {
    let mut out = String::from("sample,true,predicted");
    for b in &library.bases {
        out.push_str(&format!(",res_{}", b.label.code));
    }
    out.push('\n');
    for (f, r) in frames.iter().zip(reports) {
        out.push_str(&format!(
            "{}/{},{},{}",
            f.sample_id, f.frame_index, f.label.code, r.predicted.code
        ));
        for (_, res) in &r.residuals {
            out.push_str(&format!(",{res:.16e}"));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eigenbasis::{EigenBasis, Provenance};
    use nalgebra::{DMatrix, DVector};

    fn axis_basis(id: usize, axis: usize) -> EigenBasis {
        let mut basis = DMatrix::zeros(4, 1);
        basis[(axis, 0)] = 1.0;
        EigenBasis {
            label: ClassLabel::new(id, format!("C{id}")),
            mean: DVector::zeros(4),
            basis,
            sigma: vec![1.0],
            frame_shape: (2, 2),
            source_frames: 2,
        }
    }

    fn library() -> EigenBasisLibrary {
        EigenBasisLibrary::new(
            vec![axis_basis(0, 0), axis_basis(1, 1), axis_basis(2, 2)],
            Provenance::default(),
        )
        .unwrap()
    }

    #[test]
    fn in_span_image_has_zero_residual() {
        let img = Image::new(2, 2, vec![0.0, 0.7, 0.0, 0.0]).unwrap();
        let r = classify_residual(&library(), &img).unwrap();
        assert_eq!(r.predicted.id, 1);
        assert_eq!(r.residuals[1].1, 0.0);
    }

    #[test]
    fn ties_go_to_lowest_id() {
        let img = Image::new(2, 2, vec![0.0, 0.0, 0.0, 0.5]).unwrap();
        let r = classify_residual(&library(), &img).unwrap();
        assert_eq!(r.predicted.id, 0);
        assert!(r.residuals.iter().all(|(_, x)| *x == 0.5));
    }

    #[test]
    fn shape_mismatch_and_empty_partition() {
        let lib = library();
        assert!(matches!(
            classify_residual(&lib, &Image::zeros(1, 4)),
            Err(Error::Format(_))
        ));
        assert!(classify_split(&lib, &[]).unwrap().is_empty());
    }

    #[test]
    fn csv_has_one_column_per_class() {
        let lib = library();
        let frame = LabeledFrame {
            image: Image::new(2, 2, vec![0.0, 0.0, 0.3, 0.0]).unwrap(),
            label: ClassLabel::new(2, "C2"),
            sample_id: "C2000".into(),
            frame_index: 4,
        };
        let reports = residual_reports(&lib, std::slice::from_ref(&frame)).unwrap();
        let csv = residual_csv(&lib, &[frame], &reports);
        let mut lines = csv.lines();
        assert_eq!(
            lines.next(),
            Some("sample,true,predicted,res_C0,res_C1,res_C2")
        );
        assert!(lines.next().unwrap().starts_with("C2000/4,C2,C2,"));
    }
}
