use std::fmt;
use std::ops::Range;

use super::MultiCoilKSpace;
use crate::{Error, Result};

/// How the fully sampled calibration (ACS) block is sized.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AcsSpec {
    Lines(usize),
    CenterFraction(f64),
}

impl AcsSpec {
    /// Number of ACS columns for an image of `width` columns.
    ///
    /// Center fractions round half up with a floor of one column.
    pub fn lines_for(&self, width: usize) -> usize {
        match *self {
            AcsSpec::Lines(n) => n,
            AcsSpec::CenterFraction(f) => ((f * width as f64 + 0.5).floor() as usize).max(1),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            AcsSpec::Lines(_) => Ok(()),
            AcsSpec::CenterFraction(f) if f > 0.0 && f <= 1.0 => Ok(()),
            AcsSpec::CenterFraction(f) => Err(Error::config(format!("center fraction {f} outside (0, 1]"))),
        }
    }
}

impl fmt::Display for AcsSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AcsSpec::Lines(n) => write!(f, "acs{n}"),
            AcsSpec::CenterFraction(c) => write!(f, "cf{c}"),
        }
    }
}

/// Binary column mask over the phase-encode (width) axis.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplingMask {
    columns: Vec<bool>,
    acceleration: usize,
    acs: AcsSpec,
    acs_range: Range<usize>,
}

impl SamplingMask {
    pub fn width(&self) -> usize {
        self.columns.len()
    }

    pub fn columns(&self) -> &[bool] {
        &self.columns
    }

    pub fn is_sampled(&self, column: usize) -> bool {
        self.columns[column]
    }

    pub fn acceleration(&self) -> usize {
        self.acceleration
    }

    pub fn acs_spec(&self) -> AcsSpec {
        self.acs
    }

    pub fn acs_range(&self) -> Range<usize> {
        self.acs_range.clone()
    }

    pub fn sampled_count(&self) -> usize {
        self.columns.iter().filter(|&&s| s).count()
    }

    pub fn sampled_indices(&self) -> Vec<usize> {
        (0..self.width()).filter(|&j| self.columns[j]).collect()
    }

    /// Full width over sampled column count.
    pub fn net_acceleration(&self) -> f64 {
        self.width() as f64 / self.sampled_count() as f64
    }

    /// Column weights as 0.0 / 1.0.
    pub fn weights(&self) -> Vec<f64> {
        self.columns.iter().map(|&s| if s { 1.0 } else { 0.0 }).collect()
    }

    /// Indicator of the ACS block only.
    pub fn acs_weights(&self) -> Vec<f64> {
        (0..self.width())
            .map(|j| if self.acs_range.contains(&j) { 1.0 } else { 0.0 })
            .collect()
    }
}

fn acs_block(width: usize, lines: usize) -> Range<usize> {
    let start = (width - lines) / 2;
    start..start + lines
}

/// Equispaced Cartesian mask with a centered, fully sampled ACS block.
///
/// Outside the block the sampled columns are `{ j : j % acceleration == 0 }`
/// in original column indexing; the block is `[(W - A) / 2, (W - A) / 2 + A)`.
pub fn make_equispaced_mask(width: usize, acceleration: usize, acs: AcsSpec) -> Result<SamplingMask> {
    acs.validate()?;
    if width == 0 {
        return Err(Error::config("mask width must be positive"));
    }
    if acceleration == 0 {
        return Err(Error::config("acceleration must be at least 1"));
    }
    let lines = acs.lines_for(width);
    if lines > width {
        return Err(Error::config(format!(
            "ACS block of {lines} columns is wider than the image ({width})"
        )));
    }
    let acs_range = acs_block(width, lines);
    let columns = (0..width)
        .map(|j| acs_range.contains(&j) || j % acceleration == 0)
        .collect();
    Ok(SamplingMask {
        columns,
        acceleration,
        acs,
        acs_range,
    })
}

/// Zero every unsampled column of every coil.
pub fn apply_mask(kspace: &MultiCoilKSpace, mask: &SamplingMask) -> Result<MultiCoilKSpace> {
    if kspace.width() != mask.width() {
        return Err(Error::shape(format!(
            "mask width {} does not match k-space width {}",
            mask.width(),
            kspace.width()
        )));
    }
    let mut out = kspace.data().clone();
    for mut lane in out.lanes_mut(ndarray::Axis(2)) {
        for (v, &keep) in lane.iter_mut().zip(mask.columns()) {
            if !keep {
                *v = num_complex::Complex64::new(0.0, 0.0);
            }
        }
    }
    Ok(MultiCoilKSpace::from_trusted(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use num_complex::Complex64;
    use proptest::prelude::*;

    /// Enumerates sampled columns directly from the offset rule.
    fn enumerate_oracle(width: usize, r: usize, lines: usize) -> Vec<usize> {
        let start = (width - lines) / 2;
        let mut cols = Vec::new();
        for j in 0..width {
            let in_acs = j >= start && j < start + lines;
            if in_acs {
                cols.push(j);
                continue;
            }
            if j % r == 0 {
                cols.push(j);
            }
        }
        cols
    }

    #[test]
    fn no_acceleration_samples_everything() {
        let m = make_equispaced_mask(192, 1, AcsSpec::Lines(24)).unwrap();
        assert_eq!(m.sampled_count(), 192);
        assert_eq!(m.net_acceleration(), 1.0);
    }

    #[test]
    fn r4_with_24_acs_lines() {
        let m = make_equispaced_mask(192, 4, AcsSpec::Lines(24)).unwrap();
        assert_eq!(m.acs_range(), 84..108);
        assert!((84..=107).all(|j| m.is_sampled(j)));
        let oracle = enumerate_oracle(192, 4, 24);
        assert_eq!(m.sampled_indices(), oracle);
        // 24 ACS columns plus the multiples of 4 outside [84, 108): 48 - 6
        assert_eq!(m.sampled_count(), 66);
    }

    #[test]
    fn center_fraction_rounds_to_eight_lines() {
        let m = make_equispaced_mask(100, 8, AcsSpec::CenterFraction(0.08)).unwrap();
        assert_eq!(m.acs_range(), 46..54);
        assert_eq!(m.sampled_indices(), enumerate_oracle(100, 8, 8));
        // multiples of 8 below 100 are 13, one of which (48) lies in the block
        assert_eq!(m.sampled_count(), 8 + 12);
    }

    #[test]
    fn center_fraction_round_half_up_and_floor() {
        assert_eq!(AcsSpec::CenterFraction(0.04).lines_for(64), 3);
        assert_eq!(AcsSpec::CenterFraction(0.08).lines_for(64), 5);
        assert_eq!(AcsSpec::CenterFraction(0.125).lines_for(4), 1);
        assert_eq!(AcsSpec::CenterFraction(0.001).lines_for(64), 1);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(matches!(
            make_equispaced_mask(16, 4, AcsSpec::Lines(17)),
            Err(Error::InvalidConfig(_))
        ));
        assert!(make_equispaced_mask(16, 0, AcsSpec::Lines(4)).is_err());
        assert!(make_equispaced_mask(16, 2, AcsSpec::CenterFraction(0.0)).is_err());
        assert!(make_equispaced_mask(16, 2, AcsSpec::CenterFraction(1.5)).is_err());
    }

    fn ramp(n: usize, h: usize, w: usize) -> MultiCoilKSpace {
        MultiCoilKSpace::new(Array3::from_shape_fn((n, h, w), |(c, r, j)| {
            Complex64::new((c * 100 + r * 10 + j) as f64 + 1.0, -(j as f64) - 0.5)
        }))
        .unwrap()
    }

    #[test]
    fn full_mask_is_identity_and_projection_is_idempotent() {
        let k = ramp(2, 4, 12);
        let full = make_equispaced_mask(12, 1, AcsSpec::Lines(2)).unwrap();
        assert_eq!(apply_mask(&k, &full).unwrap(), k);

        let m = make_equispaced_mask(12, 3, AcsSpec::Lines(2)).unwrap();
        let once = apply_mask(&k, &m).unwrap();
        assert_eq!(apply_mask(&once, &m).unwrap(), once);
        for ((_, _, j), v) in once.data().indexed_iter() {
            assert_eq!(v.norm() == 0.0, !m.is_sampled(j));
        }
    }

    #[test]
    fn width_mismatch_is_a_shape_error() {
        let k = ramp(1, 4, 12);
        let m = make_equispaced_mask(10, 2, AcsSpec::Lines(2)).unwrap();
        assert!(matches!(apply_mask(&k, &m), Err(Error::Shape(_))));
    }

    proptest! {
        #[test]
        fn sampled_count_matches_enumeration(width in 8usize..300, r in 1usize..12, lines in 0usize..40) {
            prop_assume!(lines <= width);
            let m = make_equispaced_mask(width, r, AcsSpec::Lines(lines)).unwrap();
            let oracle = enumerate_oracle(width, r, lines);
            prop_assert_eq!(m.sampled_count(), oracle.len());
            prop_assert_eq!(m.sampled_indices(), oracle);
            prop_assert!(m.sampled_count() >= 1);
        }
    }
}
