//! Euclidean projection onto the NxM constraint set.
//!
//! Within each contiguous group of `n` values along the last dimension the
//! `m` largest magnitudes are kept and everything else becomes exactly `0.0`.
//! Equal magnitudes resolve in favour of the lower position. Each group is
//! handled independently with a fixed-size selection, so the work is linear
//! in the element count.

use crate::error::NxmError;
use crate::nxm::mask::{Mask, NxmMask};
use crate::nxm::pattern::SparsityPattern;
use crate::tensor::Tensor;

/// Writes into `keep` which of `group`'s positions survive the projection.
fn select_group(group: &[f64], m: usize, order: &mut Vec<usize>, keep: &mut [bool]) {
    order.clear();
    order.extend(0..group.len());
    // Stable sort: among equal magnitudes the lower position stays first.
    order.sort_by(|&a, &b| group[b].abs().total_cmp(&group[a].abs()));
    keep.fill(false);
    for &i in &order[..m] {
        keep[i] = true;
    }
}

fn retained_bits(w: &Tensor, pattern: SparsityPattern) -> Result<Vec<bool>, NxmError> {
    pattern.check_dim(w.last_dim())?;
    w.validate_finite()?;
    let mut bits = vec![false; w.len()];
    let mut order = Vec::with_capacity(pattern.n());
    for (group, keep) in w
        .data()
        .chunks(pattern.n())
        .zip(bits.chunks_mut(pattern.n()))
    {
        select_group(group, pattern.m(), &mut order, keep);
    }
    Ok(bits)
}

/// Closest tensor (in Frobenius norm) satisfying the pattern.
pub fn project_nxm(w: &Tensor, pattern: SparsityPattern) -> Result<Tensor, NxmError> {
    let bits = retained_bits(w, pattern)?;
    let mut out = w.clone();
    for (v, keep) in out.data_mut().iter_mut().zip(bits) {
        if !keep {
            *v = 0.0;
        }
    }
    Ok(out)
}

/// The positions [`project_nxm`] would retain.
pub fn extract_mask(w: &Tensor, pattern: SparsityPattern) -> Result<NxmMask, NxmError> {
    let bits = retained_bits(w, pattern)?;
    let mask = Mask::new(w.shape().to_vec(), bits)?;
    Ok(NxmMask::from_parts_unchecked(pattern, mask))
}

/// True iff every group holds at most `m` nonzeros.
pub fn check_compliance(w: &Tensor, pattern: SparsityPattern) -> Result<bool, NxmError> {
    Ok(first_violation(w, pattern)?.is_none())
}

/// Index of the first group with more than `m` nonzeros.
pub fn first_violation(w: &Tensor, pattern: SparsityPattern) -> Result<Option<usize>, NxmError> {
    pattern.check_dim(w.last_dim())?;
    Ok(w.data()
        .chunks(pattern.n())
        .position(|g| g.iter().filter(|&&v| v != 0.0).count() > pattern.m()))
}

/// `‖w − project_nxm(w)‖²`, summed in element order.
pub fn projection_distance_sq(w: &Tensor, projected: &Tensor) -> f64 {
    w.data()
        .iter()
        .zip(projected.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn row(values: &[f64]) -> Tensor {
        Tensor::new(vec![1, values.len()], values.to_vec()).unwrap()
    }

    fn p42() -> SparsityPattern {
        SparsityPattern::default()
    }

    #[test]
    fn keeps_two_largest_magnitudes() {
        let out = project_nxm(&row(&[3.0, -5.0, 1.0, 0.5]), p42()).unwrap();
        assert_eq!(out.data(), &[3.0, -5.0, 0.0, 0.0]);
    }

    #[test]
    fn compliant_group_is_a_fixed_point() {
        let w = row(&[0.0, 0.0, 2.0, -1.0]);
        assert!(project_nxm(&w, p42()).unwrap().bit_eq(&w));
    }

    #[test]
    fn mask_examples_and_tie_break() {
        let m = extract_mask(&row(&[3.0, -5.0, 1.0, 0.5]), p42()).unwrap();
        assert_eq!(m.bits(), &[true, true, false, false]);
        let m = extract_mask(&row(&[1.0, 1.0, 1.0, 1.0]), p42()).unwrap();
        assert_eq!(m.bits(), &[true, true, false, false]);
        let m = extract_mask(&row(&[-1.0, 2.0, 1.0, -2.0]), p42()).unwrap();
        assert_eq!(m.bits(), &[false, true, false, true]);
    }

    #[test]
    fn compliance_uses_at_most_semantics() {
        assert!(check_compliance(&row(&[0.0, 0.0, 0.0, 7.0]), p42()).unwrap());
        assert!(!check_compliance(&row(&[1.0, 2.0, 3.0, 4.0]), p42()).unwrap());
        let projected =
            project_nxm(&row(&[1.0, 2.0, 3.0, 4.0, -1.0, 0.1, 0.2, 9.0]), p42()).unwrap();
        assert!(check_compliance(&projected, p42()).unwrap());
    }

    #[test]
    fn rejects_indivisible_and_non_finite() {
        assert!(matches!(
            project_nxm(&row(&[1.0, 2.0, 3.0]), p42()),
            Err(NxmError::NotDivisible { dim: 3, n: 4 })
        ));
        assert!(matches!(
            project_nxm(&row(&[1.0, f64::NAN, 3.0, 4.0]), p42()),
            Err(NxmError::Tensor(_))
        ));
        assert!(check_compliance(&row(&[1.0; 6]), p42()).is_err());
    }

    /// Exhaustive joint search over every choice of supports for a 1×8 row.
    fn brute_force_row8(w: &[f64]) -> Vec<f64> {
        let pairs: Vec<(usize, usize)> = (0..4)
            .flat_map(|a| (a + 1..4).map(move |b| (a, b)))
            .collect();
        let mut best = (f64::INFINITY, vec![]);
        for &(a0, a1) in &pairs {
            for &(b0, b1) in &pairs {
                let keep = [a0, a1, 4 + b0, 4 + b1];
                let z: Vec<f64> = (0..8)
                    .map(|i| if keep.contains(&i) { w[i] } else { 0.0 })
                    .collect();
                let d: f64 = w.iter().zip(&z).map(|(x, y)| (x - y) * (x - y)).sum();
                if d < best.0 {
                    best = (d, z);
                }
            }
        }
        best.1
    }

    #[test]
    fn matches_joint_brute_force_on_random_rows() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let w: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let got = project_nxm(&row(&w), p42()).unwrap();
            assert_eq!(got.data(), brute_force_row8(&w).as_slice());
        }
    }

    #[test]
    fn mask_agrees_with_projection_support() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let w = Tensor::from_fn(&[16, 32], |_| rng.gen_range(-2.0..2.0));
        let projected = project_nxm(&w, p42()).unwrap();
        let mask = extract_mask(&w, p42()).unwrap();
        assert_eq!(mask.as_mask(), &Mask::nonzero(&projected));
    }

    fn tensor_strategy() -> impl Strategy<Value = Tensor> {
        (1usize..4, 1usize..4).prop_flat_map(|(rows, groups)| {
            proptest::collection::vec(-10.0f64..10.0, rows * groups * 8)
                .prop_map(move |v| Tensor::new(vec![rows, groups * 8], v).unwrap())
        })
    }

    proptest! {
        #[test]
        fn projection_is_idempotent(w in tensor_strategy(), m in 1usize..=8) {
            let p = SparsityPattern::new(8, m).unwrap();
            let once = project_nxm(&w, p).unwrap();
            prop_assert!(project_nxm(&once, p).unwrap().bit_eq(&once));
            prop_assert!(check_compliance(&once, p).unwrap());
        }

        #[test]
        fn projection_commutes_with_scaling(w in tensor_strategy(), c in prop_oneof![-4.0f64..-0.25, 0.25f64..4.0]) {
            let p = SparsityPattern::new(8, 4).unwrap();
            let lhs = project_nxm(&w.scale(c), p).unwrap();
            let rhs = project_nxm(&w, p).unwrap().scale(c);
            // Same support, same values; compare by value so 0·c = -0 is not a mismatch.
            prop_assert_eq!(lhs.data(), rhs.data());
        }
    }
}
