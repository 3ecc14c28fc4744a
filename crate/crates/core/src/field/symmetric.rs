//! Packing of symmetric and lower-triangular 3×3 matrices into 6-vectors.
//!
//! Both packings use the column-stacked lower-triangular order
//! `(1,1) (2,1) (3,1) (2,2) (3,2) (3,3)`, so for a symmetric `B` the entries
//! `B¹..B⁶` read `B11 B12 B13 B22 B23 B33`.

use nalgebra::{Matrix3, SMatrix};

/// Positions of the lower-triangular entries inside a column-stacked `vec(A)`.
pub const TRIL_INDICES: [usize; 6] = [0, 1, 2, 4, 5, 8];

/// `(row, col)` of each packed entry.
pub const TRIL_POSITIONS: [(usize, usize); 6] = [(0, 0), (1, 0), (2, 0), (1, 1), (2, 1), (2, 2)];

/// The 9×6 operator mapping `[B¹..B⁶]` to `vec(B)` of the symmetric matrix.
pub fn duplication_matrix() -> SMatrix<f64, 9, 6> {
    let mut p = SMatrix::<f64, 9, 6>::zeros();
    for (k, &(r, c)) in TRIL_POSITIONS.iter().enumerate() {
        p[(r + 3 * c, k)] = 1.0;
        p[(c + 3 * r, k)] = 1.0;
    }
    p
}

/// Picks the lower-triangular rows out of a column-stacked 9-vector.
pub fn tril_select(v9: &[f64; 9]) -> [f64; 6] {
    TRIL_INDICES.map(|i| v9[i])
}

/// Column-stacking `vec` of a 3×3 matrix.
pub fn vec9(m: &Matrix3<f64>) -> [f64; 9] {
    let mut out = [0.0; 9];
    out.copy_from_slice(m.as_slice());
    out
}

pub fn unpack_symmetric(b: &[f64; 6]) -> Matrix3<f64> {
    Matrix3::new(b[0], b[1], b[2], b[1], b[3], b[4], b[2], b[4], b[5])
}

pub fn pack_symmetric(m: &Matrix3<f64>) -> [f64; 6] {
    tril_select(&vec9(m))
}

pub fn unpack_lower(l: &[f64; 6]) -> Matrix3<f64> {
    Matrix3::new(l[0], 0.0, 0.0, l[1], l[3], 0.0, l[2], l[4], l[5])
}

pub fn pack_lower(m: &Matrix3<f64>) -> [f64; 6] {
    tril_select(&vec9(m))
}

/// Positive definiteness by leading principal minors.
pub fn is_spd(m: &Matrix3<f64>) -> bool {
    let m1 = m[(0, 0)];
    let m2 = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
    m1 > 0.0 && m2 > 0.0 && m.determinant() > 0.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn first_entries_map_to_expected_positions() {
        let p = duplication_matrix();
        let e1 = p.column(0);
        assert_eq!(e1[0], 1.0);
        assert_eq!(e1.iter().filter(|&&x| x != 0.0).count(), 1);
        let e2 = p.column(1);
        // (2,1) -> index 1, (1,2) -> index 3
        assert_eq!(e2[1], 1.0);
        assert_eq!(e2[3], 1.0);
        assert_eq!(e2.iter().filter(|&&x| x != 0.0).count(), 2);
    }

    #[test]
    fn duplication_matches_symmetric_layout() {
        let b = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let v = duplication_matrix() * nalgebra::SVector::<f64, 6>::from(b);
        assert_eq!(v.as_slice(), vec9(&unpack_symmetric(&b)).as_slice());
    }

    #[test]
    fn lower_packing_round_trip() {
        let l = [1.0, 0.5, -0.25, 2.0, 0.75, 3.0];
        let m = unpack_lower(&l);
        assert_eq!(m[(0, 1)], 0.0);
        assert_eq!(m[(2, 1)], 0.75);
        assert_eq!(pack_lower(&m), l);
    }

    #[test]
    fn spd_detection() {
        assert!(is_spd(&Matrix3::identity()));
        assert!(!is_spd(&Matrix3::from_diagonal(&nalgebra::Vector3::new(-1.0, -1.0, 1.0))));
        assert!(!is_spd(&Matrix3::zeros()));
    }

    proptest! {
        #[test]
        fn tril_select_is_left_inverse(v in proptest::array::uniform6(-1e6f64..1e6)) {
            let dup = duplication_matrix() * nalgebra::SVector::<f64, 6>::from(v);
            let mut v9 = [0.0; 9];
            v9.copy_from_slice(dup.as_slice());
            prop_assert_eq!(tril_select(&v9), v);
        }
    }
}
