//! Numerical building blocks shared by every other module.

mod eigen;
mod operator;
mod random;
mod rng;
mod vector;

pub use eigen::{
    dense_sym_eigh, dense_sym_eigs, relative_asymmetry, tridiag_max_eig, EigenError,
    SymmetricEigen, TriDiagonal, ASYMMETRY_TOLERANCE, MAX_DENSE_DIM,
};
pub(crate) use operator::debug_check_symmetric;
pub use operator::{
    symmetry_defect, DenseOperator, DiagonalOperator, FnOperator, IdentityOperator,
    SymmetricOperator, SYMMETRY_PROBE_PAIRS, SYMMETRY_TOLERANCE,
};
pub use random::{random_orthogonal, symmetric_with_spectrum};
pub use rng::SeededRng;
pub use vector::{axpy, dot, global_l2_norm, scale, Vector};
