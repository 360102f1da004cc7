//! Dense tensor algebra and fixed-rank tensor trains.

mod dense;
mod factorize;
pub mod kernels;
mod ops;
mod tt;

pub use dense::DenseTensor;
pub use factorize::{
    rank_factorize, rank_factorize_with, RankFactorization, SplitConvention, DEFAULT_PINV_RTOL,
};
pub use ops::{
    matricize, matricize_matrix, mode_n_product, mode_n_vector_product, unfold_mode, Grouping,
};
pub use tt::{TtTrain, DEFAULT_DENSE_CAP};
