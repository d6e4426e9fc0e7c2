//! Personalized-size top-k recommendation.
//!
//! Given any recommender's scores over a user's unobserved items, the crate
//! calibrates them into interaction probabilities with a per-user logistic
//! map, estimates the expected utility (NDCG, PDCG, F1, truncated precision)
//! of every prefix size `k ≤ K`, and recommends the prefix with the highest
//! expected utility. Baselines, held-out evaluation and a multi-domain
//! budget allocator are included.
//!
//! The numeric kernels ([`calibrate`], [`poibin`], [`utility`],
//! [`multidomain`]) are generic over the scalar type; the aliases below fix
//! them to `f64`, which the data pipeline uses throughout.

pub mod calibrate;
pub mod dataset;
pub mod error;
pub mod multidomain;
pub mod poibin;
pub mod scalar;
pub mod scorer;
pub mod select;
pub mod synth;
pub mod utility;

pub use error::{Error, Result};
pub use scalar::Real;

pub type PlattParams = calibrate::PlattParams<f64>;
pub type CalibrationSet = calibrate::CalibrationSet<f64>;
pub type CountDistribution = poibin::CountDistribution<f64>;
pub type UtilityCurve = utility::UtilityCurve<f64>;
pub type ApproxEstimator = utility::ApproxEstimator<f64>;
pub type Allocation = multidomain::Allocation<f64>;

pub type PlattParams32 = calibrate::PlattParams<f32>;
pub type CountDistribution32 = poibin::CountDistribution<f32>;
pub type UtilityCurve32 = utility::UtilityCurve<f32>;
