pub mod conjugate;
pub mod error;
pub mod global_local;
pub mod grid_oracle;
pub mod lasso;
pub mod linreg;
pub mod logreg;
pub mod normal_means;
pub mod solver;
pub mod spd;
pub mod special;

pub use error::{Error, Result};
