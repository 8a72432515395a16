//! Dense layers, a reverse-mode tape, finite-difference checks and Adam.
//! Everything is `f64`.

pub mod gradcheck;
pub mod mlp;
pub mod optim;
pub mod params;
pub mod tape;

pub use gradcheck::{grad_check, relative_error, GradCheckReport, Probe};
pub use mlp::{Mlp, MlpSpec};
pub use optim::{Adam, AdamConfig};
pub use params::{Param, ParamId, ParamStore};
pub use tape::{Tape, Var};
