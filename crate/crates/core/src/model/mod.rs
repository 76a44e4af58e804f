//! Moment functions, datasets and derivatives in the mismeasured coordinates.

pub mod basis;
pub mod dataset;
pub mod logit;
pub mod moment;
pub mod multi_index;
pub mod numdiff;
pub mod residual;

pub use basis::{build_instrument_basis, BasisKind, InstrumentBasis};
pub use dataset::{read_csv, ColumnRoles, Dataset, Observation, SideColumn};
pub use logit::ConditionalLogit;
pub use moment::{
    derivative_x, evaluate_moments, ClosureMoment, DerivativeRequest, DerivativeTarget, MomentFunction,
};
pub use multi_index::{multi_index_set, MultiIndex};
pub use numdiff::StepPolicy;
pub use residual::{
    build_second_measurement_moments, regression_moments, ClosureRegression, ClosureResidual, Instruments,
    PolynomialInstruments, PolynomialRegression, ProbitRegression, RationalRegression, Regression,
    RegressionResidual, Residual, ResidualMoments,
};
