//! Model scoring and validation: DIC, CPO, log evidence, variance shares,
//! and leave-area-period-out validation.

mod decomposition;
mod evidence;
mod report;
mod scores;
mod validation;

pub use decomposition::{variance_decomposition, VarianceShare};
pub use evidence::{log_cpo_refit, log_evidence, log_evidence_quadrature, QUADRATURE_INTERVALS};
pub use report::{compare, evaluate, write_comparison_table, CompareOptions, EvalReport};
pub use scores::{cpo, dic, Cpo, Dic, CPO_CV_THRESHOLD};
pub use validation::{
    validate_loo_area_time, write_validation_table, SkippedCell, ValidationCell, ValidationOptions, ValidationReport,
};
