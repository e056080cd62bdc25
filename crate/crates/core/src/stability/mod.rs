pub mod calculus;
pub mod isd;
pub mod operator;

pub use calculus::{tensor_energy, WeightedCalculus};
pub use isd::{isd_candidates, ConformalMode, IsdReport};
pub use operator::{
    assemble_n_full, project_v, soliton_defect, soliton_residual, solve_vh, spectrum_on_v, weighted_div,
    weighted_div_adjoint, weighted_laplacian, Classification, InvariantSymTensor, OperatorMatrix, SpectrumReport,
    StabilityContext, NEUTRAL_THRESHOLD, SOLITON_GATE,
};
