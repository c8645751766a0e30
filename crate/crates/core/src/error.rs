use thiserror::Error;

use crate::configuration::ConfigId;

pub type Result<T> = std::result::Result<T, Error>;

/// Every failure the library can report.
///
/// Variant names double as the machine-readable `kind` in scenario reports,
/// so renaming one is a breaking change for report consumers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid support: {0}")]
    InvalidSupport(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("support is not contained in the configuration's support")]
    SupportNotContained,
    #[error("configurations are of different kinds (path vs field)")]
    KindMismatch,

    #[error("weight is not finite: {0}")]
    NonFiniteWeight(String),
    #[error("target configuration is not contained in any term")]
    NotContained,
    #[error("target configuration is contained in several terms with conflicting values")]
    Ambiguous,
    #[error("coefficient set is not scalar-valued")]
    NonScalarCoeff,
    #[error("selector matched no term")]
    EmptySelection,
    #[error("unknown quantity `{0}`")]
    UnknownQuantity(String),
    #[error("invalid boundary specification: {0}")]
    InvalidBoundary(String),

    #[error("problem too large: {0}")]
    TooLarge(String),
    #[error("path support is not a single interval")]
    DisconnectedSupport,
    #[error("caustic: omega*T = {0} is a multiple of pi")]
    CausticEncountered(f64),
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("map is not invertible on the patch: {0}")]
    NotInvertibleOnPatch(String),
    #[error("site {0:?} lacks the neighbours needed for central differences")]
    BoundarySite(Vec<i64>),
    #[error("metric is singular at the site")]
    SingularMetric,
    #[error("metric does not have Lorentzian signature: {0}")]
    WrongSignature(String),
    #[error("invalid tensor: {0}")]
    InvalidTensor(String),

    #[error("phase table is not antisymmetric for ({0}, {1})")]
    PhaseNotAntisymmetric(ConfigId, ConfigId),
    #[error("phase undefined for ({0}, {1})")]
    PhaseUndefined(ConfigId, ConfigId),
    #[error("no branch map for {0}")]
    MissingBranchMap(ConfigId),
    #[error("branch weights do not satisfy sum a^2 = 1 (got {0})")]
    BadNormalization(f64),
    #[error("second map is undefined on an image of the first: {0}")]
    DomainMismatch(ConfigId),
    #[error("quantum diffeomorphism merged branches and cannot be reversed")]
    Irreversible,
    #[error("merged branches carry different coefficient sets")]
    CoeffConflict,

    #[error("map is not invertible: {0}")]
    NotInvertible(String),
    #[error("branch mismatch: {0}")]
    BranchMismatch(String),

    #[error("point lacks the margin required for the stencil: {0}")]
    InsufficientMargin(String),
    #[error("light cones of the branches do not coincide")]
    ConesNotAligned,

    #[error("region has no interior sites")]
    BoundaryOnlySupport,
    #[error("sampler failed: {0}")]
    SamplerFailure(String),

    #[error("point {0} is not in chart {1}")]
    NotInChart(u64, usize),
    #[error("branch {0} is not in chart {1}")]
    BranchNotInChart(ConfigId, usize),
    #[error("tensor pairing mismatch: {0}")]
    PairingMismatch(String),
    #[error("no weight for base point {0}")]
    MissingWeight(ConfigId),
    #[error("no configuration attached to base point {0}")]
    MissingConfig(ConfigId),

    #[error("schema error: {0}")]
    SchemaError(String),
    #[error("io failure: {0}")]
    IoFailure(String),
}

impl Error {
    /// Stable variant name used in structured reports.
    pub fn kind(&self) -> &'static str {
        use Error::*;
        match self {
            InvalidSupport(_) => "InvalidSupport",
            InvalidConfig(_) => "InvalidConfig",
            SupportNotContained => "SupportNotContained",
            KindMismatch => "KindMismatch",
            NonFiniteWeight(_) => "NonFiniteWeight",
            NotContained => "NotContained",
            Ambiguous => "Ambiguous",
            NonScalarCoeff => "NonScalarCoeff",
            EmptySelection => "EmptySelection",
            UnknownQuantity(_) => "UnknownQuantity",
            InvalidBoundary(_) => "InvalidBoundary",
            TooLarge(_) => "TooLarge",
            DisconnectedSupport => "DisconnectedSupport",
            CausticEncountered(_) => "CausticEncountered",
            InvalidModel(_) => "InvalidModel",
            NotInvertibleOnPatch(_) => "NotInvertibleOnPatch",
            BoundarySite(_) => "BoundarySite",
            SingularMetric => "SingularMetric",
            WrongSignature(_) => "WrongSignature",
            InvalidTensor(_) => "InvalidTensor",
            PhaseNotAntisymmetric(..) => "PhaseNotAntisymmetric",
            PhaseUndefined(..) => "PhaseUndefined",
            MissingBranchMap(_) => "MissingBranchMap",
            BadNormalization(_) => "BadNormalization",
            DomainMismatch(_) => "DomainMismatch",
            Irreversible => "Irreversible",
            CoeffConflict => "CoeffConflict",
            NotInvertible(_) => "NotInvertible",
            BranchMismatch(_) => "BranchMismatch",
            InsufficientMargin(_) => "InsufficientMargin",
            ConesNotAligned => "ConesNotAligned",
            BoundaryOnlySupport => "BoundaryOnlySupport",
            SamplerFailure(_) => "SamplerFailure",
            NotInChart(..) => "NotInChart",
            BranchNotInChart(..) => "BranchNotInChart",
            PairingMismatch(_) => "PairingMismatch",
            MissingWeight(_) => "MissingWeight",
            MissingConfig(_) => "MissingConfig",
            SchemaError(_) => "SchemaError",
            IoFailure(_) => "IoFailure",
        }
    }
}
