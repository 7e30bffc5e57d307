//! Sketched GMRES with deflated restarting (GMRES-SDR).
//!
//! The solver builds a non-orthogonal Krylov basis with a truncated Arnoldi
//! process, solves the projected least-squares problem in a randomly sketched
//! space, and carries a harmonic-Ritz recycle space across restart cycles and
//! across sequences of related linear systems.
//!
//! Module map:
//!
//! * [`linop`]: CSR matrices, Matrix Market I/O and synthetic problem families.
//! * [`sketch`]: subsampled randomized DCT embedding.
//! * [`arnoldi`]: truncated Arnoldi with synchronized sketches.
//! * [`lsq`]: incremental QR of the sketched basis image and Givens diagnostics.
//! * [`recycle`]: sketched harmonic-Ritz extraction and recycle-space updates.
//! * [`driver`]: the cycle loop, sequences of systems and the GMRES baseline.
//! * [`diagnostics`]: projector, residual-chain and augmentation checks.

pub mod arnoldi;
pub mod dense;
pub mod diagnostics;
pub mod driver;
pub mod error;
pub mod linop;
pub mod lsq;
pub mod recycle;
pub mod sketch;

pub use driver::{
    solve_gmres_baseline, solve_sequence, Counters, GmresSdr, SolveReport, SolveStatus,
    SolverConfig, Variant,
};
pub use error::{Error, Result};
pub use linop::{LinearOperator, ProblemInstance, ProblemSequence, SparseMatrix};
pub use recycle::{Provenance, RecycleSpace};
pub use sketch::{DistortionEstimate, SketchOperator};
