//! Autocorrelation testing for quantum random number generator output.
//!
//! The crate checks whether bits `l` positions apart in a sequence are
//! independent, using a test whose null hypothesis allows the source to be
//! biased. Around that test it provides:
//!
//! * [`oracle`]: exact null distributions used to check the normal
//!   approximation the test relies on,
//! * [`simulate`]: seeded generators for ideal, correlated and drifting
//!   per-qubit bitstreams,
//! * [`ingest`]: the job, calibration and p-value matrix file formats,
//! * [`aggregate`]: per-qubit failure ratios, the simultaneous-pass
//!   proportion and the T1 rank correlation across a fleet of qubits.
//!
//! ```
//! use qrng_audit::{run_test, BitSequence, TestParams, Verdict};
//!
//! let bits: BitSequence = "0101010101010101010101010101010101010101".parse()?;
//! let result = run_test(&bits, &TestParams::default())?;
//! assert_eq!(result.statistic, 39);
//! assert_eq!(result.verdict, Verdict::Fail);
//! # Ok::<(), qrng_audit::Error>(())
//! ```

pub mod aggregate;
pub mod bits;
pub mod erfc;
mod error;
pub mod ingest;
pub mod oracle;
pub mod simulate;
pub mod stats;

pub use bits::BitSequence;
pub use erfc::erfc;
pub use error::{Error, Result};
pub use stats::{
    autocorr_statistic, estimate_bias, normalize_statistic, p_value, run_test, AutocorrResult, BiasMode,
    TestParams, Verdict,
};

// The guide's code blocks compile and run as doctests of this crate.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/autocorrelation.md")]
    mod autocorrelation {}
    #[doc = include_str!("../../../book/src/erfc.md")]
    mod erfc {}
    #[doc = include_str!("../../../book/src/oracle.md")]
    mod oracle {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/files.md")]
    mod files {}
    #[doc = include_str!("../../../book/src/fleet.md")]
    mod fleet {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
