use num_traits::{Float, FromPrimitive, NumAssign};

/// Scalar type for the numeric kernels: `f32` or `f64`.
///
/// Network forward/backward passes, attribution math, and the closed-form
/// channel/traffic expressions are written against this trait. The
/// simulation and training pipelines instantiate the `f64` lane (the
/// attribution tolerances require it); `f32` remains available for
/// memory-bound inference uses.
pub trait Real:
    Float + FromPrimitive + NumAssign + std::iter::Sum + std::fmt::Debug + Send + Sync + 'static
{
    /// Lossy conversion from an `f64` literal.
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("finite f64 converts to any Real")
    }
}

impl Real for f32 {}
impl Real for f64 {}
