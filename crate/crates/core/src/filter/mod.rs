//! Filter building blocks shared by the effect stages.

mod biquad;
mod fir;
mod savgol;

pub use biquad::{Biquad, BiquadCoeffs};
pub use fir::{
    convolve, convolve_same, design_from_zero_phase_response, forward_backward, lowpass_sinc,
    reflect_pad,
};
pub use savgol::savgol_smooth;
