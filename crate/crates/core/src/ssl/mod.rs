pub mod ctc;
pub mod ema;
pub mod losses;
pub mod mask;
pub mod network;
pub mod quantizer;
pub mod synth;
pub mod train;
