//! File formats and the synthetic data generator.

pub mod rttm;
pub mod sim;
pub mod wav;
pub mod weights;

pub use rttm::{parse_rttm, write_rttm, RttmRecord};
pub use sim::{simulate_conversation, Conversation, SimConfig};
pub use wav::{read_wav, write_wav};
pub use weights::{load_weights, random_weights, save_weights, Tensor, WeightBundle};
