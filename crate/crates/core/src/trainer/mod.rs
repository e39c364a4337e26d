//! Adversarial training: configuration, Adam, the seeded draw stream,
//! the alternating update step, and checkpoints.

mod adam;
mod checkpoint;
mod config;
mod rng;
mod train;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
pub use config::{TrainConfig, CONFIG_KEYS};
pub use rng::TrainRng;
pub use train::{
    critic_pass, enlarge, generate, generator_pass, load_training_data, next_batch, prepare_batch, tile_grid, train_on,
    train_step, Draws, Metrics, PassOutput, StageBatch, TrainState,
};
