//! Few-shot episodic task sources.

mod cache;
mod episode;
mod import;
mod pgm;
mod synth;
mod table;

pub use cache::{decode_table, encode_table, load_table, save_table, TABLE_MAGIC, TABLE_VERSION};
pub use episode::{Batch, Episode, Example, InstanceId};
pub use import::import_image_classes;
pub use pgm::{decode_pgm, encode_pgm, GrayImage, PgmError, MAX_PIXELS};
pub use synth::{random_rotation, synth_proto_tasks, SynthSpec};
pub use table::{Alphabet, AlphabetPool, AlphabetSplit, CharClass, ClassTable};
