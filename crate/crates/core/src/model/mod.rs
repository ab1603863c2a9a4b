//! Network definition.

pub mod backbone;
pub mod decoder;
pub mod encoder;
pub mod merge;
pub mod net;
pub mod pretrained;

pub use decoder::{Decoder, FusionUnit, GroupOutputs, Head, Hmu};
pub use encoder::{Aspp, CNet, TripletEncoder};
pub use merge::{addition_merge, resample_to_main, MergeLayer, Merged, Siu};
pub use net::{Forward, MixedScaleNet, Model};
