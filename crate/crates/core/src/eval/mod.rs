//! Segmentation scoring (pixel and object DICE) and the blinded real/fake
//! rating session.

mod dice;
mod visual;

pub use dice::{
    dice, evaluate_model, object_dice, pixel_dice, AggregateDice, DiceReport, EvalItem, ImageDice,
    Segmenter, DEFAULT_THRESHOLD,
};
pub use visual::{
    Answer, BlindItem, PatchRef, ReportRow, SessionCounts, SessionItem, SessionReport, TrueKind,
    VisualTestSession,
};
