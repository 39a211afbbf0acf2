pub mod compare;
pub mod evaluate;
pub mod fit;
pub mod predict;
pub mod screen;
pub mod simulate;

use dtscr_core::estimators::FittedModel;
use dtscr_core::Result;
use std::path::Path;

pub fn load_model(path: &Path) -> Result<FittedModel> {
    let text = std::fs::read_to_string(path)?;
    FittedModel::from_json(&text)
}
