use crate::error::{Error, Result};
use crate::generation::{FewShotExample, Prompt};

/// Prepend few-shot examples. A prompt that already carries examples is
/// rejected rather than given a second copy.
pub fn apply_icl(prompt: &Prompt, examples: &[FewShotExample]) -> Result<Prompt> {
    if examples.is_empty() {
        return Err(Error::Mitigation("icl needs at least one example".into()));
    }
    if !prompt.parts.few_shot.is_empty() {
        return Err(Error::Mitigation("icl examples already applied to this prompt".into()));
    }
    let mut out = prompt.clone();
    out.parts.few_shot = examples.to_vec();
    out.rerender();
    Ok(out)
}
