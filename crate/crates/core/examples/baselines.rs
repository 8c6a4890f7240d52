//! A miniature version of the toy comparison: augmented pretraining, then
//! DEC and invariance-loss fine-tuning, all evaluated on the same test set.
//! Sizes are tiny so it finishes in a minute or two; the full run uses 6k/10k.

use monocanon::baselines::{comparison_csv, run_comparison, BaselineKind, ExperimentConfig};
use monocanon::datagen::{generate_split, ComposeConfig, DigitSource, Split};

fn main() -> monocanon::Result<()> {
    let compose = ComposeConfig::default();
    let train = generate_split(&DigitSource::procedural(Split::Train), &compose, 0, 400)?;
    let test = generate_split(&DigitSource::procedural(Split::Test), &compose, 0, 200)?;
    let mut cfg = ExperimentConfig::default();
    cfg.pretrain.epochs = 3;
    cfg.finetune.epochs = 1;
    cfg.val_size = 50;
    cfg.eval.inv_groups = 50;
    cfg.eval.equ_images = 20;
    let kinds = [BaselineKind::Augmented, BaselineKind::Dec, BaselineKind::InvLoss];
    let rows = run_comparison(&cfg, &train, &test, &kinds, &[0.1], 0)?;
    print!("{}", comparison_csv(&rows));
    Ok(())
}
