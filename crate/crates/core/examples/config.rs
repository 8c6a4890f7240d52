//! Run configuration: defaults, dotted `--set` overrides, and error
//! reporting that lists every problem at once.

use monocanon::cli::RunConfig;

fn main() {
    let cfg = RunConfig::from_json(r#"{"dec": {"grid": 8}}"#, &["model.kind=dec".into(), "seed=3".into()])
        .expect("valid config");
    println!("grid {}, kind {:?}, seed {}", cfg.dec.grid, cfg.model.kind, cfg.seed);

    let bad = r#"{"dec": {"gird": 8}, "train": {"augment_prob": 1.5}, "sead": 1}"#;
    match RunConfig::from_json(bad, &[]) {
        Ok(_) => unreachable!(),
        Err(monocanon::Error::Config(list)) => {
            for e in list {
                println!("error: {e}");
            }
        }
        Err(e) => println!("error: {e}"),
    }
    match RunConfig::from_json(r#"{"train": {"augment_prob": 1.5}, "dec": {"grid": 0}}"#, &[]) {
        Err(monocanon::Error::Config(list)) => println!("{} invalid values: {list:?}", list.len()),
        other => println!("{other:?}"),
    }
}
