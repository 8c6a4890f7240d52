//! Config-driven commands behind the `monocanon` binary. Each command
//! writes its reports plus the effective `config.json` into one output
//! directory; wall-clock timings go only to `run.log`.

mod config;

use std::path::{Path, PathBuf};
use std::time::Instant;

pub use config::{apply_override, DataConfig, DemoConfig, ModelConfig, PathsConfig, RunConfig, TrainSection};

use crate::baselines::{attach, canonicalizer_name, evaluate, train_baseline, train_log_csv, BaselineKind};
use crate::bench::run_bench;
use crate::canon::AdaptedNetwork;
use crate::checks::{check_claim1, check_group, CheckReport};
use crate::datagen::{
    generate_sample, generate_split, read_dataset, write_dataset, ComposedSample, DigitSource, Split,
};
use crate::error::{Error, Result};
use crate::image::FeatureMap;
use crate::metrics::image_warps;
use crate::sampling::{apply_warp, apply_warp_inverse};
use crate::warp::{Direction, Warp2d};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Gen,
    Train,
    Eval,
    CheckGroup,
    CheckClaim1,
    DemoWarp,
    Bench,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Gen => "gen",
            Command::Train => "train",
            Command::Eval => "eval",
            Command::CheckGroup => "check-group",
            Command::CheckClaim1 => "check-claim1",
            Command::DemoWarp => "demo-warp",
            Command::Bench => "bench",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Outcome {
    /// False when a check suite failed.
    pub passed: bool,
    /// Files written, relative to the output directory.
    pub files: Vec<String>,
    pub summary: String,
}

struct Out<'a> {
    dir: &'a Path,
    files: Vec<String>,
}

impl Out<'_> {
    fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
        let p = self.dir.join(name);
        std::fs::write(&p, contents).map_err(|e| Error::io(&p, e))?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn json<T: serde::Serialize>(&mut self, name: &str, v: &T) -> Result<()> {
        let mut s = serde_json::to_string_pretty(v)?;
        s.push('\n');
        self.write(name, s)
    }
}

fn require<'a>(p: &'a Option<String>, key: &str, cmd: Command) -> Result<&'a Path> {
    let p = p
        .as_deref()
        .ok_or_else(|| Error::Config(vec![format!("{key}: required by {}", cmd.name())]))?;
    let path = Path::new(p);
    if !path.exists() {
        return Err(Error::Config(vec![format!("{key}: {p} does not exist")]));
    }
    Ok(path)
}

/// Checks up front that every path the command reads exists.
pub fn resolve_paths(cmd: Command, cfg: &RunConfig) -> Result<()> {
    let mut errors = Vec::new();
    let mut need = |key: &str, p: &Option<String>| {
        if let Err(Error::Config(e)) = require(p, key, cmd) {
            errors.extend(e);
        }
    };
    match cmd {
        Command::Train => {
            need("paths.data", &cfg.paths.data);
            if cfg.model.kind != BaselineKind::Augmented {
                need("paths.augmented", &cfg.paths.augmented);
            }
        }
        Command::Eval => need("paths.data", &cfg.paths.data),
        _ => {}
    }
    if let Some(d) = &cfg.data.mnist_dir {
        if matches!(cmd, Command::Gen | Command::DemoWarp) && !Path::new(d).is_dir() {
            errors.push(format!("data.mnist_dir: {d} is not a directory"));
        }
    }
    if cmd == Command::Eval {
        if let Some(c) = &cfg.paths.checkpoint {
            if !Path::new(c).is_dir() {
                errors.push(format!("paths.checkpoint: {c} is not a directory"));
            }
        }
    }
    if errors.is_empty() {
        Ok(())
    } else {
        Err(Error::Config(errors))
    }
}

/// Runs `cmd` and writes its outputs into `out`.
pub fn run(cmd: Command, cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    resolve_paths(cmd, cfg)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let started = Instant::now();
    let mut o = Out {
        dir: out,
        files: Vec::new(),
    };
    o.write("config.json", format!("{}\n", cfg.to_json()))?;
    let (passed, summary) = match cmd {
        Command::Gen => gen(cfg, &mut o)?,
        Command::Train => train(cfg, &mut o)?,
        Command::Eval => eval(cfg, &mut o)?,
        Command::CheckGroup => report(&check_group(&cfg.check_group)?, "check_group.json", &mut o)?,
        Command::CheckClaim1 => report(&check_claim1(&cfg.claim1)?, "check_claim1.json", &mut o)?,
        Command::DemoWarp => demo(cfg, &mut o)?,
        Command::Bench => bench(cfg, &mut o)?,
    };
    let log = format!(
        "command {}\nunix_time {}\nseconds {:.3}\npassed {passed}\n",
        cmd.name(),
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        started.elapsed().as_secs_f64()
    );
    let p = out.join("run.log");
    std::fs::write(&p, log).map_err(|e| Error::io(&p, e))?;
    o.files.push("run.log".into());
    Ok(Outcome {
        passed,
        files: o.files,
        summary,
    })
}

fn sources(cfg: &RunConfig) -> Result<(DigitSource, DigitSource)> {
    let dir = cfg.data.mnist_dir.as_deref().map(Path::new);
    Ok((
        DigitSource::open(dir, Split::Train)?,
        DigitSource::open(dir, Split::Test)?,
    ))
}

fn gen(cfg: &RunConfig, o: &mut Out) -> Result<(bool, String)> {
    let (tr, te) = sources(cfg)?;
    let compose = &cfg.data.compose;
    let train = generate_split(&tr, compose, cfg.seed, cfg.data.train_size)?;
    let test = generate_split(&te, compose, cfg.seed, cfg.data.test_size)?;
    let m = write_dataset(
        o.dir,
        compose,
        cfg.seed,
        tr.kind,
        &[("train", Split::Train, &train), ("test", Split::Test, &test)],
    )?;
    o.files.extend(m.splits.iter().map(|s| s.file.clone()));
    o.files.push("manifest.json".into());
    Ok((
        true,
        format!(
            "{} train / {} test samples from {:?} glyphs",
            train.len(),
            test.len(),
            tr.kind
        ),
    ))
}

fn load_split(cfg: &RunConfig, name: &str) -> Result<Vec<ComposedSample>> {
    let dir = Path::new(cfg.paths.data.as_deref().expect("resolved"));
    Ok(read_dataset(dir, name)?.1)
}

/// The network layout of `cfg.model.kind`, with weights from `checkpoint`
/// when given and seeded initialization otherwise.
pub fn build_network(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<AdaptedNetwork> {
    let exp = cfg.experiment();
    let (blocks, head) = exp.arch.build(cfg.seed)?;
    let base = AdaptedNetwork::new(blocks, head)?;
    let mut net = match cfg.model.kind {
        BaselineKind::Augmented => base,
        k => attach(k, &exp, &base, cfg.seed)?,
    };
    if let Some(dir) = checkpoint {
        net.load(dir)?;
    }
    Ok(net)
}

fn train(cfg: &RunConfig, o: &mut Out) -> Result<(bool, String)> {
    let train = load_split(cfg, "train")?;
    let test = load_split(cfg, "test")?;
    let val = &test[..cfg.train.val_size.min(test.len())];
    let exp = cfg.experiment();
    let augmented = match cfg.model.kind {
        BaselineKind::Augmented => None,
        _ => {
            let base_cfg = RunConfig {
                model: crate::cli::ModelConfig {
                    kind: BaselineKind::Augmented,
                    ..cfg.model.clone()
                },
                ..cfg.clone()
            };
            let dir = PathBuf::from(cfg.paths.augmented.as_deref().expect("resolved"));
            Some(build_network(&base_cfg, Some(&dir))?)
        }
    };
    let (net, log) = train_baseline(cfg.model.kind, &exp, &train, val, augmented.as_ref(), cfg.seed)?;
    net.save(o.dir)?;
    o.files
        .extend(net.checkpoint_names().into_iter().map(|n| format!("{n}.mcan")));
    o.write("train_log.csv", train_log_csv(&log))?;
    let last = log.last().map(|l| l.val_accuracy).unwrap_or(0.0);
    Ok((
        true,
        format!(
            "{} trained for {} epochs, val accuracy {last:.4}",
            cfg.model.kind.name(),
            log.len()
        ),
    ))
}

fn eval(cfg: &RunConfig, o: &mut Out) -> Result<(bool, String)> {
    let test = load_split(cfg, "test")?;
    let net = build_network(cfg, cfg.paths.checkpoint.as_deref().map(Path::new))?;
    let m = evaluate(&net, &test, &cfg.eval, &canonicalizer_name(&net))?;
    o.json("metrics.json", &m)?;
    Ok((
        true,
        format!(
            "accuracy {:.4}  InvE {:.4e}  EquE {:.4e}  per-scale std {:.4}",
            m.accuracy, m.inv_e, m.equ_e, m.acc_std
        ),
    ))
}

fn report(r: &CheckReport, name: &str, o: &mut Out) -> Result<(bool, String)> {
    o.json(name, r)?;
    Ok((r.passed, r.summary()))
}

/// Marks the image of the lines `x = k/n` and `y = k/n` under `warp`.
fn draw_grid(img: &mut FeatureMap, warp: &Warp2d, n: usize, value: f64) {
    let (h, w) = (img.height(), img.width());
    let steps = 4 * h.max(w);
    let mut mark = |x: f64, y: f64| {
        let e = warp.eval_with_grads(x, y, Direction::Forward);
        let i = ((e.y * h as f64) as usize).min(h - 1);
        let j = ((e.x * w as f64) as usize).min(w - 1);
        for c in 0..img.channels() {
            img.set(i, j, c, value);
        }
    };
    for k in 1..n {
        let a = k as f64 / n as f64;
        for s in 0..=steps {
            let t = s as f64 / steps as f64;
            mark(a, t);
            mark(t, a);
        }
    }
}

/// Rows of (original, warped, unwarped) panels with the warp's image of a
/// regular grid drawn on each, separated by white gutters.
pub fn demo_panels(images: &[FeatureMap], warps: &[Warp2d], grid_lines: usize, zoom: usize) -> Result<FeatureMap> {
    let (h, w) = images
        .first()
        .map(|i| (i.height(), i.width()))
        .ok_or_else(|| Error::Usage("demo needs at least one image".into()))?;
    let gap = 2;
    let (rows, cols) = (images.len(), 3);
    let mut canvas = FeatureMap::filled(rows * h + (rows + 1) * gap, cols * w + (cols + 1) * gap, 1, 1.0);
    for (r, (img, warp)) in images.iter().zip(warps).enumerate() {
        let id = Warp2d::identity(warp.grid_n(), warp.grid_m());
        let mut orig = img.clone();
        draw_grid(&mut orig, &id, grid_lines, 0.5);
        let warped = apply_warp(img, warp);
        let mut back = apply_warp_inverse(&warped, warp);
        let mut shown = warped;
        draw_grid(&mut shown, warp, grid_lines, 0.5);
        draw_grid(&mut back, &id, grid_lines, 0.5);
        for (c, panel) in [orig, shown, back].iter().enumerate() {
            let (top, left) = (gap + r * (h + gap), gap + c * (w + gap));
            for i in 0..h {
                for j in 0..w {
                    canvas.set(top + i, left + j, 0, panel.get(i, j, 0));
                }
            }
        }
    }
    let z = zoom.max(1);
    Ok(FeatureMap::from_fn(canvas.height() * z, canvas.width() * z, |x, y| {
        let i = ((y * (canvas.height() * z) as f64) as usize / z).min(canvas.height() - 1);
        let j = ((x * (canvas.width() * z) as f64) as usize / z).min(canvas.width() - 1);
        canvas.get(i, j, 0)
    }))
}

fn demo(cfg: &RunConfig, o: &mut Out) -> Result<(bool, String)> {
    let (_, te) = sources(cfg)?;
    let d = &cfg.demo;
    let images = (0..d.images)
        .map(|i| generate_sample(&te, &cfg.data.compose, cfg.seed, i).map(|s| s.image))
        .collect::<Result<Vec<_>>>()?;
    let warps: Vec<Warp2d> = (0..d.images)
        .map(|i| image_warps(&d.sampler, cfg.seed, i, 1).remove(0))
        .collect();
    let grid = demo_panels(&images, &warps, d.grid_lines, d.zoom)?;
    grid.write_pnm(&o.dir.join("demo_warp.pgm"))?;
    o.files.push("demo_warp.pgm".into());
    let json: Vec<serde_json::Value> = warps
        .iter()
        .map(|w| serde_json::from_str(&w.to_json()))
        .collect::<std::result::Result<_, _>>()?;
    o.json("warps.json", &json)?;
    Ok((
        true,
        format!("{} rows of original / warped / unwarped panels", d.images),
    ))
}

fn bench(cfg: &RunConfig, o: &mut Out) -> Result<(bool, String)> {
    let r = run_bench(&cfg.bench)?;
    o.json("bench.json", &r)?;
    let mem = r.memory_ratio.map_or("n/a".to_string(), |m| format!("{m:.3}"));
    Ok((
        true,
        format!(
            "DEC {:.4}s vs unrolled GD {:.4}s per batch (ratio {:.3}); peak memory ratio {mem}; tape ratio {:.3}",
            r.dec.seconds_per_batch, r.unrolled_gd.seconds_per_batch, r.time_ratio, r.tape_ratio
        ),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn demo_panels_lay_out_three_columns_per_image() {
        let imgs = vec![FeatureMap::filled(8, 10, 1, 0.2); 2];
        let warps = vec![Warp2d::identity(2, 2); 2];
        let p = demo_panels(&imgs, &warps, 4, 2).unwrap();
        assert_eq!((p.height(), p.width()), (2 * (2 * 8 + 3 * 2), 2 * (3 * 10 + 4 * 2)));
        // gutter stays white, panel interior keeps the image value
        assert_eq!(p.get(0, 0, 0), 1.0);
        assert_eq!(p.get(2 * 3, 2 * 3, 0), 0.2);
        assert!(demo_panels(&[], &[], 4, 1).is_err());
    }

    #[test]
    fn missing_paths_are_all_reported() {
        let cfg = RunConfig::from_json("{}", &["model.kind=dec".into()]).unwrap();
        let Err(Error::Config(list)) = resolve_paths(Command::Train, &cfg) else {
            panic!("expected a config error")
        };
        assert_eq!(list.len(), 2, "{list:?}");
        assert!(resolve_paths(Command::CheckGroup, &cfg).is_ok());
    }

    #[test]
    fn check_group_writes_report_and_config() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig::default();
        let o = run(Command::CheckGroup, &cfg, dir.path()).unwrap();
        assert!(o.passed, "{}", o.summary);
        for f in ["config.json", "check_group.json", "run.log"] {
            assert!(o.files.iter().any(|x| x == f), "{:?}", o.files);
            assert!(dir.path().join(f).is_file());
        }
        let back = RunConfig::from_file(&dir.path().join("config.json"), &[]).unwrap();
        assert_eq!(back, cfg);
    }
}
