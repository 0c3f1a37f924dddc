//! `pvad`: corpus synthesis, test-matrix construction, pretraining,
//! fine-tuning, enrollment, evaluation and reporting.
//!
//! Exit codes: 0 success, 1 other failure, 2 usage or configuration error,
//! 3 I/O or format error, 4 numerical divergence. Failures print one line
//! `error[<kind>]: <message>` on stderr.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pvad::apc::encoder_from_container;
use pvad::config::RunConfig;
use pvad::container::TensorContainer;
use pvad::data::testmatrix::{load_test_matrix, write_test_matrix};
use pvad::data::build_test_matrix;
use pvad::eval::{self, EvalReport};
use pvad::experiment::{self, layout, Corpus, Corruption, FinetuneData, Pretraining};
use pvad::features::LogMel;
use pvad::pvad::PvadModel;
use pvad::rng::SeedStreams;
use pvad::speaker::{profiles_from_container, profiles_to_container, Dvector, EnrollmentProfile};
use pvad::Error;

#[derive(Parser)]
#[command(name = "pvad", version, about = "Personalized VAD with self-supervised pretraining")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured global seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (falls back to PVAD_THREADS).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize the corpus, noise banks and impulse responses.
    SynthData {
        #[arg(long)]
        out: PathBuf,
    },
    /// Mix the clean test mixtures into the 24 noisy conditions.
    BuildTests {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// APC (or denoising APC) pretraining of the encoder.
    Pretrain {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        denoising: bool,
        /// Also reverberate the denoising input.
        #[arg(long)]
        use_rir: bool,
    },
    /// Train the PVAD model, optionally from a pretrained encoder.
    Finetune {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        embedder: PathBuf,
        #[arg(long)]
        profiles: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Checkpoint whose encoder initializes the model.
        #[arg(long)]
        init: Option<PathBuf>,
        /// Multistyle training with the training noise pool.
        #[arg(long)]
        mtr: bool,
    },
    /// Build enrollment profiles for every speaker in the corpus.
    Enroll {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        embedder: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Train the embedder on the corpus' embedder pool and write it to
        /// `--embedder` instead of reading it.
        #[arg(long)]
        train_embedder: bool,
    },
    /// Per-condition AP and mAP over a test-matrix directory.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        tests: PathBuf,
        #[arg(long)]
        embedder: PathBuf,
        #[arg(long)]
        profiles: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Merge evaluation CSVs into comparison tables and a plot. Inputs are
    /// `NAME=path.csv` or a path whose stem (minus `_seedN`) names the model.
    Report {
        #[arg(long)]
        out: PathBuf,
        #[arg(required = true)]
        csvs: Vec<String>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (code, kind) = classify(&e);
            eprintln!("error[{kind}]: {}", e.to_string().replace('\n', " "));
            ExitCode::from(code)
        }
    }
}

fn classify(e: &Error) -> (u8, &'static str) {
    match e {
        Error::Config(_) => (2, "config"),
        Error::Io { .. } => (3, "io"),
        Error::Format(_) => (3, "format"),
        Error::Divergence(_) => (4, "divergence"),
        Error::Shape(_) => (1, "shape"),
        Error::InvalidInput(_) => (1, "input"),
        Error::InsufficientAudio { .. } => (1, "enrollment"),
    }
}

fn run(cli: Cli) -> pvad::Result<()> {
    let mut cfg = match &cli.common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.common.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let threads = match cli.common.threads {
        Some(n) => Some(n),
        None => match std::env::var("PVAD_THREADS") {
            Ok(v) => Some(
                v.parse()
                    .map_err(|_| Error::config(format!("PVAD_THREADS must be a positive integer, got '{v}'")))?,
            ),
            Err(_) => None,
        },
    };
    if let Some(n) = threads {
        if n == 0 {
            return Err(Error::config("--threads must be at least 1"));
        }
        pvad::par::init_threads(n);
    }
    let frontend = LogMel::new(&cfg.features)?;
    let seeds = SeedStreams::new(cfg.seed);

    match cli.command {
        Command::SynthData { out } => {
            let corpus = experiment::build_corpus(&cfg, &seeds)?;
            corpus.save(&out, cfg.features.sample_rate_hz)?;
            write_config(&cfg, &out.join("run_config.toml"))?;
            eprintln!("{}", corpus_line(&corpus));
        }
        Command::BuildTests { data, out } => {
            let test = experiment::load_mixtures(&data.join(layout::TEST), &cfg.features)?;
            let noise = pvad::data::NoiseBank::load_dir(data.join(layout::TEST_NOISE))?;
            let sets = build_test_matrix(&test, &noise, &seeds)?;
            write_test_matrix(&sets, &out)?;
            write_config(&cfg, &out.join("run_config.toml"))?;
            eprintln!("wrote {} test sets", sets.len());
        }
        Command::Pretrain {
            data,
            out,
            denoising,
            use_rir,
        } => {
            let corpus = Corpus::load(&data, &cfg.features)?;
            let (frontend, chunks) = experiment::vad_frontend(&cfg, &corpus.train_pool)?;
            let kind = if denoising {
                Pretraining::DenoisingApc
            } else {
                Pretraining::Apc
            };
            let mut apc_cfg = cfg.apc.clone();
            apc_cfg.use_rir |= use_rir;
            let corruption = Corruption {
                noise: &corpus.train_noise,
                rirs: &corpus.rirs,
                mtr: &cfg.mtr,
            };
            let run = experiment::run_seeds(&cfg, 0);
            let (outcome, used) = experiment::pretrain(&chunks, &apc_cfg, &frontend, corruption, kind, &run)?;
            let mut c = outcome.model.to_container(&used)?;
            stamp(&mut c, &cfg)?;
            experiment::stamp_stats(&mut c, &frontend)?;
            save_container(&c, &out)?;
            cfg.apc = used;
            write_config(&cfg, &sidecar(&out))?;
            eprintln!("final l1 {:.4}", outcome.loss_curve.last().copied().unwrap_or(f64::NAN));
        }
        Command::Finetune {
            data,
            embedder,
            profiles,
            out,
            init,
            mtr,
        } => {
            let corpus = Corpus::load(&data, &cfg.features)?;
            let (frontend, _) = experiment::vad_frontend(&cfg, &corpus.train_pool)?;
            let embedder = load_embedder(&embedder)?;
            let profiles = load_profiles(&profiles)?;
            let encoder = match &init {
                Some(p) => Some(encoder_from_container(&TensorContainer::load(p)?)?),
                None => None,
            };
            let examples = experiment::examples_for(&corpus.finetune, &frontend, &embedder, &profiles)?;
            let data = FinetuneData {
                mixtures: &corpus.finetune,
                examples: &examples,
                frontend: &frontend,
                embedder: &embedder,
                profiles: &profiles,
            };
            let corruption = mtr.then_some(Corruption {
                noise: &corpus.train_noise,
                rirs: &corpus.rirs,
                mtr: &cfg.mtr,
            });
            let run = experiment::run_seeds(&cfg, 0);
            let trained = experiment::finetune(&cfg.train, data, corruption, encoder.as_ref(), &run)?;
            let mut c = trained.model.to_container()?;
            stamp(&mut c, &cfg)?;
            experiment::stamp_stats(&mut c, &frontend)?;
            c.set_attr("mtr", mtr.to_string());
            c.set_attr("pretrained", init.is_some().to_string());
            save_container(&c, &out)?;
            cfg.train.mtr_enabled = mtr;
            write_config(&cfg, &sidecar(&out))?;
            eprintln!("final loss {:.4}", trained.loss_curve.last().copied().unwrap_or(f64::NAN));
        }
        Command::Enroll {
            data,
            embedder,
            out,
            train_embedder,
        } => {
            let corpus = Corpus::load(&data, &cfg.features)?;
            let model = if train_embedder {
                let m = experiment::train_embedder(&corpus, &cfg, &frontend, &seeds)?;
                let mut c = m.to_container()?;
                stamp(&mut c, &cfg)?;
                save_container(&c, &embedder)?;
                m
            } else {
                load_embedder(&embedder)?
            };
            let profiles = experiment::enroll_all(&model, &corpus.enroll, &frontend)?;
            let list: Vec<EnrollmentProfile> = profiles.into_values().collect();
            let mut c = profiles_to_container(&list)?;
            stamp(&mut c, &cfg)?;
            save_container(&c, &out)?;
            write_config(&cfg, &sidecar(&out))?;
            eprintln!("enrolled {} speakers", list.len());
        }
        Command::Evaluate {
            model,
            tests,
            embedder,
            profiles,
            out,
        } => {
            let c = TensorContainer::load(&model)?;
            let frontend = experiment::frontend_for(&c, &cfg.features)?;
            let model = PvadModel::from_container(&c)?;
            let embedder = load_embedder(&embedder)?;
            let profiles = load_profiles(&profiles)?;
            let sets = load_test_matrix(&tests, &cfg.features)?;
            if sets.is_empty() {
                return Err(Error::invalid(format!("{}: no test sets found", tests.display())));
            }
            let eval_sets = experiment::eval_sets_for(&sets, &frontend, &embedder, &profiles)?;
            let report = eval::evaluate(&model, &eval_sets)?;
            create_parent(&out)?;
            report.save_csv(&out)?;
            write_config(&cfg, &sidecar(&out))?;
            print!("{}", report.to_table());
        }
        Command::Report { out, csvs } => {
            let mut runs = Vec::with_capacity(csvs.len());
            for arg in &csvs {
                let (name, path) = match arg.split_once('=') {
                    Some((n, p)) => (n.to_string(), PathBuf::from(p)),
                    None => (model_name(Path::new(arg)), PathBuf::from(arg)),
                };
                runs.push((name, EvalReport::load_csv(&path)?));
            }
            let cmp = eval::compare(&runs)?;
            std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            let table = cmp.to_table();
            write(&out.join("comparison.txt"), &table)?;
            write(&out.join("comparison.csv"), &cmp.to_csv()?)?;
            write(&out.join("map_vs_snr.svg"), &cmp.to_svg())?;
            write_config(&cfg, &out.join("run_config.toml"))?;
            print!("{table}");
        }
    }
    Ok(())
}

/// `baseline_seed3.csv` and `baseline-seed3.csv` both name `baseline`.
fn model_name(path: &Path) -> String {
    let stem = path.file_stem().map(|s| s.to_string_lossy().to_string()).unwrap_or_default();
    for sep in ["_seed", "-seed"] {
        if let Some(i) = stem.rfind(sep) {
            let tail = &stem[i + sep.len()..];
            if !tail.is_empty() && tail.chars().all(|c| c.is_ascii_digit()) {
                return stem[..i].to_string();
            }
        }
    }
    stem
}

fn corpus_line(c: &Corpus) -> String {
    format!(
        "train {} utterances, test pool {}, enrollment {}, embedder pool {}, {} fine-tune and {} test mixtures",
        c.train_pool.len(),
        c.test_pool.len(),
        c.enroll.len(),
        c.embedder_pool.len(),
        c.finetune.len(),
        c.test.len()
    )
}

fn load_embedder(path: &Path) -> pvad::Result<Dvector<f32>> {
    Dvector::from_container(&TensorContainer::load(path)?)
}

fn load_profiles(path: &Path) -> pvad::Result<BTreeMap<String, EnrollmentProfile>> {
    profiles_from_container(&TensorContainer::load(path)?)
}

fn stamp(c: &mut TensorContainer, cfg: &RunConfig) -> pvad::Result<()> {
    c.set_attr("seed", cfg.seed.to_string());
    c.set_attr("config", cfg.to_toml()?);
    Ok(())
}

fn create_parent(path: &Path) -> pvad::Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => std::fs::create_dir_all(p).map_err(|e| Error::io(p, e)),
        _ => Ok(()),
    }
}

fn save_container(c: &TensorContainer, path: &Path) -> pvad::Result<()> {
    create_parent(path)?;
    c.save(path)
}

fn write(path: &Path, text: &str) -> pvad::Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// `model.pvtc` -> `model.pvtc.run.toml`
fn sidecar(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".run.toml");
    PathBuf::from(s)
}

fn write_config(cfg: &RunConfig, path: &Path) -> pvad::Result<()> {
    create_parent(path)?;
    cfg.save(path)
}
