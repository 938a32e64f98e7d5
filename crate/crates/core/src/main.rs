use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use advspeech::corpus::{generate_corpus, load_corpus, write_corpus};
use advspeech::harness::{
    self, cmd_sweep, cmd_targeted, cmd_train, cmd_transfer, load_panel, render_sweep_svgs, Plan,
};
use advspeech::model::{FeatureConfig, Vocabulary};

#[derive(Parser)]
#[command(name = "advspeech", about = "Adversarial robustness benchmark for toy CTC speech models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment plan (TOML)
    #[arg(long)]
    plan: PathBuf,
    /// Corpus directory
    #[arg(long)]
    corpus: PathBuf,
    /// Output directory (checkpoints, tables, figures)
    #[arg(long)]
    out: PathBuf,
    /// Override the plan's seed
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores)
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic corpus and its manifests
    GenCorpus {
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train the five-entry model panel
    Train(Common),
    /// Untargeted WER-vs-SNR sweep (PGD L2/Linf, Kenansville)
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Save adversarial WAVs with metadata sidecars
        #[arg(long)]
        save_adv: bool,
    },
    /// Targeted table (CW + genetic columns)
    Targeted {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        save_adv: bool,
    },
    /// Cross-model transfer matrix (PGD, CW, SSL)
    Transfer(Common),
    /// Re-render figures from an existing sweep CSV
    Report {
        /// sweep.csv produced by the sweep subcommand
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_plan(path: &PathBuf, seed: Option<u64>) -> Result<Plan, harness::HarnessError> {
    let mut plan = Plan::from_path(path)?;
    if let Some(s) = seed {
        plan.seed = s;
    }
    Ok(plan)
}

fn set_workers(workers: Option<usize>) {
    if let Some(n) = workers {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn run() -> Result<(), Box<dyn std::error::Error>> {
    let cli = Cli::parse();
    match cli.command {
        Command::GenCorpus { plan, corpus, seed } => {
            let plan = load_plan(&plan, seed)?;
            let vocab = Vocabulary::default_toy();
            let feat = FeatureConfig::default();
            let c = generate_corpus(&plan.corpus_config(), &vocab, &feat)?;
            write_corpus(&c, &corpus)?;
            println!("wrote {} train / {} test utterances to {}", c.train.len(), c.test.len(), corpus.display());
        }
        Command::Train(common) => {
            set_workers(common.workers);
            let plan = load_plan(&common.plan, common.seed)?;
            let corpus = load_corpus(&common.corpus)?;
            let panel = cmd_train(&plan, &corpus.train, &common.out)?;
            for (id, model) in &panel.models {
                let wer = harness::clean_wer(model, &corpus.test)?;
                println!("{id}: clean test WER {}", harness::fmt_num(wer));
            }
        }
        Command::Sweep { common, save_adv } => {
            set_workers(common.workers);
            let plan = load_plan(&common.plan, common.seed)?;
            let corpus = load_corpus(&common.corpus)?;
            let panel = load_panel(&common.out)?;
            let csv = cmd_sweep(&plan, &corpus.test, &panel, &common.out, save_adv)?;
            println!("wrote {}", csv.display());
        }
        Command::Targeted { common, save_adv } => {
            set_workers(common.workers);
            let plan = load_plan(&common.plan, common.seed)?;
            let corpus = load_corpus(&common.corpus)?;
            let panel = load_panel(&common.out)?;
            let csv = cmd_targeted(&plan, &corpus.test, &panel, &common.out, save_adv)?;
            println!("wrote {}", csv.display());
        }
        Command::Transfer(common) => {
            set_workers(common.workers);
            let plan = load_plan(&common.plan, common.seed)?;
            let corpus = load_corpus(&common.corpus)?;
            let panel = load_panel(&common.out)?;
            let csv = cmd_transfer(&plan, &corpus.test, &panel, &common.out)?;
            println!("wrote {}", csv.display());
        }
        Command::Report { csv, out } => {
            std::fs::create_dir_all(&out)?;
            for p in render_sweep_svgs(&csv, &out)? {
                println!("wrote {}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
