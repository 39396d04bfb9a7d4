use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use kerneltn::data::DataSpec;
use kerneltn::eval::evaluate;
use kerneltn::ktnz::{load_model, save_model};
use kerneltn::model::{toy_with_input, ModelSpec};
use kerneltn::sweep::{retrain_after_truncation, run_sweep, truncate_layer, write_csv, write_rebound_csv, SweepConfig};
use kerneltn::train::{train_toy, TrainOptions};
use kerneltn_core::costmodel::{tucker_conv_costs, ConvShape, PUBLISHED_MEMORY_CR, PUBLISHED_SPEEDUPS};
use kerneltn_core::decomp::{tt_reconstruct, tt_svd, Ranks, DEFAULT_TT_ORDER};
use kerneltn_core::trunc::{entanglement_entropy, norm_loss_pct, spectrum, Bipartition, Cut};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
#[command(name = "kerneltn", version, about = "Correlation truncation of CNN kernels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the singular spectrum and entanglement entropy of a kernel across a cut.
    Spectrum {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        layer: String,
        /// Modes on one side of the cut, e.g. OUT or OUT,KW.
        #[arg(long)]
        cut: Bipartition,
    },
    /// Keep the largest singular values of one kernel across a cut.
    Truncate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        layer: String,
        #[arg(long)]
        cut: Bipartition,
        #[arg(long)]
        keep: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Replace one kernel by its rank-R CP approximation.
    Cp {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        layer: String,
        #[arg(long)]
        rank: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Replace one kernel by a tensor train with capped bond dimensions.
    Tt {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        layer: String,
        /// Three bond caps, e.g. 4,8,3.
        #[arg(long, value_parser = usize_list::<3>)]
        bonds: [usize; 3],
        #[arg(long)]
        out: PathBuf,
    },
    /// Dense versus Tucker convolution cost and memory compression.
    Cost {
        /// X,Y,Cin,Cout
        #[arg(long, value_parser = usize_list::<4>)]
        shape: [usize; 4],
        /// Tucker ranks for KH,KW,IN,OUT.
        #[arg(long, value_parser = usize_list::<4>)]
        ranks: [usize; 4],
        #[arg(long)]
        hout: usize,
        #[arg(long)]
        wout: usize,
        /// Also print the AlexNet-sized example table next to the published figures.
        #[arg(long = "paper-table")]
        example_table: bool,
    },
    /// Truncation sweep described by a TOML config; writes a CSV.
    Sweep {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// synth:N,CLASSES,SEED or a CIFAR-10 binary file, optionally with @train or @val.
        #[arg(long)]
        data: DataSpec,
        #[arg(long)]
        csv: PathBuf,
    },
    /// Truncate at the most aggressive point of each range, then retrain.
    Rebound {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Training data.
        #[arg(long)]
        data: DataSpec,
        /// Evaluation data; defaults to --data.
        #[arg(long)]
        val: Option<DataSpec>,
        #[arg(long)]
        epochs: usize,
        #[arg(long, default_value_t = 0.05)]
        lr: f64,
        #[arg(long, default_value_t = 16)]
        batch: usize,
        #[arg(long)]
        csv: PathBuf,
    },
    /// Train the toy CNN.
    Train {
        #[arg(long, default_value = "toy")]
        arch: String,
        #[arg(long)]
        data: DataSpec,
        /// Report accuracy on this data after each epoch.
        #[arg(long)]
        val: Option<DataSpec>,
        #[arg(long)]
        epochs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.05)]
        lr: f64,
        #[arg(long, default_value_t = 16)]
        batch: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Top-1 and top-5 accuracy of a model.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: DataSpec,
    },
}

/// Exactly `N` comma-separated integers.
fn usize_list<const N: usize>(s: &str) -> Result<[usize; N], String> {
    let v = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("'{p}': {e}")))
        .collect::<Result<Vec<_>, _>>()?;
    v.try_into().map_err(|v: Vec<usize>| format!("expected {N} comma-separated values, got {}", v.len()))
}

fn load(path: &Path) -> Result<ModelSpec> {
    load_model(path).with_context(|| format!("loading {}", path.display()))
}

fn save(m: &ModelSpec, path: &Path) -> Result<()> {
    save_model(m, path).with_context(|| format!("writing {}", path.display()))
}

fn config(path: &Path) -> Result<SweepConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.parse().with_context(|| format!("parsing {}", path.display()))
}

fn print_cost(shape: &ConvShape) {
    let e = tucker_conv_costs(shape);
    println!("dense_cost   {}", e.dense_cost);
    println!("cost1        {}", e.cost1);
    println!("cost2        {}", e.cost2);
    println!("cost3        {}", e.cost3);
    println!("tucker_cost  {}", e.tucker_cost);
    println!("speedup      {:.4}", e.speedup);
    println!("memory_cr    {:.4}", e.memory_cr);
    if e.order_assumption_violated {
        eprintln!("warning: Cin <= X, so absorbing IN first is not the cheapest order; costs use the fixed order anyway");
    }
}

fn print_example_table(side: usize) {
    println!();
    println!("3x3 kernel, 256 -> 384 channels, ranks (3,3,chi,chi), {side}x{side} output");
    println!("{:>5} {:>10} {:>13} {:>10} {:>17}", "chi", "memory_cr", "published_cr", "speedup", "published_speedup");
    for ((chi, cr), (_, sp)) in PUBLISHED_MEMORY_CR.iter().zip(PUBLISHED_SPEEDUPS.iter()) {
        let e = tucker_conv_costs(&ConvShape::alexnet_example(*chi, side));
        println!("{chi:>5} {:>10.2} {:>13} {:>10.2} {:>17}", e.memory_cr, cr, e.speedup, sp);
    }
    println!("published speedups are not reproduced by the cost formulas and are shown for reference only");
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Spectrum { model, layer, cut } => {
            let k = load(&model)?.kernel(&layer)?;
            let s = spectrum(&k, &cut)?;
            for v in &s {
                println!("{v}");
            }
            match entanglement_entropy(&s) {
                Ok(e) => eprintln!("entropy {e}"),
                Err(_) => eprintln!("entropy undefined: zero kernel"),
            }
        }
        Command::Truncate { model, layer, cut, keep, out } => {
            let mut m = load(&model)?;
            let r = truncate_layer(&mut m, &layer, &Cut::Bipartition(cut), keep, 0)?;
            save(&m, &out)?;
            println!("{r:#?}");
        }
        Command::Cp { model, layer, rank, seed, out } => {
            let mut m = load(&model)?;
            let r = truncate_layer(&mut m, &layer, &Cut::Cp, rank, seed)?;
            save(&m, &out)?;
            println!("{r:#?}");
        }
        Command::Tt { model, layer, bonds, out } => {
            let mut m = load(&model)?;
            let k = m.kernel(&layer)?;
            let f = tt_svd(&k, Ranks::Fixed(bonds), DEFAULT_TT_ORDER)?;
            let rebuilt = tt_reconstruct(&f)?;
            let loss = norm_loss_pct(k.frobenius_norm(), rebuilt.frobenius_norm());
            m.set_kernel(&layer, rebuilt)?;
            save(&m, &out)?;
            println!("bond_dims {:?}", f.bond_dims);
            println!("norm_loss_pct {loss}");
        }
        Command::Cost { shape, ranks, hout, wout, example_table } => {
            let [x, y, c_in, c_out] = shape;
            let s = ConvShape::new(x, y, c_in, c_out, hout, wout, ranks)?;
            print_cost(&s);
            if example_table {
                print_example_table(50);
            }
        }
        Command::Sweep { model, config: cfg, data, csv } => {
            let m = load(&model)?;
            let cfg = config(&cfg)?;
            let data = data.load()?;
            let rows = run_sweep(&m, &cfg, &data)?;
            let mut out = BufWriter::new(File::create(&csv).with_context(|| format!("creating {}", csv.display()))?);
            write_csv(&rows, &mut out)?;
            out.flush()?;
            eprintln!("wrote {} rows to {}", rows.len(), csv.display());
        }
        Command::Rebound { model, config: cfg, data, val, epochs, lr, batch, csv } => {
            let m = load(&model)?;
            let cfg = config(&cfg)?;
            let train = data.load()?;
            let val = match val {
                Some(v) => v.load()?,
                None => train.clone(),
            };
            let opts = TrainOptions { epochs, lr, batch, seed: cfg.seed };
            let r = retrain_after_truncation(&m, &cfg, &train, &val, &opts)?;
            let mut out = BufWriter::new(File::create(&csv).with_context(|| format!("creating {}", csv.display()))?);
            write_rebound_csv(&r, &mut out)?;
            out.flush()?;
            eprintln!("baseline top1 {}", r.baseline.top1);
            match r.rebound_epoch(0.05) {
                Some(e) => eprintln!("within 5 points of baseline after epoch {e}"),
                None => eprintln!("did not return within 5 points of baseline"),
            }
        }
        Command::Train { arch, data, val, epochs, seed, lr, batch, out } => {
            if arch != "toy" {
                bail!("unknown architecture '{arch}' (only 'toy' is available)");
            }
            let train = data.load()?;
            let val = val.map(|v| v.load()).transpose()?;
            let input = train.image_shape().context("training set is empty")?;
            let template = toy_with_input(input, train.classes, &mut ChaCha8Rng::seed_from_u64(seed));
            let opts = TrainOptions { epochs, lr, batch, seed };
            let stderr = io::stderr();
            let outcome = train_toy(&template, &train, &opts, |epoch, loss, m| {
                let mut line = format!("epoch {epoch} loss {loss:.6}");
                if let Some(v) = &val {
                    if let Ok(e) = evaluate(m, v) {
                        line.push_str(&format!(" val_top1 {:.4} val_top5 {:.4}", e.top1, e.top5));
                    }
                }
                let _ = writeln!(stderr.lock(), "{line}");
            })?;
            save(&outcome.model, &out)?;
        }
        Command::Eval { model, data } => {
            let m = load(&model)?;
            let e = evaluate(&m, &data.load()?)?;
            println!("top1 {}", e.top1);
            println!("top5 {}", e.top5);
            println!("n_samples {}", e.n_samples);
        }
    }
    Ok(())
}
