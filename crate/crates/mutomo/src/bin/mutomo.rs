//! Command line front end for the muon tomography pipeline.

use clap::{Parser, Subcommand};
use mutomo::config::RunConfig;
use mutomo::event::{read_events, write_events_csv};
use mutomo::pipeline::Pipeline;
use mutomo::voxel::read_intensity_volume;
use std::error::Error;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "mutomo", version, about = "Muon scattering tomography workbench")]
struct Cli {
    /// Configuration file of `key = value` lines; defaults apply when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master random seed, overriding any configured value.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads; 0 or absent uses the machine default.
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Run directory for inputs and outputs.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate every configured orientation into event files.
    Simulate,
    /// Depth-of-field reconstruction from the event files.
    ReconDof,
    /// Sinogram binning plus filtered backprojection reconstruction.
    ReconFbp,
    /// Image quality metrics over both reconstructed volumes.
    Metrics,
    /// Reconstruct and measure sparse view subsets and event prefixes.
    Sweep,
    /// Full campaign: simulate, reconstruct, measure, write the manifest.
    Run,
    /// Export one coronal slab of a reconstructed volume as a PGM image.
    Slice {
        /// Intensity volume file to read.
        #[arg(long)]
        volume: PathBuf,
        /// Slab index along the spin axis.
        #[arg(long)]
        slab: usize,
        /// Output image path.
        #[arg(long)]
        image: PathBuf,
    },
    /// Convert a binary event file to the CSV mirror format.
    ExportCsv {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<(), Box<dyn Error>> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = Some(seed);
    }
    if let Some(workers) = cli.workers {
        config.workers = workers;
    }
    if config.workers > 0 {
        rayon::ThreadPoolBuilder::new().num_threads(config.workers).build_global()?;
    }

    let pipeline = Pipeline::new(config, cli.out);
    match cli.command {
        Command::Simulate => {
            let report = pipeline.simulate()?;
            println!(
                "simulated {} views, {} events from {} source muons",
                report.view_files.len(),
                report.total_events,
                report.total_attempts
            );
        }
        Command::ReconDof => {
            let path = pipeline.recon_dof()?;
            println!("wrote {}", path.display());
        }
        Command::ReconFbp => {
            let path = pipeline.recon_fbp()?;
            println!("wrote {}", path.display());
        }
        Command::Metrics => {
            for row in pipeline.metrics()? {
                println!("{}\t{}\t{:.6}", row.route, row.metric, row.value);
            }
        }
        Command::Sweep => {
            let path = pipeline.sweep()?;
            println!("wrote {}", path.display());
        }
        Command::Run => {
            let report = pipeline.run()?;
            println!(
                "simulate {:.1}s, reconstruct {:.1}s",
                report.simulate_seconds, report.recon_seconds
            );
            for row in &report.rows {
                println!("{}\t{}\t{:.6}", row.route, row.metric, row.value);
            }
            println!("manifest {}", report.manifest.display());
        }
        Command::Slice { volume, slab, image } => {
            let data = read_intensity_volume(&volume)?;
            pipeline.export_slab(&data, slab, &image)?;
            println!("wrote {}", image.display());
        }
        Command::ExportCsv { input, output } => {
            let dataset = read_events(&input)?;
            write_events_csv(&output, &dataset)?;
            println!(
                "wrote {} ({} events at {:.4} rad)",
                output.display(),
                dataset.events.len(),
                dataset.orientation
            );
        }
    }
    Ok(())
}
