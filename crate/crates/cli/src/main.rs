//! `grappa-recon`: command-line front end for the reconstruction pipeline.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on data errors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use grappa_core::grappa::{
    grappa_rss_recon, zero_filled_recon, KernelGeometry, DEFAULT_LAMBDA_REL,
};
use grappa_core::io::{
    read_container, read_mask, write_container, write_mask, ContainerObject, Sidecar,
};
use grappa_core::losses::loss_schedule;
use grappa_core::metrics::{Provenance, ReconReport};
use grappa_core::phantom::{simulate_phantom, PhantomParams};
use grappa_core::sampling::{apply_mask, make_mask, SamplingMask};
use grappa_core::tensor::{KSpaceVolume, MagnitudeImage};
use grappa_core::{Error, Result};

#[derive(Parser)]
#[command(
    name = "grappa-recon",
    version,
    about = "Regularized GRAPPA reconstruction of undersampled multi-coil k-space"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a fully sampled multi-coil Shepp-Logan acquisition
    Phantom {
        #[arg(long, default_value_t = 64)]
        ny: usize,
        #[arg(long, default_value_t = 64)]
        nx: usize,
        #[arg(long, default_value_t = 8)]
        coils: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Noise standard deviation per real/imaginary component
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(short, long)]
        output: PathBuf,
        /// Also write the fully sampled RSS reference image here
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Build an equidistant undersampling mask with a random first line
    Mask {
        #[command(flatten)]
        mask: MaskArgs,
        /// Output JSON path (stdout if omitted)
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Zero the lines a mask skips
    ApplyMask {
        #[arg(long = "in")]
        input: PathBuf,
        #[command(flatten)]
        mask: MaskSource,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// GRAPPA interpolation followed by RSS coil combination
    Grappa {
        #[arg(long = "in")]
        input: PathBuf,
        #[command(flatten)]
        mask: MaskSource,
        /// Relative Tikhonov weight
        #[arg(long, default_value_t = DEFAULT_LAMBDA_REL)]
        lambda: f64,
        #[arg(long, default_value_t = 4)]
        ky_taps: usize,
        #[arg(long, default_value_t = 5)]
        kx_taps: usize,
        #[arg(short, long)]
        output: PathBuf,
        /// Also write the calibrated kernel here
        #[arg(long)]
        kernel_out: Option<PathBuf>,
    },
    /// RSS of the zero-filled inverse transform
    ZeroFill {
        #[arg(long = "in")]
        input: PathBuf,
        #[command(flatten)]
        mask: MaskSource,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Compare a reconstruction with a reference image
    Metrics {
        #[arg(long)]
        test: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        /// Dynamic range L (defaults to the reference's)
        #[arg(long)]
        range: Option<f64>,
        /// Report path (stdout if omitted)
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Print the loss-weight schedule
    LossSchedule {
        /// Print the weights for one epoch only
        #[arg(long)]
        epoch: Option<u32>,
    },
    /// Write magnitude images side by side as an 8-bit grayscale PNG
    ExportPng {
        #[arg(long = "in", required = true, num_args = 1..)]
        inputs: Vec<PathBuf>,
        #[arg(short, long)]
        output: PathBuf,
    },
}

#[derive(Args)]
struct MaskArgs {
    #[arg(long)]
    ny: usize,
    #[arg(long)]
    accel: usize,
    /// Fraction of lines in the central ACS block
    #[arg(long, default_value_t = 0.08)]
    acs: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Either a mask file or inline mask parameters (ny taken from the data).
#[derive(Args)]
struct MaskSource {
    #[arg(long, conflicts_with = "accel")]
    mask: Option<PathBuf>,
    #[arg(long, required_unless_present = "mask")]
    accel: Option<usize>,
    #[arg(long, default_value_t = 0.08)]
    acs: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl MaskSource {
    fn resolve(&self, ny: usize) -> Result<SamplingMask> {
        match (&self.mask, self.accel) {
            (Some(path), _) => read_mask(path),
            (None, Some(accel)) => make_mask(ny, accel, self.acs, self.seed),
            (None, None) => Err(Error::InvalidArgument(
                "either --mask or --accel is required".into(),
            )),
        }
    }
}

fn read_kspace(path: &Path) -> Result<(KSpaceVolume, Sidecar)> {
    match read_container(path)? {
        (ContainerObject::KSpace(v), side) => Ok((v, side)),
        (other, _) => Err(Error::InvalidArgument(format!(
            "{} holds a {} container, expected kspace",
            path.display(),
            other.kind().name()
        ))),
    }
}

fn read_magnitude(path: &Path) -> Result<(MagnitudeImage, Sidecar)> {
    match read_container(path)? {
        (ContainerObject::Magnitude(m), side) => Ok((m, side)),
        (other, _) => Err(Error::InvalidArgument(format!(
            "{} holds a {} container, expected magnitude",
            path.display(),
            other.kind().name()
        ))),
    }
}

fn write_text(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn fmt_weights(epoch: u32) -> String {
    let w = loss_schedule(epoch);
    format!(
        "{} {} {} {}",
        w.lambda_1, w.lambda_2, w.lambda_dc, w.lambda_f
    )
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Phantom {
            ny,
            nx,
            coils,
            seed,
            noise,
            output,
            truth,
        } => {
            let params = PhantomParams {
                ny,
                nx,
                ncoils: coils,
                seed,
                noise_sigma: noise,
            };
            let acq = simulate_phantom(params)?;
            let side = Sidecar {
                phantom: Some(params),
                ..Default::default()
            };
            write_container(&output, &ContainerObject::KSpace(acq.kspace), &side)?;
            if let Some(truth) = truth {
                write_container(&truth, &ContainerObject::Magnitude(acq.truth), &side)?;
            }
        }
        Command::Mask { mask, output } => {
            let m = make_mask(mask.ny, mask.accel, mask.acs, mask.seed)?;
            match output {
                Some(path) => write_mask(&path, &m)?,
                None => println!("{}", serde_json::to_string_pretty(&m.params())?),
            }
        }
        Command::ApplyMask {
            input,
            mask,
            output,
        } => {
            let (vol, side) = read_kspace(&input)?;
            let mask = mask.resolve(vol.ny())?;
            let under = apply_mask(&vol, &mask)?;
            let side = Sidecar {
                mask: Some(mask.params()),
                ..side
            };
            write_container(&output, &ContainerObject::KSpace(under), &side)?;
        }
        Command::Grappa {
            input,
            mask,
            lambda,
            ky_taps,
            kx_taps,
            output,
            kernel_out,
        } => {
            let (vol, side) = read_kspace(&input)?;
            let mask = mask.resolve(vol.ny())?;
            let geom = KernelGeometry::new(ky_taps, kx_taps, mask.accel())?;
            let (image, kernel) = grappa_rss_recon(&vol, &mask, geom, lambda)?;
            let side = Sidecar {
                mask: Some(mask.params()),
                lambda_rel: Some(lambda),
                geometry: Some(geom),
                ..side
            };
            write_container(&output, &ContainerObject::Magnitude(image), &side)?;
            if let Some(path) = kernel_out {
                write_container(&path, &ContainerObject::Kernel(kernel), &side)?;
            }
        }
        Command::ZeroFill {
            input,
            mask,
            output,
        } => {
            let (vol, side) = read_kspace(&input)?;
            let mask = mask.resolve(vol.ny())?;
            let image = zero_filled_recon(&vol, &mask)?;
            let side = Sidecar {
                mask: Some(mask.params()),
                ..side
            };
            write_container(&output, &ContainerObject::Magnitude(image), &side)?;
        }
        Command::Metrics {
            test,
            reference,
            range,
            output,
        } => {
            let (test_img, side) = read_magnitude(&test)?;
            let (mut ref_img, _) = read_magnitude(&reference)?;
            if let Some(l) = range {
                ref_img = ref_img.with_dynamic_range(l)?;
            }
            let provenance = Provenance {
                mask_seed: side.mask.map(|m| m.seed),
                accel: side.mask.map(|m| m.accel),
                acs_fraction: side.mask.map(|m| m.acs_fraction),
                lambda_rel: side.lambda_rel,
                geometry: side.geometry,
            };
            let report = ReconReport::evaluate(&test_img, &ref_img, provenance)?;
            write_text(output.as_deref(), &(report.to_json()? + "\n"))?;
        }
        Command::LossSchedule { epoch } => match epoch {
            Some(e) => println!("{}", fmt_weights(e)),
            None => {
                println!("epochs    lambda_1 lambda_2 lambda_dc lambda_f");
                println!("0-29      {}", fmt_weights(0));
                for e in (30..=50).step_by(5) {
                    println!("{e:<9} {}", fmt_weights(e));
                }
                println!("51-100    {}", fmt_weights(51));
                println!("101+      {}", fmt_weights(101));
            }
        },
        Command::ExportPng { inputs, output } => {
            let images = inputs
                .iter()
                .map(|p| read_magnitude(p).map(|(m, _)| m))
                .collect::<Result<Vec<_>>>()?;
            export_png(&images, &output)?;
        }
    }
    Ok(())
}

/// Panels are min-max windowed independently and placed left to right.
fn export_png(images: &[MagnitudeImage], path: &Path) -> Result<()> {
    let height = images.iter().map(|m| m.dims().0).max().unwrap_or(0);
    let width: usize = images.iter().map(|m| m.dims().1).sum();
    let mut canvas = image::GrayImage::new(width as u32, height as u32);
    let mut left = 0;
    for img in images {
        let data = img.data();
        let lo = data.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = if hi > lo { hi - lo } else { 1.0 };
        for ((y, x), &v) in data.indexed_iter() {
            let level = ((v - lo) / span * 255.0).round().clamp(0.0, 255.0) as u8;
            canvas.put_pixel((left + x) as u32, y as u32, image::Luma([level]));
        }
        left += img.dims().1;
    }
    canvas
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("grappa-recon: {e}");
            ExitCode::from(2)
        }
    }
}
