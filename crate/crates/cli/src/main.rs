use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};
use slidereg::bench::{
    self, demo_momentum, gen_rectangle, gen_wheel, load_image, magnitude_image, max_displacement_gradient,
    min_direction_cosine, register_to_dir, run_experiment, sign_flip_across_line, DemoKind, ExperimentSpec,
};
use slidereg::geometry::io::{read_landmarks, read_map_json, write_landmarks, write_map_json, write_pgm};
use slidereg::nonsmooth::{run_scenario, Scenario};
use slidereg::registration::RegistrationConfig;
use slidereg::Error;

#[derive(Parser)]
#[command(name = "slidereg", version, about = "Sliding-motion image registration")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Shape {
    Rectangle,
    Wheel,
}

#[derive(Clone, Copy, ValueEnum)]
enum Demo {
    Fig1a,
    Fig1b,
    Fig1c,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic sliding pair with its ground-truth maps.
    Synth {
        shape: Shape,
        #[arg(long, default_value_t = 64)]
        size: usize,
        /// Rectangle: horizontal shift of each half in pixels.
        #[arg(long, default_value_t = 5.0)]
        shift: f64,
        /// Wheel: rotation angle in degrees.
        #[arg(long, default_value_t = 5.0)]
        angle: f64,
        /// Render binary images without the 1-px anti-aliasing blur.
        #[arg(long)]
        no_blur: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Register a template onto a reference image.
    Register {
        #[arg(long)]
        template: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        /// Registration config (JSON).
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Integrate a single momentum and write the deformed grid.
    Demo {
        kind: Demo,
        #[arg(long, default_value_t = 3.0)]
        magnitude: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Target registration error of landmark pairs.
    Tre {
        #[arg(long)]
        ref_lms: PathBuf,
        #[arg(long)]
        tpl_lms: PathBuf,
        /// Comma-separated voxel spacing in landmark axis order.
        #[arg(long, value_delimiter = ',', required = true)]
        spacing: Vec<f64>,
        /// Reference-to-template map (JSON); identity when omitted.
        #[arg(long)]
        map: Option<PathBuf>,
        /// Index base of the landmark files.
        #[arg(long, default_value_t = 0)]
        index_base: u8,
    },
    /// Compute a fundamental matrix for a switching scenario and check it.
    NonsmoothCheck {
        #[arg(long)]
        scenario: PathBuf,
    },
    /// Run an experiment spec file.
    Run {
        #[arg(long)]
        experiment: PathBuf,
        /// Allow uncropped 3D DIR-Lab registration.
        #[arg(long)]
        full3d: bool,
    },
}

enum Failure {
    Usage(String),
    Numerical(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_numerical() {
            Failure::Numerical(e.to_string())
        } else {
            Failure::Usage(e.to_string())
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn create_dir(p: &Path) -> Result<(), Failure> {
    fs::create_dir_all(p).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))
}

fn synth(shape: Shape, size: usize, shift: f64, angle: f64, blur: bool, out: &Path) -> Result<Value, Failure> {
    let pair = match shape {
        Shape::Rectangle => gen_rectangle(size, shift, blur)?,
        Shape::Wheel => gen_wheel(size, angle, blur)?,
    };
    create_dir(out)?;
    write_pgm(&pair.template, out.join("template.pgm"))?;
    write_pgm(&pair.reference, out.join("reference.pgm"))?;
    write_map_json(&pair.forward, out.join("forward_map.json"))?;
    write_map_json(&pair.inverse, out.join("inverse_map.json"))?;
    if let (Some(t), Some(r)) = (&pair.template_landmarks, &pair.reference_landmarks) {
        write_landmarks(t, out.join("template_landmarks.txt"))?;
        write_landmarks(r, out.join("reference_landmarks.txt"))?;
    }
    Ok(json!({
        "ssd": slidereg::registration::ssd(&pair.template, &pair.reference)?,
        "out": out,
    }))
}

fn demo(kind: Demo, magnitude: f64, out: &Path) -> Result<Value, Failure> {
    let kind = match kind {
        Demo::Fig1a => DemoKind::Fig1a,
        Demo::Fig1b => DemoKind::Fig1b,
        Demo::Fig1c => DemoKind::Fig1c,
    };
    let d = demo_momentum(kind, magnitude)?;
    create_dir(out)?;
    write_pgm(&d.grid_image, out.join("grid.pgm"))?;
    let fwd = d.flow.forward();
    let (mag, per_level) = magnitude_image(fwd)?;
    write_pgm(&mag, out.join("magnitude.pgm"))?;
    let report = json!({
        "kind": kind,
        "momentum": d.momentum,
        "derivative_axis": d.axis,
        "direction_cosine_min": min_direction_cosine(fwd, &d.momentum, 1e-3),
        "sign_flip": sign_flip_across_line(fwd, 0, d.center).ok(),
        "max_displacement_gradient": max_displacement_gradient(fwd),
        "magnitude_per_level": per_level,
    });
    fs::write(out.join("report.json"), serde_json::to_string_pretty(&report).expect("json value"))
        .map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(report)
}

fn execute(cmd: Cmd) -> Result<Value, Failure> {
    match cmd {
        Cmd::Synth {
            shape,
            size,
            shift,
            angle,
            no_blur,
            out,
        } => synth(shape, size, shift, angle, !no_blur, &out),
        Cmd::Register {
            template,
            reference,
            config,
            out,
        } => {
            let cfg: RegistrationConfig = read_json(&config)?;
            let t = load_image(&template)?;
            let r = load_image(&reference)?;
            Ok(serde_json::to_value(register_to_dir(&t, &r, &cfg, &out)?).expect("report serializes"))
        }
        Cmd::Demo { kind, magnitude, out } => demo(kind, magnitude, &out),
        Cmd::Tre {
            ref_lms,
            tpl_lms,
            spacing,
            map,
            index_base,
        } => {
            let map = map.map(read_map_json).transpose()?;
            let dims = map.as_ref().map(|m| m.geometry().dims().to_vec());
            let r = read_landmarks(&ref_lms, index_base, dims.as_deref())?;
            let t = read_landmarks(&tpl_lms, index_base, dims.as_deref())?;
            let v = bench::tre(&r, &t, &spacing, map.as_ref())?;
            Ok(json!({ "tre_mm": v, "count": r.len() }))
        }
        Cmd::NonsmoothCheck { scenario } => {
            let sc: Scenario = read_json(&scenario)?;
            let report = run_scenario(&sc)?;
            let v = serde_json::to_value(&report).expect("report serializes");
            if report.pass {
                Ok(v)
            } else {
                println!("{}", serde_json::to_string_pretty(&v).expect("json value"));
                Err(Failure::Numerical("fundamental matrix outside tolerance".into()))
            }
        }
        Cmd::Run { experiment, full3d } => {
            let mut spec: ExperimentSpec = read_json(&experiment)?;
            spec.full3d |= full3d;
            Ok(serde_json::to_value(run_experiment(&spec)?).expect("report serializes"))
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli.cmd) {
        Ok(v) => {
            println!("{}", serde_json::to_string_pretty(&v).expect("json value"));
            ExitCode::SUCCESS
        }
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Numerical(m)) => {
            eprintln!("numerical failure: {m}");
            ExitCode::from(2)
        }
    }
}
