//! Subcommand implementations.

use crate::{
    BenchArgs, CliError, EncodeArgs, EvalArgs, ExtractArgs, GenerateArgs, InitParamsArgs,
    RestoreArgs, RunConfig,
};
use cpgd_core::codec::{decode_sequence, encode_sequence, CodedStream, FramePlane};
use cpgd_core::cpc::{
    build_schedule, sample, seeded_noise, CpcParams, FrameConditioning, PredictorRegistry,
};
use cpgd_core::cpfp::{
    propagate_sequence, restore as restore_frames, CpfaParams, FramePriors, PropagationMode,
    SequencePriors,
};
use cpgd_core::io::{load_rgb_frames, read_yuv420_luma, write_rgb_frames, RgbFrame};
use cpgd_core::metrics::{bench_alignment_cost, report_rgb, CostReport, MetricReport};
use cpgd_core::priors::{
    augment_dataset, densify_mv, normalize_residual, read_sidecars, write_sidecars,
    PriorDirection, PriorManifest, ResidualMap,
};
use cpgd_core::Tensor;
use serde::Serialize;
use std::ffi::OsString;
use std::fs;
use std::path::Path;

fn base_config(path: Option<&Path>) -> Result<RunConfig, CliError> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn path_string(p: &Path) -> Option<String> {
    Some(p.display().to_string())
}

/// Luma planes from either an RGB frame directory or a raw YUV420 file.
fn load_luma_source(args_input: Option<&Path>, args_yuv: Option<&Path>, width: Option<usize>, height: Option<usize>) -> Result<Vec<FramePlane>, CliError> {
    match (args_input, args_yuv) {
        (Some(dir), None) => Ok(load_rgb_frames(dir)?
            .iter()
            .map(|f| f.to_luma_plane())
            .collect()),
        (None, Some(yuv)) => {
            let (w, h) = match (width, height) {
                (Some(w), Some(h)) => (w, h),
                _ => {
                    return Err(CliError::usage(
                        "--yuv requires --width and --height".to_string(),
                    ))
                }
            };
            Ok(read_yuv420_luma(yuv, w, h)?)
        }
        _ => Err(CliError::usage("exactly one of --input/--yuv is required")),
    }
}

#[derive(Serialize)]
struct FrameStats {
    frame: usize,
    mean_abs_dy: f64,
    mean_abs_dx: f64,
    max_abs_mv: u32,
    mean_residual_energy: f64,
}

#[derive(Serialize)]
struct EncodeReport {
    width: usize,
    height: usize,
    frames: usize,
    stream_bytes: usize,
    per_frame: Vec<FrameStats>,
}

pub fn encode(args: EncodeArgs, json: bool) -> Result<(), CliError> {
    let mut cfg = base_config(args.config.as_deref())?;
    args.overrides.apply(&mut cfg);
    cfg.input = args
        .input
        .as_deref()
        .or(args.yuv.as_deref())
        .and_then(path_string);
    cfg.output = path_string(&args.out);

    let frames = load_luma_source(
        args.input.as_deref(),
        args.yuv.as_deref(),
        args.width,
        args.height,
    )?;
    let stream = encode_sequence(&frames, &cfg.codec())?;
    fs::write(&args.out, stream.as_bytes())
        .map_err(|e| CliError::data(format!("failed to write {}: {e}", args.out.display())))?;

    let mut echo_path = OsString::from(args.out.as_os_str());
    echo_path.push(".config.json");
    cfg.echo_to_file(Path::new(&echo_path))?;

    // decode our own stream for the motion/residual statistics
    let decoded = decode_sequence(&stream)?;
    let mut per_frame = Vec::new();
    for (i, (mv, res)) in decoded.motion.iter().zip(&decoded.residuals).enumerate() {
        let n = mv.vectors().len() as f64;
        let mean_abs_dy = mv.vectors().iter().map(|v| v.dy.unsigned_abs() as f64).sum::<f64>() / n;
        let mean_abs_dx = mv.vectors().iter().map(|v| v.dx.unsigned_abs() as f64).sum::<f64>() / n;
        let max_abs_mv = mv
            .vectors()
            .iter()
            .map(|v| v.dy.unsigned_abs().max(v.dx.unsigned_abs()) as u32)
            .max()
            .unwrap_or(0);
        let q = res.quant() as f64;
        let mean_residual_energy = res
            .values()
            .iter()
            .map(|&v| {
                let r = v as f64 * q;
                r * r
            })
            .sum::<f64>()
            / res.values().len() as f64;
        per_frame.push(FrameStats {
            frame: i + 1,
            mean_abs_dy,
            mean_abs_dx,
            max_abs_mv,
            mean_residual_energy,
        });
    }
    let report = EncodeReport {
        width: frames[0].width(),
        height: frames[0].height(),
        frames: frames.len(),
        stream_bytes: stream.len(),
        per_frame,
    };

    if json {
        println!("{}", serde_json::to_string_pretty(&report).expect("serializes"));
    } else {
        println!(
            "encoded {} frames ({}x{}) into {} bytes",
            report.frames, report.width, report.height, report.stream_bytes
        );
        println!("frame  mean|dy|  mean|dx|  max|v|  residual energy");
        for s in &report.per_frame {
            println!(
                "{:>5}  {:>8.3}  {:>8.3}  {:>6}  {:>15.4}",
                s.frame, s.mean_abs_dy, s.mean_abs_dx, s.max_abs_mv, s.mean_residual_energy
            );
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct ExtractReport {
    frames: usize,
    width: usize,
    height: usize,
    directions: Vec<String>,
    sidecar_files: usize,
}

pub fn extract(args: ExtractArgs, json: bool) -> Result<(), CliError> {
    let mut cfg = base_config(args.config.as_deref())?;
    args.overrides.apply(&mut cfg);
    cfg.output = path_string(&args.out);

    let report = match (&args.stream, &args.input) {
        (Some(stream_path), None) => {
            cfg.input = path_string(stream_path);
            let bytes = fs::read(stream_path).map_err(|e| {
                CliError::data(format!("failed to read {}: {e}", stream_path.display()))
            })?;
            let decoded = decode_sequence(&CodedStream::from_bytes(bytes))?;
            // the stream knows its own codec parameters
            cfg.block_size = decoded.config.block_size;
            cfg.search_radius = decoded.config.search_radius;
            cfg.quant = decoded.config.quant;
            cfg.rle = decoded.config.rle;

            fs::create_dir_all(&args.out).map_err(|e| {
                CliError::data(format!("failed to create {}: {e}", args.out.display()))
            })?;
            let (w, h) = (decoded.frames[0].width(), decoded.frames[0].height());
            let bs = decoded.config.block_size as usize;
            // frame 0 has no inter data: zero priors by convention
            let zero_grid = cpgd_core::codec::MvGrid::zeros_for(w, h, bs);
            write_sidecars(
                &args.out,
                0,
                PriorDirection::Forward,
                &zero_grid,
                &ResidualMap::zeros(h, w),
            )?;
            for (t, (mv, res)) in decoded.motion.iter().zip(&decoded.residuals).enumerate() {
                write_sidecars(
                    &args.out,
                    t + 1,
                    PriorDirection::Forward,
                    mv,
                    &normalize_residual(res),
                )?;
            }
            let manifest = PriorManifest {
                frame_count: decoded.frames.len(),
                width: w,
                height: h,
                block_size: decoded.config.block_size,
                search_radius: decoded.config.search_radius,
                quant: decoded.config.quant,
            };
            manifest.write(&args.out)?;
            ExtractReport {
                frames: decoded.frames.len(),
                width: w,
                height: h,
                directions: vec!["forward".into()],
                sidecar_files: 2 * decoded.frames.len(),
            }
        }
        (None, Some(input_dir)) => {
            cfg.input = path_string(input_dir);
            let frames: Vec<FramePlane> = load_rgb_frames(input_dir)?
                .iter()
                .map(|f| f.to_luma_plane())
                .collect();
            let manifest = augment_dataset(&frames, &cfg.codec(), &args.out)?;
            ExtractReport {
                frames: manifest.frame_count,
                width: manifest.width,
                height: manifest.height,
                directions: vec!["forward".into(), "backward".into()],
                sidecar_files: 4 * manifest.frame_count,
            }
        }
        _ => return Err(CliError::usage("exactly one of --stream/--input is required")),
    };

    cfg.echo_into_dir(&args.out)?;

    if json {
        println!("{}", serde_json::to_string_pretty(&report).expect("serializes"));
    } else {
        println!(
            "extracted priors for {} frames ({}x{}), directions: {}, {} sidecar files",
            report.frames,
            report.width,
            report.height,
            report.directions.join("+"),
            report.sidecar_files
        );
    }
    Ok(())
}

/// Load one direction of sidecars for frames 0..count, densifying motion
/// grids to pixel resolution.
fn load_priors(
    dir: &Path,
    count: usize,
    width: usize,
    height: usize,
    direction: PriorDirection,
) -> Result<Vec<FramePriors>, CliError> {
    (0..count)
        .map(|t| {
            let (grid, residual) = read_sidecars(dir, t, direction)?;
            let motion = densify_mv(&grid, width, height)?;
            Ok(FramePriors { motion, residual })
        })
        .collect()
}

pub fn restore(args: RestoreArgs, json: bool) -> Result<(), CliError> {
    let mut cfg = base_config(args.config.as_deref())?;
    if let Some(mode) = &args.mode {
        cfg.mode = mode.clone();
    }
    cfg.input = path_string(&args.input);
    cfg.output = path_string(&args.out);
    let mode = PropagationMode::parse(&cfg.mode)
        .ok_or_else(|| CliError::usage(format!("invalid mode {:?}", cfg.mode)))?;

    let rgb = load_rgb_frames(&args.input)?;
    let (w, h) = (rgb[0].width(), rgb[0].height());
    if let Ok(manifest) = PriorManifest::read(&args.priors) {
        if manifest.width != w || manifest.height != h || manifest.frame_count != rgb.len() {
            return Err(CliError::data(format!(
                "prior manifest describes {} frames of {}x{}, input is {} frames of {w}x{h}",
                manifest.frame_count, manifest.width, manifest.height, rgb.len()
            )));
        }
    }
    let frames: Vec<Tensor> = rgb.iter().map(|f| f.to_tensor()).collect();

    let forward = load_priors(&args.priors, rgb.len(), w, h, PriorDirection::Forward)?;
    let backward = match mode {
        PropagationMode::Forward => None,
        PropagationMode::Bidirectional => Some(load_priors(
            &args.priors,
            rgb.len(),
            w,
            h,
            PriorDirection::Backward,
        )?),
    };
    let priors = SequencePriors { forward, backward };

    let params = CpfaParams::read_file(&args.params)?;
    let features = propagate_sequence(&frames, &priors, &params, mode)?;
    let restored = restore_frames(&frames, &features, &params)?;
    let restored_rgb: Vec<RgbFrame> = restored
        .iter()
        .map(RgbFrame::from_tensor)
        .collect::<Result<_, _>>()?;
    write_rgb_frames(&args.out, &restored_rgb)?;
    cfg.echo_into_dir(&args.out)?;

    let metrics = match &args.reference {
        Some(reference) => {
            let reference_rgb = load_rgb_frames(reference)?;
            let report = report_rgb(&restored_rgb, &reference_rgb)?;
            let path = args.out.join("report.json");
            fs::write(&path, serde_json::to_string_pretty(&report).expect("serializes"))
                .map_err(|e| CliError::data(format!("failed to write {}: {e}", path.display())))?;
            Some(report)
        }
        None => None,
    };

    if json {
        #[derive(Serialize)]
        struct RestoreReport<'a> {
            frames: usize,
            mode: &'a str,
            metrics: &'a Option<MetricReport>,
        }
        let report = RestoreReport {
            frames: restored_rgb.len(),
            mode: mode.as_str(),
            metrics: &metrics,
        };
        println!("{}", serde_json::to_string_pretty(&report).expect("serializes"));
    } else {
        println!(
            "restored {} frames ({} mode) into {}",
            restored_rgb.len(),
            mode.as_str(),
            args.out.display()
        );
        if let Some(m) = &metrics {
            print_metric_table(m);
        }
    }
    Ok(())
}

fn parse_prompt_tokens(raw: Option<&str>) -> Result<Vec<u32>, CliError> {
    match raw {
        None => Ok(Vec::new()),
        Some(s) if s.trim().is_empty() => Ok(Vec::new()),
        Some(s) => s
            .split(',')
            .map(|tok| {
                tok.trim()
                    .parse::<u32>()
                    .map_err(|_| CliError::usage(format!("invalid prompt token {tok:?}")))
            })
            .collect(),
    }
}

pub fn generate(args: GenerateArgs, json: bool) -> Result<(), CliError> {
    let mut cfg = base_config(args.config.as_deref())?;
    if let Some(v) = args.steps {
        cfg.steps = v;
    }
    if let Some(v) = args.t_train {
        cfg.t_train = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.latent_factor {
        cfg.latent_factor = v;
    }
    if let Some(v) = &args.predictor {
        cfg.predictor = v.clone();
    }
    cfg.input = path_string(&args.stage1);
    cfg.output = path_string(&args.out);
    let prompt = parse_prompt_tokens(args.prompt_tokens.as_deref())?;

    let stage1 = load_rgb_frames(&args.stage1)?;
    let (w, h) = (stage1[0].width(), stage1[0].height());
    let forward = load_priors(&args.priors, stage1.len(), w, h, PriorDirection::Forward)?;

    let params = CpcParams::read_file(&args.params)?;
    let registry = PredictorRegistry::builtin();
    let predictor = registry.create(&cfg.predictor, &params)?;
    let schedule = build_schedule(cfg.t_train, cfg.steps)?;

    let mut generated = Vec::with_capacity(stage1.len());
    for (t, frame) in stage1.iter().enumerate() {
        let stage1_tensor = frame.to_tensor();
        let cond = FrameConditioning {
            stage1: &stage1_tensor,
            motion: &forward[t].motion,
            residual: &forward[t].residual,
            prompt: &prompt,
        };
        // one seed stream per frame, derived deterministically
        let frame_seed = cfg.seed ^ (t as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let y_init = seeded_noise(&[3, h, w], frame_seed);
        let y0 = sample(
            y_init,
            &cond,
            &schedule,
            predictor.as_ref(),
            &params,
            cfg.latent_factor,
            frame_seed.wrapping_add(1),
        )?;
        generated.push(RgbFrame::from_tensor(&y0)?);
    }
    write_rgb_frames(&args.out, &generated)?;
    cfg.echo_into_dir(&args.out)?;

    if json {
        #[derive(Serialize)]
        struct GenerateReport<'a> {
            frames: usize,
            steps: usize,
            t_train: usize,
            seed: u64,
            predictor: &'a str,
            latent_factor: usize,
        }
        let report = GenerateReport {
            frames: generated.len(),
            steps: cfg.steps,
            t_train: cfg.t_train,
            seed: cfg.seed,
            predictor: &cfg.predictor,
            latent_factor: cfg.latent_factor,
        };
        println!("{}", serde_json::to_string_pretty(&report).expect("serializes"));
    } else {
        println!(
            "sampled {} frames over {} steps (seed {}, predictor {}) into {}",
            generated.len(),
            cfg.steps,
            cfg.seed,
            cfg.predictor,
            args.out.display()
        );
    }
    Ok(())
}

fn print_metric_table(report: &MetricReport) {
    println!("frame  psnr_db    ssim");
    for (i, (p, s)) in report.psnr_db.iter().zip(&report.ssim).enumerate() {
        println!("{i:>5}  {p:>8.4}  {s:>7.5}");
    }
    println!(" mean  {:>8.4}  {:>7.5}", report.mean_psnr_db, report.mean_ssim);
}

pub fn eval(args: EvalArgs, json: bool) -> Result<(), CliError> {
    let a = load_rgb_frames(&args.a)?;
    let b = load_rgb_frames(&args.b)?;
    let report = report_rgb(&a, &b)?;
    if let Some(path) = &args.report {
        fs::write(path, serde_json::to_string_pretty(&report).expect("serializes"))
            .map_err(|e| CliError::data(format!("failed to write {}: {e}", path.display())))?;
    }
    if json {
        println!("{}", serde_json::to_string_pretty(&report).expect("serializes"));
    } else {
        print_metric_table(&report);
    }
    Ok(())
}

pub fn bench(args: BenchArgs, json: bool) -> Result<(), CliError> {
    let mut cfg = base_config(args.config.as_deref())?;
    args.overrides.apply(&mut cfg);
    let frames: Vec<FramePlane> = load_rgb_frames(&args.input)?
        .iter()
        .map(|f| f.to_luma_plane())
        .collect();
    let report: CostReport = bench_alignment_cost(&frames, &cfg.codec())?;
    if let Some(path) = &args.report {
        fs::write(path, serde_json::to_string_pretty(&report).expect("serializes"))
            .map_err(|e| CliError::data(format!("failed to write {}: {e}", path.display())))?;
    }
    if json {
        println!("{}", serde_json::to_string_pretty(&report).expect("serializes"));
    } else {
        println!("sad ops (reused)   {:>14}", report.sad_ops_reused);
        println!("sad ops (search)   {:>14}", report.sad_ops_search);
        println!("wall ms (reused)   {:>14.3}", report.wall_ms_reused);
        println!("wall ms (search)   {:>14.3}", report.wall_ms_search);
        println!("grids identical    {:>14}", report.grids_identical);
    }
    Ok(())
}

pub fn init_params(args: InitParamsArgs, json: bool) -> Result<(), CliError> {
    let cfg = RunConfig::default();
    let seed = args.seed.unwrap_or(cfg.seed);
    match args.kind.as_str() {
        "cpfp" => {
            let channels = args.channels.unwrap_or(cfg.channels);
            let params = if args.zero_init {
                CpfaParams::seeded_zero_init(channels, seed)
            } else {
                CpfaParams::seeded(channels, seed)
            };
            params.write_file(&args.out)?;
        }
        "cpc" => {
            let dim = args.dim.unwrap_or(16);
            let heads = args.heads.unwrap_or(1);
            let params = if args.zero_init {
                CpcParams::seeded_zero_init(dim, heads, seed)
            } else {
                CpcParams::seeded(dim, heads, seed)
            };
            params.write_file(&args.out)?;
        }
        other => {
            return Err(CliError::usage(format!(
                "unknown parameter kind {other:?}; use \"cpfp\" or \"cpc\""
            )))
        }
    }
    if json {
        println!(
            "{}",
            serde_json::json!({
                "kind": args.kind,
                "seed": seed,
                "zero_init": args.zero_init,
                "path": args.out.display().to_string(),
            })
        );
    } else {
        println!(
            "wrote {} parameters (seed {seed}, zero_init {}) to {}",
            args.kind,
            args.zero_init,
            args.out.display()
        );
    }
    Ok(())
}

