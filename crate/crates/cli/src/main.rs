//! `oeenc`: streaming diarization, DER scoring, complexity benchmark and
//! synthetic data generation.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use oeenc_core::eval::{der, DerBreakdown};
use oeenc_core::io::rttm::records_to_segments;
use oeenc_core::io::sim::SAMPLE_RATE;
use oeenc_core::io::weights::{load_weights_file, random_weights};
use oeenc_core::io::{parse_rttm, read_wav, simulate_conversation, write_rttm, write_wav, SimConfig};
use oeenc_core::stream::{BufferSize, Session, StepReport, StreamConfig};
use oeenc_core::{Error, Model, ModelConfig};

/// Samples handed to the session per call when streaming a file.
const PUSH_BLOCK: usize = 4000;

#[derive(Debug, Parser)]
#[command(name = "oeenc", version, about = "Streaming end-to-end speaker diarization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Diarize a mono 8 kHz WAV file into RTTM.
    Diarize(DiarizeArgs),
    /// Score a hypothesis RTTM against a reference RTTM.
    Score(ScoreArgs),
    /// Report per-step operation counts and wall times.
    Bench(BenchArgs),
    /// Generate a synthetic conversation and its reference RTTM.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args)]
struct DiarizeArgs {
    #[arg(long)]
    audio: PathBuf,
    #[arg(long)]
    weights: PathBuf,
    /// Seconds between emissions.
    #[arg(long)]
    latency: f64,
    /// Context per chunk in seconds, or `inf`.
    #[arg(long, value_parser = parse_buffer)]
    buffer: BufferSize,
    #[arg(long)]
    out: PathBuf,
    /// Defaults to the audio file stem.
    #[arg(long)]
    file_id: Option<String>,
}

#[derive(Debug, Args)]
struct ScoreArgs {
    #[arg(long = "ref")]
    reference: PathBuf,
    #[arg(long)]
    hyp: PathBuf,
    #[arg(long, default_value_t = 0.25)]
    collar: f64,
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("source").required(true).args(["weights", "random_seed"])))]
struct BenchArgs {
    #[arg(long)]
    latency: f64,
    /// Context per chunk in seconds, or `inf`.
    #[arg(long, value_parser = parse_buffer)]
    buffer: BufferSize,
    /// Seconds of synthetic audio to stream.
    #[arg(long)]
    duration: f64,
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long)]
    random_seed: Option<u64>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long)]
    speakers: usize,
    #[arg(long)]
    duration: f64,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out_audio: PathBuf,
    #[arg(long)]
    out_rttm: PathBuf,
    #[arg(long, default_value_t = SimConfig::default().mean_turn)]
    mean_turn: f64,
    #[arg(long, default_value_t = SimConfig::default().overlap_ratio)]
    overlap_ratio: f64,
    #[arg(long, default_value_t = SimConfig::default().silence_ratio)]
    silence_ratio: f64,
}

fn parse_buffer(s: &str) -> std::result::Result<BufferSize, String> {
    match s {
        "inf" | "infinity" | "unbounded" => Ok(BufferSize::Unbounded),
        _ => s
            .parse::<f64>()
            .map(BufferSize::Seconds)
            .map_err(|_| format!("`{s}` is neither a number of seconds nor `inf`")),
    }
}

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "audio".to_string())
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source }.into())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|source| Error::Io { path: path.to_path_buf(), source }.into())
}

fn load_model(path: &Path) -> Result<Arc<Model>> {
    let bundle = load_weights_file(path)?;
    Ok(Arc::new(Model::from_bundle(&bundle).with_context(|| format!("loading {}", path.display()))?))
}

fn stream_config(model: &ModelConfig, latency: f64, buffer: BufferSize) -> StreamConfig {
    StreamConfig { model: model.clone(), ..StreamConfig::new(latency, buffer) }
}

fn run_session(model: Arc<Model>, cfg: StreamConfig, audio: &[f32]) -> Result<Session> {
    let mut session = Session::new(model, cfg)?;
    for block in audio.chunks(PUSH_BLOCK) {
        session.push_audio(block)?;
    }
    session.finalize()?;
    Ok(session)
}

fn cmd_diarize(args: DiarizeArgs) -> Result<()> {
    let started = Instant::now();
    let model = load_model(&args.weights)?;
    let cfg = stream_config(&model.config, args.latency, args.buffer);
    cfg.validate()?;
    let audio = read_wav(&args.audio, cfg.features.sample_rate)?;
    let session = run_session(model, cfg, &audio)?;

    let file_id = args.file_id.unwrap_or_else(|| file_stem(&args.audio));
    let diar = session.emitted();
    write_text(&args.out, &write_rttm(&diar.to_rttm_records(&file_id)))?;
    println!(
        "speakers={} frames={} steps={} elapsed={:.3}s",
        diar.speakers(),
        diar.frames(),
        session.steps().len(),
        started.elapsed().as_secs_f64()
    );
    Ok(())
}

fn cmd_score(args: ScoreArgs) -> Result<()> {
    let reference = parse_rttm(&read_text(&args.reference)?).with_context(|| args.reference.display().to_string())?;
    let hyp = parse_rttm(&read_text(&args.hyp)?).with_context(|| args.hyp.display().to_string())?;

    let mut by_file: BTreeMap<&str, (Vec<_>, Vec<_>)> = BTreeMap::new();
    for r in &reference {
        by_file.entry(&r.file_id).or_default().0.push(r);
    }
    for h in &hyp {
        match by_file.get_mut(h.file_id.as_str()) {
            Some(entry) => entry.1.push(h),
            None => eprintln!("warning: hypothesis file `{}` has no reference; ignored", h.file_id),
        }
    }
    if by_file.is_empty() {
        return Err(Error::EmptyReference.into());
    }
    let parts = by_file
        .values()
        .map(|(r, h)| der(&records_to_segments(r.iter().copied()), &records_to_segments(h.iter().copied()), args.collar))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let total = DerBreakdown::accumulate(&parts)?;
    let pct = |x: f64| 100.0 * x / total.scored_speech;
    println!(
        "DER={:.2} MISS={:.2} FA={:.2} CONF={:.2}",
        100.0 * total.der,
        pct(total.miss),
        pct(total.false_alarm),
        pct(total.confusion)
    );
    Ok(())
}

/// `CONSTANT` when, among steps that ran on a full buffer, op counts are
/// identical for every centroid count. An unbounded buffer is never full.
fn bench_verdict(steps: &[StepReport], buffer_frames: Option<usize>) -> &'static str {
    let mut by_c: BTreeMap<usize, u64> = BTreeMap::new();
    for s in steps {
        let steady = buffer_frames.is_some_and(|b| s.context_frames == b);
        if !steady {
            if buffer_frames.is_none() && steps.len() > 1 {
                return "GROWING";
            }
            continue;
        }
        let ops = s.ops.total();
        if *by_c.entry(s.centroids_before).or_insert(ops) != ops {
            return "GROWING";
        }
    }
    "CONSTANT"
}

fn cmd_bench(args: BenchArgs) -> Result<()> {
    let model = match (&args.weights, args.random_seed) {
        (Some(path), _) => load_model(path)?,
        (None, Some(seed)) => {
            let cfg = ModelConfig::default();
            Arc::new(Model::from_bundle(&random_weights(&cfg, seed)?)?)
        }
        (None, None) => unreachable!("clap enforces the source group"),
    };
    let cfg = stream_config(&model.config, args.latency, args.buffer);
    cfg.validate()?;
    let sim = SimConfig {
        duration: args.duration,
        seed: args.random_seed.unwrap_or(0),
        ..SimConfig::default()
    };
    let conv = simulate_conversation(&sim)?;
    let session = run_session(model, cfg, &conv.audio)?;

    println!("step ops context centroids wall_ms");
    for s in session.steps() {
        println!(
            "{} {} {} {} {:.3}",
            s.index,
            s.ops.total(),
            s.context_frames,
            s.centroids_before,
            s.elapsed.as_secs_f64() * 1e3
        );
    }
    println!("{}", bench_verdict(session.steps(), session.buffer_frames()));
    Ok(())
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    let cfg = SimConfig {
        n_speakers: args.speakers,
        duration: args.duration,
        mean_turn: args.mean_turn,
        overlap_ratio: args.overlap_ratio,
        silence_ratio: args.silence_ratio,
        seed: args.seed,
    };
    let conv = simulate_conversation(&cfg)?;
    write_wav(&args.out_audio, &conv.audio, SAMPLE_RATE)?;
    let records = oeenc_core::io::rttm::segments_to_records(&conv.reference, &file_stem(&args.out_audio));
    write_text(&args.out_rttm, &write_rttm(&records))?;
    Ok(())
}

/// Exit code for a failed command: 1 for invalid parameters, 2 for I/O and
/// format problems, 3 for internal contract violations.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|e| e.downcast_ref::<Error>()) {
        Some(Error::Config(_)) => 1,
        Some(Error::Contract(_) | Error::SessionFinalized) => 3,
        Some(_) => 2,
        None => 3,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Diarize(a) => cmd_diarize(a),
        Command::Score(a) => cmd_score(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Simulate(a) => cmd_simulate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
