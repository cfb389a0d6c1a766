//! Encode/decode round trips at a ladder rung, either in process or through
//! external commands.

use std::collections::HashMap;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use wait_timeout::ChildExt;

use super::codec::encode_to_budget;
use crate::error::{Error, Result};
use crate::media::{load_frames, write_frames, FrameGeometry, HdrFrame, RawVideo};

/// Frames at rung resolution (10-bit 4:2:0 PQ) and their target rate.
#[derive(Debug, Clone, Copy)]
pub struct TranscodeJob<'a> {
    pub frames: &'a [HdrFrame],
    pub fps: f64,
    pub bitrate_kbps: f64,
    /// Scratch directory private to this job.
    pub work_dir: &'a Path,
}

impl TranscodeJob<'_> {
    pub fn duration_s(&self) -> f64 {
        self.frames.len() as f64 / self.fps
    }
}

#[derive(Debug, Clone)]
pub struct Transcoded {
    pub frames: Vec<HdrFrame>,
    pub achieved_kbps: f64,
    pub width: usize,
    pub height: usize,
}

pub trait Transcoder: Sync {
    /// Recorded in the manifest.
    fn describe(&self) -> String;

    fn transcode(&self, job: &TranscodeJob) -> Result<Transcoded>;
}

/// In-process block-transform codec with rate control; each stored frame is
/// intra coded and the bit budget is `bitrate x duration`.
#[derive(Debug, Clone, Copy, Default)]
pub struct SyntheticTranscoder;

impl Transcoder for SyntheticTranscoder {
    fn describe(&self) -> String {
        "synthetic block-DCT codec (intra, 8x8, bisection rate control)".into()
    }

    fn transcode(&self, job: &TranscodeJob) -> Result<Transcoded> {
        let first = job
            .frames
            .first()
            .ok_or_else(|| Error::Encoder("no frames to encode".into()))?;
        let budget = job.bitrate_kbps * 1000.0 * job.duration_s();
        let coded = encode_to_budget(job.frames, budget)?;
        Ok(Transcoded {
            achieved_kbps: coded.bits as f64 / job.duration_s() / 1000.0,
            width: first.width(),
            height: first.height(),
            frames: coded.frames,
        })
    }
}

/// Command lines with `{placeholder}` substitution, run through `sh -c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommandTemplates {
    /// Placeholders: input, output, width, height, bitrate_kbps, pix_fmt, fps.
    pub encode: String,
    /// Placeholders: input, output, width, height, pix_fmt.
    pub decode: String,
    /// Placeholders: input. Prints `key=value` lines; `bit_rate` (bits/s),
    /// `width` and `height` are read.
    pub probe: Option<String>,
    #[serde(default = "default_extension")]
    pub extension: String,
    #[serde(default = "default_timeout")]
    pub timeout_s: u64,
}

fn default_extension() -> String {
    "hevc".into()
}

fn default_timeout() -> u64 {
    600
}

impl CommandTemplates {
    /// ffmpeg with libx265 Main10, average-bitrate mode and HDR10 signaling.
    pub fn ffmpeg_x265() -> Self {
        CommandTemplates {
            encode: "ffmpeg -hide_banner -loglevel error -y -f rawvideo -pix_fmt {pix_fmt} -s {width}x{height} \
                     -r {fps} -i {input} -c:v libx265 -profile:v main10 -b:v {bitrate_kbps}k \
                     -x265-params colorprim=bt2020:transfer=smpte2084:colormatrix=bt2020nc {output}"
                .into(),
            decode: "ffmpeg -hide_banner -loglevel error -y -i {input} -f rawvideo -pix_fmt {pix_fmt} {output}".into(),
            probe: Some(
                "ffprobe -v error -show_entries format=bit_rate:stream=width,height -of default=nw=1 {input}".into(),
            ),
            extension: default_extension(),
            timeout_s: default_timeout(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CommandTranscoder {
    pub templates: CommandTemplates,
}

fn shell_quote(s: &str) -> String {
    format!("'{}'", s.replace('\'', r"'\''"))
}

fn render(template: &str, vars: &HashMap<&str, String>) -> Result<String> {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let close = rest[open..]
            .find('}')
            .ok_or_else(|| Error::Config(format!("unterminated placeholder in {template:?}")))?;
        let key = &rest[open + 1..open + close];
        let value = vars
            .get(key)
            .ok_or_else(|| Error::Config(format!("unknown placeholder {{{key}}} in {template:?}")))?;
        out.push_str(value);
        rest = &rest[open + close + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

fn pix_fmt(g: &FrameGeometry) -> &'static str {
    match (g.bit_depth, g.chroma) {
        (8, crate::media::ChromaSiting::Cs420) => "yuv420p",
        (8, _) => "yuv444p",
        (_, crate::media::ChromaSiting::Cs420) => "yuv420p10le",
        _ => "yuv444p10le",
    }
}

impl CommandTranscoder {
    fn run(&self, command: &str) -> Result<String> {
        log::debug!("running {command}");
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| Error::Encoder(format!("cannot start {command:?}: {e}")))?;
        // Drain both pipes concurrently so a chatty tool cannot block on a full pipe.
        let drain = |pipe: Option<Box<dyn std::io::Read + Send>>| {
            std::thread::spawn(move || {
                let mut text = String::new();
                if let Some(mut p) = pipe {
                    let _ = p.read_to_string(&mut text);
                }
                text
            })
        };
        let out_reader = drain(child.stdout.take().map(|p| Box::new(p) as Box<dyn std::io::Read + Send>));
        let err_reader = drain(child.stderr.take().map(|p| Box::new(p) as Box<dyn std::io::Read + Send>));
        let status = child
            .wait_timeout(Duration::from_secs(self.templates.timeout_s))
            .map_err(|e| Error::Encoder(e.to_string()))?;
        let Some(status) = status else {
            let _ = child.kill();
            let _ = child.wait();
            return Err(Error::Encoder(format!(
                "{command:?} timed out after {} s",
                self.templates.timeout_s
            )));
        };
        let stdout = out_reader.join().unwrap_or_default();
        let stderr = err_reader.join().unwrap_or_default();
        if !status.success() {
            return Err(Error::Encoder(format!(
                "{command:?} exited with {status}: {}",
                stderr.trim()
            )));
        }
        Ok(stdout)
    }
}

fn parse_probe(text: &str) -> HashMap<String, String> {
    text.lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect()
}

impl Transcoder for CommandTranscoder {
    fn describe(&self) -> String {
        format!("command: {}", self.templates.encode)
    }

    fn transcode(&self, job: &TranscodeJob) -> Result<Transcoded> {
        let first = job
            .frames
            .first()
            .ok_or_else(|| Error::Encoder("no frames to encode".into()))?;
        let g = first.geometry;
        let input = job.work_dir.join("input.yuv");
        let encoded: PathBuf = job.work_dir.join(format!("encoded.{}", self.templates.extension));
        let decoded = job.work_dir.join("decoded.yuv");
        write_frames(&input, job.frames)?;
        let path_var = |p: &Path| shell_quote(&p.to_string_lossy());
        let mut vars = HashMap::from([
            ("width", g.width.to_string()),
            ("height", g.height.to_string()),
            ("pix_fmt", pix_fmt(&g).to_string()),
            ("fps", format!("{}", job.fps)),
            ("bitrate_kbps", format!("{}", job.bitrate_kbps.round())),
            ("input", path_var(&input)),
            ("output", path_var(&encoded)),
        ]);
        self.run(&render(&self.templates.encode, &vars)?)?;

        let size_bits = std::fs::metadata(&encoded).map_err(|e| Error::io(&encoded, e))?.len() as f64 * 8.0;
        let mut achieved_kbps = size_bits / job.duration_s() / 1000.0;
        let (mut width, mut height) = (g.width, g.height);
        if let Some(probe) = &self.templates.probe {
            vars.insert("input", path_var(&encoded));
            let fields = parse_probe(&self.run(&render(probe, &vars)?)?);
            if let Some(b) = fields.get("bit_rate").and_then(|v| v.parse::<f64>().ok()) {
                achieved_kbps = b / 1000.0;
            }
            width = fields.get("width").and_then(|v| v.parse().ok()).unwrap_or(width);
            height = fields.get("height").and_then(|v| v.parse().ok()).unwrap_or(height);
        }

        vars.insert("input", path_var(&encoded));
        vars.insert("output", path_var(&decoded));
        self.run(&render(&self.templates.decode, &vars)?)?;
        let count = RawVideo::open(&decoded, g)?.frame_count();
        let indices: Vec<usize> = (0..count).collect();
        let frames = load_frames(&decoded, g, &indices)?;
        if frames.len() != job.frames.len() {
            return Err(Error::Encoder(format!(
                "decoder returned {} frames for {} inputs",
                frames.len(),
                job.frames.len()
            )));
        }
        Ok(Transcoded {
            frames,
            achieved_kbps,
            width,
            height,
        })
    }
}
