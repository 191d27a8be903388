//! Line-oriented measurement-log format.
//!
//! The log is diffable text: a magic line, a single-line JSON header, then
//! typed stream lines with stable prefixes:
//!
//! ```text
//! # skidsteer-log v1
//! meta {"format_version":1,...}
//! enc <t> <o_l> <o_r>
//! imu <t> <gx> <gy> <gz> <ax> <ay> <az>
//! feat <t> <frame_id> <landmark_id> <u> <v>
//! gtp <t> <qw> <qx> <qy> <qz> <px> <py> <pz>
//! gtx <t> <X_v> <Y_l> <Y_r> <alpha_l> <alpha_r>
//! ```
//!
//! Floats are written with Rust's shortest-round-trip formatting, so
//! write → read → write is byte-identical.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::geom::{Pose, PoseRecord};
use crate::kinematics::{EncoderReading, KinematicParams};
use crate::propagation::{ImuReading, NoiseConfig};
use crate::simulate::FeatureObservation;
use crate::Result;

use super::config::{RatesConfig, RigConfig};

pub const LOG_MAGIC: &str = "# skidsteer-log v1";

/// Log header: rates, rig, noise levels and the pixel-noise conversion used
/// during synthesis.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogHeader {
    pub format_version: u32,
    pub seed: u64,
    pub noise_scale: f64,
    pub rates: RatesConfig,
    pub rig: RigConfig,
    /// Effective noise config (sigma_pixel in normalized coordinates).
    pub noise: NoiseConfig,
    /// Conversion metadata: the pixel std and nominal focal length that
    /// produced `noise.sigma_pixel`.
    pub sigma_pixel_px: f64,
    pub focal_length_px: f64,
    pub profile_label: String,
}

/// Ground-truth side channel.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroundTruth {
    pub poses: Vec<(f64, Pose)>,
    pub xi: Vec<(f64, KinematicParams)>,
}

/// A complete measurement log.
#[derive(Debug, Clone)]
pub struct MeasurementLog {
    pub header: LogHeader,
    pub encoders: Vec<EncoderReading>,
    pub imu: Vec<ImuReading>,
    /// `(frame_id, observation)` with frame ids increasing with time.
    pub features: Vec<(u64, FeatureObservation)>,
    pub ground_truth: Option<GroundTruth>,
}

impl MeasurementLog {
    /// Camera frame timestamps in order.
    pub fn frame_times(&self) -> Vec<f64> {
        let mut times = Vec::new();
        for (_, f) in &self.features {
            if times.last().map(|t| *t < f.frame_t).unwrap_or(true) {
                times.push(f.frame_t);
            }
        }
        times
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "{LOG_MAGIC}")?;
        writeln!(w, "meta {}", serde_json::to_string(&self.header).expect("header serializes"))?;
        for e in &self.encoders {
            writeln!(w, "enc {} {} {}", e.t, e.o_l, e.o_r)?;
        }
        for m in &self.imu {
            writeln!(
                w,
                "imu {} {} {} {} {} {} {}",
                m.t, m.gyro[0], m.gyro[1], m.gyro[2], m.accel[0], m.accel[1], m.accel[2]
            )?;
        }
        for (frame, f) in &self.features {
            writeln!(
                w,
                "feat {} {} {} {} {}",
                f.frame_t, frame, f.landmark_id, f.uv[0], f.uv[1]
            )?;
        }
        if let Some(gt) = &self.ground_truth {
            for (t, p) in &gt.poses {
                let r = PoseRecord::from(p);
                writeln!(
                    w,
                    "gtp {} {} {} {} {} {} {} {}",
                    t,
                    r.quat_wxyz[0],
                    r.quat_wxyz[1],
                    r.quat_wxyz[2],
                    r.quat_wxyz[3],
                    r.position[0],
                    r.position[1],
                    r.position[2]
                )?;
            }
            for (t, xi) in &gt.xi {
                let a = xi.as_array();
                writeln!(w, "gtx {} {} {} {} {} {}", t, a[0], a[1], a[2], a[3], a[4])?;
            }
        }
        Ok(())
    }

    pub fn to_string_lossless(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("write to vec");
        String::from_utf8(buf).expect("log is utf-8")
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(file))
    }

    pub fn read_from(r: impl BufRead) -> Result<MeasurementLog> {
        let mut header: Option<LogHeader> = None;
        let mut encoders = Vec::new();
        let mut imu = Vec::new();
        let mut features = Vec::new();
        let mut gt = GroundTruth::default();

        let parse_err = |line: usize, message: &str| Error::LogParse {
            line,
            message: message.to_string(),
        };

        for (idx, line) in r.lines().enumerate() {
            let line = line?;
            let lineno = idx + 1;
            if idx == 0 {
                if line.trim() != LOG_MAGIC {
                    return Err(parse_err(lineno, "missing log magic"));
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let (tag, rest) = line.split_once(' ').ok_or_else(|| parse_err(lineno, "bad line"))?;
            let fields = |n: usize| -> Result<Vec<f64>> {
                let vals: Vec<f64> = rest
                    .split_ascii_whitespace()
                    .map(|tok| tok.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| parse_err(lineno, &format!("bad float: {e}")))?;
                if vals.len() != n {
                    return Err(parse_err(lineno, &format!("expected {n} fields")));
                }
                Ok(vals)
            };
            match tag {
                "meta" => {
                    header = Some(serde_json::from_str(rest).map_err(|e| {
                        parse_err(lineno, &format!("bad header json: {e}"))
                    })?);
                }
                "enc" => {
                    let v = fields(3)?;
                    encoders.push(EncoderReading { t: v[0], o_l: v[1], o_r: v[2] });
                }
                "imu" => {
                    let v = fields(7)?;
                    imu.push(ImuReading {
                        t: v[0],
                        gyro: [v[1], v[2], v[3]],
                        accel: [v[4], v[5], v[6]],
                    });
                }
                "feat" => {
                    let v = fields(5)?;
                    features.push((
                        v[1] as u64,
                        FeatureObservation {
                            frame_t: v[0],
                            landmark_id: v[2] as u64,
                            uv: [v[3], v[4]],
                        },
                    ));
                }
                "gtp" => {
                    let v = fields(8)?;
                    let rec = PoseRecord {
                        quat_wxyz: [v[1], v[2], v[3], v[4]],
                        position: [v[5], v[6], v[7]],
                    };
                    gt.poses.push((v[0], Pose::from(&rec)));
                }
                "gtx" => {
                    let v = fields(6)?;
                    gt.xi.push((
                        v[0],
                        KinematicParams::new(v[1], v[2], v[3], v[4], v[5]),
                    ));
                }
                _ => return Err(parse_err(lineno, &format!("unknown tag `{tag}`"))),
            }
        }
        let header = header.ok_or_else(|| parse_err(0, "missing meta line"))?;
        for (name, stream_monotone) in [
            ("enc", encoders.windows(2).all(|w| w[0].t < w[1].t)),
            ("imu", imu.windows(2).all(|w| w[0].t < w[1].t)),
        ] {
            if !stream_monotone {
                return Err(Error::LogParse {
                    line: 0,
                    message: format!("{name} timestamps are not strictly increasing"),
                });
            }
        }
        Ok(MeasurementLog {
            header,
            encoders,
            imu,
            features,
            ground_truth: if gt.poses.is_empty() && gt.xi.is_empty() { None } else { Some(gt) },
        })
    }

    pub fn load(path: &std::path::Path) -> Result<MeasurementLog> {
        let file = std::fs::File::open(path)?;
        MeasurementLog::read_from(std::io::BufReader::new(file))
    }
}
