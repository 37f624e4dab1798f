//! Newline-delimited JSON reward service for external RL trainers.
//!
//! Each request line carries one rollout group:
//!
//! ```json
//! {"id": "q1", "scheme": "discrete", "image": {"width": 1920, "height": 1080},
//!  "box": [10, 20, 60, 40], "coord_space": "pixel",
//!  "rollouts": [{"point": [30, 30]}, {"text": "(31, 29)"}], "rloo": true}
//! ```
//!
//! and is answered by exactly one line, either
//! `{"id": "q1", "rewards": [...], "advantages": [...]}` (advantages only when
//! `rloo` is true) or `{"id": "q1", "error": "..."}`. Unknown fields are
//! ignored. A connection is served strictly in order.

use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::net::{TcpListener, TcpStream};
use std::thread;

use serde::{Deserialize, Serialize};

use super::{rloo_advantages, score_group, Prediction, RewardScheme, RolloutGroup};
use crate::corpus::BoundingBox;
use crate::evaluation::{CoordSpace, PairPolicy};
use crate::geometry::Point;

#[derive(Debug, Deserialize)]
struct ImageSize {
    width: f64,
    height: f64,
}

#[derive(Debug, Deserialize)]
struct RolloutSpec {
    #[serde(default)]
    point: Option<Point>,
    #[serde(default)]
    text: Option<String>,
}

#[derive(Debug, Deserialize)]
struct ScoreRequest {
    scheme: String,
    image: ImageSize,
    #[serde(rename = "box")]
    bbox: BoundingBox,
    #[serde(default)]
    coord_space: Option<CoordSpace>,
    rollouts: Vec<RolloutSpec>,
    #[serde(default)]
    rloo: bool,
}

#[derive(Debug, Serialize)]
struct ScoreResponse<'a> {
    id: &'a str,
    rewards: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    advantages: Option<Vec<f64>>,
}

#[derive(Debug, Serialize)]
struct ErrorResponse<'a> {
    id: &'a str,
    error: String,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RewardServer {
    pub pair_policy: PairPolicy,
}

impl RewardServer {
    pub fn new(pair_policy: PairPolicy) -> Self {
        Self { pair_policy }
    }

    /// Answer one request line. Never fails; problems become error responses.
    pub fn handle_line(&self, line: &str) -> String {
        let value: serde_json::Value = match serde_json::from_str(line) {
            Ok(v) => v,
            Err(e) => return error_line("", format!("malformed request: {e}")),
        };
        let id = value
            .get("id")
            .and_then(serde_json::Value::as_str)
            .unwrap_or("")
            .to_string();
        match self.score(value) {
            Ok((rewards, advantages)) => serde_json::to_string(&ScoreResponse {
                id: &id,
                rewards,
                advantages,
            })
            .expect("response serializes"),
            Err(message) => error_line(&id, message),
        }
    }

    fn score(&self, value: serde_json::Value) -> Result<(Vec<f64>, Option<Vec<f64>>), String> {
        if value.get("id").and_then(serde_json::Value::as_str).is_none() {
            return Err("request needs a string id".into());
        }
        let req: ScoreRequest = serde_json::from_value(value).map_err(|e| format!("invalid request: {e}"))?;
        let scheme: RewardScheme = req.scheme.parse().map_err(|e: super::RewardError| e.to_string())?;
        let rollouts = req
            .rollouts
            .into_iter()
            .enumerate()
            .map(|(i, r)| match (r.point, r.text) {
                (Some(p), None) => Ok(Prediction::Point(p)),
                (None, Some(t)) => Ok(Prediction::Text(t)),
                _ => Err(format!("rollout {i} needs exactly one of point or text")),
            })
            .collect::<Result<Vec<_>, _>>()?;
        let group = RolloutGroup {
            bbox: req.bbox,
            image_w: req.image.width,
            image_h: req.image.height,
            rollouts,
        };
        let rewards = score_group(&group, scheme, req.coord_space, self.pair_policy).map_err(|e| e.to_string())?;
        let advantages = if req.rloo {
            Some(rloo_advantages(&rewards).map_err(|e| e.to_string())?)
        } else {
            None
        };
        Ok((rewards, advantages))
    }

    /// Serve one stream until EOF, flushing after every response.
    pub fn serve<R: BufRead, W: Write>(&self, reader: R, mut writer: W) -> io::Result<usize> {
        let mut handled = 0;
        for line in reader.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let response = self.handle_line(&line);
            writer.write_all(response.as_bytes())?;
            writer.write_all(b"\n")?;
            writer.flush()?;
            handled += 1;
        }
        Ok(handled)
    }

    /// Accept connections forever, one thread per connection.
    pub fn serve_tcp(&self, listener: TcpListener) -> io::Result<()> {
        for stream in listener.incoming() {
            let stream = stream?;
            let server = *self;
            thread::spawn(move || {
                let peer = stream.peer_addr().ok();
                if let Err(e) = server.serve_connection(stream) {
                    log::warn!("connection {peer:?} ended with error: {e}");
                }
            });
        }
        Ok(())
    }

    fn serve_connection(&self, stream: TcpStream) -> io::Result<usize> {
        let reader = BufReader::new(stream.try_clone()?);
        self.serve(reader, BufWriter::new(stream))
    }
}

fn error_line(id: &str, error: String) -> String {
    serde_json::to_string(&ErrorResponse { id, error }).expect("response serializes")
}
