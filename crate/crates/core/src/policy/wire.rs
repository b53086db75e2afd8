//! Line grammar for external policies.
//!
//! ```text
//! PROPOSE <id> <p_init> <p_target_delta> [<window_s>]
//! RESULT <id> <p_init> <p_target_delta> <b1_pos> <b1_time> <b1_speed> <b2_pos> <b2_time> <b2_speed>
//! ERROR <id> <reason...>
//! ```
//!
//! Tokens are separated by single spaces (any run of ASCII whitespace is
//! accepted on input); lines end with `\n`, an optional preceding `\r` is
//! ignored. Numbers in requests use the shortest decimal text that reads
//! back to the same `f64`.

use thiserror::Error;

use super::ProposalRequest;
use crate::actuation::{parse_schema, serialize_schema, ControlVector, ParseError, SchemaRecord};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WireError {
    #[error("empty line")]
    Empty,
    #[error("unknown verb '{0}'")]
    UnknownVerb(String),
    #[error("missing or malformed id")]
    BadId,
    #[error("{verb} frame has {found} fields")]
    Arity { verb: &'static str, found: usize },
    #[error("field '{0}' is not a finite number")]
    BadNumber(String),
    #[error("id {id}: {source}")]
    Payload { id: u64, source: ParseError },
}

impl WireError {
    /// Request id the frame carried, when it could be read.
    pub fn id(&self) -> Option<u64> {
        match self {
            WireError::Payload { id, .. } => Some(*id),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Response {
    Result { id: u64, record: SchemaRecord },
    Error { id: u64, reason: String },
}

impl Response {
    pub fn id(&self) -> u64 {
        match self {
            Response::Result { id, .. } | Response::Error { id, .. } => *id,
        }
    }
}

fn number(tok: &str) -> Result<f64, WireError> {
    tok.parse::<f64>()
        .ok()
        .filter(|x| x.is_finite())
        .ok_or_else(|| WireError::BadNumber(tok.to_string()))
}

pub fn format_request(req: &ProposalRequest) -> String {
    let mut s = format!("PROPOSE {} {} {}", req.id, req.p_init, req.p_target_delta);
    if let Some(w) = req.window {
        s.push_str(&format!(" {w}"));
    }
    s
}

pub fn parse_request(line: &str) -> Result<ProposalRequest, WireError> {
    let toks: Vec<&str> = line.split_ascii_whitespace().collect();
    match toks.first() {
        None => return Err(WireError::Empty),
        Some(&"PROPOSE") => {}
        Some(v) => return Err(WireError::UnknownVerb((*v).to_string())),
    }
    if !(4..=5).contains(&toks.len()) {
        return Err(WireError::Arity {
            verb: "PROPOSE",
            found: toks.len() - 1,
        });
    }
    let id = toks[1].parse().map_err(|_| WireError::BadId)?;
    Ok(ProposalRequest {
        id,
        p_init: number(toks[2])?,
        p_target_delta: number(toks[3])?,
        window: toks.get(4).map(|t| number(t)).transpose()?,
    })
}

pub fn format_result(id: u64, p_init: f64, p_target: f64, cv: &ControlVector) -> String {
    format!("RESULT {id} {}", serialize_schema(p_init, p_target, cv))
}

pub fn format_error(id: u64, reason: &str) -> String {
    let flat: String = reason
        .chars()
        .map(|c| if c == '\n' || c == '\r' { ' ' } else { c })
        .collect();
    format!("ERROR {id} {flat}")
}

pub fn parse_response(line: &str) -> Result<Response, WireError> {
    let line = line.trim_end_matches(['\r', '\n']);
    let mut it = line.splitn(3, |c: char| c.is_ascii_whitespace());
    let verb = it.next().filter(|v| !v.is_empty()).ok_or(WireError::Empty)?;
    let id: u64 = match verb {
        "RESULT" | "ERROR" => it.next().and_then(|t| t.parse().ok()).ok_or(WireError::BadId)?,
        other => return Err(WireError::UnknownVerb(other.to_string())),
    };
    let rest = it.next().unwrap_or("");
    if verb == "ERROR" {
        return Ok(Response::Error {
            id,
            reason: rest.trim().to_string(),
        });
    }
    let record = parse_schema(rest).map_err(|source| WireError::Payload { id, source })?;
    Ok(Response::Result { id, record })
}
