//! Test backend speaking the line protocol on stdin/stdout.
//!
//! Answers every request with its own text as the single best hypothesis.
//! With `--malformed-prefix P`, requests whose utterance id starts with `P`
//! get a line that is not valid protocol JSON instead.

use std::io::{self, BufReader};

use dda_core::channel::protocol::{echo_response, serve_lines, Response};

fn main() -> io::Result<()> {
    let mut malformed: Option<String> = None;
    let mut args = std::env::args().skip(1);
    while let Some(arg) = args.next() {
        match arg.as_str() {
            "--malformed-prefix" => malformed = args.next(),
            other => {
                eprintln!("unknown argument `{other}`");
                std::process::exit(2);
            }
        }
    }
    let stdin = io::stdin();
    let stdout = io::stdout();
    serve_lines(BufReader::new(stdin.lock()), stdout.lock(), |req| match req {
        Ok(req) => {
            if malformed.as_deref().is_some_and(|p| req.utterance_id.starts_with(p)) {
                Some(format!("{{\"v\":1,\"type\":\"result\",\"utterance_id\":\"{}\"", req.utterance_id))
            } else {
                Some(echo_response(&req).to_json().to_string())
            }
        }
        Err(e) => Some(Response::Error { message: e }.to_json().to_string()),
    })
}
