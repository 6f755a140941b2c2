//! Reference external segmenter for protocol testing.
//!
//! Usage: `clickseg-echo-segmenter [echo|wrong-height|exit-after N|slow MS|bad-handshake|garbage]`
//!
//! `echo` (the default) answers each request with its previous mask.

use std::io::{self, BufRead, Write};
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde_json::{json, Value};

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mode = args.first().map(String::as_str).unwrap_or("echo");
    let param: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(0);

    let stdout = io::stdout();
    let mut out = stdout.lock();
    if mode == "bad-handshake" {
        writeln!(out, "{}", json!({"protocol": "something-else", "version": 9})).unwrap();
        out.flush().unwrap();
        return;
    }
    writeln!(out, "{}", json!({"protocol": "clickseg-ext", "version": 1})).unwrap();
    out.flush().unwrap();

    let mut served = 0u64;
    for line in io::stdin().lock().lines() {
        let Ok(line) = line else { break };
        let req: Value = match serde_json::from_str(&line) {
            Ok(v) => v,
            Err(_) => break,
        };
        served += 1;
        if mode == "exit-after" && served > param {
            std::process::exit(3);
        }
        if mode == "slow" {
            std::thread::sleep(Duration::from_millis(param));
        }
        if mode == "garbage" {
            writeln!(out, "this is not json").unwrap();
            out.flush().unwrap();
            continue;
        }
        let id = req["id"].as_u64().unwrap_or(0);
        let width = req["width"].as_u64().unwrap_or(0) as usize;
        let height = req["height"].as_u64().unwrap_or(0) as usize;
        let prev = B64.decode(req["prev_mask"].as_str().unwrap_or("")).unwrap_or_default();
        let reply = if mode == "wrong-height" {
            let short = &prev[..prev.len().saturating_sub(4 * width)];
            json!({"id": id, "width": width, "height": height.saturating_sub(1), "prob_map": B64.encode(short)})
        } else {
            json!({"id": id, "prob_map": B64.encode(&prev)})
        };
        writeln!(out, "{reply}").unwrap();
        out.flush().unwrap();
    }
}
