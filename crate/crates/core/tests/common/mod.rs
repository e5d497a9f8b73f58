//! Helpers shared by the integration test targets.

#![allow(dead_code)]

use std::fs;
use std::panic;
use std::path::{Path, PathBuf};

use lost_silence::query::{format_query, parse_query, LISTING_QUERY};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn corpus_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/corpus")
}

/// What the parser makes of a query: its canonical text, or the error line.
pub fn render(text: &str) -> String {
    match parse_query(text) {
        Ok(q) => format_query(&q),
        Err(e) => format!("error: {e}\n"),
    }
}

/// Compares every `*.rq` in the corpus against its `*.expected` file.
/// Returns (queries checked, mismatches). Set `LOST_SILENCE_BLESS=1` to
/// rewrite the expectations.
pub fn check_corpus() -> (usize, Vec<String>) {
    let bless = std::env::var_os("LOST_SILENCE_BLESS").is_some();
    let mut paths: Vec<_> = fs::read_dir(corpus_dir())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "rq"))
        .collect();
    paths.sort();
    let mut failures = Vec::new();
    for path in &paths {
        let got = render(&fs::read_to_string(path).unwrap());
        let expected_path = path.with_extension("expected");
        if bless {
            fs::write(&expected_path, &got).unwrap();
            continue;
        }
        let expected = fs::read_to_string(&expected_path).unwrap_or_default();
        if got != expected {
            failures.push(format!("{}:\n--- expected\n{expected}--- got\n{got}", path.display()));
            continue;
        }
        if !got.starts_with("error:") {
            // The canonical text is itself a fixpoint.
            if render(&got) != got {
                failures.push(format!("{}: canonical form does not reparse to itself", path.display()));
            }
        }
    }
    (paths.len(), failures)
}

/// Byte-level mutant of `src`.
pub fn mutate(src: &[u8], rng: &mut ChaCha8Rng) -> Vec<u8> {
    let mut out = src.to_vec();
    for _ in 0..rng.gen_range(1..=4) {
        if out.is_empty() {
            out.push(rng.gen());
            continue;
        }
        let at = rng.gen_range(0..out.len());
        match rng.gen_range(0..5) {
            0 => out[at] = rng.gen(),
            1 => {
                out.remove(at);
            }
            2 => out.insert(at, b"{}()[].;,?<>:*\"#^ \n"[rng.gen_range(0..19)]),
            3 => {
                let end = (at + rng.gen_range(1..40)).min(out.len());
                out.drain(at..end);
            }
            _ => {
                let end = (at + rng.gen_range(1..40)).min(out.len());
                let chunk = out[at..end].to_vec();
                let to = rng.gen_range(0..=out.len());
                out.splice(to..to, chunk);
            }
        }
    }
    out
}

/// Outcome of a fuzzing round.
#[derive(Debug, Default)]
pub struct FuzzOutcome {
    pub mutants: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub panics: usize,
    pub missing_position: usize,
}

pub fn fuzz_listing(mutants: usize, seed: u64) -> FuzzOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut outcome = FuzzOutcome { mutants, ..Default::default() };
    let hook = panic::take_hook();
    panic::set_hook(Box::new(|_| {}));
    for _ in 0..mutants {
        let bytes = mutate(LISTING_QUERY.as_bytes(), &mut rng);
        let text = String::from_utf8_lossy(&bytes).into_owned();
        match panic::catch_unwind(|| parse_query(&text)) {
            Ok(Ok(_)) => outcome.accepted += 1,
            Ok(Err(e)) => {
                outcome.rejected += 1;
                let (line, col) = e.position();
                if line == 0 || col == 0 {
                    outcome.missing_position += 1;
                }
            }
            Err(_) => outcome.panics += 1,
        }
    }
    panic::set_hook(hook);
    outcome
}
