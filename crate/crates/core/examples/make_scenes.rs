//! Writes synthetic grayscale scenes as PGM files, for trying the CLI
//! without a natural-image dataset.
//!
//! cargo run -p rednet --example make_scenes -- <dir> <count> <height> <width> [first-seed]

use std::path::PathBuf;
use std::process::ExitCode;

use rednet::data::{save_image, synthetic};
use rednet::ImageGray;

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let num = |i: usize, default: Option<u64>| -> Option<u64> {
        args.get(i).map_or(default, |s| s.parse().ok())
    };
    let (Some(dir), Some(count), Some(h), Some(w), Some(seed)) =
        (args.first().map(PathBuf::from), num(1, None), num(2, None), num(3, None), num(4, Some(0)))
    else {
        eprintln!("usage: make_scenes <dir> <count> <height> <width> [first-seed]");
        return ExitCode::from(2);
    };
    if let Err(e) = std::fs::create_dir_all(&dir) {
        eprintln!("cannot create {}: {e}", dir.display());
        return ExitCode::from(3);
    }
    for i in 0..count {
        let img: ImageGray = synthetic::scene(h as usize, w as usize, seed + i);
        if let Err(e) = save_image(&img, dir.join(format!("scene{:04}.pgm", seed + i))) {
            eprintln!("{e}");
            return ExitCode::from(3);
        }
    }
    println!("wrote {count} scenes to {}", dir.display());
    ExitCode::SUCCESS
}
