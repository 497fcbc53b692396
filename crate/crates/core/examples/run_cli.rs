//! Drives the batch front end in-process: writes the 3-sphere certificate
//! and the unit-torus oracle table into a temporary directory.

fn main() {
    let out = std::env::temp_dir().join("beltrami-cli-example");
    let out = out.to_str().expect("utf-8 temp dir");
    for args in [
        vec!["beltrami", "sphere3", "--out", out],
        vec!["beltrami", "oracle", "--metric", "I", "--K", "1", "--out", out],
    ] {
        let code = beltrami::cli::run(args);
        println!("exit code {code}");
    }
    let csv = std::fs::read_to_string(std::path::Path::new(out).join("oracle.csv")).expect("oracle table");
    print!("{csv}");
}
