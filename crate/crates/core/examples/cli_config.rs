//! Driving the command-line front end from a TOML file.

use std::io::Write;

fn main() -> std::io::Result<()> {
    let dir = std::env::temp_dir().join("twogrid-pide-example");
    std::fs::create_dir_all(&dir)?;
    let config = dir.join("run.toml");
    let mut f = std::fs::File::create(&config)?;
    writeln!(f, "scheme = \"twogrid_42\"")?;
    writeln!(f, "h = \"1/16\"")?;
    writeln!(f, "H = \"1/4\"")?;
    writeln!(f, "dt = \"1/8\"")?;
    writeln!(f, "T = 1.0")?;
    writeln!(f, "problem = \"section5\"")?;
    drop(f);

    let args = ["pide", "--config", config.to_str().unwrap(), "--stability"];
    let code = twogrid_pide::cli::main_with_args(args);
    println!("exit code {code}");
    Ok(())
}
