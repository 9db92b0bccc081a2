//! Prints the default run configuration as TOML, the format accepted by
//! `mtlsed --config`.

use mtlsed::config::RunConfig;

fn main() {
    print!("{}", RunConfig::default().to_toml());
}
