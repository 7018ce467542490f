//! Print the built-in reference configuration as TOML.

fn main() {
    print!("{}", noon_gyro::config::RunConfig::default().to_toml_string());
}
