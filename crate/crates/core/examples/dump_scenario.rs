//! Print the built-in grasp-scenario configuration (and optionally the
//! kinematic model file) as TOML, for seeding config files.
//!
//! ```sh
//! cargo run --release -p uvms-mpc --example dump_scenario            # scenario
//! cargo run --release -p uvms-mpc --example dump_scenario -- model   # model only
//! ```

use uvms_mpc::scenario::{section_v_config, ModelFile};

fn main() {
    let arg = std::env::args().nth(1);
    match arg.as_deref() {
        Some("model") => {
            let model = uvms_mpc::scenario::girona::build_girona_arm5e();
            let file = ModelFile::from_model(&model);
            println!("{}", toml::to_string_pretty(&file).unwrap());
        }
        _ => {
            let mut cfg = section_v_config();
            // The shipped config references the model by path instead of
            // inlining it.
            cfg.model = None;
            cfg.model_path = Some("girona-arm5e-model.toml".to_string());
            println!("{}", cfg.to_toml_string());
        }
    }
}
