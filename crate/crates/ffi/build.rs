fn main() {
    println!("cargo:rerun-if-changed=src/lib.rs");
    println!("cargo:rerun-if-changed=cbindgen.toml");
    let crate_dir = std::env::var("CARGO_MANIFEST_DIR").unwrap();
    let config_path = std::path::Path::new(&crate_dir).join("cbindgen.toml");
    let config = cbindgen::Config::from_file(&config_path).unwrap_or_default();
    match cbindgen::Builder::new()
        .with_crate(&crate_dir)
        .with_config(config)
        .generate()
    {
        Ok(bindings) => {
            let out = std::path::Path::new(&crate_dir).join("include").join("vgsloc.h");
            std::fs::create_dir_all(out.parent().unwrap()).ok();
            bindings.write_to_file(out);
        }
        Err(err) => {
            println!("cargo:warning=cbindgen failed: {err}");
        }
    }
}
