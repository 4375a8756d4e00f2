#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn demo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../demo")
}

/// The binary with archive and run directory inside `dir`.
pub fn bf(dir: &Path, root: &Path) -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_benchforge"));
    cmd.arg("--porcelain")
        .arg("--config-root")
        .arg(root)
        .arg("--archive")
        .arg(dir.join("archive"))
        .arg("--workdir")
        .arg(dir.join("work"))
        .current_dir(dir)
        .env_remove("BENCHFORGE_CONFIG_ROOT")
        .env_remove("BENCHFORGE_ARCHIVE")
        .env_remove("BENCHFORGE_WORKDIR");
    cmd
}

pub fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary starts")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// Porcelain lines whose first field is `kind`, split on tabs.
pub fn lines(o: &Output, kind: &str) -> Vec<Vec<String>> {
    stdout(o).lines().map(|l| l.split('\t').map(str::to_string).collect::<Vec<_>>()).filter(|f| f[0] == kind).collect()
}

pub fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

/// Copies a config root so a test can edit it.
pub fn copy_tree(from: &Path, to: &Path) {
    std::fs::create_dir_all(to).unwrap();
    for entry in std::fs::read_dir(from).unwrap() {
        let entry = entry.unwrap();
        let dest = to.join(entry.file_name());
        if entry.file_type().unwrap().is_dir() {
            copy_tree(&entry.path(), &dest);
        } else {
            std::fs::copy(entry.path(), dest).unwrap();
        }
    }
}
