use std::fs;
use std::path::PathBuf;
use std::process::Command;

const PROGRAM: &str = r#"
#include <math.h>
#include <stdio.h>
#include <string.h>
#include "adaptive_replay.h"

#define CHECK(c) do { if (!(c)) { fprintf(stderr, "line %d: %s\n", __LINE__, #c); return 1; } } while (0)

int main(int argc, char **argv) {
    size_t sizes[] = {3, 4, 2};
    AmrModel *m = NULL;
    CHECK(amr_model_new(sizes, 3, AMR_ACTIVATION_TANH, AMR_HEAD_CLASSIFICATION, 5, &m) == AMR_STATUS_OK);
    CHECK(amr_model_num_params(m) == 26);
    double x[] = {0.5, -1.0, 2.0};
    double logits[2];
    CHECK(amr_model_forward(m, x, 3, logits, 2) == AMR_STATUS_OK);
    double loss = -1.0;
    CHECK(amr_model_class_loss(m, x, 3, 1, &loss) == AMR_STATUS_OK);
    double mx = logits[0] > logits[1] ? logits[0] : logits[1];
    double lse = mx + log(exp(logits[0] - mx) + exp(logits[1] - mx));
    CHECK(fabs(loss - (lse - logits[1])) < 1e-12);
    CHECK(amr_model_class_loss(m, x, 3, 7, &loss) == AMR_STATUS_INVALID_ARGUMENT);
    CHECK(amr_last_error_message() != NULL);
    amr_model_free(m);

    AmrBandit *b = NULL;
    CHECK(amr_bandit_new(3, 0.5, 1.0, &b) == AMR_STATUS_OK);
    double probe[] = {1.0, 0.0, 0.0};
    CHECK(amr_bandit_update(b, probe, 3) == AMR_STATUS_OK);
    double mu[3], p[3];
    CHECK(amr_bandit_means(b, mu, 3) == AMR_STATUS_OK && mu[0] == 0.5);
    CHECK(amr_bandit_distribution(b, p, 3) == AMR_STATUS_OK);
    CHECK(fabs(p[0] - exp(0.5) / (exp(0.5) + 2.0)) < 1e-12);
    amr_bandit_free(b);

    char *table = NULL;
    CHECK(amr_compare(argv[1], &table) == AMR_STATUS_OK);
    CHECK(table != NULL && table[0] == '[' && strstr(table, "\"oracle\"") != NULL);
    amr_string_free(table);
    CHECK(amr_run("/nonexistent/config.json") == AMR_STATUS_INVALID_ARGUMENT);
    printf("ok %s\n", amr_version());
    return 0;
}
"#;

#[test]
fn c_program_links_and_runs() {
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    // target/<profile>/deps/<this test> -> target/<profile>
    let exe = std::env::current_exe().unwrap();
    let lib_dir = exe.parent().unwrap().parent().unwrap();
    let lib = lib_dir.join("libadaptive_replay_ffi.a");
    assert!(lib.exists(), "static library missing at {}", lib.display());

    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    let bin = dir.path().join("main");
    fs::write(&src, PROGRAM).unwrap();
    let cc = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-o"])
        .arg(&bin)
        .arg(&src)
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm"])
        .output()
        .expect("a C compiler on PATH");
    assert!(
        cc.status.success(),
        "{}",
        String::from_utf8_lossy(&cc.stderr)
    );

    let config = dir.path().join("config.json");
    fs::write(
        &config,
        r#"{"dataset": {"kind": "rotated_regression", "num_tasks": 2, "n_train": 64, "n_test": 16,
            "dim": 3, "rotation_degrees_per_task": 30.0, "noise_sigma": 0.1},
            "train": {"batch_size": 8, "iterations_per_task": 5, "pretrain_iterations": 5}}"#,
    )
    .unwrap();
    let run = Command::new(&bin)
        .arg(&config)
        .env("AMR_OUTPUT_DIR", dir.path().join("out"))
        .output()
        .unwrap();
    assert!(
        run.status.success(),
        "{}{}",
        String::from_utf8_lossy(&run.stdout),
        String::from_utf8_lossy(&run.stderr)
    );
    assert!(dir.path().join("out/compare_table.csv").exists());
}

#[test]
fn header_is_valid_cpp() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("h.cpp");
    fs::write(
        &src,
        "#include \"adaptive_replay.h\"\nint main() { return AMR_STATUS_OK; }\n",
    )
    .unwrap();
    let out = Command::new("c++")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-I"])
        .arg(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include"))
        .arg(&src)
        .output()
        .expect("a C++ compiler on PATH");
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}
