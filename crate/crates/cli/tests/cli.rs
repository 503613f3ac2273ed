use std::path::Path;
use std::process::{Command, Output};

use microcolor::colorspace::{rgb_to_lab, split_l_ab};
use microcolor::dataset::{load_rgb, save_rgb};
use microcolor::RgbImage;

fn microcolor(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_microcolor"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn gray(path: &Path) {
    let img = RgbImage::from_fn(20, 12, |x, y| [(x * 10 + y) as u8; 3]);
    save_rgb(&img, path).unwrap();
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn exit_codes_follow_error_kind() {
    let dir = tempfile::tempdir().unwrap();
    let bad_flag = microcolor(&["analyze", "hue", "--nope"]);
    assert_eq!(bad_flag.status.code(), Some(2));
    assert!(stderr(&bad_flag).starts_with("error kind=usage code=2"));

    let missing = dir.path().join("absent.png");
    let out = dir.path().join("h.csv");
    let io = microcolor(&["analyze", "hue", "--input", p(&missing), "--out", p(&out)]);
    assert_eq!(io.status.code(), Some(3));
    assert!(stderr(&io).contains("kind=io"));
    assert_eq!(stderr(&io).lines().count(), 1);

    let junk = dir.path().join("junk.png");
    std::fs::write(&junk, b"not an image").unwrap();
    let img = microcolor(&["analyze", "hue", "--input", p(&junk), "--out", p(&out)]);
    assert_eq!(img.status.code(), Some(4));

    let g = dir.path().join("g.png");
    gray(&g);
    let zero_bins = microcolor(&[
        "analyze",
        "hue",
        "--input",
        p(&g),
        "--out",
        p(&out),
        "--bins",
        "0",
    ]);
    assert_eq!(zero_bins.status.code(), Some(7));

    let bad_ckpt = dir.path().join("w.ckpt");
    std::fs::write(&bad_ckpt, b"MCOLWGT\0garbage").unwrap();
    let corrupt = microcolor(&[
        "colorize-ee",
        "--input",
        p(&g),
        "--weights",
        p(&bad_ckpt),
        "--out",
        p(&out),
    ]);
    assert_eq!(corrupt.status.code(), Some(9), "{}", stderr(&corrupt));

    assert_eq!(microcolor(&["--version"]).status.code(), Some(0));
    assert_eq!(microcolor(&[]).status.code(), Some(7));
}

#[test]
fn mask_count_must_match_reference_count() {
    let dir = tempfile::tempdir().unwrap();
    let g = dir.path().join("g.png");
    gray(&g);
    let o = microcolor(&[
        "colorize-nst",
        "--input",
        p(&g),
        "--reference",
        p(&g),
        "--reference",
        p(&g),
        "--mask",
        p(&g),
        "--out",
        p(&dir.path().join("o.png")),
        "--budget",
        "1",
    ]);
    assert_eq!(o.status.code(), Some(7), "{}", stderr(&o));
}

#[test]
fn colorization_preserves_luminance() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.png");
    gray(&input);
    let reference = dir.path().join("ref.png");
    save_rgb(
        &RgbImage::from_fn(16, 16, |x, y| [(x * 15) as u8, 100, (y * 15) as u8]),
        &reference,
    )
    .unwrap();
    let out = dir.path().join("out.png");
    let o = microcolor(&[
        "colorize-nst",
        "--input",
        p(&input),
        "--reference",
        p(&reference),
        "--out",
        p(&out),
        "--arch",
        "miniature",
        "--budget",
        "15",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let (l_in, _) = split_l_ab(&rgb_to_lab(&load_rgb(&input).unwrap()));
    let (l_out, _) = split_l_ab(&rgb_to_lab(&load_rgb(&out).unwrap()));
    assert_eq!(l_in.dims(), l_out.dims());
    // 8-bit quantization of the colorized result bounds the drift in L.
    let worst = l_in
        .as_slice()
        .iter()
        .zip(l_out.as_slice())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(worst < 1.0, "L drift {worst}");
}

#[test]
fn config_file_applies_below_flags_and_rejects_unknown_keys() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("c.png");
    save_rgb(
        &RgbImage::from_fn(9, 9, |x, y| [(x * 28) as u8, (y * 28) as u8, 50]),
        &img,
    )
    .unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# shared settings\nblock = 3\nbins = 4\n").unwrap();

    let out = dir.path().join("s.csv");
    let from_file = microcolor(&[
        "--config",
        p(&cfg),
        "analyze",
        "saturation",
        "--input",
        p(&img),
        "--out",
        p(&out),
    ]);
    assert!(from_file.status.success(), "{}", stderr(&from_file));
    let rows = std::fs::read_to_string(&out).unwrap();
    let from_flag = microcolor(&[
        "--config",
        p(&cfg),
        "analyze",
        "saturation",
        "--input",
        p(&img),
        "--out",
        p(&out),
        "--block",
        "1",
    ]);
    assert!(from_flag.status.success());
    let rows_flag = std::fs::read_to_string(&out).unwrap();
    assert!(rows.lines().count() < rows_flag.lines().count());

    std::fs::write(&cfg, "colour = red\n").unwrap();
    let unknown = microcolor(&[
        "--config",
        p(&cfg),
        "analyze",
        "saturation",
        "--input",
        p(&img),
        "--out",
        p(&out),
    ]);
    assert_eq!(unknown.status.code(), Some(7));
    assert!(stderr(&unknown).contains("colour"));
}
