use std::time::Duration;

use proptest::prelude::*;
use replaycache::backend::{
    BackendAdapter, BackendError, ScriptedBackend, SubprocessBackend, SubprocessConfig,
};
use replaycache::cache::InputAtom;

const ECHO: &str = r###"while IFS= read -r l; do
  if [ "$l" = "version" ]; then echo "  7.2.1  "; else echo "$l"; fi
  echo "##END##"
done"###;

fn echo_backend() -> SubprocessBackend {
    SubprocessBackend::launch(
        SubprocessConfig::new("sh")
            .args(["-c", ECHO])
            .timeout_ms(5_000),
    )
    .unwrap()
}

fn scripted_exe(args: &[&str]) -> SubprocessConfig {
    SubprocessConfig::new(env!("CARGO_BIN_EXE_scripted-backend"))
        .args(args.iter().copied())
        .name("scripted-exe")
        .timeout_ms(10_000)
}

#[test]
fn echo_round_trip() {
    let mut b = echo_backend();
    assert_eq!(b.send(&"ping".into()).unwrap().bytes, b"ping\n");
    assert_eq!(b.send(&"".into()).unwrap().bytes, b"\n");
    b.shutdown().unwrap();
}

#[test]
fn newline_in_input_is_a_framing_error() {
    let mut b = echo_backend();
    assert!(matches!(b.send(&"a\nb".into()), Err(BackendError::Framing)));
    // the session is still usable
    assert_eq!(b.send(&"c".into()).unwrap().bytes, b"c\n");
}

#[test]
fn killed_child_is_dead() {
    let mut b = echo_backend();
    let pid = b.pid().unwrap();
    std::process::Command::new("kill")
        .args(["-9", &pid.to_string()])
        .status()
        .unwrap();
    std::thread::sleep(Duration::from_millis(100));
    assert!(matches!(b.send(&"ping".into()), Err(BackendError::Dead(_))));
    assert!(matches!(b.send(&"ping".into()), Err(BackendError::Dead(_))));
}

#[test]
fn slow_child_times_out() {
    let mut b = SubprocessBackend::launch(
        SubprocessConfig::new("sh")
            .args([
                "-c",
                "while read l; do sleep 2; echo x; echo '##END##'; done",
            ])
            .timeout_ms(100),
    )
    .unwrap();
    let started = std::time::Instant::now();
    assert!(matches!(
        b.send(&"go".into()),
        Err(BackendError::Timeout(100))
    ));
    assert!(started.elapsed() < Duration::from_millis(1_500));
    assert!(matches!(b.send(&"go".into()), Err(BackendError::Dead(_))));
}

#[test]
fn missing_program_fails_to_spawn() {
    let err = SubprocessBackend::launch(SubprocessConfig::new("/nonexistent/cas")).unwrap_err();
    assert!(matches!(err, BackendError::Spawn { .. }));
}

#[test]
fn version_probe_sets_descriptor_version() {
    let mut b = SubprocessBackend::new(
        SubprocessConfig::new("sh")
            .args(["-c", ECHO])
            .name("echo")
            .version_probe("version"),
    );
    assert!(matches!(b.describe(), Err(BackendError::Dead(_))));
    b.start().unwrap();
    let d = b.describe().unwrap();
    assert_eq!(d.name, "echo");
    assert_eq!(d.version, "7.2.1");
    assert_eq!(b.describe().unwrap(), d);
    assert_eq!(d.config_fingerprint.len(), 16);
}

#[test]
fn fingerprint_tracks_launch_configuration() {
    let a = SubprocessConfig::new("cas").arg("-q");
    let b = SubprocessConfig::new("cas").arg("-v");
    assert_ne!(a.fingerprint(), b.fingerprint());
    assert_eq!(a.fingerprint(), a.clone().timeout_ms(1).fingerprint());
}

#[test]
fn scripted_exe_speaks_the_protocol() {
    let mut b = SubprocessBackend::launch(scripted_exe(&[])).unwrap();
    assert_eq!(b.send(&"set x 5".into()).unwrap().bytes, b"ok\n");
    assert_eq!(b.send(&"add x 3".into()).unwrap().bytes, b"8\n");
    assert_eq!(b.send(&"get x".into()).unwrap().bytes, b"8\n");
    b.reset().unwrap();
    assert_eq!(b.send(&"get x".into()).unwrap().bytes, b"undef\n");
}

#[test]
fn startup_banner_is_discarded() {
    let config = scripted_exe(&["--banner", "Welcome to CAS 9"]).startup_quiet_ms(150);
    let mut b = SubprocessBackend::launch(config).unwrap();
    assert_eq!(b.send(&"get x".into()).unwrap().bytes, b"undef\n");
}

#[test]
fn late_banner_is_discarded_with_quiet_period() {
    let slow_banner = format!("sleep 0.1; echo 'Loading...'; sleep 0.1; echo 'Ready'; {ECHO}");
    let config = SubprocessConfig::new("sh")
        .args(["-c", slow_banner.as_str()])
        .timeout_ms(5_000)
        .startup_quiet_ms(300);
    let mut b = SubprocessBackend::launch(config).unwrap();
    assert_eq!(b.send(&"ping".into()).unwrap().bytes, b"ping\n");
}

#[test]
fn tool_dying_during_startup_is_dead() {
    let config = SubprocessConfig::new("sh")
        .args(["-c", "echo bye"])
        .startup_quiet_ms(2_000);
    assert!(matches!(
        SubprocessBackend::launch(config),
        Err(BackendError::Dead(_))
    ));
}

#[test]
fn reset_input_resets_in_place() {
    let mut b = SubprocessBackend::launch(scripted_exe(&[]).reset_input("reset")).unwrap();
    let pid = b.pid();
    b.send(&"set x 1".into()).unwrap();
    b.reset().unwrap();
    assert_eq!(b.pid(), pid);
    assert_eq!(b.send(&"get x".into()).unwrap().bytes, b"undef\n");
}

#[test]
fn elapsed_time_is_measured() {
    let mut b = SubprocessBackend::launch(scripted_exe(&["--latency-ms", "30"])).unwrap();
    assert!(b.send(&"get x".into()).unwrap().elapsed_ms >= 30);
}

fn command() -> impl Strategy<Value = String> {
    let var = prop_oneof![Just("x"), Just("y")];
    prop_oneof![
        (var.clone(), -3i64..4).prop_map(|(v, n)| format!("set {v} {n}")),
        (var.clone(), -3i64..4).prop_map(|(v, n)| format!("add {v} {n}")),
        var.prop_map(|v| format!("get {v}")),
        Just("reset".to_string()),
        Just("nope".to_string()),
    ]
}

proptest! {
    /// After `reset`, a script sees exactly what it would on a new instance.
    #[test]
    fn reset_restores_fresh_behavior(
        warmup in prop::collection::vec(command(), 0..6),
        script in prop::collection::vec(command(), 0..=6),
    ) {
        let run = |b: &mut ScriptedBackend| -> Vec<Vec<u8>> {
            script.iter().map(|c| b.send(&InputAtom::from(c.as_str())).unwrap().bytes).collect()
        };
        let mut used = ScriptedBackend::new(0);
        for c in &warmup {
            used.send(&InputAtom::from(c.as_str())).unwrap();
        }
        used.reset().unwrap();
        prop_assert_eq!(run(&mut used), run(&mut ScriptedBackend::new(0)));
    }
}
