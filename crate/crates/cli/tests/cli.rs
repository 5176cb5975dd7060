use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

use serde_json::Value;

fn lsfs(root: &Path, args: &[&str], stdin: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_lsfs"));
    cmd.arg("--root").arg(root).args(args);
    run(cmd, stdin)
}

fn run(mut cmd: Command, stdin: Option<&str>) -> Output {
    // keep the caller's environment from leaking provider settings in
    for (k, _) in std::env::vars().filter(|(k, _)| k.starts_with("LSFS_")) {
        cmd.env_remove(k);
    }
    cmd.stdin(Stdio::piped()).stdout(Stdio::piped()).stderr(Stdio::piped());
    let mut child = cmd.spawn().expect("spawn lsfs");
    {
        let mut pipe = child.stdin.take().unwrap();
        if let Some(s) = stdin {
            pipe.write_all(s.as_bytes()).unwrap();
        }
    }
    child.wait_with_output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn corpus() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    fs::create_dir_all(root.join("nlp")).unwrap();
    fs::create_dir_all(root.join("computer-vision")).unwrap();
    fs::write(root.join("nlp/mt"), "Machine translation\nAuthors: Emily Zhang").unwrap();
    fs::write(root.join("nlp/cnn"), "Convolutional text models").unwrap();
    fs::write(root.join("computer-vision/seg"), "Segmentation\nAuthors: Emily Zhang").unwrap();
    let o = lsfs(root, &["init"], None);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("3 files indexed"), "{}", stdout(&o));
    dir
}

#[test]
fn retrieval_prompt_end_to_end() {
    let d = corpus();
    let o = lsfs(d.path(), &["prompt", "--no-input", "Find papers in the computer-vision category authored by Emily Zhang."], None);
    assert_eq!(code(&o), 0);
    let out = stdout(&o);
    assert!(out.contains("call: retrieve_summary("), "{out}");
    assert!(out.contains("computer-vision/seg"), "{out}");
    assert!(!out.contains("nlp/mt"), "{out}");
}

#[test]
fn destructive_prompt_without_input_is_refused() {
    let d = corpus();
    let o = lsfs(d.path(), &["prompt", "--no-input", "Delete mt from nlp"], None);
    assert_eq!(code(&o), 3);
    assert!(stdout(&o).contains("no approver"), "{}", stdout(&o));
    assert!(d.path().join("nlp/mt").exists());
}

#[test]
fn interactive_answers_decide_destructive_prompts() {
    let d = corpus();
    let no = lsfs(d.path(), &["prompt", "Delete mt from nlp"], Some("n\n"));
    assert_eq!(code(&no), 3);
    assert!(String::from_utf8_lossy(&no.stderr).contains("Proceed?"));
    assert!(d.path().join("nlp/mt").exists());

    // closed stdin counts as no answer
    let eof = lsfs(d.path(), &["prompt", "Delete mt from nlp"], None);
    assert_eq!(code(&eof), 3);
    assert!(d.path().join("nlp/mt").exists());

    let yes = lsfs(d.path(), &["prompt", "Delete mt from nlp"], Some("y\n"));
    assert_eq!(code(&yes), 0, "{}", stdout(&yes));
    assert!(!d.path().join("nlp/mt").exists());

    let audit = fs::read_to_string(d.path().join(".lsfs/audit.log")).unwrap();
    let verdicts: Vec<String> = audit.lines().map(|l| serde_json::from_str::<Value>(l).unwrap()["verdict"].as_str().unwrap().to_string()).collect();
    assert_eq!(verdicts, vec!["rejected", "rejected", "approved"]);
    let ids: Vec<String> = audit.lines().map(|l| serde_json::from_str::<Value>(l).unwrap()["action_id"].as_str().unwrap().to_string()).collect();
    assert_eq!(ids, vec!["act-000001", "act-000002", "act-000003"], "ids stay unique across runs");
}

#[test]
fn gibberish_exits_with_parse_code() {
    let d = corpus();
    let o = lsfs(d.path(), &["prompt", "--json", "colorless green ideas sleep furiously"], None);
    assert_eq!(code(&o), 2);
    let t: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(t["error"]["kind"], "UnknownApi");
    assert!(t["error"]["raw_output"].as_str().unwrap().contains("unknown"));
}

#[test]
fn exec_validates_and_runs_calls() {
    let d = corpus();
    let missing = lsfs(d.path(), &["exec", "create_or_get_file", "--arg", "directory=notes", "--arg", "name=todo"], None);
    assert_eq!(code(&missing), 1, "opening a missing file fails");

    let o = lsfs(d.path(), &["exec", "create_or_get_file", "--arg", "directory=notes", "--arg", "name=todo", "--arg", "import_file=buy milk"], None);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    assert_eq!(fs::read_to_string(d.path().join("notes/todo")).unwrap(), "buy milk");

    let o = lsfs(d.path(), &["exec", "add_", "--arg", "directory=notes", "--arg", "name=todo", "--arg", "new_content=, eggs"], None);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    assert_eq!(fs::read_to_string(d.path().join("notes/todo")).unwrap(), "buy milk, eggs");

    let o = lsfs(d.path(), &["exec", "keywords_retrieve", "--arg", "keywords=Emily Zhang|Authors", "--arg", "condition=and", "--json"], None);
    assert_eq!(code(&o), 0);
    let t: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(t["outcome"]["names"].as_array().unwrap().len(), 2);

    let bad = lsfs(d.path(), &["exec", "rollback", "--arg", "name=mt", "--arg", "by=count", "--arg", "k=0"], None);
    assert_eq!(code(&bad), 2);
    let unknown = lsfs(d.path(), &["exec", "format_disk"], None);
    assert_eq!(code(&unknown), 2);
}

#[test]
fn versions_and_rollback_from_the_cli() {
    let d = corpus();
    let import = d.path().join("new-mt.txt");
    fs::write(&import, "Machine translation, revised").unwrap();
    let o = lsfs(d.path(), &["exec", "--yes", "change_summary", "--arg", "name=mt", "--arg", &format!("import_file={}", import.display())], None);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    assert_eq!(fs::read_to_string(d.path().join("nlp/mt")).unwrap(), "Machine translation, revised");

    let v = lsfs(d.path(), &["versions", "mt"], None);
    assert_eq!(code(&v), 0);
    let listing = stdout(&v);
    assert_eq!(listing.lines().count(), 1, "{listing}");
    assert!(listing.contains("Machine translation"), "{listing}");

    let r = lsfs(d.path(), &["prompt", "--yes", "Rollback the mt file to the state it was in 1 version ago."], None);
    assert_eq!(code(&r), 0, "{}", stdout(&r));
    assert_eq!(fs::read_to_string(d.path().join("nlp/mt")).unwrap(), "Machine translation\nAuthors: Emily Zhang");
}

#[test]
fn links_are_listed_and_persisted() {
    let d = corpus();
    let o = lsfs(d.path(), &["prompt", "--no-input", "Provide a link for cnn that will be active for 3 months."], None);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    let l = lsfs(d.path(), &["links"], None);
    let out = stdout(&l);
    assert_eq!(out.lines().count(), 1, "{out}");
    assert!(out.contains("nlp/cnn") && out.contains("live") && out.contains("/share/"), "{out}");
}

#[test]
fn watch_picks_up_disk_edits() {
    let d = corpus();
    fs::write(d.path().join("nlp/cnn"), "Convolutional text models, edited on disk").unwrap();
    fs::write(d.path().join("nlp/fresh"), "new file").unwrap();
    let o = lsfs(d.path(), &["watch", "--interval-ms", "100", "--iterations", "1"], None);
    assert_eq!(code(&o), 0);
    let report: Value = serde_json::from_str(stdout(&o).lines().next().unwrap()).unwrap();
    assert_eq!(report["changed"].as_array().unwrap().len(), 1);
    assert_eq!(report["created"].as_array().unwrap().len(), 1);

    let quiet = lsfs(d.path(), &["watch", "--interval-ms", "100", "--iterations", "1"], None);
    assert_eq!(stdout(&quiet), "", "nothing left to sync after a reload");

    let too_fast = lsfs(d.path(), &["watch", "--interval-ms", "10", "--iterations", "1"], None);
    assert_eq!(code(&too_fast), 1);
}

#[test]
fn root_comes_from_the_environment() {
    let d = corpus();
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_lsfs"));
    cmd.args(["prompt", "--no-input", "Find files that mention both Emily Zhang and Segmentation"]);
    for (k, _) in std::env::vars().filter(|(k, _)| k.starts_with("LSFS_")) {
        cmd.env_remove(k);
    }
    cmd.env("LSFS_ROOT", d.path());
    let o = cmd.output().unwrap();
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("computer-vision/seg"));

    let mut bare = Command::new(env!("CARGO_BIN_EXE_lsfs"));
    bare.arg("links").env_clear();
    let none = run(bare, None);
    assert_eq!(code(&none), 1);
    assert!(String::from_utf8_lossy(&none.stderr).contains("LSFS_ROOT"));
}

#[test]
fn serve_reports_port_in_use() {
    let d = corpus();
    let taken = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = taken.local_addr().unwrap().port().to_string();
    let o = lsfs(d.path(), &["serve", "--port", &port], None);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("PortInUse"), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn bench_sharing_suite() {
    let o = Command::new(env!("CARGO_BIN_EXE_lsfs")).args(["bench", "--suite", "sharing"]).output().unwrap();
    assert_eq!(code(&o), 0);
    let out = stdout(&o);
    assert!(out.starts_with("# sharing"), "{out}");
    assert!(out.contains("20\t20\t20\t0"), "{out}");
}
