//! Deterministic synthetic repositories with cross-file completion tasks.
//!
//! Each repository has API classes in their own files and client files that
//! import and call them. Every task completes a call `recv.member();` right
//! after the dot, where `member` is declared in another file and called
//! nowhere else in the repository. Some API classes have a single method,
//! which makes that method the only valid identifier at the dot. Before
//! each task line the client calls look-alike members of other classes
//! (`flushed`, `reflush` next to `flush`), so a model relying on the current
//! file is pulled towards the wrong name.

mod tasks;

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::analyzer::SourceFile;
use crate::repo_index::RepoSnapshot;

pub use tasks::{load_tasks, parse_tasks, save_tasks, CompletionTask, Cursor, TaskIoError, TaskMeta};

const VERBS: &[&str] = &[
    "flush", "reset", "encode", "decode", "parse", "render", "merge", "split", "close", "open",
    "start", "stop", "fetch", "store", "load", "save", "scan", "sort", "clear", "build", "check",
    "apply", "shift", "pack", "drain", "seal", "probe", "mark", "trace", "sync", "bind", "emit",
    "poll", "push", "pull", "grow", "rotate", "commit", "rewind", "settle", "refresh", "compact",
    "expand", "gather", "launch", "resume", "pause", "tally", "weigh", "stamp", "fold", "wrap",
    "crop", "mix", "tune", "lock", "swap", "hash", "join", "spawn",
];

const NOUNS: &[&str] = &[
    "Codec", "Buffer", "Ledger", "Relay", "Parser", "Socket", "Channel", "Cursor", "Filter",
    "Reader", "Writer", "Router", "Signal", "Sensor", "Engine", "Bucket", "Vault", "Beacon",
    "Anchor", "Pilot", "Broker", "Tracker", "Matrix", "Vector", "Record", "Sketch", "Canvas",
    "Folder", "Packet", "Stream", "Frame", "Table", "Queue", "Graph", "Lantern", "Harbor",
];

const FIELDS: &[&str] = &[
    "level", "depth", "width", "height", "total", "limit", "offset", "weight", "margin", "quota",
    "score", "phase", "ratio",
];

const PACKAGES: &[&str] = &["core", "io", "net", "util", "data", "text", "math", "sys"];

const SUFFIXES: &[&str] = &["ed", "er", "s", "ing"];
const PREFIXES: &[&str] = &["re", "pre", "un"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub seed: u64,
    pub n_repos: usize,
    pub tasks_per_repo: usize,
    /// Look-alike calls planted before each task line.
    pub distractors: usize,
    pub unique_fraction: f64,
    pub unseen_fraction: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            n_repos: 40,
            tasks_per_repo: 8,
            distractors: 2,
            unique_fraction: 0.5,
            unseen_fraction: 0.8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub repos: Vec<RepoSnapshot>,
    pub tasks: Vec<CompletionTask>,
}

#[derive(Debug, Clone)]
struct Method {
    ret: &'static str,
    name: String,
    params: Vec<(&'static str, &'static str)>,
}

#[derive(Debug, Clone)]
struct ApiClass {
    package: &'static str,
    name: String,
    fields: Vec<String>,
    methods: Vec<Method>,
}

impl ApiClass {
    fn qname(&self) -> String {
        format!("{}.{}", self.package, self.name)
    }

    fn local(&self) -> String {
        self.name.to_ascii_lowercase()
    }

    fn path(&self) -> String {
        format!("{}/{}.sub", self.package, self.name)
    }

    fn render(&self) -> String {
        let mut s = format!("package {};\n\nclass {} {{\n", self.package, self.name);
        for f in &self.fields {
            s.push_str(&format!("    int {f};\n"));
        }
        for m in &self.methods {
            let params: Vec<String> = m.params.iter().map(|(t, n)| format!("{t} {n}")).collect();
            let body = match (m.ret, m.params.first()) {
                ("str", Some((_, n))) => format!("return {n};"),
                ("str", None) => "return \"\";".to_string(),
                _ => "return 1;".to_string(),
            };
            s.push_str(&format!(
                "\n    {} {}({}) {{\n        {body}\n    }}\n",
                m.ret,
                m.name,
                params.join(", ")
            ));
        }
        s.push_str("}\n");
        s
    }

    /// A call statement for `method`, with literal arguments.
    fn call(&self, m: &Method) -> String {
        let args: Vec<&str> = m
            .params
            .iter()
            .map(|(t, _)| if *t == "str" { "\"a\"" } else { "1" })
            .collect();
        format!("{}.{}({});", self.local(), m.name, args.join(", "))
    }
}

/// One client method body under construction.
struct Body {
    lines: Vec<String>,
}

struct Target {
    class: usize,
    unique: bool,
    member: String,
}

struct RepoGen<'a> {
    rng: &'a mut ChaCha8Rng,
    cfg: &'a GenConfig,
    name: String,
}

fn variants(word: &str) -> Vec<String> {
    SUFFIXES
        .iter()
        .map(|s| format!("{word}{s}"))
        .chain(PREFIXES.iter().map(|p| format!("{p}{word}")))
        .collect()
}

impl RepoGen<'_> {
    fn generate(&mut self, task_offset: usize) -> (RepoSnapshot, Vec<CompletionTask>) {
        let n = self.cfg.tasks_per_repo;
        let mut verbs: Vec<&str> = VERBS.to_vec();
        verbs.shuffle(self.rng);
        let mut verbs = verbs.into_iter();
        let mut nouns: Vec<&str> = NOUNS.to_vec();
        nouns.shuffle(self.rng);
        let mut nouns = nouns.into_iter();
        let mut fields: Vec<&str> = FIELDS.to_vec();
        fields.shuffle(self.rng);
        let mut fields = fields.into_iter();
        let mut packages: Vec<&str> = PACKAGES.to_vec();
        packages.shuffle(self.rng);
        let api_pkgs = [packages[0], packages[1]];

        let n_unique = ((self.cfg.unique_fraction * n as f64).round() as usize).min(n);
        let mut unique_flags: Vec<bool> = (0..n).map(|i| i < n_unique).collect();
        unique_flags.shuffle(self.rng);
        let n_seen = n - ((self.cfg.unseen_fraction * n as f64).round() as usize).min(n);
        let mut seen_flags: Vec<bool> = (0..n).map(|i| i < n_seen).collect();
        seen_flags.shuffle(self.rng);

        // Target classes: one per task. Single-method classes hold only the
        // target; the others add called siblings and sometimes a field.
        let mut classes: Vec<ApiClass> = Vec::new();
        let mut targets = Vec::new();
        let mut used_names: BTreeSet<String> = BTreeSet::new();
        for &unique in &unique_flags {
            let target = verbs.next().expect("enough verbs").to_string();
            used_names.insert(target.clone());
            let mut methods = vec![Method {
                ret: "int",
                name: target.clone(),
                params: vec![],
            }];
            let mut class_fields = Vec::new();
            if !unique {
                for k in 0..2 {
                    let name = verbs.next().expect("enough verbs").to_string();
                    used_names.insert(name.clone());
                    methods.push(if k == 0 {
                        Method {
                            ret: "int",
                            name,
                            params: vec![],
                        }
                    } else {
                        Method {
                            ret: "str",
                            name,
                            params: vec![("str", "text")],
                        }
                    });
                }
                methods.shuffle(self.rng);
                if self.rng.gen_bool(0.5) {
                    let f = fields.next().expect("enough fields").to_string();
                    used_names.insert(f.clone());
                    class_fields.push(f);
                }
            }
            targets.push(Target {
                class: classes.len(),
                unique,
                member: target,
            });
            classes.push(ApiClass {
                package: api_pkgs[self.rng.gen_range(0..2)],
                name: nouns.next().expect("enough nouns").to_string(),
                fields: class_fields,
                methods,
            });
        }

        // Look-alike members, spread over two distractor classes.
        let n_distractor_classes = 2;
        let first_distractor = classes.len();
        for _ in 0..n_distractor_classes {
            classes.push(ApiClass {
                package: api_pkgs[self.rng.gen_range(0..2)],
                name: nouns.next().expect("enough nouns").to_string(),
                fields: vec![],
                methods: vec![],
            });
        }
        let mut lookalikes: Vec<Vec<(usize, usize)>> = Vec::new();
        for t in &targets {
            let mut vs: Vec<String> = variants(&t.member)
                .into_iter()
                .filter(|v| !used_names.contains(v))
                .collect();
            vs.shuffle(self.rng);
            let mut refs = Vec::new();
            for v in vs.into_iter().take(self.cfg.distractors) {
                used_names.insert(v.clone());
                let dc = first_distractor + self.rng.gen_range(0..n_distractor_classes);
                classes[dc].methods.push(Method {
                    ret: "int",
                    name: v,
                    params: vec![],
                });
                refs.push((dc, classes[dc].methods.len() - 1));
            }
            lookalikes.push(refs);
        }
        for class in &mut classes[first_distractor..] {
            if class.methods.is_empty() {
                let name = verbs.next().expect("enough verbs").to_string();
                class.methods.push(Method {
                    ret: "int",
                    name,
                    params: vec![],
                });
            }
        }

        // Members that may be called anywhere: everything except targets.
        let callable: Vec<(usize, usize)> = classes
            .iter()
            .enumerate()
            .flat_map(|(ci, c)| (0..c.methods.len()).map(move |mi| (ci, mi)))
            .filter(|&(ci, mi)| !targets.iter().any(|t| t.member == classes[ci].methods[mi].name))
            .collect();

        let mut files: Vec<SourceFile> = classes.iter().map(|c| SourceFile::new(c.path(), c.render())).collect();
        let mut tasks = Vec::new();
        let per_file = 2;
        let n_files = n.div_ceil(per_file).max(1);
        for fi in 0..n_files {
            let class_name = format!("App{fi}");
            let mut imports: Vec<usize> = Vec::new();
            let mut methods: Vec<(Body, Option<usize>)> = Vec::new();
            for ti in (fi * per_file)..((fi + 1) * per_file).min(n) {
                let body = self.task_body(&classes, &targets[ti], &lookalikes[ti], &callable, &mut imports);
                methods.push((body, Some(ti)));
            }
            methods.push((self.filler_body(&classes, &callable, &mut imports), None));
            let (text, cursors) = render_client(&class_name, &classes, &imports, &methods);
            let path = format!("app/{class_name}.sub");
            for (ti, (line, col)) in cursors {
                let t = &targets[ti];
                let class = &classes[t.class];
                let offset: usize = text.split_inclusive('\n').take(line).map(str::len).sum::<usize>() + col;
                let line_end = text[offset..].find('\n').map_or(text.len(), |e| offset + e);
                let mut other = Map::new();
                other.insert("target_class".into(), Value::String(class.qname()));
                other.insert("target_member".into(), Value::String(t.member.clone()));
                tasks.push(CompletionTask {
                    task_id: format!("{}/{}", self.name, task_offset + ti),
                    repo: self.name.clone(),
                    file: path.clone(),
                    prompt: text[..offset].to_string(),
                    groundtruth: text[offset..line_end].to_string(),
                    cursor: Cursor { line, col },
                    meta: TaskMeta {
                        unique_valid: t.unique,
                        unseen: !seen_flags[ti],
                        other,
                    },
                    extra: Map::new(),
                });
            }
            files.push(SourceFile::new(path, text));
        }
        tasks.sort_by_key(|t| t.task_id.split('/').nth(1).and_then(|n| n.parse::<usize>().ok()));
        (RepoSnapshot::new(format!("repos/{}", self.name), self.name.clone(), files), tasks)
    }

    fn declare(&mut self, classes: &[ApiClass], ci: usize, body: &mut Body, declared: &mut Vec<usize>, imports: &mut Vec<usize>) {
        if !declared.contains(&ci) {
            declared.push(ci);
            let c = &classes[ci];
            body.lines.push(format!("{} {} = {}();", c.name, c.local(), c.name));
        }
        if !imports.contains(&ci) {
            imports.push(ci);
        }
    }

    fn task_body(
        &mut self,
        classes: &[ApiClass],
        target: &Target,
        lookalikes: &[(usize, usize)],
        callable: &[(usize, usize)],
        imports: &mut Vec<usize>,
    ) -> Body {
        let mut body = Body { lines: vec![] };
        let mut declared = Vec::new();
        let member = target.member.as_str();
        let mut calls: Vec<(usize, usize)> = lookalikes.to_vec();
        let class = &classes[target.class];
        if !target.unique {
            for (mi, m) in class.methods.iter().enumerate() {
                if m.name != member {
                    calls.push((target.class, mi));
                }
            }
        }
        let noise: Vec<(usize, usize)> = callable.iter().copied().filter(|&(ci, _)| ci != target.class).collect();
        calls.extend(noise.choose_multiple(self.rng, 2).copied());
        calls.shuffle(self.rng);
        self.declare(classes, target.class, &mut body, &mut declared, imports);
        for &(ci, _) in &calls {
            self.declare(classes, ci, &mut body, &mut declared, imports);
        }
        if !target.unique && !class.fields.is_empty() {
            body.lines.push(format!("int {0} = {1}.{0};", class.fields[0], class.local()));
        }
        for &(ci, mi) in &calls {
            body.lines.push(classes[ci].call(&classes[ci].methods[mi]));
        }
        body.lines.push(format!("{}.\u{0}{member}();", class.local()));
        if let Some(&(ci, mi)) = lookalikes.first() {
            body.lines.push(classes[ci].call(&classes[ci].methods[mi]));
        }
        body
    }

    fn filler_body(&mut self, classes: &[ApiClass], callable: &[(usize, usize)], imports: &mut Vec<usize>) -> Body {
        let mut body = Body { lines: vec![] };
        let mut declared = Vec::new();
        let calls: Vec<(usize, usize)> = callable.choose_multiple(self.rng, 3).copied().collect();
        for &(ci, _) in &calls {
            self.declare(classes, ci, &mut body, &mut declared, imports);
        }
        for &(ci, mi) in &calls {
            body.lines.push(classes[ci].call(&classes[ci].methods[mi]));
        }
        body
    }
}

/// Task index and `(line, col)` of its cursor.
type TaskCursor = (usize, (usize, usize));

/// Render a client file. A NUL in a body line marks a task cursor.
fn render_client(
    name: &str,
    classes: &[ApiClass],
    imports: &[usize],
    methods: &[(Body, Option<usize>)],
) -> (String, Vec<TaskCursor>) {
    let mut lines: Vec<String> = vec!["package app;".into(), String::new()];
    lines.extend(imports.iter().map(|&ci| format!("import {};", classes[ci].qname())));
    lines.push(String::new());
    lines.push(format!("class {name} {{"));
    lines.push("    int total;".into());
    let mut cursors = Vec::new();
    for (mi, (body, task)) in methods.iter().enumerate() {
        lines.push(String::new());
        lines.push(format!("    void run{mi}() {{"));
        for l in &body.lines {
            let full = format!("        {l}");
            match (full.find('\u{0}'), task) {
                (Some(col), Some(ti)) => {
                    cursors.push((*ti, (lines.len(), col)));
                    lines.push(full.replace('\u{0}', ""));
                }
                _ => lines.push(full),
            }
        }
        lines.push("    }".into());
    }
    lines.push("}".into());
    (lines.join("\n") + "\n", cursors)
}

/// Generate `cfg.n_repos` repositories and their tasks.
pub fn generate(cfg: &GenConfig) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut repos = Vec::new();
    let mut tasks = Vec::new();
    for r in 0..cfg.n_repos {
        let mut g = RepoGen {
            rng: &mut rng,
            cfg,
            name: format!("repo{r:03}"),
        };
        let (repo, ts) = g.generate(0);
        repos.push(repo);
        tasks.extend(ts);
    }
    Corpus { repos, tasks }
}

/// Training texts for `repo`: its files with the cursor line of every
/// unseen task removed.
pub fn training_texts(repo: &RepoSnapshot, tasks: &[CompletionTask]) -> Vec<String> {
    repo.files()
        .iter()
        .map(|f| {
            let held: BTreeSet<usize> = tasks
                .iter()
                .filter(|t| t.repo == repo.name && t.file == f.path && t.meta.unseen)
                .map(|t| t.cursor.line)
                .collect();
            if held.is_empty() {
                return f.text.clone();
            }
            f.text
                .split_inclusive('\n')
                .enumerate()
                .filter(|(i, _)| !held.contains(i))
                .map(|(_, l)| l)
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analyzer::{valid_identifiers_at, check_line};
    use crate::evalkit::metrics::extract_identifiers;
    use crate::repo_index::build_index;

    fn small() -> GenConfig {
        GenConfig {
            n_repos: 3,
            ..GenConfig::default()
        }
    }

    #[test]
    fn deterministic() {
        let a = generate(&small());
        let b = generate(&small());
        assert_eq!(a.repos, b.repos);
        assert_eq!(a.tasks, b.tasks);
        let c = generate(&GenConfig { seed: 2, ..small() });
        assert_ne!(a.tasks, c.tasks);
    }

    #[test]
    fn tasks_are_valid_cross_file_completions() {
        let corpus = generate(&small());
        assert_eq!(corpus.tasks.len(), 24);
        for repo in &corpus.repos {
            assert!(repo.files().len() >= 3);
            let index = build_index(repo).unwrap();
            assert!(index.skipped().next().is_none());
            for t in corpus.tasks.iter().filter(|t| t.repo == repo.name) {
                let file = repo.file(&t.file).unwrap();
                assert!(file.text.starts_with(&t.prompt));
                assert_eq!(file.offset_of(t.cursor.line, t.cursor.col), Some(t.prompt.len()));
                let member = t.meta.other["target_member"].as_str().unwrap();
                assert_eq!(t.groundtruth, format!("{member}();"));
                let prefix = SourceFile::new(&t.file, t.prompt.as_str());
                let valid = valid_identifiers_at(&prefix, t.prompt.len(), &index).unwrap();
                assert!(valid.contains(member), "{}", t.task_id);
                assert_eq!(valid.len() == 1, t.meta.unique_valid, "{}", t.task_id);
                assert!(check_line(&prefix, t.prompt.len(), &t.groundtruth, &index).passed);
                let declared_in = index.file_of(t.meta.other["target_class"].as_str().unwrap()).unwrap();
                assert_ne!(declared_in, t.file);
                if t.meta.unseen {
                    assert!(!extract_identifiers(&t.prompt).iter().any(|i| i == member));
                }
                // The target member is called only on the task line.
                let calls: usize = repo
                    .files()
                    .iter()
                    .map(|f| f.text.matches(&format!(".{member}(")).count())
                    .sum();
                assert_eq!(calls, 1, "{}", t.task_id);
            }
        }
    }

    #[test]
    fn held_out_lines_removed() {
        let corpus = generate(&small());
        let repo = &corpus.repos[0];
        let texts = training_texts(repo, &corpus.tasks);
        for t in corpus.tasks.iter().filter(|t| t.repo == repo.name) {
            let member = t.meta.other["target_member"].as_str().unwrap();
            let present = texts.iter().any(|x| x.contains(&format!(".{member}(")));
            assert_eq!(present, !t.meta.unseen);
        }
    }

    #[test]
    fn fractions() {
        let corpus = generate(&GenConfig::default());
        let n = corpus.tasks.len();
        assert_eq!(n, 320);
        assert_eq!(corpus.tasks.iter().filter(|t| t.meta.unique_valid).count(), 160);
        assert_eq!(corpus.tasks.iter().filter(|t| t.meta.unseen).count(), 240);
    }
}
