//! Workflow definition: a DAG of jobs with control and data dependencies,
//! validation, and the built-in wordcount reference workflow.
//!
//! Everything here is immutable after construction and free of I/O except
//! [`load_workflow_file`]. The task kernels are total functions over bytes
//! with a fixed whitespace definition (ASCII space, tab, CR, LF), so job
//! outputs are bit-reproducible across runs, a precondition for verifying
//! repeatability by digest comparison.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum TaskKind {
    Split,
    Count,
    Merge,
    Generic,
}

/// One workflow job: what it runs and which logical files it consumes and
/// produces.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Job {
    pub job_id: String,
    pub task_kind: TaskKind,
    #[serde(default)]
    pub args: Vec<String>,
    #[serde(default)]
    pub input_names: Vec<String>,
    #[serde(default)]
    pub output_names: Vec<String>,
}

/// A workflow: jobs, control edges, and the workflow-level input contents.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkflowSpec {
    pub name: String,
    pub jobs: Vec<Job>,
    #[serde(default)]
    pub edges: Vec<(String, String)>,
    #[serde(default, with = "base64_inputs")]
    pub workflow_inputs: BTreeMap<String, Vec<u8>>,
}

/// Base64 encoding for input bytes so stored workflow definitions stay
/// line-oriented and inspectable.
mod base64_inputs {
    use std::collections::BTreeMap;

    use base64::engine::general_purpose::STANDARD;
    use base64::Engine;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(
        map: &BTreeMap<String, Vec<u8>>,
        ser: S,
    ) -> Result<S::Ok, S::Error> {
        let encoded: BTreeMap<&str, String> = map
            .iter()
            .map(|(k, v)| (k.as_str(), STANDARD.encode(v)))
            .collect();
        encoded.serialize(ser)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        de: D,
    ) -> Result<BTreeMap<String, Vec<u8>>, D::Error> {
        let encoded = BTreeMap::<String, String>::deserialize(de)?;
        encoded
            .into_iter()
            .map(|(k, v)| {
                STANDARD
                    .decode(&v)
                    .map(|bytes| (k, bytes))
                    .map_err(serde::de::Error::custom)
            })
            .collect()
    }
}

/// A workflow that passed validation, carrying its deterministic
/// topological order. Validation is the only constructor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "WorkflowSpec", into = "WorkflowSpec")]
pub struct ValidatedWorkflow {
    spec: WorkflowSpec,
    topo_order: Vec<String>,
}

impl ValidatedWorkflow {
    pub fn spec(&self) -> &WorkflowSpec {
        &self.spec
    }

    /// Total order of job ids consistent with every edge; ties broken by
    /// lexicographic job id.
    pub fn topo_order(&self) -> &[String] {
        &self.topo_order
    }

    pub fn job(&self, job_id: &str) -> Option<&Job> {
        self.spec.jobs.iter().find(|j| j.job_id == job_id)
    }

    /// Direct predecessors of each job, derived from the edges.
    pub fn predecessors(&self) -> BTreeMap<&str, BTreeSet<&str>> {
        let mut preds: BTreeMap<&str, BTreeSet<&str>> = self
            .spec
            .jobs
            .iter()
            .map(|j| (j.job_id.as_str(), BTreeSet::new()))
            .collect();
        for (from, to) in &self.spec.edges {
            preds.get_mut(to.as_str()).expect("validated").insert(from);
        }
        preds
    }
}

impl From<ValidatedWorkflow> for WorkflowSpec {
    fn from(wf: ValidatedWorkflow) -> Self {
        wf.spec
    }
}

impl TryFrom<WorkflowSpec> for ValidatedWorkflow {
    type Error = WorkflowError;

    fn try_from(spec: WorkflowSpec) -> Result<Self, WorkflowError> {
        validate_workflow(spec)
    }
}

#[derive(Debug, Error)]
pub enum WorkflowError {
    #[error("workflow contains a cycle")]
    CycleDetected,
    #[error("edge ({from} -> {to}) references unknown job {missing}")]
    DanglingEdge {
        from: String,
        to: String,
        missing: String,
    },
    #[error("job {job_id} consumes {input} which no predecessor produces and no workflow input provides")]
    UnsatisfiedInput { job_id: String, input: String },
    #[error("output {output} produced by more than one job (second producer: {job_id})")]
    DuplicateOutput { output: String, job_id: String },
    #[error("duplicate job id: {job_id}")]
    DuplicateJobId { job_id: String },
    #[error("job id must be nonempty")]
    EmptyJobId,
    #[error("merge input is negative: {value}")]
    NegativeCount { value: i64 },
    #[error("cannot read {path}: {source}")]
    FileRead {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {source}")]
    FileParse {
        path: PathBuf,
        source: serde_json::Error,
    },
}

/// Check every workflow invariant and fix the execution order.
///
/// The topological order is deterministic: Kahn's algorithm with the ready
/// set kept sorted by job id.
pub fn validate_workflow(spec: WorkflowSpec) -> Result<ValidatedWorkflow, WorkflowError> {
    let mut jobs_by_id: BTreeMap<&str, &Job> = BTreeMap::new();
    for job in &spec.jobs {
        if job.job_id.is_empty() {
            return Err(WorkflowError::EmptyJobId);
        }
        if jobs_by_id.insert(job.job_id.as_str(), job).is_some() {
            return Err(WorkflowError::DuplicateJobId {
                job_id: job.job_id.clone(),
            });
        }
    }

    for (from, to) in &spec.edges {
        for endpoint in [from, to] {
            if !jobs_by_id.contains_key(endpoint.as_str()) {
                return Err(WorkflowError::DanglingEdge {
                    from: from.clone(),
                    to: to.clone(),
                    missing: endpoint.clone(),
                });
            }
        }
    }

    let mut producer_of: BTreeMap<&str, &str> = BTreeMap::new();
    for job in &spec.jobs {
        for output in &job.output_names {
            if producer_of.insert(output.as_str(), job.job_id.as_str()).is_some() {
                return Err(WorkflowError::DuplicateOutput {
                    output: output.clone(),
                    job_id: job.job_id.clone(),
                });
            }
        }
    }

    // Kahn's algorithm; the BTreeSet makes tie-breaking lexicographic.
    let mut indegree: BTreeMap<&str, usize> =
        jobs_by_id.keys().map(|id| (*id, 0)).collect();
    let mut successors: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (from, to) in &spec.edges {
        *indegree.get_mut(to.as_str()).expect("checked above") += 1;
        successors.entry(from.as_str()).or_default().push(to.as_str());
    }
    let mut ready: BTreeSet<&str> = indegree
        .iter()
        .filter(|(_, d)| **d == 0)
        .map(|(id, _)| *id)
        .collect();
    let mut topo_order: Vec<String> = Vec::with_capacity(spec.jobs.len());
    while let Some(id) = ready.pop_first() {
        topo_order.push(id.to_string());
        for succ in successors.get(id).into_iter().flatten() {
            let d = indegree.get_mut(succ).expect("checked above");
            *d -= 1;
            if *d == 0 {
                ready.insert(succ);
            }
        }
    }
    if topo_order.len() != spec.jobs.len() {
        return Err(WorkflowError::CycleDetected);
    }

    // Data-dependency closure: walk in topo order accumulating ancestor
    // sets, then check each consumed name against ancestors' outputs and
    // the workflow inputs.
    let mut preds: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (from, to) in &spec.edges {
        preds.entry(to.as_str()).or_default().push(from.as_str());
    }
    let mut ancestors: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for id in &topo_order {
        let mut anc: BTreeSet<&str> = BTreeSet::new();
        for p in preds.get(id.as_str()).into_iter().flatten() {
            anc.insert(*p);
            if let Some(pa) = ancestors.get(*p) {
                anc.extend(pa.iter().copied());
            }
        }
        let job = jobs_by_id[id.as_str()];
        for input in &job.input_names {
            let satisfied = spec.workflow_inputs.contains_key(input)
                || anc
                    .iter()
                    .any(|a| jobs_by_id[a].output_names.iter().any(|o| o == input));
            if !satisfied {
                return Err(WorkflowError::UnsatisfiedInput {
                    job_id: job.job_id.clone(),
                    input: input.clone(),
                });
            }
        }
        ancestors.insert(id.as_str(), anc);
    }

    Ok(ValidatedWorkflow { spec, topo_order })
}

/// Logical file names used by the wordcount reference workflow.
pub mod wordcount_names {
    pub const INPUT: &str = "input.txt";
    pub const PART1: &str = "part1";
    pub const PART2: &str = "part2";
    pub const COUNT1: &str = "count1";
    pub const COUNT2: &str = "count2";
    pub const TOTAL: &str = "total";
}

/// The four-job diamond: SPLIT fans out to two COUNT jobs whose results a
/// MERGE job sums into `total`.
pub fn build_wordcount_workflow(input_text: &[u8]) -> WorkflowSpec {
    use wordcount_names::*;
    let job = |job_id: &str, task_kind, args: &[&str], inputs: &[&str], outputs: &[&str]| Job {
        job_id: job_id.into(),
        task_kind,
        args: args.iter().map(|s| s.to_string()).collect(),
        input_names: inputs.iter().map(|s| s.to_string()).collect(),
        output_names: outputs.iter().map(|s| s.to_string()).collect(),
    };
    WorkflowSpec {
        name: "wordcount".into(),
        jobs: vec![
            job("split", TaskKind::Split, &[INPUT, PART1, PART2], &[INPUT], &[PART1, PART2]),
            job("analysis1", TaskKind::Count, &[PART1, COUNT1], &[PART1], &[COUNT1]),
            job("analysis2", TaskKind::Count, &[PART2, COUNT2], &[PART2], &[COUNT2]),
            job("merge", TaskKind::Merge, &[COUNT1, COUNT2, TOTAL], &[COUNT1, COUNT2], &[TOTAL]),
        ],
        edges: vec![
            ("split".into(), "analysis1".into()),
            ("split".into(), "analysis2".into()),
            ("analysis1".into(), "merge".into()),
            ("analysis2".into(), "merge".into()),
        ],
        workflow_inputs: BTreeMap::from([(INPUT.to_string(), input_text.to_vec())]),
    }
}

const fn is_whitespace(b: u8) -> bool {
    matches!(b, b' ' | b'\t' | b'\r' | b'\n')
}

/// (start, end) byte spans of maximal non-whitespace runs.
fn word_spans(text: &[u8]) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut start = None;
    for (i, b) in text.iter().enumerate() {
        match (is_whitespace(*b), start) {
            (false, None) => start = Some(i),
            (true, Some(s)) => {
                spans.push((s, i));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        spans.push((s, text.len()));
    }
    spans
}

/// Split text into two halves of almost equal byte length without cutting
/// a word.
///
/// The cut goes at the word boundary nearest the byte midpoint; when two
/// boundaries are equally near, the first part takes the boundary word.
/// Part one is the prefix up to the end of its last word, part two the
/// suffix from the start of its first word.
pub fn kernel_split(text: &[u8]) -> (Vec<u8>, Vec<u8>) {
    let spans = word_spans(text);
    if spans.is_empty() {
        return (Vec::new(), Vec::new());
    }
    let total = text.len() as i64;
    // Candidate k = number of words in part one; boundary position is the
    // end of word k (0 for k = 0). Distances compared in doubled units to
    // stay in integers.
    let mut best_k = 0usize;
    let mut best_dist = total; // |2*0 - total|
    for k in 1..=spans.len() {
        let boundary = spans[k - 1].1 as i64;
        let dist = (2 * boundary - total).abs();
        if dist <= best_dist {
            best_dist = dist;
            best_k = k;
        }
    }
    let part1 = if best_k == 0 {
        Vec::new()
    } else {
        text[..spans[best_k - 1].1].to_vec()
    };
    let part2 = if best_k < spans.len() {
        text[spans[best_k].0..].to_vec()
    } else {
        Vec::new()
    };
    (part1, part2)
}

/// Number of maximal non-whitespace runs.
pub fn kernel_count(text: &[u8]) -> u64 {
    word_spans(text).len() as u64
}

/// Arithmetic sum of word counts; counts arrive as parsed integers and
/// must all be non-negative.
pub fn kernel_merge(counts: &[i64]) -> Result<u64, WorkflowError> {
    let mut total: u64 = 0;
    for &c in counts {
        if c < 0 {
            return Err(WorkflowError::NegativeCount { value: c });
        }
        total += c as u64;
    }
    Ok(total)
}

/// Workflow definition file: same shape as [`WorkflowSpec`] except that
/// inputs may be inline text, inline base64, or a reference to an external
/// file resolved relative to the definition file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorkflowFile {
    pub name: String,
    pub jobs: Vec<Job>,
    #[serde(default)]
    pub edges: Vec<(String, String)>,
    #[serde(default)]
    pub inputs: BTreeMap<String, InputSource>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputSource {
    Inline(String),
    InlineBase64(String),
    Path(PathBuf),
}

/// Load a workflow definition file, resolving referenced input files.
pub fn load_workflow_file(path: &Path) -> Result<WorkflowSpec, WorkflowError> {
    let text = fs::read_to_string(path).map_err(|source| WorkflowError::FileRead {
        path: path.to_path_buf(),
        source,
    })?;
    let file: WorkflowFile =
        serde_json::from_str(&text).map_err(|source| WorkflowError::FileParse {
            path: path.to_path_buf(),
            source,
        })?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut workflow_inputs = BTreeMap::new();
    for (name, source) in file.inputs {
        let bytes = match source {
            InputSource::Inline(s) => s.into_bytes(),
            InputSource::InlineBase64(s) => {
                use base64::Engine;
                base64::engine::general_purpose::STANDARD.decode(&s).map_err(|e| {
                    WorkflowError::FileParse {
                        path: path.to_path_buf(),
                        source: serde_json::Error::io(std::io::Error::other(format!(
                            "input {name}: invalid base64: {e}"
                        ))),
                    }
                })?
            }
            InputSource::Path(p) => {
                let resolved = if p.is_absolute() { p } else { base.join(p) };
                fs::read(&resolved).map_err(|source| WorkflowError::FileRead {
                    path: resolved.clone(),
                    source,
                })?
            }
        };
        workflow_inputs.insert(name, bytes);
    }
    Ok(WorkflowSpec {
        name: file.name,
        jobs: file.jobs,
        edges: file.edges,
        workflow_inputs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn wordcount_validates_with_expected_topo_order() {
        let wf = validate_workflow(build_wordcount_workflow(b"one two three")).unwrap();
        assert_eq!(wf.spec().jobs.len(), 4);
        assert_eq!(wf.spec().edges.len(), 4);
        assert_eq!(
            wf.topo_order(),
            ["split", "analysis1", "analysis2", "merge"]
        );
    }

    #[test]
    fn single_job_without_edges_is_valid() {
        let spec = WorkflowSpec {
            name: "solo".into(),
            jobs: vec![Job {
                job_id: "only".into(),
                task_kind: TaskKind::Count,
                args: vec![],
                input_names: vec!["in".into()],
                output_names: vec!["out".into()],
            }],
            edges: vec![],
            workflow_inputs: BTreeMap::from([("in".to_string(), b"x".to_vec())]),
        };
        assert!(validate_workflow(spec).is_ok());
    }

    #[test]
    fn two_job_cycle_is_rejected() {
        let job = |id: &str| Job {
            job_id: id.into(),
            task_kind: TaskKind::Generic,
            args: vec!["identity".into()],
            input_names: vec![],
            output_names: vec![],
        };
        let spec = WorkflowSpec {
            name: "loop".into(),
            jobs: vec![job("a"), job("b")],
            edges: vec![("a".into(), "b".into()), ("b".into(), "a".into())],
            workflow_inputs: BTreeMap::new(),
        };
        assert!(matches!(
            validate_workflow(spec),
            Err(WorkflowError::CycleDetected)
        ));
    }

    #[test]
    fn dangling_edge_names_the_missing_job() {
        let mut spec = build_wordcount_workflow(b"x");
        spec.edges.push(("merge".into(), "ghost".into()));
        match validate_workflow(spec) {
            Err(WorkflowError::DanglingEdge { missing, .. }) => assert_eq!(missing, "ghost"),
            other => panic!("expected DanglingEdge, got {other:?}"),
        }
    }

    #[test]
    fn unsatisfied_input_names_job_and_input() {
        let mut spec = build_wordcount_workflow(b"x");
        spec.workflow_inputs.clear();
        match validate_workflow(spec) {
            Err(WorkflowError::UnsatisfiedInput { job_id, input }) => {
                assert_eq!(job_id, "split");
                assert_eq!(input, "input.txt");
            }
            other => panic!("expected UnsatisfiedInput, got {other:?}"),
        }
    }

    #[test]
    fn input_produced_by_non_predecessor_is_unsatisfied() {
        // analysis1 consumes part1 but the split edge is missing, so the
        // producer is not an ancestor.
        let mut spec = build_wordcount_workflow(b"x");
        spec.edges.retain(|(from, to)| !(from == "split" && to == "analysis1"));
        match validate_workflow(spec) {
            Err(WorkflowError::UnsatisfiedInput { job_id, input }) => {
                assert_eq!(job_id, "analysis1");
                assert_eq!(input, "part1");
            }
            other => panic!("expected UnsatisfiedInput, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_output_rejected() {
        let mut spec = build_wordcount_workflow(b"x");
        spec.jobs[2].output_names = vec!["count1".into()];
        assert!(matches!(
            validate_workflow(spec),
            Err(WorkflowError::DuplicateOutput { .. })
        ));
    }

    #[test]
    fn duplicate_and_empty_job_ids_rejected() {
        let mut spec = build_wordcount_workflow(b"x");
        spec.jobs[1].job_id = "split".into();
        assert!(matches!(
            validate_workflow(spec),
            Err(WorkflowError::DuplicateJobId { .. })
        ));

        let mut spec = build_wordcount_workflow(b"x");
        spec.jobs[0].job_id = String::new();
        assert!(matches!(
            validate_workflow(spec),
            Err(WorkflowError::EmptyJobId)
        ));
    }

    #[test]
    fn split_examples() {
        // Midpoint-boundary rule applied by hand.
        let (p1, p2) = kernel_split(b"a b c d");
        assert_eq!((p1.as_slice(), p2.as_slice()), (b"a b".as_slice(), b"c d".as_slice()));

        assert_eq!(kernel_split(b""), (vec![], vec![]));

        // Single word goes to the first part per the tie rule.
        let (p1, p2) = kernel_split(b"w");
        assert_eq!((p1.as_slice(), p2.as_slice()), (b"w".as_slice(), b"".as_slice()));
    }

    #[test]
    fn count_examples() {
        assert_eq!(kernel_count(b"hello world"), 2);
        assert_eq!(kernel_count(b""), 0);
        assert_eq!(kernel_count(b"  a\n\tb  "), 2);
    }

    #[test]
    fn merge_examples() {
        assert_eq!(kernel_merge(&[3, 4]).unwrap(), 7);
        assert_eq!(kernel_merge(&[0, 0]).unwrap(), 0);
        assert_eq!(kernel_merge(&[41]).unwrap(), 41);
        assert!(matches!(
            kernel_merge(&[2, -1]),
            Err(WorkflowError::NegativeCount { value: -1 })
        ));
    }

    #[test]
    fn spec_survives_json_round_trip() {
        let spec = build_wordcount_workflow(b"some input \xff bytes");
        let json = serde_json::to_string(&spec).unwrap();
        let back: WorkflowSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, spec);
    }

    #[test]
    fn validated_workflow_deserialization_revalidates() {
        let wf = validate_workflow(build_wordcount_workflow(b"a b")).unwrap();
        let json = serde_json::to_string(&wf).unwrap();
        let back: ValidatedWorkflow = serde_json::from_str(&json).unwrap();
        assert_eq!(back, wf);

        // A serialized spec that fails validation must not deserialize.
        let mut bad = build_wordcount_workflow(b"a b");
        bad.edges.push(("merge".into(), "split".into()));
        let json = serde_json::to_string(&bad).unwrap();
        assert!(serde_json::from_str::<ValidatedWorkflow>(&json).is_err());
    }

    fn arbitrary_text() -> impl Strategy<Value = Vec<u8>> {
        proptest::collection::vec(any::<u8>(), 0..400)
    }

    /// Equal-length words joined by single spaces.
    fn equal_word_text() -> impl Strategy<Value = Vec<u8>> {
        (1usize..12, 1usize..40, "[a-z]").prop_map(|(word_len, n_words, ch)| {
            let word = ch.repeat(word_len);
            let mut words = Vec::new();
            for _ in 0..n_words {
                words.push(word.clone());
            }
            words.join(" ").into_bytes()
        })
    }

    proptest! {
        #[test]
        fn split_conserves_word_count(text in arbitrary_text()) {
            let (p1, p2) = kernel_split(&text);
            prop_assert_eq!(kernel_count(&p1) + kernel_count(&p2), kernel_count(&text));
        }

        #[test]
        fn split_parts_rejoin_to_same_word_sequence(text in arbitrary_text()) {
            let (p1, p2) = kernel_split(&text);
            let mut joined = p1.clone();
            joined.push(b' ');
            joined.extend_from_slice(&p2);
            let words = |t: &[u8]| -> Vec<Vec<u8>> {
                word_spans(t).into_iter().map(|(s, e)| t[s..e].to_vec()).collect()
            };
            prop_assert_eq!(words(&joined), words(&text));
        }

        #[test]
        fn split_balances_equal_length_words(text in equal_word_text()) {
            let (p1, p2) = kernel_split(&text);
            let (c1, c2) = (kernel_count(&p1) as i64, kernel_count(&p2) as i64);
            prop_assert!((c1 - c2).abs() <= 1, "unbalanced: {} vs {}", c1, c2);
        }

        #[test]
        fn wordcount_workflow_always_validates(text in arbitrary_text()) {
            prop_assert!(validate_workflow(build_wordcount_workflow(&text)).is_ok());
        }

        #[test]
        fn validation_is_idempotent_and_pure(text in arbitrary_text()) {
            let spec = build_wordcount_workflow(&text);
            let first = validate_workflow(spec.clone()).unwrap();
            let second = validate_workflow(first.spec().clone()).unwrap();
            prop_assert_eq!(&first, &second);
            prop_assert_eq!(first.spec(), &spec);
        }

        #[test]
        fn topo_order_respects_every_edge(text in arbitrary_text()) {
            let wf = validate_workflow(build_wordcount_workflow(&text)).unwrap();
            let pos: BTreeMap<&str, usize> = wf
                .topo_order()
                .iter()
                .enumerate()
                .map(|(i, id)| (id.as_str(), i))
                .collect();
            for (from, to) in &wf.spec().edges {
                prop_assert!(pos[from.as_str()] < pos[to.as_str()]);
            }
        }
    }
}
