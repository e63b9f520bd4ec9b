//! Backtracking search with capture unification.
//!
//! The required scope is solved first; each optional edge is then tried in
//! pattern order against the bindings made so far, and is left unbound only
//! when its scope has no extension.

use super::{CompiledPattern, EdgeKind, NodeId, ScopeId};
use crate::conllu::ParsedSentence;

pub(super) type Bindings = Vec<Option<usize>>;

pub(super) fn solve(pattern: &CompiledPattern, sentence: &ParsedSentence) -> Vec<Bindings> {
    let search = Search { pattern, sentence };
    search.scope(0, vec![None; pattern.nodes.len()])
}

struct Search<'a> {
    pattern: &'a CompiledPattern,
    sentence: &'a ParsedSentence,
}

impl Search<'_> {
    /// All complete bindings of `scope` and its nested optional scopes.
    fn scope(&self, scope: ScopeId, start: Bindings) -> Vec<Bindings> {
        let mut required = Vec::new();
        let mut work = start;
        self.assign(&self.pattern.scopes[scope].nodes, 0, &mut work, &mut required);

        let mut out = Vec::new();
        for base in required {
            let mut states = vec![base];
            for &edge in &self.pattern.scopes[scope].optional_edges {
                let child = self.scope_of_edge(edge);
                let mut next = Vec::new();
                for state in states {
                    let ext = self.scope(child, state.clone());
                    if ext.is_empty() {
                        next.push(state);
                    } else {
                        next.extend(ext);
                    }
                }
                states = next;
            }
            out.extend(states);
        }
        out
    }

    fn scope_of_edge(&self, edge: usize) -> ScopeId {
        self.pattern.nodes[self.pattern.edges[edge].to].scope
    }

    fn assign(&self, nodes: &[NodeId], k: usize, work: &mut Bindings, out: &mut Vec<Bindings>) {
        let Some(&node) = nodes.get(k) else {
            out.push(work.clone());
            return;
        };
        for cand in self.candidates(node, work) {
            if !self.consistent(node, cand, work) {
                continue;
            }
            work[node] = Some(cand);
            self.assign(nodes, k + 1, work, out);
            work[node] = None;
        }
    }

    fn candidates(&self, node: NodeId, work: &Bindings) -> Vec<usize> {
        let s = self.sentence;
        let Some(edge) = self.pattern.incoming_edge(node) else {
            return (1..=s.len()).collect();
        };
        let from = work[edge.from].expect("governing node bound before its dependents");
        match &edge.kind {
            EdgeKind::Child { rel, .. } => s
                .tokens()
                .iter()
                .filter(|t| t.head == from && rel.matches(&t.deprel))
                .map(|t| t.index)
                .collect(),
            EdgeKind::LeftSibling => {
                let head = s.token(from).expect("bound index valid").head;
                s.tokens()
                    .iter()
                    .filter(|t| t.head == head && t.index > from)
                    .map(|t| t.index)
                    .collect()
            }
        }
    }

    fn consistent(&self, node: NodeId, cand: usize, work: &Bindings) -> bool {
        let spec = &self.pattern.nodes[node];
        let token = self.sentence.token(cand).expect("candidate index valid");
        if !spec.constraint.matches(token) {
            return false;
        }
        match &spec.name {
            Some(name) => self
                .pattern
                .nodes
                .iter()
                .zip(work.iter())
                .all(|(other, bound)| match (other.name.as_ref(), bound) {
                    (Some(n), Some(b)) if n == name => *b == cand,
                    _ => true,
                }),
            None => true,
        }
    }
}
