use super::{
    AnchoredRegex, Attr, AttrConstraint, CompiledPattern, Edge, EdgeKind, NodeConstraint, NodeId,
    PatternError, PatternNode, RelMatcher, Scope, ScopeId,
};

pub(super) struct Parser<'a> {
    src: &'a str,
    pos: usize,
    nodes: Vec<PatternNode>,
    edges: Vec<Edge>,
    scopes: Vec<Scope>,
}

impl<'a> Parser<'a> {
    pub(super) fn new(src: &'a str) -> Self {
        Self {
            src,
            pos: 0,
            nodes: Vec::new(),
            edges: Vec::new(),
            scopes: vec![Scope {
                entry_edge: None,
                nodes: Vec::new(),
                optional_edges: Vec::new(),
            }],
        }
    }

    pub(super) fn parse(mut self) -> Result<CompiledPattern, PatternError> {
        self.skip_ws();
        if self.at_end() {
            return Err(self.error("empty pattern"));
        }
        self.expr(0)?;
        self.skip_ws();
        if !self.at_end() {
            return Err(self.error("unexpected trailing input"));
        }

        let mut incoming = vec![None; self.nodes.len()];
        for (i, e) in self.edges.iter().enumerate() {
            incoming[e.to] = Some(i);
        }
        let mut capture_names: Vec<String> =
            self.nodes.iter().filter_map(|n| n.name.clone()).collect();
        capture_names.sort();
        capture_names.dedup();

        Ok(CompiledPattern {
            source: self.src.to_string(),
            nodes: self.nodes,
            edges: self.edges,
            scopes: self.scopes,
            incoming,
            capture_names,
        })
    }

    fn at_end(&self) -> bool {
        self.pos >= self.src.len()
    }

    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn rest(&self) -> &str {
        &self.src[self.pos..]
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += c.len_utf8();
        Some(c)
    }

    fn skip_ws(&mut self) {
        while self.peek().is_some_and(char::is_whitespace) {
            self.bump();
        }
    }

    fn error(&self, message: impl Into<String>) -> PatternError {
        PatternError::Syntax {
            position: self.pos,
            message: message.into(),
        }
    }

    fn expect(&mut self, c: char) -> Result<(), PatternError> {
        self.skip_ws();
        match self.peek() {
            Some(found) if found == c => {
                self.bump();
                Ok(())
            }
            Some(found) => Err(self.error(format!("expected `{c}`, found `{found}`"))),
            None => Err(self.error(format!("expected `{c}`, found end of pattern"))),
        }
    }

    /// `atom relation*`; returns the head node of the atom.
    fn expr(&mut self, scope: ScopeId) -> Result<NodeId, PatternError> {
        let head = self.atom(scope)?;
        loop {
            self.skip_ws();
            let rest = self.rest();
            if rest.starts_with("?>") {
                self.pos += 2;
                self.child_relation(head, scope, true)?;
            } else if rest.starts_with('>') {
                self.pos += 1;
                self.child_relation(head, scope, false)?;
            } else if rest.starts_with("$++") {
                self.pos += 3;
                let edge = self.reserve_edge(head, EdgeKind::LeftSibling);
                let to = self.target(scope)?;
                self.edges[edge].to = to;
            } else {
                return Ok(head);
            }
        }
    }

    fn atom(&mut self, scope: ScopeId) -> Result<NodeId, PatternError> {
        self.skip_ws();
        match self.peek() {
            Some('(') => {
                self.bump();
                let head = self.expr(scope)?;
                self.expect(')')?;
                Ok(head)
            }
            Some('{') => self.node(scope),
            Some(c) => Err(self.error(format!("expected `{{` or `(`, found `{c}`"))),
            None => Err(self.error("expected a node, found end of pattern")),
        }
    }

    fn target(&mut self, scope: ScopeId) -> Result<NodeId, PatternError> {
        self.skip_ws();
        match self.peek() {
            Some('(') => {
                self.bump();
                let head = self.expr(scope)?;
                self.expect(')')?;
                Ok(head)
            }
            Some('{') => self.node(scope),
            Some(c) => Err(self.error(format!("expected relation target, found `{c}`"))),
            None => Err(self.error("expected relation target, found end of pattern")),
        }
    }

    fn reserve_edge(&mut self, from: NodeId, kind: EdgeKind) -> usize {
        self.edges.push(Edge {
            from,
            to: usize::MAX,
            kind,
        });
        self.edges.len() - 1
    }

    fn child_relation(
        &mut self,
        from: NodeId,
        scope: ScopeId,
        optional: bool,
    ) -> Result<(), PatternError> {
        self.skip_ws();
        let rel = match self.peek() {
            Some('/') => RelMatcher::Regex(self.regex()?),
            Some(c) if is_label_char(c) => {
                let start = self.pos;
                while self.peek().is_some_and(is_label_char) {
                    self.bump();
                }
                RelMatcher::Exact(self.src[start..self.pos].to_string())
            }
            _ => return Err(self.error("expected relation label or /regex/")),
        };
        let rel_name = self.optional_name()?;
        let edge = self.reserve_edge(
            from,
            EdgeKind::Child {
                rel,
                optional,
                rel_name,
            },
        );
        let target_scope = if optional {
            self.scopes[scope].optional_edges.push(edge);
            self.scopes.push(Scope {
                entry_edge: Some(edge),
                nodes: Vec::new(),
                optional_edges: Vec::new(),
            });
            self.scopes.len() - 1
        } else {
            scope
        };
        let to = self.target(target_scope)?;
        self.edges[edge].to = to;
        Ok(())
    }

    /// `['=' name]` with whitespace allowed around `=`.
    fn optional_name(&mut self) -> Result<Option<String>, PatternError> {
        let save = self.pos;
        self.skip_ws();
        if self.peek() != Some('=') {
            self.pos = save;
            return Ok(None);
        }
        self.bump();
        self.skip_ws();
        let start = self.pos;
        while self
            .peek()
            .is_some_and(|c| c.is_ascii_alphanumeric() || c == '_')
        {
            self.bump();
        }
        if start == self.pos {
            return Err(self.error("expected a name after `=`"));
        }
        Ok(Some(self.src[start..self.pos].to_string()))
    }

    fn node(&mut self, scope: ScopeId) -> Result<NodeId, PatternError> {
        self.expect('{')?;
        let mut constraint = NodeConstraint::default();
        self.skip_ws();
        if self.peek() == Some('}') {
            self.bump();
        } else {
            loop {
                self.skip_ws();
                match self.peek() {
                    Some('$') => {
                        self.bump();
                        constraint.is_root = true;
                    }
                    Some(c) if c.is_ascii_alphabetic() => {
                        let start = self.pos;
                        while self.peek().is_some_and(|c| c.is_ascii_alphabetic()) {
                            self.bump();
                        }
                        let key = &self.src[start..self.pos];
                        let attr = Attr::from_key(key).ok_or_else(|| PatternError::Syntax {
                            position: start,
                            message: format!("unknown attribute `{key}`"),
                        })?;
                        self.expect(':')?;
                        self.skip_ws();
                        if self.peek() != Some('/') {
                            return Err(self.error("expected /regex/ after attribute"));
                        }
                        let regex = self.regex()?;
                        constraint.attrs.push(AttrConstraint { attr, regex });
                    }
                    Some(c) => return Err(self.error(format!("unexpected `{c}` in node"))),
                    None => return Err(self.error("unclosed `{`")),
                }
                self.skip_ws();
                match self.bump() {
                    Some(';') => continue,
                    Some('}') => break,
                    Some(c) => {
                        self.pos -= c.len_utf8();
                        return Err(self.error(format!("expected `;` or `}}`, found `{c}`")));
                    }
                    None => return Err(self.error("unclosed `{`")),
                }
            }
        }
        let name = self.optional_name()?;
        let id = self.nodes.len();
        self.nodes.push(PatternNode {
            constraint,
            name,
            scope,
        });
        self.scopes[scope].nodes.push(id);
        Ok(id)
    }

    /// `/.../` with `\/` as an escaped slash; other escapes pass through to
    /// the regex engine.
    fn regex(&mut self) -> Result<AnchoredRegex, PatternError> {
        let start = self.pos;
        self.bump();
        let mut body = String::new();
        loop {
            match self.bump() {
                Some('\\') => match self.bump() {
                    Some('/') => body.push('/'),
                    Some(c) => {
                        body.push('\\');
                        body.push(c);
                    }
                    None => break,
                },
                Some('/') => {
                    return AnchoredRegex::new(&body).map_err(|e| PatternError::Regex {
                        position: start,
                        source_text: body.clone(),
                        message: e.to_string(),
                    });
                }
                Some(c) => body.push(c),
                None => break,
            }
        }
        Err(PatternError::Syntax {
            position: start,
            message: "unterminated /regex/".into(),
        })
    }
}

fn is_label_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || matches!(c, ':' | '_' | '-')
}
