//! Bracketed (Penn Treebank style) constituency trees.
//!
//! Leaves are pre-terminals: `(DT the)` is a single node with label `DT` and
//! token `the`. Spans are half-open token ranges assigned left to right.
//!
//! Normalisation applied while reading:
//!
//! * functional suffixes are stripped (`NP-SBJ-1` becomes `NP`, `PP=2` becomes `PP`);
//!   labels that start with `-` (`-LRB-`, `-NONE-`) are kept verbatim;
//! * `S'` is read as `SBAR`;
//! * an unlabeled outer bracket, as found in `.mrg` files, becomes `ROOT`;
//! * empty elements (`-NONE-` leaves) are removed together with any constituent
//!   that dominates nothing else. Pass [`ReadOptions::keep_empty_elements`] to
//!   keep them.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Half-open token range `[start, end)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "(usize, usize)", into = "(usize, usize)")]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn contains(&self, other: &Span) -> bool {
        self.start <= other.start && other.end <= self.end
    }
}

impl From<(usize, usize)> for Span {
    fn from((start, end): (usize, usize)) -> Self {
        Span { start, end }
    }
}

impl From<Span> for (usize, usize) {
    fn from(span: Span) -> Self {
        (span.start, span.end)
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {})", self.start, self.end)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConstituencyTree {
    label: String,
    children: Vec<ConstituencyTree>,
    token: Option<String>,
    span: Span,
}

/// A constituent of a tree, detached from the tree.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Constituent {
    pub tag: String,
    pub tokens: Vec<String>,
    pub span: Span,
    /// Child indices leading from the root to the node.
    pub node_path: Vec<usize>,
    /// Tag of the first pre-terminal under the node.
    pub first_pos: String,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct ReadOptions {
    pub keep_empty_elements: bool,
}

impl ConstituencyTree {
    /// Builds a pre-terminal. The span is fixed up by [`ConstituencyTree::node`]
    /// or [`ConstituencyTree::reindex`].
    pub fn leaf(label: impl Into<String>, token: impl Into<String>) -> Self {
        ConstituencyTree {
            label: label.into(),
            children: Vec::new(),
            token: Some(token.into()),
            span: Span::new(0, 1),
        }
    }

    /// Builds an internal node over `children` and reassigns spans from 0.
    ///
    /// Panics if `children` is empty.
    pub fn node(label: impl Into<String>, children: Vec<ConstituencyTree>) -> Self {
        assert!(!children.is_empty(), "internal node without children");
        let mut tree = ConstituencyTree {
            label: label.into(),
            children,
            token: None,
            span: Span::new(0, 0),
        };
        tree.reindex();
        tree
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn children(&self) -> &[ConstituencyTree] {
        &self.children
    }

    pub fn token(&self) -> Option<&str> {
        self.token.as_deref()
    }

    pub fn span(&self) -> Span {
        self.span
    }

    pub fn is_leaf(&self) -> bool {
        self.token.is_some()
    }

    /// Reassigns spans left to right starting at 0.
    pub fn reindex(&mut self) {
        self.assign_spans(0);
    }

    fn assign_spans(&mut self, start: usize) -> usize {
        if self.is_leaf() {
            self.span = Span::new(start, start + 1);
            return start + 1;
        }
        let mut pos = start;
        for child in &mut self.children {
            pos = child.assign_spans(pos);
        }
        self.span = Span::new(start, pos);
        pos
    }

    /// Leaf tokens in sentence order.
    pub fn tokens(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(self.span.len());
        self.for_each_leaf(&mut |leaf| out.push(leaf.token.clone().unwrap_or_default()));
        out
    }

    /// Pre-terminal tags in sentence order.
    pub fn pos_tags(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(self.span.len());
        self.for_each_leaf(&mut |leaf| out.push(leaf.label.clone()));
        out
    }

    fn for_each_leaf<'a>(&'a self, f: &mut impl FnMut(&'a ConstituencyTree)) {
        if self.is_leaf() {
            f(self);
        } else {
            for child in &self.children {
                child.for_each_leaf(f);
            }
        }
    }

    pub fn node_count(&self) -> usize {
        1 + self.children.iter().map(|c| c.node_count()).sum::<usize>()
    }

    /// Resolves a path of child indices.
    pub fn node_at(&self, path: &[usize]) -> Option<&ConstituencyTree> {
        let mut node = self;
        for &i in path {
            node = node.children.get(i)?;
        }
        Some(node)
    }

    /// Visits every node in pre-order together with its path.
    pub fn walk<'a>(&'a self, f: &mut impl FnMut(&[usize], &'a ConstituencyTree)) {
        let mut path = Vec::new();
        self.walk_inner(&mut path, f);
    }

    fn walk_inner<'a>(
        &'a self,
        path: &mut Vec<usize>,
        f: &mut impl FnMut(&[usize], &'a ConstituencyTree),
    ) {
        f(path, self);
        for (i, child) in self.children.iter().enumerate() {
            path.push(i);
            child.walk_inner(path, f);
            path.pop();
        }
    }

    fn first_pos(&self) -> &str {
        let mut node = self;
        while let Some(first) = node.children.first() {
            node = first;
        }
        &node.label
    }
}

/// Strips functional suffixes and maps `S'` to `SBAR`.
pub fn normalize_label(raw: &str) -> String {
    if raw.is_empty() {
        return "ROOT".to_string();
    }
    if raw == "S'" {
        return "SBAR".to_string();
    }
    if raw.starts_with('-') {
        return raw.to_string();
    }
    let base = raw
        .split(['-', '='])
        .next()
        .unwrap_or(raw);
    if base.is_empty() {
        raw.to_string()
    } else {
        base.to_string()
    }
}

struct Reader<'a> {
    text: &'a str,
    pos: usize,
}

impl<'a> Reader<'a> {
    fn skip_ws(&mut self) {
        let rest = &self.text[self.pos..];
        let trimmed = rest.trim_start();
        self.pos += rest.len() - trimmed.len();
    }

    fn peek(&self) -> Option<char> {
        self.text[self.pos..].chars().next()
    }

    fn err(&self, offset: usize, message: impl Into<String>) -> Error {
        Error::Parse {
            offset,
            message: message.into(),
        }
    }

    fn atom(&mut self) -> &'a str {
        let start = self.pos;
        let rest = &self.text[start..];
        let len = rest
            .find(|c: char| c.is_whitespace() || c == '(' || c == ')')
            .unwrap_or(rest.len());
        self.pos += len;
        &self.text[start..start + len]
    }

    /// Reads `( label child* )` where children are trees or a single token.
    fn tree(&mut self) -> Result<Raw> {
        self.skip_ws();
        match self.peek() {
            Some('(') => self.pos += 1,
            Some(_) => return Err(self.err(self.pos, "expected '('")),
            None => return Err(self.err(self.pos, "unexpected end of input, expected '('")),
        }
        self.skip_ws();
        let label = match self.peek() {
            Some('(') | Some(')') => "",
            Some(_) => self.atom(),
            None => return Err(self.err(self.pos, "unexpected end of input")),
        };
        let mut children = Vec::new();
        let mut token = None;
        loop {
            self.skip_ws();
            match self.peek() {
                None => return Err(self.err(self.pos, "unbalanced parentheses: missing ')'")),
                Some(')') => {
                    self.pos += 1;
                    break;
                }
                Some('(') => {
                    if token.is_some() {
                        return Err(self.err(self.pos, "subtree after a terminal token"));
                    }
                    children.push(self.tree()?);
                }
                Some(_) => {
                    let at = self.pos;
                    if token.is_some() || !children.is_empty() {
                        return Err(self.err(at, "terminal token mixed with subtrees"));
                    }
                    token = Some(self.atom().to_string());
                }
            }
        }
        if token.is_none() && children.is_empty() {
            return Err(self.err(self.pos, "empty constituent"));
        }
        Ok(Raw {
            label: label.to_string(),
            children,
            token,
        })
    }
}

struct Raw {
    label: String,
    children: Vec<Raw>,
    token: Option<String>,
}

impl Raw {
    fn build(self, opts: ReadOptions) -> Option<ConstituencyTree> {
        if let Some(token) = self.token {
            if !opts.keep_empty_elements && self.label == "-NONE-" {
                return None;
            }
            return Some(ConstituencyTree {
                label: normalize_label(&self.label),
                children: Vec::new(),
                token: Some(token),
                span: Span::new(0, 1),
            });
        }
        let children: Vec<ConstituencyTree> = self
            .children
            .into_iter()
            .filter_map(|c| c.build(opts))
            .collect();
        if children.is_empty() {
            return None;
        }
        Some(ConstituencyTree {
            label: normalize_label(&self.label),
            children,
            token: None,
            span: Span::new(0, 0),
        })
    }
}

/// Parses a single bracketed tree. Trailing non-whitespace input is an error.
pub fn parse_bracketed(text: &str) -> Result<ConstituencyTree> {
    parse_bracketed_with(text, ReadOptions::default())
}

pub fn parse_bracketed_with(text: &str, opts: ReadOptions) -> Result<ConstituencyTree> {
    if text.trim().is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut reader = Reader { text, pos: 0 };
    let raw = reader.tree()?;
    reader.skip_ws();
    if reader.pos < text.len() {
        return Err(reader.err(reader.pos, "trailing input after tree"));
    }
    finish(raw, opts, 0)
}

fn finish(raw: Raw, opts: ReadOptions, offset: usize) -> Result<ConstituencyTree> {
    let mut tree = raw.build(opts).ok_or(Error::Parse {
        offset,
        message: "tree contains only empty elements".into(),
    })?;
    tree.reindex();
    Ok(tree)
}

/// Parses every tree in `text`. Records may be separated by blank lines,
/// newlines or nothing at all.
pub fn parse_many(text: &str) -> Result<Vec<ConstituencyTree>> {
    parse_many_with(text, ReadOptions::default())
}

pub fn parse_many_with(text: &str, opts: ReadOptions) -> Result<Vec<ConstituencyTree>> {
    let mut reader = Reader { text, pos: 0 };
    let mut out = Vec::new();
    loop {
        reader.skip_ws();
        if reader.pos >= text.len() {
            break;
        }
        let start = reader.pos;
        let raw = reader.tree()?;
        // Sentences that consist of empty elements only are skipped.
        if let Ok(tree) = finish(raw, opts, start) {
            out.push(tree);
        }
    }
    if out.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(out)
}

/// Renders a tree in bracketed notation on a single line.
pub fn render_bracketed(tree: &ConstituencyTree) -> String {
    let mut out = String::new();
    render_into(tree, &mut out);
    out
}

fn render_into(tree: &ConstituencyTree, out: &mut String) {
    out.push('(');
    out.push_str(&tree.label);
    if let Some(token) = &tree.token {
        out.push(' ');
        out.push_str(token);
    }
    for child in &tree.children {
        out.push(' ');
        render_into(child, out);
    }
    out.push(')');
}

impl fmt::Display for ConstituencyTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&render_bracketed(self))
    }
}

/// One constituent per node, pre-order, root first.
pub fn enumerate_constituents(tree: &ConstituencyTree) -> Vec<Constituent> {
    let tokens = tree.tokens();
    let mut out = Vec::with_capacity(tree.node_count());
    tree.walk(&mut |path, node| {
        out.push(Constituent {
            tag: node.label.clone(),
            tokens: tokens[node.span.start..node.span.end].to_vec(),
            span: node.span,
            node_path: path.to_vec(),
            first_pos: node.first_pos().to_string(),
        });
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const CAT: &str = "(S (NP (DT the) (NN cat)) (VP (VBD sat)))";

    #[test]
    fn parses_three_leaf_example() {
        let t = parse_bracketed(CAT).unwrap();
        assert_eq!(t.label(), "S");
        assert_eq!(t.span(), Span::new(0, 3));
        assert_eq!(t.tokens(), vec!["the", "cat", "sat"]);
        assert_eq!(t.children()[1].span(), Span::new(2, 3));
    }

    #[test]
    fn parses_single_leaf() {
        let t = parse_bracketed("(X (Y a))").unwrap();
        assert_eq!(t.label(), "X");
        assert_eq!(t.span(), Span::new(0, 1));
        assert_eq!(t.node_count(), 2);

        let leaf = parse_bracketed("(X a)").unwrap();
        assert!(leaf.is_leaf());
        assert_eq!(render_bracketed(&leaf), "(X a)");
    }

    #[test]
    fn unbalanced_input_reports_offset() {
        match parse_bracketed("(S (NP (DT the)") {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 15),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_input_is_rejected() {
        assert!(matches!(parse_bracketed("   \n"), Err(Error::EmptyInput)));
        assert!(matches!(parse_many(""), Err(Error::EmptyInput)));
    }

    #[test]
    fn stray_closing_paren_is_an_error() {
        assert!(matches!(
            parse_bracketed("(X a))"),
            Err(Error::Parse { offset: 5, .. })
        ));
    }

    #[test]
    fn labels_are_normalized() {
        let t = parse_bracketed("( (S (NP-SBJ-1 (PRP he)) (S' (-NONE- *T*)) (VP (VBD left) (-LRB- -LRB-))))")
            .unwrap();
        assert_eq!(t.label(), "ROOT");
        let s = &t.children()[0];
        assert_eq!(s.children()[0].label(), "NP");
        // the S' only held an empty element and disappears
        assert_eq!(s.children().len(), 2);
        assert_eq!(s.children()[1].children()[1].label(), "-LRB-");
        assert_eq!(t.tokens(), vec!["he", "left", "-LRB-"]);
        assert_eq!(normalize_label("S'"), "SBAR");
        assert_eq!(normalize_label("PP=2"), "PP");
    }

    #[test]
    fn empty_elements_can_be_kept() {
        let opts = ReadOptions {
            keep_empty_elements: true,
        };
        let t = parse_bracketed_with("(S (NP (-NONE- *)) (VP (VBD left)))", opts).unwrap();
        assert_eq!(t.tokens(), vec!["*", "left"]);
    }

    #[test]
    fn parse_many_reads_all_records() {
        let text = format!("{CAT}\n\n(X (Y a))\n( (S (NP (PRP I)) (VP (VBD ran))) )");
        let trees = parse_many(&text).unwrap();
        assert_eq!(trees.len(), 3);
        assert_eq!(trees[2].label(), "ROOT");
    }

    #[test]
    fn round_trip_of_example() {
        let t = parse_bracketed(CAT).unwrap();
        let rendered = render_bracketed(&t);
        assert_eq!(rendered, CAT);
        assert_eq!(parse_bracketed(&rendered).unwrap(), t);
    }

    #[test]
    fn deep_unary_chain_round_trips() {
        let mut t = ConstituencyTree::leaf("NN", "x");
        for i in 0..50 {
            t = ConstituencyTree::node(format!("X{i}"), vec![t]);
        }
        assert_eq!(t.node_count(), 51);
        assert_eq!(parse_bracketed(&render_bracketed(&t)).unwrap(), t);
    }

    #[test]
    fn constituents_cover_every_node() {
        let t = parse_bracketed(CAT).unwrap();
        let cons = enumerate_constituents(&t);
        // S, NP, DT, NN, VP, VBD
        assert_eq!(cons.len(), 6);
        let tags: Vec<_> = cons.iter().map(|c| c.tag.as_str()).collect();
        assert_eq!(tags, ["S", "NP", "DT", "NN", "VP", "VBD"]);
        assert_eq!(cons[1].tokens, vec!["the", "cat"]);
        assert_eq!(cons[1].first_pos, "DT");
        assert_eq!(cons[4].node_path, vec![1]);
        for c in &cons {
            assert_eq!(c.tokens.len(), c.span.len());
            assert_eq!(t.node_at(&c.node_path).unwrap().label(), c.tag);
        }

        let single = parse_bracketed("(X a)").unwrap();
        assert_eq!(enumerate_constituents(&single).len(), 1);
    }
}
