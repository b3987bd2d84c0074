//! Penn-Treebank bracket trees.
//!
//! `(S (NP (PRP She)) (VP (VBD laughed)))` parses into nested [`ConstTree`]
//! nodes; every node records the token range it governs.

use std::fmt;

use crate::corpus::Span;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConstTree {
    pub label: String,
    pub children: Vec<ConstTree>,
    /// Leaf word, set only on pre-terminals.
    pub token: Option<String>,
    pub leaf_span: Span,
}

impl ConstTree {
    pub fn is_preterminal(&self) -> bool {
        self.token.is_some()
    }

    pub fn num_leaves(&self) -> usize {
        self.leaf_span.end - self.leaf_span.start
    }

    /// Pre-order traversal.
    pub fn nodes(&self) -> Vec<&ConstTree> {
        let mut out = Vec::new();
        let mut stack = vec![self];
        while let Some(node) = stack.pop() {
            out.push(node);
            stack.extend(node.children.iter().rev());
        }
        out
    }
}

impl fmt::Display for ConstTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.token {
            Some(token) => write!(f, "({} {})", self.label, token),
            None => {
                write!(f, "({}", self.label)?;
                for child in &self.children {
                    write!(f, " {child}")?;
                }
                f.write_str(")")
            }
        }
    }
}

/// Left-to-right leaf words.
pub fn leaves(tree: &ConstTree) -> Vec<String> {
    tree.nodes()
        .into_iter()
        .filter_map(|n| n.token.clone())
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
enum Tok<'a> {
    Open(usize),
    Close(usize),
    Atom(usize, &'a str),
}

fn lex(text: &str) -> Vec<Tok<'_>> {
    let mut toks = Vec::new();
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'(' => {
                toks.push(Tok::Open(i));
                i += 1;
            }
            b')' => {
                toks.push(Tok::Close(i));
                i += 1;
            }
            c if c.is_ascii_whitespace() => i += 1,
            _ => {
                let start = i;
                while i < bytes.len()
                    && !bytes[i].is_ascii_whitespace()
                    && bytes[i] != b'('
                    && bytes[i] != b')'
                {
                    i += 1;
                }
                toks.push(Tok::Atom(start, &text[start..i]));
            }
        }
    }
    toks
}

struct Parser<'a> {
    toks: Vec<Tok<'a>>,
    pos: usize,
    next_leaf: usize,
    end_offset: usize,
}

impl<'a> Parser<'a> {
    fn err(&self, offset: usize, message: impl Into<String>) -> Error {
        Error::TreeParse {
            offset,
            message: message.into(),
        }
    }

    fn offset(&self) -> usize {
        match self.toks.get(self.pos) {
            Some(Tok::Open(o)) | Some(Tok::Close(o)) | Some(Tok::Atom(o, _)) => *o,
            None => self.end_offset,
        }
    }

    fn node(&mut self) -> Result<ConstTree> {
        let open = match self.toks.get(self.pos) {
            Some(Tok::Open(o)) => *o,
            _ => return Err(self.err(self.offset(), "expected `(`")),
        };
        self.pos += 1;
        // Unlabeled wrapper `( (S ...) )` as emitted by some parsers.
        let label = match self.toks.get(self.pos) {
            Some(Tok::Atom(_, s)) => {
                self.pos += 1;
                s.to_string()
            }
            Some(Tok::Open(_)) => String::new(),
            _ => return Err(self.err(self.offset(), "expected a label")),
        };

        let start = self.next_leaf;
        let mut children = Vec::new();
        let mut token = None;
        loop {
            match self.toks.get(self.pos) {
                Some(Tok::Close(_)) => {
                    self.pos += 1;
                    break;
                }
                Some(Tok::Open(_)) => {
                    if token.is_some() {
                        return Err(self.err(self.offset(), "node mixes a word and subtrees"));
                    }
                    children.push(self.node()?);
                }
                Some(Tok::Atom(o, s)) => {
                    if token.is_some() || !children.is_empty() {
                        return Err(self.err(*o, "pre-terminal must hold exactly one word"));
                    }
                    token = Some(s.to_string());
                    self.next_leaf += 1;
                    self.pos += 1;
                }
                None => return Err(self.err(self.end_offset, format!("unclosed `(` at byte {open}"))),
            }
        }
        if token.is_none() && children.is_empty() {
            return Err(self.err(open, "empty node"));
        }
        if label.is_empty() && children.len() == 1 {
            // Collapse the unlabeled wrapper.
            return Ok(children.pop().unwrap());
        }
        Ok(ConstTree {
            label,
            children,
            token,
            leaf_span: Span {
                start,
                end: self.next_leaf,
            },
        })
    }
}

pub fn parse_bracket(text: &str) -> Result<ConstTree> {
    let toks = lex(text);
    if toks.is_empty() {
        return Err(Error::TreeParse {
            offset: 0,
            message: "empty input".into(),
        });
    }
    let mut parser = Parser {
        toks,
        pos: 0,
        next_leaf: 0,
        end_offset: text.len(),
    };
    let tree = parser.node()?;
    if parser.pos != parser.toks.len() {
        return Err(parser.err(parser.offset(), "trailing input after tree"));
    }
    Ok(tree)
}
