use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{is_valid_name, is_valid_ref, Conclusion, Condition, Rule, RuleBase, Status};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiagCode {
    UnexpectedChar,
    UnterminatedString,
    InvalidEscape,
    UnknownKeyword,
    SyntaxError,
    MalformedCondition,
    InvalidName,
    InvalidReference,
    InvalidSalience,
    UnknownStatus,
    EmptyReason,
    DuplicateRule,
    DuplicateCondition,
    ContradictoryConditions,
}

impl DiagCode {
    pub fn as_str(self) -> &'static str {
        match self {
            DiagCode::UnexpectedChar => "unexpected-char",
            DiagCode::UnterminatedString => "unterminated-string",
            DiagCode::InvalidEscape => "invalid-escape",
            DiagCode::UnknownKeyword => "unknown-keyword",
            DiagCode::SyntaxError => "syntax-error",
            DiagCode::MalformedCondition => "malformed-condition",
            DiagCode::InvalidName => "invalid-name",
            DiagCode::InvalidReference => "invalid-reference",
            DiagCode::InvalidSalience => "invalid-salience",
            DiagCode::UnknownStatus => "unknown-status",
            DiagCode::EmptyReason => "empty-reason",
            DiagCode::DuplicateRule => "duplicate-rule",
            DiagCode::DuplicateCondition => "duplicate-condition",
            DiagCode::ContradictoryConditions => "contradictory-conditions",
        }
    }
}

impl fmt::Display for DiagCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A positioned parse problem. Lines and columns are 1-based; columns count
/// characters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub line: usize,
    pub column: usize,
    pub code: DiagCode,
    pub message: String,
}

impl Diagnostic {
    /// `<file>:<line>:<col>: <code>: <message>`
    pub fn render(&self, file: &str) -> String {
        format!("{file}:{self}")
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {}: {}", self.line, self.column, self.code, self.message)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Word(String),
    Str(String),
    LBrace,
    RBrace,
    Eq,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Word(w) => format!("`{w}`"),
            Tok::Str(_) => "string literal".into(),
            Tok::LBrace => "`{`".into(),
            Tok::RBrace => "`}`".into(),
            Tok::Eq => "`=`".into(),
        }
    }
}

#[derive(Debug, Clone)]
struct Spanned {
    tok: Tok,
    line: usize,
    column: usize,
}

const KEYWORDS: [&str; 7] = ["plan", "rule", "salience", "when", "and", "then", "cite"];

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || matches!(c, '_' | '-' | '.')
}

fn lex(source: &str, diags: &mut Vec<Diagnostic>) -> Vec<Spanned> {
    let mut toks = Vec::new();
    for (li, line) in source.lines().enumerate() {
        let line_no = li + 1;
        let chars: Vec<char> = line.chars().collect();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            let col = i + 1;
            let mut push = |tok| {
                toks.push(Spanned {
                    tok,
                    line: line_no,
                    column: col,
                })
            };
            match c {
                '#' => break,
                c if c.is_whitespace() => i += 1,
                '{' => {
                    push(Tok::LBrace);
                    i += 1;
                }
                '}' => {
                    push(Tok::RBrace);
                    i += 1;
                }
                '=' => {
                    push(Tok::Eq);
                    i += 1;
                }
                '"' => {
                    let mut s = String::new();
                    let mut j = i + 1;
                    let mut closed = false;
                    while j < chars.len() {
                        match chars[j] {
                            '"' => {
                                closed = true;
                                j += 1;
                                break;
                            }
                            '\\' if j + 1 < chars.len() => {
                                match chars[j + 1] {
                                    '"' => s.push('"'),
                                    '\\' => s.push('\\'),
                                    'n' => s.push('\n'),
                                    't' => s.push('\t'),
                                    'r' => s.push('\r'),
                                    other => diags.push(Diagnostic {
                                        line: line_no,
                                        column: j + 1,
                                        code: DiagCode::InvalidEscape,
                                        message: format!("unknown escape `\\{other}`"),
                                    }),
                                }
                                j += 2;
                            }
                            ch => {
                                s.push(ch);
                                j += 1;
                            }
                        }
                    }
                    if !closed {
                        diags.push(Diagnostic {
                            line: line_no,
                            column: col,
                            code: DiagCode::UnterminatedString,
                            message: "string literal is not closed on this line".into(),
                        });
                    }
                    push(Tok::Str(s));
                    i = j;
                }
                c if is_word_char(c) => {
                    let start = i;
                    while i < chars.len() && is_word_char(chars[i]) {
                        i += 1;
                    }
                    let word: String = chars[start..i].iter().collect();
                    toks.push(Spanned {
                        tok: Tok::Word(word),
                        line: line_no,
                        column: start + 1,
                    });
                }
                other => {
                    diags.push(Diagnostic {
                        line: line_no,
                        column: col,
                        code: DiagCode::UnexpectedChar,
                        message: format!("unexpected character `{other}`"),
                    });
                    i += 1;
                }
            }
        }
    }
    toks
}

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
    eof: (usize, usize),
    diags: Vec<Diagnostic>,
}

type Step<T> = Result<T, ()>;

impl Parser {
    fn peek(&self) -> Option<&Spanned> {
        self.toks.get(self.pos)
    }

    fn here(&self) -> (usize, usize) {
        self.peek().map(|t| (t.line, t.column)).unwrap_or(self.eof)
    }

    fn error_at(&mut self, at: (usize, usize), code: DiagCode, message: String) {
        self.diags.push(Diagnostic {
            line: at.0,
            column: at.1,
            code,
            message,
        });
    }

    fn fail<T>(&mut self, code: DiagCode, message: String) -> Step<T> {
        let at = self.here();
        self.error_at(at, code, message);
        Err(())
    }

    fn found(&self) -> String {
        self.peek()
            .map(|t| t.tok.describe())
            .unwrap_or_else(|| "end of input".into())
    }

    fn bump(&mut self) -> Option<Spanned> {
        let t = self.toks.get(self.pos).cloned();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn at_word(&self, w: &str) -> bool {
        matches!(self.peek(), Some(Spanned { tok: Tok::Word(x), .. }) if x == w)
    }

    /// Consumes the keyword `kw`, distinguishing an unknown word from other
    /// syntax errors.
    fn keyword(&mut self, kw: &str) -> Step<()> {
        if self.at_word(kw) {
            self.pos += 1;
            return Ok(());
        }
        match self.peek().map(|t| t.tok.clone()) {
            Some(Tok::Word(w)) if !KEYWORDS.contains(&w.as_str()) => {
                self.fail(DiagCode::UnknownKeyword, format!("unknown keyword `{w}`, expected `{kw}`"))
            }
            _ => {
                let found = self.found();
                self.fail(DiagCode::SyntaxError, format!("expected `{kw}`, found {found}"))
            }
        }
    }

    fn punct(&mut self, want: Tok) -> Step<()> {
        if self.peek().map(|t| &t.tok) == Some(&want) {
            self.pos += 1;
            return Ok(());
        }
        let found = self.found();
        self.fail(
            DiagCode::SyntaxError,
            format!("expected {}, found {found}", want.describe()),
        )
    }

    fn word(&mut self, what: &str) -> Step<(String, (usize, usize))> {
        match self.peek().cloned() {
            Some(Spanned {
                tok: Tok::Word(w),
                line,
                column,
            }) => {
                self.pos += 1;
                Ok((w, (line, column)))
            }
            _ => {
                let found = self.found();
                self.fail(DiagCode::SyntaxError, format!("expected {what}, found {found}"))
            }
        }
    }

    /// Skips to just after the next `}` or to the next `rule` keyword.
    fn recover(&mut self) {
        while let Some(t) = self.peek() {
            match &t.tok {
                Tok::RBrace => {
                    self.pos += 1;
                    return;
                }
                Tok::Word(w) if w == "rule" => return,
                _ => self.pos += 1,
            }
        }
    }

    fn condition(&mut self) -> Step<(Condition, (usize, usize))> {
        let at = self.here();
        let (attr, attr_at) = match self.peek().cloned() {
            Some(Spanned {
                tok: Tok::Word(w),
                line,
                column,
            }) if !KEYWORDS.contains(&w.as_str()) => {
                self.pos += 1;
                (w, (line, column))
            }
            _ => {
                let found = self.found();
                return self.fail(
                    DiagCode::MalformedCondition,
                    format!("expected `<attribute>=<true|false>`, found {found}"),
                );
            }
        };
        if self.peek().map(|t| &t.tok) != Some(&Tok::Eq) {
            let found = self.found();
            return self.fail(
                DiagCode::MalformedCondition,
                format!("expected `=` after attribute `{attr}`, found {found}"),
            );
        }
        self.pos += 1;
        let expected = match self.peek().map(|t| t.tok.clone()) {
            Some(Tok::Word(v)) if v == "true" || v == "false" => {
                self.pos += 1;
                v == "true"
            }
            _ => {
                let found = self.found();
                return self.fail(
                    DiagCode::MalformedCondition,
                    format!("condition on `{attr}` must compare to true or false, found {found}"),
                );
            }
        };
        if !is_valid_name(&attr) {
            self.error_at(
                attr_at,
                DiagCode::InvalidName,
                format!("attribute `{attr}` must match [a-z][a-z0-9_]*"),
            );
            return Err(());
        }
        Ok((
            Condition {
                attribute: attr,
                expected,
            },
            at,
        ))
    }

    fn rule(&mut self) -> Step<(Rule, (usize, usize))> {
        self.keyword("rule")?;
        let (name, name_at) = self.word("a rule name")?;
        if !is_valid_name(&name) {
            self.error_at(
                name_at,
                DiagCode::InvalidName,
                format!("rule name `{name}` must match [a-z][a-z0-9_]*"),
            );
            return Err(());
        }
        let mut salience = 0i64;
        if self.at_word("salience") {
            self.pos += 1;
            let (value, at) = self.word("an integer salience")?;
            salience = match value.parse() {
                Ok(v) => v,
                Err(_) => {
                    self.error_at(at, DiagCode::InvalidSalience, format!("salience `{value}` is not an integer"));
                    return Err(());
                }
            };
        } else if let Some(Spanned { tok: Tok::Word(w), .. }) = self.peek().cloned() {
            return self.fail(
                DiagCode::UnknownKeyword,
                format!("unknown keyword `{w}`, expected `salience` or `{{`"),
            );
        }
        self.punct(Tok::LBrace)?;
        self.keyword("when")?;

        let mut conditions: Vec<(Condition, (usize, usize))> = vec![self.condition()?];
        loop {
            if self.at_word("and") {
                self.pos += 1;
                conditions.push(self.condition()?);
            } else if self.at_word("then") {
                break;
            } else {
                match self.peek().map(|t| t.tok.clone()) {
                    Some(Tok::Word(w)) if !KEYWORDS.contains(&w.as_str()) => {
                        return self.fail(
                            DiagCode::UnknownKeyword,
                            format!("unknown keyword `{w}`, expected `and` or `then`"),
                        );
                    }
                    _ => {
                        let found = self.found();
                        return self.fail(
                            DiagCode::MalformedCondition,
                            format!("expected `and` or `then` after a condition, found {found}"),
                        );
                    }
                }
            }
        }
        self.keyword("then")?;

        let (status_word, status_at) = self.word("a status")?;
        let status = match Status::parse(&status_word) {
            Some(s) => s,
            None => {
                self.error_at(
                    status_at,
                    DiagCode::UnknownStatus,
                    format!("unknown status `{status_word}`, expected covered, excluded or needs_review"),
                );
                return Err(());
            }
        };
        let reason = match self.peek().cloned() {
            Some(Spanned { tok: Tok::Str(s), line, column }) => {
                self.pos += 1;
                if s.trim().is_empty() {
                    self.error_at((line, column), DiagCode::EmptyReason, "reason text is empty".into());
                    return Err(());
                }
                s
            }
            _ => {
                let found = self.found();
                return self.fail(DiagCode::SyntaxError, format!("expected a quoted reason, found {found}"));
            }
        };
        self.keyword("cite")?;
        let (cite, cite_at) = self.word("a subsection id")?;
        if !is_valid_ref(&cite) {
            self.error_at(cite_at, DiagCode::InvalidReference, format!("invalid subsection id `{cite}`"));
            return Err(());
        }
        self.punct(Tok::RBrace)?;

        // Structural checks after a clean parse.
        let mut seen: HashMap<&str, bool> = HashMap::new();
        let mut bad = false;
        for (c, at) in &conditions {
            match seen.get(c.attribute.as_str()) {
                Some(&prev) if prev != c.expected => {
                    self.error_at(
                        *at,
                        DiagCode::ContradictoryConditions,
                        format!("rule `{name}` tests `{}` as both true and false", c.attribute),
                    );
                    bad = true;
                }
                Some(_) => {
                    self.error_at(
                        *at,
                        DiagCode::DuplicateCondition,
                        format!("rule `{name}` repeats condition `{}={}`", c.attribute, c.expected),
                    );
                    bad = true;
                }
                None => {
                    seen.insert(&c.attribute, c.expected);
                }
            }
        }
        if bad {
            return Err(());
        }
        Ok((
            Rule {
                name,
                conditions: conditions.into_iter().map(|(c, _)| c).collect(),
                conclusion: Conclusion {
                    status,
                    reason,
                    subsection_ref: cite,
                },
                salience,
            },
            name_at,
        ))
    }
}

/// Parses rule source. Returns either a fully valid base or every
/// diagnostic found, sorted by position.
pub fn parse_rules(source: &str) -> Result<RuleBase, Vec<Diagnostic>> {
    let mut diags = Vec::new();
    let toks = lex(source, &mut diags);
    let eof = {
        let lines = source.lines().count().max(1);
        let last_len = source.lines().last().map(|l| l.chars().count()).unwrap_or(0);
        (lines, last_len + 1)
    };
    let mut p = Parser {
        toks,
        pos: 0,
        eof,
        diags,
    };

    let mut base = RuleBase::default();
    let mut names: HashMap<String, usize> = HashMap::new();
    let mut plan_seen = false;
    while let Some(t) = p.peek().cloned() {
        match &t.tok {
            Tok::Word(w) if w == "plan" => {
                p.pos += 1;
                if plan_seen || !base.rules.is_empty() {
                    p.error_at(
                        (t.line, t.column),
                        DiagCode::SyntaxError,
                        "`plan` must appear once, before any rule".into(),
                    );
                }
                plan_seen = true;
                if let Ok((id, at)) = p.word("a plan id") {
                    if is_valid_ref(&id) {
                        base.plan_id = id;
                    } else {
                        p.error_at(at, DiagCode::InvalidReference, format!("invalid plan id `{id}`"));
                    }
                }
            }
            Tok::Word(w) if w == "rule" => match p.rule() {
                Ok((rule, at)) => {
                    if let Some(&first) = names.get(&rule.name) {
                        p.error_at(
                            at,
                            DiagCode::DuplicateRule,
                            format!("rule `{}` already defined on line {first}", rule.name),
                        );
                    } else {
                        names.insert(rule.name.clone(), at.0);
                        base.rules.push(rule);
                    }
                }
                Err(()) => p.recover(),
            },
            Tok::Word(w) => {
                let w = w.clone();
                p.fail::<()>(DiagCode::UnknownKeyword, format!("unknown keyword `{w}`, expected `rule`")).ok();
                p.bump();
                p.recover();
            }
            _ => {
                let found = p.found();
                p.fail::<()>(DiagCode::SyntaxError, format!("expected `rule`, found {found}")).ok();
                p.bump();
                p.recover();
            }
        }
    }

    let mut diags = p.diags;
    if diags.is_empty() {
        Ok(base)
    } else {
        diags.sort_by_key(|d| (d.line, d.column));
        diags.dedup();
        Err(diags)
    }
}
