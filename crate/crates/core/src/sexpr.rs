//! Minimal Lisp reader and printer shared by the conjecture frontend and the
//! proof-script emitter/linter.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Pos {
    pub line: usize,
    pub col: usize,
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("{pos}: {msg}")]
pub struct ReadError {
    pub pos: Pos,
    pub msg: String,
}

#[derive(Debug, Clone)]
pub enum SExpKind {
    /// Symbol, number or keyword, spelled as written.
    Atom(String),
    Str(String),
    List(Vec<SExp>),
    /// Reader prefix (`'`, `` ` ``, `,` or `,@`) applied to a form.
    Prefixed(&'static str, Box<SExp>),
}

#[derive(Debug, Clone)]
pub struct SExp {
    pub kind: SExpKind,
    pub pos: Pos,
}

/// Structural equality; source positions are ignored.
impl PartialEq for SExp {
    fn eq(&self, other: &Self) -> bool {
        match (&self.kind, &other.kind) {
            (SExpKind::Atom(a), SExpKind::Atom(b)) => a == b,
            (SExpKind::Str(a), SExpKind::Str(b)) => a == b,
            (SExpKind::List(a), SExpKind::List(b)) => a == b,
            (SExpKind::Prefixed(p, a), SExpKind::Prefixed(q, b)) => p == q && a == b,
            _ => false,
        }
    }
}

impl SExp {
    pub fn atom(s: impl Into<String>) -> SExp {
        SExp {
            kind: SExpKind::Atom(s.into()),
            pos: Pos::default(),
        }
    }

    pub fn string(s: impl Into<String>) -> SExp {
        SExp {
            kind: SExpKind::Str(s.into()),
            pos: Pos::default(),
        }
    }

    pub fn list(items: Vec<SExp>) -> SExp {
        SExp {
            kind: SExpKind::List(items),
            pos: Pos::default(),
        }
    }

    /// `(head args...)` with an atom head.
    pub fn call(head: &str, args: Vec<SExp>) -> SExp {
        let mut items = Vec::with_capacity(args.len() + 1);
        items.push(SExp::atom(head));
        items.extend(args);
        SExp::list(items)
    }

    pub fn as_atom(&self) -> Option<&str> {
        match &self.kind {
            SExpKind::Atom(a) => Some(a),
            _ => None,
        }
    }

    pub fn as_list(&self) -> Option<&[SExp]> {
        match &self.kind {
            SExpKind::List(items) => Some(items),
            _ => None,
        }
    }

    /// Upper-cased head symbol of a list form.
    pub fn head(&self) -> Option<String> {
        self.as_list()?
            .first()?
            .as_atom()
            .map(|a| a.to_ascii_uppercase())
    }

    /// Single-line rendering.
    pub fn flat(&self) -> String {
        let mut out = String::new();
        self.write_flat(&mut out);
        out
    }

    fn write_flat(&self, out: &mut String) {
        match &self.kind {
            SExpKind::Atom(a) => out.push_str(a),
            SExpKind::Str(s) => {
                out.push('"');
                for ch in s.chars() {
                    if ch == '"' || ch == '\\' {
                        out.push('\\');
                    }
                    out.push(ch);
                }
                out.push('"');
            }
            SExpKind::List(items) => {
                out.push('(');
                for (i, it) in items.iter().enumerate() {
                    if i > 0 {
                        out.push(' ');
                    }
                    it.write_flat(out);
                }
                out.push(')');
            }
            SExpKind::Prefixed(p, inner) => {
                out.push_str(p);
                inner.write_flat(out);
            }
        }
    }

    /// Renders with line breaks so that lines stay within `width` where
    /// possible. Arguments that do not fit are stacked under the first one.
    pub fn pretty(&self, indent: usize, width: usize) -> String {
        let mut out = String::new();
        self.write_pretty(indent, width, &mut out);
        out
    }

    fn write_pretty(&self, col: usize, width: usize, out: &mut String) {
        let flat = self.flat();
        if col + flat.len() <= width {
            out.push_str(&flat);
            return;
        }
        let items = match &self.kind {
            SExpKind::List(items) if !items.is_empty() => items,
            SExpKind::Prefixed(p, inner) => {
                out.push_str(p);
                inner.write_pretty(col + p.len(), width, out);
                return;
            }
            _ => {
                out.push_str(&flat);
                return;
            }
        };
        out.push('(');
        // keyword/value pairs stay on one line
        let groups = group_keywords(items);
        let head = &groups[0];
        let head_flat: Vec<String> = head.iter().map(|e| e.flat()).collect();
        let head_text = head_flat.join(" ");
        out.push_str(&head_text);
        if groups.len() == 1 {
            out.push(')');
            return;
        }
        // body forms of definitions are indented by two, calls align under
        // the first argument
        let is_atom_head = head.len() == 1 && head[0].as_atom().is_some();
        let align = if is_atom_head && col + 1 + head_text.len() + 1 < width / 2 {
            col + 1 + head_text.len() + 1
        } else {
            col + 2
        };
        let align = if is_definer(head) { col + 2 } else { align };
        for (gi, group) in groups[1..].iter().enumerate() {
            let text = render_group(group, align, width);
            if gi == 0 && align == col + 1 + head_text.len() + 1 {
                out.push(' ');
            } else {
                out.push('\n');
                out.push_str(&" ".repeat(align));
            }
            out.push_str(&text);
        }
        out.push(')');
    }
}

fn is_definer(head: &[SExp]) -> bool {
    matches!(
        head.first().and_then(|h| h.as_atom()).map(|a| a.to_ascii_uppercase()),
        Some(ref h) if ["DEFUN", "DEFUND", "DEFTHM", "DEFTHMD", "DEFMACRO"].contains(&h.as_str())
    )
}

/// Splits list items into the head group and argument groups, keeping
/// `:keyword value` pairs together. For definers the name and formals stay
/// with the head.
fn group_keywords(items: &[SExp]) -> Vec<Vec<SExp>> {
    let mut groups: Vec<Vec<SExp>> = Vec::new();
    let head_len = if is_definer(&items[..1]) {
        let h = items[0].as_atom().unwrap_or("").to_ascii_uppercase();
        if h == "DEFUN" || h == "DEFUND" || h == "DEFMACRO" {
            3.min(items.len())
        } else {
            2.min(items.len())
        }
    } else {
        1
    };
    groups.push(items[..head_len].to_vec());
    let mut i = head_len;
    while i < items.len() {
        let is_kw = items[i].as_atom().is_some_and(|a| a.starts_with(':'));
        if is_kw && i + 1 < items.len() {
            groups.push(vec![items[i].clone(), items[i + 1].clone()]);
            i += 2;
        } else {
            groups.push(vec![items[i].clone()]);
            i += 1;
        }
    }
    groups
}

fn render_group(group: &[SExp], col: usize, width: usize) -> String {
    if group.len() == 1 {
        return group[0].pretty(col, width);
    }
    let kw = group[0].flat();
    let rest = group[1].pretty(col + kw.len() + 1, width);
    if rest.contains('\n') && col + kw.len() + 1 + 20 > width {
        format!("{kw}\n{}{}", " ".repeat(col), group[1].pretty(col, width))
    } else {
        format!("{kw} {rest}")
    }
}

impl fmt::Display for SExp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.flat())
    }
}

/// Reads every top-level form in `text`.
pub fn read_all(text: &str) -> Result<Vec<SExp>, ReadError> {
    let mut r = Reader {
        chars: text.chars().collect(),
        i: 0,
        line: 1,
        col: 1,
    };
    let mut forms = Vec::new();
    loop {
        r.skip_trivia()?;
        if r.at_end() {
            return Ok(forms);
        }
        forms.push(r.form()?);
    }
}

struct Reader {
    chars: Vec<char>,
    i: usize,
    line: usize,
    col: usize,
}

impl Reader {
    fn at_end(&self) -> bool {
        self.i >= self.chars.len()
    }

    fn pos(&self) -> Pos {
        Pos {
            line: self.line,
            col: self.col,
        }
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.i).copied()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.i += 1;
        if c == '\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn error<T>(&self, pos: Pos, msg: impl Into<String>) -> Result<T, ReadError> {
        Err(ReadError {
            pos,
            msg: msg.into(),
        })
    }

    fn skip_trivia(&mut self) -> Result<(), ReadError> {
        loop {
            match self.peek() {
                Some(c) if c.is_whitespace() => {
                    self.bump();
                }
                Some(';') => {
                    while let Some(c) = self.bump() {
                        if c == '\n' {
                            break;
                        }
                    }
                }
                Some('#') if self.chars.get(self.i + 1) == Some(&'|') => {
                    let start = self.pos();
                    self.bump();
                    self.bump();
                    loop {
                        match self.bump() {
                            None => return self.error(start, "unterminated block comment"),
                            Some('|') if self.peek() == Some('#') => {
                                self.bump();
                                break;
                            }
                            _ => {}
                        }
                    }
                }
                _ => return Ok(()),
            }
        }
    }

    fn form(&mut self) -> Result<SExp, ReadError> {
        self.skip_trivia()?;
        let pos = self.pos();
        let Some(c) = self.peek() else {
            return self.error(pos, "unexpected end of input");
        };
        let kind = match c {
            '(' => {
                self.bump();
                let mut items = Vec::new();
                loop {
                    self.skip_trivia()?;
                    match self.peek() {
                        None => return self.error(pos, "unbalanced parenthesis: missing `)`"),
                        Some(')') => {
                            self.bump();
                            break;
                        }
                        Some(_) => items.push(self.form()?),
                    }
                }
                SExpKind::List(items)
            }
            ')' => return self.error(pos, "unexpected `)`"),
            '"' => {
                self.bump();
                let mut s = String::new();
                loop {
                    match self.bump() {
                        None => return self.error(pos, "unterminated string"),
                        Some('"') => break,
                        Some('\\') => match self.bump() {
                            Some(e) => s.push(e),
                            None => return self.error(pos, "unterminated string"),
                        },
                        Some(ch) => s.push(ch),
                    }
                }
                SExpKind::Str(s)
            }
            '\'' | '`' | ',' => {
                self.bump();
                let prefix = match c {
                    '\'' => "'",
                    '`' => "`",
                    _ if self.peek() == Some('@') => {
                        self.bump();
                        ",@"
                    }
                    _ => ",",
                };
                SExpKind::Prefixed(prefix, Box::new(self.form()?))
            }
            _ => {
                let mut a = String::new();
                while let Some(ch) = self.peek() {
                    if ch.is_whitespace() || "()\";'`,".contains(ch) {
                        break;
                    }
                    a.push(ch);
                    self.bump();
                }
                SExpKind::Atom(a)
            }
        };
        Ok(SExp { kind, pos })
    }
}
