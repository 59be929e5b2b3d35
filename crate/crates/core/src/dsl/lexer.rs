use super::DslError;

#[derive(Clone, Debug, PartialEq)]
pub(crate) enum Tok {
    Ident(String),
    Str(String),
    Num(f64, String),
    LParen,
    RParen,
    Comma,
    Dot,
    Op(&'static str),
    Eof,
}

impl Tok {
    pub(crate) fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("identifier '{s}'"),
            Tok::Str(s) => format!("string {s:?}"),
            Tok::Num(_, raw) => format!("number {raw}"),
            Tok::LParen => "'('".into(),
            Tok::RParen => "')'".into(),
            Tok::Comma => "','".into(),
            Tok::Dot => "'.'".into(),
            Tok::Op(o) => format!("'{o}'"),
            Tok::Eof => "end of input".into(),
        }
    }
}

/// A token with its 1-based line and column.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Spanned {
    pub tok: Tok,
    pub line: usize,
    pub col: usize,
}

pub(crate) fn tokenize(text: &str) -> Result<Vec<Spanned>, DslError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);
    while i < chars.len() {
        let c = chars[i];
        let (start_line, start_col) = (line, col);
        let push = |out: &mut Vec<Spanned>, tok| {
            out.push(Spanned {
                tok,
                line: start_line,
                col: start_col,
            })
        };
        let mut advance = |n: usize, i: &mut usize| {
            *i += n;
            col += n;
        };
        match c {
            '\n' => {
                i += 1;
                line += 1;
                col = 1;
            }
            c if c.is_whitespace() => advance(1, &mut i),
            '(' => {
                push(&mut out, Tok::LParen);
                advance(1, &mut i);
            }
            ')' => {
                push(&mut out, Tok::RParen);
                advance(1, &mut i);
            }
            ',' => {
                push(&mut out, Tok::Comma);
                advance(1, &mut i);
            }
            '.' => {
                push(&mut out, Tok::Dot);
                advance(1, &mut i);
            }
            '=' | '!' | '<' | '>' => {
                let next = chars.get(i + 1).copied();
                let (op, len) = match (c, next) {
                    ('=', Some('=')) => ("==", 2),
                    ('!', Some('=')) => ("!=", 2),
                    ('<', Some('=')) => ("<=", 2),
                    ('>', Some('=')) => (">=", 2),
                    ('<', _) => ("<", 1),
                    ('>', _) => (">", 1),
                    _ => {
                        return Err(DslError::syntax(
                            start_line,
                            start_col,
                            format!("unexpected '{c}'; did you mean '{c}='?"),
                        ))
                    }
                };
                push(&mut out, Tok::Op(op));
                advance(len, &mut i);
            }
            '"' => {
                let mut j = i + 1;
                let mut escaped = false;
                while j < chars.len() {
                    match chars[j] {
                        '\\' if !escaped => escaped = true,
                        '"' if !escaped => break,
                        '\n' => {
                            return Err(DslError::syntax(start_line, start_col, "unterminated string"))
                        }
                        _ => escaped = false,
                    }
                    j += 1;
                }
                if j >= chars.len() {
                    return Err(DslError::syntax(start_line, start_col, "unterminated string"));
                }
                let raw: String = chars[i..=j].iter().collect();
                let s: String = serde_json::from_str(&raw).map_err(|e| {
                    DslError::syntax(start_line, start_col, format!("bad string literal: {e}"))
                })?;
                push(&mut out, Tok::Str(s));
                advance(j + 1 - i, &mut i);
            }
            c if c.is_ascii_digit() || (c == '-' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) => {
                let mut j = i + 1;
                let mut seen_dot = false;
                while j < chars.len() {
                    let d = chars[j];
                    if d.is_ascii_digit() {
                        j += 1;
                    } else if d == '.'
                        && !seen_dot
                        && chars.get(j + 1).is_some_and(|d| d.is_ascii_digit())
                    {
                        seen_dot = true;
                        j += 1;
                    } else {
                        break;
                    }
                }
                let raw: String = chars[i..j].iter().collect();
                let value: f64 = raw.parse().map_err(|_| {
                    DslError::syntax(start_line, start_col, format!("bad number '{raw}'"))
                })?;
                push(&mut out, Tok::Num(value, raw));
                advance(j - i, &mut i);
            }
            c if c.is_alphabetic() || c == '_' => {
                let mut j = i + 1;
                while j < chars.len() && (chars[j].is_alphanumeric() || chars[j] == '_') {
                    j += 1;
                }
                let ident: String = chars[i..j].iter().collect();
                push(&mut out, Tok::Ident(ident));
                advance(j - i, &mut i);
            }
            other => {
                return Err(DslError::syntax(
                    start_line,
                    start_col,
                    format!("unexpected character '{other}'"),
                ))
            }
        }
    }
    out.push(Spanned {
        tok: Tok::Eof,
        line,
        col,
    });
    Ok(out)
}
