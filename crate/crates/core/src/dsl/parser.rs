use super::ast::{CmpOp, Literal, Node, PredOp, Predicate, Projection, Sort, Term};
use super::lexer::{tokenize, Spanned, Tok};
use super::DslError;

const FUNCTIONS: [&str; 7] = ["COUNT", "FILTER", "PROJECT", "UNION", "INTERSECT", "EXCEPT", "PLUS"];

/// Parses and sort-checks a query.
///
/// Grammar, in functional notation:
///
/// ```text
/// query   := set | count | count CMP nat
/// set     := source | FILTER(set, pred) | PROJECT(set, field, ...)
///          | UNION(set, set) | INTERSECT(set, set) | EXCEPT(set, set)
/// count   := COUNT(set) | PLUS(count, count)
/// source  := ident | ident '.' ('adds' | 'removes')
/// pred    := field POP literal ('AND' field POP literal)*
/// CMP     := '>' | '>=' | '<' | '<=' | '=='
/// POP     := CMP | '!='
/// ```
pub fn parse(text: &str) -> Result<Node, DslError> {
    if text.trim().is_empty() {
        return Err(DslError::Empty);
    }
    let toks = tokenize(text)?;
    let mut p = Parser { toks, pos: 0 };
    let node = p.query()?;
    let t = p.peek();
    if t.tok != Tok::Eof {
        return Err(DslError::syntax(
            t.line,
            t.col,
            format!("unexpected {} after end of query", t.tok.describe()),
        ));
    }
    Ok(node)
}

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Spanned {
        &self.toks[self.pos]
    }

    fn next(&mut self) -> Spanned {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, want: Tok) -> Result<Spanned, DslError> {
        let t = self.next();
        if t.tok == want {
            Ok(t)
        } else {
            Err(DslError::syntax(
                t.line,
                t.col,
                format!("expected {}, found {}", want.describe(), t.tok.describe()),
            ))
        }
    }

    fn query(&mut self) -> Result<Node, DslError> {
        let start = self.peek().clone();
        let expr = self.expr()?;
        if let Tok::Op(op) = self.peek().tok {
            let op_tok = self.next();
            let op = match op {
                ">" => CmpOp::Gt,
                ">=" => CmpOp::Ge,
                "<" => CmpOp::Lt,
                "<=" => CmpOp::Le,
                "==" => CmpOp::Eq,
                other => {
                    return Err(DslError::syntax(
                        op_tok.line,
                        op_tok.col,
                        format!("'{other}' cannot compare counts"),
                    ))
                }
            };
            if expr.sort() != Sort::Count {
                return Err(DslError::type_error(
                    start.line,
                    start.col,
                    format!("comparison needs a count on the left, found a {}", expr.sort()),
                ));
            }
            let lit = self.next();
            let literal = match &lit.tok {
                Tok::Num(v, raw) if *v >= 0.0 && !raw.contains('.') => raw.parse::<u64>().map_err(|_| {
                    DslError::syntax(lit.line, lit.col, format!("count literal {raw} out of range"))
                })?,
                Tok::Eof => {
                    return Err(DslError::syntax(lit.line, lit.col, "expected a count literal, found end of input"))
                }
                other => {
                    return Err(DslError::type_error(
                        lit.line,
                        lit.col,
                        format!("counts compare against natural-number literals, found {}", other.describe()),
                    ))
                }
            };
            return Ok(Node::Compare {
                expr: Box::new(expr),
                op,
                literal,
            });
        }
        Ok(expr)
    }

    fn expr(&mut self) -> Result<Node, DslError> {
        let t = self.next();
        let Tok::Ident(name) = &t.tok else {
            return Err(DslError::syntax(
                t.line,
                t.col,
                format!("expected a source or function, found {}", t.tok.describe()),
            ));
        };
        if self.peek().tok == Tok::LParen {
            if !FUNCTIONS.contains(&name.as_str()) {
                return Err(DslError::syntax(t.line, t.col, format!("unknown function '{name}'")));
            }
            self.next();
            let node = self.call(name, &t)?;
            self.expect(Tok::RParen)?;
            return Ok(node);
        }
        if FUNCTIONS.contains(&name.as_str()) || name == "AND" {
            return Err(DslError::syntax(
                t.line,
                t.col,
                format!("'{name}' is reserved and cannot name a source"),
            ));
        }
        let projection = if self.peek().tok == Tok::Dot {
            self.next();
            let f = self.next();
            match &f.tok {
                Tok::Ident(p) if p == "adds" => Some(Projection::Adds),
                Tok::Ident(p) if p == "removes" => Some(Projection::Removes),
                other => {
                    return Err(DslError::syntax(
                        f.line,
                        f.col,
                        format!("unknown source projection {}; expected .adds or .removes", other.describe()),
                    ))
                }
            }
        } else {
            None
        };
        Ok(Node::Source {
            name: name.clone(),
            projection,
        })
    }

    fn operand(&mut self, want: Sort, func: &str) -> Result<Node, DslError> {
        let at = self.peek().clone();
        let node = self.expr()?;
        if node.sort() != want {
            return Err(DslError::type_error(
                at.line,
                at.col,
                format!("{func} expects a {want} argument, found a {}", node.sort()),
            ));
        }
        Ok(node)
    }

    fn call(&mut self, name: &str, at: &Spanned) -> Result<Node, DslError> {
        let b = Box::new;
        Ok(match name {
            "COUNT" => Node::Count(b(self.operand(Sort::Set, name)?)),
            "FILTER" => {
                let child = self.operand(Sort::Set, name)?;
                self.expect(Tok::Comma)?;
                let predicate = self.predicate()?;
                Node::Filter {
                    child: b(child),
                    predicate,
                }
            }
            "PROJECT" => {
                let child = self.operand(Sort::Set, name)?;
                let mut fields = Vec::new();
                while self.peek().tok == Tok::Comma {
                    self.next();
                    fields.push(self.field()?);
                }
                if fields.is_empty() {
                    return Err(DslError::syntax(at.line, at.col, "PROJECT needs at least one field"));
                }
                Node::Project { child: b(child), fields }
            }
            "UNION" | "INTERSECT" | "EXCEPT" | "PLUS" => {
                let sort = if name == "PLUS" { Sort::Count } else { Sort::Set };
                let l = self.operand(sort, name)?;
                self.expect(Tok::Comma)?;
                let r = self.operand(sort, name)?;
                match name {
                    "UNION" => Node::Union(b(l), b(r)),
                    "INTERSECT" => Node::Intersect(b(l), b(r)),
                    "EXCEPT" => Node::Except(b(l), b(r)),
                    _ => Node::Plus(b(l), b(r)),
                }
            }
            _ => unreachable!("checked against FUNCTIONS"),
        })
    }

    fn field(&mut self) -> Result<String, DslError> {
        let t = self.next();
        match t.tok {
            Tok::Ident(f) if f != "AND" && !FUNCTIONS.contains(&f.as_str()) => Ok(f),
            other => Err(DslError::syntax(
                t.line,
                t.col,
                format!("expected a field name, found {}", other.describe()),
            )),
        }
    }

    fn predicate(&mut self) -> Result<Predicate, DslError> {
        let mut terms = vec![self.term()?];
        while matches!(&self.peek().tok, Tok::Ident(s) if s == "AND") {
            self.next();
            terms.push(self.term()?);
        }
        Ok(Predicate { terms })
    }

    fn term(&mut self) -> Result<Term, DslError> {
        let field = self.field()?;
        let t = self.next();
        let op = match t.tok {
            Tok::Op("==") => PredOp::Eq,
            Tok::Op("!=") => PredOp::Ne,
            Tok::Op(">") => PredOp::Gt,
            Tok::Op(">=") => PredOp::Ge,
            Tok::Op("<") => PredOp::Lt,
            Tok::Op("<=") => PredOp::Le,
            other => {
                return Err(DslError::syntax(
                    t.line,
                    t.col,
                    format!("expected a comparison, found {}", other.describe()),
                ))
            }
        };
        let lit = self.next();
        let literal = match lit.tok {
            Tok::Str(s) => Literal::Str(s),
            Tok::Num(v, _) => Literal::Num(v),
            other => {
                return Err(DslError::syntax(
                    lit.line,
                    lit.col,
                    format!("expected a string or number literal, found {}", other.describe()),
                ))
            }
        };
        Ok(Term { field, op, literal })
    }
}
