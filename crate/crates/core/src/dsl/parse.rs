use thiserror::Error;

use super::{answer_refs, BaseOp, DecompProgram, DecompStep, OperatorName, Transform};
use crate::agents::Registry;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseErrorKind {
    #[error("expected {0}")]
    Expected(&'static str),
    #[error("unknown operator `{0}`")]
    UnknownOperator(String),
    #[error("unknown agent `{0}`")]
    UnknownAgent(String),
    #[error("step #{found} out of order, expected #{expected}")]
    StepOrder { expected: usize, found: usize },
    #[error("#{reference} is not an earlier step of #{step}")]
    ForwardReference { step: usize, reference: usize },
    #[error("first step must use `select`")]
    FirstNotSelect,
    #[error("unterminated string")]
    UnterminatedString,
    #[error("operator `{0}` iterates but the question has {1} answer references; name one with `(#j)`")]
    IterationTarget(String, usize),
    #[error("operator parameter #{0} is not referenced by the question")]
    UnusedParam(usize),
    #[error("empty program")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}, column {column}: {kind}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub kind: ParseErrorKind,
}

struct Cursor<'a> {
    src: &'a str,
    pos: usize,
    line: usize,
}

impl<'a> Cursor<'a> {
    fn err(&self, kind: ParseErrorKind) -> ParseError {
        ParseError {
            line: self.line,
            column: self.pos + 1,
            kind,
        }
    }

    fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    fn skip_ws(&mut self) {
        let trimmed = self.rest().trim_start();
        self.pos = self.src.len() - trimmed.len();
    }

    fn eat(&mut self, c: char, what: &'static str) -> Result<(), ParseError> {
        self.skip_ws();
        if self.rest().starts_with(c) {
            self.pos += c.len_utf8();
            Ok(())
        } else {
            Err(self.err(ParseErrorKind::Expected(what)))
        }
    }

    fn number(&mut self) -> Result<usize, ParseError> {
        let digits: String = self.rest().chars().take_while(char::is_ascii_digit).collect();
        if digits.is_empty() {
            return Err(self.err(ParseErrorKind::Expected("step number")));
        }
        self.pos += digits.len();
        digits
            .parse()
            .map_err(|_| self.err(ParseErrorKind::Expected("step number")))
    }

    fn until(&mut self, close: char, what: &'static str) -> Result<(usize, &'a str), ParseError> {
        let start = self.pos;
        match self.rest().find(close) {
            Some(i) => {
                self.pos += i + close.len_utf8();
                Ok((start, &self.src[start..start + i]))
            }
            None => Err(self.err(ParseErrorKind::Expected(what))),
        }
    }

    fn string(&mut self) -> Result<String, ParseError> {
        self.eat('"', "opening quote")?;
        let mut out = String::new();
        let mut chars = self.rest().char_indices();
        while let Some((i, c)) = chars.next() {
            match c {
                '"' => {
                    self.pos += i + 1;
                    return Ok(out);
                }
                '\\' => match chars.next() {
                    Some((_, e)) => out.push(e),
                    None => break,
                },
                c => out.push(c),
            }
        }
        Err(self.err(ParseErrorKind::UnterminatedString))
    }
}

/// Parse an operator such as `project_values_flat_unique`,
/// `filterValues(#2)_keys` or `projectValues_flat`.
pub fn parse_operator(s: &str) -> Option<OperatorName> {
    let s = s.trim();
    let (head, param, tail) = match s.find('(') {
        Some(open) => {
            let close = s[open..].find(')')? + open;
            let inner = s[open + 1..close].trim();
            let j: usize = inner.strip_prefix('#')?.parse().ok()?;
            (&s[..open], Some(j), &s[close + 1..])
        }
        None => match s.find('_') {
            Some(i) => (&s[..i], None, &s[i..]),
            None => (s, None, ""),
        },
    };
    let base = match head {
        "select" => BaseOp::Select,
        "project" => BaseOp::Project,
        "projectValues" => BaseOp::ProjectValues,
        "filter" => BaseOp::Filter,
        "filterValues" => BaseOp::FilterValues,
        _ => return None,
    };
    let mut transforms = Vec::new();
    if !tail.is_empty() {
        for t in tail.strip_prefix('_')?.split('_') {
            transforms.push(match t {
                "flat" => Transform::Flat,
                "unique" => Transform::Unique,
                "keys" => Transform::Keys,
                "values" => Transform::Values,
                _ => return None,
            });
        }
    }
    let op = OperatorName {
        base,
        param,
        transforms,
    };
    if op.is_shipped() && (param.is_none() || base.iterates()) {
        Some(op)
    } else {
        None
    }
}

fn parse_line(line_no: usize, text: &str) -> Result<DecompStep, ParseError> {
    let mut c = Cursor {
        src: text,
        pos: 0,
        line: line_no,
    };
    c.eat('#', "`#`")?;
    let index = c.number()?;
    c.eat('=', "`=`")?;
    c.eat('(', "`(`")?;
    // operator may itself contain parentheses: `filter(#2)`
    let start = c.pos;
    let rest = c.rest();
    let mut depth = 1;
    let mut end = None;
    for (i, ch) in rest.char_indices() {
        match ch {
            '(' => depth += 1,
            ')' => {
                depth -= 1;
                if depth == 0 {
                    end = Some(i);
                    break;
                }
            }
            _ => {}
        }
    }
    let end = end.ok_or_else(|| c.err(ParseErrorKind::Expected("`)`")))?;
    let op_text = &rest[..end];
    c.pos += end + 1;
    let operator = parse_operator(op_text).ok_or(ParseError {
        line: line_no,
        column: start + 1,
        kind: ParseErrorKind::UnknownOperator(op_text.trim().to_string()),
    })?;
    c.eat('[', "`[`")?;
    let (_, agent) = c.until(']', "`]`")?;
    let agent = agent.trim().to_string();
    if agent.is_empty() {
        return Err(c.err(ParseErrorKind::Expected("agent name")));
    }
    let question = c.string()?;
    c.skip_ws();
    if !c.rest().is_empty() {
        return Err(c.err(ParseErrorKind::Expected("end of line")));
    }
    Ok(DecompStep {
        index,
        operator,
        agent,
        question,
    })
}

fn check_step(step: &DecompStep, line: usize) -> Result<(), ParseError> {
    let err = |kind| ParseError {
        line,
        column: 1,
        kind,
    };
    let refs = answer_refs(&step.question);
    for &r in &refs {
        if r == 0 || r >= step.index {
            return Err(err(ParseErrorKind::ForwardReference {
                step: step.index,
                reference: r,
            }));
        }
    }
    if let Some(p) = step.operator.param {
        if p == 0 || p >= step.index {
            return Err(err(ParseErrorKind::ForwardReference {
                step: step.index,
                reference: p,
            }));
        }
        if !refs.contains(&p) {
            return Err(err(ParseErrorKind::UnusedParam(p)));
        }
    } else if step.operator.base.iterates() && refs.len() != 1 {
        return Err(err(ParseErrorKind::IterationTarget(
            step.operator.to_string(),
            refs.len(),
        )));
    }
    Ok(())
}

/// Parse and validate a program. Agents are not checked; see
/// [`parse_program_for`].
pub fn parse_program(source: &str) -> Result<DecompProgram, ParseError> {
    let mut steps = Vec::new();
    for (i, raw) in source.lines().enumerate() {
        let line_no = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let step = parse_line(line_no, raw)?;
        let expected = steps.len() + 1;
        if step.index != expected {
            return Err(ParseError {
                line: line_no,
                column: 2,
                kind: ParseErrorKind::StepOrder {
                    expected,
                    found: step.index,
                },
            });
        }
        if expected == 1 && step.operator.base != BaseOp::Select {
            return Err(ParseError {
                line: line_no,
                column: 1,
                kind: ParseErrorKind::FirstNotSelect,
            });
        }
        check_step(&step, line_no)?;
        steps.push(step);
    }
    if steps.is_empty() {
        return Err(ParseError {
            line: 1,
            column: 1,
            kind: ParseErrorKind::Empty,
        });
    }
    Ok(DecompProgram { steps })
}

/// Parse and additionally require every agent to exist in `registry`.
pub fn parse_program_for(source: &str, registry: &Registry) -> Result<DecompProgram, ParseError> {
    let program = parse_program(source)?;
    let mut line = 0;
    for (i, raw) in source.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let step = &program.steps[line];
        line += 1;
        if registry.get(&step.agent).is_none() {
            return Err(ParseError {
                line: i + 1,
                column: raw.find('[').map_or(1, |c| c + 2),
                kind: ParseErrorKind::UnknownAgent(step.agent.clone()),
            });
        }
    }
    Ok(program)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_single_select() {
        let p = parse_program(r#"#1 = (select) [textqa] "Who is from the country $1?""#).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p.steps[0].operator, OperatorName::select());
        assert_eq!(p.steps[0].agent, "textqa");
        assert_eq!(p.steps[0].question, "Who is from the country $1?");
    }

    #[test]
    fn parses_combined_operator() {
        let p = parse_program(
            "#1 = (select) [textqa] \"Who is from the country $1?\"\n\
             #2 = (project_values_flat_unique) [tableqa] \"Which movies has #1 directed?\"",
        )
        .unwrap();
        let op = &p.steps[1].operator;
        assert_eq!(op.base, BaseOp::Project);
        assert_eq!(
            op.transforms,
            vec![Transform::Values, Transform::Flat, Transform::Unique]
        );
    }

    #[test]
    fn operator_spellings() {
        let op = parse_operator("filterValues(#2)_keys").unwrap();
        assert_eq!(op.base, BaseOp::FilterValues);
        assert_eq!(op.param, Some(2));
        assert_eq!(op.to_string(), "filterValues(#2)_keys");
        assert_eq!(parse_operator("projectValues_flat").unwrap().transforms, vec![Transform::Flat]);
        assert!(parse_operator("select(#1)").is_none());
        assert!(parse_operator("project_keys_keys").is_none());
        assert!(parse_operator("frobnicate").is_none());
    }

    #[test]
    fn rejects_project_first() {
        let e = parse_program(r#"#1 = (project) [textqa] "Who directed #1?""#).unwrap_err();
        assert_eq!(e.kind, ParseErrorKind::FirstNotSelect);
    }

    #[test]
    fn rejects_forward_reference() {
        let e = parse_program(
            "#1 = (select) [a] \"x $1\"\n#2 = (project) [a] \"Who directed #2?\"",
        )
        .unwrap_err();
        assert_eq!(e.line, 2);
        assert!(matches!(e.kind, ParseErrorKind::ForwardReference { step: 2, reference: 2 }));
    }

    #[test]
    fn rejects_bad_quoting_and_operator() {
        let e = parse_program(r#"#1 = (select) [a] "unterminated"#).unwrap_err();
        assert_eq!(e.kind, ParseErrorKind::UnterminatedString);
        let e = parse_program(r#"#1 = (sellect) [a] "q""#).unwrap_err();
        assert_eq!(e.kind, ParseErrorKind::UnknownOperator("sellect".into()));
        assert_eq!(e.column, 7);
    }

    #[test]
    fn iteration_target_required_with_two_refs() {
        let src = "#1 = (select) [a] \"p $1\"\n#2 = (select) [a] \"q $2\"\n\
                   #3 = (filter) [mathqa] \"Is #1 a part of #2?\"";
        assert!(matches!(
            parse_program(src).unwrap_err().kind,
            ParseErrorKind::IterationTarget(_, 2)
        ));
        let ok = src.replace("(filter)", "(filter(#1))");
        assert_eq!(parse_program(&ok).unwrap().steps[2].iterated_ref(), Some(1));
    }

    #[test]
    fn escaped_quotes_round_trip() {
        let src = r#"#1 = (select) [a] "say \"hi\" to $1""#;
        let p = parse_program(src).unwrap();
        assert_eq!(p.steps[0].question, r#"say "hi" to $1"#);
        assert_eq!(p.render(), src);
    }
}
