//! Recursive-descent parser for the task grammar.
//!
//! ```text
//! task  := phi { "&&" phi } | nest
//! nest  := "F" "[" NUM "," NUM "]" "(" psi "&&" (nest | phi) ")"
//! phi   := ("F"|"G") "[" NUM "," NUM "]" psi
//! psi   := term { "&&" term }
//! term  := atom | "!" atom | "true" | "(" psi ")"
//! atom  := "dist(" ID "," (ID | point) ")" "<=" NUM
//!        | "lin(" coeff { "," coeff } ")" ">=" NUM
//!        | "comp(" ID "," IDX ")" "-" "comp(" ID "," IDX ")" "in" "(" NUM "," NUM ")"
//!        | "angdeg(" ID ")" "near" NUM "tol" NUM
//! coeff := NUM "*" "x(" ID "," IDX ")"
//! point := "[" NUM { "," NUM } "]"
//! ```
//!
//! Component indices (`IDX`) are 1-based, as in `x_{i,1}`.

use super::ast::*;
use super::StlError;

pub fn parse_task(text: &str) -> Result<TaskFormula, StlError> {
    if text.trim() == "true" {
        return Ok(TaskFormula::trivial());
    }
    let mut p = Parser::new(text);
    let task = p.task()?;
    p.skip_ws();
    if !p.at_end() {
        return Err(p.error("unexpected trailing input"));
    }
    validate_task(&task)?;
    Ok(task)
}

/// Parses a single temporal unit, e.g. for ad-hoc evaluation.
pub fn parse_phi(text: &str) -> Result<PhiFormula, StlError> {
    let task = parse_task(text)?;
    if task.units.len() != 1 {
        return Err(StlError::Syntax {
            pos: 0,
            msg: "expected a single temporal operator".into(),
        });
    }
    Ok(task.units.into_iter().next().unwrap())
}

fn validate_task(task: &TaskFormula) -> Result<(), StlError> {
    for u in &task.units {
        if !(u.a >= 0.0 && u.a <= u.b) || !u.b.is_finite() {
            return Err(StlError::TimeBoundOrder(format!("window [{}, {}]", u.a, u.b)));
        }
    }
    if task.shape == TaskShape::Sequence {
        for w in task.units.windows(2) {
            if w[0].b > w[1].a {
                return Err(StlError::TimeBoundOrder(format!(
                    "unit ending at {} overlaps unit starting at {}",
                    w[0].b, w[1].a
                )));
            }
        }
    }
    Ok(())
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str) -> Self {
        Parser { src, pos: 0 }
    }

    fn error(&self, msg: &str) -> StlError {
        StlError::Syntax {
            pos: self.pos,
            msg: msg.to_string(),
        }
    }

    fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    fn at_end(&self) -> bool {
        self.pos >= self.src.len()
    }

    fn skip_ws(&mut self) {
        let trimmed = self.rest().trim_start();
        self.pos = self.src.len() - trimmed.len();
    }

    fn peek_is(&mut self, tok: &str) -> bool {
        self.skip_ws();
        self.rest().starts_with(tok)
    }

    fn eat(&mut self, tok: &str) -> bool {
        if self.peek_is(tok) {
            self.pos += tok.len();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, tok: &str) -> Result<(), StlError> {
        if self.eat(tok) {
            Ok(())
        } else {
            Err(self.error(&format!("expected `{}`", tok)))
        }
    }

    /// Keyword followed by a non-identifier character.
    fn eat_keyword(&mut self, kw: &str) -> bool {
        self.skip_ws();
        let rest = self.rest();
        if let Some(after) = rest.strip_prefix(kw) {
            let boundary = after
                .chars()
                .next()
                .is_none_or(|c| !(c.is_ascii_alphanumeric() || c == '_'));
            if boundary {
                self.pos += kw.len();
                return true;
            }
        }
        false
    }

    fn number(&mut self) -> Result<f64, StlError> {
        self.skip_ws();
        let bytes = self.rest().as_bytes();
        let mut end = 0;
        if end < bytes.len() && (bytes[end] == b'-' || bytes[end] == b'+') {
            end += 1;
        }
        let digits_start = end;
        while end < bytes.len() && (bytes[end].is_ascii_digit() || bytes[end] == b'.') {
            end += 1;
        }
        if end == digits_start {
            return Err(self.error("expected a number"));
        }
        if end < bytes.len() && (bytes[end] == b'e' || bytes[end] == b'E') {
            let mut k = end + 1;
            if k < bytes.len() && (bytes[k] == b'-' || bytes[k] == b'+') {
                k += 1;
            }
            let exp_digits = k;
            while k < bytes.len() && bytes[k].is_ascii_digit() {
                k += 1;
            }
            if k > exp_digits {
                end = k;
            }
        }
        let text = &self.rest()[..end];
        let value: f64 = text.parse().map_err(|_| self.error("malformed number"))?;
        if !value.is_finite() {
            return Err(self.error("number out of range"));
        }
        self.pos += end;
        Ok(value)
    }

    fn unsigned(&mut self) -> Result<u32, StlError> {
        self.skip_ws();
        let len = self.rest().bytes().take_while(|b| b.is_ascii_digit()).count();
        if len == 0 {
            return Err(self.error("expected an integer"));
        }
        let v = self.rest()[..len]
            .parse()
            .map_err(|_| self.error("integer out of range"))?;
        self.pos += len;
        Ok(v)
    }

    fn agent_id(&mut self) -> Result<AgentId, StlError> {
        let id = self.unsigned()?;
        if id == 0 {
            return Err(self.error("agent ids start at 1"));
        }
        Ok(id)
    }

    fn component_index(&mut self) -> Result<usize, StlError> {
        let idx = self.unsigned()?;
        if idx == 0 {
            return Err(self.error("component indices start at 1"));
        }
        Ok(idx as usize - 1)
    }

    fn window(&mut self) -> Result<(f64, f64), StlError> {
        self.expect("[")?;
        let a = self.number()?;
        self.expect(",")?;
        let b = self.number()?;
        self.expect("]")?;
        Ok((a, b))
    }

    fn temporal_op(&mut self) -> Option<TemporalOp> {
        self.skip_ws();
        let rest = self.rest();
        let op = match rest.as_bytes().first() {
            Some(b'F') => TemporalOp::Eventually,
            Some(b'G') => TemporalOp::Always,
            _ => return None,
        };
        if rest[1..].trim_start().starts_with('[') {
            self.pos += 1;
            Some(op)
        } else {
            None
        }
    }

    fn task(&mut self) -> Result<TaskFormula, StlError> {
        let mut units = Vec::new();
        let mut nested = None;
        loop {
            let op = self
                .temporal_op()
                .ok_or_else(|| self.error("expected `F[a,b]` or `G[a,b]`"))?;
            let (a, b) = self.window()?;
            let start = self.pos;
            if op == TemporalOp::Eventually && units.is_empty() && self.peek_is("(") {
                // Possibly the head of a nest; fall back to a plain unit otherwise.
                if let Some(levels) = self.try_nest(a, b)? {
                    nested = Some(levels);
                    break;
                }
                self.pos = start;
            }
            let body = self.psi()?;
            units.push(PhiFormula { op, a, b, body });
            if !self.eat("&&") {
                break;
            }
        }
        if let Some(levels) = nested {
            return Ok(flatten_nest(levels));
        }
        Ok(TaskFormula {
            units,
            shape: TaskShape::Sequence,
        })
    }

    /// After `F[a,b]` with `(` ahead: returns the nest levels if the parenthesized
    /// body ends in an inner temporal operator, `None` if it is a plain psi.
    fn try_nest(&mut self, a: f64, b: f64) -> Result<Option<Vec<(f64, f64, PsiFormula)>>, StlError> {
        self.expect("(")?;
        let mut terms = Vec::new();
        loop {
            if self.temporal_op_ahead() {
                if terms.is_empty() {
                    return Err(self.error("nested operator needs a state formula before it"));
                }
                let inner_op = self.temporal_op().unwrap();
                if inner_op != TemporalOp::Eventually {
                    return Err(self.error("only `F` may be nested"));
                }
                let (c, d) = self.window()?;
                let mut rest = if self.peek_is("(") {
                    let save = self.pos;
                    match self.try_nest(c, d)? {
                        Some(levels) => levels,
                        None => {
                            self.pos = save;
                            vec![(c, d, self.psi()?)]
                        }
                    }
                } else {
                    vec![(c, d, self.psi()?)]
                };
                self.expect(")")?;
                let mut levels = vec![(a, b, collect_terms(terms))];
                levels.append(&mut rest);
                return Ok(Some(levels));
            }
            terms.push(self.term()?);
            if !self.eat("&&") {
                return Ok(None);
            }
        }
    }

    fn temporal_op_ahead(&mut self) -> bool {
        let save = self.pos;
        let found = self.temporal_op().is_some();
        self.pos = save;
        found
    }

    fn psi(&mut self) -> Result<PsiFormula, StlError> {
        let mut terms = vec![self.term()?];
        loop {
            let save = self.pos;
            if !self.eat("&&") {
                break;
            }
            if self.temporal_op_ahead() {
                // The conjunction continues at the task level.
                self.pos = save;
                break;
            }
            terms.push(self.term()?);
        }
        Ok(collect_terms(terms))
    }

    fn term(&mut self) -> Result<PsiFormula, StlError> {
        if self.eat("(") {
            let inner = self.psi()?;
            self.expect(")")?;
            return Ok(inner);
        }
        if self.eat_keyword("true") {
            return Ok(PsiFormula::True);
        }
        if self.eat("!") {
            let at = self.pos;
            let atom = self.atom()?;
            if !atom.is_affine() {
                return Err(StlError::NonConcaveNegation(format!(
                    "negated atom at {} is not affine: {}",
                    at, atom
                )));
            }
            return Ok(PsiFormula::NegAtom(atom));
        }
        Ok(PsiFormula::Atom(self.atom()?))
    }

    fn atom(&mut self) -> Result<PredicateAtom, StlError> {
        if self.eat_keyword("dist") {
            self.expect("(")?;
            let agent = self.agent_id()?;
            self.expect(",")?;
            let atom_fn: Box<dyn Fn(f64) -> PredicateAtom> = if self.eat("[") {
                let mut center = vec![self.number()?];
                while self.eat(",") {
                    center.push(self.number()?);
                }
                self.expect("]")?;
                Box::new(move |radius| PredicateAtom::BallDistToPoint {
                    agent,
                    center: center.clone(),
                    radius,
                })
            } else {
                let other = self.agent_id()?;
                Box::new(move |radius| PredicateAtom::BallDistPair {
                    a: agent,
                    b: other,
                    radius,
                })
            };
            self.expect(")")?;
            self.expect("<=")?;
            let radius = self.number()?;
            return Ok(atom_fn(radius));
        }
        if self.eat_keyword("lin") {
            self.expect("(")?;
            let mut terms = vec![self.coeff()?];
            while self.eat(",") {
                terms.push(self.coeff()?);
            }
            self.expect(")")?;
            self.expect(">=")?;
            let bound = self.number()?;
            return Ok(PredicateAtom::Linear { terms, bound });
        }
        if self.eat_keyword("comp") {
            let lhs = self.comp_args()?;
            self.expect("-")?;
            if !self.eat_keyword("comp") {
                return Err(self.error("expected `comp(` after `-`"));
            }
            let rhs = self.comp_args()?;
            if !self.eat_keyword("in") {
                return Err(self.error("expected `in`"));
            }
            self.expect("(")?;
            let lower = self.number()?;
            self.expect(",")?;
            let upper = self.number()?;
            self.expect(")")?;
            return Ok(PredicateAtom::BandDiff { lhs, rhs, lower, upper });
        }
        if self.eat_keyword("angdeg") {
            self.expect("(")?;
            let agent = self.agent_id()?;
            self.expect(")")?;
            if !self.eat_keyword("near") {
                return Err(self.error("expected `near`"));
            }
            let center_deg = self.number()?;
            if !self.eat_keyword("tol") {
                return Err(self.error("expected `tol`"));
            }
            let tol_deg = self.number()?;
            return Ok(PredicateAtom::AngleBand {
                agent,
                center_deg,
                tol_deg,
            });
        }
        Err(self.error("expected a predicate (`dist`, `lin`, `comp`, `angdeg`) or `true`"))
    }

    fn comp_args(&mut self) -> Result<Component, StlError> {
        self.expect("(")?;
        let agent = self.agent_id()?;
        self.expect(",")?;
        let index = self.component_index()?;
        self.expect(")")?;
        Ok(Component { agent, index })
    }

    fn coeff(&mut self) -> Result<(f64, Component), StlError> {
        let c = self.number()?;
        self.expect("*")?;
        if !self.eat_keyword("x") {
            return Err(self.error("expected `x(`"));
        }
        Ok((c, self.comp_args()?))
    }
}

fn collect_terms(mut terms: Vec<PsiFormula>) -> PsiFormula {
    if terms.len() == 1 {
        terms.pop().unwrap()
    } else {
        PsiFormula::Conjunction(terms)
    }
}

/// Turns nest levels `(c_k, d_k, psi_k)` into eventually units with windows
/// accumulated left to right.
fn flatten_nest(levels: Vec<(f64, f64, PsiFormula)>) -> TaskFormula {
    let mut relative = Vec::with_capacity(levels.len());
    let mut units = Vec::with_capacity(levels.len());
    let (mut a, mut b) = (0.0, 0.0);
    for (c, d, body) in levels {
        a += c;
        b += d;
        relative.push((c, d));
        units.push(PhiFormula {
            op: TemporalOp::Eventually,
            a,
            b,
            body,
        });
    }
    TaskFormula {
        units,
        shape: TaskShape::Nested { relative },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eventually_ball_to_point() {
        let t = parse_task("F[5,15] dist(2,[90,90]) <= 5").unwrap();
        assert_eq!(t.units.len(), 1);
        let u = &t.units[0];
        assert_eq!(u.op, TemporalOp::Eventually);
        assert_eq!((u.a, u.b), (5.0, 15.0));
        assert_eq!(
            u.body,
            PsiFormula::Atom(PredicateAtom::BallDistToPoint {
                agent: 2,
                center: vec![90.0, 90.0],
                radius: 5.0
            })
        );
    }

    #[test]
    fn always_over_pair_conjunction() {
        let t = parse_task("G[0,15] (dist(1,2) <= 10 && dist(1,3) <= 10)").unwrap();
        let u = &t.units[0];
        assert_eq!(u.op, TemporalOp::Always);
        match &u.body {
            PsiFormula::Conjunction(parts) => {
                assert_eq!(parts.len(), 2);
                assert!(matches!(
                    parts[1],
                    PsiFormula::Atom(PredicateAtom::BallDistPair { a: 1, b: 3, .. })
                ));
            }
            other => panic!("unexpected body {other:?}"),
        }
    }

    #[test]
    fn reversed_window_is_rejected() {
        assert!(matches!(
            parse_task("F[5,3] dist(1,2) <= 1"),
            Err(StlError::TimeBoundOrder(_))
        ));
        assert!(matches!(
            parse_task("F[-1,3] dist(1,2) <= 1"),
            Err(StlError::TimeBoundOrder(_))
        ));
    }

    #[test]
    fn overlapping_sequence_is_rejected() {
        let err = parse_task("F[0,10] dist(1,[0,0]) <= 1 && F[5,20] dist(1,[5,5]) <= 1");
        assert!(matches!(err, Err(StlError::TimeBoundOrder(_))));
        let ok = parse_task("F[0,10] dist(1,[0,0]) <= 1 && G[10,20] dist(1,[5,5]) <= 1").unwrap();
        assert_eq!(ok.units.len(), 2);
    }

    #[test]
    fn negation_requires_affine_atom() {
        assert!(matches!(
            parse_task("F[0,1] !dist(1,2) <= 3"),
            Err(StlError::NonConcaveNegation(_))
        ));
        assert!(matches!(
            parse_task("F[0,1] !comp(1,1) - comp(2,1) in (0, 1)"),
            Err(StlError::NonConcaveNegation(_))
        ));
        let t = parse_task("F[0,1] !lin(1*x(1,1), -2*x(2,2)) >= 3").unwrap();
        assert!(matches!(t.units[0].body, PsiFormula::NegAtom(_)));
    }

    #[test]
    fn syntax_errors() {
        for bad in [
            "",
            "F[0,1]",
            "X[0,1] true",
            "F[0,1] dist(1,2) < 3",
            "F[0,1] dist(0,2) <= 3",
            "F[0,1] comp(1,0) - comp(2,1) in (0,1)",
            "F[0,1] true extra",
            "F[0,1] (true",
            "F[0,10] (true && G[0,5] true)",
        ] {
            assert!(matches!(parse_task(bad), Err(StlError::Syntax { .. })), "{bad:?}");
        }
    }

    #[test]
    fn band_and_angle_atoms() {
        let t = parse_task("F[10,15] comp(5,1) - comp(4,1) in (27, 33) && angdeg(4) near -45 tol 5").unwrap();
        match &t.units[0].body {
            PsiFormula::Conjunction(parts) => {
                assert_eq!(
                    parts[0],
                    PsiFormula::Atom(PredicateAtom::BandDiff {
                        lhs: Component { agent: 5, index: 0 },
                        rhs: Component { agent: 4, index: 0 },
                        lower: 27.0,
                        upper: 33.0
                    })
                );
                assert_eq!(
                    parts[1],
                    PsiFormula::Atom(PredicateAtom::AngleBand {
                        agent: 4,
                        center_deg: -45.0,
                        tol_deg: 5.0
                    })
                );
            }
            other => panic!("unexpected body {other:?}"),
        }
    }

    #[test]
    fn nest_is_flattened_with_cumulative_windows() {
        let t = parse_task("F[1,4] (dist(1,[0,0]) <= 1 && F[2,3] (dist(1,[5,0]) <= 1 && F[1,1] dist(1,[9,9]) <= 2))")
            .unwrap();
        let windows: Vec<_> = t.units.iter().map(|u| (u.a, u.b)).collect();
        assert_eq!(windows, vec![(1.0, 4.0), (3.0, 7.0), (4.0, 8.0)]);
        assert!(t.units.iter().all(|u| u.op == TemporalOp::Eventually));
        assert_eq!(
            t.shape,
            TaskShape::Nested {
                relative: vec![(1.0, 4.0), (2.0, 3.0), (1.0, 1.0)]
            }
        );
    }

    #[test]
    fn parenthesized_body_is_not_a_nest() {
        let t = parse_task("F[1,4] (dist(1,[0,0]) <= 1 && true)").unwrap();
        assert_eq!(t.shape, TaskShape::Sequence);
        assert!(matches!(t.units[0].body, PsiFormula::Conjunction(_)));
    }

    #[test]
    fn participants_include_owner() {
        let t = parse_task("F[0,5] dist(1,2) <= 1").unwrap();
        assert_eq!(participants(&t, 1), vec![1, 2]);
        let t = parse_task("F[0,5] dist(2,[0,0]) <= 1").unwrap();
        assert_eq!(participants(&t, 2), vec![2]);
        let bare = parse_task(" true ").unwrap();
        assert!(bare.units.is_empty() && bare.is_trivial());
        assert_eq!(bare.to_string(), "true");
        assert_eq!(participants(&bare, 7), vec![7]);
        let t = parse_task("G[0,1] true").unwrap();
        assert_eq!(participants(&t, 7), vec![7]);
    }

    #[test]
    fn print_round_trip_examples() {
        for src in [
            "F[5,15] dist(2,[90,90]) <= 5",
            "G[0,15] (dist(1,2) <= 10 && dist(1,3) <= 10)",
            "F[0,1] (dist(1,2) <= 1 && dist(2,3) <= 1) && dist(1,[0.5,-2e-3]) <= 2",
            "F[0,1] !lin(1.5*x(1,1), -2*x(2,3)) >= -0.25 && G[2,3] true",
            "F[1,4] ((true && angdeg(1) near 90 tol 5) && F[2,3] comp(1,1) - comp(1,2) in (-1, 1))",
        ] {
            let first = parse_task(src).unwrap();
            let printed = first.to_string();
            let second = parse_task(&printed).unwrap();
            assert_eq!(first, second, "{src} -> {printed}");
        }
    }
}
