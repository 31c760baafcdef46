//! C integer constant expressions: lexing, parsing and evaluation.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExprError {
    #[error("unexpected character `{0}`")]
    BadChar(char),
    #[error("malformed integer literal `{0}`")]
    BadLiteral(String),
    #[error("integer literal `{0}` does not fit in 64 bits")]
    Overflow(String),
    #[error("unexpected {found}, expected {expected}")]
    Unexpected { found: String, expected: &'static str },
    #[error("unknown identifier `{0}`")]
    Unknown(String),
    #[error("division by zero")]
    DivByZero,
    #[error("{0}")]
    Lookup(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Token {
    Int(u64),
    Ident(String),
    Op(BinOp),
    Tilde,
    LParen,
    RParen,
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Token::Int(n) => write!(f, "`{n}`"),
            Token::Ident(s) => write!(f, "`{s}`"),
            Token::Op(op) => write!(f, "`{}`", op.symbol()),
            Token::Tilde => f.write_str("`~`"),
            Token::LParen => f.write_str("`(`"),
            Token::RParen => f.write_str("`)`"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Mul,
    Div,
    Rem,
    Add,
    Sub,
    Shl,
    Shr,
    And,
    Xor,
    Or,
}

impl BinOp {
    pub const ALL: [BinOp; 10] = [
        BinOp::Mul,
        BinOp::Div,
        BinOp::Rem,
        BinOp::Add,
        BinOp::Sub,
        BinOp::Shl,
        BinOp::Shr,
        BinOp::And,
        BinOp::Xor,
        BinOp::Or,
    ];

    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Rem => "%",
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Shl => "<<",
            BinOp::Shr => ">>",
            BinOp::And => "&",
            BinOp::Xor => "^",
            BinOp::Or => "|",
        }
    }

    /// Binding strength, higher binds tighter (C ordering).
    pub fn precedence(self) -> u8 {
        match self {
            BinOp::Mul | BinOp::Div | BinOp::Rem => 5,
            BinOp::Add | BinOp::Sub => 4,
            BinOp::Shl | BinOp::Shr => 3,
            BinOp::And => 2,
            BinOp::Xor => 1,
            BinOp::Or => 0,
        }
    }

    pub fn apply(self, a: u64, b: u64) -> Result<u64, ExprError> {
        Ok(match self {
            BinOp::Mul => a.wrapping_mul(b),
            BinOp::Div => a.checked_div(b).ok_or(ExprError::DivByZero)?,
            BinOp::Rem => a.checked_rem(b).ok_or(ExprError::DivByZero)?,
            BinOp::Add => a.wrapping_add(b),
            BinOp::Sub => a.wrapping_sub(b),
            BinOp::Shl => a.checked_shl(u32::try_from(b).unwrap_or(u32::MAX)).unwrap_or(0),
            BinOp::Shr => a.checked_shr(u32::try_from(b).unwrap_or(u32::MAX)).unwrap_or(0),
            BinOp::And => a & b,
            BinOp::Xor => a ^ b,
            BinOp::Or => a | b,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnOp {
    Neg,
    Not,
    Plus,
}

impl UnOp {
    pub fn apply(self, a: u64) -> u64 {
        match self {
            UnOp::Neg => a.wrapping_neg(),
            UnOp::Not => !a,
            UnOp::Plus => a,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ConstExpr {
    Int(u64),
    Ident(String),
    Unary(UnOp, Box<ConstExpr>),
    Binary(BinOp, Box<ConstExpr>, Box<ConstExpr>),
}

impl ConstExpr {
    /// Evaluates with 64-bit wrapping arithmetic.
    pub fn eval(&self, lookup: &mut dyn FnMut(&str) -> Result<u64, ExprError>) -> Result<u64, ExprError> {
        match self {
            ConstExpr::Int(n) => Ok(*n),
            ConstExpr::Ident(name) => lookup(name),
            ConstExpr::Unary(op, e) => Ok(op.apply(e.eval(lookup)?)),
            ConstExpr::Binary(op, a, b) => {
                let a = a.eval(lookup)?;
                let b = b.eval(lookup)?;
                op.apply(a, b)
            }
        }
    }

    pub fn identifiers(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.collect_idents(&mut out);
        out
    }

    fn collect_idents<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            ConstExpr::Int(_) => {}
            ConstExpr::Ident(s) => out.push(s),
            ConstExpr::Unary(_, e) => e.collect_idents(out),
            ConstExpr::Binary(_, a, b) => {
                a.collect_idents(out);
                b.collect_idents(out);
            }
        }
    }
}

impl fmt::Display for ConstExpr {
    /// Fully parenthesised rendering.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConstExpr::Int(n) => write!(f, "{n:#x}"),
            ConstExpr::Ident(s) => f.write_str(s),
            ConstExpr::Unary(op, e) => {
                let s = match op {
                    UnOp::Neg => "-",
                    UnOp::Not => "~",
                    UnOp::Plus => "+",
                };
                write!(f, "{s}({e})")
            }
            ConstExpr::Binary(op, a, b) => write!(f, "({a} {} {b})", op.symbol()),
        }
    }
}

const TYPE_WORDS: &[&str] = &[
    "unsigned", "signed", "int", "long", "short", "char", "const", "volatile", "size_t", "uintptr_t",
    "uint8_t", "uint16_t", "uint32_t", "uint64_t", "int8_t", "int16_t", "int32_t", "int64_t", "u8",
    "u16", "u32", "u64", "s8", "s16", "s32", "s64",
];

pub fn is_type_word(s: &str) -> bool {
    TYPE_WORDS.contains(&s)
}

/// Parses one C integer literal with optional `U`/`L` suffixes. Decimal,
/// `0x` hexadecimal, `0b` binary and leading-zero octal are accepted.
pub fn parse_c_literal(text: &str) -> Result<u64, ExprError> {
    let bad = || ExprError::BadLiteral(text.to_string());
    let digits_end = text
        .char_indices()
        .rev()
        .take_while(|(_, c)| matches!(c, 'u' | 'U' | 'l' | 'L'))
        .last()
        .map(|(i, _)| i)
        .unwrap_or(text.len());
    let (body, suffix) = text.split_at(digits_end);
    let s = suffix.to_ascii_lowercase();
    if !matches!(s.as_str(), "" | "u" | "l" | "ul" | "lu" | "ll" | "ull" | "llu") {
        return Err(bad());
    }
    let (radix, digits) = if let Some(h) = body.strip_prefix("0x").or_else(|| body.strip_prefix("0X")) {
        (16, h)
    } else if let Some(b) = body.strip_prefix("0b").or_else(|| body.strip_prefix("0B")) {
        (2, b)
    } else if body.len() > 1 && body.starts_with('0') {
        (8, &body[1..])
    } else {
        (10, body)
    };
    if digits.is_empty() || !digits.chars().all(|c| c.is_digit(radix)) {
        return Err(bad());
    }
    u64::from_str_radix(digits, radix).map_err(|_| ExprError::Overflow(text.to_string()))
}

/// Tokenises an expression, dropping `(type)` casts made only of integer
/// type words.
pub fn lex(text: &str) -> Result<Vec<Token>, ExprError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if c.is_ascii_digit() {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            let lit: String = chars[start..i].iter().collect();
            out.push(Token::Int(parse_c_literal(&lit)?));
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Token::Ident(chars[start..i].iter().collect()));
            continue;
        }
        let two: String = chars[i..(i + 2).min(chars.len())].iter().collect();
        let (tok, len) = match (c, two.as_str()) {
            (_, "<<") => (Token::Op(BinOp::Shl), 2),
            (_, ">>") => (Token::Op(BinOp::Shr), 2),
            ('*', _) => (Token::Op(BinOp::Mul), 1),
            ('/', _) => (Token::Op(BinOp::Div), 1),
            ('%', _) => (Token::Op(BinOp::Rem), 1),
            ('+', _) => (Token::Op(BinOp::Add), 1),
            ('-', _) => (Token::Op(BinOp::Sub), 1),
            ('&', _) => (Token::Op(BinOp::And), 1),
            ('^', _) => (Token::Op(BinOp::Xor), 1),
            ('|', _) => (Token::Op(BinOp::Or), 1),
            ('~', _) => (Token::Tilde, 1),
            ('(', _) => (Token::LParen, 1),
            (')', _) => (Token::RParen, 1),
            _ => return Err(ExprError::BadChar(c)),
        };
        out.push(tok);
        i += len;
    }
    Ok(strip_casts(out))
}

fn strip_casts(tokens: Vec<Token>) -> Vec<Token> {
    let mut out = Vec::with_capacity(tokens.len());
    let mut i = 0;
    while i < tokens.len() {
        if tokens[i] == Token::LParen {
            let mut j = i + 1;
            while let Some(Token::Ident(w)) = tokens.get(j) {
                if !is_type_word(w) {
                    break;
                }
                j += 1;
            }
            if j > i + 1 && tokens.get(j) == Some(&Token::RParen) {
                i = j + 1;
                continue;
            }
        }
        out.push(tokens[i].clone());
        i += 1;
    }
    out
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn describe(t: Option<&Token>) -> String {
        t.map(|t| t.to_string()).unwrap_or_else(|| "end of input".into())
    }

    fn binary(&mut self, min_prec: u8) -> Result<ConstExpr, ExprError> {
        let mut lhs = self.unary()?;
        while let Some(Token::Op(op)) = self.peek() {
            let op = *op;
            if op.precedence() < min_prec {
                break;
            }
            self.pos += 1;
            let rhs = self.binary(op.precedence() + 1)?;
            lhs = ConstExpr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<ConstExpr, ExprError> {
        let op = match self.peek() {
            Some(Token::Op(BinOp::Sub)) => UnOp::Neg,
            Some(Token::Op(BinOp::Add)) => UnOp::Plus,
            Some(Token::Tilde) => UnOp::Not,
            _ => return self.primary(),
        };
        self.pos += 1;
        Ok(ConstExpr::Unary(op, Box::new(self.unary()?)))
    }

    fn primary(&mut self) -> Result<ConstExpr, ExprError> {
        match self.next() {
            Some(Token::Int(n)) => Ok(ConstExpr::Int(n)),
            Some(Token::Ident(s)) => Ok(ConstExpr::Ident(s)),
            Some(Token::LParen) => {
                let e = self.binary(0)?;
                match self.next() {
                    Some(Token::RParen) => Ok(e),
                    t => Err(ExprError::Unexpected { found: Self::describe(t.as_ref()), expected: "`)`" }),
                }
            }
            t => Err(ExprError::Unexpected { found: Self::describe(t.as_ref()), expected: "an operand" }),
        }
    }
}

pub fn parse(text: &str) -> Result<ConstExpr, ExprError> {
    let mut p = Parser { tokens: lex(text)?, pos: 0 };
    let e = p.binary(0)?;
    if p.pos < p.tokens.len() {
        return Err(ExprError::Unexpected { found: Parser::describe(p.peek()), expected: "an operator" });
    }
    Ok(e)
}

/// Parses and evaluates `text` with identifiers looked up by `lookup`.
pub fn evaluate(text: &str, lookup: &mut dyn FnMut(&str) -> Result<u64, ExprError>) -> Result<u64, ExprError> {
    parse(text)?.eval(lookup)
}
