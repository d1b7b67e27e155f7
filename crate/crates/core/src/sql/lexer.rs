use super::SqlError;

#[derive(Debug, Clone, PartialEq)]
pub enum Token {
    /// Lowercased word; keyword-ness is decided by the parser.
    Word(String),
    /// Double-quoted identifier, lowercased.
    Quoted(String),
    Int(i64),
    Float(f64),
    Str(String),
    Symbol(&'static str),
    Eof,
}

impl std::fmt::Display for Token {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Token::Word(w) => write!(f, "{}", w.to_uppercase()),
            Token::Quoted(w) => write!(f, "\"{w}\""),
            Token::Int(i) => write!(f, "{i}"),
            Token::Float(x) => write!(f, "{x}"),
            Token::Str(s) => write!(f, "'{s}'"),
            Token::Symbol(s) => f.write_str(s),
            Token::Eof => f.write_str("end of input"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Spanned {
    pub token: Token,
    /// Byte offset into the source text.
    pub pos: usize,
}

const SYMBOLS: [&str; 18] = [
    "<>", "<=", ">=", "!=", "||", "(", ")", ",", ".", ";", "=", "<", ">", "+", "-", "*", "/", "%",
];

pub fn tokenize(text: &str) -> Result<Vec<Spanned>, SqlError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        if text[i..].starts_with("--") {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        if text[i..].starts_with("/*") {
            match text[i + 2..].find("*/") {
                Some(end) => i += end + 4,
                None => {
                    return Err(SqlError::syntax(i, "end of comment `*/`", "end of input"));
                }
            }
            continue;
        }
        let start = i;
        if c.is_ascii_alphabetic() || c == '_' {
            while i < bytes.len() && ((bytes[i] as char).is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push(Spanned {
                token: Token::Word(text[start..i].to_ascii_lowercase()),
                pos: start,
            });
            continue;
        }
        if c.is_ascii_digit() {
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            let mut is_float = false;
            if i + 1 < bytes.len() && bytes[i] == b'.' && bytes[i + 1].is_ascii_digit() {
                is_float = true;
                i += 1;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
            }
            let lit = &text[start..i];
            let token = if is_float {
                Token::Float(lit.parse().expect("digits"))
            } else {
                Token::Int(
                    lit.parse()
                        .map_err(|_| SqlError::syntax(start, "integer within i64 range", lit))?,
                )
            };
            out.push(Spanned { token, pos: start });
            continue;
        }
        if c == '\'' || c == '"' {
            let quote = bytes[i];
            i += 1;
            let mut value = String::new();
            loop {
                if i >= bytes.len() {
                    return Err(SqlError::syntax(start, "closing quote", "end of input"));
                }
                if bytes[i] == quote {
                    if i + 1 < bytes.len() && bytes[i + 1] == quote {
                        value.push(quote as char);
                        i += 2;
                        continue;
                    }
                    i += 1;
                    break;
                }
                let ch = text[i..].chars().next().expect("in bounds");
                value.push(ch);
                i += ch.len_utf8();
            }
            let token = if quote == b'\'' {
                Token::Str(value)
            } else {
                Token::Quoted(value.to_lowercase())
            };
            out.push(Spanned { token, pos: start });
            continue;
        }
        match SYMBOLS.iter().find(|s| text[i..].starts_with(**s)) {
            Some(sym) => {
                i += sym.len();
                let sym = if *sym == "!=" { "<>" } else { sym };
                out.push(Spanned {
                    token: Token::Symbol(sym),
                    pos: start,
                });
            }
            None => {
                let ch = text[i..].chars().next().expect("in bounds");
                return Err(SqlError::syntax(i, "a token", &ch.to_string()));
            }
        }
    }
    out.push(Spanned {
        token: Token::Eof,
        pos: text.len(),
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn words_are_lowercased_and_strings_kept() {
        let toks: Vec<Token> = tokenize("SELECT Name FROM T WHERE x = 'Ab''c'")
            .unwrap()
            .into_iter()
            .map(|s| s.token)
            .collect();
        assert_eq!(toks[1], Token::Word("name".into()));
        assert_eq!(toks[7], Token::Str("Ab'c".into()));
    }

    #[test]
    fn numbers_and_comments() {
        let toks: Vec<Token> = tokenize("1 2.5 -- tail\n /* block */ <= !=")
            .unwrap()
            .into_iter()
            .map(|s| s.token)
            .collect();
        assert_eq!(
            toks,
            vec![
                Token::Int(1),
                Token::Float(2.5),
                Token::Symbol("<="),
                Token::Symbol("<>"),
                Token::Eof
            ]
        );
    }

    #[test]
    fn unterminated_string_is_an_error() {
        assert!(tokenize("select 'abc").is_err());
    }
}
