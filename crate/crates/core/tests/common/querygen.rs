//! Random SQL over the emp/dept/bonus fixture schema.

use rand::seq::IndexedRandom;
use rand::Rng;

#[derive(Clone, Copy)]
struct Rel {
    table: &'static str,
    alias: &'static str,
    ints: &'static [&'static str],
    texts: &'static [&'static str],
}

const EMP: Rel = Rel {
    table: "emp",
    alias: "e",
    ints: &["empno", "deptno", "sal", "comm"],
    texts: &["ename", "job"],
};
const DEPT: Rel = Rel {
    table: "dept",
    alias: "d",
    ints: &["deptno"],
    texts: &["dname", "loc"],
};
const BONUS: Rel = Rel {
    table: "bonus",
    alias: "b",
    ints: &["sal", "comm"],
    texts: &["ename", "job"],
};
const INNER_EMP: Rel = Rel { alias: "e2", ..EMP };
const INNER_BONUS: Rel = Rel { alias: "b2", ..BONUS };

const INTS: [i64; 6] = [0, 10, 20, 100, 1000, 1250];
const TEXTS: [&str; 4] = ["'ward'", "'clerk'", "'manager'", "'dallas'"];
const CMP: [&str; 6] = ["=", "<>", "<", "<=", ">", ">="];

fn col<R: Rng>(rng: &mut R, r: &Rel, int: bool) -> String {
    let c = if int { r.ints } else { r.texts }.choose(rng).unwrap();
    format!("{}.{}", r.alias, c)
}

fn any_col<R: Rng>(rng: &mut R, rels: &[Rel]) -> (String, bool) {
    let r = rels.choose(rng).unwrap();
    let int = r.texts.is_empty() || rng.random_bool(0.6);
    (col(rng, r, int), int)
}

fn lit<R: Rng>(rng: &mut R, int: bool) -> String {
    if int {
        INTS.choose(rng).unwrap().to_string()
    } else {
        TEXTS.choose(rng).unwrap().to_string()
    }
}

fn simple_pred<R: Rng>(rng: &mut R, rels: &[Rel]) -> String {
    let (c, int) = any_col(rng, rels);
    match rng.random_range(0..6) {
        0 => format!("{c} IS NULL"),
        1 => format!("{c} IS NOT NULL"),
        2 => format!("{c} = {}", lit(rng, int)),
        3 if int => format!("{c} + 0 > {}", lit(rng, true)),
        _ => format!("{c} {} {}", CMP.choose(rng).unwrap(), lit(rng, int)),
    }
}

/// A correlated equality between an inner relation and one of `outer`.
fn correlation<R: Rng>(rng: &mut R, inner: &Rel, outer: &[Rel]) -> Option<String> {
    let o = outer.choose(rng).unwrap();
    let int = rng.random_bool(0.5);
    let (ic, oc) = (if int { inner.ints } else { inner.texts }, if int { o.ints } else { o.texts });
    if ic.is_empty() || oc.is_empty() {
        return None;
    }
    Some(format!(
        "{}.{} = {}.{}",
        inner.alias,
        ic.choose(rng).unwrap(),
        o.alias,
        oc.choose(rng).unwrap()
    ))
}

fn subquery_pred<R: Rng>(rng: &mut R, outer: &[Rel]) -> String {
    let inner = *[INNER_EMP, INNER_BONUS].choose(rng).unwrap();
    let corr = if rng.random_bool(0.6) {
        correlation(rng, &inner, outer)
    } else {
        None
    };
    let mut conds: Vec<String> = corr.into_iter().collect();
    if rng.random_bool(0.4) {
        conds.push(simple_pred(rng, &[inner]));
    }
    let where_ = if conds.is_empty() {
        String::new()
    } else {
        format!(" WHERE {}", conds.join(" AND "))
    };
    let from = format!("FROM {} {}", inner.table, inner.alias);
    let o = *outer.choose(rng).unwrap();
    let oc = col(rng, &o, true);
    let agg = *["MAX", "MIN", "SUM", "AVG", "COUNT"].choose(rng).unwrap();
    let ic = col(rng, &inner, true);
    match rng.random_range(0..7) {
        0 => format!("{oc} IN (SELECT {ic} {from}{where_})"),
        1 => format!("EXISTS (SELECT 1 {from}{where_})"),
        2 => format!("NOT EXISTS (SELECT 1 {from}{where_})"),
        3 => format!("{oc} = ANY (SELECT {ic} {from}{where_})"),
        4 => format!(
            "{oc} {} {} (SELECT {agg}({ic}) {from}{where_})",
            CMP.choose(rng).unwrap(),
            ["ANY", "ALL"].choose(rng).unwrap()
        ),
        5 => format!("(SELECT {agg}({ic}) {from}{where_}) {} {oc}", CMP.choose(rng).unwrap()),
        _ => format!("{oc} NOT IN (SELECT {ic} {from}{where_})"),
    }
}

fn from_clause<R: Rng>(rng: &mut R) -> (String, Vec<Rel>) {
    let leaf = |rng: &mut R, r: &Rel| -> String {
        match rng.random_range(0..8) {
            0 => format!(
                "(SELECT * FROM {} AS {} WHERE {}) AS {}",
                r.table,
                r.alias,
                simple_pred(rng, &[*r]),
                r.alias
            ),
            1 => {
                let cols: Vec<String> = r.ints.iter().chain(r.texts).map(|c| format!("{}.{c}", r.alias)).collect();
                format!("(SELECT {} FROM {} {}) AS {}", cols.join(", "), r.table, r.alias, r.alias)
            }
            _ => format!("{} {}", r.table, r.alias),
        }
    };
    match rng.random_range(0..3) {
        0 => (leaf(rng, &EMP), vec![EMP]),
        _ => {
            let other = *[DEPT, BONUS].choose(rng).unwrap();
            let key = if other.table == "dept" {
                "e.deptno = d.deptno".to_string()
            } else {
                ["e.ename = b.ename", "e.job = b.job", "e.sal = b.sal"].choose(rng).unwrap().to_string()
            };
            let mut on = vec![key];
            if rng.random_bool(0.4) {
                let side = *[EMP, other].choose(rng).unwrap();
                on.push(simple_pred(rng, &[side]));
            }
            let kind = *["JOIN", "JOIN", "LEFT JOIN", "RIGHT JOIN", "FULL JOIN", "CROSS JOIN"].choose(rng).unwrap();
            let (l, r) = (leaf(rng, &EMP), leaf(rng, &other));
            let text = if kind == "CROSS JOIN" {
                format!("{l} CROSS JOIN {r}")
            } else {
                format!("{l} {kind} {r} ON {}", on.join(" AND "))
            };
            (text, vec![EMP, other])
        }
    }
}

pub fn random_query<R: Rng>(rng: &mut R) -> String {
    let (from, rels) = from_clause(rng);
    let mut conds = Vec::new();
    for _ in 0..rng.random_range(0..4) {
        match rng.random_range(0..10) {
            0..=3 => conds.push(simple_pred(rng, &rels)),
            4..=6 => conds.push(subquery_pred(rng, &rels)),
            7 => conds.push("1 = 1".to_string()),
            8 => {
                let (a, int) = any_col(rng, &rels);
                let l = lit(rng, int);
                conds.push(format!("{a} = {l}"));
                conds.push(format!("{a} {} {l}", CMP.choose(rng).unwrap()));
            }
            _ => {
                if let Some(c) = conds.last().cloned() {
                    conds.push(c);
                }
            }
        }
    }
    let where_ = if conds.is_empty() {
        String::new()
    } else {
        format!(" WHERE {}", conds.join(" AND "))
    };
    if rng.random_bool(0.5) {
        let mut keys: Vec<String> = (0..rng.random_range(1..=3)).map(|_| any_col(rng, &rels).0).collect();
        keys.dedup();
        if rng.random_bool(0.2) {
            keys.clear();
        }
        let mut items = keys.clone();
        let dr = *rels.choose(rng).unwrap();
        let distinct_arg = col(rng, &dr, true);
        for _ in 0..rng.random_range(1..=3) {
            let arg = any_col(rng, &rels).0;
            items.push(match rng.random_range(0..7) {
                0 => "COUNT(*)".to_string(),
                1 => format!("COUNT(DISTINCT {distinct_arg})"),
                2 => format!("SUM(DISTINCT {distinct_arg})"),
                3 => format!("COUNT({arg})"),
                _ => {
                    let f = *["SUM", "MIN", "MAX"].choose(rng).unwrap();
                    let r = *rels.choose(rng).unwrap();
                    format!("{f}({})", col(rng, &r, true))
                }
            });
        }
        let group = if keys.is_empty() {
            String::new()
        } else {
            format!(" GROUP BY {}", keys.join(", "))
        };
        format!("SELECT {} FROM {from}{where_}{group}", items.join(", "))
    } else {
        let mut items: Vec<String> = (0..rng.random_range(1..=3)).map(|_| any_col(rng, &rels).0).collect();
        if rng.random_bool(0.25) {
            let inner = INNER_BONUS;
            if let Some(c) = correlation(rng, &inner, &rels) {
                let agg = *["MAX", "COUNT", "SUM"].choose(rng).unwrap();
                items.push(format!("(SELECT {agg}(b2.sal) FROM bonus b2 WHERE {c}) AS s"));
            }
        }
        let distinct = if rng.random_bool(0.15) { "DISTINCT " } else { "" };
        format!("SELECT {distinct}{} FROM {from}{where_}", items.join(", "))
    }
}
