// Output list of the rewritten aggregate: every original column in order,
// with each removed key replaced by its constant literal.
fn output_columns(input: Aggregate, keys: Vec<Key>) -> Vec<Column> {
    let mut cols = Vec::new();
    for c in input.original_columns() {
        match keys.iter().find(|k| k.key == c) {
            Some(b) => cols.push(Column::literal(b.lit, c.name())),
            None => cols.push(Column::reference(c)),
        }
    }
    cols
}

struct KeyBinding {
    key: Key,
    lit: Literal,
}

const MAX_KEYS: usize = 64;
