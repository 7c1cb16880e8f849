use super::{DatabaseSchema, SchemaError, Selection, TableDef};

/// Keep only the selected tables and columns.
///
/// Each kept table also retains its primary-key columns and every column that
/// is a foreign-key endpoint in the source catalog, so joins stay
/// expressible. Foreign keys with a dropped endpoint table are removed.
pub fn prune_schema(schema: &DatabaseSchema, keep: &Selection) -> Result<DatabaseSchema, SchemaError> {
    if keep.is_empty() {
        return Err(SchemaError::EmptySelection);
    }
    keep.validate(schema)?;

    let tables: Vec<TableDef> = schema
        .tables
        .iter()
        .filter(|t| keep.contains_table(&t.name))
        .map(|t| TableDef {
            name: t.name.clone(),
            columns: t
                .columns
                .iter()
                .filter(|c| c.is_primary_key || c.in_foreign_key || keep.contains_column(&t.name, &c.name))
                .cloned()
                .collect(),
        })
        .collect();
    let foreign_keys = schema
        .foreign_keys
        .iter()
        .filter(|fk| keep.contains_table(&fk.from_table) && keep.contains_table(&fk.to_table))
        .cloned()
        .collect();

    let mut pruned = DatabaseSchema::new(schema.db_id.clone(), tables, foreign_keys)?;
    // `new` only marks endpoints of surviving keys; carry the source marks.
    for table in &mut pruned.tables {
        let source = schema.table(&table.name).expect("kept table exists in source");
        for col in &mut table.columns {
            col.in_foreign_key |= source.column(&col.name).is_some_and(|c| c.in_foreign_key);
        }
    }
    pruned.sqlite_path = schema.sqlite_path.clone();
    Ok(pruned)
}

#[cfg(test)]
mod tests {
    use super::super::fixtures::{pets, stadium_concert};
    use super::super::NameError;
    use super::*;
    use proptest::prelude::*;

    fn column_names(s: &DatabaseSchema, table: &str) -> Vec<String> {
        s.table(table).unwrap().columns.iter().map(|c| c.name.clone()).collect()
    }

    #[test]
    fn closure_adds_primary_and_join_keys() {
        let s = stadium_concert();
        let mut keep = Selection::new();
        keep.add_columns("concert", ["concert_Name", "year"]);
        let p = prune_schema(&s, &keep).unwrap();
        assert_eq!(p.tables.len(), 1);
        assert!(p.foreign_keys.is_empty());
        // By hand: kept {concert_Name, Year} + PK concert_ID + FK column Stadium_ID.
        assert_eq!(
            column_names(&p, "concert"),
            vec!["concert_ID", "concert_Name", "Stadium_ID", "Year"]
        );
    }

    #[test]
    fn keeping_everything_is_identity() {
        for s in [stadium_concert(), pets()] {
            assert_eq!(prune_schema(&s, &s.full_selection()).unwrap(), s);
        }
    }

    #[test]
    fn typo_reports_suggestion() {
        let s = stadium_concert();
        let mut keep = Selection::new();
        keep.add_columns("staduim", ["Name"]);
        match prune_schema(&s, &keep) {
            Err(SchemaError::UnknownNames(errs)) => {
                assert!(matches!(
                    &errs[0],
                    NameError::UnknownTable { suggestion: Some(sug), .. } if sug == "stadium"
                ));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_selection_is_an_error() {
        assert_eq!(
            prune_schema(&stadium_concert(), &Selection::new()),
            Err(SchemaError::EmptySelection)
        );
    }

    #[test]
    fn surviving_keys_are_kept() {
        let s = pets();
        let mut keep = Selection::new();
        keep.add_columns("Student", ["Age"])
            .add_columns("Has_Pet", Vec::<&str>::new());
        let p = prune_schema(&s, &keep).unwrap();
        assert_eq!(p.foreign_keys.len(), 2);
        assert_eq!(column_names(&p, "Has_Pet"), vec!["StuID", "PetID"]);
    }

    fn arb_keep(s: &DatabaseSchema) -> impl Strategy<Value = Selection> {
        let tables: Vec<(String, Vec<String>)> = s
            .tables
            .iter()
            .map(|t| (t.name.clone(), t.columns.iter().map(|c| c.name.clone()).collect()))
            .collect();
        let n = tables.len();
        proptest::collection::vec((any::<bool>(), proptest::collection::vec(any::<bool>(), 8)), n).prop_filter_map(
            "non-empty",
            move |mask| {
                let mut sel = Selection::new();
                for ((keep_t, cols), (name, names)) in mask.iter().zip(&tables) {
                    if *keep_t {
                        sel.add_columns(
                            name,
                            names.iter().zip(cols).filter(|(_, k)| **k).map(|(c, _)| c.as_str()),
                        );
                    }
                }
                (!sel.is_empty()).then_some(sel)
            },
        )
    }

    proptest! {
        #[test]
        fn pruning_is_a_closed_idempotent_subset(keep in arb_keep(&pets())) {
            let s = pets();
            let once = prune_schema(&s, &keep).unwrap();
            let twice = prune_schema(&once, &keep).unwrap();
            prop_assert_eq!(&once, &twice);
            for t in &once.tables {
                let src = s.table(&t.name).unwrap();
                for c in &t.columns {
                    prop_assert!(src.column(&c.name).is_some());
                }
                for pk in src.primary_keys() {
                    prop_assert!(t.column(&pk.name).is_some());
                }
            }
            for fk in &once.foreign_keys {
                prop_assert!(once.table(&fk.from_table).unwrap().column(&fk.from_column).is_some());
                prop_assert!(once.table(&fk.to_table).unwrap().column(&fk.to_column).is_some());
            }
        }
    }
}
