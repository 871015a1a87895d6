use std::io::Write;
use std::process::{Command, Stdio};

use proptest::prelude::*;
use selfheal_core::js::{apply_line_skipper, apply_object_creator, apply_plan, is_parseable, Edit, RewriteOptions, RewritePlan};
use selfheal_core::model::{ErrorKey, ErrorType, FailurePoint, StrategyKind};

fn fp(line: u32, column: u32) -> FailurePoint {
    FailurePoint::new(None, line, column).unwrap()
}

fn skip_edit(line: u32, ident: &str) -> Edit {
    Edit { strategy: StrategyKind::LineSkipper, fp: fp(line, 0), error_type: ErrorType::NotDefined, identifier: Some(ident.into()), key: None }
}

/// One call statement per line, `f0();` to `f{n-1}();`, some indented.
fn script(n: usize, indent: &[bool]) -> String {
    (0..n).map(|i| format!("{}f{i}();\n", if indent[i] { "  " } else { "" })).collect()
}

proptest! {
    #[test]
    fn plans_match_bottom_up_single_edits(
        (n, indent, targets) in (1usize..12).prop_flat_map(|n| (
            Just(n),
            prop::collection::vec(any::<bool>(), n),
            prop::collection::btree_set(0..n, 0..=n),
        )),
        order in any::<u64>(),
    ) {
        let source = script(n, &indent);
        let mut targets: Vec<usize> = targets.into_iter().collect();
        // Plan edits in a scrambled order.
        targets.sort_by_key(|t| (*t as u64).wrapping_mul(order | 1) % 97);
        let mut plan = RewritePlan::new("http://t.test/a.js");
        for t in &targets {
            plan.push(skip_edit(*t as u32 + 1, &format!("f{t}")));
        }
        let out = apply_plan(&source, &plan, &RewriteOptions::default()).unwrap();
        prop_assert!(out.skipped.is_empty());
        prop_assert!(is_parseable(&out.body));

        // Oracle: apply the same edits one at a time, bottom line first, so
        // earlier positions stay valid.
        let mut expected = source.clone();
        let mut bottom_up = targets.clone();
        bottom_up.sort_unstable_by(|a, b| b.cmp(a));
        for t in bottom_up {
            let col = if indent[t] { 2 } else { 0 };
            expected = apply_line_skipper(&expected, &fp(t as u32 + 1, col), ErrorType::NotDefined, Some(&format!("f{t}"))).unwrap();
        }
        prop_assert_eq!(&out.body, &expected);

        // Untargeted lines keep their bytes.
        for (i, line) in source.lines().enumerate() {
            let healed_line = out.body.lines().nth(i).unwrap();
            if targets.contains(&i) {
                prop_assert!(healed_line.contains(line.trim()));
            } else {
                prop_assert_eq!(healed_line, line);
            }
        }
    }

    #[test]
    fn object_creator_output_parses(name in "[a-z][a-z0-9]{0,6}", prop_name in "[a-z]{1,6}", read in any::<bool>()) {
        prop_assume!(!matches!(name.as_str(), "do" | "if" | "in" | "for" | "new" | "try" | "var" | "let" | "case" | "else" | "enum" | "null" | "this" | "true" | "void" | "with" | "break" | "catch" | "class" | "const" | "false" | "super" | "throw" | "while" | "yield" | "delete" | "export" | "import" | "return" | "static" | "switch" | "typeof" | "default" | "extends" | "finally" | "package" | "private" | "continue" | "debugger" | "function" | "arguments" | "interface" | "protected" | "implements" | "instanceof" | "await" | "public"));
        let stmt = if read { format!("var out = {name}.{prop_name};") } else { format!("{name}.{prop_name} = 1;") };
        let source = format!("var {name} = null;\n{stmt}\n");
        let ty = if read { ErrorType::CannotReadPropertyOfNull } else { ErrorType::CannotSetPropertyOfNull };
        let out = apply_object_creator(&source, &fp(2, 0), ty, &prop_name).unwrap();
        prop_assert!(is_parseable(&out));
        let head = format!("var {name} = null;\n");
        let tail = format!("{stmt}\n");
        prop_assert!(out.starts_with(&head));
        prop_assert!(out.ends_with(&tail));
    }
}

fn node() -> bool {
    Command::new("node").arg("--version").output().is_ok_and(|o| o.status.success())
}

/// Runs `code` under node, returning whether it completed without throwing.
fn runs_clean(code: &str) -> bool {
    let mut child = Command::new("node").arg("-").stdin(Stdio::piped()).stdout(Stdio::null()).stderr(Stdio::null()).spawn().unwrap();
    child.stdin.take().unwrap().write_all(code.as_bytes()).unwrap();
    child.wait().unwrap().success()
}

#[test]
fn healed_snippets_run_under_node() {
    if !node() {
        eprintln!("node not found, skipping");
        return;
    }
    let cases: Vec<(&str, Box<dyn Fn(&str) -> String>)> = vec![
        ("if (m) { x = 1; }\n", Box::new(|s| apply_line_skipper(s, &fp(1, 0), ErrorType::NotDefined, Some("m")).unwrap())),
        ("var func = null;\nfunc();\n", Box::new(|s| apply_line_skipper(s, &fp(2, 0), ErrorType::NotAFunction, Some("func")).unwrap())),
        ("var api = {};\napi.start();\n", Box::new(|s| apply_line_skipper(s, &fp(2, 4), ErrorType::NotAFunction, Some("api.start")).unwrap())),
        (
            "var cfg = { opts: null };\nvar size = cfg.opts.size;\n",
            Box::new(|s| apply_line_skipper(s, &fp(2, 20), ErrorType::CannotReadPropertyOfNull, Some("size")).unwrap()),
        ),
        ("var m = null;\nm.test = '';\n", Box::new(|s| apply_object_creator(s, &fp(2, 7), ErrorType::CannotSetPropertyOfNull, "test").unwrap())),
        (
            "var c = null;\nfunction items() {\n  return c.items;\n}\nitems();\n",
            Box::new(|s| apply_object_creator(s, &fp(3, 11), ErrorType::CannotReadPropertyOfNull, "items").unwrap()),
        ),
        (
            "function boot() {\n  setup();\n  return true;\n}\nif (!boot()) { throw new Error('boot'); }\n",
            Box::new(|s| apply_line_skipper(s, &fp(2, 2), ErrorType::NotDefined, Some("setup")).unwrap()),
        ),
    ];
    for (source, heal) in cases {
        assert!(!runs_clean(source), "original should throw: {source}");
        let healed = heal(source);
        assert!(runs_clean(&healed), "healed code throws: {healed}");
    }
}

#[test]
fn instrumented_plans_run_under_node() {
    if !node() {
        return;
    }
    let source = "a();\nvar o = null;\no.k = 1;\nb();\n";
    let mut plan = RewritePlan::new("http://t.test/a.js");
    let key = |s: &str| Some(s.parse::<ErrorKey>().unwrap());
    plan.push(Edit { key: key("NotDefined|a|http://t.test/a.js|1|0"), ..skip_edit(1, "a") });
    plan.push(Edit {
        strategy: StrategyKind::ObjectCreator,
        fp: fp(3, 4),
        error_type: ErrorType::CannotSetPropertyOfNull,
        identifier: Some("k".into()),
        key: key("CannotSetPropertyOfNull|k|http://t.test/a.js|3|4"),
    });
    plan.push(Edit { key: key("NotDefined|b|http://t.test/a.js|4|0"), ..skip_edit(4, "b") });
    let out = apply_plan(source, &plan, &RewriteOptions { instrument: true }).unwrap();
    assert_eq!(out.applied.len(), 3);
    // Pings must be harmless without the monitor.
    assert!(runs_clean(&out.body), "{}", out.body);
    let with_monitor = format!("var pings = 0; var __selfheal = {{ activation: function () {{ pings++; }} }};\n{}\nif (pings !== 3) {{ throw new Error('pings ' + pings); }}\n", out.body);
    assert!(runs_clean(&with_monitor), "{with_monitor}");
}
