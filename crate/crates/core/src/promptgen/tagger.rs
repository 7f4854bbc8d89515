// SPDX-License-Identifier: MIT OR Apache-2.0

use super::{Role, RoleSpan, SEPARATOR};

/// Tags every byte of `text` by scanning its lines, independently of the
/// renderer. Consecutive bytes with the same (role, shot, step) are merged
/// into one span, so syntax runs come out maximal per shot.
pub fn tag_roles(text: &str) -> Vec<RoleSpan> {
    let bytes = text.as_bytes();
    let mut tags: Vec<(Role, usize, Option<usize>)> = vec![(Role::Syntax, 0, None); bytes.len()];

    let mut shot_start = 0;
    for (shot, piece) in text.split(SEPARATOR).enumerate() {
        let shot_end = shot_start + piece.len();
        let sep_end = (shot_end + SEPARATOR.len()).min(bytes.len());
        for t in &mut tags[shot_start..sep_end] {
            t.1 = shot;
        }
        let mut steps = 0usize;
        let mut line_start = shot_start;
        for line in piece.split('\n') {
            let b = &bytes[line_start..line_start + line.len()];
            if b.starts_with(b"KB = {") {
                tag_kb(b, line_start, steps, &mut tags);
            } else if b.starts_with(b"=> F(KB[") {
                tag_step(b, line_start, steps, &mut tags);
                steps += 1;
            }
            line_start += line.len() + 1;
        }
        shot_start = shot_end + SEPARATOR.len();
    }

    let mut out: Vec<RoleSpan> = Vec::new();
    for (i, &(role, shot, step)) in tags.iter().enumerate() {
        match out.last_mut() {
            Some(s) if s.role == role && s.shot_index == shot && s.step_index == step && s.role == Role::Syntax => {
                s.end = i + 1;
            }
            _ => out.push(RoleSpan { role, start: i, end: i + 1, shot_index: shot, step_index: step }),
        }
    }
    // merge multi-digit rule ids, the only multi-byte component
    let mut merged: Vec<RoleSpan> = Vec::with_capacity(out.len());
    for s in out {
        match merged.last_mut() {
            Some(m) if m.role == Role::RuleSelection && s.role == Role::RuleSelection && m.end == s.start => m.end = s.end,
            _ => merged.push(s),
        }
    }
    merged
}

fn tag_kb(line: &[u8], base: usize, step: usize, tags: &mut [(Role, usize, Option<usize>)]) {
    for (i, &c) in line.iter().enumerate().skip(6) {
        if c == b'}' {
            break;
        }
        if c.is_ascii_uppercase() {
            tags[base + i].0 = Role::PremiseInKb;
            tags[base + i].2 = Some(step);
        }
    }
}

fn tag_step(line: &[u8], base: usize, step: usize, tags: &mut [(Role, usize, Option<usize>)]) {
    let mut set = |i: usize, role: Role| {
        tags[base + i].0 = role;
        tags[base + i].2 = Some(step);
    };
    let mut i = 8; // after "=> F(KB["
    // premise list: 'X' followed by ',' or ']'
    loop {
        if line.get(i) != Some(&b'\'') || !line.get(i + 1).is_some_and(u8::is_ascii_uppercase) {
            return;
        }
        set(i + 1, Role::PremiseSelection);
        if line.get(i + 2) != Some(&b'\'') {
            return;
        }
        let Some(&term) = line.get(i + 3) else { return };
        if term == b',' || term == b']' {
            set(i + 3, Role::PremiseSelectionTermination);
        }
        if term == b',' && line.get(i + 4) == Some(&b' ') {
            i += 5;
            continue;
        }
        if term != b']' {
            return;
        }
        i += 4;
        break;
    }
    // ", Rule" digits
    if !line[i..].starts_with(b", Rule") {
        return;
    }
    i += 6;
    while i < line.len() && line[i].is_ascii_digit() {
        set(i, Role::RuleSelection);
        i += 1;
    }
    if !line[i..].starts_with(b") => `") {
        return;
    }
    i += 6;
    if i < line.len() && line[i].is_ascii_uppercase() {
        set(i, Role::FactDerivation);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn roles(text: &str) -> Vec<(Role, &str)> {
        tag_roles(text).into_iter().filter(|s| s.role != Role::Syntax).map(|s| (s.role, &text[s.range()])).collect()
    }

    #[test]
    fn single_premise_step() {
        let got = roles("=> F(KB['A'], Rule4) => `D`");
        assert_eq!(
            got,
            vec![
                (Role::PremiseSelection, "A"),
                (Role::PremiseSelectionTermination, "]"),
                (Role::RuleSelection, "4"),
                (Role::FactDerivation, "D"),
            ]
        );
    }

    #[test]
    fn two_premise_step_and_multi_digit_rule() {
        let got = roles("=> F(KB['F', 'K'], Rule12) => `E`");
        assert_eq!(
            got,
            vec![
                (Role::PremiseSelection, "F"),
                (Role::PremiseSelectionTermination, ","),
                (Role::PremiseSelection, "K"),
                (Role::PremiseSelectionTermination, "]"),
                (Role::RuleSelection, "12"),
                (Role::FactDerivation, "E"),
            ]
        );
    }

    #[test]
    fn kb_line_has_three_premises() {
        let spans = tag_roles("KB = {A, K, F}");
        let kb: Vec<_> = spans.iter().filter(|s| s.role == Role::PremiseInKb).collect();
        assert_eq!(kb.len(), 3);
        assert!(kb.iter().all(|s| s.end - s.start == 1 && s.step_index == Some(0)));
    }

    #[test]
    fn partial_line_tags_what_it_can() {
        assert_eq!(roles("=> F(KB['"), vec![]);
        assert_eq!(roles("=> F(KB['A'"), vec![(Role::PremiseSelection, "A")]);
        assert_eq!(roles("=> F(KB['A']"), vec![(Role::PremiseSelection, "A"), (Role::PremiseSelectionTermination, "]")]);
    }

    #[test]
    fn rule_lines_are_syntax() {
        let t = "# (Rule10): If Q then P\n# (Question): truth value of P?";
        let spans = tag_roles(t);
        assert_eq!(spans.len(), 1);
        assert_eq!(spans[0].role, Role::Syntax);
    }
}
