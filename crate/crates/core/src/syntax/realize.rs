use super::morph;
use super::{ConstituentSet, SyntaxError, TransformationKind};
use crate::parse::ParsedSentence;
use crate::util::{capitalize_first, lowercase_first};

/// Verbs whose prepositional dative takes "for", not "to".
const BENEFACTIVE: &[&str] = &[
    "buy", "make", "cook", "build", "bake", "get", "find", "fetch", "save", "order", "reserve",
    "draw", "paint", "pour", "prepare", "knit", "sew", "design",
];

fn unsupported(msg: impl Into<String>) -> SyntaxError {
    SyntaxError::UnsupportedRealization(msg.into())
}

/// A root child's subtree, or the root itself.
#[derive(Debug, Clone)]
struct Seg {
    head: usize,
    lo: usize,
    hi: usize,
    label: String,
}

fn segments(s: &ParsedSentence) -> Result<Vec<Seg>, SyntaxError> {
    let root = s.root_index;
    let mut segs = vec![Seg {
        head: root,
        lo: root,
        hi: root,
        label: "ROOT".into(),
    }];
    for c in s.children(root) {
        let sp = s.subtree_span(c.index);
        if !sp.contiguous {
            return Err(unsupported(format!("constituent headed by {:?} is not contiguous", c.text)));
        }
        segs.push(Seg {
            head: c.index,
            lo: sp.lo,
            hi: sp.hi,
            label: c.dep_label.clone(),
        });
    }
    segs.sort_by_key(|g| g.lo);
    for w in segs.windows(2) {
        if w[1].lo != w[0].hi + 1 {
            return Err(unsupported("main-clause constituents cross"));
        }
    }
    Ok(segs)
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Case {
    Keep,
    Nominative,
    Objective,
}

struct Out<'a> {
    s: &'a ParsedSentence,
    pieces: Vec<(String, bool)>,
}

impl<'a> Out<'a> {
    fn new(s: &'a ParsedSentence) -> Self {
        Out { s, pieces: Vec::new() }
    }

    fn word(&mut self, w: &str) {
        self.pieces.push((w.to_string(), false));
    }

    fn seg(&mut self, g: &Seg) {
        self.seg_case(g, Case::Keep);
    }

    fn seg_case(&mut self, g: &Seg, case: Case) {
        self.span_case(g.lo, g.hi, case);
    }

    fn span_case(&mut self, lo: usize, hi: usize, case: Case) {
        let s = self.s;
        let mut text = s.span_text(lo, hi);
        let first = s.token(lo);
        if lo == hi && first.fine_tag == "PRP" {
            let lower = first.lower();
            let mapped = match case {
                Case::Keep => None,
                Case::Nominative => morph::nominative(&lower),
                Case::Objective => morph::objective(&lower),
            };
            if let Some(m) = mapped {
                text = m.to_string();
            }
        }
        if lo == 1 && !is_proper(s, 1) {
            text = lowercase_first(&text);
        }
        let glue = lo > 1 && !s.space_before(lo);
        self.pieces.push((text, glue));
    }

    fn render(self) -> String {
        let mut out = String::new();
        for (text, glue) in self.pieces {
            if !out.is_empty() && !glue {
                out.push(' ');
            }
            out.push_str(&text);
        }
        capitalize_first(&out)
    }
}

fn is_proper(s: &ParsedSentence, i: usize) -> bool {
    let t = s.token(i);
    matches!(t.fine_tag.as_str(), "NNP" | "NNPS") || t.text == "I"
}

fn find<'s>(segs: &'s [Seg], label: &str) -> Option<&'s Seg> {
    segs.iter().find(|g| g.label == label)
}

fn need<'s>(segs: &'s [Seg], label: &str) -> Result<&'s Seg, SyntaxError> {
    find(segs, label).ok_or_else(|| unsupported(format!("no {label} constituent")))
}

fn final_punct(segs: &[Seg]) -> Option<&Seg> {
    segs.last().filter(|g| g.label == "punct")
}

fn is_final(segs: &[Seg], g: &Seg) -> bool {
    final_punct(segs).is_some_and(|p| p.lo == g.lo)
}

/// Modal and negation among the root's auxiliaries; anything beyond a
/// single modal (perfect, progressive, do-support) is out of scope.
fn modal_only(s: &ParsedSentence, segs: &[Seg], skip: &[&str]) -> Result<(Option<Seg>, Option<Seg>), SyntaxError> {
    let mut modal = None;
    for g in segs.iter().filter(|g| g.label == "aux" || g.label == "auxpass") {
        if skip.contains(&g.label.as_str()) {
            continue;
        }
        if s.token(g.head).fine_tag == "MD" && modal.is_none() {
            modal = Some(g.clone());
        } else {
            return Err(unsupported(format!("auxiliary {:?} is not a simple modal", s.token(g.head).text)));
        }
    }
    let neg = find(segs, "neg").cloned();
    if neg.is_some() && modal.is_none() {
        return Err(unsupported("negation without a modal needs do-support"));
    }
    Ok((modal, neg))
}

fn active_to_passive(s: &ParsedSentence, segs: &[Seg]) -> Result<String, SyntaxError> {
    let subj = need(segs, "nsubj")?;
    let obj = need(segs, "dobj")?;
    let root = s.root();
    if find(segs, "dative").is_some() {
        return Err(unsupported("double-object verb"));
    }
    if !(subj.hi < root.index && obj.lo > root.index) {
        return Err(unsupported("subject-verb-object order expected"));
    }
    let (modal, neg) = modal_only(s, segs, &[])?;
    let be = match (&modal, root.fine_tag.as_str()) {
        (Some(_), "VB") => "be",
        (None, "VBD") => morph::be_form(true, morph::agreement(s, obj.head)),
        (None, "VBZ" | "VBP") => morph::be_form(false, morph::agreement(s, obj.head)),
        _ => return Err(unsupported(format!("verb tag {} is not simple present or past", root.fine_tag))),
    };
    let mut out = Out::new(s);
    let mut post = Vec::new();
    let mut prt = Vec::new();
    let mut between = Vec::new();
    for g in segs {
        if g.hi < subj.lo {
            out.seg(g);
        } else if g.lo > subj.hi && g.hi < root.index {
            if !matches!(g.label.as_str(), "aux" | "neg") {
                between.push(g.clone());
            }
        } else if g.lo > root.index && g.lo != obj.lo && !is_final(segs, g) {
            if g.label == "prt" {
                prt.push(g.clone());
            } else {
                post.push(g.clone());
            }
        }
    }
    out.seg_case(obj, Case::Nominative);
    if let Some(m) = &modal {
        out.seg(m);
    }
    if let Some(n) = &neg {
        out.seg(n);
    }
    out.word(be);
    between.iter().for_each(|g| out.seg(g));
    out.word(&morph::participle(&root.lemma));
    prt.iter().for_each(|g| out.seg(g));
    out.word("by");
    out.seg_case(subj, Case::Objective);
    post.iter().for_each(|g| out.seg(g));
    if let Some(p) = final_punct(segs) {
        out.seg(p);
    }
    Ok(out.render())
}

fn passive_to_active(s: &ParsedSentence, segs: &[Seg]) -> Result<String, SyntaxError> {
    let subj = need(segs, "nsubjpass")?;
    let auxpass = need(segs, "auxpass")?;
    let agent = need(segs, "agent")?;
    let root = s.root();
    if s.token(agent.head).lower() != "by" || agent.lo != agent.head {
        return Err(unsupported("agent is not a \"by\" phrase"));
    }
    let pobj = s
        .child_with_label(agent.head, "pobj")
        .map(|t| s.subtree_span(t.index))
        .filter(|sp| sp.contiguous && sp.lo == agent.lo + 1 && sp.hi == agent.hi)
        .ok_or_else(|| unsupported("agent phrase is not \"by\" plus a noun phrase"))?;
    let pobj_head = s.child_with_label(agent.head, "pobj").map(|t| t.index).unwrap_or(agent.hi);
    if !(subj.hi < root.index && agent.lo > root.index) {
        return Err(unsupported("passive subject must precede the verb"));
    }
    let (modal, neg) = modal_only(s, segs, &["auxpass"])?;
    let agr = morph::agreement(s, pobj_head);
    let verb = match (&modal, s.token(auxpass.head).lower().as_str()) {
        (Some(_), "be") => root.lemma.clone(),
        (None, "was" | "were") => morph::past(&root.lemma),
        (None, "is" | "are" | "am") => morph::present(&root.lemma, agr),
        (_, other) => return Err(unsupported(format!("passive auxiliary {other:?} is out of scope"))),
    };
    let mut out = Out::new(s);
    let mut post = Vec::new();
    let mut prt = Vec::new();
    for g in segs {
        if g.hi < subj.lo {
            out.seg(g);
        } else if g.lo == subj.lo {
            out.span_case(pobj.lo, pobj.hi, Case::Nominative);
            if let Some(m) = &modal {
                out.seg(m);
            }
            if let Some(n) = &neg {
                out.seg(n);
            }
        } else if g.hi < root.index {
            if !matches!(g.label.as_str(), "aux" | "auxpass" | "neg") {
                out.seg(g);
            }
        } else if g.lo == root.index {
            out.word(&verb);
        } else if g.lo != agent.lo && !is_final(segs, g) {
            if g.label == "prt" {
                prt.push(g.clone());
            } else {
                post.push(g.clone());
            }
        }
    }
    prt.iter().for_each(|g| out.seg(g));
    out.seg_case(subj, Case::Objective);
    post.iter().for_each(|g| out.seg(g));
    if let Some(p) = final_punct(segs) {
        out.seg(p);
    }
    Ok(out.render())
}

fn extraposition(s: &ParsedSentence, segs: &[Seg]) -> Result<String, SyntaxError> {
    let cs = need(segs, "csubj")?;
    let root = s.root_index;
    if cs.hi > root {
        return Err(unsupported("clausal subject follows the verb"));
    }
    let mut out = Out::new(s);
    for g in segs {
        if g.lo == cs.lo {
            out.word("it");
        } else if !is_final(segs, g) {
            out.seg(g);
        }
    }
    out.seg(cs);
    if let Some(p) = final_punct(segs) {
        out.seg(p);
    }
    Ok(out.render())
}

fn reverse_extraposition(s: &ParsedSentence, segs: &[Seg]) -> Result<String, SyntaxError> {
    let it = need(segs, "nsubj")?;
    let cc = need(segs, "ccomp")?;
    if it.lo != it.hi || s.token(it.head).lower() != "it" {
        return Err(unsupported("subject is not a bare \"it\""));
    }
    if cc.lo < s.root_index {
        return Err(unsupported("clausal complement precedes the verb"));
    }
    let has_mark = s.token(cc.lo).dep_label == "mark" && s.token(cc.lo).head_index == cc.head;
    let mut out = Out::new(s);
    for g in segs {
        if g.lo == it.lo {
            if !has_mark {
                out.word("that");
            }
            out.seg(cc);
        } else if g.lo != cc.lo {
            out.seg(g);
        }
    }
    Ok(out.render())
}

fn subject_seg(segs: &[Seg]) -> Result<&Seg, SyntaxError> {
    find(segs, "nsubj")
        .or_else(|| find(segs, "nsubjpass"))
        .or_else(|| find(segs, "csubj"))
        .ok_or_else(|| unsupported("no subject"))
}

fn wh_seg<'s>(segs: &'s [Seg], wh: usize) -> Result<&'s Seg, SyntaxError> {
    segs.iter()
        .find(|g| g.lo <= wh && wh <= g.hi)
        .ok_or_else(|| unsupported("wh-word outside the main clause"))
}

fn wh_movement(s: &ParsedSentence, segs: &[Seg], wh: usize) -> Result<String, SyntaxError> {
    let subj = subject_seg(segs)?;
    let w = wh_seg(segs, wh)?;
    let root = s.root();
    if w.lo < subj.lo || w.label == "ROOT" {
        return Err(unsupported("wh-phrase is already fronted"));
    }
    let aux = segs
        .iter()
        .find(|g| (g.label == "aux" || g.label == "auxpass") && g.lo > subj.hi);
    let mut out = Out::new(s);
    for g in segs.iter().filter(|g| g.hi < subj.lo) {
        out.seg(g);
    }
    out.seg(w);
    let skip = |g: &Seg| g.lo == w.lo || g.lo <= subj.hi;
    match aux {
        Some(a) => {
            out.seg(a);
            out.seg(subj);
            for g in segs.iter().filter(|g| !skip(g) && g.lo != a.lo) {
                out.seg(g);
            }
        }
        None if root.lemma == "be" => {
            let v = segs.iter().find(|g| g.label == "ROOT").expect("root segment");
            out.seg(v);
            out.seg(subj);
            for g in segs.iter().filter(|g| !skip(g) && g.label != "ROOT") {
                out.seg(g);
            }
        }
        None => {
            let d = match root.fine_tag.as_str() {
                "VBD" => "did",
                "VBZ" => "does",
                "VBP" => "do",
                t => return Err(unsupported(format!("verb tag {t} is not simple present or past"))),
            };
            out.word(d);
            out.seg(subj);
            for g in segs.iter().filter(|g| !skip(g)) {
                if g.label == "ROOT" {
                    out.word(&root.lemma);
                } else {
                    out.seg(g);
                }
            }
        }
    }
    Ok(out.render())
}

fn reverse_wh_movement(s: &ParsedSentence, segs: &[Seg], wh: usize) -> Result<String, SyntaxError> {
    let subj = subject_seg(segs)?;
    let w = wh_seg(segs, wh)?;
    let root = s.root();
    if w.lo > subj.lo {
        return Err(unsupported("wh-phrase is not fronted"));
    }
    let aux = segs
        .iter()
        .find(|g| (g.label == "aux" || g.label == "auxpass") && g.hi < subj.lo)
        .or_else(|| segs.iter().find(|g| g.label == "ROOT" && g.hi < subj.lo && root.lemma == "be"))
        .ok_or_else(|| unsupported("no auxiliary before the subject"))?;
    let aux_tok = s.token(aux.head);
    let do_support = aux.label == "aux" && aux_tok.lemma == "do";
    let verb = if do_support {
        if find(segs, "neg").is_some() {
            return Err(unsupported("negated do-support"));
        }
        match aux_tok.lower().as_str() {
            "did" => morph::past(&root.lemma),
            "does" => morph::third_singular(&root.lemma),
            "do" => root.lemma.clone(),
            other => return Err(unsupported(format!("unexpected do-form {other:?}"))),
        }
    } else {
        root.text.clone()
    };
    let object_like = matches!(w.label.as_str(), "dobj" | "attr" | "dative" | "oprd" | "acomp");

    if segs.iter().any(|g| g.lo > w.hi && g.hi < subj.lo && g.lo != aux.lo) {
        return Err(unsupported("material between the wh-phrase and the subject"));
    }

    let mut out = Out::new(s);
    for g in segs.iter().filter(|g| g.hi < w.lo) {
        out.seg(g);
    }
    out.seg(subj);
    let mut placed = false;
    if aux.label == "ROOT" {
        out.seg(aux);
        if object_like {
            out.seg(w);
            placed = true;
        }
    } else if !do_support {
        out.seg(aux);
    }
    let rest: Vec<&Seg> = segs
        .iter()
        .filter(|g| g.lo > subj.hi && !is_final(segs, g))
        .collect();
    for (i, g) in rest.iter().enumerate() {
        if g.label == "ROOT" {
            out.word(&verb);
        } else {
            out.seg(g);
        }
        let next_is_prt = rest.get(i + 1).is_some_and(|n| n.label == "prt");
        if object_like && !placed && g.lo >= root.index && !next_is_prt {
            out.seg(w);
            placed = true;
        }
    }
    if !placed {
        out.seg(w);
    }
    if let Some(p) = final_punct(segs) {
        out.seg(p);
    }
    Ok(out.render())
}

fn dative_alternation(s: &ParsedSentence, segs: &[Seg]) -> Result<String, SyntaxError> {
    let d = need(segs, "dative")?;
    let o = need(segs, "dobj")?;
    if d.hi > o.lo {
        return Err(unsupported("indirect object must precede the direct object"));
    }
    if BENEFACTIVE.contains(&s.root().lemma.as_str()) {
        return Err(unsupported(format!("{:?} takes a \"for\" dative", s.root().lemma)));
    }
    let mut out = Out::new(s);
    for g in segs {
        if g.lo == d.lo {
            continue;
        }
        out.seg(g);
        if g.lo == o.lo {
            out.word("to");
            out.seg_case(d, Case::Objective);
        }
    }
    Ok(out.render())
}

fn prep_dative_alternation(s: &ParsedSentence, segs: &[Seg]) -> Result<String, SyntaxError> {
    let d = need(segs, "dative")?;
    let o = need(segs, "dobj")?;
    if o.hi > d.lo {
        return Err(unsupported("direct object must precede the dative"));
    }
    if s.token(d.head).lower() != "to" || d.lo != d.head {
        return Err(unsupported("dative preposition is not \"to\""));
    }
    let pobj = s
        .child_with_label(d.head, "pobj")
        .map(|t| s.subtree_span(t.index))
        .filter(|sp| sp.contiguous && sp.lo == d.lo + 1 && sp.hi == d.hi)
        .ok_or_else(|| unsupported("dative is not \"to\" plus a noun phrase"))?;
    let mut out = Out::new(s);
    for g in segs {
        if g.lo == d.lo {
            continue;
        }
        if g.lo == o.lo {
            out.span_case(pobj.lo, pobj.hi, Case::Objective);
        }
        out.seg(g);
    }
    Ok(out.render())
}

/// Deterministic realization of `kind` for the simple clause types:
/// simple present or past (or a single modal), contiguous constituents.
/// Anything else is [`SyntaxError::UnsupportedRealization`].
pub fn realize_rule_based(
    sentence: &ParsedSentence,
    kind: TransformationKind,
    constituents: &ConstituentSet,
) -> Result<String, SyntaxError> {
    use TransformationKind::*;
    if let Some(&constituent) = constituents.missing_for(kind).first() {
        return Err(SyntaxError::MissingConstituent { kind, constituent });
    }
    let segs = segments(sentence)?;
    let wh = || constituents.wh_index.ok_or_else(|| unsupported("no wh-word"));
    match kind {
        ActiveToPassive => active_to_passive(sentence, &segs),
        PassiveToActive => passive_to_active(sentence, &segs),
        Extraposition => extraposition(sentence, &segs),
        ReverseExtraposition => reverse_extraposition(sentence, &segs),
        WhMovement => wh_movement(sentence, &segs, wh()?),
        ReverseWhMovement => reverse_wh_movement(sentence, &segs, wh()?),
        DativeAlternation => dative_alternation(sentence, &segs),
        PrepDativeAlternation => prep_dative_alternation(sentence, &segs),
    }
}
