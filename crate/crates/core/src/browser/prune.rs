//! Budgeted HTML reduction by whole-subtree removal.
//!
//! The markup is parsed into a forgiving tree whose serialization reproduces
//! the input for well-formed documents. Subtrees are then dropped, regions
//! tagged `data-region="non_essential"` first, until the text fits.

const VOID: &[&str] = &[
    "area", "base", "br", "col", "embed", "hr", "img", "input", "link", "meta", "source", "track", "wbr",
];
const RAW_TEXT: &[&str] = &["script", "style", "textarea", "title"];
pub const PRUNED_MARKER: &str = "<!--pruned-->";

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Text(String),
    Element {
        name: String,
        start: String,
        children: Vec<Node>,
        closed: bool,
    },
}

impl Node {
    fn write(&self, out: &mut String) {
        match self {
            Node::Text(t) => out.push_str(t),
            Node::Element { name, start, children, closed } => {
                out.push_str(start);
                for c in children {
                    c.write(out);
                }
                if *closed {
                    out.push_str("</");
                    out.push_str(name);
                    out.push('>');
                }
            }
        }
    }

    fn len(&self) -> usize {
        let mut s = String::new();
        self.write(&mut s);
        s.chars().count()
    }

    fn non_essential(&self) -> bool {
        matches!(self, Node::Element { start, .. } if start.contains("data-region=\"non_essential\""))
    }
}

fn tag_name(tag: &str) -> String {
    tag.trim_start_matches(['<', '/'])
        .chars()
        .take_while(|c| !c.is_whitespace() && *c != '>' && *c != '/')
        .collect::<String>()
        .to_ascii_lowercase()
}

/// End of a tag starting at `i`, skipping quoted attribute values.
fn tag_end(s: &str, i: usize) -> Option<usize> {
    let mut quote = None;
    for (off, c) in s[i..].char_indices() {
        match (quote, c) {
            (Some(q), c) if c == q => quote = None,
            (Some(_), _) => {}
            (None, '"' | '\'') => quote = Some(c),
            (None, '>') => return Some(i + off + 1),
            _ => {}
        }
    }
    None
}

fn parse(html: &str) -> Vec<Node> {
    struct Open {
        name: String,
        start: String,
        children: Vec<Node>,
    }
    let mut stack: Vec<Open> = vec![Open { name: String::new(), start: String::new(), children: Vec::new() }];
    let mut i = 0;
    let mut text_start = 0;
    let push_text = |stack: &mut Vec<Open>, from: usize, to: usize| {
        if to > from {
            stack.last_mut().unwrap().children.push(Node::Text(html[from..to].to_string()));
        }
    };
    while let Some(rel) = html[i..].find('<') {
        let lt = i + rel;
        let rest = &html[lt..];
        let starts_tag = rest[1..].chars().next().is_some_and(|c| c.is_ascii_alphabetic() || c == '/' || c == '!');
        if !starts_tag {
            i = lt + 1;
            continue;
        }
        if rest.starts_with("<!--") {
            push_text(&mut stack, text_start, lt);
            let end = rest.find("-->").map_or(html.len(), |e| lt + e + 3);
            i = end;
            text_start = end;
            continue;
        }
        let Some(end) = tag_end(html, lt) else { break };
        push_text(&mut stack, text_start, lt);
        let tag = &html[lt..end];
        let name = tag_name(tag);
        if tag.starts_with("</") {
            if let Some(pos) = stack.iter().rposition(|o| o.name == name) {
                if pos > 0 {
                    while stack.len() > pos + 1 {
                        let o = stack.pop().unwrap();
                        stack.last_mut().unwrap().children.push(Node::Element {
                            name: o.name,
                            start: o.start,
                            children: o.children,
                            closed: false,
                        });
                    }
                    let o = stack.pop().unwrap();
                    stack.last_mut().unwrap().children.push(Node::Element {
                        name: o.name,
                        start: o.start,
                        children: o.children,
                        closed: true,
                    });
                }
            }
            i = end;
            text_start = end;
            continue;
        }
        if tag.starts_with("<!") || VOID.contains(&name.as_str()) || tag.ends_with("/>") {
            stack.last_mut().unwrap().children.push(Node::Element {
                name,
                start: tag.to_string(),
                children: Vec::new(),
                closed: false,
            });
            i = end;
            text_start = end;
            continue;
        }
        if RAW_TEXT.contains(&name.as_str()) {
            let close = format!("</{name}");
            let body_end = html[end..].to_ascii_lowercase().find(&close).map_or(html.len(), |p| end + p);
            let after = tag_end(html, body_end).unwrap_or(html.len());
            let closed = body_end < html.len();
            let children = if body_end > end { vec![Node::Text(html[end..body_end].to_string())] } else { Vec::new() };
            stack.last_mut().unwrap().children.push(Node::Element {
                name,
                start: tag.to_string(),
                children,
                closed,
            });
            i = after;
            text_start = after;
            continue;
        }
        stack.push(Open { name, start: tag.to_string(), children: Vec::new() });
        i = end;
        text_start = end;
    }
    push_text(&mut stack, text_start, html.len());
    while stack.len() > 1 {
        let o = stack.pop().unwrap();
        stack.last_mut().unwrap().children.push(Node::Element {
            name: o.name,
            start: o.start,
            children: o.children,
            closed: false,
        });
    }
    stack.pop().unwrap().children
}

fn serialize(nodes: &[Node]) -> String {
    let mut out = String::new();
    for n in nodes {
        n.write(&mut out);
    }
    out
}

/// Path of child indices from the top level.
type NodePath = Vec<usize>;

struct Candidate {
    path: NodePath,
    size: usize,
    non_essential: bool,
}

fn candidates(nodes: &[Node], prefix: &mut NodePath, out: &mut Vec<Candidate>) {
    for (i, n) in nodes.iter().enumerate() {
        prefix.push(i);
        let is_marker = matches!(n, Node::Text(t) if t == PRUNED_MARKER);
        if !is_marker {
            out.push(Candidate { path: prefix.clone(), size: n.len(), non_essential: n.non_essential() });
        }
        if let Node::Element { children, .. } = n {
            candidates(children, prefix, out);
        }
        prefix.pop();
    }
}

fn node_at<'a>(nodes: &'a mut Vec<Node>, path: &[usize]) -> &'a mut Node {
    let (first, rest) = path.split_first().expect("non-empty path");
    let mut node = &mut nodes[*first];
    for i in rest {
        let Node::Element { children, .. } = node else { unreachable!() };
        node = &mut children[*i];
    }
    node
}

/// Removes subtrees until `html` is at most `budget` chars.
///
/// Order: subtrees marked non-essential (largest first), then the deepest
/// subtree whose removal alone is enough, else the largest remaining one.
pub fn prune_html(html: &str, budget: usize) -> (String, usize) {
    let mut nodes = parse(html);
    let mut len = serialize(&nodes).chars().count();
    let marker_len = PRUNED_MARKER.len();
    let mut removed = 0;
    while len > budget {
        let mut cands = Vec::new();
        candidates(&nodes, &mut Vec::new(), &mut cands);
        cands.retain(|c| c.size > marker_len);
        if cands.is_empty() {
            break;
        }
        let excess = len - budget;
        let pick = if let Some(c) = cands.iter().filter(|c| c.non_essential).max_by_key(|c| c.size) {
            c
        } else if let Some(c) = cands
            .iter()
            .filter(|c| c.size >= excess + marker_len)
            .max_by(|a, b| a.path.len().cmp(&b.path.len()).then(b.size.cmp(&a.size)))
        {
            c
        } else {
            cands.iter().max_by(|a, b| a.size.cmp(&b.size).then(a.path.len().cmp(&b.path.len()))).unwrap()
        };
        *node_at(&mut nodes, &pick.path) = Node::Text(PRUNED_MARKER.to_string());
        len = len - pick.size + marker_len;
        removed += 1;
    }
    let out = serialize(&nodes);
    if out.chars().count() > budget {
        (crate::toolkit::truncate::cap_chars(&out, budget).to_string(), removed)
    } else {
        (out, removed)
    }
}
