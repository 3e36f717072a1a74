// Page-side observation extractor. Defines globalThis.__densaExtract(mode),
// which returns a JSON envelope {protocol, mode, content, removed_counts,
// interactives, raw_len, iframes}. The live DOM is only read, never written;
// html mode edits a clone.
(function () {
  "use strict";
  const PROTOCOL = 1;
  const SKIP = new Set(["SCRIPT", "STYLE", "NOSCRIPT", "TEMPLATE", "HEAD", "META", "LINK", "SVG"]);
  const NON_ESSENTIAL_TAGS = new Set(["HEADER", "NAV", "FOOTER", "ASIDE"]);
  const NON_ESSENTIAL_ROLES = new Set(["banner", "navigation", "contentinfo", "complementary"]);
  const INTERACTIVE = new Set(["A", "BUTTON", "INPUT", "SELECT", "TEXTAREA"]);
  const BLOCK = new Set(["P", "DIV", "SECTION", "ARTICLE", "MAIN", "LI", "UL", "OL", "TABLE", "TR", "H1", "H2", "H3", "H4", "H5", "H6", "PRE", "BLOCKQUOTE", "FORM", "HEADER", "FOOTER", "NAV", "ASIDE", "DD", "DT", "FIGCAPTION"]);

  function isHidden(el, vh) {
    const cs = getComputedStyle(el);
    if (cs.display === "none" || cs.visibility === "hidden" || cs.visibility === "collapse") return true;
    if (parseFloat(cs.opacity) === 0) return true;
    if (el.getClientRects().length === 0) return true;
    const r = el.getBoundingClientRect();
    if (r.width * r.height === 0 && cs.overflow === "hidden") return true;
    if (r.top > 3 * vh || r.bottom < -3 * vh) return true;
    return false;
  }

  function overlays(vw, vh) {
    const out = [];
    for (const el of document.body ? document.body.querySelectorAll("*") : []) {
      const cs = getComputedStyle(el);
      if (cs.position !== "fixed" && cs.position !== "absolute") continue;
      if (cs.display === "none" || cs.visibility === "hidden") continue;
      const r = el.getBoundingClientRect();
      const w = Math.min(r.right, vw) - Math.max(r.left, 0);
      const h = Math.min(r.bottom, vh) - Math.max(r.top, 0);
      if (w > 0 && h > 0 && w * h >= 0.9 * vw * vh) out.push(el);
    }
    return out;
  }

  function isCovered(el, layers) {
    if (layers.length === 0) return false;
    for (const o of layers) if (o === el || o.contains(el) || el.contains(o)) return false;
    const r = el.getBoundingClientRect();
    const x = r.left + r.width / 2;
    const y = r.top + r.height / 2;
    if (x < 0 || y < 0 || x > innerWidth || y > innerHeight) {
      return true;
    }
    const hit = document.elementFromPoint(x, y);
    if (!hit || el.contains(hit)) return false;
    return layers.some((o) => o.contains(hit));
  }

  function isNonEssential(el, docH, vw) {
    for (let n = el; n && n !== document.body; n = n.parentElement) {
      if (NON_ESSENTIAL_TAGS.has(n.tagName)) return true;
      const role = n.getAttribute && n.getAttribute("role");
      if (role && NON_ESSENTIAL_ROLES.has(role)) return true;
    }
    if (!BLOCK.has(el.tagName)) return false;
    const r = el.getBoundingClientRect();
    const top = r.top + scrollY;
    const bottom = r.bottom + scrollY;
    const wide = r.width >= 0.6 * vw;
    if (wide && bottom <= 0.15 * docH && r.height < 0.15 * docH) return true;
    if (wide && top >= 0.9 * docH && docH > innerHeight) return true;
    const side = r.width < 0.25 * vw && (r.right <= 0.3 * vw || r.left >= 0.7 * vw);
    return side && r.height > 0.5 * innerHeight;
  }

  function selectorHint(el) {
    if (el.id && document.querySelectorAll("#" + CSS.escape(el.id)).length === 1) return "#" + CSS.escape(el.id);
    const parts = [];
    for (let n = el; n && n.nodeType === 1 && n !== document.documentElement; n = n.parentElement) {
      let i = 1;
      for (let s = n.previousElementSibling; s; s = s.previousElementSibling) if (s.tagName === n.tagName) i++;
      parts.unshift(n.tagName.toLowerCase() + ":nth-of-type(" + i + ")");
      const sel = parts.join(" > ");
      if (document.querySelectorAll(sel).length === 1) return sel;
    }
    return parts.join(" > ");
  }

  function label(el) {
    const t = (el.getAttribute("aria-label") || el.innerText || el.value || el.getAttribute("placeholder") || el.getAttribute("title") || "").trim();
    return t.replace(/\s+/g, " ").slice(0, 80);
  }

  function role(el) {
    const r = el.getAttribute("role");
    if (r) return r;
    if (el.tagName === "A") return "link";
    if (el.tagName === "INPUT") return "input:" + (el.getAttribute("type") || "text");
    return el.tagName.toLowerCase();
  }

  function classify() {
    const vw = innerWidth;
    const vh = innerHeight;
    const docH = Math.max(document.documentElement.scrollHeight, vh);
    const layers = overlays(vw, vh);
    const info = new Map();
    const counts = { hidden: 0, covered: 0, non_essential: 0 };
    function visit(el, inherited) {
      if (SKIP.has(el.tagName.toUpperCase())) {
        info.set(el, "skip");
        return;
      }
      let state = inherited;
      if (state === "main") {
        if (isHidden(el, vh)) {
          state = "hidden";
          counts.hidden++;
        } else if (isCovered(el, layers) && !Array.from(el.children).some((c) => layers.some((o) => c.contains(o)))) {
          state = "covered";
          counts.covered++;
        } else if (isNonEssential(el, docH, vw)) {
          state = "non_essential";
          counts.non_essential++;
        }
      }
      info.set(el, state);
      if (state === "hidden" || state === "covered") return;
      for (const c of el.children) visit(c, state);
    }
    if (document.body) visit(document.body, "main");
    return { info, counts };
  }

  function textContent(info, interactives) {
    const lines = [];
    let current = "";
    const flush = () => {
      const t = current.replace(/\s+/g, " ").trim();
      if (t) lines.push(t);
      current = "";
    };
    function walk(node) {
      if (node.nodeType === 3) {
        current += node.nodeValue;
        return;
      }
      if (node.nodeType !== 1) return;
      const state = info.get(node);
      if (state !== "main") return;
      if (node.tagName === "IFRAME") return;
      const block = BLOCK.has(node.tagName) || node.tagName === "BR";
      if (block) flush();
      if (INTERACTIVE.has(node.tagName) || node.getAttribute("role") === "button") {
        const hint = selectorHint(node);
        const item = { selector: hint, role: role(node), label: label(node) };
        interactives.push(item);
        current += " [" + item.role + " " + hint + "] " + item.label + " ";
        return;
      }
      if (/^H[1-6]$/.test(node.tagName)) current += "#".repeat(+node.tagName[1]) + " ";
      for (const c of node.childNodes) walk(c);
      if (block) flush();
    }
    if (document.body) walk(document.body);
    flush();
    return lines.join("\n");
  }

  function htmlContent(info, interactives) {
    if (!document.body) return "";
    const clone = document.body.cloneNode(true);
    const live = [document.body];
    const copy = [clone];
    const drop = [];
    while (live.length) {
      const l = live.pop();
      const c = copy.pop();
      const state = info.get(l);
      if (l !== document.body && (state === "hidden" || state === "covered" || state === "skip" || state === undefined)) {
        drop.push(c);
        continue;
      }
      if (state === "non_essential" && (!l.parentElement || info.get(l.parentElement) !== "non_essential")) {
        c.setAttribute("data-region", "non_essential");
      }
      if (INTERACTIVE.has(l.tagName)) {
        interactives.push({ selector: selectorHint(l), role: role(l), label: label(l) });
      }
      const lc = l.children;
      const cc = c.children;
      for (let i = 0; i < lc.length; i++) {
        live.push(lc[i]);
        copy.push(cc[i]);
      }
    }
    for (const d of drop) d.remove();
    return clone.outerHTML;
  }

  globalThis.__densaExtract = function (mode) {
    const { info, counts } = classify();
    const interactives = [];
    const content = mode === "html" ? htmlContent(info, interactives) : textContent(info, interactives);
    return JSON.stringify({
      protocol: PROTOCOL,
      mode: mode === "html" ? "html" : "text_only",
      content: content,
      removed_counts: counts,
      interactives: interactives,
      raw_len: document.documentElement ? document.documentElement.outerHTML.length : 0,
      iframes: document.querySelectorAll("iframe").length,
    });
  };
})();
