#pragma once

// Minimal XML subset parser: elements, attributes, self-closing tags,
// comments, and processing instructions. No namespaces, CDATA, or DTDs.
// Text content between elements is ignored (the policy dialects carry all
// data in attributes). Every node remembers its source line so validation
// can point at the offending element.

#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "skrefine/common.hpp"

namespace skrefine {

struct XmlNode {
  std::string name;
  std::vector<std::pair<std::string, std::string>> attrs;
  std::vector<XmlNode> children;
  int line = 0;

  const std::string* attr(std::string_view key) const {
    for (auto& [k, v] : attrs)
      if (k == key) return &v;
    return nullptr;
  }

  const std::string& require_attr(std::string_view key) const {
    if (auto* v = attr(key)) return *v;
    throw ParseError("<" + name + "> missing attribute '" + std::string(key) + "'", line);
  }

  const XmlNode* child(std::string_view cname) const {
    for (auto& c : children)
      if (c.name == cname) return &c;
    return nullptr;
  }

  std::vector<const XmlNode*> children_named(std::string_view cname) const {
    std::vector<const XmlNode*> out;
    for (auto& c : children)
      if (c.name == cname) out.push_back(&c);
    return out;
  }
};

namespace detail {

struct XmlCursor {
  std::string_view text;
  size_t pos = 0;
  int line = 1;

  bool eof() const { return pos >= text.size(); }
  char peek() const { return text[pos]; }

  char take() {
    char c = text[pos++];
    if (c == '\n') ++line;
    return c;
  }

  bool starts_with(std::string_view s) const { return text.substr(pos, s.size()) == s; }

  void expect(char c) {
    if (eof() || peek() != c)
      throw ParseError(std::string("expected '") + c + "'", line);
    take();
  }

  void skip_ws() {
    while (!eof() && (peek() == ' ' || peek() == '\t' || peek() == '\r' || peek() == '\n')) take();
  }

  void skip_until(std::string_view end) {
    while (!eof() && !starts_with(end)) take();
    if (eof()) throw ParseError("unterminated '" + std::string(end) + "'", line);
    for (size_t i = 0; i < end.size(); ++i) take();
  }
};

inline bool name_char(char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
         c == '_' || c == '-' || c == '.' || c == ':';
}

inline std::string read_name(XmlCursor& c) {
  std::string out;
  while (!c.eof() && name_char(c.peek())) out.push_back(c.take());
  if (out.empty()) throw ParseError("expected a name", c.line);
  return out;
}

inline std::string decode_entities(std::string_view s, int line) {
  std::string out;
  out.reserve(s.size());
  for (size_t i = 0; i < s.size(); ++i) {
    if (s[i] != '&') {
      out.push_back(s[i]);
      continue;
    }
    auto semi = s.find(';', i);
    if (semi == std::string_view::npos) throw ParseError("unterminated entity", line);
    auto ent = s.substr(i + 1, semi - i - 1);
    if (ent == "amp") out.push_back('&');
    else if (ent == "lt") out.push_back('<');
    else if (ent == "gt") out.push_back('>');
    else if (ent == "quot") out.push_back('"');
    else if (ent == "apos") out.push_back('\'');
    else throw ParseError("unknown entity '&" + std::string(ent) + ";'", line);
    i = semi;
  }
  return out;
}

// Skips whitespace, comments, PIs and a DOCTYPE if present.
inline void skip_misc(XmlCursor& c) {
  for (;;) {
    c.skip_ws();
    if (c.starts_with("<!--")) {
      c.skip_until("-->");
    } else if (c.starts_with("<?")) {
      c.skip_until("?>");
    } else if (c.starts_with("<!DOCTYPE")) {
      c.skip_until(">");
    } else {
      return;
    }
  }
}

inline XmlNode parse_element(XmlCursor& c) {
  c.expect('<');
  XmlNode node;
  node.line = c.line;
  node.name = read_name(c);
  for (;;) {
    c.skip_ws();
    if (c.eof()) throw ParseError("unterminated <" + node.name + ">", node.line);
    if (c.peek() == '/') {
      c.take();
      c.expect('>');
      return node;  // self-closing
    }
    if (c.peek() == '>') {
      c.take();
      break;
    }
    int aline = c.line;
    std::string key = read_name(c);
    c.skip_ws();
    c.expect('=');
    c.skip_ws();
    if (c.eof() || (c.peek() != '"' && c.peek() != '\''))
      throw ParseError("attribute '" + key + "' missing quoted value", aline);
    char quote = c.take();
    std::string raw;
    while (!c.eof() && c.peek() != quote) {
      if (c.peek() == '<') throw ParseError("'<' in attribute value", c.line);
      raw.push_back(c.take());
    }
    if (c.eof()) throw ParseError("unterminated attribute value", aline);
    c.take();
    if (node.attr(key)) throw ParseError("duplicate attribute '" + key + "'", aline);
    node.attrs.emplace_back(std::move(key), decode_entities(raw, aline));
  }
  // children until matching close tag; intervening text is ignored
  for (;;) {
    while (!c.eof() && c.peek() != '<') c.take();
    if (c.eof()) throw ParseError("unterminated <" + node.name + ">", node.line);
    if (c.starts_with("<!--")) {
      c.skip_until("-->");
      continue;
    }
    if (c.starts_with("</")) {
      c.take();
      c.take();
      int cline = c.line;
      std::string closing = read_name(c);
      if (closing != node.name)
        throw ParseError("mismatched close tag </" + closing + "> for <" + node.name + ">", cline);
      c.skip_ws();
      c.expect('>');
      return node;
    }
    node.children.push_back(parse_element(c));
  }
}

}  // namespace detail

inline XmlNode xml_parse(std::string_view text) {
  detail::XmlCursor c{text};
  if (c.starts_with("\xEF\xBB\xBF")) {
    c.take();
    c.take();
    c.take();
  }
  detail::skip_misc(c);
  if (c.eof() || c.peek() != '<') throw ParseError("expected a root element", c.line);
  XmlNode root = detail::parse_element(c);
  detail::skip_misc(c);
  if (!c.eof()) throw ParseError("trailing content after root element", c.line);
  return root;
}

inline std::string xml_escape(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (char ch : s) {
    switch (ch) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      case '\'': out += "&apos;"; break;
      default: out.push_back(ch);
    }
  }
  return out;
}

}  // namespace skrefine
